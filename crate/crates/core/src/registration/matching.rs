use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptors::{descriptor_distance, CShotDescriptor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub source_index: usize,
    pub target_index: usize,
    pub descriptor_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchParams {
    /// Lowe ratio: nearest / second-nearest must be below this.
    pub ratio: f64,
    pub mutual: bool,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            ratio: 0.8,
            mutual: true,
        }
    }
}

fn argmin(values: impl Iterator<Item = f64>) -> Option<(usize, f64, f64)> {
    let mut best: Option<(usize, f64)> = None;
    let mut second = f64::INFINITY;
    for (i, d) in values.enumerate() {
        match best {
            Some((_, b)) if d >= b => second = second.min(d),
            Some((_, b)) => {
                second = b;
                best = Some((i, d));
            }
            None => best = Some((i, d)),
        }
    }
    best.map(|(i, d)| (i, d, second))
}

/// Nearest-neighbor matching in descriptor space with the ratio test and an
/// optional reciprocity check. At most one correspondence per source.
pub fn match_descriptors(
    source: &[CShotDescriptor],
    target: &[CShotDescriptor],
    params: &MatchParams,
) -> Result<Vec<Correspondence>> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptySelection("descriptor set is empty".into()));
    }
    let distances: Vec<Vec<f64>> = source
        .par_iter()
        .map(|s| target.iter().map(|t| descriptor_distance(s, t)).collect::<Result<Vec<f64>>>())
        .collect::<Result<_>>()?;
    let reverse: Vec<usize> = (0..target.len())
        .map(|j| argmin(distances.iter().map(|row| row[j])).map(|(i, _, _)| i).unwrap())
        .collect();
    let mut out = Vec::new();
    for (i, row) in distances.iter().enumerate() {
        let (j, d, second) = argmin(row.iter().copied()).unwrap();
        let passes_ratio = second.is_infinite() || d < params.ratio * second;
        if !passes_ratio || (params.mutual && reverse[j] != i) {
            continue;
        }
        out.push(Correspondence {
            source_index: i,
            target_index: j,
            descriptor_distance: d,
        });
    }
    Ok(out)
}
