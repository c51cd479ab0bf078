use nalgebra::Point3;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{estimate_transform_svd, Correspondence, RegistrationResult};
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacParams {
    /// Residual (m) under which a correspondence counts as an inlier.
    pub inlier_threshold: f64,
    pub max_iterations: usize,
    pub min_inliers: usize,
    /// Stop early once this confidence of having drawn an all-inlier sample
    /// is reached.
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            inlier_threshold: 0.02,
            max_iterations: 2000,
            min_inliers: 6,
            confidence: 0.999,
            seed: 42,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.inlier_threshold > 0.0) || self.max_iterations == 0 || self.min_inliers < 3 {
            return Err(Error::Parameter(
                "RANSAC needs a positive threshold, at least one iteration and min_inliers >= 3".into(),
            ));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Parameter("RANSAC confidence must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

struct Score {
    inliers: Vec<usize>,
    sse: f64,
    /// Truncated quadratic cost: outliers contribute `threshold²`.
    cost: f64,
}

fn score(t: &RigidTransform, src: &[Point3<f64>], dst: &[Point3<f64>], threshold: f64) -> Score {
    let t2 = threshold * threshold;
    let mut inliers = Vec::new();
    let mut sse = 0.0;
    let mut cost = 0.0;
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let e2 = (t.apply(s) - d).norm_squared();
        if e2 < t2 {
            inliers.push(i);
            sse += e2;
            cost += e2;
        } else {
            cost += t2;
        }
    }
    Score { inliers, sse, cost }
}

fn better(a: &Score, b: &Score) -> bool {
    a.cost < b.cost || (a.cost == b.cost && a.inliers.len() > b.inliers.len())
}

pub fn robust_coarse_align(
    correspondences: &[Correspondence],
    source_points: &[Point3<f64>],
    target_points: &[Point3<f64>],
    params: &RansacParams,
) -> Result<RegistrationResult> {
    params.validate()?;
    let n = correspondences.len();
    if n < 3 {
        return Err(Error::AlignmentFailed(format!("{n} correspondences, need at least 3")));
    }
    let src: Vec<Point3<f64>> = correspondences.iter().map(|c| source_points[c.source_index]).collect();
    let dst: Vec<Point3<f64>> = correspondences.iter().map(|c| target_points[c.target_index]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(RigidTransform, Score)> = None;
    let mut needed = params.max_iterations;
    let mut iterations = 0;
    while iterations < needed.min(params.max_iterations) {
        iterations += 1;
        let idx = sample(&mut rng, n, 3);
        let s: Vec<_> = idx.iter().map(|i| src[i]).collect();
        let d: Vec<_> = idx.iter().map(|i| dst[i]).collect();
        let Ok(t) = estimate_transform_svd(&s, &d) else {
            continue;
        };
        let sc = score(&t, &src, &dst, params.inlier_threshold);
        if best.as_ref().is_none_or(|(_, b)| better(&sc, b)) {
            let w = sc.inliers.len() as f64 / n as f64;
            let miss = 1.0 - w.powi(3);
            if miss <= 0.0 {
                needed = iterations;
            } else if miss < 1.0 {
                needed = ((1.0 - params.confidence).ln() / miss.ln()).ceil() as usize;
            }
            best = Some((t, sc));
        }
    }
    let Some((mut transform, mut sc)) = best else {
        return Err(Error::AlignmentFailed("every sample was degenerate".into()));
    };
    for _ in 0..10 {
        if sc.inliers.len() < 3 {
            break;
        }
        let s: Vec<_> = sc.inliers.iter().map(|&i| src[i]).collect();
        let d: Vec<_> = sc.inliers.iter().map(|&i| dst[i]).collect();
        let Ok(refit) = estimate_transform_svd(&s, &d) else {
            break;
        };
        let rs = score(&refit, &src, &dst, params.inlier_threshold);
        if rs.inliers.len() < sc.inliers.len() {
            break;
        }
        let grew = rs.inliers != sc.inliers;
        transform = refit;
        sc = rs;
        if !grew {
            break;
        }
    }
    if sc.inliers.len() < params.min_inliers {
        return Err(Error::AlignmentFailed(format!(
            "best model has {} inliers, need {}",
            sc.inliers.len(),
            params.min_inliers
        )));
    }
    let count = sc.inliers.len();
    Ok(RegistrationResult {
        transform,
        inlier_count: count,
        rmse: (sc.sse / count as f64).sqrt(),
        converged: true,
        iterations,
        degenerate: false,
        objective_history: Vec::new(),
    })
}
