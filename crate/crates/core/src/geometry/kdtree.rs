use std::cmp::Ordering;

use nalgebra::Point3;

const LEAF_SIZE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist_sq: f64,
}

impl Neighbor {
    pub fn distance(&self) -> f64 {
        self.dist_sq.sqrt()
    }

    fn key_cmp(&self, other: &Self) -> Ordering {
        self.dist_sq
            .total_cmp(&other.dist_sq)
            .then(self.index.cmp(&other.index))
    }
}

impl Eq for Neighbor {}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static 3D k-d tree. Queries are exact and return neighbors sorted by
/// ascending distance, ties broken by point index.
#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Point3<f64>>,
    order: Vec<usize>,
    /// `points` permuted into `order`, so leaves scan contiguous memory.
    sorted: Vec<Point3<f64>>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(points: &[Point3<f64>]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            sorted: Vec::new(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree.sorted = tree.order.iter().map(|&i| tree.points[i]).collect();
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> &Point3<f64> {
        &self.points[index]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = self.widest_axis(start, end);
        let mid = (start + end) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis])
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    fn widest_axis(&self, start: usize, end: usize) -> usize {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0)
    }

    /// The `k` nearest points (all points when `k` exceeds the cloud size).
    pub fn knn(&self, query: &Point3<f64>, k: usize) -> Vec<Neighbor> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let mut best = Vec::with_capacity(k + 1);
        self.knn_rec(0, query, k, &mut best);
        best
    }

    pub fn nearest(&self, query: &Point3<f64>) -> Option<Neighbor> {
        self.knn(query, 1).into_iter().next()
    }

    /// `best` stays sorted ascending and holds at most `k` entries.
    fn knn_rec(&self, node: usize, query: &Point3<f64>, k: usize, best: &mut Vec<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for j in start..end {
                    let cand = Neighbor {
                        index: self.order[j],
                        dist_sq: (self.sorted[j] - query).norm_squared(),
                    };
                    if best.len() == k {
                        if cand >= best[k - 1] {
                            continue;
                        }
                        best.pop();
                    }
                    let at = best.partition_point(|b| *b < cand);
                    best.insert(at, cand);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, query, k, best);
                // `<=` keeps equal-distance candidates across the split reachable.
                if best.len() < k || diff * diff <= best[k - 1].dist_sq {
                    self.knn_rec(far, query, k, best);
                }
            }
        }
    }

    /// All points within `radius` (inclusive).
    pub fn radius(&self, query: &Point3<f64>, radius: f64) -> Vec<Neighbor> {
        let mut out = Vec::new();
        if self.points.is_empty() || radius < 0.0 {
            return out;
        }
        self.radius_rec(0, query, radius * radius, &mut out);
        out.sort_unstable();
        out
    }

    fn radius_rec(&self, node: usize, query: &Point3<f64>, r2: f64, out: &mut Vec<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for j in start..end {
                    let d2 = (self.sorted[j] - query).norm_squared();
                    if d2 <= r2 {
                        out.push(Neighbor { index: self.order[j], dist_sq: d2 });
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.radius_rec(near, query, r2, out);
                if diff * diff <= r2 {
                    self.radius_rec(far, query, r2, out);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_knn(points: &[Point3<f64>], q: &Point3<f64>, k: usize) -> Vec<Neighbor> {
        let mut all: Vec<Neighbor> = points
            .iter()
            .enumerate()
            .map(|(i, p)| Neighbor {
                index: i,
                dist_sq: (p - q).norm_squared(),
            })
            .collect();
        all.sort_by(|a, b| a.dist_sq.total_cmp(&b.dist_sq).then(a.index.cmp(&b.index)));
        all.truncate(k);
        all
    }

    fn grid() -> Vec<Point3<f64>> {
        let mut pts = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                for l in 0..6 {
                    pts.push(Point3::new(i as f64 * 0.1, j as f64 * 0.1, l as f64 * 0.1));
                }
            }
        }
        pts
    }

    #[test]
    fn query_on_point_returns_it() {
        let pts = grid();
        let tree = KdTree::new(&pts);
        let n = tree.nearest(&pts[77]).unwrap();
        assert_eq!(n.index, 77);
        assert_eq!(n.dist_sq, 0.0);
    }

    #[test]
    fn radius_on_grid_matches_scan() {
        let pts = grid();
        let tree = KdTree::new(&pts);
        let q = Point3::new(0.25, 0.2, 0.31);
        let got = tree.radius(&q, 0.15);
        let want: Vec<_> = brute_knn(&pts, &q, pts.len())
            .into_iter()
            .filter(|n| n.dist_sq <= 0.15 * 0.15)
            .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn oversized_k_returns_everything_sorted() {
        let pts = grid()[..20].to_vec();
        let tree = KdTree::new(&pts);
        let q = Point3::new(0.0, 0.1, 0.05);
        assert_eq!(tree.knn(&q, 100), brute_knn(&pts, &q, 100));
    }

    #[test]
    fn empty_tree_returns_nothing() {
        let tree = KdTree::new(&[]);
        assert!(tree.knn(&Point3::origin(), 3).is_empty());
        assert!(tree.radius(&Point3::origin(), 1.0).is_empty());
    }

    #[test]
    fn ties_match_brute_force_order() {
        let pts = grid();
        let tree = KdTree::new(&pts);
        let q = Point3::new(0.25, 0.25, 0.25);
        assert_eq!(tree.knn(&q, 30), brute_knn(&pts, &q, 30));
    }
}
