//! Exact nearest-neighbour distance queries over a static 3D point set.

use nalgebra::Vector3;

const LEAF_SIZE: usize = 8;

/// Implicit balanced kd-tree: points are reordered so every node owns a
/// contiguous range split at its median.
pub struct KdTree {
    points: Vec<Vector3<f64>>,
}

impl KdTree {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let mut pts = points.to_vec();
        build(&mut pts, 0);
        KdTree { points: pts }
    }

    /// Smallest `(q - p).norm()` over all points, identical in value to a
    /// brute-force minimum of the same expression. `None` when empty.
    pub fn nearest_distance(&self, q: &Vector3<f64>) -> Option<f64> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = f64::INFINITY;
        search(&self.points, 0, q, &mut best);
        Some(best)
    }
}

fn build(pts: &mut [Vector3<f64>], depth: usize) {
    if pts.len() <= LEAF_SIZE {
        return;
    }
    let axis = depth % 3;
    let mid = pts.len() / 2;
    pts.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
    let (left, right) = pts.split_at_mut(mid);
    build(left, depth + 1);
    build(&mut right[1..], depth + 1);
}

fn search(pts: &[Vector3<f64>], depth: usize, q: &Vector3<f64>, best: &mut f64) {
    if pts.len() <= LEAF_SIZE {
        for p in pts {
            let d = (q - p).norm();
            if d < *best {
                *best = d;
            }
        }
        return;
    }
    let axis = depth % 3;
    let mid = pts.len() / 2;
    let split = &pts[mid];
    let d = (q - split).norm();
    if d < *best {
        *best = d;
    }
    let diff = q[axis] - split[axis];
    let (near, far) = if diff < 0.0 {
        (&pts[..mid], &pts[mid + 1..])
    } else {
        (&pts[mid + 1..], &pts[..mid])
    };
    search(near, depth + 1, q, best);
    // Slack keeps rounding in the axis gap from pruning a tying point.
    if diff.abs() <= *best * (1.0 + 1e-12) {
        search(far, depth + 1, q, best);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_brute_force_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut pts: Vec<Vector3<f64>> = (0..3000)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        // Duplicates and grid-aligned points exercise ties.
        pts.extend((0..200).map(|i| Vector3::new((i % 5) as f64 * 0.25, 0.0, (i / 50) as f64 * 0.25)));
        let tree = KdTree::new(&pts);
        for _ in 0..2000 {
            let q = Vector3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
            let brute = pts.iter().map(|p| (q - p).norm()).fold(f64::INFINITY, f64::min);
            assert_eq!(tree.nearest_distance(&q), Some(brute));
        }
        assert_eq!(KdTree::new(&[]).nearest_distance(&Vector3::zeros()), None);
    }
}
