//! Seeded k-means over transition-profile vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::DomainError;

pub const DEFAULT_K: usize = 3;
pub const DEFAULT_RESTARTS: usize = 100;
pub const DEFAULT_CLUSTER_SEED: u64 = 2024;
const MAX_ITER: usize = 300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    /// Cluster of each input point. Labels are canonical: cluster 0 holds
    /// the first point, the next new label goes to the next unseen cluster.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub restarts: usize,
    pub seed: u64,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Random first center, then repeatedly the point farthest from all chosen
/// centers (first index wins ties).
fn farthest_point_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.gen_range(0..points.len())].clone()];
    while centers.len() < k {
        let mut far = (0, -1.0);
        for (i, p) in points.iter().enumerate() {
            let d = nearest(p, &centers).1;
            if d > far.1 {
                far = (i, d);
            }
        }
        centers.push(points[far.0].clone());
    }
    centers
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> (Vec<usize>, Vec<Vec<f64>>, f64) {
    let dim = points[0].len();
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..MAX_ITER {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let c = nearest(p, &centers).0;
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (p, &c) in points.iter().zip(&assign) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            // an empty cluster keeps its old center
            if counts[c] > 0 {
                *center = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = points.iter().zip(&assign).map(|(p, &c)| dist2(p, &centers[c])).sum();
    (assign, centers, inertia)
}

fn canonical(assign: &[usize], centers: &[Vec<f64>]) -> (Vec<usize>, Vec<Vec<f64>>) {
    let mut map = vec![usize::MAX; centers.len()];
    let mut next = 0;
    for &c in assign {
        if map[c] == usize::MAX {
            map[c] = next;
            next += 1;
        }
    }
    for m in map.iter_mut().filter(|m| **m == usize::MAX) {
        *m = next;
        next += 1;
    }
    let mut out = vec![Vec::new(); centers.len()];
    for (old, &new) in map.iter().enumerate() {
        out[new] = centers[old].clone();
    }
    (assign.iter().map(|&c| map[c]).collect(), out)
}

/// Lowest-inertia solution over `restarts` seeded farthest-point starts.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<Clustering, DomainError> {
    if k == 0 || restarts == 0 {
        return Err(DomainError::new("k-means needs k >= 1 and at least one restart"));
    }
    if points.len() < k {
        return Err(DomainError::new(format!(
            "k-means with k = {k} needs at least {k} points, got {}",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points
        .iter()
        .any(|p| p.len() != dim || p.iter().any(|x| !x.is_finite()))
    {
        return Err(DomainError::new(
            "k-means points must be finite and share one dimension",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, Vec<Vec<f64>>, f64)> = None;
    for _ in 0..restarts {
        let init = farthest_point_init(points, k, &mut rng);
        let run = lloyd(points, init);
        if best.as_ref().is_none_or(|b| run.2 < b.2 - 1e-12) {
            best = Some(run);
        }
    }
    let (assign, centers, inertia) = best.expect("restarts >= 1");
    let (assignments, centroids) = canonical(&assign, &centers);
    Ok(Clustering {
        k,
        assignments,
        centroids,
        inertia,
        restarts,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn recovers_planted_groups() {
        let anchors = [[0.9, 0.05, 0.05], [0.05, 0.9, 0.05], [0.05, 0.05, 0.9]];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut points = Vec::new();
        let mut truth = Vec::new();
        for i in 0..30 {
            let g = (i * 7) % 3;
            let mut p = Vec::new();
            for _ in 0..3 {
                p.extend(anchors[g].iter().map(|x| x + rng.gen_range(-0.03..0.03)));
            }
            points.push(p);
            truth.push(g);
        }
        let c = kmeans(&points, 3, DEFAULT_RESTARTS, DEFAULT_CLUSTER_SEED).unwrap();
        assert_eq!(c.assignments[0], 0);
        for i in 0..points.len() {
            for j in 0..points.len() {
                assert_eq!(truth[i] == truth[j], c.assignments[i] == c.assignments[j]);
            }
        }
    }

    #[test]
    fn deterministic_for_a_seed() {
        let points: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos()])
            .collect();
        let a = kmeans(&points, 3, 10, 1).unwrap();
        let b = kmeans(&points, 3, 10, 1).unwrap();
        assert_eq!(a, b);
        assert!(kmeans(&points[..2], 3, 10, 1).is_err());
    }
}
