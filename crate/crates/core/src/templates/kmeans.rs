//! k-means++ seeding, mini-batch k-means with per-center learning rates,
//! and full-batch Lloyd iterations for verification.
//!
//! Points are rows of an `n × d` matrix. All distances are squared
//! Euclidean and accumulate in f64.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TemplateError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub batch_size: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Stop once the largest center movement in an iteration falls below this.
    pub tolerance: f64,
}

impl KMeansConfig {
    /// Synthetic-scale defaults (k = 50).
    pub fn desk(seed: u64) -> Self {
        Self {
            k: 50,
            batch_size: 1024,
            max_iters: 300,
            seed,
            tolerance: 1e-4,
        }
    }

    pub fn validate(&self, n: usize) -> Result<(), TemplateError> {
        if self.k < 2 {
            return Err(TemplateError::InvalidConfig(format!(
                "k must be at least 2, got {}",
                self.k
            )));
        }
        if self.batch_size == 0 || self.max_iters == 0 {
            return Err(TemplateError::InvalidConfig(
                "batch size and iterations must be positive".into(),
            ));
        }
        if self.k > n {
            return Err(TemplateError::TooFewPoints {
                points: n,
                k: self.k,
            });
        }
        Ok(())
    }
}

/// Row-major point set.
#[derive(Clone, Debug, PartialEq)]
pub struct Points {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Self {
        assert!(
            dim > 0 && data.len().is_multiple_of(dim),
            "data length must be a multiple of dim"
        );
        Self { dim, data }
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Self {
        let dim = rows.first().map_or(1, |r| r.as_ref().len().max(1));
        let data = rows
            .iter()
            .flat_map(|r| r.as_ref().iter().map(|&v| v as f64))
            .collect();
        Self::new(dim, data)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    pub centers: Points,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after each assignment step (Lloyd) or on the final pass (mini-batch).
    pub inertia_history: Vec<f64>,
    /// Clusters that had to be reseeded because they were empty.
    pub reseeded: usize,
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &Points) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centers.len() {
        let d = squared_distance(point, centers.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Nearest center for every point, and the resulting inertia.
pub fn assign(points: &Points, centers: &Points) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let assignments = (0..points.len())
        .map(|i| {
            let (c, d) = nearest(points.row(i), centers);
            inertia += d;
            c
        })
        .collect();
    (assignments, inertia)
}

fn distinct_count_at_least(points: &Points, k: usize) -> bool {
    let mut seen: Vec<&[f64]> = Vec::with_capacity(k);
    for i in 0..points.len() {
        let r = points.row(i);
        if !seen.contains(&r) {
            seen.push(r);
            if seen.len() >= k {
                return true;
            }
        }
    }
    false
}

/// k-means++ seeding: the first center is uniform, each next one is drawn
/// with probability proportional to squared distance to the nearest chosen
/// center.
pub fn kmeans_pp_init(points: &Points, k: usize, seed: u64) -> Result<Points, TemplateError> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(TemplateError::TooFewPoints { points: n, k });
    }
    if !distinct_count_at_least(points, k) {
        return Err(TemplateError::TooFewDistinct { k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.random_range(0..n)];
    let mut best: Vec<f64> = (0..n)
        .map(|i| squared_distance(points.row(i), points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let next = match WeightedIndex::new(&best) {
            Ok(w) => w.sample(&mut rng),
            // Every remaining point coincides with a center; unreachable given
            // the distinct-count check, kept as a guard against rounding.
            Err(_) => return Err(TemplateError::TooFewDistinct { k }),
        };
        chosen.push(next);
        for (i, b) in best.iter_mut().enumerate() {
            let d = squared_distance(points.row(i), points.row(next));
            if d < *b {
                *b = d;
            }
        }
    }
    let data = chosen
        .iter()
        .flat_map(|&i| points.row(i).to_vec())
        .collect();
    Ok(Points::new(points.dim, data))
}

/// Moves each empty cluster's center onto the point farthest from its
/// current center. Returns how many were moved.
fn reseed_empty(points: &Points, centers: &mut Points, assignments: &mut [usize]) -> usize {
    let k = centers.len();
    let mut moved = 0;
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignments.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return moved;
        };
        // Farthest point among clusters with more than one member.
        let mut far = None;
        let mut far_d = -1.0;
        for i in 0..points.len() {
            if counts[assignments[i]] < 2 {
                continue;
            }
            let d = squared_distance(points.row(i), centers.row(assignments[i]));
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let Some(i) = far else { return moved };
        let dim = centers.dim;
        centers.data[empty * dim..(empty + 1) * dim].copy_from_slice(points.row(i));
        assignments[i] = empty;
        moved += 1;
    }
}

/// Full-batch Lloyd iterations from k-means++ seeds. Fails with
/// `InertiaIncreased` if an iteration ever raises the objective.
pub fn lloyd(points: &Points, cfg: &KMeansConfig) -> Result<Clustering, TemplateError> {
    cfg.validate(points.len())?;
    let init = kmeans_pp_init(points, cfg.k, cfg.seed)?;
    lloyd_from(points, init, cfg.max_iters)
}

pub fn lloyd_from(
    points: &Points,
    mut centers: Points,
    max_iters: usize,
) -> Result<Clustering, TemplateError> {
    let (k, dim) = (centers.len(), points.dim);
    let (mut assignments, mut inertia) = assign(points, &centers);
    let mut history = vec![inertia];
    let mut reseeded = 0;
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        reseeded += reseed_empty(points, &mut centers, &mut assignments);
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, &v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centers.data[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
        let (next, next_inertia) = assign(points, &centers);
        // Allow only rounding-level growth.
        if next_inertia > inertia * (1.0 + 1e-12) + 1e-12 {
            return Err(TemplateError::InertiaIncreased {
                iteration: iterations,
                before: inertia,
                after: next_inertia,
            });
        }
        history.push(next_inertia);
        let converged = next == assignments;
        assignments = next;
        inertia = next_inertia;
        if converged {
            break;
        }
    }
    Ok(Clustering {
        centers,
        assignments,
        inertia,
        iterations,
        inertia_history: history,
        reseeded,
    })
}

/// Mini-batch k-means: each iteration samples a batch, assigns it to the
/// cached nearest centers, and moves each center toward its batch members
/// with step `1 / (points seen by that center)`.
pub fn minibatch_kmeans(points: &Points, cfg: &KMeansConfig) -> Result<Clustering, TemplateError> {
    cfg.validate(points.len())?;
    let mut centers = kmeans_pp_init(points, cfg.k, cfg.seed)?;
    let (n, k, dim) = (points.len(), cfg.k, points.dim);
    let batch = cfg.batch_size.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x6b6d));
    let mut seen = vec![0u64; k];
    let mut iterations = 0;
    let mut cached = vec![0usize; batch];
    for _ in 0..cfg.max_iters {
        iterations += 1;
        let idx = sample(&mut rng, n, batch);
        for (slot, i) in cached.iter_mut().zip(idx.iter()) {
            *slot = nearest(points.row(i), &centers).0;
        }
        let before = centers.data.clone();
        for (&c, i) in cached.iter().zip(idx.iter()) {
            seen[c] += 1;
            let eta = 1.0 / seen[c] as f64;
            let row = points.row(i);
            for (cv, &x) in centers.data[c * dim..(c + 1) * dim].iter_mut().zip(row) {
                *cv = (1.0 - eta) * *cv + eta * x;
            }
        }
        let movement = (0..k)
            .map(|c| squared_distance(&before[c * dim..(c + 1) * dim], centers.row(c)).sqrt())
            .fold(0.0, f64::max);
        if movement < cfg.tolerance {
            break;
        }
    }
    let (mut assignments, _) = assign(points, &centers);
    let reseeded = reseed_empty(points, &mut centers, &mut assignments);
    let (assignments, inertia) = if reseeded > 0 {
        assign(points, &centers)
    } else {
        let inertia = inertia_of(points, &centers, &assignments);
        (assignments, inertia)
    };
    Ok(Clustering {
        centers,
        assignments,
        inertia,
        iterations,
        inertia_history: vec![inertia],
        reseeded,
    })
}

pub fn inertia_of(points: &Points, centers: &Points, assignments: &[usize]) -> f64 {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &c)| squared_distance(points.row(i), centers.row(c)))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Normal;

    fn blobs(per: usize, sigma: f64, seed: u64) -> (Points, Vec<usize>) {
        let centers = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (label, c) in centers.iter().enumerate() {
            for _ in 0..per {
                data.push(c[0] + noise.sample(&mut rng));
                data.push(c[1] + noise.sample(&mut rng));
                labels.push(label);
            }
        }
        (Points::new(2, data), labels)
    }

    /// Fraction of points whose cluster agrees with the majority label mapping.
    fn agreement(assign: &[usize], labels: &[usize], k: usize) -> f64 {
        let mut correct = 0;
        for c in 0..k {
            let mut counts = [0usize; 3];
            for (a, &l) in assign.iter().zip(labels) {
                if *a == c {
                    counts[l] += 1;
                }
            }
            correct += counts.iter().max().unwrap();
        }
        correct as f64 / labels.len() as f64
    }

    #[test]
    fn k_equals_n_selects_every_point() {
        let p = Points::new(1, vec![3.0, 1.0, 2.0, 9.0]);
        let c = kmeans_pp_init(&p, 4, 5).unwrap();
        let mut got: Vec<f64> = c.data.clone();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, vec![1.0, 2.0, 3.0, 9.0]);
    }

    #[test]
    fn degenerate_inputs() {
        let p = Points::new(1, vec![2.0, 2.0, 2.0]);
        assert!(matches!(
            kmeans_pp_init(&p, 2, 1),
            Err(TemplateError::TooFewDistinct { k: 2 })
        ));
        assert!(matches!(
            kmeans_pp_init(&p, 4, 1),
            Err(TemplateError::TooFewPoints { .. })
        ));
        let cfg = KMeansConfig {
            k: 1,
            ..KMeansConfig::desk(0)
        };
        assert!(matches!(
            minibatch_kmeans(&p, &cfg),
            Err(TemplateError::InvalidConfig(_))
        ));
    }

    #[test]
    fn seeding_hits_each_blob() {
        let (p, labels) = blobs(30, 0.01, 1);
        let mut hits = 0;
        for seed in 0..100 {
            let c = kmeans_pp_init(&p, 3, seed).unwrap();
            let mut blobs_hit: Vec<usize> = (0..3)
                .map(|j| labels[nearest_index(&p, c.row(j))])
                .collect();
            blobs_hit.sort_unstable();
            blobs_hit.dedup();
            hits += usize::from(blobs_hit.len() == 3);
        }
        assert!(hits >= 95, "{hits}");
    }

    fn nearest_index(p: &Points, x: &[f64]) -> usize {
        (0..p.len())
            .min_by(|&a, &b| {
                squared_distance(p.row(a), x).total_cmp(&squared_distance(p.row(b), x))
            })
            .unwrap()
    }

    #[test]
    fn separated_blobs_recovered_exactly() {
        let (p, labels) = blobs(200, 0.01, 2);
        let cfg = KMeansConfig {
            k: 3,
            batch_size: 64,
            max_iters: 200,
            seed: 3,
            tolerance: 1e-6,
        };
        for result in [
            minibatch_kmeans(&p, &cfg).unwrap(),
            lloyd(&p, &cfg).unwrap(),
        ] {
            assert_eq!(agreement(&result.assignments, &labels, 3), 1.0);
            let mut used = result.assignments.clone();
            used.sort_unstable();
            used.dedup();
            assert_eq!(used.len(), 3);
        }
    }

    #[test]
    fn symmetric_two_cluster_case() {
        let p = Points::new(1, vec![0.0, 0.0, 10.0, 10.0]);
        let cfg = KMeansConfig {
            k: 2,
            batch_size: 4,
            max_iters: 50,
            seed: 1,
            tolerance: 1e-9,
        };
        let r = minibatch_kmeans(&p, &cfg).unwrap();
        let mut c = r.centers.data.clone();
        c.sort_by(f64::total_cmp);
        assert!(
            (c[0] - 0.0).abs() < 1e-9 && (c[1] - 10.0).abs() < 1e-9,
            "{c:?}"
        );
    }

    #[test]
    fn lloyd_inertia_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..500 * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = Points::new(16, data);
        let cfg = KMeansConfig {
            k: 12,
            batch_size: 100,
            max_iters: 100,
            seed: 4,
            tolerance: 0.0,
        };
        let r = lloyd(&p, &cfg).unwrap();
        for w in r.inertia_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{w:?}");
        }
        assert!(r.inertia_history.len() > 2);
    }

    #[test]
    fn empty_cluster_is_reseeded() {
        // Two coincident centers: one of them owns nothing after assignment.
        let p = Points::new(1, vec![0.0, 0.1, 5.0, 5.1, 9.0]);
        let centers = Points::new(1, vec![0.0, 0.0, 5.0]);
        let r = lloyd_from(&p, centers, 20).unwrap();
        assert!(r.reseeded >= 1);
        let mut used = r.assignments.clone();
        used.sort_unstable();
        used.dedup();
        assert_eq!(used.len(), 3);
    }
}
