use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    /// Independent k-means++ restarts; the lowest objective wins.
    pub n_init: usize,
    pub max_iter: usize,
    /// Minimum cluster size enforced by a repair pass after Lloyd.
    pub min_size: Option<usize>,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: 2,
            seed: 0,
            n_init: 10,
            max_iter: 300,
            min_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    /// `k × d`.
    pub centroids: Tensor,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares of the final model.
    pub wcss: f64,
    /// Objective after each Lloyd update of the winning restart.
    pub objective_trail: Vec<f64>,
    pub min_size: Option<usize>,
}

impl ClusterModel {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignments {
            s[a] += 1;
        }
        s
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &Tensor, centroids: &[Vec<f64>]) -> Vec<usize> {
    (0..x.rows())
        .map(|i| {
            let row = x.row(i);
            let mut best = (0, f64::INFINITY);
            for (c, cent) in centroids.iter().enumerate() {
                let d = sq_dist(row, cent);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best.0
        })
        .collect()
}

fn means(x: &Tensor, assign: &[usize], k: usize) -> Vec<Vec<f64>> {
    let d = x.cols();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (i, &a) in assign.iter().enumerate() {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(x.row(i)) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    sums
}

fn objective(x: &Tensor, assign: &[usize], centroids: &[Vec<f64>]) -> f64 {
    assign
        .iter()
        .enumerate()
        .map(|(i, &a)| sq_dist(x.row(i), &centroids[a]))
        .sum()
}

fn plus_plus(x: &Tensor, k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = x.rows();
    let mut centroids = vec![x.row(rng.below(n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.uniform() * total;
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.below(n)
        };
        let c = x.row(pick).to_vec();
        for (i, slot) in d2.iter_mut().enumerate() {
            *slot = slot.min(sq_dist(x.row(i), &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Moves the point farthest from its centroid into each empty cluster.
fn fill_empty(x: &Tensor, assign: &mut [usize], centroids: &[Vec<f64>], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        assign.iter().for_each(|&a| counts[a] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else { return };
        let far = (0..assign.len())
            .filter(|&i| counts[assign[i]] > 1)
            .max_by(|&a, &b| {
                sq_dist(x.row(a), &centroids[assign[a]]).total_cmp(&sq_dist(x.row(b), &centroids[assign[b]]))
            })
            .expect("k <= n leaves a cluster with two members");
        assign[far] = empty;
    }
}

struct Run {
    centroids: Vec<Vec<f64>>,
    assign: Vec<usize>,
    trail: Vec<f64>,
}

fn lloyd(x: &Tensor, k: usize, max_iter: usize, rng: &mut Rng) -> Result<Run> {
    let mut centroids = plus_plus(x, k, rng);
    let mut assign = nearest(x, &centroids);
    let mut trail: Vec<f64> = Vec::new();
    for _ in 0..max_iter {
        fill_empty(x, &mut assign, &centroids, k);
        centroids = means(x, &assign, k);
        let obj = objective(x, &assign, &centroids);
        if let Some(&prev) = trail.last() {
            if obj > prev + 1e-9 * prev.abs().max(1.0) {
                return Err(Error::Contract(format!("k-means objective rose from {prev} to {obj}")));
            }
        }
        trail.push(obj);
        let next = nearest(x, &centroids);
        if next == assign {
            break;
        }
        assign = next;
    }
    Ok(Run {
        centroids,
        assign,
        trail,
    })
}

/// Reassigns boundary points into undersized clusters: repeatedly moves the
/// point with the smallest extra cost from a cluster that can spare it.
fn repair(x: &Tensor, assign: &mut [usize], centroids: &[Vec<f64>], k: usize, min_size: usize) {
    loop {
        let mut counts = vec![0usize; k];
        assign.iter().for_each(|&a| counts[a] += 1);
        let Some(short) = (0..k).find(|&c| counts[c] < min_size) else { return };
        let mover = (0..assign.len())
            .filter(|&i| assign[i] != short && counts[assign[i]] > min_size)
            .min_by(|&a, &b| {
                let cost = |i: usize| sq_dist(x.row(i), &centroids[short]) - sq_dist(x.row(i), &centroids[assign[i]]);
                cost(a).total_cmp(&cost(b)).then(a.cmp(&b))
            })
            .expect("k * min_size <= n leaves a donor");
        assign[mover] = short;
    }
}

/// k-means++ seeding, Lloyd iterations to a fixpoint (or `max_iter`), best
/// of `n_init` restarts, then the optional minimum-size repair.
pub fn kmeans(x: &Tensor, cfg: &KMeansConfig) -> Result<ClusterModel> {
    let (n, d) = x.dims2();
    let k = cfg.k;
    if k == 0 || k > n {
        return Err(Error::Contract(format!("k-means needs 1 <= k <= n, got k={k}, n={n}")));
    }
    if cfg.n_init == 0 || cfg.max_iter == 0 {
        return Err(Error::Config("k-means n_init and max_iter must be positive".into()));
    }
    if let Some(m) = cfg.min_size {
        if m * k > n {
            return Err(Error::Config(format!("min_size {m} with k={k} exceeds n={n}")));
        }
    }
    let root = Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(f64, Run)> = None;
    for restart in 0..cfg.n_init {
        let run = lloyd(x, k, cfg.max_iter, &mut root.fork_index("kmeans", restart as u64))?;
        let obj = *run.trail.last().expect("at least one iteration");
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, run));
        }
    }
    let (_, mut run) = best.expect("n_init >= 1");
    if let Some(m) = cfg.min_size {
        repair(x, &mut run.assign, &run.centroids, k, m);
        run.centroids = means(x, &run.assign, k);
    }
    let wcss = objective(x, &run.assign, &run.centroids);
    Ok(ClusterModel {
        k,
        centroids: Tensor::matrix(k, d, run.centroids.concat())?,
        assignments: run.assign,
        wcss,
        objective_trail: run.trail,
        min_size: cfg.min_size,
    })
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Contract("ARI needs two equally long, nonempty labelings".into()));
    }
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let pairs = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let sum_cells: f64 = table.iter().flatten().map(|&v| pairs(v)).sum();
    let sum_rows: f64 = table.iter().map(|r| pairs(r.iter().sum())).sum();
    let sum_cols: f64 = (0..kb).map(|j| pairs(table.iter().map(|r| r[j]).sum())).sum();
    let total = pairs(a.len() as u64);
    let expected = sum_rows * sum_cols / total;
    let max = (sum_rows + sum_cols) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((sum_cells - expected) / (max - expected))
}
