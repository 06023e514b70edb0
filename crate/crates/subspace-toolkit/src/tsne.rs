use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ToolkitError;

pub const MIN_POINTS: usize = 5;
pub const MAX_POINTS: usize = 2000;
const PERPLEXITY_TOL: f64 = 1e-5;
const MOMENTUM: f64 = 0.8;
const EXAGGERATION: f64 = 4.0;
const EXAGGERATION_ITERS: usize = 50;
const MIN_GAIN: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iters: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig { perplexity: 10.0, iters: 500, learning_rate: 100.0, seed: 0 }
    }
}

/// Conditional affinities of row i for precision beta; returns (row, entropy in nats).
fn cond_row(d2: &[f64], i: usize, beta: f64) -> (Vec<f64>, f64) {
    // shift by the smallest off-diagonal distance so exp never underflows to all zeros
    let dmin = d2.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &d)| d).fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = d2.iter().enumerate().map(|(j, &d)| if j == i { 0.0 } else { (-(d - dmin) * beta).exp() }).collect();
    let z: f64 = p.iter().sum();
    let mut h = 0.0;
    for x in p.iter_mut() {
        *x /= z;
        if *x > 0.0 {
            h -= *x * x.ln();
        }
    }
    (p, h)
}

fn affinities(points: &[Vec<f64>], perplexity: f64) -> Vec<f64> {
    let n = points.len();
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let d2: Vec<f64> = points.iter().map(|q| points[i].iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum()).collect();
        let (mut lo, mut hi, mut beta) = (0.0_f64, f64::INFINITY, 1.0_f64);
        let mut row = Vec::new();
        for _ in 0..200 {
            let (r, h) = cond_row(&d2, i, beta);
            row = r;
            if (h - target).abs() < PERPLEXITY_TOL {
                break;
            }
            // entropy falls as beta grows
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        p[i * n..(i + 1) * n].copy_from_slice(&row);
    }
    let mut sym = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sym[i * n + j] = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }
    sym
}

/// Exact t-SNE to two dimensions.
///
/// The step multiplies Σ_j (p_ij − q_ij)(1 + ‖y_i − y_j‖²)⁻¹(y_i − y_j), i.e. the
/// KL gradient without its constant 4, which is what the learning rate means
/// in the reference implementations.
pub fn tsne_embed(points: &[Vec<f64>], cfg: &TsneConfig) -> Result<Vec<[f64; 2]>, ToolkitError> {
    let n = points.len();
    if !(MIN_POINTS..=MAX_POINTS).contains(&n) {
        return Err(ToolkitError::PointCount { n, min: MIN_POINTS, max: MAX_POINTS });
    }
    if !(cfg.perplexity > 1.0 && cfg.perplexity < n as f64 / 3.0) {
        return Err(ToolkitError::PerplexityInfeasible { perplexity: cfg.perplexity, n });
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(ToolkitError::DimensionMismatch("points differ in length".into()));
    }
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(ToolkitError::NonFinite);
    }
    let p = affinities(points, cfg.perplexity);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1e-2).expect("valid std");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let mut vel = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0_f64; 2]; n];
    let mut num = vec![0.0; n * n];
    for it in 0..cfg.iters {
        let ex = if it < EXAGGERATION_ITERS { EXAGGERATION } else { 1.0 };
        let mut z = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let d = (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2);
                    num[i * n + j] = 1.0 / (1.0 + d);
                    z += num[i * n + j];
                }
            }
        }
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = (ex * p[i * n + j] - num[i * n + j] / z) * num[i * n + j];
                g[0] += w * (y[i][0] - y[j][0]);
                g[1] += w * (y[i][1] - y[j][1]);
            }
            for k in 0..2 {
                // delta-bar-delta gains, as in the reference exact implementation
                gains[i][k] = if (g[k] > 0.0) != (vel[i][k] > 0.0) { gains[i][k] + 0.2 } else { (gains[i][k] * 0.8).max(MIN_GAIN) };
                vel[i][k] = MOMENTUM * vel[i][k] - cfg.learning_rate * gains[i][k] * g[k];
            }
        }
        for i in 0..n {
            y[i][0] += vel[i][0];
            y[i][1] += vel[i][1];
        }
        // recentre; the objective is translation invariant
        let (mx, my) = (y.iter().map(|v| v[0]).sum::<f64>() / n as f64, y.iter().map(|v| v[1]).sum::<f64>() / n as f64);
        for v in y.iter_mut() {
            v[0] -= mx;
            v[1] -= my;
        }
    }
    Ok(y)
}

/// Mean silhouette coefficient with Euclidean distance. Points in singleton
/// clusters score 0; fewer than two clusters gives 0.
pub fn silhouette<L: PartialEq>(coords: &[Vec<f64>], labels: &[L]) -> f64 {
    let n = coords.len();
    assert_eq!(n, labels.len(), "one label per point");
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let mut groups: Vec<&L> = Vec::new();
    for l in labels {
        if !groups.contains(&l) {
            groups.push(l);
        }
    }
    if groups.len() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![(0.0, 0usize); groups.len()];
        for j in 0..n {
            if i != j {
                let g = groups.iter().position(|l| **l == labels[j]).expect("label seen");
                sums[g].0 += dist(&coords[i], &coords[j]);
                sums[g].1 += 1;
            }
        }
        let own = groups.iter().position(|l| **l == labels[i]).expect("label seen");
        if sums[own].1 == 0 {
            continue;
        }
        let a = sums[own].0 / sums[own].1 as f64;
        let b = sums
            .iter()
            .enumerate()
            .filter(|&(g, s)| g != own && s.1 > 0)
            .map(|(_, s)| s.0 / s.1 as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}
