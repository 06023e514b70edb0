//! Per-batch objectives and their gradients with respect to the logits.
//! Every function returns the batch-mean loss and dL/dz, already divided by
//! the batch size.

use serde::{Deserialize, Serialize};
use testbed::Activations;

use crate::UnlearnError;

/// −mean log p(y|x), the quantity gradient ascent pushes up.
pub fn neg_nll_and_dz(act: &Activations, targets: &[u32], vocab: usize) -> (f64, Vec<f64>) {
    let (l, mut dz) = testbed::nll_and_dz(act, targets, vocab);
    for d in dz.iter_mut() {
        *d = -*d;
    }
    (-l, dz)
}

/// mean KL(p_ref(·|x) ‖ p(·|x)); `ref_logp` holds the reference
/// log-probabilities row by row.
pub fn kl_and_dz(act: &Activations, ref_logp: &[f64], vocab: usize) -> (f64, Vec<f64>) {
    let b = act.batch;
    assert_eq!(ref_logp.len(), b * vocab);
    let inv = 1.0 / b as f64;
    let mut dz = vec![0.0; b * vocab];
    let mut loss = 0.0;
    for i in 0..b {
        let lp = act.logp_row(i, vocab);
        let lr = &ref_logp[i * vocab..(i + 1) * vocab];
        for k in 0..vocab {
            let pr = lr[k].exp();
            loss += pr * (lr[k] - lp[k]);
            dz[i * vocab + k] = (lp[k].exp() - pr) * inv;
        }
    }
    (loss * inv, dz)
}

/// NPO: (2/β)·log(1 + (p(y|x)/p_ref(y|x))^β) per example.
///
/// With r = ratio^β, dL/dlog p(y|x) = 2r/(1+r), and dlog p_y/dz = e_y − p.
pub fn npo_and_dz(act: &Activations, targets: &[u32], ref_logp_y: &[f64], beta: f64, vocab: usize) -> (f64, Vec<f64>) {
    let b = act.batch;
    let inv = 1.0 / b as f64;
    let mut dz = vec![0.0; b * vocab];
    let mut loss = 0.0;
    for i in 0..b {
        let lp = act.logp_row(i, vocab);
        let y = targets[i] as usize;
        let s = beta * (lp[y] - ref_logp_y[i]);
        // log(1 + e^s) without overflow
        let softplus = if s > 0.0 { s + (-s).exp().ln_1p() } else { s.exp().ln_1p() };
        loss += 2.0 / beta * softplus;
        let sig = 1.0 / (1.0 + (-s).exp());
        let c = 2.0 * sig * inv;
        let row = &mut dz[i * vocab..(i + 1) * vocab];
        for (d, l) in row.iter_mut().zip(lp) {
            *d = -c * l.exp();
        }
        row[y] += c;
    }
    (loss * inv, dz)
}

/// Divergence whose variational form defines the FLAT objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlatDivergence {
    #[default]
    TotalVariation,
    Kl,
    JensenShannon,
}

impl std::str::FromStr for FlatDivergence {
    type Err = UnlearnError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "total-variation" | "tv" => Ok(FlatDivergence::TotalVariation),
            "kl" => Ok(FlatDivergence::Kl),
            "jensen-shannon" | "js" => Ok(FlatDivergence::JensenShannon),
            _ => Err(UnlearnError::UnsupportedDivergence(s.to_string())),
        }
    }
}

impl FlatDivergence {
    /// FLAT maximizes g*(p(idk|x)) − f*(g*(p(y|x))), with g* the output
    /// activation and f* the convex conjugate of the divergence. As a loss to
    /// minimize this is L = g_f(p_idk) − h_f(p_y) with g_f = −g* and
    /// h_f = −f*∘g*:
    ///
    /// - total variation: g*(v) = ½·tanh v, f*(u) = u,
    ///   so g_f(t) = −½·tanh t and h_f(t) = −½·tanh t
    /// - KL: g_f(t) = −log t, h_f(t) = −t
    /// - Jensen–Shannon: g*(v) = log 2 − log(1 + e^{−v}), f*(u) = −log(2 − e^u),
    ///   so g_f(t) = log(1 + e^{−t}) − log 2 and h_f(t) = log 2 − log(1 + e^t)
    ///
    /// Returns (g_f(t), g_f'(t)).
    pub fn g(self, t: f64) -> (f64, f64) {
        match self {
            FlatDivergence::TotalVariation => (-0.5 * t.tanh(), -0.5 * (1.0 - t.tanh().powi(2))),
            FlatDivergence::Kl => (-t.ln(), -1.0 / t),
            FlatDivergence::JensenShannon => ((-t).exp().ln_1p() - std::f64::consts::LN_2, -1.0 / (1.0 + t.exp())),
        }
    }

    /// (h_f(t), h_f'(t)).
    pub fn h(self, t: f64) -> (f64, f64) {
        match self {
            FlatDivergence::TotalVariation => (-0.5 * t.tanh(), -0.5 * (1.0 - t.tanh().powi(2))),
            FlatDivergence::Kl => (-t, -1.0),
            FlatDivergence::JensenShannon => (std::f64::consts::LN_2 - t.exp().ln_1p(), -1.0 / (1.0 + (-t).exp())),
        }
    }

    pub fn loss(self, p_idk: f64, p_y: f64) -> f64 {
        self.g(p_idk).0 - self.h(p_y).0
    }
}

/// FLAT per-example loss g_f(p(idk|x)) − h_f(p(y|x)).
pub fn flat_and_dz(act: &Activations, targets: &[u32], idk: u32, div: FlatDivergence, vocab: usize) -> (f64, Vec<f64>) {
    let b = act.batch;
    let inv = 1.0 / b as f64;
    let idk = idk as usize;
    let mut dz = vec![0.0; b * vocab];
    let mut loss = 0.0;
    for i in 0..b {
        let lp = act.logp_row(i, vocab);
        let y = targets[i] as usize;
        let (pi, py) = (lp[idk].exp(), lp[y].exp());
        let (gv, gd) = div.g(pi);
        let (hv, hd) = div.h(py);
        loss += gv - hv;
        // dp_t/dz = p_t (e_t − p)
        let a = gd * pi * inv;
        let c = -hd * py * inv;
        let row = &mut dz[i * vocab..(i + 1) * vocab];
        for (d, l) in row.iter_mut().zip(lp) {
            *d = -(a + c) * l.exp();
        }
        row[idk] += a;
        row[y] += c;
    }
    (loss * inv, dz)
}
