use serde::{Deserialize, Serialize};

use crate::MetricsError;

/// Smallest sample accepted on either side.
pub const MIN_SAMPLE: usize = 5;
/// Largest side for which exact enumeration is offered.
pub const EXACT_MAX_SIDE: usize = 10;

const SERIES_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    #[default]
    Asymptotic,
    /// exhaustive enumeration of label assignments; both sides ≤ EXACT_MAX_SIDE
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(xs: &[f64], ys: &[f64]) -> Result<KsResult, MetricsError> {
    ks_two_sample_with(xs, ys, PValueMethod::Asymptotic)
}

pub fn ks_two_sample_with(xs: &[f64], ys: &[f64], method: PValueMethod) -> Result<KsResult, MetricsError> {
    for s in [xs, ys] {
        if s.len() < MIN_SAMPLE {
            return Err(MetricsError::SampleTooSmall { n: s.len(), min: MIN_SAMPLE });
        }
        if s.iter().any(|v| v.is_nan()) {
            return Err(MetricsError::NonFinite);
        }
    }
    let d = ks_statistic(xs, ys);
    let p = match method {
        PValueMethod::Asymptotic => {
            let (n, m) = (xs.len() as f64, ys.len() as f64);
            kolmogorov_sf((n * m / (n + m)).sqrt() * d)
        }
        PValueMethod::Exact => ks_exact_p(xs, ys)?,
    };
    Ok(KsResult { statistic: d, p_value: p.clamp(0.0, 1.0) })
}

/// D = sup |F_x − F_y| over the pooled sample.
pub fn ks_statistic(xs: &[f64], ys: &[f64]) -> f64 {
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        // step past every copy of the smaller value in both samples
        let v = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < n && a[i] <= v {
            i += 1;
        }
        while j < m && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    d
}

/// Survival function of the Kolmogorov distribution,
/// Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} exp(−2k²λ²).
///
/// For small λ that series converges slowly, so the Jacobi-theta form of the
/// CDF, √(2π)/λ Σ_{k≥1} exp(−(2k−1)²π²/(8λ²)), is used instead.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        let mut cdf = 0.0;
        let c = std::f64::consts::PI * std::f64::consts::PI / (8.0 * lambda * lambda);
        for k in 1.. {
            let odd = (2 * k - 1) as f64;
            let t = (-odd * odd * c).exp();
            cdf += t;
            if t < SERIES_EPS {
                break;
            }
        }
        cdf *= (2.0 * std::f64::consts::PI).sqrt() / lambda;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut s = 0.0;
    let mut sign = 1.0;
    for k in 1.. {
        let kf = k as f64;
        let t = (-2.0 * kf * kf * lambda * lambda).exp();
        s += sign * t;
        if t < SERIES_EPS {
            break;
        }
        sign = -sign;
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Exact permutation p-value: the share of all C(n+m, n) ways of labelling
/// the pooled sample whose statistic reaches the observed one.
pub fn ks_exact_p(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    let (n, m) = (xs.len(), ys.len());
    if n > EXACT_MAX_SIDE || m > EXACT_MAX_SIDE {
        return Err(MetricsError::ExactTooLarge { n, m, max: EXACT_MAX_SIDE });
    }
    let observed = ks_statistic(xs, ys);
    let mut pooled: Vec<f64> = xs.iter().chain(ys).copied().collect();
    pooled.sort_by(f64::total_cmp);
    // group boundaries: the empirical CDFs are only compared after a full tie group
    let total = n + m;
    let group_end: Vec<bool> = (0..total).map(|i| i + 1 == total || pooled[i + 1] != pooled[i]).collect();

    let tol = 1e-12;
    let mut hits: u64 = 0;
    let mut count: u64 = 0;
    // Gosper's hack over n-subsets of `total` positions
    let mut mask: u32 = (1u32 << n) - 1;
    let limit: u32 = 1u32 << total;
    while mask < limit {
        let mut cx = 0usize;
        let mut d: f64 = 0.0;
        for (i, &end) in group_end.iter().enumerate() {
            if mask & (1 << i) != 0 {
                cx += 1;
            }
            if end {
                let cy = i + 1 - cx;
                d = d.max((cx as f64 / n as f64 - cy as f64 / m as f64).abs());
            }
        }
        if d >= observed - tol {
            hits += 1;
        }
        count += 1;
        let c = mask & mask.wrapping_neg();
        let r = mask + c;
        mask = (((r ^ mask) >> 2) / c) | r;
    }
    Ok(hits as f64 / count as f64)
}
