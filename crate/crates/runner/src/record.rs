use metrics::{fmt_real, significant_forgetting, EvalReport};
use serde::{Deserialize, Serialize};

use crate::config::Mode;

/// One evaluation of one model on one language.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub seed: u64,
    pub mode: Mode,
    /// which part of the mode produced the row, e.g. "base" or "many-to-one"
    pub block: String,
    pub method: String,
    pub unlearn_langs: Vec<String>,
    pub eval_lang: String,
    /// forget fraction (sweep) or script overlap (transliteration)
    pub param: Option<f64>,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
    /// seconds; kept out of every byte-stable output
    #[serde(skip)]
    pub wall_time: f64,
}

impl RunRecord {
    pub fn p(&self) -> Option<f64> {
        self.report.as_ref().map(|r| r.forget_quality_p)
    }

    pub fn nu(&self) -> Option<f64> {
        self.report.as_ref().map(|r| r.normalized_utility)
    }

    pub fn utility(&self) -> Option<f64> {
        self.report.as_ref().map(|r| r.utility)
    }

    pub fn unlearn_key(&self) -> String {
        self.unlearn_langs.join("+")
    }

    pub fn param_str(&self) -> String {
        self.param.map(fmt_real).unwrap_or_default()
    }

    /// Total order used for every output file.
    pub fn sort_key(&self) -> (Mode, String, String, String, String, String, u64) {
        (self.mode, self.block.clone(), self.param_str(), self.method.clone(), self.unlearn_key(), self.eval_lang.clone(), self.seed)
    }

    pub fn csv_header() -> Vec<String> {
        let mut h: Vec<String> = ["config_hash", "mode", "block", "seed", "method", "unlearn_langs", "eval_lang", "param", "forgotten"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend(EvalReport::csv_header());
        h.push("error".into());
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let mut r = vec![
            self.config_hash.clone(),
            self.mode.name().into(),
            self.block.clone(),
            self.seed.to_string(),
            self.method.clone(),
            self.unlearn_key(),
            self.eval_lang.clone(),
            self.param_str(),
        ];
        match &self.report {
            Some(rep) => {
                r.push(significant_forgetting(rep.forget_quality_p).to_string());
                r.extend(rep.csv_row());
            }
            None => {
                r.push(String::new());
                r.extend(EvalReport::csv_header().iter().map(|_| String::new()));
            }
        }
        // errors are free text; keep the row single-line and comma-free
        r.push(self.error.as_deref().unwrap_or("").replace([',', '\n'], ";"));
        r
    }
}

/// Median of the finite values; NaN for an empty list.
pub fn median(xs: &[f64]) -> f64 {
    let mut v: Vec<f64> = xs.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
