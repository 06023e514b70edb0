use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use metrics::{fmt_real, ALPHA};

use crate::config::{ExperimentConfig, Mode};
use crate::experiment::{GeometryRow, Outcome};
use crate::record::{median, RunRecord};
use crate::RunError;

pub const SCATTER_HEADER: [&str; 13] = [
    "mode",
    "block",
    "param",
    "method",
    "unlearn_langs",
    "eval_lang",
    "n_seeds",
    "n_errors",
    "median_normalized_utility",
    "median_forget_quality_p",
    "min_forget_quality_p",
    "max_forget_quality_p",
    "alpha",
];

fn line(out: &mut String, cells: &[String]) {
    out.push_str(&cells.join(","));
    out.push('\n');
}

pub fn results_csv(records: &[RunRecord]) -> String {
    let mut out = String::new();
    line(&mut out, &RunRecord::csv_header());
    for r in records {
        line(&mut out, &r.csv_row());
    }
    out
}

/// Seed-median of each (mode, block, param, method, unlearn set, eval language)
/// cell: the utility-versus-forget-quality scatter with its α line.
pub fn scatter_csv(records: &[RunRecord]) -> String {
    let mut groups: BTreeMap<(String, String, String, String, String, String), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        let k = r.sort_key();
        groups.entry((k.0.name().to_string(), k.1, k.2, k.3, k.4, k.5)).or_default().push(r);
    }
    let mut out = String::new();
    let mut header: Vec<String> = SCATTER_HEADER.iter().map(|s| s.to_string()).collect();
    header.push("forgotten".into());
    line(&mut out, &header);
    for ((mode, block, param, method, ul, ev), rs) in groups {
        let ps: Vec<f64> = rs.iter().filter_map(|r| r.p()).collect();
        let nus: Vec<f64> = rs.iter().filter_map(|r| r.nu()).collect();
        let mp = median(&ps);
        let (lo, hi) = ps.iter().fold((f64::NAN, f64::NAN), |(a, b), &p| (a.min(p), b.max(p)));
        line(
            &mut out,
            &[
                mode,
                block,
                param,
                method,
                ul,
                ev,
                rs.len().to_string(),
                rs.iter().filter(|r| r.error.is_some()).count().to_string(),
                fmt_real(median(&nus)),
                fmt_real(mp),
                fmt_real(lo),
                fmt_real(hi),
                fmt_real(ALPHA),
                (mp > ALPHA).to_string(),
            ],
        );
    }
    out
}

/// Seed-median p for unlearning in a and evaluating in b, next to the reverse
/// direction, for every method and language pair of a one-to-one run.
pub fn asymmetry_csv(records: &[RunRecord]) -> String {
    let mut cells: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.block == "one-to-one" && r.unlearn_langs.len() == 1) {
        if let Some(p) = r.p() {
            cells.entry((r.method.clone(), r.unlearn_langs[0].clone(), r.eval_lang.clone())).or_default().push(p);
        }
    }
    let mut out = String::from("method,lang_a,lang_b,median_p_a_to_b,median_p_b_to_a,gap\n");
    for ((m, a, b), ps) in &cells {
        if a >= b {
            continue;
        }
        if let Some(back) = cells.get(&(m.clone(), b.clone(), a.clone())) {
            let (f, r) = (median(ps), median(back));
            line(&mut out, &[m.clone(), a.clone(), b.clone(), fmt_real(f), fmt_real(r), fmt_real(f - r)]);
        }
    }
    out
}

pub fn geometry_csv(rows: &[GeometryRow]) -> String {
    let mut out = String::from("seed,layer,shared_rank,mean_overlap,cloud_shared_cos,cloud_residual_cos,ranks\n");
    for g in rows {
        let ranks: Vec<String> = g.ranks.iter().map(|(l, r, res)| format!("{l}:{r}/{res}")).collect();
        line(
            &mut out,
            &[
                g.seed.to_string(),
                g.layer.name().into(),
                g.shared_rank.to_string(),
                fmt_real(g.mean_overlap),
                fmt_real(g.cloud_shared_cos),
                fmt_real(g.cloud_residual_cos),
                ranks.join(";"),
            ],
        );
    }
    out
}

/// Wall-clock seconds per record; the one output that is not byte-stable.
pub fn timing_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("seed,block,method,unlearn_langs,eval_lang,param,wall_time_s\n");
    for r in records {
        let _ = writeln!(out, "{},{},{},{},{},{},{:.3}", r.seed, r.block, r.method, r.unlearn_key(), r.eval_lang, r.param_str(), r.wall_time);
    }
    out
}

/// Writes every output file and returns their paths.
pub fn emit_outputs(outcome: &Outcome, cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    if outcome.records.is_empty() {
        return Err(RunError::Output("no records to write".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| RunError::Output(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<(&str, String)> = vec![
        ("config.json", cfg.to_json()),
        ("results.csv", results_csv(&outcome.records)),
        ("results.json", serde_json::to_string_pretty(&outcome.records).expect("records serialize") + "\n"),
        ("scatter.csv", scatter_csv(&outcome.records)),
        ("timing.csv", timing_csv(&outcome.records)),
    ];
    if cfg.mode == Mode::OneToOne {
        files.push(("asymmetry.csv", asymmetry_csv(&outcome.records)));
    }
    if !outcome.geometry.is_empty() {
        files.push(("geometry.csv", geometry_csv(&outcome.geometry)));
    }
    if let Some(t) = &outcome.tsne {
        files.push(("tsne.csv", t.clone()));
    }
    let mut written = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| RunError::Output(format!("{}: {e}", p.display())))?;
        written.push(p);
    }
    Ok(written)
}
