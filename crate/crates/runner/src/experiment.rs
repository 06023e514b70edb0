use std::time::Instant;

use metrics::{EvalReport, LanguageScore, ReferenceChoice};
use rayon::prelude::*;
use subspace_toolkit::{
    basis_point_cloud, cloud_cosines, compute_interlingua, overlap_report, remove_residual, remove_shared, tsne_csv, tsne_embed,
    InterlinguaDecomposition, TaskSubspace, TsneConfig, MIN_POINTS,
};
use testbed::{Layer, TestbedConfig, ToyModel};
use unlearn_algos::{run, unlearn_projection, Method, UnlearnConfig, UnlearnInputs};

use crate::config::{ExperimentConfig, InterventionModel, MethodEntry, Mode};
use crate::context::{Lab, SeedContext, POOLED};
use crate::record::RunRecord;
use crate::RunError;

/// Per-layer geometry of one seed's interlingua decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct GeometryRow {
    pub seed: u64,
    pub layer: Layer,
    pub shared_rank: usize,
    /// (language, subspace rank, residual rank)
    pub ranks: Vec<(String, usize, usize)>,
    pub mean_overlap: f64,
    pub cloud_shared_cos: f64,
    pub cloud_residual_cos: f64,
}

#[derive(Clone, Debug, Default)]
pub struct SeedOutput {
    pub records: Vec<RunRecord>,
    pub geometry: Vec<GeometryRow>,
    /// t-SNE CSV of the basis point cloud (first seed of the panel only)
    pub tsne: Option<String>,
}

#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub records: Vec<RunRecord>,
    pub geometry: Vec<GeometryRow>,
    pub tsne: Option<String>,
}

impl Outcome {
    pub fn errors(&self) -> usize {
        self.records.iter().filter(|r| r.error.is_some()).count()
    }
}

/// Fields shared by every row of one model's evaluation.
struct Cell<'a> {
    cfg: &'a ExperimentConfig,
    hash: &'a str,
    seed: u64,
    block: &'a str,
    method: String,
    unlearn_langs: Vec<String>,
    param: Option<f64>,
}

impl Cell<'_> {
    fn rows(&self, ctx: &SeedContext, model: Result<ToyModel, RunError>, evals: &[String], started: Instant) -> Vec<RunRecord> {
        let make = |eval: &str, report: Option<EvalReport>, error: Option<String>| RunRecord {
            config_hash: self.hash.to_string(),
            seed: self.seed,
            mode: self.cfg.mode,
            block: self.block.to_string(),
            method: self.method.clone(),
            unlearn_langs: self.unlearn_langs.clone(),
            eval_lang: eval.to_string(),
            param: self.param,
            report,
            error,
            wall_time: 0.0,
        };
        let mut out: Vec<RunRecord> = match &model {
            Err(e) => evals.iter().map(|l| make(l, None, Some(e.to_string()))).collect(),
            Ok(m) => evals
                .iter()
                .map(|l| match evaluate(ctx, m, l, self.cfg) {
                    Ok(r) => make(l, Some(r), None),
                    Err(e) => make(l, None, Some(e.to_string())),
                })
                .collect(),
        };
        let t = started.elapsed().as_secs_f64();
        for r in &mut out {
            r.wall_time = t;
        }
        out
    }
}

pub fn reference(ctx: &SeedContext, choice: ReferenceChoice) -> &ToyModel {
    match choice {
        ReferenceChoice::RetainRetrained => &ctx.testbed.retain_model,
        ReferenceChoice::Original => &ctx.testbed.base_model,
    }
}

/// EvalReport of `m` on one variant (or the pooled pseudo-language).
pub fn evaluate(ctx: &SeedContext, m: &ToyModel, lang: &str, cfg: &ExperimentConfig) -> Result<EvalReport, RunError> {
    let le = ctx.eval(lang)?;
    let mut r = EvalReport::evaluate(m, reference(ctx, cfg.reference_choice), &le.forget, &le.splits, le.base_utility, cfg.p_value)?;
    let score = LanguageScore { utility: r.utility, normalized_utility: r.normalized_utility, forget_quality_p: r.forget_quality_p };
    r.per_language.insert(lang.to_string(), score);
    Ok(r)
}

/// Unlearns the forget facts of `variants` from `m` with one method.
pub fn unlearn(ctx: &SeedContext, tag: &str, m: &ToyModel, variants: &[String], cfg: &UnlearnConfig) -> Result<ToyModel, RunError> {
    let forget = ctx.forget(variants)?;
    let retain = ctx.retain(variants)?;
    let deltas = match cfg.method {
        Method::TaskVector | Method::Unlearn => Some(ctx.task_deltas(tag, m, variants, cfg.steps, cfg.lr)?),
        _ => None,
    };
    let inputs = UnlearnInputs {
        forget: &forget,
        retain: &retain,
        forget_delta: deltas.as_ref().map(|d| d.0.as_ref()),
        control_deltas: deltas.as_ref().map(|d| d.1.as_slice()).unwrap_or(&[]),
    };
    Ok(run(m, &inputs, cfg)?.model)
}

const BASE_TAG: &str = "base";

impl ExperimentConfig {
    fn cell<'a>(&'a self, hash: &'a str, seed: u64, block: &'a str, method: String, unlearn_langs: Vec<String>, param: Option<f64>) -> Cell<'a> {
        Cell { cfg: self, hash, seed, block, method, unlearn_langs, param }
    }
}

fn base_block(cfg: &ExperimentConfig, hash: &str, seed: u64, ctx: &SeedContext, m: &ToyModel, evals: &[String], param: Option<f64>) -> Vec<RunRecord> {
    let t = Instant::now();
    cfg.cell(hash, seed, "base", "Base".into(), Vec::new(), param).rows(ctx, Ok(m.clone()), evals, t)
}

fn unlearn_block(
    cfg: &ExperimentConfig,
    hash: &str,
    seed: u64,
    ctx: &SeedContext,
    block: &str,
    entry: &MethodEntry,
    variants: &[String],
    evals: &[String],
    param: Option<f64>,
) -> Vec<RunRecord> {
    let t = Instant::now();
    let m = unlearn(ctx, BASE_TAG, &ctx.testbed.base_model, variants, &entry.config);
    cfg.cell(hash, seed, block, entry.method.name().into(), variants.to_vec(), param).rows(ctx, m, evals, t)
}

pub fn run_one_to_one(lab: &Lab, cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutput, RunError> {
    let hash = cfg.hash();
    let ctx = lab.context(&cfg.testbed, seed)?;
    let evals = cfg.eval_variants();
    let mut records = base_block(cfg, &hash, seed, &ctx, &ctx.testbed.base_model, &evals, None);
    for entry in &cfg.methods {
        for l in &cfg.unlearn_langs {
            records.extend(unlearn_block(cfg, &hash, seed, &ctx, "one-to-one", entry, std::slice::from_ref(l), &evals, None));
        }
    }
    Ok(SeedOutput { records, ..Default::default() })
}

/// Each unlearn language evaluated on itself only (the Table-1 layout).
pub fn run_method_comparison(lab: &Lab, cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutput, RunError> {
    let hash = cfg.hash();
    let ctx = lab.context(&cfg.testbed, seed)?;
    let mut records = base_block(cfg, &hash, seed, &ctx, &ctx.testbed.base_model, &cfg.unlearn_langs, None);
    for entry in &cfg.methods {
        for l in &cfg.unlearn_langs {
            let one = std::slice::from_ref(l);
            records.extend(unlearn_block(cfg, &hash, seed, &ctx, "method-comparison", entry, one, one, None));
        }
    }
    Ok(SeedOutput { records, ..Default::default() })
}

pub fn run_many_to_one(lab: &Lab, cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutput, RunError> {
    let hash = cfg.hash();
    let ctx = lab.context(&cfg.testbed, seed)?;
    let mut records = base_block(cfg, &hash, seed, &ctx, &ctx.testbed.base_model, &cfg.held_out, None);
    for entry in &cfg.methods {
        for h in &cfg.held_out {
            let rest: Vec<String> = cfg.unlearn_langs.iter().filter(|l| *l != h).cloned().collect();
            records.extend(unlearn_block(cfg, &hash, seed, &ctx, "many-to-one", entry, &rest, std::slice::from_ref(h), None));
        }
        // paired one-to-one transfer onto every held-out language it does not cover
        for l in &cfg.unlearn_langs {
            let targets: Vec<String> = cfg.held_out.iter().filter(|h| *h != l).cloned().collect();
            if !targets.is_empty() {
                records.extend(unlearn_block(cfg, &hash, seed, &ctx, "one-to-one-pair", entry, std::slice::from_ref(l), &targets, None));
            }
        }
    }
    Ok(SeedOutput { records, ..Default::default() })
}

/// Testbed config with every sibling script at the given overlap.
pub fn with_overlap(cfg: &TestbedConfig, overlap: f64) -> TestbedConfig {
    let mut t = cfg.clone();
    for v in t.languages.iter_mut().filter(|v| v.is_sibling()) {
        v.script_overlap = overlap;
    }
    t
}

pub fn run_transliteration(lab: &Lab, cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutput, RunError> {
    let hash = cfg.hash();
    let mut langs: Vec<String> = Vec::new();
    for u in &cfg.unlearn_langs {
        let l = cfg.testbed.languages.iter().find(|v| v.variant_id() == *u).expect("validated").lang_id.clone();
        if !langs.contains(&l) {
            langs.push(l);
        }
    }
    let mut records = Vec::new();
    for &o in &cfg.overlap_grid {
        let tcfg = with_overlap(&cfg.testbed, o);
        let ctx = lab.context(&tcfg, seed)?;
        for l in &langs {
            let scripts: Vec<String> = tcfg.languages.iter().filter(|v| v.lang_id == *l).map(|v| v.variant_id()).collect();
            records.extend(base_block(cfg, &hash, seed, &ctx, &ctx.testbed.base_model, &scripts, Some(o)));
            for entry in &cfg.methods {
                for a in &scripts {
                    records.extend(unlearn_block(cfg, &hash, seed, &ctx, "transliteration", entry, std::slice::from_ref(a), &scripts, Some(o)));
                }
            }
        }
    }
    Ok(SeedOutput { records, ..Default::default() })
}

pub fn run_forget_size_sweep(lab: &Lab, cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutput, RunError> {
    let hash = cfg.hash();
    let pooled = [POOLED.to_string()];
    let mut records = Vec::new();
    for &f in &cfg.forget_fractions {
        let tcfg = TestbedConfig { forget_fraction: f, ..cfg.testbed.clone() };
        let ctx = lab.context(&tcfg, seed)?;
        let all = ctx.testbed.variant_ids();
        records.extend(base_block(cfg, &hash, seed, &ctx, &ctx.testbed.base_model, &pooled, Some(f)));
        for entry in &cfg.methods {
            records.extend(unlearn_block(cfg, &hash, seed, &ctx, "forget-size-sweep", entry, &all, &pooled, Some(f)));
        }
    }
    Ok(SeedOutput { records, ..Default::default() })
}

/// Per-language task subspaces (the UNLEARN-discriminated forget directions)
/// of every native language in `cfg.unlearn_langs`, grouped by layer.
pub fn language_subspaces(ctx: &SeedContext, tag: &str, target: &ToyModel, cfg: &ExperimentConfig) -> Result<Vec<Vec<TaskSubspace>>, RunError> {
    let ucfg = intervention_unlearn_config(cfg);
    let langs: Vec<&String> = cfg
        .unlearn_langs
        .iter()
        .filter(|l| cfg.testbed.languages.iter().any(|v| v.variant_id() == **l && !v.is_sibling()))
        .collect();
    let mut by_layer: Vec<Vec<TaskSubspace>> = vec![Vec::new(); ucfg.layers.len()];
    for l in langs {
        let one = std::slice::from_ref(l);
        let (fd, ctrl) = ctx.task_deltas(tag, target, one, ucfg.steps, ucfg.lr)?;
        let res = unlearn_projection(target, &fd, &ctrl, &ucfg)?;
        let arts = res.subspace_artifacts.expect("projection records artifacts");
        for (k, a) in arts.layers.into_iter().enumerate() {
            by_layer[k].push(TaskSubspace::from_basis(l, a.layer, &fd, a.discriminated)?);
        }
    }
    Ok(by_layer)
}

/// The UNLEARN settings that define the task subspaces: the first UNLEARN
/// entry of the method list, or the defaults.
pub fn intervention_unlearn_config(cfg: &ExperimentConfig) -> UnlearnConfig {
    cfg.methods.iter().find(|m| m.method == Method::Unlearn).map(|m| m.config.clone()).unwrap_or_else(|| UnlearnConfig::for_method(Method::Unlearn))
}

pub fn intervention_target(ctx: &SeedContext, cfg: &ExperimentConfig) -> Result<(String, ToyModel), RunError> {
    match cfg.intervention_model {
        InterventionModel::Joint => Ok((BASE_TAG.into(), ctx.testbed.base_model.clone())),
        InterventionModel::ForgetFinetuned => {
            let u = intervention_unlearn_config(cfg);
            let all = ctx.testbed.variant_ids();
            let d = ctx.delta(BASE_TAG, &ctx.testbed.base_model, &ctx.forget(&all)?, "forget:all", u.steps, u.lr)?;
            Ok(("forget-finetuned".into(), d.apply(&ctx.testbed.base_model, 1.0)?))
        }
    }
}

pub fn run_interventions(lab: &Lab, cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutput, RunError> {
    let hash = cfg.hash();
    let ctx = lab.context(&cfg.testbed, seed)?;
    let evals = cfg.eval_variants();
    let (tag, target) = intervention_target(&ctx, cfg)?;
    let mut out = SeedOutput { records: base_block(cfg, &hash, seed, &ctx, &target, &evals, None), ..Default::default() };

    let by_layer = language_subspaces(&ctx, &tag, &target, cfg)?;
    let decomps: Vec<InterlinguaDecomposition> =
        by_layer.iter().map(|subs| compute_interlingua(subs, cfg.interlingua_cos_tol)).collect::<Result<_, _>>()?;
    let langs: Vec<String> = by_layer[0].iter().map(|s| s.lang_id.clone()).collect();

    let t = Instant::now();
    let m = remove_shared(&target, &decomps).map_err(RunError::from);
    out.records.extend(cfg.cell(&hash, seed, "shared-removal", "SharedRemoval".into(), langs.clone(), None).rows(&ctx, m, &evals, t));
    for l in &langs {
        let t = Instant::now();
        let m = remove_residual(&target, &decomps, l).map_err(RunError::from);
        out.records.extend(cfg.cell(&hash, seed, "residual-removal", "ResidualRemoval".into(), vec![l.clone()], None).rows(&ctx, m, &evals, t));
    }

    let mut csv = String::new();
    for (subs, d) in by_layer.iter().zip(&decomps) {
        let ov = overlap_report(subs)?;
        let n = subs.len();
        let mean_overlap = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| ov.get(i, j)).sum::<f64>() / (n * (n - 1)) as f64;
        let cloud = basis_point_cloud(subs)?;
        let (sc, rc) = cloud_cosines(&cloud, &d.shared);
        out.geometry.push(GeometryRow {
            seed,
            layer: d.layer,
            shared_rank: d.shared.rank(),
            ranks: subs.iter().map(|s| (s.lang_id.clone(), s.rank(), d.residuals[&s.lang_id].rank())).collect(),
            mean_overlap,
            cloud_shared_cos: sc,
            cloud_residual_cos: rc,
        });
        if seed == cfg.seeds[0] && cloud.len() >= MIN_POINTS {
            let points: Vec<Vec<f64>> = cloud.iter().map(|p| p.vector.clone()).collect();
            let tc = feasible_tsne(&cfg.tsne, points.len());
            let coords = tsne_embed(&points, &tc)?;
            let part = tsne_csv(&cloud, &coords)?;
            if csv.is_empty() {
                csv.push_str(&part);
            } else {
                csv.extend(part.lines().skip(1).map(|l| format!("{l}\n")));
            }
        }
    }
    if !csv.is_empty() {
        out.tsne = Some(csv);
    }
    Ok(out)
}

/// Lowers the perplexity below n/3 when a point cloud is too small for the
/// configured value.
pub fn feasible_tsne(cfg: &TsneConfig, n: usize) -> TsneConfig {
    let cap = n as f64 / 3.0 - 0.5;
    TsneConfig { perplexity: cfg.perplexity.min(cap).max(1.5), ..cfg.clone() }
}

pub fn run_seed(lab: &Lab, cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutput, RunError> {
    match cfg.mode {
        Mode::OneToOne => run_one_to_one(lab, cfg, seed),
        Mode::ManyToOne => run_many_to_one(lab, cfg, seed),
        Mode::Transliteration => run_transliteration(lab, cfg, seed),
        Mode::Interventions => run_interventions(lab, cfg, seed),
        Mode::ForgetSizeSweep => run_forget_size_sweep(lab, cfg, seed),
        Mode::MethodComparison => run_method_comparison(lab, cfg, seed),
    }
}

/// Runs every seed (in parallel on the current rayon pool) and returns the
/// records in their canonical order.
pub fn run_experiment(lab: &Lab, cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let outs: Vec<SeedOutput> = cfg.seeds.par_iter().map(|&s| run_seed(lab, cfg, s)).collect::<Result<_, _>>()?;
    let mut o = Outcome::default();
    for s in outs {
        o.records.extend(s.records);
        o.geometry.extend(s.geometry);
        if s.tsne.is_some() {
            o.tsne = s.tsne;
        }
    }
    o.records.sort_by_key(|r| r.sort_key());
    o.geometry.sort_by_key(|g| (g.seed, g.layer));
    Ok(o)
}
