use testbed::{FactExample, Grads, Param, ToyModel};

use crate::losses::{flat_and_dz, kl_and_dz, neg_nll_and_dz, npo_and_dz};
use crate::{Diagnostics, Method, UnlearnConfig, UnlearnError, UnlearnResult};

const PARAMS: [Param; 2] = [Param::W1, Param::W2];

struct Batch {
    tokens: Vec<u32>,
    targets: Vec<u32>,
}

impl Batch {
    fn of(examples: &[FactExample]) -> Batch {
        Batch {
            tokens: examples.iter().flat_map(|e| e.input_tokens).collect(),
            targets: examples.iter().map(|e| e.target_token).collect(),
        }
    }
}

/// Full-batch heavy-ball descent on {w1, w2}; `grad` returns the loss and
/// its gradient at the current model.
fn descend(
    m: &ToyModel,
    cfg: &UnlearnConfig,
    method: Method,
    mut grad: impl FnMut(&ToyModel) -> (f64, Grads),
) -> Result<UnlearnResult, UnlearnError> {
    cfg.validate()?;
    let mut model = m.clone();
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut vel: Vec<Vec<f64>> = PARAMS.iter().map(|&p| vec![0.0; model.param(p).len()]).collect();
    for step in 0..cfg.steps {
        let (loss, g) = grad(&model);
        if !loss.is_finite() {
            return Err(UnlearnError::Diverged { step });
        }
        losses.push(loss);
        for (k, &p) in PARAMS.iter().enumerate() {
            let gp = g.get(p).expect("w1/w2 gradient");
            for ((v, w), d) in vel[k].iter_mut().zip(model.param_mut(p).iter_mut()).zip(gp) {
                *v = cfg.momentum * *v + d;
                *w -= cfg.lr * *v;
            }
        }
        if !model.w1.is_finite() || !model.w2.is_finite() {
            return Err(UnlearnError::Diverged { step });
        }
    }
    Ok(UnlearnResult { model, diagnostics: Diagnostics::new(method, losses), subspace_artifacts: None })
}

fn nonempty(set: &[FactExample], what: &str) -> Result<(), UnlearnError> {
    if set.is_empty() {
        return Err(UnlearnError::EmptySet(what.to_string()));
    }
    Ok(())
}

/// Steps on −NLL(forget).
pub fn gradient_ascent(m: &ToyModel, forget: &[FactExample], cfg: &UnlearnConfig) -> Result<UnlearnResult, UnlearnError> {
    nonempty(forget, "forget")?;
    let f = Batch::of(forget);
    let v = m.vocab();
    descend(m, cfg, Method::GradAscent, |m| {
        let act = m.forward_tokens(&f.tokens);
        let (l, dz) = neg_nll_and_dz(&act, &f.targets, v);
        (l, m.backward(&act, &dz, &PARAMS))
    })
}

/// −NLL(forget) + λ·KL(p_base ‖ p) on retain, with p_base captured once.
pub fn kl_min(
    m: &ToyModel,
    forget: &[FactExample],
    retain: &[FactExample],
    cfg: &UnlearnConfig,
) -> Result<UnlearnResult, UnlearnError> {
    nonempty(forget, "forget")?;
    nonempty(retain, "retain")?;
    let f = Batch::of(forget);
    let r = Batch::of(retain);
    let v = m.vocab();
    let ref_logp = m.forward_tokens(&r.tokens).logp;
    let w = cfg.retain_weight;
    descend(m, cfg, Method::KlMin, |m| {
        let act = m.forward_tokens(&f.tokens);
        let (lf, dz) = neg_nll_and_dz(&act, &f.targets, v);
        let mut g = m.backward(&act, &dz, &PARAMS);
        if w == 0.0 {
            return (lf, g);
        }
        let act_r = m.forward_tokens(&r.tokens);
        let (lk, dzr) = kl_and_dz(&act_r, &ref_logp, v);
        g.add_scaled(w, &m.backward(&act_r, &dzr, &PARAMS));
        (lf + w * lk, g)
    })
}

/// −NLL(forget) + λ·NLL(retain).
pub fn grad_diff(
    m: &ToyModel,
    forget: &[FactExample],
    retain: &[FactExample],
    cfg: &UnlearnConfig,
) -> Result<UnlearnResult, UnlearnError> {
    nonempty(forget, "forget")?;
    nonempty(retain, "retain")?;
    let f = Batch::of(forget);
    let r = Batch::of(retain);
    let v = m.vocab();
    let w = cfg.retain_weight;
    descend(m, cfg, Method::GradDiff, |m| {
        let act = m.forward_tokens(&f.tokens);
        let (lf, dz) = neg_nll_and_dz(&act, &f.targets, v);
        let mut g = m.backward(&act, &dz, &PARAMS);
        if w == 0.0 {
            return (lf, g);
        }
        let act_r = m.forward_tokens(&r.tokens);
        let (lr, dzr) = testbed::nll_and_dz(&act_r, &r.targets, v);
        g.add_scaled(w, &m.backward(&act_r, &dzr, &PARAMS));
        (lf + w * lr, g)
    })
}

/// NLL of the refusal token on forget inputs.
pub fn pref_opt(m: &ToyModel, forget: &[FactExample], cfg: &UnlearnConfig) -> Result<UnlearnResult, UnlearnError> {
    nonempty(forget, "forget")?;
    check_idk(m, cfg)?;
    let f = Batch::of(forget);
    let idk = vec![cfg.idk_token; forget.len()];
    let v = m.vocab();
    descend(m, cfg, Method::PrefOpt, |m| {
        let act = m.forward_tokens(&f.tokens);
        let (l, dz) = testbed::nll_and_dz(&act, &idk, v);
        (l, m.backward(&act, &dz, &PARAMS))
    })
}

/// Negative preference optimization against the frozen input model.
pub fn npo(m: &ToyModel, forget: &[FactExample], cfg: &UnlearnConfig) -> Result<UnlearnResult, UnlearnError> {
    nonempty(forget, "forget")?;
    let f = Batch::of(forget);
    let v = m.vocab();
    let base = m.forward_tokens(&f.tokens);
    let ref_y: Vec<f64> = f.targets.iter().enumerate().map(|(i, &y)| base.logp_row(i, v)[y as usize]).collect();
    let beta = cfg.beta;
    descend(m, cfg, Method::Npo, |m| {
        let act = m.forward_tokens(&f.tokens);
        let (l, dz) = npo_and_dz(&act, &f.targets, &ref_y, beta, v);
        (l, m.backward(&act, &dz, &PARAMS))
    })
}

pub fn flat(m: &ToyModel, forget: &[FactExample], cfg: &UnlearnConfig) -> Result<UnlearnResult, UnlearnError> {
    nonempty(forget, "forget")?;
    check_idk(m, cfg)?;
    let f = Batch::of(forget);
    let v = m.vocab();
    let (idk, div) = (cfg.idk_token, cfg.flat_divergence);
    descend(m, cfg, Method::Flat, |m| {
        let act = m.forward_tokens(&f.tokens);
        let (l, dz) = flat_and_dz(&act, &f.targets, idk, div, v);
        (l, m.backward(&act, &dz, &PARAMS))
    })
}

fn check_idk(m: &ToyModel, cfg: &UnlearnConfig) -> Result<(), UnlearnError> {
    if cfg.idk_token as usize >= m.vocab() {
        return Err(UnlearnError::InvalidConfig(format!("idk_token {} outside vocab {}", cfg.idk_token, m.vocab())));
    }
    Ok(())
}
