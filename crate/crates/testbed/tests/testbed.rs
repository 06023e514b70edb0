use std::collections::BTreeSet;
use std::sync::OnceLock;

use linalg_core::svd;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use testbed::*;

fn default_bench() -> &'static Testbed {
    static TB: OnceLock<Testbed> = OnceLock::new();
    TB.get_or_init(|| Testbed::build(&TestbedConfig::default(), 11).expect("default bench"))
}

fn random_model(vocab: usize, de: usize, dh: usize, seed: u64) -> ToyModel {
    let mut m = ToyModel::init(vocab, de, dh, INPUT_LEN, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for b in m.b1.iter_mut().chain(m.b2.iter_mut()) {
        *b = rng.random_range(-0.5..0.5);
    }
    m
}

// ---- universe ----

#[test]
fn universe_fraction_arithmetic() {
    let u = generate_universe(100, 10, 512, 0.10, 7).unwrap();
    assert_eq!(u.forget_ids.len(), 10);
    assert_eq!(u.retain_ids.len(), 90);
}

#[test]
fn universe_is_deterministic() {
    let a = generate_universe(100, 10, 512, 0.10, 7).unwrap();
    let b = generate_universe(100, 10, 512, 0.10, 7).unwrap();
    assert_eq!(a, b);
    let c = generate_universe(100, 10, 512, 0.10, 8).unwrap();
    assert_ne!(a.forget_ids, c.forget_ids);
}

#[test]
fn one_percent_forgets_one_fact() {
    let u = generate_universe(100, 10, 512, 0.01, 3).unwrap();
    assert_eq!(u.forget_ids.len(), 1);
}

#[test]
fn universe_rejects_bad_inputs() {
    assert!(matches!(generate_universe(100, 10, 399, 0.1, 0), Err(TestbedError::VocabTooSmall { .. })));
    assert!(matches!(generate_universe(19, 2, 512, 0.1, 0), Err(TestbedError::InvalidConfig(_))));
    assert!(matches!(generate_universe(100, 10, 512, 0.0, 0), Err(TestbedError::InvalidConfig(_))));
    assert!(matches!(generate_universe(100, 10, 512, 0.6, 0), Err(TestbedError::InvalidConfig(_))));
}

#[test]
fn forget_set_is_relation_blocked() {
    let u = generate_universe(100, 10, 512, 0.10, 5).unwrap();
    let rels: BTreeSet<u32> = u.forget_ids.iter().map(|&i| u.facts[i].relation_id).collect();
    assert_eq!(rels.len(), 1, "10 facts per relation, so 10% fits one relation");
}

// ---- rendering ----

#[test]
fn identity_map_renders_semantic_ids() {
    let u = generate_universe(100, 10, 512, 0.1, 1).unwrap();
    let ex = render_language(&u, &LanguageSpec::identity("en", NATIVE_SCRIPT, 512)).unwrap();
    assert_eq!(ex.len(), 100);
    for (e, f) in ex.iter().zip(&u.facts) {
        assert_eq!(e.input_tokens, [f.subject_id, f.relation_id, u.layout.marker]);
        assert_eq!(e.target_token, f.object_id);
    }
}

#[test]
fn two_languages_render_differently() {
    let u = generate_universe(100, 10, 512, 0.1, 1).unwrap();
    let a = render_language(&u, &LanguageSpec::new("en", NATIVE_SCRIPT, 512, 1, &[0]).unwrap()).unwrap();
    let b = render_language(&u, &LanguageSpec::new("es", NATIVE_SCRIPT, 512, 2, &[0]).unwrap()).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.fact_id, y.fact_id);
        assert_ne!(x.input_tokens, y.input_tokens);
    }
}

#[test]
fn inverse_map_recovers_semantics_across_languages() {
    let tb = default_bench();
    let u = &tb.universe;
    for (spec, data) in tb.specs.iter().zip(&tb.data) {
        let inv = spec.inverse();
        for (e, f) in data.iter().zip(&u.facts) {
            let back = e.input_tokens.map(|t| inv[t as usize]);
            assert_eq!(back, [f.subject_id, f.relation_id, u.layout.marker]);
            assert_eq!(inv[e.target_token as usize], f.object_id);
        }
    }
}

#[test]
fn false_targets_are_same_relation_objects() {
    let tb = default_bench();
    let u = &tb.universe;
    for (spec, data) in tb.specs.iter().zip(&tb.data) {
        let inv = spec.inverse();
        for e in data {
            assert!(!e.false_targets.contains(&e.target_token));
            let rel = u.facts[e.fact_id].relation_id;
            for &t in &e.false_targets {
                let obj = inv[t as usize];
                let owner = u.facts.iter().find(|f| f.object_id == obj).expect("false target is an object");
                assert_eq!(owner.relation_id, rel);
            }
            assert!(e.input_tokens.iter().all(|&t| (t as usize) < spec.vocab_size));
        }
    }
}

#[test]
fn rendered_inputs_are_unique_across_variants() {
    let tb = default_bench();
    let all: BTreeSet<[u32; INPUT_LEN]> = tb.data.iter().flatten().map(|e| e.input_tokens).collect();
    assert_eq!(all.len(), tb.data.iter().map(Vec::len).sum::<usize>());
}

// ---- transliteration ----

fn count_shared(a: &LanguageSpec, b: &LanguageSpec) -> usize {
    let mut n = 0;
    for s in 0..a.vocab_size as u32 {
        if a.map(s) == b.map(s) {
            n += 1;
        }
    }
    n
}

#[test]
fn overlap_half_shares_256_of_512() {
    let hi = LanguageSpec::new("hi", NATIVE_SCRIPT, 512, 9, &[0]).unwrap();
    let la = hi.sibling("la", 0.5, 10).unwrap();
    assert!(la.is_bijection());
    assert_eq!(count_shared(&hi, &la), 256);
}

#[test]
fn transliterate_overlap_extremes() {
    let u = generate_universe(100, 10, 512, 0.1, 2).unwrap();
    let hi = LanguageSpec::new("hi", NATIVE_SCRIPT, 512, 9, &[0]).unwrap();
    let src = render_language(&u, &hi).unwrap();

    let same = hi.sibling("la", 1.0, 3).unwrap();
    let out = transliterate(&src, &hi, &same).unwrap();
    for (a, b) in src.iter().zip(&out) {
        assert_eq!(a.input_tokens, b.input_tokens);
        assert_eq!(a.target_token, b.target_token);
    }

    let none = hi.sibling("la", 0.0, 3).unwrap();
    assert_eq!(count_shared(&hi, &none), 0);
    let out = transliterate(&src, &hi, &none).unwrap();
    for (a, b) in src.iter().zip(&out) {
        for (x, y) in a.input_tokens.iter().zip(&b.input_tokens) {
            assert_ne!(x, y);
        }
        assert_ne!(a.target_token, b.target_token);
    }
}

#[test]
fn transliterate_matches_direct_rendering() {
    let u = generate_universe(100, 10, 512, 0.1, 2).unwrap();
    let zh = LanguageSpec::new("zh", NATIVE_SCRIPT, 512, 4, &[0]).unwrap();
    let la = zh.sibling("la", 0.5, 5).unwrap();
    let via = transliterate(&render_language(&u, &zh).unwrap(), &zh, &la).unwrap();
    assert_eq!(via, render_language(&u, &la).unwrap());
}

#[test]
fn transliterate_rejects_other_language() {
    let u = generate_universe(100, 10, 512, 0.1, 2).unwrap();
    let hi = LanguageSpec::new("hi", NATIVE_SCRIPT, 512, 9, &[0]).unwrap();
    let zh = LanguageSpec::new("zh", NATIVE_SCRIPT, 512, 8, &[0]).unwrap();
    let zh_la = zh.sibling("la", 0.5, 1).unwrap();
    let src = render_language(&u, &hi).unwrap();
    assert!(matches!(transliterate(&src, &hi, &zh_la), Err(TestbedError::LanguageMismatch { .. })));
}

#[test]
fn sibling_with_changes_marker() {
    let hi = LanguageSpec::new("hi", NATIVE_SCRIPT, 512, 9, &[0]).unwrap();
    for seed in 0..20 {
        let la = hi.sibling_with("la", 0.9, seed, &[1]).unwrap();
        assert_ne!(la.map(1), hi.map(1));
        assert_eq!(count_shared(&hi, &la), shared_count(0.9, 512));
    }
}

// ---- forward / gradients ----

#[test]
fn zero_model_is_uniform() {
    let m = ToyModel::zeros(64, 4, 8, INPUT_LEN);
    let p = m.forward(&[3, 4, 5]);
    for x in p {
        assert!((x - 1.0 / 64.0).abs() < 1e-15);
    }
}

#[test]
fn probabilities_sum_to_one() {
    let m = random_model(128, 6, 10, 4);
    for x in [[0u32, 1, 2], [127, 5, 99], [7, 7, 7]] {
        let p = m.forward(&x);
        let s: f64 = p.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v > 0.0));
    }
}

fn mean_nll(m: &ToyModel, data: &[FactExample]) -> f64 {
    // reference loss from single-example probabilities
    data.iter().map(|e| -m.forward(&e.input_tokens)[e.target_token as usize].ln()).sum::<f64>() / data.len() as f64
}

#[test]
fn nll_gradient_matches_finite_differences() {
    let u = generate_universe(40, 4, 160, 0.1, 3).unwrap();
    let data = render_language(&u, &LanguageSpec::new("en", NATIVE_SCRIPT, 160, 2, &[0]).unwrap()).unwrap();
    let data = &data[..12];
    let m = random_model(160, 5, 9, 21);
    let params = [Param::Embed, Param::W1, Param::B1, Param::W2, Param::B2];
    let act = m.forward_examples(data);
    let targets: Vec<u32> = data.iter().map(|e| e.target_token).collect();
    let (loss, dz) = nll_and_dz(&act, &targets, m.vocab());
    assert!((loss - mean_nll(&m, data)).abs() < 1e-12);
    let g = m.backward(&act, &dz, &params);

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let h = 1e-5;
    for p in params {
        let n = m.param(p).len();
        let gp = g.get(p).unwrap();
        // embed rows of unused tokens have zero gradient, so sample used ones
        let coords: Vec<usize> = if p == Param::Embed {
            (0..5).map(|k| data[k].input_tokens[k % INPUT_LEN] as usize * m.d_embed() + k % m.d_embed()).collect()
        } else {
            (0..5).map(|_| rng.random_range(0..n)).collect()
        };
        for i in coords {
            let mut plus = m.clone();
            plus.param_mut(p)[i] += h;
            let mut minus = m.clone();
            minus.param_mut(p)[i] -= h;
            let fd = (mean_nll(&plus, data) - mean_nll(&minus, data)) / (2.0 * h);
            let rel = (fd - gp[i]).abs() / fd.abs().max(gp[i].abs()).max(1e-6);
            assert!(rel < 1e-6, "{p:?}[{i}]: analytic {} fd {fd} rel {rel}", gp[i]);
        }
    }
}

// ---- training ----

#[test]
fn trainer_fits_two_hundred_facts() {
    let u = generate_universe(200, 20, 1024, 0.1, 5).unwrap();
    let data = render_language(&u, &LanguageSpec::new("en", NATIVE_SCRIPT, 1024, 6, &[0]).unwrap()).unwrap();
    let m0 = ToyModel::init(1024, 16, 64, INPUT_LEN, 7);
    let m = train(&m0, &data, 2000, 0.05, 8).unwrap();
    let acc = m.accuracy(&data);
    assert!(acc >= 0.99, "training accuracy {acc}");
}

#[test]
fn zero_steps_and_determinism() {
    let u = generate_universe(40, 4, 160, 0.1, 3).unwrap();
    let data = render_language(&u, &LanguageSpec::identity("en", NATIVE_SCRIPT, 160)).unwrap();
    let m0 = ToyModel::init(160, 4, 8, INPUT_LEN, 1);
    assert_eq!(train(&m0, &data, 0, 0.05, 1).unwrap(), m0);
    let a = train(&m0, &data, 50, 0.05, 2).unwrap();
    let b = train(&m0, &data, 50, 0.05, 2).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, m0);
}

#[test]
fn training_errors() {
    let m0 = ToyModel::init(160, 4, 8, INPUT_LEN, 1);
    assert!(matches!(train(&m0, &[], 10, 0.05, 1), Err(TestbedError::EmptyData)));
    let u = generate_universe(40, 4, 160, 0.1, 3).unwrap();
    let data = render_language(&u, &LanguageSpec::identity("en", NATIVE_SCRIPT, 160)).unwrap();
    assert!(matches!(train(&m0, &data, 10, 0.0, 1), Err(TestbedError::InvalidConfig(_))));
    let r = train(&m0, &data, 50, f64::MAX, 1);
    assert!(matches!(r, Err(TestbedError::Diverged { .. })), "{r:?}");
}

#[test]
fn finetune_delta_definition() {
    let tb = default_bench();
    let forget = tb.forget("en").unwrap();
    let zero = finetune_delta(&tb.base_model, &forget, 0, 0.1, "noop").unwrap();
    assert_eq!(zero.w1.max_abs(), 0.0);
    assert_eq!(zero.w2.max_abs(), 0.0);

    let d = finetune_delta(&tb.base_model, &forget, 20, 0.1, "forget:en").unwrap();
    let tuned = train_with(&tb.base_model, &forget, &TrainConfig::finetune(20, 0.1), 0).unwrap();
    let back = d.apply(&tb.base_model, 1.0).unwrap();
    // a + (b - a) can differ from b in the last bit only
    assert!(back.w1.sub(&tuned.w1).unwrap().max_abs() <= 1e-15 * tuned.w1.max_abs().max(1.0) * 4.0);
    assert!(back.w2.sub(&tuned.w2).unwrap().max_abs() <= 1e-15 * tuned.w2.max_abs().max(1.0) * 4.0);
    assert_eq!(back.embed, tuned.embed);
    assert_eq!(d.provenance.label, "forget:en");
    assert!(d.is_finite());
}

#[test]
fn ten_fact_update_is_low_rank() {
    let tb = default_bench();
    let forget = tb.forget("en").unwrap();
    assert_eq!(forget.len(), 10);
    let d = finetune_delta(&tb.base_model, &forget, 50, 0.1, "forget:en").unwrap();
    let s = svd(&d.w2).unwrap().singular_values;
    let total: f64 = s.iter().map(|x| x * x).sum();
    let top: f64 = s.iter().take(10).map(|x| x * x).sum();
    assert!(top / total >= 0.9, "energy in top 10: {}", top / total);
}

#[test]
fn base_model_knows_every_language() {
    let tb = default_bench();
    for (spec, data) in tb.specs.iter().zip(&tb.data) {
        let acc = tb.base_model.accuracy(data);
        assert!(acc >= 0.95, "{}: {acc}", spec.variant_id());
    }
    // the reference model never saw the forget facts
    let en = tb.forget("en").unwrap();
    assert!(tb.retain_model.accuracy(&en) < 0.5);
}

#[test]
fn bench_layout_and_biases() {
    let tb = default_bench();
    assert_eq!(tb.variant_ids(), ["en", "es", "it", "hi", "zh", "hi_la", "zh_la"]);
    assert!(tb.base_model.b1.iter().chain(&tb.base_model.b2).all(|&b| b == 0.0));
    let hi = &tb.specs[tb.variant_index("hi").unwrap()];
    let hi_la = &tb.specs[tb.variant_index("hi_la").unwrap()];
    assert_eq!(count_shared(hi, hi_la), 256);
}

#[test]
fn replay_round_trip() {
    let cfg = TestbedConfig::default();
    let (u, specs, data) = Testbed::render(&cfg, 4).unwrap();
    let r = Replay::new(u, specs, data);
    let path = std::env::temp_dir().join(format!("testbed-replay-{}.json", std::process::id()));
    write_replay(&path, &r).unwrap();
    let back = read_replay(&path).unwrap();
    std::fs::remove_file(&path).ok();
    assert_eq!(back, r);
}

#[test]
fn render_is_deterministic() {
    let cfg = TestbedConfig::default();
    let a = Testbed::render(&cfg, 4).unwrap();
    let b = Testbed::render(&cfg, 4).unwrap();
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn prop_sibling_overlap_is_exact(v in 8usize..300, overlap in 0.0f64..=1.0, seed in any::<u64>()) {
        let base = LanguageSpec::new("x", NATIVE_SCRIPT, v, seed, &[0]).unwrap();
        match base.sibling("y", overlap, seed.wrapping_add(1)) {
            Ok(s) => {
                prop_assert!(s.is_bijection());
                prop_assert_eq!(count_shared(&base, &s), shared_count(overlap, v));
            }
            Err(_) => prop_assert_eq!(v - shared_count(overlap, v), 1),
        }
    }

    #[test]
    fn prop_partitions_are_valid(n in 20usize..120, frac in 0.01f64..=0.5, seed in any::<u64>()) {
        let r = (n / 10).max(1).min(n / (K_FALSE + 1));
        let u = generate_universe(n, r, 4 * n + 16, frac, seed).unwrap();
        let f: BTreeSet<usize> = u.forget_ids.iter().copied().collect();
        let k: BTreeSet<usize> = u.retain_ids.iter().copied().collect();
        prop_assert!(f.is_disjoint(&k));
        prop_assert_eq!(f.len() + k.len(), n);
        prop_assert_eq!(f.len(), (frac * n as f64 - 1e-9).ceil() as usize);
        prop_assert!(u.control_task_ids.iter().all(|i| k.contains(i)));
        prop_assert!(u.heldout_ids.iter().all(|i| k.contains(i) && !u.control_task_ids.contains(i)));
    }

    #[test]
    fn prop_base_map_is_bijection(v in 4usize..400, seed in any::<u64>()) {
        let s = LanguageSpec::new("x", NATIVE_SCRIPT, v, seed, &[0, 1]).unwrap();
        prop_assert!(s.is_bijection());
        prop_assert_eq!(s.map(0), 0);
        prop_assert_eq!(s.map(1), 1);
    }
}
