use metrics::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use testbed::*;

fn example(fact_id: usize, input: [u32; 3], target: u32, false_targets: [u32; 4]) -> FactExample {
    FactExample {
        fact_id,
        lang_id: "en".into(),
        script_id: NATIVE_SCRIPT.into(),
        input_tokens: input,
        target_token: target,
        false_targets,
    }
}

fn toy_data(seed: u64) -> (FactUniverse, Vec<FactExample>) {
    let u = generate_universe(60, 6, 256, 0.1, seed).unwrap();
    let d = render_language(&u, &LanguageSpec::new("en", NATIVE_SCRIPT, 256, seed + 1, &[0]).unwrap()).unwrap();
    (u, d)
}

fn random_model(seed: u64) -> ToyModel {
    ToyModel::init(256, 6, 12, INPUT_LEN, seed)
}

// ---- truth ratio ----

#[test]
fn uniform_model_truth_ratio_is_one() {
    let m = ToyModel::zeros(16, 3, 4, INPUT_LEN);
    let r = truth_ratio(&m, &example(0, [1, 2, 3], 5, [6, 7, 8, 9]));
    assert!((r - 1.0).abs() < 1e-15);
}

#[test]
fn confident_model_truth_ratio_is_small() {
    // five-token vocabulary, p(true) = 0.99 and 0.0025 on each false target
    let mut m = ToyModel::zeros(5, 2, 2, INPUT_LEN);
    m.b2[0] = (0.99f64 / 0.0025).ln();
    let r = truth_ratio(&m, &example(0, [1, 2, 3], 0, [1, 2, 3, 4]));
    assert!((r - 0.0025 / 0.99).abs() < 1e-12);
    assert!(r < 0.01);
}

#[test]
fn truth_ratio_matches_probability_vector() {
    let (_, data) = toy_data(3);
    let m = random_model(4);
    let batched = truth_ratios(&m, &data);
    for (e, b) in data.iter().zip(&batched) {
        let p = m.forward(&e.input_tokens);
        let geo = e.false_targets.iter().map(|&t| p[t as usize]).product::<f64>().powf(0.25);
        let want = geo / p[e.target_token as usize];
        assert!((b - want).abs() <= 1e-12 * want.max(1.0), "{b} vs {want}");
    }
}

// ---- KS ----

fn ecdf(s: &[f64], t: f64) -> f64 {
    s.iter().filter(|&&v| v <= t).count() as f64 / s.len() as f64
}

fn brute_d(xs: &[f64], ys: &[f64]) -> f64 {
    xs.iter().chain(ys).map(|&t| (ecdf(xs, t) - ecdf(ys, t)).abs()).fold(0.0, f64::max)
}

/// every n-subset of the pooled sample by recursion, statistic by brute force
fn brute_exact_p(xs: &[f64], ys: &[f64]) -> f64 {
    let pooled: Vec<f64> = xs.iter().chain(ys).copied().collect();
    let obs = brute_d(xs, ys);
    let n = xs.len();
    let mut hits = 0u64;
    let mut total = 0u64;
    fn rec(pooled: &[f64], n: usize, start: usize, pick: &mut Vec<usize>, obs: f64, hits: &mut u64, total: &mut u64) {
        if pick.len() == n {
            let a: Vec<f64> = pick.iter().map(|&i| pooled[i]).collect();
            let b: Vec<f64> = (0..pooled.len()).filter(|i| !pick.contains(i)).map(|i| pooled[i]).collect();
            *total += 1;
            if brute_d(&a, &b) >= obs - 1e-12 {
                *hits += 1;
            }
            return;
        }
        for i in start..pooled.len() {
            pick.push(i);
            rec(pooled, n, i + 1, pick, obs, hits, total);
            pick.pop();
        }
    }
    rec(&pooled, n, 0, &mut Vec::new(), obs, &mut hits, &mut total);
    hits as f64 / total as f64
}

#[test]
fn identical_samples() {
    let xs = [0.3, 0.1, 0.7, 0.2, 0.9, 0.4];
    let r = ks_two_sample(&xs, &xs).unwrap();
    assert_eq!(r.statistic, 0.0);
    assert_eq!(r.p_value, 1.0);
}

#[test]
fn disjoint_samples() {
    let xs: Vec<f64> = (1..=10).map(f64::from).collect();
    let ys: Vec<f64> = (11..=20).map(f64::from).collect();
    let r = ks_two_sample(&xs, &ys).unwrap();
    assert_eq!(r.statistic, 1.0);
    assert!(r.p_value < 0.01);
}

#[test]
fn too_small_samples() {
    assert!(matches!(ks_two_sample(&[1.0; 4], &[1.0; 9]), Err(MetricsError::SampleTooSmall { n: 4, min: 5 })));
    assert!(matches!(ks_exact_p(&[1.0; 11], &[1.0; 5]), Err(MetricsError::ExactTooLarge { .. })));
}

#[test]
fn asymptotic_p_matches_series() {
    // n = m = 10, D = 0.5: λ = √5/2, Q = 2 Σ (−1)^{k−1} e^{−2k²λ²}
    let lam: f64 = 5f64.sqrt() * 0.5;
    let q: f64 = 2.0 * (1..50).map(|k| (-1f64).powi(k - 1) * (-2.0 * (k * k) as f64 * lam * lam).exp()).sum::<f64>();
    let xs: Vec<f64> = (0..10).map(f64::from).collect();
    let ys: Vec<f64> = (5..15).map(f64::from).collect();
    let r = ks_two_sample(&xs, &ys).unwrap();
    assert_eq!(r.statistic, 0.5);
    assert!((r.p_value - q).abs() < 1e-12);
    assert!((r.p_value - 0.164_08).abs() < 1e-5);
}

#[test]
fn kolmogorov_forms_agree_where_both_converge() {
    for i in 0..40 {
        let lam = 0.5 + i as f64 * 0.025;
        let alt: f64 = 2.0 * (1..400).map(|k| (-1f64).powi(k - 1) * (-2.0 * (k * k) as f64 * lam * lam).exp()).sum::<f64>();
        assert!((kolmogorov_sf(lam) - alt).abs() < 1e-10, "λ={lam}");
    }
    assert_eq!(kolmogorov_sf(0.0), 1.0);
    assert!(kolmogorov_sf(0.05) > 0.999_999);
}

#[test]
fn exact_p_matches_enumeration_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (n, m) in [(5, 5), (5, 7), (6, 6), (7, 5)] {
        for _ in 0..3 {
            // coarse values so ties occur
            let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
            let ys: Vec<f64> = (0..m).map(|_| rng.random_range(1..8) as f64).collect();
            let p = ks_exact_p(&xs, &ys).unwrap();
            assert!((p - brute_exact_p(&xs, &ys)).abs() < 1e-15);
            let r = ks_two_sample_with(&xs, &ys, PValueMethod::Exact).unwrap();
            assert_eq!(r.p_value, p);
        }
    }
}

/// The asymptotic formula is not accurate at n ≤ 8 per side. This records the
/// largest gap to the exact permutation p over every attainable statistic.
#[test]
fn small_sample_exactness_gap() {
    let mut worst: f64 = 0.0;
    for n in 5..=8usize {
        for shift in 0..=n {
            let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let ys: Vec<f64> = (0..n).map(|i| (i + shift) as f64 + 0.5).collect();
            let a = ks_two_sample(&xs, &ys).unwrap().p_value;
            let e = ks_exact_p(&xs, &ys).unwrap();
            worst = worst.max((a - e).abs());
        }
    }
    eprintln!("largest asymptotic-vs-exact gap at n ≤ 8: {worst:.4}");
    assert!(worst > 0.02 && worst < 0.2, "gap {worst}");
}

#[test]
fn statistic_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let n = rng.random_range(5..30);
        let m = rng.random_range(5..30);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0..10) as f64 * 0.1).collect();
        let ys: Vec<f64> = (0..m).map(|_| rng.random_range(0..12) as f64 * 0.1).collect();
        assert!((ks_statistic(&xs, &ys) - brute_d(&xs, &ys)).abs() < 1e-15);
    }
}

// ---- forget quality ----

#[test]
fn same_model_has_forget_quality_one() {
    let (u, data) = toy_data(2);
    let forget = subset(&data, &u.forget_ids);
    let m = random_model(9);
    assert_eq!(forget_quality(&m, &m, &forget).unwrap(), 1.0);
}

#[test]
fn threshold_semantics() {
    assert!(significant_forgetting(0.257));
    assert!(!significant_forgetting(0.0841));
    assert!(!significant_forgetting(ALPHA));
}

// ---- capability and utility ----

fn splits(u: &FactUniverse, data: &[FactExample]) -> CapabilitySplits {
    CapabilitySplits {
        retain: subset(data, &u.retain_train_ids()),
        heldout: subset(data, &u.heldout_ids),
        control: subset(data, &u.control_task_ids),
    }
}

#[test]
fn trained_model_scores_near_one() {
    let (u, data) = toy_data(6);
    let m = train(&ToyModel::init(256, 16, 64, INPUT_LEN, 1), &data, 1500, 0.05, 2).unwrap();
    let c = capability_metrics(&m, &splits(&u, &data)).unwrap();
    assert_eq!([c.retain_acc, c.heldout_acc, c.control_acc], [1.0; 3]);
    for v in c.values() {
        assert!(v > 0.9 && v <= 1.0, "{v}");
    }
}

#[test]
fn uniform_model_capability() {
    let (u, data) = toy_data(6);
    let m = ToyModel::zeros(256, 4, 4, INPUT_LEN);
    let c = capability_metrics(&m, &splits(&u, &data)).unwrap();
    for v in [c.retain_prob, c.heldout_prob, c.control_prob] {
        assert!((v - 1.0 / 256.0).abs() < 1e-15);
    }
    for v in [c.retain_acc, c.heldout_acc, c.control_acc] {
        assert!(v <= 1.0 / 256.0 + 1e-12);
    }
    for v in [c.retain_truth, c.heldout_truth, c.control_truth] {
        assert!((v - 0.5).abs() < 1e-15);
    }
}

#[test]
fn capability_matches_per_example_loop() {
    let (u, data) = toy_data(7);
    let m = random_model(3);
    let s = splits(&u, &data);
    let c = capability_metrics(&m, &s).unwrap().values();
    for (k, ex) in [&s.retain, &s.heldout, &s.control].iter().enumerate() {
        let (mut p, mut a, mut t) = (0.0, 0.0, 0.0);
        for e in ex.iter() {
            let pv = m.forward(&e.input_tokens);
            let py = pv[e.target_token as usize];
            p += py;
            let best = pv.iter().enumerate().fold(0, |b, (i, &x)| if x > pv[b] { i } else { b });
            a += (best == e.target_token as usize) as u8 as f64;
            let g = e.false_targets.iter().map(|&f| pv[f as usize]).product::<f64>().powf(0.25);
            t += 1.0 / (1.0 + g / py);
        }
        let n = ex.len() as f64;
        for (got, want) in c[3 * k..3 * k + 3].iter().zip([p / n, a / n, t / n]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }
}

#[test]
fn empty_split_is_an_error() {
    let (u, data) = toy_data(7);
    let mut s = splits(&u, &data);
    s.control.clear();
    assert!(matches!(capability_metrics(&random_model(1), &s), Err(MetricsError::EmptySplit(_))));
}

#[test]
fn utility_examples() {
    assert_eq!(model_utility(&[1.0; 9]), 1.0);
    assert!((model_utility(&[0.5; 9]) - 0.5).abs() < 1e-15);
    let mut v = [0.8; 9];
    v[4] = 0.0;
    assert_eq!(model_utility(&v), 0.0);
}

#[test]
fn normalized_utility_examples() {
    assert_eq!(normalized_utility(0.6, 0.6).unwrap(), 1.0);
    assert!((normalized_utility(0.6047, 0.6227).unwrap() - 0.971).abs() < 5e-4);
    assert_eq!(normalized_utility(0.0, 0.5).unwrap(), 0.0);
    assert!(matches!(normalized_utility(0.3, 0.0), Err(MetricsError::ZeroBaseUtility)));
}

#[test]
fn metrics_ignore_example_order() {
    let (u, data) = toy_data(8);
    let m = random_model(2);
    let r = random_model(5);
    let s = splits(&u, &data);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut s2 = s.clone();
    s2.retain.shuffle(&mut rng);
    s2.heldout.shuffle(&mut rng);
    s2.control.shuffle(&mut rng);
    let a = capability_metrics(&m, &s).unwrap().values();
    let b = capability_metrics(&m, &s2).unwrap().values();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
    let mut f = subset(&data, &u.retain_ids);
    let p1 = forget_quality(&m, &r, &f).unwrap();
    f.shuffle(&mut rng);
    assert_eq!(p1, forget_quality(&m, &r, &f).unwrap());
}

#[test]
fn report_round_trips_and_rows_align() {
    let (u, data) = toy_data(9);
    let m = random_model(2);
    let s = splits(&u, &data);
    let forget = subset(&data, &u.retain_ids[..12]);
    let mut rep = EvalReport::evaluate(&m, &random_model(3), &forget, &s, 0.5, PValueMethod::Asymptotic).unwrap();
    let le = LanguageEval { lang: "en".into(), forget: forget.clone(), splits: s.clone(), base_utility: 0.5 };
    rep.per_language.insert("en".into(), score_language(&m, &random_model(3), &le, PValueMethod::Asymptotic).unwrap());
    assert_eq!(rep.per_language["en"].utility, rep.utility);
    assert_eq!(EvalReport::from_json(&rep.to_json()).unwrap(), rep);
    assert_eq!(EvalReport::csv_header().len(), rep.csv_row().len());
    assert_eq!(fmt_real(-0.0), "0.0000000000");
    assert_eq!(fmt_real(0.25), "0.2500000000");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prop_ks_symmetric_and_bounded(xs in prop::collection::vec(-5.0f64..5.0, 5..40),
                                     ys in prop::collection::vec(-5.0f64..5.0, 5..40)) {
        let a = ks_two_sample(&xs, &ys).unwrap();
        let b = ks_two_sample(&ys, &xs).unwrap();
        prop_assert_eq!(a.statistic, b.statistic);
        prop_assert_eq!(a.p_value, b.p_value);
        prop_assert!((0.0..=1.0).contains(&a.statistic));
        prop_assert!((0.0..=1.0).contains(&a.p_value));
    }

    #[test]
    fn prop_ks_invariant_under_monotone_map(xs in prop::collection::vec(-3.0f64..3.0, 5..30),
                                            ys in prop::collection::vec(-3.0f64..3.0, 5..30)) {
        let f = |v: &f64| v.exp() * 2.0 + 1.0;
        let tx: Vec<f64> = xs.iter().map(f).collect();
        let ty: Vec<f64> = ys.iter().map(f).collect();
        prop_assert_eq!(ks_statistic(&xs, &ys), ks_statistic(&tx, &ty));
    }

    #[test]
    fn prop_harmonic_mean_bounds(v in prop::collection::vec(0.01f64..1.0, 9)) {
        let hm = model_utility(&v);
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(0.0, f64::max);
        let am = v.iter().sum::<f64>() / 9.0;
        prop_assert!(lo - 1e-12 <= hm && hm <= hi + 1e-12);
        prop_assert!(hm <= am + 1e-12);
        if hi - lo > 1e-6 {
            prop_assert!(hm < am);
        }
    }
}
