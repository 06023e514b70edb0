use linalg_core::{principal_angles, projector, Matrix, OrthonormalBasis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subspace_toolkit::*;
use testbed::{DeltaProvenance, Layer, ToyModel, WeightDelta, INPUT_LEN};

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller, kept local so the oracle owns its sampling
    let u: f64 = rng.random::<f64>().max(1e-300);
    let v: f64 = rng.random();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

fn random_vectors(dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..k).map(|_| (0..dim).map(|_| gauss(rng)).collect()).collect()
}

fn basis(dim: usize, cols: Vec<Vec<f64>>) -> OrthonormalBasis {
    OrthonormalBasis::span_of(dim, cols, 1e-10)
}

fn sub(lang: &str, b: OrthonormalBasis) -> TaskSubspace {
    let r = b.rank();
    TaskSubspace { lang_id: lang.into(), layer: Layer::W2, basis: b, singular_values: vec![1.0; r], total_energy: r as f64 }
}

/// Four languages in R^40 with a common rank-3 part and random rank-5 parts.
fn planted(seed: u64) -> (OrthonormalBasis, Vec<TaskSubspace>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = random_vectors(40, 3, &mut rng);
    let subs = ["en", "es", "it", "hi"]
        .iter()
        .map(|l| {
            let mut cols = s.clone();
            cols.extend(random_vectors(40, 5, &mut rng));
            sub(l, basis(40, cols))
        })
        .collect();
    (basis(40, s), subs)
}

fn delta_w2(d: Matrix, w1_shape: (usize, usize)) -> WeightDelta {
    WeightDelta {
        w1: Matrix::zeros(w1_shape.0, w1_shape.1),
        w2: d,
        provenance: DeltaProvenance { label: "t".into(), steps: 0, lr: 0.0 },
    }
}

fn max_angle_deg(a: &OrthonormalBasis, b: &OrthonormalBasis) -> f64 {
    principal_angles(a, b).unwrap().into_iter().fold(0.0, f64::max).to_degrees()
}

#[test]
fn rank_one_delta_gives_its_output_vector() {
    let u = [1.0, -2.0, 0.5];
    let v = [0.0, 3.0, 4.0, 0.0];
    let d = Matrix::from_fn(3, 4, |i, j| u[i] * v[j]);
    let t = extract_from_matrix("en", Layer::W2, &d, 1).unwrap();
    let b = t.basis.column(0);
    let sign = b[1].signum();
    for (x, y) in b.iter().zip(v) {
        assert!((x * sign - y / 5.0).abs() < 1e-12);
    }
    let unorm = (1.0f64 + 4.0 + 0.25).sqrt();
    assert!((t.singular_values[0] - 5.0 * unorm).abs() < 1e-10);
    assert!((t.captured_energy() - 1.0).abs() < 1e-12);
}

#[test]
fn rank_out_of_range_is_rejected() {
    let d = Matrix::identity(4);
    assert!(matches!(extract_from_matrix("en", Layer::W1, &d, 0), Err(ToolkitError::InvalidRank { .. })));
    assert!(matches!(extract_from_matrix("en", Layer::W1, &d, 5), Err(ToolkitError::InvalidRank { .. })));
}

/// Eigenvalues of DᵀD by power iteration with deflation, independent of the
/// Jacobi SVD under test.
fn power_oracle(d: &Matrix, k: usize) -> Vec<f64> {
    let g = d.t_matmul(d).unwrap();
    let n = g.rows();
    let mut g: Vec<Vec<f64>> = (0..n).map(|i| g.row(i).to_vec()).collect();
    let mut out = Vec::new();
    for t in 0..k {
        let mut x: Vec<f64> = (0..n).map(|i| 1.0 + ((i + t) as f64).sin()).collect();
        let mut lambda = 0.0;
        for _ in 0..5000 {
            let y: Vec<f64> = g.iter().map(|r| r.iter().zip(&x).map(|(a, b)| a * b).sum()).collect();
            let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            let next: Vec<f64> = y.iter().map(|v| v / ny).collect();
            let diff: f64 = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
            x = next;
            lambda = ny;
            if diff < 1e-15 {
                break;
            }
        }
        for i in 0..n {
            for j in 0..n {
                g[i][j] -= lambda * x[i] * x[j];
            }
        }
        out.push(lambda);
    }
    out
}

#[test]
fn captured_energy_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // well-separated spectrum so power iteration converges tightly
    let scales = [10.0, 7.0, 5.0, 3.5, 2.5, 1.0, 0.6, 0.3];
    let left = basis(12, random_vectors(12, 8, &mut rng));
    let right = basis(8, random_vectors(8, 8, &mut rng));
    let d = Matrix::from_fn(12, 8, |i, j| (0..8).map(|k| scales[k] * left.column(k)[i] * right.column(k)[j]).sum());
    let t = extract_from_matrix("en", Layer::W2, &d, 5).unwrap();
    let eig = power_oracle(&d, 5);
    let total = d.frobenius().powi(2);
    let oracle = eig.iter().sum::<f64>() / total;
    assert!((t.captured_energy() - oracle).abs() < 1e-10, "{} vs {}", t.captured_energy(), oracle);
    assert!(t.singular_values.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(t.singular_values.len(), t.rank());
}

#[test]
fn from_basis_orders_by_delta_response() {
    let d = Matrix::from_fn(3, 3, |i, j| if i == j { [1.0, 4.0, 2.0][i] } else { 0.0 });
    let delta = delta_w2(d, (1, 3));
    let t = TaskSubspace::from_basis("en", Layer::W2, &delta, OrthonormalBasis::new(Matrix::identity(3)).unwrap()).unwrap();
    assert_eq!(t.singular_values, vec![4.0, 2.0, 1.0]);
    assert_eq!(t.basis.column(0), vec![0.0, 1.0, 0.0]);
}

#[test]
fn identical_bases_are_all_shared() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let b = basis(20, random_vectors(20, 4, &mut rng));
    let subs = vec![sub("en", b.clone()), sub("es", b.clone()), sub("it", b.clone())];
    let d = compute_interlingua(&subs, 0.9).unwrap();
    assert_eq!(d.shared.rank(), 4);
    assert!(max_angle_deg(&d.shared, &b) < 1e-6);
    assert!(d.residuals.values().all(|r| r.is_empty()));
}

#[test]
fn orthogonal_bases_share_nothing() {
    let e = |k: usize| (0..12).map(|i| if i == k { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
    let subs = vec![sub("en", basis(12, vec![e(0), e(1)])), sub("es", basis(12, vec![e(2), e(3)])), sub("it", basis(12, vec![e(4)]))];
    let d = compute_interlingua(&subs, 0.9).unwrap();
    assert!(d.shared.is_empty());
    for s in &subs {
        let r = &d.residuals[&s.lang_id];
        assert_eq!(r.rank(), s.rank());
        assert!(max_angle_deg(r, &s.basis) < 1e-6);
    }
}

#[test]
fn planted_shared_part_is_recovered() {
    for seed in 0..5 {
        let (s, subs) = planted(seed);
        let d = compute_interlingua(&subs, 0.9).unwrap();
        assert_eq!(d.shared.rank(), 3, "seed {seed}");
        assert!(max_angle_deg(&d.shared, &s) < 2.0);
    }
}

#[test]
fn decomposition_is_orthogonal_and_complete() {
    let (_, subs) = planted(7);
    let d = compute_interlingua(&subs, 0.9).unwrap();
    for s in &subs {
        let r = &d.residuals[&s.lang_id];
        let cross = d.shared.columns().t_matmul(r.columns()).unwrap();
        assert!(cross.max_abs() < 1e-8);
        let recon = projector(&d.shared).add(&projector(r)).unwrap();
        assert!(recon.sub(&projector(&s.basis)).unwrap().frobenius() < 1e-6);
    }
}

#[test]
fn interlingua_argument_errors() {
    let (_, subs) = planted(0);
    assert!(matches!(compute_interlingua(&subs[..1], 0.9), Err(ToolkitError::TooFewSubspaces(1))));
    let mut mixed = subs.clone();
    mixed[1].layer = Layer::W1;
    assert!(matches!(compute_interlingua(&mixed, 0.9), Err(ToolkitError::MixedLayers)));
}

fn model_and_decomp(seed: u64) -> (ToyModel, Vec<InterlinguaDecomposition>) {
    // vocab 40 so the planted bases live in w2's output space
    let m = ToyModel::init(40, 4, 16, INPUT_LEN, seed);
    let (_, subs) = planted(seed);
    (m, vec![compute_interlingua(&subs, 0.9).unwrap()])
}

#[test]
fn remove_shared_annihilates_the_shared_span() {
    let (m, d) = model_and_decomp(2);
    let out = remove_shared(&m, &d).unwrap();
    assert!(out.w2.matmul(d[0].shared.columns()).unwrap().max_abs() < 1e-9);
    assert_eq!(out.w1, m.w1);

    let empty = InterlinguaDecomposition { layer: Layer::W2, shared: OrthonormalBasis::empty(40), residuals: Default::default() };
    assert_eq!(remove_shared(&m, &[empty]).unwrap(), m);
}

#[test]
fn remove_residual_leaves_shared_component_alone() {
    let (m, d) = model_and_decomp(4);
    let out = remove_residual(&m, &d, "es").unwrap();
    let removed = m.w2.sub(&out.w2).unwrap();
    assert!(removed.frobenius() > 1e-3);
    assert!(removed.matmul(d[0].shared.columns()).unwrap().max_abs() < 1e-9);
    assert!(matches!(remove_residual(&m, &d, "xx"), Err(ToolkitError::UnknownLanguage(_))));

    let mut e = d.clone();
    e[0].residuals.insert("es".into(), OrthonormalBasis::empty(40));
    assert_eq!(remove_residual(&m, &e, "es").unwrap(), m);
}

#[test]
fn shared_then_residual_equals_union_removal() {
    let (m, d) = model_and_decomp(5);
    let both = remove_residual(&remove_shared(&m, &d).unwrap(), &d, "it").unwrap();
    let mut cols = d[0].shared.vectors();
    cols.extend(d[0].residuals["it"].vectors());
    let union = InterlinguaDecomposition { layer: Layer::W2, shared: basis(40, cols), residuals: Default::default() };
    let direct = remove_shared(&m, &[union]).unwrap();
    assert!(both.w2.sub(&direct.w2).unwrap().max_abs() < 1e-9);
}

#[test]
fn intervention_rejects_wrong_width() {
    let m = ToyModel::init(30, 4, 16, INPUT_LEN, 0);
    let (_, d) = model_and_decomp(0);
    assert!(matches!(remove_shared(&m, &d), Err(ToolkitError::DimensionMismatch(_))));
}

#[test]
fn point_cloud_counts_and_labels() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let subs: Vec<TaskSubspace> = ["en", "es", "zh"].iter().map(|l| sub(l, basis(30, random_vectors(30, 10, &mut rng)))).collect();
    let pts = basis_point_cloud(&subs).unwrap();
    assert_eq!(pts.len(), 30);
    for p in &pts {
        assert!((linalg_core::norm(&p.vector) - 1.0).abs() < 1e-12);
    }
    for l in ["en", "es", "zh"] {
        let ranks: Vec<usize> = pts.iter().filter(|p| p.lang_id == l).map(|p| p.sv_rank).collect();
        assert_eq!(ranks, (1..=10).collect::<Vec<_>>());
    }
    assert!(basis_point_cloud(&[]).is_err());
}

fn two_clusters(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for c in 0..2 {
        for _ in 0..20 {
            let mut v: Vec<f64> = (0..10).map(|_| gauss(&mut rng)).collect();
            v[0] += 10.0 * c as f64;
            pts.push(v);
            labels.push(c);
        }
    }
    (pts, labels)
}

#[test]
fn tsne_separates_two_clusters_on_every_seed() {
    for seed in 0..10 {
        let (pts, labels) = two_clusters(100 + seed);
        let y = tsne_embed(&pts, &TsneConfig { seed, ..TsneConfig::default() }).unwrap();
        let yv: Vec<Vec<f64>> = y.iter().map(|p| p.to_vec()).collect();
        let s = silhouette(&yv, &labels);
        assert!(s > 0.8, "seed {seed}: silhouette {s}");
        // nearest neighbour in the embedding belongs to the same cluster
        for i in 0..yv.len() {
            let nn = (0..yv.len())
                .filter(|&j| j != i)
                .min_by(|&a, &b| {
                    let da = (yv[a][0] - yv[i][0]).hypot(yv[a][1] - yv[i][1]);
                    let db = (yv[b][0] - yv[i][0]).hypot(yv[b][1] - yv[i][1]);
                    da.total_cmp(&db)
                })
                .unwrap();
            assert_eq!(labels[nn], labels[i]);
        }
    }
}

#[test]
fn tsne_is_deterministic_and_validates() {
    let (pts, _) = two_clusters(0);
    let cfg = TsneConfig { iters: 100, ..TsneConfig::default() };
    assert_eq!(tsne_embed(&pts, &cfg).unwrap(), tsne_embed(&pts, &cfg).unwrap());
    assert!(matches!(tsne_embed(&pts[..4], &cfg), Err(ToolkitError::PointCount { .. })));
    let bad = TsneConfig { perplexity: 14.0, ..cfg };
    assert!(matches!(tsne_embed(&pts, &bad), Err(ToolkitError::PerplexityInfeasible { .. })));
}

#[test]
fn silhouette_reference_values() {
    // two pairs at distance 1, clusters 10 apart: a = 1, b = mean(10, 11) or (9, 10)
    let c = vec![vec![0.0], vec![1.0], vec![10.0], vec![11.0]];
    let s = silhouette(&c, &[0, 0, 1, 1]);
    let want = ((10.5 - 1.0) / 10.5 + (9.5 - 1.0) / 9.5) / 2.0;
    assert!((s - want).abs() < 1e-12);
    assert_eq!(silhouette(&c, &[0, 0, 0, 0]), 0.0);
}

#[test]
fn overlap_report_extremes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let b = basis(16, random_vectors(16, 3, &mut rng));
    let same = overlap_report(&[sub("a", b.clone()), sub("b", b.clone()), sub("c", b)]).unwrap();
    assert!(same.as_slice().iter().all(|v| (v - 1.0).abs() < 1e-8));

    let e = |k: usize| (0..16).map(|i| if i == k { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
    let orth = overlap_report(&[sub("a", basis(16, vec![e(0), e(1)])), sub("b", basis(16, vec![e(2), e(3)])), sub("c", basis(16, vec![e(4)]))]).unwrap();
    assert!(orth.sub(&Matrix::identity(3)).unwrap().max_abs() < 1e-8);
    assert!(overlap_report(&[sub("a", basis(16, vec![e(0)]))]).is_err());
}

#[test]
fn overlap_report_planted_bound() {
    for seed in 0..5 {
        let (_, subs) = planted(seed);
        let r = overlap_report(&subs).unwrap();
        for i in 0..4 {
            assert!((r.get(i, i) - 1.0).abs() < 1e-8);
            for j in 0..4 {
                assert!(r.get(i, j) >= 3.0 / 8.0 - 0.05);
                assert!((r.get(i, j) - r.get(j, i)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn csv_layout() {
    let (_, subs) = planted(1);
    let pts = basis_point_cloud(&subs[..1]).unwrap();
    let coords: Vec<[f64; 2]> = (0..pts.len()).map(|i| [i as f64, -0.0]).collect();
    let csv = tsne_csv(&pts, &coords).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "x,y,lang_id,sv_rank,layer");
    assert_eq!(lines[1], "0.0000000000,0.0000000000,en,1,w2");
    assert_eq!(lines.len(), pts.len() + 1);
    assert!(tsne_csv(&pts, &coords[1..]).is_err());
}

#[test]
fn shared_points_are_more_aligned_than_residual_points() {
    let (_, subs) = planted(3);
    let d = compute_interlingua(&subs, 0.9).unwrap();
    // clouds built from the decomposition itself: shared directions first
    let langs: Vec<TaskSubspace> = subs
        .iter()
        .map(|s| {
            let mut cols = d.shared.vectors();
            cols.extend(d.residuals[&s.lang_id].vectors());
            sub(&s.lang_id, basis(40, cols))
        })
        .collect();
    let pts = basis_point_cloud(&langs).unwrap();
    let (sh, res) = cloud_cosines(&pts, &d.shared);
    assert!(sh > 0.9 && res < 0.5, "{sh} {res}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn overlap_report_is_permutation_equivariant(seed in 0u64..1000, rot in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let subs: Vec<TaskSubspace> = (0..4).map(|k| sub(&format!("l{k}"), basis(12, random_vectors(12, 1 + k % 3, &mut rng)))).collect();
        let perm: Vec<usize> = (0..4).map(|i| (i + rot) % 4).collect();
        let permuted: Vec<TaskSubspace> = perm.iter().map(|&i| subs[i].clone()).collect();
        let a = overlap_report(&subs).unwrap();
        let b = overlap_report(&permuted).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                prop_assert!((b.get(i, j) - a.get(perm[i], perm[j])).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&a.get(i, j)));
            }
        }
    }

    #[test]
    fn residuals_stay_orthogonal_to_shared(seed in 0u64..1000) {
        let (_, subs) = planted(seed);
        let d = compute_interlingua(&subs, 0.9).unwrap();
        for r in d.residuals.values() {
            if !r.is_empty() && !d.shared.is_empty() {
                prop_assert!(d.shared.columns().t_matmul(r.columns()).unwrap().max_abs() < 1e-8);
            }
        }
    }
}
