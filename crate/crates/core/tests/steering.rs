use proptest::prelude::*;
use steerlab_core::corpus::{build_vocab, make_contrastive_sets, Attribute, Grammar, PromptSet};
use steerlab_core::error::Error;
use steerlab_core::model::*;
use steerlab_core::rng::RngState;
use steerlab_core::steering::*;
use steerlab_core::steering::Strategy;

fn model() -> Model {
    let v = build_vocab(1).unwrap();
    let cfg = ModelConfig {
        num_layers: 4,
        d_model: 16,
        num_heads: 4,
        ffn_dim: 32,
        vocab_size: v.len(),
        max_seq: 160,
        prompt_dropout: 0.2,
    };
    Model::init(cfg, v, &mut RngState::new(17)).unwrap()
}

fn sets(n: usize) -> (PromptSet, PromptSet) {
    let g = Grammar::load(1).unwrap();
    let v = build_vocab(1).unwrap();
    make_contrastive_sets(&g, &v, Attribute::Tempo, n, 3).unwrap()
}

fn hand_cache(name: &str, rows: &[[f32; 2]]) -> ActivationCache<f32> {
    ActivationCache {
        set_name: name.into(),
        checkpoint_hash: "h".into(),
        num_layers: 1,
        d_model: 2,
        vectors: rows.iter().map(|r| vec![r.to_vec()]).collect(),
    }
}

#[test]
fn cache_shape_and_sep_row() {
    let m = model();
    let (a, _) = sets(5);
    let cache = capture_eos_activations(&m, "abc", &a).unwrap();
    assert_eq!(cache.len(), 5);
    assert!(cache.vectors.iter().all(|p| p.len() == 4 && p.iter().all(|v| v.len() == 16)));
    let (_, caps) = m.forward_full(&a.prompts[2], &HookSet::capture_all(4)).unwrap();
    for l in 1..=4 {
        assert_eq!(cache.vectors[2][l - 1], caps[&l].row(5));
    }
}

#[test]
fn duplicate_prompts_give_identical_vectors() {
    let m = model();
    let (a, _) = sets(1);
    let dup = PromptSet {
        prompts: vec![a.prompts[0].clone(), a.prompts[0].clone()],
        ..a
    };
    let c = capture_eos_activations(&m, "x", &dup).unwrap();
    assert_eq!(c.vectors[0], c.vectors[1]);
}

#[test]
fn prompt_without_sep_is_rejected() {
    let m = model();
    let (mut a, _) = sets(2);
    a.prompts[1].pop();
    assert!(matches!(capture_eos_activations(&m, "x", &a), Err(Error::MissingSep)));
}

#[test]
fn diff_means_hand_oracle() {
    let a = hand_cache("A", &[[1.0, 2.0], [3.0, 4.0], [5.0, 9.0]]);
    let b = hand_cache("B", &[[0.0, 1.0], [2.0, -1.0]]);
    let s = compute_diff_means(&a, &b, "tempo", 0).unwrap();
    assert_eq!(s.mu_a[0], vec![3.0, 5.0]);
    assert_eq!(s.mu_b[0], vec![1.0, 0.0]);
    assert_eq!(s.delta[0], vec![2.0, 5.0]);
    assert_eq!((s.n_a, s.n_b), (3, 2));
}

#[test]
fn identical_sets_cancel_and_swap_negates() {
    let m = model();
    let (a, b) = sets(6);
    let ca = capture_eos_activations(&m, "h", &a).unwrap();
    let cb = capture_eos_activations(&m, "h", &b).unwrap();
    let same = compute_diff_means(&ca, &ca, "t", 0).unwrap();
    assert!(same.delta.iter().flatten().all(|&x| x == 0.0));
    let ab = compute_diff_means(&ca, &cb, "t", 0).unwrap();
    let ba = compute_diff_means(&cb, &ca, "t", 0).unwrap();
    for (x, y) in ab.delta.iter().flatten().zip(ba.delta.iter().flatten()) {
        assert_eq!(*x, -*y);
    }
    for l in 0..4 {
        for j in 0..16 {
            assert_eq!(ab.delta[l][j], ab.mu_a[l][j] - ab.mu_b[l][j]);
        }
    }
}

#[test]
fn diff_means_errors() {
    let a = hand_cache("A", &[[1.0, 2.0]]);
    let mut b = hand_cache("B", &[[0.0, 1.0]]);
    let empty = hand_cache("E", &[]);
    assert!(compute_diff_means(&a, &empty, "t", 0).is_err());
    b.checkpoint_hash = "other".into();
    assert!(matches!(compute_diff_means(&a, &b, "t", 0), Err(Error::HashMismatch { .. })));
}

proptest! {
    #[test]
    fn duplication_invariance(rows in prop::collection::vec((-10.0f32..10.0, -10.0f32..10.0), 1..12)) {
        let ra: Vec<[f32; 2]> = rows.iter().map(|&(x, y)| [x, y]).collect();
        let mut dup = ra.clone();
        dup.extend_from_slice(&ra);
        let b = hand_cache("B", &[[0.5, -0.5]]);
        let s1 = compute_diff_means(&hand_cache("A", &ra), &b, "t", 0).unwrap();
        let s2 = compute_diff_means(&hand_cache("A", &dup), &b, "t", 0).unwrap();
        for (x, y) in s1.delta[0].iter().zip(&s2.delta[0]) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn cosine_matrix_symmetric_unit_diagonal(seed in 0u64..500) {
        let mut rng = RngState::new(seed);
        let delta: Vec<Vec<f32>> = (0..5).map(|_| (0..6).map(|_| rng.normal() as f32).collect()).collect();
        let set = SteeringVectorSet {
            attribute: "t".into(), set_a: "A".into(), set_b: "B".into(), n_a: 1, n_b: 1,
            checkpoint_hash: "h".into(), seed: 0, num_layers: 5, d_model: 6,
            mu_a: delta.clone(), mu_b: vec![vec![0.0; 6]; 5], delta,
        };
        let m = cosine_similarity_matrix(&set).unwrap();
        for i in 0..5 {
            prop_assert!((m[i][i] - 1.0).abs() <= 1e-6);
            for j in 0..5 {
                prop_assert_eq!(m[i][j], m[j][i]);
            }
        }
    }
}

fn set_from(delta: Vec<Vec<f32>>) -> SteeringVectorSet {
    let l = delta.len();
    let d = delta[0].len();
    SteeringVectorSet {
        attribute: "tempo".into(),
        set_a: "S_Fast".into(),
        set_b: "S_Slow".into(),
        n_a: 1,
        n_b: 1,
        checkpoint_hash: "h".into(),
        seed: 0,
        num_layers: l,
        d_model: d,
        mu_a: delta.clone(),
        mu_b: vec![vec![0.0; d]; l],
        delta,
    }
}

#[test]
fn cosine_antiparallel_and_zero() {
    let s = set_from(vec![vec![1.0, 2.0], vec![-1.0, -2.0], vec![2.0, -1.0]]);
    let m = cosine_similarity_matrix(&s).unwrap();
    assert!((m[0][1] + 1.0).abs() < 1e-12);
    assert!(m[0][2].abs() < 1e-12);
    let z = set_from(vec![vec![1.0, 2.0], vec![0.0, 0.0]]);
    assert!(matches!(cosine_similarity_matrix(&z), Err(Error::ZeroVector(2))));
}

fn vector_set(m: &Model) -> SteeringVectorSet {
    let (a, b) = sets(4);
    let ca = capture_eos_activations(m, "h", &a).unwrap();
    let cb = capture_eos_activations(m, "h", &b).unwrap();
    compute_diff_means(&ca, &cb, "tempo", 0).unwrap()
}

#[test]
fn one_to_all_copies_the_best_layer() {
    let m = model();
    let s = vector_set(&m);
    let cfg = SteerConfig {
        lambda: 1.0,
        strategy: Strategy::OneToAll(3),
        branches: Branches::Both,
    };
    let hooks = build_hookset(&cfg, &s).unwrap();
    let inj = hooks.inject.as_ref().unwrap();
    let site = Site {
        branch: Branch::Cond,
        position: PositionKind::Music,
    };
    for l in 1..=4 {
        assert_eq!(inj.vector(l, site).unwrap(), s.delta(3).unwrap());
    }
    let bad = SteerConfig {
        strategy: Strategy::OneToAll(5),
        ..cfg
    };
    assert!(build_hookset(&bad, &s).is_err());
}

#[test]
fn branch_filter_is_honoured() {
    let m = model();
    let s = vector_set(&m);
    let cfg = SteerConfig {
        lambda: 1.0,
        strategy: Strategy::AllToAll,
        branches: Branches::Cond,
    };
    let hooks = build_hookset(&cfg, &s).unwrap();
    let inj = hooks.inject.as_ref().unwrap();
    let pos = PositionKind::Sep;
    assert!(inj.vector(1, Site { branch: Branch::Cond, position: pos }).is_some());
    assert!(inj.vector(1, Site { branch: Branch::Uncond, position: pos }).is_none());
}

#[test]
fn all_to_all_capture_and_subtract() {
    let m = model();
    let s = vector_set(&m);
    let (a, _) = sets(1);
    let prompt = &a.prompts[0];
    let (_, base) = m.forward_full(prompt, &HookSet::capture_all(4)).unwrap();
    let cfg = SteerConfig {
        lambda: 2.0,
        strategy: Strategy::AllToAll,
        branches: Branches::Both,
    };
    // Layers 1 and 2 are steered too, so the reference run injects there
    // and stops short of layer 3.
    let mut all = build_hookset(&cfg, &s).unwrap();
    all.capture.insert(3);
    let (_, steered) = m.forward_full(prompt, &all).unwrap();
    let mut partial = LayerInjector::new(4, Branches::Both);
    for l in 1..=2 {
        partial.set(l, s.delta(l).unwrap().iter().map(|x| 2.0 * x).collect()).unwrap();
    }
    let hooks = HookSet::new().with_capture([3]).with_injector(std::sync::Arc::new(partial));
    let (_, upstream) = m.forward_full(prompt, &hooks).unwrap();
    let d3 = s.delta(3).unwrap();
    for r in 0..6 {
        for j in 0..16 {
            let diff = steered[&3].row(r)[j] - upstream[&3].row(r)[j];
            assert!((diff - 2.0 * d3[j]).abs() <= 1e-5);
        }
    }
    assert!(base[&3].data() != steered[&3].data());
}

#[test]
fn zero_lambda_generation_matches_baseline() {
    let m = model();
    let s = vector_set(&m);
    let (a, _) = sets(2);
    let gen = GenerationConfig {
        seed: 11,
        ..GenerationConfig::default()
    };
    let base = generate(&m, &a.prompts[1], &gen, &HookSet::new()).unwrap();
    for strategy in [Strategy::AllToAll, Strategy::OneToAll(2)] {
        let cfg = SteerConfig {
            lambda: 0.0,
            strategy,
            branches: Branches::Both,
        };
        let hooks = build_hookset(&cfg, &s).unwrap();
        assert_eq!(generate(&m, &a.prompts[1], &gen, &hooks).unwrap(), base);
    }
}

#[test]
fn steering_file_round_trip() {
    let m = model();
    let s = vector_set(&m);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("v.json");
    save_steering(&s, &p).unwrap();
    let back: SteeringVectorSet = load_steering(&p, Some("h")).unwrap();
    assert_eq!(back, s);
    let bits = |x: &SteeringVectorSet| x.delta.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&s));
    assert!(matches!(
        load_steering::<f32>(&p, Some("different")),
        Err(Error::HashMismatch { .. })
    ));
    let text = std::fs::read(&p).unwrap();
    std::fs::write(&p, &text[..text.len() / 2]).unwrap();
    assert!(matches!(load_steering::<f32>(&p, None), Err(Error::Format(_))));
}

#[test]
fn pca_components_orthonormal_and_variance_identity() {
    let mut rng = RngState::new(5);
    let rows: Vec<Vec<f64>> = (0..50)
        .map(|_| {
            let z: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            (0..6).map(|j| z[j] * (j as f64 + 1.0) + 0.3 * z[0]).collect()
        })
        .collect();
    let p = pca_rows(&rows, vec!["x".into(); 50], 1, 2).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            let d: f64 = p.components[i].iter().zip(&p.components[j]).map(|(a, b)| a * b).sum();
            assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-6);
        }
    }
    let var: f64 = (0..2)
        .map(|c| {
            let m = p.points.iter().map(|q| q[c]).sum::<f64>() / 50.0;
            p.points.iter().map(|q| (q[c] - m).powi(2)).sum::<f64>() / 49.0
        })
        .sum();
    assert!((var - (p.eigenvalues[0] + p.eigenvalues[1])).abs() < 1e-5);
}

#[test]
fn pca_of_a_line() {
    let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
    let p = pca_rows(&rows, vec!["x".into(); 8], 1, 2).unwrap();
    assert!(p.eigenvalues[1].abs() < 1e-9 * p.eigenvalues[0]);
    assert!(pca_rows(&rows[..3], vec!["x".into(); 3], 1, 3).is_err());
    assert!(pca_rows(&rows[..2], vec!["x".into(); 2], 1, 1).is_err());
}

#[test]
fn pca_of_caches_labels_points() {
    let m = model();
    let (a, b) = sets(5);
    let ca = capture_eos_activations(&m, "h", &a).unwrap();
    let cb = capture_eos_activations(&m, "h", &b).unwrap();
    let p = pca_project(&ca, &cb, 2, 2).unwrap();
    assert_eq!(p.points.len(), 10);
    let groups = split_points(&p);
    assert_eq!(groups.len(), 2);
    assert_eq!(groups[0].0, "S_Fast");
}

#[test]
fn kde_single_cluster_peaks_at_centre() {
    let mut rng = RngState::new(3);
    let pts: Vec<[f64; 2]> = (0..100).map(|_| [0.1 * rng.normal(), 0.1 * rng.normal()]).collect();
    let mut sym = pts.clone();
    sym.extend(pts.iter().map(|p| [-p[0], -p[1]]));
    let g = kde_2d(&sym, [[-1.0, 1.0], [-1.0, 1.0]], 65).unwrap();
    assert_eq!(g.argmax(), (32, 32));
    assert!(g.values.iter().flatten().all(|&v| v >= 0.0));
}

#[test]
fn kde_two_clusters_two_maxima() {
    let mut rng = RngState::new(4);
    let mut pts: Vec<[f64; 2]> = (0..50).map(|_| [-3.0 + 0.2 * rng.normal(), 0.2 * rng.normal()]).collect();
    pts.extend((0..50).map(|_| [3.0 + 0.2 * rng.normal(), 0.2 * rng.normal()]));
    let g = kde_2d(&pts, [[-5.0, 5.0], [-2.0, 2.0]], 64).unwrap();
    let mut maxima = 0;
    for iy in 1..63 {
        for ix in 1..63 {
            let v = g.values[iy][ix];
            let neighbours = [(0, 1), (2, 1), (1, 0), (1, 2), (0, 0), (2, 2), (0, 2), (2, 0)];
            if neighbours.iter().all(|&(dx, dy)| v > g.values[iy + dy - 1][ix + dx - 1]) {
                maxima += 1;
            }
        }
    }
    assert_eq!(maxima, 2);
}

#[test]
fn kde_integrates_to_one() {
    let mut rng = RngState::new(6);
    let pts: Vec<[f64; 2]> = (0..200).map(|_| [rng.normal(), rng.normal()]).collect();
    let bounds = kde_bounds(&pts, 4.0).unwrap();
    let g = kde_2d(&pts, bounds, 64).unwrap();
    let i = g.integral();
    assert!((0.98..=1.02).contains(&i), "{i}");
}

#[test]
fn kde_rejects_degenerate_axis() {
    let pts = vec![[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]];
    assert!(matches!(kde_2d(&pts, [[0.0, 2.0], [0.0, 2.0]], 8), Err(Error::Degenerate(_))));
    assert!(kde_2d(&pts[..1], [[0.0, 2.0], [0.0, 2.0]], 8).is_err());
}
