use std::path::Path;

use proptest::prelude::*;
use steerlab::config::{resolve_out, Config, StrategyChoice};
use steerlab::experiments::{block_cosine_contrast, select_best_layer, strongest_block, LayerScore};
use steerlab::output::{write_results, write_table};
use steerlab::stats::{iqr, median, quantile, relative_shift, signed_shift, spearman};
use steerlab::svg::{heatmap, line_plot, scatter_plot, Labels, Series};

fn score(layer: usize, effect: f64, f_ref: f64, f_sel: f64) -> LayerScore {
    LayerScore {
        layer,
        effect,
        relative_effect: effect / 100.0,
        frechet_reference: f_ref,
        frechet_selection: f_sel,
        exceeds_band: effect.abs() > 10.0,
    }
}

#[test]
fn best_layer_single_dominant() {
    let scores: Vec<LayerScore> = (1..=12)
        .map(|l| score(l, if l == 7 { 40.0 } else { 3.0 }, 1.0, 1.5))
        .collect();
    assert_eq!(select_best_layer(&scores).unwrap(), 7);
}

#[test]
fn best_layer_tie_goes_to_lower_index() {
    let scores = vec![score(1, 2.0, 1.0, 1.0), score(4, 25.0, 1.0, 1.0), score(9, 25.0, 1.0, 1.0)];
    assert_eq!(select_best_layer(&scores).unwrap(), 4);
}

#[test]
fn best_layer_skips_disqualified_quality() {
    // layer 5 dominates but its quality score more than doubles
    let scores = vec![
        score(3, 12.0, 1.0, 1.9),
        score(5, 50.0, 1.0, 2.5),
        score(6, 20.0, 1.0, 2.0),
    ];
    assert_eq!(select_best_layer(&scores).unwrap(), 6);
}

#[test]
fn best_layer_errors() {
    assert!(select_best_layer(&[]).is_err());
    let none_ok = vec![score(1, 5.0, 1.0, 3.0), score(2, 5.0, f64::NAN, 1.0)];
    assert!(select_best_layer(&none_ok).is_err());
}

#[test]
fn block_is_strongest_contiguous_run() {
    let effects = [1.0, 12.0, 15.0, 2.0, 11.0, 30.0, 25.0, 3.0];
    let scores: Vec<LayerScore> = effects.iter().enumerate().map(|(i, &e)| score(i + 1, e, 1.0, 1.0)).collect();
    assert_eq!(strongest_block(&scores), Some((5, 7)));
    let quiet: Vec<LayerScore> = (1..=4).map(|l| score(l, 1.0, 1.0, 1.0)).collect();
    assert_eq!(strongest_block(&quiet), None);
}

#[test]
fn block_contrast_of_structured_matrix() {
    // layers 2..=3 share cos 0.9, everything else 0.1
    let l = 5;
    let m: Vec<Vec<f64>> = (0..l)
        .map(|i| {
            (0..l)
                .map(|j| match (i, j) {
                    _ if i == j => 1.0,
                    (1..=2, 1..=2) => 0.9,
                    _ => 0.1,
                })
                .collect()
        })
        .collect();
    let c = block_cosine_contrast(&m, (2, 3)).unwrap();
    assert!((c - 0.8).abs() < 1e-12);
    assert!(block_cosine_contrast(&m, (1, 5)).is_none());
}

#[test]
fn relative_shift_reproduces_table_arithmetic() {
    let pct = |b, s| (relative_shift(b, s) * 1000.0).round() / 10.0;
    assert_eq!(pct(134.54, 85.92), 36.1);
    assert_eq!(pct(1799.42, 2161.15), 20.1);
    assert!((relative_shift(1799.42, 1076.80) * 100.0 - 40.1).abs() <= 0.1);
    assert_eq!(relative_shift(120.0, 120.0), 0.0);
    assert!(signed_shift(134.54, 85.92) < 0.0);
}

#[test]
fn quantiles_and_rank_correlation() {
    let xs = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
    assert_eq!(median(&xs), 3.5);
    assert_eq!(quantile(&xs, 0.0), 1.0);
    assert_eq!(quantile(&xs, 1.0), 9.0);
    assert!((iqr(&[1.0, 2.0, 3.0, 4.0, 5.0]) - 2.0).abs() < 1e-12);
    let x = [0.0, 0.25, 0.5, 0.75, 1.0];
    assert_eq!(spearman(&x, &[1.0, 2.0, 3.0, 3.5, 9.0]), 1.0);
    assert_eq!(spearman(&x, &[5.0, 4.0, 3.0, 2.0, 1.0]), -1.0);
    assert!(spearman(&x, &[1.0; 5]).is_nan());
}

proptest! {
    #[test]
    fn spearman_invariant_under_monotone_maps(ys in prop::collection::vec(-1e3f64..1e3, 3..20)) {
        let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
        let a = spearman(&xs, &ys);
        let mapped: Vec<f64> = ys.iter().map(|y| y.exp2().min(f64::MAX) + 3.0 * y).collect();
        let b = spearman(&xs, &mapped);
        prop_assert!(a.is_nan() == b.is_nan());
        if a.is_finite() {
            prop_assert!((a - b).abs() < 1e-9 && a.abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn median_between_quartiles(xs in prop::collection::vec(-1e6f64..1e6, 1..60)) {
        let (q1, m, q3) = (quantile(&xs, 0.25), median(&xs), quantile(&xs, 0.75));
        prop_assert!(q1 <= m && m <= q3 && iqr(&xs) >= 0.0);
    }

    #[test]
    fn relative_shift_is_zero_only_at_baseline(b in 1.0f64..1e4, s in 1.0f64..1e4) {
        let r = relative_shift(b, s);
        prop_assert!(r >= 0.0);
        prop_assert_eq!(r == 0.0, b == s);
        prop_assert!((signed_shift(b, s).abs() - r).abs() < 1e-12);
    }
}

#[test]
fn config_defaults_and_round_trip() {
    let c = Config::from_toml("version = 1").unwrap();
    assert_eq!(c, Config::default());
    assert_eq!(c.train.batch_size, 32);
    assert_eq!(c.corpus.n_clips, 6000);
    assert_eq!(c.experiment.n, 50);
    assert_eq!(c.experiment.eval_lambda, 1.25);
    assert_eq!(
        c.experiment.lambda_grid,
        vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 3.0, 4.0, 5.0]
    );
    assert_eq!(c.experiment.prompt_counts, vec![1, 5, 10, 25, 50, 100]);
    let again = Config::from_toml(&c.to_toml()).unwrap();
    assert_eq!(again, c);
}

#[test]
fn config_overrides_and_rejections() {
    let c = Config::from_toml(
        "version = 1\nout = \"x\"\n[experiment]\nn = 7\nstrategy = \"all_to_all\"\n[steering]\nattributes = [\"timbre\"]\n",
    )
    .unwrap();
    assert_eq!(c.experiment.n, 7);
    assert_eq!(c.experiment.strategy, StrategyChoice::AllToAll);
    assert_eq!(c.steering.attributes.len(), 1);
    for bad in [
        "version = 2",
        "version = 1\nbogus = 3",
        "version = 1\n[experiment]\nn = 0",
        "version = 1\n[experiment]\nlambda_grid = [0.0, 2.0, 1.0]",
        "version = 1\n[experiment]\nlambda_grid = [0.5, 1.0]",
        "version = 1\n[experiment]\nlayer = 13",
        "version = 1\n[train]\nwarmup = 3",
    ] {
        assert!(Config::from_toml(bad).is_err(), "accepted {bad:?}");
    }
}

#[test]
fn output_root_applies_to_relative_paths() {
    assert_eq!(resolve_out(Path::new("runs/a"), Some("/data".into())), Path::new("/data/runs/a"));
    assert_eq!(resolve_out(Path::new("/abs"), Some("/data".into())), Path::new("/abs"));
    assert_eq!(resolve_out(Path::new("runs/a"), None), Path::new("runs/a"));
}

fn line_fixture() -> (Labels, Vec<Series>) {
    (
        Labels::new("median bpm", "λ", "bpm"),
        vec![
            Series::new("A (fast)", vec![(0.0, 120.0), (0.5, 130.0), (1.0, 150.0)]),
            Series::new("B (slow)", vec![(0.0, 120.0), (0.5, 110.0), (1.0, 95.0)]),
        ],
    )
}

#[test]
fn svg_output_is_deterministic() {
    let (l, s) = line_fixture();
    let a = line_plot(&l, &s, &[("baseline".into(), 120.0)]).unwrap();
    let b = line_plot(&l, &s, &[("baseline".into(), 120.0)]).unwrap();
    assert_eq!(a, b);
    assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
    assert!(a.contains("A (fast)") && a.contains("bpm") && a.contains("<polyline"));
    assert_eq!(scatter_plot(&l, &s).unwrap(), scatter_plot(&l, &s).unwrap());
}

#[test]
fn heatmap_has_one_cell_per_entry() {
    let m: Vec<Vec<f64>> = (0..12).map(|i| (0..12).map(|j| if i == j { 1.0 } else { 0.3 }).collect()).collect();
    let labels: Vec<String> = (1..=12).map(|i| i.to_string()).collect();
    let svg = heatmap(&Labels::new("cosine", "layer", "layer"), &labels, &labels, &m, (-1.0, 1.0)).unwrap();
    assert_eq!(svg.matches(r#"class="cell""#).count(), 144);
}

#[test]
fn empty_inputs_are_errors_and_write_nothing() {
    let l = Labels::new("t", "x", "y");
    assert!(line_plot(&l, &[], &[]).is_err());
    assert!(line_plot(&l, &[Series::new("a", vec![])], &[]).is_err());
    assert!(scatter_plot(&l, &[Series::new("a", vec![(f64::NAN, 1.0)])]).is_err());
    assert!(heatmap(&l, &[], &[], &[], (0.0, 1.0)).is_err());
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("results.csv");
    assert!(write_results(&p, &[]).is_err());
    assert!(!p.exists());
    let q = dir.path().join("summary.csv");
    assert!(write_table::<LayerScore>(&q, &[]).is_err());
    assert!(!q.exists());
}
