//! Plots of a finished run, read back from its CSV outputs.

use std::path::PathBuf;

use steerlab_core::corpus::Attribute;

use crate::error::{HarnessError, Result};
use crate::experiments::{directional_effect, ConfigSummary, LayerScore, Pipeline};
use crate::output::{read_records, read_table};
use crate::svg::{heatmap, line_plot, scatter_plot, write_svg, Labels, Series};

fn parse(s: &str) -> f64 {
    s.parse().unwrap_or(f64::NAN)
}

fn direction_series(rows: &[ConfigSummary], attr: Attribute, x: impl Fn(&ConfigSummary) -> f64, y: impl Fn(&ConfigSummary) -> f64) -> Vec<Series> {
    let (a, b) = attr.pole_names();
    [("A", a), ("B", b)]
        .iter()
        .map(|(dir, pole)| {
            let pts = rows.iter().filter(|r| r.direction == *dir).map(|r| (x(r), y(r))).collect();
            Series::new(format!("{dir} ({pole})"), pts)
        })
        .collect()
}

fn drawable(series: &[Series]) -> bool {
    series.iter().any(|s| s.points.iter().any(|(x, y)| x.is_finite() && y.is_finite()))
}

fn baseline_median(rows: &[ConfigSummary]) -> f64 {
    rows.iter().find(|r| r.direction == "base").map_or(f64::NAN, |r| r.median)
}

/// Writes every plot whose inputs exist under `plots/`.
pub fn write_report(p: &Pipeline) -> Result<Vec<PathBuf>> {
    let plots = p.path("plots");
    let mut written = Vec::new();
    let mut emit = |name: String, svg: String| -> Result<()> {
        let path = plots.join(name);
        write_svg(&path, &svg)?;
        written.push(path);
        Ok(())
    };
    for &attr in &p.cfg.steering.attributes {
        let name = attr.name();
        let metric = crate::runner::metric_name(attr);

        let cos_path = p.path(&format!("steering/{name}_cosine.csv"));
        if cos_path.exists() {
            let (header, recs) = read_records(&cos_path)?;
            let labels: Vec<String> = header[1..].to_vec();
            let m: Vec<Vec<f64>> = recs.iter().map(|r| r[1..].iter().map(|v| parse(v)).collect()).collect();
            let row_labels: Vec<String> = recs.iter().map(|r| r[0].clone()).collect();
            let svg = heatmap(
                &Labels::new(format!("{name}: cosine similarity of layer vectors"), "layer", "layer"),
                &row_labels,
                &labels,
                &m,
                (-1.0, 1.0),
            )?;
            emit(format!("cosine_{name}.svg"), svg)?;
        }

        let pca_path = p.path(&format!("steering/{name}_pca.csv"));
        if pca_path.exists() {
            let (_, recs) = read_records(&pca_path)?;
            let layer = p
                .selected_layer(attr)
                .unwrap_or_else(|_| p.cfg.model.num_layers.div_ceil(2))
                .to_string();
            let mut groups: Vec<Series> = Vec::new();
            for r in recs.iter().filter(|r| r[0] == layer) {
                let pt = (parse(&r[3]), parse(&r[4]));
                match groups.iter_mut().find(|s| s.label == r[1]) {
                    Some(s) => s.points.push(pt),
                    None => groups.push(Series::new(r[1].clone(), vec![pt])),
                }
            }
            if !groups.is_empty() {
                let svg = scatter_plot(&Labels::new(format!("{name}: SEP activations, layer {layer}"), "PC 1", "PC 2"), &groups)?;
                emit(format!("pca_{name}.svg"), svg)?;
            }
        }

        let layers_path = p.experiment_dir("scan", attr).join("layers.csv");
        if layers_path.exists() {
            let scores: Vec<LayerScore> = read_table(&layers_path)?;
            let scan: Vec<ConfigSummary> = read_table(&p.experiment_dir("scan", attr).join("summary.csv"))?;
            let band = scan.iter().find(|r| r.direction == "base").map_or(f64::NAN, |r| r.iqr);
            let series = [Series::new("effect", scores.iter().map(|s| (s.layer as f64, s.effect)).collect())];
            if drawable(&series) {
                let svg = line_plot(
                    &Labels::new(format!("{name}: layer scan"), "injection layer", format!("half A-B gap ({metric})")),
                    &series,
                    &[("noise band".into(), band), ("-noise band".into(), -band)],
                )?;
                emit(format!("scan_{name}.svg"), svg)?;
            }
        }

        let lambda_path = p.experiment_dir("lambda", attr).join("summary.csv");
        if lambda_path.exists() {
            let rows: Vec<ConfigSummary> = read_table(&lambda_path)?;
            let medians = direction_series(&rows, attr, |r| r.lambda, |r| r.median);
            if drawable(&medians) {
                let svg = line_plot(
                    &Labels::new(format!("{name}: median {metric} against λ"), "λ", format!("median {metric}")),
                    &medians,
                    &[("baseline".into(), baseline_median(&rows))],
                )?;
                emit(format!("lambda_{name}.svg"), svg)?;
            }
            // Fréchet is undefined for pools smaller than the feature dimension.
            let frechet = direction_series(&rows, attr, |r| r.lambda, |r| r.frechet);
            if drawable(&frechet) {
                let svg = line_plot(
                    &Labels::new(format!("{name}: Fréchet distance against λ"), "λ", "Fréchet distance to baseline"),
                    &frechet,
                    &[],
                )?;
                emit(format!("frechet_{name}.svg"), svg)?;
            }
        }

        let prompts_path = p.experiment_dir("prompts", attr).join("summary.csv");
        if prompts_path.exists() {
            let rows: Vec<ConfigSummary> = read_table(&prompts_path)?;
            let base = baseline_median(&rows);
            let mut counts: Vec<usize> = rows.iter().filter(|r| r.direction != "base").map(|r| r.prompts_per_set).collect();
            counts.dedup();
            let pts: Vec<(f64, f64)> = counts
                .iter()
                .map(|&n| {
                    let med = |d: &str| {
                        rows.iter()
                            .find(|r| r.prompts_per_set == n && r.direction == d)
                            .map_or(f64::NAN, |r| r.median)
                    };
                    (n as f64, directional_effect(med("A"), med("B")) / base.abs())
                })
                .collect();
            let series = [Series::new("shift", pts)];
            if drawable(&series) {
                let svg = line_plot(
                    &Labels::new(format!("{name}: shift against prompts per set"), "prompts per set", "relative half A-B gap"),
                    &series,
                    &[],
                )?;
                emit(format!("prompts_{name}.svg"), svg)?;
            }
        }
    }
    if written.is_empty() {
        return Err(HarnessError::MissingFile(p.path("steering")));
    }
    Ok(written)
}
