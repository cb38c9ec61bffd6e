//! Aggregate tables from the per-item metrics.
//!
//! `report/gap.csv`: operator, law, method, denoiser, n, mean, std (dB).
//! `report/coverage.csv`: operator, law, method, denoiser, n, coverage.
//! `report/delta.csv` (only with two denoisers): per-item gap difference
//! oracle minus external with a two-sided signed-rank test.
//! `report/report.txt`: the same tables rendered with one column per
//! (operator, law) cell; missing cells stay blank.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::Result;
use dpsbench::evaluation::wilcoxon_signed_rank;
use serde::{Deserialize, Serialize};

use crate::config::{BenchmarkConfig, DenoiserKind};
use crate::dataset::write_atomic;
use crate::pipeline::{method_variants, read_csv, write_csv, MetricRow, Workspace};

pub const SIGNIFICANCE: f64 = 0.05;

type Key = (String, String, String, String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCell {
    pub operator: String,
    pub law: String,
    pub method: String,
    pub denoiser: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCell {
    pub operator: String,
    pub law: String,
    pub method: String,
    pub denoiser: String,
    pub n: usize,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaCell {
    pub operator: String,
    pub law: String,
    pub method: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub p_two_sided: f64,
    pub median_diff: f64,
    /// Denoiser with the smaller gap by the median difference.
    pub winner: String,
    pub significant: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub gap: Vec<GapCell>,
    pub coverage: Vec<CoverageCell>,
    pub delta: Vec<DeltaCell>,
    pub text: String,
}

fn group(rows: &[MetricRow]) -> BTreeMap<Key, BTreeMap<usize, f64>> {
    let mut g: BTreeMap<Key, BTreeMap<usize, f64>> = BTreeMap::new();
    for r in rows {
        g.entry((r.operator.clone(), r.law.clone(), r.method.clone(), r.denoiser.clone()))
            .or_default()
            .insert(r.item, r.value);
    }
    g
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Builds every table from metric rows.
pub fn build(config: &BenchmarkConfig, gap: &[MetricRow], coverage: &[MetricRow]) -> Result<Report> {
    let gaps = group(gap);
    let covs = group(coverage);
    let mut report = Report::default();
    for ((operator, law, method, denoiser), items) in &gaps {
        let v: Vec<f64> = items.values().copied().collect();
        let (mean, std) = mean_std(&v);
        report.gap.push(GapCell { operator: operator.clone(), law: law.clone(), method: method.clone(), denoiser: denoiser.clone(), n: v.len(), mean, std });
    }
    for ((operator, law, method, denoiser), items) in &covs {
        let v: Vec<f64> = items.values().copied().collect();
        report.coverage.push(CoverageCell {
            operator: operator.clone(),
            law: law.clone(),
            method: method.clone(),
            denoiser: denoiser.clone(),
            n: v.len(),
            coverage: v.iter().sum::<f64>() / v.len() as f64,
        });
    }
    let (oracle, external) = (DenoiserKind::Oracle.name(), DenoiserKind::External.name());
    for ((operator, law, method, denoiser), a) in &gaps {
        if denoiser != oracle {
            continue;
        }
        let Some(b) = gaps.get(&(operator.clone(), law.clone(), method.clone(), external.to_string())) else {
            continue;
        };
        let diffs: Vec<f64> = a.iter().filter_map(|(i, va)| b.get(i).map(|vb| va - vb)).collect();
        if diffs.is_empty() {
            continue;
        }
        let w = wilcoxon_signed_rank(&diffs)?;
        let (mean, std) = mean_std(&diffs);
        let winner = if w.median_diff < 0.0 {
            oracle
        } else if w.median_diff > 0.0 {
            external
        } else {
            "tie"
        };
        report.delta.push(DeltaCell {
            operator: operator.clone(),
            law: law.clone(),
            method: method.clone(),
            n: diffs.len(),
            mean,
            std,
            p_two_sided: w.p_two_sided,
            median_diff: w.median_diff,
            winner: winner.to_string(),
            significant: w.p_two_sided < SIGNIFICANCE,
        });
    }
    report.text = render(config, &report);
    Ok(report)
}

fn columns(config: &BenchmarkConfig) -> Vec<(String, String)> {
    config
        .operators
        .iter()
        .flat_map(|op| config.laws.iter().map(move |law| (op.name().to_string(), law.to_string())))
        .collect()
}

fn rows(config: &BenchmarkConfig, with_gibbs: bool) -> Vec<(String, String)> {
    let mut r: Vec<(String, String)> = Vec::new();
    if with_gibbs {
        r.push(("gibbs".into(), "-".into()));
    }
    r.extend(method_variants(config).into_iter().map(|(m, d)| (m.name().to_string(), d.map_or("-", |k| k.name()).to_string())));
    r
}

fn table(title: &str, cols: &[(String, String)], rows: &[(String, String)], cell: impl Fn(&(String, String), &(String, String)) -> Option<String>) -> String {
    let mut grid: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["method".to_string()];
    header.extend(cols.iter().map(|(op, law)| format!("{op}/{law}")));
    grid.push(header);
    for r in rows {
        let label = if r.1 == "-" { r.0.clone() } else { format!("{} ({})", r.0, r.1) };
        let mut line = vec![label];
        line.extend(cols.iter().map(|c| cell(r, c).unwrap_or_default()));
        grid.push(line);
    }
    let widths: Vec<usize> = (0..grid[0].len()).map(|j| grid.iter().map(|l| l[j].chars().count()).max().unwrap_or(0)).collect();
    let mut out = format!("{title}\n");
    for line in &grid {
        let cells: Vec<String> = line.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

fn render(config: &BenchmarkConfig, report: &Report) -> String {
    let cols = columns(config);
    let gap = |r: &(String, String), c: &(String, String)| {
        report
            .gap
            .iter()
            .find(|g| g.method == r.0 && g.denoiser == r.1 && g.operator == c.0 && g.law == c.1)
            .map(|g| format!("{:.2}±{:.2}", g.mean, g.std))
    };
    let cov = |r: &(String, String), c: &(String, String)| {
        report
            .coverage
            .iter()
            .find(|g| g.method == r.0 && g.denoiser == r.1 && g.operator == c.0 && g.law == c.1)
            .map(|g| format!("{:.2}", g.coverage))
    };
    let mut out = table("MMSE optimality gap (dB), mean±std over test items", &cols, &rows(config, false), gap);
    out.push('\n');
    out.push_str(&table(&format!("HPD coverage at alpha = {}", config.alpha), &cols, &rows(config, true), cov));
    if !report.delta.is_empty() {
        let mut delta_rows: Vec<(String, String)> = rows(config, false).into_iter().filter(|r| r.1 != "-").map(|r| (r.0, "-".into())).collect();
        delta_rows.dedup();
        let delta = |r: &(String, String), c: &(String, String)| {
            report
                .delta
                .iter()
                .find(|g| g.method == r.0 && g.operator == c.0 && g.law == c.1)
                .map(|g| format!("{:.2}±{:.2}{}", g.mean, g.std, if g.significant { "*" } else { "" }))
        };
        out.push('\n');
        out.push_str(&table(
            &format!("Gap change oracle minus external (dB); * = signed-rank p < {SIGNIFICANCE}"),
            &cols,
            &delta_rows,
            delta,
        ));
    }
    out
}

/// Reads `metrics/` and writes `report/`.
pub fn report(config: &BenchmarkConfig, ws: &Workspace) -> Result<Report> {
    let gap: Vec<MetricRow> = read_csv(&ws.metrics().join("gap.csv"))?;
    let coverage: Vec<MetricRow> = read_csv(&ws.metrics().join("coverage.csv"))?;
    let r = build(config, &gap, &coverage)?;
    let dir = ws.report();
    write_csv(&dir.join("gap.csv"), &r.gap)?;
    write_csv(&dir.join("coverage.csv"), &r.coverage)?;
    if !r.delta.is_empty() {
        write_csv(&dir.join("delta.csv"), &r.delta)?;
    }
    write_atomic(&dir.join("report.txt"), r.text.as_bytes())?;
    Ok(r)
}
