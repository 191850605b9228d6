//! Per-run rows and their per-cell aggregates.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::pipeline::{PipelineConfig, RunRow};

/// A run tagged with the experiment variant it belongs to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: String,
    #[serde(flatten)]
    pub run: RunRow,
}

/// Summary of the runs sharing a variant and an object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub variant: String,
    pub object_id: String,
    pub runs: usize,
    pub converged: usize,
    pub rmse_delta_t: f64,
    pub rmse_delta_t_normalized: f64,
    pub rmse_delta_r: f64,
    pub rmse_delta_s: f64,
    pub median_delta_t: f64,
    pub median_delta_r: f64,
    /// Median of `|Δs| / s_true`.
    pub median_rel_delta_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub title: String,
    pub config: PipelineConfig,
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<Aggregate>,
}

pub fn rmse(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn aggregate(variant: &str, object_id: &str, runs: &[&RunRow]) -> Aggregate {
    let col = |f: fn(&RunRow) -> f64| runs.iter().map(|r| f(r)).collect::<Vec<f64>>();
    Aggregate {
        variant: variant.to_string(),
        object_id: object_id.to_string(),
        runs: runs.len(),
        converged: runs.iter().filter(|r| r.converged).count(),
        rmse_delta_t: rmse(&col(|r| r.delta_t)),
        rmse_delta_t_normalized: rmse(&col(|r| r.delta_t_normalized)),
        rmse_delta_r: rmse(&col(|r| r.delta_r)),
        rmse_delta_s: rmse(&col(|r| r.delta_s)),
        median_delta_t: median(&col(|r| r.delta_t)),
        median_delta_r: median(&col(|r| r.delta_r)),
        median_rel_delta_s: median(&col(|r| r.delta_s / r.truth.scale)),
    }
}

impl ExperimentReport {
    /// Groups rows by (variant, object) in order of first appearance.
    pub fn from_rows(title: impl Into<String>, config: PipelineConfig, rows: Vec<ReportRow>) -> Self {
        let mut keys: Vec<(&str, &str)> = Vec::new();
        for r in &rows {
            let k = (r.variant.as_str(), r.run.object_id.as_str());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        let aggregates = keys
            .iter()
            .map(|&(v, o)| {
                let runs: Vec<&RunRow> = rows
                    .iter()
                    .filter(|r| r.variant == v && r.run.object_id == o)
                    .map(|r| &r.run)
                    .collect();
                aggregate(v, o, &runs)
            })
            .collect();
        ExperimentReport {
            title: title.into(),
            config,
            rows,
            aggregates,
        }
    }

    pub fn aggregate(&self, variant: &str, object_id: &str) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.variant == variant && a.object_id == object_id)
    }

    pub fn variant_rows<'a>(&'a self, variant: &'a str) -> impl Iterator<Item = &'a RunRow> + 'a {
        self.rows.iter().filter(move |r| r.variant == variant).map(|r| &r.run)
    }

    pub const CSV_HEADER: &'static str = "variant,object_id,seed,delta_t,delta_t_object,delta_t_normalized,delta_r,delta_s,\
init_delta_t,init_delta_r,coarse_converged,converged,status,iterations,final_residual,scene_samples,object_samples";

    /// One line per run.
    pub fn rows_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(Self::CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let r = &row.run;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{:?},{},{},{},{}",
                row.variant,
                r.object_id,
                r.seed,
                r.delta_t,
                r.delta_t_object,
                r.delta_t_normalized,
                r.delta_r,
                r.delta_s,
                r.init_delta_t,
                r.init_delta_r,
                r.coarse_converged,
                r.converged,
                r.status,
                r.iterations,
                r.final_residual,
                r.scene_samples,
                r.object_samples
            );
        }
        out
    }

    /// Markdown table of the aggregates.
    pub fn table(&self) -> String {
        let mut out = format!("# {}\n\n", self.title);
        out.push_str(
            "| variant | object | runs | converged | RMSE Δt | RMSE Δt/R | RMSE ΔR | RMSE Δs | median Δt | median ΔR | median Δs/s |\n",
        );
        out.push_str("|---|---|---|---|---|---|---|---|---|---|---|\n");
        for a in &self.aggregates {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |",
                a.variant,
                a.object_id,
                a.runs,
                a.converged,
                a.rmse_delta_t,
                a.rmse_delta_t_normalized,
                a.rmse_delta_r,
                a.rmse_delta_s,
                a.median_delta_t,
                a.median_delta_r,
                a.median_rel_delta_s
            );
        }
        out
    }
}
