use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExperimentResult;
use crate::error::Result;
use crate::eval::quantile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
    Undefined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub split: usize,
    pub strategy: String,
    pub landmark: u32,
    pub metric: String,
    pub value: Option<f64>,
    pub status: CellStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeRow {
    pub split: usize,
    pub strategy: String,
    pub impute_seconds: f64,
    pub build_seconds: f64,
    pub predict_seconds: f64,
    pub status: CellStatus,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub split: usize,
    pub strategy: String,
    pub landmark: u32,
    /// `decile` or `smooth`.
    pub kind: String,
    pub bin: Option<usize>,
    pub n: Option<usize>,
    pub predicted: f64,
    pub observed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub strategy: String,
    pub landmark: u32,
    pub metric: String,
    /// Splits with a defined value.
    pub n: usize,
    pub n_undefined: usize,
    pub n_failed: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeSummary {
    pub strategy: String,
    pub phase: String,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cells: usize,
    pub cells_ok: usize,
    pub cells_failed: usize,
    /// Statistic used for headline comparisons: mean for metrics, median for runtimes.
    pub headline: BTreeMap<String, String>,
    pub metrics: Vec<MetricSummary>,
    pub runtimes: Vec<RuntimeSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl Summary {
    pub fn metric(&self, strategy: &str, landmark: u32, metric: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.strategy == strategy && m.landmark == landmark && m.metric == metric)
    }

    pub fn runtime(&self, strategy: &str, phase: &str) -> Option<&RuntimeSummary> {
        self.runtimes.iter().find(|r| r.strategy == strategy && r.phase == phase)
    }
}

pub const PHASES: [&str; 3] = ["impute", "build", "predict"];
const COUNT_METRICS: [&str; 2] = ["n", "n_events"];

impl ExperimentResult {
    pub fn metric_rows(&self) -> Vec<MetricRow> {
        let cfg = &self.config;
        let last = cfg.report_cutoff.min(cfg.last_landmark);
        let mut rows = Vec::new();
        for cell in &self.cells {
            let strategy = cell.strategy.to_string();
            let row = |landmark, metric: &str, value: Option<f64>, status| MetricRow {
                split: cell.split,
                strategy: strategy.clone(),
                landmark,
                metric: metric.to_string(),
                value,
                status,
            };
            if cell.error.is_some() {
                for s in cfg.first_landmark..=last {
                    for m in COUNT_METRICS.iter().chain(&crate::eval::MetricReport::METRICS) {
                        rows.push(row(s, m, None, CellStatus::Failed));
                    }
                }
                continue;
            }
            for (s, rep) in &cell.reports {
                rows.push(row(*s, "n", Some(rep.n as f64), CellStatus::Ok));
                rows.push(row(*s, "n_events", Some(rep.n_events as f64), CellStatus::Ok));
                for (name, v) in rep.values() {
                    let status = if v.is_some() { CellStatus::Ok } else { CellStatus::Undefined };
                    rows.push(row(*s, name, v, status));
                }
            }
        }
        rows
    }

    pub fn runtime_rows(&self) -> Vec<RuntimeRow> {
        self.cells
            .iter()
            .map(|c| RuntimeRow {
                split: c.split,
                strategy: c.strategy.to_string(),
                impute_seconds: c.times.impute,
                build_seconds: c.times.build,
                predict_seconds: c.times.predict,
                status: c.status(),
                error: c.error.clone(),
            })
            .collect()
    }

    pub fn curve_rows(&self) -> Vec<CurveRow> {
        let mut rows = Vec::new();
        for cell in &self.cells {
            let strategy = cell.strategy.to_string();
            for (s, rep) in &cell.reports {
                for d in &rep.curve.deciles {
                    rows.push(CurveRow {
                        split: cell.split,
                        strategy: strategy.clone(),
                        landmark: *s,
                        kind: "decile".into(),
                        bin: Some(d.bin),
                        n: Some(d.n),
                        predicted: d.mean_predicted,
                        observed: d.observed,
                    });
                }
                for &(p, c) in &rep.curve.smoothed {
                    rows.push(CurveRow {
                        split: cell.split,
                        strategy: strategy.clone(),
                        landmark: *s,
                        kind: "smooth".into(),
                        bin: None,
                        n: None,
                        predicted: p,
                        observed: c,
                    });
                }
            }
        }
        rows
    }
}

fn spread(mut v: Vec<f64>) -> Option<(f64, f64, f64, f64, f64, f64)> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    Some((mean, quantile(&v, 0.5), quantile(&v, 0.25), quantile(&v, 0.75), v[0], v[v.len() - 1]))
}

/// Means across splits per (strategy, landmark, metric) and runtime spread
/// per (strategy, phase). Groups keep first-appearance order.
pub fn summarize(metrics: &[MetricRow], runtimes: &[RuntimeRow]) -> Summary {
    let mut order: Vec<(String, u32, String)> = Vec::new();
    let mut groups: BTreeMap<(String, u32, String), Vec<&MetricRow>> = BTreeMap::new();
    for r in metrics {
        let key = (r.strategy.clone(), r.landmark, r.metric.clone());
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(r);
    }
    let metrics = order
        .into_iter()
        .map(|key| {
            let rows = &groups[&key];
            let values: Vec<f64> = rows.iter().filter_map(|r| r.value).collect();
            let stats = spread(values.clone());
            MetricSummary {
                strategy: key.0,
                landmark: key.1,
                metric: key.2,
                n: values.len(),
                n_undefined: rows.iter().filter(|r| r.status == CellStatus::Undefined).count(),
                n_failed: rows.iter().filter(|r| r.status == CellStatus::Failed).count(),
                mean: stats.map(|s| s.0),
                median: stats.map(|s| s.1),
                q1: stats.map(|s| s.2),
                q3: stats.map(|s| s.3),
                min: stats.map(|s| s.4),
                max: stats.map(|s| s.5),
            }
        })
        .collect();

    let mut strategies: Vec<&str> = Vec::new();
    for r in runtimes {
        if !strategies.contains(&r.strategy.as_str()) {
            strategies.push(&r.strategy);
        }
    }
    let mut rt = Vec::new();
    for strategy in strategies {
        let ok: Vec<&RuntimeRow> = runtimes.iter().filter(|r| r.strategy == strategy && r.status != CellStatus::Failed).collect();
        for phase in PHASES {
            let v: Vec<f64> = ok
                .iter()
                .map(|r| match phase {
                    "impute" => r.impute_seconds,
                    "build" => r.build_seconds,
                    _ => r.predict_seconds,
                })
                .collect();
            if let Some((mean, median, q1, q3, min, max)) = spread(v) {
                rt.push(RuntimeSummary { strategy: strategy.to_string(), phase: phase.into(), n: ok.len(), mean, median, q1, q3, min, max });
            }
        }
    }
    let failed = runtimes.iter().filter(|r| r.status == CellStatus::Failed).count();
    Summary {
        cells: runtimes.len(),
        cells_ok: runtimes.len() - failed,
        cells_failed: failed,
        headline: [("metrics".to_string(), "mean".to_string()), ("runtimes".to_string(), "median".to_string())].into(),
        metrics,
        runtimes: rt,
        config: None,
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|x| x.map_err(Into::into)).collect()
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>> {
    read_csv(path)
}

pub fn read_runtimes_csv(path: &Path) -> Result<Vec<RuntimeRow>> {
    read_csv(path)
}

/// Writes metrics.csv, runtimes.csv, curves.csv, summary.json and the saved
/// models under `models/`.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<Summary> {
    fs::create_dir_all(dir)?;
    let metrics = result.metric_rows();
    let runtimes = result.runtime_rows();
    write_csv(&dir.join("metrics.csv"), &metrics)?;
    write_csv(&dir.join("runtimes.csv"), &runtimes)?;
    write_csv(&dir.join("curves.csv"), &result.curve_rows())?;
    let mut summary = summarize(&metrics, &runtimes);
    summary.config = Some(serde_json::to_value(&result.config)?);
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    let saved: Vec<_> = result.cells.iter().flat_map(|c| &c.models).collect();
    if !saved.is_empty() {
        let models = dir.join("models");
        fs::create_dir_all(&models)?;
        for (name, env) in saved {
            env.save(&models.join(name))?;
        }
    }
    Ok(summary)
}
