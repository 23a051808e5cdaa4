use super::{mean_std, EvalError, MeanStd};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Named metrics with one value per recording.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub config_hash: String,
    pub checkpoint_hash: String,
    pub metrics: BTreeMap<String, Vec<(String, f64)>>,
    /// 2-D point sets for scatter plots, keyed by name.
    pub points: BTreeMap<String, Vec<[f64; 2]>>,
}

impl MetricReport {
    pub fn push(&mut self, metric: &str, recording: &str, value: f64) {
        self.metrics.entry(metric.to_string()).or_default().push((recording.to_string(), value));
    }

    pub fn summary(&self) -> BTreeMap<String, MeanStd> {
        self.metrics
            .iter()
            .map(|(k, v)| (k.clone(), mean_std(&v.iter().map(|x| x.1).collect::<Vec<_>>())))
            .collect()
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    config_hash: &'a str,
    checkpoint_hash: &'a str,
    metrics: BTreeMap<String, MeanStd>,
}

fn safe_name(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Writes `<metric>.csv`, `summary.json` and `points_<name>.txt` into
/// `dir`. Everything is rendered before the first file is written; returns
/// the written paths in order.
pub fn emit_report(report: &MetricReport, dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    for (metric, rows) in &report.metrics {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["recording", "value"])?;
        for (rec, v) in rows {
            w.write_record([rec.as_str(), &format!("{v:e}")])?;
        }
        let data = w.into_inner().map_err(|e| EvalError::Io(e.into_error()))?;
        files.push((format!("{}.csv", safe_name(metric)), data));
    }
    let summary = Summary {
        config_hash: &report.config_hash,
        checkpoint_hash: &report.checkpoint_hash,
        metrics: report.summary(),
    };
    let mut json = serde_json::to_vec_pretty(&summary).map_err(std::io::Error::other)?;
    json.push(b'\n');
    files.push(("summary.json".into(), json));
    for (name, pts) in &report.points {
        let mut s = String::new();
        for p in pts {
            s.push_str(&format!("{:e} {:e}\n", p[0], p[1]));
        }
        files.push((format!("points_{}.txt", safe_name(name)), s.into_bytes()));
    }
    std::fs::create_dir_all(dir)?;
    let probe = dir.join(".write_probe");
    std::fs::write(&probe, b"")?;
    std::fs::remove_file(&probe)?;
    let mut out = Vec::with_capacity(files.len());
    for (name, data) in files {
        let p = dir.join(name);
        std::fs::write(&p, data)?;
        out.push(p);
    }
    Ok(out)
}
