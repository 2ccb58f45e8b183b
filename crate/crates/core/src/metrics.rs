//! Metric records and run outputs.
//!
//! `metrics.jsonl` holds one record per (epoch, split) and is byte-identical
//! across reruns of the same config and seed; wall-clock timings therefore
//! live in a separate `timings.jsonl` sidecar. A `summary.csv` table is
//! written when the run finishes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::loss::LossBreakdown;

/// How the diagnostic metrics are computed; written once per run so the
/// numbers can be interpreted later.
pub const MEAN_KLD_SPACE: &str =
    "softmax over the flattened per-instance token features, student side projected to the teacher dimension";
pub const MUL_NORMALIZATION: &str =
    "sum of squared Euclidean distances over ordered token pairs, divided by the token count";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub split: String,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossBreakdown>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_kld: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mul: Option<f64>,
    pub tau_g: f64,
    pub lr: f64,
}

/// Collects records in memory and, when a directory is attached, streams
/// them to `metrics.jsonl` (+ timings to the sidecar).
pub struct MetricsWriter {
    pub records: Vec<MetricRecord>,
    jsonl: Option<BufWriter<File>>,
    timings: Option<BufWriter<File>>,
    dir: Option<PathBuf>,
}

impl MetricsWriter {
    pub fn in_memory() -> MetricsWriter {
        MetricsWriter {
            records: Vec::new(),
            jsonl: None,
            timings: None,
            dir: None,
        }
    }

    pub fn to_dir(dir: &Path) -> Result<MetricsWriter> {
        std::fs::create_dir_all(dir)?;
        let jsonl = BufWriter::new(File::create(dir.join("metrics.jsonl"))?);
        let timings = BufWriter::new(File::create(dir.join("timings.jsonl"))?);
        let mut info = BufWriter::new(File::create(dir.join("run_info.json"))?);
        let header = serde_json::json!({
            "mean_kld_space": MEAN_KLD_SPACE,
            "mul_normalization": MUL_NORMALIZATION,
        });
        writeln!(info, "{}", serde_json::to_string(&header).expect("static header"))?;
        Ok(MetricsWriter {
            records: Vec::new(),
            jsonl: Some(jsonl),
            timings: Some(timings),
            dir: Some(dir.to_path_buf()),
        })
    }

    pub fn push(&mut self, record: MetricRecord) -> Result<()> {
        if let Some(out) = &mut self.jsonl {
            writeln!(out, "{}", serde_json::to_string(&record).expect("record serializes"))?;
            out.flush()?;
        }
        self.records.push(record);
        Ok(())
    }

    /// Non-deterministic timing data, kept out of the metrics stream.
    pub fn push_timing(&mut self, epoch: usize, wall_secs: f64) -> Result<()> {
        if let Some(out) = &mut self.timings {
            writeln!(out, "{{\"epoch\":{epoch},\"wall_secs\":{wall_secs}}}")?;
            out.flush()?;
        }
        Ok(())
    }

    /// Write the per-epoch summary table.
    pub fn finish(&mut self) -> Result<()> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let mut csv = BufWriter::new(File::create(dir.join("summary.csv"))?);
        writeln!(
            csv,
            "epoch,split,accuracy,total,logit,inner,local,global,mean_kld,mul,tau_g,lr"
        )?;
        for r in &self.records {
            let loss = r.loss.as_ref();
            let field = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
            writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.split,
                r.accuracy,
                field(loss.map(|l| l.total)),
                field(loss.map(|l| l.logit)),
                field(loss.map(|l| l.inner)),
                field(loss.map(|l| l.local)),
                field(loss.map(|l| l.global)),
                field(r.mean_kld),
                field(r.mul),
                r.tau_g,
                r.lr
            )?;
        }
        Ok(())
    }
}
