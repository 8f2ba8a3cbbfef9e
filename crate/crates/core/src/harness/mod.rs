//! Experiment plumbing: configuration files, presets, result tables, and
//! charts.

pub mod config;
pub mod presets;
pub mod svg;
pub mod table;

pub use config::{config_hash, ConfigFile, ExperimentOverrides, ExperimentSettings, PolicyOverrides};
pub use presets::{
    assemble_policy, run_experiment, rho_table, Details, ExperimentOutput, ExperimentSpec, Preset,
};
pub use table::{emit_result_table, read_result_table, ResultTable, TableMetadata};

use crate::error::{Error, Result};
use crate::estimator::{Record, SampleSet};

/// Parses a `z,x,y` samples file; the arm count is inferred from the largest
/// arm seen (binary when every entry is 0 or 1).
pub fn parse_samples_csv(text: &str) -> Result<SampleSet> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers: Vec<String> = r
        .headers()
        .map_err(|e| Error::Parse {
            context: "samples header".into(),
            message: e.to_string(),
        })?
        .iter()
        .map(String::from)
        .collect();
    if headers != ["z", "x", "y"] {
        return Err(Error::Parse {
            context: "samples header".into(),
            message: format!("expected `z,x,y`, found `{}`", headers.join(",")),
        });
    }
    let mut records = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let ctx = |m: String| Error::Parse {
            context: format!("samples line {}", i + 2),
            message: m,
        };
        let rec = rec.map_err(|e| ctx(e.to_string()))?;
        let z = rec[0].parse::<usize>().map_err(|e| ctx(format!("z: {e}")))?;
        let x = rec[1].parse::<usize>().map_err(|e| ctx(format!("x: {e}")))?;
        let y = rec[2].parse::<f64>().map_err(|e| ctx(format!("y: {e}")))?;
        records.push(Record::new(z, x, y));
    }
    let max_arm = records.iter().map(|r| r.z.max(r.x)).max().unwrap_or(0);
    Ok(if max_arm <= 1 {
        SampleSet::binary(records)
    } else {
        SampleSet::with_arms(records, max_arm + 1)
    })
}

/// Writes samples in the `z,x,y` format.
pub fn samples_to_csv(s: &SampleSet) -> String {
    let mut out = String::from("z,x,y\n");
    for r in &s.records {
        out.push_str(&format!("{},{},{}\n", r.z, r.x, r.y));
    }
    out
}
