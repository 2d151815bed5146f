//! Output plumbing: primary payload routing, the run manifest sidecar and
//! round-trip numeric formatting.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use levysim::validation::McReport;

/// Record of one invocation, written next to file output so any result can
/// be reproduced from its manifest alone.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    /// Subcommand name.
    pub command: String,
    /// Every parameter of the run, including values resolved internally
    /// (such as a truncation level derived from an accuracy target).
    pub parameters: serde_json::Map<String, serde_json::Value>,
    /// Base seed.
    pub seed: u64,
    /// Tool version.
    pub version: String,
    /// Wall time of the run in seconds. Excluded from reproducibility
    /// comparisons; all other fields and the primary payload are exact.
    pub wall_time_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            parameters: serde_json::Map::new(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_seconds: 0.0,
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<serde_json::Value>) {
        self.parameters.insert(key.to_string(), value.into());
    }
}

/// Full round-trip decimal formatting: 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV rendering of validation reports with the statistic field quoted
/// (statistic names carry commas in their parameter lists).
pub fn reports_to_csv(reports: &[McReport]) -> String {
    let mut out = String::from("statistic,estimate,std_error,target,rule,pass\n");
    for r in reports {
        out.push_str(&format!(
            "\"{}\",{},{},{},{},{}\n",
            r.statistic,
            fmt_float(r.estimate),
            fmt_float(r.std_error),
            fmt_float(r.target),
            r.rule,
            r.pass
        ));
    }
    out
}

/// JSON rendering of validation reports.
pub fn reports_to_json(reports: &[McReport]) -> serde_json::Value {
    serde_json::Value::Array(reports.iter().map(report_to_json).collect())
}

pub fn report_to_json(r: &McReport) -> serde_json::Value {
    serde_json::json!({
        "statistic": r.statistic,
        "estimate": r.estimate,
        "std_error": r.std_error,
        "target": r.target,
        "rule": r.rule.to_string(),
        "pass": r.pass,
    })
}

/// Where and how a command run started, for manifest wall-time accounting.
pub struct RunClock {
    started: Instant,
}

impl RunClock {
    pub fn start() -> RunClock {
        RunClock {
            started: Instant::now(),
        }
    }

    pub fn seconds(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_os_string();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Routes the primary payload: to the output file with a manifest sidecar
/// when a path is given, to stdout otherwise.
pub fn emit(
    payload: &str,
    out: &Option<PathBuf>,
    manifest: &mut RunManifest,
    clock: &RunClock,
) -> std::io::Result<()> {
    match out {
        Some(path) => {
            fs::write(path, payload)?;
            manifest.wall_time_seconds = clock.seconds();
            let rendered =
                serde_json::to_string_pretty(manifest).expect("manifest serialization cannot fail");
            fs::write(manifest_path(path), rendered)?;
        }
        None => {
            print!("{payload}");
        }
    }
    Ok(())
}
