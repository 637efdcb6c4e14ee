//! Per-stage run logs. Each subcommand writes `logs/<stage>.json` holding
//! everything needed to re-execute it: the resolved config, the seed, and
//! the stage's input and output paths relative to the run directory. The
//! two time fields are the only entries that vary between identical runs.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::PipelineConfig;
use crate::CliError;

#[derive(Serialize)]
pub struct RunLog<'a> {
    pub tool: &'static str,
    pub versions: Versions,
    pub command: &'a str,
    pub seed: u64,
    pub config: &'a PipelineConfig,
    /// Inputs the stage read, relative to the run directory where possible.
    pub inputs: Vec<String>,
    /// Artifacts the stage wrote, relative to the run directory.
    pub outputs: Vec<String>,
    pub started_utc: String,
    pub wall_time_s: f64,
}

#[derive(Serialize)]
pub struct Versions {
    pub cli: &'static str,
    pub core: &'static str,
}

/// Collects timing plus the stage's input/output lists as it runs.
pub struct RunRecorder {
    out_dir: PathBuf,
    started: Instant,
    started_utc: String,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

impl RunRecorder {
    pub fn start(out_dir: &Path) -> RunRecorder {
        RunRecorder {
            out_dir: out_dir.to_path_buf(),
            started: Instant::now(),
            started_utc: utc_now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Remembers an input path, trimmed to the run directory when inside it.
    pub fn input(&mut self, path: &Path) {
        let rel = self.relative(path);
        self.inputs.push(rel);
    }

    pub fn output(&mut self, path: &Path) {
        let rel = self.relative(path);
        self.outputs.push(rel);
    }

    fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.out_dir).unwrap_or(path).display().to_string()
    }

    /// Writes `logs/<command>.json`. Called once, after every output of the
    /// stage landed.
    pub fn finish(self, command: &str, cfg: &PipelineConfig) -> Result<(), CliError> {
        let log = RunLog {
            tool: "deskaid",
            versions: Versions { cli: env!("CARGO_PKG_VERSION"), core: deskaid_core::VERSION },
            command,
            seed: cfg.seed,
            config: cfg,
            inputs: self.inputs,
            outputs: self.outputs,
            started_utc: self.started_utc,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        let dir = self.out_dir.join("logs");
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(format!("{command}.json"));
        let mut text = serde_json::to_string_pretty(&log).expect("run log serializes");
        text.push('\n');
        std::fs::write(&path, text)
            .map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))?;
        Ok(())
    }
}

/// Current time as `YYYY-MM-DDTHH:MM:SSZ`, computed from the Unix clock
/// with the standard civil-from-days conversion.
pub fn utc_now() -> String {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    format_utc(secs)
}

pub fn format_utc(unix_secs: u64) -> String {
    let days = unix_secs / 86_400;
    let rem = unix_secs % 86_400;
    let (h, m, s) = (rem / 3600, (rem / 60) % 60, rem % 60);
    let (y, mo, d) = civil_from_days(days as i64);
    format!("{y:04}-{mo:02}-{d:02}T{h:02}:{m:02}:{s:02}Z")
}

/// Gregorian date from days since 1970-01-01 (Howard Hinnant's algorithm).
fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = if z >= 0 { z } else { z - 146_096 } / 146_097;
    let doe = (z - era * 146_097) as u64;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let y = yoe as i64 + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (if m <= 2 { y + 1 } else { y }, m, d)
}
