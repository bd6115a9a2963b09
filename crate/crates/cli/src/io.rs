//! Artifact formats: trajectory and table CSVs, JSON reports.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use pool_core::stats::StatReport;
use pool_core::traj::QuantileTable;
use pool_core::trajectory::{Event, EventKind, Trajectory};
use serde::Serialize;

use crate::error::{CliError, Result};

pub const TRAJECTORY_HEADER: &str = "time,kind,mass,radius,rounds,flag";
pub const QUANTILE_HEADER: &str = "time,q10,q50,q90,min,max";

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

/// Writes `text` to `path` in one go.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Trajectory as CSV. Floats use the shortest decimal that parses back to the
/// same double; rounds are `;`-separated; flag is `exploded` or empty.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::with_capacity(64 * (traj.events.len() + 1));
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for e in &traj.events {
        let rounds: Vec<String> = e.rounds.iter().map(u64::to_string).collect();
        let flag = if e.exploded { "exploded" } else { "" };
        out.push_str(&format!(
            "{:?},{},{},{:?},{},{}\n",
            e.time,
            e.kind.as_str(),
            e.mass_after,
            e.radius_after,
            rounds.join(";"),
            flag
        ));
    }
    out
}

pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    write_text(path, &trajectory_csv(traj))
}

/// Reads a trajectory written by [`write_trajectory_csv`]. The horizon is not
/// part of the file and comes from the run manifest.
pub fn read_trajectory_csv(path: &Path, horizon: f64) -> Result<Trajectory> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let bad = |line: usize, msg: String| CliError::Format { path: path.to_path_buf(), msg: format!("line {line}: {msg}") };
    let mut traj = Trajectory::new(horizon);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if i == 0 {
            if line != TRAJECTORY_HEADER {
                return Err(bad(1, format!("expected header {TRAJECTORY_HEADER:?}")));
            }
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            return Err(bad(i + 1, format!("expected 6 columns, got {}", cols.len())));
        }
        let real = |s: &str| s.parse::<f64>().map_err(|e| bad(i + 1, format!("{s:?}: {e}")));
        let int = |s: &str| s.parse::<u64>().map_err(|e| bad(i + 1, format!("{s:?}: {e}")));
        let kind = EventKind::parse(cols[1]).map_err(|e| bad(i + 1, e.to_string()))?;
        let rounds = if cols[4].is_empty() {
            Vec::new()
        } else {
            cols[4].split(';').map(int).collect::<Result<Vec<u64>>>()?
        };
        let exploded = match cols[5] {
            "" => false,
            "exploded" => true,
            other => return Err(bad(i + 1, format!("unknown flag {other:?}"))),
        };
        let mut event = Event::new(real(cols[0])?, kind, int(cols[2])?, rounds, exploded);
        event.radius_after = real(cols[3])?;
        traj.push(event);
    }
    if traj.events.is_empty() {
        return Err(bad(1, "no events".into()));
    }
    Ok(traj)
}

pub fn quantile_csv(q: &QuantileTable) -> String {
    let mut out = String::from(QUANTILE_HEADER);
    out.push('\n');
    for i in 0..q.times.len() {
        out.push_str(&format!(
            "{:?},{:?},{:?},{:?},{:?},{:?}\n",
            q.times[i], q.q10[i], q.q50[i], q.q90[i], q.min[i], q.max[i]
        ));
    }
    out
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

/// One compact JSON report per line.
pub fn write_jsonl(path: &Path, reports: &[StatReport]) -> Result<()> {
    let mut w = create(path)?;
    for r in reports {
        let line = serde_json::to_string(r).map_err(|e| CliError::Runtime(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Creates `dir` and proves it writable with a probe file.
pub fn ensure_writable(dir: &Path) -> Result<()> {
    let fail = |source| CliError::OutputDir { path: dir.to_path_buf(), source };
    std::fs::create_dir_all(dir).map_err(fail)?;
    let probe = dir.join(".write-probe");
    File::create(&probe).map_err(fail)?;
    std::fs::remove_file(&probe).map_err(fail)
}
