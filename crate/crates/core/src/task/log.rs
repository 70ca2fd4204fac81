use std::fs::File;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::CameraMount;
use crate::sim::Action;

/// One line of a trajectory log: the state after an action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode: u64,
    pub step: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub action: Action,
    pub reward: f64,
    pub collided: bool,
    pub geodesic: f64,
    pub success: bool,
    pub done: bool,
    pub camera: CameraMount,
    pub goal: [f64; 2],
    pub world: String,
}

/// JSONL trajectory writer.
pub struct TrajectoryWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl TrajectoryWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(TrajectoryWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(f),
        })
    }

    pub fn write(&mut self, rec: &StepRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, rec)?;
        self.out.write_all(b"\n").map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Parses a JSONL trajectory log; blank lines are skipped.
pub fn read_log(r: impl BufRead, name: &str) -> Result<Vec<StepRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io(name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: name.into(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Groups records into per-episode runs, preserving order of first appearance.
pub fn split_episodes(records: &[StepRecord]) -> Vec<(u64, Vec<&StepRecord>)> {
    let mut out: Vec<(u64, Vec<&StepRecord>)> = Vec::new();
    for r in records {
        match out.iter_mut().find(|(id, _)| *id == r.episode) {
            Some((_, v)) => v.push(r),
            None => out.push((r.episode, vec![r])),
        }
    }
    out
}
