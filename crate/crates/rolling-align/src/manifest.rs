//! JSON file schemas binding the pipeline stages together on disk:
//! schedules, snippet-directory manifests, alignment solutions and metric
//! reports, plus the schedule hash that ties a snippet directory to the
//! exact schedule it was produced from.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coalign::{AlignmentSolution, CoalignConfig};
use crate::depth::{AffineParams, DepthSpace};
use crate::error::{Error, Result};
use crate::scheduler::{SnippetSchedule, SnippetSpec};

pub const FORMAT_VERSION: &str = "1";

pub fn tool_version() -> String {
    format!("rolling-align {}", env!("CARGO_PKG_VERSION"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let r = BufReader::new(File::open(path)?);
    serde_json::from_reader(r).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Canonical hash of a schedule's content (independent of JSON layout).
pub fn schedule_sha256(schedule: &SnippetSchedule) -> String {
    let canonical = serde_json::to_string(schedule.snippets()).expect("schedule serializes");
    let mut hasher = Sha256::new();
    hasher.update(schedule.frame_count().to_le_bytes());
    hasher.update(schedule.snippet_len().to_le_bytes());
    hasher.update(canonical.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleFile {
    pub version: String,
    pub frame_count: usize,
    pub snippet_len: usize,
    pub stride: usize,
    pub snippets: Vec<SnippetSpec>,
}

impl ScheduleFile {
    pub fn from_schedule(schedule: &SnippetSchedule) -> Self {
        Self {
            version: FORMAT_VERSION.to_string(),
            frame_count: schedule.frame_count(),
            snippet_len: schedule.snippet_len(),
            stride: schedule.stride(),
            snippets: schedule.snippets().to_vec(),
        }
    }

    pub fn into_schedule(self) -> Result<SnippetSchedule> {
        SnippetSchedule::from_specs(self.snippets, self.frame_count, self.snippet_len, self.stride)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestSnippet {
    pub id: usize,
    pub file: String,
    pub dilation: usize,
    pub frames: Vec<usize>,
}

/// Manifest of a snippet directory: declares shapes, the schedule hash and
/// one NPY file per snippet.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub tool: String,
    pub frame_count: usize,
    pub height: usize,
    pub width: usize,
    pub space_tag: DepthSpace,
    pub snippet_len: usize,
    pub schedule_sha256: String,
    pub seed: u64,
    pub snippets: Vec<ManifestSnippet>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionEntry {
    pub snippet_id: usize,
    pub scale: f64,
    pub shift: f64,
}

/// On-disk form of an [`AlignmentSolution`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionFile {
    pub version: String,
    pub final_objective: f64,
    pub clamped_pixels: u64,
    pub params: Vec<SolutionEntry>,
    pub config: CoalignConfig,
}

impl SolutionFile {
    pub fn from_solution(solution: &AlignmentSolution) -> Self {
        Self {
            version: FORMAT_VERSION.to_string(),
            final_objective: solution.final_objective,
            clamped_pixels: solution.clamped_pixels,
            params: solution
                .params
                .iter()
                .enumerate()
                .map(|(id, p)| SolutionEntry {
                    snippet_id: id,
                    scale: p.scale,
                    shift: p.shift,
                })
                .collect(),
            config: solution.config.clone(),
        }
    }
}

/// Hidden corruption parameters emitted by the synthetic generator for
/// test assertions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrueParamsFile {
    pub version: String,
    pub params: Vec<SolutionEntry>,
}

impl TrueParamsFile {
    pub fn new(params: &[AffineParams]) -> Self {
        Self {
            version: FORMAT_VERSION.to_string(),
            params: params
                .iter()
                .enumerate()
                .map(|(id, p)| SolutionEntry {
                    snippet_id: id,
                    scale: p.scale,
                    shift: p.shift,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::build_schedule;

    #[test]
    fn schedule_round_trips_through_json() {
        let (schedule, _) = build_schedule(12, 3, &[1, 4], 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("schedule.json");
        write_json(&path, &ScheduleFile::from_schedule(&schedule)).unwrap();
        let loaded: ScheduleFile = read_json(&path).unwrap();
        let back = loaded.into_schedule().unwrap();
        assert_eq!(back, schedule);
        assert_eq!(schedule_sha256(&back), schedule_sha256(&schedule));
    }

    #[test]
    fn schedule_hash_tracks_content() {
        let (a, _) = build_schedule(12, 3, &[1], 1).unwrap();
        let (b, _) = build_schedule(12, 3, &[2], 1).unwrap();
        assert_ne!(schedule_sha256(&a), schedule_sha256(&b));
    }
}
