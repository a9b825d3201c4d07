//! Detection jobs started by "find parking": one per block, each running on
//! its own blocking worker and publishing events as they are produced.

use std::collections::HashMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use parkwatch_core::detection::{run_detection_with, select_reference, DetectionConfig, LotStatus};
use parkwatch_core::events::{EventWriter, OccupancyEvent};
use parkwatch_core::geometry::parse_slot_map;
use parkwatch_core::store::VideoRecord;
use parkwatch_core::video::open_sequence;
use rand::RngCore;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Default)]
struct Progress {
    state: Option<JobState>,
    events: Vec<OccupancyEvent>,
    final_status: Option<LotStatus>,
    error: Option<String>,
}

#[derive(Debug)]
pub struct Job {
    pub job_id: String,
    pub owner: String,
    pub block_id: String,
    pub record_id: u64,
    progress: RwLock<Progress>,
}

/// A consistent read of a job's progress.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobView {
    pub job_id: String,
    pub block_id: String,
    pub record_id: u64,
    pub state: JobState,
    /// Events with 1-based index greater than the requested `since`.
    pub events: Vec<OccupancyEvent>,
    /// Index of the last event in this page; pass back as `since`.
    pub last_index: usize,
    #[serde(rename = "final", skip_serializing_if = "Option::is_none")]
    pub final_status: Option<LotStatus>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Job {
    fn new(owner: &str, record: &VideoRecord) -> Self {
        let mut id = [0u8; 16];
        rand::rngs::OsRng.fill_bytes(&mut id);
        Self {
            job_id: hex::encode(id),
            owner: owner.to_owned(),
            block_id: record.block_id.clone(),
            record_id: record.record_id,
            progress: RwLock::new(Progress {
                state: Some(JobState::Pending),
                ..Progress::default()
            }),
        }
    }

    fn update(&self, f: impl FnOnce(&mut Progress)) {
        f(&mut self.progress.write().unwrap_or_else(|e| e.into_inner()));
    }

    pub fn state(&self) -> JobState {
        self.progress
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .state
            .unwrap_or(JobState::Pending)
    }

    pub fn final_status(&self) -> Option<LotStatus> {
        self.progress
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .final_status
            .clone()
    }

    pub fn view(&self, since: usize) -> JobView {
        let p = self.progress.read().unwrap_or_else(|e| e.into_inner());
        let events: Vec<_> = p.events.iter().skip(since).copied().collect();
        JobView {
            job_id: self.job_id.clone(),
            block_id: self.block_id.clone(),
            record_id: self.record_id,
            state: p.state.unwrap_or(JobState::Pending),
            last_index: since.min(p.events.len()) + events.len(),
            events,
            final_status: p.final_status.clone(),
            error: p.error.clone(),
        }
    }
}

#[derive(Debug, Default)]
pub struct JobTable {
    jobs: RwLock<HashMap<String, Arc<Job>>>,
    latest_batch: RwLock<HashMap<String, Vec<String>>>,
}

impl JobTable {
    pub fn get(&self, job_id: &str) -> Option<Arc<Job>> {
        self.jobs
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(job_id)
            .cloned()
    }

    /// Registers one pending job per record and remembers them as the owner's latest batch.
    pub fn create_batch(&self, owner: &str, records: &[VideoRecord]) -> Vec<Arc<Job>> {
        let batch: Vec<Arc<Job>> = records.iter().map(|r| Arc::new(Job::new(owner, r))).collect();
        let mut jobs = self.jobs.write().unwrap_or_else(|e| e.into_inner());
        for job in &batch {
            jobs.insert(job.job_id.clone(), job.clone());
        }
        self.latest_batch
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(owner.to_owned(), batch.iter().map(|j| j.job_id.clone()).collect());
        batch
    }

    /// Jobs from the owner's most recent find-parking request.
    pub fn latest_batch(&self, owner: &str) -> Option<Vec<Arc<Job>>> {
        let ids = self
            .latest_batch
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(owner)
            .cloned()?;
        Some(ids.iter().filter_map(|id| self.get(id)).collect())
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_owned()
    } else {
        base.join(path)
    }
}

/// Runs detection for the job's video record, then marks it done or failed.
/// Relative paths resolve against `base`. When `artifacts` is set, the event
/// log and final status are also written under `artifacts/<job_id>/`.
pub fn run_job(job: &Job, record: &VideoRecord, cfg: &DetectionConfig, base: &Path, artifacts: Option<&Path>) {
    job.update(|p| p.state = Some(JobState::Running));
    match execute(job, record, cfg, base, artifacts) {
        Ok(final_status) => job.update(|p| {
            p.final_status = Some(final_status);
            p.state = Some(JobState::Done);
        }),
        Err(message) => {
            tracing::warn!(job = %job.job_id, block = %job.block_id, "detection job failed: {message}");
            job.update(|p| {
                p.error = Some(message);
                p.state = Some(JobState::Failed);
            })
        }
    }
}

fn execute(
    job: &Job,
    record: &VideoRecord,
    cfg: &DetectionConfig,
    base: &Path,
    artifacts: Option<&Path>,
) -> Result<LotStatus, String> {
    let map_path = resolve(base, &record.slot_map_path);
    let text = fs::read_to_string(&map_path).map_err(|e| format!("{}: {e}", map_path.display()))?;
    let map = parse_slot_map(&text).map_err(|e| format!("{}: {e}", map_path.display()))?;
    let seq = open_sequence(&resolve(base, &record.frames_path)).map_err(|e| e.to_string())?;
    let reference =
        select_reference(&seq, Some(&resolve(base, &record.reference_path))).map_err(|e| e.to_string())?;

    let mut log = match artifacts {
        Some(dir) => {
            let dir = dir.join(&job.job_id);
            fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
            let f = fs::File::create(dir.join("events.jsonl")).map_err(|e| e.to_string())?;
            Some((dir, EventWriter::new(BufWriter::new(f))))
        }
        None => None,
    };
    let mut log_error = None;
    let report = run_detection_with(&seq, &map, &reference, cfg, |ev, _, _| {
        if let Some((_, w)) = log.as_mut() {
            if let Err(e) = w.append(ev) {
                log_error.get_or_insert(e.to_string());
            }
        }
        job.update(|p| p.events.push(*ev));
    })
    .map_err(|e| e.to_string())?;
    if let Some(e) = log_error {
        return Err(e);
    }
    if let Some((dir, _)) = log {
        let json = serde_json::to_string(&report.final_status).expect("status serialization is infallible");
        fs::write(dir.join("final.json"), json).map_err(|e| e.to_string())?;
    }
    Ok(report.final_status)
}
