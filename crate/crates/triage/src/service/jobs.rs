//! Background training jobs. At most one runs at a time.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::Serialize;

use super::training::Published;

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobError {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobStatus {
    pub id: u64,
    pub state: JobState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<Published>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<JobError>,
}

#[derive(Default)]
struct Inner {
    jobs: BTreeMap<u64, JobStatus>,
    running: Option<u64>,
}

#[derive(Default)]
pub struct Jobs {
    inner: Mutex<Inner>,
}

impl Jobs {
    /// Registers a new running job, or returns the id of the one already
    /// running.
    pub fn start(&self) -> Result<u64, u64> {
        let mut g = self.inner.lock().expect("jobs lock");
        if let Some(id) = g.running {
            return Err(id);
        }
        let id = g.jobs.len() as u64 + 1;
        g.jobs.insert(
            id,
            JobStatus {
                id,
                state: JobState::Running,
                result: None,
                error: None,
            },
        );
        g.running = Some(id);
        Ok(id)
    }

    pub fn finish(&self, id: u64, outcome: Result<Published, JobError>) {
        let mut g = self.inner.lock().expect("jobs lock");
        if let Some(job) = g.jobs.get_mut(&id) {
            match outcome {
                Ok(p) => {
                    job.state = JobState::Succeeded;
                    job.result = Some(p);
                }
                Err(e) => {
                    job.state = JobState::Failed;
                    job.error = Some(e);
                }
            }
        }
        if g.running == Some(id) {
            g.running = None;
        }
    }

    pub fn get(&self, id: u64) -> Option<JobStatus> {
        self.inner.lock().expect("jobs lock").jobs.get(&id).cloned()
    }
}
