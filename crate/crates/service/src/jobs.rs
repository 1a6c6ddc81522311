//! Mutations run as jobs: one FIFO queue per trial keeps writes to a trial in
//! submission order, and a shared semaphore bounds how many model fits run
//! at once.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde_json::Value;
use tokio::sync::{mpsc, oneshot, Semaphore};

use crate::error::ErrorBody;
use crate::wire::{JobStatus, JobView};

/// HTTP status and body a finished job answers with.
#[derive(Debug, Clone, PartialEq)]
pub struct JobOutput {
    pub status: u16,
    pub body: Value,
}

type Work = Box<dyn FnOnce() -> JobOutput + Send + 'static>;

struct Queued {
    job_id: String,
    work: Work,
    reply: oneshot::Sender<JobOutput>,
}

/// Finished jobs kept for polling before the oldest are forgotten.
const RETAINED_JOBS: usize = 10_000;

pub struct Jobs {
    views: Mutex<HashMap<String, JobView>>,
    queues: Mutex<HashMap<String, mpsc::UnboundedSender<Queued>>>,
    permits: Arc<Semaphore>,
}

pub fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl Jobs {
    pub fn new(workers: usize) -> Arc<Self> {
        Arc::new(Jobs {
            views: Mutex::new(HashMap::new()),
            queues: Mutex::new(HashMap::new()),
            permits: Arc::new(Semaphore::new(workers.max(1))),
        })
    }

    pub fn get(&self, job_id: &str) -> Option<JobView> {
        self.views.lock().unwrap().get(job_id).cloned()
    }

    fn update(&self, job_id: &str, f: impl FnOnce(&mut JobView)) {
        if let Some(v) = self.views.lock().unwrap().get_mut(job_id) {
            f(v);
        }
    }

    fn prune(views: &mut HashMap<String, JobView>) {
        if views.len() < RETAINED_JOBS {
            return;
        }
        let mut done: Vec<(u64, String)> = views
            .values()
            .filter_map(|v| v.finished_ms.map(|t| (t, v.job_id.clone())))
            .collect();
        done.sort();
        for (_, id) in done.iter().take(views.len() / 2) {
            views.remove(id);
        }
    }

    /// Queues `work` behind earlier jobs of the same trial.
    pub fn submit(
        self: &Arc<Self>,
        trial_id: &str,
        kind: &str,
        work: impl FnOnce() -> JobOutput + Send + 'static,
    ) -> (String, oneshot::Receiver<JobOutput>) {
        let job_id = uuid::Uuid::new_v4().to_string();
        {
            let mut views = self.views.lock().unwrap();
            Self::prune(&mut views);
            views.insert(
                job_id.clone(),
                JobView {
                    job_id: job_id.clone(),
                    trial_id: trial_id.to_string(),
                    kind: kind.to_string(),
                    status: JobStatus::Queued,
                    submitted_ms: now_ms(),
                    finished_ms: None,
                    http_status: None,
                    result: None,
                    error: None,
                },
            );
        }
        let (reply, rx) = oneshot::channel();
        let queued = Queued {
            job_id: job_id.clone(),
            work: Box::new(work),
            reply,
        };
        let mut queues = self.queues.lock().unwrap();
        let tx = queues
            .entry(trial_id.to_string())
            .or_insert_with(|| self.spawn_worker())
            .clone();
        drop(queues);
        if tx.send(queued).is_err() {
            self.update(&job_id, |v| {
                v.status = JobStatus::Failed;
                v.finished_ms = Some(now_ms());
            });
        }
        (job_id, rx)
    }

    fn spawn_worker(self: &Arc<Self>) -> mpsc::UnboundedSender<Queued> {
        let (tx, mut rx) = mpsc::unbounded_channel::<Queued>();
        let jobs = Arc::clone(self);
        tokio::spawn(async move {
            while let Some(q) = rx.recv().await {
                let permit = jobs.permits.clone().acquire_owned().await.expect("semaphore is never closed");
                jobs.update(&q.job_id, |v| v.status = JobStatus::Running);
                let out = match tokio::task::spawn_blocking(q.work).await {
                    Ok(out) => out,
                    Err(e) => JobOutput {
                        status: 500,
                        body: serde_json::to_value(ErrorBody {
                            code: "internal".into(),
                            message: format!("job panicked: {e}"),
                            field_paths: Vec::new(),
                        })
                        .expect("serializes"),
                    },
                };
                drop(permit);
                jobs.update(&q.job_id, |v| {
                    let ok = out.status < 400;
                    v.status = if ok { JobStatus::Succeeded } else { JobStatus::Failed };
                    v.finished_ms = Some(now_ms());
                    v.http_status = Some(out.status);
                    if ok {
                        v.result = Some(out.body.clone());
                    } else {
                        v.error = serde_json::from_value(out.body.clone()).ok();
                    }
                });
                let _ = q.reply.send(out);
            }
        });
        tx
    }
}
