//! Replicated trials fanned out over a work queue.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use doseopt_core::design::DesignConfig;
use doseopt_core::rng::child_seed;

use crate::error::Result;
use crate::metrics::{aggregate, summarize, ReplicateSummary, StudyMetrics};
use crate::scenario::Truth;
use crate::trial::{run_trial_until, DesignVariant, RunUntil, TrialResult};

#[derive(Debug, Clone)]
pub struct StudyOptions {
    pub n_reps: usize,
    pub seed: u64,
    /// Worker threads; 0 uses the available parallelism.
    pub workers: usize,
    pub keep_traces: bool,
}

#[derive(Debug, Clone)]
pub struct Study {
    pub metrics: StudyMetrics,
    pub replicates: Vec<ReplicateSummary>,
    /// Present when traces were requested, ordered by replicate.
    pub traces: Vec<TrialResult>,
}

/// Seed of replicate `rep`; every design arm uses the same one.
pub fn replicate_seed(study_seed: u64, rep: u64) -> u64 {
    child_seed(study_seed, rep)
}

pub fn run_replicate(truth: &Truth, design: DesignVariant, config: &DesignConfig, study_seed: u64, rep: u64) -> Result<TrialResult> {
    let seed = replicate_seed(study_seed, rep);
    let (state, screened) = run_trial_until(truth, config, seed, RunUntil::Finished)?;
    Ok(TrialResult {
        scenario: truth.scenario.clone(),
        design,
        replicate: rep,
        study_seed,
        seed,
        screened,
        state,
    })
}

fn worker_count(requested: usize, jobs: usize) -> usize {
    let n = if requested == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        requested
    };
    n.clamp(1, jobs.max(1))
}

/// Runs `opts.n_reps` replicates of `config` and aggregates their metrics.
pub fn run_study(truth: &Truth, design: DesignVariant, config: &DesignConfig, opts: &StudyOptions) -> Result<Study> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(ReplicateSummary, Option<TrialResult>)>> = Mutex::new(Vec::with_capacity(opts.n_reps));
    let failure: Mutex<Option<crate::error::SimError>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..worker_count(opts.workers, opts.n_reps) {
            scope.spawn(|| loop {
                let rep = next.fetch_add(1, Ordering::Relaxed);
                if rep >= opts.n_reps || failure.lock().unwrap().is_some() {
                    break;
                }
                match run_replicate(truth, design, config, opts.seed, rep as u64) {
                    Ok(result) => {
                        let summary = summarize(truth, &result.state, rep as u64);
                        tracing::debug!(rep, digest = %result.digest(), "replicate finished");
                        let keep = opts.keep_traces.then_some(result);
                        results.lock().unwrap().push((summary, keep));
                    }
                    Err(e) => {
                        failure.lock().unwrap().get_or_insert(e);
                        break;
                    }
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(s, _)| s.replicate);
    let (replicates, traces): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let traces: Vec<TrialResult> = traces.into_iter().flatten().collect();
    let metrics = aggregate(truth, design, config.p_t, config.n_max(), opts.seed, &replicates);
    Ok(Study {
        metrics,
        replicates,
        traces,
    })
}

/// Recomputes study metrics from saved trial results.
pub fn metrics_from_traces(traces: &[TrialResult]) -> Result<StudyMetrics> {
    let first = traces
        .first()
        .ok_or_else(|| crate::error::SimError::Stalled("no traces to summarize".into()))?;
    let truth = Truth::new(first.scenario.clone(), first.state.schema.clone())?;
    let summaries: Vec<ReplicateSummary> = traces.iter().map(|t| summarize(&truth, &t.state, t.replicate)).collect();
    let config = &first.state.config;
    Ok(aggregate(&truth, first.design, config.p_t, config.n_max(), first.study_seed, &summaries))
}
