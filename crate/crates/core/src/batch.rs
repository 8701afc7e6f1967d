//! Many independent episodes at once.
//!
//! With the `parallel` feature (default) jobs run on the rayon pool;
//! without it they run one after another. Results keep job order either way,
//! and each episode is deterministic, so both paths return identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::datagen::Dataset;
use crate::error::SimError;
use crate::policies::SchedulerKind;
use crate::sim::{run_episode, EpisodeOutcome, SimConfig};

/// One episode to run.
#[derive(Clone, Debug)]
pub struct EpisodeJob<'a> {
    pub dataset: &'a Dataset,
    pub config: SimConfig,
    pub scheduler: SchedulerKind,
}

impl EpisodeJob<'_> {
    pub fn run(&self) -> Result<EpisodeOutcome, SimError> {
        run_episode(self.dataset, &self.config, self.scheduler)
    }
}

/// Runs every job on the current thread.
pub fn run_sequential(jobs: &[EpisodeJob<'_>]) -> Vec<Result<EpisodeOutcome, SimError>> {
    jobs.iter().map(EpisodeJob::run).collect()
}

/// Runs every job, in parallel when the `parallel` feature is on.
pub fn run_batch(jobs: &[EpisodeJob<'_>]) -> Vec<Result<EpisodeOutcome, SimError>> {
    #[cfg(feature = "parallel")]
    {
        jobs.par_iter().map(EpisodeJob::run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_sequential(jobs)
    }
}

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
pub fn map_items<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_instance, ScenarioConfig};
    use crate::policies::AllocatorKind;

    #[test]
    fn batch_matches_sequential() {
        let sets: Vec<Dataset> = (0..4).map(|s| gen_instance(&ScenarioConfig::micro(s)).unwrap()).collect();
        let jobs: Vec<EpisodeJob> = sets
            .iter()
            .enumerate()
            .map(|(i, ds)| EpisodeJob {
                dataset: ds,
                config: SimConfig::with_allocator(AllocatorKind::Soft, i as u64),
                scheduler: SchedulerKind::Bias,
            })
            .collect();
        let a: Vec<_> = run_batch(&jobs).into_iter().map(|r| r.unwrap().log).collect();
        let b: Vec<_> = run_sequential(&jobs).into_iter().map(|r| r.unwrap().log).collect();
        assert_eq!(a, b);
    }
}
