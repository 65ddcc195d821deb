use rayon::prelude::*;

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::interaction::{rollout_episode, ActionSource, EpisodeTrajectory};
use crate::seeding::{episode_id, stream, Purpose};

/// Builds a fresh action source for each episode.
pub type SourceFactory<'a> = dyn Fn() -> Box<dyn ActionSource + 'a> + Sync + 'a;

/// Rolls out `count` episodes with stream indices starting at `first`.
///
/// Episode `i` draws its chain, start pose, noise and actions from its own
/// stream, so the dataset is the same for any worker count. Failed episodes
/// are dropped and replaced by the next unused indices.
pub fn collect_dataset(
    source: &SourceFactory,
    config: &ExperimentConfig,
    run_seed: u64,
    purpose: Purpose,
    first: u64,
    count: usize,
    pool: &rayon::ThreadPool,
) -> Result<Vec<EpisodeTrajectory>> {
    let allowed = (count as f64 * config.data.max_failure_rate).floor() as usize;
    let config_hash = config.config_hash();
    let mut episodes = Vec::with_capacity(count);
    let mut failures = 0usize;
    let mut next = first;
    while episodes.len() < count {
        let wanted = (count - episodes.len()) as u64;
        let batch: Vec<Result<EpisodeTrajectory>> = pool.install(|| {
            (next..next + wanted)
                .into_par_iter()
                .map(|i| {
                    let mut rng = stream(run_seed, purpose, i);
                    let model = config.chain.sample_model(&mut rng)?;
                    let mut actions = source();
                    let mut ep = rollout_episode(
                        &model,
                        actions.as_mut(),
                        config.chain.pushes,
                        config.chain.noise_std,
                        &config.push,
                        &mut rng,
                    )?;
                    ep.seed = episode_id(purpose, i);
                    ep.config_hash = Some(config_hash.clone());
                    Ok(ep)
                })
                .collect()
        });
        next += wanted;
        for r in batch {
            match r {
                Ok(ep) => episodes.push(ep),
                Err(Error::EpisodeFailure(_)) => failures += 1,
                Err(e) => return Err(e),
            }
        }
        if failures > allowed {
            return Err(Error::CollectionStalled { failures, requested: count });
        }
    }
    Ok(episodes)
}
