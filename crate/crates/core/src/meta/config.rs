use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimator::{PredictorConfig, TrainSchedule};
use crate::explorer::{PolicyConfig, PpoConfig};
use crate::interaction::PushParams;
use crate::sim::WIDE_JOINT_LIMIT;
use crate::ChainModel;

/// Sampling ranges and observation model of the chains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub links: usize,
    pub mass_range: [f64; 2],
    pub mu_range: [f64; 2],
    pub length_range: [f64; 2],
    pub joint_limit: f64,
    pub noise_std: f64,
    /// Pushes per episode.
    pub pushes: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            links: 2,
            mass_range: [0.1, 1.0],
            mu_range: [0.5, 1.0],
            length_range: [0.1, 0.15],
            joint_limit: WIDE_JOINT_LIMIT,
            noise_std: 0.01,
            pushes: 5,
        }
    }
}

impl ChainConfig {
    /// Draws link lengths, masses and friction independently and uniformly.
    pub fn sample_model(&self, rng: &mut impl Rng) -> Result<ChainModel> {
        let draw = |rng: &mut dyn rand::RngCore, r: [f64; 2]| rng.random_range(r[0]..r[1]);
        let lengths = (0..self.links).map(|_| draw(rng, self.length_range)).collect();
        let masses = (0..self.links).map(|_| draw(rng, self.mass_range)).collect();
        let mu = draw(rng, self.mu_range);
        ChainModel::new(lengths, masses, mu, self.joint_limit)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub stage0_episodes: usize,
    /// Fresh episodes collected per meta-iteration (and for the
    /// doubled-data random baseline).
    pub meta_episodes: usize,
    pub validation_episodes: usize,
    pub test_episodes: usize,
    /// Base seed of the held-out test stream, shared by every run so that
    /// models from different runs face the same test chains.
    pub test_seed: u64,
    pub max_failure_rate: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            stage0_episodes: 2000,
            meta_episodes: 2000,
            validation_episodes: 200,
            test_episodes: 500,
            test_seed: 0x7E57,
            max_failure_rate: 0.2,
        }
    }
}

/// Each meta-iteration owns a block of random streams; this bounds them.
pub const MAX_META_ITERATIONS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub workers: usize,
    pub meta_iterations: usize,
    pub chain: ChainConfig,
    pub push: PushParams,
    pub data: DataConfig,
    pub predictor: PredictorConfig,
    /// Schedule for the random-policy predictor trained from scratch.
    pub stage0_schedule: TrainSchedule,
    /// Schedule for retraining on each fresh dataset.
    pub retrain_schedule: TrainSchedule,
    pub policy: PolicyConfig,
    pub ppo: PpoConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            workers: 16,
            meta_iterations: 2,
            chain: ChainConfig::default(),
            push: PushParams::default(),
            data: DataConfig::default(),
            predictor: PredictorConfig::default(),
            stage0_schedule: TrainSchedule::default(),
            retrain_schedule: TrainSchedule { total_steps: 25_000, lr0: 0.05, halving_period: 8_300, ..TrainSchedule::default() },
            policy: PolicyConfig::default(),
            ppo: PpoConfig::default(),
        }
    }
}

fn range_ok(r: [f64; 2]) -> bool {
    r[0].is_finite() && r[1].is_finite() && r[0] < r[1]
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let c = &self.chain;
        let problems = [
            (!(2..=3).contains(&c.links), "chain.links must be 2 or 3"),
            (!range_ok(c.mass_range) || c.mass_range[0] <= 0.0, "chain.mass_range must be positive with lo < hi"),
            (!range_ok(c.mu_range) || c.mu_range[0] <= 0.0, "chain.mu_range must be positive with lo < hi"),
            (!range_ok(c.length_range) || c.length_range[0] <= 0.0, "chain.length_range must be positive with lo < hi"),
            (c.noise_std < 0.0, "chain.noise_std must be non-negative"),
            (self.data.stage0_episodes == 0, "data.stage0_episodes must be at least 1"),
            (self.data.test_episodes == 0, "data.test_episodes must be at least 1"),
            (self.workers == 0, "workers must be at least 1"),
            (self.meta_iterations > MAX_META_ITERATIONS, "meta_iterations must be at most 64"),
            (!(0.0..1.0).contains(&self.data.max_failure_rate), "data.max_failure_rate must lie in [0, 1)"),
        ];
        match problems.iter().find(|(bad, _)| *bad) {
            Some((_, msg)) => Err(Error::InvalidConfig((*msg).into())),
            None => Ok(()),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Digest of the configuration. The worker count is left out because
    /// it never changes results.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.workers = 0;
        digest(&serde_json::to_string(&c).expect("config serializes"))
    }

    /// Digest of everything that shapes the test distribution: chain
    /// ranges, push model and the test stream. Runs that differ only in how
    /// they train share it and can be compared.
    pub fn environment_hash(&self) -> String {
        let key = (&self.chain, &self.push, self.data.test_seed);
        digest(&serde_json::to_string(&key).expect("config serializes"))
    }
}

fn digest(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}
