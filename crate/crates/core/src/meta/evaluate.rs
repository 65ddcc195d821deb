use std::fmt::Write as _;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::collect::collect_dataset;
use super::config::{ChainConfig, ExperimentConfig};
use crate::error::Result;
use crate::estimator::{encode_dataset, l1_distance, per_step_l1, PredictorNet};
use crate::explorer::{PolicyNet, PolicySource};
use crate::interaction::{ActionSource, EpisodeTrajectory, UniformRandom};
use crate::seeding::Purpose;

/// A predictor paired with the policy that gathers its evidence; `None`
/// means uniformly random pushes.
pub struct ModelEntry<'a> {
    pub name: String,
    pub predictor: &'a PredictorNet,
    pub policy: Option<&'a PolicyNet>,
    pub deterministic: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub name: String,
    pub source: String,
    /// 100 × mean final-step L1 error.
    pub error_pct: f64,
    /// 100 × mean L1 error after each push.
    pub per_step_pct: Vec<f64>,
    pub episodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub environment_hash: String,
    pub test_seed: u64,
    pub test_indices: [u64; 2],
    pub rows: Vec<ModelScore>,
}

impl EvaluationReport {
    pub fn row(&self, name: &str) -> Option<&ModelScore> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_csv(&self) -> Result<String> {
        let steps = self.rows.iter().map(|r| r.per_step_pct.len()).max().unwrap_or(0);
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = ["model", "source", "error_pct", "episodes"].map(String::from).to_vec();
        header.extend((1..=steps).map(|t| format!("step{t}_pct")));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.name.clone(), r.source.clone(), format!("{:.6}", r.error_pct), r.episodes.to_string()];
            rec.extend(r.per_step_pct.iter().map(|v| format!("{v:.6}")));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "test set: seed {} indices {}..{} (environment {})",
            self.test_seed, self.test_indices[0], self.test_indices[1], self.environment_hash
        );
        let _ = writeln!(out, "{:<10} {:<24} {:>10} {:>9}  per-step error %", "model", "source", "error %", "episodes");
        for r in &self.rows {
            let curve: Vec<String> = r.per_step_pct.iter().map(|v| format!("{v:.2}")).collect();
            let _ = writeln!(
                out,
                "{:<10} {:<24} {:>10.2} {:>9}  {}",
                r.name,
                r.source,
                r.error_pct,
                r.episodes,
                curve.join(" ")
            );
        }
        out
    }
}

fn score(name: &str, source: &str, predictor: Option<&PredictorNet>, episodes: &[EpisodeTrajectory]) -> Result<ModelScore> {
    let per_step = match predictor {
        Some(net) => per_step_l1(net, &encode_dataset(episodes))?,
        None => {
            let steps = episodes.first().map_or(0, |e| e.pushes());
            let mean = episodes
                .iter()
                .map(|e| l1_distance(&e.m_true, &vec![1.0 / e.n as f64; e.n]))
                .sum::<f64>()
                / episodes.len().max(1) as f64;
            vec![mean; steps]
        }
    };
    let per_step_pct: Vec<f64> = per_step.iter().map(|v| 100.0 * v).collect();
    Ok(ModelScore {
        name: name.into(),
        source: source.into(),
        error_pct: per_step_pct.last().copied().unwrap_or(f64::NAN),
        per_step_pct,
        episodes: episodes.len(),
    })
}

/// Scores every model on test episodes `indices` of the shared test
/// stream, gathering each model's episodes with its own policy, and adds
/// a uniform-guess row.
pub fn evaluate(
    models: &[ModelEntry],
    config: &ExperimentConfig,
    indices: Range<u64>,
    pool: &rayon::ThreadPool,
) -> Result<EvaluationReport> {
    let count = (indices.end - indices.start) as usize;
    let seed = config.data.test_seed;
    let random = collect_dataset(
        &|| Box::new(UniformRandom) as Box<dyn ActionSource>,
        config,
        seed,
        Purpose::Test,
        indices.start,
        count,
        pool,
    )?;
    let mut rows = vec![score("uniform", "none", None, &random)?];
    for m in models {
        let (source, episodes) = match m.policy {
            None => ("random pushes".to_string(), None),
            Some(p) => {
                let mode = if m.deterministic { "deterministic" } else { "stochastic" };
                let eps = collect_dataset(
                    &|| Box::new(PolicySource::new(p, m.deterministic)) as Box<dyn ActionSource + '_>,
                    config,
                    seed,
                    Purpose::Test,
                    indices.start,
                    count,
                    pool,
                )?;
                (format!("{mode} policy"), Some(eps))
            }
        };
        rows.push(score(&m.name, &source, Some(m.predictor), episodes.as_deref().unwrap_or(&random))?);
    }
    Ok(EvaluationReport {
        environment_hash: config.environment_hash(),
        test_seed: seed,
        test_indices: [indices.start, indices.end],
        rows,
    })
}

/// Monte-Carlo estimate of `100 · E‖m − 1/n‖₁` under the chain sampler.
pub fn uniform_guess_baseline(chain: &ChainConfig, samples: usize, rng: &mut impl Rng) -> f64 {
    let n = chain.links;
    let guess = vec![1.0 / n as f64; n];
    let mut total = 0.0;
    for _ in 0..samples {
        let m: Vec<f64> = (0..n).map(|_| rng.random_range(chain.mass_range[0]..chain.mass_range[1])).collect();
        let s: f64 = m.iter().sum();
        let m: Vec<f64> = m.iter().map(|x| x / s).collect();
        total += l1_distance(&m, &guess);
    }
    100.0 * total / samples as f64
}
