use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::collect::collect_dataset;
use super::config::ExperimentConfig;
use super::evaluate::{evaluate, EvaluationReport, ModelEntry};
use super::run_dir::RunDir;
use crate::error::{Error, Result};
use crate::estimator::{encode_dataset, final_step_l1, train_predictor, MetricsRow, PredictorNet, TrainSchedule};
use crate::explorer::{train_policy, PolicyNet, PolicySource, RolloutEnv, UpdateMetrics};
use crate::interaction::{write_episodes, ActionSource, EpisodeTrajectory, UniformRandom};
use crate::neural::{load_into, write_checkpoint};
use crate::seeding::{stream, Purpose};
use crate::ChainModel;

/// Validation sets of different meta-iterations use disjoint index blocks
/// of the validation stream.
const VALIDATION_BLOCK: u64 = 1 << 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Predictor trained on random pushes.
    Rp,
    /// `Rp` fine-tuned on as many fresh random episodes as one
    /// meta-iteration adds.
    RpPlus,
    /// `Rp` followed by the alternating policy/predictor iterations.
    Alternate,
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rp" => Ok(Stage::Rp),
            "rp+" => Ok(Stage::RpPlus),
            "alternate" => Ok(Stage::Alternate),
            other => Err(Error::InvalidConfig(format!("unknown stage {other:?}"))),
        }
    }
}

/// One row of the meta-training curve. Iteration 0 is the random-push
/// predictor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    /// Final-step L1 error on this iteration's validation episodes.
    pub val_l1: f64,
    /// Mean prediction error in the first and last PPO update; empty for
    /// the random-push predictor.
    pub ppo_first_error: Option<f64>,
    pub ppo_last_error: Option<f64>,
    pub deterministic: bool,
}

pub struct IterationOutcome {
    pub iteration: usize,
    pub policy: PolicyNet,
    pub predictor: PredictorNet,
    /// Whether this iteration collected with mean actions.
    pub deterministic: bool,
    pub ppo: Vec<UpdateMetrics>,
    pub training: Vec<MetricsRow>,
}

#[derive(Default)]
pub struct PipelineOutcome {
    pub rp: Option<PredictorNet>,
    pub rp_plus: Option<PredictorNet>,
    pub iterations: Vec<IterationOutcome>,
    pub history: Vec<HistoryRow>,
}

impl PipelineOutcome {
    /// The predictor the pipeline ends with.
    pub fn final_predictor(&self) -> Option<&PredictorNet> {
        self.iterations.last().map(|it| &it.predictor).or(self.rp.as_ref())
    }

    /// Named models for evaluation: RP, RP+, TP (first iteration) and TP+
    /// (last iteration, when there is more than one).
    pub fn models(&self, force_deterministic: bool) -> Vec<ModelEntry<'_>> {
        let mut out = Vec::new();
        if let Some(p) = &self.rp {
            out.push(ModelEntry { name: "RP".into(), predictor: p, policy: None, deterministic: false });
        }
        if let Some(p) = &self.rp_plus {
            out.push(ModelEntry { name: "RP+".into(), predictor: p, policy: None, deterministic: false });
        }
        fn entry<'b>(name: &str, it: &'b IterationOutcome, force: bool) -> ModelEntry<'b> {
            ModelEntry {
                name: name.into(),
                predictor: &it.predictor,
                policy: Some(&it.policy),
                deterministic: it.deterministic || force,
            }
        }
        if let Some(first) = self.iterations.first() {
            out.push(entry("TP", first, force_deterministic));
        }
        if self.iterations.len() > 1 {
            out.push(entry("TP+", self.iterations.last().unwrap(), force_deterministic));
        }
        out
    }
}

/// Drives the training stages, persisting artifacts when a run directory
/// is attached and skipping stages the manifest marks as complete.
pub struct Pipeline<'a> {
    pub config: ExperimentConfig,
    pub run: Option<RunDir>,
    pool: &'a rayon::ThreadPool,
}

pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))
}

fn random_source() -> Box<dyn ActionSource> {
    Box::new(UniformRandom)
}

pub fn save_predictor(path: &Path, net: &PredictorNet, tag: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, &net.params, tag)?;
    w.flush()?;
    Ok(())
}

pub fn load_predictor(path: &Path, config: &ExperimentConfig) -> Result<PredictorNet> {
    let mut net = PredictorNet::new(config.chain.links, config.predictor, &mut stream(0, Purpose::Optimizer(0), 0));
    load_into(&mut net.params, &mut BufReader::new(File::open(path)?))?;
    Ok(net)
}

pub fn save_policy(path: &Path, net: &PolicyNet, tag: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, &net.params, tag)?;
    w.flush()?;
    Ok(())
}

pub fn load_policy(path: &Path, config: &ExperimentConfig) -> Result<PolicyNet> {
    let mut net = PolicyNet::new(config.chain.links, config.policy, &mut stream(0, Purpose::Optimizer(0), 0));
    load_into(&mut net.params, &mut BufReader::new(File::open(path)?))?;
    Ok(net)
}

fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<S: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<S>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn predictor_checkpoint(iteration: usize) -> String {
    format!("checkpoints/predictor_iter{iteration}.ckpt")
}

pub fn policy_checkpoint(iteration: usize) -> String {
    format!("checkpoints/policy_iter{iteration}.ckpt")
}

pub const RP_CHECKPOINT: &str = "checkpoints/rp.ckpt";
pub const RP_PLUS_CHECKPOINT: &str = "checkpoints/rp_plus.ckpt";
pub const HISTORY_FILE: &str = "metrics/history.csv";

impl<'a> Pipeline<'a> {
    pub fn new(config: ExperimentConfig, run: Option<RunDir>, pool: &'a rayon::ThreadPool) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline { config, run, pool })
    }

    fn seed(&self) -> u64 {
        self.config.seed
    }

    fn done(&self, stage: &str) -> Result<bool> {
        match &self.run {
            Some(run) => run.completed(stage),
            None => Ok(false),
        }
    }

    fn save_episodes(&self, relative: &str, episodes: &[EpisodeTrajectory]) -> Result<()> {
        if let Some(run) = &self.run {
            let mut w = BufWriter::new(File::create(run.path(relative))?);
            write_episodes(&mut w, episodes)?;
            w.flush()?;
        }
        Ok(())
    }

    pub fn collect(
        &self,
        source: &super::collect::SourceFactory,
        purpose: Purpose,
        first: u64,
        count: usize,
    ) -> Result<Vec<EpisodeTrajectory>> {
        collect_dataset(source, &self.config, self.seed(), purpose, first, count, self.pool)
    }

    fn random_validation(&self) -> Result<Vec<EpisodeTrajectory>> {
        self.collect(&random_source, Purpose::Validation, 0, self.config.data.validation_episodes)
    }

    /// Trains `net` and returns the metrics; restores the best parameters
    /// on a training abort before propagating it.
    fn fit(
        &self,
        net: &mut PredictorNet,
        train: &[EpisodeTrajectory],
        validation: &[EpisodeTrajectory],
        schedule: &TrainSchedule,
        optimizer_stream: (u32, u64),
    ) -> Result<Vec<MetricsRow>> {
        let mut rng = stream(self.seed(), Purpose::Optimizer(optimizer_stream.0), optimizer_stream.1);
        let report = train_predictor(net, &encode_dataset(train), &encode_dataset(validation), schedule, &mut rng)?;
        Ok(report.history)
    }

    /// Predictor trained from scratch on random pushes.
    pub fn stage_rp(&self) -> Result<PredictorNet> {
        if self.done("rp")? {
            let run = self.run.as_ref().expect("completed stages imply a run directory");
            return load_predictor(&run.path(RP_CHECKPOINT), &self.config);
        }
        let train = self.collect(&random_source, Purpose::Train(0), 0, self.config.data.stage0_episodes)?;
        let validation = self.random_validation()?;
        self.save_episodes("datasets/train_iter0.jsonl", &train)?;
        self.save_episodes("datasets/validation_iter0.jsonl", &validation)?;
        let mut init = stream(self.seed(), Purpose::Optimizer(0), 0);
        let mut net = PredictorNet::new(self.config.chain.links, self.config.predictor, &mut init);
        let result = self.fit(&mut net, &train, &validation, &self.config.stage0_schedule, (0, 1));
        if let Some(run) = &self.run {
            save_predictor(&run.path(RP_CHECKPOINT), &net, "rp")?;
            if let Ok(rows) = &result {
                write_csv(&run.path("metrics/predictor_iter0.csv"), rows)?;
                run.record(
                    "rp",
                    &["datasets/train_iter0.jsonl", "datasets/validation_iter0.jsonl", RP_CHECKPOINT, "metrics/predictor_iter0.csv"],
                )?;
            }
        }
        result?;
        Ok(net)
    }

    /// `rp` fine-tuned on fresh random episodes, matching the data budget
    /// of one meta-iteration.
    pub fn stage_rp_plus(&self, rp: &PredictorNet) -> Result<PredictorNet> {
        if self.done("rp+")? {
            let run = self.run.as_ref().expect("completed stages imply a run directory");
            return load_predictor(&run.path(RP_PLUS_CHECKPOINT), &self.config);
        }
        let extra = self.collect(&random_source, Purpose::RandomExtra, 0, self.config.data.meta_episodes)?;
        let validation = self.random_validation()?;
        self.save_episodes("datasets/train_random_extra.jsonl", &extra)?;
        let mut net = rp.clone();
        let result = self.fit(&mut net, &extra, &validation, &self.config.retrain_schedule, (0, 2));
        if let Some(run) = &self.run {
            save_predictor(&run.path(RP_PLUS_CHECKPOINT), &net, "rp+")?;
            if let Ok(rows) = &result {
                write_csv(&run.path("metrics/predictor_rp_plus.csv"), rows)?;
                run.record("rp+", &["datasets/train_random_extra.jsonl", RP_PLUS_CHECKPOINT, "metrics/predictor_rp_plus.csv"])?;
            }
        }
        result?;
        Ok(net)
    }

    fn load_iteration(&self, k: usize) -> Result<IterationOutcome> {
        let run = self.run.as_ref().expect("completed stages imply a run directory");
        Ok(IterationOutcome {
            iteration: k,
            policy: load_policy(&run.path(&policy_checkpoint(k)), &self.config)?,
            predictor: load_predictor(&run.path(&predictor_checkpoint(k)), &self.config)?,
            deterministic: k == self.config.meta_iterations,
            ppo: read_csv(&run.path(&format!("metrics/ppo_iter{k}.csv")))?,
            training: read_csv(&run.path(&format!("metrics/predictor_iter{k}.csv")))?,
        })
    }

    /// One meta-iteration: PPO against the frozen predictor, then a fresh
    /// dataset under the frozen policy, then predictor retraining.
    fn iteration(&self, k: usize, previous: &PredictorNet, policy: PolicyNet) -> Result<IterationOutcome> {
        let cfg = &self.config;
        let it = k as u32;
        let deterministic = k == cfg.meta_iterations;
        let sampler = |rng: &mut rand_chacha::ChaCha8Rng| -> Result<ChainModel> { cfg.chain.sample_model(rng) };
        let env = RolloutEnv {
            predictor: previous,
            sample_model: &sampler,
            pushes: cfg.chain.pushes,
            noise_std: cfg.chain.noise_std,
            push: cfg.push,
            beta: cfg.ppo.beta,
        };
        let mut policy = policy;
        let ppo = train_policy(&mut policy, &env, &cfg.ppo, self.seed(), it, self.pool)?;

        let frozen = &policy;
        let source = || Box::new(PolicySource::new(frozen, deterministic)) as Box<dyn ActionSource + '_>;
        let train = self.collect(&source, Purpose::Train(it), 0, cfg.data.meta_episodes)?;
        let validation =
            self.collect(&source, Purpose::Validation, VALIDATION_BLOCK * k as u64, cfg.data.validation_episodes)?;
        let mut predictor = previous.clone();
        let result = self.fit(&mut predictor, &train, &validation, &cfg.retrain_schedule, (it, 0));
        if let Some(run) = &self.run {
            let (pc, qc) = (policy_checkpoint(k), predictor_checkpoint(k));
            let (pm, qm) = (format!("metrics/ppo_iter{k}.csv"), format!("metrics/predictor_iter{k}.csv"));
            let (td, vd) = (format!("datasets/train_iter{k}.jsonl"), format!("datasets/validation_iter{k}.jsonl"));
            self.save_episodes(&td, &train)?;
            self.save_episodes(&vd, &validation)?;
            save_policy(&run.path(&pc), &policy, &format!("policy {k}"))?;
            save_predictor(&run.path(&qc), &predictor, &format!("predictor {k}"))?;
            write_csv(&run.path(&pm), &ppo)?;
            if let Ok(rows) = &result {
                write_csv(&run.path(&qm), rows)?;
                run.record(&format!("meta{k}"), &[&td, &vd, &pc, &qc, &pm, &qm])?;
            }
        }
        let training = result?;
        Ok(IterationOutcome { iteration: k, policy, predictor, deterministic, ppo, training })
    }

    fn history_row(&self, k: usize, net: &PredictorNet, ppo: &[UpdateMetrics], val: &[EpisodeTrajectory], det: bool) -> Result<HistoryRow> {
        Ok(HistoryRow {
            iteration: k,
            val_l1: final_step_l1(net, &encode_dataset(val))?,
            ppo_first_error: ppo.first().map(|m| m.mean_prediction_error),
            ppo_last_error: ppo.last().map(|m| m.mean_prediction_error),
            deterministic: det,
        })
    }

    /// Stage-0 predictor followed by `meta_iterations` alternations.
    pub fn alternate(&self, rp: PredictorNet) -> Result<(Vec<IterationOutcome>, Vec<HistoryRow>)> {
        let cfg = &self.config;
        let mut history = vec![self.history_row(0, &rp, &[], &self.random_validation()?, false)?];
        let mut iterations: Vec<IterationOutcome> = Vec::new();
        for k in 1..=cfg.meta_iterations {
            let outcome = if self.done(&format!("meta{k}"))? {
                self.load_iteration(k)?
            } else {
                let policy = match iterations.last() {
                    Some(prev) => prev.policy.clone(),
                    None => PolicyNet::new(cfg.chain.links, cfg.policy, &mut stream(self.seed(), Purpose::Optimizer(1), 0)),
                };
                let previous = iterations.last().map_or(&rp, |p| &p.predictor);
                self.iteration(k, previous, policy)?
            };
            let frozen = &outcome.policy;
            let det = outcome.deterministic;
            let source = || Box::new(PolicySource::new(frozen, det)) as Box<dyn ActionSource + '_>;
            let validation =
                self.collect(&source, Purpose::Validation, VALIDATION_BLOCK * k as u64, cfg.data.validation_episodes)?;
            history.push(self.history_row(k, &outcome.predictor, &outcome.ppo, &validation, det)?);
            if let Some(run) = &self.run {
                write_csv(&run.path(HISTORY_FILE), &history)?;
            }
            iterations.push(outcome);
        }
        if let Some(run) = &self.run {
            write_csv(&run.path(HISTORY_FILE), &history)?;
        }
        Ok((iterations, history))
    }

    /// Runs `stage` and everything it depends on.
    pub fn run(&self, stage: Stage) -> Result<PipelineOutcome> {
        let rp = self.stage_rp()?;
        let mut out = PipelineOutcome::default();
        match stage {
            Stage::Rp => {}
            Stage::RpPlus => out.rp_plus = Some(self.stage_rp_plus(&rp)?),
            Stage::Alternate => {
                let (iterations, history) = self.alternate(rp.clone())?;
                out.iterations = iterations;
                out.history = history;
            }
        }
        out.rp = Some(rp);
        Ok(out)
    }

    /// Everything needed for the baseline table: RP, RP+ and the
    /// alternation.
    pub fn run_all(&self) -> Result<PipelineOutcome> {
        let rp = self.stage_rp()?;
        let rp_plus = self.stage_rp_plus(&rp)?;
        let (iterations, history) = self.alternate(rp.clone())?;
        Ok(PipelineOutcome { rp: Some(rp), rp_plus: Some(rp_plus), iterations, history })
    }

    /// Evaluates the outcome on the shared test stream and writes the
    /// report into the run directory when one is attached.
    pub fn evaluate(&self, outcome: &PipelineOutcome, force_deterministic: bool) -> Result<EvaluationReport> {
        let n = self.config.data.test_episodes as u64;
        let report = evaluate(&outcome.models(force_deterministic), &self.config, 0..n, self.pool)?;
        if let Some(run) = &self.run {
            std::fs::write(run.path("report.csv"), report.to_csv()?)?;
            std::fs::write(run.path("report.txt"), report.to_table())?;
        }
        Ok(report)
    }
}

/// Loads whatever a run directory has finished: RP, RP+ and every
/// completed meta-iteration.
pub fn load_outcome(run: &RunDir, config: &ExperimentConfig) -> Result<PipelineOutcome> {
    let mut out = PipelineOutcome::default();
    if run.completed("rp")? {
        out.rp = Some(load_predictor(&run.path(RP_CHECKPOINT), config)?);
    }
    if run.completed("rp+")? {
        out.rp_plus = Some(load_predictor(&run.path(RP_PLUS_CHECKPOINT), config)?);
    }
    for k in 1..=config.meta_iterations {
        if !run.completed(&format!("meta{k}"))? {
            break;
        }
        out.iterations.push(IterationOutcome {
            iteration: k,
            policy: load_policy(&run.path(&policy_checkpoint(k)), config)?,
            predictor: load_predictor(&run.path(&predictor_checkpoint(k)), config)?,
            deterministic: k == config.meta_iterations,
            ppo: read_csv(&run.path(&format!("metrics/ppo_iter{k}.csv")))?,
            training: read_csv(&run.path(&format!("metrics/predictor_iter{k}.csv")))?,
        });
    }
    if run.path(HISTORY_FILE).exists() {
        out.history = read_csv(&run.path(HISTORY_FILE))?;
    }
    Ok(out)
}
