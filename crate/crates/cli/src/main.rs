use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use chainid::identifiability::{identifiability_table, write_table};
use chainid::interaction::{rollout_episode, sample_initial_state, write_episodes, PushAction, UniformRandom};
use chainid::meta::{
    evaluate, load_outcome, thread_pool, ExperimentConfig, ModelEntry, Pipeline, RunDir, Stage, HISTORY_FILE,
};
use chainid::seeding::{episode_id, stream, Purpose};
use chainid::sim::SimParams;
use chainid::verify::{negated_friction, run_suite, unchanged, Suite};
use chainid::Error;

/// Environment variable naming the directory that holds run directories.
const RUNS_DIR_VAR: &str = "CHAINID_RUNS_DIR";

#[derive(Parser)]
#[command(name = "chainid", version, about = "Learn the mass distribution of articulated chains by pushing them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configuration's worker count.
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn load(&self) -> chainid::Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(workers) = self.workers {
            config.workers = workers;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Rp,
    #[value(name = "rp+")]
    RpPlus,
    Alternate,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Physics,
    Gradients,
    Identifiability,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mutation {
    /// Flip the sign of the friction coefficient.
    NegatedFriction,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out one random-push episode and print its equilibria.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Pushes in the episode; the configuration's value by default.
        #[arg(long)]
        pushes: Option<usize>,
        /// Trajectory file to write.
        #[arg(long, default_value = "trajectory.jsonl")]
        out: PathBuf,
    },
    /// Run a training stage, resuming whatever the run directory finished.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        stage: StageArg,
        /// Run directory; defaults to `$CHAINID_RUNS_DIR/<run id>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score trained runs on a shared test set.
    Evaluate {
        /// Run directories to compare; they must share an environment.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Test episode indices as `start..end`.
        #[arg(long, value_parser = parse_range)]
        test_seed_range: Option<(u64, u64)>,
        /// Collect policy episodes with mean actions.
        #[arg(long)]
        deterministic_policy: bool,
        #[arg(long)]
        workers: Option<usize>,
        /// Directory for report.csv and report.txt; the run directory when
        /// a single run is evaluated, else the working directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in invariant checks.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        suite: SuiteArg,
        /// Break the model on purpose to confirm the checks notice.
        #[arg(long, value_enum, hide = true)]
        mutate: Option<Mutation>,
    },
    /// Tabulate identifiability of link masses over random poses.
    Identifiability {
        #[command(flatten)]
        common: Common,
        /// Number of random poses.
        #[arg(long, default_value_t = 4)]
        poses: usize,
        /// CSV output; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_range(s: &str) -> Result<(u64, u64), String> {
    let (a, b) = s.split_once("..").ok_or("expected start..end")?;
    let a: u64 = a.trim().parse().map_err(|e| format!("bad start: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("bad end: {e}"))?;
    if b <= a {
        return Err("range must be non-empty".into());
    }
    Ok((a, b))
}

fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_DIR_VAR).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

fn simulate(common: &Common, pushes: Option<usize>, out: &Path) -> chainid::Result<()> {
    let config = common.load()?;
    let pushes = pushes.unwrap_or(config.chain.pushes);
    let mut rng = stream(config.seed, Purpose::Train(0), 0);
    let model = config.chain.sample_model(&mut rng)?;
    let mut ep = rollout_episode(&model, &mut UniformRandom, pushes, config.chain.noise_std, &config.push, &mut rng)?;
    ep.seed = episode_id(Purpose::Train(0), 0);
    ep.config_hash = Some(config.config_hash());
    let mut w = BufWriter::new(fs::File::create(out)?);
    write_episodes(&mut w, std::slice::from_ref(&ep))?;
    w.flush()?;

    let cap = SimParams::<f64>::default().max_settle_steps;
    println!("links {}  mu {:.3}  lengths {:.3?}  mass distribution {:.3?}", ep.n, ep.mu, ep.lengths, ep.m_true);
    println!("push  a1      a2      settle/{cap}  pose");
    println!("{:>4}  {:>6}  {:>6}  {:>11}  {:.4?}", 0, "-", "-", "-", ep.q_seq[0]);
    for t in 0..ep.pushes() {
        let [a1, a2] = ep.a_seq[t];
        println!("{:>4}  {a1:>6.3}  {a2:>6.3}  {:>11}  {:.4?}", t + 1, ep.settle_steps[t], ep.q_seq[t + 1]);
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn train(common: &Common, stage: StageArg, out: Option<PathBuf>) -> chainid::Result<()> {
    let config = common.load()?;
    let root = out.unwrap_or_else(|| runs_root().join(format!("seed{}-{}", config.seed, config.config_hash())));
    let run = RunDir::create(&root, &config)?;
    let pool = thread_pool(config.workers)?;
    let stage = match stage {
        StageArg::Rp => Stage::Rp,
        StageArg::RpPlus => Stage::RpPlus,
        StageArg::Alternate => Stage::Alternate,
    };
    println!("run directory {}", root.display());
    let pipeline = Pipeline::new(config, Some(run), &pool)?;
    let outcome = pipeline.run(stage)?;
    if !outcome.history.is_empty() {
        println!("iteration  validation error %  ppo error % (first -> last)");
        for h in &outcome.history {
            let ppo = match (h.ppo_first_error, h.ppo_last_error) {
                (Some(a), Some(b)) => format!("{:.2} -> {:.2}", 100.0 * a, 100.0 * b),
                _ => "-".into(),
            };
            println!("{:>9}  {:>18.2}  {ppo}", h.iteration, 100.0 * h.val_l1);
        }
        println!("history written to {}", root.join(HISTORY_FILE).display());
    }
    Ok(())
}

fn evaluate_runs(
    runs: &[PathBuf],
    range: Option<(u64, u64)>,
    deterministic: bool,
    workers: Option<usize>,
    out: Option<PathBuf>,
) -> chainid::Result<()> {
    let mut loaded = Vec::new();
    for root in runs {
        let (run, config) = RunDir::open(root)?;
        let outcome = load_outcome(&run, &config)?;
        loaded.push((run, config, outcome));
    }
    let (_, reference, _) = &loaded[0];
    for (run, config, _) in &loaded[1..] {
        if config.environment_hash() != reference.environment_hash() {
            return Err(Error::ConfigMismatch(format!(
                "{} draws test episodes from environment {}, {} from {}",
                runs[0].display(),
                reference.environment_hash(),
                run.root.display(),
                config.environment_hash()
            )));
        }
    }
    let mut config = reference.clone();
    if let Some(w) = workers {
        config.workers = w;
    }
    let prefix = loaded.len() > 1;
    let mut models: Vec<ModelEntry> = Vec::new();
    for (run, _, outcome) in &loaded {
        for mut m in outcome.models(deterministic) {
            if prefix {
                m.name = format!("{}:{}", run.run_id, m.name);
            }
            models.push(m);
        }
    }
    if models.is_empty() {
        return Err(Error::InvalidConfig("no completed stages to evaluate".into()));
    }
    let (start, end) = range.unwrap_or((0, config.data.test_episodes as u64));
    let pool = thread_pool(config.workers)?;
    let report = evaluate(&models, &config, start..end, &pool)?;
    let dir = out.unwrap_or_else(|| if loaded.len() == 1 { runs[0].clone() } else { PathBuf::from(".") });
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("report.csv"), report.to_csv()?)?;
    fs::write(dir.join("report.txt"), report.to_table())?;
    if loaded.len() == 1 && dir == runs[0] {
        loaded[0].0.record("evaluate", &["report.csv", "report.txt"])?;
    }
    print!("{}", report.to_table());
    Ok(())
}

/// Returns whether every check passed.
fn verify(suite: SuiteArg, mutate: Option<Mutation>) -> bool {
    let suite = match suite {
        SuiteArg::Physics => Suite::Physics,
        SuiteArg::Gradients => Suite::Gradients,
        SuiteArg::Identifiability => Suite::Identifiability,
        SuiteArg::All => Suite::All,
    };
    let checks = match mutate {
        Some(Mutation::NegatedFriction) => run_suite(suite, &negated_friction),
        None => run_suite(suite, &unchanged),
    };
    for c in &checks {
        let mark = if c.passed { "PASS" } else { "FAIL" };
        println!("{mark}  {:<16} {:<30} {:>6.2}s  {}", c.suite, c.name, c.seconds, c.detail);
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        println!("{} checks passed", checks.len());
        true
    } else {
        println!("{} of {} checks failed: {}", failed.len(), checks.len(), failed.join(", "));
        false
    }
}

fn identifiability(common: &Common, poses: usize, out: Option<PathBuf>) -> chainid::Result<()> {
    let config = common.load()?;
    let mut rng = stream(config.seed, Purpose::RandomExtra, u64::from(u32::MAX));
    let model = config.chain.sample_model(&mut rng)?;
    let qs: Vec<_> = (0..poses).map(|_| sample_initial_state(&model, &mut rng).q).collect();
    let mut actions = Vec::new();
    for a1 in [-1.0, 1.0] {
        for k in 0..=8 {
            actions.push(PushAction::new(a1, -1.0 + 0.25 * k as f64));
        }
    }
    let rows = identifiability_table(&model, &qs, &actions, &config.push)?;
    match out {
        Some(path) => {
            write_table(BufWriter::new(fs::File::create(&path)?), &rows)?;
            eprintln!("wrote {} rows to {}", rows.len(), path.display());
        }
        None => write_table(std::io::stdout().lock(), &rows)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { common, pushes, out } => simulate(&common, pushes, &out),
        Command::Train { common, stage, out } => train(&common, stage, out),
        Command::Evaluate { runs, test_seed_range, deterministic_policy, workers, out } => {
            evaluate_runs(&runs, test_seed_range, deterministic_policy, workers, out)
        }
        Command::Verify { suite, mutate } => {
            return if verify(suite, mutate) { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
        Command::Identifiability { common, poses, out } => identifiability(&common, poses, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
