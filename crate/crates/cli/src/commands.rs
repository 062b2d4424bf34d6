use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use gdv_core::backends::{AgentBackend, NoiseSpec, NoisyOracleBackend, OracleBackend, RemoteBackend, RemoteConfig};
use gdv_core::cases::{
    generate_synthetic_corpus, load_cases, split_by_panel, synthetic_split, write_cases, CaseError, CaseRecord,
    CorpusConfig, Split, SplitAssignment,
};
use gdv_core::grpo::{rollout_policy, train as run_grpo, Checkpoint, GrpoError, ParametricSupervisorPolicy};
use gdv_core::metrics::evaluate_run;
use gdv_core::orchestration::{run_supervisor_episode, Observer, Trajectory};
use gdv_core::policies::OracleSupervisor;
use gdv_core::reward::RewardScheme;
use gdv_core::Policy64;
use serde_json::json;

use crate::config::FileConfig;
use crate::grading::{GradeError, Grader};
use crate::manifest::RunManifest;
use crate::CliError;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path.display(), e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| CliError::io(path.display(), e))
}

/// `corpus.jsonl` -> `corpus.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn load_corpus(path: &Path) -> Result<Vec<CaseRecord>, CliError> {
    load_cases(path).map_err(|e| match e {
        CaseError::Io { .. } => CliError::data(format!("corpus {e}")),
        _ => CliError::data(format!("corpus {}: {e}", path.display())),
    })
}

fn load_split(corpus: &[CaseRecord], splits: &Path, which: Split) -> Result<Vec<CaseRecord>, CliError> {
    let assignment =
        SplitAssignment::load(splits).map_err(|e| CliError::data(format!("splits {}: {e}", splits.display())))?;
    let s = split_by_panel(corpus, &assignment)?;
    Ok(match which {
        Split::Train => s.train,
        Split::Dev => s.dev,
        Split::Test => s.test,
    })
}

// --- simulate -------------------------------------------------------------

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 200)]
    pub cases: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Six per-category prevalences, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub prevalence: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1)]
    pub articles_min: usize,
    #[arg(long, default_value_t = 3)]
    pub articles_max: usize,
    /// Standard deviation of the article feature noise.
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long, default_value_t = 10)]
    pub panels: usize,
    /// Corpus JSONL path.
    #[arg(long)]
    pub out: PathBuf,
    /// Split file path [default: <out>.splits.json].
    #[arg(long)]
    pub splits_out: Option<PathBuf>,
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let prevalence = match &args.prevalence {
        None => CorpusConfig::default().prevalence,
        Some(v) => v
            .as_slice()
            .try_into()
            .map_err(|_| CliError::usage(format!("--prevalence needs 6 values, got {}", v.len())))?,
    };
    let config = CorpusConfig {
        cases: args.cases,
        articles_min: args.articles_min,
        articles_max: args.articles_max,
        prevalence,
        feature_noise: args.noise,
        panels: args.panels,
    };
    let cases = generate_synthetic_corpus(&config, args.seed)?;
    let mut w = create(&args.out)?;
    write_cases(&mut w, &cases).and_then(|_| w.flush()).map_err(|e| CliError::io(args.out.display(), e))?;

    let splits_path = args.splits_out.clone().unwrap_or_else(|| sibling(&args.out, "splits.json"));
    let split_file = synthetic_split(config.panels).to_file();
    write_text(&splits_path, &(serde_json::to_string_pretty(&split_file).expect("splits serialise") + "\n"))?;

    let mut manifest = RunManifest::new("simulate", Some(args.seed), &config, &args.out);
    manifest.artifact(&args.out)?;
    manifest.artifact(&splits_path)?;
    manifest.write(&sibling(&args.out, "manifest.json"))?;
    eprintln!("wrote {} cases to {}", cases.len(), args.out.display());
    Ok(())
}

// --- train ----------------------------------------------------------------

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub splits: PathBuf,
    /// outcome | hybrid (overrides the config file).
    #[arg(long)]
    pub scheme: Option<RewardScheme>,
    /// Flat TOML config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let mut file = FileConfig::load_opt(args.config.as_deref())?;
    file.scheme = args.scheme.or(file.scheme);
    file.seed = args.seed.or(file.seed);
    file.epochs = args.epochs.or(file.epochs);
    file.learning_rate = args.learning_rate.or(file.learning_rate);
    file.max_steps = args.max_steps.or(file.max_steps);
    let cfg = file.train();
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;

    let corpus = load_corpus(&args.corpus)?;
    let train_cases = load_split(&corpus, &args.splits, Split::Train)?;
    let dev_cases = load_split(&corpus, &args.splits, Split::Dev)?;
    let outcome = run_grpo(&train_cases, &dev_cases, &cfg).map_err(|e| match e {
        GrpoError::InvalidConfig(_) => CliError::usage(e.to_string()),
        GrpoError::EmptyCorpus => CliError::data(format!("{e} (no cases in the train split)")),
        other => CliError { code: 1, message: other.to_string() },
    })?;

    std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(args.out.display(), e))?;
    let mut manifest = RunManifest::new("train", Some(cfg.seed), &cfg, &args.out);
    manifest.input("corpus", &args.corpus)?;
    manifest.input("splits", &args.splits)?;

    let curves_path = args.out.join("curves.csv");
    {
        let mut w = csv::Writer::from_writer(create(&curves_path)?);
        for row in &outcome.curves {
            w.serialize(row).map_err(|e| CliError { code: 1, message: e.to_string() })?;
        }
        w.flush().map_err(|e| CliError::io(curves_path.display(), e))?;
    }
    manifest.artifact(&curves_path)?;
    for (epoch, ck) in outcome.checkpoints.iter().enumerate() {
        let path = args.out.join(format!("checkpoint_epoch_{:03}.json", epoch + 1));
        write_text(&path, &ck.to_json())?;
        manifest.artifact(&path)?;
    }
    let final_path = args.out.join("policy.json");
    let last_step = outcome.curves.len();
    write_text(&final_path, &Checkpoint::new(last_step, outcome.policy.clone(), cfg.clone()).to_json())?;
    manifest.artifact(&final_path)?;
    manifest.write(&args.out.join("manifest.json"))?;
    if let Some(last) = outcome.curves.last() {
        eprintln!("trained {} steps; final mean reward {:.4}", outcome.curves.len(), last.mean_reward);
    }
    Ok(())
}

// --- eval -----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    Oracle,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Oracle,
    Noisy,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Mode {
    Live,
    GroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl From<SplitName> for Split {
    fn from(s: SplitName) -> Self {
        match s {
            SplitName::Train => Split::Train,
            SplitName::Dev => Split::Dev,
            SplitName::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Args)]
#[command(group = clap::ArgGroup::new("who").required(true).args(["checkpoint", "policy"]))]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Split file; without it every case is evaluated.
    #[arg(long)]
    pub splits: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    /// Trained policy checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyKind>,
    #[arg(long, value_enum, default_value = "oracle")]
    pub backend: BackendKind,
    #[arg(long, value_enum, default_value = "live")]
    pub mode: Mode,
    /// Sampled episodes per case.
    #[arg(long, default_value_t = 1)]
    pub rollouts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sampling temperature of the random policy.
    #[arg(long, default_value_t = 0.8)]
    pub temperature: f64,
    /// Remote sub-agent base URL.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long, default_value_t = 30.0)]
    pub timeout_secs: f64,
    #[arg(long, default_value_t = 0.1)]
    pub miss_rate: f64,
    #[arg(long, default_value_t = 0.05)]
    pub false_alarm_rate: f64,
    /// Metrics report path [default: standard output].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the trajectories as JSONL.
    #[arg(long)]
    pub trajectories_out: Option<PathBuf>,
}

fn make_backend(args: &EvalArgs) -> Result<Box<dyn AgentBackend>, CliError> {
    Ok(match args.backend {
        BackendKind::Oracle => Box::new(OracleBackend),
        BackendKind::Noisy => {
            let noise =
                NoiseSpec { miss_rate: args.miss_rate, false_alarm_rate: args.false_alarm_rate, seed: args.seed };
            noise.validate().map_err(CliError::usage)?;
            Box::new(NoisyOracleBackend { noise })
        }
        BackendKind::Remote => {
            let endpoint = args.endpoint.clone().ok_or_else(|| CliError::usage("--backend remote needs --endpoint"))?;
            if !(args.timeout_secs > 0.0 && args.timeout_secs.is_finite()) {
                return Err(CliError::usage("--timeout-secs must be positive"));
            }
            let mut cfg = RemoteConfig::new(endpoint);
            cfg.timeout_secs = args.timeout_secs;
            Box::new(RemoteBackend::new(cfg))
        }
    })
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    if args.rollouts == 0 {
        return Err(CliError::usage("--rollouts must be positive"));
    }
    if !(args.temperature > 0.0 && args.temperature.is_finite()) {
        return Err(CliError::usage("--temperature must be positive"));
    }
    let backend = make_backend(args)?;
    let policy: Option<Policy64> = match (&args.checkpoint, args.policy) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::data(format!("checkpoint {}: {e}", path.display())))?;
            Some(
                Checkpoint::<f64>::from_json(&text)
                    .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?
                    .policy,
            )
        }
        (None, Some(PolicyKind::Random)) => Some(ParametricSupervisorPolicy::zeros(args.temperature)),
        (None, _) => None,
    };
    let corpus = load_corpus(&args.corpus)?;
    let cases = match &args.splits {
        Some(splits) => load_split(&corpus, splits, args.split.into())?,
        None => corpus.clone(),
    };
    let observer = match args.mode {
        Mode::Live => Observer::Live(backend.as_ref()),
        Mode::GroundTruth => Observer::GroundTruth,
    };
    let trajectories: Vec<Trajectory> = match &policy {
        Some(p) => rollout_policy(p, &cases, args.rollouts, args.seed, observer)?,
        None => {
            let mut out = Vec::with_capacity(cases.len() * args.rollouts);
            for _ in 0..args.rollouts {
                for case in &cases {
                    out.push(Trajectory::Supervisor(run_supervisor_episode(&mut OracleSupervisor, case, observer)?));
                }
            }
            out
        }
    };
    let report = evaluate_run(&trajectories, &corpus).map_err(|e| CliError::data(e.to_string()))?;
    let text = serde_json::to_string_pretty(&report).expect("report serialises") + "\n";
    match &args.out {
        Some(path) => write_text(path, &text)?,
        None => print!("{text}"),
    }
    if let Some(path) = &args.trajectories_out {
        let mut w = create(path)?;
        for t in &trajectories {
            writeln!(w, "{}", serde_json::to_string(t).expect("trajectory serialises"))
                .map_err(|e| CliError::io(path.display(), e))?;
        }
        w.flush().map_err(|e| CliError::io(path.display(), e))?;
    }
    if let Some(path) = &args.out {
        let snapshot = json!({
            "split": format!("{:?}", args.split).to_lowercase(),
            "policy": args.checkpoint.as_ref().map(|p| p.display().to_string())
                .unwrap_or_else(|| format!("{:?}", args.policy.expect("group requires one")).to_lowercase()),
            "backend": format!("{:?}", args.backend).to_lowercase(),
            "mode": format!("{:?}", args.mode).to_lowercase(),
            "rollouts": args.rollouts,
            "temperature": args.temperature,
        });
        let mut manifest = RunManifest::new("eval", Some(args.seed), snapshot, path);
        manifest.input("corpus", &args.corpus)?;
        if let Some(s) = &args.splits {
            manifest.input("splits", s)?;
        }
        if let Some(c) = &args.checkpoint {
            manifest.input("checkpoint", c)?;
        }
        manifest.artifact(path)?;
        if let Some(t) = &args.trajectories_out {
            manifest.artifact(t)?;
        }
        manifest.write(&sibling(path, "manifest.json"))?;
    }
    Ok(())
}

// --- grade ----------------------------------------------------------------

#[derive(Debug, Clone, Args)]
pub struct GradeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Trajectory JSONL, one trajectory per line.
    #[arg(long)]
    pub trajectories: PathBuf,
    #[arg(long, default_value = "hybrid")]
    pub scheme: RewardScheme,
    /// Flat TOML config (reward keys are used).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Breakdown JSONL path [default: standard output].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn grader_from(corpus: &Path, scheme: RewardScheme, config: Option<&Path>) -> Result<Grader, CliError> {
    let reward = FileConfig::load_opt(config)?.validated_reward()?;
    Ok(Grader::new(load_corpus(corpus)?, scheme, reward))
}

/// Breakdown lines for a trajectory JSONL stream, in input order. Blank
/// lines are skipped.
pub fn grade_lines<R: BufRead>(grader: &Grader, reader: R) -> Result<Vec<String>, CliError> {
    let mut trajectories = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::data(format!("line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        trajectories.push(Grader::parse(&line).map_err(|e| CliError::data(format!("line {}: {e}", i + 1)))?);
    }
    let mut out = Vec::with_capacity(trajectories.len());
    let mut unknown = Vec::new();
    for t in &trajectories {
        match grader.grade(t) {
            Ok(s) => out.push(s),
            Err(GradeError::UnknownCase(k)) => unknown.push(k.to_string()),
            Err(e) => return Err(CliError::data(e.to_string())),
        }
    }
    if !unknown.is_empty() {
        unknown.sort();
        unknown.dedup();
        return Err(CliError::data(format!("unknown case key(s): {}", unknown.join("; "))));
    }
    Ok(out)
}

pub fn grade(args: &GradeArgs) -> Result<(), CliError> {
    let grader = grader_from(&args.corpus, args.scheme, args.config.as_deref())?;
    let file = File::open(&args.trajectories)
        .map_err(|e| CliError::data(format!("trajectories {}: {e}", args.trajectories.display())))?;
    let lines = grade_lines(&grader, BufReader::new(file))?;
    let mut text = String::new();
    for l in lines {
        text.push_str(&l);
        text.push('\n');
    }
    match &args.out {
        Some(path) => write_text(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

// --- serve ----------------------------------------------------------------

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Bind address; loopback unless set explicitly.
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value = "hybrid")]
    pub scheme: RewardScheme,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn serve(args: &ServeArgs) -> Result<(), CliError> {
    let grader = grader_from(&args.corpus, args.scheme, args.config.as_deref())?;
    let runtime =
        tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| CliError::io("runtime", e))?;
    let addr = format!("{}:{}", args.host, args.port);
    runtime.block_on(async {
        let listener =
            tokio::net::TcpListener::bind(&addr).await.map_err(|e| CliError::usage(format!("bind {addr}: {e}")))?;
        let bound = listener.local_addr().map_err(|e| CliError::io("serve", e))?;
        eprintln!("grading {} cases on http://{bound}", grader.len());
        crate::service::serve(listener, std::sync::Arc::new(grader)).await.map_err(|e| CliError::io("serve", e))
    })
}
