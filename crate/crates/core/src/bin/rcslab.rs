use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use rcslab::align::{evaluate, save_train_log, train, train_sequential, EvalMetrics, MarginSpec, Method, Stage, TrainConfig};
use rcslab::analysis::{classify_dataset, write_classification_csv};
use rcslab::curation::{
    curate, dataset_rc_stats, failure_curve, save_curation_report, ConsistencyMask, CurationConfig, Fallback, Strategy,
};
use rcslab::dataset::{build_vanilla_dataset, load_dataset, save_dataset, PreferenceDataset};
use rcslab::experiment::{
    ablation, consistency_subsets, mask_flexibility, strategy_comparison, ExperimentSpec, ReportTable,
};
use rcslab::policy::{load_policy, save_policy, LogLinearPolicy};
use rcslab::reward::{load_objectives, ObjectiveSet};
use rcslab::world::{generate_world, load_world, save_world, World, WorldConfig};
use rcslab::{Error, Result};

const WORLD_FILE: &str = "world.jsonl";

#[derive(Parser)]
#[command(name = "rcslab", version, about = "Reward-consistent preference curation and multi-objective alignment lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a world from a JSON config into `<out>/world.jsonl`.
    GenWorld {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label random pairs by one objective.
    BuildDataset {
        #[command(flatten)]
        world: WorldArg,
        #[arg(long)]
        objective: usize,
        #[arg(long, default_value_t = 1)]
        pairs_per_prompt: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Curate a dataset for one objective.
    Curate(CurateArgs),
    /// Train one policy on one dataset.
    Train(TrainArgs),
    /// Train stages in order, each starting from the previous result.
    TrainSeq(TrainSeqArgs),
    /// Evaluate a policy against a reference.
    Eval {
        #[command(flatten)]
        world: WorldArg,
        #[command(flatten)]
        objectives: ObjectivesArg,
        #[arg(long)]
        policy: PathBuf,
        /// Defaults to the all-zero policy.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// File with one prompt id per line; defaults to every prompt.
        #[arg(long)]
        prompts: Option<PathBuf>,
        /// Flat JSON record.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Classify every sample by the sign of `G1 . dG2`.
    Analyze {
        #[command(flatten)]
        world: WorldArg,
        #[command(flatten)]
        objectives: ObjectivesArg,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        objective: usize,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        beta: f64,
        #[arg(long, default_value_t = 0.9)]
        current_weight: f64,
        /// Defaults to every objective below `--objective`.
        #[arg(long, value_delimiter = ',')]
        margin_objectives: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
        /// Summary JSON; printed to stdout when omitted.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Consistency statistics of a dataset.
    RcStats {
        #[command(flatten)]
        world: WorldArg,
        #[command(flatten)]
        objectives: ObjectivesArg,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        objective: usize,
        /// Defaults to every objective up to `--objective`.
        #[arg(long, value_delimiter = ',')]
        mask: Option<Vec<usize>>,
        #[arg(long, default_value_t = 0.0)]
        delta: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// RCS failure counts for several sample sizes.
    FailureCurve {
        #[command(flatten)]
        world: WorldArg,
        #[command(flatten)]
        objectives: ObjectivesArg,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        objective: usize,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        mask: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,4,8,16")]
        n_values: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render metrics files as a table with deltas against the Vanilla row.
    Report {
        /// `label=metrics.json`; exactly one label must be `Vanilla`.
        #[arg(long = "row", required = true)]
        rows: Vec<String>,
        #[arg(long, default_value = "")]
        caption: String,
        /// Plain-text table; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run a whole protocol from an experiment spec, one report per seed.
    Experiment {
        /// JSON experiment spec; defaults to the two-objective setup.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum)]
        protocol: Protocol,
        /// Objective removed from the mask by the `masks` protocol.
        #[arg(long, default_value_t = 2)]
        relaxed: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Protocol {
    Subsets,
    Strategies,
    Ablation,
    Masks,
}

#[derive(Args)]
struct WorldArg {
    /// World directory (or the world file itself).
    #[arg(long = "world")]
    world_path: PathBuf,
}

impl WorldArg {
    fn load(&self) -> Result<World> {
        let p = &self.world_path;
        let path = if p.is_dir() { p.join(WORLD_FILE) } else { p.clone() };
        load_world(&path)
    }
}

#[derive(Args)]
struct ObjectivesArg {
    /// Objective definitions; defaults to the world's reward tables.
    #[arg(long = "objectives")]
    objectives_path: Option<PathBuf>,
}

impl ObjectivesArg {
    fn load(&self, world: &World) -> Result<ObjectiveSet> {
        match &self.objectives_path {
            Some(p) => load_objectives(p),
            None => Ok(ObjectiveSet::from_tables(world)),
        }
    }
}

#[derive(Args)]
struct CurateArgs {
    #[command(flatten)]
    world: WorldArg,
    #[command(flatten)]
    objectives: ObjectivesArg,
    /// Data of the current objective. Repeat to pass earlier objectives'
    /// data first (objectives 1, 2, ...), which `mixed` merges in front.
    #[arg(long = "dataset", required = true)]
    datasets: Vec<PathBuf>,
    #[arg(long)]
    strategy: Strategy,
    #[arg(long)]
    objective: usize,
    /// Defaults to every objective up to `--objective`.
    #[arg(long, value_delimiter = ',')]
    mask: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sampling policy; defaults to the all-zero policy.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long)]
    keep_original: bool,
    /// Disable z-scoring before the RSDPO-W average.
    #[arg(long)]
    raw_average: bool,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to `<out>.report.jsonl`.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct TrainOpts {
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    /// 0 means full batch.
    #[arg(long, default_value_t = 0)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    shuffle: bool,
    #[arg(long, default_value_t = 0.9)]
    current_weight: f64,
}

impl TrainOpts {
    fn config(&self, method: Method) -> TrainConfig {
        TrainConfig {
            method,
            beta: self.beta,
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            shuffle: self.shuffle,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    world: WorldArg,
    #[command(flatten)]
    objectives: ObjectivesArg,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    objective: usize,
    #[arg(long, default_value = "dpo")]
    method: Method,
    /// Starting policy; defaults to the all-zero policy.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Defaults to the starting policy.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Defaults to every objective below `--objective`.
    #[arg(long, value_delimiter = ',')]
    margin_objectives: Option<Vec<usize>>,
    #[command(flatten)]
    opts: TrainOpts,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss log.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct TrainSeqArgs {
    #[command(flatten)]
    world: WorldArg,
    #[command(flatten)]
    objectives: ObjectivesArg,
    /// `objective:method:dataset`, in training order.
    #[arg(long = "stage", required = true)]
    stages: Vec<String>,
    #[arg(long)]
    init: Option<PathBuf>,
    #[command(flatten)]
    opts: TrainOpts,
    /// Receives `stage<i>.policy` and `stage<i>.log.jsonl`.
    #[arg(long)]
    out: PathBuf,
}

fn zero_policy(world: &World) -> LogLinearPolicy {
    LogLinearPolicy::zeros(world.feature_dim, "init")
}

fn policy_or_zero(path: Option<&Path>, world: &World) -> Result<LogLinearPolicy> {
    path.map(load_policy).unwrap_or_else(|| Ok(zero_policy(world)))
}

fn earlier(objective: usize) -> Vec<usize> {
    (1..objective).collect()
}

fn mask_for(objective: usize, mask: Option<&[usize]>, delta: f64) -> ConsistencyMask {
    match mask {
        Some(ids) => ConsistencyMask::new(ids.iter().copied()),
        None => ConsistencyMask::up_to(objective),
    }
    .with_delta(delta)
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn gen_world(config: Option<&Path>, out: &Path) -> Result<()> {
    let config: WorldConfig = match config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|source| Error::MissingInput {
                path: p.to_path_buf(),
                source,
            })?;
            serde_json::from_str(&text).map_err(|e| Error::InvalidConfig {
                field: "config".into(),
                message: format!("{}: {e}", p.display()),
            })?
        }
        None => WorldConfig::default(),
    };
    let world = generate_world(&config)?;
    fs::create_dir_all(out)?;
    save_world(&world, &out.join(WORLD_FILE))?;
    let check = load_world(&out.join(WORLD_FILE))?;
    println!(
        "world: {} prompts, {} candidates each, d = {}, K = {}, rho = {}",
        check.num_prompts(),
        config.candidates_per_prompt,
        check.feature_dim,
        check.num_objectives,
        check.conflict_rho
    );
    Ok(())
}

fn run_curate(a: &CurateArgs) -> Result<()> {
    let world = a.world.load()?;
    let objectives = a.objectives.load(&world)?;
    let (current_path, previous_paths) = a.datasets.split_last().expect("clap requires one dataset");
    let dataset = load_dataset(current_path, &world, a.objective)?;
    let previous = previous_paths
        .iter()
        .enumerate()
        .map(|(i, p)| load_dataset(p, &world, i + 1))
        .collect::<Result<Vec<_>>>()?;
    let previous: Vec<&PreferenceDataset> = previous.iter().collect();
    let sampler = policy_or_zero(a.policy.as_deref(), &world)?;
    let config = CurationConfig {
        temperature: a.temperature,
        standardize_for_average: !a.raw_average,
        ..CurationConfig::new(a.strategy, a.objective)
            .with_mask(mask_for(a.objective, a.mask.as_deref(), a.delta))
            .with_n(a.n)
            .with_seed(a.seed)
            .with_fallback(if a.keep_original { Fallback::KeepOriginal } else { Fallback::Drop })
    };
    let (curated, report) = curate(&dataset, &previous, &sampler, &world, &objectives, &config)?;
    save_dataset(&curated, &a.out)?;
    let report_path = a.report.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".report.jsonl");
        PathBuf::from(s)
    });
    save_curation_report(&report, &report_path)?;
    println!(
        "{}: {} in, {} emitted, {} failed",
        a.strategy, report.input_count, report.emitted_count, report.failure_count
    );
    Ok(())
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let world = a.world.load()?;
    let objectives = a.objectives.load(&world)?;
    let dataset = load_dataset(&a.dataset, &world, a.objective)?;
    let init = policy_or_zero(a.init.as_deref(), &world)?;
    let reference = match &a.reference {
        Some(p) => load_policy(p)?,
        None => init.clone(),
    };
    let ids = a.margin_objectives.clone().unwrap_or_else(|| earlier(a.objective));
    let margin = MarginSpec::even_split(&objectives, a.opts.current_weight, &ids)?;
    let run = train(&dataset, &init, &reference, &a.opts.config(a.method), Some(&margin), &world)?;
    save_policy(&run.final_policy, &a.out)?;
    if let Some(log) = &a.log {
        save_train_log(&run, log)?;
    }
    info!("final loss {:?}", run.losses.last());
    Ok(())
}

fn parse_stage(text: &str) -> Result<(usize, Method, PathBuf)> {
    let bad = || Error::InvalidConfig {
        field: "stage".into(),
        message: format!("expected `objective:method:dataset`, got `{text}`"),
    };
    let mut parts = text.splitn(3, ':');
    let objective = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    let method = parts.next().ok_or_else(bad)?.parse()?;
    let path = parts.next().filter(|p| !p.is_empty()).ok_or_else(bad)?;
    Ok((objective, method, PathBuf::from(path)))
}

fn run_train_seq(a: &TrainSeqArgs) -> Result<()> {
    let world = a.world.load()?;
    let objectives = a.objectives.load(&world)?;
    let stages = a
        .stages
        .iter()
        .map(|s| {
            let (objective, method, path) = parse_stage(s)?;
            Ok(Stage {
                dataset: load_dataset(&path, &world, objective)?,
                method,
                margin: Some(MarginSpec::even_split(&objectives, a.opts.current_weight, &earlier(objective))?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let init = policy_or_zero(a.init.as_deref(), &world)?;
    let runs = train_sequential(&stages, &init, &a.opts.config(Method::Dpo), &world)?;
    fs::create_dir_all(&a.out)?;
    for (i, run) in runs.iter().enumerate() {
        save_policy(&run.final_policy, &a.out.join(format!("stage{}.policy", i + 1)))?;
        save_train_log(run, &a.out.join(format!("stage{}.log.jsonl", i + 1)))?;
    }
    Ok(())
}

fn read_prompt_ids(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|source| Error::MissingInput {
        path: path.to_path_buf(),
        source,
    })?;
    let mut ids = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        let id = line.trim();
        if !id.is_empty() {
            ids.push(id.to_string());
        }
    }
    Ok(ids)
}

fn read_metrics(path: &Path) -> Result<EvalMetrics> {
    let text = fs::read_to_string(path).map_err(|source| Error::MissingInput {
        path: path.to_path_buf(),
        source,
    })?;
    let record: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&text)?;
    EvalMetrics::from_record(&record)
}

fn run_report(rows: &[String], caption: &str, out: Option<&Path>, csv: Option<&Path>) -> Result<()> {
    let rows = rows
        .iter()
        .map(|r| {
            let (label, path) = r.split_once('=').ok_or_else(|| Error::InvalidConfig {
                field: "row".into(),
                message: format!("expected `label=metrics.json`, got `{r}`"),
            })?;
            Ok((label.to_string(), read_metrics(Path::new(path))?))
        })
        .collect::<Result<Vec<_>>>()?;
    let table = ReportTable::new(caption, &rows)?;
    match out {
        Some(p) => fs::write(p, table.to_text())?,
        None => print!("{}", table.to_text()),
    }
    if let Some(p) = csv {
        table.write_csv(create(p)?)?;
    }
    Ok(())
}

fn run_experiment_protocol(spec: Option<&Path>, protocol: Protocol, relaxed: usize, out: &Path) -> Result<()> {
    let spec: ExperimentSpec = match spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|source| Error::MissingInput {
                path: p.to_path_buf(),
                source,
            })?;
            serde_json::from_str(&text).map_err(|e| Error::InvalidConfig {
                field: "spec".into(),
                message: format!("{}: {e}", p.display()),
            })?
        }
        None => ExperimentSpec::default(),
    };
    spec.validate()?;
    fs::create_dir_all(out)?;
    let name = match protocol {
        Protocol::Subsets => "subsets",
        Protocol::Strategies => "strategies",
        Protocol::Ablation => "ablation",
        Protocol::Masks => "masks",
    };
    for &seed in &spec.seeds {
        let table = match protocol {
            Protocol::Subsets => consistency_subsets(&spec, seed)?,
            Protocol::Strategies => strategy_comparison(&spec, seed)?,
            Protocol::Ablation => ablation(&spec, seed)?,
            Protocol::Masks => mask_flexibility(&spec, seed, relaxed)?,
        };
        print!("{}", table.to_text());
        fs::write(out.join(format!("{name}_seed{seed}.txt")), table.to_text())?;
        table.write_csv(create(&out.join(format!("{name}_seed{seed}.csv")))?)?;
    }
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenWorld { config, out } => gen_world(config.as_deref(), &out),
        Command::BuildDataset {
            world,
            objective,
            pairs_per_prompt,
            seed,
            out,
        } => {
            let world = world.load()?;
            let (dataset, report) = build_vanilla_dataset(&world, objective, pairs_per_prompt, seed)?;
            for p in &report.skipped_prompts {
                log::warn!("prompt {p}: candidates tie on objective {objective}, skipped");
            }
            save_dataset(&dataset, &out)?;
            println!("{} pairs labelled by objective {objective}", dataset.len());
            Ok(())
        }
        Command::Curate(a) => run_curate(&a),
        Command::Train(a) => run_train(&a),
        Command::TrainSeq(a) => run_train_seq(&a),
        Command::Eval {
            world,
            objectives,
            policy,
            reference,
            prompts,
            out,
            csv,
        } => {
            let world = world.load()?;
            let objectives = objectives.load(&world)?;
            let policy = load_policy(&policy)?;
            let reference = policy_or_zero(reference.as_deref(), &world)?;
            let ids = match &prompts {
                Some(p) => read_prompt_ids(p)?,
                None => world.candidate_sets().iter().map(|s| s.prompt.id.clone()).collect(),
            };
            let metrics = evaluate(&policy, &reference, &world, &objectives, &ids)?;
            write_json(&metrics.to_record(), Some(&out))?;
            if let Some(p) = csv {
                metrics.write_csv(create(&p)?)?;
            }
            Ok(())
        }
        Command::Analyze {
            world,
            objectives,
            dataset,
            objective,
            policy,
            reference,
            beta,
            current_weight,
            margin_objectives,
            out,
            summary,
        } => {
            let world = world.load()?;
            let objectives = objectives.load(&world)?;
            let dataset = load_dataset(&dataset, &world, objective)?;
            let policy = policy_or_zero(policy.as_deref(), &world)?;
            let reference = policy_or_zero(reference.as_deref(), &world)?;
            let ids = margin_objectives.unwrap_or_else(|| earlier(objective));
            let margin = MarginSpec::even_split(&objectives, current_weight, &ids)?;
            let c = classify_dataset(&dataset, &policy, &reference, beta, &margin, &world)?;
            write_classification_csv(&dataset, &c, create(&out)?)?;
            write_json(&c, summary.as_deref())
        }
        Command::RcStats {
            world,
            objectives,
            dataset,
            objective,
            mask,
            delta,
            out,
        } => {
            let world = world.load()?;
            let objectives = objectives.load(&world)?;
            let dataset = load_dataset(&dataset, &world, objective)?;
            let stats = dataset_rc_stats(&dataset, &world, &objectives, &mask_for(objective, mask.as_deref(), delta))?;
            write_json(&stats, out.as_deref())
        }
        Command::FailureCurve {
            world,
            objectives,
            dataset,
            objective,
            policy,
            mask,
            n_values,
            seed,
            out,
        } => {
            let world = world.load()?;
            let objectives = objectives.load(&world)?;
            let dataset = load_dataset(&dataset, &world, objective)?;
            let sampler = policy_or_zero(policy.as_deref(), &world)?;
            let config = CurationConfig::new(Strategy::Rcs, objective)
                .with_mask(mask_for(objective, mask.as_deref(), 0.0))
                .with_seed(seed);
            let points = failure_curve(&dataset, &sampler, &world, &objectives, &config, &n_values)?;
            let mut w = csv::Writer::from_writer(create(&out)?);
            w.write_record(["n", "failure_count", "total"])?;
            for p in &points {
                w.write_record([p.n.to_string(), p.failure_count.to_string(), dataset.len().to_string()])?;
            }
            w.flush()?;
            Ok(())
        }
        Command::Report { rows, caption, out, csv } => run_report(&rows, &caption, out.as_deref(), csv.as_deref()),
        Command::Experiment {
            spec,
            protocol,
            relaxed,
            out,
        } => run_experiment_protocol(spec.as_deref(), protocol, relaxed, &out),
    }
}

fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var("RCSLAB_THREADS") else {
        return Ok(());
    };
    let threads: usize = value.trim().parse().ok().filter(|&n| n >= 1).ok_or_else(|| Error::InvalidConfig {
        field: "RCSLAB_THREADS".into(),
        message: format!("expected an integer >= 1, got `{value}`"),
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidConfig {
            field: "RCSLAB_THREADS".into(),
            message: e.to_string(),
        })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match init_threads().and_then(|()| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let _ = std::io::stderr().flush();
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
