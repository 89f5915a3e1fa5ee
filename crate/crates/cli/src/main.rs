use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use siftmask::data::{save_tasks, HeterogeneityRegime, TaskId, TaskSpec};
use siftmask::engine::{project_clustered_cost, ClusteredSystem, EvalMode, ExactnessReport};
use siftmask::merging::{Divisor, Method, DEFAULT_ALPHA_GRID, DEFAULT_DENSITY_GRID};
use siftmask::persist::{
    evaluation_rows, ledger_rows, projection_rows, write_csv, Checkpoint, DataSource, RunConfig, Summary,
};
use siftmask::trainer::ModelKind;
use siftmask::Error;

const CHECKPOINT_FILE: &str = "checkpoint.sftm";

#[derive(Parser)]
#[command(name = "siftmask", version, about = "Exact unlearning through merged, sign-fixed task vectors")]
struct Cli {
    /// Upper bound on parallel task finetunes.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic task data as JSON lines.
    GenData(ConfigArgs),
    /// Finetune every task, merge, and write a checkpoint.
    Train(ConfigArgs),
    /// Write the unmasked merged model of a checkpoint as JSON.
    Merge(CheckpointArgs),
    /// Evaluate held-in and held-out accuracy to CSV.
    Eval(CheckpointArgs),
    /// Delete tasks and rewrite the checkpoint.
    Unlearn(UnlearnArgs),
    /// Replay every retained task and compare against the checkpoint.
    Verify(CheckpointArgs),
    /// Print ledger, storage and accuracy summaries.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodName {
    SiftMasks,
    FtMerge,
    TallMasks,
    Emr,
    Ties,
    Central,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegimeName {
    Conflicting,
    Distinct,
    Similar,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindName {
    Logistic,
    Mlp,
}

#[derive(Clone, Copy, ValueEnum)]
enum DivisorName {
    Retained,
    Overlap,
}

/// Run configuration. Flags override fields of `--config`.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    method: Option<MethodName>,
    /// TIES trim density.
    #[arg(long)]
    density: Option<f64>,
    /// TALL density grid, comma separated.
    #[arg(long, value_delimiter = ',')]
    density_grid: Option<Vec<f64>>,
    /// TALL rescale grid, comma separated.
    #[arg(long, value_delimiter = ',')]
    alpha_grid: Option<Vec<f64>>,
    /// Central training steps per task in the retain set.
    #[arg(long)]
    steps_per_task: Option<usize>,
    #[arg(long, value_enum)]
    regime: Option<RegimeName>,
    /// Conflict rate, shared-rule fraction or margin, depending on the regime.
    #[arg(long)]
    regime_param: Option<f64>,
    /// Number of synthetic tasks.
    #[arg(long)]
    tasks: Option<usize>,
    #[arg(long)]
    n_per_task: Option<usize>,
    /// Read tasks from a JSON-lines file instead of generating them.
    #[arg(long)]
    data_file: Option<PathBuf>,
    #[arg(long, value_enum)]
    model_kind: Option<KindName>,
    #[arg(long)]
    input_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, value_enum)]
    divisor: Option<DivisorName>,
    #[arg(long)]
    clusters: Option<usize>,
}

#[derive(Args)]
struct CheckpointArgs {
    /// Defaults to `<out>/checkpoint.sftm`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct UnlearnArgs {
    #[command(flatten)]
    target: CheckpointArgs,
    /// Task id to delete; repeatable.
    #[arg(long = "id")]
    ids: Vec<u32>,
    /// File of task ids, separated by whitespace or commas.
    #[arg(long)]
    ids_file: Option<PathBuf>,
    /// Also compare each resulting state with a fresh build.
    #[arg(long)]
    audit: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Project the cost of deleting every task without training.
    #[arg(long)]
    simulate: bool,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::ReplayMismatch(_)) { 3 } else { 2 };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 1, message: message.into() }
}

type CliResult<T = ()> = Result<T, Failure>;

fn method_from(args: &ConfigArgs, name: MethodName, steps: usize) -> Method {
    match name {
        MethodName::SiftMasks => Method::SiftMasks,
        MethodName::FtMerge => Method::FtMerge,
        MethodName::TallMasks => Method::TallMasks {
            density_grid: args.density_grid.clone().unwrap_or_else(|| DEFAULT_DENSITY_GRID.to_vec()),
            alpha_grid: args.alpha_grid.clone().unwrap_or_else(|| DEFAULT_ALPHA_GRID.to_vec()),
        },
        MethodName::Emr => Method::Emr,
        MethodName::Ties => Method::Ties { density: args.density.unwrap_or(0.5) },
        MethodName::Central => Method::Central { steps_per_task: args.steps_per_task.unwrap_or(steps) },
    }
}

fn resolve(args: &ConfigArgs) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$(if let Some(v) = args.$field { cfg.$field = v; })*};
    }
    set!(seed, steps, batch_size, learning_rate, clusters);
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(k) = args.model_kind {
        cfg.model.kind = match k {
            KindName::Logistic => ModelKind::Logistic,
            KindName::Mlp => ModelKind::Mlp,
        };
    }
    if let Some(v) = args.input_dim {
        cfg.model.input_dim = v;
    }
    if let Some(v) = args.hidden_dim {
        cfg.model.hidden_dim = v;
    }
    if let Some(v) = args.num_classes {
        cfg.model.num_classes = v;
    }
    if let Some(d) = args.divisor {
        cfg.divisor = match d {
            DivisorName::Retained => Divisor::Retained,
            DivisorName::Overlap => Divisor::Overlap,
        };
    }
    if let Some(name) = args.method {
        cfg.method = method_from(args, name, cfg.steps);
    } else {
        match &mut cfg.method {
            Method::TallMasks { density_grid, alpha_grid } => {
                if let Some(g) = &args.density_grid {
                    *density_grid = g.clone();
                }
                if let Some(g) = &args.alpha_grid {
                    *alpha_grid = g.clone();
                }
            }
            Method::Ties { density } => *density = args.density.unwrap_or(*density),
            Method::Central { steps_per_task } => *steps_per_task = args.steps_per_task.unwrap_or(*steps_per_task),
            _ => {}
        }
    }
    if let Some(path) = &args.data_file {
        if args.regime.is_some() || args.tasks.is_some() || args.n_per_task.is_some() {
            return Err(usage("--data-file cannot be combined with synthetic data flags"));
        }
        cfg.data = DataSource::File { path: path.clone() };
    } else if args.regime.is_some() || args.regime_param.is_some() || args.tasks.is_some() || args.n_per_task.is_some()
    {
        let (mut regime, mut tasks, mut n) = match &cfg.data {
            DataSource::Synthetic { regime, tasks, n_per_task } => (*regime, *tasks, *n_per_task),
            DataSource::File { .. } => (HeterogeneityRegime::Conflicting { conflict_rate: 0.5 }, 10, 400),
        };
        if let Some(name) = args.regime {
            let p = args.regime_param;
            regime = match name {
                RegimeName::Conflicting => HeterogeneityRegime::Conflicting { conflict_rate: p.unwrap_or(0.5) },
                RegimeName::Distinct => HeterogeneityRegime::Distinct { shared_rule: p.unwrap_or(0.2) },
                RegimeName::Similar => HeterogeneityRegime::Similar { margin: p.unwrap_or(0.1) },
            };
        } else if let Some(p) = args.regime_param {
            regime = match regime {
                HeterogeneityRegime::Conflicting { .. } => HeterogeneityRegime::Conflicting { conflict_rate: p },
                HeterogeneityRegime::Distinct { .. } => HeterogeneityRegime::Distinct { shared_rule: p },
                HeterogeneityRegime::Similar { .. } => HeterogeneityRegime::Similar { margin: p },
            };
        }
        tasks = args.tasks.unwrap_or(tasks);
        n = args.n_per_task.unwrap_or(n);
        cfg.data = DataSource::Synthetic { regime, tasks, n_per_task: n };
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn prepare_out(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn checkpoint_path(args: &CheckpointArgs) -> PathBuf {
    args.checkpoint.clone().unwrap_or_else(|| args.out.join(CHECKPOINT_FILE))
}

fn load(args: &CheckpointArgs) -> CliResult<(Checkpoint, Vec<TaskSpec>)> {
    let ckpt = Checkpoint::load(checkpoint_path(args))?;
    let tasks = ckpt.config.tasks()?;
    Ok((ckpt, tasks))
}

fn unlearn_events(system: &ClusteredSystem) -> usize {
    system.ledger().events().len() - system.systems().len()
}

fn gen_data(args: &ConfigArgs) -> CliResult {
    let cfg = resolve(args)?;
    let Some(generator) = cfg.generator() else {
        return Err(usage("gen-data needs a synthetic data source"));
    };
    prepare_out(&cfg.output_dir)?;
    let tasks = generator.generate()?;
    let path = cfg.output_dir.join("data.jsonl");
    save_tasks(&path, &tasks)?;
    std::fs::write(cfg.output_dir.join("generator.json"), serde_json::to_string_pretty(&generator).unwrap() + "\n")?;
    cfg.save(cfg.output_dir.join("config.json"))?;
    println!("wrote {} tasks to {}", tasks.len(), path.display());
    Ok(())
}

fn train(args: &ConfigArgs) -> CliResult {
    let cfg = resolve(args)?;
    prepare_out(&cfg.output_dir)?;
    let tasks = cfg.tasks()?;
    let system = cfg.build(&tasks)?;
    let method = cfg.method.name();
    write_csv(cfg.output_dir.join("ledger.csv"), &ledger_rows(method, &system.ledger()), false)?;
    let summary = Summary::of(&system);
    cfg.save(cfg.output_dir.join("config.json"))?;
    let path = cfg.output_dir.join(CHECKPOINT_FILE);
    Checkpoint::new(cfg, system).save(&path)?;
    println!(
        "{method}: merged {} tasks, {} finetune steps, {} stored words -> {}",
        summary.retained,
        summary.build_finetune_steps,
        summary.storage.words,
        path.display()
    );
    Ok(())
}

fn merge(args: &CheckpointArgs) -> CliResult {
    let ckpt = Checkpoint::load(checkpoint_path(args))?;
    prepare_out(&args.out)?;
    let clusters: Vec<serde_json::Value> = ckpt
        .system
        .systems()
        .iter()
        .map(|s| {
            let params = s.state().serve_merged(s.base())?;
            Ok(serde_json::json!({
                "retained": s.retained().iter().map(|t| t.0).collect::<Vec<_>>(),
                "params": params.as_slice(),
            }))
        })
        .collect::<Result<_, Error>>()?;
    let doc = serde_json::json!({ "method": ckpt.config.method.name(), "clusters": clusters });
    let path = args.out.join("merged_model.json");
    std::fs::write(&path, serde_json::to_string(&doc).unwrap() + "\n")?;
    println!("wrote {}", path.display());
    Ok(())
}

fn eval(args: &CheckpointArgs) -> CliResult {
    let (ckpt, tasks) = load(args)?;
    prepare_out(&args.out)?;
    let method = ckpt.config.method.name();
    let event = unlearn_events(&ckpt.system);
    let held_in = ckpt.system.evaluate(&tasks, EvalMode::HeldIn)?;
    let held_out = ckpt.system.evaluate(&tasks, EvalMode::HeldOut)?;
    let mut rows = evaluation_rows(method, event, "held_in_accuracy", &held_in);
    rows.extend(evaluation_rows(method, event, "held_out_accuracy", &held_out));
    write_csv(args.out.join("eval.csv"), &rows, false)?;
    let mut summary = Summary::of(&ckpt.system);
    summary.held_in_accuracy = held_in.aggregate;
    summary.held_out_accuracy = held_out.aggregate;
    summary.zeroshot_accuracy = ckpt.system.systems()[0].zeroshot(&tasks).aggregate;
    std::fs::write(args.out.join("summary.json"), summary.to_json() + "\n")?;
    let pct = |a: Option<f64>| a.map_or("n/a".to_string(), |v| format!("{:.2}%", 100.0 * v));
    println!(
        "{method}: held-in {}, held-out {}, zeroshot {}",
        pct(held_in.aggregate),
        pct(held_out.aggregate),
        pct(summary.zeroshot_accuracy)
    );
    Ok(())
}

fn read_ids(args: &UnlearnArgs) -> CliResult<Vec<TaskId>> {
    let mut ids: Vec<TaskId> = args.ids.iter().map(|&i| TaskId(i)).collect();
    if let Some(path) = &args.ids_file {
        let text = std::fs::read_to_string(path)?;
        for tok in text.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
            let id = tok.parse::<u32>().map_err(|_| Failure {
                code: 2,
                message: format!("{}: invalid task id {tok:?}", path.display()),
            })?;
            ids.push(TaskId(id));
        }
    }
    if ids.is_empty() {
        return Err(usage("unlearn needs --id or --ids-file"));
    }
    Ok(ids)
}

fn append_report(path: &Path, report: &ExactnessReport) -> CliResult {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", serde_json::to_string(report).unwrap())?;
    Ok(())
}

fn unlearn(args: &UnlearnArgs) -> CliResult {
    let ids = read_ids(args)?;
    let path = checkpoint_path(&args.target);
    let (mut ckpt, tasks) = load(&args.target)?;
    prepare_out(&args.target.out)?;
    let log = args.target.out.join("exactness.jsonl");
    for id in ids {
        let outcome = if args.audit {
            ckpt.system.unlearn_audited(id, &tasks)
        } else {
            ckpt.system.unlearn(id, &tasks)
        };
        let outcome = match outcome {
            Ok(o) => o,
            Err(e) => {
                // Keep every deletion that already succeeded.
                ckpt.save(&path)?;
                return Err(e.into());
            }
        };
        append_report(&log, &outcome.report)?;
        println!("unlearned task {id}: {} task-finetunes", outcome.cost.task_finetunes);
        if args.audit && !outcome.report.is_exact() {
            ckpt.save(&path)?;
            return Err(Failure { code: 3, message: format!("exactness audit failed after deleting task {id}") });
        }
    }
    ckpt.save(&path)?;
    Ok(())
}

fn verify(args: &CheckpointArgs) -> CliResult {
    let (ckpt, tasks) = load(args)?;
    let mut exact = true;
    for (k, s) in ckpt.system.systems().iter().enumerate() {
        let r = s.verify_exactness(&tasks)?;
        println!(
            "cluster {k}: {} retained, replay_matches={}, state_matches_oracle={}",
            s.retained().len(),
            r.replay_matches,
            r.state_matches_oracle.unwrap_or(false)
        );
        exact &= r.is_exact();
    }
    if !exact {
        return Err(Failure { code: 3, message: "exactness violated".into() });
    }
    println!("exact");
    Ok(())
}

fn simulate(cfg: &RunConfig) -> CliResult {
    let tasks = match &cfg.data {
        DataSource::Synthetic { tasks, .. } => *tasks,
        DataSource::File { .. } => cfg.tasks()?.len(),
    };
    if cfg.clusters > tasks {
        return Err(usage(format!("--clusters {} exceeds {tasks} tasks", cfg.clusters)));
    }
    let sizes: Vec<usize> = (0..cfg.clusters).map(|k| tasks / cfg.clusters + usize::from(k < tasks % cfg.clusters)).collect();
    let steps = cfg.steps as u64;
    let methods = [
        Method::Central { steps_per_task: cfg.steps },
        Method::SiftMasks,
        Method::FtMerge,
        Method::tall_default(),
        Method::Emr,
        Method::Ties { density: 0.5 },
    ];
    println!("unlearning all {tasks} tasks one by one, {} cluster(s), {steps} steps per finetune", cfg.clusters);
    println!("{:<12} {:>16} {:>16} {:>22}", "method", "task_finetunes", "finetune_steps", "first_deletion_steps");
    let mut rows = Vec::new();
    let mut totals = Vec::new();
    for m in &methods {
        let p = project_clustered_cost(&sizes, m, steps);
        let first = p.per_event.first().copied().unwrap_or(0) * steps;
        println!("{:<12} {:>16} {:>16} {:>22}", m.name(), p.total_task_finetunes, p.total_finetune_steps, first);
        rows.extend(projection_rows(m.name(), &p));
        totals.push(p.total_task_finetunes);
    }
    if totals[1] > 0 {
        println!("central / merge ratio: {:.2}", totals[0] as f64 / totals[1] as f64);
    }
    prepare_out(&cfg.output_dir)?;
    write_csv(cfg.output_dir.join("projection.csv"), &rows, false)?;
    Ok(())
}

fn report(args: &ReportArgs) -> CliResult {
    if args.simulate {
        return simulate(&resolve(&args.config)?);
    }
    let out = args.config.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let target = CheckpointArgs { checkpoint: args.checkpoint.clone(), out: out.clone() };
    let (ckpt, tasks) = load(&target)?;
    let method = ckpt.config.method.name();
    let system = &ckpt.system;
    let ledger = system.ledger();
    let mut summary = Summary::of(system);
    summary.held_in_accuracy = system.evaluate(&tasks, EvalMode::HeldIn)?.aggregate;
    summary.held_out_accuracy = system.evaluate(&tasks, EvalMode::HeldOut)?.aggregate;
    summary.zeroshot_accuracy = system.systems()[0].zeroshot(&tasks).aggregate;
    println!("method {method}, {} cluster(s)", summary.clusters);
    println!("{:<6} {:<8} {:>8} {:>15} {:>15}", "event", "phase", "task", "task_finetunes", "finetune_steps");
    for (i, e) in ledger.events().iter().enumerate() {
        let task = e.task.map_or("-".to_string(), |t| t.to_string());
        let phase = format!("{:?}", e.phase).to_lowercase();
        println!("{i:<6} {phase:<8} {task:>8} {:>15} {:>15}", e.task_finetunes, e.finetune_steps());
    }
    println!(
        "totals: build {} finetunes / {} steps, unlearn {} finetunes / {} steps",
        summary.build_task_finetunes,
        summary.build_finetune_steps,
        summary.unlearn_task_finetunes,
        summary.unlearn_finetune_steps
    );
    println!(
        "storage: {} words ({} model + {} mask)",
        summary.storage.words, summary.storage.model_words, summary.storage.mask_words
    );
    println!("retained {}, unlearned {}", summary.retained, summary.unlearned);
    let pct = |a: Option<f64>| a.map_or("n/a".to_string(), |v| format!("{:.2}%", 100.0 * v));
    println!(
        "accuracy: held-in {}, held-out {}, zeroshot {}",
        pct(summary.held_in_accuracy),
        pct(summary.held_out_accuracy),
        pct(summary.zeroshot_accuracy)
    );
    prepare_out(&out)?;
    write_csv(out.join("ledger.csv"), &ledger_rows(method, &ledger), false)?;
    std::fs::write(out.join("summary.json"), summary.to_json() + "\n")?;
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| usage(e.to_string()))?;
    }
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Merge(a) => merge(a),
        Command::Eval(a) => eval(a),
        Command::Unlearn(a) => unlearn(a),
        Command::Verify(a) => verify(a),
        Command::Report(a) => report(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
