use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use goalchain_core::config::RunConfig;
use goalchain_core::datasets::{self, Dataset};
use goalchain_core::evaluation::{EvalCell, EvalReport, Evaluator, Preprocessor};
use goalchain_core::gateway::Transcript;
use goalchain_core::model::{parse_ground_truth, GroundTruthDataset};
use goalchain_core::orchestrator::LoopConfig;
use goalchain_core::prompting::ShotStrategy;
use goalchain_core::report;
use goalchain_core::runner::{self, RunError, RunOutcome, RunRequest};

#[derive(Parser)]
#[command(name = "goalchain", version, about = "Extract and evaluate goal models from project descriptions")]
struct Cli {
    /// Run configuration (JSON). Defaults to offline fixture providers.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root directory for run outputs and reports.
    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,
    /// Serve all model calls from a recorded transcript.
    #[arg(long, global = true, value_name = "TRANSCRIPT")]
    replay: Option<PathBuf>,
    /// Also write the run's transcript to this path.
    #[arg(long, global = true, value_name = "PATH")]
    record: Option<PathBuf>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Run the extraction pipeline on one dataset.
    Run {
        dataset: String,
        #[arg(long)]
        strategy: Option<ShotStrategy>,
        #[arg(long, value_enum)]
        critic: Option<Switch>,
        /// Run every strategy with the critic on and off, concurrently.
        #[arg(long)]
        matrix: bool,
    },
    /// Score run directories against their ground truth.
    Evaluate {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Ground-truth file overriding the dataset's own annotations.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Where to write the JSON report [default: <out-dir>/eval_report.json].
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Similarity between dataset descriptions and the shot examples.
    ShotSim {
        /// Datasets to include [default: all bundled].
        datasets: Vec<String>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare a critic-on report with a critic-off report.
    Ablate {
        #[arg(long = "with", value_name = "REPORT")]
        with_critic: PathBuf,
        #[arg(long = "without", value_name = "REPORT")]
        without_critic: PathBuf,
    },
    /// Render evaluation reports as tables.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Also print the macro average over datasets.
        #[arg(long)]
        average: bool,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        Self {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| Failure::config(e.to_string())),
        None => Ok(RunConfig::default()),
    }
}

fn load_dataset(config: &RunConfig, id: &str) -> Result<Dataset, Failure> {
    datasets::load(config.datasets_dir.as_deref(), id).map_err(|e| Failure::config(e.to_string()))
}

fn dispatch(cli: &Cli) -> CmdResult {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Run {
            dataset,
            strategy,
            critic,
            matrix,
        } => cmd_run(cli, &config, dataset, *strategy, *critic, *matrix),
        Command::Evaluate { runs, truth, output } => cmd_evaluate(cli, &config, runs, truth.as_deref(), output.as_deref()),
        Command::ShotSim { datasets, output } => cmd_shot_sim(&config, datasets, output.as_deref()),
        Command::Ablate {
            with_critic,
            without_critic,
        } => cmd_ablate(with_critic, without_critic),
        Command::Report { reports, average } => cmd_report(reports, *average),
    }
}

fn print_summary(outcome: &RunOutcome) {
    println!("run {} -> {}", outcome.manifest.run_id, outcome.run_dir.display());
    for r in &outcome.output.stage_results {
        let score = r.final_score.map_or("-".to_string(), |s| format!("{s:.1}"));
        let state = if r.final_score.is_none() {
            "no critic"
        } else if r.converged {
            "converged"
        } else {
            "threshold not reached"
        };
        println!(
            "  {:<16} iterations {}  score {:>4}  {state}",
            r.stage.title(),
            r.iterations_used,
            score
        );
    }
    let m = &outcome.output.goal_model;
    println!(
        "  {} actors, {} high-level goals, {} low-level goals, {} API mappings",
        m.actors.len(),
        m.high_level.len(),
        m.low_level.len(),
        outcome.output.api_mappings.len()
    );
}

fn cmd_run(
    cli: &Cli,
    config: &RunConfig,
    dataset_id: &str,
    strategy: Option<ShotStrategy>,
    critic: Option<Switch>,
    matrix: bool,
) -> CmdResult {
    let dataset = load_dataset(config, dataset_id)?;
    let replay = match &cli.replay {
        Some(path) => Some(Transcript::read(path).map_err(|e| Failure::config(e.to_string()))?),
        None => None,
    };
    let base = LoopConfig {
        strategy: strategy.unwrap_or(config.loop_config.strategy),
        critic_enabled: critic.map_or(config.loop_config.critic_enabled, |c| c == Switch::On),
        ..config.loop_config.clone()
    };
    let request = |loop_config: LoopConfig| RunRequest {
        config,
        loop_config,
        dataset: &dataset,
        out_root: &cli.out_dir,
        replay: replay.as_ref(),
        record: cli.record.as_deref(),
    };

    if !matrix {
        let outcome = runner::execute_run(request(base))?;
        print_summary(&outcome);
        return Ok(());
    }
    if cli.replay.is_some() || cli.record.is_some() || strategy.is_some() || critic.is_some() {
        return Err(Failure::config(
            "--matrix runs every strategy and critic setting; it cannot be combined with --replay, --record, --strategy or --critic",
        ));
    }
    let cells: Vec<LoopConfig> = ShotStrategy::ALL
        .into_iter()
        .flat_map(|s| [true, false].map(|c| (s, c)))
        .map(|(strategy, critic_enabled)| LoopConfig {
            strategy,
            critic_enabled,
            ..base.clone()
        })
        .collect();
    let results: Vec<Result<RunOutcome, RunError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cells
            .into_iter()
            .map(|c| {
                let req = request(c);
                scope.spawn(move || runner::execute_run(req))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("run thread panicked")).collect()
    });
    let mut worst: Option<Failure> = None;
    for r in results {
        match r {
            Ok(outcome) => print_summary(&outcome),
            Err(e) => {
                eprintln!("error: {e}");
                let f = Failure::from(e);
                if worst.as_ref().is_none_or(|w| f.code > w.code) {
                    worst = Some(f);
                }
            }
        }
    }
    match worst {
        None => Ok(()),
        Some(f) => Err(Failure {
            code: f.code,
            message: "one or more matrix cells failed".into(),
        }),
    }
}

fn write_output(path: &Path, text: &str) -> CmdResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::runtime(format!("creating {}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::runtime(format!("writing {}: {e}", path.display())))
}

fn cmd_evaluate(cli: &Cli, config: &RunConfig, runs: &[PathBuf], truth: Option<&Path>, output: Option<&Path>) -> CmdResult {
    let override_truth: Option<GroundTruthDataset> = match truth {
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
            Some(parse_ground_truth(&bytes).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?)
        }
        None => None,
    };
    let preprocessor = Preprocessor::default();
    let backend = config.embedder.build();
    let evaluator = Evaluator {
        preprocessor: &preprocessor,
        backend: backend.as_ref(),
        convention: config.metric_convention,
    };
    let mut cells: Vec<EvalCell> = Vec::new();
    for dir in runs {
        let run = runner::load_run(dir).map_err(|e| Failure::runtime(format!("missing run artifacts: {e}")))?;
        let truth = match &override_truth {
            Some(t) => t.clone(),
            None => load_dataset(config, &run.manifest.dataset_id)?.truth,
        };
        cells.extend(runner::evaluate_loaded(&run, &truth, &evaluator).map_err(|e| Failure::runtime(e.to_string()))?);
    }
    let report = EvalReport::new(config.metric_convention, cells).map_err(|e| Failure::runtime(e.to_string()))?;
    let path = output.map_or_else(|| cli.out_dir.join("eval_report.json"), Path::to_path_buf);
    let mut json = report.to_json();
    json.push('\n');
    write_output(&path, &json)?;
    print!("{}", report::render_grids(&report::dataset_grids(&report)));
    println!("\nreport written to {}", path.display());
    Ok(())
}

fn cmd_shot_sim(config: &RunConfig, ids: &[String], output: Option<&Path>) -> CmdResult {
    let ids: Vec<String> = if ids.is_empty() {
        datasets::bundled_ids().into_iter().map(str::to_string).collect()
    } else {
        ids.to_vec()
    };
    let mut described = Vec::new();
    for id in ids {
        let ds = load_dataset(config, &id)?;
        let text = ds
            .description
            .or(ds.readme)
            .ok_or_else(|| Failure::config(format!("{id} has no description")))?;
        described.push((id, text));
    }
    let prompts = config.prompt_builder().map_err(|e| Failure::config(e.to_string()))?;
    let backend = config.embedder.build();
    let result = report::shot_similarity(&described, prompts.store(), backend.as_ref())
        .map_err(|e| Failure::runtime(e.to_string()))?;
    print!("{}", report::render_shot_similarity(&result));
    if let Some(path) = output {
        let mut json = result.to_json();
        json.push('\n');
        write_output(path, &json)?;
    }
    Ok(())
}

fn read_report(path: &Path) -> Result<EvalReport, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    EvalReport::from_json(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn cmd_ablate(with_critic: &Path, without_critic: &Path) -> CmdResult {
    let a = read_report(with_critic)?;
    let b = read_report(without_critic)?;
    let rows = report::compare_reports(&a, &b).map_err(|e| Failure::runtime(e.to_string()))?;
    print!("{}", report::render_ablation(&rows));
    Ok(())
}

fn cmd_report(paths: &[PathBuf], average: bool) -> CmdResult {
    let mut cells = Vec::new();
    let mut convention = None;
    for path in paths {
        let r = read_report(path)?;
        if convention.is_some_and(|c| c != r.metric_convention) {
            return Err(Failure::config("reports use different metric conventions"));
        }
        convention = Some(r.metric_convention);
        cells.extend(r.cells);
    }
    let merged = EvalReport::new(convention.unwrap_or_default(), cells).map_err(|e| Failure::runtime(e.to_string()))?;
    print!("{}", report::render_grids(&report::dataset_grids(&merged)));
    if average {
        println!();
        print!("{}", report::render_grids(&report::average_grids(&merged.cells)));
    }
    Ok(())
}
