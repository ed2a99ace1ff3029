//! The `settlebench` command line.
//!
//! Every subcommand accepts `--config FILE`, a text file of `key = value`
//! lines (`#` starts a comment). Keys are the subcommand's long flag names,
//! with either `-` or `_`. Flags given on the command line win over the file.
//! Boolean flags take `true` or `false`.
//!
//! Exit status: 0 on success, 1 for usage errors, 2 when the command fails.

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use crate::engine::{EpisodeLog, GameConfig};
use crate::features::{build_dataset, Dataset};
use crate::harness::{
    compare, load_run, run_experiment, Evaluator, ExperimentConfig, MapMode, NnEvaluator, RandomEvaluator, RlConfig, RuleEvaluator,
    RunMetrics,
};
use crate::mlp::{default_grid, grid_search, MlpConfig, MlpModel};
use crate::rulekb::explain;
use crate::world::{decode_map, encode_map, generate_map, Coord, MapGenConfig};
use crate::{harness, Error};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "settlebench", version, about = "City placement benchmark: rule base + Monte Carlo RL vs. an MLP")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a map and write it in the text map format.
    GenMap(GenMapArgs),
    /// Play a training run and store logs, metrics and (kb) the value table.
    Run(RunArgs),
    /// Turn episode logs into a feature/label dataset.
    BuildDataset(BuildDatasetArgs),
    /// Cross-validate and train the regressor on a dataset.
    TrainNn(TrainNnArgs),
    /// Compare two runs played on the same maps.
    Compare(CompareArgs),
    /// Print the rule trace behind a logged placement decision.
    Explain(ExplainArgs),
}

#[derive(Debug, Args)]
pub struct GenMapArgs {
    /// Key = value overlay for this command's flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub width: u32,
    #[arg(long, default_value_t = 20)]
    pub height: u32,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvaluatorKind {
    Kb,
    Nn,
    Random,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = EvaluatorKind::Kb)]
    pub evaluator: EvaluatorKind,
    #[arg(long, default_value_t = 1000)]
    pub episodes: usize,
    /// Base seed; episode seeds are derived from it.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Turns per episode.
    #[arg(long, default_value_t = GameConfig::default().turn_limit)]
    pub turns: u32,
    /// Map file to play every episode on.
    #[arg(long, conflicts_with_all = ["map_seed", "per_episode_maps"])]
    pub map: Option<PathBuf>,
    /// Seed of the generated fixed map when no --map is given.
    #[arg(long, default_value_t = 1)]
    pub map_seed: u64,
    /// Generate a fresh map for every episode instead of a fixed one.
    #[arg(long)]
    pub per_episode_maps: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Trained model file (nn evaluator only).
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = RlConfig::default().epsilon)]
    pub epsilon: f64,
    /// Number of abstract states.
    #[arg(long, default_value_t = RlConfig::default().k)]
    pub k: usize,
    /// Random-agent episodes used to fit the state abstraction.
    #[arg(long, default_value_t = RlConfig::default().warmup_episodes)]
    pub warmup_episodes: usize,
    /// Share of episodes in each improvement window.
    #[arg(long, default_value_t = 0.1)]
    pub window: f64,
}

#[derive(Debug, Args)]
pub struct BuildDatasetArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// A run directory or a directory of `.jsonl` logs.
    #[arg(long)]
    pub logs_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainNnArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out_model: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Pick hidden width and learning rate by cross-validation first.
    #[arg(long)]
    pub grid: bool,
    #[arg(long, default_value_t = MlpConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub run_a: PathBuf,
    #[arg(long)]
    pub run_b: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub window: f64,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Episode log (`.jsonl`).
    #[arg(long)]
    pub log: PathBuf,
    /// Turn on which the decision was taken.
    #[arg(long)]
    pub turn: u32,
    /// Chosen center as `x,y`.
    #[arg(long, value_parser = parse_coord)]
    pub coord: Coord,
    /// Only consider this player's decisions.
    #[arg(long)]
    pub player: Option<u8>,
}

fn parse_coord(s: &str) -> Result<Coord, String> {
    let (x, y) = s.split_once(',').ok_or_else(|| format!("expected x,y, got {s:?}"))?;
    let x = x.trim().parse().map_err(|e| format!("bad x in {s:?}: {e}"))?;
    let y = y.trim().parse().map_err(|e| format!("bad y in {s:?}: {e}"))?;
    Ok(Coord::new(x, y))
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

/// Parses `key = value` lines.
pub fn parse_overlay(text: &str) -> Result<Vec<(String, String)>, Error> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse { line: i + 1, message: format!("expected key = value, got {line:?}") })?;
        let k = k.trim().replace('_', "-");
        if k.is_empty() {
            return Err(Error::Parse { line: i + 1, message: "empty key".into() });
        }
        pairs.push((k, v.trim().to_string()));
    }
    Ok(pairs)
}

/// Parses `args` (program name first), folding in the `--config` overlay.
pub fn parse_args<I, T>(args: I) -> Result<Cli, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cmd = Cli::command();
    let matches = cmd.clone().try_get_matches_from(&argv).map_err(clap_error)?;
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    if let Some(path) = sub.get_one::<PathBuf>("config") {
        let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(Error::Io(e)))?;
        let sub_cmd = cmd.find_subcommand(name).expect("known subcommand");
        for (key, value) in parse_overlay(&text)? {
            let arg = sub_cmd
                .get_arguments()
                .find(|a| a.get_long() == Some(key.as_str()) && key != "config" && key != "help")
                .ok_or_else(|| CliError::Usage(format!("unknown config key `{key}` for `{name}`")))?;
            if sub.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine) {
                continue;
            }
            if arg.get_action().takes_values() {
                argv.push(format!("--{key}").into());
                argv.push(value.into());
            } else {
                match value.as_str() {
                    "true" => argv.push(format!("--{key}").into()),
                    "false" => {}
                    other => return Err(CliError::Usage(format!("config key `{key}` expects true or false, got {other:?}"))),
                }
            }
        }
    }
    let matches = cmd.try_get_matches_from(&argv).map_err(clap_error)?;
    Cli::from_arg_matches(&matches).map_err(clap_error)
}

fn clap_error(e: clap::Error) -> CliError {
    CliError::Usage(e.render().to_string())
}

/// Runs the command line and returns the process exit status. `--help` and
/// `--version` print to `out` and succeed.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    if let Err(e) = Cli::command().try_get_matches_from(&argv) {
        use clap::error::ErrorKind;
        if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
            let _ = write!(out, "{}", e.render());
            return if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand { EXIT_USAGE } else { EXIT_OK };
        }
    }
    match parse_args(argv).and_then(|cli| execute(&cli, out)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            match &e {
                CliError::Usage(m) if m.starts_with("error:") => {
                    let _ = writeln!(err, "{}", m.trim_end());
                }
                _ => {
                    let _ = writeln!(err, "error: {}", e.to_string().trim_end());
                }
            }
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::GenMap(a) => cmd_gen_map(a, out),
        Command::Run(a) => cmd_run(a, out),
        Command::BuildDataset(a) => cmd_build_dataset(a, out),
        Command::TrainNn(a) => cmd_train_nn(a, out),
        Command::Compare(a) => cmd_compare(a, out),
        Command::Explain(a) => cmd_explain(a, out),
    }
}

pub fn cmd_gen_map(a: &GenMapArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = MapGenConfig { width: a.width, height: a.height, ..Default::default() };
    let map = generate_map(&config, a.seed)?;
    fs::write(&a.out, encode_map(&map))?;
    writeln!(out, "wrote {}x{} map to {}", map.width, map.height, a.out.display())?;
    writeln!(out, "buildable fraction {:.4}", map.buildable_fraction())?;
    Ok(())
}

/// The experiment described by `a`, without running it.
pub fn experiment_config(a: &RunArgs) -> Result<ExperimentConfig, Error> {
    let mapgen = MapGenConfig::default();
    let map = match (&a.map, a.per_episode_maps) {
        (Some(path), _) => MapMode::Fixed(decode_map(&fs::read_to_string(path)?)?),
        (None, true) => MapMode::PerEpisode,
        (None, false) => MapMode::Fixed(generate_map(&mapgen, a.map_seed)?),
    };
    let config = ExperimentConfig {
        episodes: a.episodes,
        game: GameConfig { turn_limit: a.turns, ..Default::default() },
        mapgen,
        map,
        seed: a.seed,
        window: a.window,
    };
    config.validate()?;
    Ok(config)
}

pub fn cmd_run(a: &RunArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.evaluator == EvaluatorKind::Nn && a.model.is_none() {
        return Err(CliError::Usage("--evaluator nn requires --model".into()));
    }
    let config = experiment_config(a)?;
    fs::create_dir_all(&a.out_dir)?;
    let metrics = match a.evaluator {
        EvaluatorKind::Kb => {
            let rl = RlConfig { k: a.k, epsilon: a.epsilon, warmup_episodes: a.warmup_episodes, ..Default::default() };
            let mut kb = RuleEvaluator::warm_up(&config, &rl)?;
            let outcome = run_experiment(&config, &mut kb, Some(&a.out_dir))?;
            kb.table.save(&a.out_dir.join("value_table.txt"))?;
            outcome.metrics
        }
        EvaluatorKind::Nn => {
            let model = MlpModel::load(a.model.as_deref().expect("checked above"))?;
            run_with(&config, &mut NnEvaluator { model }, &a.out_dir)?
        }
        EvaluatorKind::Random => run_with(&config, &mut RandomEvaluator::new(a.seed), &a.out_dir)?,
    };
    writeln!(out, "episodes {}", metrics.len())?;
    if let (Some(first), Some(last), Some(impr)) =
        (metrics.first_window_mean(a.window), metrics.last_window_mean(a.window), metrics.improvement(a.window))
    {
        writeln!(out, "first window mean TGO {first:.1}")?;
        writeln!(out, "last window mean TGO {last:.1}")?;
        writeln!(out, "improvement {:+.2}%", impr * 100.0)?;
    }
    Ok(())
}

fn run_with(config: &ExperimentConfig, evaluator: &mut dyn Evaluator, dir: &Path) -> Result<RunMetrics, Error> {
    Ok(run_experiment(config, evaluator, Some(dir))?.metrics)
}

/// Logs from a run directory (`dir/logs`) or from `dir` itself.
pub fn read_logs(dir: &Path) -> Result<Vec<EpisodeLog>, Error> {
    if dir.join("logs").is_dir() {
        return load_run(dir);
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "jsonl"));
    paths.sort();
    paths.iter().map(|p| EpisodeLog::read_jsonl(BufReader::new(fs::File::open(p)?))).collect()
}

pub fn cmd_build_dataset(a: &BuildDatasetArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let logs = read_logs(&a.logs_dir)?;
    if logs.is_empty() {
        return Err(Error::InsufficientData(format!("no episode logs in {}", a.logs_dir.display())).into());
    }
    let dataset = build_dataset(&logs)?;
    dataset.save(&a.out)?;
    writeln!(out, "episodes {}", logs.len())?;
    writeln!(out, "unique entries {}", dataset.len())?;
    Ok(())
}

pub fn cmd_train_nn(a: &TrainNnArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let dataset = Dataset::load(&a.dataset)?;
    let mut config = MlpConfig { input_dim: dataset.dim(), epochs: a.epochs, seed: a.seed, ..Default::default() };
    if a.grid {
        let grid = default_grid(&config);
        let (best, reports) = grid_search(&dataset, &grid, a.folds, a.seed)?;
        for (c, r) in grid.iter().zip(&reports) {
            writeln!(out, "grid hidden {:?} lr {} cv mse {:.6}", c.hidden, c.learning_rate, r.mean_cv_mse().unwrap_or(f64::NAN))?;
        }
        config = best;
    }
    let (model, report) = harness::train_regressor(&dataset, &config, a.folds)?;
    for (i, (m, b)) in report.fold_mse.iter().zip(&report.fold_baseline_mse).enumerate() {
        writeln!(out, "fold {i} mse {m:.6} baseline {b:.6}")?;
    }
    writeln!(out, "hidden {:?} lr {}", config.hidden, config.learning_rate)?;
    writeln!(out, "mean cv mse {:.6}", report.mean_cv_mse().unwrap_or(f64::NAN))?;
    writeln!(out, "mean baseline mse {:.6}", report.mean_baseline_mse().unwrap_or(f64::NAN))?;
    model.save(&a.out_model)?;
    writeln!(out, "model written to {}", a.out_model.display())?;
    Ok(())
}

pub fn cmd_compare(a: &CompareArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let la = read_logs(&a.run_a)?;
    let lb = read_logs(&a.run_b)?;
    let ma = RunMetrics::from_logs(&la);
    let mb = RunMetrics::from_logs(&lb);
    let report = compare(&ma, &mb, &la, &lb, a.window)?;
    report.export(&a.out)?;
    write!(out, "{}", report.summary())?;
    Ok(())
}

pub fn cmd_explain(a: &ExplainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let log = EpisodeLog::read_jsonl(BufReader::new(fs::File::open(&a.log)?))?;
    let decision = log
        .decisions()
        .into_iter()
        .find(|d| d.turn == a.turn && d.center == a.coord && a.player.is_none_or(|p| p == d.player))
        .ok_or_else(|| Error::NotFound(format!("no decision at {} on turn {}", a.coord, a.turn)))?;
    writeln!(out, "turn {} player {} settler {} center {} score {}", decision.turn, decision.player, decision.settler, decision.center, decision.score)?;
    let trace = decision
        .trace
        .as_ref()
        .ok_or_else(|| Error::NotFound(format!("decision at {} on turn {} carries no rule trace", a.coord, a.turn)))?;
    for line in explain(trace) {
        writeln!(out, "  {line}")?;
    }
    writeln!(out, "total {} points", trace.contributed())?;
    Ok(())
}
