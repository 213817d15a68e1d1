//! Command-line front end: one subcommand per pipeline stage plus corpus
//! statistics, reward scoring utilities, and the multiple-choice evaluation
//! harness. Exit code 0 on success, 2 on configuration errors, 3 when a
//! stage aborts on its failure ceiling, 1 otherwise.

use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use audforge::config::Config;
use audforge::error::{Error, Result};
use audforge::eval::{evaluate_mcq, EvalItem};
use audforge::mining::parse_srt;
use audforge::pipeline::{run_stage, BackendSet, RunPaths, Stage, StageOptions};
use audforge::reward::{length_reward, score_response, LengthParams, RewardWeights};
use audforge::shard::SampleMetadata;
use audforge::stats::{corpus_stats, stats_to_csv};
use audforge::synth::TaskRecord;

#[derive(Parser)]
#[command(name = "audforge", version, about = "Audio-caption dataset pipeline")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Configuration file; built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the configured run id.
    #[arg(long, global = true, value_name = "ID")]
    run_id: Option<String>,
    /// Override the configured seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Override the configured worker count.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// Report what the command would do without doing it.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Mine caption candidates from subtitle files.
    Mine(StageArgs),
    /// Acquire and validate media for mined samples.
    Fetch(StageArgs),
    /// Run the annotation protocol over fetched samples.
    Annotate(StageArgs),
    /// Filter annotated samples by embedding agreement.
    Filter(StageArgs),
    /// Synthesize structured captions and expand task records.
    Synthesize(StageArgs),
    /// Pack synthesized samples into tar shards.
    Package(StageArgs),
    /// Compute corpus statistics for the run.
    Stats,
    /// Reward scoring utilities.
    #[command(subcommand)]
    Reward(RewardCommand),
    /// Score multiple-choice evaluation items.
    Eval(EvalArgs),
}

#[derive(Args)]
struct StageArgs {
    /// Cap how many pending samples this invocation processes.
    #[arg(long, value_name = "N")]
    max_samples: Option<usize>,
}

#[derive(Subcommand)]
enum RewardCommand {
    /// Score response/gold pairs from line-delimited JSON.
    Score(ScoreArgs),
    /// Print the length-reward curve as CSV.
    Curve(CurveArgs),
}

#[derive(Args)]
struct ScoreArgs {
    /// Input file of {"response", "gold", "n_gold"?, "semantic"?} lines;
    /// stdin when omitted.
    #[arg(long, value_name = "PATH")]
    input: Option<PathBuf>,
    /// Score format without requiring semantic elements.
    #[arg(long)]
    no_semantic: bool,
}

#[derive(Args)]
struct CurveArgs {
    /// Gold caption length in words; the configured value when omitted.
    #[arg(long, value_name = "N")]
    n_gold: Option<u32>,
    /// Largest word count on the curve; twice the gold length when omitted.
    #[arg(long, value_name = "N")]
    max: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// JSON array of evaluation items.
    #[arg(long, value_name = "PATH")]
    items: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                Error::FailureCeiling { .. } => 3,
                _ => 1,
            })
        }
    }
}

fn load_config(global: &GlobalArgs) -> Result<Config> {
    let mut config = match &global.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(run_id) = &global.run_id {
        config.run_id = run_id.clone();
    }
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    if let Some(workers) = global.workers {
        config.workers = workers;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli.global)?;
    match &cli.command {
        Command::Mine(args) => stage(Stage::Mine, &config, args, cli.global.dry_run),
        Command::Fetch(args) => stage(Stage::Fetch, &config, args, cli.global.dry_run),
        Command::Annotate(args) => stage(Stage::Annotate, &config, args, cli.global.dry_run),
        Command::Filter(args) => stage(Stage::Filter, &config, args, cli.global.dry_run),
        Command::Synthesize(args) => stage(Stage::Synthesize, &config, args, cli.global.dry_run),
        Command::Package(args) => stage(Stage::Package, &config, args, cli.global.dry_run),
        Command::Stats => run_stats(&config, cli.global.dry_run),
        Command::Reward(RewardCommand::Score(args)) => reward_score(&config, args),
        Command::Reward(RewardCommand::Curve(args)) => reward_curve(&config, args),
        Command::Eval(args) => run_eval(args),
    }
}

fn stage(stage: Stage, config: &Config, args: &StageArgs, dry_run: bool) -> Result<()> {
    let paths = RunPaths::for_config(config);
    if dry_run {
        let pending = match stage.source_status() {
            None => pending_srt_lines(config)?,
            Some(source) if paths.manifest_path().is_file() => {
                paths.open_manifest(&config.run_id)?.samples_at(source).len()
            }
            Some(_) => 0,
        };
        println!("{}: {pending} pending (dry run)", stage.as_str());
        return Ok(());
    }
    let mut manifest = paths.open_manifest(&config.run_id)?;
    let backends = BackendSet::from_config(config)?;
    let mut options = StageOptions::for_config(config);
    options.max_samples = args.max_samples;
    let summary = run_stage(stage, config, &paths, &mut manifest, &backends, &options)?;
    println!(
        "{}: {} pending, {} processed, {} succeeded, {} failed",
        summary.stage, summary.pending, summary.processed, summary.succeeded, summary.failed
    );
    Ok(())
}

fn pending_srt_lines(config: &Config) -> Result<usize> {
    let dir = &config.paths.srt_dir;
    let mut total = 0;
    for entry in std::fs::read_dir(dir)
        .map_err(|e| Error::Config(format!("paths.srt_dir {}: {e}", dir.display())))?
    {
        let path = entry?.path();
        if path.extension().is_some_and(|ext| ext == "srt") {
            let video_id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            total += parse_srt(&video_id, &std::fs::read_to_string(&path)?)?.len();
        }
    }
    Ok(total)
}

fn run_stats(config: &Config, dry_run: bool) -> Result<()> {
    let paths = RunPaths::for_config(config);
    let mut samples: Vec<SampleMetadata> = Vec::new();
    if paths.meta_dir().is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(paths.meta_dir())?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
            .collect();
        files.sort();
        for file in files {
            samples.push(serde_json::from_slice(&std::fs::read(file)?)?);
        }
    }
    let mut records: Vec<TaskRecord> = Vec::new();
    if paths.tasks_path().is_file() {
        for line in std::fs::read_to_string(paths.tasks_path())?.lines() {
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(line)?);
            }
        }
    }
    let stats = corpus_stats(&samples, &records);
    let mut json = serde_json::to_string_pretty(&stats)?;
    json.push('\n');
    if !dry_run {
        std::fs::write(paths.stats_json_path(), &json)?;
        std::fs::write(paths.stats_csv_path(), stats_to_csv(&stats)?)?;
    }
    write_stdout(json.as_bytes())
}

#[derive(Deserialize)]
struct ScoreRequest {
    response: String,
    gold: String,
    n_gold: Option<u32>,
    semantic: Option<bool>,
}

/// Maps the error a closed downstream pipe produces to a quiet success,
/// the conventional exit for truncated output, and fails on anything else.
fn done_writing(result: std::io::Result<()>) -> Result<()> {
    match result {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn write_stdout(bytes: &[u8]) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    done_writing(out.write_all(bytes).and_then(|()| out.flush()))
}

fn reward_score(config: &Config, args: &ScoreArgs) -> Result<()> {
    let weights = RewardWeights::default();
    let default_semantic = if args.no_semantic { false } else { config.synth.semantic_mode };
    let stdin = std::io::stdin();
    let reader: Box<dyn BufRead> = match &args.input {
        Some(path) => Box::new(std::io::BufReader::new(
            std::fs::File::open(path)
                .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?,
        )),
        None => Box::new(stdin.lock()),
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let request: ScoreRequest = serde_json::from_str(&line)?;
        let params = LengthParams::new(
            config.reward.alpha,
            config.reward.delta,
            request.n_gold.unwrap_or(config.reward.n_gold),
        )?;
        let breakdown = score_response(
            &request.response,
            &request.gold,
            &params,
            &weights,
            request.semantic.unwrap_or(default_semantic),
        );
        let mut line = serde_json::to_string(&breakdown)?;
        line.push('\n');
        if let Err(e) = out.write_all(line.as_bytes()) {
            return done_writing(Err(e));
        }
    }
    Ok(())
}

fn reward_curve(config: &Config, args: &CurveArgs) -> Result<()> {
    let n_gold = args.n_gold.unwrap_or(config.reward.n_gold);
    let params = LengthParams::new(config.reward.alpha, config.reward.delta, n_gold)?;
    let max = args.max.unwrap_or(2 * n_gold as usize);
    let stdout = std::io::stdout();
    let mut out = std::io::BufWriter::new(stdout.lock());
    done_writing((|| {
        writeln!(out, "n_y,length_reward")?;
        for n_y in 0..=max {
            writeln!(out, "{n_y},{:.6}", length_reward(n_y, &params))?;
        }
        out.flush()
    })())
}

fn run_eval(args: &EvalArgs) -> Result<()> {
    let bytes = std::fs::read(&args.items)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", args.items.display())))?;
    let items: Vec<EvalItem> = serde_json::from_slice(&bytes)?;
    let report = evaluate_mcq(&items)?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write_stdout(json.as_bytes())
}
