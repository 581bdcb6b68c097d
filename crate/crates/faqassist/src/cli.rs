//! Command-line front end. Exit codes: 0 success, 1 runtime failure with a
//! one-line diagnostic on stderr, 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::config::Config;
use crate::engine::Engine;
use crate::mining::synth::{builtin_intents_for, read_intents, synth_corpus, SynthSpec};
use crate::mining::{run_pipeline, MiningDeps};
use crate::simulator::{
    compare_strategies, emit_report, reference_profiles, render_csv, render_table, replay, replay_virtual, ReplayOptions, ReplayPolicy,
    ReportFormat, SelectionRule, StrategyProfile, TriggerPlan,
};
use crate::store::{write_atomic, FaqStore, StoreConfig};
use crate::transcript;

#[derive(Debug, Parser)]
#[command(
    name = "faqassist",
    version,
    about = "Live FAQ suggestions for contact-center agents, plus offline FAQ mining"
)]
pub struct Cli {
    /// TOML configuration document; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for corpus synthesis, k-means and random selection.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Replace every remote provider with its offline stand-in.
    #[arg(long, global = true)]
    pub scripted: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Mine frequent questions from call transcripts into the FAQ store.
    Mine(MineArgs),
    /// Replay transcripts through the engine and report metrics.
    Replay(ReplayArgs),
    /// Replay the same transcripts under several strategy profiles.
    Compare(CompareArgs),
    /// Write a synthetic transcript corpus with planted questions.
    Synth(SynthArgs),
    /// Upsert FAQ rows from CSV into a store snapshot.
    FaqImport(FaqFileArgs),
    /// Write a store snapshot out as CSV.
    FaqExport(FaqFileArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Overrides `service.listen`.
    #[arg(long)]
    pub listen: Option<String>,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    /// Transcript JSONL file or directory of them.
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub top: Option<usize>,
    /// Stage cache and intermediate CSVs.
    #[arg(long, value_name = "DIR")]
    pub cache_dir: Option<PathBuf>,
    /// Store snapshot to write mined entries into; overrides `store.snapshot`.
    #[arg(long, value_name = "PATH")]
    pub store: Option<PathBuf>,
    /// Mining report as JSON.
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
    /// The resulting store as CSV.
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub no_review: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    FirstMatched,
    FirstGenerated,
    PreferMatched,
    Random,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Table,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Table => ReportFormat::TextTable,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Transcript JSONL file or directory of them.
    #[arg(long, value_name = "PATH")]
    pub transcripts: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(long, value_enum, default_value_t = PolicyArg::PreferMatched)]
    pub policy: PolicyArg,
    /// `auto`, `every:K` or `at:I,J,...` (turn indices).
    #[arg(long, default_value = "auto")]
    pub trigger: String,
    /// FAQ CSV to seed the store with; overrides `store.seed_csv`.
    #[arg(long, value_name = "PATH")]
    pub faqs: Option<PathBuf>,
    /// Report destination; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long, default_value_t = 1)]
    pub parallelism: usize,
    /// Row label in the report.
    #[arg(long, default_value = "replay")]
    pub label: String,
    /// Real clock instead of virtual time; implied by remote providers.
    #[arg(long)]
    pub wall_clock: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    /// TOML file of `[[profile]]` tables; the built-in reference set otherwise.
    #[arg(long, value_name = "PATH")]
    pub profiles: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    pub calls: usize,
    /// CSV of `question,target_frequency`; otherwise twenty built-in intents with
    /// frequencies 100, 95, ..., 5 per 500 calls.
    #[arg(long, value_name = "PATH")]
    pub intents: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    pub noise: f64,
    #[arg(long, value_name = "PATH", default_value = "calls.jsonl")]
    pub out: PathBuf,
    /// Planted occurrence counts as CSV.
    #[arg(long, value_name = "PATH")]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FaqFileArgs {
    #[arg(long, value_name = "PATH")]
    pub csv: PathBuf,
    /// Store snapshot; overrides `store.snapshot`.
    #[arg(long, value_name = "PATH")]
    pub store: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the verb.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::from(1)
        }
    }
}

/// The error chain on one line, skipping causes their parent already quotes.
fn one_line(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting runtime")?;
    match cli.command {
        Command::Serve(args) => runtime.block_on(serve(config, cli.scripted, args)),
        Command::Mine(args) => runtime.block_on(mine(config, cli.scripted, cli.seed, args)),
        Command::Replay(args) => {
            let engine = runtime.block_on(sim_engine(&config, cli.scripted, &args.sim))?;
            run_replay(&engine, &config, cli.scripted, cli.seed, args, &runtime)
        }
        Command::Compare(args) => {
            let engine = runtime.block_on(sim_engine(&config, cli.scripted, &args.sim))?;
            run_compare(&engine, cli.seed, args)
        }
        Command::Synth(args) => synth(cli.seed, args),
        Command::FaqImport(args) => runtime.block_on(faq_import(&config, cli.scripted, args)),
        Command::FaqExport(args) => faq_export(&config, cli.scripted, args),
    }
}

async fn serve(mut config: Config, scripted: bool, args: ServeArgs) -> anyhow::Result<()> {
    if let Some(listen) = args.listen {
        config.service.listen = listen;
    }
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    crate::service::serve(&config, scripted, shutdown).await?;
    Ok(())
}

fn open_store(config: &Config, scripted: bool, path: Option<&Path>) -> anyhow::Result<FaqStore> {
    let embedder = config.providers(scripted).embedder.build().map_err(anyhow::Error::msg)?;
    let store_config = StoreConfig::new(embedder.dim());
    Ok(match path.or(config.store.snapshot.as_deref()) {
        Some(p) => FaqStore::open(p, store_config, embedder)?,
        None => FaqStore::in_memory(store_config, embedder),
    })
}

async fn mine(mut config: Config, scripted: bool, seed: u64, args: MineArgs) -> anyhow::Result<()> {
    let mining = &mut config.mining;
    if let Some(k) = args.k {
        mining.k = k;
    }
    if let Some(top) = args.top {
        mining.top_n = top;
    }
    if args.cache_dir.is_some() {
        mining.cache_dir = args.cache_dir.clone();
    }
    if args.no_review {
        mining.review_enabled = false;
    }
    mining.kmeans_seed = seed;
    config.validate()?;

    let transcripts = transcript::read_path(&args.input)?;
    let providers = config.providers(scripted).build()?;
    let store = open_store(&config, scripted, args.store.as_deref())?;
    let deps = MiningDeps {
        gateway: &providers.gateway,
        embedder: providers.embedder.as_ref(),
        rag: &providers.rag,
        store: &store,
        prompts: &providers.prompts,
    };
    let report = run_pipeline(&transcripts, &config.mining, &deps).await?;
    if let Some(path) = &args.report {
        write_atomic(path, serde_json::to_string_pretty(&report)?.as_bytes())?;
    }
    if let Some(path) = &args.csv {
        store.export_csv(path)?;
    }
    println!(
        "calls={} questions={} kept={} clusters={} selected={} answered={} store_entries={}",
        report.calls,
        report.raw_questions,
        report.filtered_questions,
        report.clusters,
        report.selected.len(),
        report.backfill.answered,
        store.len()
    );
    Ok(())
}

fn policy(sim: &SimArgs, seed: u64) -> anyhow::Result<ReplayPolicy> {
    let selection = match sim.policy {
        PolicyArg::FirstMatched => SelectionRule::AlwaysFirstMatched,
        PolicyArg::FirstGenerated => SelectionRule::AlwaysFirstGenerated,
        PolicyArg::PreferMatched => SelectionRule::PreferMatchedElseGenerated,
        PolicyArg::Random => SelectionRule::Random { seed },
        PolicyArg::None => SelectionRule::None,
    };
    Ok(ReplayPolicy::new(selection).with_trigger(parse_trigger(&sim.trigger)?))
}

fn parse_trigger(raw: &str) -> anyhow::Result<TriggerPlan> {
    if raw == "auto" {
        return Ok(TriggerPlan::Auto);
    }
    if let Some(k) = raw.strip_prefix("every:") {
        let k = k.parse().with_context(|| format!("trigger {raw:?}"))?;
        return Ok(TriggerPlan::EveryKTurns { k });
    }
    if let Some(list) = raw.strip_prefix("at:") {
        let indices = list
            .split(',')
            .map(|i| i.trim().parse())
            .collect::<Result<_, _>>()
            .with_context(|| format!("trigger {raw:?}"))?;
        return Ok(TriggerPlan::ManualAt { indices });
    }
    bail!("trigger {raw:?}: expected auto, every:K or at:I,J,...")
}

async fn sim_engine(config: &Config, scripted: bool, sim: &SimArgs) -> anyhow::Result<Engine> {
    let mut config = config.clone();
    if sim.faqs.is_some() {
        config.store.seed_csv = sim.faqs.clone();
    }
    Ok(config.engine(scripted).await?)
}

fn write_report(rows: &[(String, crate::simulator::ReplayMetrics)], sim: &SimArgs) -> anyhow::Result<()> {
    match &sim.out {
        Some(path) => emit_report(rows, path, sim.format.into())?,
        None => match sim.format {
            FormatArg::Csv => print!("{}", render_csv(rows)),
            FormatArg::Table => print!("{}", render_table(rows)),
        },
    }
    Ok(())
}

fn run_replay(
    engine: &Engine,
    config: &Config,
    scripted: bool,
    seed: u64,
    args: ReplayArgs,
    runtime: &tokio::runtime::Runtime,
) -> anyhow::Result<()> {
    let transcripts = transcript::read_path(&args.sim.transcripts)?;
    let policy = policy(&args.sim, seed)?;
    let options = ReplayOptions {
        parallelism: args.parallelism,
    };
    let providers = config.providers(scripted);
    let virtual_time = !args.wall_clock && providers == providers.scripted();
    let metrics = if virtual_time {
        replay_virtual(engine, &transcripts, &policy, args.sim.reps, options)?
    } else {
        runtime.block_on(replay(engine, &transcripts, &policy, args.sim.reps, options))?
    };
    write_report(&[(args.label, metrics)], &args.sim)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    profile: Vec<StrategyProfile>,
}

fn run_compare(engine: &Engine, seed: u64, args: CompareArgs) -> anyhow::Result<()> {
    let profiles = match &args.profiles {
        Some(path) => {
            let raw = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<ProfileFile>(&raw)
                .with_context(|| format!("parsing {}", path.display()))?
                .profile
        }
        None => reference_profiles(),
    };
    let transcripts = transcript::read_path(&args.sim.transcripts)?;
    let policy = policy(&args.sim, seed)?;
    let comparison = compare_strategies(engine, seed, &transcripts, &profiles, &policy, args.sim.reps)?;
    write_report(&comparison.rows, &args.sim)
}

fn synth(seed: u64, args: SynthArgs) -> anyhow::Result<()> {
    let intents = match &args.intents {
        Some(path) => read_intents(path)?,
        None => builtin_intents_for(args.calls),
    };
    let spec = SynthSpec::new(args.calls, intents, args.noise);
    let corpus = synth_corpus(&spec, seed)?;
    write_atomic(&args.out, transcript::to_jsonl(&corpus.transcripts).as_bytes())?;
    if let Some(path) = &args.truth {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["question", "planted"])?;
        for (intent, n) in spec.intents.iter().zip(&corpus.planted) {
            w.write_record([intent.question.as_str(), &n.to_string()])?;
        }
        write_atomic(path, &w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)?;
    }
    println!(
        "calls={} planted={} noise={}",
        corpus.transcripts.len(),
        corpus.planted.iter().sum::<usize>(),
        corpus.noise_questions
    );
    Ok(())
}

fn snapshot_path<'a>(config: &'a Config, args: &'a FaqFileArgs) -> anyhow::Result<&'a Path> {
    match args.store.as_deref().or(config.store.snapshot.as_deref()) {
        Some(p) => Ok(p),
        None => bail!("no store snapshot: pass --store or set store.snapshot"),
    }
}

async fn faq_import(config: &Config, scripted: bool, args: FaqFileArgs) -> anyhow::Result<()> {
    let path = snapshot_path(config, &args)?;
    let store = open_store(config, scripted, Some(path))?;
    let report = store.import_csv(&args.csv).await?;
    for bad in &report.malformed {
        eprintln!("warning: line {}: {}", bad.line, bad.reason);
    }
    println!(
        "imported={} malformed={} entries={}",
        report.imported,
        report.malformed.len(),
        store.len()
    );
    Ok(())
}

fn faq_export(config: &Config, scripted: bool, args: FaqFileArgs) -> anyhow::Result<()> {
    let path = snapshot_path(config, &args)?;
    if !path.exists() {
        bail!("store snapshot {} does not exist", path.display());
    }
    let embedder = config.providers(scripted).embedder.build().map_err(anyhow::Error::msg)?;
    let store = FaqStore::load(path, StoreConfig::new(embedder.dim()), Arc::clone(&embedder))?;
    let n = store.export_csv(&args.csv)?;
    println!("exported={n}");
    Ok(())
}
