//! `af`: perturb, generate, build, run, score, export and review from one binary.
//!
//! Structured results go to stdout as JSON; logs go to stderr. Exit codes:
//! 0 success, 1 usage or validation error, 2 external service failure.

mod config;
mod error;

use af_core::corpus::{
    load_category_table, load_corpus, load_qa_items_with, write_qa_items, Corpus, CorpusFormat,
    Description, QAItem, TableKind, Tables,
};
use af_core::export::{export_dpo, export_sft, RejectedSource};
use af_core::gateway::Gateway;
use af_core::harness::{self, pareto_csv, EvalConfig, HarnessError, RunRecord};
use af_core::judge::Judge;
use af_core::perturb::{ensure_tagged, LexiconTagger, Perturber, Synonyms};
use af_core::pope::{cost_report, to_run_record, ExpectedSource, PopeConfig};
use af_core::qagen::{build_balanced_dataset, summarize, GenerationStatus, Generator};
use af_core::review::{export_curated, ReviewStore};
use clap::{Args, Parser, Subcommand, ValueEnum};
use config::{Config, GlobalArgs};
use error::CliError;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "af",
    version,
    about = "Unanswerable video-QA synthesis and answerability evaluation"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply single-element, same-category replacements to a description corpus.
    Perturb(PerturbArgs),
    /// Ask a generator endpoint for unanswerable QA pairs from altered descriptions.
    Generate(GenerateArgs),
    /// Dataset assembly.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Query a model on a dataset and judge its replies.
    Run(RunArgs),
    /// Existence-probe baseline run with cost accounting.
    Pope(PopeArgs),
    /// Transition counts and alignment metrics for a pre/post run pair.
    Metrics(MetricsArgs),
    /// Training files.
    Export {
        #[command(subcommand)]
        command: ExportCommand,
    },
    /// Human review service and curated export.
    Review {
        #[command(subcommand)]
        command: ReviewCommand,
    },
    /// Response cache maintenance.
    Cache {
        #[command(subcommand)]
        command: CacheCommand,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DescFormat {
    Triplets,
    Captions,
}

impl From<DescFormat> for CorpusFormat {
    fn from(f: DescFormat) -> Self {
        match f {
            DescFormat::Triplets => CorpusFormat::Triplets,
            DescFormat::Captions => CorpusFormat::Captions,
        }
    }
}

#[derive(Args)]
struct TableArgs {
    #[arg(long)]
    objects: Option<PathBuf>,
    #[arg(long)]
    relations: Option<PathBuf>,
    #[arg(long)]
    attributes: Option<PathBuf>,
}

impl TableArgs {
    fn load(&self) -> Result<Tables, CliError> {
        let load = |p: &Option<PathBuf>, kind| {
            p.as_deref()
                .map(|p| load_category_table(p, kind))
                .transpose()
        };
        Ok(Tables {
            objects: load(&self.objects, TableKind::Object)?,
            relations: load(&self.relations, TableKind::Relation)?,
            attributes: load(&self.attributes, TableKind::Attribute)?,
        })
    }
}

#[derive(Args)]
struct PerturbArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    format: DescFormat,
    #[command(flatten)]
    tables: TableArgs,
    /// Symmetric synonym table `{word: [synonyms]}`.
    #[arg(long)]
    synonyms: Option<PathBuf>,
    /// Altered outputs per source description.
    #[arg(long, default_value_t = 1)]
    per_description: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    /// Output of `af perturb`.
    #[arg(long)]
    altered: PathBuf,
    /// The description corpus the altered records came from.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum)]
    format: DescFormat,
    #[command(flatten)]
    tables: TableArgs,
    #[arg(long)]
    endpoint: String,
    /// Generation outcomes, one per altered description.
    #[arg(long)]
    out: PathBuf,
    /// Accepted items in QA-item form.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Balanced set: per-category items of each unanswerability kind plus as many answerable.
    Build(BuildArgs),
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long, num_args = 1.., required = true)]
    unanswerable: Vec<PathBuf>,
    #[arg(long)]
    answerable: PathBuf,
    #[arg(long)]
    per_category: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum JudgeArg {
    Llm,
    Rules,
}

#[derive(Args)]
struct JudgeArgs {
    #[arg(long, value_enum, default_value = "rules")]
    judge: JudgeArg,
    /// Endpoint for llm judging.
    #[arg(long)]
    judge_endpoint: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    endpoint: String,
    #[command(flatten)]
    judge: JudgeArgs,
    #[arg(long)]
    run_id: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExpectedArg {
    Provenance,
    Verifier,
}

#[derive(Args)]
struct PopeArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    endpoint: String,
    #[arg(long)]
    decomposer: String,
    /// Endpoint that verifies expected probe answers and reads ambiguous replies; defaults to the decomposer.
    #[arg(long)]
    verifier: Option<String>,
    #[arg(long, value_enum, default_value = "provenance")]
    expected: ExpectedArg,
    #[command(flatten)]
    judge: JudgeArgs,
    #[arg(long)]
    run_id: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    cost_report: Option<PathBuf>,
    /// Per-item probe outcomes.
    #[arg(long)]
    outcomes: Option<PathBuf>,
    /// Calls a direct evaluation would make; defaults to one model call plus the judge's calls per item.
    #[arg(long)]
    baseline_calls: Option<u64>,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    pre: PathBuf,
    #[arg(long)]
    post: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Report file; Pareto points go next to it as `<stem>.pareto.csv` unless `--pareto` is given.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    pareto: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ExportCommand {
    Sft {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Preference pairs; rejected answers come from a run or are synthesized.
    Dpo {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(
            long,
            conflicts_with = "synthetic",
            required_unless_present = "synthetic"
        )]
        run: Option<PathBuf>,
        #[arg(long)]
        synthetic: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ReviewCommand {
    Serve {
        #[arg(long)]
        queue: PathBuf,
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Built review-ui bundle served at `/`.
        #[arg(long)]
        ui: Option<PathBuf>,
        /// Directory against which relative frame paths resolve.
        #[arg(long)]
        frames_root: Option<PathBuf>,
        /// Frames shown per item.
        #[arg(long, default_value_t = af_core::review::DEFAULT_REVIEW_FRAMES)]
        max_frames: usize,
    },
    /// Write the items whose current status is pass.
    Export {
        #[arg(long)]
        queue: PathBuf,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum CacheCommand {
    Stats,
    Clear,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_logging(cli.global.verbose);
    match dispatch(cli) {
        Ok(summary) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("summary serializes")
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(s) = e.summary() {
                println!(
                    "{}",
                    serde_json::to_string_pretty(s).expect("summary serializes")
                );
            }
            ExitCode::from(e.code())
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(level)
        .with_target(false)
        .init();
}

fn dispatch(cli: Cli) -> Result<Value, CliError> {
    let cfg = Config::resolve(&cli.global)?;
    match cli.command {
        Command::Perturb(a) => perturb(&cfg, a),
        Command::Generate(a) => generate(&cfg, a),
        Command::Dataset {
            command: DatasetCommand::Build(a),
        } => build(&cfg, a),
        Command::Run(a) => run(&cfg, a),
        Command::Pope(a) => pope(&cfg, a),
        Command::Metrics(a) => metrics(&cfg, a),
        Command::Export { command } => export(&cfg, command),
        Command::Review { command } => review(&cfg, command),
        Command::Cache { command } => cache(&cfg, command),
    }
}

fn load_descriptions(
    path: &Path,
    format: DescFormat,
    tables: &Tables,
) -> Result<Vec<af_core::corpus::DescriptionRecord>, CliError> {
    let Corpus::Descriptions(mut records) = load_corpus(path, format.into(), tables)? else {
        unreachable!("description formats load descriptions")
    };
    if let (DescFormat::Captions, Some(attrs)) = (format, tables.attributes.as_ref()) {
        let tagger = LexiconTagger::from_table(attrs);
        for r in &mut records {
            if let Description::Caption(c) = &mut r.description {
                ensure_tagged(c, &tagger, attrs)?;
            }
        }
    }
    Ok(records)
}

fn perturb(cfg: &Config, a: PerturbArgs) -> Result<Value, CliError> {
    let seed = cfg.require_seed("perturb")?;
    let tables = a.tables.load()?;
    let synonyms = match &a.synonyms {
        Some(p) => Synonyms::load(p)
            .map_err(|e| CliError::invalid(format!("synonyms {}: {e}", p.display())))?,
        None => Synonyms::new(),
    };
    let records = load_descriptions(&a.input, a.format, &tables)?;
    let perturber = Perturber {
        tables: &tables,
        synonyms: &synonyms,
        seed,
    };
    let mut written = Vec::new();
    let mut skipped = Vec::new();
    for (id, r) in perturber.perturb_all(&records, a.per_description) {
        match r {
            Ok(ad) => written.push(ad),
            Err(e) => skipped.push(json!({"id": id, "reason": e.to_string()})),
        }
    }
    af_core::jsonl::write_path(&a.out, &written)?;
    Ok(json!({
        "records": records.len(),
        "written": written.len(),
        "skipped": skipped,
        "out": a.out,
    }))
}

fn generate(cfg: &Config, a: GenerateArgs) -> Result<Value, CliError> {
    let seed = cfg.require_seed("generate")?;
    let tables = a.tables.load()?;
    let bases = load_descriptions(&a.corpus, a.format, &tables)?;
    let altered: Vec<af_core::perturb::AlteredDescription> = af_core::jsonl::read_path(&a.altered)?
        .into_iter()
        .map(|n| n.value)
        .collect();
    let gateway = cfg.gateway()?;
    let generator = Generator {
        gateway: &gateway,
        endpoint: &a.endpoint,
        templates: &cfg.templates,
        lexicon: &cfg.lexicon,
        seed: Some(seed),
    };
    let outcomes = generator.generate_all(&altered, &bases)?;
    af_core::jsonl::write_path(&a.out, &outcomes)?;
    let accepted: Vec<QAItem> = outcomes
        .iter()
        .filter(|o| o.status == GenerationStatus::Accepted)
        .filter_map(|o| o.item.clone())
        .collect();
    if let Some(p) = &a.dataset {
        write_qa_items(p, &accepted)?;
    }
    Ok(json!({
        "outcomes": outcomes.len(),
        "summary": summarize(&outcomes),
        "out": a.out,
        "dataset": a.dataset,
    }))
}

fn build(cfg: &Config, a: BuildArgs) -> Result<Value, CliError> {
    let seed = cfg.require_seed("dataset build")?;
    let mut pool = Vec::new();
    for p in &a.unanswerable {
        pool.extend(load_qa_items_with(p, &cfg.lexicon)?);
    }
    let answerable = load_qa_items_with(&a.answerable, &cfg.lexicon)?;
    let ds = build_balanced_dataset(&pool, &answerable, a.per_category, seed)?;
    write_qa_items(&a.out, &ds)?;
    let mut per_kind: BTreeMap<String, usize> = BTreeMap::new();
    for i in &ds {
        let key = i.unanswerability_kind.map_or("answerable", |k| k.as_str());
        *per_kind.entry(key.to_string()).or_default() += 1;
    }
    Ok(json!({"items": ds.len(), "per_kind": per_kind, "out": a.out}))
}

fn make_judge<'a>(
    cfg: &'a Config,
    gateway: &'a Gateway,
    j: &'a JudgeArgs,
) -> Result<Judge<'a>, CliError> {
    Ok(match j.judge {
        JudgeArg::Rules => Judge::rules(&cfg.lexicon, &cfg.templates),
        JudgeArg::Llm => {
            let endpoint = j
                .judge_endpoint
                .as_deref()
                .ok_or_else(|| CliError::invalid("--judge llm requires --judge-endpoint"))?;
            Judge::llm(&cfg.lexicon, &cfg.templates, gateway, endpoint)
        }
    })
}

fn run(cfg: &Config, a: RunArgs) -> Result<Value, CliError> {
    let dataset = load_qa_items_with(&a.dataset, &cfg.lexicon)?;
    let gateway = cfg.gateway()?;
    let judge = make_judge(cfg, &gateway, &a.judge)?;
    let run_id = a.run_id.clone().unwrap_or_else(|| a.endpoint.clone());
    let eval = EvalConfig {
        gateway: &gateway,
        endpoint: &a.endpoint,
        judge,
        run_id: &run_id,
        seed: cfg.seed,
    };
    match harness::run_eval(&dataset, &eval, &a.out) {
        Ok(run) => Ok(json!({
            "status": "complete",
            "run_id": run.run_id,
            "items": run.responses.len(),
            "judge_mode": run.judge_mode,
            "gateway": gateway.stats(),
            "out": a.out,
        })),
        Err(e @ HarnessError::PartialRun { .. }) => {
            let HarnessError::PartialRun {
                completed,
                ref missing,
                ..
            } = e
            else {
                unreachable!()
            };
            let summary = json!({
                "status": "partial",
                "completed": completed,
                "missing": missing,
                "out": a.out,
            });
            Err(CliError::from(e).with_summary(summary))
        }
        Err(e) => Err(e.into()),
    }
}

fn pope(cfg: &Config, a: PopeArgs) -> Result<Value, CliError> {
    let dataset = load_qa_items_with(&a.dataset, &cfg.lexicon)?;
    let gateway = cfg.gateway()?;
    let judge = make_judge(cfg, &gateway, &a.judge)?;
    let verifier = a.verifier.clone().unwrap_or_else(|| a.decomposer.clone());
    let pc = PopeConfig {
        gateway: &gateway,
        model: &a.endpoint,
        decomposer: &a.decomposer,
        verifier: &verifier,
        judge,
        templates: &cfg.templates,
        expected: match a.expected {
            ExpectedArg::Provenance => ExpectedSource::Provenance,
            ExpectedArg::Verifier => ExpectedSource::Verifier,
        },
        seed: cfg.seed,
    };
    let outcomes = pc.run(&dataset)?;
    let run_id = a
        .run_id
        .clone()
        .unwrap_or_else(|| format!("{}+pope", a.endpoint));
    let run = to_run_record(&outcomes, &run_id, &a.endpoint, &pc.judge);
    run.save(&a.out)?;
    if let Some(p) = &a.outcomes {
        af_core::jsonl::write_path(p, &outcomes)?;
    }
    let baseline = a
        .baseline_calls
        .unwrap_or(dataset.len() as u64 * (1 + u64::from(pc.judge.calls_per_judgement())));
    let cost = cost_report(&outcomes, baseline)?;
    if let Some(p) = &a.cost_report {
        write_json(p, &serde_json::to_value(&cost).expect("cost serializes"))?;
    }
    Ok(json!({"run_id": run_id, "items": run.responses.len(), "cost": cost, "out": a.out}))
}

fn metrics(cfg: &Config, a: MetricsArgs) -> Result<Value, CliError> {
    let dataset = load_qa_items_with(&a.dataset, &cfg.lexicon)?;
    let pre = RunRecord::load(&a.pre)?;
    let post = RunRecord::load(&a.post)?;
    let report = harness::metrics(&pre, &post, &dataset)?;
    let value = serde_json::to_value(&report).expect("report serializes");
    if let Some(out) = &a.out {
        write_json(out, &value)?;
    }
    let pareto = a.pareto.clone().or_else(|| {
        a.out.as_ref().map(|o| {
            let stem = o
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "report".into());
            o.with_file_name(format!("{stem}.pareto.csv"))
        })
    });
    if let Some(p) = &pareto {
        std::fs::write(p, pareto_csv(&report.pareto)).map_err(|e| CliError::io(p, e))?;
    }
    Ok(value)
}

fn export(cfg: &Config, c: ExportCommand) -> Result<Value, CliError> {
    match c {
        ExportCommand::Sft { dataset, out } => {
            let ds = load_qa_items_with(&dataset, &cfg.lexicon)?;
            let n = export_sft(&ds, &out)?;
            Ok(json!({"format": "sft", "lines": n, "out": out}))
        }
        ExportCommand::Dpo {
            dataset,
            run,
            synthetic: _,
            out,
        } => {
            let ds = load_qa_items_with(&dataset, &cfg.lexicon)?;
            let loaded = run.as_deref().map(RunRecord::load).transpose()?;
            let source = match &loaded {
                Some(r) => RejectedSource::Run(r),
                None => RejectedSource::Synthetic {
                    seed: cfg.seed.unwrap_or(0),
                },
            };
            let n = export_dpo(&ds, &source, &cfg.lexicon, &out)?;
            let mode = if loaded.is_some() { "run" } else { "synthetic" };
            Ok(json!({"format": "dpo", "mode": mode, "pairs": n, "out": out}))
        }
    }
}

fn review(cfg: &Config, c: ReviewCommand) -> Result<Value, CliError> {
    match c {
        ReviewCommand::Serve {
            queue,
            log,
            port,
            host,
            ui,
            frames_root,
            max_frames,
        } => {
            let items = load_qa_items_with(&queue, &cfg.lexicon)?;
            let mut store = ReviewStore::open(items, &log)?;
            store.set_max_frames(max_frames);
            let addr: std::net::SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| CliError::invalid(format!("bad listen address: {e}")))?;
            let app =
                af_review::router(af_review::AppState::new(store, frames_root), ui.as_deref());
            let rt =
                tokio::runtime::Runtime::new().map_err(|e| CliError::invalid(e.to_string()))?;
            rt.block_on(af_review::serve(addr, app, |bound| {
                println!("{}", json!({"listening": bound.to_string()}));
                eprintln!("review service listening on http://{bound}");
            }))
            .map_err(|e| CliError::invalid(format!("review service: {e}")))?;
            Ok(json!({"stopped": true}))
        }
        ReviewCommand::Export { queue, log, out } => {
            let items = load_qa_items_with(&queue, &cfg.lexicon)?;
            let store = ReviewStore::open(items, &log)?;
            let n = export_curated(store.state(), &out)?;
            Ok(json!({"items": n, "progress": store.state().progress(), "out": out}))
        }
    }
}

fn cache(cfg: &Config, c: CacheCommand) -> Result<Value, CliError> {
    let dir = cfg.cache_dir.as_deref().ok_or_else(|| {
        CliError::invalid("no cache directory: pass --cache-dir or set AF_CACHE_DIR")
    })?;
    let cache = af_core::gateway::cache::DiskCache::open(dir)?;
    match c {
        CacheCommand::Stats => Ok(json!({"dir": dir, "stats": cache.stats()?})),
        CacheCommand::Clear => Ok(json!({"dir": dir, "removed": cache.clear()?})),
    }
}

fn write_json(path: &Path, v: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(v).expect("json serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
