mod config;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use contiguard::corpus::io::{read_dataset, read_jsonl, write_dataset, write_jsonl};
use contiguard::corpus::{AcceptAll, Dataset, DictionaryChecker, LabeledText, SpellChecker, Split};
use contiguard::enrich::Enricher;
use contiguard::harness::desk::{attack, build_desk_dataset, prepare_raw, synthetic_clean};
use contiguard::harness::{
    report, run_many, HarnessError, MomentLog, PreparedDataset, RetentionRecord, RunResult, RunSpec,
};
use contiguard::model::{evaluate, Ablation, Checkpoint, Components, ModelError};
use contiguard::perturb::{Lexicons, PerturbationKind};
use serde_json::json;

use config::{ConfigError, RunConfig};

const RELEVANT_WORDS: &str = "relevant_words.txt";

#[derive(Debug, Parser)]
#[command(name = "contiguard", version, about = "Continual toxicity detection under evolving evasive perturbations")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Clean, attack and split a corpus into perturbation domains.
    BuildDataset {
        /// Raw labelled JSON Lines.
        #[arg(long)]
        raw: Option<PathBuf>,
        /// Use the generated template corpus instead of raw text.
        #[arg(long, conflicts_with = "raw")]
        synthetic: bool,
        /// Output directory; defaults to the `out_dir` key.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated perturbation kinds.
        #[arg(long)]
        kinds: Option<String>,
        #[arg(long)]
        quota: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Attach auxiliary information to every sample.
    Enrich {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Extra vocabulary for the offline deobfuscator.
        #[arg(long)]
        relevant: Option<PathBuf>,
        /// Output directory; defaults to the `out_dir` key.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Continual training over one or more domain orders.
    Train {
        /// `default`, `identity` or a comma-separated kind list.
        #[arg(long)]
        order: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the `out_dir` key.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Test accuracy of a checkpoint on every domain.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Output directory; defaults to the `out_dir` key.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full method against single-term ablations.
    Ablate {
        /// Ablation such as `wo_aux` (repeatable); `all` runs every one.
        #[arg(long = "flag", required = true)]
        flags: Vec<String>,
        /// Output directory; defaults to the `out_dir` key.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One continual run per memory size.
    SweepMemory {
        /// Comma-separated memory sizes.
        #[arg(long, default_value = "0,2,4,6,8")]
        ks: String,
        /// Output directory; defaults to the `out_dir` key.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tables from moment logs and retention records.
    Report {
        /// MomentLog JSON Lines (repeatable).
        #[arg(long = "logs", required = true)]
        logs: Vec<PathBuf>,
        /// Retention JSON Lines (repeatable).
        #[arg(long = "retention")]
        retention: Vec<PathBuf>,
        /// Output directory; defaults to the `out_dir` key.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

const USAGE: u8 = 1;
const DATA: u8 = 2;
const RUNTIME: u8 = 3;

trait OrExit<T> {
    fn or_exit(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrExit<T> for Result<T, E> {
    fn or_exit(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure {
            code: USAGE,
            error: e.into(),
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let code = match &e {
            HarnessError::MissingDomain { .. } | HarnessError::Data(_) => DATA,
            HarnessError::EmptyOrder => USAGE,
            HarnessError::Model(ModelError::Config(_)) => USAGE,
            HarnessError::Model(_) | HarnessError::Io { .. } => RUNTIME,
        };
        Failure { code, error: e.into() }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(USAGE) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let mut message = f.error.to_string();
            for cause in f.error.chain().skip(1) {
                let cause = cause.to_string();
                if !message.contains(&cause) {
                    message = format!("{message}: {cause}");
                }
            }
            eprintln!("error: {message}");
            ExitCode::from(f.code)
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            log::info!("config file {}", path.display());
            RunConfig::load(path)?
        }
        None => RunConfig::default(),
    };
    for assignment in &cli.set {
        cfg.apply_override(assignment)?;
    }
    Ok(cfg)
}

fn flag<T: std::fmt::Display>(cfg: &mut RunConfig, key: &str, value: Option<T>) -> Result<(), Failure> {
    if let Some(v) = value {
        cfg.apply_override(&format!("{key}={v}"))?;
    }
    Ok(())
}

fn quoted(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = resolve_config(&cli)?;
    let Some(command) = cli.command else {
        if cli.print_config {
            print!("{}", cfg.to_toml());
            return Ok(());
        }
        return Err(Failure {
            code: USAGE,
            error: anyhow!("no subcommand given (try --help)"),
        });
    };
    match &command {
        Command::BuildDataset { kinds, quota, seed, .. } => {
            if let Some(k) = kinds {
                let list: Vec<String> = k.split(',').map(|s| quoted(s.trim())).collect();
                cfg.apply_override(&format!("kinds=[{}]", list.join(",")))?;
            }
            flag(&mut cfg, "quota", *quota)?;
            flag(&mut cfg, "seed", *seed)?;
        }
        Command::Train { order, seed, .. } => {
            flag(&mut cfg, "order", order.as_deref().map(quoted))?;
            if let Some(s) = seed {
                cfg.apply_override(&format!("seed={s}"))?;
                cfg.apply_override(&format!("seeds=[{s}]"))?;
            }
        }
        Command::Enrich { dataset, .. } | Command::Evaluate { dataset, .. } => {
            flag(&mut cfg, "dataset", dataset.as_ref().map(|p| quoted(&p.display().to_string())))?;
        }
        _ => {}
    }
    cfg.validate()?;
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let dir = |out: Option<PathBuf>| out.unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
    match command {
        Command::BuildDataset { raw, synthetic, out, .. } => build_dataset(&cfg, raw, synthetic, &dir(out)),
        Command::Enrich { relevant, out, .. } => enrich(&cfg, relevant, &dir(out)),
        Command::Train { out, .. } => train(&cfg, &dir(out)),
        Command::Evaluate { checkpoint, out, .. } => evaluate_checkpoint(&cfg, &checkpoint, &dir(out)),
        Command::Ablate { flags, out } => ablate(&cfg, &flags, &dir(out)),
        Command::SweepMemory { ks, out } => sweep(&cfg, &ks, &dir(out)),
        Command::Report { logs, retention, out } => report_cmd(&logs, &retention, &dir(out)),
    }
}

fn prepare_out(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let path = cfg
        .write_resolved(out)
        .with_context(|| format!("cannot write into {}", out.display()))
        .or_exit(RUNTIME)?;
    log::info!("resolved config written to {}", path.display());
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("json serializes");
    fs::write(path, text + "\n")
        .with_context(|| format!("cannot write {}", path.display()))
        .or_exit(RUNTIME)
}

fn build_dataset(cfg: &RunConfig, raw: Option<PathBuf>, synthetic: bool, out: &Path) -> Result<(), Failure> {
    let raw = raw.or_else(|| (!cfg.raw.is_empty()).then(|| PathBuf::from(&cfg.raw)));
    let setup = cfg.desk_setup()?;
    let model = cfg.model()?;
    let base = cfg.lexicons()?;
    let (clean, lexicons, clean_report) = match (raw, synthetic) {
        (Some(path), false) => {
            let texts: Vec<LabeledText> = read_jsonl(&path).or_exit(DATA)?;
            let checker: Box<dyn SpellChecker> = if cfg.dictionary.is_empty() {
                Box::new(AcceptAll)
            } else {
                Box::new(DictionaryChecker::load(Path::new(&cfg.dictionary)).or_exit(DATA)?)
            };
            let (clean, lex, report) = prepare_raw(&texts, checker.as_ref(), &base, cfg.seed)?;
            (clean, lex, Some(report))
        }
        (None, true) => {
            let (clean, lex) = synthetic_clean(&setup, &base);
            (clean, lex, None)
        }
        _ => {
            return Err(Failure {
                code: USAGE,
                error: anyhow!("build-dataset needs --raw <path> (or the `raw` key) or --synthetic"),
            })
        }
    };
    prepare_out(cfg, out)?;
    let (dataset, build_report) = attack(&clean, &lexicons, &setup, model)?;
    let path = out.join("dataset.jsonl");
    write_dataset(&path, &dataset).or_exit(RUNTIME)?;
    let words: Vec<&str> = lexicons.toxic_relevant_words.iter().map(String::as_str).collect();
    fs::write(out.join(RELEVANT_WORDS), words.join("\n") + "\n").or_exit(RUNTIME)?;
    write_json(
        &out.join("build_report.json"),
        &json!({
            "clean_samples": clean.len(),
            "clean": clean_report.map(|r| format!("{r:?}")),
            "per_kind": build_report.per_kind,
            "splits": dataset.split_summary(),
        }),
    )?;
    for (kind, r) in &build_report.per_kind {
        println!(
            "{kind}: {}/{}/{} train/valid/test, {} evaders of {} attempts, shortfall {}",
            r.train, r.valid, r.test, r.toxic_evaded, r.toxic_attempted, r.shortfall
        );
    }
    println!("wrote {} samples to {}", dataset.samples.len(), path.display());
    Ok(())
}

fn read_words(path: &Path) -> Result<BTreeSet<String>, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .or_exit(DATA)?;
    Ok(text.lines().map(str::trim).filter(|w| !w.is_empty()).map(str::to_string).collect())
}

fn enricher(cfg: &RunConfig, lexicons: &Lexicons) -> Enricher {
    #[cfg(feature = "http")]
    if !cfg.llm_url.is_empty() {
        let backend = contiguard::enrich::HttpChatBackend {
            endpoint: cfg.llm_url.clone(),
            api_key: std::env::var(contiguard::enrich::HttpChatBackend::ENV_KEY).unwrap_or_default(),
            model: cfg.llm_model.clone(),
        };
        return Enricher::with_backend(lexicons, Box::new(backend), cfg.enricher());
    }
    #[cfg(not(feature = "http"))]
    if !cfg.llm_url.is_empty() {
        log::warn!("llm_url is set but this build has no HTTP support; using the offline stub");
    }
    Enricher::from_env(lexicons, cfg.enricher())
}

fn enrich(cfg: &RunConfig, relevant: Option<PathBuf>, out: &Path) -> Result<(), Failure> {
    if cfg.dataset.is_empty() {
        return Err(Failure {
            code: USAGE,
            error: anyhow!("enrich needs --dataset <path> or the `dataset` key"),
        });
    }
    let source = PathBuf::from(&cfg.dataset);
    let mut dataset = read_dataset(&source).or_exit(DATA)?;
    let mut lexicons = cfg.lexicons()?;
    let relevant = relevant.or_else(|| {
        let sibling = source.with_file_name(RELEVANT_WORDS);
        sibling.exists().then_some(sibling)
    });
    if let Some(path) = relevant {
        lexicons.toxic_relevant_words.extend(read_words(&path)?);
    }
    prepare_out(cfg, out)?;
    let enricher = enricher(cfg, &lexicons);
    let cache = if cfg.cache.is_empty() {
        out.join("aux_cache.jsonl")
    } else {
        PathBuf::from(&cfg.cache)
    };
    if cache.exists() {
        let n = enricher.load_cache(&cache).or_exit(DATA)?;
        log::info!("{n} cached responses from {}", cache.display());
    }
    let started = Instant::now();
    enricher.enrich_all(&mut dataset.samples);
    enricher.save_cache(&cache).or_exit(RUNTIME)?;
    let path = out.join("dataset.jsonl");
    write_dataset(&path, &dataset).or_exit(RUNTIME)?;
    println!(
        "enriched {} samples ({}) in {:.1}s, wrote {}",
        dataset.samples.len(),
        if enricher.is_live() { "live" } else { "stub" },
        started.elapsed().as_secs_f64(),
        path.display()
    );
    Ok(())
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, Failure> {
    if cfg.dataset.is_empty() {
        log::info!("no dataset configured; building the synthetic desk dataset");
        let (dataset, _) = build_desk_dataset(&cfg.desk_setup()?, &cfg.lexicons()?, cfg.model()?)?;
        return Ok(dataset);
    }
    let dataset = read_dataset(Path::new(&cfg.dataset)).or_exit(DATA)?;
    dataset.validate().or_exit(DATA)?;
    Ok(dataset)
}

fn specs_for(cfg: &RunConfig, components: &[Components]) -> Result<Vec<RunSpec>, Failure> {
    let mut specs = Vec::new();
    for (order_id, order) in cfg.orders()? {
        for &seed in &cfg.seeds {
            for c in components {
                let mut exp = cfg.experiment()?;
                exp.train = cfg.train(seed)?;
                specs.push(RunSpec::new(&order_id, &order, exp, *c));
            }
        }
    }
    Ok(specs)
}

struct Outputs {
    logs: Vec<MomentLog>,
    retention: Vec<RetentionRecord>,
}

fn execute(cfg: &RunConfig, specs: &[RunSpec], out: &Path, checkpoints: bool) -> Result<Outputs, Failure> {
    let dataset = load_dataset(cfg)?;
    let data = PreparedDataset::new(&dataset, &cfg.model()?.encoder);
    let started = Instant::now();
    let results: Vec<RunResult> = run_many(&data, specs, cfg.workers)?;
    log::info!("{} runs in {:.1}s", results.len(), started.elapsed().as_secs_f64());
    let mut logs = Vec::new();
    let mut retention = Vec::new();
    for (spec, result) in specs.iter().zip(&results) {
        logs.extend(result.logs.iter().cloned());
        retention.extend(result.retention_records());
        if checkpoints {
            let dir = out.join("checkpoints");
            let path = dir.join(format!("{}_{}_s{}.ckpt", spec.method, spec.order_id, spec.config.train.seed));
            let mut ck = Checkpoint::new(result.params.clone());
            ck.memory = Some(result.memory.clone());
            ck.meta = json!({
                "method": spec.method,
                "order_id": spec.order_id,
                "order": spec.order,
                "components": spec.components,
                "experiment": spec.config,
            });
            fs::create_dir_all(&dir).or_exit(RUNTIME)?;
            ck.save(&path).or_exit(RUNTIME)?;
        }
    }
    write_jsonl(&out.join("moments.jsonl"), &logs).or_exit(RUNTIME)?;
    write_jsonl(&out.join("retention.jsonl"), &retention).or_exit(RUNTIME)?;
    report(&logs, &retention).write(out)?;
    Ok(Outputs { logs, retention })
}

fn print_finals(logs: &[MomentLog]) {
    let last = logs.iter().map(|l| l.moment).max().unwrap_or(0);
    for l in logs.iter().filter(|l| l.moment == last) {
        println!("{} {} seed {}: final average {:.2}", l.method, l.order_id, l.seed, 100.0 * l.average);
    }
}

fn train(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    prepare_out(cfg, out)?;
    let specs = specs_for(cfg, &[cfg.components()?])?;
    let outputs = execute(cfg, &specs, out, true)?;
    print_finals(&outputs.logs);
    Ok(())
}

fn ablate(cfg: &RunConfig, flags: &[String], out: &Path) -> Result<(), Failure> {
    let mut ablations = Vec::new();
    for f in flags {
        if f == "all" {
            ablations.extend(Ablation::ALL);
        } else {
            ablations.push(f.parse::<Ablation>().or_exit(USAGE)?);
        }
    }
    prepare_out(cfg, out)?;
    let base = cfg.components()?;
    let mut components = vec![base];
    components.extend(ablations.iter().map(|&a| base.without(a)));
    let specs = specs_for(cfg, &components)?;
    let outputs = execute(cfg, &specs, out, false)?;
    print_finals(&outputs.logs);
    log::info!("{} retention records", outputs.retention.len());
    Ok(())
}

fn sweep(cfg: &RunConfig, ks: &str, out: &Path) -> Result<(), Failure> {
    let ks: Vec<usize> = ks
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<Result<_, _>>()
        .with_context(|| format!("bad --ks list `{ks}`"))
        .or_exit(USAGE)?;
    prepare_out(cfg, out)?;
    let components = cfg.components()?;
    let mut specs = Vec::new();
    for spec in specs_for(cfg, &[components])? {
        for &k in &ks {
            let mut s = spec.clone();
            s.config.memory_k = k;
            s.method = format!("k={k}");
            specs.push(s);
        }
    }
    let outputs = execute(cfg, &specs, out, false)?;
    print_finals(&outputs.logs);
    Ok(())
}

fn report_cmd(logs: &[PathBuf], retention: &[PathBuf], out: &Path) -> Result<(), Failure> {
    let mut all_logs: Vec<MomentLog> = Vec::new();
    for p in logs {
        all_logs.extend(read_jsonl::<MomentLog>(p).or_exit(DATA)?);
    }
    let mut records: Vec<RetentionRecord> = Vec::new();
    for p in retention {
        records.extend(read_jsonl::<RetentionRecord>(p).or_exit(DATA)?);
    }
    let tables = report(&all_logs, &records);
    tables.write(out)?;
    print!("{}", tables.methods_md);
    Ok(())
}

fn evaluate_checkpoint(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<(), Failure> {
    let ck = Checkpoint::load(checkpoint).or_exit(DATA)?;
    let components: Components = match ck.meta.get("components") {
        Some(v) => serde_json::from_value(v.clone())
            .context("checkpoint metadata has malformed components")
            .or_exit(DATA)?,
        None => Components::FULL,
    };
    let dataset = load_dataset(cfg)?;
    prepare_out(cfg, out)?;
    let data = PreparedDataset::new(&dataset, &ck.params.config.encoder);
    let fusion = components.fusion();
    let mut per_domain = serde_json::Map::new();
    let mut total = 0.0;
    for (kind, d) in &data.domains {
        if d.test.is_empty() {
            log::warn!("{kind}: no {:?} samples", Split::Test);
            continue;
        }
        let acc = evaluate(&ck.params, &d.test, fusion).or_exit(RUNTIME)?;
        println!("{kind}: {:.2}", 100.0 * acc);
        total += acc;
        per_domain.insert(kind.name().to_string(), json!(acc));
    }
    if per_domain.is_empty() {
        return Err(Failure {
            code: DATA,
            error: anyhow!("dataset has no test samples"),
        });
    }
    let average = total / per_domain.len() as f64;
    println!("average: {:.2}", 100.0 * average);
    let kinds: Vec<PerturbationKind> = data.domains.keys().copied().collect();
    write_json(
        &out.join("evaluation.json"),
        &json!({
            "checkpoint": checkpoint.display().to_string(),
            "components": components,
            "domains": kinds,
            "accuracy": per_domain,
            "average": average,
        }),
    )
}
