//! Subcommand implementations.
//!
//! Every command is deterministic given its config and inputs: all
//! randomness flows from explicit seeds, and re-running a command overwrites
//! byte-identical outputs. Exit codes: 0 success, 1 validation error,
//! 2 runtime or numeric error; error lines are prefixed `error:`.

use crate::config::FileConfig;
use clap::{Args, Parser, Subcommand};
use fairmap::detector::{route_with_options, RouteOptions, RoutingDecision, TrainingPromptIndex};
use fairmap::embedding::{
    load_embeddings, save_embeddings, EmbeddingRecord, EmbeddingStore, EncoderHandle,
};
use fairmap::lexicon::{bundled, AttributeSet, Keyword, KeywordCategory, Lexicon, PromptTemplate};
use fairmap::metrics::{
    build_report, load_generations, write_report_csv, write_report_json, write_scatter_csv,
    ReportInputs,
};
use fairmap::network::{load_checkpoint, save_checkpoint, Activation, InitMode, MappingNetwork};
use fairmap::training::{build_batches, mean_losses, train, TrainConfig};
use fairmap::Error;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "fairmap",
    about = "Train a fair prompt-embedding mapping, route prompts, and audit bias",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic embeddings for every prompt family in the lexicon
    SynthEmbed(SynthEmbedArgs),
    /// Train the mapping network on an embeddings file
    Train(TrainArgs),
    /// Compute bias metrics and write the audit report
    Audit(AuditArgs),
    /// Route a prompt and write its final conditioning embedding
    Debias(DebiasArgs),
    /// Route a prompt and print the decision only
    Detect(DetectArgs),
}

#[derive(Args, Clone)]
struct LexiconArgs {
    /// Keyword file (one per line) or bundled:occupations / bundled:emotions
    #[arg(long)]
    keywords: Option<String>,
    /// Attribute set file or bundled:gender / bundled:race
    #[arg(long)]
    attributes: Option<String>,
    /// Prompt pattern with {c} and optional {a}
    #[arg(long)]
    template: Option<String>,
}

#[derive(Args)]
struct SynthEmbedArgs {
    #[command(flatten)]
    lexicon: LexiconArgs,
    /// Embedding dimension
    #[arg(long)]
    dim: Option<usize>,
    /// Seed for the synthetic encoder
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (writes embeddings.jsonl)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Explicit output path, overriding the directory default
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    lexicon: LexiconArgs,
    /// Embeddings file covering every prompt family
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Output directory (writes checkpoint.json and trace.csv)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Training epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Fairness loss weight
    #[arg(long)]
    lambda: Option<f64>,
    /// Layers in the mapping network
    #[arg(long)]
    layers: Option<usize>,
    /// Activation between layers
    #[arg(long, value_parser = ["identity", "leaky-relu"])]
    activation: Option<String>,
    /// Seed recorded in the run (training itself is deterministic)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    lexicon: LexiconArgs,
    /// Embeddings file for language-bias metrics
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Generations file for distribution and image metrics
    #[arg(long)]
    generations: Option<PathBuf>,
    /// Checkpoint; adds mapped language-bias columns
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output directory (writes report.json, report.csv, scatter.csv)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Attribute for the signed scatter columns (default: first member)
    #[arg(long)]
    reference_attribute: Option<String>,
    /// Use squared distances in the intra-class average distance
    #[arg(long)]
    icad_squared: bool,
    /// Worker threads for per-keyword evaluation
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct DebiasArgs {
    /// The prompt to route
    prompt: String,
    #[command(flatten)]
    lexicon: LexiconArgs,
    /// Trained checkpoint to apply on the through-mapping branch
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Embeddings file backing the encoder (default: synthetic encoder)
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Synthetic encoder dimension (when no embeddings file is given)
    #[arg(long)]
    dim: Option<usize>,
    /// Synthetic encoder seed
    #[arg(long)]
    seed: Option<u64>,
    /// Match threshold override
    #[arg(long)]
    threshold: Option<f64>,
    /// Use the literal pseudocode branch for neutral matches
    #[arg(long)]
    literal_pseudocode: bool,
    /// Output directory (writes debias.jsonl)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    /// The prompt to route
    prompt: String,
    #[command(flatten)]
    lexicon: LexiconArgs,
    /// Embeddings file backing the encoder (default: synthetic encoder)
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Synthetic encoder dimension (when no embeddings file is given)
    #[arg(long)]
    dim: Option<usize>,
    /// Synthetic encoder seed
    #[arg(long)]
    seed: Option<u64>,
    /// Match threshold override
    #[arg(long)]
    threshold: Option<f64>,
    /// Use the literal pseudocode branch for neutral matches
    #[arg(long)]
    literal_pseudocode: bool,
}

/// Error plus the exit code it maps to.
struct CliError {
    code: i32,
    message: String,
}

type CliResult<T> = Result<T, CliError>;

/// Input and configuration problems.
fn validation(err: impl std::fmt::Display) -> CliError {
    CliError {
        code: 1,
        message: err.to_string(),
    }
}

/// Failures while computing or writing results.
fn runtime(err: impl std::fmt::Display) -> CliError {
    CliError {
        code: 2,
        message: err.to_string(),
    }
}

pub fn run(cli: Cli) -> i32 {
    let result = match FileConfig::from_env() {
        Ok(config) => execute(cli.command, &config),
        Err(e) => Err(validation(e)),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn execute(command: Command, config: &FileConfig) -> CliResult<()> {
    match command {
        Command::SynthEmbed(args) => cmd_synth_embed(args, config),
        Command::Train(args) => cmd_train(args, config),
        Command::Audit(args) => cmd_audit(args, config),
        Command::Debias(args) => cmd_debias(args, config),
        Command::Detect(args) => cmd_detect(args, config),
    }
}

const DEFAULT_TEMPLATE: &str = "an image of an {a} {c}";

fn resolve_string(flag: Option<String>, config: &FileConfig, key: &str) -> Option<String> {
    flag.or_else(|| config.string(key))
}

fn resolve_path(flag: Option<PathBuf>, config: &FileConfig, key: &str) -> Option<PathBuf> {
    flag.or_else(|| config.path(key))
}

fn require<T>(value: Option<T>, key: &str) -> CliResult<T> {
    value.ok_or_else(|| {
        validation(format!(
            "missing required setting {key:?} (flag --{} or config key)",
            key.replace('_', "-")
        ))
    })
}

fn resolve_parsed<T: std::str::FromStr>(
    flag: Option<T>,
    config: &FileConfig,
    key: &str,
) -> CliResult<Option<T>> {
    match flag {
        Some(v) => Ok(Some(v)),
        None => config.parsed::<T>(key).map_err(validation),
    }
}

/// Loads the attribute set and keyword list. `bundled:` names resolve to the
/// datasets compiled into the library.
fn load_lexicon(args: &LexiconArgs, config: &FileConfig) -> CliResult<(Lexicon, AttributeSet)> {
    let attributes = require(
        resolve_string(args.attributes.clone(), config, "attributes"),
        "attributes",
    )?;
    let keywords = require(
        resolve_string(args.keywords.clone(), config, "keywords"),
        "keywords",
    )?;

    let attrs = match attributes.as_str() {
        "bundled:gender" => bundled::gender(),
        "bundled:race" => bundled::race(),
        path => AttributeSet::load(path).map_err(validation)?,
    };

    let mut lexicon = Lexicon::new();
    lexicon
        .register_attribute_set(attrs.clone())
        .map_err(validation)?;
    match keywords.as_str() {
        "bundled:occupations" => lexicon
            .parse_keywords(bundled::OCCUPATIONS, "bundled:occupations", KeywordCategory::Occupation)
            .map_err(validation)?,
        "bundled:emotions" => lexicon
            .parse_keywords(bundled::EMOTIONS, "bundled:emotions", KeywordCategory::Emotion)
            .map_err(validation)?,
        path => lexicon
            .load_keywords(path, KeywordCategory::Custom)
            .map_err(validation)?,
    }
    Ok((lexicon, attrs))
}

fn resolve_template(args: &LexiconArgs, config: &FileConfig) -> CliResult<PromptTemplate> {
    let pattern = resolve_string(args.template.clone(), config, "template")
        .unwrap_or_else(|| DEFAULT_TEMPLATE.to_string());
    PromptTemplate::new(pattern).map_err(validation)
}

fn ensure_out_dir(out: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out)
        .map_err(|e| validation(format!("cannot create output directory {}: {e}", out.display())))
}

fn all_prompt_families(
    lexicon: &Lexicon,
    template: &PromptTemplate,
    attrs: &AttributeSet,
) -> CliResult<Vec<fairmap::lexicon::PromptInstance>> {
    let mut prompts = Vec::new();
    for keyword in lexicon.keywords() {
        prompts.extend(
            lexicon
                .prompt_family(template, keyword, attrs)
                .map_err(validation)?,
        );
    }
    Ok(prompts)
}

fn cmd_synth_embed(args: SynthEmbedArgs, config: &FileConfig) -> CliResult<()> {
    let (lexicon, attrs) = load_lexicon(&args.lexicon, config)?;
    let template = resolve_template(&args.lexicon, config)?;
    let dim = require(resolve_parsed(args.dim, config, "dim")?, "dim")?;
    let seed = resolve_parsed(args.seed, config, "seed")?.unwrap_or(0);
    let out_path = match resolve_path(args.embeddings, config, "embeddings") {
        Some(path) => path,
        None => {
            let out = require(resolve_path(args.out, config, "out"), "out")?;
            ensure_out_dir(&out)?;
            out.join("embeddings.jsonl")
        }
    };

    let encoder = EncoderHandle::synthetic(dim, seed).map_err(validation)?;
    let prompts = all_prompt_families(&lexicon, &template, &attrs)?;

    let mut store = EmbeddingStore::new();
    for prompt in prompts {
        let vector = encoder.encode(&prompt.text).map_err(runtime)?;
        store
            .push(EmbeddingRecord { prompt, vector })
            .map_err(runtime)?;
    }
    save_embeddings(&store, &out_path).map_err(runtime)?;
    println!("records: {}", store.len());
    println!("embeddings: {}", out_path.display());
    Ok(())
}

fn cmd_train(args: TrainArgs, config: &FileConfig) -> CliResult<()> {
    let (lexicon, attrs) = load_lexicon(&args.lexicon, config)?;
    let embeddings_path = require(
        resolve_path(args.embeddings, config, "embeddings"),
        "embeddings",
    )?;
    let out = require(resolve_path(args.out, config, "out"), "out")?;
    ensure_out_dir(&out)?;

    let train_config = TrainConfig {
        learning_rate: resolve_parsed(args.lr, config, "lr")?.unwrap_or(1e-2),
        epochs: resolve_parsed(args.epochs, config, "epochs")?.unwrap_or(500),
        lambda: resolve_parsed(args.lambda, config, "lambda")?.unwrap_or(0.1),
        eps: 1e-12,
        seed: resolve_parsed(args.seed, config, "seed")?.unwrap_or(0),
    };
    let layers = resolve_parsed(args.layers, config, "layers")?.unwrap_or(MappingNetwork::DEFAULT_LAYERS);
    let activation = match resolve_string(args.activation, config, "activation").as_deref() {
        None | Some("identity") => Activation::Identity,
        Some("leaky-relu") => Activation::leaky_relu(),
        Some(other) => {
            return Err(validation(format!(
                "unknown activation {other:?} (expected identity or leaky-relu)"
            )))
        }
    };

    let store = load_embeddings(&embeddings_path).map_err(validation)?;
    let dim = store
        .dim()
        .ok_or_else(|| validation("embeddings file has no records"))?;
    let batches = build_batches(&store, lexicon.keywords(), &attrs).map_err(validation)?;

    let net = MappingNetwork::init(dim, layers, InitMode::Identity)
        .map_err(validation)?
        .with_activation(activation);

    let initial = mean_losses(&batches, &net, &train_config).map_err(runtime)?;
    println!(
        "initial: l_text={} l_fair={} l_total={}",
        initial.text, initial.fair, initial.total
    );
    let (trained, trace) = train(&batches, &net, &train_config).map_err(runtime)?;
    let final_ = mean_losses(&batches, &trained, &train_config).map_err(runtime)?;
    println!(
        "final: l_text={} l_fair={} l_total={}",
        final_.text, final_.fair, final_.total
    );

    let checkpoint_path = out.join("checkpoint.json");
    let trace_path = out.join("trace.csv");
    save_checkpoint(&trained, &checkpoint_path).map_err(runtime)?;
    trace.write_csv(&trace_path).map_err(runtime)?;
    println!("checkpoint: {}", checkpoint_path.display());
    println!("trace: {}", trace_path.display());
    Ok(())
}

fn cmd_audit(args: AuditArgs, config: &FileConfig) -> CliResult<()> {
    let (lexicon, attrs) = load_lexicon(&args.lexicon, config)?;
    let out = require(resolve_path(args.out, config, "out"), "out")?;
    ensure_out_dir(&out)?;

    let embeddings = match resolve_path(args.embeddings, config, "embeddings") {
        Some(path) => Some(load_embeddings(&path).map_err(validation)?),
        None => None,
    };
    let generations = match resolve_path(args.generations, config, "generations") {
        Some(path) => Some(load_generations(&path).map_err(validation)?),
        None => None,
    };
    let network = match resolve_path(args.checkpoint, config, "checkpoint") {
        Some(path) => Some(load_checkpoint(&path).map_err(validation)?),
        None => None,
    };
    let reference = resolve_string(args.reference_attribute, config, "reference_attribute")
        .unwrap_or_else(|| attrs.members()[0].clone());
    if !attrs.contains(&reference) {
        return Err(validation(Error::UnknownAttribute(reference)));
    }
    let jobs = resolve_parsed(args.jobs, config, "jobs")?.unwrap_or(1);
    let icad_squared = args.icad_squared || config.flag("icad_squared").map_err(validation)?;

    let report = build_report(&ReportInputs {
        keywords: lexicon.keywords(),
        attrs: &attrs,
        generations: generations.as_deref(),
        embeddings: embeddings.as_ref(),
        network: network.as_ref(),
        icad_squared,
        jobs,
    })
    .map_err(validation)?;

    let json_path = out.join("report.json");
    let csv_path = out.join("report.csv");
    let scatter_path = out.join("scatter.csv");
    write_report_json(&report, &json_path).map_err(runtime)?;
    write_report_csv(&report, &csv_path).map_err(runtime)?;
    write_scatter_csv(&report, &reference, &scatter_path).map_err(runtime)?;

    let show = |name: &str, value: Option<f64>| {
        if let Some(v) = value {
            println!("{name}: {v}");
        }
    };
    show("dataset_bias", report.aggregates.dataset_bias);
    show("human_clip", report.aggregates.human_clip);
    show("human_frequency", report.aggregates.human_frequency);
    show("icad", report.aggregates.icad);
    show("lbias_magnitude", report.aggregates.lbias_magnitude);
    show(
        "lbias_magnitude_mapped",
        report.aggregates.lbias_magnitude_mapped,
    );
    println!("report: {}", json_path.display());
    Ok(())
}

/// Encoder plus the routing index shared by debias and detect.
struct Router {
    encoder: EncoderHandle,
    index: TrainingPromptIndex,
    options: RouteOptions,
}

#[allow(clippy::too_many_arguments)]
fn build_router(
    lexicon_args: &LexiconArgs,
    embeddings: Option<PathBuf>,
    dim: Option<usize>,
    seed: Option<u64>,
    threshold: Option<f64>,
    literal_pseudocode: bool,
    config: &FileConfig,
) -> CliResult<Router> {
    let (lexicon, attrs) = load_lexicon(lexicon_args, config)?;
    let template = resolve_template(lexicon_args, config)?;

    let encoder = match resolve_path(embeddings, config, "embeddings") {
        Some(path) => EncoderHandle::file_backed(load_embeddings(&path).map_err(validation)?),
        None => {
            let dim = require(resolve_parsed(dim, config, "dim")?, "dim")?;
            let seed = resolve_parsed(seed, config, "seed")?.unwrap_or(0);
            EncoderHandle::synthetic(dim, seed).map_err(validation)?
        }
    };

    let prompts = all_prompt_families(&lexicon, &template, &attrs)?;
    let threshold = resolve_parsed(threshold, config, "threshold")?;
    let index = match threshold {
        Some(e) => TrainingPromptIndex::with_threshold(&prompts, &encoder, e),
        None => TrainingPromptIndex::build(&prompts, &encoder),
    }
    .map_err(validation)?;

    let literal_pseudocode =
        literal_pseudocode || config.flag("literal_pseudocode").map_err(validation)?;
    Ok(Router {
        encoder,
        index,
        options: RouteOptions { literal_pseudocode },
    })
}

fn print_decision(decision: &RoutingDecision, threshold: f64) {
    let route = match decision.route {
        fairmap::detector::Route::ThroughMapping => "through_mapping",
        fairmap::detector::Route::SkipMapping => "skip_mapping",
    };
    println!("route: {route}");
    match &decision.matched_prompt {
        Some(p) => {
            let kind = match &p.attribute {
                Some(a) => format!("attribute {a}"),
                None => "neutral".to_string(),
            };
            println!("matched_prompt: {} ({kind})", p.text);
        }
        None => println!("matched_prompt: none"),
    }
    println!("distance: {}", decision.distance);
    println!("threshold: {threshold}");
    println!("encoded_text: {}", decision.encoded_text);
}

fn cmd_debias(args: DebiasArgs, config: &FileConfig) -> CliResult<()> {
    let out = require(resolve_path(args.out, config, "out"), "out")?;
    ensure_out_dir(&out)?;
    let checkpoint_path = require(
        resolve_path(args.checkpoint, config, "checkpoint"),
        "checkpoint",
    )?;
    let net = load_checkpoint(&checkpoint_path).map_err(validation)?;
    let router = build_router(
        &args.lexicon,
        args.embeddings,
        args.dim,
        args.seed,
        args.threshold,
        args.literal_pseudocode,
        config,
    )?;
    if let Some(dim) = router.encoder.dim() {
        if dim != net.dim() {
            return Err(validation(Error::DimMismatch {
                expected: net.dim(),
                got: dim,
            }));
        }
    }

    let decision = route_with_options(&args.prompt, &router.index, &router.encoder, router.options)
        .map_err(runtime)?;
    print_decision(&decision, router.index.threshold());
    let vector =
        fairmap::detector::apply_route(&decision, &router.encoder, &net).map_err(runtime)?;

    // The output record carries the matched prompt's metadata when a match
    // exists; otherwise the raw input stands in as its own keyword.
    let prompt = match &decision.matched_prompt {
        Some(p) => fairmap::lexicon::PromptInstance {
            text: decision.encoded_text.clone(),
            keyword: p.keyword.clone(),
            attribute: p.attribute.clone(),
        },
        None => fairmap::lexicon::PromptInstance {
            text: decision.encoded_text.clone(),
            keyword: Keyword::new(args.prompt.clone(), KeywordCategory::Custom)
                .map_err(runtime)?,
            attribute: None,
        },
    };
    let mut store = EmbeddingStore::new();
    store.push(EmbeddingRecord { prompt, vector }).map_err(runtime)?;
    let out_path = out.join("debias.jsonl");
    save_embeddings(&store, &out_path).map_err(runtime)?;
    println!("embedding: {}", out_path.display());
    Ok(())
}

fn cmd_detect(args: DetectArgs, config: &FileConfig) -> CliResult<()> {
    let router = build_router(
        &args.lexicon,
        args.embeddings,
        args.dim,
        args.seed,
        args.threshold,
        args.literal_pseudocode,
        config,
    )?;
    let decision = route_with_options(&args.prompt, &router.index, &router.encoder, router.options)
        .map_err(runtime)?;
    print_decision(&decision, router.index.threshold());
    Ok(())
}
