use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use relfuse::checkpoint::Checkpoint;
use relfuse::conditional::{load_examples, train_conditional, ConditionalTrainConfig};
use relfuse::evaluation::{
    evaluate, evaluate_predictions, predict_dataset, Averaging, EvalOptions, Task,
};
use relfuse::fusion::{BayesFusion, MarginalSource, Marginals, RelationPredictor, VisualOnly};
use relfuse::params::{OptimizerKind, Parameterized};
use relfuse::prior::{train_prior, Enumeration, PriorTensor, PriorTrainConfig};
use relfuse::records::{load_images, load_predictions, predictions_to_text};
use relfuse::semantic::{Variant, DEFAULT_CELL_CAP};
use relfuse::synth::{generate, SynthConfig};
use relfuse::vocab::{load_triples, TripleCounts, VocabMode, Vocabulary};
use relfuse::{Error, Result};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "relfuse",
    version,
    about = "Semantic priors and Bayesian fusion for visual relationship detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a seeded synthetic corpus
    Synth(SynthArgs),
    /// Fit a semantic prior to triple counts
    TrainPrior(TrainPriorArgs),
    /// Fit the conditional predicate model to feature examples
    TrainCond(TrainCondArgs),
    /// Write ranked predictions for every image
    Predict(PredictArgs),
    /// Recall@K report from stored predictions or an end-to-end run
    Evaluate(EvaluateArgs),
    /// Summarize a checkpoint
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// TOML file of option values; command-line flags take precedence
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads for per-image work
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Force sequential execution
    #[arg(long)]
    deterministic: bool,
}

impl Common {
    fn threads(&self) -> Result<usize> {
        if self.threads == 0 {
            return Err(Error::InvalidConfig("--threads must be at least 1".into()));
        }
        if self.deterministic && self.threads > 1 {
            warn!("deterministic mode: ignoring --threads {}", self.threads);
            return Ok(1);
        }
        Ok(self.threads)
    }
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    entities: usize,
    #[arg(long, default_value_t = 8)]
    relations: usize,
    #[arg(long, default_value_t = 100)]
    images: usize,
    #[arg(long, default_value_t = 8)]
    candidates: usize,
    #[arg(long, default_value_t = 3)]
    gt_per_image: usize,
    /// Detector noise temperature
    #[arg(long, default_value_t = 0.5)]
    temperature: f64,
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    #[arg(long, default_value_t = 3)]
    latent_rank: usize,
    /// Fraction of triple types kept out of training
    #[arg(long, default_value_t = 0.0)]
    holdout: f64,
    #[arg(long, default_value_t = 120)]
    triple_types: usize,
    #[arg(long, default_value_t = 3000)]
    train_samples: usize,
    #[arg(long, default_value_t = 0.5)]
    feature_noise: f64,
    #[arg(long, default_value_t = 0.05)]
    box_jitter: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum EnumerationMode {
    Full,
    Sampled,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct TrainPriorArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    vocab: PathBuf,
    /// Training triples, `subject predicate object [count]` per line
    #[arg(long)]
    triples: PathBuf,
    /// Checkpoint to write
    #[arg(long)]
    out: PathBuf,
    /// Training log CSV (default: standard output)
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Variant::ComplEx)]
    variant: Variant,
    #[arg(long, default_value_t = 10)]
    rank: usize,
    /// Hidden width of the multiway network
    #[arg(long, default_value_t = 20)]
    hidden: usize,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, value_enum, default_value_t = OptimizerKind::Adam)]
    optimizer: OptimizerKind,
    #[arg(long, value_enum, default_value_t = EnumerationMode::Full)]
    enumeration: EnumerationMode,
    /// Zero cells drawn per observed cell in sampled mode
    #[arg(long, default_value_t = 5)]
    negatives: usize,
    #[arg(long, default_value_t = DEFAULT_CELL_CAP)]
    cell_cap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct TrainCondArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    vocab: PathBuf,
    /// Examples, `subject object predicate f1,...,fn` per line
    #[arg(long)]
    examples: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    rank: usize,
    #[arg(long, default_value_t = 20)]
    hidden: usize,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, value_enum, default_value_t = OptimizerKind::Adam)]
    optimizer: OptimizerKind,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Pipeline {
    /// Semantic prior fused with detector scores
    Bayes,
    /// Conditional predicate model on region features
    Conditional,
    /// Detector argmaxes only
    Visual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PriorSource {
    /// Exponentiated scores of the checkpoint
    Model,
    /// Smoothed training counts
    Counts,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[arg(long, value_enum, default_value_t = Pipeline::Bayes)]
    pipeline: Pipeline,
    /// Prior or conditional checkpoint
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PriorSource::Model)]
    prior: PriorSource,
    #[arg(long, value_enum, default_value_t = MarginalSource::Prior)]
    marginals: MarginalSource,
    /// Smoothing constant for marginals and count priors
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_CELL_CAP)]
    cell_cap: usize,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct PredictArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    images: PathBuf,
    /// Training triples, for count marginals and count priors
    #[arg(long)]
    train_triples: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Skip predicate-detection candidates
    #[arg(long)]
    no_predicate: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Csv,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    train_triples: Option<PathBuf>,
    /// Stored predictions; without it the pipeline runs end to end
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = Task::ALL)]
    tasks: Vec<Task>,
    #[arg(long, value_delimiter = ',', default_values_t = [50, 100])]
    ks: Vec<usize>,
    /// Keep only ground truth never seen in the training triples
    #[arg(long)]
    zero_shot: bool,
    #[arg(long, value_enum, default_value_t = Averaging::Micro)]
    averaging: Averaging,
    /// Write the CSV report here
    #[arg(long)]
    out: Option<PathBuf>,
    /// What to print on standard output
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct InspectArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Vocabulary for naming the top prior triples
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    top: usize,
    #[arg(long, default_value_t = DEFAULT_CELL_CAP)]
    cell_cap: usize,
}

fn exit_code(err: &Error) -> u8 {
    if err.is_usage() {
        EXIT_USAGE
    } else if err.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_DATA
    }
}

fn parse(args: &[OsString]) -> std::result::Result<Cli, clap::Error> {
    let matches = Cli::command().try_get_matches_from(args)?;
    Cli::from_arg_matches(&matches)
}

fn clap_exit(err: clap::Error) -> u8 {
    let _ = err.print();
    if err.use_stderr() {
        EXIT_USAGE
    } else {
        0
    }
}

fn config_path(cmd: &Command) -> Option<&Path> {
    let common = match cmd {
        Command::Synth(a) => &a.common,
        Command::TrainPrior(a) => &a.common,
        Command::TrainCond(a) => &a.common,
        Command::Predict(a) => &a.common,
        Command::Evaluate(a) => &a.common,
        Command::Inspect(a) => &a.common,
    };
    common.config.as_deref()
}

fn toml_token(key: &str, value: &toml::Value) -> Result<Option<String>> {
    Ok(Some(match value {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(true) => return Ok(None),
        toml::Value::Array(items) => items
            .iter()
            .map(|v| match v {
                toml::Value::String(s) => Ok(s.clone()),
                toml::Value::Integer(i) => Ok(i.to_string()),
                toml::Value::Float(f) => Ok(f.to_string()),
                _ => Err(Error::InvalidConfig(format!(
                    "config key `{key}`: unsupported array item"
                ))),
            })
            .collect::<Result<Vec<_>>>()?
            .join(","),
        _ => {
            return Err(Error::InvalidConfig(format!(
                "config key `{key}`: unsupported value"
            )))
        }
    }))
}

/// Turns a TOML config into flags for subcommand `sub`. Top-level keys
/// apply to every subcommand that accepts them; a `[sub]` table applies to
/// that subcommand only and wins over top-level keys.
fn config_flags(path: &Path, sub: &str) -> Result<Vec<OsString>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        Error::InvalidConfig(format!("{}: {}", path.display(), e.message()))
    })?;
    let root = Cli::command();
    let accepts =
        |cmd: &clap::Command, key: &str| cmd.get_arguments().any(|a| a.get_long() == Some(key));
    let this = root.find_subcommand(sub).expect("parsed subcommand exists");

    let mut flags = Vec::new();
    let push = |key: &str, value: &toml::Value, flags: &mut Vec<OsString>| -> Result<()> {
        if let toml::Value::Boolean(false) = value {
            return Ok(());
        }
        flags.push(format!("--{key}").into());
        if let Some(v) = toml_token(key, value)? {
            flags.push(v.into());
        }
        Ok(())
    };
    let mut section = None;
    for (raw_key, value) in &table {
        let key = raw_key.replace('_', "-");
        if let toml::Value::Table(t) = value {
            if root.find_subcommand(&key).is_none() {
                return Err(Error::InvalidConfig(format!(
                    "{}: unknown section `{raw_key}`",
                    path.display()
                )));
            }
            if key == sub {
                section = Some(t);
            }
            continue;
        }
        if key == "config" {
            return Err(Error::InvalidConfig(format!(
                "{}: nested `config` key",
                path.display()
            )));
        }
        if accepts(this, &key) {
            push(&key, value, &mut flags)?;
        } else if !root.get_subcommands().any(|c| accepts(c, &key)) {
            return Err(Error::InvalidConfig(format!(
                "{}: unknown key `{raw_key}`",
                path.display()
            )));
        }
    }
    for (raw_key, value) in section.into_iter().flatten() {
        let key = raw_key.replace('_', "-");
        if !accepts(this, &key) || key == "config" {
            return Err(Error::InvalidConfig(format!(
                "{}: `{sub}` has no option `{raw_key}`",
                path.display()
            )));
        }
        push(&key, value, &mut flags)?;
    }
    Ok(flags)
}

fn sub_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Synth(_) => "synth",
        Command::TrainPrior(_) => "train-prior",
        Command::TrainCond(_) => "train-cond",
        Command::Predict(_) => "predict",
        Command::Evaluate(_) => "evaluate",
        Command::Inspect(_) => "inspect",
    }
}

pub fn run(args: Vec<OsString>) -> u8 {
    let cli = match parse(&args) {
        Ok(cli) => cli,
        Err(e) => return clap_exit(e),
    };
    let cli = match config_path(&cli.command) {
        None => cli,
        Some(path) => {
            let sub = sub_name(&cli.command);
            let flags = match config_flags(path, sub) {
                Ok(f) => f,
                Err(e) => {
                    eprintln!("error: {e}");
                    return exit_code(&e);
                }
            };
            // config values go right after the subcommand so later flags override them
            let pos = args
                .iter()
                .position(|a| a == sub)
                .expect("subcommand present");
            let mut merged = args[..=pos].to_vec();
            merged.extend(flags);
            merged.extend_from_slice(&args[pos + 1..]);
            match parse(&merged) {
                Ok(cli) => cli,
                Err(e) => return clap_exit(e),
            }
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::TrainPrior(a) => train_prior_cmd(a),
        Command::TrainCond(a) => train_cond_cmd(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io("<stdout>", e))
}

fn write_log(path: Option<&Path>, csv: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, csv),
        None => stdout(csv),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    a.common.threads()?;
    let cfg = SynthConfig {
        num_entities: a.entities,
        num_relations: a.relations,
        images: a.images,
        candidates_per_image: a.candidates,
        gt_per_image: a.gt_per_image,
        temperature: a.temperature,
        feature_dim: a.feature_dim,
        latent_rank: a.latent_rank,
        holdout_fraction: a.holdout,
        seed: a.seed,
        triple_types: a.triple_types,
        train_samples: a.train_samples,
        feature_noise: a.feature_noise,
        box_jitter: a.box_jitter,
    };
    let corpus = generate(&cfg)?;
    corpus.write(&a.out)?;
    info!(
        "wrote {} images, {} training triple types, {} held out to {}",
        corpus.test_images.len(),
        corpus.train_counts.len(),
        corpus.held_out.len(),
        a.out.display()
    );
    Ok(())
}

fn train_prior_cmd(a: TrainPriorArgs) -> Result<()> {
    a.common.threads()?;
    let vocab = Vocabulary::load(&a.vocab)?;
    let (_, counts) = load_triples(&a.triples, VocabMode::Strict(&vocab))?;
    let cfg = PriorTrainConfig {
        variant: a.variant,
        rank: a.rank,
        hidden: a.hidden,
        epochs: a.epochs,
        learning_rate: a.lr,
        optimizer: a.optimizer,
        enumeration: match a.enumeration {
            EnumerationMode::Full => Enumeration::Full,
            EnumerationMode::Sampled => Enumeration::Sampled {
                negatives: a.negatives,
            },
        },
        seed: a.seed,
        cell_cap: a.cell_cap,
    };
    let (model, log) = train_prior(&counts, &vocab, &cfg)?;
    Checkpoint::Semantic(model).save(&a.out)?;
    write_log(a.log.as_deref(), &log.to_csv())
}

fn train_cond_cmd(a: TrainCondArgs) -> Result<()> {
    a.common.threads()?;
    let vocab = Vocabulary::load(&a.vocab)?;
    let examples = load_examples(&a.examples, &vocab)?;
    let cfg = ConditionalTrainConfig {
        rank: a.rank,
        hidden: a.hidden,
        epochs: a.epochs,
        learning_rate: a.lr,
        optimizer: a.optimizer,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    let (model, log) = train_conditional(&examples, &vocab, &cfg)?;
    Checkpoint::Conditional(model).save(&a.out)?;
    write_log(a.log.as_deref(), &log.to_csv())
}

fn load_counts(path: Option<&Path>, vocab: &Vocabulary, why: &str) -> Result<TripleCounts> {
    let path =
        path.ok_or_else(|| Error::InvalidConfig(format!("--train-triples is required for {why}")))?;
    Ok(load_triples(path, VocabMode::Strict(vocab))?.1)
}

fn check_sizes(what: &str, ne: usize, nr: usize, vocab: &Vocabulary) -> Result<()> {
    if ne != vocab.num_entities() || nr != vocab.num_relations() {
        return Err(Error::InvalidData(format!(
            "{what} has {ne} entities and {nr} relations but the vocabulary has {} and {}",
            vocab.num_entities(),
            vocab.num_relations()
        )));
    }
    Ok(())
}

fn build_predictor(
    p: &PipelineArgs,
    vocab: &Vocabulary,
    train_triples: Option<&Path>,
) -> Result<Box<dyn RelationPredictor>> {
    let checkpoint = |why: &str| {
        p.checkpoint
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig(format!("--checkpoint is required for {why}")))
    };
    match p.pipeline {
        Pipeline::Visual => Ok(Box::new(VisualOnly {
            num_entities: vocab.num_entities(),
            num_relations: vocab.num_relations(),
        })),
        Pipeline::Conditional => {
            let path = checkpoint("the conditional pipeline")?;
            let model = Checkpoint::load(path)?.into_conditional(path)?;
            check_sizes(
                "conditional checkpoint",
                model.num_entities(),
                model.num_relations(),
                vocab,
            )?;
            Ok(Box::new(model))
        }
        Pipeline::Bayes => {
            let counts = match (p.prior, p.marginals) {
                (PriorSource::Model, MarginalSource::Prior) => None,
                _ => Some(load_counts(
                    train_triples,
                    vocab,
                    "count marginals or a count prior",
                )?),
            };
            let prior = match p.prior {
                PriorSource::Model => {
                    let path = checkpoint("a model prior")?;
                    let model = Checkpoint::load(path)?.into_semantic(path)?;
                    check_sizes(
                        "prior checkpoint",
                        model.num_entities(),
                        model.num_relations(),
                        vocab,
                    )?;
                    PriorTensor::from_model(&model, p.cell_cap)?
                }
                PriorSource::Counts => {
                    PriorTensor::from_counts(counts.as_ref().expect("loaded above"), p.alpha)?
                }
            };
            let marginals = match p.marginals {
                MarginalSource::Counts => {
                    Marginals::from_counts(counts.as_ref().expect("loaded above"), p.alpha)?
                }
                MarginalSource::Prior => Marginals::from_prior(&prior, p.alpha)?,
            };
            Ok(Box::new(BayesFusion::new(prior, marginals)?))
        }
    }
}

fn predict(a: PredictArgs) -> Result<()> {
    let threads = a.common.threads()?;
    let vocab = Vocabulary::load(&a.vocab)?;
    let images = load_images(&a.images, &vocab)?;
    let predictor = build_predictor(&a.pipeline, &vocab, a.train_triples.as_deref())?;
    let predictions = predict_dataset(&images, predictor.as_ref(), !a.no_predicate, threads)?;
    write_file(&a.out, &predictions_to_text(&predictions, &vocab)?)
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let threads = a.common.threads()?;
    if a.ks.is_empty() || a.ks.contains(&0) {
        return Err(Error::InvalidConfig("--ks needs positive values".into()));
    }
    let vocab = Vocabulary::load(&a.vocab)?;
    let images = load_images(&a.images, &vocab)?;
    let train = if a.zero_shot {
        Some(load_counts(
            a.train_triples.as_deref(),
            &vocab,
            "--zero-shot",
        )?)
    } else {
        None
    };
    let opts = EvalOptions {
        tasks: a.tasks.clone(),
        ks: a.ks.clone(),
        averaging: a.averaging,
        zero_shot: train.as_ref(),
    };
    let report = match &a.predictions {
        Some(path) => {
            let predictions = load_predictions(path, &vocab)?;
            evaluate_predictions(&images, &predictions, &opts)?
        }
        None => {
            let predictor = build_predictor(&a.pipeline, &vocab, a.train_triples.as_deref())?;
            evaluate(&images, predictor.as_ref(), &opts, threads)?
        }
    };
    let csv = report.to_csv();
    if let Some(out) = &a.out {
        write_file(out, &csv)?;
    }
    match a.format {
        Format::Table => stdout(&report.to_table()),
        Format::Csv => stdout(&csv),
    }
}

fn inspect(a: InspectArgs) -> Result<()> {
    a.common.threads()?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let vocab = a.vocab.as_deref().map(Vocabulary::load).transpose()?;
    let mut out = String::new();
    let groups = |out: &mut String, model: &dyn Parameterized| {
        for g in model.groups() {
            out.push_str(&format!("  {:<12} {:?}\n", g.name, g.shape));
        }
        out.push_str(&format!("parameters: {}\n", model.num_parameters()));
    };
    match &ckpt {
        Checkpoint::Semantic(model) => {
            let s = model.shape();
            out.push_str(&format!("model: semantic prior ({})\n", s.variant));
            out.push_str(&format!(
                "entities: {}  relations: {}  rank: {}",
                s.num_entities, s.num_relations, s.rank
            ));
            if s.variant == Variant::MultiwayNn {
                out.push_str(&format!("  hidden: {}", s.hidden));
            }
            out.push('\n');
            out.push_str("groups:\n");
            groups(&mut out, model);
            if let Some(v) = &vocab {
                check_sizes("checkpoint", s.num_entities, s.num_relations, v)?;
            }
            let prior = PriorTensor::from_model(model, a.cell_cap)?;
            out.push_str(&format!("top {} prior triples:\n", a.top));
            for (t, value) in prior.top_k(a.top) {
                let name = match &vocab {
                    Some(v) => v.triple_names(t)?,
                    None => format!("{} {} {}", t.s, t.p, t.o),
                };
                out.push_str(&format!("  {name:<40} {value:>14.6e}\n"));
            }
        }
        Checkpoint::Conditional(model) => {
            let s = model.shape();
            out.push_str("model: conditional\n");
            out.push_str(&format!(
                "entities: {}  relations: {}  rank: {}  hidden: {}  feature dim: {}\n",
                s.num_entities, s.num_relations, s.rank, s.hidden, s.feature_dim
            ));
            out.push_str("groups:\n");
            groups(&mut out, model);
        }
    }
    stdout(&out)
}
