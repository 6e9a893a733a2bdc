//! Command-line surface.
//!
//! Exit statuses: 0 success, 1 I/O, 2 configuration, 3 budget exhausted,
//! 4 oracle unavailable, 5 bad checkpoint.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use promptopt_core::data::{make_few_shot_split, Example};
use promptopt_core::metrics::Metric;
use promptopt_core::oracle::{BillingUnit, BudgetLedger, LossKind, Oracle, Placement, Verbalizer, DEFAULT_TEMPLATE};
use promptopt_core::planted::{PlantedOracle, PlantedTask, PlantedTaskConfig};
use promptopt_core::pmi::{build_vocab, CandidateVocabulary, PmiConfig};
use promptopt_core::trainer::{evaluate, EvalContext, OptimizerKind, TrainConfig, Trainer};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::files;
use crate::manifest::{self, RunManifest};
use crate::mock_server::{MockOptions, MockServer};
use crate::remote::{HttpOracle, RemoteConfig};

#[derive(Parser, Debug)]
#[command(name = "promptopt", version, about = "Learn discrete prompts for a black-box classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a candidate vocabulary from a corpus by PMI segmentation.
    BuildVocab(BuildVocabArgs),
    /// Learn a prompt distribution on a k-shot split of a dataset.
    Train(TrainArgs),
    /// Score a checkpoint's argmax prompt (or no prompt) on a dataset.
    Eval(EvalArgs),
    /// Evaluate a checkpoint's prompt on a different task.
    Transfer(TransferArgs),
    /// Write a synthetic planted task (dataset, vocabulary, oracle spec).
    SynthTask(SynthTaskArgs),
    /// Serve a planted oracle over HTTP.
    ServeMock(ServeMockArgs),
}

#[derive(Args, Debug)]
pub struct BuildVocabArgs {
    /// UTF-8 text, one example per line.
    #[arg(long)]
    pub corpus: PathBuf,
    /// PMI threshold; accepts `inf` and `-inf`.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub sigma: f64,
    #[arg(long, default_value_t = 2)]
    pub min_freq: u64,
    #[arg(long, default_value_t = 100)]
    pub max_vocab: usize,
    #[arg(long, default_value_t = 3)]
    pub max_ngram_len: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Where scores come from.
#[derive(Args, Debug, Clone)]
pub struct OracleArgs {
    /// Planted oracle spec (JSON). Without it, `ORACLE_ENDPOINT` is used.
    #[arg(long)]
    pub synthetic: Option<PathBuf>,
    /// Label words per class: `great|good,terrible|bad`.
    #[arg(long)]
    pub labels: Option<String>,
    /// Verbalizer template with `{a}` and optionally `{b}` slots.
    #[arg(long)]
    pub template: Option<String>,
    /// Maximum billed calls.
    #[arg(long, default_value_t = 8000)]
    pub budget: u64,
    /// `request` bills one unit per batch, `example` one per input.
    #[arg(long, default_value = "request")]
    pub billing: BillingUnit,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub prompt_length: usize,
    #[arg(long, default_value_t = 100)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    /// Prompts sampled per step (I).
    #[arg(long, default_value_t = 4)]
    pub sample_size: usize,
    #[arg(long, default_value = "ce")]
    pub loss: LossKind,
    #[arg(long, default_value_t = 1.0)]
    pub hinge_margin: f64,
    #[arg(long, default_value = "prefix")]
    pub placement: Placement,
    #[arg(long, default_value = "sgd")]
    pub optimizer: OptimizerKind,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 4)]
    pub eval_batch_size: usize,
    /// Examples per class in train and in dev.
    #[arg(long, default_value_t = 16)]
    pub shots: usize,
    #[arg(long, default_value = "acc")]
    pub metric: Metric,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub oracle: OracleArgs,
    /// Checkpoint path; the manifest goes to `<out>.manifest.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "no_prompt")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Defaults to the checkpoint's metric.
    #[arg(long)]
    pub metric: Option<Metric>,
    /// Evaluate with an empty prompt.
    #[arg(long)]
    pub no_prompt: bool,
    /// Defaults to the checkpoint's placement.
    #[arg(long)]
    pub placement: Option<Placement>,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    #[command(flatten)]
    pub oracle: OracleArgs,
    /// Defaults to `<checkpoint or dataset>.eval.manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TransferArgs {
    /// Checkpoint trained on the source task.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Target task; every example is scored.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "acc")]
    pub metric: Metric,
    #[arg(long, default_value = "prefix")]
    pub placement: Placement,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    #[command(flatten)]
    pub oracle: OracleArgs,
    /// Defaults to `<checkpoint>.transfer.manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthTaskArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 100)]
    pub examples_per_class: usize,
    #[arg(long, default_value_t = 1.5)]
    pub weight: f64,
    /// Chooses the planted tokens; tasks sharing it share planted tokens.
    #[arg(long, default_value_t = 0)]
    pub token_seed: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "review")]
    pub tag: String,
    /// Two label words, `class0,class1`.
    #[arg(long, default_value = "great,terrible")]
    pub label_words: String,
}

#[derive(Args, Debug)]
pub struct ServeMockArgs {
    #[arg(long)]
    pub synthetic: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    /// Answer every k-th scoring request with 429.
    #[arg(long)]
    pub rate_limit_every: Option<u64>,
    #[arg(long)]
    pub auth_token: Option<String>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildVocab(a) => cmd_build_vocab(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Transfer(a) => cmd_transfer(&a),
        Command::SynthTask(a) => cmd_synth_task(&a),
        Command::ServeMock(a) => cmd_serve_mock(&a),
    }
}

fn config_err(e: promptopt_core::Error) -> Error {
    Error::Config(e.to_string())
}

fn cmd_build_vocab(a: &BuildVocabArgs) -> Result<()> {
    let config = PmiConfig {
        sigma: a.sigma,
        min_freq: a.min_freq,
        max_vocab: a.max_vocab,
        max_ngram_len: a.max_ngram_len,
    };
    config.validate().map_err(config_err)?;
    let corpus = files::read_corpus_simple(&a.corpus)?;
    let vocab = build_vocab(&corpus, &config).map_err(config_err)?;
    files::write_vocab(&a.out, &vocab)?;
    let freqs = vocab.frequencies();
    println!(
        "wrote {} entries to {} (frequency {}..{})",
        vocab.len(),
        a.out.display(),
        freqs.iter().min().copied().unwrap_or(0),
        freqs.iter().max().copied().unwrap_or(0)
    );
    Ok(())
}

struct OracleSetup {
    oracle: Box<dyn Oracle>,
    verbalizer: Verbalizer,
    kind: String,
}

fn setup_oracle(a: &OracleArgs, require_labels: bool) -> Result<OracleSetup> {
    let template = a.template.clone().unwrap_or_else(|| DEFAULT_TEMPLATE.to_string());
    let labels = match &a.labels {
        Some(l) => Some(Verbalizer::parse_labels(l, template.clone()).map_err(config_err)?),
        None if require_labels => return Err(Error::Config("--labels is required".into())),
        None => None,
    };
    match &a.synthetic {
        Some(path) => {
            let spec = files::read_planted(path)?;
            let oracle = PlantedOracle::new(spec).map_err(config_err)?;
            let verbalizer = match labels {
                Some(v) => v,
                None => {
                    let mut v = oracle.verbalizer();
                    if a.template.is_some() {
                        v = Verbalizer::new(v.label_words.clone(), template).map_err(config_err)?;
                    }
                    v
                }
            };
            Ok(OracleSetup { oracle: Box::new(oracle), verbalizer, kind: format!("synthetic:{}", path.display()) })
        }
        None => {
            let verbalizer = labels.ok_or_else(|| Error::Config("--labels is required with a remote oracle".into()))?;
            let cfg = RemoteConfig::from_env()?;
            let oracle = HttpOracle::new(cfg);
            let kind = format!("remote:{}", oracle.url());
            Ok(OracleSetup { oracle: Box::new(oracle), verbalizer, kind })
        }
    }
}

fn check_labels(examples: &[Example], verbalizer: &Verbalizer, path: &Path) -> Result<()> {
    if let Some(e) = examples.iter().find(|e| e.label >= verbalizer.num_classes()) {
        return Err(Error::Config(format!(
            "{}: label {} but the verbalizer has {} classes",
            path.display(),
            e.label,
            verbalizer.num_classes()
        )));
    }
    Ok(())
}

fn add_oracle_inputs(m: &mut RunManifest, a: &OracleArgs) -> Result<()> {
    if let Some(p) = &a.synthetic {
        m.add_input(p)?;
    }
    Ok(())
}

fn finish_manifest(mut m: RunManifest, path: &Path, ledger: &BudgetLedger, outcome: &Result<()>) -> Result<()> {
    m.billed_calls = ledger.used();
    match outcome {
        Ok(()) => m.finish(0, None),
        Err(e) => m.finish(e.exit_status().code(), Some(e.to_string())),
    }
    m.write(path)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let config = TrainConfig {
        prompt_length: a.prompt_length,
        vocab_size: a.vocab_size,
        sample_count: a.sample_size,
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        eval_batch_size: a.eval_batch_size,
        loss: a.loss,
        hinge_margin: a.hinge_margin,
        optimizer: a.optimizer,
        placement: a.placement,
        budget_limit: a.oracle.budget,
        billing: a.oracle.billing,
        metric: a.metric,
        clip_norm: a.clip_norm,
        seed: a.seed,
    };
    let examples = files::read_dataset(&a.dataset)?;
    let vocab = files::read_vocab(&a.vocab)?;
    let setup = setup_oracle(&a.oracle, false)?;
    check_labels(&examples, &setup.verbalizer, &a.dataset)?;

    let mut config = config;
    if vocab.len() < config.vocab_size {
        eprintln!(
            "warning: {} has {} entries; using vocabulary size {} instead of {}",
            a.vocab.display(),
            vocab.len(),
            vocab.len(),
            config.vocab_size
        );
        config.vocab_size = vocab.len();
    }
    config.validate().map_err(config_err)?;
    for w in config.advisories() {
        eprintln!("warning: {w} (outside the usual range; continuing)");
    }
    let vocab: CandidateVocabulary = vocab.truncated(config.vocab_size).map_err(config_err)?;
    let split = make_few_shot_split(&examples, a.shots, a.seed).map_err(config_err)?;
    for c in &split.short_classes {
        eprintln!("warning: class {c} has fewer than {} examples; it contributed all it had", 2 * a.shots);
    }

    let mut m = RunManifest::begin(
        "train",
        json!({ "train": serde_json::to_value(&config).expect("config serializes"), "shots": a.shots, "oracle": setup.kind }),
    );
    m.add_input(&a.dataset)?;
    m.add_input(&a.vocab)?;
    add_oracle_inputs(&mut m, &a.oracle)?;

    let ledger = BudgetLedger::new(config.budget_limit);
    let metric = config.metric;
    let mut trainer = Trainer::new(config, vocab.entries().to_vec(), &*setup.oracle, &setup.verbalizer, &ledger)
        .map_err(config_err)?;
    let limit = ledger.limit();
    let report = trainer.train_with(&split, |r| {
        let dev = r.dev_metric.map_or_else(|| "n/a".to_string(), |d| format!("{d:.4}"));
        println!(
            "epoch {:>3}  train loss {:.4}  dev {metric} {dev}  billed {}/{limit}",
            r.epoch + 1,
            r.mean_train_loss,
            r.billed
        );
    });

    checkpoint::write(&a.out, &report.checkpoint)?;
    let prompt = report.checkpoint.argmax_prompt().map_err(config_err)?;
    if let Some(d) = report.checkpoint.best_dev {
        println!("best dev {metric} {d:.4}");
        m.metrics.insert(format!("best_dev_{metric}"), d);
    }
    if let Some(last) = report.epochs.last() {
        m.metrics.insert("final_train_loss".into(), last.mean_train_loss);
    }
    println!("prompt: {}", prompt.join(" | "));
    println!("billed {} of {} calls; checkpoint {}", ledger.used(), limit, a.out.display());

    let outcome = match report.halt {
        Some(e) => {
            let completed = report.epochs.len();
            eprintln!("training stopped after {completed} complete epoch(s): {e}");
            Err(Error::Core(e))
        }
        None => Ok(()),
    };
    finish_manifest(m, &manifest::path_for(&a.out), &ledger, &outcome)?;
    outcome
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let ck = match &a.checkpoint {
        Some(p) => Some(checkpoint::read(p)?),
        None => None,
    };
    let examples = files::read_dataset(&a.dataset)?;
    let setup = setup_oracle(&a.oracle, false)?;
    check_labels(&examples, &setup.verbalizer, &a.dataset)?;
    let metric = a.metric.or(ck.as_ref().map(|c| c.config.metric)).unwrap_or_default();
    let placement = a.placement.or(ck.as_ref().map(|c| c.config.placement)).unwrap_or_default();
    let prompt = match (&ck, a.no_prompt) {
        (Some(c), false) => c.argmax_prompt().map_err(|e| Error::Checkpoint(e.to_string()))?,
        _ => Vec::new(),
    };

    let manifest_path = a.manifest.clone().unwrap_or_else(|| {
        sibling(a.checkpoint.as_deref().unwrap_or(&a.dataset), ".eval.manifest.json")
    });
    let mut m = RunManifest::begin(
        "eval",
        json!({
            "metric": metric.to_string(),
            "placement": placement.to_string(),
            "no_prompt": a.no_prompt,
            "batch_size": a.batch_size,
            "budget": a.oracle.budget,
            "oracle": setup.kind,
        }),
    );
    if let Some(p) = &a.checkpoint {
        m.add_input(p)?;
    }
    m.add_input(&a.dataset)?;
    add_oracle_inputs(&mut m, &a.oracle)?;

    let ledger = BudgetLedger::new(a.oracle.budget);
    let ctx = EvalContext {
        oracle: &*setup.oracle,
        verbalizer: &setup.verbalizer,
        ledger: &ledger,
        placement,
        billing: a.oracle.billing,
        batch_size: a.batch_size,
    };
    let outcome = evaluate(&prompt, &examples, &ctx, metric).map_err(Error::from).map(|v| {
        println!("prompt: {}", if prompt.is_empty() { "(none)".to_string() } else { prompt.join(" | ") });
        println!("{metric} {v:.4} on {} examples; billed {} calls", examples.len(), ledger.used());
        m.metrics.insert(metric.to_string(), v);
    });
    finish_manifest(m, &manifest_path, &ledger, &outcome)?;
    outcome
}

fn cmd_transfer(a: &TransferArgs) -> Result<()> {
    let ck = checkpoint::read(&a.checkpoint)?;
    let examples = files::read_dataset(&a.dataset)?;
    let setup = setup_oracle(&a.oracle, true)?;
    check_labels(&examples, &setup.verbalizer, &a.dataset)?;
    let prompt = ck.argmax_prompt().map_err(|e| Error::Checkpoint(e.to_string()))?;
    let metric = a.metric;

    let manifest_path = a.manifest.clone().unwrap_or_else(|| sibling(&a.checkpoint, ".transfer.manifest.json"));
    let mut m = RunManifest::begin(
        "transfer",
        json!({
            "metric": metric.to_string(),
            "placement": a.placement.to_string(),
            "batch_size": a.batch_size,
            "budget": a.oracle.budget,
            "oracle": setup.kind,
        }),
    );
    m.add_input(&a.checkpoint)?;
    m.add_input(&a.dataset)?;
    add_oracle_inputs(&mut m, &a.oracle)?;

    let ledger = BudgetLedger::new(a.oracle.budget);
    let ctx = EvalContext {
        oracle: &*setup.oracle,
        verbalizer: &setup.verbalizer,
        ledger: &ledger,
        placement: a.placement,
        billing: a.oracle.billing,
        batch_size: a.batch_size,
    };
    println!("source prompt: {}", if prompt.is_empty() { "(none)".to_string() } else { prompt.join(" | ") });
    let outcome = (|| -> Result<()> {
        let transferred = evaluate(&prompt, &examples, &ctx, metric)?;
        let baseline = evaluate::<_, String>(&[], &examples, &ctx, metric)?;
        println!("target {metric} {transferred:.4}");
        println!("no-prompt baseline {metric} {baseline:.4}");
        println!("improvement {:+.4}; billed {} calls", transferred - baseline, ledger.used());
        m.metrics.insert(format!("transfer_{metric}"), transferred);
        m.metrics.insert(format!("baseline_{metric}"), baseline);
        Ok(())
    })();
    finish_manifest(m, &manifest_path, &ledger, &outcome)?;
    outcome
}

fn cmd_synth_task(a: &SynthTaskArgs) -> Result<()> {
    let words: Vec<&str> = a.label_words.split(',').map(str::trim).collect();
    let [w0, w1] = words[..] else {
        return Err(Error::Config("--label-words needs exactly two words".into()));
    };
    let cfg = PlantedTaskConfig {
        vocab_size: a.vocab_size,
        examples_per_class: a.examples_per_class,
        weight: a.weight,
        token_seed: a.token_seed,
        seed: a.seed,
        tag: a.tag.clone(),
        label_words: [w0.to_string(), w1.to_string()],
        ..PlantedTaskConfig::default()
    };
    let task = PlantedTask::generate(&cfg).map_err(config_err)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let vocab = CandidateVocabulary::from_entries(task.vocab.clone()).map_err(config_err)?;
    files::write_dataset(&a.out_dir.join("dataset.tsv"), &task.examples)?;
    files::write_vocab(&a.out_dir.join("vocab.tsv"), &vocab)?;
    files::write_planted(&a.out_dir.join("planted.json"), &task.spec)?;
    println!(
        "wrote {} examples, {} vocabulary entries and planted.json to {}",
        task.examples.len(),
        vocab.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn cmd_serve_mock(a: &ServeMockArgs) -> Result<()> {
    let spec = files::read_planted(&a.synthetic)?;
    let oracle = PlantedOracle::new(spec).map_err(config_err)?;
    let options = MockOptions { rate_limit_every: a.rate_limit_every, auth_token: a.auth_token.clone() };
    let server = MockServer::start(oracle, &a.addr, options)?;
    println!("serving on {}", server.url());
    server.wait();
    Ok(())
}
