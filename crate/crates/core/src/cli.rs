//! Command-line front end.
//!
//! Settings come from three layers: built-in defaults, then an optional JSON
//! config file with flat dotted keys (`"train.lr": 0.05`), then flags. Each
//! run writes `<command>.manifest.json` next to its outputs with the resolved
//! settings, SHA-256 digests of the inputs and the tool version.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::adoption::{self, HyperParams, ModelParams, NegativeSampling, Variant};
use crate::bundle::Bundle;
use crate::corpus::{self, Corpus, DatasetPaths, IngestOptions};
use crate::error::{Error, Result};
use crate::evaluation::{self, CandidatePolicy, EvalConfig, ModelSpec};
use crate::netinfo::{self, QuartileMode, StatVar};
use crate::simulator::{self, Preset, SimConfig};
use crate::topic_model::{self, LdaConfig, TopicTables};
use crate::visibility::{self, BacklogMode, RateModel, SurfingParams, VisibilityTable};

pub const CORPUS_FILE: &str = "corpus.json";
pub const INGEST_REPORT_FILE: &str = "ingest_report.json";
pub const TOPICS_FILE: &str = "topics.bin";
pub const TOPICS_TEXT_FILE: &str = "topics.txt";
pub const VISIBILITY_FILE: &str = "visibility.csv";
pub const MODEL_FILE: &str = "model.bin";
pub const MODEL_JSON_FILE: &str = "model.json";
pub const EVAL_JSON_FILE: &str = "eval_report.json";
pub const EVAL_CSV_FILE: &str = "eval_report.csv";
pub const NETSTATS_FILE: &str = "netstats.csv";
pub const ANALYSIS_FILE: &str = "analysis.json";

const PRECEDENCE: &str = "Settings are resolved as flag > config file (--config, JSON object with flat \
dotted keys such as \"train.lr\") > built-in default.";

#[derive(Parser, Debug)]
#[command(name = "vistopic", version, about = "Topic, visibility and adoption modeling for social streams", after_help = PRECEDENCE)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Read edges.tsv, adoptions.jsonl and items.jsonl into corpus.json.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ingest: IngestArgs,
    },
    /// Fit LDA to the item texts.
    Topics {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        topics: TopicArgs,
    },
    /// Compute per-user backlog and visibility.
    Visibility {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        vis: VisArgs,
    },
    /// Fit the adoption model on every adoption.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        /// Expected number of topics; must match the topics file.
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        vis: VisArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Cross-validated ranking comparison of the model variants.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Network size, diversity, effort and friend topic diversity.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        vis: VisArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        analyze: AnalyzeArgs,
    },
    /// Write a synthetic dataset with known parameters.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// tiny, desk, recovery or communities.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Run every stage on one dataset.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ingest: IngestArgs,
        #[command(flatten)]
        topics: TopicArgs,
        #[command(flatten)]
        vis: VisArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        eval: EvalArgs,
        #[command(flatten)]
        analyze: AnalyzeArgs,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// JSON config file with flat dotted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 makes every stage deterministic.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct Inputs {
    /// Defaults to OUT/corpus.json.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Defaults to OUT/topics.bin.
    #[arg(long = "topics-file")]
    topics_file: Option<PathBuf>,
    /// Defaults to OUT/visibility.csv.
    #[arg(long = "visibility-file")]
    visibility_file: Option<PathBuf>,
    /// Trained model; analyze retrains when absent.
    #[arg(long = "model-file")]
    model_file: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Directory holding the three dataset files. Defaults to OUT.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Observation window; defaults to the adoption time span.
    #[arg(long)]
    window_days: Option<f64>,
    #[arg(long)]
    min_count: Option<usize>,
    #[arg(long)]
    min_item_adopters: Option<usize>,
}

#[derive(Args, Debug)]
struct TopicArgs {
    #[arg(long)]
    k: Option<usize>,
    /// Document-topic prior; defaults to 50/K.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    top_words: Option<usize>,
}

#[derive(Args, Debug)]
struct VisArgs {
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// visits-per-post or url-rule.
    #[arg(long)]
    backlog_mode: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    sigma_u2: Option<f64>,
    #[arg(long)]
    sigma_theta2: Option<f64>,
    #[arg(long)]
    sigma_eta2: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_discount: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// full, relevance_only, fitness_only, vip_like or softmax_ctr.
    #[arg(long)]
    variant: Option<String>,
    /// global or stream.
    #[arg(long)]
    negatives: Option<String>,
    #[arg(long)]
    init_noise: Option<f64>,
    /// Also write model.json.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    x: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    /// `1:N` sampled stream negatives per positive, or `full`.
    #[arg(long)]
    policy: Option<String>,
    /// Comma-separated; `random` plus variant names.
    #[arg(long)]
    models: Option<String>,
    /// Score original posts as test positives too.
    #[arg(long)]
    include_originals: bool,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    bins: Option<usize>,
    /// paper (1.9/3.1/5.3 per day) or auto (observed quartiles).
    #[arg(long)]
    quartiles: Option<String>,
    #[arg(long)]
    top_topics: Option<usize>,
    #[arg(long)]
    table_words: Option<usize>,
}

const KNOWN_KEYS: &[&str] = &[
    "out",
    "seed",
    "threads",
    "ingest.data",
    "ingest.window_days",
    "ingest.min_count",
    "ingest.min_item_adopters",
    "topics.k",
    "topics.alpha",
    "topics.beta",
    "topics.iters",
    "topics.top_words",
    "visibility.mu",
    "visibility.lambda",
    "visibility.backlog_mode",
    "train.k",
    "train.sigma_u2",
    "train.sigma_theta2",
    "train.sigma_eta2",
    "train.lr",
    "train.lr_discount",
    "train.epochs",
    "train.variant",
    "train.negatives",
    "train.init_noise",
    "evaluate.x",
    "evaluate.folds",
    "evaluate.policy",
    "evaluate.models",
    "evaluate.include_originals",
    "analyze.bins",
    "analyze.quartiles",
    "analyze.top_topics",
    "analyze.table_words",
    "simulate.preset",
];

/// Merges flags, file values and defaults, remembering what was chosen.
struct Settings {
    file: BTreeMap<String, Value>,
    resolved: BTreeMap<String, Value>,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self> {
        let mut file = BTreeMap::new();
        if let Some(p) = path {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let v: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
            let Value::Object(map) = v else {
                return Err(Error::Format(format!("{}: expected a JSON object", p.display())));
            };
            for (k, v) in map {
                if !KNOWN_KEYS.contains(&k.as_str()) {
                    return Err(Error::InvalidParam(format!(
                        "{}: unknown config key `{k}`",
                        p.display()
                    )));
                }
                file.insert(k, v);
            }
        }
        Ok(Settings {
            file,
            resolved: BTreeMap::new(),
        })
    }

    fn get<T: Serialize + DeserializeOwned>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        let value = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(v) => serde_json::from_value(v.clone())
                    .map_err(|e| Error::InvalidParam(format!("config key `{key}`: {e}")))?,
                None => default,
            },
        };
        self.resolved.insert(key.to_string(), serde_json::to_value(&value)?);
        Ok(value)
    }

    fn opt<T: Serialize + DeserializeOwned>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        let flag = flag.map(Some);
        self.get(key, flag, None)
    }

    fn flag(&mut self, key: &str, set: bool) -> Result<bool> {
        self.get(key, set.then_some(true), false)
    }
}

/// Resolved global settings.
struct Run {
    command: &'static str,
    out: PathBuf,
    seed: u64,
    threads: usize,
    settings: Settings,
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
}

impl Run {
    fn new(command: &'static str, common: &Common) -> Result<Self> {
        let mut settings = Settings::load(common.config.as_deref())?;
        let out: PathBuf = settings.get("out", common.out.clone(), PathBuf::from("out"))?;
        let seed = settings.get("seed", common.seed, 0)?;
        let threads = settings.get("threads", common.threads, 1)?;
        if threads == 0 {
            return Err(Error::InvalidParam("--threads must be at least 1".into()));
        }
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Run {
            command,
            out,
            seed,
            threads,
            settings,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.push(path.to_path_buf());
        Ok(bytes)
    }

    fn input_text(&mut self, path: &Path) -> Result<String> {
        String::from_utf8(self.input(path)?)
            .map_err(|_| Error::Format(format!("{}: not valid UTF-8", path.display())))
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn path_or(&self, given: &Option<PathBuf>, name: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.out.join(name))
    }

    fn load_corpus(&mut self, inputs: &Inputs) -> Result<Corpus> {
        let p = self.path_or(&inputs.corpus, CORPUS_FILE);
        let text = self.input_text(&p)?;
        Corpus::from_json(&text)
    }

    fn load_topics(&mut self, inputs: &Inputs) -> Result<TopicTables> {
        let p = self.path_or(&inputs.topics_file, TOPICS_FILE);
        let bytes = self.input(&p)?;
        TopicTables::from_bundle(Bundle::from_bytes(&bytes)?)
    }

    fn load_visibility(&mut self, inputs: &Inputs, corpus: &Corpus) -> Result<VisibilityTable> {
        let p = self.path_or(&inputs.visibility_file, VISIBILITY_FILE);
        let text = self.input_text(&p)?;
        VisibilityTable::from_csv(&text, corpus)
    }

    /// Writes the manifest; digests are taken from the files as read.
    fn finish(mut self) -> Result<()> {
        let mut digests = BTreeMap::new();
        for p in &self.inputs {
            let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
            digests.insert(p.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        }
        let manifest = serde_json::json!({
            "tool": "vistopic",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config": self.settings.resolved,
            "inputs": digests,
            "outputs": self.outputs,
        });
        let name = format!("{}.manifest.json", self.command);
        let body = serde_json::to_string_pretty(&manifest)? + "\n";
        self.write(&name, body.as_bytes())
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| Error::InvalidParam(format!("cannot start {} threads: {e}", self.threads)))
    }
}

fn ingest_stage(run: &mut Run, args: &IngestArgs) -> Result<Corpus> {
    let s = &mut run.settings;
    let data: PathBuf = s.get("ingest.data", args.data.clone(), run.out.clone())?;
    let options = IngestOptions {
        window_days: s.opt("ingest.window_days", args.window_days)?,
        min_count: s.get("ingest.min_count", args.min_count, IngestOptions::default().min_count)?,
        min_item_adopters: s.get(
            "ingest.min_item_adopters",
            args.min_item_adopters,
            IngestOptions::default().min_item_adopters,
        )?,
    };
    let paths = DatasetPaths::in_dir(&data);
    for p in [&paths.edges, &paths.adoptions, &paths.items] {
        run.inputs.push(p.clone());
    }
    let (corpus, report) = corpus::ingest(&paths, options)?;
    eprintln!(
        "ingested {} users, {} items, {} adoptions, vocabulary {}",
        corpus.num_users(),
        corpus.num_items(),
        corpus.adoptions().len(),
        corpus.vocab_size()
    );
    run.write(CORPUS_FILE, corpus.to_json()?.as_bytes())?;
    run.write(INGEST_REPORT_FILE, (serde_json::to_string_pretty(&report)? + "\n").as_bytes())?;
    Ok(corpus)
}

fn topics_stage(run: &mut Run, corpus: &Corpus, args: &TopicArgs) -> Result<TopicTables> {
    let s = &mut run.settings;
    let defaults = LdaConfig::default();
    let config = LdaConfig {
        num_topics: s.get("topics.k", args.k, defaults.num_topics)?,
        alpha: s.opt("topics.alpha", args.alpha)?,
        beta: s.get("topics.beta", args.beta, defaults.beta)?,
        iters: s.get("topics.iters", args.iters, defaults.iters)?,
        seed: rng_for(run.seed, "topics"),
    };
    let top_words = s.get("topics.top_words", args.top_words, 10)?;
    let state = topic_model::fit_lda(corpus, &config)?;
    eprintln!("fitted {} topics in {} sweeps", config.num_topics, config.iters);
    run.write(TOPICS_FILE, &state.to_bundle().to_bytes())?;
    let tables = TopicTables {
        phi: state.phi,
        beta: state.beta,
    };
    run.write(
        TOPICS_TEXT_FILE,
        topic_model::format_topics(&tables, corpus.vocab(), top_words).as_bytes(),
    )?;
    Ok(tables)
}

fn vis_params(s: &mut Settings, args: &VisArgs) -> Result<(RateModel, SurfingParams)> {
    let surf_default = SurfingParams::default();
    let surf = SurfingParams {
        mu: s.get("visibility.mu", args.mu, surf_default.mu)?,
        lambda: s.get("visibility.lambda", args.lambda, surf_default.lambda)?,
        ..surf_default
    };
    let mode: String = s.get(
        "visibility.backlog_mode",
        args.backlog_mode.clone(),
        "visits-per-post".to_string(),
    )?;
    let rates = RateModel {
        mode: mode.parse::<BacklogMode>()?,
        ..RateModel::default()
    };
    Ok((rates, surf))
}

fn visibility_stage(run: &mut Run, corpus: &Corpus, args: &VisArgs) -> Result<VisibilityTable> {
    let (rates, surf) = vis_params(&mut run.settings, args)?;
    let table = run.pool()?.install(|| visibility::build_table(corpus, &rates, &surf, false))?;
    run.write(VISIBILITY_FILE, table.to_csv(corpus).as_bytes())?;
    Ok(table)
}

fn hyper_params(run: &mut Run, args: &TrainArgs, num_topics: usize) -> Result<(HyperParams, Variant)> {
    let d = HyperParams::default();
    let s = &mut run.settings;
    let negatives: String = s.get("train.negatives", args.negatives.clone(), "global".to_string())?;
    let variant: String = s.get("train.variant", args.variant.clone(), "full".to_string())?;
    let hyper = HyperParams {
        num_topics,
        sigma_u2: s.get("train.sigma_u2", args.sigma_u2, d.sigma_u2)?,
        sigma_theta2: s.get("train.sigma_theta2", args.sigma_theta2, d.sigma_theta2)?,
        sigma_eta2: s.get("train.sigma_eta2", args.sigma_eta2, d.sigma_eta2)?,
        learn_rate: s.get("train.lr", args.lr, d.learn_rate)?,
        lr_discount: s.get("train.lr_discount", args.lr_discount, d.lr_discount)?,
        epochs: s.get("train.epochs", args.epochs, d.epochs)?,
        seed: rng_for(run.seed, "train"),
        negatives: negatives.parse::<NegativeSampling>()?,
        init_noise: s.get("train.init_noise", args.init_noise, d.init_noise)?,
        threads: run.threads,
    };
    hyper.validate()?;
    Ok((hyper, variant.parse()?))
}

fn train_stage(
    run: &mut Run,
    corpus: &Corpus,
    tables: &TopicTables,
    vis: &VisibilityTable,
    args: &TrainArgs,
) -> Result<ModelParams> {
    let (hyper, variant) = hyper_params(run, args, tables.phi.ncols())?;
    let model = adoption::train(corpus, &tables.phi, vis, &hyper, variant)?;
    eprintln!("trained {} for {} epochs", variant.name(), hyper.epochs);
    run.write(MODEL_FILE, &model.to_bundle().to_bytes())?;
    if args.json {
        run.write(MODEL_JSON_FILE, (serde_json::to_string_pretty(&model.to_json())? + "\n").as_bytes())?;
    }
    Ok(model)
}

fn evaluate_stage(
    run: &mut Run,
    corpus: &Corpus,
    tables: &TopicTables,
    vis: &VisibilityTable,
    train: &TrainArgs,
    args: &EvalArgs,
) -> Result<()> {
    let (hyper, _) = hyper_params(run, train, tables.phi.ncols())?;
    let d = EvalConfig::default();
    let s = &mut run.settings;
    let policy: String = s.get("evaluate.policy", args.policy.clone(), d.policy.to_string())?;
    let all: Vec<&str> = d.models.iter().map(|m| m.name()).collect();
    let models: String = s.get("evaluate.models", args.models.clone(), all.join(","))?;
    let config = EvalConfig {
        x: s.get("evaluate.x", args.x, d.x)?,
        num_folds: s.get("evaluate.folds", args.folds, d.num_folds)?,
        seed: rng_for(run.seed, "evaluate"),
        policy: policy.parse::<CandidatePolicy>()?,
        include_originals: s.flag("evaluate.include_originals", args.include_originals)?,
        models: models
            .split(',')
            .map(|m| m.trim().parse::<ModelSpec>())
            .collect::<Result<_>>()?,
    };
    let report = run
        .pool()?
        .install(|| evaluation::run_eval(corpus, &tables.phi, vis, &hyper, &config))?;
    for m in &report.models {
        eprintln!(
            "{:<15} P@{x} {:.4}  R@{x} {:.4}  nDCG@{x} {:.4}",
            m.model,
            m.aggregate.precision,
            m.aggregate.recall,
            m.aggregate.ndcg,
            x = report.x
        );
    }
    run.write(EVAL_JSON_FILE, report.to_json()?.as_bytes())?;
    run.write(EVAL_CSV_FILE, report.to_csv().as_bytes())?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn analyze_stage(
    run: &mut Run,
    corpus: &Corpus,
    tables: &TopicTables,
    vis: &VisibilityTable,
    model: Option<ModelParams>,
    train: &TrainArgs,
    args: &AnalyzeArgs,
) -> Result<()> {
    let model = match model {
        Some(m) => m,
        None => {
            // originals are seen by their author for sure
            let (hyper, _) = hyper_params(run, train, tables.phi.ncols())?;
            let vis = vis.clone().with_override(true);
            adoption::train(corpus, &tables.phi, &vis, &hyper, Variant::Full)?
        }
    };
    let s = &mut run.settings;
    let bins = s.get("analyze.bins", args.bins, 20)?;
    let quartiles: String = s.get("analyze.quartiles", args.quartiles.clone(), "paper".to_string())?;
    let top_topics = s.get("analyze.top_topics", args.top_topics, 10)?;
    let table_words = s.get("analyze.table_words", args.table_words, 10)?;
    let mode: QuartileMode = quartiles.parse()?;

    let stats = run
        .pool()?
        .install(|| netinfo::compute_stats(corpus, &model.user, mode))?;
    run.write(NETSTATS_FILE, netinfo::stats_csv(corpus, &stats).as_bytes())?;

    let mut correlations = Vec::new();
    let mut notes = BTreeMap::new();
    for (name, x, y) in [
        ("ftd_vs_nd", StatVar::Nd, StatVar::Ftd),
        ("ftd_vs_s", StatVar::S, StatVar::Ftd),
        ("nd_vs_s", StatVar::S, StatVar::Nd),
    ] {
        let curves = netinfo::binned_curves(&stats, x, y, true, bins);
        for g in 0..4 {
            let c = netinfo::curve_correlation(&curves, g);
            correlations.push(serde_json::json!({
                "curve": name,
                "effort_class": g,
                "r": c.map(|c| c.r),
                "p": c.map(|c| c.p),
                "bins": c.map(|c| c.n),
            }));
        }
        notes.insert(
            name,
            serde_json::json!({ "undefined": curves.undefined, "reduced_bins": curves.reduced_bins }),
        );
        run.write(&format!("curves_{name}.csv"), curves.to_csv().as_bytes())?;
    }
    run.write(
        "nd_histogram.csv",
        netinfo::histogram_csv(&netinfo::nd_histogram(&stats, bins)).as_bytes(),
    )?;
    match netinfo::group_topic_table(&model.user, &tables.beta, &stats, top_topics, table_words) {
        Ok((low, high)) => {
            run.write("topic_table_low_nd.txt", netinfo::format_group_topics(&low, corpus.vocab()).as_bytes())?;
            run.write("topic_table_high_nd.txt", netinfo::format_group_topics(&high, corpus.vocab()).as_bytes())?;
        }
        Err(Error::EmptyDataset(msg)) => eprintln!("skipping topic tables: {msg}"),
        Err(e) => return Err(e),
    }
    let summary = serde_json::json!({
        "users": stats.len(),
        "nd_defined": stats.iter().filter(|s| s.nd.is_some()).count(),
        "zero_vector_friends": stats.iter().map(|s| s.zero_vector_friends).sum::<usize>(),
        "correlations": correlations,
        "curves": notes,
    });
    run.write(ANALYSIS_FILE, (serde_json::to_string_pretty(&summary)? + "\n").as_bytes())?;
    Ok(())
}

/// Independent seed per stage so adding a stage does not shift the others.
fn rng_for(seed: u64, stage: &str) -> u64 {
    let tag = stage.bytes().fold(0u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
    crate::rng::derive(seed, &[tag])
}

fn run_command(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest { common, ingest } => {
            let mut run = Run::new("ingest", &common)?;
            ingest_stage(&mut run, &ingest)?;
            run.finish()
        }
        Command::Topics { common, inputs, topics } => {
            let mut run = Run::new("topics", &common)?;
            let corpus = run.load_corpus(&inputs)?;
            topics_stage(&mut run, &corpus, &topics)?;
            run.finish()
        }
        Command::Visibility { common, inputs, vis } => {
            let mut run = Run::new("visibility", &common)?;
            let corpus = run.load_corpus(&inputs)?;
            visibility_stage(&mut run, &corpus, &vis)?;
            run.finish()
        }
        Command::Train {
            common,
            inputs,
            k,
            vis,
            train,
        } => {
            let mut run = Run::new("train", &common)?;
            let corpus = run.load_corpus(&inputs)?;
            let tables = run.load_topics(&inputs)?;
            if let Some(k) = run.settings.opt("train.k", k)? {
                if k != tables.phi.ncols() {
                    return Err(Error::DimensionMismatch(format!(
                        "--k {k} but the topics file has K={}",
                        tables.phi.ncols()
                    )));
                }
            }
            let table = match &inputs.visibility_file {
                Some(_) => run.load_visibility(&inputs, &corpus)?,
                None => {
                    let (rates, surf) = vis_params(&mut run.settings, &vis)?;
                    visibility::build_table(&corpus, &rates, &surf, false)?
                }
            };
            train_stage(&mut run, &corpus, &tables, &table, &train)?;
            run.finish()
        }
        Command::Evaluate {
            common,
            inputs,
            train,
            eval,
        } => {
            let mut run = Run::new("evaluate", &common)?;
            let corpus = run.load_corpus(&inputs)?;
            let tables = run.load_topics(&inputs)?;
            let table = run.load_visibility(&inputs, &corpus)?;
            evaluate_stage(&mut run, &corpus, &tables, &table, &train, &eval)?;
            run.finish()
        }
        Command::Analyze {
            common,
            inputs,
            vis,
            train,
            analyze,
        } => {
            let mut run = Run::new("analyze", &common)?;
            let corpus = run.load_corpus(&inputs)?;
            let tables = run.load_topics(&inputs)?;
            let table = match &inputs.visibility_file {
                Some(_) => run.load_visibility(&inputs, &corpus)?,
                None => {
                    let (rates, surf) = vis_params(&mut run.settings, &vis)?;
                    visibility::build_table(&corpus, &rates, &surf, false)?
                }
            };
            let model = match &inputs.model_file {
                Some(p) => {
                    let bytes = run.input(p)?;
                    Some(ModelParams::from_bundle(Bundle::from_bytes(&bytes)?)?)
                }
                None => None,
            };
            analyze_stage(&mut run, &corpus, &tables, &table, model, &train, &analyze)?;
            run.finish()
        }
        Command::Simulate { common, preset } => {
            let mut run = Run::new("simulate", &common)?;
            let preset: String = run.settings.get("simulate.preset", preset, "desk".to_string())?;
            let config = SimConfig::preset(preset.parse::<Preset>()?, run.seed);
            let sim = simulator::simulate(&config)?;
            sim.write(&run.out)?;
            eprintln!(
                "simulated {} users, {} items, {} adoptions into {}",
                config.num_users,
                config.num_items,
                sim.adoptions.len(),
                run.out.display()
            );
            run.outputs.extend(
                [
                    corpus::EDGES_FILE,
                    corpus::ADOPTIONS_FILE,
                    corpus::ITEMS_FILE,
                    simulator::GROUND_TRUTH_FILE,
                    simulator::SIM_CONFIG_FILE,
                ]
                .map(String::from),
            );
            run.finish()
        }
        Command::Pipeline {
            common,
            ingest,
            topics,
            vis,
            train,
            eval,
            analyze,
        } => {
            let mut run = Run::new("pipeline", &common)?;
            let corpus = ingest_stage(&mut run, &ingest)?;
            let tables = topics_stage(&mut run, &corpus, &topics)?;
            let table = visibility_stage(&mut run, &corpus, &vis)?;
            train_stage(&mut run, &corpus, &tables, &table, &train)?;
            evaluate_stage(&mut run, &corpus, &tables, &table, &train, &eval)?;
            analyze_stage(&mut run, &corpus, &tables, &table, None, &train, &analyze)?;
            run.finish()
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code: 0 success, 2 usage error, 1 failure.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run_command(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
