mod convert;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use bico_core::autodiff::GradCheckConfig;
use bico_core::data::{
    read_embeddings, read_manifest, split_dataset, synth_generate, write_embeddings, write_manifest, EmbeddingStore,
    Sample, Split, SplitIds, SplitMode, SynthConfig, DEFAULT_BATCH_SIZE,
};
use bico_core::schema::load_schema;
use bico_core::train::{
    concept_tree, evaluate, export_representations, synthetic_gradcheck, train_with, AdamWConfig, Checkpoint, Dataset,
    MetricsReport, TrainConfig,
};
use bico_core::{FlowFlags, Model, ModelConfig, SchemaSpec, Subtask};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "bico", version, about = "Concept-flow ideology detection over frozen embeddings")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a relevance or ideology model and report test metrics.
    Train(TrainArgs),
    /// Evaluate saved parameters on one partition.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients of a fresh model.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic manifest and embedding file.
    Synth(SynthArgs),
    /// Train once per flow iteration count and report each.
    SweepIters(SweepArgs),
    /// Write text representations and ideology anchors of one facet.
    ExportReps(ExportArgs),
    /// Convert MITweet CSV files to a manifest (and split file).
    ConvertMitweet(ConvertArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SubtaskArg {
    Relevance,
    Ideology,
}

impl From<SubtaskArg> for Subtask {
    fn from(s: SubtaskArg) -> Self {
        match s {
            SubtaskArg::Relevance => Subtask::Relevance,
            SubtaskArg::Ideology => Subtask::Ideology,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Random,
    Topic,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Part {
    Train,
    Val,
    Test,
    All,
}

#[derive(Args)]
struct DataArgs {
    /// Schema JSON; the bundled MITweet schema when omitted.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, value_enum, default_value = "random")]
    split: SplitArg,
    /// Comma-separated topics held out as the test set (topic split).
    #[arg(long, value_delimiter = ',')]
    holdout_topics: Vec<String>,
    /// JSON file with "train", "val" and "test" id lists; overrides --split.
    #[arg(long)]
    split_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    train_ratio: f64,
    #[arg(long, default_value_t = 0.1)]
    val_ratio: f64,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum)]
    subtask: SubtaskArg,
    /// Flow iterations k (default 4 for relevance, 2 for ideology).
    #[arg(long)]
    iters: Option<usize>,
    /// Contrastive temperature (default 0.5 for relevance, 0.1 for ideology).
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    disable_diffusion: bool,
    #[arg(long)]
    disable_aggregation: bool,
    #[arg(long, value_enum, default_value = "on")]
    adapter: OnOff,
}

impl ModelArgs {
    fn config(&self) -> ModelConfig {
        let mut c = ModelConfig::defaults(self.subtask.into());
        if let Some(k) = self.iters {
            c.iters = k;
        }
        if let Some(t) = self.tau {
            c.loss.tau = t;
        }
        if let Some(l) = self.lambda {
            c.loss.lambda = l;
        }
        if let Some(h) = self.hidden {
            c.hidden = h;
        }
        c.flags = FlowFlags {
            diffusion: !self.disable_diffusion,
            aggregation: !self.disable_aggregation,
        };
        c.adapter = self.adapter == OnOff::On;
        c
    }
}

#[derive(Args)]
struct OptimArgs {
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    #[arg(long, default_value_t = 2e-5)]
    lr: f64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Independent runs with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    runs: u64,
}

impl OptimArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optim: AdamWConfig {
                lr: self.lr,
                ..AdamWConfig::default()
            },
            seed,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    /// Directory for parameters and metrics.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(long, default_value_t = 1)]
    min: usize,
    #[arg(long, default_value_t = 6)]
    max: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Parameter file written by `train`.
    #[arg(long)]
    params: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    on: Part,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    facet: String,
    #[arg(long, value_enum, default_value = "test")]
    on: Part,
    /// Output embedding file; a `.json` sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, value_enum)]
    subtask: SubtaskArg,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    /// Items in the random batch.
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Texts per facet and ideology class.
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Token rows per text.
    #[arg(long, default_value_t = 4)]
    tokens: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    schema: Option<PathBuf>,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

fn classify(err: anyhow::Error) -> Failure {
    let code = match err.downcast_ref::<bico_core::Error>() {
        Some(bico_core::Error::Numeric(_)) => EXIT_NUMERIC,
        Some(bico_core::Error::Config(_)) => EXIT_USAGE,
        _ => EXIT_DATA,
    };
    Failure { code, err }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(f) = init_threads() {
        eprintln!("error: {:#}", f.err);
        return ExitCode::from(f.code);
    }
    let result = match cli.cmd {
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::SweepIters(a) => cmd_sweep(a),
        Cmd::ExportReps(a) => cmd_export(a),
        Cmd::ConvertMitweet(a) => convert::run(&a.input, &a.out, a.schema.as_deref()).map_err(classify),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("BICO_NUM_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| Failure {
        code: EXIT_USAGE,
        err: anyhow!("BICO_NUM_THREADS must be a positive integer, got {v:?}"),
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure {
            code: EXIT_USAGE,
            err: anyhow!("cannot size the thread pool: {e}"),
        })
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        err: anyhow!(msg.into()),
    }
}

fn schema_from(path: Option<&Path>) -> anyhow::Result<SchemaSpec> {
    Ok(match path {
        Some(p) => load_schema(p)?,
        None => SchemaSpec::default_mitweet(),
    })
}

/// Everything read from disk for one dataset.
struct Loaded {
    schema: SchemaSpec,
    codes: Vec<String>,
    samples: Vec<Sample>,
    store: EmbeddingStore,
    split: Split,
}

impl Loaded {
    fn read(a: &DataArgs) -> Result<Self, Failure> {
        let schema = schema_from(a.schema.as_deref()).map_err(classify)?;
        let codes = schema.facet_codes();
        let samples = read_manifest(&a.manifest, &codes).map_err(|e| classify(e.into()))?;
        let store = read_embeddings(&a.embeddings).map_err(|e| classify(e.into()))?;
        let split = match &a.split_file {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .with_context(|| format!("reading {}", p.display()))
                    .map_err(|e| Failure { code: EXIT_DATA, err: e })?;
                let ids: SplitIds = serde_json::from_str(&text)
                    .with_context(|| format!("parsing {}", p.display()))
                    .map_err(|e| Failure { code: EXIT_DATA, err: e })?;
                Split::from_ids(&samples, &ids)
            }
            None => {
                let mode = match a.split {
                    SplitArg::Random => SplitMode::Random {
                        train: a.train_ratio,
                        val: a.val_ratio,
                    },
                    SplitArg::Topic => {
                        if a.holdout_topics.is_empty() {
                            return Err(usage("--split topic needs --holdout-topics"));
                        }
                        SplitMode::Topic {
                            holdout: a.holdout_topics.clone(),
                            val: a.val_ratio,
                        }
                    }
                };
                split_dataset(&samples, &mode, a.split_seed)
            }
        }
        .map_err(|e| classify(e.into()))?;
        Ok(Self {
            schema,
            codes,
            samples,
            store,
            split,
        })
    }

    fn part(&self, p: Part) -> Vec<Sample> {
        let idx: Vec<usize> = match p {
            Part::Train => self.split.train.clone(),
            Part::Val => self.split.val.clone(),
            Part::Test => self.split.test.clone(),
            Part::All => (0..self.samples.len()).collect(),
        };
        idx.into_iter().map(|i| self.samples[i].clone()).collect()
    }

    fn dataset<'a>(&'a self, samples: &'a [Sample]) -> Dataset<'a> {
        Dataset {
            samples,
            codes: &self.codes,
            store: &self.store,
        }
    }
}

fn emit(value: &Value, out: Option<&Path>, file: &str) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    if let Some(dir) = out {
        write_file(&dir.join(file), text.as_bytes())?;
    }
    println!("{text}");
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(|e| Failure { code: EXIT_DATA, err: e })?;
    }
    fs::write(path, bytes)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(|e| Failure { code: EXIT_DATA, err: e })
}

#[derive(Serialize)]
struct RunResult {
    seed: u64,
    best_epoch: Option<usize>,
    final_loss: Option<f64>,
    epochs: Vec<bico_core::train::EpochLog>,
    val: Option<MetricsReport>,
    test: Option<MetricsReport>,
}

fn mean_std(xs: &[f64]) -> Value {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    json!({ "mean": mean, "std": var.sqrt() })
}

fn summarize(runs: &[RunResult]) -> Value {
    let tests: Vec<&MetricsReport> = runs.iter().filter_map(|r| r.test.as_ref()).collect();
    if tests.is_empty() {
        return Value::Null;
    }
    let pick = |f: fn(&MetricsReport) -> f64| mean_std(&tests.iter().map(|r| f(r)).collect::<Vec<_>>());
    json!({
        "micro_f1": pick(|r| r.micro_f1),
        "micro_acc": pick(|r| r.micro_acc),
        "macro_f1": pick(|r| r.macro_f1),
        "macro_acc": pick(|r| r.macro_acc),
    })
}

/// Trains `runs` models and evaluates each best checkpoint on the test part.
fn train_runs(
    loaded: &Loaded,
    config: &ModelConfig,
    optim: &OptimArgs,
    label: &str,
    mut save: impl FnMut(u64, &Model) -> Result<(), Failure>,
) -> Result<Vec<RunResult>, Failure> {
    if optim.runs == 0 {
        return Err(usage("--runs must be at least 1"));
    }
    let train = loaded.part(Part::Train);
    let val = loaded.part(Part::Val);
    let test = loaded.part(Part::Test);
    let mut out = Vec::new();
    for seed in optim.seed..optim.seed + optim.runs {
        let tree = concept_tree(&loaded.schema, &loaded.store).map_err(|e| classify(e.into()))?;
        let model = Model::new(config.clone(), tree, seed).map_err(|e| classify(e.into()))?;
        let val_ds = (!val.is_empty()).then(|| loaded.dataset(&val));
        let outcome = train_with(model, &loaded.dataset(&train), val_ds.as_ref(), &optim.config(seed), |log| {
            eprintln!(
                "[{label} seed {seed}] epoch {:>3}  loss {:.6}  val micro-F1 {}",
                log.epoch + 1,
                log.train_loss,
                log.val_micro_f1.map_or("-".into(), |v| format!("{v:.4}"))
            )
        })
        .map_err(|e| classify(e.into()))?;
        let test_report = if test.is_empty() {
            None
        } else {
            Some(evaluate(&outcome.best, &loaded.dataset(&test)).map_err(|e| classify(e.into()))?)
        };
        save(seed, &outcome.best)?;
        out.push(RunResult {
            seed,
            best_epoch: outcome.best_epoch,
            final_loss: outcome.final_loss(),
            epochs: outcome.logs,
            val: outcome.best_val,
            test: test_report,
        });
    }
    Ok(out)
}

fn save_params(out: Option<&Path>, runs: u64, seed: u64, model: &Model) -> Result<(), Failure> {
    let Some(dir) = out else {
        return Ok(());
    };
    let name = if runs == 1 {
        "params.json".to_string()
    } else {
        format!("params-seed{seed}.json")
    };
    let json = serde_json::to_vec(&Checkpoint::from_model(model)).expect("parameters serialize");
    write_file(&dir.join(name), &json)
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    let config = a.model.config();
    config.validate().map_err(|e| classify(e.into()))?;
    let loaded = Loaded::read(&a.data)?;
    let out = a.out.as_deref();
    let runs = train_runs(&loaded, &config, &a.optim, "train", |seed, m| {
        save_params(out, a.optim.runs, seed, m)
    })?;
    let report = json!({
        "subtask": config.subtask,
        "model": config,
        "train": a.optim.config(a.optim.seed),
        "sizes": split_sizes(&loaded.split),
        "runs": runs,
        "summary": summarize(&runs),
    });
    emit(&report, out, "metrics.json")
}

fn split_sizes(s: &Split) -> Value {
    json!({ "train": s.train.len(), "val": s.val.len(), "test": s.test.len() })
}

fn cmd_sweep(a: SweepArgs) -> Result<(), Failure> {
    if a.min > a.max {
        return Err(usage("--min must not exceed --max"));
    }
    let loaded = Loaded::read(&a.data)?;
    let mut points = Vec::new();
    for k in a.min..=a.max {
        let mut config = a.model.config();
        config.iters = k;
        config.validate().map_err(|e| classify(e.into()))?;
        let runs = train_runs(&loaded, &config, &a.optim, &format!("k={k}"), |_, _| Ok(()))?;
        points.push(json!({ "iters": k, "summary": summarize(&runs), "runs": runs }));
    }
    let report = json!({
        "subtask": Subtask::from(a.model.subtask),
        "train": a.optim.config(a.optim.seed),
        "sweep": points,
    });
    emit(&report, a.out.as_deref(), "sweep.json")
}

fn load_model(loaded: &Loaded, path: &Path) -> Result<Model, Failure> {
    let ckpt = Checkpoint::load(path).map_err(|e| classify(e.into()))?;
    let tree = concept_tree(&loaded.schema, &loaded.store).map_err(|e| classify(e.into()))?;
    ckpt.into_model(tree).map_err(|e| classify(e.into()))
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    let loaded = Loaded::read(&a.data)?;
    let model = load_model(&loaded, &a.params)?;
    let part = loaded.part(a.on);
    let report = evaluate(&model, &loaded.dataset(&part)).map_err(|e| classify(e.into()))?;
    let value = serde_json::to_value(&report).expect("metrics serialize");
    emit(&value, a.out.as_deref(), "eval.json")
}

fn cmd_export(a: ExportArgs) -> Result<(), Failure> {
    let loaded = Loaded::read(&a.data)?;
    let model = load_model(&loaded, &a.params)?;
    let part = loaded.part(a.on);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(|e| Failure { code: EXIT_DATA, err: e })?;
    }
    let manifest =
        export_representations(&model, &loaded.dataset(&part), &a.facet, &a.out).map_err(|e| classify(e.into()))?;
    let value = json!({
        "path": a.out,
        "facet": manifest.facet,
        "texts": manifest.texts.len(),
        "records": manifest.texts.len() + manifest.anchors.len(),
    });
    emit(&value, None, "")
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<(), Failure> {
    let schema = schema_from(a.schema.as_deref()).map_err(classify)?;
    let mut config = ModelConfig::defaults(a.subtask.into());
    if let Some(k) = a.iters {
        config.iters = k;
    }
    if let Some(h) = a.hidden {
        config.hidden = h;
    }
    let cfg = GradCheckConfig {
        step: a.h,
        tol: a.tol,
        seed: a.seed,
    };
    let report = synthetic_gradcheck(&schema, config, a.dim, a.batch, &cfg).map_err(|e| classify(e.into()))?;
    let value = json!({
        "subtask": Subtask::from(a.subtask),
        "dim": a.dim,
        "h": a.h,
        "report": report,
    });
    emit(&value, None, "")?;
    eprintln!(
        "gradcheck {}: max relative error {:.3e} ({:.3e} on resolved coordinates, {} at rounding level) over {} coordinates, tol {:e}",
        if report.passed { "PASS" } else { "FAIL" },
        report.max_rel_error,
        report.max_rel_error_resolved,
        report.within_roundoff,
        report.checked,
        a.tol
    );
    if report.passed {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_NUMERIC,
            err: anyhow!("{} coordinates exceed tolerance", report.failed),
        })
    }
}

fn cmd_synth(a: SynthArgs) -> Result<(), Failure> {
    let schema = schema_from(a.schema.as_deref()).map_err(classify)?;
    let cfg = SynthConfig {
        tokens: a.tokens,
        ..SynthConfig::new(a.n, a.dim, a.sigma, a.seed)
    };
    let data = synth_generate(&schema, &cfg).map_err(|e| classify(e.into()))?;
    fs::create_dir_all(&a.out)
        .with_context(|| format!("creating {}", a.out.display()))
        .map_err(|e| Failure { code: EXIT_DATA, err: e })?;
    let manifest = a.out.join("manifest.jsonl");
    let embeddings = a.out.join("embeddings.bin");
    write_manifest(&manifest, &data.samples).map_err(|e| classify(e.into()))?;
    write_embeddings(&embeddings, &data.store).map_err(|e| classify(e.into()))?;
    let value = json!({
        "manifest": manifest,
        "embeddings": embeddings,
        "samples": data.samples.len(),
        "records": data.store.len(),
        "dim": data.store.dim(),
    });
    emit(&value, None, "")
}
