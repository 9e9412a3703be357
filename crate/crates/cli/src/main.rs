use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fgnn::config::RunConfig;
use fgnn::eval::{
    evaluate, parse_ks, session_correlation, FgnnRecommender, ItemKnn, Pop, Recommender, SPop,
    DEFAULT_MAX_PAIRS, ITEMKNN_LAMBDA,
};
use fgnn::graphs::GlobalGraph;
use fgnn::ingest::{
    parse_clicks, preprocess, read_dataset, write_dataset, ClickFormat, DatasetFiles,
    PreprocessOptions,
};
use fgnn::train::{
    append_metrics, fit, init_params, load_checkpoint, save_checkpoint, AdamState, Checkpoint,
};

#[derive(Parser)]
#[command(
    name = "fgnn",
    version,
    about = "Session-based recommendation with graph attention over item graphs"
)]
struct Cli {
    /// Run seed. Overrides the SEED environment variable and config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a click log, filter, split and write a dataset directory.
    Preprocess(PreprocessArgs),
    /// Build the global item graph from the training sessions.
    BuildGraph {
        /// Dataset directory or a train_sessions.txt file.
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write checkpoints.
    Train(TrainArgs),
    /// Rank test examples and report R@K and MRR@K.
    Evaluate(EvaluateArgs),
    /// Dataset analyses.
    Analyze {
        #[command(subcommand)]
        analysis: Analysis,
    },
    /// Run the built-in invariant checks.
    Selftest,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long, value_enum)]
    format: Format,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Keep this most recent fraction of the training sessions.
    #[arg(long, default_value_t = 1.0)]
    recency_fraction: f64,
    /// Length of the trailing test window in days (format default if unset).
    #[arg(long)]
    test_days: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Yoochoose,
    Diginetica,
    Generic,
}

impl From<Format> for ClickFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Yoochoose => ClickFormat::Yoochoose,
            Format::Diginetica => ClickFormat::Diginetica,
            Format::Generic => ClickFormat::Generic,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set epochs=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Checkpoint directory; not needed with --baseline.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long, default_value = "5,10,20")]
    k: String,
    /// Evaluate a baseline instead of a trained model.
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    /// Also write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Print the JSON report instead of the table.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Pop,
    Spop,
    Itemknn,
}

#[derive(Subcommand)]
enum Analysis {
    /// Pearson correlation between training sessions sharing an item.
    Correlation {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_PAIRS)]
        max_pairs: usize,
    },
}

/// `--seed` wins over SEED, which wins over configuration files.
fn seed_override(flag: Option<u64>) -> Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("SEED") {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| {
            fgnn::Error::Config(format!("SEED={v:?} is not an unsigned integer")).into()
        }),
        Err(_) => Ok(None),
    }
}

fn cmd_preprocess(args: PreprocessArgs) -> Result<()> {
    let format: ClickFormat = args.format.into();
    let file =
        File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let parsed = parse_clicks(BufReader::new(file), format)?;
    let opts = PreprocessOptions {
        recency_fraction: args.recency_fraction,
        test_days: args.test_days.unwrap_or(format.default_test_days()),
    };
    let data = preprocess(&parsed.clicks, parsed.skipped, &opts)?;
    write_dataset(&args.out, &data)?;
    let s = &data.stats;
    println!(
        "clicks {} train {} test {} items {} avg_len {:.2} skipped_rows {} dropped_test {}",
        s.clicks,
        s.train_sessions,
        s.test_sessions,
        s.items,
        s.avg_length,
        s.skipped_rows,
        s.dropped_test_examples
    );
    Ok(())
}

fn load_train_sessions(path: &Path) -> Result<Vec<fgnn::ingest::Session>> {
    if path.is_dir() {
        return Ok(read_dataset(path)?.train_sessions);
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let items_text = line.split('\t').next().unwrap_or("");
        let items = items_text
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| fgnn::Error::Format(format!("bad item index {t:?}")))
            })
            .collect::<std::result::Result<Vec<usize>, _>>()?;
        out.push(fgnn::ingest::Session::new(items, 0.0));
    }
    Ok(out)
}

fn cmd_build_graph(train: &Path, out: &Path) -> Result<()> {
    let sessions = load_train_sessions(train)?;
    let graph = GlobalGraph::build(&sessions);
    graph.save(out)?;
    println!("nodes {} edges {}", graph.node_count(), graph.edge_count());
    Ok(())
}

fn load_graph_for(data: &DatasetFiles, path: Option<&Path>) -> Result<GlobalGraph> {
    let graph = match path {
        Some(p) => {
            GlobalGraph::load(p).with_context(|| format!("loading graph {}", p.display()))?
        }
        None => GlobalGraph::build(&data.train_sessions),
    };
    if graph.id_space() > data.vocab_size {
        return Err(fgnn::Error::Precondition(format!(
            "graph covers {} item ids but the vocabulary has {}",
            graph.id_space(),
            data.vocab_size
        ))
        .into());
    }
    Ok(graph)
}

fn cmd_train(args: TrainArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("config {}", p.display()))?,
        None => RunConfig::default(),
    };
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| fgnn::Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.data = args.data.or(cfg.data);
    cfg.graph = args.graph.or(cfg.graph);
    cfg.out = args.out.or(cfg.out);
    cfg.validate()?;
    let (Some(data_dir), Some(out)) = (cfg.data.clone(), cfg.out.clone()) else {
        return Err(fgnn::Error::Config("train needs --data and --out".into()).into());
    };

    let data = read_dataset(&data_dir)?;
    let graph = load_graph_for(&data, cfg.graph.as_deref())?;
    fs::create_dir_all(&out)?;
    let metrics_path = out.join("metrics.csv");
    let mut ckpt = if args.resume
        && out
            .join(format!("{}.json", fgnn::train::MODEL_STEM))
            .exists()
    {
        let mut c = load_checkpoint(&out)?;
        if c.params.config() != &cfg.model || c.params.num_items() != data.vocab_size {
            bail!(fgnn::Error::Config(
                "checkpoint does not match the configuration".into()
            ));
        }
        c.train = cfg.train.clone();
        c
    } else {
        if metrics_path.exists() {
            fs::remove_file(&metrics_path)?;
        }
        let params = init_params(&cfg.model, data.vocab_size, &cfg.train)?;
        let adam = AdamState::new(&params);
        Checkpoint {
            params,
            adam,
            train: cfg.train.clone(),
            epochs_done: 0,
        }
    };
    fs::write(out.join("config.txt"), cfg.to_text())?;
    println!(
        "training {} parameters on {} examples, {} items",
        ckpt.params.num_scalars(),
        data.train.len(),
        data.vocab_size
    );
    fit(&data.train, &graph, &mut ckpt, |m, c| {
        append_metrics(&metrics_path, m)?;
        save_checkpoint(&out, c)?;
        println!(
            "epoch {} loss {:.5} lr {:e} {:.1}s",
            m.epoch, m.mean_loss, m.lr, m.wall_seconds
        );
        Ok(())
    })?;
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs, seed: Option<u64>) -> Result<()> {
    let ks = parse_ks(&args.k)?;
    let data = read_dataset(&args.data)?;
    let m = data.vocab_size;
    let report = match (args.baseline, &args.ckpt) {
        (Some(b), _) => {
            let model: Box<dyn Recommender> = match b {
                Baseline::Pop => Box::new(Pop::fit(&data.train_sessions, m)),
                Baseline::Spop => Box::new(SPop::fit(&data.train_sessions, m)),
                Baseline::Itemknn => {
                    Box::new(ItemKnn::fit(&data.train_sessions, m, ITEMKNN_LAMBDA))
                }
            };
            evaluate(model.as_ref(), &data.test, &ks)?
        }
        (None, Some(dir)) => {
            let ckpt = load_checkpoint(dir)?;
            if ckpt.params.num_items() != m {
                return Err(fgnn::Error::Precondition(format!(
                    "checkpoint scores {} items but the dataset has {m}",
                    ckpt.params.num_items()
                ))
                .into());
            }
            let graph = load_graph_for(&data, args.graph.as_deref())?;
            let mut sampling = ckpt.train.clone();
            if let Some(s) = seed {
                sampling.seed = s;
            }
            let model = FgnnRecommender {
                params: &ckpt.params,
                global: &graph,
                sampling,
            };
            evaluate(&model, &data.test, &ks)?
        }
        (None, None) => {
            return Err(fgnn::Error::Config("evaluate needs --ckpt or --baseline".into()).into());
        }
    };
    let json = report.to_json()?;
    if let Some(p) = &args.report {
        fs::write(p, &json)?;
    }
    if args.json {
        print!("{json}");
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

fn cmd_correlation(data: &Path, out: &Path, max_pairs: usize, seed: Option<u64>) -> Result<()> {
    let d = read_dataset(data)?;
    let rep = session_correlation(
        &d.train_sessions,
        d.vocab_size,
        max_pairs,
        seed.unwrap_or(0),
    )?;
    let mut value = serde_json::to_value(&rep)?;
    value["estimator"] = serde_json::Value::String(
        "estimate: raw item-count vectors over the vocabulary, pairs sharing at least one item, uniform sample above max_pairs".into(),
    );
    fs::write(out, serde_json::to_string_pretty(&value)? + "\n")?;
    println!(
        "mean pearson {:.4} over {} pairs ({} qualifying, {} skipped){}",
        rep.mean,
        rep.evaluated_pairs,
        rep.qualifying_pairs,
        rep.skipped_pairs,
        if rep.sampled {
            ", sampled estimate"
        } else {
            ""
        }
    );
    Ok(())
}

fn cmd_selftest() -> Result<()> {
    let results = fgnn::selftest::run_all();
    let mut failed = 0;
    for r in &results {
        println!(
            "{} {}: {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        bail!("{failed} of {} checks failed", results.len());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let seed = seed_override(cli.seed)?;
    match cli.command {
        Command::Preprocess(args) => cmd_preprocess(args),
        Command::BuildGraph { train, out } => cmd_build_graph(&train, &out),
        Command::Train(args) => cmd_train(args, seed),
        Command::Evaluate(args) => cmd_evaluate(args, seed),
        Command::Analyze {
            analysis:
                Analysis::Correlation {
                    data,
                    out,
                    max_pairs,
                },
        } => cmd_correlation(&data, &out, max_pairs, seed),
        Command::Selftest => cmd_selftest(),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err
        .chain()
        .find_map(|e| e.downcast_ref::<fgnn::Error>())
        .is_some_and(fgnn::Error::is_validation);
    if validation {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
