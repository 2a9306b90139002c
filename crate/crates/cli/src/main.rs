use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{ensure, Context, Result};
use clap::{Args, Parser, Subcommand};

use hybridq_core::checkpoint::{load_checkpoint, round_to_storage, save_checkpoint};
use hybridq_core::encoder::embed_query;
use hybridq_core::features::{dataset_to_files, files_to_dataset, FeatureFile};
use hybridq_core::index::{encode_database, CodeIndex, CodebookSnapshot, LookupTable};
use hybridq_core::metrics::{bench_query_time, evaluate, format_table, Scoring};
use hybridq_core::synth::{generate, SyntheticSpec};
use hybridq_core::train::train_loop;
use hybridq_core::{EngineConfig, ParameterSet, View};

/// Hybrid-grained quantized cross-view retrieval.
#[derive(Parser)]
#[command(name = "hybridq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired dataset as two feature files.
    Synth(SynthArgs),
    /// Train a model on paired features and write a checkpoint.
    Train(TrainArgs),
    /// Encode item features into a code file.
    Encode(EncodeArgs),
    /// Rank the items of a code file for each query.
    Search(SearchArgs),
    /// Report R@N and median rank in both directions.
    Eval(EvalArgs),
    /// Measure per-query latency and storage over a duplicated database.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Engine config supplying the feature dimensions.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Generator settings (TOML); flags below override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output query feature file.
    #[arg(long)]
    queries: PathBuf,
    /// Output item feature file.
    #[arg(long)]
    items: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    items: PathBuf,
    /// Hold out the last N pairs for per-epoch validation R@1.
    #[arg(long, default_value_t = 0)]
    val_pairs: usize,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Training log; defaults to the checkpoint path with a `.log` suffix.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    items: PathBuf,
    /// Output code file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    codes: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    codes: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    items: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    codes: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    dup_factor: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 10)]
    k: usize,
}

fn load_config(path: Option<&Path>) -> Result<EngineConfig> {
    match path {
        Some(p) => EngineConfig::load(p).with_context(|| format!("config {}", p.display())),
        None => Ok(EngineConfig::default()),
    }
}

fn load_codes(path: &Path, params: &ParameterSet) -> Result<CodeIndex> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let snapshot = Arc::new(CodebookSnapshot::from_params(params));
    CodeIndex::read_from(BufReader::new(f), snapshot)
        .with_context(|| format!("reading {}", path.display()))
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let mut spec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            SyntheticSpec::from_toml_str(&text).with_context(|| format!("spec {}", p.display()))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(v) = a.pairs {
        spec.pairs = v;
    }
    if let Some(v) = a.noise {
        spec.noise = v;
    }
    if let Some(v) = a.latent_dim {
        spec.latent_dim = v;
    }
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    let data = generate(&spec, &cfg)?;
    let (q, i) = dataset_to_files(&data)?;
    q.save(&a.queries)?;
    i.save(&a.items)?;
    println!("wrote {} pairs", data.len());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let q = FeatureFile::load_view(&a.queries, View::Query)?;
    let i = FeatureFile::load_view(&a.items, View::Item)?;
    let mut data = files_to_dataset(q, i)?;
    ensure!(
        a.val_pairs < data.len(),
        "--val-pairs {} leaves no training pairs out of {}",
        a.val_pairs,
        data.len()
    );
    let val = (a.val_pairs > 0).then(|| data.split_off(a.val_pairs));
    let log_path = a.log.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log");
        p.into()
    });
    let log =
        File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let mut log = BufWriter::new(log);
    let mut out = train_loop(&cfg, &data, val.as_ref(), &mut log)?;
    log.flush()?;
    round_to_storage(&mut out.params);
    save_checkpoint(&out.params, &a.out)?;
    println!(
        "trained {} steps over {} epochs",
        out.steps,
        out.epochs.len()
    );
    Ok(())
}

fn encode(a: EncodeArgs) -> Result<()> {
    let params = load_checkpoint(&a.checkpoint)?;
    let items = FeatureFile::load_view(&a.items, View::Item)?;
    let index = encode_database(&params, &items.bags)?;
    let f = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    index.write_to(BufWriter::new(f))?;
    println!(
        "encoded {} items, {} bytes/item, {} bytes",
        index.len(),
        index.bytes_per_item(),
        index.file_size()
    );
    Ok(())
}

fn search(a: SearchArgs) -> Result<()> {
    ensure!(a.threads > 0, "--threads must be at least 1");
    let params = load_checkpoint(&a.checkpoint)?;
    let index = load_codes(&a.codes, &params)?;
    let queries = FeatureFile::load_view(&a.queries, View::Query)?;
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    writeln!(out, "query\trank\tid\tscore")?;
    for (qi, q) in queries.bags.iter().enumerate() {
        let emb = embed_query(&params, q)?;
        let table = LookupTable::from_embedding(&emb, index.snapshot())?;
        for (r, hit) in index.search(&table, a.k, a.threads)?.iter().enumerate() {
            writeln!(out, "{qi}\t{}\t{}\t{:.9}", r + 1, hit.id, hit.score)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let params = load_checkpoint(&a.checkpoint)?;
    let index = load_codes(&a.codes, &params)?;
    let q = FeatureFile::load_view(&a.queries, View::Query)?;
    let i = FeatureFile::load_view(&a.items, View::Item)?;
    let data = files_to_dataset(q, i)?;
    ensure!(
        index.len() == data.len()
            && index
                .ids()
                .iter()
                .enumerate()
                .all(|(p, &id)| id == p as u64),
        "code file must hold items 0..{} in pairing order",
        data.len()
    );
    let reports = evaluate(&params, &data, Some(&index), Scoring::Tables)?;
    print!("{}", format_table(&reports));
    for r in &reports {
        print!("{}", r.kv_lines());
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    ensure!(a.threads > 0, "--threads must be at least 1");
    ensure!(a.dup_factor > 0, "--dup-factor must be at least 1");
    let params = load_checkpoint(&a.checkpoint)?;
    let index = load_codes(&a.codes, &params)?;
    let index = if a.dup_factor > 1 {
        index.duplicated(a.dup_factor)
    } else {
        index
    };
    let queries = FeatureFile::load_view(&a.queries, View::Query)?;
    let report = bench_query_time(&params, &index, &queries.bags, a.reps, a.threads, a.k)?;
    print!("{}", report.table());
    print!("{}", report.kv_lines());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Encode(a) => encode(a),
        Command::Search(a) => search(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<io::Error>()
            .is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe)
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}");
            eprintln!(
                "hybridq: error: {}",
                msg.split_whitespace().collect::<Vec<_>>().join(" ")
            );
            ExitCode::FAILURE
        }
    }
}
