use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use stamp_core::bench::{self, SweepGrid};
use stamp_core::embedding::{load_with_cache, LoadOptions};
use stamp_core::pipeline::{self, inspect, read_jsonl, write_jsonl, Document, OutputRecord, RunConfig};
use stamp_core::{load_text_embeddings, EmbeddingStore, Gazetteers, GroupLabel, MechanismConfig, Real, RuleBasedDetector};

#[derive(Parser)]
#[command(name = "stamp", version, about = "Task-aware metric local differential privacy for text")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Privatize a JSONL corpus.
    Privatize {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a budget sweep over a corpus and write one CSV row per config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Sweep grid JSON; omitted fields take the default five-point grid.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Time grouping, sampling and decoding, and exact decode across vocabulary sizes.
    Bench(BenchArgs),
    /// Print group histograms and the pooled per-token budget of an output file.
    Inspect {
        #[arg(long = "in")]
        input: PathBuf,
        /// Emit JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Args)]
struct StoreArgs {
    /// Word vectors in text format, with or without a `|V| d` header.
    #[arg(long)]
    embeddings: PathBuf,
    /// Binary cache for the embeddings, rebuilt when the text file changes.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Fold vocabulary and lookups to lowercase.
    #[arg(long)]
    lowercase: bool,
    /// Gazetteer file as CATEGORY=PATH, one entry per line; repeatable.
    #[arg(long = "gazetteer", value_name = "CATEGORY=PATH")]
    gazetteers: Vec<String>,
    #[arg(long, value_enum, default_value = "f64")]
    precision: Precision,
}

#[derive(Args)]
struct BenchArgs {
    /// Benchmark on these embeddings instead of a random store.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Dimension of the random store.
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Vocabulary size of the random store used for the stage timings.
    #[arg(long, default_value_t = 10_000)]
    vocab: usize,
    /// Token counts to time.
    #[arg(long, value_delimiter = ',', default_value = "1000,2000,4000")]
    tokens: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "normalized_polar,isotropic_laplace")]
    mechanisms: Vec<String>,
    /// Budget passed to every mechanism call.
    #[arg(long, default_value_t = 100.0)]
    eps: f64,
    /// Stage timing CSV.
    #[arg(long)]
    out: PathBuf,
    /// Exact-decode scaling CSV; skipped when absent.
    #[arg(long)]
    decode_out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1000,10000,100000")]
    decode_vocab: Vec<usize>,
    #[arg(long, default_value_t = 10_000)]
    queries: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn load_store<T: Real>(args: &StoreArgs) -> Result<EmbeddingStore<T>> {
    let opts = LoadOptions {
        lowercase: args.lowercase,
        ..LoadOptions::default()
    };
    let store = match &args.cache {
        Some(cache) => load_with_cache(&args.embeddings, cache, opts)?,
        None => load_text_embeddings(&args.embeddings, opts)?,
    };
    Ok(store)
}

fn detector(specs: &[String]) -> Result<RuleBasedDetector> {
    let mut g = Gazetteers::new();
    for spec in specs {
        let Some((category, path)) = spec.split_once('=') else {
            bail!("gazetteer must be CATEGORY=PATH, got {spec:?}");
        };
        g.load_file(category, path)
            .with_context(|| format!("loading gazetteer {path}"))?;
    }
    Ok(RuleBasedDetector::new(g))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn privatize<T: Real>(cfg: &RunConfig, store_args: &StoreArgs, input: &Path, out: &Path) -> Result<()> {
    let store = load_store::<T>(store_args)?;
    let oracle = detector(&store_args.gazetteers)?;
    let docs: Vec<Document> = read_jsonl(input)?;
    let contexts = pipeline::privatize_corpus(&docs, &store, &oracle, cfg)?;
    write_jsonl(contexts.iter().map(OutputRecord::from), create(out)?)?;
    let summary = inspect(&contexts.iter().map(OutputRecord::from).collect::<Vec<_>>());
    eprintln!(
        "privatized {} documents, {} tokens, mean eps {:.3}",
        summary.documents, summary.tokens, summary.mean_eps
    );
    Ok(())
}

fn sweep<T: Real>(cfg: &RunConfig, grid: &SweepGrid, store_args: &StoreArgs, input: &Path, out: &Path) -> Result<()> {
    let store = load_store::<T>(store_args)?;
    let oracle = detector(&store_args.gazetteers)?;
    let docs: Vec<Document> = read_jsonl(input)?;
    let rows = bench::sweep_grid(cfg, grid, &docs, &store, &oracle)?;
    bench::write_csv(&rows, create(out)?)?;
    eprintln!("wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}

fn run_bench(args: &BenchArgs) -> Result<()> {
    let store: EmbeddingStore<f64> = match &args.embeddings {
        Some(p) => load_text_embeddings(p, LoadOptions::default())?,
        None => bench::random_store(args.vocab, args.dim, args.seed)?,
    };
    let mut rows = Vec::new();
    for name in &args.mechanisms {
        let mechanism = match name.parse()? {
            stamp_core::MechanismKind::FullPolar => MechanismConfig::full_polar(1.0, 1.0),
            stamp_core::MechanismKind::NormalizedPolar => MechanismConfig::normalized_polar(),
            stamp_core::MechanismKind::IsotropicLaplace => MechanismConfig::isotropic_laplace(),
        };
        for &n in &args.tokens {
            rows.extend(bench::bench_pipeline(&store, n, &mechanism, args.eps, args.repeats, args.seed)?);
        }
    }
    bench::write_csv(&rows, create(&args.out)?)?;
    if let Some(path) = &args.decode_out {
        let rows = bench::bench_decode::<f64>(&args.decode_vocab, args.dim, args.queries, args.repeats, args.seed)?;
        bench::write_csv(&rows, create(path)?)?;
    }
    Ok(())
}

fn run_inspect(input: &Path, json: bool) -> Result<()> {
    let records: Vec<OutputRecord> = read_jsonl(input)?;
    let s = inspect(&records);
    let mut out = io::stdout().lock();
    if json {
        serde_json_line(&mut out, &s)?;
        return Ok(());
    }
    writeln!(out, "documents  {}", s.documents)?;
    writeln!(out, "tokens     {}", s.tokens)?;
    for g in GroupLabel::ALL {
        let n = s.group_counts[g.index()];
        let share = if s.tokens == 0 { 0.0 } else { n as f64 / s.tokens as f64 };
        writeln!(out, "group {}    {n:>8}  {:>6.2}%", g.value(), 100.0 * share)?;
    }
    writeln!(out, "masked     {}", s.masked)?;
    writeln!(out, "unprotected {}", s.unprotected)?;
    writeln!(out, "mean eps   {:.4}", s.mean_eps)?;
    Ok(())
}

fn serde_json_line<W: Write, S: serde::Serialize>(out: &mut W, value: &S) -> Result<()> {
    write_jsonl([value], out)?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Privatize { config, store, input, out } => {
            let cfg = RunConfig::load(&config).with_context(|| format!("reading {}", config.display()))?;
            match store.precision {
                Precision::F32 => privatize::<f32>(&cfg, &store, &input, &out),
                Precision::F64 => privatize::<f64>(&cfg, &store, &input, &out),
            }
        }
        Command::Sweep { config, grid, out, store, input } => {
            let cfg = RunConfig::load(&config).with_context(|| format!("reading {}", config.display()))?;
            let grid: SweepGrid = match grid {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => SweepGrid::default(),
            };
            match store.precision {
                Precision::F32 => sweep::<f32>(&cfg, &grid, &store, &input, &out),
                Precision::F64 => sweep::<f64>(&cfg, &grid, &store, &input, &out),
            }
        }
        Command::Bench(args) => run_bench(&args),
        Command::Inspect { input, json } => run_inspect(&input, json),
    }
}
