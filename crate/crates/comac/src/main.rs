use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use comac::checkpoint::{load_checkpoint, save_checkpoint};
use comac::config::{load_config, parse_strategy};
use comac::corpus_io::{load_corpus, save_corpus};
use comac::embfile::{export_embeddings, import_embeddings};
use comac::idf_io::{load_idf, save_idf};
use comac::pipeline::{ground_corpus, score, thread_pool, train_model, Embeddings, DEFAULT_DIM};
use comac::report::{read_responses, text_report, GroundingRecord};
use comac::sweep::{run_sweep, write_csv, SweepSpec};
use comac::synthetic::{generate, SyntheticSpec};
use comac::{bench, Error, Result};
use comac_core::corpus::DialogueRound;
use comac_core::embedding::{hash_embed, EmbeddingSource, EmbeddingStore, HashEmbedder};
use comac_core::objective::TrainConfig;
use comac_core::saliency::build_idf;

#[derive(Parser)]
#[command(
    name = "comac",
    version,
    about = "Persona and knowledge grounding with sparse late-interaction similarity"
)]
struct Cli {
    /// Worker threads (default: COMAC_THREADS, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the IDF table of a corpus.
    BuildIdf {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write built-in hash embeddings for every entry of a corpus.
    Embed {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DIM)]
        dim: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate an embedding file, optionally against a corpus.
    ImportEmbeddings {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        emb: EmbeddingArgs,
        /// IDF table (default: built from the training corpus).
        #[arg(long)]
        idf: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write one grounding record per round as JSON lines.
    Ground {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a model on a labeled corpus.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// JSON lines of {"candidate", "reference"} for text metrics.
        #[arg(long)]
        responses: Option<PathBuf>,
        /// Add a generation timestamp to the report.
        #[arg(long)]
        stamp: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate over a grid of loss weights and keep ratios.
    Sweep {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        eval: PathBuf,
        #[command(flatten)]
        emb: EmbeddingArgs,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long = "alpha-grid", value_delimiter = ',')]
        alpha_grid: Vec<f64>,
        #[arg(long = "beta-grid", value_delimiter = ',')]
        beta_grid: Vec<f64>,
        #[arg(long = "gamma-grid", value_delimiter = ',')]
        gamma_grid: Vec<f64>,
        /// Explicit `alpha,beta,gamma` cell; repeatable, replaces the axis grids.
        #[arg(long)]
        cell: Vec<String>,
        #[arg(long = "p_sr-grid", visible_alias = "p-sr-grid", value_delimiter = ',')]
        p_sr_grid: Vec<f64>,
        /// Require alpha + beta + gamma = 10 in every cell.
        #[arg(long = "sum-to-ten")]
        sum_to_ten: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic labeled corpus.
    GenSynthetic {
        #[arg(long, default_value_t = 500)]
        rounds: usize,
        /// Extra rounds drawn from the same stream and written to --eval-out.
        #[arg(long = "eval-rounds", default_value_t = 0)]
        eval_rounds: usize,
        #[arg(long, default_value_t = 5)]
        personas: usize,
        #[arg(long, default_value_t = 10)]
        knowledges: usize,
        #[arg(long = "positive-rate", default_value_t = 0.13)]
        positive_rate: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "eval-out")]
        eval_out: Option<PathBuf>,
    },
    /// Time grounding inference with and without token sampling.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
}

#[derive(Args)]
struct EmbeddingArgs {
    /// Embedding file (default: built-in hash embeddings).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Width of the built-in hash embeddings.
    #[arg(long, default_value_t = DEFAULT_DIM)]
    dim: usize,
}

#[derive(Args)]
struct ConfigArgs {
    /// key = value file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long = "w_star", visible_alias = "w-star")]
    w_star: Option<f64>,
    #[arg(long = "p_star", visible_alias = "p-star")]
    p_star: Option<f64>,
    #[arg(long = "p_sr", visible_alias = "p-sr")]
    p_sr: Option<f64>,
    #[arg(long)]
    d0: Option<usize>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long = "learning_rate", visible_alias = "learning-rate")]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "normalize_tokens", visible_alias = "normalize-tokens")]
    normalize_tokens: Option<bool>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p)?,
            None => TrainConfig::default(),
        };
        macro_rules! apply {
            ($($f:ident),*) => {$(
                if let Some(v) = self.$f {
                    cfg.$f = v;
                }
            )*};
        }
        apply!(
            alpha,
            beta,
            gamma,
            w_star,
            p_star,
            p_sr,
            learning_rate,
            epochs,
            seed,
            normalize_tokens
        );
        if let Some(d0) = self.d0 {
            cfg.d0 = Some(d0);
        }
        if let Some(s) = &self.strategy {
            cfg.strategy = parse_strategy(s)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn embeddings(path: Option<&Path>, dim: usize, check_dim: bool) -> Result<Embeddings> {
    match path {
        Some(p) => Ok(Embeddings::Store(import_embeddings(p, check_dim.then_some(dim))?)),
        None => Ok(Embeddings::Hash(HashEmbedder::new(dim)?)),
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io(Path::new("<stdout>"), e)),
    }
}

fn check_entries(store: &EmbeddingStore, corpus: &[DialogueRound]) -> Result<()> {
    for round in corpus {
        for entry in round.entries() {
            if store.get(&entry.id).is_none() {
                return Err(Error::Format(format!("no embeddings for entry {}", entry.id)));
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let pool = thread_pool(cli.threads)?;
    match cli.command {
        Command::BuildIdf { corpus, out } => {
            let corpus = load_corpus(&corpus)?;
            save_idf(&out, &build_idf(&corpus)?)
        }
        Command::Embed { corpus, dim, out } => {
            let corpus = load_corpus(&corpus)?;
            let mut store = EmbeddingStore::new(dim);
            for round in &corpus {
                for entry in round.entries() {
                    store.insert(hash_embed(entry, dim)?)?;
                }
            }
            export_embeddings(&out, &store)
        }
        Command::ImportEmbeddings { input, corpus, dim } => {
            let store = import_embeddings(&input, dim)?;
            if let Some(c) = corpus {
                check_entries(&store, &load_corpus(&c)?)?;
            }
            let tokens: usize = store.iter().map(|m| m.len()).sum();
            println!(
                "{}",
                serde_json::json!({"d": store.dim(), "entries": store.len(), "tokens": tokens})
            );
            Ok(())
        }
        Command::Train {
            corpus,
            emb,
            idf,
            cfg,
            out,
        } => {
            let cfg = cfg.resolve()?;
            let corpus = load_corpus(&corpus)?;
            let source = embeddings(emb.embeddings.as_deref(), emb.dim, false)?;
            let idf = idf.as_deref().map(load_idf).transpose()?;
            let ck = train_model(&corpus, &source, idf, &cfg, |s| {
                eprintln!(
                    "epoch {} mean_loss {:.6} dropped_pg {}",
                    s.epoch, s.mean_loss, s.dropped_pg
                )
            })?;
            save_checkpoint(&out, &ck)
        }
        Command::Ground {
            model,
            corpus,
            embeddings: emb,
            out,
        } => {
            let ck = load_checkpoint(&model)?;
            let corpus = load_corpus(&corpus)?;
            let source = embeddings(emb.as_deref(), ck.state.input_dim(), true)?;
            let results = ground_corpus(&ck, &corpus, &source, &pool)?;
            let mut text = String::new();
            for (round, res) in corpus.iter().zip(&results) {
                text.push_str(&GroundingRecord::new(round, res).to_json_line());
                text.push('\n');
            }
            write_output(out.as_deref(), &text)
        }
        Command::Eval {
            model,
            corpus,
            embeddings: emb,
            responses,
            stamp,
            out,
        } => {
            let ck = load_checkpoint(&model)?;
            let corpus = load_corpus(&corpus)?;
            let source = embeddings(emb.as_deref(), ck.state.input_dim(), true)?;
            let text = match responses {
                Some(p) => {
                    let f = File::open(&p).map_err(|e| Error::io(&p, e))?;
                    text_report(&read_responses(BufReader::new(f))?)
                }
                None => None,
            };
            let results = ground_corpus(&ck, &corpus, &source, &pool)?;
            let mut report = score(&corpus, &results, text)?;
            if stamp {
                report.generated_at = Some(
                    SystemTime::now()
                        .duration_since(UNIX_EPOCH)
                        .map(|d| d.as_secs())
                        .unwrap_or(0),
                );
            }
            write_output(out.as_deref(), &report.to_json())
        }
        Command::Sweep {
            train,
            eval,
            emb,
            cfg,
            alpha_grid,
            beta_grid,
            gamma_grid,
            cell,
            p_sr_grid,
            sum_to_ten,
            out,
        } => {
            let base = cfg.resolve()?;
            let or_base = |v: Vec<f64>, x: f64| if v.is_empty() { vec![x] } else { v };
            let p_sr = or_base(p_sr_grid, base.p_sr);
            let spec = if cell.is_empty() {
                SweepSpec::from_axes(
                    &or_base(alpha_grid, base.alpha),
                    &or_base(beta_grid, base.beta),
                    &or_base(gamma_grid, base.gamma),
                    p_sr,
                    sum_to_ten,
                )
            } else {
                let cells = cell.iter().map(|c| parse_cell(c)).collect::<Result<_>>()?;
                SweepSpec {
                    cells,
                    p_sr,
                    sum_to_ten,
                }
            };
            spec.validate()?;
            let train = load_corpus(&train)?;
            let eval = load_corpus(&eval)?;
            let source = embeddings(emb.embeddings.as_deref(), emb.dim, false)?;
            let rows = run_sweep(&spec, &base, &train, &eval, &source, None, &pool)?;
            let mut buf = Vec::new();
            write_csv(&mut buf, &rows)?;
            write_output(out.as_deref(), &String::from_utf8_lossy(&buf))
        }
        Command::GenSynthetic {
            rounds,
            eval_rounds,
            personas,
            knowledges,
            positive_rate,
            seed,
            out,
            eval_out,
        } => {
            let spec = SyntheticSpec {
                rounds: rounds + eval_rounds,
                n_personas: personas,
                n_knowledges: knowledges,
                positive_rate,
                seed,
            };
            if eval_rounds > 0 && eval_out.is_none() {
                return Err(Error::Usage("--eval-rounds needs --eval-out".into()));
            }
            let all = generate(&spec)?;
            let (train, eval) = all.split_at(rounds);
            save_corpus(&out, train)?;
            if let Some(p) = eval_out {
                save_corpus(&p, eval)?;
            }
            Ok(())
        }
        Command::Bench {
            model,
            corpus,
            embeddings: emb,
            repeats,
        } => {
            let ck = load_checkpoint(&model)?;
            let corpus = load_corpus(&corpus)?;
            let source = embeddings(emb.as_deref(), ck.state.input_dim(), true)?;
            let report = bench::run_bench(&ck, &corpus, &source, repeats, &pool)?;
            let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
    }
}

fn parse_cell(s: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || Error::Usage(format!("--cell expects alpha,beta,gamma, got {s:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| bad())?;
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
