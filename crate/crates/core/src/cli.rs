//! The `qt` command line.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::corpus::{Split, TokenizedCorpus, Vocabulary};
use crate::embedder::{analogy_query, embed_sentences, export_embeddings, import_embeddings, nearest_neighbors, EmbeddingCollection};
use crate::encoder::{load_pretrained_embeddings, EncoderKind};
use crate::error::{QtError, Result};
use crate::evalharness::{
    ensemble_predict, format_log_probs, kfold_eval, parse_classification_tsv, parse_log_probs, parse_pair_tsv,
    similarity_correlation, LabeledDataset, PairDataset, PairMode, DEFAULT_L2_GRID,
};
use crate::numkern::{Mat, Rng};
use crate::objective::{ContextConfig, ObjectiveKind};
use crate::optim::AdamConfig;
use crate::trainer::{load_checkpoint, QtModel, RunOptions, TrainConfig, Trainer};

const PRETRAINED_STREAM: u64 = 2;

#[derive(Parser, Debug)]
#[command(name = "qt", version, about = "Quick-thoughts sentence representations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train f/g encoders on a sentence corpus.
    Train(TrainArgs),
    /// Embed one sentence per line with a trained checkpoint.
    Embed(EmbedArgs),
    /// Nearest neighbors of a stored sentence.
    Nn(NnArgs),
    /// Sentences closest to c + b - a.
    Analogy(AnalogyArgs),
    /// Linear-probe or similarity evaluation of sentence vectors.
    Eval(EvalArgs),
    /// Combine per-model class log-probabilities.
    Ensemble(EnsembleArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Separate validation corpus; otherwise the tail documents of --corpus are held out.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long, default_value = "gru")]
    pub encoder: EncoderKind,
    #[arg(long, default_value_t = 300)]
    pub emb_dim: usize,
    #[arg(long, default_value_t = 1200)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 50_000)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 400)]
    pub batch: usize,
    /// Odd window size; 3 predicts the previous and next sentence.
    #[arg(long, default_value_t = 3)]
    pub context: usize,
    #[arg(long, default_value_t = 5e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "qt")]
    pub objective: ObjectiveKind,
    #[arg(long, default_value_t = 1.0)]
    pub margin: f64,
    #[arg(long)]
    pub clip: Option<f64>,
    /// Word vectors (`token v1 ... vD`) for the multichannel encoder.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = crate::corpus::DEFAULT_MAX_SENTENCE_LEN)]
    pub max_len: usize,
    #[arg(long, default_value_t = 100)]
    pub log_interval: u64,
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Continue from a checkpoint; its configuration replaces the flags above.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
}

#[derive(Args, Debug)]
pub struct NnArgs {
    #[arg(long)]
    pub emb: PathBuf,
    #[arg(long)]
    pub query_id: u64,
    #[arg(short, default_value_t = 10)]
    pub k: usize,
}

#[derive(Args, Debug)]
pub struct AnalogyArgs {
    #[arg(long)]
    pub emb: PathBuf,
    #[arg(long)]
    pub a: u64,
    #[arg(long)]
    pub b: u64,
    #[arg(long)]
    pub c: u64,
    #[arg(short, default_value_t = 10)]
    pub k: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Task {
    Classify,
    Pairs,
    Similarity,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Precomputed vectors: row i for line i, or rows 2i and 2i+1 for the pair on line i.
    #[arg(long, conflicts_with = "ckpt", required_unless_present = "ckpt")]
    pub emb: Option<PathBuf>,
    /// Embed the dataset sentences with this checkpoint.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub task: Task,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, value_delimiter = ',')]
    pub l2_grid: Option<Vec<f64>>,
    #[arg(long, default_value = "heuristic")]
    pub pair_mode: PairMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write out-of-fold class log-probabilities here.
    #[arg(long)]
    pub pred_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EnsembleArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub pred: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub val_scores: Vec<f64>,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(a, out),
        Command::Embed(a) => embed(a, out),
        Command::Nn(a) => {
            let coll = import_embeddings(&a.emb)?;
            let hits = nearest_neighbors(&coll, coll.vector(a.query_id)?, a.k)?;
            print_hits(out, &hits)
        }
        Command::Analogy(a) => {
            let coll = import_embeddings(&a.emb)?;
            let hits = analogy_query(&coll, coll.vector(a.a)?, coll.vector(a.b)?, coll.vector(a.c)?, a.k)?;
            print_hits(out, &hits)
        }
        Command::Eval(a) => eval(a, out),
        Command::Ensemble(a) => {
            let preds = a.pred.iter().map(|p| parse_log_probs(&fs::read_to_string(p)?)).collect::<Result<Vec<_>>>()?;
            for y in ensemble_predict(&preds, &a.val_scores)? {
                writeln!(out, "{y}")?;
            }
            Ok(())
        }
    }
}

fn print_hits(out: &mut dyn Write, hits: &[(u64, f64)]) -> Result<()> {
    for (id, cos) in hits {
        writeln!(out, "{id}\t{cos:.6}")?;
    }
    Ok(())
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let text = fs::read_to_string(&a.corpus)?;
    let mut trainer = match &a.resume {
        Some(path) => Trainer::from_checkpoint(load_checkpoint(path)?)?,
        None => {
            let config = TrainConfig {
                encoder: a.encoder,
                emb_dim: a.emb_dim,
                hidden_dim: a.hidden_dim,
                vocab_size: a.vocab_size,
                batch_size: a.batch,
                context: ContextConfig::from_window(a.context)?,
                objective: a.objective,
                margin: a.margin,
                adam: AdamConfig { lr: a.lr, clip: a.clip, ..Default::default() },
                epochs: a.epochs,
                seed: a.seed,
                val_fraction: a.val_fraction,
                max_sentence_len: a.max_len,
                log_interval: a.log_interval,
                pretrained: a.pretrained.clone(),
            };
            config.validate()?;
            let vocab = Vocabulary::build(&text, config.vocab_size)?;
            let table = match (&config.pretrained, config.encoder) {
                (Some(p), _) => {
                    let mut rng = Rng::new(config.seed).fork(PRETRAINED_STREAM);
                    let t = load_pretrained_embeddings::<f32, _>(BufReader::new(fs::File::open(p)?), &vocab, &mut rng)?;
                    log::info!("pretrained vectors cover {:.1}% of the vocabulary", 100.0 * t.coverage);
                    Some(t.embedding)
                }
                (None, EncoderKind::MultiChannel) => {
                    return Err(QtError::Config("the multichannel encoder needs --pretrained".into()));
                }
                (None, _) => None,
            };
            Trainer::new(QtModel::new(config, vocab, table.as_ref())?)?
        }
    };
    let cfg = trainer.model().config.clone();
    let vocab = trainer.model().vocab.clone();
    let corpus = TokenizedCorpus::from_text(&text, &vocab, Split::Train, cfg.max_sentence_len)?;
    let (train, val) = match &a.val {
        Some(p) => {
            let v = TokenizedCorpus::from_text(&fs::read_to_string(p)?, &vocab, Split::Validation, cfg.max_sentence_len)?;
            (corpus, v)
        }
        None => corpus.split_validation(cfg.val_fraction)?,
    };
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("vocab.tsv"), vocab.to_tsv())?;
    let opts = RunOptions { out_dir: Some(a.out.clone()), max_steps: a.max_steps, ..Default::default() };
    // a held-out set too small for one batch only disables validation
    let val = crate::corpus::BatchPlan::new(&val, cfg.batch_size).is_ok().then_some(val);
    if val.is_none() {
        log::warn!("validation corpus has no document of {} sentences; skipping validation", cfg.batch_size);
    }
    let report = trainer.run(&train, val.as_ref(), &opts)?;
    writeln!(out, "steps\t{}", trainer.step())?;
    if let Some(last) = report.step_losses.last() {
        writeln!(out, "final_loss\t{last:.6}")?;
    }
    if let Some(acc) = report.best_val_accuracy {
        writeln!(out, "best_val_accuracy\t{acc:.6}")?;
    }
    writeln!(out, "checkpoint\t{}", a.out.join("last.qtck").display())?;
    Ok(())
}

fn read_sentences(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect())
}

fn embed(a: EmbedArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_checkpoint(&a.ckpt)?.model;
    let coll = embed_sentences(&model, &read_sentences(&a.input)?, a.batch)?;
    export_embeddings(&coll, &a.out)?;
    writeln!(out, "embedded {} sentences of dimension {}", coll.len(), coll.dim())?;
    Ok(())
}

/// Vectors for `sentences`, either embedded now or looked up by position.
fn vectors_for(a: &EvalArgs, sentences: &[Vec<String>]) -> Result<Mat<f64>> {
    let coll: EmbeddingCollection = match (&a.ckpt, &a.emb) {
        (Some(ckpt), _) => embed_sentences(&load_checkpoint(ckpt)?.model, sentences, 64)?,
        (None, Some(emb)) => import_embeddings(emb)?,
        (None, None) => return Err(QtError::Config("either --emb or --ckpt is required".into())),
    };
    let rows = (0..sentences.len() as u64).map(|i| coll.vector(i)).collect::<Result<Vec<_>>>()?;
    Mat::from_rows(&rows)
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let text = fs::read_to_string(&a.data)?;
    let grid = a.l2_grid.clone().unwrap_or_else(|| DEFAULT_L2_GRID.to_vec());
    let cv = match a.task {
        Task::Classify => {
            let rows = parse_classification_tsv(&text)?;
            let sents: Vec<Vec<String>> = rows.iter().map(|r| r.1.clone()).collect();
            let x = vectors_for(&a, &sents)?;
            let data = LabeledDataset::new(x, rows.iter().map(|r| r.0).collect(), None)?;
            kfold_eval(&data, a.folds, &grid, a.seed)?
        }
        Task::Pairs | Task::Similarity => {
            let rows = parse_pair_tsv(&text)?;
            let sents: Vec<Vec<String>> = rows.iter().flat_map(|r| [r.1.clone(), r.2.clone()]).collect();
            let x = vectors_for(&a, &sents)?;
            let pick = |off: usize| Mat::from_rows(&(0..rows.len()).map(|i| x.row(2 * i + off)).collect::<Vec<_>>());
            let pairs = PairDataset::new(pick(0)?, pick(1)?, rows.iter().map(|r| r.0).collect())?;
            if a.task == Task::Similarity {
                let (p, s) = similarity_correlation(&pairs)?;
                writeln!(out, "pearson\t{p:.6}\nspearman\t{s:.6}")?;
                return Ok(());
            }
            kfold_eval(&pairs.to_labeled(a.pair_mode)?, a.folds, &grid, a.seed)?
        }
    };
    writeln!(out, "accuracy\t{:.6}\nstd\t{:.6}", cv.mean, cv.std)?;
    if let Some(p) = &a.pred_out {
        fs::write(p, format_log_probs(&cv.log_probs))?;
    }
    Ok(())
}

/// Parses `std::env::args`, runs, and maps errors to an exit status.
pub fn main() -> std::process::ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::FAILURE
        }
    }
}
