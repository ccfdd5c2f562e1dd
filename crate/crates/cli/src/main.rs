mod config;

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use fpb_core::ablation::{ablation_run, CorpusBundle};
use fpb_core::data::{detokenize, gen_synthetic, make_batches, tokenize, ParallelCorpus, Vocab};
use fpb_core::decode::{
    bow_accuracy_curve, decode, BleuStats, BowSource, DecodeOptions, ModelPredictor,
    OraclePredictor, UniformPredictor, MAX_ORDER,
};
use fpb_core::model::{load_checkpoint, save_checkpoint, FpbModel};
use fpb_core::train::{train, TrainData};

use config::{output_dir, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "fpb", version, about = "Future-prediction seq2seq translation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, metrics and frozen config.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Translate one tokenized sentence per input line.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Defaults to standard output.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        width: usize,
        /// Same as `--width 1`.
        #[arg(long)]
        greedy: bool,
        #[arg(long, default_value_t = 100)]
        max_len: usize,
        /// Suppress EOS while the predicted remaining length exceeds this.
        #[arg(long)]
        eos_gate: Option<usize>,
        #[arg(long)]
        length_norm: bool,
    },
    /// Corpus BLEU of a hypothesis file against a reference file.
    Evaluate {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        smooth: bool,
    },
    /// Bag-of-words prediction accuracy by remaining length.
    AnalyzeBow {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Tab-separated parallel corpus.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = Predictor::Model)]
        predictor: Predictor,
        #[arg(long, default_value_t = 20)]
        max_remaining: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Train baseline, +length, +BOW and full models for each seed.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Predictor {
    Model,
    Oracle,
    Uniform,
}

struct Corpora {
    train: ParallelCorpus,
    dev: ParallelCorpus,
    test: Option<ParallelCorpus>,
    src_vocab: Vocab,
    tgt_vocab: Vocab,
}

fn load_corpora(c: &RunConfig) -> Result<Corpora> {
    let (train, dev, test) = match (c.task, &c.train_path) {
        (Some(task), _) => {
            let all = gen_synthetic(
                task,
                c.n_pairs,
                c.vocab_size,
                (c.min_len, c.max_len),
                c.seed,
            )?;
            let (rest, test) = if c.test_size > 0 {
                let (r, t) = all.split_tail(c.test_size);
                (r, Some(t))
            } else {
                (all, None)
            };
            let (train, dev) = rest.split_tail(c.dev_size);
            (train, dev, test)
        }
        (None, Some(path)) => {
            let train = ParallelCorpus::load(path)?;
            let (train, dev) = match &c.dev_path {
                Some(p) => (train, ParallelCorpus::load(p)?),
                None => train.split_tail(c.dev_size),
            };
            let test = c
                .test_path
                .as_deref()
                .map(ParallelCorpus::load)
                .transpose()?;
            (train, dev, test)
        }
        (None, None) => bail!("task: set a synthetic task or train_path"),
    };
    if train.is_empty() || dev.is_empty() {
        bail!("corpus: training and dev sets must be nonempty");
    }
    let src_vocab = Vocab::build(train.sources(), c.max_vocab, c.min_freq)?;
    let tgt_vocab = Vocab::build(train.targets(), c.max_vocab, c.min_freq)?;
    Ok(Corpora {
        train,
        dev,
        test,
        src_vocab,
        tgt_vocab,
    })
}

fn write_frozen(dir: &Path, c: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut frozen = c.clone();
    frozen.out_dir = Some(dir.to_path_buf());
    fs::write(dir.join("config.toml"), frozen.to_toml()?)?;
    Ok(())
}

fn cmd_train(config: Option<&Path>, o: &Overrides) -> Result<()> {
    let c = RunConfig::resolve(config, o)?;
    let dir = c.output_dir("train");
    write_frozen(&dir, &c)?;
    let data = load_corpora(&c)?;
    let model = FpbModel::new(
        c.model_config(data.src_vocab.len(), data.tgt_vocab.len()),
        c.seed,
    )?;
    let ckpt = dir.join("model.ckpt");
    let mut tc = c.train_config();
    tc.checkpoint_path = Some(ckpt.clone());
    tc.metrics_path = Some(dir.join("metrics.jsonl"));
    let out = train(
        model,
        &TrainData {
            train: &data.train,
            dev: Some(&data.dev),
            src_vocab: &data.src_vocab,
            tgt_vocab: &data.tgt_vocab,
        },
        &tc,
    )?;
    save_checkpoint(&ckpt, &out.model, &data.src_vocab, &data.tgt_vocab)?;
    println!(
        "epochs {} steps {} best dev BLEU {}",
        out.epochs_run,
        out.steps,
        out.best_dev_bleu
            .map_or("n/a".into(), |b| format!("{b:.4}"))
    );
    println!("wrote {}", dir.display());
    if out.diverged {
        bail!("training diverged; kept the last good checkpoint");
    }
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    BufReader::new(f)
        .lines()
        .map(|l| l.map_err(Into::into))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_decode(
    checkpoint: &Path,
    input: &Path,
    output: Option<&Path>,
    width: usize,
    greedy: bool,
    max_len: usize,
    eos_gate: Option<usize>,
    length_norm: bool,
) -> Result<()> {
    let ck =
        load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    if eos_gate.is_some() && !ck.model.uses_len() {
        bail!("eos_gate: checkpoint has no length predictor");
    }
    let opts = DecodeOptions {
        width: if greedy { 1 } else { width },
        max_len,
        length_norm,
        eos_gate,
    };
    let lines = read_lines(input)?;
    let mut out: Box<dyn Write> = match output {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(io::BufWriter::new(io::stdout().lock())),
    };
    for line in &lines {
        let src = ck.src_vocab.encode(&tokenize(line));
        let hyp = if src.is_empty() {
            Vec::new()
        } else {
            ck.tgt_vocab.decode(&decode(&ck.model, &src, &opts)?.tokens)
        };
        writeln!(out, "{}", detokenize(&hyp))?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_evaluate(hyp: &Path, reference: &Path, smooth: bool) -> Result<()> {
    let h: Vec<Vec<String>> = read_lines(hyp)?.iter().map(|l| tokenize(l)).collect();
    let r: Vec<Vec<String>> = read_lines(reference)?.iter().map(|l| tokenize(l)).collect();
    if h.len() != r.len() {
        bail!(
            "{} hypothesis lines but {} reference lines",
            h.len(),
            r.len()
        );
    }
    let s = BleuStats::collect(&h, &r)?;
    println!("BLEU {}", s.score(smooth));
    for n in 1..=MAX_ORDER {
        println!("p{n} {}/{}", s.matches[n - 1], s.totals[n - 1]);
    }
    println!("BP {}", s.brevity_penalty());
    println!("hyp_len {} ref_len {}", s.hyp_len, s.ref_len);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_analyze_bow(
    checkpoint: &Path,
    corpus: &Path,
    predictor: Predictor,
    max_remaining: usize,
    batch_size: usize,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<()> {
    let ck =
        load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let corpus = ParallelCorpus::load(corpus)?;
    let k_len = ck.model.config.k_len;
    let batches = make_batches(
        &corpus,
        &ck.src_vocab,
        &ck.tgt_vocab,
        batch_size,
        k_len,
        seed,
    )?;
    let mut source: Box<dyn BowSource + '_> = match predictor {
        Predictor::Model => Box::new(ModelPredictor(&ck.model)),
        Predictor::Oracle => Box::new(OraclePredictor { k_len }),
        Predictor::Uniform => Box::new(UniformPredictor { k_len }),
    };
    let curve = bow_accuracy_curve(source.as_mut(), &batches, max_remaining, seed)?;
    let dir = output_dir(out_dir, "analyze-bow");
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("bow_curve.csv"), curve.to_csv())?;
    let summary = serde_json::json!({
        "bins": curve.bins,
        "spearman": curve.spearman(),
        "populated_bins": curve.populated().count(),
    });
    fs::write(
        dir.join("bow_curve.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    print!("{}", curve.to_csv());
    Ok(())
}

fn cmd_ablate(config: Option<&Path>, seeds: &[u64], o: &Overrides) -> Result<()> {
    if seeds.is_empty() {
        bail!("seeds: need at least one seed");
    }
    let c = RunConfig::resolve(config, o)?;
    let dir = c.output_dir("ablate");
    write_frozen(&dir, &c)?;
    let data = load_corpora(&c)?;
    let base = c.model_config(data.src_vocab.len(), data.tgt_vocab.len());
    let eval = DecodeOptions {
        width: c.width,
        max_len: c.max_decode_len,
        length_norm: c.length_norm,
        eos_gate: None,
    };
    let table = ablation_run(
        &base,
        &c.train_config(),
        &CorpusBundle {
            train: &data.train,
            dev: &data.dev,
            test: data.test.as_ref(),
            src_vocab: &data.src_vocab,
            tgt_vocab: &data.tgt_vocab,
        },
        seeds,
        &eval,
    )?;
    fs::write(dir.join("ablation.csv"), table.to_csv())?;
    fs::write(
        dir.join("ablation.json"),
        serde_json::to_string_pretty(&table)?,
    )?;
    print!("{}", table.summary());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, overrides } => cmd_train(config.as_deref(), &overrides),
        Command::Decode {
            checkpoint,
            input,
            output,
            width,
            greedy,
            max_len,
            eos_gate,
            length_norm,
        } => cmd_decode(
            &checkpoint,
            &input,
            output.as_deref(),
            width,
            greedy,
            max_len,
            eos_gate,
            length_norm,
        ),
        Command::Evaluate {
            hyp,
            reference,
            smooth,
        } => cmd_evaluate(&hyp, &reference, smooth),
        Command::AnalyzeBow {
            checkpoint,
            corpus,
            predictor,
            max_remaining,
            batch_size,
            seed,
            out_dir,
        } => cmd_analyze_bow(
            &checkpoint,
            &corpus,
            predictor,
            max_remaining,
            batch_size,
            seed,
            out_dir.as_deref(),
        ),
        Command::Ablate {
            config,
            seeds,
            overrides,
        } => cmd_ablate(config.as_deref(), &seeds, &overrides),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
