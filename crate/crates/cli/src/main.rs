//! `nhmm`: train, decode and evaluate neural HMM tag inducers.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nhmm::data::{
    generate_synthetic, load_model, parse_corpus, parse_id_lines, read_corpus, save_model,
    write_conll, Corpus, CorpusFormat, Sentence, Vocab,
};
use nhmm::evaluation::evaluate;
use nhmm::hmm::HmmParams;
use nhmm::numerics::AdamConfig;
use nhmm::potentials::{EmissionMode, ModelConfig, NeuralHmm, TransitionMode};
use nhmm::training::{check_dml_gradient, train, Objective, TrainConfig};

#[derive(Parser, Debug)]
#[command(
    name = "nhmm",
    version,
    about = "Unsupervised tag induction with neural HMMs"
)]
struct Cli {
    /// Worker threads for per-sentence inference (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on an untagged (or tagged) corpus.
    Train(TrainArgs),
    /// Write the Viterbi cluster ids of every sentence.
    Decode(DecodeArgs),
    /// Score predicted clusters against gold tags (M-1, 1-1, VM).
    Eval(EvalArgs),
    /// Sample a tagged corpus from a random or given HMM.
    Synth(SynthArgs),
    /// Finite-difference check of the training gradient on a tiny model.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Number of induced tags.
    #[arg(long, default_value_t = 45)]
    k: usize,
    /// Hidden size; 512 for lookup emissions, 128 for char-cnn.
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, default_value = "lookup")]
    emission: EmissionMode,
    #[arg(long, default_value = "static")]
    transition: TransitionMode,
    #[arg(long, default_value_t = 32)]
    cnn_filters_per_width: usize,
    #[arg(long, default_value_t = 7)]
    cnn_max_width: usize,
    #[arg(long, default_value_t = 15)]
    char_embed_dim: usize,
    #[arg(long, default_value_t = 24)]
    max_word_len: usize,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    /// Same as `--dropout 0`.
    #[arg(long)]
    no_dropout: bool,
    #[arg(long, default_value_t = 3)]
    lstm_layers: usize,
    /// Draw every parameter from U(-eps, eps) instead of the default initializers.
    #[arg(long)]
    init_uniform_eps: Option<f64>,
}

impl ModelArgs {
    fn resolve(&self) -> ModelConfig {
        let mut c = ModelConfig::new(self.k, self.emission, self.transition);
        if let Some(h) = self.hidden {
            c.hidden = h;
        }
        c.cnn_filters_per_width = self.cnn_filters_per_width;
        c.cnn_max_width = self.cnn_max_width;
        c.char_embed_dim = self.char_embed_dim;
        c.max_word_len = self.max_word_len;
        c.dropout = if self.no_dropout { 0.0 } else { self.dropout };
        c.lstm_layers = self.lstm_layers;
        c.init_uniform_eps = self.init_uniform_eps;
        c
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "tokens")]
    format: CorpusFormat,
    /// Output model file.
    #[arg(long)]
    model: PathBuf,
    /// Output report (JSON lines); defaults to `<model>.report.jsonl`.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    arch: ModelArgs,
    #[arg(long, default_value = "dml")]
    objective: Objective,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    /// Training sentences longer than this are skipped.
    #[arg(long, default_value_t = 40)]
    max_len: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 6)]
    max_inner_loops: usize,
    #[arg(long, default_value_t = 1e-4)]
    inner_convergence: f64,
    #[arg(long, default_value_t = 5.0)]
    clip_norm: f64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "tokens")]
    format: CorpusFormat,
    /// Output file; standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum GoldFormat {
    Conll,
    Ids,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum ReportFormat {
    Text,
    Kv,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predicted cluster ids, one sentence per line.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long, value_enum, default_value = "conll")]
    gold_format: GoldFormat,
    #[arg(long, value_enum, default_value = "text")]
    report_format: ReportFormat,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output corpus in conll format.
    #[arg(long)]
    output: PathBuf,
    /// Generating HMM as JSON; a random one is drawn when omitted.
    #[arg(long)]
    hmm: Option<PathBuf>,
    /// Write the generating HMM as JSON.
    #[arg(long)]
    save_hmm: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 20)]
    v: usize,
    #[arg(long, default_value_t = 1000)]
    sentences: usize,
    #[arg(long, default_value_t = 40)]
    max_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Check only this emission mode (default: both).
    #[arg(long)]
    emission: Option<EmissionMode>,
    /// Check only this transition mode (default: both).
    #[arg(long)]
    transition: Option<TransitionMode>,
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn header(command: &str, lines: &[(&str, String)]) {
    eprintln!("# nhmm {} {command}", env!("CARGO_PKG_VERSION"));
    eprintln!("# threads={}", nhmm::par::threads());
    for (k, v) in lines {
        eprintln!("# {k}={v}");
    }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("config serializes")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let model_cfg = a.arch.resolve();
    let cfg = TrainConfig {
        objective: a.objective,
        batch_size: a.batch_size,
        max_len: a.max_len,
        epochs: a.epochs,
        max_inner_loops: a.max_inner_loops,
        inner_convergence: a.inner_convergence,
        clip_norm: a.clip_norm,
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
        seed: a.seed,
    };
    let report_path = a.report.clone().unwrap_or_else(|| {
        let mut p = a.model.clone().into_os_string();
        p.push(".report.jsonl");
        p.into()
    });
    header(
        "train",
        &[
            ("corpus", a.corpus.display().to_string()),
            ("format", a.format.to_string()),
            ("model_out", a.model.display().to_string()),
            ("report_out", report_path.display().to_string()),
            ("seed", a.seed.to_string()),
            ("model", json(&model_cfg)),
            ("train", json(&cfg)),
        ],
    );
    model_cfg.validate()?;
    cfg.validate()?;
    let mut vocab = Vocab::new();
    let corpus = read_corpus(&a.corpus, a.format, &mut vocab)?;
    log::info!(
        "{} sentences, {} tokens, {} word types, fingerprint {}",
        corpus.sentences.len(),
        corpus.num_tokens(),
        vocab.num_types(),
        corpus.fingerprint
    );
    let mut model = NeuralHmm::new(model_cfg, vocab, a.seed)?;
    let report = train(&mut model, &corpus.sentences, &cfg)?;
    save_model(&model, &a.model)?;
    let mut w = create(&report_path)?;
    report.write_jsonl(&mut w)?;
    w.flush()?;
    if let Some(last) = report.epochs.last() {
        eprintln!(
            "trained {} epochs in {:.1}s; per-token log-likelihood {:.6}; checksum {}",
            report.epochs.len(),
            report.wall_clock_secs,
            last.log_likelihood_per_token,
            report.checksum
        );
    }
    Ok(())
}

fn cmd_decode(a: &DecodeArgs) -> Result<()> {
    header(
        "decode",
        &[
            ("model", a.model.display().to_string()),
            ("corpus", a.corpus.display().to_string()),
            ("format", a.format.to_string()),
            ("batch_size", a.batch_size.to_string()),
        ],
    );
    let model = load_model(&a.model)?;
    let mut vocab = model.vocab().clone();
    let corpus = read_corpus(&a.corpus, a.format, &mut vocab)?;
    if corpus.unk_tokens > 0 {
        log::info!("{} tokens outside the model vocabulary", corpus.unk_tokens);
    }
    let paths = model.decode(&corpus.sentences, a.batch_size)?;
    let mut out: Box<dyn Write> = match &a.output {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    for p in &paths {
        let line: Vec<String> = p.iter().map(usize::to_string).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| nhmm::Error::Io(e).into())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    header(
        "eval",
        &[
            ("pred", a.pred.display().to_string()),
            ("gold", a.gold.display().to_string()),
            ("gold_format", format!("{:?}", a.gold_format).to_lowercase()),
        ],
    );
    let pred: Vec<Vec<usize>> = parse_id_lines(&read_text(&a.pred)?)?
        .into_iter()
        .map(|s| s.into_iter().map(|x| x as usize).collect())
        .collect();
    let gold = match a.gold_format {
        GoldFormat::Ids => parse_id_lines(&read_text(&a.gold)?)?,
        GoldFormat::Conll => {
            let mut vocab = Vocab::new();
            let c = parse_corpus(&read_text(&a.gold)?, CorpusFormat::Conll, &mut vocab)?;
            c.gold_tags()
                .ok_or_else(|| nhmm::Error::Data("gold corpus has no tags".into()))?
        }
    };
    let report = evaluate(&pred, &gold)?;
    match a.report_format {
        ReportFormat::Text => print!("{}", report.to_text()),
        ReportFormat::Kv => print!("{}", report.to_key_values()),
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    header(
        "synth",
        &[
            ("output", a.output.display().to_string()),
            (
                "hmm",
                a.hmm
                    .as_ref()
                    .map_or("random".into(), |p| p.display().to_string()),
            ),
            ("k", a.k.to_string()),
            ("v", a.v.to_string()),
            ("sentences", a.sentences.to_string()),
            ("max_len", a.max_len.to_string()),
            ("seed", a.seed.to_string()),
        ],
    );
    let hmm: HmmParams = match &a.hmm {
        Some(p) => {
            serde_json::from_str(&read_text(p)?).map_err(|e| nhmm::Error::Format(e.to_string()))?
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            HmmParams::random(a.k, a.v, &mut rng)?
        }
    };
    let (vocab, corpus) = generate_synthetic(&hmm, a.sentences, a.max_len, a.seed)?;
    let mut w = create(&a.output)?;
    write_conll(&mut w, &corpus, &vocab)?;
    w.flush()?;
    if let Some(p) = &a.save_hmm {
        std::fs::write(p, json(&hmm)).with_context(|| format!("writing {}", p.display()))?;
    }
    eprintln!(
        "wrote {} sentences, {} tokens",
        corpus.sentences.len(),
        corpus.num_tokens()
    );
    Ok(())
}

/// Three short sentences over nine word types.
const TOY_CORPUS: &str = "the dog chased a cat\na cat sat\nthe dogs ran away\n";

fn toy_model(em: EmissionMode, tr: TransitionMode, seed: u64) -> Result<(NeuralHmm, Corpus)> {
    let mut vocab = Vocab::new();
    let corpus = parse_corpus(TOY_CORPUS, CorpusFormat::Tokens, &mut vocab)?;
    let mut c = ModelConfig::new(3, em, tr);
    c.hidden = 8;
    c.cnn_filters_per_width = 2;
    c.cnn_max_width = 3;
    c.char_embed_dim = 4;
    c.max_word_len = 8;
    c.lstm_layers = 2;
    c.dropout = 0.0;
    Ok((NeuralHmm::new(c, vocab, seed)?, corpus))
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<()> {
    header(
        "gradcheck",
        &[
            ("h", a.h.to_string()),
            ("tol", a.tol.to_string()),
            ("seed", a.seed.to_string()),
        ],
    );
    let ems = a
        .emission
        .map_or(vec![EmissionMode::Lookup, EmissionMode::CharCnn], |e| {
            vec![e]
        });
    let trs = a
        .transition
        .map_or(vec![TransitionMode::Static, TransitionMode::Lstm], |t| {
            vec![t]
        });
    let mut worst: f64 = 0.0;
    for &em in &ems {
        for &tr in &trs {
            let (model, corpus) = toy_model(em, tr, a.seed)?;
            let batch: Vec<&Sentence> = corpus.sentences.iter().collect();
            let rep = check_dml_gradient(&model, &batch, a.h, a.seed)?;
            println!(
                "{em}/{tr}: max relative error {:.3e}, max absolute error {:.3e} over {} coordinates",
                rep.max_rel_error, rep.max_abs_error, rep.coords_checked
            );
            worst = worst.max(rep.max_rel_error);
        }
    }
    if worst > a.tol {
        return Err(nhmm::Error::Check(format!(
            "max relative error {worst:.3e} exceeds {:.1e}",
            a.tol
        ))
        .into());
    }
    Ok(())
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(nhmm::Error::Usage("--threads must be positive".into()).into());
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the thread pool")?;
    #[cfg(not(feature = "parallel"))]
    if n > 1 {
        log::warn!("built without the `parallel` feature; running on one thread");
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    init_threads(cli.threads)?;
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

/// 1 usage, 2 data or format, 3 numeric; errors from outside the library count as data errors.
fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<nhmm::Error>())
        .map_or(2, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
