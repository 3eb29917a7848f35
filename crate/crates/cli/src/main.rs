mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use nalgebra::DMatrix;

use pauc_core::embeddings::{read_embeddings, read_scores, read_trials, write_embeddings, write_scores, write_trials};
use pauc_core::eval::{
    det_curve, evaluate, fit_calibration, roc_curve, write_det, write_roc, CalibrationModel, DcfParams, EvalOptions,
    DEFAULT_EFFECTIVE_PRIOR,
};
use pauc_core::preprocess::{
    apply_lda, fit_lda, fit_plda, global_mean, length_normalize, plda_latent, subtract_mean, DEFAULT_PLDA_ITERS,
};
use pauc_core::synth::{
    self, SynthSpec, DEFAULT_DIM, DEFAULT_EVAL_SPEAKERS, DEFAULT_EVAL_UTTS, DEFAULT_TRAIN_SPEAKERS, DEFAULT_TRAIN_UTTS,
};
use pauc_core::{
    score_trials, EmbeddingSet, Error, ErrorClass, HyperParams, MetricModel, ModelFile, ScoringBackend,
    TrialLabel,
};

const LOG_ENV: &str = "PAUC_LOG";

#[derive(Parser, Debug)]
#[command(name = "pauc", version, about = "Partial-AUC metric learning back-end for speaker verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic train/eval embeddings and an eval trial list.
    Synth(SynthArgs),
    /// Fit a preprocessing chain on training data and apply it.
    Prep(PrepArgs),
    /// Learn a Mahalanobis metric.
    Train(TrainArgs),
    /// Score a trial list.
    Score(ScoreArgs),
    /// Fit (or apply) a linear score calibration.
    Calibrate(CalibrateArgs),
    /// Print the metrics report and write ROC/DET curve files.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// Flat key=value file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_DIM)]
    dim: usize,
    #[arg(long, default_value_t = DEFAULT_TRAIN_SPEAKERS)]
    train_speakers: usize,
    #[arg(long, default_value_t = DEFAULT_TRAIN_UTTS)]
    train_utts: usize,
    #[arg(long, default_value_t = DEFAULT_EVAL_SPEAKERS)]
    eval_speakers: usize,
    #[arg(long, default_value_t = DEFAULT_EVAL_UTTS)]
    eval_utts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct PrepArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Embeddings the chain is fitted on.
    #[arg(long)]
    train: PathBuf,
    /// Further embedding files transformed with the fitted chain.
    #[arg(long = "apply", action = clap::ArgAction::Append)]
    apply: Vec<PathBuf>,
    /// Comma-separated steps: mean, lda:N, lnorm, plda[:ITERS].
    #[arg(long)]
    chain: String,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Trainer {
    Pauc,
    Triplet,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Trainer::Pauc)]
    trainer: Trainer,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl TrainArgs {
    fn hyper(&self) -> HyperParams {
        let d = HyperParams::default();
        HyperParams {
            alpha: self.alpha.unwrap_or(d.alpha),
            beta: self.beta.unwrap_or(d.beta),
            delta: self.delta.unwrap_or(d.delta),
            gamma: self.gamma.unwrap_or(d.gamma),
            mu: self.mu.unwrap_or(d.mu),
            eta: self.eta.unwrap_or(d.eta),
            s: self.batch_size.unwrap_or(d.s),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            rel_tol: self.rel_tol.unwrap_or(d.rel_tol),
            seed: self.seed.unwrap_or(d.seed),
        }
    }
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Metric or PLDA model file; cosine scoring when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    trials: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Labeled scores the calibration is fitted on.
    #[arg(long)]
    scores: PathBuf,
    /// Apply this calibration instead of fitting one.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_EFFECTIVE_PRIOR)]
    prior: f64,
    /// Where the fitted calibration model is written.
    #[arg(long)]
    out_model: Option<PathBuf>,
    /// Where the calibrated scores are written.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value_t = DcfParams::default().p_target)]
    p_target: f64,
    #[arg(long, default_value_t = DcfParams::default().c_miss)]
    c_miss: f64,
    #[arg(long, default_value_t = DcfParams::default().c_fa)]
    c_fa: f64,
    /// Lower FPR bound of the custom pAUC band.
    #[arg(long, default_value_t = EvalOptions::default().alpha)]
    alpha: f64,
    /// Upper FPR bound of the custom pAUC band.
    #[arg(long, default_value_t = EvalOptions::default().beta)]
    beta: f64,
    /// ROC output path; defaults to `<scores>.roc`.
    #[arg(long)]
    roc: Option<PathBuf>,
    /// DET output path; defaults to `<scores>.det`.
    #[arg(long)]
    det: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CliResult = Result<(), Failure>;

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn cmd_synth(a: &SynthArgs) -> CliResult {
    let train_spec = SynthSpec {
        phi_b: synth::default_phi_b(a.dim),
        ..SynthSpec::isotropic(a.dim, a.train_speakers, a.train_utts, a.seed)
    };
    let eval_spec = SynthSpec {
        n_speakers: a.eval_speakers,
        utts_per_speaker: a.eval_utts,
        ..train_spec.clone()
    };
    let train = synth::generate(&train_spec)?;
    let eval = synth::generate_range(&eval_spec, train_spec.n_speakers)?;
    let trials = synth::eval_trials(&eval);
    if !trials.entries.iter().any(|t| t.label == TrialLabel::Nontarget) {
        warn!("trial list has no nontarget trials; use at least two eval speakers");
    }
    create_dir(&a.out_dir)?;
    write_embeddings(&train, a.out_dir.join("train.emb"))?;
    write_embeddings(&eval, a.out_dir.join("eval.emb"))?;
    write_trials(&trials, a.out_dir.join("trials.txt"))?;
    info!(
        "wrote {} train and {} eval embeddings, {} trials to {}",
        train.len(),
        eval.len(),
        trials.len(),
        a.out_dir.display()
    );
    Ok(())
}

enum Step {
    Mean,
    Lda(usize),
    Lnorm,
    Plda(usize),
}

fn parse_chain(chain: &str) -> Result<Vec<Step>, Failure> {
    let bad = |s: &str| Failure::Usage(format!("invalid chain step '{s}'; expected mean, lda:N, lnorm or plda[:ITERS]"));
    let mut steps = Vec::new();
    for tok in chain.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let (name, arg) = match tok.split_once(':') {
            Some((n, a)) => (n, Some(a.parse::<usize>().map_err(|_| bad(tok))?)),
            None => (tok, None),
        };
        steps.push(match (name, arg) {
            ("mean", None) => Step::Mean,
            ("lda", Some(n)) if n > 0 => Step::Lda(n),
            ("lnorm", None) => Step::Lnorm,
            ("plda", iters) => Step::Plda(iters.unwrap_or(DEFAULT_PLDA_ITERS)),
            _ => return Err(bad(tok)),
        });
    }
    if steps.is_empty() {
        return Err(Failure::Usage("empty preprocessing chain".into()));
    }
    Ok(steps)
}

fn file_name(path: &Path) -> Result<&std::ffi::OsStr, Failure> {
    path.file_name()
        .ok_or_else(|| Failure::Usage(format!("'{}' has no file name", path.display())))
}

fn cmd_prep(a: &PrepArgs) -> CliResult {
    let steps = parse_chain(&a.chain)?;
    let mut train = read_embeddings(&a.train)?;
    let mut others: Vec<EmbeddingSet> = a.apply.iter().map(read_embeddings).collect::<Result<_, _>>()?;
    create_dir(&a.out_dir)?;
    for (k, step) in steps.iter().enumerate() {
        let (name, model) = match step {
            Step::Mean => {
                let mean = global_mean(&train);
                train = subtract_mean(&train, &mean)?;
                for o in &mut others {
                    *o = subtract_mean(o, &mean)?;
                }
                ("mean", Some(ModelFile::new("mean", DMatrix::from_row_slice(1, mean.len(), mean.as_slice()))))
            }
            Step::Lda(n) => {
                let t = fit_lda(&train, *n)?;
                train = apply_lda(&t, &train)?;
                for o in &mut others {
                    *o = apply_lda(&t, o)?;
                }
                ("lda", Some(t.to_model_file()))
            }
            Step::Lnorm => {
                train = length_normalize(&train)?;
                for o in &mut others {
                    *o = length_normalize(o)?;
                }
                ("lnorm", None)
            }
            Step::Plda(iters) => {
                let p = fit_plda(&train, *iters)?;
                train = plda_latent(&p, &train)?;
                for o in &mut others {
                    *o = plda_latent(&p, o)?;
                }
                ("plda", Some(p.to_model_file()))
            }
        };
        if let Some(m) = model {
            m.write(a.out_dir.join(format!("{:02}-{name}.model", k + 1)))?;
        }
    }
    write_embeddings(&train, a.out_dir.join(file_name(&a.train)?))?;
    for (path, set) in a.apply.iter().zip(&others) {
        write_embeddings(set, a.out_dir.join(file_name(path)?))?;
    }
    info!("prep '{}': output dim {}", a.chain, train.dim());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> CliResult {
    let set = read_embeddings(&a.train)?;
    let hyper = a.hyper();
    let model = match a.trainer {
        Trainer::Pauc => pauc_core::train_pauc_metric(&set, &hyper)?,
        Trainer::Triplet => pauc_core::train_triplet_metric(&set, &hyper)?,
    };
    model.to_model_file().write(&a.out)?;
    info!(
        "{} trained for {} iterations; final batch pAUC {:.4}",
        model.kind.as_str(),
        model.history.len(),
        model.final_train_pauc().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn load_backend(path: &Path) -> Result<ScoringBackend, Error> {
    let file = ModelFile::read(path)?;
    if file.kind == "plda" {
        Ok(ScoringBackend::Plda(pauc_core::preprocess::PldaModel::from_model_file(&file)?))
    } else {
        Ok(ScoringBackend::Mahalanobis(MetricModel::from_model_file(&file)?))
    }
}

fn cmd_score(a: &ScoreArgs) -> CliResult {
    let backend = match &a.model {
        Some(p) => load_backend(p)?,
        None => ScoringBackend::Cosine,
    };
    let set = read_embeddings(&a.embeddings)?;
    let trials = read_trials(&a.trials)?;
    let scores = score_trials(&backend, &set, &trials)?;
    write_scores(&scores, &a.out)?;
    info!("scored {} trials", scores.len());
    Ok(())
}

fn cmd_calibrate(a: &CalibrateArgs) -> CliResult {
    let scores = read_scores(&a.scores)?;
    let model = match &a.model {
        Some(p) => CalibrationModel::from_model_file(&ModelFile::read(p)?)?,
        None => fit_calibration(&scores, a.prior)?,
    };
    if let Some(p) = &a.out_model {
        model.to_model_file().write(p)?;
    }
    write_scores(&model.apply(&scores), &a.out)?;
    info!("calibration scale {} offset {}", model.scale, model.offset);
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_evaluate(a: &EvaluateArgs) -> CliResult {
    let scores = read_scores(&a.scores)?;
    let options = EvalOptions {
        dcf: DcfParams {
            p_target: a.p_target,
            c_miss: a.c_miss,
            c_fa: a.c_fa,
        },
        alpha: a.alpha,
        beta: a.beta,
    };
    let report = evaluate(&scores, &options)?;
    print!("{report}");
    let roc = a.roc.clone().unwrap_or_else(|| with_suffix(&a.scores, ".roc"));
    let det = a.det.clone().unwrap_or_else(|| with_suffix(&a.scores, ".det"));
    write_roc(&roc_curve(&scores)?, roc)?;
    write_det(&det_curve(&scores)?, det)?;
    Ok(())
}

fn run(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Prep(a) => cmd_prep(a),
        Command::Train(a) => cmd_train(a),
        Command::Score(a) => cmd_score(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info")).init();
    let args: Vec<String> = std::env::args().collect();
    let args = match config::merge(&Cli::command(), args) {
        Ok(a) => a,
        Err(config::ConfigError::Usage(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
        Err(config::ConfigError::Io(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Data => 2,
                ErrorClass::Numerical => 3,
            })
        }
    }
}
