//! `neurules` command-line interface.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use neurules::data::{load_csv, load_csv_with_schema, stratified_kfold};
use neurules::document::{ModelDocument, MODEL_FORMAT};
use neurules::evaluation::{evaluate, EvalReport};
use neurules::extraction::{extract, hard_predict, render_text, HardRuleList, DEFAULT_WEIGHT_THRESHOLD, RULELIST_FORMAT};
use neurules::model::Dims;
use neurules::synthetic::{generate, SyntheticSpec};
use neurules::training::{gradient_check, train, GradCheckConfig, Schedule, TrainConfig};
use neurules::Error;

/// Exit code for unusable input: bad flags, files, data or model documents.
const EXIT_INPUT: u8 = 2;
/// Exit code when training diverges.
const EXIT_ABORTED: u8 = 3;
/// Exit code when the gradient check exceeds its tolerance.
const EXIT_GRADCHECK: u8 = 4;

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "neurules", version, about = "Learn interpretable rule lists by gradient descent")]
struct Cli {
    /// Worker threads for minibatch gradients (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a rule list and write model.json, rules.txt and report.csv.
    Train(TrainArgs),
    /// Stratified k-fold cross validation of the training pipeline.
    Cv(CvArgs),
    /// Evaluate a saved model or rule list on a labelled CSV.
    Eval(EvalArgs),
    /// Print the predicted class and firing rule for every row of a CSV.
    Predict(PredictArgs),
    /// Generate a dataset from a random ground-truth rule list.
    Synth(SynthArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Name of the label column.
    #[arg(long)]
    label: String,
}

#[derive(Args)]
struct TrainFlags {
    /// Rule count including the default rule.
    #[arg(long = "rules", default_value_t = 10)]
    rules: usize,
    /// JSON file with training settings; explicit flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Passes over the training data.
    #[arg(long)]
    epochs: Option<usize>,
    /// Minibatch size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Weight of the support regularizer.
    #[arg(long)]
    lambda: Option<f64>,
    /// Lower coverage bound of the support regularizer.
    #[arg(long)]
    cov_min: Option<f64>,
    /// Upper coverage bound of the support regularizer.
    #[arg(long)]
    cov_max: Option<f64>,
    /// Initial conjunction slack; 0 disables the slack entirely.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Final conjunction slack after annealing.
    #[arg(long)]
    epsilon_end: Option<f64>,
    /// Disable Gumbel noise in the rule selector.
    #[arg(long)]
    no_noise: bool,
    /// Seed for initialization, shuffling and selector noise.
    #[arg(long)]
    seed: Option<u64>,
    /// Effective weight below which extraction drops a predicate.
    #[arg(long, default_value_t = DEFAULT_WEIGHT_THRESHOLD)]
    weight_threshold: f64,
}

impl TrainFlags {
    fn config(&self) -> anyhow::Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.clone(), source })?;
                serde_json::from_str(&text).map_err(Error::from)?
            }
            None => TrainConfig::default(),
        };
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.cov_min {
            cfg.cov_min = v;
        }
        if let Some(v) = self.cov_max {
            cfg.cov_max = v;
        }
        if let Some(v) = self.epsilon {
            cfg.epsilon = Schedule { start: v, end: cfg.epsilon.end.min(v) };
        }
        if let Some(v) = self.epsilon_end {
            cfg.epsilon.end = v;
        }
        if self.no_noise {
            cfg.gumbel_noise = false;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainFlags,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainFlags,
    /// Number of stratified folds.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Optional CSV with one row per fold.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// model.json, or a rule list JSON document.
    #[arg(long)]
    model: PathBuf,
    /// Labelled CSV using the training column names.
    #[arg(long)]
    data: PathBuf,
    /// Print the report as metric,key,value CSV instead of text.
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct PredictArgs {
    /// model.json, or a rule list JSON document.
    #[arg(long)]
    model: PathBuf,
    /// CSV using the training column names; the label column is optional.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Feature count.
    #[arg(long, default_value_t = 20)]
    d: usize,
    /// Sample count.
    #[arg(long, default_value_t = 5000)]
    n: usize,
    /// Expected fraction of samples each rule covers.
    #[arg(long, default_value_t = 0.1)]
    s: f64,
    /// Ground-truth rule count.
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Predicates per rule.
    #[arg(long, default_value_t = 2)]
    m: usize,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for data.csv, truth.txt and truth.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Feature count.
    #[arg(long, default_value_t = 6)]
    features: usize,
    /// Rule count including the default rule.
    #[arg(long = "rules", default_value_t = 4)]
    rules: usize,
    /// Class count.
    #[arg(long, default_value_t = 2)]
    classes: usize,
    /// Random models and minibatches to check.
    #[arg(long, default_value_t = 1000)]
    probes: usize,
    /// Predicate temperature.
    #[arg(long, default_value_t = 0.1)]
    t_pred: f64,
    /// Rule-list temperature.
    #[arg(long, default_value_t = 0.2)]
    t_list: f64,
    /// Seed for the probe models.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NEURULES_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(EXIT_INPUT);
        }
    }
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            // library errors already embed their source in the message
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let cause = cause.to_string();
                if !msg.contains(&cause) {
                    msg = format!("{msg}: {cause}");
                }
            }
            eprintln!("error: {msg}");
            match e.downcast_ref::<Error>() {
                Some(Error::TrainingAborted { .. }) => ExitCode::from(EXIT_ABORTED),
                _ => ExitCode::from(EXIT_INPUT),
            }
        }
    }
}

fn create_dir(path: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    Ok(())
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<ExitCode> {
    let cfg = a.train.config()?;
    let data = load_csv(&a.data.data, &a.data.label)?;
    let (params, report) = train(&data, &cfg, a.train.rules)?;
    let rule_list = extract(&params, &data, a.train.weight_threshold)?;
    let text = render_text(&rule_list);

    create_dir(&a.out)?;
    ModelDocument::new(data.schema.clone(), cfg, params, rule_list).save(a.out.join("model.json"))?;
    write_file(&a.out.join("rules.txt"), &text)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    write_file(&a.out.join("report.csv"), &String::from_utf8(csv)?)?;
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_cv(a: CvArgs) -> anyhow::Result<ExitCode> {
    let cfg = a.train.config()?;
    let data = load_csv(&a.data.data, &a.data.label)?;
    let folds = stratified_kfold(&data.labels, a.folds, cfg.seed)?;
    let mut lines = vec!["fold,weighted_f1,accuracy,rules".to_string()];
    let mut scores = Vec::with_capacity(folds.len());
    for (f, (train_idx, test_idx)) in folds.iter().enumerate() {
        let train_set = data.subset(train_idx);
        let test_set = data.subset(test_idx);
        let (params, _) = train(&train_set, &cfg, a.train.rules)?;
        let rl = extract(&params, &train_set, a.train.weight_threshold)?;
        let rows: Vec<Vec<f64>> = (0..test_set.n_rows()).map(|i| test_set.raw_row(i)).collect();
        let r = evaluate(&rl, &rows, &test_set.labels)?;
        println!("fold {f}: weighted F1 {:.4}, accuracy {:.4}, {} rules", r.weighted_f1, r.accuracy, rl.rules.len());
        lines.push(format!("{f},{},{},{}", r.weighted_f1, r.accuracy, rl.rules.len()));
        scores.push(r.weighted_f1);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let sd = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    println!("weighted F1 {mean:.4} ± {sd:.4}");
    if let Some(out) = &a.out {
        write_file(out, &(lines.join("\n") + "\n"))?;
    }
    Ok(ExitCode::SUCCESS)
}

/// Reads either a full model document or a bare rule list.
fn load_rule_list(path: &Path) -> anyhow::Result<HardRuleList> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(Error::from)?;
    let format = value.get("format").and_then(|f| f.as_str()).unwrap_or_default();
    if format == RULELIST_FORMAT {
        Ok(HardRuleList::from_json(&text)?)
    } else {
        // reports a version error for anything else, including older models
        Ok(ModelDocument::from_json(&text)
            .with_context(|| format!("{} is not a {MODEL_FORMAT} document", path.display()))?
            .rule_list)
    }
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<ExitCode> {
    let rl = load_rule_list(&a.model)?;
    let schema = rl.schema();
    let (rows, labels) = load_csv_with_schema(&a.data, &schema)?;
    let labels = labels.ok_or_else(|| Error::Data(format!("{} has no {:?} column", a.data.display(), schema.label)))?;
    let report: EvalReport = evaluate(&rl, &rows, &labels)?;
    if a.csv {
        report.write_csv(std::io::stdout().lock())?;
    } else {
        print!("{}", report.to_text(&rl.classes));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_predict(a: PredictArgs) -> anyhow::Result<ExitCode> {
    let rl = load_rule_list(&a.model)?;
    let (rows, _) = load_csv_with_schema(&a.data, &rl.schema())?;
    let mut out = String::from("row,class,rule\n");
    for (i, x) in rows.iter().enumerate() {
        let p = hard_predict(&rl, x)?;
        let rule = if p.rule < rl.rules.len() { p.rule.to_string() } else { "default".into() };
        out.push_str(&format!("{i},{},{rule}\n", rl.classes[p.class]));
    }
    print!("{out}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_synth(a: SynthArgs) -> anyhow::Result<ExitCode> {
    let spec = SyntheticSpec { d: a.d, n: a.n, s: a.s, k: a.k, m: a.m, seed: a.seed };
    let synth = generate(&spec)?;
    create_dir(&a.out)?;
    synth.dataset.write_csv(a.out.join("data.csv"))?;
    let text = render_text(&synth.ground_truth);
    write_file(&a.out.join("truth.txt"), &text)?;
    write_file(&a.out.join("truth.json"), &synth.ground_truth.to_json()?)?;
    let counts = synth.dataset.class_counts();
    println!("class balance: {} of class 0, {} of class 1", counts[0], counts[1]);
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(a: GradcheckArgs) -> anyhow::Result<ExitCode> {
    let dims = Dims::new(a.features, a.rules, a.classes)?;
    let cfg = GradCheckConfig { pred_temp: a.t_pred, list_temp: a.t_list, seed: a.seed, ..Default::default() };
    let err = gradient_check(dims, &cfg, a.probes)?;
    let ok = err < GRADCHECK_TOLERANCE;
    println!(
        "max relative error {err:.3e} over {} probes ({})",
        a.probes,
        if ok { "pass" } else { "FAIL" }
    );
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(EXIT_GRADCHECK) })
}
