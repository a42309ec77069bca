use std::f64::consts::FRAC_PI_4;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use posekit::ambiguity::analyze as analyze_set;
use posekit::bingham::{fit, project_equatorial};
use posekit::eval::{config_for_m, evaluate, sweep_m};
use posekit::io::{load_hypotheses, load_model, save_model, Dataset};
use posekit::model::{train, ModelSpec, TrainConfig};
use posekit::pipeline::InferenceConfig;
use posekit::robust::mean_shift;
use posekit::toy::{DatasetSpec, ObjectKind, PinholeCamera, ToyObject};

const SEED_ENV: &str = "POSEKIT_SEED";

#[derive(Parser)]
#[command(name = "posekit", version, about = "Multi-hypothesis pose estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset
    Gen(GenArgs),
    /// Train a multi-hypothesis regressor
    Train(TrainArgs),
    /// Evaluate a model on a dataset
    Eval(EvalArgs),
    /// Ambiguity report and clusters for a stored hypothesis set
    Analyze(AnalyzeArgs),
    /// Fit a Bingham distribution and export plot data
    Bingham(BinghamArgs),
    /// Train and evaluate over several hypothesis counts
    SweepM(SweepArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    object: ObjectKind,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Observation noise per entry
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    #[arg(long, default_value_t = 0.5)]
    depth_min: f64,
    #[arg(long, default_value_t = 2.0)]
    depth_max: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    epochs: Option<usize>,
    /// JSON training configuration; missing fields take defaults
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Training log path (default: <out>.log.json)
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Report path; a CSV with one row per sample is written next to it
    #[arg(long)]
    report: PathBuf,
    /// JSON inference configuration; missing fields take defaults
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    hypotheses: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
    /// Mean shift bandwidth, radians
    #[arg(long, default_value_t = FRAC_PI_4)]
    bandwidth: f64,
}

#[derive(Args)]
struct BinghamArgs {
    #[arg(long)]
    hypotheses: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Grid resolution (latitude rows)
    #[arg(long, default_value_t = 32)]
    res: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    /// Held-out dataset; without it the last tenth of --data is held out
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,20,30,40")]
    m_list: Vec<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Analyze(a) => analyze_cmd(a),
        Command::Bingham(a) => bingham_cmd(a),
        Command::SweepM(a) => sweep_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 3 for numerical failures, 2 for everything else (input and configuration).
fn exit_code(err: &anyhow::Error) -> u8 {
    use posekit::Error as E;
    match err.downcast_ref::<posekit::Error>() {
        Some(
            E::Divergence { .. }
            | E::IllConditionedLog { .. }
            | E::DegenerateAxis { .. }
            | E::NonPositiveDepth(_),
        ) => 3,
        _ => 2,
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| posekit::Error::Config(format!("{SEED_ENV} is not an integer: '{v}'")).into()),
        Err(_) => Ok(None),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| {
        posekit::Error::Parse {
            line: e.line(),
            message: format!("{}: {e}", path.display()),
        }
        .into()
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn gen(a: GenArgs) -> Result<()> {
    let seed = a.seed.or(env_seed()?).unwrap_or(0);
    if !(a.depth_min > 0.0 && a.depth_max > a.depth_min) {
        bail!(posekit::Error::Config(format!(
            "depth range must satisfy 0 < min < max, got [{}, {}]",
            a.depth_min, a.depth_max
        )));
    }
    let mut spec = DatasetSpec::default();
    spec.observation.noise_sigma = a.noise;
    spec.observation.depth_range = [a.depth_min, a.depth_max];
    let data = Dataset::generate(ToyObject::new(a.object), a.n, PinholeCamera::default(), spec, seed)?;
    data.save(&a.out)?;
    Ok(())
}

fn train_config(path: Option<&Path>, epochs: Option<usize>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut config: TrainConfig = match path {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(e) = epochs {
        config.epochs = e;
    }
    if let Some(s) = seed.or(env_seed()?) {
        config.seed = s;
    }
    Ok(config)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let data = Dataset::load(&a.data).with_context(|| a.data.display().to_string())?;
    let config = train_config(a.config.as_deref(), a.epochs, a.seed)?;
    let (model, log) = train(&data.samples, ModelSpec::new(a.m), &config)?;
    save_model(&a.out, &model, Some(config))?;
    let log_path = a.log.unwrap_or_else(|| sibling(&a.out, "log.json"));
    write_json(&log_path, &log)?;
    if let Some(last) = log.epochs.last() {
        eprintln!("final epoch loss {:.6}", last.mean_loss);
    }
    Ok(())
}

fn inference_config(path: Option<&Path>, object: ObjectKind, m: usize) -> Result<InferenceConfig> {
    match path {
        Some(p) => Ok(read_json(p)?),
        None => Ok(config_for_m(&InferenceConfig::for_object(object), m)),
    }
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let data = Dataset::load(&a.data).with_context(|| a.data.display().to_string())?;
    let model = load_model(&a.model).with_context(|| a.model.display().to_string())?;
    let obj = &data.header.object;
    let config = inference_config(a.config.as_deref(), obj.id, model.m)?;
    let report = evaluate(&model, obj, &data.samples, &config)?;
    write_json(&a.report, &report)?;
    fs::write(sibling(&a.report, "csv"), report.to_csv())?;
    let g = &report.aggregates;
    println!(
        "samples {}  ADD {:.3}  ADI {:.3}  rot {:.2} deg  trans {:.1} mm",
        g.count, g.add_acc, g.adi_acc, g.mean_rot_err_deg, g.mean_trans_err_mm
    );
    Ok(())
}

fn analyze_cmd(a: AnalyzeArgs) -> Result<()> {
    let hyps = load_hypotheses(&a.hypotheses).with_context(|| a.hypotheses.display().to_string())?;
    let mut config = InferenceConfig::default();
    if let Some(t) = a.threshold {
        config.pca_threshold = t;
    }
    let report = analyze_set(&hyps.rotations, config.rule())?;
    let clusters = if report.ambiguous {
        Some(mean_shift(&hyps.rotations, a.bandwidth)?)
    } else {
        None
    };
    let out = serde_json::json!({ "ambiguity": report, "clusters": clusters });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn bingham_cmd(a: BinghamArgs) -> Result<()> {
    let hyps = load_hypotheses(&a.hypotheses).with_context(|| a.hypotheses.display().to_string())?;
    let params = fit(&hyps.rotations)?;
    let plot = project_equatorial(&params, &hyps.rotations, a.res);
    write_json(&a.out, &plot)?;
    fs::write(sibling(&a.out, "csv"), plot.to_csv())?;
    println!("{}", serde_json::to_string_pretty(&params)?);
    Ok(())
}

fn sweep_cmd(a: SweepArgs) -> Result<()> {
    let data = Dataset::load(&a.data).with_context(|| a.data.display().to_string())?;
    let (train_set, test_set) = match &a.test {
        Some(p) => (data.samples.clone(), Dataset::load(p).with_context(|| p.display().to_string())?.samples),
        None => {
            let cut = data.samples.len() - data.samples.len() / 10;
            if cut == data.samples.len() {
                bail!(posekit::Error::Config("dataset too small to hold out a tenth".into()));
            }
            (data.samples[..cut].to_vec(), data.samples[cut..].to_vec())
        }
    };
    let config = train_config(a.config.as_deref(), a.epochs, None)?;
    let obj = &data.header.object;
    let rows = sweep_m(
        obj,
        &train_set,
        &test_set,
        &a.m_list,
        ModelSpec::new(1).hidden,
        &config,
        &InferenceConfig::for_object(obj.id),
    )?;
    println!("{:>4} {:>9} {:>7} {:>7} {:>9} {:>8}", "M", "threshold", "ADD", "ADI", "rot_deg", "amb_acc");
    for r in &rows {
        let g = &r.aggregates;
        let amb = g
            .ambiguity
            .acc_ambiguous
            .map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
        println!(
            "{:>4} {:>9.3} {:>7.3} {:>7.3} {:>9.2} {:>8}",
            r.m, r.pca_threshold, g.add_acc, g.adi_acc, g.mean_rot_err_deg, amb
        );
    }
    if let Some(out) = &a.out {
        write_json(out, &rows)?;
    }
    Ok(())
}
