use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sadgan::datalog::{self, balance_split, collect, read_dataset, Policy};
use sadgan::models::{Models, NetConfig};
use sadgan::numerics::gradcheck::standard_suite;
use sadgan::numerics::Hyperparams;
use sadgan::planner::{drive, DriveMode, LearnedModel};
use sadgan::roadworld::WorldConfig;
use sadgan::training::{emit_loss_csv, eval_classifier, eval_generator, train_classifier, train_gan, TrainOptions};
use sadgan_session::{Advisor, ServerConfig};

#[derive(Parser)]
#[command(name = "sadgan", version, about = "Next-frame GAN, key-press classifier and safe-depth planner on a toy road")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll the simulator under a policy and write a dataset file.
    Collect(CollectArgs),
    /// Host live driving sessions over WebSocket.
    Serve(ServeArgs),
    /// Train generator and discriminator.
    TrainGan(TrainGanArgs),
    /// Balance-split a dataset and train the key-press classifier.
    TrainCls(TrainClsArgs),
    /// Report generator MAE and classifier accuracy on a dataset.
    Eval(EvalArgs),
    /// Drive one closed-loop episode with the planner.
    Drive(DriveArgs),
    /// Finite-difference check of every layer's gradients.
    Gradcheck,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum PolicyArg {
    Teacher,
}

#[derive(Clone, Copy, Debug, Default, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum WorldArg {
    #[default]
    Default,
    Straight,
    ObstacleFree,
}

impl WorldArg {
    fn config(self) -> WorldConfig {
        match self {
            WorldArg::Default => WorldConfig::default(),
            WorldArg::Straight => WorldConfig::straight(),
            WorldArg::ObstacleFree => WorldConfig::obstacle_free(),
        }
    }
}

#[derive(Args, Serialize)]
struct CollectArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    steps: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "teacher")]
    policy: PolicyArg,
    #[arg(long, value_enum, default_value = "default")]
    world: WorldArg,
}

#[derive(Args, Serialize)]
struct ModelArgs {
    #[arg(long)]
    gen: Option<PathBuf>,
    #[arg(long)]
    cls: Option<PathBuf>,
    /// The checkpoints were trained with one conv trunk shared across networks.
    #[arg(long)]
    shared_trunk: bool,
}

impl ModelArgs {
    fn load(&self) -> Result<Models> {
        let (Some(gen), Some(cls)) = (&self.gen, &self.cls) else {
            return Err(sadgan::Error::ModelUnavailable("both --gen and --cls are required".into()).into());
        };
        Ok(Models::load_predictors(&net_config(self.shared_trunk, &Hyperparams::default()), gen, cls)?)
    }
}

#[derive(Args, Serialize)]
struct ServeArgs {
    #[arg(long, default_value_t = 8765)]
    port: u16,
    #[command(flatten)]
    models: ModelArgs,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    /// Advise from the true simulator instead of checkpoints.
    #[arg(long)]
    oracle: bool,
    #[arg(long, default_value = "sessions")]
    log_dir: PathBuf,
    #[arg(long, value_enum, default_value = "default")]
    world: WorldArg,
}

#[derive(Args, Serialize)]
struct TrainCommon {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    shared_trunk: bool,
    #[arg(long)]
    quiet: bool,
}

impl TrainCommon {
    fn options(&self) -> TrainOptions {
        TrainOptions {
            max_steps: self.max_steps,
            checkpoint_dir: Some(self.out.clone()),
            verbose: !self.quiet,
        }
    }
}

#[derive(Args, Serialize)]
struct TrainGanArgs {
    #[command(flatten)]
    common: TrainCommon,
    #[arg(long, default_value_t = 0.002)]
    lr: f64,
    /// L1 reconstruction weight; 0 trains purely adversarially.
    #[arg(long, default_value_t = 10.0)]
    l1: f64,
    /// Discriminator sees only the candidate next frame.
    #[arg(long)]
    unconditional_disc: bool,
}

#[derive(Args, Serialize)]
struct TrainClsArgs {
    #[command(flatten)]
    common: TrainCommon,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Drop crash transitions before splitting.
    #[arg(long)]
    safe_only: bool,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    models: ModelArgs,
}

#[derive(Args, Serialize)]
struct DriveArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    #[command(flatten)]
    models: ModelArgs,
    #[arg(long)]
    oracle: bool,
    /// Episode CSV path; the report goes to stdout as well.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "default")]
    world: WorldArg,
}

fn net_config(shared_trunk: bool, hp: &Hyperparams) -> NetConfig {
    NetConfig {
        shared_trunk,
        ..NetConfig::from_hyperparams(hp)
    }
}

/// Write the resolved run configuration as JSON at `path`.
fn echo_config(path: &Path, command: &str, args: &impl Serialize, resolved: serde_json::Value) -> Result<()> {
    let doc = serde_json::json!({ "command": command, "args": args, "resolved": resolved });
    std::fs::write(path, serde_json::to_string_pretty(&doc)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".config.json");
    path.with_file_name(name)
}

fn run_collect(a: &CollectArgs) -> Result<()> {
    let config = a.world.config();
    let summary = collect(a.seed, a.steps, &config, &Policy::Teacher, &a.out)?;
    echo_config(&sidecar(&a.out), "collect", a, serde_json::json!({ "world": config }))?;
    println!(
        "{} transitions (left {}, up {}, right {}), {} crashes -> {}",
        summary.records,
        summary.per_action[0],
        summary.per_action[1],
        summary.per_action[2],
        summary.crashes,
        a.out.display()
    );
    Ok(())
}

fn hyperparams(c: &TrainCommon, lr: f64, l1: f64) -> Hyperparams {
    Hyperparams {
        learning_rate: lr,
        batch_size: c.batch,
        l1_weight: l1,
        epochs: c.epochs,
        seed: c.seed,
        ..Hyperparams::default()
    }
}

fn run_train_gan(a: &TrainGanArgs) -> Result<()> {
    let c = &a.common;
    let hp = hyperparams(c, a.lr, a.l1);
    let net = NetConfig {
        conditional_disc: !a.unconditional_disc,
        ..net_config(c.shared_trunk, &hp)
    };
    std::fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    echo_config(
        &c.out.join("train-gan.config.json"),
        "train-gan",
        a,
        serde_json::json!({ "hyperparams": hp, "net": net }),
    )?;
    let data = read_dataset(&c.data)?;
    let models = Models::new(&net, hp.seed)?;
    let report = train_gan(&data, &models.generator, &models.discriminator, &hp, &c.options())?;
    emit_loss_csv(&report, &c.out.join("gan-loss.csv"))?;
    println!("{} steps in {:.1}s, best epoch {:?}", report.steps, report.wall_seconds, report.best_epoch);
    Ok(())
}

fn run_train_cls(a: &TrainClsArgs) -> Result<()> {
    let c = &a.common;
    let hp = hyperparams(c, a.lr, 0.0);
    let net = net_config(c.shared_trunk, &hp);
    std::fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    echo_config(
        &c.out.join("train-cls.config.json"),
        "train-cls",
        a,
        serde_json::json!({ "hyperparams": hp, "net": net }),
    )?;
    let mut data = read_dataset(&c.data)?;
    if a.safe_only {
        data = datalog::safe_only(data);
    }
    let (train, test) = balance_split(&data, a.per_class, a.test_fraction, hp.seed)?;
    let models = Models::new(&net, hp.seed)?;
    let report = train_classifier(&train, &models.classifier, &hp, &c.options())?;
    emit_loss_csv(&report, &c.out.join("cls-loss.csv"))?;
    println!("{} steps in {:.1}s, best epoch {:?}", report.steps, report.wall_seconds, report.best_epoch);
    if !test.is_empty() {
        let e = eval_classifier(&test, &models.classifier)?;
        println!("held-out accuracy {:.4} on {} pairs", e.accuracy, test.len());
    }
    Ok(())
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let models = a.models.load()?;
    let data = read_dataset(&a.data)?;
    let g = eval_generator(&data, &models.generator)?;
    let c = eval_classifier(&data, &models.classifier)?;
    println!(
        "generator mae {:.6}  identity baseline {:.6}  ratio {:.3}",
        g.mae,
        g.identity_baseline_mae,
        g.mae / g.identity_baseline_mae
    );
    println!("classifier accuracy {:.4} on {} pairs", c.accuracy, data.len());
    println!("confusion (rows true, cols predicted: left up right)");
    for (action, row) in ["left", "up", "right"].iter().zip(c.confusion) {
        println!("  {action:>5} {:>6} {:>6} {:>6}", row[0], row[1], row[2]);
    }
    Ok(())
}

fn run_drive(a: &DriveArgs) -> Result<()> {
    let config = a.world.config();
    let models = if a.oracle { None } else { Some(a.models.load()?) };
    let mode = match &models {
        Some(m) => DriveMode::Learned(LearnedModel::new(&m.generator, &m.classifier)),
        None => DriveMode::Oracle,
    };
    let report = drive(a.seed, a.steps, a.depth, &config, &mode)?;
    if let Some(out) = &a.out {
        report.write_csv(out)?;
        echo_config(&sidecar(out), "drive", a, serde_json::json!({ "world": config }))?;
    }
    let crash = report.crash.map_or("none".to_string(), |h| format!("{h:?}"));
    println!("survived {} of {} steps, crash: {crash}", report.survived, a.steps);
    Ok(())
}

fn run_serve(a: &ServeArgs) -> Result<()> {
    let advisor = if a.oracle {
        Some(Advisor::Oracle { depth: a.depth })
    } else if a.models.gen.is_some() || a.models.cls.is_some() {
        Some(Advisor::Learned {
            models: a.models.load()?,
            depth: a.depth,
        })
    } else {
        None
    };
    let config = ServerConfig {
        world: a.world.config(),
        log_dir: a.log_dir.clone(),
        advisor,
    };
    sadgan_session::serve(a.port, config)?;
    Ok(())
}

/// Returns whether every layer passed.
fn run_gradcheck() -> Result<bool> {
    let reports = standard_suite()?;
    println!("{:<24} {:>14} {:>10} {:>8}", "layer", "max rel err", "tolerance", "result");
    for r in &reports {
        println!(
            "{:<24} {:>14.3e} {:>10.0e} {:>8}",
            r.name,
            r.max_rel_error,
            r.tolerance,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    Ok(reports.iter().all(|r| r.passed()))
}

/// Missing inputs count as usage errors.
fn is_usage_error(e: &anyhow::Error) -> bool {
    match e.downcast_ref::<sadgan::Error>() {
        Some(sadgan::Error::ModelUnavailable(_)) => true,
        Some(sadgan::Error::Io { source, .. }) => source.kind() == std::io::ErrorKind::NotFound,
        _ => false,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Collect(a) => run_collect(a),
        Command::Serve(a) => run_serve(a),
        Command::TrainGan(a) => run_train_gan(a),
        Command::TrainCls(a) => run_train_cls(a),
        Command::Eval(a) => run_eval(a),
        Command::Drive(a) => run_drive(a),
        Command::Gradcheck => match run_gradcheck() {
            Ok(true) => Ok(()),
            Ok(false) => {
                eprintln!("gradient check failed");
                return ExitCode::from(1);
            }
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage_error(&e) { 2 } else { 1 })
        }
    }
}
