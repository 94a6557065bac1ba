use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use phode::checkpoint;
use phode::config::ExperimentConfig;
use phode::experiment::{self, Event, Layout};
use phode::models::Variant;
use phode::simlab::{Dataset, Task};
use phode::trainer::{self, ErrorKind, MetricsReport};
use phode::{Error, Result};

/// Learn dissipative port-Hamiltonian dynamics from trajectory data.
#[derive(Parser)]
#[command(name = "phode", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the train/test trajectories of a task.
    Generate(Common),
    /// Train one or more variants on the task's dataset.
    Train(Common),
    /// Report train/test/pred errors of saved checkpoints.
    Evaluate(Common),
    /// Generate data, train every variant and write the comparison table.
    Experiment(Common),
    /// Write learned-function and phase-portrait files from saved checkpoints.
    Plotdata(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Task id (1-4) or name.
    #[arg(long)]
    task: Option<Task>,
    /// Model variant; repeat for several.
    #[arg(long = "variant")]
    variants: Vec<Variant>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output root holding data/, checkpoints/, reports/ and plotdata/.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the number of training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Print the loss every this many epochs (0 disables).
    #[arg(long, default_value_t = 50)]
    log_every: usize,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(task) = self.task {
            cfg.task = task;
        }
        if !self.variants.is_empty() {
            cfg.variants = self.variants.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(epochs) = self.epochs {
            cfg.train.epochs = epochs;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Read the task's dataset from the output tree, generating it when absent.
fn dataset(cfg: &ExperimentConfig, layout: &Layout) -> Result<Dataset> {
    let path = layout.dataset(cfg.task);
    if path.exists() {
        let ds = Dataset::read(&path)?;
        if ds.task != cfg.task {
            return Err(Error::Config(format!("{} holds task {} data", path.display(), ds.task.id())));
        }
        return Ok(ds);
    }
    let (ds, digest) = experiment::prepare_dataset(cfg, layout)?;
    eprintln!("generated {} (sha256 {digest})", path.display());
    Ok(ds)
}

fn print_report(m: &MetricsReport) {
    println!(
        "{:<26} params {:>7}  train {:.3e} ± {:.2e}  test {:.3e} ± {:.2e}  pred {:.3e} ± {:.2e}",
        m.variant, m.parameters, m.train.mean, m.train.std, m.test.mean, m.test.std, m.pred.mean, m.pred.std
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => {
            let cfg = args.config()?;
            let layout = Layout::new(&cfg.out);
            let (ds, digest) = experiment::prepare_dataset(&cfg, &layout)?;
            println!(
                "{}: {} train / {} test trajectories, sha256 {digest}",
                layout.dataset(cfg.task).display(),
                ds.train.len(),
                ds.test.len()
            );
        }
        Command::Train(args) => {
            let cfg = args.config()?;
            let layout = Layout::new(&cfg.out);
            let ds = dataset(&cfg, &layout)?;
            for variant in cfg.variants() {
                let log = args.log_every;
                let (outcome, report) = experiment::train_variant(&cfg, &layout, &ds, variant, |r| {
                    if log > 0 && (r.epoch == 1 || r.epoch % log == 0) {
                        eprintln!("{variant} epoch {} loss {:.4e}", r.epoch, r.train_loss);
                    }
                })?;
                eprintln!("{variant}: best epoch {} in {:.1}s", outcome.best_epoch, outcome.seconds);
                print_report(&report);
            }
        }
        Command::Evaluate(args) => {
            let cfg = args.config()?;
            let layout = Layout::new(&cfg.out);
            let ds = dataset(&cfg, &layout)?;
            let tc = experiment::train_config(&cfg);
            let mut found = 0;
            for variant in cfg.variants() {
                let path = layout.checkpoint(cfg.task, variant);
                if !path.exists() && args.variants.is_empty() {
                    continue;
                }
                let model = checkpoint::load(&path)?;
                found += 1;
                let stat = |kind| trainer::evaluate(&model, &ds, &cfg.systems, kind, &tc, cfg.data.substeps);
                let report = MetricsReport {
                    variant: variant.to_string(),
                    task: cfg.task.id(),
                    parameters: model.param_count(),
                    train: stat(ErrorKind::Train)?,
                    test: stat(ErrorKind::Test)?,
                    pred: stat(ErrorKind::Pred)?,
                    normalization: trainer::NORMALIZATION.into(),
                    epochs: 0,
                    best_epoch: 0,
                    seconds: 0.0,
                };
                print_report(&report);
            }
            if found == 0 {
                return Err(Error::Config(format!("no checkpoints under {}", layout.checkpoints().display())));
            }
        }
        Command::Experiment(args) => {
            let cfg = args.config()?;
            let log = args.log_every;
            let summary = experiment::run_experiment(&cfg, |ev| match ev {
                Event::Dataset { path, digest } => eprintln!("dataset {} (sha256 {digest})", path.display()),
                Event::Started { variant, parameters } => eprintln!("training {variant} ({parameters} parameters)"),
                Event::Epoch { variant, record } if log > 0 && (record.epoch == 1 || record.epoch % log == 0) => {
                    eprintln!("{variant} epoch {} loss {:.4e}", record.epoch, record.train_loss)
                }
                Event::Epoch { .. } => {}
                Event::Finished { variant, report } => eprintln!("{variant} done in {:.1}s", report.seconds),
                Event::Failed { variant, error } => eprintln!("{variant} failed: error[{}]: {error}", error.category()),
            })?;
            print!("{}", summary.table.to_text());
            eprintln!("wrote {} files under {}", summary.files.len(), cfg.out.display());
        }
        Command::Plotdata(args) => {
            let cfg = args.config()?;
            let layout = Layout::new(&cfg.out);
            let h = dataset(&cfg, &layout)?.h;
            let mut models = Vec::new();
            for variant in cfg.variants() {
                let path = layout.checkpoint(cfg.task, variant);
                if path.exists() {
                    models.push((variant.to_string(), checkpoint::load(&path)?));
                } else if !args.variants.is_empty() {
                    return Err(Error::Config(format!("no checkpoint at {}", path.display())));
                }
            }
            let truth = experiment::truth_model(&cfg)?;
            let mut refs: Vec<_> = truth.iter().map(|m| ("truth".to_string(), m)).collect();
            refs.extend(models.iter().map(|(l, m)| (l.clone(), m)));
            for path in experiment::write_plotdata(&cfg, &layout, h, &refs)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
