//! End-to-end runs: one shared dataset, every variant trained and evaluated,
//! a comparison table and plot-ready CSV/SVG artifacts.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::checkpoint;
use crate::config::{ExperimentConfig, PlotConfig};
use crate::error::{Error, Result};
use crate::models::{pendulum_coords, pendulum_truth, DynamicsModel, Representation, Variant};
use crate::plot::{self, Series};
use crate::simlab::{self, generate_dataset, Dataset, Systems, Task};
use crate::trainer::{self, estimate_beta, EpochRecord, MetricsReport, Recovery, TrainConfig, TrainOutcome};
use crate::Real;

/// Output tree under one root directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn plotdata(&self) -> PathBuf {
        self.root.join("plotdata")
    }

    pub fn dataset(&self, task: Task) -> PathBuf {
        self.data().join(format!("task{}-{}.csv", task.id(), task.name()))
    }

    pub fn checkpoint(&self, task: Task, variant: Variant) -> PathBuf {
        self.checkpoints().join(format!("task{}-{variant}.json", task.id()))
    }

    pub fn history(&self, task: Task, variant: Variant) -> PathBuf {
        self.reports().join(format!("task{}-{variant}-history.csv", task.id()))
    }

    pub fn metrics(&self, task: Task, variant: Variant) -> PathBuf {
        self.reports().join(format!("task{}-{variant}-metrics.json", task.id()))
    }

    pub fn table(&self, task: Task, ext: &str) -> PathBuf {
        self.reports().join(format!("task{}-table.{ext}", task.id()))
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Generate the task's dataset, write it, and return it re-read from the
/// written text together with the text's digest.
pub fn prepare_dataset(cfg: &ExperimentConfig, layout: &Layout) -> Result<(Dataset, String)> {
    let text = generate_dataset(cfg.task, &cfg.data, &cfg.systems, cfg.seed)?.to_csv();
    write_file(&layout.dataset(cfg.task), &text)?;
    Ok((Dataset::from_csv(&text)?, sha256_hex(text.as_bytes())))
}

/// Freshly initialized model; each variant draws from its own stream.
pub fn init_model(cfg: &ExperimentConfig, variant: Variant) -> Result<DynamicsModel<Real>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let slot = Variant::ALL.iter().position(|v| *v == variant).unwrap_or(0);
    rng.set_stream(16 + slot as u64);
    DynamicsModel::new(cfg.model.spec(variant, cfg.task), &mut rng)
}

/// Training settings of an experiment: the shuffle seed follows the experiment seed.
pub fn train_config(cfg: &ExperimentConfig) -> TrainConfig {
    TrainConfig { seed: cfg.seed, ..cfg.train.clone() }
}

/// Train one variant, evaluate it and write its checkpoint, history and metrics.
pub fn train_variant(
    cfg: &ExperimentConfig,
    layout: &Layout,
    dataset: &Dataset,
    variant: Variant,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(TrainOutcome, MetricsReport)> {
    let tc = train_config(cfg);
    let outcome = trainer::train(init_model(cfg, variant)?, dataset, &tc, on_epoch)?;
    let report = MetricsReport::collect(&outcome, dataset, &cfg.systems, &tc, cfg.data.substeps)?;
    checkpoint::save(&outcome.model, &layout.checkpoint(cfg.task, variant))?;
    write_file(&layout.history(cfg.task, variant), outcome.history_csv())?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
    write_file(&layout.metrics(cfg.task, variant), json + "\n")?;
    Ok((outcome, report))
}

/// One table row: a variant and its metrics, or the reason it failed.
#[derive(Clone, Debug)]
pub struct Row {
    pub variant: Variant,
    pub parameters: Option<usize>,
    pub result: std::result::Result<MetricsReport, String>,
}

impl Row {
    pub fn report(&self) -> Option<&MetricsReport> {
        self.result.as_ref().ok()
    }
}

#[derive(Clone, Debug)]
pub struct Table {
    pub task: Task,
    pub dataset_digest: String,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn row(&self, variant: Variant) -> Option<&Row> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    fn footer(&self) -> String {
        format!("# task={} dataset_sha256={}\n", self.task.id(), self.dataset_digest)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,parameters,train_mean,train_std,test_mean,test_std,pred_mean,pred_std,status\n");
        for r in &self.rows {
            let params = r.parameters.map(|p| p.to_string()).unwrap_or_default();
            match &r.result {
                Ok(m) => {
                    let _ = writeln!(
                        s,
                        "{},{params},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},ok",
                        r.variant, m.train.mean, m.train.std, m.test.mean, m.test.std, m.pred.mean, m.pred.std
                    );
                }
                Err(e) => {
                    let _ = writeln!(s, "{},{params},,,,,,,\"failed: {}\"", r.variant, e.replace('"', "'"));
                }
            }
        }
        s + &self.footer()
    }

    pub fn to_text(&self) -> String {
        let cell = |m: &trainer::Stats| format!("{:.3e} ± {:.2e}", m.mean, m.std);
        let mut lines = vec![["variant".to_string(), "#params".into(), "train".into(), "test".into(), "pred".into()]];
        for r in &self.rows {
            let params = r.parameters.map(|p| p.to_string()).unwrap_or_else(|| "-".into());
            lines.push(match &r.result {
                Ok(m) => [r.variant.to_string(), params, cell(&m.train), cell(&m.test), cell(&m.pred)],
                Err(e) => [r.variant.to_string(), params, format!("failed: {e}"), String::new(), String::new()],
            });
        }
        let mut widths = [0usize; 5];
        for l in &lines {
            for (w, c) in widths.iter_mut().zip(l) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut s = format!("Task {} ({}), errors as mean ± std over trajectories\n", self.task.id(), self.task.name());
        for (i, l) in lines.iter().enumerate() {
            let mut line = String::new();
            for (k, (w, c)) in widths.iter().zip(l).enumerate() {
                let pad = w - c.chars().count();
                if k == 1 {
                    line += &" ".repeat(pad);
                    line += c;
                } else {
                    line += c;
                    line += &" ".repeat(pad);
                }
                line += "  ";
            }
            s += line.trim_end();
            s.push('\n');
            if i == 0 {
                s += &"-".repeat(widths.iter().sum::<usize>() + 8);
                s.push('\n');
            }
        }
        s + &self.footer()
    }
}

/// Progress notifications of [`run_experiment`].
#[derive(Debug)]
pub enum Event<'a> {
    Dataset { path: &'a Path, digest: &'a str },
    Started { variant: Variant, parameters: usize },
    Epoch { variant: Variant, record: &'a EpochRecord },
    Finished { variant: Variant, report: &'a MetricsReport },
    Failed { variant: Variant, error: &'a Error },
}

#[derive(Clone, Debug)]
pub struct ExperimentSummary {
    pub table: Table,
    /// Every file written by the run except the loss histories and metrics records.
    pub files: Vec<PathBuf>,
}

/// Run every configured variant on one shared dataset.
pub fn run_experiment(cfg: &ExperimentConfig, mut progress: impl FnMut(Event<'_>)) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.out);
    let (dataset, digest) = prepare_dataset(cfg, &layout)?;
    let data_path = layout.dataset(cfg.task);
    progress(Event::Dataset { path: &data_path, digest: &digest });
    let mut files = vec![data_path];
    let mut rows = Vec::new();
    let mut trained = Vec::new();
    for variant in cfg.variants() {
        let parameters = init_model(cfg, variant).ok().map(|m| m.param_count());
        progress(Event::Started { variant, parameters: parameters.unwrap_or(0) });
        let run = train_variant(cfg, &layout, &dataset, variant, |r| progress(Event::Epoch { variant, record: r }));
        match run {
            Ok((outcome, report)) => {
                progress(Event::Finished { variant, report: &report });
                files.push(layout.checkpoint(cfg.task, variant));
                trained.push((variant, outcome.model));
                rows.push(Row { variant, parameters, result: Ok(report) });
            }
            Err(e) => {
                progress(Event::Failed { variant, error: &e });
                rows.push(Row { variant, parameters, result: Err(format!("{} ({})", e, e.category())) });
            }
        }
    }
    let table = Table { task: cfg.task, dataset_digest: digest, rows };
    for (ext, body) in [("csv", table.to_csv()), ("txt", table.to_text())] {
        let path = layout.table(cfg.task, ext);
        write_file(&path, body)?;
        files.push(path);
    }
    let truth = truth_model(cfg)?;
    let mut models: Vec<(String, &DynamicsModel<Real>)> = truth.iter().map(|m| ("truth".to_string(), m)).collect();
    models.extend(trained.iter().map(|(v, m)| (v.to_string(), m)));
    files.extend(write_plotdata(cfg, &layout, dataset.h, &models)?);
    Ok(ExperimentSummary { table, files })
}

/// The known structured model of a pendulum task, used as a plot reference.
pub fn truth_model(cfg: &ExperimentConfig) -> Result<Option<DynamicsModel<Real>>> {
    if cfg.task.dims().dof() != 1 {
        return Ok(None);
    }
    pendulum_truth(cfg.task.representation(), cfg.systems.pendulum).map(Some)
}

/// Learned-function and phase-portrait files for every model that supports them.
pub fn write_plotdata(
    cfg: &ExperimentConfig,
    layout: &Layout,
    h: Real,
    models: &[(String, &DynamicsModel<Real>)],
) -> Result<Vec<PathBuf>> {
    let dir = layout.plotdata();
    let prefix = format!("task{}", cfg.task.id());
    let mut files = Vec::new();
    let mut put = |name: String, body: &str| -> Result<()> {
        let path = dir.join(name);
        write_file(&path, body)?;
        files.push(path);
        Ok(())
    };
    for (label, model) in models {
        match emit_learned_functions(model, cfg.task, &cfg.systems, &cfg.plots) {
            Ok(curves) => {
                put(format!("{prefix}-{label}-functions.csv"), &curves.csv)?;
                for (name, svg) in &curves.svgs {
                    put(format!("{prefix}-{label}-{name}.svg"), svg)?;
                }
            }
            Err(Error::InvalidModel(_)) => {}
            Err(e) => return Err(e),
        }
        if cfg.task.representation() == Representation::Phase && cfg.task.dims().dof() == 1 {
            let p = emit_phase_portrait(model, cfg.task, &cfg.systems, &cfg.plots, h, cfg.train.substeps, cfg.data.substeps)?;
            put(format!("{prefix}-{label}-field.csv"), &p.field_csv)?;
            put(format!("{prefix}-{label}-trajectory.csv"), &p.trajectory_csv)?;
            put(format!("{prefix}-{label}-portrait.svg"), &p.svg)?;
        }
    }
    Ok(files)
}

/// Uniform grid of `n ≥ 2` points over `[lo, hi]`.
pub fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Approximator inputs sweeping the first angle (or the single coordinate)
/// with every other coordinate at zero.
pub fn sweep_coords(task: Task, angles: &[f64]) -> Result<Tensor<Real>> {
    let dims = task.dims();
    if dims.dof() == 1 {
        return pendulum_coords(task.representation(), angles);
    }
    let (n, m) = (dims.translational, dims.angular);
    let width = dims.coord_width();
    let mut data = Vec::with_capacity(angles.len() * width);
    for &a in angles {
        let mut row = vec![0.0; width];
        for k in 0..m {
            row[n + k] = 1.0;
        }
        row[n] = a.cos();
        row[n + m] = a.sin();
        data.extend(row);
    }
    Tensor::matrix(angles.len(), width, data)
}

pub struct LearnedCurves {
    pub beta: Option<f64>,
    pub csv: String,
    /// `(name, svg)` per curve pair.
    pub svgs: Vec<(String, String)>,
}

/// Learned `M⁻¹`, `V`, `g`, `D` over an angle grid on `[-π, π]`, with truth
/// and `β`-rescaled columns for the pendulum tasks.
pub fn emit_learned_functions(
    model: &DynamicsModel<Real>,
    task: Task,
    systems: &Systems,
    plots: &PlotConfig,
) -> Result<LearnedCurves> {
    let q = grid(-PI, PI, plots.grid_points);
    let coords = sweep_coords(task, &q)?;
    let learned = model.functions(&coords)?;
    let columns = |prefix: &str, t: &Tensor<Real>, names: &mut Vec<String>, cols: &mut Vec<Vec<f64>>| {
        let w = t.shape()[1];
        for j in 0..w {
            names.push(if w == 1 { prefix.to_string() } else { format!("{prefix}_{j}") });
            cols.push((0..t.shape()[0]).map(|r| t.row(r)[j]).collect());
        }
    };
    let mut names = vec!["q".to_string()];
    let mut cols = vec![q.clone()];
    columns("mass_inv", &learned.mass_inv, &mut names, &mut cols);
    columns("potential", &learned.potential, &mut names, &mut cols);
    columns("input", &learned.input, &mut names, &mut cols);
    if let Some(d) = &learned.dissipation {
        columns("dissipation", d, &mut names, &mut cols);
    }

    let mut beta = None;
    let mut svgs = Vec::new();
    if task.dims().dof() == 1 {
        let truth = pendulum_truth::<Real>(task.representation(), systems.pendulum)?.functions(&coords)?;
        let b = if task.representation().momentum_observed() {
            1.0
        } else {
            estimate_beta(learned.mass_inv.data(), truth.mass_inv.data())
                .ok_or_else(|| Error::InvalidModel("learned mass inverse vanishes on the grid".into()))?
        };
        let rec = Recovery::new(&learned, &truth, b)?;
        let mut push = |name: &str, v: &[f64]| {
            names.push(name.to_string());
            cols.push(v.to_vec());
        };
        push("truth_mass_inv", truth.mass_inv.data());
        push("truth_potential", truth.potential.data());
        push("truth_input", truth.input.data());
        if let Some(d) = &rec.truth_dissipation {
            push("truth_dissipation_11", d);
        }
        push("scaled_mass_inv", &rec.mass_inv);
        push("scaled_potential_centered", &rec.potential);
        push("truth_potential_centered", &rec.truth_potential);
        push("scaled_input", &rec.input);
        if let Some(d) = &rec.dissipation {
            push("scaled_dissipation_11", d);
        }
        let pairs: [(&str, &[f64], &[f64]); 3] = [
            ("mass_inv", &rec.mass_inv, &rec.truth_mass_inv),
            ("potential", &rec.potential, &rec.truth_potential),
            ("input", &rec.input, &rec.truth_input),
        ];
        let scaled = if b == 1.0 { "learned".to_string() } else { format!("learned, beta={b:.4}") };
        for (name, l, t) in pairs {
            svgs.push((name.to_string(), pair_plot(name, &q, l, t, &scaled)));
        }
        if let (Some(l), Some(t)) = (&rec.dissipation, &rec.truth_dissipation) {
            svgs.push(("dissipation".into(), pair_plot("dissipation (momentum row)", &q, l, t, &scaled)));
        }
        beta = Some(b);
    }

    let mut csv = String::new();
    if let Some(b) = beta {
        let _ = writeln!(csv, "# beta={b:.16e}");
    }
    csv += &names.join(",");
    csv.push('\n');
    for r in 0..q.len() {
        let row: Vec<String> = cols.iter().map(|c| format!("{:.16e}", c[r])).collect();
        csv += &row.join(",");
        csv.push('\n');
    }
    Ok(LearnedCurves { beta, csv, svgs })
}

fn pair_plot(title: &str, q: &[f64], learned: &[f64], truth: &[f64], label: &str) -> String {
    plot::line_plot(title, &[
        Series { label, x: q, y: learned, dashed: false },
        Series { label: "truth", x: q, y: truth, dashed: true },
    ])
}

pub struct Portrait {
    /// `q,p,dq,dp` on the `(q, p)` grid at zero input.
    pub field_csv: String,
    /// `step,time,q,p,truth_q,truth_p` from the shared initial condition.
    pub trajectory_csv: String,
    pub svg: String,
}

/// Vector field and a zero-input trajectory of a phase-space model, next to the truth trajectory.
pub fn emit_phase_portrait(
    model: &DynamicsModel<Real>,
    task: Task,
    systems: &Systems,
    plots: &PlotConfig,
    h: Real,
    substeps: usize,
    truth_substeps: usize,
) -> Result<Portrait> {
    let spec = model.spec();
    if spec.representation != Representation::Phase || spec.dims.dof() != 1 || task.dims() != spec.dims {
        return Err(Error::InvalidModel("phase portraits need a 1-DOF phase-space model".into()));
    }
    let [nq, np] = plots.portrait_grid;
    let qs = grid(-PI, PI, nq);
    let ps = grid(-plots.portrait_momentum, plots.portrait_momentum, np);
    let points: Vec<f64> = qs.iter().flat_map(|&q| ps.iter().flat_map(move |&p| [q, p])).collect();
    let field = model.rhs_values(&Tensor::matrix(nq * np, 2, points.clone())?, &Tensor::zeros(&[nq * np, 1]))?;
    let mut field_csv = String::from("q,p,dq,dp\n");
    let mut arrows = Vec::with_capacity(nq * np);
    for k in 0..nq * np {
        let a = [points[2 * k], points[2 * k + 1], field.data()[2 * k], field.data()[2 * k + 1]];
        let _ = writeln!(field_csv, "{:.16e},{:.16e},{:.16e},{:.16e}", a[0], a[1], a[2], a[3]);
        arrows.push(a);
    }

    let start = plots.portrait_start.to_vec();
    let steps = plots.portrait_steps;
    let learned = trainer::predict(model, &Tensor::matrix(1, 2, start.clone())?, &Tensor::zeros(&[1, 1]), h, steps, substeps);
    let learned: Vec<[f64; 2]> = match learned {
        Ok(states) => states.iter().map(|s| [s.data()[0], s.data()[1]]).collect(),
        Err(Error::NonFinite { .. }) => {
            let mut out = vec![[start[0], start[1]]];
            out.resize(steps + 1, [f64::NAN; 2]);
            out
        }
        Err(e) => return Err(e),
    };
    let truth = simlab::simulate(task, systems, &start, &[0.0], h, steps, truth_substeps)?;
    let mut trajectory_csv = String::from("step,time,q,p,truth_q,truth_p\n");
    for (i, (l, t)) in learned.iter().zip(&truth).enumerate() {
        let _ = writeln!(trajectory_csv, "{i},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", i as f64 * h, l[0], l[1], t[0], t[1]);
    }
    let (lq, lp): (Vec<f64>, Vec<f64>) = learned.iter().map(|s| (s[0], s[1])).unzip();
    let (tq, tp): (Vec<f64>, Vec<f64>) = truth.iter().map(|s| (s[0], s[1])).unzip();
    let svg = plot::vector_field(&format!("{} phase portrait", spec.variant), &arrows, &[
        Series { label: "learned", x: &lq, y: &lp, dashed: false },
        Series { label: "truth", x: &tq, y: &tp, dashed: false },
    ]);
    Ok(Portrait { field_csv, trajectory_csv, svg })
}
