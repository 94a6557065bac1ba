//! Windowed rollout loss, Adam, training loop and evaluation metrics.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::models::{DynamicsModel, FunctionValues};
use crate::nets::ParamStore;
use crate::odeint::{odesolve, AugmentedState};
use crate::scalar::Scalar;
use crate::simlab::{self, Dataset, Systems, Trajectory};
use crate::Real;

/// Normalization used by every loss and error in this module.
pub const NORMALIZATION: &str = "mean over windows, horizon steps and state components";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Prediction horizon of each training window.
    pub tau: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Windows per optimizer step; 0 means full batch.
    pub batch_size: usize,
    /// Test loss is recorded every this many epochs (and at the last one).
    pub eval_every: usize,
    /// RK4 steps per sampling interval in model rollouts.
    pub substeps: usize,
    /// Length of the zero-input rollouts behind the prediction error.
    pub pred_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 3,
            epochs: 1000,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 0,
            eval_every: 50,
            substeps: 1,
            pred_steps: 40,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, samples: usize) -> Result<()> {
        if self.tau == 0 || self.tau >= samples {
            return Err(Error::Config(format!("tau must lie in [1, {}), got {}", samples, self.tau)));
        }
        if !(self.learning_rate > 0.0) || self.substeps == 0 || self.pred_steps == 0 {
            return Err(Error::Config("learning rate, substeps and pred_steps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam decay rates must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Bias-corrected Adam moments for every parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>, beta1: T, beta2: T, epsilon: T) -> Self {
        let zeros: Vec<Tensor<T>> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self { m: zeros.clone(), v: zeros, step: 0, beta1, beta2, epsilon }
    }

    /// One update of `params` in place.
    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], lr: T) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::ShapeMismatch { op: "adam", shapes: vec![vec![params.len()], vec![grads.len()]] });
        }
        self.step += 1;
        let t = self.step as i32;
        let one = T::one();
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        for (idx, g) in grads.iter().enumerate() {
            let p = params.get_mut(idx);
            if g.shape() != p.value.shape() {
                return Err(Error::ShapeMismatch { op: "adam", shapes: vec![p.value.shape().to_vec(), g.shape().to_vec()] });
            }
            let (m, v) = (self.m[idx].data_mut(), self.v[idx].data_mut());
            for (((w, &gi), mi), vi) in p.value.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Start index of a training window within a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub trajectory: usize,
    pub start: usize,
}

/// Every window `i = 0 ..= len - 1 - tau` of every trajectory.
pub fn windows(trajs: &[Trajectory], tau: usize) -> Vec<Window> {
    trajs
        .iter()
        .enumerate()
        .flat_map(|(k, t)| (0..t.len().saturating_sub(tau)).map(move |start| Window { trajectory: k, start }))
        .collect()
}

/// Initial states, controls and the `tau` target batches of a window set.
pub struct WindowBatch {
    pub init: Tensor<Real>,
    pub control: Tensor<Real>,
    pub targets: Vec<Tensor<Real>>,
}

impl WindowBatch {
    pub fn new(trajs: &[Trajectory], ws: &[Window], tau: usize) -> Result<Self> {
        let rows = ws.len();
        let width = trajs.first().map_or(0, |t| t.states[0].len());
        let inputs = trajs.first().map_or(0, |t| t.control.len());
        let gather = |k: usize| {
            let data = ws.iter().flat_map(|w| trajs[w.trajectory].states[w.start + k].iter().copied()).collect();
            Tensor::matrix(rows, width, data)
        };
        let control = ws.iter().flat_map(|w| trajs[w.trajectory].control.iter().copied()).collect();
        Ok(Self {
            init: gather(0)?,
            control: Tensor::matrix(rows, inputs, control)?,
            targets: (1..=tau).map(gather).collect::<Result<_>>()?,
        })
    }

    pub fn rows(&self) -> usize {
        self.init.shape()[0]
    }

    /// Number of squared terms in the summed loss.
    pub fn terms(&self) -> usize {
        self.init.len() * self.targets.len()
    }
}

/// Summed squared error of a differentiable rollout over the batch.
pub fn batch_loss_sum<'t>(
    model: &DynamicsModel<Real>,
    params: &[Var<'t, Real>],
    tape: &'t Tape<Real>,
    batch: &WindowBatch,
    h: Real,
    substeps: usize,
) -> Result<Var<'t, Real>> {
    let init = AugmentedState { state: tape.constant(batch.init.clone()), control: tape.constant(batch.control.clone()) };
    let roll = odesolve(|x, u| model.rhs(params, *x, *u), init, 0.0, h, batch.targets.len(), substeps)?;
    let mut total: Option<Var<'t, Real>> = None;
    for (pred, target) in roll.states[1..].iter().zip(&batch.targets) {
        let err = pred.sub(tape.constant(target.clone()))?.square()?.sum()?;
        total = Some(match total {
            Some(t) => t.add(err)?,
            None => err,
        });
    }
    total.ok_or_else(|| Error::Config("empty horizon".into()))
}

/// Sum of squared errors over the `tau` states predicted from `x_{t_i}`.
pub fn window_loss<'t>(
    model: &DynamicsModel<Real>,
    params: &[Var<'t, Real>],
    tape: &'t Tape<Real>,
    traj: &Trajectory,
    i: usize,
    tau: usize,
    h: Real,
    substeps: usize,
) -> Result<Var<'t, Real>> {
    if tau == 0 || i + tau >= traj.len() {
        return Err(Error::Config(format!("window {i}..{} exceeds trajectory length {}", i + tau, traj.len())));
    }
    let batch = WindowBatch::new(std::slice::from_ref(traj), &[Window { trajectory: 0, start: i }], tau)?;
    batch_loss_sum(model, params, tape, &batch, h, substeps)
}

/// Value-only rollout from a batch of initial states.
pub fn predict(
    model: &DynamicsModel<Real>,
    init: &Tensor<Real>,
    control: &Tensor<Real>,
    h: Real,
    steps: usize,
    substeps: usize,
) -> Result<Vec<Tensor<Real>>> {
    let aug = AugmentedState { state: init.clone(), control: control.clone() };
    Ok(odesolve(|x, u| model.rhs_values(x, u), aug, 0.0, h, steps, substeps)?.states)
}

/// Mean and population standard deviation across trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Train,
    Test,
    Pred,
}

/// Per-trajectory windowed loss of every trajectory in `trajs`.
pub fn windowed_errors(model: &DynamicsModel<Real>, trajs: &[Trajectory], tau: usize, h: Real, substeps: usize) -> Result<Vec<f64>> {
    let ws = windows(trajs, tau);
    let batch = WindowBatch::new(trajs, &ws, tau)?;
    let width = batch.init.shape()[1];
    let per_window: Vec<f64> = match predict(model, &batch.init, &batch.control, h, tau, substeps) {
        Ok(states) => {
            let mut acc = vec![0.0; ws.len()];
            for (pred, target) in states[1..].iter().zip(&batch.targets) {
                for (r, a) in acc.iter_mut().enumerate() {
                    *a += pred.row(r).iter().zip(target.row(r)).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
                }
            }
            acc.into_iter().map(|a| a / (tau * width) as f64).collect()
        }
        Err(Error::NonFinite { .. }) => vec![f64::INFINITY; ws.len()],
        Err(e) => return Err(e),
    };
    let mut sums = vec![(0.0, 0usize); trajs.len()];
    for (w, e) in ws.iter().zip(per_window) {
        sums[w.trajectory].0 += e;
        sums[w.trajectory].1 += 1;
    }
    Ok(sums.into_iter().map(|(s, c)| s / c as f64).collect())
}

/// Distinct initial states of the training split, in order.
pub fn unique_initial_states(trajs: &[Trajectory]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for t in trajs {
        if !out.iter().any(|s| s == &t.states[0]) {
            out.push(t.states[0].clone());
        }
    }
    out
}

/// Zero-input rollouts of `steps` intervals against the truth simulator;
/// per-trajectory mean squared error over steps and components.
pub fn prediction_errors(
    model: &DynamicsModel<Real>,
    dataset: &Dataset,
    systems: &Systems,
    steps: usize,
    substeps: usize,
    truth_substeps: usize,
) -> Result<Vec<f64>> {
    let inits = unique_initial_states(&dataset.train);
    let dims = dataset.dims();
    let mut errs = Vec::with_capacity(inits.len());
    for init in &inits {
        let truth = simlab::simulate(dataset.task, systems, init, &vec![0.0; dims.inputs], dataset.h, steps, truth_substeps)?;
        let x0 = Tensor::matrix(1, init.len(), init.clone())?;
        let u0 = Tensor::zeros(&[1, dims.inputs]);
        let err = match predict(model, &x0, &u0, dataset.h, steps, substeps) {
            Ok(pred) => {
                let total: f64 = pred[1..]
                    .iter()
                    .zip(&truth[1..])
                    .map(|(p, t)| p.data().iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                    .sum();
                let e = total / (steps * init.len()) as f64;
                if e.is_finite() { e } else { f64::INFINITY }
            }
            Err(Error::NonFinite { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        errs.push(err);
    }
    Ok(errs)
}

/// Train/test/pred error statistics of one model.
pub fn evaluate(
    model: &DynamicsModel<Real>,
    dataset: &Dataset,
    systems: &Systems,
    kind: ErrorKind,
    cfg: &TrainConfig,
    truth_substeps: usize,
) -> Result<Stats> {
    check_compatible(model, dataset)?;
    let errs = match kind {
        ErrorKind::Train => windowed_errors(model, &dataset.train, cfg.tau, dataset.h, cfg.substeps)?,
        ErrorKind::Test => windowed_errors(model, &dataset.test, cfg.tau, dataset.h, cfg.substeps)?,
        ErrorKind::Pred => prediction_errors(model, dataset, systems, cfg.pred_steps, cfg.substeps, truth_substeps)?,
    };
    Ok(Stats::of(&errs))
}

pub fn check_compatible(model: &DynamicsModel<Real>, dataset: &Dataset) -> Result<()> {
    let spec = model.spec();
    if spec.representation != dataset.representation() || spec.dims != dataset.dims() {
        return Err(Error::Config(format!(
            "model expects {} data with dims {:?}, dataset is {} with {:?}",
            spec.representation,
            spec.dims,
            dataset.representation(),
            dataset.dims()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the lowest recorded training loss.
    pub model: DynamicsModel<Real>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub learning_rate: f64,
    pub seconds: f64,
}

impl TrainOutcome {
    /// `epoch,train_loss,test_loss` rows; missing test losses are empty.
    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,test_loss\n");
        for r in &self.history {
            let test = r.test_loss.map(|v| format!("{v:.16e}")).unwrap_or_default();
            s.push_str(&format!("{},{:.16e},{}\n", r.epoch, r.train_loss, test));
        }
        s
    }
}

/// Loss and parameter gradients of one batch on a fresh tape.
pub fn loss_and_grads(
    model: &DynamicsModel<Real>,
    batch: &WindowBatch,
    h: Real,
    substeps: usize,
) -> Result<(f64, Vec<Tensor<Real>>)> {
    let tape = Tape::new();
    let params = model.params().bind(&tape);
    let sum = batch_loss_sum(model, &params, &tape, batch, h, substeps)?;
    let loss = sum.scale(1.0 / batch.terms() as f64)?;
    let grads = tape.backward(&loss)?;
    let value = loss.item();
    Ok((value, params.iter().map(|p| grads.wrt(p)).collect()))
}

/// Adam over windowed rollout losses; returns the best-so-far parameters.
pub fn train(
    mut model: DynamicsModel<Real>,
    dataset: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    check_compatible(&model, dataset)?;
    cfg.validate(dataset.samples())?;
    let started = Instant::now();
    let ws = windows(&dataset.train, cfg.tau);
    let test_windows = windows(&dataset.test, cfg.tau);
    let test_batch = (!test_windows.is_empty()).then(|| WindowBatch::new(&dataset.test, &test_windows, cfg.tau)).transpose()?;
    let batch_size = if cfg.batch_size == 0 { ws.len() } else { cfg.batch_size.min(ws.len()) };
    let full = (batch_size == ws.len()).then(|| WindowBatch::new(&dataset.train, &ws, cfg.tau)).transpose()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(model.params(), cfg.beta1, cfg.beta2, cfg.epsilon);
    let mut lr = cfg.learning_rate;
    let mut best = (f64::INFINITY, model.params().clone(), 0usize);
    let mut diverged = false;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..ws.len()).collect();

    let mut epoch = 1;
    while epoch <= cfg.epochs {
        let snapshot = model.params().clone();
        let mut weighted = 0.0;
        let mut failure = None;
        if full.is_none() {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch_size) {
            let owned;
            let batch = match &full {
                Some(b) => b,
                None => {
                    let sel: Vec<Window> = chunk.iter().map(|&k| ws[k]).collect();
                    owned = WindowBatch::new(&dataset.train, &sel, cfg.tau)?;
                    &owned
                }
            };
            let (loss, grads) = match loss_and_grads(&model, batch, dataset.h, cfg.substeps) {
                Ok(r) => r,
                Err(Error::NonFinite { step }) => {
                    failure = Some(format!("non-finite rollout at step {step}"));
                    break;
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                failure = Some(format!("non-finite loss {loss}"));
                break;
            }
            weighted += loss * chunk.len() as f64;
            adam.update(model.params_mut(), &grads, lr)?;
        }
        if let Some(why) = failure {
            if diverged {
                return Err(Error::Diverged(format!("{why} at epoch {epoch} after halving the learning rate to {lr:e}")));
            }
            diverged = true;
            lr *= 0.5;
            *model.params_mut() = best.1.clone();
            adam = AdamState::new(model.params(), cfg.beta1, cfg.beta2, cfg.epsilon);
            continue;
        }
        let train_loss = weighted / ws.len() as f64;
        // full-batch losses belong to the parameters before the step
        let candidate = if full.is_some() { snapshot } else { model.params().clone() };
        if train_loss < best.0 {
            best = (train_loss, candidate, epoch);
        }
        let test_loss = match &test_batch {
            Some(tb) if epoch % cfg.eval_every.max(1) == 0 || epoch == cfg.epochs => {
                Some(batch_mean_loss(&model, tb, dataset.h, cfg.substeps)?)
            }
            _ => None,
        };
        let record = EpochRecord { epoch, train_loss, test_loss };
        on_epoch(&record);
        history.push(record);
        epoch += 1;
    }
    *model.params_mut() = best.1;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch: best.2,
        best_loss: best.0,
        learning_rate: lr,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Normalized loss of a batch without gradients.
pub fn batch_mean_loss(model: &DynamicsModel<Real>, batch: &WindowBatch, h: Real, substeps: usize) -> Result<f64> {
    let states = match predict(model, &batch.init, &batch.control, h, batch.targets.len(), substeps) {
        Ok(s) => s,
        Err(Error::NonFinite { .. }) => return Ok(f64::INFINITY),
        Err(e) => return Err(e),
    };
    let sum: f64 = states[1..]
        .iter()
        .zip(&batch.targets)
        .map(|(p, t)| p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    Ok(sum / batch.terms() as f64)
}

/// Least-squares `β` with `β · learned ≈ truth`; `None` when undefined.
pub fn estimate_beta<T: Scalar>(learned: &[T], truth: &[T]) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (l, t) in learned.iter().zip(truth) {
        let (l, t) = (l.to_f64_lossy(), t.to_f64_lossy());
        num += l * t;
        den += l * l;
    }
    let beta = num / den;
    (den > 0.0 && beta.is_finite()).then_some(beta)
}

fn remove_mean(v: &[f64]) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - m).collect()
}

fn max_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Tolerance scale of a truth curve: its range, or its magnitude when flat.
pub fn truth_scale(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let mag = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    (max - min).max(mag)
}

/// Learned 1-DOF functions rescaled by `β` next to the truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub beta: f64,
    /// `β · M⁻¹_θ`.
    pub mass_inv: Vec<f64>,
    /// `V_θ / β` with its mean removed.
    pub potential: Vec<f64>,
    /// `g_θ / β`.
    pub input: Vec<f64>,
    /// Momentum-row entry `D_θ[1][1] / β`.
    pub dissipation: Option<Vec<f64>>,
    pub truth_mass_inv: Vec<f64>,
    /// Truth potential with its mean removed.
    pub truth_potential: Vec<f64>,
    pub truth_input: Vec<f64>,
    pub truth_dissipation: Option<Vec<f64>>,
}

/// Maximum deviations of the rescaled curves from the truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deviations {
    pub mass_inv: f64,
    pub potential: f64,
    pub input: f64,
    pub dissipation: Option<f64>,
}

impl Recovery {
    /// Compare learned and truth 1-DOF functions on the same grid.
    pub fn new(learned: &FunctionValues<Real>, truth: &FunctionValues<Real>, beta: f64) -> Result<Self> {
        if learned.mass_inv.shape()[1] != 1 || learned.input.shape()[1] != 1 {
            return Err(Error::InvalidModel("recovery curves are defined for 1-DOF systems".into()));
        }
        let entry = |t: &Tensor<Real>| -> Vec<f64> { (0..t.shape()[0]).map(|r| t.row(r)[3]).collect() };
        Ok(Self {
            beta,
            mass_inv: learned.mass_inv.data().iter().map(|v| beta * v).collect(),
            potential: remove_mean(&learned.potential.data().iter().map(|v| v / beta).collect::<Vec<_>>()),
            input: learned.input.data().iter().map(|v| v / beta).collect(),
            dissipation: learned.dissipation.as_ref().map(|d| entry(d).iter().map(|v| v / beta).collect()),
            truth_mass_inv: truth.mass_inv.data().to_vec(),
            truth_potential: remove_mean(truth.potential.data()),
            truth_input: truth.input.data().to_vec(),
            truth_dissipation: truth.dissipation.as_ref().map(entry),
        })
    }

    pub fn deviations(&self) -> Deviations {
        Deviations {
            mass_inv: max_dev(&self.mass_inv, &self.truth_mass_inv),
            potential: max_dev(&self.potential, &self.truth_potential),
            input: max_dev(&self.input, &self.truth_input),
            dissipation: match (&self.dissipation, &self.truth_dissipation) {
                (Some(a), Some(b)) => Some(max_dev(a, b)),
                _ => None,
            },
        }
    }

    /// Deviations divided by the truth scale of each curve.
    pub fn relative_deviations(&self) -> Deviations {
        let d = self.deviations();
        Deviations {
            mass_inv: d.mass_inv / truth_scale(&self.truth_mass_inv),
            potential: d.potential / truth_scale(&self.truth_potential),
            input: d.input / truth_scale(&self.truth_input),
            dissipation: d.dissipation.zip(self.truth_dissipation.as_ref()).map(|(v, t)| v / truth_scale(t)),
        }
    }
}

/// Per-split error statistics of a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub task: u8,
    pub parameters: usize,
    pub train: Stats,
    pub test: Stats,
    pub pred: Stats,
    pub normalization: String,
    pub epochs: usize,
    pub best_epoch: usize,
    pub seconds: f64,
}

impl MetricsReport {
    pub fn collect(
        outcome: &TrainOutcome,
        dataset: &Dataset,
        systems: &Systems,
        cfg: &TrainConfig,
        truth_substeps: usize,
    ) -> Result<Self> {
        let m = &outcome.model;
        Ok(Self {
            variant: m.spec().variant.to_string(),
            task: dataset.task.id(),
            parameters: m.param_count(),
            train: evaluate(m, dataset, systems, ErrorKind::Train, cfg, truth_substeps)?,
            test: evaluate(m, dataset, systems, ErrorKind::Test, cfg, truth_substeps)?,
            pred: evaluate(m, dataset, systems, ErrorKind::Pred, cfg, truth_substeps)?,
            normalization: NORMALIZATION.into(),
            epochs: outcome.history.len(),
            best_epoch: outcome.best_epoch,
            seconds: outcome.seconds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut store = ParamStore::<f64>::new();
        store.push("w", Tensor::vector(vec![1.0, -2.0]));
        let before = store.clone();
        let mut adam = AdamState::new(&store, 0.9, 0.999, 1e-8);
        adam.update(&mut store, &[Tensor::zeros(&[2])], 1e-3).unwrap();
        assert_eq!(store, before);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut store = ParamStore::<f64>::new();
        store.push("w", Tensor::vector(vec![0.0, 0.0, 5.0]));
        let mut adam = AdamState::new(&store, 0.9, 0.999, 1e-8);
        adam.update(&mut store, &[Tensor::vector(vec![0.3, -7.0, 0.3])], 1e-3).unwrap();
        let w = store.get(0).value.data();
        assert!((w[0] + 1e-3).abs() < 1e-10);
        assert!((w[1] - 1e-3).abs() < 1e-10);
        assert!((w[0] - (w[2] - 5.0)).abs() < 1e-12);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn beta_examples() {
        let truth = [3.0, 3.0, 3.0];
        assert_eq!(estimate_beta(&truth, &truth), Some(1.0));
        assert_eq!(estimate_beta(&[6.0, 6.0, 6.0], &truth), Some(0.5));
        assert_eq!(estimate_beta(&[0.0, 0.0, 0.0], &truth), None);
    }

    #[test]
    fn stats_population() {
        let s = Stats::of(&[1.0, 3.0]);
        assert_eq!((s.mean, s.std), (2.0, 1.0));
    }

    #[test]
    fn window_enumeration() {
        let t = Trajectory { id: 0, times: vec![0.0; 5], states: vec![vec![0.0]; 5], control: vec![0.0] };
        let ws = windows(&[t.clone(), t], 3);
        assert_eq!(ws.len(), 4);
        assert_eq!(ws[3], Window { trajectory: 1, start: 1 });
    }

    #[test]
    fn truth_scale_handles_flat_curves() {
        assert_eq!(truth_scale(&[3.0, 3.0]), 3.0);
        assert_eq!(truth_scale(&[-5.0, 5.0]), 10.0);
    }
}
