//! Ground-truth simulators and trajectory datasets.
//!
//! Systems are integrated in canonical `(q, p)` coordinates with fine RK4
//! sub-steps and only then mapped into the observed representation, so
//! embedded angles lie on the unit circle to rounding error.

mod systems;

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::{Dims, PendulumParams, Representation};
use crate::odeint::{odesolve, AugmentedState};

pub use systems::{solve_dense, Acrobot, CartPole, Mechanics};

/// Off-circle tolerance for embedded inputs.
pub const CIRCLE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Task {
    Pendulum = 1,
    EmbeddedPendulum = 2,
    CartPole = 3,
    Acrobot = 4,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Pendulum, Task::EmbeddedPendulum, Task::CartPole, Task::Acrobot];

    pub fn id(&self) -> u8 {
        *self as u8
    }

    pub fn from_id(id: u8) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.id() == id)
            .ok_or_else(|| Error::Config(format!("task id must be 1-4, got {id}")))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::Pendulum => "pendulum",
            Task::EmbeddedPendulum => "pendulum-embedded",
            Task::CartPole => "cartpole",
            Task::Acrobot => "acrobot",
        }
    }

    pub fn representation(&self) -> Representation {
        match self {
            Task::Pendulum => Representation::Phase,
            Task::EmbeddedPendulum | Task::Acrobot => Representation::Embedded,
            Task::CartPole => Representation::Hybrid,
        }
    }

    pub fn dims(&self) -> Dims {
        let (translational, angular) = match self {
            Task::Pendulum => (1, 0),
            Task::EmbeddedPendulum => (0, 1),
            Task::CartPole => (1, 1),
            Task::Acrobot => (0, 2),
        };
        Dims { translational, angular, inputs: 1 }
    }
}

impl From<Task> for u8 {
    fn from(t: Task) -> u8 {
        t.id()
    }
}

impl TryFrom<u8> for Task {
    type Error = Error;

    fn try_from(id: u8) -> Result<Self> {
        Task::from_id(id)
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Ok(id) = s.parse::<u8>() {
            return Task::from_id(id);
        }
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown task `{s}`")))
    }
}

/// Physical parameters of every simulated system.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Systems {
    pub pendulum: PendulumParams,
    pub cartpole: CartPole,
    pub acrobot: Acrobot,
}

impl Systems {
    pub fn mechanics(&self, task: Task) -> &dyn Mechanics {
        match task {
            Task::Pendulum | Task::EmbeddedPendulum => &self.pendulum,
            Task::CartPole => &self.cartpole,
            Task::Acrobot => &self.acrobot,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    /// Sampling interval.
    pub h: f64,
    /// Sampling intervals per trajectory; each holds `steps + 1` observations.
    pub steps: usize,
    pub train_initial_conditions: usize,
    pub test_initial_conditions: usize,
    pub controls: Vec<f64>,
    /// RK4 steps per sampling interval for the truth simulation.
    pub substeps: usize,
    /// Half-width of initial positions for the cart-pole and acrobot.
    pub position_range: f64,
    /// Half-width of initial velocities (momenta in the phase task).
    pub velocity_range: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            h: 0.05,
            steps: 20,
            train_initial_conditions: 25,
            test_initial_conditions: 25,
            controls: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            substeps: 40,
            position_range: 0.5,
            velocity_range: 1.0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::Config("h must be positive".into()));
        }
        if self.steps == 0 || self.substeps == 0 || self.controls.is_empty() {
            return Err(Error::Config("need steps >= 1, substeps >= 1 and at least one control".into()));
        }
        if self.train_initial_conditions == 0 {
            return Err(Error::Config("need at least one training initial condition".into()));
        }
        Ok(())
    }
}

/// Map canonical `(q, p)` into the task's observed state.
pub fn embed(task: Task, sys: &dyn Mechanics, q: &[f64], p: &[f64]) -> Vec<f64> {
    if task.representation() == Representation::Phase {
        return [q, p].concat();
    }
    let v = sys.velocity(q, p);
    let n = task.dims().translational;
    let angles = &q[n..];
    let mut out = q[..n].to_vec();
    out.extend(angles.iter().map(|a| a.cos()));
    out.extend(angles.iter().map(|a| a.sin()));
    out.extend(v);
    out
}

/// Generalized coordinates and the observed velocity-like block.
pub fn split_state(task: Task, state: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let dims = task.dims();
    if state.len() != dims.state_width() {
        return Err(Error::ShapeMismatch { op: "state", shapes: vec![vec![state.len()], vec![dims.state_width()]] });
    }
    let (n, m) = (dims.translational, dims.angular);
    let mut q = state[..n].to_vec();
    for j in 0..m {
        let (c, s) = (state[n + j], state[n + m + j]);
        let off = (c * c + s * s - 1.0).abs();
        if off > CIRCLE_TOL {
            return Err(Error::OffCircle(off));
        }
        q.push(s.atan2(c));
    }
    Ok((q, state[dims.coord_width()..].to_vec()))
}

/// Canonical `(q, p)` of an observed state.
pub fn unembed(task: Task, sys: &dyn Mechanics, state: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (q, w) = split_state(task, state)?;
    if task.representation() == Representation::Phase {
        return Ok((q, w));
    }
    let p = sys.momentum(&q, &w);
    Ok((q, p))
}

/// Exact state derivative in the task's representation.
pub fn truth_rhs(task: Task, systems: &Systems, state: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    let sys = systems.mechanics(task);
    let (q, w) = split_state(task, state)?;
    if task.representation() == Representation::Phase {
        let (qd, pd) = sys.canonical_rhs(&q, &w, u);
        return Ok([qd, pd].concat());
    }
    let dims = task.dims();
    let (n, m) = (dims.translational, dims.angular);
    let mut out = w[..n].to_vec();
    out.extend((0..m).map(|j| -state[n + m + j] * w[n + j]));
    out.extend((0..m).map(|j| state[n + j] * w[n + j]));
    out.extend(sys.acceleration(&q, &w, u));
    Ok(out)
}

/// `(q̇, ṗ)` of the damped pendulum.
pub fn pendulum_truth_rhs(p: &PendulumParams, q: f64, mom: f64, u: f64) -> (f64, f64) {
    let (qd, pd) = p.canonical_rhs(&[q], &[mom], &[u]);
    (qd[0], pd[0])
}

/// `(ẋ1, ẋ2, ẋ3)` of the pendulum observed as `(cos q, sin q, q̇)`.
pub fn embedded_pendulum_truth_rhs(p: &PendulumParams, x1: f64, x2: f64, x3: f64, u: f64) -> Result<(f64, f64, f64)> {
    let systems = Systems { pendulum: *p, ..Systems::default() };
    let d = truth_rhs(Task::EmbeddedPendulum, &systems, &[x1, x2, x3], &[u])?;
    Ok((d[0], d[1], d[2]))
}

/// Derivative of `(r, cos φ, sin φ, ṙ, φ̇)` for the cart-pole.
pub fn cartpole_truth_rhs(c: &CartPole, state: &[f64], u: f64) -> Result<Vec<f64>> {
    let systems = Systems { cartpole: *c, ..Systems::default() };
    truth_rhs(Task::CartPole, &systems, state, &[u])
}

/// Derivative of `(cos θ, sin θ, θ̇)` (two angles each) for the acrobot.
pub fn acrobot_truth_rhs(a: &Acrobot, state: &[f64], u: f64) -> Result<Vec<f64>> {
    let systems = Systems { acrobot: *a, ..Systems::default() };
    truth_rhs(Task::Acrobot, &systems, state, &[u])
}

/// Total energy of an observed state.
pub fn energy(task: Task, systems: &Systems, state: &[f64]) -> Result<f64> {
    let sys = systems.mechanics(task);
    let (q, p) = unembed(task, sys, state)?;
    Ok(sys.energy(&q, &sys.velocity(&q, &p)))
}

/// Truth rollout of `steps` sampling intervals; returns `steps + 1` observed states.
pub fn simulate(
    task: Task,
    systems: &Systems,
    init: &[f64],
    u: &[f64],
    h: f64,
    steps: usize,
    substeps: usize,
) -> Result<Vec<Vec<f64>>> {
    let sys = systems.mechanics(task);
    let (q0, p0) = unembed(task, sys, init)?;
    let n = q0.len();
    let canonical = Tensor::vector([q0, p0].concat());
    let control = Tensor::vector(u.to_vec());
    let rhs = |x: &Tensor<f64>, u: &Tensor<f64>| {
        let (qd, pd) = sys.canonical_rhs(&x.data()[..n], &x.data()[n..], u.data());
        Ok(Tensor::vector([qd, pd].concat()))
    };
    let roll = odesolve(rhs, AugmentedState { state: canonical, control }, 0.0, h, steps, substeps)?;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(init.to_vec());
    for x in &roll.states[1..] {
        out.push(embed(task, sys, &x.data()[..n], &x.data()[n..]));
    }
    Ok(out)
}

/// One observed trajectory under a constant control.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub id: usize,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub control: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub h: f64,
    pub seed: u64,
    pub train: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

fn sample_initial(task: Task, systems: &Systems, cfg: &GenConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dims = task.dims();
    let pi = std::f64::consts::PI;
    let q: Vec<f64> = match task {
        Task::Pendulum | Task::EmbeddedPendulum => vec![rng.gen_range(-pi..=pi)],
        _ => (0..dims.dof()).map(|_| rng.gen_range(-cfg.position_range..=cfg.position_range)).collect(),
    };
    let w: Vec<f64> = (0..dims.dof()).map(|_| rng.gen_range(-cfg.velocity_range..=cfg.velocity_range)).collect();
    let sys = systems.mechanics(task);
    // phase states draw momenta, the others velocities
    let p = if task.representation() == Representation::Phase { w } else { sys.momentum(&q, &w) };
    embed(task, sys, &q, &p)
}

fn split_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Initial conditions × controls for both splits, from disjoint random streams.
pub fn generate_dataset(task: Task, cfg: &GenConfig, systems: &Systems, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let steps = cfg.steps;
    let split = |count: usize, stream: u64, first_id: usize| -> Result<Vec<Trajectory>> {
        let mut rng = split_rng(seed, stream);
        let mut out = Vec::with_capacity(count * cfg.controls.len());
        for _ in 0..count {
            let init = sample_initial(task, systems, cfg, &mut rng);
            for &u in &cfg.controls {
                let states = simulate(task, systems, &init, &[u], cfg.h, steps, cfg.substeps)?;
                let times = (0..=cfg.steps).map(|i| i as f64 * cfg.h).collect();
                out.push(Trajectory { id: first_id + out.len(), times, states, control: vec![u] });
            }
        }
        Ok(out)
    };
    let train = split(cfg.train_initial_conditions, 0, 0)?;
    let test = split(cfg.test_initial_conditions, 1, train.len())?;
    Ok(Dataset { task, h: cfg.h, seed, train, test })
}

const MAGIC: &str = "# phode-dataset v1";

/// Column names for an observed state.
pub fn state_columns(task: Task) -> Vec<String> {
    let d = task.dims();
    let (n, m) = (d.translational, d.angular);
    let mut cols = Vec::new();
    let phase = task.representation() == Representation::Phase;
    cols.extend((0..n).map(|i| if phase { format!("q{i}") } else { format!("r{i}") }));
    cols.extend((0..m).map(|j| format!("cos{j}")));
    cols.extend((0..m).map(|j| format!("sin{j}")));
    cols.extend((0..n).map(|i| if phase { format!("p{i}") } else { format!("rdot{i}") }));
    cols.extend((0..m).map(|j| format!("qdot{j}")));
    cols
}

impl Dataset {
    pub fn dims(&self) -> Dims {
        self.task.dims()
    }

    pub fn representation(&self) -> Representation {
        self.task.representation()
    }

    pub fn samples(&self) -> usize {
        self.train.first().map_or(0, |t| t.len())
    }

    /// Self-describing text with full-precision reals.
    pub fn to_csv(&self) -> String {
        let d = self.dims();
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "# task={}", self.task.id());
        let _ = writeln!(s, "# representation={}", self.representation());
        let _ = writeln!(s, "# translational={}", d.translational);
        let _ = writeln!(s, "# angular={}", d.angular);
        let _ = writeln!(s, "# inputs={}", d.inputs);
        let _ = writeln!(s, "# h={:.16e}", self.h);
        let _ = writeln!(s, "# seed={}", self.seed);
        let _ = writeln!(s, "# samples={}", self.samples());
        let _ = writeln!(s, "# train_trajectories={}", self.train.len());
        let _ = writeln!(s, "# test_trajectories={}", self.test.len());
        let mut header = vec!["trajectory".to_string(), "step".into(), "time".into()];
        header.extend(state_columns(self.task));
        header.extend((0..d.inputs).map(|k| format!("u{k}")));
        let _ = writeln!(s, "{}", header.join(","));
        for t in self.train.iter().chain(&self.test) {
            for (i, (time, x)) in t.times.iter().zip(&t.states).enumerate() {
                let _ = write!(s, "{},{},{:.16e}", t.id, i, time);
                for v in x.iter().chain(&t.control) {
                    let _ = write!(s, ",{v:.16e}");
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Format(msg);
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("missing dataset header".into()));
        }
        let mut meta = std::collections::BTreeMap::new();
        let mut header = None;
        for line in lines.by_ref() {
            match line.strip_prefix("# ") {
                Some(kv) => {
                    let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("bad header line `{line}`")))?;
                    meta.insert(k.to_string(), v.to_string());
                }
                None => {
                    header = Some(line);
                    break;
                }
            }
        }
        let get = |k: &str| meta.get(k).ok_or_else(|| bad(format!("header lacks `{k}`")));
        let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| bad(format!("bad `{k}`"))) };
        let task = Task::from_id(num("task")? as u8)?;
        let d = task.dims();
        if num("translational")? != d.translational || num("angular")? != d.angular || num("inputs")? != d.inputs {
            return Err(bad("dimensions do not match the task".into()));
        }
        let h: f64 = get("h")?.parse().map_err(|_| bad("bad `h`".into()))?;
        let seed: u64 = get("seed")?.parse().map_err(|_| bad("bad `seed`".into()))?;
        let n_train = num("train_trajectories")?;
        let n_test = num("test_trajectories")?;
        let width = d.state_width();
        let cols = 3 + width + d.inputs;
        if header.map(|h| h.split(',').count()) != Some(cols) {
            return Err(bad("column header does not match the dimensions".into()));
        }
        let mut trajs: Vec<Trajectory> = Vec::with_capacity(n_train + n_test);
        for (ln, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols {
                return Err(bad(format!("row {} has {} fields, expected {cols}", ln + 1, fields.len())));
            }
            let id: usize = fields[0].parse().map_err(|_| bad(format!("row {}: bad id", ln + 1)))?;
            let vals = fields[2..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(format!("row {}: {e}", ln + 1)))?;
            if trajs.last().map_or(true, |t| t.id != id) {
                trajs.push(Trajectory { id, times: vec![], states: vec![], control: vals[1 + width..].to_vec() });
            }
            let t = trajs.last_mut().expect("pushed");
            t.times.push(vals[0]);
            t.states.push(vals[1..1 + width].to_vec());
        }
        if trajs.len() != n_train + n_test {
            return Err(bad(format!("expected {} trajectories, found {}", n_train + n_test, trajs.len())));
        }
        let test = trajs.split_off(n_train);
        Ok(Dataset { task, h, seed, train: trajs, test })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn pendulum_examples() {
        let p = PendulumParams::default();
        assert_eq!(pendulum_truth_rhs(&p, 0.0, 0.0, 0.0), (0.0, 0.0));
        let (qd, pd) = pendulum_truth_rhs(&p, FRAC_PI_2, 1.0, 0.0);
        assert!((qd - 3.0).abs() < 1e-12 && (pd + 5.3).abs() < 1e-12);
        assert_eq!(pendulum_truth_rhs(&p, 0.0, 0.0, 2.0), (0.0, 2.0));
    }

    #[test]
    fn embedded_pendulum_examples() {
        let p = PendulumParams::default();
        assert_eq!(embedded_pendulum_truth_rhs(&p, 1.0, 0.0, 0.0, 0.0).unwrap(), (0.0, 0.0, 0.0));
        let (a, b, c) = embedded_pendulum_truth_rhs(&p, 0.0, 1.0, 1.0, 0.0).unwrap();
        let oracle = 3.0 * (-5.0 * 1.0 - 0.3 * (1.0 / 3.0) * 1.0 + 0.0);
        assert!((a + 1.0).abs() < 1e-15 && b.abs() < 1e-15 && (c - oracle).abs() < 1e-12);
        assert!(matches!(embedded_pendulum_truth_rhs(&p, 1.0, 0.1, 0.0, 0.0), Err(Error::OffCircle(_))));
    }

    #[test]
    fn equilibria_are_at_rest() {
        let zero = cartpole_truth_rhs(&CartPole::default(), &[0.3, 1.0, 0.0, 0.0, 0.0], 0.0).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0), "{zero:?}");
        let zero = acrobot_truth_rhs(&Acrobot::default(), &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0], 0.0).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0), "{zero:?}");
    }

    #[test]
    fn task_ids_and_names() {
        for t in Task::ALL {
            assert_eq!(t.name().parse::<Task>().unwrap(), t);
            assert_eq!(t.id().to_string().parse::<Task>().unwrap(), t);
        }
        assert!(Task::from_id(5).is_err());
    }

    #[test]
    fn small_dataset_round_trips() {
        let cfg = GenConfig { train_initial_conditions: 2, test_initial_conditions: 1, steps: 3, ..GenConfig::default() };
        let ds = generate_dataset(Task::CartPole, &cfg, &Systems::default(), 7).unwrap();
        assert_eq!(ds.train.len(), 10);
        assert_eq!(ds.test.len(), 5);
        let back = Dataset::from_csv(&ds.to_csv()).unwrap();
        assert_eq!(back, ds);
    }
}
