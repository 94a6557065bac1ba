#![allow(dead_code)]

use phode::autodiff::{Tape, Tensor, Var};
use phode::models::{DynamicsModel, ModelSpec, Variant};
use phode::simlab::Task;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product::<usize>().max(1);
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Pins a closure to the tape-generic signature the checkers expect.
pub fn scalar_fn<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> phode::Result<Var<'t, f64>>,
{
    f
}

/// Value and reverse-mode gradient of a scalar function of several tensors.
pub fn tape_grad<F>(f: F, inputs: &[Tensor<f64>]) -> (f64, Vec<Tensor<f64>>)
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> phode::Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let out = f(&tape, &vars).unwrap();
    let grads = tape.backward(&out).unwrap();
    (out.item(), vars.iter().map(|v| grads.wrt(v)).collect())
}

/// Central differences of the same function, evaluated value-only.
pub fn numeric_grad<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Vec<Tensor<f64>>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> phode::Result<Var<'t, f64>>,
{
    let eval = |xs: &[Tensor<f64>]| {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        f(&tape, &vars).unwrap().item()
    };
    let mut xs = inputs.to_vec();
    let mut out = Vec::new();
    for k in 0..xs.len() {
        let mut g = Tensor::zeros(xs[k].shape());
        for i in 0..xs[k].len() {
            let orig = xs[k].data()[i];
            xs[k].data_mut()[i] = orig + eps;
            let up = eval(&xs);
            xs[k].data_mut()[i] = orig - eps;
            let down = eval(&xs);
            xs[k].data_mut()[i] = orig;
            g.data_mut()[i] = (up - down) / (2.0 * eps);
        }
        out.push(g);
    }
    out
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)` over all tensors together.
pub fn rel_err(a: &[Tensor<f64>], b: &[Tensor<f64>]) -> f64 {
    let (mut diff, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.shape(), y.shape());
        for (u, v) in x.data().iter().zip(y.data()) {
            diff += (u - v) * (u - v);
            na += u * u;
            nb += v * v;
        }
    }
    let scale = na.max(nb).sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}

pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> f64
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> phode::Result<Var<'t, f64>>,
{
    let (_, analytic) = tape_grad(&f, inputs);
    let numeric = numeric_grad(&f, inputs, eps);
    rel_err(&analytic, &numeric)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn sym_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    let mut m = a.to_vec();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i * n + j].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| m[i * n + i]).collect()
}

pub fn small_spec(variant: Variant, task: Task, hidden: usize) -> ModelSpec {
    let mut spec = ModelSpec::new(variant, task.representation(), task.dims());
    spec.hidden = vec![hidden, hidden];
    spec.baseline_hidden = vec![hidden, hidden];
    spec
}

pub fn small_model(variant: Variant, task: Task, hidden: usize, seed: u64) -> DynamicsModel<f64> {
    DynamicsModel::new(small_spec(variant, task, hidden), &mut rng(seed)).unwrap()
}

/// Enlarge every parameter so random models are far from linear.
pub fn perturb(model: &mut DynamicsModel<f64>, seed: u64, scale: f64) {
    let mut r = rng(seed);
    let flat: Vec<f64> = model.params().flatten().iter().map(|v| v + scale * r.gen_range(-1.0..1.0)).collect();
    model.params_mut().assign_flat(&flat).unwrap();
}

/// `[batch, width]` states with angles on the unit circle.
pub fn random_states(task: Task, batch: usize, rng: &mut impl Rng) -> Tensor<f64> {
    let d = task.dims();
    let (n, m) = (d.translational, d.angular);
    let mut data = Vec::new();
    for _ in 0..batch {
        let mut row = vec![0.0; d.state_width()];
        for x in row.iter_mut().take(n) {
            *x = rng.gen_range(-1.0..1.0);
        }
        for j in 0..m {
            let a: f64 = rng.gen_range(-3.0..3.0);
            row[n + j] = a.cos();
            row[n + m + j] = a.sin();
        }
        for x in row.iter_mut().skip(d.coord_width()) {
            *x = rng.gen_range(-1.5..1.5);
        }
        data.extend(row);
    }
    Tensor::matrix(batch, d.state_width(), data).unwrap()
}

/// Every (variant, task) pair the library supports.
pub fn all_pairs() -> Vec<(Variant, Task)> {
    Task::ALL
        .iter()
        .flat_map(|&t| Variant::applicable(t.representation()).into_iter().map(move |v| (v, t)))
        .collect()
}
