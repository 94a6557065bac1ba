//! Fixed-step RK4 for systems driven by a constant control.
//!
//! The integrator is generic over [`OdeState`], implemented both for plain
//! tensors (simulation) and for tape variables (training by unrolling), so
//! the two modes run the same code.

use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub trait OdeState<T: Scalar>: Sized {
    /// `self + c * other`.
    fn axpy(&self, c: T, other: &Self) -> Result<Self>;
    fn all_finite(&self) -> bool;
}

impl<T: Scalar> OdeState<T> for Tensor<T> {
    fn axpy(&self, c: T, other: &Self) -> Result<Self> {
        self.add_scaled(other, c)
    }

    fn all_finite(&self) -> bool {
        self.is_finite()
    }
}

impl<'t, T: Scalar> OdeState<T> for Var<'t, T> {
    fn axpy(&self, c: T, other: &Self) -> Result<Self> {
        self.add(other.scale(c)?)
    }

    fn all_finite(&self) -> bool {
        self.value().is_finite()
    }
}

/// One classical Runge-Kutta step; `step` labels non-finite errors.
pub fn rk4_step<T, S, F>(rhs: &mut F, x: &S, h: T, step: usize) -> Result<S>
where
    T: Scalar,
    S: OdeState<T>,
    F: FnMut(&S) -> Result<S>,
{
    if !(h > T::zero()) {
        return Err(Error::Config(format!("step size must be positive, got {h}")));
    }
    let half = h * T::lit(0.5);
    let stage = |k: S| if k.all_finite() { Ok(k) } else { Err(Error::NonFinite { step }) };
    let k1 = stage(rhs(x)?)?;
    let k2 = stage(rhs(&x.axpy(half, &k1)?)?)?;
    let k3 = stage(rhs(&x.axpy(half, &k2)?)?)?;
    let k4 = stage(rhs(&x.axpy(h, &k3)?)?)?;
    let sixth = h / T::lit(6.0);
    let third = h / T::lit(3.0);
    let next = x.axpy(sixth, &k1)?.axpy(third, &k2)?.axpy(third, &k3)?.axpy(sixth, &k4)?;
    stage(next)
}

/// A state paired with the control held constant over the rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedState<S> {
    pub state: S,
    pub control: S,
}

#[derive(Clone, Debug)]
pub struct Rollout<T, S> {
    pub times: Vec<T>,
    /// `steps + 1` states, the first being the initial condition.
    pub states: Vec<S>,
    pub control: S,
}

impl<T, S> Rollout<T, S> {
    /// Control at output `i`; constant by construction.
    pub fn control_at(&self, i: usize) -> Option<&S> {
        (i < self.states.len()).then_some(&self.control)
    }
}

/// Integrate `ẋ = f(x, u)`, `u̇ = 0` for `steps` outputs spaced `h` apart,
/// each output reached with `substeps` RK4 steps of size `h / substeps`.
pub fn odesolve<T, S, F>(
    mut rhs: F,
    init: AugmentedState<S>,
    t0: T,
    h: T,
    steps: usize,
    substeps: usize,
) -> Result<Rollout<T, S>>
where
    T: Scalar,
    S: OdeState<T> + Clone,
    F: FnMut(&S, &S) -> Result<S>,
{
    if steps == 0 || substeps == 0 {
        return Err(Error::Config("steps and substeps must be at least 1".into()));
    }
    let AugmentedState { state, control } = init;
    let dt = h / T::from_usize(substeps).expect("substeps fits the scalar type");
    let mut f = |x: &S| rhs(x, &control);
    let mut states = Vec::with_capacity(steps + 1);
    states.push(state);
    for i in 0..steps {
        let mut x = states[i].clone();
        for _ in 0..substeps {
            x = rk4_step(&mut f, &x, dt, i)?;
        }
        states.push(x);
    }
    let times = (0..=steps).map(|i| t0 + h * T::from_usize(i).expect("index fits")).collect();
    Ok(Rollout { times, states, control })
}
