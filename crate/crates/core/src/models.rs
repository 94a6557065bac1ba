//! Dynamics models sharing one right-hand-side interface.
//!
//! States are `[batch, width]` with the column layout
//! `[r (n), cos φ (m), sin φ (m), v (n + m)]`, where `v` holds momenta in the
//! phase representation and generalized velocities otherwise. The phase
//! representation has `m = 0`, the embedded one `n = 0`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::batch::{self, BatchMat};
use crate::error::{Error, Result};
use std::sync::Arc;

use crate::autodiff::Tensor;
use crate::nets::{Approximator, CholeskyNet, FixedMap, Mlp, ParamStore};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    NaiveBaseline,
    GeometricBaseline,
    UnstructuredDissipative,
    Symoden,
    DissipativeSymoden,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::NaiveBaseline,
        Variant::GeometricBaseline,
        Variant::UnstructuredDissipative,
        Variant::Symoden,
        Variant::DissipativeSymoden,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::NaiveBaseline => "naive-baseline",
            Variant::GeometricBaseline => "geometric-baseline",
            Variant::UnstructuredDissipative => "unstructured-dissipative",
            Variant::Symoden => "symoden",
            Variant::DissipativeSymoden => "dissipative-symoden",
        }
    }

    pub fn supports(&self, repr: Representation) -> bool {
        !(matches!(self, Variant::GeometricBaseline) && repr == Representation::Phase)
    }

    /// Variants applicable to a representation, in table order.
    pub fn applicable(repr: Representation) -> Vec<Variant> {
        Self::ALL.into_iter().filter(|v| v.supports(repr)).collect()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Representation {
    /// `(q, p)` with momenta observed.
    Phase,
    /// `(cos q, sin q, q̇)`.
    Embedded,
    /// `(r, cos φ, sin φ, ṙ, φ̇)`.
    Hybrid,
}

impl Representation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Representation::Phase => "phase",
            Representation::Embedded => "embedded",
            Representation::Hybrid => "hybrid",
        }
    }

    pub fn momentum_observed(&self) -> bool {
        matches!(self, Representation::Phase)
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phase" => Ok(Representation::Phase),
            "embedded" => Ok(Representation::Embedded),
            "hybrid" => Ok(Representation::Hybrid),
            _ => Err(Error::Config(format!("unknown representation `{s}`"))),
        }
    }
}

/// Numbers of translational coordinates, angles and control inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub translational: usize,
    pub angular: usize,
    pub inputs: usize,
}

impl Dims {
    pub fn dof(&self) -> usize {
        self.translational + self.angular
    }

    /// Width of the approximators' input `(r, cos φ, sin φ)`.
    pub fn coord_width(&self) -> usize {
        self.translational + 2 * self.angular
    }

    pub fn state_width(&self) -> usize {
        self.coord_width() + self.dof()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub representation: Representation,
    pub dims: Dims,
    /// Hidden widths of every structured approximator (and the learned Hamiltonian).
    pub hidden: Vec<usize>,
    /// Hidden widths of the naive and geometric baselines.
    pub baseline_hidden: Vec<usize>,
    pub mass_epsilon: f64,
    pub dissipation_epsilon: f64,
}

impl ModelSpec {
    pub fn new(variant: Variant, representation: Representation, dims: Dims) -> Self {
        Self {
            variant,
            representation,
            dims,
            hidden: vec![64, 64],
            baseline_hidden: vec![128, 128, 128],
            mass_epsilon: 0.01,
            dissipation_epsilon: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        match self.representation {
            Representation::Phase if d.angular != 0 => {
                return Err(Error::InvalidModel("phase representation has no angles".into()))
            }
            Representation::Embedded if d.translational != 0 => {
                return Err(Error::InvalidModel("embedded representation has no translations".into()))
            }
            _ => {}
        }
        if d.dof() == 0 {
            return Err(Error::InvalidModel("at least one degree of freedom required".into()));
        }
        if !self.variant.supports(self.representation) {
            return Err(Error::InvalidModel(format!(
                "{} is not defined for the {} representation",
                self.variant, self.representation
            )));
        }
        if self.mass_epsilon < 0.0 || self.dissipation_epsilon < 0.0 {
            return Err(Error::InvalidModel("epsilon must be non-negative".into()));
        }
        Ok(())
    }
}

/// The four approximators of the structured model.
#[derive(Clone, Debug)]
pub struct StructuredNets<T> {
    pub mass_inv: CholeskyNet<T>,
    pub potential: Approximator<T>,
    pub input: Approximator<T>,
    /// `None` for the conservative variant.
    pub dissipation: Option<CholeskyNet<T>>,
}

#[derive(Clone, Debug)]
pub enum Nets<T> {
    Structured(StructuredNets<T>),
    Unstructured {
        hamiltonian: Approximator<T>,
        /// Needed to recover momenta from observed velocities.
        mass_inv: Option<CholeskyNet<T>>,
        input: Approximator<T>,
        dissipation: CholeskyNet<T>,
    },
    Naive(Mlp),
    Geometric(Mlp),
}

#[derive(Clone, Debug)]
pub struct DynamicsModel<T> {
    spec: ModelSpec,
    params: ParamStore<T>,
    nets: Nets<T>,
}

/// Intermediate quantities of a port-Hamiltonian evaluation.
#[derive(Clone, Debug)]
pub struct PortParts<'t, T> {
    /// Per-sample Hamiltonian `[batch, 1]`.
    pub energy: Var<'t, T>,
    /// `∂H/∂q` then `∂H/∂p`, one column each.
    pub grad_h: Vec<Var<'t, T>>,
    pub dissipation: Option<BatchMat<'t, T>>,
    pub mass_inv: Option<BatchMat<'t, T>>,
    pub q_dot: Vec<Var<'t, T>>,
    pub p_dot: Vec<Var<'t, T>>,
}

/// Split view of a state batch.
struct StateView<'t, T> {
    c: Vec<Var<'t, T>>,
    s: Vec<Var<'t, T>>,
    coords: Var<'t, T>,
    v: Var<'t, T>,
}

/// `½ pᵀ M⁻¹ p + V` for a single sample; `m_inv` is `[n, n]`, `p` is `[n]`.
pub fn hamiltonian<'t, T: Scalar>(m_inv: Var<'t, T>, potential: Var<'t, T>, p: Var<'t, T>) -> Result<Var<'t, T>> {
    let n = p.shape().first().copied().unwrap_or(1);
    if m_inv.shape() != [n, n] || p.rank() != 1 || potential.value().len() != 1 {
        return Err(Error::ShapeMismatch {
            op: "hamiltonian",
            shapes: vec![m_inv.shape(), potential.shape(), p.shape()],
        });
    }
    let kinetic = p.matmul(m_inv.matmul(p)?)?.scale(T::lit(0.5))?;
    kinetic.add(potential.reshape(&[])?)
}

impl<T: Scalar> DynamicsModel<T> {
    pub fn new(spec: ModelSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let d = spec.dims;
        let (cw, dof) = (d.coord_width(), d.dof());
        let mut params = ParamStore::new();
        let widths = |input: usize, output: usize, hidden: &[usize]| {
            let mut w = vec![input];
            w.extend_from_slice(hidden);
            w.push(output);
            w
        };
        let h = spec.hidden.clone();
        let eps_m = T::lit(spec.mass_epsilon);
        let eps_d = T::lit(spec.dissipation_epsilon);
        let velocity = !spec.representation.momentum_observed();
        let nets = match spec.variant {
            Variant::DissipativeSymoden | Variant::Symoden => {
                let mass_inv = CholeskyNet::new(&mut params, "mass_inv", cw, &h, dof, eps_m, rng)?;
                let potential = Mlp::new(&mut params, "potential", &widths(cw, 1, &h), rng)?.into();
                let input = Mlp::new(&mut params, "input", &widths(cw, dof * d.inputs, &h), rng)?.into();
                let dissipation = if spec.variant == Variant::DissipativeSymoden {
                    Some(CholeskyNet::new(&mut params, "dissipation", cw, &h, 2 * dof, eps_d, rng)?)
                } else {
                    None
                };
                Nets::Structured(StructuredNets { mass_inv, potential, input, dissipation })
            }
            Variant::UnstructuredDissipative => {
                let hamiltonian = Mlp::new(&mut params, "hamiltonian", &widths(cw + dof, 1, &h), rng)?.into();
                let mass_inv = if velocity {
                    Some(CholeskyNet::new(&mut params, "mass_inv", cw, &h, dof, eps_m, rng)?)
                } else {
                    None
                };
                let input = Mlp::new(&mut params, "input", &widths(cw, dof * d.inputs, &h), rng)?.into();
                let dissipation = CholeskyNet::new(&mut params, "dissipation", cw, &h, 2 * dof, eps_d, rng)?;
                Nets::Unstructured { hamiltonian, mass_inv, input, dissipation }
            }
            Variant::NaiveBaseline => {
                let w = widths(d.state_width() + d.inputs, d.state_width(), &spec.baseline_hidden);
                Nets::Naive(Mlp::new(&mut params, "naive", &w, rng)?)
            }
            Variant::GeometricBaseline => {
                let w = widths(d.state_width() + d.inputs, 2 * dof, &spec.baseline_hidden);
                Nets::Geometric(Mlp::new(&mut params, "geometric", &w, rng)?)
            }
        };
        Ok(Self { spec, params, nets })
    }

    /// Structured model with caller-supplied approximators (e.g. closed-form
    /// ground truth). Learnable parts must already be registered in `params`.
    pub fn from_structured(spec: ModelSpec, params: ParamStore<T>, nets: StructuredNets<T>) -> Result<Self> {
        spec.validate()?;
        let d = spec.dims;
        let cw = d.coord_width();
        let ok = nets.mass_inv.dim() == d.dof()
            && nets.mass_inv.inner().input_width() == cw
            && nets.potential.input_width() == cw
            && nets.potential.output_width() == 1
            && nets.input.input_width() == cw
            && nets.input.output_width() == d.dof() * d.inputs
            && nets.dissipation.as_ref().map_or(true, |n| n.dim() == 2 * d.dof() && n.inner().input_width() == cw);
        if !ok {
            return Err(Error::InvalidModel("approximator widths do not match the model dimensions".into()));
        }
        Ok(Self { spec, params, nets: Nets::Structured(nets) })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn nets(&self) -> &Nets<T> {
        &self.nets
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    fn view<'t>(&self, state: Var<'t, T>) -> Result<StateView<'t, T>> {
        let d = self.spec.dims;
        let width = state.shape().get(1).copied().unwrap_or(0);
        if state.rank() != 2 || width != d.state_width() {
            return Err(Error::ShapeMismatch { op: "state", shapes: vec![state.shape()] });
        }
        let (n, m) = (d.translational, d.angular);
        let c = (0..m).map(|j| state.col(n + j)).collect::<Result<Vec<_>>>()?;
        let s = (0..m).map(|j| state.col(n + m + j)).collect::<Result<Vec<_>>>()?;
        let coords = state.slice(0, d.coord_width())?;
        let v = state.slice(d.coord_width(), d.state_width())?;
        Ok(StateView { c, s, coords, v })
    }

    fn check_control(&self, state: Var<'_, T>, u: Var<'_, T>) -> Result<()> {
        let expected = [state.shape()[0], self.spec.dims.inputs];
        if u.shape() != expected {
            return Err(Error::ShapeMismatch { op: "control", shapes: vec![state.shape(), u.shape()] });
        }
        Ok(())
    }

    /// State derivative for a `[batch, width]` state and `[batch, inputs]` control.
    pub fn rhs<'t>(&self, params: &[Var<'t, T>], state: Var<'t, T>, u: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_control(state, u)?;
        let tape = state.tape();
        match &self.nets {
            Nets::Naive(net) => naive_rhs(net, params, state, u),
            Nets::Geometric(net) => {
                let view = self.view(state)?;
                let out = net.forward(params, tape.concat(&[state, u])?)?;
                let dof = self.spec.dims.dof();
                let q_dot = batch::columns(out.slice(0, dof)?)?;
                let accel = out.slice(dof, 2 * dof)?;
                let kin = self.kinematics(&view, &q_dot)?;
                tape.concat(&[kin, accel])
            }
            Nets::Structured(_) | Nets::Unstructured { .. } => {
                let view = self.view(state)?;
                let (parts, w, xf, pf) = self.port(params, &view, u)?;
                if self.spec.representation.momentum_observed() {
                    let mut cols = parts.q_dot.clone();
                    cols.extend_from_slice(&parts.p_dot);
                    return batch::join(tape, &cols);
                }
                // q̇ = M⁻¹ (M x3) is the observed velocity itself
                let kin = self.kinematics(&view, &batch::columns(view.v)?)?;
                let vel = self.velocity_rows(&view, &parts, &w, xf, pf, kin)?;
                tape.concat(&[kin, vel])
            }
        }
    }

    /// Rows of `(ṙ, d/dt cos φ, d/dt sin φ)` given generalized velocities.
    fn kinematics<'t>(&self, view: &StateView<'t, T>, q_dot: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let n = self.spec.dims.translational;
        let mut cols = q_dot[..n].to_vec();
        let mut sin_rows = Vec::with_capacity(view.c.len());
        for (j, (c, s)) in view.c.iter().zip(&view.s).enumerate() {
            let w = q_dot[n + j];
            cols.push(s.mul(w)?.neg()?);
            sin_rows.push(c.mul(w)?);
        }
        cols.extend(sin_rows);
        batch::join(q_dot[0].tape(), &cols)
    }

    /// `d/dt(M⁻¹) p + M⁻¹ ṗ`, the time derivative of the generalized velocity.
    #[allow(clippy::too_many_arguments)]
    fn velocity_rows<'t>(
        &self,
        view: &StateView<'t, T>,
        parts: &PortParts<'t, T>,
        w: &[Var<'t, T>],
        xf: Var<'t, T>,
        pf: Var<'t, T>,
        coord_rate: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let tape = xf.tape();
        let minv = parts.mass_inv.as_ref().expect("velocity representations carry a mass network");
        let m_pdot = minv.matvec(&parts.p_dot)?;
        let rows = view.v.shape()[0];
        let mut out = Vec::with_capacity(w.len());
        for (wi, mp) in w.iter().zip(m_pdot) {
            let jac = tape.grad_wrt(&wi.sum()?, &[xf, pf])?[0];
            let rate = jac.mul(coord_rate)?.sum_to(&[rows, 1])?;
            out.push(rate.add(mp)?);
        }
        batch::join(tape, &out)
    }

    /// Port-Hamiltonian vector field in canonical coordinates. Also returns
    /// the `M⁻¹ p` columns and the forked coordinate and momentum nodes.
    #[allow(clippy::type_complexity)]
    fn port<'t>(
        &self,
        params: &[Var<'t, T>],
        view: &StateView<'t, T>,
        u: Var<'t, T>,
    ) -> Result<(PortParts<'t, T>, Vec<Var<'t, T>>, Var<'t, T>, Var<'t, T>)> {
        let tape = u.tape();
        let d = self.spec.dims;
        let (n, dof) = (d.translational, d.dof());
        let momentum_observed = self.spec.representation.momentum_observed();
        let xf = view.coords.identity()?;

        let (minv, potential_or_h, input, dissipation) = match &self.nets {
            Nets::Structured(s) => {
                (Some(s.mass_inv.forward_batch(params, xf)?), None, &s.input, s.dissipation.as_ref())
            }
            Nets::Unstructured { hamiltonian, mass_inv, input, dissipation } => {
                let minv = match mass_inv {
                    Some(net) => Some(net.forward_batch(params, xf)?),
                    None => None,
                };
                (minv, Some(hamiltonian), input, Some(dissipation))
            }
            _ => unreachable!("port is only used by Hamiltonian models"),
        };

        let p = if momentum_observed {
            view.v
        } else {
            let minv = minv.as_ref().expect("mass network present");
            batch::join(tape, &minv.solve(&batch::columns(view.v)?)?)?
        };
        let pf = p.identity()?;
        let pf_cols = batch::columns(pf)?;
        let w = match &minv {
            Some(m) => m.matvec(&pf_cols)?,
            None => Vec::new(),
        };
        let energy = match (&self.nets, potential_or_h) {
            (Nets::Structured(s), _) => {
                let kinetic = batch::dot(&pf_cols, &w)?.scale(T::lit(0.5))?;
                kinetic.add(s.potential.forward(params, xf)?)?
            }
            (_, Some(h)) => h.forward(params, tape.concat(&[xf, pf])?)?,
            _ => unreachable!(),
        };
        let grads = tape.grad_wrt(&energy.sum()?, &[xf, pf])?;
        let (gx, gp) = (grads[0], grads[1]);

        let mut grad_h = Vec::with_capacity(2 * dof);
        for i in 0..n {
            grad_h.push(gx.col(i)?);
        }
        for (j, (c, s)) in view.c.iter().zip(&view.s).enumerate() {
            let dc = gx.col(n + j)?;
            let ds = gx.col(n + d.angular + j)?;
            grad_h.push(c.mul(ds)?.sub(s.mul(dc)?)?);
        }
        grad_h.extend(batch::columns(gp)?);

        let mut q_dot: Vec<Var<'t, T>> = grad_h[dof..].to_vec();
        let mut p_dot: Vec<Var<'t, T>> = grad_h[..dof].iter().map(|g| g.neg()).collect::<Result<_>>()?;
        let dmat = match dissipation {
            Some(net) => {
                let mut dmat = net.forward_batch(params, view.coords)?;
                if !momentum_observed {
                    // p = M q̇ holds only when D leaves the coordinate rows alone
                    dmat = momentum_block(tape, &dmat, dof);
                }
                let loss = dmat.matvec(&grad_h)?;
                for i in 0..dof {
                    q_dot[i] = q_dot[i].sub(loss[i])?;
                    p_dot[i] = p_dot[i].sub(loss[dof + i])?;
                }
                Some(dmat)
            }
            None => None,
        };
        if d.inputs > 0 {
            let g = input.forward(params, view.coords)?;
            for (i, pd) in p_dot.iter_mut().enumerate() {
                for k in 0..d.inputs {
                    *pd = pd.add(g.col(i * d.inputs + k)?.mul(u.col(k)?)?)?;
                }
            }
        }
        Ok((PortParts { energy, grad_h, dissipation: dmat, mass_inv: minv, q_dot, p_dot }, w, xf, pf))
    }

    /// Canonical vector field `(q̇, ṗ)` and its ingredients for Hamiltonian
    /// variants; the state layout follows the model's representation.
    pub fn port_parts<'t>(
        &self,
        params: &[Var<'t, T>],
        state: Var<'t, T>,
        u: Var<'t, T>,
    ) -> Result<PortParts<'t, T>> {
        self.check_control(state, u)?;
        match self.nets {
            Nets::Structured(_) | Nets::Unstructured { .. } => {
                let view = self.view(state)?;
                Ok(self.port(params, &view, u)?.0)
            }
            _ => Err(Error::InvalidModel(format!("{} has no Hamiltonian", self.spec.variant))),
        }
    }

    /// Phase representation: `(q̇, ṗ)` for `q, p: [batch, n]`.
    pub fn phase_rhs<'t>(
        &self,
        params: &[Var<'t, T>],
        q: Var<'t, T>,
        p: Var<'t, T>,
        u: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        self.require(Representation::Phase)?;
        let n = self.spec.dims.translational;
        let out = self.rhs(params, q.tape().concat(&[q, p])?, u)?;
        Ok((out.slice(0, n)?, out.slice(n, 2 * n)?))
    }

    /// Embedded representation: `(ẋ1, ẋ2, ẋ3)` for `x1 = cos q`, `x2 = sin q`, `x3 = q̇`.
    pub fn embedded_rhs<'t>(
        &self,
        params: &[Var<'t, T>],
        x1: Var<'t, T>,
        x2: Var<'t, T>,
        x3: Var<'t, T>,
        u: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>, Var<'t, T>)> {
        self.require(Representation::Embedded)?;
        let m = self.spec.dims.angular;
        let out = self.rhs(params, x1.tape().concat(&[x1, x2, x3])?, u)?;
        Ok((out.slice(0, m)?, out.slice(m, 2 * m)?, out.slice(2 * m, 3 * m)?))
    }

    /// Hybrid representation: derivatives of `(r, cos φ, sin φ, ṙ, φ̇)`.
    #[allow(clippy::too_many_arguments)]
    pub fn hybrid_rhs<'t>(
        &self,
        params: &[Var<'t, T>],
        x: [Var<'t, T>; 5],
        u: Var<'t, T>,
    ) -> Result<[Var<'t, T>; 5]> {
        self.require(Representation::Hybrid)?;
        let (n, m) = (self.spec.dims.translational, self.spec.dims.angular);
        let tape = u.tape();
        let present: Vec<Var<'t, T>> = x.iter().copied().filter(|v| v.shape()[1] > 0).collect();
        let out = self.rhs(params, tape.concat(&present)?, u)?;
        let bounds = [0, n, n + m, n + 2 * m, 2 * n + 2 * m, 2 * n + 3 * m];
        let piece = |k: usize| out.slice(bounds[k], bounds[k + 1]);
        Ok([piece(0)?, piece(1)?, piece(2)?, piece(3)?, piece(4)?])
    }

    fn require(&self, repr: Representation) -> Result<()> {
        if self.spec.representation != repr {
            return Err(Error::InvalidModel(format!(
                "model uses the {} representation, not {}",
                self.spec.representation, repr
            )));
        }
        Ok(())
    }

    /// Evaluate the state derivative on plain values with a throwaway tape.
    pub fn rhs_values(
        &self,
        state: &Tensor<T>,
        u: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let params = self.params.bind_const(&tape);
        let out = self.rhs(&params, tape.constant(state.clone()), tape.constant(u.clone()))?;
        let value = out.value().clone();
        Ok(value)
    }
}

/// Learned (or fixed) structured functions sampled on a coordinate grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionValues<T> {
    /// `[grid, dof²]`, row-major per sample.
    pub mass_inv: Tensor<T>,
    /// `[grid, 1]`.
    pub potential: Tensor<T>,
    /// `[grid, dof·inputs]`.
    pub input: Tensor<T>,
    /// `[grid, (2·dof)²]` when the model has a dissipation network.
    pub dissipation: Option<Tensor<T>>,
}

impl<T: Scalar> DynamicsModel<T> {
    /// Evaluate `M⁻¹`, `V`, `g` and `D` at approximator inputs `coords: [grid, coord_width]`.
    pub fn functions(&self, coords: &Tensor<T>) -> Result<FunctionValues<T>> {
        let Nets::Structured(nets) = &self.nets else {
            return Err(Error::InvalidModel(format!("{} has no separable structure", self.spec.variant)));
        };
        let tape = Tape::new();
        let params = self.params.bind_const(&tape);
        let x = tape.constant(coords.clone());
        let flat = |m: BatchMat<'_, T>| -> Result<Tensor<T>> { Ok(batch::join(&tape, m.entries())?.value().clone()) };
        let mass_inv = flat(nets.mass_inv.forward_batch(&params, x)?)?;
        let potential = nets.potential.forward(&params, x)?.value().clone();
        let input = nets.input.forward(&params, x)?.value().clone();
        let dissipation = match &nets.dissipation {
            Some(d) => Some(flat(d.forward_batch(&params, x)?)?),
            None => None,
        };
        Ok(FunctionValues { mass_inv, potential, input, dissipation })
    }
}

/// Approximator inputs for a grid of angles (or positions) of a 1-DOF system.
pub fn pendulum_coords<T: Scalar>(repr: Representation, q: &[T]) -> Result<Tensor<T>> {
    match repr {
        Representation::Phase => Tensor::matrix(q.len(), 1, q.to_vec()),
        Representation::Embedded => {
            let data = q.iter().flat_map(|&a| [a.cos(), a.sin()]).collect();
            Tensor::matrix(q.len(), 2, data)
        }
        Representation::Hybrid => Err(Error::InvalidModel("the pendulum has no translational part".into())),
    }
}

/// Parameters of the damped pendulum `q̇ = M⁻¹ p`, `ṗ = -k sin q - b M⁻¹ p + g u`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumParams {
    pub mass_inv: f64,
    pub stiffness: f64,
    pub damping: f64,
    pub input_gain: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self { mass_inv: 3.0, stiffness: 5.0, damping: 0.1, input_gain: 1.0 }
    }
}

fn constant_columns<'t, T: Scalar>(x: Var<'t, T>, values: &[f64]) -> Result<Var<'t, T>> {
    let zero = x.col(0)?.scale(T::zero())?;
    let cols = values
        .iter()
        .map(|&v| zero.add(x.tape().scalar(T::lit(v))))
        .collect::<Result<Vec<_>>>()?;
    batch::join(x.tape(), &cols)
}

/// Closed-form pendulum functions as approximators for `repr`.
pub fn pendulum_truth_nets<T: Scalar>(repr: Representation, p: PendulumParams, mass_epsilon: f64) -> Result<StructuredNets<T>> {
    let cw = match repr {
        Representation::Phase => 1,
        Representation::Embedded => 2,
        Representation::Hybrid => return Err(Error::InvalidModel("the pendulum has no translational part".into())),
    };
    if p.mass_inv <= mass_epsilon || p.damping < 0.0 {
        return Err(Error::InvalidModel("pendulum parameters are not representable".into()));
    }
    let factor = (p.mass_inv - mass_epsilon).sqrt();
    let mass: FixedMap<T> = Arc::new(move |x| constant_columns(x, &[factor]));
    let k = p.stiffness;
    let potential: FixedMap<T> = Arc::new(move |x| {
        let c = if cw == 1 { x.col(0)?.cos()? } else { x.col(0)? };
        c.scale(T::lit(-k))?.add(x.tape().scalar(T::lit(k)))
    });
    let gain = p.input_gain;
    let input: FixedMap<T> = Arc::new(move |x| constant_columns(x, &[gain]));
    let damp = p.damping.sqrt();
    let dissipation: FixedMap<T> = Arc::new(move |x| constant_columns(x, &[0.0, 0.0, damp]));
    Ok(StructuredNets {
        mass_inv: CholeskyNet::from_parts(Approximator::fixed(cw, 1, mass), 1, T::lit(mass_epsilon))?,
        potential: Approximator::fixed(cw, 1, potential),
        input: Approximator::fixed(cw, 1, input),
        dissipation: Some(CholeskyNet::from_parts(Approximator::fixed(cw, 3, dissipation), 2, T::zero())?),
    })
}

/// Pendulum ground truth as a dissipative structured model without parameters.
pub fn pendulum_truth<T: Scalar>(repr: Representation, p: PendulumParams) -> Result<DynamicsModel<T>> {
    let spec = ModelSpec::new(Variant::DissipativeSymoden, repr, pendulum_dims(repr));
    let nets = pendulum_truth_nets(repr, p, spec.mass_epsilon)?;
    DynamicsModel::from_structured(spec, ParamStore::new(), nets)
}

/// Structured model equal to the pendulum truth whose four approximators
/// are `truth + MLP` with zero-initialized output layers.
pub fn pendulum_truth_residual<T: Scalar>(
    spec: ModelSpec,
    p: PendulumParams,
    rng: &mut impl Rng,
) -> Result<DynamicsModel<T>> {
    if spec.variant != Variant::DissipativeSymoden || spec.dims != pendulum_dims(spec.representation) {
        return Err(Error::InvalidModel("residual truth needs a dissipative pendulum spec".into()));
    }
    let truth = pendulum_truth_nets::<T>(spec.representation, p, spec.mass_epsilon)?;
    let template = DynamicsModel::<T>::new(spec.clone(), rng)?;
    let Nets::Structured(learned) = template.nets else { unreachable!() };
    let mut params = template.params;
    let fixed_map = |a: &Approximator<T>| match a {
        Approximator::Fixed { map, .. } => map.clone(),
        _ => unreachable!(),
    };
    let residual = |a: &Approximator<T>, learned: &Approximator<T>, params: &mut ParamStore<T>| {
        let mlp = learned.mlp().expect("fresh model uses plain MLPs").clone();
        let &(w, b) = mlp.layers().last().expect("at least one layer");
        for idx in [w, b] {
            params.get_mut(idx).value.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
        Approximator::Residual { map: fixed_map(a), mlp }
    };
    let dissipation = learned.dissipation.as_ref().expect("dissipative variant");
    let truth_d = truth.dissipation.as_ref().expect("truth is dissipative");
    let nets = StructuredNets {
        mass_inv: CholeskyNet::from_parts(
            residual(truth.mass_inv.inner(), learned.mass_inv.inner(), &mut params),
            1,
            T::lit(spec.mass_epsilon),
        )?,
        potential: residual(&truth.potential, &learned.potential, &mut params),
        input: residual(&truth.input, &learned.input, &mut params),
        dissipation: Some(CholeskyNet::from_parts(
            residual(truth_d.inner(), dissipation.inner(), &mut params),
            2,
            T::lit(spec.dissipation_epsilon),
        )?),
    };
    DynamicsModel::from_structured(spec, params, nets)
}

pub fn pendulum_dims(repr: Representation) -> Dims {
    match repr {
        Representation::Phase => Dims { translational: 1, angular: 0, inputs: 1 },
        _ => Dims { translational: 0, angular: 1, inputs: 1 },
    }
}

/// `D` with its coordinate rows and columns zeroed, keeping the momentum block.
fn momentum_block<'t, T: Scalar>(tape: &'t Tape<T>, d: &BatchMat<'t, T>, dof: usize) -> BatchMat<'t, T> {
    let k = d.rows();
    let entries = (0..k * k)
        .map(|e| {
            let (i, j) = (e / k, e % k);
            if i < dof || j < dof {
                tape.constant(Tensor::zeros(&d.at(i, j).shape()))
            } else {
                d.at(i, j)
            }
        })
        .collect();
    BatchMat::new(k, k, entries)
}

fn naive_rhs<'t, T: Scalar>(net: &Mlp, params: &[Var<'t, T>], state: Var<'t, T>, u: Var<'t, T>) -> Result<Var<'t, T>> {
    net.forward(params, state.tape().concat(&[state, u])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn eval(model: &DynamicsModel<f64>, state: &[f64], u: &[f64]) -> Vec<f64> {
        let s = Tensor::matrix(1, state.len(), state.to_vec()).unwrap();
        let u = Tensor::matrix(1, u.len(), u.to_vec()).unwrap();
        model.rhs_values(&s, &u).unwrap().into_data()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn hamiltonian_examples() {
        let tape = Tape::<f64>::new();
        let m = tape.constant(Tensor::matrix(1, 1, vec![3.0]).unwrap());
        let v = tape.constant(Tensor::scalar(0.0));
        let p = tape.constant(Tensor::vector(vec![0.0]));
        assert_eq!(hamiltonian(m, v, p).unwrap().item(), 0.0);
        let v = tape.constant(Tensor::scalar(1.7));
        assert_eq!(hamiltonian(m, v, p).unwrap().item(), 1.7);
        let eye = tape.constant(Tensor::eye(2));
        let zero = tape.constant(Tensor::scalar(0.0));
        let p = tape.constant(Tensor::vector(vec![3.0, 4.0]));
        assert_eq!(hamiltonian(eye, zero, p).unwrap().item(), 12.5);
        assert!(hamiltonian(m, zero, p).is_err());
    }

    #[test]
    fn phase_truth_examples() {
        let model = pendulum_truth::<f64>(Representation::Phase, PendulumParams::default()).unwrap();
        close(&eval(&model, &[FRAC_PI_2, 1.0], &[0.0]), &[3.0, -5.3], 1e-12);
        close(&eval(&model, &[0.0, 0.0], &[2.0]), &[0.0, 2.0], 1e-12);
    }

    #[test]
    fn embedded_truth_example() {
        let model = pendulum_truth::<f64>(Representation::Embedded, PendulumParams::default()).unwrap();
        let out = eval(&model, &[FRAC_PI_2.cos(), 1.0, 1.0], &[0.0]);
        close(&out, &[-1.0, FRAC_PI_2.cos(), -15.3], 1e-12);
    }

    #[test]
    fn phase_rhs_splits_columns() {
        let model = pendulum_truth::<f64>(Representation::Phase, PendulumParams::default()).unwrap();
        let tape = Tape::new();
        let q = tape.constant(Tensor::matrix(2, 1, vec![FRAC_PI_2, 0.0]).unwrap());
        let p = tape.constant(Tensor::matrix(2, 1, vec![1.0, 0.0]).unwrap());
        let u = tape.constant(Tensor::matrix(2, 1, vec![0.0, 2.0]).unwrap());
        let (qd, pd) = model.phase_rhs(&[], q, p, u).unwrap();
        close(qd.value().data(), &[3.0, 0.0], 1e-12);
        close(pd.value().data(), &[-5.3, 2.0], 1e-12);
        assert!(model.embedded_rhs(&[], q, p, q, u).is_err());
    }

    #[test]
    fn geometric_rejects_phase() {
        let spec = ModelSpec::new(Variant::GeometricBaseline, Representation::Phase, pendulum_dims(Representation::Phase));
        let err = DynamicsModel::<f64>::new(spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, Error::InvalidModel(_)));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("symplectic".parse::<Variant>().is_err());
        assert_eq!(Variant::applicable(Representation::Phase).len(), 4);
    }

    #[test]
    fn naive_output_width_matches_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (repr, dims) in [
            (Representation::Phase, Dims { translational: 1, angular: 0, inputs: 1 }),
            (Representation::Embedded, Dims { translational: 0, angular: 2, inputs: 1 }),
            (Representation::Hybrid, Dims { translational: 1, angular: 1, inputs: 1 }),
        ] {
            let mut spec = ModelSpec::new(Variant::NaiveBaseline, repr, dims);
            spec.baseline_hidden = vec![8];
            let model = DynamicsModel::<f64>::new(spec, &mut rng).unwrap();
            let out = eval(&model, &vec![0.3; dims.state_width()], &[0.1]);
            assert_eq!(out.len(), dims.state_width());
        }
    }

    #[test]
    fn zero_naive_net_gives_zero() {
        let mut spec = ModelSpec::new(Variant::NaiveBaseline, Representation::Embedded, pendulum_dims(Representation::Embedded));
        spec.baseline_hidden = vec![4];
        let mut model = DynamicsModel::<f64>::new(spec, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let n = model.params().count();
        model.params_mut().assign_flat(&vec![0.0; n]).unwrap();
        assert_eq!(eval(&model, &[1.0, 0.0, 0.5], &[1.0]), vec![0.0; 3]);
    }

    #[test]
    fn embedded_rows_stay_on_circle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for variant in Variant::applicable(Representation::Embedded) {
            if variant == Variant::NaiveBaseline {
                continue;
            }
            let mut spec = ModelSpec::new(variant, Representation::Embedded, pendulum_dims(Representation::Embedded));
            spec.hidden = vec![8];
            spec.baseline_hidden = vec![8];
            let model = DynamicsModel::<f64>::new(spec, &mut rng).unwrap();
            for k in 0..10 {
                let a = 0.7 * k as f64 - 3.0;
                let out = eval(&model, &[a.cos(), a.sin(), 0.4 - 0.1 * k as f64], &[0.3]);
                assert!((a.cos() * out[0] + a.sin() * out[1]).abs() < 1e-12, "{variant}");
            }
        }
    }

    #[test]
    fn residual_truth_matches_truth() {
        let mut spec = ModelSpec::new(Variant::DissipativeSymoden, Representation::Embedded, pendulum_dims(Representation::Embedded));
        spec.hidden = vec![8];
        let model = pendulum_truth_residual::<f64>(spec, PendulumParams::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(model.param_count() > 0);
        let truth = pendulum_truth::<f64>(Representation::Embedded, PendulumParams::default()).unwrap();
        let state = [0.3f64.cos(), 0.3f64.sin(), -0.7];
        close(&eval(&model, &state, &[1.5]), &eval(&truth, &state, &[1.5]), 1e-12);
    }

    #[test]
    fn truth_functions_on_grid() {
        let model = pendulum_truth::<f64>(Representation::Phase, PendulumParams::default()).unwrap();
        let coords = pendulum_coords(Representation::Phase, &[0.0, FRAC_PI_2]).unwrap();
        let f = model.functions(&coords).unwrap();
        close(f.mass_inv.data(), &[3.0, 3.0], 1e-12);
        close(f.potential.data(), &[0.0, 5.0], 1e-12);
        close(f.input.data(), &[1.0, 1.0], 1e-12);
        close(f.dissipation.unwrap().data(), &[0.0, 0.0, 0.0, 0.1, 0.0, 0.0, 0.0, 0.1], 1e-12);
    }
}
