//! Closed-form mechanical systems `H = ½ pᵀ M(q)⁻¹ p + V(q)` with viscous
//! damping on the generalized velocities and a constant input matrix.

use serde::{Deserialize, Serialize};

use crate::models::PendulumParams;

/// Solve a small dense system by Gaussian elimination with partial pivoting.
pub fn solve_dense(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| m[i * n + k].abs().total_cmp(&m[j * n + k].abs())).unwrap_or(k);
        if piv != k {
            for j in 0..n {
                m.swap(k * n + j, piv * n + j);
            }
            x.swap(k, piv);
        }
        for i in k + 1..n {
            let f = m[i * n + k] / m[k * n + k];
            for j in k..n {
                m[i * n + j] -= f * m[k * n + j];
            }
            x[i] -= f * x[k];
        }
    }
    for i in (0..n).rev() {
        let mut acc = x[i];
        for j in i + 1..n {
            acc -= m[i * n + j] * x[j];
        }
        x[i] = acc / m[i * n + i];
    }
    x
}

fn matvec(a: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..a.len() / n).map(|i| (0..n).map(|j| a[i * n + j] * v[j]).sum()).collect()
}

fn quad(a: &[f64], v: &[f64]) -> f64 {
    matvec(a, v).iter().zip(v).map(|(x, y)| x * y).sum()
}

pub trait Mechanics {
    /// Degrees of freedom.
    fn dof(&self) -> usize;
    fn inputs(&self) -> usize;
    /// Row-major `M(q)`.
    fn mass(&self, q: &[f64]) -> Vec<f64>;
    /// Row-major `∂M/∂q_k`.
    fn mass_partial(&self, q: &[f64], k: usize) -> Vec<f64>;
    fn potential(&self, q: &[f64]) -> f64;
    fn potential_grad(&self, q: &[f64]) -> Vec<f64>;
    /// Viscous coefficient per degree of freedom.
    fn damping(&self) -> Vec<f64>;
    /// Row-major `dof × inputs`.
    fn input_matrix(&self) -> Vec<f64>;

    fn velocity(&self, q: &[f64], p: &[f64]) -> Vec<f64> {
        solve_dense(&self.mass(q), p)
    }

    fn momentum(&self, q: &[f64], v: &[f64]) -> Vec<f64> {
        matvec(&self.mass(q), v)
    }

    fn energy(&self, q: &[f64], v: &[f64]) -> f64 {
        0.5 * quad(&self.mass(q), v) + self.potential(q)
    }

    /// `(q̇, ṗ)` in canonical coordinates.
    fn canonical_rhs(&self, q: &[f64], p: &[f64], u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let v = self.velocity(q, p);
        let dv = self.potential_grad(q);
        let b = self.damping();
        let g = self.input_matrix();
        let m = self.inputs();
        let p_dot = (0..self.dof())
            .map(|k| {
                let drive: f64 = (0..m).map(|j| g[k * m + j] * u[j]).sum();
                0.5 * quad(&self.mass_partial(q, k), &v) - dv[k] - b[k] * v[k] + drive
            })
            .collect();
        (v, p_dot)
    }

    /// Generalized acceleration `q̈` from positions and velocities.
    fn acceleration(&self, q: &[f64], v: &[f64], u: &[f64]) -> Vec<f64> {
        let n = self.dof();
        let p = self.momentum(q, v);
        let (_, p_dot) = self.canonical_rhs(q, &p, u);
        // ṗ = M q̈ + Ṁ q̇
        let mut m_dot = vec![0.0; n * n];
        for (k, vk) in v.iter().enumerate() {
            for (acc, d) in m_dot.iter_mut().zip(self.mass_partial(q, k)) {
                *acc += d * vk;
            }
        }
        let rhs: Vec<f64> = p_dot.iter().zip(matvec(&m_dot, v)).map(|(a, b)| a - b).collect();
        solve_dense(&self.mass(q), &rhs)
    }
}

impl Mechanics for PendulumParams {
    fn dof(&self) -> usize {
        1
    }

    fn inputs(&self) -> usize {
        1
    }

    fn mass(&self, _q: &[f64]) -> Vec<f64> {
        vec![1.0 / self.mass_inv]
    }

    fn mass_partial(&self, _q: &[f64], _k: usize) -> Vec<f64> {
        vec![0.0]
    }

    fn potential(&self, q: &[f64]) -> f64 {
        self.stiffness * (1.0 - q[0].cos())
    }

    fn potential_grad(&self, q: &[f64]) -> Vec<f64> {
        vec![self.stiffness * q[0].sin()]
    }

    fn damping(&self) -> Vec<f64> {
        vec![self.damping]
    }

    fn input_matrix(&self) -> Vec<f64> {
        vec![self.input_gain]
    }
}

/// Cart with a point-mass pole; the pole angle is zero hanging down and the
/// input is a horizontal force on the cart.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartPole {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_length: f64,
    pub gravity: f64,
    pub cart_damping: f64,
    pub pole_damping: f64,
}

impl Default for CartPole {
    fn default() -> Self {
        Self { cart_mass: 1.0, pole_mass: 1.0, pole_length: 1.0, gravity: 9.8, cart_damping: 0.1, pole_damping: 0.1 }
    }
}

impl Mechanics for CartPole {
    fn dof(&self) -> usize {
        2
    }

    fn inputs(&self) -> usize {
        1
    }

    fn mass(&self, q: &[f64]) -> Vec<f64> {
        let (mc, mp, l) = (self.cart_mass, self.pole_mass, self.pole_length);
        let off = mp * l * q[1].cos();
        vec![mc + mp, off, off, mp * l * l]
    }

    fn mass_partial(&self, q: &[f64], k: usize) -> Vec<f64> {
        if k == 0 {
            return vec![0.0; 4];
        }
        let off = -self.pole_mass * self.pole_length * q[1].sin();
        vec![0.0, off, off, 0.0]
    }

    fn potential(&self, q: &[f64]) -> f64 {
        self.pole_mass * self.gravity * self.pole_length * (1.0 - q[1].cos())
    }

    fn potential_grad(&self, q: &[f64]) -> Vec<f64> {
        vec![0.0, self.pole_mass * self.gravity * self.pole_length * q[1].sin()]
    }

    fn damping(&self) -> Vec<f64> {
        vec![self.cart_damping, self.pole_damping]
    }

    fn input_matrix(&self) -> Vec<f64> {
        vec![1.0, 0.0]
    }
}

/// Two uniform rods; the first angle is absolute from hanging down, the
/// second relative to the first link, and torque acts on the second joint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Acrobot {
    pub link_mass: [f64; 2],
    pub link_length: [f64; 2],
    pub gravity: f64,
    pub joint_damping: [f64; 2],
}

impl Default for Acrobot {
    fn default() -> Self {
        Self { link_mass: [1.0, 1.0], link_length: [1.0, 1.0], gravity: 9.8, joint_damping: [0.1, 0.1] }
    }
}

impl Acrobot {
    /// `(m2, l1, lc1, lc2, I1, I2)` with centroidal rod inertias.
    fn geometry(&self) -> (f64, f64, f64, f64, f64, f64) {
        let [m1, m2] = self.link_mass;
        let [l1, l2] = self.link_length;
        (m2, l1, 0.5 * l1, 0.5 * l2, m1 * l1 * l1 / 12.0, m2 * l2 * l2 / 12.0)
    }
}

impl Mechanics for Acrobot {
    fn dof(&self) -> usize {
        2
    }

    fn inputs(&self) -> usize {
        1
    }

    fn mass(&self, q: &[f64]) -> Vec<f64> {
        let m1 = self.link_mass[0];
        let (m2, l1, c1, c2, i1, i2) = self.geometry();
        let cos2 = q[1].cos();
        let m11 = m1 * c1 * c1 + m2 * (l1 * l1 + c2 * c2 + 2.0 * l1 * c2 * cos2) + i1 + i2;
        let m12 = m2 * (c2 * c2 + l1 * c2 * cos2) + i2;
        let m22 = m2 * c2 * c2 + i2;
        vec![m11, m12, m12, m22]
    }

    fn mass_partial(&self, q: &[f64], k: usize) -> Vec<f64> {
        if k == 0 {
            return vec![0.0; 4];
        }
        let (m2, l1, _, c2, _, _) = self.geometry();
        let s = -m2 * l1 * c2 * q[1].sin();
        vec![2.0 * s, s, s, 0.0]
    }

    fn potential(&self, q: &[f64]) -> f64 {
        let m1 = self.link_mass[0];
        let (m2, l1, c1, c2, _, _) = self.geometry();
        let g = self.gravity;
        m1 * g * c1 * (1.0 - q[0].cos()) + m2 * g * (l1 * (1.0 - q[0].cos()) + c2 * (1.0 - (q[0] + q[1]).cos()))
    }

    fn potential_grad(&self, q: &[f64]) -> Vec<f64> {
        let m1 = self.link_mass[0];
        let (m2, l1, c1, c2, _, _) = self.geometry();
        let g = self.gravity;
        let s12 = (q[0] + q[1]).sin();
        vec![(m1 * c1 + m2 * l1) * g * q[0].sin() + m2 * g * c2 * s12, m2 * g * c2 * s12]
    }

    fn damping(&self) -> Vec<f64> {
        self.joint_damping.to_vec()
    }

    fn input_matrix(&self) -> Vec<f64> {
        vec![0.0, 1.0]
    }
}
