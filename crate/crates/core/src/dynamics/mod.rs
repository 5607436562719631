//! Simulation and diagnostics: fixed-step RK4 integration, noisy dataset
//! synthesis, CSV files, and distances between vector fields.

mod data;
mod metrics;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{PolyField, VectorField};
use crate::poly::PolyVec;
use crate::semialg::{BasicSemialgebraicSet, SetError};

pub use data::{
    read_dataset_csv, read_trajectory_csv, sample_dataset, write_dataset_csv, write_trajectory_csv, Dataset,
    DerivativeSource, NoiseModel, Provenance, SampleOptions, Schedule,
};
pub(crate) use data::{header, parse_row};
pub use metrics::{gronwall_bound, lipschitz_estimate, sup_distance, trajectory_distance, LIPSCHITZ_SAFETY};

/// Default RK4 step in model time units.
pub const DEFAULT_STEP: f64 = 1e-3;
/// Membership tolerance used for domain-exit detection.
pub const EXIT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("state became non-finite at t = {t}; last finite state {last:?}")]
    Diverged { t: f64, last: Vec<f64> },
    #[error("invalid horizon or step: {0}")]
    InvalidTime(String),
    #[error("initial state {0:?} lies outside the domain")]
    OutsideDomain(Vec<f64>),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("empty sampling schedule")]
    EmptySchedule,
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Set(#[from] SetError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Named non-polynomial ground-truth fields with analytic Jacobians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ClosedForm {
    /// `ẋ₁ = -a₁x₁ + b₁(1 - x₁)x₂ - u₁x₁`, `ẋ₂ = -a₂x₂ + b₂(1 - x₂)x₁ - u₂x₂`.
    Disease { a1: f64, b1: f64, a2: f64, b2: f64, u1: f64, u2: f64 },
    /// `θ̈ = -(g/ℓ) sin θ` on the state `(θ, θ̇)`; the mass does not enter.
    Pendulum { g: f64, l: f64, m: f64 },
    /// `Ṅ = (μN/ν)(1 - (N/K)^ν)`, `K̇ = ωN - γN^{2/3}K`.
    Tumor { mu: f64, nu: f64, gamma: f64, omega: f64 },
}

impl ClosedForm {
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match *self {
            ClosedForm::Disease { a1, b1, a2, b2, u1, u2 } => {
                out[0] = -a1 * x[0] + b1 * (1.0 - x[0]) * x[1] - u1 * x[0];
                out[1] = -a2 * x[1] + b2 * (1.0 - x[1]) * x[0] - u2 * x[1];
            }
            ClosedForm::Pendulum { g, l, .. } => {
                out[0] = x[1];
                out[1] = -(g / l) * x[0].sin();
            }
            ClosedForm::Tumor { mu, nu, gamma, omega } => {
                let (n, k) = (x[0], x[1]);
                out[0] = mu * n / nu * (1.0 - (n / k).powf(nu));
                out[1] = omega * n - gamma * n.cbrt().powi(2) * k;
            }
        }
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        match *self {
            ClosedForm::Disease { a1, b1, a2, b2, u1, u2 } => DMatrix::from_row_slice(
                2,
                2,
                &[-a1 - b1 * x[1] - u1, b1 * (1.0 - x[0]), b2 * (1.0 - x[1]), -a2 - b2 * x[0] - u2],
            ),
            ClosedForm::Pendulum { g, l, .. } => DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -(g / l) * x[0].cos(), 0.0]),
            ClosedForm::Tumor { mu, nu, gamma, omega } => {
                let (n, k) = (x[0], x[1]);
                let r = (n / k).powf(nu);
                let c = n.cbrt();
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[
                        mu / nu * (1.0 - r) - mu * r,
                        mu * n / k * r,
                        omega - 2.0 / 3.0 * gamma * k / c,
                        -gamma * c * c,
                    ],
                )
            }
        }
    }
}

/// A vector field used for simulation: a polynomial or a closed form.
#[derive(Clone, Debug)]
pub enum FieldHandle {
    Poly(PolyField),
    Closed(ClosedForm),
}

impl FieldHandle {
    pub fn poly(p: PolyVec) -> Self {
        FieldHandle::Poly(PolyField::new(p))
    }

    /// Unique name for provenance records.
    pub fn id(&self) -> String {
        match self {
            FieldHandle::Poly(p) => format!("poly(n={},d={})", p.poly().n(), p.poly().degree()),
            FieldHandle::Closed(c) => match c {
                ClosedForm::Disease { u1, u2, .. } if *u1 != 0.0 || *u2 != 0.0 => "disease_controlled".to_string(),
                ClosedForm::Disease { .. } => "disease".to_string(),
                ClosedForm::Pendulum { .. } => "pendulum".to_string(),
                ClosedForm::Tumor { .. } => "tumor".to_string(),
            },
        }
    }
}

impl From<PolyVec> for FieldHandle {
    fn from(p: PolyVec) -> Self {
        FieldHandle::poly(p)
    }
}

impl VectorField for FieldHandle {
    fn dim(&self) -> usize {
        match self {
            FieldHandle::Poly(p) => p.dim(),
            FieldHandle::Closed(_) => 2,
        }
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            FieldHandle::Poly(p) => p.eval_into(x, out),
            FieldHandle::Closed(c) => c.eval_into(x, out),
        }
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        match self {
            FieldHandle::Poly(p) => p.jacobian(x),
            FieldHandle::Closed(c) => c.jacobian(x),
        }
    }

    fn as_poly(&self) -> Option<&PolyVec> {
        match self {
            FieldHandle::Poly(p) => Some(p.poly()),
            FieldHandle::Closed(_) => None,
        }
    }
}

/// `ẋ = f(x) - diag(u) x`: constant proportional controls on each state.
pub struct Controlled<'a, F: VectorField + ?Sized> {
    pub base: &'a F,
    pub u: Vec<f64>,
}

impl<F: VectorField + ?Sized> VectorField for Controlled<'_, F> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        self.base.eval_into(x, out);
        for ((o, &xi), &ui) in out.iter_mut().zip(x).zip(&self.u) {
            *o -= ui * xi;
        }
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut j = self.base.jacobian(x);
        for (i, &ui) in self.u.iter().enumerate() {
            j[(i, i)] -= ui;
        }
        j
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub exited_at: Option<f64>,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectories hold at least the initial state")
    }

    /// Number of leading samples that lie in the domain.
    pub fn admissible_len(&self) -> usize {
        match self.exited_at {
            Some(t) => self.times.iter().position(|&s| s >= t).unwrap_or(self.times.len()),
            None => self.times.len(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct IntegrateOptions {
    pub step: f64,
    /// Domain for exit detection.
    pub domain: Option<BasicSemialgebraicSet>,
    /// Accept an initial state outside `domain`.
    pub allow_outside: bool,
    /// Stop integrating at the first sample outside `domain`.
    pub stop_on_exit: bool,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self { step: DEFAULT_STEP, domain: None, allow_outside: false, stop_on_exit: false }
    }
}

impl IntegrateOptions {
    pub fn with_domain(domain: BasicSemialgebraicSet) -> Self {
        Self { domain: Some(domain), ..Self::default() }
    }
}

struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(n: usize) -> Self {
        Self { k1: vec![0.0; n], k2: vec![0.0; n], k3: vec![0.0; n], k4: vec![0.0; n], tmp: vec![0.0; n] }
    }

    fn step(&mut self, f: &(impl VectorField + ?Sized), x: &mut [f64], h: f64) {
        let n = x.len();
        f.eval_into(x, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k1[i];
        }
        f.eval_into(&self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k2[i];
        }
        f.eval_into(&self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = x[i] + h * self.k3[i];
        }
        f.eval_into(&self.tmp, &mut self.k4);
        for i in 0..n {
            x[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

fn check_start(f: &(impl VectorField + ?Sized), x0: &[f64], opts: &IntegrateOptions) -> Result<(), DynamicsError> {
    if x0.len() != f.dim() {
        return Err(DynamicsError::Dimension { expected: f.dim(), found: x0.len() });
    }
    if !(opts.step > 0.0 && opts.step.is_finite()) {
        return Err(DynamicsError::InvalidTime(format!("step {}", opts.step)));
    }
    if let Some(d) = &opts.domain {
        if !opts.allow_outside && !d.membership(x0, EXIT_TOL)? {
            return Err(DynamicsError::OutsideDomain(x0.to_vec()));
        }
    }
    Ok(())
}

/// RK4 with fixed step `opts.step` on `[0, t_end]`; the last step is
/// shortened to land on `t_end`. Every step is recorded.
pub fn integrate(
    f: &(impl VectorField + ?Sized),
    x0: &[f64],
    t_end: f64,
    opts: &IntegrateOptions,
) -> Result<Trajectory, DynamicsError> {
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(DynamicsError::InvalidTime(format!("horizon {t_end}")));
    }
    check_start(f, x0, opts)?;
    let h = opts.step;
    let steps = (t_end / h - 1e-9).ceil().max(0.0) as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(x0.to_vec());
    let mut exited_at = None;
    if let Some(d) = &opts.domain {
        if !d.membership(x0, EXIT_TOL)? {
            exited_at = Some(0.0);
            if opts.stop_on_exit {
                return Ok(Trajectory { times, states, exited_at });
            }
        }
    }
    let mut rk = Rk4::new(x0.len());
    let mut x = x0.to_vec();
    for k in 1..=steps {
        let t = if k == steps { t_end } else { k as f64 * h };
        let dt = t - times[k - 1];
        rk.step(f, &mut x, dt);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::Diverged { t, last: states.last().unwrap().clone() });
        }
        times.push(t);
        states.push(x.clone());
        if exited_at.is_none() {
            if let Some(d) = &opts.domain {
                if !d.membership(&x, EXIT_TOL)? {
                    exited_at = Some(t);
                    if opts.stop_on_exit {
                        break;
                    }
                }
            }
        }
    }
    Ok(Trajectory { times, states, exited_at })
}

/// States at the requested increasing `times` (which may start at 0), using
/// steps of at most `opts.step` that land exactly on each sample time.
pub fn integrate_at(
    f: &(impl VectorField + ?Sized),
    x0: &[f64],
    times: &[f64],
    opts: &IntegrateOptions,
) -> Result<Trajectory, DynamicsError> {
    check_start(f, x0, opts)?;
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DynamicsError::InvalidTime("sample times must be nonnegative and strictly increasing".into()));
    }
    let h = opts.step;
    let mut rk = Rk4::new(x0.len());
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut states = Vec::with_capacity(times.len());
    let mut exited_at = None;
    for &target in times {
        let span = target - t;
        let steps = (span / h - 1e-9).ceil().max(0.0) as usize;
        for k in 1..=steps {
            let next = if k == steps { target } else { t + h };
            rk.step(f, &mut x, next - t);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(DynamicsError::Diverged { t: next, last: states.last().cloned().unwrap_or(x0.to_vec()) });
            }
            t = next;
            if exited_at.is_none() {
                if let Some(d) = &opts.domain {
                    if !d.membership(&x, EXIT_TOL)? {
                        exited_at = Some(t);
                    }
                }
            }
        }
        t = target;
        states.push(x.clone());
    }
    Ok(Trajectory { times: times.to_vec(), states, exited_at })
}
