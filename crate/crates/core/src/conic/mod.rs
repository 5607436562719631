//! Conic programs `min cᵀx  s.t.  A x = b,  x ∈ K` over products of free,
//! nonnegative, second-order, rotated second-order and PSD cones, plus the
//! bundled interior-point solver and a plain-text standard form.
//!
//! Variables are declared in named groups through [`ProgramBuilder`]; the
//! flattened vector concatenates groups in declaration order. PSD groups use
//! the `svec` layout of [`psd_slot`].

pub mod cones;
mod format;
mod ipm;

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cones::{smat, svec, svec_index, svec_len};
pub use format::{export_standard_form, import_standard_form, FormatError};
pub use ipm::{InteriorPoint, SolveError, SolverOptions};

/// Cone attached to a variable group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cone {
    Free(usize),
    Nonneg(usize),
    /// `x_0 >= |x_{1..}|`.
    Soc(usize),
    /// `2 x_0 x_1 >= |x_{2..}|²`, `x_0, x_1 >= 0`.
    Rsoc(usize),
    /// Symmetric `s × s` PSD matrix, stored as `svec` of length `s(s+1)/2`.
    Psd(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Free(k) | Cone::Nonneg(k) | Cone::Soc(k) | Cone::Rsoc(k) => k,
            Cone::Psd(s) => svec_len(s),
        }
    }

    pub(crate) fn tag(&self) -> &'static str {
        match self {
            Cone::Free(_) => "free",
            Cone::Nonneg(_) => "nonneg",
            Cone::Soc(_) => "soc",
            Cone::Rsoc(_) => "rsoc",
            Cone::Psd(_) => "psd",
        }
    }

    pub(crate) fn size_param(&self) -> usize {
        match *self {
            Cone::Free(k) | Cone::Nonneg(k) | Cone::Soc(k) | Cone::Rsoc(k) => k,
            Cone::Psd(s) => s,
        }
    }
}

impl fmt::Display for Cone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.tag(), self.size_param())
    }
}

/// A declared group of variable slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarGroup {
    pub name: String,
    pub cone: Cone,
    pub offset: usize,
}

impl VarGroup {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.cone.dim()
    }

    pub fn slot(&self, k: usize) -> usize {
        assert!(k < self.cone.dim(), "slot {k} out of range for group {}", self.name);
        self.offset + k
    }
}

/// Handle to a PSD group; entries of the matrix are `scale * x[col]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PsdVar {
    pub offset: usize,
    pub side: usize,
}

impl PsdVar {
    /// `(column, scale)` with `X_ij = scale * x[column]`.
    pub fn entry(&self, i: usize, j: usize) -> (usize, f64) {
        psd_slot(self.offset, i, j)
    }
}

/// Column and scale of entry `(i, j)` of a PSD group starting at `offset`.
pub fn psd_slot(offset: usize, i: usize, j: usize) -> (usize, f64) {
    let scale = if i == j { 1.0 } else { std::f64::consts::FRAC_1_SQRT_2 };
    (offset + svec_index(i, j), scale)
}

/// Sparse affine expression `Σ a_k x_k + constant`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinExpr {
    terms: Vec<(usize, f64)>,
    constant: f64,
}

impl LinExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(col: usize) -> Self {
        Self::term(col, 1.0)
    }

    pub fn term(col: usize, coef: f64) -> Self {
        Self { terms: vec![(col, coef)], constant: 0.0 }
    }

    pub fn terms(&self) -> &[(usize, f64)] {
        &self.terms
    }

    pub fn constant_part(&self) -> f64 {
        self.constant
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add_term(&mut self, col: usize, coef: f64) {
        self.terms.push((col, coef));
    }

    pub fn add_constant(&mut self, c: f64) {
        self.constant += c;
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &LinExpr) {
        if s == 0.0 {
            return;
        }
        self.terms.extend(other.terms.iter().map(|&(c, a)| (c, s * a)));
        self.constant += s * other.constant;
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = Self::zero();
        out.axpy(s, self);
        out
    }

    /// Merges duplicate columns and drops exact zeros; terms end up sorted.
    pub fn normalized(&self) -> Self {
        let mut t = self.terms.clone();
        t.sort_by_key(|&(c, _)| c);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(t.len());
        for (c, a) in t {
            match out.last_mut() {
                Some(last) if last.0 == c => last.1 += a,
                _ => out.push((c, a)),
            }
        }
        out.retain(|&(_, a)| a != 0.0);
        Self { terms: out, constant: self.constant }
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(c, a)| a * x[c]).sum::<f64>()
    }

    pub fn max_column(&self) -> Option<usize> {
        self.terms.iter().map(|&(c, _)| c).max()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProgramError {
    #[error("reference to undeclared variable slot {col} (program has {n} slots)")]
    UndeclaredVariable { col: usize, n: usize },
    #[error("variable group '{name}' redeclared as {new} (previously {old})")]
    ConflictingCone { name: String, old: Cone, new: Cone },
    #[error("invalid group name '{0}': names must be non-empty and free of whitespace and '#'")]
    InvalidName(String),
    #[error("non-finite coefficient in {0}")]
    NonFinite(&'static str),
}

/// Label attached to a contiguous range of equality rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowLabel {
    pub name: String,
    pub rows: Range<usize>,
}

/// An immutable conic program in standard form.
#[derive(Clone, Debug, PartialEq)]
pub struct ConicProgram {
    groups: Vec<VarGroup>,
    n: usize,
    c: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
    b: Vec<f64>,
}

impl ConicProgram {
    pub fn empty() -> Self {
        Self { groups: Vec::new(), n: 0, c: Vec::new(), rows: Vec::new(), b: Vec::new() }
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn num_equalities(&self) -> usize {
        self.rows.len()
    }

    pub fn groups(&self) -> &[VarGroup] {
        &self.groups
    }

    pub fn group(&self, name: &str) -> Option<&VarGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn objective(&self) -> &[f64] {
        &self.c
    }

    /// Sparse equality rows, each sorted by column without duplicates.
    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn rhs(&self) -> &[f64] {
        &self.b
    }

    pub fn count_cones(&self, pred: impl Fn(&Cone) -> bool) -> usize {
        self.groups.iter().filter(|g| pred(&g.cone)).count()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        cones::dot(&self.c, x)
    }

    /// `A x - b`.
    pub fn primal_residual(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .zip(&self.b)
            .map(|(row, bi)| row.iter().map(|&(c, a)| a * x[c]).sum::<f64>() - bi)
            .collect()
    }

    /// Name table: one `(slot range, group name, cone)` line per group.
    pub fn name_table(&self) -> Vec<(Range<usize>, String, Cone)> {
        self.groups.iter().map(|g| (g.range(), g.name.clone(), g.cone)).collect()
    }

}

/// Incremental construction with a shared variable registry.
#[derive(Clone, Debug, Default)]
pub struct ProgramBuilder {
    groups: Vec<VarGroup>,
    by_name: HashMap<String, usize>,
    n: usize,
    c: Vec<(usize, f64)>,
    rows: Vec<LinExpr>,
    b: Vec<f64>,
    labels: Vec<RowLabel>,
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn num_equalities(&self) -> usize {
        self.rows.len()
    }

    /// Declares a group, or returns the existing one if `name` was already
    /// declared with the same cone.
    pub fn declare(&mut self, name: &str, cone: Cone) -> Result<VarGroup, ProgramError> {
        if name.is_empty() || name.chars().any(|ch| ch.is_whitespace() || ch == '#') {
            return Err(ProgramError::InvalidName(name.to_string()));
        }
        if let Some(&idx) = self.by_name.get(name) {
            let g = &self.groups[idx];
            if g.cone != cone {
                return Err(ProgramError::ConflictingCone { name: name.to_string(), old: g.cone, new: cone });
            }
            return Ok(g.clone());
        }
        let g = VarGroup { name: name.to_string(), cone, offset: self.n };
        self.n += cone.dim();
        self.by_name.insert(name.to_string(), self.groups.len());
        self.groups.push(g.clone());
        Ok(g)
    }

    pub fn declare_psd(&mut self, name: &str, side: usize) -> Result<PsdVar, ProgramError> {
        let g = self.declare(name, Cone::Psd(side))?;
        Ok(PsdVar { offset: g.offset, side })
    }

    /// Declares a fresh group, appending a numeric suffix if the name is taken.
    pub fn declare_unique(&mut self, name: &str, cone: Cone) -> Result<VarGroup, ProgramError> {
        if !self.by_name.contains_key(name) {
            return self.declare(name, cone);
        }
        let mut k = 1usize;
        loop {
            let cand = format!("{name}.{k}");
            if !self.by_name.contains_key(&cand) {
                return self.declare(&cand, cone);
            }
            k += 1;
        }
    }

    pub fn group(&self, name: &str) -> Option<&VarGroup> {
        self.by_name.get(name).map(|&i| &self.groups[i])
    }

    pub fn add_objective(&mut self, col: usize, coef: f64) {
        self.c.push((col, coef));
    }

    pub fn add_objective_expr(&mut self, e: &LinExpr) {
        self.c.extend_from_slice(e.terms());
    }

    /// Adds `expr = rhs`; the constant part of `expr` is moved to the right.
    pub fn add_equality(&mut self, expr: LinExpr, rhs: f64) -> usize {
        let b = rhs - expr.constant_part();
        let mut e = expr;
        e.constant = 0.0;
        self.rows.push(e);
        self.b.push(b);
        self.rows.len() - 1
    }

    /// Adds a batch of `expr = 0` rows under a label.
    pub fn add_labeled(&mut self, name: &str, exprs: impl IntoIterator<Item = LinExpr>) -> Range<usize> {
        let start = self.rows.len();
        for e in exprs {
            self.add_equality(e, 0.0);
        }
        let range = start..self.rows.len();
        self.labels.push(RowLabel { name: name.to_string(), rows: range.clone() });
        range
    }

    pub fn label_rows(&mut self, name: &str, rows: Range<usize>) {
        self.labels.push(RowLabel { name: name.to_string(), rows });
    }

    pub fn finish(self) -> Result<(ConicProgram, Vec<RowLabel>), ProgramError> {
        let n = self.n;
        let mut c = vec![0.0; n];
        for &(col, v) in &self.c {
            if col >= n {
                return Err(ProgramError::UndeclaredVariable { col, n });
            }
            if !v.is_finite() {
                return Err(ProgramError::NonFinite("objective"));
            }
            c[col] += v;
        }
        for v in &mut c {
            if *v == 0.0 {
                *v = 0.0;
            }
        }
        let mut rows = Vec::with_capacity(self.rows.len());
        for e in &self.rows {
            let e = e.normalized();
            if let Some(col) = e.max_column() {
                if col >= n {
                    return Err(ProgramError::UndeclaredVariable { col, n });
                }
            }
            if e.terms().iter().any(|(_, a)| !a.is_finite()) {
                return Err(ProgramError::NonFinite("equality"));
            }
            rows.push(e.terms().to_vec());
        }
        let mut b = self.b;
        for v in &mut b {
            if !v.is_finite() {
                return Err(ProgramError::NonFinite("right-hand side"));
            }
            if *v == 0.0 {
                *v = 0.0;
            }
        }
        Ok((ConicProgram { groups: self.groups, n, c, rows, b }, self.labels))
    }
}

/// Outcome classification of a solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIterations,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::PrimalInfeasible => "primal-infeasible",
            SolveStatus::DualInfeasible => "dual-infeasible",
            SolveStatus::MaxIterations => "max-iterations",
        })
    }
}

/// Primal-dual point returned by a solver.
///
/// For infeasible statuses `x` (dual infeasible) or `(y, z)` (primal
/// infeasible) hold the certificate instead of a normalized iterate.
#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// `|cᵀx - bᵀy|` at the returned point.
    pub gap: f64,
    /// `|Ax - b| / (1 + |b|)`.
    pub primal_residual: f64,
    /// `|Aᵀy + z - c| / (1 + |c|)`.
    pub dual_residual: f64,
    pub iterations: usize,
}

/// Anything that can solve a [`ConicProgram`].
pub trait ConicSolver {
    fn solve(&self, program: &ConicProgram) -> Result<Solution, SolveError>;
}
