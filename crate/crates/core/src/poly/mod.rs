//! Sparse multivariate polynomials over `f64`.
//!
//! Terms are kept in a `BTreeMap` keyed by [`Monomial`], whose ordering is
//! graded lexicographic. Every module that matches coefficients (Gram
//! parameterizations, symmetry constraints, potentials) walks monomials in
//! this single order.

mod compiled;
mod monomial;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use compiled::{BasisEvaluator, CompiledPoly};

pub use monomial::{binomial, monomial_basis, Monomial};

/// Coefficients below this magnitude are dropped on normalization.
pub const DROP_TOL: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("dimension mismatch: expected {expected} variables, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("variable index {index} out of range for {n} variables")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("monomial {0} is not part of the supplied basis")]
    MissingMonomial(Monomial),
}

/// A polynomial in `n` real variables.
#[derive(Clone, PartialEq)]
pub struct MultiPoly {
    n: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl MultiPoly {
    pub fn zero(n: usize) -> Self {
        Self { n, terms: BTreeMap::new() }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        let mut p = Self::zero(n);
        p.add_term(Monomial::one(n), c);
        p
    }

    /// The coordinate polynomial `x_j` (0-based).
    pub fn var(n: usize, j: usize) -> Self {
        let mut p = Self::zero(n);
        p.add_term(Monomial::unit(n, j), 1.0);
        p
    }

    /// Builds `Σ a_k x_k + c`.
    pub fn affine(coeffs: &[f64], c: f64) -> Self {
        let n = coeffs.len();
        let mut p = Self::constant(n, c);
        for (j, &a) in coeffs.iter().enumerate() {
            p.add_term(Monomial::unit(n, j), a);
        }
        p
    }

    pub fn from_terms<I>(n: usize, terms: I) -> Result<Self, PolyError>
    where
        I: IntoIterator<Item = (Vec<u32>, f64)>,
    {
        let mut p = Self::zero(n);
        for (exps, c) in terms {
            if exps.len() != n {
                return Err(PolyError::DimensionMismatch { expected: n, found: exps.len() });
            }
            p.add_term(Monomial::new(exps), c);
        }
        Ok(p)
    }

    /// Rebuilds a polynomial from coefficients listed in `basis` order.
    pub fn from_coefficients(n: usize, basis: &[Monomial], coeffs: &[f64]) -> Self {
        assert_eq!(basis.len(), coeffs.len(), "basis/coefficient length mismatch");
        let mut p = Self::zero(n);
        for (m, &c) in basis.iter().zip(coeffs) {
            assert_eq!(m.n(), n);
            p.add_term(m.clone(), c);
        }
        p
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coefficient(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.terms.values().fold(0.0, |acc, c| acc.max(c.abs()))
    }

    /// Adds `c` to the coefficient of `m`, dropping the term if it cancels.
    pub fn add_term(&mut self, m: Monomial, c: f64) {
        debug_assert_eq!(m.n(), self.n);
        let entry = self.terms.entry(m);
        match entry {
            std::collections::btree_map::Entry::Occupied(mut e) => {
                let v = *e.get() + c;
                if v.abs() < DROP_TOL {
                    e.remove();
                } else {
                    *e.get_mut() = v;
                }
            }
            std::collections::btree_map::Entry::Vacant(e) => {
                if c.abs() >= DROP_TOL {
                    e.insert(c);
                }
            }
        }
    }

    fn check_dim(&self, found: usize) -> Result<(), PolyError> {
        if found != self.n {
            Err(PolyError::DimensionMismatch { expected: self.n, found })
        } else {
            Ok(())
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64, PolyError> {
        self.check_dim(x.len())?;
        Ok(self.terms.iter().map(|(m, c)| c * m.evaluate(x)).sum())
    }

    /// Partial derivative with respect to the 0-based variable `j`.
    pub fn differentiate(&self, j: usize) -> Result<Self, PolyError> {
        if j >= self.n {
            return Err(PolyError::IndexOutOfRange { index: j, n: self.n });
        }
        let mut out = Self::zero(self.n);
        for (m, &c) in &self.terms {
            if let Some((k, dm)) = m.derivative(j) {
                out.add_term(dm, c * k as f64);
            }
        }
        Ok(out)
    }

    pub fn multiply(&self, other: &Self) -> Result<Self, PolyError> {
        self.check_dim(other.n)?;
        let mut out = Self::zero(self.n);
        for (ma, &ca) in &self.terms {
            for (mb, &cb) in &other.terms {
                out.add_term(ma * mb, ca * cb);
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = Self::zero(self.n);
        for (m, &c) in &self.terms {
            out.add_term(m.clone(), c * s);
        }
        out
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut acc = Self::constant(self.n, 1.0);
        for _ in 0..k {
            acc = &acc * self;
        }
        acc
    }

    /// Substitutes `x_j := subs[j]`; the result lives in the variable space of
    /// the substitutions.
    pub fn compose(&self, subs: &[MultiPoly]) -> Result<Self, PolyError> {
        self.check_dim(subs.len())?;
        let m = subs.first().map(|s| s.n).unwrap_or(0);
        if let Some(bad) = subs.iter().find(|s| s.n != m) {
            return Err(PolyError::DimensionMismatch { expected: m, found: bad.n });
        }
        let mut cache = PowerCache::new(subs);
        let mut out = Self::zero(m);
        for (mono, &c) in &self.terms {
            let mut term = Self::constant(m, c);
            for (j, &e) in mono.exponents().iter().enumerate() {
                if e > 0 {
                    term = &term * cache.get(j, e);
                }
            }
            out = &out + &term;
        }
        Ok(out)
    }

    /// Returns `q` with `q(x) = p(M x)`.
    pub fn compose_linear(&self, m: &DMatrix<f64>) -> Result<Self, PolyError> {
        if m.nrows() != self.n || m.ncols() != self.n {
            return Err(PolyError::DimensionMismatch { expected: self.n, found: m.nrows().max(m.ncols()) });
        }
        let subs: Vec<MultiPoly> = (0..self.n)
            .map(|j| {
                let row: Vec<f64> = (0..self.n).map(|k| m[(j, k)]).collect();
                MultiPoly::affine(&row, 0.0)
            })
            .collect();
        self.compose(&subs)
    }

    /// Fixes `x_j = value`, keeping the variable count.
    pub fn substitute_value(&self, j: usize, value: f64) -> Result<Self, PolyError> {
        if j >= self.n {
            return Err(PolyError::IndexOutOfRange { index: j, n: self.n });
        }
        let mut out = Self::zero(self.n);
        for (m, &c) in &self.terms {
            let e = m.exponents()[j];
            let mut exps = m.exponents().to_vec();
            exps[j] = 0;
            out.add_term(Monomial::new(exps), c * value.powi(e as i32));
        }
        Ok(out)
    }

    /// Coefficients listed in `basis` order.
    pub fn coefficient_vector(&self, basis: &[Monomial]) -> Result<Vec<f64>, PolyError> {
        let index: BTreeMap<&Monomial, usize> = basis.iter().enumerate().map(|(i, m)| (m, i)).collect();
        let mut out = vec![0.0; basis.len()];
        for (m, &c) in &self.terms {
            match index.get(m) {
                Some(&i) => out[i] = c,
                None => return Err(PolyError::MissingMonomial(m.clone())),
            }
        }
        Ok(out)
    }

    /// Variables that occur with a positive exponent in some term.
    pub fn support_variables(&self) -> Vec<bool> {
        let mut used = vec![false; self.n];
        for m in self.terms.keys() {
            for (j, &e) in m.exponents().iter().enumerate() {
                if e > 0 {
                    used[j] = true;
                }
            }
        }
        used
    }

    /// Returns `(gradient coefficients, constant)` if the polynomial is affine.
    pub fn as_affine(&self) -> Option<(Vec<f64>, f64)> {
        if self.degree() > 1 {
            return None;
        }
        let mut a = vec![0.0; self.n];
        let mut c = 0.0;
        for (m, &v) in &self.terms {
            match m.exponents().iter().position(|&e| e == 1) {
                Some(j) => a[j] = v,
                None => c = v,
            }
        }
        Some((a, c))
    }

    pub fn compile(&self) -> CompiledPoly {
        CompiledPoly::new(self)
    }
}

struct PowerCache<'a> {
    subs: &'a [MultiPoly],
    powers: Vec<Vec<MultiPoly>>,
}

impl<'a> PowerCache<'a> {
    fn new(subs: &'a [MultiPoly]) -> Self {
        let powers = subs.iter().map(|s| vec![MultiPoly::constant(s.n, 1.0)]).collect();
        Self { subs, powers }
    }

    fn get(&mut self, j: usize, e: u32) -> &MultiPoly {
        let e = e as usize;
        while self.powers[j].len() <= e {
            let next = self.powers[j].last().unwrap() * &self.subs[j];
            self.powers[j].push(next);
        }
        &self.powers[j][e]
    }
}

impl fmt::Debug for MultiPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for MultiPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (m, c)) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            if m.degree() == 0 {
                write!(f, "{c}")?;
            } else {
                write!(f, "{c}*{m}")?;
            }
        }
        Ok(())
    }
}

impl Add for &MultiPoly {
    type Output = MultiPoly;
    fn add(self, rhs: &MultiPoly) -> MultiPoly {
        assert_eq!(self.n, rhs.n, "adding polynomials over different variable counts");
        let mut out = self.clone();
        for (m, &c) in &rhs.terms {
            out.add_term(m.clone(), c);
        }
        out
    }
}

impl Sub for &MultiPoly {
    type Output = MultiPoly;
    fn sub(self, rhs: &MultiPoly) -> MultiPoly {
        assert_eq!(self.n, rhs.n, "subtracting polynomials over different variable counts");
        let mut out = self.clone();
        for (m, &c) in &rhs.terms {
            out.add_term(m.clone(), -c);
        }
        out
    }
}

impl Mul for &MultiPoly {
    type Output = MultiPoly;
    fn mul(self, rhs: &MultiPoly) -> MultiPoly {
        self.multiply(rhs).expect("multiplying polynomials over different variable counts")
    }
}

impl Neg for &MultiPoly {
    type Output = MultiPoly;
    fn neg(self) -> MultiPoly {
        self.scale(-1.0)
    }
}

#[derive(Serialize, Deserialize)]
struct PolyRepr {
    n: usize,
    terms: Vec<(Vec<u32>, f64)>,
}

impl Serialize for MultiPoly {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PolyRepr {
            n: self.n,
            terms: self.terms.iter().map(|(m, &c)| (m.exponents().to_vec(), c)).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MultiPoly {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = PolyRepr::deserialize(d)?;
        MultiPoly::from_terms(repr.n, repr.terms).map_err(serde::de::Error::custom)
    }
}

/// An `n`-component polynomial vector field over `n` variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<MultiPoly>", into = "Vec<MultiPoly>")]
pub struct PolyVec {
    components: Vec<MultiPoly>,
}

impl PolyVec {
    pub fn new(components: Vec<MultiPoly>) -> Result<Self, PolyError> {
        let n = components.len();
        for c in &components {
            if c.n != n {
                return Err(PolyError::DimensionMismatch { expected: n, found: c.n });
            }
        }
        Ok(Self { components })
    }

    pub fn zero(n: usize) -> Self {
        Self { components: vec![MultiPoly::zero(n); n] }
    }

    pub fn n(&self) -> usize {
        self.components.len()
    }

    pub fn degree(&self) -> u32 {
        self.components.iter().map(MultiPoly::degree).max().unwrap_or(0)
    }

    pub fn components(&self) -> &[MultiPoly] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &MultiPoly {
        &self.components[i]
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>, PolyError> {
        self.components.iter().map(|c| c.evaluate(x)).collect()
    }

    /// `jacobian()[i][j] = ∂p_i/∂x_j`.
    pub fn jacobian(&self) -> Vec<Vec<MultiPoly>> {
        let n = self.n();
        self.components
            .iter()
            .map(|c| (0..n).map(|j| c.differentiate(j).expect("index in range")).collect())
            .collect()
    }

    /// Coefficient vectors over `monomial_basis(n, d)`, one per component.
    pub fn coefficient_matrix(&self, d: u32) -> Result<Vec<Vec<f64>>, PolyError> {
        let basis = monomial_basis(self.n(), d);
        self.components.iter().map(|c| c.coefficient_vector(&basis)).collect()
    }
}

impl TryFrom<Vec<MultiPoly>> for PolyVec {
    type Error = PolyError;
    fn try_from(v: Vec<MultiPoly>) -> Result<Self, PolyError> {
        PolyVec::new(v)
    }
}

impl From<PolyVec> for Vec<MultiPoly> {
    fn from(p: PolyVec) -> Self {
        p.components
    }
}
