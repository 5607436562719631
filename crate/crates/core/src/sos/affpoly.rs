use std::collections::BTreeMap;

use crate::conic::LinExpr;
use crate::poly::{Monomial, MultiPoly, PolyError};

/// A polynomial whose coefficients are affine in decision variables.
#[derive(Clone, Debug, PartialEq)]
pub struct AffPoly {
    n: usize,
    terms: BTreeMap<Monomial, LinExpr>,
}

impl AffPoly {
    pub fn zero(n: usize) -> Self {
        Self { n, terms: BTreeMap::new() }
    }

    /// A polynomial with constant coefficients.
    pub fn from_poly(p: &MultiPoly) -> Self {
        let mut out = Self::zero(p.n());
        for (m, c) in p.terms() {
            out.add(m.clone(), &LinExpr::constant(c));
        }
        out
    }

    /// `Σ x[cols[k]] · basis[k]`.
    pub fn from_columns(n: usize, basis: &[Monomial], cols: &[usize]) -> Self {
        assert_eq!(basis.len(), cols.len());
        let mut out = Self::zero(n);
        for (m, &c) in basis.iter().zip(cols) {
            out.add(m.clone(), &LinExpr::var(c));
        }
        out
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &LinExpr)> {
        self.terms.iter()
    }

    pub fn coefficient(&self, m: &Monomial) -> LinExpr {
        self.terms.get(m).cloned().unwrap_or_default()
    }

    fn add(&mut self, m: Monomial, e: &LinExpr) {
        self.terms.entry(m).or_default().axpy(1.0, e);
    }

    /// Drops monomials whose coefficient is structurally zero.
    pub fn normalized(&self) -> Self {
        let mut out = Self::zero(self.n);
        for (m, e) in &self.terms {
            let e = e.normalized();
            if !e.terms().is_empty() || e.constant_part() != 0.0 {
                out.terms.insert(m.clone(), e);
            }
        }
        out
    }

    /// Degree over monomials with a structurally nonzero coefficient.
    pub fn degree(&self) -> u32 {
        self.normalized().terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Variables appearing in a structurally nonzero term.
    pub fn support_variables(&self) -> Vec<bool> {
        let mut used = vec![false; self.n];
        for m in self.normalized().terms.keys() {
            for (j, &e) in m.exponents().iter().enumerate() {
                if e > 0 {
                    used[j] = true;
                }
            }
        }
        used
    }

    pub fn add_scaled(&self, s: f64, other: &AffPoly) -> Self {
        assert_eq!(self.n, other.n);
        let mut out = self.clone();
        for (m, e) in &other.terms {
            out.terms.entry(m.clone()).or_default().axpy(s, e);
        }
        out.normalized()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::zero(self.n).add_scaled(s, self)
    }

    pub fn add_poly(&self, p: &MultiPoly) -> Self {
        self.add_scaled(1.0, &AffPoly::from_poly(p))
    }

    /// Product with a constant-coefficient polynomial.
    pub fn mul_poly(&self, p: &MultiPoly) -> Result<Self, PolyError> {
        if p.n() != self.n {
            return Err(PolyError::DimensionMismatch { expected: self.n, found: p.n() });
        }
        let mut out = Self::zero(self.n);
        for (m, e) in &self.terms {
            for (t, c) in p.terms() {
                out.terms.entry(m * t).or_default().axpy(c, e);
            }
        }
        Ok(out.normalized())
    }

    pub fn differentiate(&self, j: usize) -> Result<Self, PolyError> {
        if j >= self.n {
            return Err(PolyError::IndexOutOfRange { index: j, n: self.n });
        }
        let mut out = Self::zero(self.n);
        for (m, e) in &self.terms {
            if let Some((k, d)) = m.derivative(j) {
                out.terms.entry(d).or_default().axpy(k as f64, e);
            }
        }
        Ok(out.normalized())
    }

    /// `q(x) = self(subs(x))` with constant-coefficient substitutions.
    pub fn compose(&self, subs: &[MultiPoly]) -> Result<Self, PolyError> {
        if subs.len() != self.n {
            return Err(PolyError::DimensionMismatch { expected: self.n, found: subs.len() });
        }
        let n_out = subs.first().map_or(self.n, MultiPoly::n);
        let mut out = Self::zero(n_out);
        for (m, e) in &self.terms {
            let mono = MultiPoly::from_terms(self.n, [(m.exponents().to_vec(), 1.0)])?.compose(subs)?;
            for (t, c) in mono.terms() {
                out.terms.entry(t.clone()).or_default().axpy(c, e);
            }
        }
        Ok(out.normalized())
    }

    /// Fixes `x_j = value`.
    pub fn substitute_value(&self, j: usize, value: f64) -> Result<Self, PolyError> {
        let mut subs: Vec<MultiPoly> = (0..self.n).map(|k| MultiPoly::var(self.n, k)).collect();
        *subs.get_mut(j).ok_or(PolyError::IndexOutOfRange { index: j, n: self.n })? = MultiPoly::constant(self.n, value);
        self.compose(&subs)
    }

    /// The affine expression `self(x)` for a fixed point `x`.
    pub fn evaluate_at(&self, x: &[f64]) -> Result<LinExpr, PolyError> {
        if x.len() != self.n {
            return Err(PolyError::DimensionMismatch { expected: self.n, found: x.len() });
        }
        let mut out = LinExpr::zero();
        for (m, e) in &self.terms {
            out.axpy(m.evaluate(x), e);
        }
        Ok(out.normalized())
    }

    /// Concrete polynomial for decision values `sol`.
    pub fn realize(&self, sol: &[f64]) -> MultiPoly {
        let mut p = MultiPoly::zero(self.n);
        for (m, e) in &self.terms {
            p.add_term(m.clone(), e.evaluate(sol));
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn realize_tracks_operations() {
        // a + b x1 x2 with columns a = 0, b = 1.
        let basis = [Monomial::new(vec![0, 0]), Monomial::new(vec![1, 1])];
        let p = AffPoly::from_columns(2, &basis, &[0, 1]);
        let sol = [2.0, -3.0];
        let d = p.differentiate(0).unwrap().realize(&sol);
        assert_eq!(d, MultiPoly::from_terms(2, [(vec![0, 1], -3.0)]).unwrap());
        let s = p.substitute_value(1, 0.0).unwrap().realize(&sol);
        assert_eq!(s, MultiPoly::constant(2, 2.0));
        let x = MultiPoly::var(2, 0);
        let prod = p.mul_poly(&x).unwrap().realize(&sol);
        assert_eq!(prod, p.realize(&sol).multiply(&x).unwrap());
        let v = p.evaluate_at(&[1.0, 2.0]).unwrap().evaluate(&sol);
        assert_eq!(v, 2.0 - 6.0);
    }

    #[test]
    fn cancellation_lowers_degree() {
        let basis = [Monomial::new(vec![2])];
        let p = AffPoly::from_columns(1, &basis, &[0]);
        assert_eq!(p.add_scaled(-1.0, &p).degree(), 0);
        assert!(p.add_scaled(-1.0, &p).terms().next().is_none());
    }
}
