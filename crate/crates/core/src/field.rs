//! Evaluable, differentiable vector fields `f: Rⁿ → Rⁿ`.

use nalgebra::DMatrix;

use crate::poly::{BasisEvaluator, CompiledPoly, PolyVec};

pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes `f(x)` into `out`.
    fn eval_into(&self, x: &[f64], out: &mut [f64]);

    /// `J[i][j] = ∂fᵢ/∂xⱼ`.
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64>;

    /// The polynomial behind this field, when there is one.
    fn as_poly(&self) -> Option<&PolyVec> {
        None
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out);
        out
    }
}

/// A [`PolyVec`] with precompiled component and Jacobian evaluators.
#[derive(Clone, Debug)]
pub struct PolyField {
    poly: PolyVec,
    comps: Vec<CompiledPoly>,
    jac: Vec<Vec<CompiledPoly>>,
    /// Used when the full basis is small.
    dense: Option<BasisEvaluator>,
}

impl PolyField {
    pub fn new(poly: PolyVec) -> Self {
        let comps: Vec<CompiledPoly> = poly.components().iter().map(CompiledPoly::new).collect();
        let jac = poly.jacobian().iter().map(|row| row.iter().map(CompiledPoly::new).collect()).collect();
        let dense = BasisEvaluator::new(poly.components()).filter(|d| d.basis_len() <= 4 * BasisEvaluator::STACK_BASIS);
        Self { poly, comps, jac, dense }
    }

    pub fn poly(&self) -> &PolyVec {
        &self.poly
    }
}

impl From<PolyVec> for PolyField {
    fn from(p: PolyVec) -> Self {
        Self::new(p)
    }
}

impl VectorField for PolyField {
    fn dim(&self) -> usize {
        self.poly.n()
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.dense {
            Some(d) => d.eval_into(x, out),
            None => {
                for (o, c) in out.iter_mut().zip(&self.comps) {
                    *o = c.eval(x);
                }
            }
        }
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| self.jac[i][j].eval(x))
    }

    fn as_poly(&self) -> Option<&PolyVec> {
        Some(&self.poly)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::MultiPoly;

    #[test]
    fn poly_field_matches_direct_evaluation() {
        let p1 = MultiPoly::from_terms(2, [(vec![2, 1], 3.0), (vec![0, 0], -1.0)]).unwrap();
        let p2 = MultiPoly::from_terms(2, [(vec![1, 0], 2.0)]).unwrap();
        let pv = PolyVec::new(vec![p1, p2]).unwrap();
        let f = PolyField::new(pv.clone());
        let x = [0.3, -1.7];
        assert_eq!(f.eval(&x), pv.evaluate(&x).unwrap());
        let j = f.jacobian(&x);
        assert!((j[(0, 0)] - 6.0 * 0.3 * -1.7).abs() < 1e-14);
        assert!((j[(0, 1)] - 3.0 * 0.09).abs() < 1e-14);
        assert_eq!(j[(1, 0)], 2.0);
        assert_eq!(j[(1, 1)], 0.0);
    }
}
