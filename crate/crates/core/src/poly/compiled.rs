use super::MultiPoly;

/// Flat evaluator for hot loops (integration, grids).
///
/// Terms are stored as `(coefficient, exponents)` rows and evaluated against a
/// per-call power table, which avoids repeated `powi` calls.
#[derive(Clone, Debug)]
pub struct CompiledPoly {
    n: usize,
    max_exp: usize,
    coeffs: Vec<f64>,
    exps: Vec<u32>,
}

impl CompiledPoly {
    pub fn new(p: &MultiPoly) -> Self {
        let n = p.n();
        let mut coeffs = Vec::with_capacity(p.num_terms());
        let mut exps = Vec::with_capacity(p.num_terms() * n);
        let mut max_exp = 0;
        for (m, c) in p.terms() {
            coeffs.push(c);
            for &e in m.exponents() {
                max_exp = max_exp.max(e as usize);
                exps.push(e);
            }
        }
        Self { n, max_exp, coeffs, exps }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn max_exponent(&self) -> usize {
        self.max_exp
    }

    /// Evaluates using a power table laid out as `powers[j * stride + e] = x_j^e`.
    pub fn eval_with_powers(&self, powers: &[f64], stride: usize) -> f64 {
        let mut acc = 0.0;
        for (t, &c) in self.coeffs.iter().enumerate() {
            let row = &self.exps[t * self.n..(t + 1) * self.n];
            let mut v = c;
            for (j, &e) in row.iter().enumerate() {
                if e > 0 {
                    v *= powers[j * stride + e as usize];
                }
            }
            acc += v;
        }
        acc
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let stride = self.max_exp + 1;
        let mut powers = vec![1.0; self.n * stride];
        fill_powers(x, stride, &mut powers);
        self.eval_with_powers(&powers, stride)
    }
}

pub(crate) fn fill_powers(x: &[f64], stride: usize, powers: &mut [f64]) {
    for (j, &xj) in x.iter().enumerate() {
        let row = &mut powers[j * stride..(j + 1) * stride];
        row[0] = 1.0;
        for e in 1..stride {
            row[e] = row[e - 1] * xj;
        }
    }
}

/// Joint evaluator for several polynomials over the full monomial basis of
/// their common degree. Each basis monomial is one product away from an
/// earlier one, so a point costs one multiplication per monomial plus a dense
/// matrix-vector product.
#[derive(Clone, Debug)]
pub struct BasisEvaluator {
    n: usize,
    /// `(parent, variable)` for every monomial after the constant.
    steps: Vec<(usize, usize)>,
    /// Row-major `rows × basis` coefficients.
    coeffs: Vec<f64>,
    rows: usize,
}

impl BasisEvaluator {
    /// Largest basis handled with a stack buffer.
    pub const STACK_BASIS: usize = 32;

    pub fn new(polys: &[MultiPoly]) -> Option<Self> {
        let n = polys.first()?.n();
        let d = polys.iter().map(MultiPoly::degree).max().unwrap_or(0);
        let basis = super::monomial_basis(n, d);
        let index: std::collections::HashMap<&[u32], usize> =
            basis.iter().enumerate().map(|(k, m)| (m.exponents(), k)).collect();
        let mut steps = Vec::with_capacity(basis.len().saturating_sub(1));
        for m in &basis[1..] {
            let j = m.exponents().iter().position(|&e| e > 0)?;
            let mut e = m.exponents().to_vec();
            e[j] -= 1;
            steps.push((index[e.as_slice()], j));
        }
        let mut coeffs = vec![0.0; polys.len() * basis.len()];
        for (r, p) in polys.iter().enumerate() {
            for (m, c) in p.terms() {
                coeffs[r * basis.len() + index[m.exponents()]] = c;
            }
        }
        Some(Self { n, steps, coeffs, rows: polys.len() })
    }

    pub fn basis_len(&self) -> usize {
        self.steps.len() + 1
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        let len = self.basis_len();
        let mut stack = [0.0; Self::STACK_BASIS];
        let mut heap = Vec::new();
        let v = if len <= Self::STACK_BASIS {
            &mut stack[..len]
        } else {
            heap.resize(len, 0.0);
            &mut heap[..]
        };
        v[0] = 1.0;
        for (k, &(parent, j)) in self.steps.iter().enumerate() {
            v[k + 1] = v[parent] * x[j];
        }
        for (r, o) in out.iter_mut().enumerate().take(self.rows) {
            let row = &self.coeffs[r * len..(r + 1) * len];
            *o = row.iter().zip(v.iter()).map(|(c, m)| c * m).sum();
        }
    }
}
