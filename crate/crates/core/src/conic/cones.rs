//! Cone algebra for the interior-point method: Jordan products, identity
//! elements, Nesterov-Todd scalings and step-to-boundary computations.
//!
//! PSD blocks live in `svec` form: the upper triangle in column order
//! (`idx = j(j+1)/2 + i` for `i <= j`) with off-diagonals scaled by `√2`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

pub(crate) const SQRT2: f64 = std::f64::consts::SQRT_2;

pub fn svec_len(s: usize) -> usize {
    s * (s + 1) / 2
}

pub fn svec_index(i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    j * (j + 1) / 2 + i
}

pub fn smat(v: &[f64], s: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(s, s);
    for j in 0..s {
        for i in 0..=j {
            let val = v[svec_index(i, j)];
            if i == j {
                m[(i, i)] = val;
            } else {
                m[(i, j)] = val / SQRT2;
                m[(j, i)] = val / SQRT2;
            }
        }
    }
    m
}

pub fn svec(m: &DMatrix<f64>, out: &mut [f64]) {
    let s = m.nrows();
    for j in 0..s {
        for i in 0..=j {
            out[svec_index(i, j)] = if i == j { m[(i, i)] } else { SQRT2 * 0.5 * (m[(i, j)] + m[(j, i)]) };
        }
    }
}

/// A cone block of the internal (already RSOC-free) problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BlockKind {
    Nonneg,
    Soc,
    Psd(usize),
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Block {
    pub kind: BlockKind,
    pub off: usize,
    pub dim: usize,
}

impl Block {
    /// Barrier degree contributed by the block.
    pub fn degree(&self) -> usize {
        match self.kind {
            BlockKind::Nonneg => self.dim,
            BlockKind::Soc => 1,
            BlockKind::Psd(s) => s,
        }
    }

    pub fn identity(&self, out: &mut [f64]) {
        out.fill(0.0);
        match self.kind {
            BlockKind::Nonneg => out.fill(1.0),
            BlockKind::Soc => out[0] = 1.0,
            BlockKind::Psd(s) => {
                for i in 0..s {
                    out[svec_index(i, i)] = 1.0;
                }
            }
        }
    }

    pub fn jordan(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        match self.kind {
            BlockKind::Nonneg => {
                for k in 0..self.dim {
                    out[k] = u[k] * v[k];
                }
            }
            BlockKind::Soc => {
                out[0] = dot(u, v);
                for k in 1..self.dim {
                    out[k] = u[0] * v[k] + v[0] * u[k];
                }
            }
            BlockKind::Psd(s) => {
                let a = smat(u, s);
                let b = smat(v, s);
                let p = (&a * &b + &b * &a) * 0.5;
                svec(&p, out);
            }
        }
    }

    /// Largest `α` with `x + α·dx` in the cone (`f64::INFINITY` if unbounded).
    pub fn max_step(&self, x: &[f64], dx: &[f64]) -> f64 {
        match self.kind {
            BlockKind::Nonneg => {
                let mut a = f64::INFINITY;
                for k in 0..self.dim {
                    if dx[k] < 0.0 {
                        a = a.min(-x[k] / dx[k]);
                    }
                }
                a
            }
            BlockKind::Soc => soc_max_step(x, dx),
            BlockKind::Psd(s) => {
                let xm = smat(x, s);
                let Some(ch) = Cholesky::new(xm) else { return 0.0 };
                let l = ch.l();
                let dm = smat(dx, s);
                let Some(t) = l.solve_lower_triangular(&dm) else { return 0.0 };
                let Some(m) = l.solve_lower_triangular(&t.transpose()) else { return 0.0 };
                let m = (&m + m.transpose()) * 0.5;
                let emin = SymmetricEigen::new(m).eigenvalues.min();
                if emin < 0.0 {
                    -1.0 / emin
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

fn soc_max_step(x: &[f64], d: &[f64]) -> f64 {
    let a = d[0] * d[0] - dot(&d[1..], &d[1..]);
    let b = x[0] * d[0] - dot(&x[1..], &d[1..]);
    let c = (x[0] * x[0] - dot(&x[1..], &x[1..])).max(0.0);
    // f(α) = a α² + 2 b α + c; first positive root.
    let scale = a.abs().max(b.abs()).max(c);
    if scale == 0.0 {
        return f64::INFINITY;
    }
    if a.abs() <= 1e-15 * scale {
        if b < 0.0 {
            return -c / (2.0 * b);
        }
        return if d[0] < 0.0 { -x[0] / d[0] } else { f64::INFINITY };
    }
    let disc = b * b - a * c;
    if disc < 0.0 {
        return if a > 0.0 { f64::INFINITY } else { 0.0 };
    }
    let sq = disc.sqrt();
    let q = -(b + b.signum() * sq);
    let mut best = f64::INFINITY;
    for r in [q / a, if q != 0.0 { c / q } else { f64::INFINITY }] {
        if r > 0.0 && r < best {
            best = r;
        }
    }
    if best.is_infinite() && d[0] < 0.0 {
        best = -x[0] / d[0];
    }
    best
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Nesterov-Todd scaling `W` of one block with `W x = W^{-T} z = λ`.
#[derive(Clone, Debug)]
pub(crate) enum Scaling {
    Nonneg {
        /// `sqrt(z / x)`.
        w: Vec<f64>,
        lambda: Vec<f64>,
    },
    Soc {
        w: DMatrix<f64>,
        winv: DMatrix<f64>,
        lambda: Vec<f64>,
    },
    Psd {
        s: usize,
        r: DMatrix<f64>,
        rinv: DMatrix<f64>,
        /// `(R Rᵀ)^{-1}`, the matrix form of `H`.
        q: DMatrix<f64>,
        eig: Vec<f64>,
        lambda: Vec<f64>,
    },
}

impl Scaling {
    pub fn new(block: &Block, x: &[f64], z: &[f64]) -> Option<Self> {
        match block.kind {
            BlockKind::Nonneg => {
                if x.iter().chain(z).any(|&v| !(v > 0.0)) {
                    return None;
                }
                let w = x.iter().zip(z).map(|(a, b)| (b / a).sqrt()).collect();
                let lambda = x.iter().zip(z).map(|(a, b)| (a * b).sqrt()).collect();
                Some(Scaling::Nonneg { w, lambda })
            }
            BlockKind::Soc => {
                let k = block.dim;
                let xjx = x[0] * x[0] - dot(&x[1..], &x[1..]);
                let zjz = z[0] * z[0] - dot(&z[1..], &z[1..]);
                if !(xjx > 0.0 && zjz > 0.0 && x[0] > 0.0 && z[0] > 0.0) {
                    return None;
                }
                let (nx, nz) = (xjx.sqrt(), zjz.sqrt());
                let xb: Vec<f64> = x.iter().map(|v| v / nx).collect();
                let zb: Vec<f64> = z.iter().map(|v| v / nz).collect();
                let denom = (2.0 * (dot(&xb, &zb) + 1.0)).sqrt();
                // u = (J x̄ + z̄) / sqrt(2 (x̄ᵀz̄ + 1)); W = β M(u), W⁻¹ = M(J u) / β with
                // M(u) = [[u0, u1ᵀ], [u1, I + u1 u1ᵀ / (1 + u0)]].
                let mut u = vec![0.0; k];
                u[0] = (xb[0] + zb[0]) / denom;
                for i in 1..k {
                    u[i] = (zb[i] - xb[i]) / denom;
                }
                let beta = (zjz / xjx).powf(0.25);
                let mut w = DMatrix::zeros(k, k);
                let mut winv = DMatrix::zeros(k, k);
                w[(0, 0)] = beta * u[0];
                winv[(0, 0)] = u[0] / beta;
                for i in 1..k {
                    w[(0, i)] = beta * u[i];
                    w[(i, 0)] = beta * u[i];
                    winv[(0, i)] = -u[i] / beta;
                    winv[(i, 0)] = -u[i] / beta;
                    for j in 1..k {
                        let m = if i == j { 1.0 } else { 0.0 } + u[i] * u[j] / (1.0 + u[0]);
                        w[(i, j)] = beta * m;
                        winv[(i, j)] = m / beta;
                    }
                }
                let lambda = (&w * DVector::from_column_slice(x)).as_slice().to_vec();
                Some(Scaling::Soc { w, winv, lambda })
            }
            BlockKind::Psd(s) => {
                let xm = smat(x, s);
                let zm = smat(z, s);
                let l1 = Cholesky::new(xm)?.l();
                let l2 = Cholesky::new(zm)?.l();
                let svd = (l2.transpose() * &l1).svd(true, true);
                let v = svd.v_t.as_ref()?.transpose();
                let sv = svd.singular_values;
                if sv.iter().any(|&e| !(e > 0.0)) {
                    return None;
                }
                let mut r = &l1 * &v;
                for (j, &e) in sv.iter().enumerate() {
                    let f = 1.0 / e.sqrt();
                    for i in 0..s {
                        r[(i, j)] *= f;
                    }
                }
                let rinv = r.clone().try_inverse()?;
                let q = rinv.transpose() * &rinv;
                let eig: Vec<f64> = sv.iter().copied().collect();
                let mut lambda = vec![0.0; svec_len(s)];
                for (i, &e) in eig.iter().enumerate() {
                    lambda[svec_index(i, i)] = e;
                }
                Some(Scaling::Psd { s, r, rinv, q, eig, lambda })
            }
        }
    }

    pub fn lambda(&self) -> &[f64] {
        match self {
            Scaling::Nonneg { lambda, .. } | Scaling::Soc { lambda, .. } | Scaling::Psd { lambda, .. } => lambda,
        }
    }

    /// `W v`.
    pub fn apply_w(&self, v: &[f64], out: &mut [f64]) {
        match self {
            Scaling::Nonneg { w, .. } => {
                for k in 0..v.len() {
                    out[k] = w[k] * v[k];
                }
            }
            Scaling::Soc { w, .. } => matvec(w, v, out),
            Scaling::Psd { s, rinv, .. } => {
                let m = smat(v, *s);
                svec(&(rinv * m * rinv.transpose()), out);
            }
        }
    }

    /// `Wᵀ v`.
    pub fn apply_wt(&self, v: &[f64], out: &mut [f64]) {
        match self {
            Scaling::Nonneg { .. } | Scaling::Soc { .. } => self.apply_w(v, out),
            Scaling::Psd { s, rinv, .. } => {
                let m = smat(v, *s);
                svec(&(rinv.transpose() * m * rinv), out);
            }
        }
    }

    /// `W^{-T} v`.
    pub fn apply_winv_t(&self, v: &[f64], out: &mut [f64]) {
        match self {
            Scaling::Nonneg { w, .. } => {
                for k in 0..v.len() {
                    out[k] = v[k] / w[k];
                }
            }
            Scaling::Soc { winv, .. } => matvec(winv, v, out),
            Scaling::Psd { s, r, .. } => {
                let m = smat(v, *s);
                svec(&(r.transpose() * m * r), out);
            }
        }
    }

    /// `H v = WᵀW v`.
    pub fn apply_h(&self, v: &[f64], out: &mut [f64]) {
        match self {
            Scaling::Nonneg { w, .. } => {
                for k in 0..v.len() {
                    out[k] = w[k] * w[k] * v[k];
                }
            }
            Scaling::Soc { w, .. } => {
                let mut t = vec![0.0; v.len()];
                matvec(w, v, &mut t);
                matvec(w, &t, out);
            }
            Scaling::Psd { s, q, .. } => {
                let m = smat(v, *s);
                svec(&(q * m * q), out);
            }
        }
    }

    /// Dense `H`.
    pub fn h_matrix(&self) -> DMatrix<f64> {
        match self {
            Scaling::Nonneg { w, .. } => DMatrix::from_diagonal(&DVector::from_iterator(w.len(), w.iter().map(|v| v * v))),
            Scaling::Soc { w, .. } => w * w,
            Scaling::Psd { s, q: p, .. } => {
                let s = *s;
                let d = svec_len(s);
                let mut h = DMatrix::zeros(d, d);
                let c = |i: usize, j: usize| if i == j { 1.0 } else { SQRT2 };
                for j in 0..s {
                    for i in 0..=j {
                        let a = svec_index(i, j);
                        for l in 0..s {
                            for k in 0..=l {
                                let b = svec_index(k, l);
                                if b > a {
                                    continue;
                                }
                                let val = c(i, j) * c(k, l) * 0.5 * (p[(i, k)] * p[(j, l)] + p[(i, l)] * p[(j, k)]);
                                h[(a, b)] = val;
                                h[(b, a)] = val;
                            }
                        }
                    }
                }
                h
            }
        }
    }

    /// Solves `λ ∘ u = d` for `u`.
    pub fn lambda_solve(&self, d: &[f64], out: &mut [f64]) {
        match self {
            Scaling::Nonneg { lambda, .. } => {
                for k in 0..d.len() {
                    out[k] = d[k] / lambda[k];
                }
            }
            Scaling::Soc { lambda: l, .. } => {
                let det = l[0] * l[0] - dot(&l[1..], &l[1..]);
                let u0 = (l[0] * d[0] - dot(&l[1..], &d[1..])) / det;
                out[0] = u0;
                for k in 1..d.len() {
                    out[k] = (d[k] - u0 * l[k]) / l[0];
                }
            }
            Scaling::Psd { s, eig, .. } => {
                let s = *s;
                for j in 0..s {
                    for i in 0..=j {
                        let idx = svec_index(i, j);
                        out[idx] = 2.0 * d[idx] / (eig[i] + eig[j]);
                    }
                }
            }
        }
    }
}

fn matvec(m: &DMatrix<f64>, v: &[f64], out: &mut [f64]) {
    let r = m * DVector::from_column_slice(v);
    out.copy_from_slice(r.as_slice());
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
    }

    fn check_scaling(block: Block, x: &[f64], z: &[f64]) {
        let sc = Scaling::new(&block, x, z).expect("interior");
        let n = x.len();
        let mut wx = vec![0.0; n];
        let mut wz = vec![0.0; n];
        sc.apply_w(x, &mut wx);
        sc.apply_winv_t(z, &mut wz);
        assert!(close(&wx, &wz, 1e-10), "{wx:?} vs {wz:?}");
        assert!(close(&wx, sc.lambda(), 1e-10));
        // The dense H matches the operator.
        let v: Vec<f64> = (0..n).map(|k| (k as f64 * 0.37).sin()).collect();
        let mut hv = vec![0.0; n];
        sc.apply_h(&v, &mut hv);
        let dense = sc.h_matrix() * DVector::from_column_slice(&v);
        assert!(close(dense.as_slice(), &hv, 1e-9));
        // λ ∘ (λ \ d) = d.
        let mut u = vec![0.0; n];
        let mut again = vec![0.0; n];
        sc.lambda_solve(&v, &mut u);
        block.jordan(sc.lambda(), &u, &mut again);
        assert!(close(&again, &v, 1e-9));
    }

    #[test]
    fn nt_scaling_identities() {
        check_scaling(Block { kind: BlockKind::Nonneg, off: 0, dim: 3 }, &[1.0, 2.0, 0.5], &[0.3, 1.0, 4.0]);
        check_scaling(Block { kind: BlockKind::Soc, off: 0, dim: 3 }, &[2.0, 0.5, -1.0], &[3.0, -1.0, 0.7]);
        check_scaling(Block { kind: BlockKind::Soc, off: 0, dim: 4 }, &[1.0, 0.0, 0.0, 0.0], &[1.5, 0.2, 0.3, -0.4]);
        let x = [2.0, 0.3 * SQRT2, 1.0, -0.2 * SQRT2, 0.1 * SQRT2, 1.5];
        let z = [1.0, -0.1 * SQRT2, 0.8, 0.0, 0.2 * SQRT2, 2.0];
        check_scaling(Block { kind: BlockKind::Psd(3), off: 0, dim: 6 }, &x, &z);
    }

    #[test]
    fn svec_is_isometry() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]);
        let mut v = [0.0; 3];
        svec(&m, &mut v);
        assert!((dot(&v, &v) - (1.0 + 8.0 + 9.0)).abs() < 1e-12);
        assert_eq!(smat(&v, 2), m);
    }

    #[test]
    fn step_to_boundary() {
        let soc = Block { kind: BlockKind::Soc, off: 0, dim: 2 };
        // (1, 0) + α (0, 1) leaves at α = 1.
        assert!((soc.max_step(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-12);
        assert!(soc.max_step(&[1.0, 0.0], &[1.0, 0.5]).is_infinite());
        let psd = Block { kind: BlockKind::Psd(2), off: 0, dim: 3 };
        // I + α diag(-1, 0) leaves at α = 1.
        assert!((psd.max_step(&[1.0, 0.0, 1.0], &[-1.0, 0.0, 0.0]) - 1.0).abs() < 1e-12);
        let nn = Block { kind: BlockKind::Nonneg, off: 0, dim: 2 };
        assert_eq!(nn.max_step(&[1.0, 2.0], &[-0.5, -4.0]), 0.5);
    }
}
