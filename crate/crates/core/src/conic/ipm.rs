//! Dense primal-dual interior-point method on the homogeneous self-dual
//! embedding, with Nesterov-Todd scaling and Mehrotra predictor-corrector.
//!
//! Newton systems use the augmented form `[[-H - δI_F, Aᵀ], [A, δI]]`
//! (`H` the block-diagonal scaling, `I_F` the free columns), equilibrated,
//! factored once per iteration by dense LU, and polished by iterative
//! refinement against the unregularized system. Forming the normal matrix
//! `A H⁻¹ Aᵀ` instead squares its conditioning near degenerate optima.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use super::cones::{dot, Block, BlockKind, Scaling};
use super::{Cone, ConicProgram, ConicSolver, Solution, SolveStatus};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Absolute duality-gap tolerance, relative once the objective exceeds one.
    pub gap_tol: f64,
    /// Alternative relative gap test `gap ≤ rel_gap_tol · |objective|`.
    pub rel_gap_tol: f64,
    pub feas_tol: f64,
    /// Tolerance on infeasibility certificates.
    pub infeas_tol: f64,
    pub max_iter: usize,
    pub step_fraction: f64,
    /// Static regularization of the reduced KKT matrix.
    pub regularization: f64,
    pub refine_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-8,
            rel_gap_tol: 1e-8,
            feas_tol: 1e-8,
            infeas_tol: 1e-8,
            max_iter: 200,
            step_fraction: 0.99,
            regularization: 1e-14,
            refine_steps: 6,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("KKT system numerically singular at iteration {0}")]
    SingularKkt(usize),
}

/// The bundled reference solver.
#[derive(Clone, Debug, Default)]
pub struct InteriorPoint {
    pub options: SolverOptions,
}

impl InteriorPoint {
    pub fn new(options: SolverOptions) -> Self {
        Self { options }
    }
}

impl ConicSolver for InteriorPoint {
    fn solve(&self, program: &ConicProgram) -> Result<Solution, SolveError> {
        solve(program, &self.options)
    }
}

/// Solves `program` with the reference interior-point method.
pub fn solve(program: &ConicProgram, opts: &SolverOptions) -> Result<Solution, SolveError> {
    let work = Work::new(program);
    if let Some(row) = work.inconsistent_row {
        return Ok(work.trivially_infeasible(program, row));
    }
    work.run(program, opts)
}

struct Work {
    m: usize,
    n: usize,
    /// Scaled internal equality rows (RSOC rotated, equilibrated, empty rows removed).
    rows: Vec<Vec<(usize, f64)>>,
    cols: Vec<Vec<(usize, f64)>>,
    b: Vec<f64>,
    c: Vec<f64>,
    free: Vec<usize>,
    /// Position of each column in the free list.
    free_pos: Vec<Option<usize>>,
    blocks: Vec<Block>,
    /// Rows of the original program that survive, with their scale factors.
    kept: Vec<usize>,
    scale: Vec<f64>,
    rsoc_offsets: Vec<usize>,
    inconsistent_row: Option<usize>,
    norm_b: f64,
    norm_c: f64,
    orig_m: usize,
}

const FRAC: f64 = std::f64::consts::FRAC_1_SQRT_2;

impl Work {
    fn new(p: &ConicProgram) -> Self {
        let n = p.num_vars();
        let mut blocks = Vec::new();
        let mut free = Vec::new();
        let mut rsoc_offsets = Vec::new();
        for g in p.groups() {
            let off = g.offset;
            match g.cone {
                Cone::Free(k) => free.extend(off..off + k),
                Cone::Nonneg(k) => {
                    if k > 0 {
                        blocks.push(Block { kind: BlockKind::Nonneg, off, dim: k })
                    }
                }
                Cone::Soc(k) => {
                    if k > 0 {
                        blocks.push(Block { kind: BlockKind::Soc, off, dim: k })
                    }
                }
                Cone::Rsoc(k) => {
                    if k >= 2 {
                        rsoc_offsets.push(off);
                        blocks.push(Block { kind: BlockKind::Soc, off, dim: k });
                    } else if k > 0 {
                        blocks.push(Block { kind: BlockKind::Nonneg, off, dim: k });
                    }
                }
                Cone::Psd(s) => {
                    if s > 0 {
                        blocks.push(Block { kind: BlockKind::Psd(s), off, dim: g.cone.dim() })
                    }
                }
            }
        }
        let mut free_pos = vec![None; n];
        for (k, &j) in free.iter().enumerate() {
            free_pos[j] = Some(k);
        }

        let mut c = p.objective().to_vec();
        let mut is_rsoc_head = vec![false; n];
        for &off in &rsoc_offsets {
            is_rsoc_head[off] = true;
            let (a, b) = (c[off], c[off + 1]);
            c[off] = (a + b) * FRAC;
            c[off + 1] = (a - b) * FRAC;
        }

        let mut rows = Vec::new();
        let mut b = Vec::new();
        let mut kept = Vec::new();
        let mut scale = Vec::new();
        let mut inconsistent_row = None;
        for (i, (row, &bi)) in p.rows().iter().zip(p.rhs()).enumerate() {
            let mut r: Vec<(usize, f64)> = Vec::with_capacity(row.len() + 1);
            for &(col, a) in row {
                r.push((col, a));
            }
            // Rotate RSOC head pairs: column pair (u, v) -> ((u+v)/√2, (u-v)/√2).
            if !rsoc_offsets.is_empty() {
                let mut extra = Vec::new();
                for e in r.iter_mut() {
                    let col = e.0;
                    if is_rsoc_head[col] {
                        let a = e.1;
                        e.1 = a * FRAC;
                        extra.push((col + 1, a * FRAC));
                    } else if col > 0 && is_rsoc_head[col - 1] {
                        let a = e.1;
                        e.1 = -a * FRAC;
                        extra.push((col - 1, a * FRAC));
                    }
                }
                r.extend(extra);
                r.sort_by_key(|e| e.0);
                let mut merged: Vec<(usize, f64)> = Vec::with_capacity(r.len());
                for (col, a) in r {
                    match merged.last_mut() {
                        Some(l) if l.0 == col => l.1 += a,
                        _ => merged.push((col, a)),
                    }
                }
                merged.retain(|e| e.1 != 0.0);
                r = merged;
            }
            let norm = r.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
            if norm == 0.0 {
                if bi != 0.0 && inconsistent_row.is_none() {
                    inconsistent_row = Some(i);
                }
                continue;
            }
            let d = 1.0 / norm;
            for e in r.iter_mut() {
                e.1 *= d;
            }
            rows.push(r);
            b.push(bi * d);
            kept.push(i);
            scale.push(d);
        }
        let m = rows.len();
        let mut cols = vec![Vec::new(); n];
        for (i, r) in rows.iter().enumerate() {
            for &(col, a) in r {
                cols[col].push((i, a));
            }
        }
        let norm_b = p.rhs().iter().map(|v| v * v).sum::<f64>().sqrt();
        let norm_c = p.objective().iter().map(|v| v * v).sum::<f64>().sqrt();
        Work {
            m,
            n,
            rows,
            cols,
            b,
            c,
            free,
            free_pos,
            blocks,
            kept,
            scale,
            rsoc_offsets,
            inconsistent_row,
            norm_b,
            norm_c,
            orig_m: p.num_equalities(),
        }
    }

    fn trivially_infeasible(&self, p: &ConicProgram, row: usize) -> Solution {
        let mut y = vec![0.0; p.num_equalities()];
        y[row] = p.rhs()[row].signum();
        Solution {
            status: SolveStatus::PrimalInfeasible,
            x: vec![0.0; p.num_vars()],
            y,
            z: vec![0.0; p.num_vars()],
            primal_objective: f64::INFINITY,
            dual_objective: f64::INFINITY,
            gap: f64::INFINITY,
            primal_residual: f64::INFINITY,
            dual_residual: 0.0,
            iterations: 0,
        }
    }

    fn a_mul(&self, x: &[f64], out: &mut [f64]) {
        for (i, r) in self.rows.iter().enumerate() {
            out[i] = r.iter().map(|&(c, a)| a * x[c]).sum();
        }
    }

    fn at_mul(&self, y: &[f64], out: &mut [f64]) {
        for (j, col) in self.cols.iter().enumerate() {
            out[j] = col.iter().map(|&(i, a)| a * y[i]).sum();
        }
    }

    fn degree(&self) -> usize {
        self.blocks.iter().map(Block::degree).sum()
    }

    /// Maps an internal point back to the caller's variables and rows.
    fn export_point(&self, x: &[f64], y: &[f64], z: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut xo = x.to_vec();
        let mut zo = z.to_vec();
        for &off in &self.rsoc_offsets {
            for v in [&mut xo, &mut zo] {
                let (a, b) = (v[off], v[off + 1]);
                v[off] = (a + b) * FRAC;
                v[off + 1] = (a - b) * FRAC;
            }
        }
        let mut yo = vec![0.0; self.orig_m];
        for (k, &i) in self.kept.iter().enumerate() {
            yo[i] = y[k] * self.scale[k];
        }
        (xo, yo, zo)
    }

    fn run(&self, p: &ConicProgram, opts: &SolverOptions) -> Result<Solution, SolveError> {
        let (m, n) = (self.m, self.n);
        let mut x = vec![0.0; n];
        let mut z = vec![0.0; n];
        for blk in &self.blocks {
            blk.identity(&mut x[blk.off..blk.off + blk.dim]);
            blk.identity(&mut z[blk.off..blk.off + blk.dim]);
        }
        let mut y = vec![0.0; m];
        let (mut tau, mut kappa) = (1.0f64, 1.0f64);
        let nu = self.degree() as f64;

        let mut rp = vec![0.0; m];
        let mut rd = vec![0.0; n];
        let mut tmp_n = vec![0.0; n];
        let mut best: Option<(f64, Vec<f64>, Vec<f64>, Vec<f64>, f64)> = None;
        let mut stalls = 0usize;
        let mut last_status = SolveStatus::MaxIterations;
        let mut iterations = 0usize;

        for it in 0..=opts.max_iter {
            iterations = it;
            // Residuals of the embedding.
            self.a_mul(&x, &mut rp);
            for i in 0..m {
                rp[i] -= self.b[i] * tau;
            }
            self.at_mul(&y, &mut rd);
            for j in 0..n {
                rd[j] += z[j] - self.c[j] * tau;
            }
            let cx = dot(&self.c, &x);
            let by = dot(&self.b, &y);
            let rg = cx - by + kappa;

            let pres = self.unscaled_norm(&rp) / tau / (1.0 + self.norm_b);
            let dres = norm(&rd) / tau / (1.0 + self.norm_c);
            let (pobj, dobj) = (cx / tau, by / tau);
            let gap = (pobj - dobj).abs();
            let merit = pres.max(dres).max(gap / pobj.abs().min(dobj.abs()).max(1.0));
            if best.as_ref().map_or(true, |b| merit < b.0) {
                best = Some((merit, x.clone(), y.clone(), z.clone(), tau));
            }
            let small = pobj.abs().min(dobj.abs());
            let gap_ok = gap <= opts.gap_tol * small.max(1.0) || gap <= opts.rel_gap_tol * small;
            if pres <= opts.feas_tol && dres <= opts.feas_tol && gap_ok {
                return Ok(self.finish(p, &x, &y, &z, tau, SolveStatus::Optimal, it));
            }
            // Infeasibility certificates.
            if kappa > tau {
                if by > 0.0 {
                    self.at_mul(&y, &mut tmp_n);
                    for j in 0..n {
                        tmp_n[j] += z[j];
                    }
                    if norm(&tmp_n) <= opts.infeas_tol * by * (1.0 + self.norm_c) {
                        return Ok(self.certificate(p, &x, &y, &z, SolveStatus::PrimalInfeasible, it));
                    }
                }
                if cx < 0.0 {
                    let mut ax = vec![0.0; m];
                    self.a_mul(&x, &mut ax);
                    if self.unscaled_norm(&ax) <= opts.infeas_tol * (-cx) * (1.0 + self.norm_b) {
                        return Ok(self.certificate(p, &x, &y, &z, SolveStatus::DualInfeasible, it));
                    }
                }
            }
            if it == opts.max_iter {
                break;
            }

            let Some(scal) = self.scalings(&x, &z) else { break };
            let mu = (self.cone_dot(&x, &z) + tau * kappa) / (nu + 1.0);

            let kkt = match Kkt::factor(self, &scal, opts.regularization) {
                Some(k) => k,
                None => {
                    if best.is_some() {
                        break;
                    }
                    return Err(SolveError::SingularKkt(it));
                }
            };
            // Direction for the τ column.
            let (u2, v2) = kkt.solve_refined(self, &scal, &self.c, &self.b, opts.refine_steps);
            let denom = dot(&self.c, &u2) - dot(&self.b, &v2) - kappa / tau;

            // Predictor.
            let lambdas: Vec<&[f64]> = scal.iter().map(|s| s.lambda()).collect();
            let mut ds = vec![0.0; n];
            for (k, blk) in self.blocks.iter().enumerate() {
                let r = blk.off..blk.off + blk.dim;
                blk.jordan(lambdas[k], lambdas[k], &mut ds[r.clone()]);
                for v in &mut ds[r] {
                    *v = -*v;
                }
            }
            let dtk = -tau * kappa;
            let ctx = StepCtx { rp: &rp, rd: &rd, rg, tau, kappa, u2: &u2, v2: &v2, denom };
            let aff = self.direction(&kkt, &scal, &ctx, 1.0, &ds, dtk, opts.refine_steps);
            let alpha_aff = self.max_step(&x, &z, tau, kappa, &aff).min(1.0);
            let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);

            // Corrector.
            let mut wdx = vec![0.0; n];
            let mut wdz = vec![0.0; n];
            let mut corr = vec![0.0; n];
            let mut e = vec![0.0; n];
            for (k, blk) in self.blocks.iter().enumerate() {
                let r = blk.off..blk.off + blk.dim;
                scal[k].apply_w(&aff.dx[r.clone()], &mut wdx[r.clone()]);
                scal[k].apply_winv_t(&aff.dz[r.clone()], &mut wdz[r.clone()]);
                blk.jordan(&wdx[r.clone()], &wdz[r.clone()], &mut corr[r.clone()]);
                blk.identity(&mut e[r.clone()]);
                for q in r {
                    ds[q] -= corr[q] - sigma * mu * e[q];
                }
            }
            let dtk = -tau * kappa - aff.dtau * aff.dkappa + sigma * mu;
            let dir = self.direction(&kkt, &scal, &ctx, 1.0 - sigma, &ds, dtk, opts.refine_steps);
            let amax = self.max_step(&x, &z, tau, kappa, &dir);
            let alpha = (opts.step_fraction * amax).min(1.0);
            if !(alpha > 1e-12) || !dir.is_finite() {
                stalls += 1;
                if stalls >= 3 {
                    break;
                }
                continue;
            }
            for j in 0..n {
                x[j] += alpha * dir.dx[j];
                z[j] += alpha * dir.dz[j];
            }
            for i in 0..m {
                y[i] += alpha * dir.dy[i];
            }
            tau += alpha * dir.dtau;
            kappa += alpha * dir.dkappa;
            if alpha < 1e-8 {
                stalls += 1;
                if stalls >= 5 {
                    break;
                }
            } else {
                stalls = 0;
            }
            if !(tau > 0.0 && kappa > 0.0) {
                last_status = SolveStatus::MaxIterations;
                break;
            }
        }
        let (_, bx, by, bz, btau) = best.expect("at least one iterate");
        Ok(self.finish(p, &bx, &by, &bz, btau, last_status, iterations))
    }

    fn unscaled_norm(&self, r: &[f64]) -> f64 {
        r.iter().zip(&self.scale).map(|(v, d)| (v / d) * (v / d)).sum::<f64>().sqrt()
    }

    fn cone_dot(&self, x: &[f64], z: &[f64]) -> f64 {
        self.blocks.iter().map(|b| dot(&x[b.off..b.off + b.dim], &z[b.off..b.off + b.dim])).sum()
    }

    fn scalings(&self, x: &[f64], z: &[f64]) -> Option<Vec<Scaling>> {
        self.blocks
            .iter()
            .map(|b| Scaling::new(b, &x[b.off..b.off + b.dim], &z[b.off..b.off + b.dim]))
            .collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn direction(&self, kkt: &Kkt, scal: &[Scaling], ctx: &StepCtx, eta: f64, ds: &[f64], dtk: f64, refine: usize) -> Dir {
        let (m, n) = (self.m, self.n);
        // t = Wᵀ (λ \ d_s)
        let mut t = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        for (k, blk) in self.blocks.iter().enumerate() {
            let r = blk.off..blk.off + blk.dim;
            scal[k].lambda_solve(&ds[r.clone()], &mut tmp[r.clone()]);
            scal[k].apply_wt(&tmp[r.clone()], &mut t[r]);
        }
        let qx: Vec<f64> = (0..n).map(|j| -eta * ctx.rd[j] - t[j]).collect();
        let qy: Vec<f64> = (0..m).map(|i| -eta * ctx.rp[i]).collect();
        let (u1, v1) = kkt.solve_refined(self, scal, &qx, &qy, refine);
        let dtau = (-eta * ctx.rg - dot(&self.c, &u1) + dot(&self.b, &v1) - dtk / ctx.tau) / ctx.denom;
        let dx: Vec<f64> = (0..n).map(|j| u1[j] + dtau * ctx.u2[j]).collect();
        let dy: Vec<f64> = (0..m).map(|i| v1[i] + dtau * ctx.v2[i]).collect();
        // dz from the dual residual equation, so that Aᵀy + z - cτ contracts
        // exactly along the step.
        let mut dz = vec![0.0; n];
        self.at_mul(&dy, &mut tmp);
        for blk in &self.blocks {
            for q in blk.off..blk.off + blk.dim {
                dz[q] = -eta * ctx.rd[q] - tmp[q] + self.c[q] * dtau;
            }
        }
        let dkappa = (dtk - ctx.kappa * dtau) / ctx.tau;
        Dir { dx, dy, dz, dtau, dkappa }
    }

    fn max_step(&self, x: &[f64], z: &[f64], tau: f64, kappa: f64, d: &Dir) -> f64 {
        let mut a = f64::INFINITY;
        for blk in &self.blocks {
            let r = blk.off..blk.off + blk.dim;
            a = a.min(blk.max_step(&x[r.clone()], &d.dx[r.clone()]));
            a = a.min(blk.max_step(&z[r.clone()], &d.dz[r]));
        }
        if d.dtau < 0.0 {
            a = a.min(-tau / d.dtau);
        }
        if d.dkappa < 0.0 {
            a = a.min(-kappa / d.dkappa);
        }
        a
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(&self, p: &ConicProgram, x: &[f64], y: &[f64], z: &[f64], tau: f64, status: SolveStatus, it: usize) -> Solution {
        let xs: Vec<f64> = x.iter().map(|v| v / tau).collect();
        let ys: Vec<f64> = y.iter().map(|v| v / tau).collect();
        let zs: Vec<f64> = z.iter().map(|v| v / tau).collect();
        let (xo, yo, zo) = self.export_point(&xs, &ys, &zs);
        self.report(p, xo, yo, zo, status, it)
    }

    fn certificate(&self, p: &ConicProgram, x: &[f64], y: &[f64], z: &[f64], status: SolveStatus, it: usize) -> Solution {
        // Normalize the certificate so that bᵀy = 1 or cᵀx = -1.
        let s = match status {
            SolveStatus::PrimalInfeasible => dot(&self.b, y),
            _ => -dot(&self.c, x),
        };
        let xs: Vec<f64> = x.iter().map(|v| v / s).collect();
        let ys: Vec<f64> = y.iter().map(|v| v / s).collect();
        let zs: Vec<f64> = z.iter().map(|v| v / s).collect();
        let (xo, yo, zo) = self.export_point(&xs, &ys, &zs);
        self.report(p, xo, yo, zo, status, it)
    }

    fn report(&self, p: &ConicProgram, x: Vec<f64>, y: Vec<f64>, z: Vec<f64>, status: SolveStatus, it: usize) -> Solution {
        let pobj = p.objective_value(&x);
        let dobj = dot(p.rhs(), &y);
        let pres = norm(&p.primal_residual(&x)) / (1.0 + self.norm_b);
        let mut aty = vec![0.0; p.num_vars()];
        for (row, &yi) in p.rows().iter().zip(&y) {
            for &(c, a) in row {
                aty[c] += a * yi;
            }
        }
        let mut dr = 0.0;
        for j in 0..p.num_vars() {
            let zj = if self.free_pos[j].is_some() { 0.0 } else { z[j] };
            let v = aty[j] + zj - p.objective()[j];
            dr += v * v;
        }
        Solution {
            status,
            gap: (pobj - dobj).abs(),
            primal_objective: pobj,
            dual_objective: dobj,
            primal_residual: pres,
            dual_residual: dr.sqrt() / (1.0 + self.norm_c),
            x,
            y,
            z,
            iterations: it,
        }
    }
}

struct StepCtx<'a> {
    rp: &'a [f64],
    rd: &'a [f64],
    rg: f64,
    tau: f64,
    kappa: f64,
    u2: &'a [f64],
    v2: &'a [f64],
    denom: f64,
}

struct Dir {
    dx: Vec<f64>,
    dy: Vec<f64>,
    dz: Vec<f64>,
    dtau: f64,
    dkappa: f64,
}

impl Dir {
    fn is_finite(&self) -> bool {
        self.dtau.is_finite()
            && self.dkappa.is_finite()
            && self.dx.iter().chain(&self.dy).chain(&self.dz).all(|v| v.is_finite())
    }
}

struct Kkt {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    /// Symmetric equilibration: the factored matrix is `D K D`.
    d: Vec<f64>,
}

impl Kkt {
    fn factor(w: &Work, scal: &[Scaling], delta: f64) -> Option<Self> {
        let (m, n) = (w.m, w.n);
        let mut k = DMatrix::<f64>::zeros(n + m, n + m);
        for (bi, blk) in w.blocks.iter().enumerate() {
            let h = scal[bi].h_matrix();
            k.view_mut((blk.off, blk.off), (blk.dim, blk.dim)).copy_from(&(-h));
        }
        for &j in &w.free {
            k[(j, j)] = -delta;
        }
        for (i, row) in w.rows.iter().enumerate() {
            for &(c, a) in row {
                k[(n + i, c)] = a;
                k[(c, n + i)] = a;
            }
            k[(n + i, n + i)] = delta;
        }
        if k.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let d = ruiz(&mut k);
        Some(Kkt { lu: k.lu(), d })
    }

    /// One solve of `[[-H, Aᵀ], [A, 0]] [dx; dy] = [rx; ry]`.
    fn solve_once(&self, w: &Work, rx: &[f64], ry: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = w.n;
        let rhs = DVector::from_iterator(n + w.m, rx.iter().chain(ry).zip(&self.d).map(|(r, d)| r * d));
        let mut sol = if rhs.is_empty() { rhs } else { self.lu.solve(&rhs)? };
        for (v, d) in sol.iter_mut().zip(&self.d) {
            *v *= d;
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some((sol.as_slice()[..n].to_vec(), sol.as_slice()[n..].to_vec()))
    }

    fn residual(w: &Work, scal: &[Scaling], rx: &[f64], ry: &[f64], dx: &[f64], dy: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (m, n) = (w.m, w.n);
        let mut ex = vec![0.0; n];
        w.at_mul(dy, &mut ex);
        let mut hdx = vec![0.0; n];
        for (k, blk) in w.blocks.iter().enumerate() {
            let r = blk.off..blk.off + blk.dim;
            scal[k].apply_h(&dx[r.clone()], &mut hdx[r]);
        }
        for j in 0..n {
            ex[j] = rx[j] - (ex[j] - hdx[j]);
        }
        let mut ey = vec![0.0; m];
        w.a_mul(dx, &mut ey);
        for i in 0..m {
            ey[i] = ry[i] - ey[i];
        }
        (ex, ey)
    }

    fn solve_refined(&self, w: &Work, scal: &[Scaling], rx: &[f64], ry: &[f64], steps: usize) -> (Vec<f64>, Vec<f64>) {
        let Some((mut dx, mut dy)) = self.solve_once(w, rx, ry) else {
            return (vec![f64::NAN; w.n], vec![f64::NAN; w.m]);
        };
        let rhs_norm = norm(rx).max(norm(ry)).max(1e-300);
        let (mut ex, mut ey) = Self::residual(w, scal, rx, ry, &dx, &dy);
        let mut err = norm(&ex).max(norm(&ey));
        for _ in 0..steps {
            if err <= 1e-15 * rhs_norm {
                break;
            }
            let Some((cx, cy)) = self.solve_once(w, &ex, &ey) else { break };
            let nx: Vec<f64> = dx.iter().zip(&cx).map(|(a, b)| a + b).collect();
            let ny: Vec<f64> = dy.iter().zip(&cy).map(|(a, b)| a + b).collect();
            let (fx, fy) = Self::residual(w, scal, rx, ry, &nx, &ny);
            let new_err = norm(&fx).max(norm(&fy));
            if new_err >= err {
                break;
            }
            dx = nx;
            dy = ny;
            ex = fx;
            ey = fy;
            err = new_err;
        }
        (dx, dy)
    }
}

/// Symmetric Ruiz equilibration in the max norm; returns the scaling.
fn ruiz(k: &mut DMatrix<f64>) -> Vec<f64> {
    let size = k.nrows();
    let mut d = vec![1.0; size];
    for _ in 0..10 {
        let s: Vec<f64> = (0..size)
            .map(|i| {
                let m = k.row(i).iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if m > 0.0 { 1.0 / m.sqrt() } else { 1.0 }
            })
            .collect();
        if s.iter().all(|v| (v - 1.0).abs() < 1e-3) {
            break;
        }
        for i in 0..size {
            for j in 0..size {
                k[(i, j)] *= s[i] * s[j];
            }
            d[i] *= s[i];
        }
    }
    d
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}
