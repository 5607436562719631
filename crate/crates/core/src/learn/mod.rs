//! Constrained fitting: a loss over the dataset plus compiled side
//! information, solved as one conic program.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::conic::{
    Cone, ConicProgram, ConicSolver, InteriorPoint, LinExpr, ProgramBuilder, ProgramError, RowLabel, SolveError,
    SolveStatus, SolverOptions,
};
use crate::dynamics::Dataset;
use crate::field::PolyField;
use crate::poly::{MultiPoly, PolyError, PolyVec};
use crate::semialg::{BasicSemialgebraicSet, SetError};
use crate::sideinfo::{
    compile, residual_functional, CandidateParam, CertifiedBlock, ResidualReport, SideInfoError, SideInfoItem,
};
use crate::sos::{verify_certificate, PutinarCertificate, SosError, VerificationReport};

/// Largest admissible side-information residual of a fitted model.
pub const DELTA: f64 = 1e-5;
/// Grid resolution per axis for the residual check.
pub const DELTA_RESOLUTION: usize = 50;
/// Data points farther than this outside the domain trigger a warning.
const DOMAIN_WARN_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `Σ ‖p(xᵢ) - yᵢ‖²`.
    #[default]
    L2Squared,
    /// `Σ ‖p(xᵢ) - yᵢ‖₁`.
    L1,
    /// `maxᵢ ‖p(xᵢ) - yᵢ‖∞`.
    LInf,
}

impl Loss {
    pub fn evaluate(self, field: &PolyVec, data: &Dataset) -> Result<f64, PolyError> {
        let mut acc = 0.0f64;
        for (x, y) in &data.pairs {
            let v = field.evaluate(x)?;
            for (a, b) in v.iter().zip(y) {
                let r = a - b;
                match self {
                    Loss::L2Squared => acc += r * r,
                    Loss::L1 => acc += r.abs(),
                    Loss::LInf => acc = acc.max(r.abs()),
                }
            }
        }
        Ok(acc)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningProblem {
    pub data: Dataset,
    pub n: usize,
    pub degree: u32,
    /// Components pinned to known polynomials (empty: all free).
    #[serde(default)]
    pub fixed: Vec<Option<MultiPoly>>,
    #[serde(default)]
    pub side_infos: Vec<SideInfoItem>,
    #[serde(default)]
    pub loss: Loss,
    pub domain: BasicSemialgebraicSet,
    /// Weight of an `ℓ1` penalty on the free coefficients; 0 disables it.
    #[serde(default)]
    pub l1_penalty: f64,
}

impl LearningProblem {
    pub fn new(data: Dataset, n: usize, degree: u32, domain: BasicSemialgebraicSet) -> Self {
        Self { data, n, degree, fixed: Vec::new(), side_infos: Vec::new(), loss: Loss::default(), domain, l1_penalty: 0.0 }
    }

    pub fn with_side_info(mut self, item: impl Into<SideInfoItem>) -> Self {
        self.side_infos.push(item.into());
        self
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("problems serialize");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("invalid learning problem: {0}")]
    Config(String),
    #[error("side information {items:?} is contradictory: {reason}")]
    Contradictory { items: Vec<String>, reason: String },
    #[error("side information is infeasible; implicated blocks: {blame:?}")]
    Infeasible { blame: Vec<String> },
    #[error("the fitting problem is unbounded")]
    Unbounded,
    #[error("certificate '{name}' failed verification: {report:?}")]
    Certificate { name: String, report: VerificationReport },
    #[error("side information '{tag}' has residual {value:e} > {DELTA:e} at {point:?}")]
    DeltaViolation { tag: String, value: f64, point: Option<Vec<f64>> },
    #[error(transparent)]
    Solver(#[from] SolveError),
    #[error(transparent)]
    SideInfo(#[from] SideInfoError),
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error(transparent)]
    Sos(#[from] SosError),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Set(#[from] SetError),
}

/// A compiled [`LearningProblem`].
#[derive(Clone, Debug)]
pub struct Assembled {
    pub program: ConicProgram,
    pub labels: Vec<RowLabel>,
    pub candidate: CandidateParam,
    /// `(item index, block)` for every Putinar block.
    pub blocks: Vec<(usize, CertifiedBlock)>,
    /// Row-label name of each side-information item.
    pub item_names: Vec<String>,
    pub loss_rows: Range<usize>,
}

fn residual_expr(c: &CandidateParam, x: &[f64], i: usize) -> Result<LinExpr, PolyError> {
    c.component(i).evaluate_at(x)
}

/// Loss rows; returns the label range.
fn add_loss(b: &mut ProgramBuilder, c: &CandidateParam, data: &Dataset, loss: Loss) -> Result<Range<usize>, LearnError> {
    let n = c.n();
    let m = data.len() * n;
    let start = b.num_equalities();
    if m == 0 {
        return Ok(start..start);
    }
    let mut residuals = Vec::with_capacity(m);
    for (x, y) in &data.pairs {
        for i in 0..n {
            let mut e = residual_expr(c, x, i)?;
            e.add_constant(-y[i]);
            residuals.push(e);
        }
    }
    match loss {
        Loss::L2Squared => {
            // 2·t·w ≥ ‖r‖² with w = 1/2.
            let g = b.declare("loss", Cone::Rsoc(2 + m))?;
            b.add_objective(g.slot(0), 1.0);
            b.add_equality(LinExpr::var(g.slot(1)), 0.5);
            for (k, r) in residuals.into_iter().enumerate() {
                let mut e = LinExpr::var(g.slot(2 + k));
                e.axpy(-1.0, &r);
                b.add_equality(e, 0.0);
            }
        }
        Loss::L1 => {
            let pos = b.declare("loss.pos", Cone::Nonneg(m))?;
            let neg = b.declare("loss.neg", Cone::Nonneg(m))?;
            for (k, r) in residuals.into_iter().enumerate() {
                b.add_objective(pos.slot(k), 1.0);
                b.add_objective(neg.slot(k), 1.0);
                let mut e = LinExpr::var(pos.slot(k));
                e.add_term(neg.slot(k), -1.0);
                e.axpy(-1.0, &r);
                b.add_equality(e, 0.0);
            }
        }
        Loss::LInf => {
            let s = b.declare("loss.bound", Cone::Nonneg(1))?;
            let up = b.declare("loss.upper", Cone::Nonneg(m))?;
            let lo = b.declare("loss.lower", Cone::Nonneg(m))?;
            b.add_objective(s.slot(0), 1.0);
            for (k, r) in residuals.into_iter().enumerate() {
                // s - r ≥ 0 and s + r ≥ 0.
                let mut e = LinExpr::var(up.slot(k));
                e.add_term(s.slot(0), -1.0);
                e.axpy(1.0, &r);
                b.add_equality(e, 0.0);
                let mut e = LinExpr::var(lo.slot(k));
                e.add_term(s.slot(0), -1.0);
                e.axpy(-1.0, &r);
                b.add_equality(e, 0.0);
            }
        }
    }
    let rows = start..b.num_equalities();
    b.label_rows("loss", rows.clone());
    Ok(rows)
}

fn add_penalty(b: &mut ProgramBuilder, c: &CandidateParam, weight: f64) -> Result<(), LearnError> {
    let cols: Vec<usize> = (0..c.n()).filter_map(|i| c.columns(i)).flatten().collect();
    if weight == 0.0 || cols.is_empty() {
        return Ok(());
    }
    let pos = b.declare("penalty.pos", Cone::Nonneg(cols.len()))?;
    let neg = b.declare("penalty.neg", Cone::Nonneg(cols.len()))?;
    let start = b.num_equalities();
    for (k, &col) in cols.iter().enumerate() {
        b.add_objective(pos.slot(k), weight);
        b.add_objective(neg.slot(k), weight);
        let mut e = LinExpr::var(col);
        e.add_term(pos.slot(k), -1.0);
        e.add_term(neg.slot(k), 1.0);
        b.add_equality(e, 0.0);
    }
    let end = b.num_equalities();
    b.label_rows("penalty", start..end);
    Ok(())
}

/// Least-squares consistency of a set of affine rows `expr = 0`.
fn affine_inconsistency(rows: &[LinExpr], ncols: usize) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let mut a = DMatrix::<f64>::zeros(rows.len(), ncols);
    let mut rhs = DVector::zeros(rows.len());
    for (i, r) in rows.iter().enumerate() {
        for &(c, v) in r.normalized().terms() {
            a[(i, c)] += v;
        }
        rhs[i] = -r.constant_part();
    }
    let scale = 1.0 + rhs.amax();
    let svd = a.clone().svd(true, true);
    let tol = 1e-10 * svd.singular_values.max().max(1.0);
    match svd.solve(&rhs, tol) {
        Ok(sol) => (&a * sol - &rhs).amax() / scale,
        Err(_) => f64::INFINITY,
    }
}

const AFFINE_TOL: f64 = 1e-8;

pub fn assemble(problem: &LearningProblem) -> Result<Assembled, LearnError> {
    let n = problem.n;
    if n == 0 {
        return Err(LearnError::Config("state dimension must be positive".into()));
    }
    if let Some(dn) = problem.data.n() {
        if dn != n {
            return Err(LearnError::Config(format!("data has dimension {dn}, candidate {n}")));
        }
    }
    if problem.data.pairs.iter().any(|(x, y)| x.len() != n || y.len() != n) {
        return Err(LearnError::Config("data pairs have inconsistent dimensions".into()));
    }
    if problem.domain.n() != n {
        return Err(LearnError::Config(format!("domain has dimension {}, candidate {n}", problem.domain.n())));
    }
    if !(problem.l1_penalty >= 0.0 && problem.l1_penalty.is_finite()) {
        return Err(LearnError::Config(format!("l1 penalty must be a nonnegative number, got {}", problem.l1_penalty)));
    }

    let mut b = ProgramBuilder::new();
    let candidate = CandidateParam::declare(&mut b, n, problem.degree, &problem.fixed)?;
    let loss_rows = add_loss(&mut b, &candidate, &problem.data, problem.loss)?;
    add_penalty(&mut b, &candidate, problem.l1_penalty)?;

    let mut blocks = Vec::new();
    let mut item_names = Vec::new();
    let mut affine: Vec<(String, Vec<LinExpr>)> = Vec::new();
    for (k, item) in problem.side_infos.iter().enumerate() {
        let name = format!("s{k}.{}", item.info.tag());
        let compiled = compile(&mut b, &name, &candidate, item).map_err(|e| match e {
            SideInfoError::Contradictory(reason) => LearnError::Contradictory { items: vec![name.clone()], reason },
            other => other.into(),
        })?;
        if !compiled.equalities.is_empty() {
            affine.push((name.clone(), compiled.equalities.clone()));
            b.add_labeled(&name, compiled.equalities);
        }
        for blk in compiled.blocks {
            blk.blocks.commit(&mut b);
            blocks.push((k, blk));
        }
        item_names.push(name);
    }

    let ncols = b.num_vars();
    let all: Vec<LinExpr> = affine.iter().flat_map(|(_, r)| r.iter().cloned()).collect();
    let joint = affine_inconsistency(&all, ncols);
    if joint > AFFINE_TOL {
        let mut items: Vec<String> =
            affine.iter().filter(|(_, r)| affine_inconsistency(r, ncols) > AFFINE_TOL).map(|(s, _)| s.clone()).collect();
        if items.is_empty() {
            items = affine.iter().map(|(s, _)| s.clone()).collect();
        }
        return Err(LearnError::Contradictory {
            items,
            reason: format!("affine constraints admit no solution (least-squares residual {joint:e})"),
        });
    }

    let (program, labels) = b.finish()?;
    Ok(Assembled { program, labels, candidate, blocks, item_names, loss_rows })
}

/// Items whose rows carry weight in a Farkas certificate `y`.
fn blame(assembled: &Assembled, y: &[f64]) -> Vec<String> {
    let big = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out: Vec<String> = Vec::new();
    for name in &assembled.item_names {
        let prefix = format!("{name}.");
        let hit = assembled
            .labels
            .iter()
            .filter(|l| l.name == *name || l.name.starts_with(&prefix))
            .any(|l| l.rows.clone().any(|r| y[r].abs() > 1e-6 * big));
        if hit {
            out.push(name.clone());
        }
    }
    if out.is_empty() {
        out = assembled.item_names.clone();
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredCertificate {
    pub name: String,
    pub target: MultiPoly,
    pub set: BasicSemialgebraicSet,
    pub certificate: PutinarCertificate,
    pub report: VerificationReport,
}

impl StoredCertificate {
    /// SHA-256 of the certificate's JSON encoding.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(&self.certificate).expect("certificates serialize")))
    }
}

/// Solver tolerances for fitting. Losses on clean data are often far below
/// one, so the gap tolerance is much tighter than the solver default.
pub fn learn_solver_options() -> SolverOptions {
    SolverOptions { gap_tol: 1e-12, feas_tol: 1e-10, ..SolverOptions::default() }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    pub solver: SolverOptions,
    /// Fail when certificates or residual checks do not pass on an optimal solve.
    pub strict: bool,
    pub delta: f64,
    pub delta_resolution: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { solver: learn_solver_options(), strict: true, delta: DELTA, delta_resolution: DELTA_RESOLUTION }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnedModel {
    pub field: PolyVec,
    pub degree: u32,
    /// Loss recomputed from `field` on the training data.
    pub objective: f64,
    pub certificates: Vec<StoredCertificate>,
    pub residuals: Vec<ResidualReport>,
    pub status: SolveStatus,
    pub gap: f64,
    pub iterations: usize,
    pub fingerprint: String,
    pub warnings: Vec<String>,
}

pub fn fit(problem: &LearningProblem, opts: &FitOptions) -> Result<LearnedModel, LearnError> {
    let assembled = assemble(problem)?;
    let sol = InteriorPoint::new(opts.solver.clone()).solve(&assembled.program)?;
    match sol.status {
        SolveStatus::Optimal | SolveStatus::MaxIterations => {}
        SolveStatus::PrimalInfeasible => return Err(LearnError::Infeasible { blame: blame(&assembled, &sol.y) }),
        SolveStatus::DualInfeasible => return Err(LearnError::Unbounded),
    }
    let optimal = sol.status == SolveStatus::Optimal;
    let field = assembled.candidate.realize(&sol.x);
    let objective = problem.loss.evaluate(&field, &problem.data)?;

    let mut warnings = Vec::new();
    for (x, _) in &problem.data.pairs {
        if !problem.domain.membership(x, DOMAIN_WARN_TOL)? {
            warnings.push(format!("data point {x:?} lies outside the domain"));
        }
    }

    let mut certificates = Vec::with_capacity(assembled.blocks.len());
    for (_, blk) in &assembled.blocks {
        let certificate = blk.blocks.extract(&sol.x);
        let target = blk.target.realize(&sol.x);
        let report = verify_certificate(&certificate, &target, &blk.set)?;
        if !report.valid {
            if opts.strict && optimal {
                return Err(LearnError::Certificate { name: blk.blocks.name.clone(), report });
            }
            warnings.push(format!("certificate '{}' failed verification: {report:?}", blk.blocks.name));
        }
        certificates.push(StoredCertificate { name: blk.blocks.name.clone(), target, set: blk.set.clone(), certificate, report });
    }

    let pf = PolyField::new(field.clone());
    let mut residuals = Vec::with_capacity(problem.side_infos.len());
    for item in &problem.side_infos {
        let rep = residual_functional(&pf, &item.info, &problem.domain, opts.delta_resolution)?;
        if rep.value > opts.delta {
            if opts.strict && optimal {
                return Err(LearnError::DeltaViolation { tag: rep.tag, value: rep.value, point: rep.worst_point });
            }
            warnings.push(format!("side information '{}' has residual {:e}", rep.tag, rep.value));
        }
        residuals.push(rep);
    }

    Ok(LearnedModel {
        field,
        degree: problem.degree,
        objective,
        certificates,
        residuals,
        status: sol.status,
        gap: sol.gap,
        iterations: sol.iterations,
        fingerprint: problem.fingerprint(),
        warnings,
    })
}

/// Name and digest of one stored certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateDigest {
    pub name: String,
    pub sha256: String,
}

/// On-disk form of a [`LearnedModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub n: usize,
    pub d: u32,
    pub components: Vec<MultiPoly>,
    pub objective: f64,
    pub status: SolveStatus,
    pub gap: f64,
    pub fingerprint: String,
    pub certificates: Vec<CertificateDigest>,
}

impl From<&LearnedModel> for ModelFile {
    fn from(m: &LearnedModel) -> Self {
        Self {
            n: m.field.n(),
            d: m.degree,
            components: m.field.components().to_vec(),
            objective: m.objective,
            status: m.status,
            gap: m.gap,
            fingerprint: m.fingerprint.clone(),
            certificates: m.certificates.iter().map(|c| CertificateDigest { name: c.name.clone(), sha256: c.digest() }).collect(),
        }
    }
}

impl ModelFile {
    pub fn field(&self) -> Result<PolyVec, PolyError> {
        let pv = PolyVec::new(self.components.clone())?;
        if pv.n() != self.n {
            return Err(PolyError::DimensionMismatch { expected: self.n, found: pv.n() });
        }
        Ok(pv)
    }
}

/// Searches certificates for a fixed field: every component is pinned and
/// the side information is compiled and solved as a feasibility problem.
pub fn certify(
    field: &PolyVec,
    side_infos: &[SideInfoItem],
    domain: &BasicSemialgebraicSet,
    opts: &FitOptions,
) -> Result<LearnedModel, LearnError> {
    let n = field.n();
    let data = Dataset { pairs: Vec::new(), provenance: crate::dynamics::Provenance { generator: "none".into(), sigma: 0.0, seed: 0 } };
    let problem = LearningProblem {
        data,
        n,
        degree: field.degree(),
        fixed: field.components().iter().cloned().map(Some).collect(),
        side_infos: side_infos.to_vec(),
        loss: Loss::L2Squared,
        domain: domain.clone(),
        l1_penalty: 0.0,
    };
    fit(&problem, opts)
}

#[cfg(test)]
mod tests;
