//! Sum-of-squares constraints: Gram parameterizations `h = zᵀQz` and
//! Putinar certificates `q = σ₀ + Σ σᵢ gᵢ + Σ λⱼ hⱼ`, compiled into PSD
//! blocks and coefficient-matching equalities of a [`ProgramBuilder`], plus
//! an independent verifier that re-expands a certificate exactly.

mod affpoly;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{Cone, LinExpr, ProgramBuilder, ProgramError, PsdVar};
use crate::poly::{monomial_basis, Monomial, MultiPoly, PolyError};
use crate::semialg::BasicSemialgebraicSet;

pub use affpoly::AffPoly;

/// Coefficient residual accepted by [`verify_certificate`].
pub const RESIDUAL_TOL: f64 = 1e-6;
/// Most negative Gram eigenvalue accepted by [`verify_certificate`].
pub const EIGEN_TOL: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SosError {
    #[error("Gram degree {0} must be even")]
    OddDegree(u32),
    #[error("target degree {target} exceeds the certificate degree {deg}")]
    DegreeTooLow { target: u32, deg: u32 },
    #[error("multiplier degree r = {0} must be even")]
    OddMultiplierDegree(u32),
    #[error("multiplier degree for constraint {index} would be negative (identity degree {identity}, constraint degree {constraint})")]
    NegativeMultiplierDegree { index: usize, identity: u32, constraint: u32 },
    #[error("certificate structure mismatch: {0}")]
    Structure(String),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Program(#[from] ProgramError),
}

/// A PSD decision block `Q` with its monomial vector `z` and the polynomial
/// it multiplies (`1` for `σ₀`).
#[derive(Clone, Debug, PartialEq)]
pub struct GramBlock {
    pub name: String,
    pub basis: Vec<Monomial>,
    pub var: PsdVar,
    pub multiplier: MultiPoly,
}

/// A sign-free polynomial multiplier for an equality constraint.
#[derive(Clone, Debug, PartialEq)]
pub struct FreeMultiplier {
    pub name: String,
    pub basis: Vec<Monomial>,
    pub offset: usize,
    pub equality: MultiPoly,
}

/// Blocks emitted for a single "polynomial ≥ 0 on a set" constraint.
///
/// Every equality in `linear_equalities` reads `expr = 0` and references only
/// variables declared in the builder the blocks were compiled against.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintBlocks {
    pub name: String,
    pub psd_blocks: Vec<GramBlock>,
    pub free_multipliers: Vec<FreeMultiplier>,
    pub linear_equalities: Vec<LinExpr>,
    /// Degree of the certificate identity.
    pub identity_degree: u32,
}

impl ConstraintBlocks {
    /// Pushes the matching equalities into `builder` under this block's name.
    pub fn commit(&self, builder: &mut ProgramBuilder) {
        builder.add_labeled(&self.name, self.linear_equalities.iter().cloned());
    }

    /// Reads the certificate out of a primal solution vector.
    pub fn extract(&self, x: &[f64]) -> PutinarCertificate {
        let sigma = self
            .psd_blocks
            .iter()
            .map(|b| {
                let s = b.basis.len();
                let mut q = vec![vec![0.0; s]; s];
                for i in 0..s {
                    for j in 0..s {
                        let (col, scale) = b.var.entry(i, j);
                        q[i][j] = scale * x[col];
                    }
                }
                SigmaTerm { multiplier: b.multiplier.clone(), gram: GramCertificate::new(&b.basis, q) }
            })
            .collect();
        let lambda = self
            .free_multipliers
            .iter()
            .map(|f| {
                let coeffs: Vec<f64> = (0..f.basis.len()).map(|k| x[f.offset + k]).collect();
                LambdaTerm {
                    equality: f.equality.clone(),
                    poly: MultiPoly::from_coefficients(f.equality.n(), &f.basis, &coeffs),
                }
            })
            .collect();
        PutinarCertificate { sigma, lambda }
    }
}

/// `z(x)ᵀ Q z(x)` with `Q` stored dense row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramCertificate {
    pub basis: Vec<Vec<u32>>,
    pub q: Vec<Vec<f64>>,
}

impl GramCertificate {
    pub fn new(basis: &[Monomial], q: Vec<Vec<f64>>) -> Self {
        Self { basis: basis.iter().map(|m| m.exponents().to_vec()).collect(), q }
    }

    pub fn polynomial(&self, n: usize) -> MultiPoly {
        let mut p = MultiPoly::zero(n);
        for (i, a) in self.basis.iter().enumerate() {
            for (j, b) in self.basis.iter().enumerate() {
                let m = &Monomial::new(a.clone()) * &Monomial::new(b.clone());
                p.add_term(m, self.q[i][j]);
            }
        }
        p
    }

    /// Smallest eigenvalue of the symmetric part of `Q` (`+inf` when empty).
    pub fn min_eigenvalue(&self) -> f64 {
        let s = self.q.len();
        if s == 0 {
            return f64::INFINITY;
        }
        let m = DMatrix::from_fn(s, s, |i, j| 0.5 * (self.q[i][j] + self.q[j][i]));
        SymmetricEigen::new(m).eigenvalues.min()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaTerm {
    pub multiplier: MultiPoly,
    pub gram: GramCertificate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaTerm {
    pub equality: MultiPoly,
    pub poly: MultiPoly,
}

/// `σ₀ + Σ σᵢ gᵢ + Σ λⱼ hⱼ`, each term carrying the polynomial it multiplies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PutinarCertificate {
    pub sigma: Vec<SigmaTerm>,
    pub lambda: Vec<LambdaTerm>,
}

impl PutinarCertificate {
    pub fn reconstruct(&self, n: usize) -> Result<MultiPoly, PolyError> {
        let mut acc = MultiPoly::zero(n);
        for s in &self.sigma {
            acc = &acc + &s.gram.polynomial(n).multiply(&s.multiplier)?;
        }
        for l in &self.lambda {
            acc = &acc + &l.poly.multiply(&l.equality)?;
        }
        Ok(acc)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub max_residual: f64,
    pub min_eigenvalue: f64,
    pub valid: bool,
}

fn even_floor(d: u32) -> u32 {
    d - d % 2
}

fn active_basis(n: usize, deg: u32, active: &[bool]) -> Vec<Monomial> {
    monomial_basis(n, deg).into_iter().filter(|m| m.uses_only(active)).collect()
}

/// Declares a PSD block over `basis` and accumulates `multiplier · zᵀQz`
/// into `acc`.
fn add_gram_term(
    builder: &mut ProgramBuilder,
    name: &str,
    basis: Vec<Monomial>,
    multiplier: &MultiPoly,
    acc: &mut BTreeMap<Monomial, LinExpr>,
) -> Result<GramBlock, SosError> {
    let s = basis.len();
    let group = builder.declare_unique(name, Cone::Psd(s))?;
    let var = PsdVar { offset: group.offset, side: s };
    for k in 0..s {
        for l in k..s {
            let (col, scale) = var.entry(k, l);
            let factor = if k == l { 1.0 } else { 2.0 } * scale;
            let zz = &basis[k] * &basis[l];
            for (t, g) in multiplier.terms() {
                acc.entry(&zz * t).or_default().add_term(col, factor * g);
            }
        }
    }
    Ok(GramBlock { name: group.name, basis, var, multiplier: multiplier.clone() })
}

fn matching_equalities(
    target: &AffPoly,
    acc: BTreeMap<Monomial, LinExpr>,
    identity: &[Monomial],
) -> Vec<LinExpr> {
    let mut acc = acc;
    let mut out = Vec::with_capacity(identity.len());
    for m in identity {
        let mut e = acc.remove(m).unwrap_or_default();
        e.axpy(-1.0, &target.coefficient(m));
        out.push(e.normalized());
    }
    debug_assert!(acc.is_empty(), "certificate terms outside the identity basis");
    out
}

/// `target ≡ zᵀQz` with `Q ⪰ 0` over the full basis of degree `deg / 2`.
///
/// Emits one PSD block of side `C(n + deg/2, n)` and `C(n + deg, n)`
/// coefficient-matching equalities.
pub fn gram_parameterization(
    builder: &mut ProgramBuilder,
    name: &str,
    target: &AffPoly,
    deg: u32,
) -> Result<ConstraintBlocks, SosError> {
    if deg % 2 != 0 {
        return Err(SosError::OddDegree(deg));
    }
    let td = target.degree();
    if td > deg {
        return Err(SosError::DegreeTooLow { target: td, deg });
    }
    let n = target.n();
    let all = vec![true; n];
    let mut acc = BTreeMap::new();
    let block = add_gram_term(builder, &format!("{name}.s0"), active_basis(n, deg / 2, &all), &MultiPoly::constant(n, 1.0), &mut acc)?;
    let identity = active_basis(n, deg, &all);
    let linear_equalities = matching_equalities(target, acc, &identity);
    Ok(ConstraintBlocks {
        name: name.to_string(),
        psd_blocks: vec![block],
        free_multipliers: Vec::new(),
        linear_equalities,
        identity_degree: deg,
    })
}

/// Degree-`r` Putinar certificate of `target ≥ 0` on `set`.
///
/// The identity degree is `D = max(deg target, r + max deg of the defining
/// polynomials)`; `σ₀` gets degree `min(r, ⌊D⌋₂)`, each `σᵢ` degree
/// `min(r, ⌊D - deg gᵢ⌋₂)` and each `λⱼ` degree `D - deg hⱼ`. Only variables
/// that occur in the target or the set enter the monomial bases. An interval
/// in a single variable cut out by two affine facets uses the two facet
/// multipliers alone, `q = (x - a) s₀ + (b - x) s₁`.
pub fn putinar_blocks(
    builder: &mut ProgramBuilder,
    name: &str,
    target: &AffPoly,
    set: &BasicSemialgebraicSet,
    r: u32,
) -> Result<ConstraintBlocks, SosError> {
    let n = target.n();
    if set.n() != n {
        return Err(PolyError::DimensionMismatch { expected: n, found: set.n() }.into());
    }
    if r % 2 != 0 {
        return Err(SosError::OddMultiplierDegree(r));
    }
    let td = target.degree();
    if set.is_whole_space() && set.archimedean_radius().is_none() {
        let deg = r.max(td + td % 2);
        return gram_parameterization(builder, name, target, deg);
    }

    let mut active = target.support_variables();
    for g in set.inequalities().iter().chain(set.equalities()) {
        for (a, u) in active.iter_mut().zip(g.support_variables()) {
            *a |= u;
        }
    }
    if !active.iter().any(|&a| a) {
        // Constant target on a set: fall back to a constant nonnegativity block.
        active[0] = true;
    }

    let gmax = set.inequalities().iter().chain(set.equalities()).map(MultiPoly::degree).max().unwrap_or(0);
    let identity_degree = td.max(r + gmax);
    let interval = univariate_interval(set, &active);

    let mut sigma_polys: Vec<MultiPoly> = Vec::new();
    if !interval {
        sigma_polys.push(MultiPoly::constant(n, 1.0));
    }
    sigma_polys.extend(set.inequalities().iter().cloned());
    if !interval {
        if let Some(radius) = set.archimedean_radius() {
            let mut ball = MultiPoly::constant(n, radius * radius);
            for (j, &a) in active.iter().enumerate() {
                if a {
                    let xj = MultiPoly::var(n, j);
                    ball = &ball - &(&xj * &xj);
                }
            }
            sigma_polys.push(ball);
        }
    }

    let mut acc = BTreeMap::new();
    let mut psd_blocks = Vec::new();
    let mut achievable = 0u32;
    for (i, g) in sigma_polys.iter().enumerate() {
        let gd = g.degree();
        if gd > identity_degree {
            return Err(SosError::NegativeMultiplierDegree { index: i, identity: identity_degree, constraint: gd });
        }
        let sd = r.min(even_floor(identity_degree - gd));
        achievable = achievable.max(sd + gd);
        let basis = active_basis(n, sd / 2, &active);
        psd_blocks.push(add_gram_term(builder, &format!("{name}.s{i}"), basis, g, &mut acc)?);
    }
    let mut free_multipliers = Vec::new();
    for (j, h) in set.equalities().iter().enumerate() {
        let hd = h.degree();
        if hd > identity_degree {
            return Err(SosError::NegativeMultiplierDegree { index: sigma_polys.len() + j, identity: identity_degree, constraint: hd });
        }
        let basis = active_basis(n, identity_degree - hd, &active);
        achievable = achievable.max(identity_degree);
        let group = builder.declare_unique(&format!("{name}.l{j}"), Cone::Free(basis.len()))?;
        for (k, m) in basis.iter().enumerate() {
            for (t, c) in h.terms() {
                acc.entry(m * t).or_default().add_term(group.offset + k, c);
            }
        }
        free_multipliers.push(FreeMultiplier { name: group.name, basis, offset: group.offset, equality: h.clone() });
    }
    if achievable < td {
        return Err(SosError::DegreeTooLow { target: td, deg: achievable });
    }
    let identity = active_basis(n, identity_degree, &active);
    let linear_equalities = matching_equalities(target, acc, &identity);
    Ok(ConstraintBlocks { name: name.to_string(), psd_blocks, free_multipliers, linear_equalities, identity_degree })
}

/// Two affine inequalities in the same single active variable with no
/// equalities, i.e. a bounded interval.
fn univariate_interval(set: &BasicSemialgebraicSet, active: &[bool]) -> bool {
    if active.iter().filter(|&&a| a).count() != 1 || !set.equalities().is_empty() || set.inequalities().len() != 2 {
        return false;
    }
    let j = active.iter().position(|&a| a).unwrap();
    let slopes: Vec<f64> = set
        .inequalities()
        .iter()
        .filter_map(|g| g.as_affine().filter(|(a, _)| g.degree() == 1 && a.iter().enumerate().all(|(k, &v)| k == j || v == 0.0)))
        .map(|(a, _)| a[j])
        .collect();
    slopes.len() == 2 && slopes[0] * slopes[1] < 0.0
}

fn is_ball_like(g: &MultiPoly, set: &BasicSemialgebraicSet) -> bool {
    let Some(radius) = set.archimedean_radius() else { return false };
    let n = g.n();
    let one = Monomial::one(n);
    if (g.coefficient(&one) - radius * radius).abs() > 1e-12 * (1.0 + radius * radius) {
        return false;
    }
    g.terms().all(|(m, c)| {
        m == &one || (m.degree() == 2 && m.exponents().iter().any(|&e| e == 2) && c == -1.0)
    })
}

/// Re-expands `cert` with exact polynomial arithmetic and compares it with
/// `target`.
///
/// Each `σ` term must multiply `1`, a defining inequality of `set`, or the
/// Archimedean ball (possibly restricted to a subset of the variables); the
/// `λ` terms must pair one-to-one with the equalities of `set`.
pub fn verify_certificate(
    cert: &PutinarCertificate,
    target: &MultiPoly,
    set: &BasicSemialgebraicSet,
) -> Result<VerificationReport, SosError> {
    let n = target.n();
    if set.n() != n {
        return Err(SosError::Structure(format!("set has {} variables, target {}", set.n(), n)));
    }
    let one = MultiPoly::constant(n, 1.0);
    for (i, s) in cert.sigma.iter().enumerate() {
        let g = &s.multiplier;
        let known = *g == one || set.inequalities().contains(g) || is_ball_like(g, set);
        if !known {
            return Err(SosError::Structure(format!("sigma term {i} multiplies a polynomial that is not part of the set")));
        }
        if s.gram.q.len() != s.gram.basis.len() || s.gram.q.iter().any(|row| row.len() != s.gram.basis.len()) {
            return Err(SosError::Structure(format!("sigma term {i} has a Gram matrix of the wrong shape")));
        }
        if s.gram.basis.iter().any(|e| e.len() != n) {
            return Err(SosError::Structure(format!("sigma term {i} has a basis over the wrong variable count")));
        }
    }
    if cert.lambda.len() != set.equalities().len() {
        return Err(SosError::Structure(format!(
            "{} equality multipliers for {} equalities",
            cert.lambda.len(),
            set.equalities().len()
        )));
    }
    for (l, h) in cert.lambda.iter().zip(set.equalities()) {
        if &l.equality != h {
            return Err(SosError::Structure("equality multiplier paired with the wrong equality".into()));
        }
    }
    let recon = cert.reconstruct(n)?;
    let diff = &recon - target;
    let max_residual = diff.max_abs_coefficient();
    let min_eigenvalue = cert.sigma.iter().map(|s| s.gram.min_eigenvalue()).fold(f64::INFINITY, f64::min);
    let valid = max_residual <= RESIDUAL_TOL && min_eigenvalue >= -EIGEN_TOL;
    Ok(VerificationReport { max_residual, min_eigenvalue, valid })
}
