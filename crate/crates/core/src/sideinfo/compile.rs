use crate::conic::{Cone, LinExpr, ProgramBuilder};
use crate::poly::{monomial_basis, MultiPoly};
use crate::semialg::BasicSemialgebraicSet;
use crate::sos::{putinar_blocks, AffPoly};

use super::{
    matrix, CandidateParam, CertifiedBlock, CompiledSideInfo, CompositeTerm, InterpPoint, MonRegion, Sign, SideInfo,
    SideInfoError, SideInfoItem, SignRegion, SymGenerator,
};

/// Coefficients below this fraction of a row's largest entry are rounding noise.
const ROW_NOISE: f64 = 1e-13;
/// Rows without decision variables must have a constant below this.
const CONSTANT_TOL: f64 = 1e-12;
/// Constants of substituted facet constraints are treated as zero below this.
const FACET_TOL: f64 = 1e-12;

fn clean(e: &LinExpr) -> LinExpr {
    let e = e.normalized();
    let big = e.terms().iter().fold(0.0f64, |m, &(_, a)| m.max(a.abs()));
    let mut out = LinExpr::constant(e.constant_part());
    for &(c, a) in e.terms() {
        if a.abs() > ROW_NOISE * big {
            out.add_term(c, a);
        }
    }
    out
}

/// One `coefficient = 0` row per monomial of `q`; variable-free rows must
/// vanish and are dropped.
fn coefficient_rows(q: &AffPoly, what: &str) -> Result<Vec<LinExpr>, SideInfoError> {
    let mut rows = Vec::new();
    for (m, e) in q.terms() {
        let e = clean(e);
        if e.is_constant() {
            if e.constant_part().abs() > CONSTANT_TOL {
                return Err(SideInfoError::Contradictory(format!(
                    "{what}: coefficient of {m:?} is fixed at {} but must vanish",
                    e.constant_part()
                )));
            }
            continue;
        }
        rows.push(e);
    }
    Ok(rows)
}

/// `p(xᵢ) = yᵢ`, one row per point and component.
pub fn compile_interp(c: &CandidateParam, points: &[InterpPoint]) -> Result<Vec<LinExpr>, SideInfoError> {
    let n = c.n();
    let mut seen: Vec<&InterpPoint> = Vec::new();
    let mut rows = Vec::new();
    for p in points {
        if p.x.len() != n || p.y.len() != n {
            return Err(SideInfoError::Dimension { expected: n, found: p.x.len().min(p.y.len()) });
        }
        if let Some(prev) = seen.iter().find(|q| q.x == p.x) {
            if prev.y != p.y {
                return Err(SideInfoError::Contradictory(format!(
                    "interpolation point {:?} is given values {:?} and {:?}",
                    p.x, prev.y, p.y
                )));
            }
            continue;
        }
        seen.push(p);
        for i in 0..n {
            let mut e = c.component(i).evaluate_at(&p.x)?;
            e.add_constant(-p.y[i]);
            let e = clean(&e);
            if e.is_constant() {
                if e.constant_part().abs() > CONSTANT_TOL {
                    return Err(SideInfoError::Contradictory(format!(
                        "fixed component {} cannot take the value {} at {:?}",
                        i + 1,
                        p.y[i],
                        p.x
                    )));
                }
                continue;
            }
            rows.push(e);
        }
    }
    Ok(rows)
}

/// `p(σx) - ρ p(x) ≡ 0` for every generator.
pub fn compile_sym(c: &CandidateParam, generators: &[SymGenerator]) -> Result<Vec<LinExpr>, SideInfoError> {
    let n = c.n();
    SideInfo::Sym { generators: generators.to_vec() }.validate(n)?;
    let comps: Vec<AffPoly> = (0..n).map(|i| c.component(i)).collect();
    let mut rows = Vec::new();
    for (k, g) in generators.iter().enumerate() {
        let sigma = matrix(&g.sigma, n).expect("validated");
        let subs: Vec<MultiPoly> = (0..n)
            .map(|j| MultiPoly::affine(&(0..n).map(|l| sigma[(j, l)]).collect::<Vec<_>>(), 0.0))
            .collect();
        for i in 0..n {
            let mut q = comps[i].compose(&subs)?;
            for (l, pl) in comps.iter().enumerate() {
                let r = g.rho[i][l];
                if r != 0.0 {
                    q = q.add_scaled(-r, pl);
                }
            }
            rows.extend(coefficient_rows(&q, &format!("symmetry generator {k}, component {}", i + 1))?);
        }
    }
    Ok(rows)
}

fn push_block(
    builder: &mut ProgramBuilder,
    name: &str,
    target: AffPoly,
    set: &BasicSemialgebraicSet,
    r: u32,
    out: &mut Vec<CertifiedBlock>,
) -> Result<(), SideInfoError> {
    let blocks = putinar_blocks(builder, name, &target, set, r)?;
    out.push(CertifiedBlock { blocks, target, set: set.clone() });
    Ok(())
}

/// One Putinar block per nonempty region: `pᵢ` on `nonneg`, `-pᵢ` on `nonpos`.
pub fn compile_pos(
    builder: &mut ProgramBuilder,
    name: &str,
    c: &CandidateParam,
    regions: &[SignRegion],
    r: u32,
) -> Result<Vec<CertifiedBlock>, SideInfoError> {
    let mut out = Vec::new();
    for (k, reg) in regions.iter().enumerate() {
        if reg.component >= c.n() {
            return Err(SideInfoError::Index { index: reg.component, n: c.n() });
        }
        let p = c.component(reg.component);
        if let Some(s) = &reg.nonneg {
            push_block(builder, &format!("{name}.{k}.nonneg"), p.clone(), s, r, &mut out)?;
        }
        if let Some(s) = &reg.nonpos {
            push_block(builder, &format!("{name}.{k}.nonpos"), p.scale(-1.0), s, r, &mut out)?;
        }
    }
    Ok(out)
}

/// Putinar blocks for `±∂pᵢ/∂xⱼ`.
pub fn compile_mon(
    builder: &mut ProgramBuilder,
    name: &str,
    c: &CandidateParam,
    regions: &[MonRegion],
    r: u32,
) -> Result<Vec<CertifiedBlock>, SideInfoError> {
    let mut out = Vec::new();
    for (k, reg) in regions.iter().enumerate() {
        if reg.component >= c.n() {
            return Err(SideInfoError::Index { index: reg.component, n: c.n() });
        }
        let d = c.component(reg.component).differentiate(reg.variable)?;
        if let Some(s) = &reg.nonneg {
            push_block(builder, &format!("{name}.{k}.nonneg"), d.clone(), s, r, &mut out)?;
        }
        if let Some(s) = &reg.nonpos {
            push_block(builder, &format!("{name}.{k}.nonpos"), d.scale(-1.0), s, r, &mut out)?;
        }
    }
    Ok(out)
}

/// The boundary piece `B ∩ {h = 0}` of a set for its `k`-th inequality `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct Facet {
    /// The piece, with `x_j` eliminated when `h` is affine.
    pub set: BasicSemialgebraicSet,
    /// `x ↦ subs(x)` maps points of `set` onto the boundary (identity when
    /// nothing is eliminated).
    pub subs: Vec<MultiPoly>,
    pub eliminated: Option<usize>,
}

/// Facet of `b` cut out by its `k`-th inequality, or `None` if it is empty
/// after substitution.
///
/// For affine `h` the variable with the largest coefficient is solved for
/// and substituted into the remaining constraints; constant constraints are
/// dropped when satisfied and mark the facet empty otherwise.
pub fn facet_set(b: &BasicSemialgebraicSet, k: usize) -> Result<Option<Facet>, SideInfoError> {
    let n = b.n();
    let h = b.inequalities().get(k).ok_or(SideInfoError::Index { index: k, n: b.inequalities().len() })?;
    let identity: Vec<MultiPoly> = (0..n).map(|j| MultiPoly::var(n, j)).collect();
    let affine = h.as_affine().filter(|(a, _)| a.iter().any(|&v| v != 0.0));
    let Some((a, c0)) = affine else {
        let mut set = BasicSemialgebraicSet::new(
            n,
            b.inequalities().iter().enumerate().filter(|&(i, _)| i != k).map(|(_, g)| g.clone()).collect(),
            b.equalities().iter().cloned().chain(std::iter::once(h.clone())).collect(),
        )?
        .with_archimedean_radius(b.archimedean_radius());
        if let Some((lo, hi)) = b.bounds() {
            set = set.with_bounds(lo.to_vec(), hi.to_vec());
        }
        return Ok(Some(Facet { set, subs: identity, eliminated: None }));
    };
    let j = (0..n).max_by(|&u, &v| a[u].abs().total_cmp(&a[v].abs()).then(v.cmp(&u))).unwrap();
    // x_j = -(c0 + Σ_{l≠j} a_l x_l) / a_j
    let mut coeffs: Vec<f64> = a.iter().map(|&v| -v / a[j]).collect();
    coeffs[j] = 0.0;
    let mut subs = identity;
    subs[j] = MultiPoly::affine(&coeffs, -c0 / a[j]);

    let mut ineqs = Vec::new();
    for (i, g) in b.inequalities().iter().enumerate() {
        if i == k {
            continue;
        }
        let g = g.compose(&subs)?;
        if g.degree() == 0 {
            if g.coefficient(&crate::Monomial::one(n)) < -FACET_TOL {
                return Ok(None);
            }
            continue;
        }
        ineqs.push(g);
    }
    let mut eqs = Vec::new();
    for e in b.equalities() {
        let e = e.compose(&subs)?;
        if e.degree() == 0 {
            if e.coefficient(&crate::Monomial::one(n)).abs() > FACET_TOL {
                return Ok(None);
            }
            continue;
        }
        eqs.push(e);
    }
    let mut set = BasicSemialgebraicSet::new(n, ineqs, eqs)?.with_archimedean_radius(b.archimedean_radius());
    if let Some((lo, hi)) = b.bounds() {
        let (mut lo, mut hi) = (lo.to_vec(), hi.to_vec());
        lo[j] = 0.0;
        hi[j] = 0.0;
        set = set.with_bounds(lo, hi);
    }
    Ok(Some(Facet { set, subs, eliminated: Some(j) }))
}

/// `⟨p, ∇h⟩ ≥ 0` on every facet `B ∩ {h = 0}` of every set.
pub fn compile_inv(
    builder: &mut ProgramBuilder,
    name: &str,
    c: &CandidateParam,
    sets: &[BasicSemialgebraicSet],
    r: u32,
) -> Result<Vec<CertifiedBlock>, SideInfoError> {
    let n = c.n();
    let comps: Vec<AffPoly> = (0..n).map(|i| c.component(i)).collect();
    let mut out = Vec::new();
    for (s, b) in sets.iter().enumerate() {
        if b.n() != n {
            return Err(SideInfoError::Dimension { expected: n, found: b.n() });
        }
        for (k, h) in b.inequalities().iter().enumerate() {
            let Some(facet) = facet_set(b, k)? else { continue };
            let mut flux = AffPoly::zero(n);
            for (i, p) in comps.iter().enumerate() {
                let dh = h.differentiate(i)?;
                if !dh.is_zero() {
                    flux = flux.add_scaled(1.0, &p.mul_poly(&dh)?);
                }
            }
            let target = flux.compose(&facet.subs)?;
            push_block(builder, &format!("{name}.{s}.f{k}"), target, &facet.set, r, &mut out)?;
        }
    }
    Ok(out)
}

/// A free polynomial of degree `deg` without constant term.
fn potential(builder: &mut ProgramBuilder, name: &str, n: usize, deg: u32) -> Result<AffPoly, SideInfoError> {
    let basis: Vec<_> = monomial_basis(n, deg).into_iter().filter(|m| m.degree() > 0).collect();
    let g = builder.declare(name, Cone::Free(basis.len()))?;
    Ok(AffPoly::from_columns(n, &basis, &g.range().collect::<Vec<_>>()))
}

/// `p = -∇V` with `V` of degree `d + 1` and `V(0) = 0`.
pub fn compile_grad(builder: &mut ProgramBuilder, name: &str, c: &CandidateParam) -> Result<Vec<LinExpr>, SideInfoError> {
    let n = c.n();
    let v = potential(builder, &format!("{name}.V"), n, c.degree() + 1)?;
    let mut rows = Vec::new();
    for i in 0..n {
        let q = c.component(i).add_scaled(1.0, &v.differentiate(i)?);
        rows.extend(coefficient_rows(&q, &format!("gradient structure, component {}", i + 1))?);
    }
    Ok(rows)
}

/// Canonical equations with positions first: for `m = n/2`,
/// `pᵢ = ∂H/∂x_{m+i}` and `p_{m+i} = -∂H/∂xᵢ`, with `H` of degree `d + 1`
/// and `H(0) = 0`.
pub fn compile_ham(builder: &mut ProgramBuilder, name: &str, c: &CandidateParam) -> Result<Vec<LinExpr>, SideInfoError> {
    let n = c.n();
    if n % 2 != 0 {
        return Err(SideInfoError::OddDimension(n));
    }
    let m = n / 2;
    let h = potential(builder, &format!("{name}.H"), n, c.degree() + 1)?;
    let mut rows = Vec::new();
    for i in 0..m {
        let q = c.component(i).add_scaled(-1.0, &h.differentiate(m + i)?);
        rows.extend(coefficient_rows(&q, &format!("Hamiltonian structure, component {}", i + 1))?);
        let q = c.component(m + i).add_scaled(1.0, &h.differentiate(i)?);
        rows.extend(coefficient_rows(&q, &format!("Hamiltonian structure, component {}", m + i + 1))?);
    }
    Ok(rows)
}

/// The affine polynomial `Σ weight · (∂ⱼ) pᵢ + offset`.
pub(crate) fn composite_poly(
    c: &CandidateParam,
    terms: &[CompositeTerm],
    offset: Option<&MultiPoly>,
) -> Result<AffPoly, SideInfoError> {
    let n = c.n();
    let mut q = AffPoly::zero(n);
    for t in terms {
        if t.component >= n {
            return Err(SideInfoError::Index { index: t.component, n });
        }
        let mut p = c.component(t.component);
        if let Some(j) = t.derivative {
            p = p.differentiate(j)?;
        }
        q = q.add_scaled(1.0, &p.mul_poly(&t.weight)?);
    }
    if let Some(o) = offset {
        q = q.add_poly(o);
    }
    Ok(q)
}

#[allow(clippy::too_many_arguments)]
pub fn compile_composite(
    builder: &mut ProgramBuilder,
    name: &str,
    c: &CandidateParam,
    terms: &[CompositeTerm],
    offset: Option<&MultiPoly>,
    region: &BasicSemialgebraicSet,
    sign: Sign,
    r: u32,
) -> Result<Vec<CertifiedBlock>, SideInfoError> {
    let q = composite_poly(c, terms, offset)?.scale(sign.factor());
    let mut out = Vec::new();
    push_block(builder, name, q, region, r, &mut out)?;
    Ok(out)
}

/// Compiles one item; blocks and auxiliary variables are named under `name`.
pub fn compile(
    builder: &mut ProgramBuilder,
    name: &str,
    c: &CandidateParam,
    item: &SideInfoItem,
) -> Result<CompiledSideInfo, SideInfoError> {
    item.info.validate(c.n())?;
    let r = item.degree();
    let mut out = CompiledSideInfo::default();
    match &item.info {
        SideInfo::Interp { points } => out.equalities = compile_interp(c, points)?,
        SideInfo::Sym { generators } => out.equalities = compile_sym(c, generators)?,
        SideInfo::Pos { regions } => out.blocks = compile_pos(builder, name, c, regions, r)?,
        SideInfo::Mon { regions } => out.blocks = compile_mon(builder, name, c, regions, r)?,
        SideInfo::Inv { sets } => out.blocks = compile_inv(builder, name, c, sets, r)?,
        SideInfo::Grad => out.equalities = compile_grad(builder, name, c)?,
        SideInfo::Ham => out.equalities = compile_ham(builder, name, c)?,
        SideInfo::Composite { terms, offset, region, sign } => {
            out.blocks = compile_composite(builder, name, c, terms, offset.as_ref(), region, *sign, r)?
        }
    }
    Ok(out)
}
