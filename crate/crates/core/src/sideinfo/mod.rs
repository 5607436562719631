//! Side information about an unknown vector field, compiled into affine
//! equalities and Putinar blocks on a polynomial candidate's coefficients,
//! and measured on concrete fields through grid residual functionals.

mod compile;
mod residual;

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{Cone, ProgramBuilder, ProgramError};
use crate::poly::{monomial_basis, Monomial, MultiPoly, PolyError, PolyVec};
use crate::semialg::{BasicSemialgebraicSet, SetError};
use crate::sos::{AffPoly, ConstraintBlocks, SosError};

pub use compile::{
    compile, compile_composite, compile_grad, compile_ham, compile_interp, compile_inv, compile_mon, compile_pos,
    compile_sym, facet_set, Facet,
};
pub use residual::{recover_potential, residual_functional, ResidualReport};

/// Multiplier degree used when an item does not set its own.
pub const DEFAULT_MULTIPLIER_DEGREE: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SideInfoError {
    #[error("contradictory side information: {0}")]
    Contradictory(String),
    #[error("symmetry generator {generator}: {which} is not an invertible {n}x{n} matrix")]
    SingularMatrix { generator: usize, which: &'static str, n: usize },
    #[error("Hamiltonian structure needs an even dimension, got {0}")]
    OddDimension(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("component or variable index {index} out of range for n = {n}")]
    Index { index: usize, n: usize },
    #[error("empty grid for the residual of '{0}'")]
    EmptyGrid(String),
    #[error(transparent)]
    Sos(#[from] SosError),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Set(#[from] SetError),
    #[error(transparent)]
    Program(#[from] ProgramError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// One group generator acting by `x ↦ σx` on states and `v ↦ ρv` on values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymGenerator {
    pub sigma: Vec<Vec<f64>>,
    pub rho: Vec<Vec<f64>>,
}

/// Sign pattern for one component: `fᵢ ≥ 0` on `nonneg`, `fᵢ ≤ 0` on `nonpos`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignRegion {
    pub component: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonneg: Option<BasicSemialgebraicSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonpos: Option<BasicSemialgebraicSet>,
}

/// Sign pattern for `∂fᵢ/∂xⱼ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonRegion {
    pub component: usize,
    pub variable: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonneg: Option<BasicSemialgebraicSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonpos: Option<BasicSemialgebraicSet>,
}

/// `weight(x) · fᵢ(x)`, or `weight(x) · ∂fᵢ/∂xⱼ(x)` when `derivative = Some(j)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositeTerm {
    pub weight: MultiPoly,
    pub component: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derivative: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Nonneg,
    Nonpos,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Nonneg => 1.0,
            Sign::Nonpos => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SideInfo {
    Interp {
        points: Vec<InterpPoint>,
    },
    Sym {
        generators: Vec<SymGenerator>,
    },
    Pos {
        regions: Vec<SignRegion>,
    },
    Mon {
        regions: Vec<MonRegion>,
    },
    /// Invariance of each set `{x : hⱼ(x) ≥ 0}`.
    Inv {
        sets: Vec<BasicSemialgebraicSet>,
    },
    Grad,
    Ham,
    /// `Σ terms + offset` has the given sign on `region`.
    Composite {
        terms: Vec<CompositeTerm>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        offset: Option<MultiPoly>,
        region: BasicSemialgebraicSet,
        sign: Sign,
    },
}

impl SideInfo {
    pub fn tag(&self) -> &'static str {
        match self {
            SideInfo::Interp { .. } => "interp",
            SideInfo::Sym { .. } => "sym",
            SideInfo::Pos { .. } => "pos",
            SideInfo::Mon { .. } => "mon",
            SideInfo::Inv { .. } => "inv",
            SideInfo::Grad => "grad",
            SideInfo::Ham => "ham",
            SideInfo::Composite { .. } => "composite",
        }
    }

    /// Checks dimensions, indices and the structural requirements of each
    /// family against the ambient dimension `n`.
    pub fn validate(&self, n: usize) -> Result<(), SideInfoError> {
        let dim = |found: usize| if found == n { Ok(()) } else { Err(SideInfoError::Dimension { expected: n, found }) };
        let index = |index: usize| if index < n { Ok(()) } else { Err(SideInfoError::Index { index, n }) };
        let set = |s: &Option<BasicSemialgebraicSet>| s.as_ref().map_or(Ok(()), |s| dim(s.n()));
        match self {
            SideInfo::Interp { points } => {
                for p in points {
                    dim(p.x.len())?;
                    dim(p.y.len())?;
                }
            }
            SideInfo::Sym { generators } => {
                for (k, g) in generators.iter().enumerate() {
                    for (which, m) in [("sigma", &g.sigma), ("rho", &g.rho)] {
                        if !invertible(m, n) {
                            return Err(SideInfoError::SingularMatrix { generator: k, which, n });
                        }
                    }
                }
            }
            SideInfo::Pos { regions } => {
                for r in regions {
                    index(r.component)?;
                    set(&r.nonneg)?;
                    set(&r.nonpos)?;
                }
            }
            SideInfo::Mon { regions } => {
                for r in regions {
                    index(r.component)?;
                    index(r.variable)?;
                    set(&r.nonneg)?;
                    set(&r.nonpos)?;
                }
            }
            SideInfo::Inv { sets } => {
                for s in sets {
                    dim(s.n())?;
                }
            }
            SideInfo::Grad => {}
            SideInfo::Ham => {
                if n % 2 != 0 {
                    return Err(SideInfoError::OddDimension(n));
                }
            }
            SideInfo::Composite { terms, offset, region, .. } => {
                for t in terms {
                    index(t.component)?;
                    if let Some(j) = t.derivative {
                        index(j)?;
                    }
                    dim(t.weight.n())?;
                }
                if let Some(o) = offset {
                    dim(o.n())?;
                }
                dim(region.n())?;
            }
        }
        Ok(())
    }
}

pub(crate) fn matrix(m: &[Vec<f64>], n: usize) -> Option<nalgebra::DMatrix<f64>> {
    if m.len() != n || m.iter().any(|r| r.len() != n) {
        return None;
    }
    Some(nalgebra::DMatrix::from_fn(n, n, |i, j| m[i][j]))
}

fn invertible(m: &[Vec<f64>], n: usize) -> bool {
    matrix(m, n).is_some_and(|a| {
        let scale = a.amax().max(1.0);
        let sv = a.singular_values();
        sv.min() > 1e-12 * scale
    })
}

/// A side-information item with its own Putinar multiplier degree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SideInfoItem {
    #[serde(flatten)]
    pub info: SideInfo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multiplier_degree: Option<u32>,
}

impl From<SideInfo> for SideInfoItem {
    fn from(info: SideInfo) -> Self {
        Self { info, multiplier_degree: None }
    }
}

impl SideInfoItem {
    pub fn with_degree(info: SideInfo, r: u32) -> Self {
        Self { info, multiplier_degree: Some(r) }
    }

    pub fn degree(&self) -> u32 {
        self.multiplier_degree.unwrap_or(DEFAULT_MULTIPLIER_DEGREE)
    }
}

/// How one component of the candidate is parameterized.
#[derive(Clone, Debug, PartialEq)]
pub enum ComponentParam {
    /// Coefficients over the candidate basis start at this column.
    Free { offset: usize },
    /// Pinned to a known polynomial; consumes no decision variables.
    Fixed(MultiPoly),
}

/// A polynomial vector field of degree `≤ d` whose coefficients are decision
/// variables of a [`ProgramBuilder`].
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateParam {
    n: usize,
    degree: u32,
    basis: Vec<Monomial>,
    components: Vec<ComponentParam>,
}

impl CandidateParam {
    /// Declares free groups `p1, …, pn` for every component not listed in
    /// `fixed`.
    pub fn declare(
        builder: &mut ProgramBuilder,
        n: usize,
        degree: u32,
        fixed: &[Option<MultiPoly>],
    ) -> Result<Self, SideInfoError> {
        if !fixed.is_empty() && fixed.len() != n {
            return Err(SideInfoError::Dimension { expected: n, found: fixed.len() });
        }
        let basis = monomial_basis(n, degree);
        let mut components = Vec::with_capacity(n);
        for i in 0..n {
            match fixed.get(i).cloned().flatten() {
                Some(p) => {
                    if p.n() != n {
                        return Err(SideInfoError::Dimension { expected: n, found: p.n() });
                    }
                    components.push(ComponentParam::Fixed(p));
                }
                None => {
                    let g = builder.declare(&format!("p{}", i + 1), Cone::Free(basis.len()))?;
                    components.push(ComponentParam::Free { offset: g.offset });
                }
            }
        }
        Ok(Self { n, degree, basis, components })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn basis(&self) -> &[Monomial] {
        &self.basis
    }

    pub fn components(&self) -> &[ComponentParam] {
        &self.components
    }

    pub fn num_free(&self) -> usize {
        self.components.iter().filter(|c| matches!(c, ComponentParam::Free { .. })).count() * self.basis.len()
    }

    /// Decision columns of component `i`, if it is free.
    pub fn columns(&self, i: usize) -> Option<Range<usize>> {
        match self.components[i] {
            ComponentParam::Free { offset } => Some(offset..offset + self.basis.len()),
            ComponentParam::Fixed(_) => None,
        }
    }

    pub fn component(&self, i: usize) -> AffPoly {
        match &self.components[i] {
            ComponentParam::Free { offset } => {
                let cols: Vec<usize> = (*offset..offset + self.basis.len()).collect();
                AffPoly::from_columns(self.n, &self.basis, &cols)
            }
            ComponentParam::Fixed(p) => AffPoly::from_poly(p),
        }
    }

    /// Concrete field for a primal solution.
    pub fn realize(&self, x: &[f64]) -> PolyVec {
        let comps = (0..self.n).map(|i| self.component(i).realize(x)).collect();
        PolyVec::new(comps).expect("components share the ambient dimension")
    }
}

/// A compiled nonnegativity constraint together with the exact polynomial
/// and set it certifies, so that a solved certificate can be re-verified.
#[derive(Clone, Debug, PartialEq)]
pub struct CertifiedBlock {
    pub blocks: ConstraintBlocks,
    pub target: AffPoly,
    pub set: BasicSemialgebraicSet,
}

/// Affine rows (`expr = 0`) and Putinar blocks for one side-information item.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CompiledSideInfo {
    pub equalities: Vec<crate::conic::LinExpr>,
    pub blocks: Vec<CertifiedBlock>,
}
