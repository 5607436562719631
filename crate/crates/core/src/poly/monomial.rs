use std::cmp::Ordering;
use std::fmt;
use std::ops::Mul;

/// Exponent vector of a monomial `x_1^{e_1} ... x_n^{e_n}`.
///
/// Ordering is graded lexicographic: lower total degree first, and within a
/// degree `x_1` outranks `x_2`, so `monomial_basis(2, 2)` reads
/// `1, x1, x2, x1^2, x1*x2, x2^2`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Monomial(Vec<u32>);

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Self(exponents)
    }

    pub fn one(n: usize) -> Self {
        Self(vec![0; n])
    }

    pub fn unit(n: usize, j: usize) -> Self {
        let mut e = vec![0; n];
        e[j] = 1;
        Self(e)
    }

    pub fn n(&self) -> usize {
        self.0.len()
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .filter(|(&e, _)| e > 0)
            .map(|(&e, &xi)| xi.powi(e as i32))
            .product()
    }

    /// `∂/∂x_j` as `(multiplier, monomial)`, or `None` when it vanishes.
    pub fn derivative(&self, j: usize) -> Option<(u32, Monomial)> {
        let e = self.0[j];
        if e == 0 {
            return None;
        }
        let mut d = self.0.clone();
        d[j] -= 1;
        Some((e, Monomial(d)))
    }

    /// True if every variable with a positive exponent is flagged in `active`.
    pub fn uses_only(&self, active: &[bool]) -> bool {
        self.0.iter().zip(active).all(|(&e, &a)| e == 0 || a)
    }
}

impl Mul for &Monomial {
    type Output = Monomial;
    fn mul(self, rhs: &Monomial) -> Monomial {
        debug_assert_eq!(self.0.len(), rhs.0.len());
        Monomial(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.degree() == 0 {
            return write!(f, "1");
        }
        let mut first = true;
        for (j, &e) in self.0.iter().enumerate() {
            if e == 0 {
                continue;
            }
            if !first {
                write!(f, "*")?;
            }
            first = false;
            if e == 1 {
                write!(f, "x{}", j + 1)?;
            } else {
                write!(f, "x{}^{}", j + 1, e)?;
            }
        }
        Ok(())
    }
}

pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// All monomials in `n` variables of degree at most `d`, in graded-lex order.
pub fn monomial_basis(n: usize, d: u32) -> Vec<Monomial> {
    let mut out = Vec::with_capacity(binomial((n as u64) + d as u64, d as u64) as usize);
    let mut cur = vec![0u32; n];
    for deg in 0..=d {
        fill(&mut cur, 0, deg, &mut out);
    }
    out
}

// Emits degree-`remaining` monomials with x_pos taking the largest exponent first.
fn fill(cur: &mut [u32], pos: usize, remaining: u32, out: &mut Vec<Monomial>) {
    if pos + 1 == cur.len() {
        cur[pos] = remaining;
        out.push(Monomial(cur.to_vec()));
        cur[pos] = 0;
        return;
    }
    if cur.is_empty() {
        return;
    }
    for e in (0..=remaining).rev() {
        cur[pos] = e;
        fill(cur, pos + 1, remaining - e, out);
    }
    cur[pos] = 0;
}
