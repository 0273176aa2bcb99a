//! Orthonormal polynomial families and Gaussian quadrature for probability measures.
//!
//! Every family is described by its three-term recurrence
//!
//! ```text
//! p_{k+1}(x) = (x - a_k) p_k(x) - b_k p_{k-1}(x)
//! ```
//!
//! for the monic polynomials. Quadrature rules are obtained from the
//! eigenvalues of the symmetric tridiagonal Jacobi matrix (Golub-Welsch)
//! and are always normalized to the probability measure, so that an
//! expectation is a plain weighted sum.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative off-diagonal decay at which a QL sweep deflates.
const QL_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrthoError {
    #[error("unsupported polynomial family '{0}'")]
    UnsupportedFamily(String),
    #[error("a rule or recurrence needs at least one point (got {0})")]
    InvalidSize(usize),
    #[error("tridiagonal eigen-solver did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("invalid quadrature rule: {0}")]
    InvalidRule(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    /// Probabilists' Hermite polynomials, orthogonal under N(0, 1).
    HermiteProbabilists,
    /// Legendre polynomials under the uniform probability measure on [-1, 1].
    Legendre,
}

impl FamilyKind {
    /// Recurrence coefficient a_k.
    pub fn a(self, _k: usize) -> f64 {
        match self {
            FamilyKind::HermiteProbabilists | FamilyKind::Legendre => 0.0,
        }
    }

    /// Recurrence coefficient b_k (b_0 = 0 by convention; the measure has unit mass).
    pub fn b(self, k: usize) -> f64 {
        let k = k as f64;
        match self {
            FamilyKind::HermiteProbabilists => k,
            FamilyKind::Legendre => k * k / (4.0 * k * k - 1.0),
        }
    }

    /// True when the measure is symmetric about zero.
    pub fn is_symmetric(self) -> bool {
        true
    }

    /// Exact moment E[x^k] under the family's probability measure.
    pub fn moment(self, k: u32) -> f64 {
        if k % 2 == 1 {
            return 0.0;
        }
        match self {
            // (k-1)!!
            FamilyKind::HermiteProbabilists => (1..k).step_by(2).map(f64::from).product(),
            FamilyKind::Legendre => 1.0 / f64::from(k + 1),
        }
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FamilyKind::HermiteProbabilists => f.write_str("hermite"),
            FamilyKind::Legendre => f.write_str("legendre"),
        }
    }
}

impl FromStr for FamilyKind {
    type Err = OrthoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hermite" | "hermite-probabilists" | "hermite_probabilists" => {
                Ok(FamilyKind::HermiteProbabilists)
            }
            "legendre" => Ok(FamilyKind::Legendre),
            other => Err(OrthoError::UnsupportedFamily(other.to_string())),
        }
    }
}

/// Recurrence data for the first `n` members of a family.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialFamily {
    pub kind: FamilyKind,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl PolynomialFamily {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

/// Returns `a_k, b_k` for `k = 0..n`.
pub fn recurrence_coefficients(kind: FamilyKind, n: usize) -> Result<PolynomialFamily, OrthoError> {
    if n == 0 {
        return Err(OrthoError::InvalidSize(n));
    }
    Ok(PolynomialFamily {
        kind,
        a: (0..n).map(|k| kind.a(k)).collect(),
        b: (0..n).map(|k| kind.b(k)).collect(),
    })
}

/// Nodes and weights of a 1-D Gaussian rule for a probability measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub kind: FamilyKind,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Checks the rule invariants: positive weights summing to one, strictly increasing nodes.
    pub fn validate(&self) -> Result<(), OrthoError> {
        if self.nodes.is_empty() || self.nodes.len() != self.weights.len() {
            return Err(OrthoError::InvalidRule(format!(
                "{} nodes vs {} weights",
                self.nodes.len(),
                self.weights.len()
            )));
        }
        if let Some(w) = self.weights.iter().find(|w| !(**w > 0.0)) {
            return Err(OrthoError::InvalidRule(format!("non-positive weight {w}")));
        }
        if self.nodes.windows(2).any(|p| !(p[0] < p[1])) {
            return Err(OrthoError::InvalidRule("nodes not strictly increasing".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(OrthoError::InvalidRule(format!("weights sum to {total}")));
        }
        Ok(())
    }

    /// Weighted sum of `f` over the nodes.
    ///
    /// Mirrored nodes `i` and `n - 1 - i` are added as a pair before being
    /// accumulated, so odd integrands cancel exactly on symmetric rules.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let n = self.nodes.len();
        let mut total = 0.0;
        for i in 0..n / 2 {
            let j = n - 1 - i;
            total += self.weights[i] * f(self.nodes[i]) + self.weights[j] * f(self.nodes[j]);
        }
        if n % 2 == 1 {
            let m = n / 2;
            total += self.weights[m] * f(self.nodes[m]);
        }
        total
    }
}

/// Builds the `n`-point Gaussian rule of `family`'s measure.
///
/// Nodes are the eigenvalues of the Jacobi matrix, found by implicit QL
/// with Wilkinson shifts and then polished by Newton steps on the
/// orthonormal polynomial of degree `n`. Weights use the Christoffel form
/// `1 / sum_k phi_k(x)^2`, which equals the squared first eigenvector
/// component but keeps full relative accuracy for tiny tail weights.
pub fn gauss_rule(family: &PolynomialFamily, n: usize) -> Result<QuadratureRule, OrthoError> {
    if n == 0 {
        return Err(OrthoError::InvalidSize(n));
    }
    let kind = family.kind;
    let mut diag: Vec<f64> = (0..n).map(|k| kind.a(k)).collect();
    let mut off: Vec<f64> = (1..n).map(|k| kind.b(k).sqrt()).collect();
    tridiagonal_eigenvalues(&mut diag, &mut off)?;
    diag.sort_by(|x, y| x.total_cmp(y));

    let mut nodes: Vec<f64> = diag.into_iter().map(|x| newton_polish(kind, n, x)).collect();
    let mut weights: Vec<f64> = nodes.iter().map(|&x| christoffel_weight(kind, n, x)).collect();

    if kind.is_symmetric() {
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let x = 0.5 * (nodes[j] - nodes[i]);
            nodes[i] = -x;
            nodes[j] = x;
            let w = 0.5 * (weights[i] + weights[j]);
            weights[i] = w;
            weights[j] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
    }

    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);

    let rule = QuadratureRule { kind, nodes, weights };
    rule.validate()?;
    Ok(rule)
}

/// Value of the orthonormal polynomial of degree `degree` at `x`.
pub fn eval_orthonormal(family: &PolynomialFamily, degree: usize, x: f64) -> f64 {
    orthonormal_values(family.kind, degree, x)[degree]
}

/// Values phi_0(x), ..., phi_degree(x) by the normalized recurrence
/// `sqrt(b_{k+1}) phi_{k+1} = (x - a_k) phi_k - sqrt(b_k) phi_{k-1}`.
pub fn orthonormal_values(kind: FamilyKind, degree: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(degree + 1);
    out.push(1.0);
    let mut prev = 0.0;
    let mut cur = 1.0;
    for k in 0..degree {
        let next = ((x - kind.a(k)) * cur - kind.b(k).sqrt() * prev) / kind.b(k + 1).sqrt();
        prev = cur;
        cur = next;
        out.push(cur);
    }
    out
}

/// phi_n(x) and its derivative.
fn orthonormal_with_derivative(kind: FamilyKind, n: usize, x: f64) -> (f64, f64) {
    let (mut p_prev, mut p) = (0.0, 1.0);
    let (mut d_prev, mut d) = (0.0, 0.0);
    for k in 0..n {
        let sb = kind.b(k).sqrt();
        let sb_next = kind.b(k + 1).sqrt();
        let p_next = ((x - kind.a(k)) * p - sb * p_prev) / sb_next;
        let d_next = (p + (x - kind.a(k)) * d - sb * d_prev) / sb_next;
        p_prev = p;
        p = p_next;
        d_prev = d;
        d = d_next;
    }
    (p, d)
}

fn newton_polish(kind: FamilyKind, n: usize, mut x: f64) -> f64 {
    for _ in 0..3 {
        let (p, d) = orthonormal_with_derivative(kind, n, x);
        if d == 0.0 || !d.is_finite() {
            break;
        }
        let step = p / d;
        if !step.is_finite() {
            break;
        }
        x -= step;
        if step.abs() <= f64::EPSILON * x.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    x
}

fn christoffel_weight(kind: FamilyKind, n: usize, x: f64) -> f64 {
    let sum: f64 = orthonormal_values(kind, n - 1, x).iter().map(|p| p * p).sum();
    1.0 / sum
}

/// Eigenvalues of a symmetric tridiagonal matrix, in place in `diag`.
///
/// `off[i]` couples rows `i` and `i + 1`. Implicit QL with Wilkinson
/// shifts; at most `50 n` iterations in total.
pub fn tridiagonal_eigenvalues(diag: &mut [f64], off: &mut [f64]) -> Result<(), OrthoError> {
    let n = diag.len();
    if n == 0 {
        return Err(OrthoError::InvalidSize(0));
    }
    debug_assert_eq!(off.len() + 1, n);
    if n == 1 {
        return Ok(());
    }
    // e[i] holds the coupling between i and i+1; e[n-1] = 0 sentinel.
    let mut e: Vec<f64> = off.to_vec();
    e.push(0.0);
    let d = diag;
    let scale = d
        .iter()
        .zip(e.iter())
        .map(|(x, y)| x.abs() + y.abs())
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);

    let max_iter = 50 * n;
    let mut iterations = 0;
    for l in 0..n {
        loop {
            let mut m = l;
            while m < n - 1 {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= QL_TOLERANCE * dd || e[m].abs() <= QL_TOLERANCE * 1e-2 * scale {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iterations += 1;
            if iterations > max_iter {
                return Err(OrthoError::NoConvergence { iterations });
            }
            // Wilkinson shift from the leading 2x2 block.
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Worst monomial-moment error of `rule` over degrees `0..=2n-1`.
///
/// Relative error for nonzero moments, absolute for zero moments.
pub fn exactness_error(rule: &QuadratureRule) -> f64 {
    let n = rule.len() as u32;
    (0..2 * n)
        .map(|k| {
            let exact = rule.kind.moment(k);
            let approx = rule.integrate(|x| x.powi(k as i32));
            if exact == 0.0 {
                approx.abs()
            } else {
                ((approx - exact) / exact).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Largest entrywise deviation of the Gram matrix of phi_0..phi_{n-1} from the identity.
pub fn orthonormality_error(rule: &QuadratureRule) -> f64 {
    let n = rule.len();
    let table: Vec<Vec<f64>> = rule
        .nodes
        .iter()
        .map(|&x| orthonormal_values(rule.kind, n - 1, x))
        .collect();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..=i {
            let mut g = 0.0;
            for (w, row) in rule.weights.iter().zip(&table) {
                g += w * row[i] * row[j];
            }
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g - target).abs());
        }
    }
    worst
}
