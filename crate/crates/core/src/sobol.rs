//! Sobol indices from polynomial chaos coefficients.
//!
//! Each squared coefficient `c_alpha^2` with `alpha != 0` belongs to exactly
//! one subset of parameters: the support of `alpha`. Summing squares by
//! support gives the partial variances `V[f_u]` directly. Subsets are
//! bitmasks over at most [`MAX_PARAMETERS`] parameters.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pce::{MultiIndexSet, PceExpansion};

pub const MAX_PARAMETERS: usize = 16;

/// Relative variance floor below which a time point is reported as degenerate.
pub const DEGENERATE_RELATIVE_VARIANCE: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SobolError {
    #[error("output index {index} out of range ({outputs} outputs)")]
    OutputOutOfRange { index: usize, outputs: usize },
    #[error("{0} parameters exceed the supported maximum of {MAX_PARAMETERS}")]
    TooManyParameters(usize),
    #[error("expansion {0} uses a different index set than the first one")]
    MismatchedIndexSets(usize),
    #[error("parameter {index} out of range ({dim} parameters)")]
    ParameterOutOfRange { index: usize, dim: usize },
}

/// Sobol indices for every non-empty parameter subset of one output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolIndices {
    pub dim: usize,
    pub total_variance: f64,
    /// `partial_variances[mask]` is `V[f_u]` for the subset `u` encoded by `mask`.
    pub partial_variances: Vec<f64>,
    /// `indices[mask]` is `S_u`; entry 0 (the empty set) is always 0.
    pub indices: Vec<f64>,
    /// Set when the output has (numerically) no variance; all indices are then 0.
    pub degenerate: bool,
}

impl SobolIndices {
    fn from_partials(dim: usize, partial_variances: Vec<f64>, degenerate: bool) -> Self {
        let total_variance: f64 = partial_variances.iter().sum();
        let indices = if degenerate || total_variance <= 0.0 {
            vec![0.0; partial_variances.len()]
        } else {
            partial_variances.iter().map(|v| v / total_variance).collect()
        };
        SobolIndices {
            dim,
            total_variance,
            partial_variances,
            indices,
            degenerate: degenerate || total_variance <= 0.0,
        }
    }

    pub fn get(&self, mask: usize) -> f64 {
        self.indices[mask]
    }

    /// Non-empty subsets ordered by size, then lexicographically by members.
    pub fn subsets(&self) -> Vec<usize> {
        ordered_subsets(self.dim)
    }

    pub fn sum(&self) -> f64 {
        self.indices.iter().sum()
    }

    /// First-order index `S_{i}` and total index (sum over all `u` containing `i`).
    pub fn first_order_and_total(&self, i: usize) -> Result<(f64, f64), SobolError> {
        if i >= self.dim {
            return Err(SobolError::ParameterOutOfRange { index: i, dim: self.dim });
        }
        let bit = 1 << i;
        let total = self
            .indices
            .iter()
            .enumerate()
            .filter(|(mask, _)| mask & bit != 0)
            .map(|(_, s)| s)
            .sum();
        Ok((self.indices[bit], total))
    }

    /// Parameter with the largest first-order index, if not degenerate.
    pub fn dominant_parameter(&self) -> Option<usize> {
        if self.degenerate {
            return None;
        }
        (0..self.dim).max_by(|&a, &b| self.indices[1 << a].total_cmp(&self.indices[1 << b]))
    }
}

/// Non-empty subsets of `dim` parameters, ordered by size then members.
pub fn ordered_subsets(dim: usize) -> Vec<usize> {
    let mut masks: Vec<usize> = (1..(1usize << dim)).collect();
    masks.sort_by_key(|&m| (m.count_ones(), members(m)));
    masks
}

fn members(mask: usize) -> Vec<usize> {
    (0..usize::BITS as usize).filter(|i| mask & (1 << i) != 0).collect()
}

/// Concatenated parameter names of a subset, e.g. `c1c3`.
pub fn subset_label(mask: usize, names: &[String]) -> String {
    members(mask).into_iter().map(|i| names[i].as_str()).collect()
}

fn check(expansion: &PceExpansion, output: usize) -> Result<(), SobolError> {
    if output >= expansion.outputs() {
        return Err(SobolError::OutputOutOfRange { index: output, outputs: expansion.outputs() });
    }
    if expansion.dim > MAX_PARAMETERS {
        return Err(SobolError::TooManyParameters(expansion.dim));
    }
    Ok(())
}

fn support_partials(expansion: &PceExpansion, output: usize) -> Vec<f64> {
    let mut partials = vec![0.0; 1 << expansion.dim];
    for (alpha, c) in expansion.indices.iter().zip(&expansion.coefficients[output]) {
        let mask = MultiIndexSet::support_mask(alpha);
        if mask != 0 {
            partials[mask] += c * c;
        }
    }
    partials
}

fn is_negligible(variance: f64, reference: f64) -> bool {
    variance <= 0.0 || variance <= DEGENERATE_RELATIVE_VARIANCE * DEGENERATE_RELATIVE_VARIANCE * reference
}

/// Sobol indices of one output, summing squared coefficients by support.
///
/// An output whose variance is zero, or negligible next to its squared
/// mean, gives a degenerate result with all indices 0.
pub fn sobol_indices(expansion: &PceExpansion, output: usize) -> Result<SobolIndices, SobolError> {
    check(expansion, output)?;
    let partials = support_partials(expansion, output);
    let variance: f64 = partials.iter().sum();
    let mean = expansion.coefficients[output][0];
    let degenerate = is_negligible(variance, mean * mean);
    Ok(SobolIndices::from_partials(expansion.dim, partials, degenerate))
}

/// Sobol indices by the marginalization recursion
/// `V[f_u] = V[E[f | X_u]] - sum_{v strict subset of u} V[f_v]`, evaluated
/// bottom-up. Agrees with [`sobol_indices`] up to rounding; kept as an
/// independent route for cross-checks.
pub fn sobol_indices_recursive(
    expansion: &PceExpansion,
    output: usize,
) -> Result<SobolIndices, SobolError> {
    check(expansion, output)?;
    let n = expansion.dim;
    let coeffs = &expansion.coefficients[output];
    // V[E[f | X_u]]: coefficients whose support lies inside u.
    let closed: Vec<f64> = (0..(1usize << n))
        .map(|u| {
            expansion
                .indices
                .iter()
                .zip(coeffs)
                .filter(|(alpha, _)| {
                    let s = MultiIndexSet::support_mask(alpha);
                    s != 0 && s & !u == 0
                })
                .map(|(_, c)| c * c)
                .sum()
        })
        .collect();
    let mut partials = vec![0.0; 1 << n];
    let mut order: Vec<usize> = (1..(1usize << n)).collect();
    order.sort_by_key(|m| m.count_ones());
    for u in order {
        let mut v = closed[u];
        // Strict non-empty subsets of u.
        let mut sub = (u - 1) & u;
        while sub != 0 {
            v -= partials[sub];
            sub = (sub - 1) & u;
        }
        partials[u] = v;
    }
    let variance: f64 = coeffs[1..].iter().map(|c| c * c).sum();
    let mean = coeffs[0];
    let degenerate = is_negligible(variance, mean * mean);
    Ok(SobolIndices::from_partials(n, partials, degenerate))
}

/// Per-time-point indices for a sequence of expansions sharing one index set.
///
/// Points whose variance falls below `1e-14` times the largest variance in
/// the series are flagged degenerate.
pub fn sobol_time_series(
    expansions: &[PceExpansion],
    output: usize,
) -> Result<Vec<SobolIndices>, SobolError> {
    if let Some(first) = expansions.first() {
        if let Some(bad) = expansions.iter().position(|e| e.indices != first.indices) {
            return Err(SobolError::MismatchedIndexSets(bad));
        }
    }
    let partials: Vec<Vec<f64>> = expansions
        .iter()
        .map(|e| check(e, output).map(|_| support_partials(e, output)))
        .collect::<Result<_, _>>()?;
    Ok(series_from_partials(expansions.first().map_or(0, |e| e.dim), partials))
}

/// Same as [`sobol_time_series`] for the outputs of a single expansion,
/// treating each listed output as one time point.
pub fn sobol_over_outputs(
    expansion: &PceExpansion,
    outputs: &[usize],
) -> Result<Vec<SobolIndices>, SobolError> {
    let partials: Vec<Vec<f64>> = outputs
        .iter()
        .map(|&o| check(expansion, o).map(|_| support_partials(expansion, o)))
        .collect::<Result<_, _>>()?;
    Ok(series_from_partials(expansion.dim, partials))
}

fn series_from_partials(dim: usize, partials: Vec<Vec<f64>>) -> Vec<SobolIndices> {
    let variances: Vec<f64> = partials.iter().map(|p| p.iter().sum()).collect();
    let peak = variances.iter().cloned().fold(0.0, f64::max);
    partials
        .into_iter()
        .zip(variances)
        .map(|(p, v)| {
            let degenerate = v <= 0.0 || v < DEGENERATE_RELATIVE_VARIANCE * peak;
            SobolIndices::from_partials(dim, p, degenerate)
        })
        .collect()
}

/// Writes an index time series as CSV: `t`, `degenerate`, then one column per subset.
pub fn write_series_csv<W: Write>(
    mut out: W,
    times: &[f64],
    series: &[SobolIndices],
    names: &[String],
) -> io::Result<()> {
    let subsets = ordered_subsets(names.len());
    let mut header = String::from("t,degenerate");
    for &m in &subsets {
        header.push(',');
        header.push_str(&subset_label(m, names));
    }
    writeln!(out, "{header}")?;
    for (t, s) in times.iter().zip(series) {
        write!(out, "{t},{}", u8::from(s.degenerate))?;
        for &m in &subsets {
            write!(out, ",{}", s.indices[m])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orthopoly::FamilyKind;
    use approx::assert_abs_diff_eq;

    fn expansion(dim: usize, terms: &[(Vec<usize>, f64)]) -> PceExpansion {
        let set = MultiIndexSet::tensor_box(dim, 2);
        let mut coeffs = vec![0.0; set.len()];
        for (alpha, c) in terms {
            coeffs[set.position(alpha).unwrap()] = *c;
        }
        PceExpansion {
            labels: vec!["y".into()],
            dim,
            order: 3,
            families: vec![FamilyKind::HermiteProbabilists; dim],
            indices: set.indices,
            coefficients: vec![coeffs],
        }
    }

    #[test]
    fn additive_model() {
        // Y = a xi_1 + b xi_2
        let (a, b) = (2.0, 1.0);
        let e = expansion(2, &[(vec![1, 0], a), (vec![0, 1], b)]);
        let s = sobol_indices(&e, 0).unwrap();
        assert_abs_diff_eq!(s.get(0b01), 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(s.get(0b10), 0.2, epsilon = 1e-15);
        assert_eq!(s.get(0b11), 0.0);
        let (first, total) = s.first_order_and_total(0).unwrap();
        assert_eq!(first, total);
    }

    #[test]
    fn product_model() {
        let e = expansion(2, &[(vec![1, 1], 3.0)]);
        let s = sobol_indices(&e, 0).unwrap();
        assert_eq!(s.get(0b01), 0.0);
        assert_eq!(s.get(0b10), 0.0);
        assert_abs_diff_eq!(s.get(0b11), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.first_order_and_total(0).unwrap().1, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn single_variable_dependence() {
        let e = expansion(3, &[(vec![0, 1, 0], 1.0), (vec![0, 2, 0], 0.5)]);
        let s = sobol_indices(&e, 0).unwrap();
        assert_abs_diff_eq!(s.get(0b010), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.sum(), 1.0, epsilon = 1e-15);
        assert_eq!(s.dominant_parameter(), Some(1));

        let one = expansion(1, &[(vec![2], 0.7)]);
        let s = sobol_indices(&one, 0).unwrap();
        let (f, t) = s.first_order_and_total(0).unwrap();
        assert_abs_diff_eq!(f, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_variance_is_degenerate() {
        let e = expansion(2, &[(vec![0, 0], 4.0)]);
        let s = sobol_indices(&e, 0).unwrap();
        assert!(s.degenerate);
        assert!(s.indices.iter().all(|&x| x == 0.0));
        assert_eq!(s.dominant_parameter(), None);
    }

    #[test]
    fn errors() {
        let e = expansion(2, &[(vec![1, 0], 1.0)]);
        assert!(matches!(sobol_indices(&e, 1), Err(SobolError::OutputOutOfRange { .. })));
        let s = sobol_indices(&e, 0).unwrap();
        assert!(s.first_order_and_total(2).is_err());
        let other = expansion(1, &[(vec![1], 1.0)]);
        assert!(matches!(
            sobol_time_series(&[e, other], 0),
            Err(SobolError::MismatchedIndexSets(1))
        ));
    }

    #[test]
    fn time_series_flags_initial_condition() {
        let flat = expansion(2, &[(vec![0, 0], 10.0), (vec![1, 0], 1e-12)]);
        let later = expansion(2, &[(vec![0, 0], 10.0), (vec![1, 0], 1.0), (vec![0, 1], 2.0)]);
        let series = sobol_time_series(&[flat, later], 0).unwrap();
        assert!(series[0].degenerate);
        assert!(!series[1].degenerate);
        assert_abs_diff_eq!(series[1].sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn labels_and_order() {
        let names: Vec<String> = ["c1", "c2", "c3"].iter().map(|s| s.to_string()).collect();
        let labels: Vec<String> =
            ordered_subsets(3).into_iter().map(|m| subset_label(m, &names)).collect();
        assert_eq!(labels, ["c1", "c2", "c3", "c1c2", "c1c3", "c2c3", "c1c2c3"]);
    }

    #[test]
    fn csv_export() {
        let e = expansion(2, &[(vec![1, 0], 1.0), (vec![1, 1], 1.0)]);
        let s = sobol_indices(&e, 0).unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        let mut buf = Vec::new();
        write_series_csv(&mut buf, &[0.0], &[s], &names).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "t,degenerate,a,b,ab\n0,0,0.5,0,0.5\n");
    }
}
