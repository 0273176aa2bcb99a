//! Tensor-grid polynomial chaos expansions of black-box model outputs.
//!
//! A model is evaluated once per node of a tensor grid of Gaussian rules.
//! Projection onto the orthonormal basis gives coefficients from which mean,
//! variance and covariance follow directly (and Sobol indices, see
//! [`crate::sobol`]).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{to_parameter_nodes, DistributionError, DistributionSpec};
use crate::orthopoly::{gauss_rule, orthonormal_values, recurrence_coefficients, FamilyKind, OrthoError, QuadratureRule};

#[derive(Debug, Error)]
pub enum PceError {
    #[error("quadrature order and dimension must be at least 1 (order {order}, dim {dim})")]
    InvalidGrid { order: usize, dim: usize },
    #[error("index set has dimension {index_dim} but grid has {grid_dim}")]
    DimensionMismatch { index_dim: usize, grid_dim: usize },
    #[error("index set degree {degree} in dimension {dim} exceeds order - 1 = {max}")]
    DegreeTooHigh { dim: usize, degree: usize, max: usize },
    #[error("expected {expected} rows of model outputs, got {got}")]
    RowCount { expected: usize, got: usize },
    #[error("output row {row} has {got} entries, expected {expected}")]
    RowWidth { row: usize, expected: usize, got: usize },
    #[error("non-finite model output at grid node {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    Ortho(#[from] OrthoError),
}

/// Ordered set of multi-indices, starting with the zero index.
///
/// Traversal is graded lexicographic: by total degree, then
/// lexicographically with the first coordinate most significant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiIndexSet {
    pub dim: usize,
    pub indices: Vec<Vec<usize>>,
}

impl MultiIndexSet {
    /// Full tensor box `{0..=max_degree}^dim`.
    pub fn tensor_box(dim: usize, max_degree: usize) -> Self {
        let side = max_degree + 1;
        let count = side.pow(dim as u32);
        let mut indices: Vec<Vec<usize>> = (0..count)
            .map(|mut flat| {
                let mut alpha = vec![0; dim];
                for slot in alpha.iter_mut().rev() {
                    *slot = flat % side;
                    flat /= side;
                }
                alpha
            })
            .collect();
        indices.sort_by(|a, b| {
            let da: usize = a.iter().sum();
            let db: usize = b.iter().sum();
            da.cmp(&db).then_with(|| a.cmp(b))
        });
        MultiIndexSet { dim, indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn position(&self, alpha: &[usize]) -> Option<usize> {
        self.indices.iter().position(|a| a == alpha)
    }

    pub fn max_degree(&self, dim: usize) -> usize {
        self.indices.iter().map(|a| a[dim]).max().unwrap_or(0)
    }

    /// Bitmask of the coordinates where `alpha` is nonzero.
    pub fn support_mask(alpha: &[usize]) -> usize {
        alpha
            .iter()
            .enumerate()
            .filter(|(_, &d)| d > 0)
            .fold(0, |mask, (i, _)| mask | (1 << i))
    }
}

/// Cartesian product of 1-D rules, flattened with the first dimension
/// varying slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorGrid {
    pub rules: Vec<QuadratureRule>,
    pub specs: Vec<DistributionSpec>,
    /// Standard-variable coordinates, one row per node.
    pub standard_nodes: Vec<Vec<f64>>,
    /// Parameter-space coordinates, one row per node.
    pub parameter_nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl TensorGrid {
    pub fn dim(&self) -> usize {
        self.rules.len()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Per-dimension rule index of flat node `j`.
    pub fn node_multi_index(&self, mut j: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for (d, rule) in self.rules.iter().enumerate().rev() {
            out[d] = j % rule.len();
            j /= rule.len();
        }
        out
    }

    /// Weighted sum over the grid, in grid order.
    pub fn expectation(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// `order`-point rule per dimension, nodes transformed per spec.
pub fn build_tensor_grid(specs: &[DistributionSpec], order: usize) -> Result<TensorGrid, PceError> {
    if order == 0 || specs.is_empty() {
        return Err(PceError::InvalidGrid { order, dim: specs.len() });
    }
    let family = recurrence_coefficients(FamilyKind::HermiteProbabilists, order)?;
    let hermite = gauss_rule(&family, order)?;
    let rules = vec![hermite; specs.len()];
    let mapped: Vec<Vec<f64>> = specs
        .iter()
        .zip(&rules)
        .map(|(spec, rule)| to_parameter_nodes(spec, rule))
        .collect::<Result<_, _>>()?;

    let total: usize = rules.iter().map(QuadratureRule::len).product();
    let mut grid = TensorGrid {
        rules,
        specs: specs.to_vec(),
        standard_nodes: Vec::with_capacity(total),
        parameter_nodes: Vec::with_capacity(total),
        weights: Vec::with_capacity(total),
    };
    for j in 0..total {
        let idx = grid.node_multi_index(j);
        let mut w = 1.0;
        let mut std_row = Vec::with_capacity(idx.len());
        let mut par_row = Vec::with_capacity(idx.len());
        for (d, &i) in idx.iter().enumerate() {
            w *= grid.rules[d].weights[i];
            std_row.push(grid.rules[d].nodes[i]);
            par_row.push(mapped[d][i]);
        }
        grid.weights.push(w);
        grid.standard_nodes.push(std_row);
        grid.parameter_nodes.push(par_row);
    }
    Ok(grid)
}

/// Evaluates `model` at every parameter node, possibly in parallel.
///
/// Results come back in grid order; the first failing node (lowest index)
/// is reported together with its error.
pub fn evaluate_ensemble<F, E>(grid: &TensorGrid, model: F) -> Result<Vec<Vec<f64>>, (usize, E)>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, E> + Sync,
    E: Send,
{
    let results: Vec<Result<Vec<f64>, E>> =
        grid.parameter_nodes.par_iter().map(|x| model(x)).collect();
    results
        .into_iter()
        .enumerate()
        .map(|(j, r)| r.map_err(|e| (j, e)))
        .collect()
}

/// Coefficient array of one or more outputs on a multi-index set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PceExpansion {
    pub labels: Vec<String>,
    pub dim: usize,
    /// Quadrature order used for the projection.
    pub order: usize,
    pub families: Vec<FamilyKind>,
    pub indices: Vec<Vec<usize>>,
    /// `coefficients[output][term]`, aligned with `indices`.
    pub coefficients: Vec<Vec<f64>>,
}

/// Projects grid outputs onto the orthonormal basis:
/// `c[i][alpha] = sum_j w_j f_i(x_j) phi_alpha(xi_j)`.
///
/// The basis is evaluated on standard-variable nodes. Sums run in grid
/// order, so the result does not depend on how the ensemble was scheduled.
pub fn project(
    model_outputs: &[Vec<f64>],
    grid: &TensorGrid,
    index_set: &MultiIndexSet,
    labels: &[String],
) -> Result<PceExpansion, PceError> {
    if index_set.dim != grid.dim() {
        return Err(PceError::DimensionMismatch { index_dim: index_set.dim, grid_dim: grid.dim() });
    }
    for (d, rule) in grid.rules.iter().enumerate() {
        let degree = index_set.max_degree(d);
        if degree + 1 > rule.len() {
            return Err(PceError::DegreeTooHigh { dim: d, degree, max: rule.len() - 1 });
        }
    }
    if model_outputs.len() != grid.len() {
        return Err(PceError::RowCount { expected: grid.len(), got: model_outputs.len() });
    }
    let k = labels.len();
    for (row, values) in model_outputs.iter().enumerate() {
        if values.len() != k {
            return Err(PceError::RowWidth { row, expected: k, got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PceError::NonFinite(row));
        }
    }

    // psi[d][i][deg]: orthonormal basis of dimension d at its i-th node.
    let psi: Vec<Vec<Vec<f64>>> = grid
        .rules
        .iter()
        .enumerate()
        .map(|(d, rule)| {
            let deg = index_set.max_degree(d);
            rule.nodes.iter().map(|&x| orthonormal_values(rule.kind, deg, x)).collect()
        })
        .collect();

    let m = index_set.len();
    let mut coefficients = vec![vec![0.0; m]; k];
    let mut basis = vec![0.0; m];
    for (j, values) in model_outputs.iter().enumerate() {
        let node = grid.node_multi_index(j);
        for (slot, alpha) in basis.iter_mut().zip(&index_set.indices) {
            *slot = alpha
                .iter()
                .enumerate()
                .map(|(d, &deg)| psi[d][node[d]][deg])
                .product::<f64>();
        }
        let w = grid.weights[j];
        for (coef_row, &f) in coefficients.iter_mut().zip(values) {
            let wf = w * f;
            for (c, b) in coef_row.iter_mut().zip(&basis) {
                *c += wf * b;
            }
        }
    }

    Ok(PceExpansion {
        labels: labels.to_vec(),
        dim: index_set.dim,
        order: grid.rules.iter().map(QuadratureRule::len).max().unwrap_or(0),
        families: grid.rules.iter().map(|r| r.kind).collect(),
        indices: index_set.indices.clone(),
        coefficients,
    })
}

impl PceExpansion {
    pub fn outputs(&self) -> usize {
        self.coefficients.len()
    }

    pub fn index_set(&self) -> MultiIndexSet {
        MultiIndexSet { dim: self.dim, indices: self.indices.clone() }
    }

    /// E[Y_i] = c_{i,0}.
    pub fn mean(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c[0]).collect()
    }

    /// V[Y_i] = sum over alpha > 0 of c_{i,alpha}^2.
    pub fn variance(&self) -> Vec<f64> {
        self.coefficients
            .iter()
            .map(|c| c[1..].iter().map(|x| x * x).sum())
            .collect()
    }

    /// C = Q Q^T with the zero-index column of Q removed.
    #[allow(clippy::needless_range_loop)]
    pub fn covariance_matrix(&self) -> Vec<Vec<f64>> {
        let k = self.outputs();
        let mut cov = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..=i {
                let v: f64 = self.coefficients[i][1..]
                    .iter()
                    .zip(&self.coefficients[j][1..])
                    .map(|(a, b)| a * b)
                    .sum();
                cov[i][j] = v;
                cov[j][i] = v;
            }
        }
        cov
    }

    /// Evaluates the truncated expansion at a standard-variable point.
    pub fn evaluate(&self, xi: &[f64]) -> Vec<f64> {
        let tables: Vec<Vec<f64>> = (0..self.dim)
            .map(|d| {
                let deg = self.indices.iter().map(|a| a[d]).max().unwrap_or(0);
                orthonormal_values(self.families[d], deg, xi[d])
            })
            .collect();
        let basis: Vec<f64> = self
            .indices
            .iter()
            .map(|alpha| alpha.iter().enumerate().map(|(d, &deg)| tables[d][deg]).product())
            .collect();
        self.coefficients
            .iter()
            .map(|c| c.iter().zip(&basis).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Keeps only the listed outputs.
    pub fn select(&self, outputs: &[usize]) -> PceExpansion {
        PceExpansion {
            labels: outputs.iter().map(|&i| self.labels[i].clone()).collect(),
            coefficients: outputs.iter().map(|&i| self.coefficients[i].clone()).collect(),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn std_normal_grid(dim: usize, order: usize) -> TensorGrid {
        let specs = vec![DistributionSpec::normal(0.0, 1.0).unwrap(); dim];
        build_tensor_grid(&specs, order).unwrap()
    }

    fn labels(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("y{i}")).collect()
    }

    #[test]
    fn grid_sizes() {
        let specs = vec![DistributionSpec::log_normal(1.0, 0.1).unwrap(); 3];
        assert_eq!(build_tensor_grid(&specs, 3).unwrap().len(), 27);
        assert_eq!(build_tensor_grid(&specs, 10).unwrap().len(), 1000);
        let g = build_tensor_grid(&specs, 4).unwrap();
        assert_abs_diff_eq!(g.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn single_node_grid() {
        let spec = DistributionSpec::normal(2.5, 0.3).unwrap();
        let g = build_tensor_grid(&[spec], 1).unwrap();
        assert_eq!(g.parameter_nodes, vec![vec![2.5]]);
        assert_abs_diff_eq!(g.weights[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn invalid_grid_requests() {
        assert!(matches!(build_tensor_grid(&[], 3), Err(PceError::InvalidGrid { .. })));
        let spec = DistributionSpec::normal(0.0, 1.0).unwrap();
        assert!(build_tensor_grid(&[spec], 0).is_err());
    }

    #[test]
    fn index_set_order() {
        let set = MultiIndexSet::tensor_box(2, 2);
        assert_eq!(set.len(), 9);
        assert_eq!(set.indices[0], vec![0, 0]);
        assert_eq!(set.indices[1], vec![0, 1]);
        assert_eq!(set.indices[2], vec![1, 0]);
        assert_eq!(set.indices.last().unwrap(), &vec![2, 2]);
        assert_eq!(MultiIndexSet::support_mask(&[0, 3, 1]), 0b110);
    }

    #[test]
    fn projection_of_simple_functions() {
        let grid = std_normal_grid(1, 3);
        let set = MultiIndexSet::tensor_box(1, 2);

        let ones: Vec<Vec<f64>> = grid.standard_nodes.iter().map(|_| vec![1.0]).collect();
        let c = project(&ones, &grid, &set, &labels(1)).unwrap();
        assert_abs_diff_eq!(c.coefficients[0][0], 1.0, epsilon = 1e-12);
        assert!(c.coefficients[0][1..].iter().all(|x| x.abs() < 1e-12));

        let linear: Vec<Vec<f64>> = grid.standard_nodes.iter().map(|x| vec![x[0]]).collect();
        let c = project(&linear, &grid, &set, &labels(1)).unwrap();
        assert_abs_diff_eq!(c.coefficients[0][1], 1.0, epsilon = 1e-12);
        assert!(c.coefficients[0][0].abs() < 1e-12 && c.coefficients[0][2].abs() < 1e-12);
        assert_abs_diff_eq!(c.mean()[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.variance()[0], 1.0, epsilon = 1e-12);

        let square: Vec<Vec<f64>> = grid.standard_nodes.iter().map(|x| vec![x[0] * x[0]]).collect();
        let c = project(&square, &grid, &set, &labels(1)).unwrap();
        assert_abs_diff_eq!(c.coefficients[0][0], 1.0, epsilon = 1e-12);
        assert!(c.coefficients[0][1].abs() < 1e-12);
        assert_abs_diff_eq!(c.coefficients[0][2], 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(c.mean()[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.variance()[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_model_statistics() {
        let grid = std_normal_grid(2, 3);
        let set = MultiIndexSet::tensor_box(2, 2);
        let outputs: Vec<Vec<f64>> = grid.standard_nodes.iter().map(|_| vec![5.0]).collect();
        let c = project(&outputs, &grid, &set, &labels(1)).unwrap();
        assert_abs_diff_eq!(c.mean()[0], 5.0, epsilon = 1e-12);
        assert!(c.variance()[0] < 1e-20);
        assert!(c.coefficients[0][1..].iter().all(|x| x.abs() <= 1e-10));
    }

    #[test]
    fn covariance_examples() {
        let grid = std_normal_grid(2, 3);
        let set = MultiIndexSet::tensor_box(2, 2);
        let outputs: Vec<Vec<f64>> =
            grid.standard_nodes.iter().map(|x| vec![x[0], -x[0], x[1]]).collect();
        let c = project(&outputs, &grid, &set, &labels(3)).unwrap();
        let cov = c.covariance_matrix();
        assert_abs_diff_eq!(cov[0][1], -1.0, epsilon = 1e-12);
        assert!(cov[0][2].abs() < 1e-12);
        let var = c.variance();
        for i in 0..3 {
            assert_abs_diff_eq!(cov[i][i], var[i], epsilon = 1e-12);
        }
        let single = c.select(&[0]);
        assert_abs_diff_eq!(single.covariance_matrix()[0][0], single.variance()[0], epsilon = 1e-15);
    }

    #[test]
    fn projection_rejects_bad_shapes() {
        let grid = std_normal_grid(2, 3);
        let outputs: Vec<Vec<f64>> = grid.standard_nodes.iter().map(|_| vec![1.0]).collect();
        let too_high = MultiIndexSet::tensor_box(2, 3);
        assert!(matches!(
            project(&outputs, &grid, &too_high, &labels(1)),
            Err(PceError::DegreeTooHigh { .. })
        ));
        let wrong_dim = MultiIndexSet::tensor_box(3, 1);
        assert!(matches!(
            project(&outputs, &grid, &wrong_dim, &labels(1)),
            Err(PceError::DimensionMismatch { .. })
        ));
        let set = MultiIndexSet::tensor_box(2, 2);
        assert!(matches!(
            project(&outputs[1..], &grid, &set, &labels(1)),
            Err(PceError::RowCount { .. })
        ));
        let mut bad = outputs.clone();
        bad[4][0] = f64::NAN;
        assert!(matches!(project(&bad, &grid, &set, &labels(1)), Err(PceError::NonFinite(4))));
    }

    #[test]
    fn json_export_round_trip() {
        let grid = std_normal_grid(2, 2);
        let set = MultiIndexSet::tensor_box(2, 1);
        let outputs: Vec<Vec<f64>> =
            grid.standard_nodes.iter().map(|x| vec![x[0] + 2.0 * x[1]]).collect();
        let c = project(&outputs, &grid, &set, &labels(1)).unwrap();
        let json = c.to_json().unwrap();
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in ["labels", "dim", "order", "indices", "coefficients"] {
            assert!(value.get(key).is_some(), "missing {key}");
        }
        assert_eq!(PceExpansion::from_json(&json).unwrap(), c);
    }

    #[test]
    fn ensemble_reports_first_failure() {
        let grid = std_normal_grid(2, 3);
        let out = evaluate_ensemble(&grid, |x| if x[0] > 0.5 { Err("boom") } else { Ok(vec![x[1]]) });
        let (node, err) = out.unwrap_err();
        assert_eq!(err, "boom");
        assert_eq!(node, 6);
    }
}
