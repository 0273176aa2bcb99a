use epichaos::calibrate::{growth_rate_of, nelder_mead, NelderMeadConfig};
use epichaos::distributions::{fit_lognormal_from_moments, truncated_normal_interval, DistributionSpec};
use epichaos::orthopoly::FamilyKind;
use epichaos::pce::{build_tensor_grid, evaluate_ensemble, project, MultiIndexSet, PceExpansion};
use epichaos::sobol::{sobol_indices, sobol_indices_recursive};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

fn expansion_with(dim: usize, degree: usize, coeffs: Vec<Vec<f64>>) -> PceExpansion {
    let set = MultiIndexSet::tensor_box(dim, degree);
    PceExpansion {
        labels: (0..coeffs.len()).map(|i| format!("y{i}")).collect(),
        dim,
        order: degree + 1,
        families: vec![FamilyKind::HermiteProbabilists; dim],
        indices: set.indices,
        coefficients: coeffs,
    }
}

fn coefficient_vectors(len: usize, outputs: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, len), outputs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn recursion_agrees_with_support_sums(coeffs in coefficient_vectors(27, 1)) {
        let exp = expansion_with(3, 2, coeffs);
        let a = sobol_indices(&exp, 0).unwrap();
        let b = sobol_indices_recursive(&exp, 0).unwrap();
        for m in 1..8 {
            prop_assert!((a.indices[m] - b.indices[m]).abs() < 1e-12);
        }
        if !a.degenerate {
            prop_assert!((a.sum() - 1.0).abs() < 1e-12);
            prop_assert!(a.indices.iter().all(|s| *s >= 0.0));
        }
    }

    #[test]
    fn indices_ignore_output_scale(coeffs in coefficient_vectors(16, 1), scale in 1e-3f64..1e3) {
        let exp = expansion_with(2, 3, coeffs.clone());
        let scaled = expansion_with(2, 3, vec![coeffs[0].iter().map(|c| c * scale).collect()]);
        let (a, b) = (sobol_indices(&exp, 0).unwrap(), sobol_indices(&scaled, 0).unwrap());
        for m in 1..4 {
            prop_assert!((a.indices[m] - b.indices[m]).abs() < 1e-12);
        }
    }

    #[test]
    fn covariance_is_positive_semidefinite(coeffs in coefficient_vectors(9, 4)) {
        let exp = expansion_with(2, 2, coeffs);
        let cov = exp.covariance_matrix();
        let m = DMatrix::from_fn(4, 4, |i, j| cov[i][j]);
        let trace: f64 = (0..4).map(|i| cov[i][i]).sum();
        let eig = SymmetricEigen::new(m);
        prop_assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-12 * trace.max(1.0)));
        for (i, row) in cov.iter().enumerate() {
            prop_assert!((row[i] - exp.variance()[i]).abs() < 1e-12 * trace.max(1.0));
        }
    }

    #[test]
    fn lognormal_moments_round_trip(mean in 0.01f64..100.0, cv in 0.01f64..2.0) {
        let var = (cv * mean).powi(2);
        let spec = fit_lognormal_from_moments(mean, var).unwrap();
        let (m, s) = spec.underlying_normal();
        let back_mean = (m + 0.5 * s * s).exp();
        let back_var = (s * s).exp_m1() * (2.0 * m + s * s).exp();
        prop_assert!((back_mean / mean - 1.0).abs() < 1e-12);
        prop_assert!((back_var / var - 1.0).abs() < 1e-10);
    }

    #[test]
    fn intervals_nest_by_coverage(mean in -5.0f64..20.0, sd in 0.1f64..5.0, c in 0.1f64..0.95) {
        let spec = DistributionSpec::truncated_normal(mean, sd * sd, None, None).unwrap();
        let (lo1, hi1) = truncated_normal_interval(&spec, c).unwrap();
        let (lo2, hi2) = truncated_normal_interval(&spec, c + 0.04).unwrap();
        prop_assert!(lo2 <= lo1 && hi1 <= hi2);
        prop_assert!(lo2 >= 0.0);
    }

    #[test]
    fn polynomials_below_the_order_are_reproduced(
        a in prop::collection::vec(-2.0f64..2.0, 9),
        x in -2.0f64..2.0,
        y in -2.0f64..2.0,
    ) {
        // f(x, y) = sum a_ij x^i y^j with i, j <= 2 is exact on the q = 3 grid.
        let f = |u: &[f64]| -> f64 {
            let mut total = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    total += a[3 * i + j] * u[0].powi(i as i32) * u[1].powi(j as i32);
                }
            }
            total
        };
        let specs = [DistributionSpec::normal(0.0, 1.0).unwrap(), DistributionSpec::normal(0.0, 1.0).unwrap()];
        let grid = build_tensor_grid(&specs, 3).unwrap();
        let out = evaluate_ensemble(&grid, |u| Ok::<_, ()>(vec![f(u)])).unwrap();
        let exp = project(&out, &grid, &MultiIndexSet::tensor_box(2, 2), &["f".to_string()]).unwrap();
        let got = exp.evaluate(&[x, y])[0];
        prop_assert!((got - f(&[x, y])).abs() < 1e-10 * (1.0 + f(&[x, y]).abs()));
    }

    #[test]
    fn growth_rate_is_scale_invariant(r in -0.2f64..0.5, x0 in 1.0f64..1e6, k in 1e-3f64..1e3) {
        let x: Vec<f64> = (0..16).map(|t| x0 * (r * t as f64).exp()).collect();
        let scaled: Vec<f64> = x.iter().map(|v| v * k).collect();
        let g = growth_rate_of(&x, 16).unwrap();
        prop_assert!((g - growth_rate_of(&scaled, 16).unwrap()).abs() < 1e-12);
        prop_assert!((g - r.exp_m1()).abs() < 1e-12);
    }

    #[test]
    fn optimizer_never_worse_than_start(x0 in -3.0f64..3.0, y0 in -3.0f64..3.0) {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 0.5).powi(4) + (x[0] * x[1]).sin();
        let r = nelder_mead(f, &[x0, y0], &NelderMeadConfig::default()).unwrap();
        prop_assert!(r.objective <= f(&[x0, y0]));
        prop_assert!(r.objective.is_finite());
    }
}
