//! Baseline oracles: brute-force TF-IDF, direct matrix-inverse solves for
//! OLS and kernel ridge, and KKT / primal-reference checks for the SMO SVR.

use fetilda::baselines::{
    fit_regressor, rbf_kernel, select_regressor, FittedRegressor, KernelRidge, LinearRegressor,
    Log1pModel, RegressorKind, RegressorSpec, Svr, SvrParams, TfidfModel,
};
use numcore::DetRng;

fn terms(words: &[&str]) -> Vec<String> {
    words.iter().map(|s| s.to_string()).collect()
}

// ── TF-IDF ──────────────────────────────────────────────────────────────────

#[test]
fn tfidf_matches_brute_force_on_five_documents() {
    let docs = vec![
        terms(&["bank", "risk", "bank"]),
        terms(&["risk", "loss"]),
        terms(&["bank", "loan", "loan", "risk"]),
        terms(&["profit"]),
        terms(&["bank", "profit", "risk"]),
    ];
    let model = TfidfModel::fit(&docs).unwrap();

    // Brute force: count df per term, idf = ln(5/(1+df)) + 1, tf·idf, L2.
    let vocab = ["bank", "loan", "loss", "profit", "risk"];
    let df = [3.0, 1.0, 1.0, 2.0, 4.0];
    for (t, (term, d)) in vocab.iter().zip(df).enumerate() {
        let idx = model.term_index(term).unwrap();
        assert_eq!(model.df[idx] as f64, d, "{term}");
        let want_idf = (5.0f64 / (1.0 + d)).ln() + 1.0;
        assert_eq!(model.idf[idx], want_idf, "{term} (col {t})");
    }
    for doc in &docs {
        let got = model.features(doc);
        let mut raw = vec![0.0f64; vocab.len()];
        for (i, term) in vocab.iter().enumerate() {
            let count = doc.iter().filter(|w| w == term).count() as f64;
            raw[model.term_index(term).unwrap()] +=
                count * ((5.0f64 / (1.0 + df[i])).ln() + 1.0);
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in raw.iter_mut() {
            *v /= norm;
        }
        assert_eq!(got, raw);
        let n: f64 = got.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
    }
}

#[test]
fn term_in_every_document_has_lowest_idf() {
    let docs = vec![
        terms(&["the", "bank"]),
        terms(&["the", "risk"]),
        terms(&["the", "loan"]),
    ];
    let model = TfidfModel::fit(&docs).unwrap();
    let the = model.term_index("the").unwrap();
    assert!(model
        .idf
        .iter()
        .enumerate()
        .all(|(i, &v)| i == the || v > model.idf[the]));
    assert!(model.idf[the] > 0.0);
}

#[test]
fn identical_documents_get_identical_rows() {
    let docs = vec![terms(&["a", "b"]), terms(&["b", "c"])];
    let model = TfidfModel::fit(&docs).unwrap();
    let doc = terms(&["a", "b", "b"]);
    assert_eq!(model.features(&doc), model.features(&doc.clone()));
}

#[test]
fn tfidf_is_fitted_on_train_only() {
    let train = vec![terms(&["a", "b"]), terms(&["b", "c"])];
    let model = TfidfModel::fit(&train).unwrap();
    let idf_before = model.idf.clone();
    // Featurizing unseen documents must not change the fitted idf.
    let _ = model.features(&terms(&["z", "q", "a"]));
    let _ = model.features_with_hist(&terms(&["c", "c", "c"]), 0.5);
    assert_eq!(model.idf, idf_before);
}

#[test]
fn tfidf_appends_historic_column_unnormalized() {
    let train = vec![terms(&["a", "b"]), terms(&["b"])];
    let model = TfidfModel::fit(&train).unwrap();
    let row = model.features_with_hist(&terms(&["a"]), -4.25);
    assert_eq!(row.len(), model.num_terms() + 1);
    assert_eq!(*row.last().unwrap(), -4.25);
}

// ── LOG1P ───────────────────────────────────────────────────────────────────

#[test]
fn log1p_feature_values() {
    let train = vec![terms(&["a", "b"]), terms(&["a", "b", "c"])];
    let model = Log1pModel::fit(&train, 2).unwrap();
    assert_eq!(model.num_terms(), 2); // "c" fails min_df = 2

    // TC = 0 → 0; TC = e − 1 → 1 (via repeated occurrences is impossible at
    // a non-integer count, so check ln(1+2) on an integer count instead).
    let row = model.features(&terms(&["a", "a"]), 1.0).unwrap();
    let a_idx = 0; // terms sorted: a, b
    assert!((row[a_idx] - 3.0f64.ln()).abs() < 1e-15);
    let none = model.features(&terms(&["zzz"]), 1.0).unwrap();
    assert_eq!(none[0], 0.0);
    assert_eq!(none[1], 0.0);
    // Historic volatility column is ln(v).
    let row = model.features(&terms(&["a"]), std::f64::consts::E).unwrap();
    assert!((row.last().unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn log1p_matches_direct_evaluation_on_toy_corpus() {
    let train = vec![
        terms(&["x", "y", "x"]),
        terms(&["x", "z"]),
        terms(&["y", "z", "z"]),
    ];
    let model = Log1pModel::fit(&train, 2).unwrap();
    let doc = terms(&["x", "x", "x", "y", "zzz"]);
    let row = model.features(&doc, 0.2).unwrap();
    // Vocabulary (df ≥ 2, sorted): x, y, z.
    let want = [4.0f64.ln(), 2.0f64.ln(), 1.0f64.ln(), 0.2f64.ln()];
    assert_eq!(row.len(), 4);
    for (g, w) in row.iter().zip(want) {
        assert!((g - w).abs() < 1e-15);
    }
}

#[test]
fn log1p_is_monotone_in_term_counts() {
    let train = vec![terms(&["a", "b"]), terms(&["a", "b"])];
    let model = Log1pModel::fit(&train, 2).unwrap();
    let few = model.features(&terms(&["a"]), 1.0).unwrap();
    let more = model.features(&terms(&["a", "a", "b"]), 1.0).unwrap();
    for (f, m) in few.iter().zip(&more).take(model.num_terms()) {
        assert!(m >= f);
    }
}

#[test]
fn log1p_rejects_non_positive_historic_volatility() {
    let train = vec![terms(&["a"]), terms(&["a"])];
    let model = Log1pModel::fit(&train, 2).unwrap();
    assert!(model.features(&terms(&["a"]), 0.0).is_err());
    assert!(model.features(&terms(&["a"]), -0.3).is_err());
}

// ── Linear regression ───────────────────────────────────────────────────────

#[test]
fn ols_recovers_exact_line() {
    let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
    let y: Vec<f64> = (0..10).map(|i| 2.0 * i as f64 + 1.0).collect();
    let model = LinearRegressor::fit(&x, &y).unwrap();
    assert!((model.coefs[0] - 1.0).abs() < 1e-10);
    assert!((model.coefs[1] - 2.0).abs() < 1e-10);
    assert!(!model.stabilized);
}

#[test]
fn ols_on_constant_targets_gives_zero_slope() {
    let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
    let y = vec![3.5; 6];
    let model = LinearRegressor::fit(&x, &y).unwrap();
    assert!((model.coefs[0] - 3.5).abs() < 1e-8);
    assert!(model.coefs[1].abs() < 1e-8);
}

/// Independent oracle: Gauss-Jordan inverse of the ridge-stabilized normal
/// equations.
fn direct_ols(x: &[Vec<f64>], y: &[f64], ridge: f64) -> Vec<f64> {
    let d = x[0].len() + 1;
    let mut xtx = vec![vec![0.0; d]; d];
    let mut xty = vec![0.0; d];
    for (xi, &yi) in x.iter().zip(y) {
        let mut row = vec![1.0];
        row.extend_from_slice(xi);
        for i in 0..d {
            xty[i] += row[i] * yi;
            for j in 0..d {
                xtx[i][j] += row[i] * row[j];
            }
        }
    }
    for i in 0..d {
        xtx[i][i] += ridge;
    }
    let inv = invert(&xtx);
    (0..d).map(|i| (0..d).map(|j| inv[i][j] * xty[j]).sum()).collect()
}

/// Gauss-Jordan inverse with partial pivoting (test-only oracle).
fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for row in 0..n {
            if row != col {
                let factor = m[row][col];
                for k in 0..2 * n {
                    m[row][k] -= factor * m[col][k];
                }
            }
        }
    }
    m.into_iter().map(|row| row[n..].to_vec()).collect()
}

#[test]
fn ols_matches_direct_solve_on_random_systems() {
    let mut rng = DetRng::new(40, 0);
    for _ in 0..10 {
        let n = 25;
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.uniform_in(-2.0, 2.0)).collect())
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| 0.5 - r[0] + 2.0 * r[1] + 0.25 * r[2] + rng.uniform_in(-0.1, 0.1))
            .collect();
        let model = LinearRegressor::fit(&x, &y).unwrap();
        let want = direct_ols(&x, &y, 1e-10);
        for (a, b) in model.coefs.iter().zip(&want) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }
}

#[test]
fn rank_deficient_design_is_stabilized_and_flagged() {
    // Second column duplicates the first: XᵀX is singular.
    let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64, i as f64]).collect();
    let y: Vec<f64> = (0..8).map(|i| 3.0 * i as f64).collect();
    let model = LinearRegressor::fit(&x, &y).unwrap();
    // Predictions are still usable even though coefficients are not unique.
    for (xi, &yi) in x.iter().zip(&y) {
        assert!((model.predict(xi) - yi).abs() < 1e-3);
    }
}

// ── Kernel ridge ────────────────────────────────────────────────────────────

#[test]
fn kernel_ridge_single_point_closed_form() {
    let x = vec![vec![0.7]];
    let y = vec![2.0];
    for alpha in [0.1, 1.0, 3.0] {
        let model = KernelRidge::fit(&x, &y, alpha, 0.5).unwrap();
        let got = model.predict(&x[0]);
        assert!((got - 2.0 / (1.0 + alpha)).abs() < 1e-12, "alpha {alpha}");
    }
}

#[test]
fn kernel_ridge_interpolates_as_alpha_vanishes() {
    let mut rng = DetRng::new(41, 0);
    let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 4.0, rng.uniform()]).collect();
    let y: Vec<f64> = (0..8).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    let model = KernelRidge::fit(&x, &y, 1e-12, 0.8).unwrap();
    for (xi, &yi) in x.iter().zip(&y) {
        assert!((model.predict(xi) - yi).abs() < 1e-6);
    }
}

#[test]
fn kernel_ridge_matches_direct_inverse() {
    let mut rng = DetRng::new(42, 0);
    for trial in 0..10 {
        let n = 10;
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..2).map(|_| rng.uniform_in(-1.5, 1.5)).collect())
            .collect();
        let y: Vec<f64> = (0..n).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
        let (alpha, gamma) = (0.1, 0.1);
        let model = KernelRidge::fit(&x, &y, alpha, gamma).unwrap();

        // Direct inverse of (K + αI).
        let mut k = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                k[i][j] = rbf_kernel(&x[i], &x[j], gamma);
            }
            k[i][i] += alpha;
        }
        let inv = invert(&k);
        let dual: Vec<f64> = (0..n).map(|i| (0..n).map(|j| inv[i][j] * y[j]).sum()).collect();
        for probe in 0..n {
            let want: f64 = (0..n)
                .map(|i| dual[i] * rbf_kernel(&x[i], &x[probe], gamma))
                .sum();
            let got = model.predict(&x[probe]);
            assert!((got - want).abs() < 1e-8, "trial {trial}: {got} vs {want}");
        }
    }
}

// ── SVR ─────────────────────────────────────────────────────────────────────

#[test]
fn epsilon_tube_absorbs_near_constant_targets() {
    let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64]).collect();
    let y: Vec<f64> = (0..8).map(|i| 5.0 + 0.04 * ((i % 3) as f64 - 1.0)).collect();
    let params = SvrParams { c: 1.0, epsilon: 0.1, gamma: 0.3, ..SvrParams::default() };
    let model = Svr::fit(&x, &y, &params).unwrap();
    assert!(model.converged);
    assert_eq!(model.num_support_vectors(), 0);
    for xi in &x {
        let f = model.predict(xi);
        assert!((f - 5.0).abs() <= 0.1, "f = {f}");
    }
}

#[test]
fn svr_satisfies_kkt_on_random_instances() {
    let mut rng = DetRng::new(50, 0);
    for trial in 0..8 {
        let n = 12;
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..2).map(|_| rng.uniform_in(-1.0, 1.0)).collect())
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| (2.0 * r[0]).sin() + 0.5 * r[1] + rng.uniform_in(-0.05, 0.05))
            .collect();
        let params = SvrParams { c: 0.5, epsilon: 0.05, gamma: 0.7, ..SvrParams::default() };
        let model = Svr::fit(&x, &y, &params).unwrap();
        assert!(model.converged, "trial {trial} did not converge");
        // Dual feasibility and complementary slackness.
        assert!(model.beta.iter().all(|&b| (-params.c..=params.c).contains(&b)));
        assert!(model.beta.iter().sum::<f64>().abs() < 1e-8);
        let viol = model.kkt_max_violation(&x, &y);
        assert!(viol < 1e-5, "trial {trial}: KKT violation {viol:.3e}");
    }
}

/// Subgradient descent on the primal in representer form — an independent
/// route to the same optimum, used to corroborate the SMO solution.
fn primal_reference_svr(
    x: &[Vec<f64>],
    y: &[f64],
    c: f64,
    epsilon: f64,
    gamma: f64,
) -> (Vec<f64>, f64) {
    let n = x.len();
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            k[i][j] = rbf_kernel(&x[i], &x[j], gamma);
        }
    }
    let mut coef = vec![0.0; n];
    let mut bias = 0.0;
    let iters = 2_000_000usize;
    let tail_start = iters / 2;
    let mut avg_coef = vec![0.0; n];
    let mut avg_bias = 0.0;
    for t in 0..iters {
        let lr = 0.05 / (1.0 + t as f64 * 2e-3);
        // f_i = Σ_j coef_j K_ij + b
        let mut grad_c = vec![0.0; n];
        let mut grad_b = 0.0;
        for i in 0..n {
            let f: f64 = (0..n).map(|j| coef[j] * k[i][j]).sum::<f64>() + bias;
            let e = f - y[i];
            let s = if e > epsilon {
                1.0
            } else if e < -epsilon {
                -1.0
            } else {
                0.0
            };
            if s != 0.0 {
                for j in 0..n {
                    grad_c[j] += c * s * k[i][j];
                }
                grad_b += c * s;
            }
        }
        // Regularizer ½ coefᵀK coef.
        for j in 0..n {
            let reg: f64 = (0..n).map(|i| coef[i] * k[i][j]).sum();
            coef[j] -= lr * (reg + grad_c[j]);
        }
        bias -= lr * grad_b;
        // Tail averaging smooths the subgradient oscillation at the ε kink.
        if t >= tail_start {
            for j in 0..n {
                avg_coef[j] += coef[j];
            }
            avg_bias += bias;
        }
    }
    let count = (iters - tail_start) as f64;
    for v in avg_coef.iter_mut() {
        *v /= count;
    }
    (avg_coef, avg_bias / count)
}

#[test]
fn svr_matches_primal_reference_on_1d_toy() {
    // y = x on 10 points, with enough capacity (C, γ) to fit inside the tube.
    let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 9.0]).collect();
    let y: Vec<f64> = (0..10).map(|i| i as f64 / 9.0).collect();
    let (c, epsilon, gamma) = (10.0, 1e-3, 40.0);
    let params = SvrParams { c, epsilon, gamma, ..SvrParams::default() };
    let model = Svr::fit(&x, &y, &params).unwrap();
    assert!(model.converged);
    for (xi, &yi) in x.iter().zip(&y) {
        assert!((model.predict(xi) - yi).abs() <= epsilon + 1e-3);
    }
    let (coef, bias) = primal_reference_svr(&x, &y, c, epsilon, gamma);
    for xi in &x {
        let ref_pred: f64 = x
            .iter()
            .zip(&coef)
            .map(|(xj, &cj)| cj * rbf_kernel(xj, xi, gamma))
            .sum::<f64>()
            + bias;
        let smo_pred = model.predict(xi);
        assert!(
            (ref_pred - smo_pred).abs() <= epsilon + 1e-3,
            "{ref_pred} vs {smo_pred}"
        );
    }
}

#[test]
fn iteration_cap_returns_unconverged_flag() {
    let mut rng = DetRng::new(51, 0);
    let x: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.uniform_in(-1.0, 1.0)]).collect();
    let y: Vec<f64> = x.iter().map(|r| r[0] * 3.0 + rng.uniform_in(-0.2, 0.2)).collect();
    let params = SvrParams { c: 5.0, epsilon: 1e-6, gamma: 2.0, max_iter: 3, tol: 1e-12 };
    let model = Svr::fit(&x, &y, &params).unwrap();
    assert!(!model.converged);
    assert_eq!(model.iterations, 3);
}

#[test]
fn svr_rejects_bad_hyperparameters() {
    let x = vec![vec![0.0], vec![1.0]];
    let y = vec![0.0, 1.0];
    assert!(Svr::fit(&x, &y, &SvrParams { c: 0.0, ..SvrParams::default() }).is_err());
    assert!(Svr::fit(&x, &y, &SvrParams { epsilon: -1.0, ..SvrParams::default() }).is_err());
}

// ── Regressor selection ─────────────────────────────────────────────────────

#[test]
fn selection_returns_single_candidate() {
    let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
    let y: Vec<f64> = (0..5).map(|i| i as f64).collect();
    let spec = RegressorSpec::default();
    let only = fit_regressor(RegressorKind::Linear, &x, &y, &spec).unwrap();
    let (idx, chosen, _) = select_regressor(std::slice::from_ref(&only), &x, &y).unwrap();
    assert_eq!(idx, 0);
    assert_eq!(chosen.kind(), RegressorKind::Linear);
}

#[test]
fn selection_prefers_exact_linear_fit() {
    let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 / 3.0]).collect();
    let y: Vec<f64> = x.iter().map(|r| 4.0 * r[0] - 2.0).collect();
    let val_x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 2.0 + 0.1]).collect();
    let val_y: Vec<f64> = val_x.iter().map(|r| 4.0 * r[0] - 2.0).collect();
    let spec = RegressorSpec::default();
    let candidates = vec![
        fit_regressor(RegressorKind::Linear, &x, &y, &spec).unwrap(),
        fit_regressor(RegressorKind::Svr, &x, &y, &spec).unwrap(),
        fit_regressor(RegressorKind::KernelRidge, &x, &y, &spec).unwrap(),
    ];
    let (_, chosen, mse) = select_regressor(&candidates, &val_x, &val_y).unwrap();
    assert_eq!(chosen.kind(), RegressorKind::Linear);
    assert!(mse < 1e-12);
}

#[test]
fn selection_val_mse_is_the_minimum_over_candidates() {
    let mut rng = DetRng::new(52, 0);
    let x: Vec<Vec<f64>> = (0..15).map(|_| vec![rng.uniform_in(-1.0, 1.0)]).collect();
    let y: Vec<f64> = x.iter().map(|r| (3.0 * r[0]).sin()).collect();
    let val_x: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.uniform_in(-1.0, 1.0)]).collect();
    let val_y: Vec<f64> = val_x.iter().map(|r| (3.0 * r[0]).sin()).collect();
    let spec = RegressorSpec::default();
    let candidates: Vec<FittedRegressor> = [
        RegressorKind::Linear,
        RegressorKind::Svr,
        RegressorKind::KernelRidge,
    ]
    .iter()
    .map(|&k| fit_regressor(k, &x, &y, &spec).unwrap())
    .collect();
    let (_, _, best_mse) = select_regressor(&candidates, &val_x, &val_y).unwrap();
    // Recompute independently.
    let recomputed: f64 = candidates
        .iter()
        .map(|c| {
            let preds: Vec<f64> = val_x.iter().map(|x| c.predict(x)).collect();
            preds
                .iter()
                .zip(&val_y)
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>()
                / val_y.len() as f64
        })
        .fold(f64::INFINITY, f64::min);
    assert!((best_mse - recomputed).abs() < 1e-15);
}
