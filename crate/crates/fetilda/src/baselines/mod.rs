//! Classical baselines: TF-IDF and LOG1P term features, ordinary least
//! squares, kernel ridge regression and ε-SVR, plus validation-based
//! selection among the downstream regressors.

pub mod svr;

use std::collections::HashMap;

use crate::error::{FetildaError, Result};

pub use svr::{Svr, SvrParams};

// ── Dense SPD solve (shared by OLS and kernel ridge) ────────────────────────

/// Solve A·x = b for symmetric positive-definite A via Cholesky. `a` is the
/// row-major n×n matrix (consumed as workspace).
fn cholesky_solve(mut a: Vec<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    debug_assert_eq!(a.len(), n * n);
    // In-place lower-triangular factorization.
    let mut max_pivot = 0.0f64;
    let mut min_pivot = f64::INFINITY;
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(FetildaError::Baseline(format!(
                "matrix not positive definite at pivot {j} (value {d:.3e}, \
                 condition estimate >= {:.3e})",
                if min_pivot.is_finite() && d.abs() > 0.0 {
                    max_pivot / d.abs()
                } else {
                    f64::INFINITY
                }
            )));
        }
        let l = d.sqrt();
        max_pivot = max_pivot.max(l);
        min_pivot = min_pivot.min(l);
        a[j * n + j] = l;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / l;
        }
    }
    // Forward substitution L·y = b.
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * y[k];
        }
        y[i] = s / a[i * n + i];
    }
    // Back substitution Lᵀ·x = y.
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= a[k * n + i] * x[k];
        }
        x[i] = s / a[i * n + i];
    }
    Ok(x)
}

/// RBF kernel `exp(-gamma·‖a−b‖²)`.
pub fn rbf_kernel(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let mut d2 = 0.0;
    for (x, y) in a.iter().zip(b) {
        d2 += (x - y) * (x - y);
    }
    (-gamma * d2).exp()
}

// ── TF-IDF ──────────────────────────────────────────────────────────────────

/// TF-IDF model fitted on the training split only: raw term counts weighted
/// by `idf(t) = ln(N / (1 + df(t))) + 1`, rows L2-normalized, historic score
/// appended unnormalized.
#[derive(Debug, Clone)]
pub struct TfidfModel {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    pub df: Vec<usize>,
    pub idf: Vec<f64>,
    pub n_docs: usize,
}

impl TfidfModel {
    /// Fit vocabulary and document frequencies on tokenized training docs.
    pub fn fit(train_docs: &[Vec<String>]) -> Result<Self> {
        let mut df_map: HashMap<&str, usize> = HashMap::new();
        for doc in train_docs {
            let mut seen: Vec<&str> = doc.iter().map(String::as_str).collect();
            seen.sort_unstable();
            seen.dedup();
            for term in seen {
                *df_map.entry(term).or_insert(0) += 1;
            }
        }
        if df_map.is_empty() {
            return Err(FetildaError::Baseline("empty TF-IDF vocabulary".into()));
        }
        let mut terms: Vec<String> = df_map.keys().map(|s| s.to_string()).collect();
        terms.sort_unstable();
        let n_docs = train_docs.len();
        let index: HashMap<String, usize> =
            terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let df: Vec<usize> = terms.iter().map(|t| df_map[t.as_str()]).collect();
        let idf: Vec<f64> = df
            .iter()
            .map(|&d| (n_docs as f64 / (1.0 + d as f64)).ln() + 1.0)
            .collect();
        Ok(TfidfModel { terms, index, df, idf, n_docs })
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn term_index(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    /// L2-normalized tf·idf vector (no historic column).
    pub fn features(&self, doc: &[String]) -> Vec<f64> {
        let mut v = vec![0.0; self.terms.len()];
        for term in doc {
            if let Some(&i) = self.index.get(term) {
                v[i] += 1.0;
            }
        }
        for (x, idf) in v.iter_mut().zip(&self.idf) {
            *x *= idf;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in v.iter_mut() {
                *x /= norm;
            }
        }
        v
    }

    /// Feature row with the historic score appended as one extra column.
    pub fn features_with_hist(&self, doc: &[String], y_hist: f64) -> Vec<f64> {
        let mut v = self.features(doc);
        v.push(y_hist);
        v
    }
}

// ── LOG1P ───────────────────────────────────────────────────────────────────

/// LOG1P term features: `ln(1 + term_count)` per vocabulary term, plus the
/// log of the historic volatility as one numeric column.
#[derive(Debug, Clone)]
pub struct Log1pModel {
    terms: Vec<String>,
    index: HashMap<String, usize>,
}

impl Log1pModel {
    /// Vocabulary = training terms with document frequency ≥ `min_df`.
    pub fn fit(train_docs: &[Vec<String>], min_df: usize) -> Result<Self> {
        let mut df_map: HashMap<&str, usize> = HashMap::new();
        for doc in train_docs {
            let mut seen: Vec<&str> = doc.iter().map(String::as_str).collect();
            seen.sort_unstable();
            seen.dedup();
            for term in seen {
                *df_map.entry(term).or_insert(0) += 1;
            }
        }
        let mut terms: Vec<String> = df_map
            .iter()
            .filter(|(_, &df)| df >= min_df)
            .map(|(t, _)| t.to_string())
            .collect();
        terms.sort_unstable();
        if terms.is_empty() {
            return Err(FetildaError::Baseline(format!(
                "empty LOG1P vocabulary at min_df {min_df}"
            )));
        }
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Log1pModel { terms, index })
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// `[ln(1+tc)…, ln(hist_vol)]`; the historic volatility must be positive.
    pub fn features(&self, doc: &[String], hist_vol: f64) -> Result<Vec<f64>> {
        if hist_vol <= 0.0 {
            return Err(FetildaError::Baseline(format!(
                "non-positive historic volatility {hist_vol} for LOG1P feature"
            )));
        }
        let mut counts = vec![0.0f64; self.terms.len()];
        for term in doc {
            if let Some(&i) = self.index.get(term) {
                counts[i] += 1.0;
            }
        }
        let mut v: Vec<f64> = counts.iter().map(|c| (1.0 + c).ln()).collect();
        v.push(hist_vol.ln());
        Ok(v)
    }
}

// ── Ordinary least squares ──────────────────────────────────────────────────

/// OLS via normal equations with a tiny ridge term for conditioning. The
/// intercept column is added internally; `coefs[0]` is the intercept.
#[derive(Debug, Clone)]
pub struct LinearRegressor {
    pub coefs: Vec<f64>,
    /// True when the base ridge had to be escalated to factor the normal
    /// equations (rank-deficient design).
    pub stabilized: bool,
}

const BASE_RIDGE: f64 = 1e-10;

impl LinearRegressor {
    pub fn fit(x: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() || x.len() < 2 {
            return Err(FetildaError::Baseline(format!(
                "OLS needs >= 2 aligned samples, got {} rows / {} targets",
                x.len(),
                y.len()
            )));
        }
        let d = x[0].len() + 1;
        let n = x.len();
        // Normal equations on [1 | X].
        let mut xtx = vec![0.0; d * d];
        let mut xty = vec![0.0; d];
        let mut row = vec![0.0; d];
        for (xi, &yi) in x.iter().zip(y) {
            if xi.len() + 1 != d {
                return Err(FetildaError::Baseline(format!(
                    "ragged design row: {} features where {} expected",
                    xi.len(),
                    d - 1
                )));
            }
            row[0] = 1.0;
            row[1..].copy_from_slice(xi);
            for i in 0..d {
                xty[i] += row[i] * yi;
                for j in i..d {
                    xtx[i * d + j] += row[i] * row[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                xtx[i * d + j] = xtx[j * d + i];
            }
        }
        let _ = n;
        let mut ridge = BASE_RIDGE;
        let mut stabilized = false;
        for attempt in 0..8 {
            let mut a = xtx.clone();
            for i in 0..d {
                a[i * d + i] += ridge;
            }
            match cholesky_solve(a, &xty) {
                Ok(coefs) if coefs.iter().all(|c| c.is_finite()) => {
                    return Ok(LinearRegressor { coefs, stabilized });
                }
                _ => {
                    // Rank-deficient design: escalate the ridge and flag it.
                    stabilized = true;
                    ridge *= 1e3;
                    if attempt == 7 {
                        break;
                    }
                }
            }
        }
        Err(FetildaError::Baseline(
            "normal equations unsolvable even with escalated ridge".into(),
        ))
    }

    /// Bivariate regression on the historic score alone.
    pub fn fit_bivariate(y_hist: &[f64], y: &[f64]) -> Result<Self> {
        let x: Vec<Vec<f64>> = y_hist.iter().map(|&h| vec![h]).collect();
        Self::fit(&x, y)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut acc = self.coefs[0];
        for (c, v) in self.coefs[1..].iter().zip(x) {
            acc += c * v;
        }
        acc
    }
}

// ── Kernel ridge regression ─────────────────────────────────────────────────

/// RBF kernel ridge regression: dual coefficients from `(K + αI)a = y`.
#[derive(Debug, Clone)]
pub struct KernelRidge {
    x_train: Vec<Vec<f64>>,
    dual: Vec<f64>,
    pub alpha: f64,
    pub gamma: f64,
}

impl KernelRidge {
    pub fn fit(x: &[Vec<f64>], y: &[f64], alpha: f64, gamma: f64) -> Result<Self> {
        if alpha <= 0.0 {
            return Err(FetildaError::Baseline(format!("alpha {alpha} must be positive")));
        }
        if x.is_empty() || x.len() != y.len() {
            return Err(FetildaError::Baseline(format!(
                "kernel ridge needs aligned non-empty samples, got {} / {}",
                x.len(),
                y.len()
            )));
        }
        let n = x.len();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rbf_kernel(&x[i], &x[j], gamma);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
            k[i * n + i] += alpha;
        }
        let dual = cholesky_solve(k, y)?;
        Ok(KernelRidge { x_train: x.to_vec(), dual, alpha, gamma })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.x_train
            .iter()
            .zip(&self.dual)
            .map(|(xi, &a)| a * rbf_kernel(xi, x, self.gamma))
            .sum()
    }
}

// ── Downstream regressor selection ──────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegressorKind {
    Linear,
    Svr,
    KernelRidge,
}

impl std::fmt::Display for RegressorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RegressorKind::Linear => "linear",
            RegressorKind::Svr => "svr",
            RegressorKind::KernelRidge => "kernel_ridge",
        };
        f.write_str(s)
    }
}

/// Downstream regressor hyperparameters (the reference configuration: SVR
/// with RBF kernel, C = 0.1, ε = 0.0001; kernel ridge with α = 0.1,
/// γ = 0.1; SVR γ defaults to 1/num_features).
#[derive(Debug, Clone, Copy)]
pub struct RegressorSpec {
    pub svr_c: f64,
    pub svr_epsilon: f64,
    pub svr_gamma: Option<f64>,
    pub krr_alpha: f64,
    pub krr_gamma: f64,
}

impl Default for RegressorSpec {
    fn default() -> Self {
        RegressorSpec {
            svr_c: 0.1,
            svr_epsilon: 1e-4,
            svr_gamma: None,
            krr_alpha: 0.1,
            krr_gamma: 0.1,
        }
    }
}

/// A fitted downstream regressor.
#[derive(Debug, Clone)]
pub enum FittedRegressor {
    Linear(LinearRegressor),
    Svr(Svr),
    KernelRidge(KernelRidge),
}

impl FittedRegressor {
    pub fn kind(&self) -> RegressorKind {
        match self {
            FittedRegressor::Linear(_) => RegressorKind::Linear,
            FittedRegressor::Svr(_) => RegressorKind::Svr,
            FittedRegressor::KernelRidge(_) => RegressorKind::KernelRidge,
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            FittedRegressor::Linear(m) => m.predict(x),
            FittedRegressor::Svr(m) => m.predict(x),
            FittedRegressor::KernelRidge(m) => m.predict(x),
        }
    }
}

pub fn fit_regressor(
    kind: RegressorKind,
    x: &[Vec<f64>],
    y: &[f64],
    spec: &RegressorSpec,
) -> Result<FittedRegressor> {
    match kind {
        RegressorKind::Linear => Ok(FittedRegressor::Linear(LinearRegressor::fit(x, y)?)),
        RegressorKind::Svr => {
            let gamma = spec
                .svr_gamma
                .unwrap_or_else(|| 1.0 / x.first().map_or(1, Vec::len).max(1) as f64);
            let params = SvrParams {
                c: spec.svr_c,
                epsilon: spec.svr_epsilon,
                gamma,
                ..SvrParams::default()
            };
            Ok(FittedRegressor::Svr(Svr::fit(x, y, &params)?))
        }
        RegressorKind::KernelRidge => Ok(FittedRegressor::KernelRidge(KernelRidge::fit(
            x,
            y,
            spec.krr_alpha,
            spec.krr_gamma,
        )?)),
    }
}

/// Pick the candidate with the lowest validation MSE; ties keep the earliest
/// candidate (callers pass them in the linear < svr < kernel_ridge order).
pub fn select_regressor<'a>(
    candidates: &'a [FittedRegressor],
    val_x: &[Vec<f64>],
    val_y: &[f64],
) -> Result<(usize, &'a FittedRegressor, f64)> {
    if candidates.is_empty() {
        return Err(FetildaError::Baseline("no regressor candidates".into()));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, cand) in candidates.iter().enumerate() {
        let preds: Vec<f64> = val_x.iter().map(|x| cand.predict(x)).collect();
        let mse = crate::head::mse(&preds, val_y)?;
        if best.map_or(true, |(_, b)| mse < b) {
            best = Some((i, mse));
        }
    }
    let (i, mse) = best.expect("non-empty candidates");
    Ok((i, &candidates[i], mse))
}
