//! ε-insensitive support vector regression solved in the dual by sequential
//! minimal optimization.
//!
//! The problem is posed over z = (α, α*) ∈ R²ⁿ with signs u = (+1…, −1…):
//!
//! ```text
//! min ½ zᵀQz + pᵀz,  Q[s,t] = u_s u_t K(s̃, t̃),  p = (ε − y, ε + y)
//! s.t. uᵀz = 0,  0 ≤ z ≤ C
//! ```
//!
//! Each step picks the maximal violating pair (first-order working set
//! selection), solves the two-variable subproblem analytically and clips to
//! the box. Convergence is declared when the maximal KKT violation drops
//! below `tol`. Prediction is `f(x) = Σ β_i K(x_i, x) + b` with
//! `β = α − α*`.

use crate::error::{FetildaError, Result};

use super::rbf_kernel;

#[derive(Debug, Clone, Copy)]
pub struct SvrParams {
    pub c: f64,
    pub epsilon: f64,
    pub gamma: f64,
    /// Stop when the maximal KKT violation falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvrParams {
    fn default() -> Self {
        SvrParams { c: 0.1, epsilon: 1e-4, gamma: 0.1, tol: 1e-6, max_iter: 200_000 }
    }
}

/// Fitted ε-SVR model.
#[derive(Debug, Clone)]
pub struct Svr {
    x_train: Vec<Vec<f64>>,
    /// β_i = α_i − α*_i, each in [−C, C].
    pub beta: Vec<f64>,
    pub bias: f64,
    pub converged: bool,
    pub iterations: usize,
    pub params: SvrParams,
}

impl Svr {
    pub fn fit(x: &[Vec<f64>], y: &[f64], params: &SvrParams) -> Result<Self> {
        if params.c <= 0.0 || params.epsilon < 0.0 {
            return Err(FetildaError::Baseline(format!(
                "SVR requires C > 0 and epsilon >= 0, got C = {}, epsilon = {}",
                params.c, params.epsilon
            )));
        }
        if x.is_empty() || x.len() != y.len() {
            return Err(FetildaError::Baseline(format!(
                "SVR needs aligned non-empty samples, got {} / {}",
                x.len(),
                y.len()
            )));
        }
        let n = x.len();
        let c = params.c;
        let eps = params.epsilon;

        let mut kernel = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rbf_kernel(&x[i], &x[j], params.gamma);
                kernel[i * n + j] = v;
                kernel[j * n + i] = v;
            }
        }
        let sample = |t: usize| t % n;
        let sign = |t: usize| if t < n { 1.0 } else { -1.0 };

        let mut z = vec![0.0f64; 2 * n];
        // G = Qz + p starts at p since z = 0.
        let mut grad: Vec<f64> = (0..2 * n)
            .map(|t| if t < n { eps - y[t] } else { eps + y[t - n] })
            .collect();

        let mut converged = false;
        let mut iterations = 0;
        let mut last_up = f64::NEG_INFINITY;
        let mut last_low = f64::INFINITY;
        while iterations < params.max_iter {
            // Maximal violating pair over -u_t G_t.
            let mut up_val = f64::NEG_INFINITY;
            let mut low_val = f64::INFINITY;
            let mut up_idx = usize::MAX;
            let mut low_idx = usize::MAX;
            for t in 0..2 * n {
                let u = sign(t);
                let v = -u * grad[t];
                let in_up = if u > 0.0 { z[t] < c } else { z[t] > 0.0 };
                let in_low = if u > 0.0 { z[t] > 0.0 } else { z[t] < c };
                if in_up && v > up_val {
                    up_val = v;
                    up_idx = t;
                }
                if in_low && v < low_val {
                    low_val = v;
                    low_idx = t;
                }
            }
            last_up = up_val;
            last_low = low_val;
            if up_idx == usize::MAX || low_idx == usize::MAX || up_val - low_val < params.tol {
                converged = true;
                break;
            }
            iterations += 1;

            let (i, j) = (up_idx, low_idx);
            let (ui, uj) = (sign(i), sign(j));
            let (si, sj) = (sample(i), sample(j));
            // Direction d_i = u_i, d_j = −u_j keeps uᵀz constant; curvature
            // along it is K_ii + K_jj − 2K_ij ≥ 0 for a PSD kernel.
            let curv = (kernel[si * n + si] + kernel[sj * n + sj]
                - 2.0 * kernel[si * n + sj])
                .max(1e-12);
            let descent = up_val - low_val; // −dᵀG > 0
            let mut step = descent / curv;
            // Box limits for z_i + u_i·t and z_j − u_j·t in [0, C].
            let cap_i = if ui > 0.0 { c - z[i] } else { z[i] };
            let cap_j = if uj > 0.0 { z[j] } else { c - z[j] };
            step = step.min(cap_i).min(cap_j);
            if step <= 0.0 {
                // Numerically stuck pair; treat as converged at tolerance.
                converged = up_val - low_val < params.tol;
                break;
            }
            z[i] += ui * step;
            z[j] -= uj * step;
            for (t, g) in grad.iter_mut().enumerate() {
                let u = sign(t);
                let st = sample(t);
                *g += step * u * (kernel[st * n + si] - kernel[st * n + sj]);
            }
        }

        // Bias from free variables, else the midpoint of the KKT interval.
        let mut free_sum = 0.0;
        let mut free_count = 0usize;
        for t in 0..2 * n {
            if z[t] > 0.0 && z[t] < c {
                free_sum += -sign(t) * grad[t];
                free_count += 1;
            }
        }
        let bias = if free_count > 0 {
            free_sum / free_count as f64
        } else {
            let hi = if last_up.is_finite() { last_up } else { 0.0 };
            let lo = if last_low.is_finite() { last_low } else { 0.0 };
            (hi + lo) / 2.0
        };

        let beta: Vec<f64> = (0..n).map(|i| z[i] - z[n + i]).collect();
        Ok(Svr {
            x_train: x.to_vec(),
            beta,
            bias,
            converged,
            iterations,
            params: *params,
        })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut acc = self.bias;
        for (xi, &b) in self.x_train.iter().zip(&self.beta) {
            if b != 0.0 {
                acc += b * rbf_kernel(xi, x, self.params.gamma);
            }
        }
        acc
    }

    /// Support vectors: samples with nonzero dual coefficient.
    pub fn num_support_vectors(&self) -> usize {
        self.beta.iter().filter(|&&b| b != 0.0).count()
    }

    /// Maximal violation of the ε-SVR KKT conditions by this solution on its
    /// training data. Checks the box on β, the balance Σβ = 0, and per-sample
    /// complementary slackness of the residual e_i = f(x_i) − y_i:
    ///
    /// - β_i = 0 ⇒ |e_i| ≤ ε
    /// - 0 < β_i < C ⇒ e_i = −ε;   β_i = C ⇒ e_i ≤ −ε
    /// - −C < β_i < 0 ⇒ e_i = +ε;  β_i = −C ⇒ e_i ≥ +ε
    ///
    /// Uses only the model output and the kernel — not the solver state.
    pub fn kkt_max_violation(&self, x: &[Vec<f64>], y: &[f64]) -> f64 {
        let c = self.params.c;
        let eps = self.params.epsilon;
        // "At bound" must tolerate solver round-off proportional to C.
        let at = |a: f64, b: f64| (a - b).abs() <= 1e-9 * c.max(1.0);
        let mut worst: f64 = self.beta.iter().sum::<f64>().abs();
        for ((xi, &yi), &b) in x.iter().zip(y).zip(&self.beta) {
            let e = self.predict(xi) - yi;
            worst = worst.max((-c - b).max(b - c).max(0.0)); // box
            let viol = if at(b, 0.0) {
                (e.abs() - eps).max(0.0)
            } else if b > 0.0 && !at(b, c) {
                (e + eps).abs()
            } else if at(b, c) {
                (e + eps).max(0.0)
            } else if b < 0.0 && !at(b, -c) {
                (e - eps).abs()
            } else {
                // b at −C
                (eps - e).max(0.0)
            };
            worst = worst.max(viol);
        }
        worst
    }
}
