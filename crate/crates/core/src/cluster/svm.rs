//! Binary C-SVM with an RBF kernel, trained by sequential minimal optimization
//! using second-order working-set selection.

use log::warn;

use crate::model::squared_distance;

/// Radial basis function kernel `exp(-gamma * ||u - v||^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbfKernel {
    pub gamma: f64,
}

impl RbfKernel {
    pub fn eval(&self, u: &[f64], v: &[f64]) -> f64 {
        (-self.gamma * squared_distance(u, v)).exp()
    }

    /// Dense Gram matrix over `points`, row-major.
    pub fn gram<V: AsRef<[f64]> + Sync>(&self, points: &[V]) -> Vec<f64> {
        use rayon::prelude::*;
        let n = points.len();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|j| self.eval(points[i].as_ref(), points[j].as_ref()))
                    .collect()
            })
            .collect();
        rows.into_iter().flatten().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoParams {
    pub c: f64,
    /// KKT violation tolerance.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl SmoParams {
    pub fn new(c: f64) -> Self {
        SmoParams {
            c,
            tolerance: 1e-3,
            max_iterations: 10_000_000,
        }
    }
}

/// Dual solution of one binary problem.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySolution {
    /// Lagrange multipliers, one per training point.
    pub alpha: Vec<f64>,
    /// Decision offset; `f(x) = sum_i alpha_i y_i K(x_i, x) - rho`.
    pub rho: f64,
    pub iterations: usize,
    pub converged: bool,
}

const TAU: f64 = 1e-12;

/// Solves `min 1/2 a'Qa - e'a` s.t. `0 <= a <= C`, `y'a = 0`, with
/// `Q_ij = y_i y_j K_ij`. `gram` is the row-major `n x n` kernel matrix and
/// `y` holds `+1.0` / `-1.0`.
pub fn solve_binary(gram: &[f64], y: &[f64], params: &SmoParams) -> BinarySolution {
    let n = y.len();
    assert_eq!(gram.len(), n * n, "gram matrix must be n x n");
    let c = params.c;
    let k = |i: usize, j: usize| gram[i * n + j];
    let q = |i: usize, j: usize| y[i] * y[j] * gram[i * n + j];

    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let is_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let is_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iterations {
        // i: maximal violator among I_up.
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            if is_up(alpha[t], y[t]) {
                let v = -y[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i_sel = Some(t);
                }
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j_sel = None;
        let mut best_obj = f64::INFINITY;
        if let Some(i) = i_sel {
            for t in 0..n {
                if !is_low(alpha[t], y[t]) {
                    continue;
                }
                let v = -y[t] * grad[t];
                gmin = gmin.min(v);
                let b = gmax - v;
                if b > 0.0 {
                    let mut a = k(i, i) + k(t, t) - 2.0 * k(i, t);
                    if a <= 0.0 {
                        a = TAU;
                    }
                    let obj = -(b * b) / a;
                    if obj < best_obj {
                        best_obj = obj;
                        j_sel = Some(t);
                    }
                }
            }
        }
        let (i, j) = match (i_sel, j_sel) {
            (Some(i), Some(j)) if gmax - gmin >= params.tolerance => (i, j),
            _ => {
                converged = true;
                break;
            }
        };
        iterations += 1;

        let (old_ai, old_aj) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let mut quad = k(i, i) + k(j, j) - 2.0 * k(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = k(i, i) + k(j, j) - 2.0 * k(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (dai, daj) = (alpha[i] - old_ai, alpha[j] - old_aj);
        for t in 0..n {
            grad[t] += q(t, i) * dai + q(t, j) * daj;
        }
    }
    if !converged {
        warn!("SMO stopped after {iterations} iterations without reaching tolerance");
    }

    // Offset from free multipliers, else the midpoint of the feasible range.
    let mut free_sum = 0.0;
    let mut free = 0usize;
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 {
        free_sum / free as f64
    } else if ub.is_finite() && lb.is_finite() {
        0.5 * (ub + lb)
    } else if ub.is_finite() {
        ub
    } else if lb.is_finite() {
        lb
    } else {
        0.0
    };

    BinarySolution {
        alpha,
        rho,
        iterations,
        converged,
    }
}

/// A trained binary machine holding only its support vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySvm {
    kernel: RbfKernel,
    support: Vec<Vec<f64>>,
    /// `alpha_i * y_i` per support vector.
    coef: Vec<f64>,
    rho: f64,
}

impl BinarySvm {
    pub fn train<V: AsRef<[f64]> + Sync>(
        points: &[V],
        gram: &[f64],
        y: &[f64],
        kernel: RbfKernel,
        params: &SmoParams,
    ) -> Self {
        let sol = solve_binary(gram, y, params);
        let mut support = Vec::new();
        let mut coef = Vec::new();
        for (t, &a) in sol.alpha.iter().enumerate() {
            if a > 0.0 {
                support.push(points[t].as_ref().to_vec());
                coef.push(a * y[t]);
            }
        }
        BinarySvm {
            kernel,
            support,
            coef,
            rho: sol.rho,
        }
    }

    /// Signed decision value; positive means the `+1` class.
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(s, c)| c * self.kernel.eval(s, x))
            .sum::<f64>()
            - self.rho
    }

    pub fn support_count(&self) -> usize {
        self.support.len()
    }
}
