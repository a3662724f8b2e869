//! Linear binary classifiers: logistic and hinge loss with L1/L2 penalties.
//!
//! The objective is `penalty(w) + C * sum_a loss(y_a * (w.x_a + b))` with the
//! intercept unpenalized, so larger C means weaker regularization. Smooth
//! objectives (L2) are minimized by gradient descent with backtracking; L1
//! uses proximal gradient steps with soft-thresholding of the weights.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Logistic,
    Hinge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOptions {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            max_iters: 1000,
            tol: 1e-6,
        }
    }
}

/// `ln(1 + exp(z))` without overflow.
fn log1p_exp(z: f64) -> f64 {
    if z > 35.0 {
        z
    } else if z < -35.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

/// sigmoid(z), used as d/dz ln(1+exp(z)).
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) struct LinearProblem<'a> {
    pub rows: &'a [Vec<(u32, f64)>],
    pub y: &'a [f64],
    pub loss: LossKind,
    pub penalty: Penalty,
    pub c: f64,
    pub dim: usize,
}

pub(crate) struct ObjectiveEval {
    pub value: f64,
    pub grad_weights: Vec<f64>,
    pub grad_intercept: f64,
}

impl<'a> LinearProblem<'a> {
    fn margins(&self, w: &[f64], b: f64) -> Vec<f64> {
        self.rows
            .iter()
            .zip(self.y)
            .map(|(row, &y)| {
                let f: f64 = row.iter().map(|&(j, v)| w[j as usize] * v).sum::<f64>() + b;
                y * f
            })
            .collect()
    }

    fn data_loss(&self, margins: &[f64]) -> f64 {
        let sum: f64 = margins
            .iter()
            .map(|&m| match self.loss {
                LossKind::Logistic => log1p_exp(-m),
                LossKind::Hinge => (1.0 - m).max(0.0),
            })
            .sum();
        self.c * sum
    }

    fn penalty_value(&self, w: &[f64]) -> f64 {
        match self.penalty {
            Penalty::L2 => 0.5 * w.iter().map(|v| v * v).sum::<f64>(),
            Penalty::L1 => w.iter().map(|v| v.abs()).sum::<f64>(),
        }
    }

    /// Full objective value.
    pub fn objective(&self, w: &[f64], b: f64) -> f64 {
        self.data_loss(&self.margins(w, b)) + self.penalty_value(w)
    }

    /// Value of the smooth part (data term, plus the L2 penalty which is
    /// smooth; the L1 penalty is handled by the proximal step).
    fn smooth_value(&self, w: &[f64], b: f64) -> f64 {
        let data = self.data_loss(&self.margins(w, b));
        match self.penalty {
            Penalty::L2 => data + self.penalty_value(w),
            Penalty::L1 => data,
        }
    }

    /// Smooth-part value and (sub)gradient at `(w, b)`.
    fn smooth_value_grad(&self, w: &[f64], b: f64) -> (f64, Vec<f64>, f64) {
        let margins = self.margins(w, b);
        let mut grad_w = vec![0.0; self.dim];
        let mut grad_b = 0.0;
        for ((row, &y), &m) in self.rows.iter().zip(self.y).zip(&margins) {
            let dloss_dmargin = match self.loss {
                LossKind::Logistic => -sigmoid(-m),
                LossKind::Hinge => {
                    if m < 1.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }
            };
            if dloss_dmargin == 0.0 {
                continue;
            }
            let scale = self.c * dloss_dmargin * y;
            for &(j, v) in row {
                grad_w[j as usize] += scale * v;
            }
            grad_b += scale;
        }
        let mut value = self.data_loss(&margins);
        if self.penalty == Penalty::L2 {
            value += self.penalty_value(w);
            for (g, &wv) in grad_w.iter_mut().zip(w) {
                *g += wv;
            }
        }
        (value, grad_w, grad_b)
    }

    /// Full objective value and its (sub)gradient; for L1 the gradient is
    /// that of the smooth part, leaving the penalty to the proximal step.
    pub fn value_grad(&self, w: &[f64], b: f64) -> ObjectiveEval {
        let (smooth, grad_weights, grad_intercept) = self.smooth_value_grad(w, b);
        let value = match self.penalty {
            Penalty::L2 => smooth,
            Penalty::L1 => smooth + self.penalty_value(w),
        };
        ObjectiveEval {
            value,
            grad_weights,
            grad_intercept,
        }
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

pub(crate) struct FitResult {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub objective_at_zero: f64,
}

/// One backtracked proximal step from `(from_w, from_b)` using the gradient
/// evaluated there. Returns the accepted point with its smooth value, or
/// `None` when no step certifies descent within the doubling budget.
#[allow(clippy::too_many_arguments)]
fn proximal_step(
    problem: &LinearProblem,
    from_w: &[f64],
    from_b: f64,
    smooth_at_from: f64,
    grad_w: &[f64],
    grad_b: f64,
    lipschitz: &mut f64,
) -> Option<(Vec<f64>, f64, f64)> {
    for _ in 0..60 {
        let step = 1.0 / *lipschitz;
        let mut zw: Vec<f64> = from_w
            .iter()
            .zip(grad_w)
            .map(|(&wv, &g)| wv - step * g)
            .collect();
        if problem.penalty == Penalty::L1 {
            for v in &mut zw {
                *v = soft_threshold(*v, step);
            }
        }
        let zb = from_b - step * grad_b;
        let smooth_z = problem.smooth_value(&zw, zb);
        let dw_sq: f64 = zw
            .iter()
            .zip(from_w)
            .map(|(&a, &c)| (a - c) * (a - c))
            .sum::<f64>()
            + (zb - from_b) * (zb - from_b);
        let linear_term: f64 = zw
            .iter()
            .zip(from_w)
            .zip(grad_w)
            .map(|((&a, &c), &g)| g * (a - c))
            .sum::<f64>()
            + grad_b * (zb - from_b);
        if smooth_z <= smooth_at_from + linear_term + 0.5 * *lipschitz * dw_sq + 1e-12 {
            return Some((zw, zb, smooth_z));
        }
        *lipschitz *= 2.0;
    }
    None
}

fn full_value(problem: &LinearProblem, smooth: f64, w: &[f64]) -> f64 {
    if problem.penalty == Penalty::L1 {
        smooth + problem.penalty_value(w)
    } else {
        smooth
    }
}

/// Accelerated proximal gradient descent (FISTA) with backtracking and a
/// monotone restart, starting from the zero vector. When a momentum step
/// fails to descend, the iteration falls back to a plain proximal step, so
/// the full objective never increases and the final objective is at most the
/// objective at zero. Deterministic.
pub(crate) fn fit_linear(problem: &LinearProblem, options: &OptimizerOptions) -> FitResult {
    let dim = problem.dim;
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let objective_at_zero = problem.objective(&w, b);
    let mut current_full = objective_at_zero;
    let mut previous_w = w.clone();
    let mut previous_b = b;
    let mut momentum = 1.0f64;
    let mut lipschitz = 1.0f64;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..options.max_iters {
        iterations = iter + 1;
        let momentum_next = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
        let beta = (momentum - 1.0) / momentum_next;
        let yw: Vec<f64> = w
            .iter()
            .zip(&previous_w)
            .map(|(&xc, &xp)| xc + beta * (xc - xp))
            .collect();
        let yb = b + beta * (b - previous_b);

        let (smooth_y, grad_w, grad_b) = problem.smooth_value_grad(&yw, yb);
        let mut candidate =
            proximal_step(problem, &yw, yb, smooth_y, &grad_w, grad_b, &mut lipschitz)
                .map(|(zw, zb, smooth_z)| {
                    let full = full_value(problem, smooth_z, &zw);
                    (zw, zb, full)
                });

        // Momentum overshoot: restart from the current point, which the
        // majorization argument guarantees to descend (away from kinks).
        let needs_restart = match &candidate {
            Some((_, _, full_z)) => *full_z > current_full + 1e-12,
            None => true,
        };
        if needs_restart && beta > 0.0 {
            momentum = 1.0;
            let (smooth_x, grad_w, grad_b) = problem.smooth_value_grad(&w, b);
            candidate = proximal_step(problem, &w, b, smooth_x, &grad_w, grad_b, &mut lipschitz)
                .map(|(zw, zb, smooth_z)| {
                    let full = full_value(problem, smooth_z, &zw);
                    (zw, zb, full)
                });
        } else {
            momentum = momentum_next;
        }
        let Some((zw, zb, full_z)) = candidate else {
            break;
        };
        // With the hinge subgradient even the restarted step can fail to
        // descend at a kink; stop rather than climb.
        if full_z > current_full + 1e-12 {
            break;
        }

        let step_norm = (zw
            .iter()
            .zip(&w)
            .map(|(&a, &c)| (a - c) * (a - c))
            .sum::<f64>()
            + (zb - b) * (zb - b))
            .sqrt();
        previous_w = std::mem::replace(&mut w, zw);
        previous_b = std::mem::replace(&mut b, zb);
        current_full = full_z;

        let param_norm = (w.iter().map(|v| v * v).sum::<f64>() + b * b).sqrt();
        if step_norm <= options.tol * param_norm.max(1.0) {
            converged = true;
            break;
        }
        lipschitz = (lipschitz * 0.95).max(1e-10);
    }

    let objective = problem.objective(&w, b);
    FitResult {
        weights: w,
        intercept: b,
        iterations,
        converged,
        objective,
        objective_at_zero,
    }
}
