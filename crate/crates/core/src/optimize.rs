//! BFGS minimization with an Armijo backtracking line search, and a
//! central-difference Hessian of an analytic gradient.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsOptions {
    /// Stop when the gradient's max-norm falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Give up (and flag divergence) once the iterate's norm exceeds this.
    pub divergence_norm: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            tolerance: 1e-6,
            max_iterations: 500,
            divergence_norm: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub diverged: bool,
}

fn max_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes `f`, which returns the objective and its gradient.
pub fn minimize_bfgs<F>(mut f: F, x0: &[f64], options: &BfgsOptions) -> Minimum
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let (mut fx, g) = f(x.as_slice());
    let mut g = DVector::from_vec(g);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut first_step = true;
    let mut iterations = 0;
    let mut diverged = false;

    while iterations < options.max_iterations {
        if max_norm(&g) <= options.tolerance {
            break;
        }
        if x.norm() > options.divergence_norm {
            diverged = true;
            break;
        }
        iterations += 1;

        let mut direction = -(&h * &g);
        let mut slope = g.dot(&direction);
        if !(slope < 0.0) {
            h = DMatrix::identity(n, n);
            direction = -g.clone();
            slope = -g.norm_squared();
        }
        // Cap the first trial step so early iterations cannot jump wildly.
        let mut alpha = if first_step { (1.0 / max_norm(&g)).min(1.0) } else { 1.0 };
        let (x_new, f_new, g_new) = loop {
            let trial = &x + alpha * &direction;
            let (ft, gt) = f(trial.as_slice());
            if ft.is_finite() && ft <= fx + 1e-4 * alpha * slope {
                break (trial, ft, DVector::from_vec(gt));
            }
            alpha *= 0.5;
            if alpha < 1e-20 {
                // No progress possible along this direction.
                return Minimum {
                    x: x.as_slice().to_vec(),
                    value: fx,
                    gradient: g.as_slice().to_vec(),
                    iterations,
                    converged: max_norm(&g) <= options.tolerance,
                    diverged,
                };
            }
        };

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if first_step {
                h *= sy / y.norm_squared();
                first_step = false;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H ← (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ, expanded.
            h += (rho * rho * yhy + rho) * (&s * s.transpose()) - rho * (&hy * s.transpose() + &s * hy.transpose());
        }
        x = x_new;
        fx = f_new;
        g = g_new;
    }
    if x.norm() > options.divergence_norm {
        diverged = true;
    }
    Minimum {
        converged: max_norm(&g) <= options.tolerance && !diverged,
        x: x.as_slice().to_vec(),
        value: fx,
        gradient: g.as_slice().to_vec(),
        iterations,
        diverged,
    }
}

/// Symmetrized central-difference Jacobian of `grad` at `x`.
pub fn numerical_hessian<G>(mut grad: G, x: &[f64]) -> DMatrix<f64>
where
    G: FnMut(&[f64]) -> Vec<f64>,
{
    let n = x.len();
    let mut hess = DMatrix::zeros(n, n);
    let mut probe = x.to_vec();
    for j in 0..n {
        let h = 1e-5 * x[j].abs().max(1.0);
        probe[j] = x[j] + h;
        let plus = grad(&probe);
        probe[j] = x[j] - h;
        let minus = grad(&probe);
        probe[j] = x[j];
        for i in 0..n {
            hess[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    (&hess + hess.transpose()) * 0.5
}
