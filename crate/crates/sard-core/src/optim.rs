//! Quasi-Newton minimization (BFGS with Armijo backtracking).

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the sup-norm of the gradient falls below this.
    pub gtol: f64,
    /// Stop when an accepted step changes `f` by less than
    /// `ftol·(1+|f|)`.
    pub ftol: f64,
    /// Largest sup-norm of the first trial step.
    pub initial_step: f64,
    pub armijo_c: f64,
    pub max_backtracks: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            gtol: 1e-6,
            ftol: 1e-13,
            initial_step: 0.1,
            armijo_c: 1e-4,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: DVector<f64>,
    pub f: f64,
    pub grad: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step, starting point first.
    pub history: Vec<f64>,
}

/// Minimizes `f`. `value` is the cheap evaluation used by the line search
/// and may return `+inf` outside the feasible set; `value_grad` returns the
/// value and gradient.
pub fn bfgs(
    mut value: impl FnMut(&DVector<f64>) -> f64,
    mut value_grad: impl FnMut(&DVector<f64>) -> (f64, DVector<f64>),
    x0: DVector<f64>,
    opts: BfgsOptions,
) -> BfgsResult {
    let n = x0.len();
    let mut x = x0;
    let (mut f, mut g) = value_grad(&x);
    let mut history = vec![f];
    if n == 0 || !f.is_finite() {
        return BfgsResult {
            x,
            f,
            grad: g,
            iterations: 0,
            converged: n == 0,
            history,
        };
    }
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut first = true;
    let mut small_steps = 0;
    for it in 0..opts.max_iter {
        if g.amax() <= opts.gtol {
            return BfgsResult {
                x,
                f,
                grad: g,
                iterations: it,
                converged: true,
                history,
            };
        }
        let mut d = -(&h * &g);
        let mut slope = g.dot(&d);
        if slope >= 0.0 {
            // lost descent: restart from steepest descent
            h = DMatrix::identity(n, n);
            d = -g.clone();
            slope = g.dot(&d);
            first = true;
        }
        if first {
            let s = opts.initial_step / d.amax().max(f64::MIN_POSITIVE);
            if s < 1.0 {
                d *= s;
                slope *= s;
            }
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let xt = &x + &d * t;
            let ft = value(&xt);
            if ft.is_finite() && ft <= f + opts.armijo_c * t * slope {
                accepted = Some(xt);
                break;
            }
            t *= 0.5;
        }
        let Some(xn) = accepted else {
            return BfgsResult {
                x,
                f,
                grad: g,
                iterations: it,
                converged: false,
                history,
            };
        };
        let (fn_, gn) = value_grad(&xn);
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if first {
                h = DMatrix::identity(n, n) * (sy / y.dot(&y));
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
            h += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            first = false;
        }
        let df = f - fn_;
        x = xn;
        f = fn_;
        g = gn;
        history.push(f);
        if df.abs() <= opts.ftol * (1.0 + f.abs()) {
            small_steps += 1;
            if small_steps >= 2 {
                return BfgsResult {
                    x,
                    f,
                    grad: g,
                    iterations: it + 1,
                    converged: true,
                    history,
                };
            }
        } else {
            small_steps = 0;
        }
    }
    let converged = g.amax() <= opts.gtol;
    BfgsResult {
        x,
        f,
        grad: g,
        iterations: opts.max_iter,
        converged,
        history,
    }
}

/// Hessian by central differences of an analytic gradient, symmetrized.
pub fn numerical_hessian(mut grad: impl FnMut(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, step: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    for j in 0..n {
        let e = step * (1.0 + x[j].abs());
        let mut xp = x.clone();
        xp[j] += e;
        let mut xm = x.clone();
        xm[j] -= e;
        let col = (grad(&xp) - grad(&xm)) / (2.0 * e);
        h.set_column(j, &col);
    }
    (&h + h.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &DVector<f64>| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let fg = |x: &DVector<f64>| {
            let g = DVector::from_vec(vec![
                -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
                200.0 * (x[1] - x[0] * x[0]),
            ]);
            (f(x), g)
        };
        let r = bfgs(f, fg, DVector::from_vec(vec![-1.2, 1.0]), BfgsOptions::default());
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn respects_infeasible_region() {
        // minimum of -ln(1-x) - ln(1+x) + x at interior point, +inf outside (-1, 1)
        let f = |x: &DVector<f64>| {
            if x[0].abs() >= 1.0 {
                f64::INFINITY
            } else {
                -(1.0 - x[0]).ln() - (1.0 + x[0]).ln() + 3.0 * x[0]
            }
        };
        let fg = |x: &DVector<f64>| (f(x), DVector::from_vec(vec![1.0 / (1.0 - x[0]) - 1.0 / (1.0 + x[0]) + 3.0]));
        let r = bfgs(f, fg, DVector::from_vec(vec![0.0]), BfgsOptions::default());
        // root of 1/(1-x) - 1/(1+x) + 3 = 0 → 3x² - 2x - 3 = 0
        let exact = (2.0 - (4.0f64 + 36.0).sqrt()) / 6.0;
        assert!((r.x[0] - exact).abs() < 1e-6);
    }

    #[test]
    fn hessian_of_quadratic() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let h = numerical_hessian(|x| &a * x, &DVector::from_vec(vec![0.3, -0.2]), 1e-4);
        assert!((h - a).amax() < 1e-8);
    }
}
