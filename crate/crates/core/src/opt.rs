//! Quasi-Newton minimization for the parameter-fitting paths.
//!
//! A dense BFGS with backtracking line search and 3-point (central-difference)
//! numerical gradients covers both the Frobenius-norm decomposition fits and
//! the variational micro-optimizations; a seeded multi-restart wrapper handles
//! objectives with many equivalent local minima.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    /// Infinity-norm gradient tolerance for convergence.
    pub gtol: f64,
    pub max_iters: usize,
    /// Central-difference step for numerical gradients.
    pub fd_step: f64,
    /// Hard cap on objective evaluations (0 = unlimited).
    pub max_fevals: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            gtol: 1e-6,
            max_iters: 2000,
            fd_step: 1e-6,
            max_fevals: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: DVector<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iters: usize,
    pub fevals: usize,
    pub converged: bool,
}

/// Minimizes `f` starting from `x0` with BFGS and central-difference
/// numerical gradients.
pub fn minimize_bfgs<F>(f: F, x0: &DVector<f64>, opts: &BfgsOptions) -> BfgsResult
where
    F: FnMut(&DVector<f64>) -> f64,
{
    let n = x0.len();
    let fd_step = opts.fd_step;
    let f = std::cell::RefCell::new(f);
    let extra = std::cell::Cell::new(0usize);
    let mut xp = DVector::zeros(n);
    let result = minimize_bfgs_with_grad(
        |x| (f.borrow_mut())(x),
        |x, g| {
            xp.copy_from(x);
            let mut fm = f.borrow_mut();
            for i in 0..n {
                let h = fd_step * (1.0 + x[i].abs());
                xp[i] = x[i] + h;
                let fp = fm(&xp);
                xp[i] = x[i] - h;
                let fmi = fm(&xp);
                xp[i] = x[i];
                g[i] = (fp - fmi) / (2.0 * h);
            }
            extra.set(extra.get() + 2 * n);
        },
        x0,
        opts,
    );
    BfgsResult {
        fevals: result.fevals + extra.get(),
        ..result
    }
}

/// Minimizes `f` with a caller-supplied gradient (e.g. cached finite
/// differences over a product structure).
pub fn minimize_bfgs_with_grad<F, G>(
    mut f: F,
    mut grad_fn: G,
    x0: &DVector<f64>,
    opts: &BfgsOptions,
) -> BfgsResult
where
    F: FnMut(&DVector<f64>) -> f64,
    G: FnMut(&DVector<f64>, &mut DVector<f64>),
{
    let n = x0.len();
    let mut fevals = 0usize;
    let mut eval = |x: &DVector<f64>, fevals: &mut usize| -> f64 {
        *fevals += 1;
        f(x)
    };
    let mut grad = |x: &DVector<f64>| -> DVector<f64> {
        let mut g = DVector::zeros(n);
        grad_fn(x, &mut g);
        g
    };

    let mut x = x0.clone();
    let mut fx = eval(&x, &mut fevals);
    let mut g = grad(&x);
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut iters = 0usize;

    while iters < opts.max_iters {
        let gnorm = g.amax();
        if gnorm <= opts.gtol {
            return BfgsResult {
                x,
                f: fx,
                grad_norm: gnorm,
                iters,
                fevals,
                converged: true,
            };
        }
        if opts.max_fevals > 0 && fevals >= opts.max_fevals {
            break;
        }
        iters += 1;

        let mut p = -(&hinv * &g);
        let mut slope = p.dot(&g);
        if slope >= 0.0 {
            // Curvature information went bad; restart from steepest descent.
            hinv = DMatrix::identity(n, n);
            p = -g.clone();
            slope = p.dot(&g);
        }

        // Backtracking Armijo line search.
        let mut step = 1.0;
        let mut x_new;
        let mut f_new;
        loop {
            x_new = &x + &p * step;
            f_new = eval(&x_new, &mut fevals);
            if f_new <= fx + 1e-4 * step * slope {
                break;
            }
            step *= 0.5;
            if step < 1e-14 {
                // No descent possible along p at machine precision.
                return BfgsResult {
                    x,
                    f: fx,
                    grad_norm: gnorm,
                    iters,
                    fevals,
                    converged: gnorm <= opts.gtol,
                };
            }
        }

        let g_new = grad(&x_new);
        let s = &x_new - &x;
        let yv = &g_new - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            // BFGS inverse-Hessian update.
            let rho = 1.0 / sy;
            let hy = &hinv * &yv;
            let yhy = yv.dot(&hy);
            hinv += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        x = x_new;
        fx = f_new;
        g = g_new;
    }

    let gnorm = g.amax();
    BfgsResult {
        x,
        f: fx,
        grad_norm: gnorm,
        iters,
        fevals,
        converged: gnorm <= opts.gtol,
    }
}

/// Runs BFGS from `x0` plus `restarts` random perturbations drawn from a
/// seeded generator, keeping the best objective value found.
pub fn minimize_multistart<F>(
    mut f: F,
    x0: &DVector<f64>,
    restarts: usize,
    spread: f64,
    seed: u64,
    opts: &BfgsOptions,
) -> BfgsResult
where
    F: FnMut(&DVector<f64>) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = minimize_bfgs(&mut f, x0, opts);
    for _ in 0..restarts {
        let start = DVector::from_fn(x0.len(), |i, _| {
            x0[i] + rng.gen_range(-spread..spread)
        });
        let r = minimize_bfgs(&mut f, &start, opts);
        if r.f < best.f {
            best = r;
        }
    }
    best
}
