//! Full-batch gradient descent with Armijo backtracking.
//!
//! Each iteration starts from a Barzilai-Borwein trial step and halves it
//! until the sufficient-decrease condition holds, so every accepted step
//! lowers the objective.

#[derive(Debug, Clone, Copy)]
pub(crate) struct DescentConfig {
    pub max_iters: usize,
    /// Stop when the gradient's infinity norm falls below this.
    pub tolerance: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo_c: f64,
    pub max_halvings: usize,
}

impl Default for DescentConfig {
    fn default() -> Self {
        DescentConfig {
            max_iters: 10_000,
            tolerance: 1e-8,
            armijo_c: 1e-4,
            max_halvings: 60,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct DescentOutcome {
    pub x: Vec<f64>,
    pub loss: f64,
    pub initial_loss: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    /// Objective value after every accepted step, starting with the initial value.
    #[allow(dead_code)]
    pub trace: Vec<f64>,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, g| m.max(g.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `objective`, which returns `(value, gradient)` at a point.
pub(crate) fn minimize<F>(objective: F, x0: Vec<f64>, config: &DescentConfig) -> DescentOutcome
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0;
    let (mut f, mut g) = objective(&x);
    let initial_loss = f;
    let mut trace = vec![f];
    let mut step = 1.0;
    let mut iterations = 0;
    let mut converged = inf_norm(&g) < config.tolerance;

    while !converged && iterations < config.max_iters {
        let g_sq = dot(&g, &g);
        let mut t = step;
        let mut accepted = None;
        for _ in 0..=config.max_halvings {
            let candidate: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - t * gi).collect();
            let (fc, gc) = objective(&candidate);
            if fc.is_finite() && fc <= f - config.armijo_c * t * g_sq {
                accepted = Some((candidate, fc, gc));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            // no decrease representable at this precision
            break;
        };
        iterations += 1;

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        step = if sy > 0.0 { dot(&s, &s) / sy } else { t * 2.0 };
        step = step.clamp(1e-10, 1e10);

        x = x_new;
        f = f_new;
        g = g_new;
        trace.push(f);
        converged = inf_norm(&g) < config.tolerance;
    }

    DescentOutcome {
        grad_norm: inf_norm(&g),
        x,
        loss: f,
        initial_loss,
        iterations,
        converged,
        trace,
    }
}
