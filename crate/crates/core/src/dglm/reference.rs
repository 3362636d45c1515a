use nalgebra::{DMatrix, DVector};

use super::{DglmSpec, StateMoments, VolatilityState};
use crate::error::{Error, Result};

/// A component held out of the regression with a given prior.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedComponent {
    pub name: String,
    pub mean: f64,
    pub variance: f64,
}

impl FixedComponent {
    pub fn new(name: &str, mean: f64, variance: f64) -> Self {
        Self {
            name: name.to_string(),
            mean,
            variance,
        }
    }
}

/// Prior moments from a least-squares fit of `y` on the regression vectors
/// of a training window.
///
/// Each observation is `(offset, F, y)` where `offset` counts days from the
/// start of the window. The fit is done for the state at offset 0 using the
/// rows F′Gᵗ, then propagated to offset `at` by G^at. Regressors that never
/// vary from zero, or constant columns duplicating an earlier constant
/// column, are dropped and get mean 0 and variance 1, as does any column
/// whose inclusion leaves the cross-product matrix singular.
pub fn reference_prior(
    spec: &DglmSpec,
    observations: &[(usize, DVector<f64>, f64)],
    at: usize,
    fixed: &[FixedComponent],
) -> Result<(StateMoments, VolatilityState)> {
    let n = spec.state_dim();
    if observations.is_empty() {
        return Err(Error::EmptyInput("training observations".into()));
    }
    let horizon = observations.iter().map(|o| o.0).max().unwrap_or(0).max(at);
    let g = spec.evolution_matrix();
    let mut powers = Vec::with_capacity(horizon + 1);
    powers.push(DMatrix::<f64>::identity(n, n));
    for t in 1..=horizon {
        let next = g * &powers[t - 1];
        powers.push(next);
    }

    let mut mean0 = DVector::zeros(n);
    let mut var0 = DVector::from_element(n, 1.0);
    let mut free = vec![true; n];
    for fc in fixed {
        let coords = spec.coords_named(&fc.name);
        if coords.is_empty() {
            return Err(Error::Config(format!("unknown component {}", fc.name)));
        }
        for i in coords {
            free[i] = false;
            mean0[i] = fc.mean;
            var0[i] = fc.variance;
        }
    }

    let rows = observations.len();
    let mut x = DMatrix::zeros(rows, n);
    let mut y = DVector::zeros(rows);
    for (r, (offset, f, obs)) in observations.iter().enumerate() {
        if f.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: f.len(),
            });
        }
        let row = powers[*offset].transpose() * f;
        x.set_row(r, &row.transpose());
        y[r] = *obs;
    }
    for i in (0..n).filter(|&i| !free[i]) {
        y -= x.column(i) * mean0[i];
    }

    let mut kept: Vec<usize> = Vec::new();
    let mut have_constant = false;
    for i in (0..n).filter(|&i| free[i]) {
        let col = x.column(i);
        let scale = col.amax();
        if scale < 1e-12 {
            continue;
        }
        let constant = col.iter().all(|v| (v - col[0]).abs() <= 1e-12 * scale);
        if constant {
            if have_constant {
                continue;
            }
            have_constant = true;
        }
        kept.push(i);
    }

    let fit = loop {
        if kept.is_empty() {
            break None;
        }
        if kept.len() < rows {
            let xk = x.select_columns(&kept);
            let xtx = xk.transpose() * &xk;
            if let Some(chol) = xtx.cholesky() {
                let inv = chol.inverse();
                let beta = &inv * (xk.transpose() * &y);
                let resid = &y - &xk * &beta;
                let dof = (rows - kept.len()) as f64;
                let diag_ok = inv.diagonal().iter().all(|d| d.is_finite() && *d < 1e8);
                if diag_ok {
                    break Some((beta, inv, dof, resid.dot(&resid) / dof));
                }
            }
        }
        kept.pop();
    };

    let mut c0 = DMatrix::from_diagonal(&var0);
    let vol = match fit {
        Some((beta, inv, dof, rss)) => {
            let s = rss.max(1e-6);
            for (a, &i) in kept.iter().enumerate() {
                mean0[i] = beta[a];
                for (b, &j) in kept.iter().enumerate() {
                    c0[(i, j)] = s * inv[(a, b)];
                }
            }
            VolatilityState { n: dof, s }
        }
        None => {
            let var = if rows > 1 { y.variance() * rows as f64 / (rows - 1) as f64 } else { 1.0 };
            VolatilityState {
                n: (rows.max(2) - 1) as f64,
                s: var.max(1e-6),
            }
        }
    };
    let p = &powers[at];
    let m = p * mean0;
    let c = p * c0 * p.transpose();
    Ok((StateMoments::new(m, (&c + c.transpose()) * 0.5)?, vol))
}
