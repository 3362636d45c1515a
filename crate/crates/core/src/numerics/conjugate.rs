//! Conjugate-moment matching for the Beta (logistic link) and Gamma (log
//! link) priors of the non-normal DGLM families.
//!
//! The forward maps take conjugate hyper-parameters to the mean and variance
//! of the linear predictor; the solvers invert them with Newton-Raphson.

use serde::{Deserialize, Serialize};

use super::special::{psi, psi1, psi2};
use crate::error::{Error, Result};

/// Hyper-parameters (α, β) of a Beta or Gamma (rate β) distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConjugateParams {
    pub alpha: f64,
    pub beta: f64,
}

impl ConjugateParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite() && alpha > 0.0 && beta > 0.0) {
            return Err(Error::Domain(format!(
                "conjugate parameters must be finite and positive, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }
}

/// Prior mean `f` and variance `q` of a linear predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorMoments {
    pub f: f64,
    pub q: f64,
}

impl PredictorMoments {
    pub fn new(f: f64, q: f64) -> Result<Self> {
        if !f.is_finite() || !q.is_finite() || q <= 0.0 {
            return Err(Error::Domain(format!(
                "predictor moments need finite f and q > 0, got f={f}, q={q}"
            )));
        }
        Ok(Self { f, q })
    }
}

/// Newton-Raphson stopping rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Maximum absolute residual accepted on each moment equation.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 100,
        }
    }
}

/// Moments of log(μ) under μ ~ Gamma(α, rate β): (ψ(α) − log β, ψ′(α)).
pub fn gamma_moments(params: ConjugateParams) -> PredictorMoments {
    PredictorMoments {
        f: psi(params.alpha) - params.beta.ln(),
        q: psi1(params.alpha),
    }
}

/// Moments of logit(π) under π ~ Beta(α, β): (ψ(α) − ψ(β), ψ′(α) + ψ′(β)).
pub fn beta_moments(params: ConjugateParams) -> PredictorMoments {
    PredictorMoments {
        f: psi(params.alpha) - psi(params.beta),
        q: psi1(params.alpha) + psi1(params.beta),
    }
}

pub fn solve_gamma_from_moments(moments: PredictorMoments) -> Result<ConjugateParams> {
    solve_gamma_with(moments, SolverOptions::default())
}

/// Solves ψ′(α) = q for α, then sets β = exp(ψ(α) − f).
pub fn solve_gamma_with(moments: PredictorMoments, opts: SolverOptions) -> Result<ConjugateParams> {
    let PredictorMoments { f, q } = PredictorMoments::new(moments.f, moments.q)?;
    // ψ′(α) > 1/α, so this start lies left of the root; ψ′ is convex and
    // decreasing, which makes the Newton iterates increase monotonically.
    let mut alpha = (1.0 / q).max(1e-3);
    let inner_tol = opts.tolerance * 1e-3;
    let mut converged = false;
    for _ in 0..opts.max_iterations {
        let resid = psi1(alpha) - q;
        if resid.abs() <= inner_tol * q.max(1.0) {
            converged = true;
            break;
        }
        let mut step = resid / psi2(alpha);
        while alpha - step <= 0.0 {
            step *= 0.5;
        }
        let next = alpha - step;
        if (next - alpha).abs() <= f64::EPSILON * alpha {
            alpha = next;
            converged = true;
            break;
        }
        alpha = next;
    }
    let beta = (psi(alpha) - f).exp();
    let params = ConjugateParams { alpha, beta };
    let check = gamma_moments(params);
    if !converged
        || !beta.is_finite()
        || beta <= 0.0
        || (check.q - q).abs() > opts.tolerance
        || (check.f - f).abs() > opts.tolerance
    {
        return Err(Error::SolverFailure {
            iterations: opts.max_iterations,
            alpha,
            beta,
        });
    }
    Ok(params)
}

pub fn solve_beta_from_moments(moments: PredictorMoments) -> Result<ConjugateParams> {
    solve_beta_with(moments, SolverOptions::default())
}

/// Two-dimensional Newton-Raphson on ψ(α) − ψ(β) = f, ψ′(α) + ψ′(β) = q
/// with the analytic (tetragamma) Jacobian.
pub fn solve_beta_with(moments: PredictorMoments, opts: SolverOptions) -> Result<ConjugateParams> {
    let PredictorMoments { f, q } = PredictorMoments::new(moments.f, moments.q)?;
    // Moment heuristic: q ≈ 1/α + 1/β and f ≈ log(α/β). Reduces to
    // α = β = 2/q at f = 0.
    let mut alpha = (1.0 + f.exp()) / q;
    let mut beta = (1.0 + (-f).exp()) / q;
    let residual = |a: f64, b: f64| (psi(a) - psi(b) - f, psi1(a) + psi1(b) - q);
    let norm = |r: (f64, f64)| r.0.abs() + r.1.abs();
    let inner_tol = opts.tolerance * 1e-2;
    let mut r = residual(alpha, beta);
    let mut converged = false;
    for _ in 0..opts.max_iterations {
        if r.0.abs() <= inner_tol && r.1.abs() <= inner_tol {
            converged = true;
            break;
        }
        let (j11, j12) = (psi1(alpha), -psi1(beta));
        let (j21, j22) = (psi2(alpha), psi2(beta));
        let det = j11 * j22 - j12 * j21;
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let mut da = (j22 * r.0 - j12 * r.1) / det;
        let mut db = (-j21 * r.0 + j11 * r.1) / det;
        while alpha - da <= 0.0 || beta - db <= 0.0 {
            da *= 0.5;
            db *= 0.5;
        }
        // Backtrack until the residual does not grow.
        let current = norm(r);
        let mut accepted = false;
        for _ in 0..40 {
            let cand = residual(alpha - da, beta - db);
            if norm(cand) <= current || !current.is_finite() {
                alpha -= da;
                beta -= db;
                r = cand;
                accepted = true;
                break;
            }
            da *= 0.5;
            db *= 0.5;
        }
        if !accepted {
            // Stalled at the floating-point floor.
            converged = r.0.abs() <= opts.tolerance && r.1.abs() <= opts.tolerance;
            break;
        }
    }
    if !converged || r.0.abs() > opts.tolerance || r.1.abs() > opts.tolerance {
        return Err(Error::SolverFailure {
            iterations: opts.max_iterations,
            alpha,
            beta,
        });
    }
    Ok(ConjugateParams { alpha, beta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gamma_unit_solution() {
        let p = solve_gamma_from_moments(PredictorMoments {
            f: -0.577_215_664_9,
            q: 1.644_934_066_8,
        })
        .unwrap();
        assert_abs_diff_eq!(p.alpha, 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(p.beta, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn gamma_round_trip_ten_two() {
        let target = ConjugateParams { alpha: 10.0, beta: 2.0 };
        let p = solve_gamma_from_moments(gamma_moments(target)).unwrap();
        assert_abs_diff_eq!(p.alpha, 10.0, epsilon = 1e-6);
        assert_abs_diff_eq!(p.beta, 2.0, epsilon = 1e-6);
    }

    #[test]
    fn beta_unit_solution() {
        let p = solve_beta_from_moments(PredictorMoments {
            f: 0.0,
            q: 3.289_868_133_7,
        })
        .unwrap();
        assert_abs_diff_eq!(p.alpha, 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(p.beta, 1.0, epsilon = 1e-7);
    }

    #[test]
    fn beta_round_trip_asymmetric() {
        let target = ConjugateParams { alpha: 5.0, beta: 0.5 };
        let p = solve_beta_from_moments(beta_moments(target)).unwrap();
        assert_abs_diff_eq!(p.alpha, 5.0, epsilon = 1e-6);
        assert_abs_diff_eq!(p.beta, 0.5, epsilon = 1e-6);
    }

    #[test]
    fn beta_sign_symmetry() {
        let a = solve_beta_from_moments(PredictorMoments { f: 1.3, q: 0.7 }).unwrap();
        let b = solve_beta_from_moments(PredictorMoments { f: -1.3, q: 0.7 }).unwrap();
        assert_abs_diff_eq!(a.alpha, b.beta, epsilon = 1e-8 * a.alpha.max(1.0));
        assert_abs_diff_eq!(a.beta, b.alpha, epsilon = 1e-8 * a.beta.max(1.0));
    }

    #[test]
    fn extreme_logit_prior() {
        let m = PredictorMoments { f: -30.0, q: 1.0 };
        let p = solve_beta_from_moments(m).unwrap();
        let back = beta_moments(p);
        assert_abs_diff_eq!(back.f, m.f, epsilon = 1e-8);
        assert_abs_diff_eq!(back.q, m.q, epsilon = 1e-8);
    }

    #[test]
    fn rejects_non_positive_variance() {
        assert!(matches!(
            solve_gamma_from_moments(PredictorMoments { f: 0.0, q: 0.0 }),
            Err(Error::Domain(_))
        ));
        assert!(solve_beta_from_moments(PredictorMoments { f: 0.0, q: -1.0 }).is_err());
    }

    #[test]
    fn iteration_cap_reports_last_iterate() {
        let opts = SolverOptions {
            tolerance: 1e-8,
            max_iterations: 1,
        };
        let err = solve_gamma_with(PredictorMoments { f: 0.0, q: 1e-3 }, opts).unwrap_err();
        assert!(matches!(err, Error::SolverFailure { .. }));
    }
}
