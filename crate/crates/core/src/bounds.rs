//! Closed-form convergence bounds for averaged low-precision SGD and the
//! noise-floor scaling of plain low-precision SGD.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constant in the fourth-moment noise-ball bound.
pub const CHI: f64 = 44.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    /// Strong convexity.
    pub mu: f64,
    /// Gradient Lipschitz constant.
    pub l: f64,
    /// Hessian Lipschitz constant.
    pub m: f64,
    /// Bound on the stochastic gradient norm.
    pub g: f64,
    /// Gradient-noise standard deviation.
    pub sigma: f64,
    pub d: usize,
    /// Quantization gap.
    pub delta: f64,
    #[serde(default = "default_chi")]
    pub chi: f64,
}

fn default_chi() -> f64 {
    CHI
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// Sum of `terms`.
    pub value: f64,
    pub terms: Vec<Term>,
    pub preconditions_ok: bool,
    /// One line per precondition check, prefixed `ok:` or `violated:`.
    pub reasons: Vec<String>,
}

impl BoundReport {
    fn new(terms: Vec<(&str, f64)>) -> Self {
        let terms: Vec<Term> = terms
            .into_iter()
            .map(|(n, v)| Term {
                name: n.to_string(),
                value: v,
            })
            .collect();
        Self {
            value: terms.iter().map(|t| t.value).sum(),
            terms,
            preconditions_ok: true,
            reasons: Vec::new(),
        }
    }

    /// Record a precondition check.
    pub fn check(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        self.reasons
            .push(format!("{}: {what}", if ok { "ok" } else { "violated" }));
        self.preconditions_ok &= ok;
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name == name).map(|t| t.value)
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be non-negative, got {v}")))
    }
}

/// Mean squared distance of the average after `T` steps on a quadratic:
/// `‖w₀ - w*‖²/(α²μ²T²) + c(α²σ² + δ²d/4)/(α²μ²T)`.
#[allow(clippy::too_many_arguments)]
pub fn thm_quadratic_bound(
    w0_dist_sq: f64,
    alpha: f64,
    mu: f64,
    t: u64,
    c: u64,
    sigma: f64,
    delta: f64,
    d: usize,
) -> Result<BoundReport> {
    non_negative("w0_dist_sq", w0_dist_sq)?;
    positive("alpha", alpha)?;
    positive("mu", mu)?;
    non_negative("sigma", sigma)?;
    non_negative("delta", delta)?;
    if t == 0 || c == 0 || d == 0 {
        return Err(Error::InvalidArgument("T, c and d must be positive".into()));
    }
    let (t, c, d) = (t as f64, c as f64, d as f64);
    let am = alpha * alpha * mu * mu;
    let init = w0_dist_sq / (am * t * t);
    let noise = c * (alpha * alpha * sigma * sigma + delta * delta * d / 4.0) / (am * t);
    let mut r = BoundReport::new(vec![("initial_distance", init), ("noise", noise)]);
    r.check(true, "alpha, mu, T, c > 0");
    Ok(r)
}

/// Adds both readings of the step-size condition on `‖A‖₂`: as written
/// (`α < ½‖A‖₂`) and as the proof needs it (`α < 2/‖A‖₂`).
pub fn quadratic_step_checks(report: &mut BoundReport, alpha: f64, a_norm: f64) {
    report.check(
        alpha < 0.5 * a_norm,
        format!("alpha = {alpha} < ||A||/2 = {}", 0.5 * a_norm),
    );
    report.check(
        alpha < 2.0 / a_norm,
        format!("alpha = {alpha} < 2/||A|| = {}", 2.0 / a_norm),
    );
}

/// `α = δ√d / G`.
pub fn lemma_step_size(delta: f64, d: usize, g: f64) -> Result<f64> {
    positive("delta", delta)?;
    positive("G", g)?;
    if d == 0 {
        return Err(Error::InvalidArgument("d must be positive".into()));
    }
    Ok(delta * (d as f64).sqrt() / g)
}

/// Iterations after which the fourth-moment noise ball applies:
/// `2G/(μδ√d) · log(μ‖w₀ - w*‖² / (44Gδ√d))`, or 0 when the log argument
/// is at most 1.
pub fn lemma_min_iters(g: f64, mu: f64, delta: f64, d: usize, w0_dist_sq: f64) -> Result<f64> {
    positive("G", g)?;
    positive("mu", mu)?;
    positive("delta", delta)?;
    non_negative("w0_dist_sq", w0_dist_sq)?;
    if d == 0 {
        return Err(Error::InvalidArgument("d must be positive".into()));
    }
    let sd = (d as f64).sqrt();
    let arg = mu * w0_dist_sq / (CHI * g * delta * sd);
    if arg <= 1.0 {
        return Ok(0.0);
    }
    Ok(2.0 * g / (mu * delta * sd) * arg.ln())
}

/// `χ²G²δ²d/μ²`, the bound on `E‖w_T - w*‖⁴`.
pub fn lemma_noise_ball(g: f64, delta: f64, d: usize, mu: f64, chi: f64) -> Result<f64> {
    positive("G", g)?;
    positive("delta", delta)?;
    positive("mu", mu)?;
    non_negative("chi", chi)?;
    if d == 0 {
        return Err(Error::InvalidArgument("d must be positive".into()));
    }
    Ok(chi * chi * g * g * delta * delta * d as f64 / (mu * mu))
}

/// Whether `(1 - 2αμ + α²L)² ≤ 1 - 2αμ`.
pub fn lemma_step_condition(alpha: f64, mu: f64, l: f64) -> bool {
    let lhs = 1.0 - 2.0 * alpha * mu + alpha * alpha * l;
    let rhs = 1.0 - 2.0 * alpha * mu;
    rhs >= 0.0 && lhs * lhs <= rhs
}

/// Mean squared distance of the average on a general strongly convex
/// objective: `3χ²M²G²δ²d/μ⁴ + 6G²c/(μ²T) + 528√d·δG³c²/(γμT²)` with
/// `γ = min(α²μ²c², 1)`.
pub fn thm_strongly_convex_bound(k: &ProblemConstants, c: u64, t: u64, alpha: f64) -> Result<BoundReport> {
    positive("mu", k.mu)?;
    positive("G", k.g)?;
    positive("delta", k.delta)?;
    positive("alpha", alpha)?;
    non_negative("M", k.m)?;
    non_negative("chi", k.chi)?;
    if c == 0 || t == 0 || k.d == 0 {
        return Err(Error::InvalidArgument("c, T and d must be positive".into()));
    }
    let (c, t, d) = (c as f64, t as f64, k.d as f64);
    let (g, mu, delta) = (k.g, k.mu, k.delta);
    let gamma = (alpha * alpha * mu * mu * c * c).min(1.0);
    let floor = 3.0 * k.chi * k.chi * k.m * k.m * g * g * delta * delta * d / mu.powi(4);
    let t2 = 6.0 * g * g * c / (mu * mu * t);
    let t3 = 528.0 * d.sqrt() * delta * g.powi(3) * c * c / (gamma * mu * t * t);
    let mut r = BoundReport::new(vec![("floor", floor), ("averaging", t2), ("transient", t3)]);
    r.check(true, "mu, G, delta, alpha, c, T > 0");
    if k.l > 0.0 {
        r.check(
            lemma_step_condition(alpha, mu, k.l),
            format!("(1 - 2 alpha mu + alpha^2 L)^2 <= 1 - 2 alpha mu at alpha = {alpha}"),
        );
    }
    Ok(r)
}

/// `σδ`: the scaling of the low-precision SGD noise floor. The universal
/// constant in front is not computed.
pub fn sgdlp_floor_scale(sigma: f64, delta: f64) -> f64 {
    sigma * delta
}

#[cfg(test)]
mod tests {
    use super::*;

    const D6: f64 = 1.0 / 64.0;

    #[test]
    fn quadratic_bound_example() {
        let r = thm_quadratic_bound(1.0, 0.1, 1.0, 100, 1, 1.0, D6, 16).unwrap();
        assert!((r.term("initial_distance").unwrap() - 0.01).abs() < 1e-15);
        assert!((r.term("noise").unwrap() - 0.0109765625).abs() < 1e-15);
        assert!((r.value - 0.0209765625).abs() < 1e-15);
        assert_eq!(r.value, r.terms.iter().map(|t| t.value).sum::<f64>());
    }

    #[test]
    fn quadratic_bound_scaling_and_limits() {
        let a = thm_quadratic_bound(2.0, 0.05, 0.5, 1000, 3, 0.7, D6, 8).unwrap();
        let b = thm_quadratic_bound(2.0, 0.05, 0.5, 10_000, 3, 0.7, D6, 8).unwrap();
        let r1 = a.terms[0].value / b.terms[0].value;
        let r2 = a.terms[1].value / b.terms[1].value;
        assert!((r1 - 100.0).abs() < 1e-9 && (r2 - 10.0).abs() < 1e-9);
        let z = thm_quadratic_bound(2.0, 0.05, 0.5, 1000, 3, 0.0, 0.0, 8).unwrap();
        assert_eq!(z.value, 2.0 / (0.05f64.powi(2) * 0.25 * 1e6));
        assert!(thm_quadratic_bound(1.0, 0.0, 1.0, 1, 1, 0.0, 0.0, 1).is_err());
        assert!(thm_quadratic_bound(1.0, 0.1, -1.0, 1, 1, 0.0, 0.0, 1).is_err());
        assert!(thm_quadratic_bound(1.0, 0.1, 1.0, 0, 1, 0.0, 0.0, 1).is_err());
    }

    #[test]
    fn step_checks_record_both_readings() {
        let mut r = thm_quadratic_bound(1.0, 0.1, 1.0, 10, 1, 0.0, 0.0, 1).unwrap();
        quadratic_step_checks(&mut r, 0.1, 1.0);
        assert!(r.preconditions_ok);
        assert_eq!(r.reasons.len(), 3);
        quadratic_step_checks(&mut r, 0.1, 0.1);
        assert!(!r.preconditions_ok);
    }

    #[test]
    fn lemma_step_size_examples() {
        assert_eq!(lemma_step_size(D6, 256, 2.0).unwrap(), 0.125);
        assert_eq!(lemma_step_size(1.0, 1, 1.0).unwrap(), 1.0);
        let a = lemma_step_size(0.1, 9, 3.0).unwrap();
        assert!((lemma_step_size(0.1, 36, 3.0).unwrap() - 2.0 * a).abs() < 1e-15);
        assert!(lemma_step_size(0.0, 1, 1.0).is_err());
    }

    #[test]
    fn lemma_min_iters_examples() {
        // log argument exactly 1
        let w0 = 44.0 * D6;
        assert_eq!(lemma_min_iters(1.0, 1.0, D6, 1, w0).unwrap(), 0.0);
        let w0 = 44.0 * D6 * std::f64::consts::E;
        assert!((lemma_min_iters(1.0, 1.0, D6, 1, w0).unwrap() - 128.0).abs() < 1e-9);
        assert!(lemma_min_iters(1.0, 0.0, D6, 1, w0).is_err());
        // prefactor halves when delta doubles (log argument held fixed)
        let a = lemma_min_iters(1.0, 1.0, D6, 1, 44.0 * D6 * 10.0).unwrap();
        let b = lemma_min_iters(1.0, 1.0, 2.0 * D6, 1, 88.0 * D6 * 10.0).unwrap();
        assert!((a / b - 2.0).abs() < 1e-12);
    }

    #[test]
    fn noise_ball_examples() {
        assert_eq!(lemma_noise_ball(1.0, D6, 4, 1.0, CHI).unwrap(), 1.890625);
        assert_eq!(lemma_noise_ball(1.0, D6 / 2.0, 4, 1.0, CHI).unwrap(), 1.890625 / 4.0);
        assert_eq!(lemma_noise_ball(1.0, D6, 4, 1.0, 0.0).unwrap(), 0.0);
    }

    fn consts(m: f64, delta: f64) -> ProblemConstants {
        ProblemConstants {
            mu: 1.0,
            l: 0.0,
            m,
            g: 1.0,
            sigma: 1.0,
            d: 1,
            delta,
            chi: CHI,
        }
    }

    #[test]
    fn strongly_convex_bound() {
        let r = thm_strongly_convex_bound(&consts(0.0, 1.0 / 16.0), 1, 1000, 0.1).unwrap();
        assert_eq!(r.term("floor"), Some(0.0));
        // the floor constant is 3·44² = 5808
        let k = consts(1.0, 1.0 / 16.0);
        let r = thm_strongly_convex_bound(&k, 1, 1_000_000, 1.0 / 16.0).unwrap();
        assert!((r.term("floor").unwrap() - 5808.0 / 256.0).abs() < 1e-12);
        assert!(r.term("floor").unwrap() > 1e3 * (r.term("averaging").unwrap() + r.term("transient").unwrap()));
        let far = thm_strongly_convex_bound(&k, 1, u64::MAX / 2, 1.0 / 16.0).unwrap();
        assert!((far.value - 5808.0 / 256.0).abs() < 1e-9);
        let r = thm_strongly_convex_bound(&consts(1.0, 1.0 / 256.0), 1, 1_000_000, 1.0 / 256.0).unwrap();
        assert!((r.term("floor").unwrap() - 5808.0 / 65536.0).abs() < 1e-15);
        // gamma saturates at 1
        let a = thm_strongly_convex_bound(&k, 10, 1000, 1.0).unwrap();
        let expected = 528.0 * 1.0 / 16.0 * 100.0 / 1e6;
        assert!((a.term("transient").unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn strongly_convex_step_condition() {
        let mut k = consts(1.0, 0.1);
        k.l = 1.0;
        assert!(thm_strongly_convex_bound(&k, 1, 10, 0.1).unwrap().preconditions_ok);
        k.l = 100.0;
        assert!(!thm_strongly_convex_bound(&k, 1, 10, 0.1).unwrap().preconditions_ok);
    }

    #[test]
    fn floor_scale() {
        assert_eq!(sgdlp_floor_scale(1.0, D6), 0.015625);
        assert_eq!(sgdlp_floor_scale(1.0, 2.0 * D6), 2.0 * 0.015625);
        assert_eq!(sgdlp_floor_scale(0.0, D6), 0.0);
    }
}
