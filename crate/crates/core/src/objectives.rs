//! Bounded surrogate loss and the training objectives built on it.
//!
//! The cross-entropy is computed on probabilities floored at `p_min` and then
//! divided by `ln(1/p_min)`, which puts it in `[0, 1]` as the bounds require.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-example loss: rescaled clamped cross-entropy, zero-one loss, and the
/// gradient of the surrogate with respect to the pre-softmax scores.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub surrogate: f64,
    pub zero_one: f64,
    pub grad_scores: Vec<f64>,
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn bounded_xent(probs: &[f64], label: usize, p_min: f64) -> Result<LossValue> {
    if label >= probs.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    if !(p_min > 0.0 && p_min < 1.0) {
        return Err(Error::invalid(format!("p_min must lie in (0,1), got {p_min}")));
    }
    let scale = 1.0 / (1.0 / p_min).ln();
    let p = probs[label];
    let zero_one = if argmax(probs) == label { 0.0 } else { 1.0 };
    if p <= p_min {
        return Ok(LossValue {
            surrogate: 1.0,
            zero_one,
            grad_scores: vec![0.0; probs.len()],
        });
    }
    // d(-ln p_y)/d score_k = p_k - [k == y]
    let grad_scores = probs
        .iter()
        .enumerate()
        .map(|(k, &pk)| scale * (pk - if k == label { 1.0 } else { 0.0 }))
        .collect();
    Ok(LossValue {
        surrogate: (-p.ln() * scale).clamp(0.0, 1.0),
        zero_one,
        grad_scores,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    /// Quadratic PAC-Bayes bound.
    Quad,
    /// PAC-Bayes-λ bound, minimized alternately over λ.
    Lambda,
    /// Bayes-by-backprop: risk plus `eta * KL / n`.
    Bbb,
    /// Empirical risk only (deterministic SGD baseline).
    Erm,
}

impl ObjectiveKind {
    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Quad => "quad",
            ObjectiveKind::Lambda => "lambda",
            ObjectiveKind::Bbb => "bbb",
            ObjectiveKind::Erm => "erm",
        }
    }
}

impl std::str::FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "quad" | "pb_quad" => Ok(ObjectiveKind::Quad),
            "lambda" | "pb_lambda" => Ok(ObjectiveKind::Lambda),
            "bbb" => Ok(ObjectiveKind::Bbb),
            "erm" | "sgd" => Ok(ObjectiveKind::Erm),
            other => Err(Error::invalid(format!("unknown objective '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    pub delta: f64,
    /// KL weight for [`ObjectiveKind::Bbb`].
    pub eta: f64,
    /// Training-set size.
    pub n: usize,
    /// Current λ for [`ObjectiveKind::Lambda`].
    pub lambda: f64,
}

impl ObjectiveConfig {
    pub fn new(kind: ObjectiveKind, n: usize, delta: f64) -> Self {
        ObjectiveConfig {
            kind,
            delta,
            eta: 1.0,
            n,
            lambda: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0,1), got {}", self.delta)));
        }
        if self.n == 0 {
            return Err(Error::invalid("training-set size must be positive"));
        }
        match self.kind {
            ObjectiveKind::Lambda => check_lambda(self.lambda),
            ObjectiveKind::Bbb if !(self.eta > 0.0) => {
                Err(Error::invalid(format!("eta must be positive, got {}", self.eta)))
            }
            _ => Ok(()),
        }
    }
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda < 2.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("lambda must lie in (0,2), got {lambda}")))
    }
}

/// `ln(2√n/δ)`, the confidence term shared by every bound.
pub fn log_confidence_term(n: usize, delta: f64) -> f64 {
    (2.0 * (n as f64).sqrt() / delta).ln()
}

/// `(KL + ln(2√n/δ)) / n`.
pub fn complexity(kl: f64, n: usize, delta: f64) -> f64 {
    (kl + log_confidence_term(n, delta)) / n as f64
}

pub(crate) fn quad_value(emp: f64, complexity: f64) -> f64 {
    let half = complexity / 2.0;
    let s = (emp + half).sqrt() + half.sqrt();
    s * s
}

pub(crate) fn lambda_value(emp: f64, complexity: f64, lambda: f64) -> f64 {
    let shrink = 1.0 - lambda / 2.0;
    emp / shrink + complexity / (lambda * shrink)
}

pub fn objective_value(cfg: &ObjectiveConfig, emp_surrogate: f64, kl: f64) -> Result<f64> {
    cfg.validate()?;
    let n = cfg.n;
    Ok(match cfg.kind {
        ObjectiveKind::Quad => quad_value(emp_surrogate, complexity(kl, n, cfg.delta)),
        ObjectiveKind::Lambda => {
            lambda_value(emp_surrogate, complexity(kl, n, cfg.delta), cfg.lambda)
        }
        ObjectiveKind::Bbb => emp_surrogate + cfg.eta * kl / n as f64,
        ObjectiveKind::Erm => emp_surrogate,
    })
}

/// `(∂f/∂L̂, ∂f/∂KL)` for the configured objective.
pub fn objective_coefficients(
    cfg: &ObjectiveConfig,
    emp_surrogate: f64,
    kl: f64,
) -> Result<(f64, f64)> {
    cfg.validate()?;
    let n = cfg.n as f64;
    Ok(match cfg.kind {
        ObjectiveKind::Quad => {
            let half = complexity(kl, cfg.n, cfg.delta) / 2.0;
            let s1 = (emp_surrogate + half).sqrt();
            let s2 = half.sqrt();
            // f = (s1 + s2)^2 with s1 = √(L̂ + B/2), s2 = √(B/2), ∂B/∂KL = 1/n
            let c_risk = 1.0 + s2 / s1;
            let c_kl = (s1 + s2) * (s1 + s2) / (s1 * s2) / (2.0 * n);
            (c_risk, c_kl)
        }
        ObjectiveKind::Lambda => {
            let shrink = 1.0 - cfg.lambda / 2.0;
            (1.0 / shrink, 1.0 / (n * cfg.lambda * shrink))
        }
        ObjectiveKind::Bbb => (1.0, cfg.eta / n),
        ObjectiveKind::Erm => (1.0, 0.0),
    })
}

/// `∂f_lamb/∂λ` at fixed `(L̂, KL)`.
pub fn lambda_gradient(emp_surrogate: f64, kl: f64, n: usize, delta: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    let b = complexity(kl, n, delta);
    let shrink = 1.0 - lambda / 2.0;
    let denom = lambda * shrink;
    Ok(0.5 * emp_surrogate / (shrink * shrink) - b * (1.0 - lambda) / (denom * denom))
}

/// Minimizer of `f_lamb` over λ: the positive root of `(L̂/2)λ² + Bλ − B = 0`.
pub fn optimal_lambda(emp_surrogate: f64, complexity: f64) -> f64 {
    if emp_surrogate <= 0.0 {
        return 1.0;
    }
    let b = complexity;
    // (√(B² + 2BL̂) − B)/L̂ rewritten to avoid cancellation when L̂ ≪ B
    2.0 * b / ((b * b + 2.0 * b * emp_surrogate).sqrt() + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cfg(kind: ObjectiveKind) -> ObjectiveConfig {
        ObjectiveConfig::new(kind, 10_000, 0.05)
    }

    #[test]
    fn xent_reference_values() {
        let v = bounded_xent(&[0.0, 1.0, 0.0], 1, 1e-4).unwrap();
        assert_eq!(v.surrogate, 0.0);
        assert_eq!(v.zero_one, 0.0);
        let v = bounded_xent(&[0.9, 0.1], 1, 1e-2).unwrap();
        assert_relative_eq!(v.surrogate, 0.5, max_relative = 1e-14);
        assert_eq!(v.zero_one, 1.0);
        let v = bounded_xent(&[0.99995, 0.00005], 1, 1e-4).unwrap();
        assert_eq!(v.surrogate, 1.0);
        assert!(v.grad_scores.iter().all(|&g| g == 0.0));
        assert!(bounded_xent(&[0.5, 0.5], 2, 1e-2).is_err());
    }

    #[test]
    fn ties_go_to_the_lowest_index() {
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(bounded_xent(&[0.5, 0.5], 0, 1e-2).unwrap().zero_one, 0.0);
        assert_eq!(bounded_xent(&[0.5, 0.5], 1, 1e-2).unwrap().zero_one, 1.0);
    }

    #[test]
    fn xent_gradient_matches_softmax_differences() {
        let scores = [0.3, -1.1, 0.8, 0.05];
        let softmax = |s: &[f64]| {
            let m = s.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|x| x / z).collect::<Vec<_>>()
        };
        let g = bounded_xent(&softmax(&scores), 2, 1e-3).unwrap().grad_scores;
        let h = 1e-6;
        for k in 0..4 {
            let mut p = scores;
            let mut m = scores;
            p[k] += h;
            m[k] -= h;
            let fd = (bounded_xent(&softmax(&p), 2, 1e-3).unwrap().surrogate
                - bounded_xent(&softmax(&m), 2, 1e-3).unwrap().surrogate)
                / (2.0 * h);
            assert_relative_eq!(g[k], fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn objective_reference_values() {
        assert_relative_eq!(log_confidence_term(10_000, 0.05), 8.294_05, epsilon = 1e-5);
        let quad = objective_value(&cfg(ObjectiveKind::Quad), 0.1, 100.0).unwrap();
        assert_relative_eq!(quad, 0.158_612, epsilon = 1e-6);
        let lam = objective_value(&cfg(ObjectiveKind::Lambda), 0.1, 100.0).unwrap();
        assert_relative_eq!(lam, 0.221_659, epsilon = 1e-6);
        let mut bbb = cfg(ObjectiveKind::Bbb);
        bbb.eta = 123.0;
        assert_eq!(objective_value(&bbb, 0.1, 0.0).unwrap(), 0.1);
    }

    #[test]
    fn lambda_outside_range_is_rejected() {
        let mut c = cfg(ObjectiveKind::Lambda);
        for bad in [0.0, 2.0, -0.5, 3.0] {
            c.lambda = bad;
            assert!(objective_value(&c, 0.1, 1.0).is_err());
            assert!(lambda_gradient(0.1, 1.0, 100, 0.05, bad).is_err());
        }
    }

    #[test]
    fn coefficient_reference_values() {
        let (r, k) = objective_coefficients(&cfg(ObjectiveKind::Lambda), 0.3, 5.0).unwrap();
        assert_relative_eq!(r, 2.0);
        assert_relative_eq!(k, 2.0 / 10_000.0);
        let mut bbb = ObjectiveConfig::new(ObjectiveKind::Bbb, 50_000, 0.05);
        bbb.eta = 1e-5;
        let (r, k) = objective_coefficients(&bbb, 0.3, 5.0).unwrap();
        assert_eq!(r, 1.0);
        assert_relative_eq!(k, 2e-10, max_relative = 1e-12);
    }

    fn fd(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn quad_coefficients_match_finite_differences() {
        let c = cfg(ObjectiveKind::Quad);
        for &(emp, kl) in &[(0.1, 100.0), (0.02, 3000.0), (0.5, 1.0), (0.9, 50.0)] {
            let (cr, ck) = objective_coefficients(&c, emp, kl).unwrap();
            let fr = fd(|x| objective_value(&c, x, kl).unwrap(), emp, 1e-6);
            let fk = fd(|x| objective_value(&c, emp, x).unwrap(), kl, 1e-3);
            assert_relative_eq!(cr, fr, max_relative = 1e-6);
            assert_relative_eq!(ck, fk, max_relative = 1e-6);
        }
    }

    #[test]
    fn lambda_gradient_vanishes_at_the_closed_form_minimizer() {
        for &(emp, kl, n) in &[(0.1, 100.0, 10_000), (0.3, 5000.0, 60_000), (0.01, 10.0, 500)] {
            let b = complexity(kl, n, 0.05);
            let star = optimal_lambda(emp, b);
            let naive = ((b * b + 2.0 * b * emp).sqrt() - b) / emp;
            assert_relative_eq!(star, naive, max_relative = 1e-9);
            assert!(lambda_gradient(emp, kl, n, 0.05, star).unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn lambda_gradient_diverges_near_zero() {
        assert!(lambda_gradient(0.1, 100.0, 10_000, 0.05, 1e-8).unwrap() < -1e10);
    }

    #[test]
    fn lambda_gradient_matches_finite_differences() {
        for &(emp, kl, lam) in &[(0.1, 100.0, 0.7), (0.4, 10.0, 1.5), (0.05, 900.0, 0.2)] {
            let c = cfg(ObjectiveKind::Lambda);
            let g = lambda_gradient(emp, kl, c.n, c.delta, lam).unwrap();
            let f = |x: f64| objective_value(&ObjectiveConfig { lambda: x, ..c }, emp, kl).unwrap();
            assert_relative_eq!(g, fd(f, lam, 1e-6), max_relative = 1e-6);
        }
    }

    proptest! {
        #[test]
        fn surrogate_stays_in_unit_interval(
            raw in prop::collection::vec(0.0f64..1.0, 2..12),
            label_seed in 0usize..1000,
            p_min_exp in 1.0f64..16.0,
        ) {
            let z: f64 = raw.iter().sum::<f64>().max(1e-300);
            let probs: Vec<f64> = raw.iter().map(|r| r / z).collect();
            let v = bounded_xent(&probs, label_seed % probs.len(), 10f64.powf(-p_min_exp)).unwrap();
            prop_assert!((0.0..=1.0).contains(&v.surrogate));
        }

        #[test]
        fn objectives_are_monotone(
            emp in 0.0f64..1.0, d_emp in 0.0f64..0.5, kl in 0.0f64..1e4, d_kl in 0.0f64..1e3,
            lam in 0.01f64..1.99,
        ) {
            for kind in [ObjectiveKind::Quad, ObjectiveKind::Lambda, ObjectiveKind::Bbb] {
                let mut c = cfg(kind);
                c.lambda = lam;
                c.eta = 0.1;
                let base = objective_value(&c, emp, kl).unwrap();
                prop_assert!(objective_value(&c, emp + d_emp, kl).unwrap() >= base);
                prop_assert!(objective_value(&c, emp, kl + d_kl).unwrap() >= base);
            }
        }

        #[test]
        fn coefficients_predict_first_order_change(
            emp in 0.01f64..1.0, kl in 0.0f64..1e4, lam in 0.05f64..1.95,
        ) {
            for kind in [ObjectiveKind::Quad, ObjectiveKind::Lambda, ObjectiveKind::Bbb] {
                let mut c = cfg(kind);
                c.lambda = lam;
                let (cr, ck) = objective_coefficients(&c, emp, kl).unwrap();
                let (de, dk) = (1e-6, 1e-3);
                let actual = objective_value(&c, emp + de, kl + dk).unwrap()
                    - objective_value(&c, emp, kl).unwrap();
                let predicted = cr * de + ck * dk;
                prop_assert!((actual - predicted).abs() <= 1e-3 * predicted.abs() + 1e-12);
            }
        }

        #[test]
        fn lambda_minimum_equals_quad(
            emp in 0.0f64..1.0, kl in 0.0f64..1e4, log_n in 2.0f64..6.0, delta in 0.001f64..0.999,
        ) {
            let n = 10f64.powf(log_n) as usize;
            let b = complexity(kl, n, delta);
            let quad = quad_value(emp, b);
            let best = lambda_value(emp, b, optimal_lambda(emp, b));
            prop_assert!((quad - best).abs() <= 1e-8 * quad.max(1.0));
        }
    }
}
