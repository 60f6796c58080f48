//! PAC-Bayes risk certificates.
//!
//! Three upper bounds on the risk of the randomized predictor are computed
//! from the same inputs `(L̂, KL, n, δ)`:
//!
//! * `pbkl`: the binary-kl inversion `sup{p : kl(L̂‖p) ≤ (KL + ln(2√n/δ))/n}`,
//! * `quad`: the closed form obtained by relaxing kl with `(p − L̂)²/(2p)`,
//! * `lambda`: the λ-parameterized relaxation, reported at its minimizing λ.
//!
//! `pbkl ≤ quad ≤ lambda(λ)` for every λ. The empirical term `L̂` is itself
//! a Monte-Carlo average over `m` weight draws, so it is replaced by a
//! kl upper confidence bound at level `δ_mc` before entering the bounds;
//! the two confidence levels add up to the reported δ.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::ProbNetwork;
use crate::objectives::{self, bounded_xent, check_lambda, complexity};
use crate::rng::RngStream;

const BISECTION_MAX_ITERATIONS: usize = 200;
const BISECTION_TOLERANCE: f64 = 1e-9;

/// Rows per forward pass while sweeping a dataset.
pub(crate) const EVAL_CHUNK: usize = 2048;

/// `kl(q‖p)` between Bernoulli(q) and Bernoulli(p), with `0·ln 0 = 0`.
pub fn binary_kl(q: f64, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) || !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("binary_kl needs q, p in [0,1], got {q}, {p}")));
    }
    let term = |a: f64, b: f64| -> f64 {
        if a == 0.0 {
            0.0
        } else if b == 0.0 {
            f64::INFINITY
        } else {
            a * (a / b).ln()
        }
    };
    Ok(term(q, p) + term(1.0 - q, 1.0 - p))
}

/// Largest `p ∈ [q, 1]` with `kl(q‖p) ≤ c`, by bisection.
///
/// Bisection runs until the bracket cannot be split further in `f64`, and
/// the upper end of the final bracket is returned so the result never
/// undershoots the true supremum.
pub fn kl_inverse(q: f64, c: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!("kl_inverse needs q in [0,1], got {q}")));
    }
    if !(c >= 0.0) {
        return Err(Error::invalid(format!("kl_inverse needs c >= 0, got {c}")));
    }
    if c == 0.0 || q == 1.0 {
        return Ok(q);
    }
    let (mut lo, mut hi) = (q, 1.0);
    for _ in 0..BISECTION_MAX_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(hi);
        }
        if binary_kl(q, mid)? > c {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    if hi - lo <= BISECTION_TOLERANCE {
        Ok(hi)
    } else {
        Err(Error::NoConvergence {
            iterations: BISECTION_MAX_ITERATIONS,
            q,
            c,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub emp_risk: f64,
    pub kl_div: f64,
    pub n: usize,
    pub delta: f64,
}

impl BoundInputs {
    pub fn new(emp_risk: f64, kl_div: f64, n: usize, delta: f64) -> Result<Self> {
        let b = BoundInputs {
            emp_risk,
            kl_div,
            n,
            delta,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.emp_risk) {
            return Err(Error::invalid(format!("empirical risk {} outside [0,1]", self.emp_risk)));
        }
        if !(self.kl_div >= 0.0 && self.kl_div.is_finite()) {
            return Err(Error::invalid(format!("KL divergence must be >= 0, got {}", self.kl_div)));
        }
        if self.n == 0 {
            return Err(Error::invalid("sample count must be >= 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0,1), got {}", self.delta)));
        }
        Ok(())
    }

    fn complexity(&self) -> f64 {
        complexity(self.kl_div, self.n, self.delta)
    }
}

pub fn pbkl_certificate(b: &BoundInputs) -> Result<f64> {
    b.validate()?;
    kl_inverse(b.emp_risk, b.complexity())
}

pub fn quad_certificate(b: &BoundInputs) -> Result<f64> {
    b.validate()?;
    Ok(objectives::quad_value(b.emp_risk, b.complexity()).min(1.0))
}

pub fn lambda_certificate(b: &BoundInputs, lambda: f64) -> Result<f64> {
    b.validate()?;
    check_lambda(lambda)?;
    Ok(objectives::lambda_value(b.emp_risk, b.complexity(), lambda).min(1.0))
}

/// Upper confidence bound on a `[0,1]`-valued mean estimated from `m` i.i.d.
/// draws, valid with probability `1 − delta_mc`.
pub fn mc_corrected_risk(mean: f64, m: usize, delta_mc: f64) -> Result<f64> {
    if m == 0 {
        return Err(Error::invalid("need at least one Monte-Carlo sample"));
    }
    if !(delta_mc > 0.0 && delta_mc < 1.0) {
        return Err(Error::invalid(format!("delta_mc must lie in (0,1), got {delta_mc}")));
    }
    kl_inverse(mean, (2.0 / delta_mc).ln() / m as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    ZeroOne,
    RescaledXent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub loss_kind: LossKind,
    /// Inputs to the three bounds; `emp_risk` is the corrected MC estimate
    /// and `delta` is `delta_bound`.
    pub inputs: BoundInputs,
    pub mc_samples: usize,
    /// Plain average of the loss over the `mc_samples` weight draws.
    pub mc_mean: f64,
    pub mc_corrected_emp: f64,
    pub delta_bound: f64,
    pub delta_mc: f64,
    pub pbkl_bound: f64,
    pub quad_bound: f64,
    pub lambda_bound_at_optimum: f64,
    pub optimal_lambda: f64,
    /// True when the tightest bound is capped at 1.
    pub vacuous: bool,
    /// `ln(1/p_min)` for the rescaled surrogate, absent for zero-one.
    pub rescaling_constant: Option<f64>,
}

impl Certificate {
    /// Builds every bound from an MC mean.
    pub fn from_mc_mean(
        loss_kind: LossKind,
        mc_mean: f64,
        mc_samples: usize,
        kl_div: f64,
        n: usize,
        split: DeltaSplit,
        rescaling_constant: Option<f64>,
    ) -> Result<Self> {
        let corrected = mc_corrected_risk(mc_mean, mc_samples, split.delta_mc)?;
        let inputs = BoundInputs::new(corrected, kl_div, n, split.delta_bound)?;
        let lambda = objectives::optimal_lambda(corrected, inputs.complexity()).clamp(1e-12, 2.0 - 1e-12);
        let pbkl = pbkl_certificate(&inputs)?;
        Ok(Certificate {
            loss_kind,
            inputs,
            mc_samples,
            mc_mean,
            mc_corrected_emp: corrected,
            delta_bound: split.delta_bound,
            delta_mc: split.delta_mc,
            pbkl_bound: pbkl,
            quad_bound: quad_certificate(&inputs)?,
            lambda_bound_at_optimum: lambda_certificate(&inputs, lambda)?,
            optimal_lambda: lambda,
            vacuous: pbkl >= 1.0,
            rescaling_constant,
        })
    }
}

/// How the overall confidence δ is shared between the bound and the
/// Monte-Carlo estimate of the empirical risk.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaSplit {
    pub delta_bound: f64,
    pub delta_mc: f64,
}

impl DeltaSplit {
    /// `(1 − mc_fraction)·δ` for the bound, `mc_fraction·δ` for MC.
    pub fn new(delta: f64, mc_fraction: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0,1), got {delta}")));
        }
        if !(mc_fraction > 0.0 && mc_fraction < 1.0) {
            return Err(Error::invalid(format!("MC share must lie in (0,1), got {mc_fraction}")));
        }
        Ok(DeltaSplit {
            delta_bound: delta * (1.0 - mc_fraction),
            delta_mc: delta * mc_fraction,
        })
    }

    pub fn total(&self) -> f64 {
        self.delta_bound + self.delta_mc
    }
}

impl Default for DeltaSplit {
    fn default() -> Self {
        DeltaSplit::new(0.05, 0.2).expect("valid defaults")
    }
}

/// Certificates for both loss kinds from one set of weight draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificatePair {
    pub zero_one: Certificate,
    pub rescaled_xent: Certificate,
}

impl CertificatePair {
    pub fn get(&self, kind: LossKind) -> &Certificate {
        match kind {
            LossKind::ZeroOne => &self.zero_one,
            LossKind::RescaledXent => &self.rescaled_xent,
        }
    }
}

/// Per-draw average losses over a dataset for `m` independent weight draws,
/// accumulated in draw order.
pub fn mc_loss_means(
    net: &ProbNetwork,
    data: &Dataset,
    m: usize,
    rng: &mut RngStream,
) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::invalid("cannot certify on an empty dataset"));
    }
    if m == 0 {
        return Err(Error::invalid("need at least one Monte-Carlo sample"));
    }
    if data.dim() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            op: "certify",
            left: format!("dataset with {} features", data.dim()),
            right: format!("network expecting {}", net.input_dim()),
        });
    }
    let n = data.len();
    let chunks: Vec<_> = (0..n)
        .step_by(EVAL_CHUNK)
        .map(|s| (s, (s + EVAL_CHUNK).min(n)))
        .map(|(s, e)| (s, data.rows(s, e)))
        .collect();
    let (mut sum01, mut sum_xent) = (0.0, 0.0);
    for _ in 0..m {
        let sampled = net.sample(rng)?;
        let (mut err, mut xent) = (0.0, 0.0);
        for (start, x) in &chunks {
            let probs = sampled.probs(x)?;
            for i in 0..probs.rows() {
                let v = bounded_xent(probs.row(i), data.labels()[start + i], net.p_min())?;
                err += v.zero_one;
                xent += v.surrogate;
            }
        }
        sum01 += err / n as f64;
        sum_xent += xent / n as f64;
    }
    Ok((sum01 / m as f64, sum_xent / m as f64))
}

/// Certifies `net` on its training set for both losses.
pub fn certify_both(
    net: &ProbNetwork,
    train: &Dataset,
    m: usize,
    split: DeltaSplit,
    rng: &mut RngStream,
) -> Result<CertificatePair> {
    let (zero_one, xent) = mc_loss_means(net, train, m, rng)?;
    let kl = net.kl_total()?;
    let n = train.len();
    Ok(CertificatePair {
        zero_one: Certificate::from_mc_mean(LossKind::ZeroOne, zero_one, m, kl, n, split, None)?,
        rescaled_xent: Certificate::from_mc_mean(
            LossKind::RescaledXent,
            xent,
            m,
            kl,
            n,
            split,
            Some((1.0 / net.p_min()).ln()),
        )?,
    })
}

pub fn certify(
    net: &ProbNetwork,
    train: &Dataset,
    loss_kind: LossKind,
    m: usize,
    split: DeltaSplit,
    rng: &mut RngStream,
) -> Result<Certificate> {
    let pair = certify_both(net, train, m, split, rng)?;
    Ok(pair.get(loss_kind).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_gaussian_blobs;
    use crate::distributions::Family;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn binary_kl_reference_values() {
        for q in [0.0, 0.2, 0.5, 1.0] {
            assert_eq!(binary_kl(q, q).unwrap(), 0.0);
        }
        assert_relative_eq!(binary_kl(0.1, 0.5).unwrap(), 0.368_064_2, epsilon = 1e-7);
        assert_relative_eq!(binary_kl(0.0, 0.3).unwrap(), -(0.7f64).ln(), max_relative = 1e-15);
        assert_eq!(binary_kl(0.5, 1.0).unwrap(), f64::INFINITY);
        assert!(binary_kl(-0.1, 0.5).is_err());
        assert!(binary_kl(0.5, 1.1).is_err());
    }

    #[test]
    fn kl_inverse_reference_values() {
        assert_eq!(kl_inverse(0.3, 0.0).unwrap(), 0.3);
        assert_relative_eq!(kl_inverse(0.0, 0.05).unwrap(), 1.0 - (-0.05f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(kl_inverse(0.1, 0.010_829_4).unwrap(), 0.1498, epsilon = 1e-4);
        assert_eq!(kl_inverse(1.0, 0.5).unwrap(), 1.0);
        assert!(kl_inverse(0.2, -1.0).is_err());
    }

    #[test]
    fn bound_reference_values() {
        let b = BoundInputs::new(0.1, 100.0, 10_000, 0.05).unwrap();
        let pbkl = pbkl_certificate(&b).unwrap();
        let quad = quad_certificate(&b).unwrap();
        let lam = lambda_certificate(&b, 1.0).unwrap();
        assert_relative_eq!(pbkl, 0.1498, epsilon = 1e-4);
        assert_relative_eq!(quad, 0.158_612, epsilon = 1e-6);
        assert_relative_eq!(lam, 0.221_659, epsilon = 1e-6);
        assert!(pbkl <= quad && quad <= lam);
        assert!(lambda_certificate(&b, 2.0).is_err());
    }

    #[test]
    fn bound_on_perfect_fit_shrinks_with_n() {
        let small = pbkl_certificate(&BoundInputs::new(0.0, 0.0, 1_000, 0.05).unwrap()).unwrap();
        let large = pbkl_certificate(&BoundInputs::new(0.0, 0.0, 100_000_000, 0.05).unwrap()).unwrap();
        assert!(large < small && large < 1e-6);
    }

    #[test]
    fn mc_correction_reference_values() {
        assert_relative_eq!(
            mc_corrected_risk(0.0, 1000, 0.01).unwrap(),
            1.0 - (-(200.0f64).ln() / 1000.0).exp(),
            epsilon = 1e-12
        );
        assert_relative_eq!(mc_corrected_risk(0.0, 1000, 0.01).unwrap(), 0.005_284, epsilon = 1e-6);
        let tiny = mc_corrected_risk(0.2, 100_000_000, 0.999_999).unwrap();
        assert!((tiny - 0.2).abs() < 1e-4);
        let mut last = 1.0;
        for m in [10, 100, 1000, 10_000] {
            let v = mc_corrected_risk(0.1, m, 0.01).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn delta_split_defaults() {
        let s = DeltaSplit::new(0.05, 0.2).unwrap();
        assert_relative_eq!(s.delta_bound, 0.04);
        assert_relative_eq!(s.delta_mc, 0.01);
        assert_relative_eq!(s.total(), 0.05);
    }

    #[test]
    fn untrained_network_certificate_uses_zero_kl() {
        let data = synth_gaussian_blobs(300, 2, 2, 4.0, &mut RngStream::new(1, 6)).unwrap();
        let net = ProbNetwork::init(&[2, 8, 2], Family::Gaussian, 0.05, 1e-4, &mut RngStream::new(2, 1))
            .unwrap();
        let split = DeltaSplit::default();
        let cert = certify(&net, &data, LossKind::ZeroOne, 20, split, &mut RngStream::new(3, 4)).unwrap();
        assert_eq!(cert.inputs.kl_div, 0.0);
        let expected = kl_inverse(
            cert.mc_corrected_emp,
            (2.0 * 300f64.sqrt() / split.delta_bound).ln() / 300.0,
        )
        .unwrap();
        assert_eq!(cert.pbkl_bound, expected);
        assert!(cert.pbkl_bound >= cert.mc_mean);
    }

    #[test]
    fn certify_rejects_empty_data() {
        let data = synth_gaussian_blobs(10, 2, 2, 4.0, &mut RngStream::new(1, 6)).unwrap();
        let empty = data.subset(&[], crate::data::SplitTag::Train);
        let net = ProbNetwork::init(&[2, 2], Family::Gaussian, 0.05, 1e-4, &mut RngStream::new(2, 1))
            .unwrap();
        assert!(certify_both(&net, &empty, 5, DeltaSplit::default(), &mut RngStream::new(0, 4)).is_err());
    }

    proptest! {
        #[test]
        fn inversion_hits_the_kl_level(q in 0.0f64..1.0, c in 0.0f64..3.0) {
            let p = kl_inverse(q, c).unwrap();
            prop_assert!(p >= q);
            // closer to 1 the f64 spacing alone moves kl by more than 1e-7
            if p < 1.0 - 1e-9 {
                prop_assert!((binary_kl(q, p).unwrap() - c).abs() <= 1e-7);
            }
        }

        #[test]
        fn bounds_are_ordered(
            emp in 0.0f64..1.0, kl in 0.0f64..1e4, log_n in 1.0f64..6.0,
            delta in 0.001f64..0.999, lam in 0.001f64..1.999,
        ) {
            let b = BoundInputs::new(emp, kl, 10f64.powf(log_n) as usize, delta).unwrap();
            let pbkl = pbkl_certificate(&b).unwrap();
            let quad = quad_certificate(&b).unwrap();
            let lamb = lambda_certificate(&b, lam).unwrap();
            prop_assert!(pbkl >= emp);
            prop_assert!(pbkl <= quad + 1e-9 && quad <= lamb + 1e-9);
        }

        #[test]
        fn bounds_are_monotone(
            emp in 0.0f64..0.9, d_emp in 0.0f64..0.1, kl in 0.0f64..1e3, d_kl in 0.0f64..100.0,
            n in 10usize..100_000, d_n in 0usize..1000,
        ) {
            let base = BoundInputs::new(emp, kl, n, 0.05).unwrap();
            let more_emp = BoundInputs { emp_risk: emp + d_emp, ..base };
            let more_kl = BoundInputs { kl_div: kl + d_kl, ..base };
            let more_n = BoundInputs { n: n + d_n, ..base };
            for f in [pbkl_certificate, quad_certificate] {
                let v = f(&base).unwrap();
                prop_assert!(f(&more_emp).unwrap() >= v - 1e-12);
                prop_assert!(f(&more_kl).unwrap() >= v - 1e-12);
                prop_assert!(f(&more_n).unwrap() <= v + 1e-12);
            }
        }
    }
}
