//! Factorized Gaussian and Laplace distributions over weight coordinates.
//!
//! Scales are parameterized as `softplus(rho)`. Sampling is pathwise: a
//! weight is `mu + scale * m(noise)` where `noise` is parameter-free and
//! `m` is the family's noise multiplier, so gradients reach `mu` and `rho`
//! through the stored noise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sigmoid, softplus};
use crate::rng::{sample_std_normal, sample_uniform_sym, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Laplace,
}

impl Family {
    /// Raw noise for `n` coordinates: standard normals (Gaussian) or
    /// Uniform(−1/2, 1/2) draws (Laplace).
    pub fn draw_noise(self, rng: &mut RngStream, n: usize) -> Vec<f64> {
        match self {
            Family::Gaussian => sample_std_normal(rng, n),
            Family::Laplace => sample_uniform_sym(rng, n),
        }
    }

    /// `∂w/∂scale` for one coordinate given its raw noise.
    #[inline]
    pub fn noise_multiplier(self, noise: f64) -> f64 {
        match self {
            Family::Gaussian => noise,
            Family::Laplace => -noise.signum() * (-2.0 * noise.abs()).ln_1p(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Laplace => "laplace",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "gauss" => Ok(Family::Gaussian),
            "laplace" => Ok(Family::Laplace),
            other => Err(Error::invalid(format!("unknown family '{other}'"))),
        }
    }
}

/// Posterior over a block of coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordDistribution {
    pub family: Family,
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
}

impl CoordDistribution {
    pub fn new(family: Family, mu: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        if mu.len() != rho.len() {
            return Err(Error::DimensionMismatch {
                op: "CoordDistribution::new",
                left: format!("{} locations", mu.len()),
                right: format!("{} scale parameters", rho.len()),
            });
        }
        Ok(CoordDistribution { family, mu, rho })
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn scale(&self, i: usize) -> f64 {
        softplus(self.rho[i])
    }

    pub fn scales(&self) -> Vec<f64> {
        self.rho.iter().map(|&r| softplus(r)).collect()
    }
}

/// Frozen copy of the prior a posterior is certified against.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorSnapshot {
    family: Family,
    mu: Vec<f64>,
    scale: Vec<f64>,
}

impl PriorSnapshot {
    pub fn new(family: Family, mu: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if mu.len() != scale.len() {
            return Err(Error::DimensionMismatch {
                op: "PriorSnapshot::new",
                left: format!("{} locations", mu.len()),
                right: format!("{} scales", scale.len()),
            });
        }
        if let Some(s) = scale.iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid(format!("prior scale must be positive, got {s}")));
        }
        Ok(PriorSnapshot { family, mu, scale })
    }

    /// Snapshot whose scales are exactly the posterior's current scales, so
    /// the KL between the two is exactly zero.
    pub fn from_posterior(d: &CoordDistribution) -> Self {
        PriorSnapshot {
            family: d.family,
            mu: d.mu.clone(),
            scale: d.scales(),
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }
}

/// Draws one weight per coordinate; returns `(weights, raw noise)`.
pub fn sample(d: &CoordDistribution, rng: &mut RngStream) -> (Vec<f64>, Vec<f64>) {
    let noise = d.family.draw_noise(rng, d.len());
    let w = weights_from_noise(d, &noise);
    (w, noise)
}

/// Replays the reparameterization with caller-supplied noise.
pub fn sample_with_noise(d: &CoordDistribution, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != d.len() {
        return Err(Error::DimensionMismatch {
            op: "sample_with_noise",
            left: format!("{} coordinates", d.len()),
            right: format!("{} noise values", noise.len()),
        });
    }
    Ok(weights_from_noise(d, noise))
}

fn weights_from_noise(d: &CoordDistribution, noise: &[f64]) -> Vec<f64> {
    d.mu.iter()
        .zip(&d.rho)
        .zip(noise)
        .map(|((&m, &r), &e)| {
            let k = d.family.noise_multiplier(e);
            if k == 0.0 {
                m
            } else {
                m + softplus(r) * k
            }
        })
        .collect()
}

/// KL(N(mu1, var1) ‖ N(mu0, var0)), arguments are variances.
pub fn kl_gaussian(mu1: f64, var1: f64, mu0: f64, var0: f64) -> Result<f64> {
    if !(var1 > 0.0 && var0 > 0.0) {
        return Err(Error::invalid(format!(
            "Gaussian KL needs positive variances, got {var1} and {var0}"
        )));
    }
    let ratio = var1 / var0;
    let d = mu1 - mu0;
    Ok(0.5 * (-ratio.ln() + d * d / var0 + ratio - 1.0))
}

/// KL(Lap(mu1, b1) ‖ Lap(mu0, b0)), arguments are scales.
pub fn kl_laplace(mu1: f64, b1: f64, mu0: f64, b0: f64) -> Result<f64> {
    if !(b1 > 0.0 && b0 > 0.0) {
        return Err(Error::invalid(format!(
            "Laplace KL needs positive scales, got {b1} and {b0}"
        )));
    }
    let a = (mu1 - mu0).abs();
    Ok((b0 / b1).ln() + a / b0 + (b1 / b0) * (-a / b1).exp() - 1.0)
}

fn check_pair(posterior: &CoordDistribution, prior: &PriorSnapshot) -> Result<()> {
    if posterior.family != prior.family {
        return Err(Error::invalid(format!(
            "family mismatch: posterior is {}, prior is {}",
            posterior.family.name(),
            prior.family.name()
        )));
    }
    if posterior.len() != prior.len() {
        return Err(Error::DimensionMismatch {
            op: "kl_total",
            left: format!("{} posterior coordinates", posterior.len()),
            right: format!("{} prior coordinates", prior.len()),
        });
    }
    Ok(())
}

/// KL of the product measures: the sum of per-coordinate divergences.
pub fn kl_total(posterior: &CoordDistribution, prior: &PriorSnapshot) -> Result<f64> {
    check_pair(posterior, prior)?;
    let mut total = 0.0;
    for i in 0..posterior.len() {
        let s1 = posterior.scale(i);
        let (m0, s0) = (prior.mu[i], prior.scale[i]);
        total += match posterior.family {
            Family::Gaussian => kl_gaussian(posterior.mu[i], s1 * s1, m0, s0 * s0)?,
            Family::Laplace => kl_laplace(posterior.mu[i], s1, m0, s0)?,
        };
    }
    Ok(total)
}

/// Partial derivatives of [`kl_total`] with respect to every `mu` and `rho`.
pub fn kl_gradients(
    posterior: &CoordDistribution,
    prior: &PriorSnapshot,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_pair(posterior, prior)?;
    let n = posterior.len();
    let mut d_mu = Vec::with_capacity(n);
    let mut d_rho = Vec::with_capacity(n);
    for i in 0..n {
        let rho = posterior.rho[i];
        let s1 = softplus(rho);
        let (m0, s0) = (prior.mu[i], prior.scale[i]);
        let delta = posterior.mu[i] - m0;
        let (g_mu, g_scale) = match posterior.family {
            Family::Gaussian => (delta / (s0 * s0), s1 / (s0 * s0) - 1.0 / s1),
            Family::Laplace => {
                let a = delta.abs();
                let e = (-a / s1).exp();
                // signum(0) would be 1; the |·| subgradient at 0 is taken as 0
                let sign = if delta == 0.0 { 0.0 } else { delta.signum() };
                (
                    sign * (1.0 - e) / s0,
                    -1.0 / s1 + e * (1.0 + a / s1) / s0,
                )
            }
        };
        d_mu.push(g_mu);
        d_rho.push(g_scale * sigmoid(rho));
    }
    Ok((d_mu, d_rho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::softplus_inverse;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn dist(family: Family, mu: &[f64], scales: &[f64]) -> CoordDistribution {
        CoordDistribution::new(
            family,
            mu.to_vec(),
            scales.iter().map(|&s| softplus_inverse(s)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_noise_returns_the_mean() {
        for family in [Family::Gaussian, Family::Laplace] {
            let d = dist(family, &[0.3, -1.2, 4.0], &[0.1, 0.5, 2.0]);
            let w = sample_with_noise(&d, &[0.0; 3]).unwrap();
            assert_eq!(w, d.mu);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let d = dist(Family::Laplace, &[0.0, 1.0], &[1.0, 0.2]);
        let a = sample(&d, &mut RngStream::new(3, 2));
        let b = sample(&d, &mut RngStream::new(3, 2));
        assert_eq!(a, b);
        assert_eq!(sample_with_noise(&d, &a.1).unwrap(), a.0);
    }

    fn coordinate_draws(d: &CoordDistribution, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = RngStream::new(seed, 0);
        let noise = d.family.draw_noise(&mut rng, n);
        let (m, s) = (d.mu[0], d.scale(0));
        noise
            .iter()
            .map(|&e| m + s * d.family.noise_multiplier(e))
            .collect()
    }

    fn moments(xs: &[f64]) -> (f64, f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        (mean, m2, m4)
    }

    #[test]
    fn gaussian_sample_moments() {
        let (mu, sigma) = (0.7, 0.3);
        let d = dist(Family::Gaussian, &[mu], &[sigma]);
        let n = 1_000_000;
        let (mean, var, m4) = moments(&coordinate_draws(&d, n, 17));
        assert!((mean - mu).abs() < 3.0 * sigma / 1e3, "mean {mean}");
        let se_var = ((m4 - var * var) / n as f64).sqrt();
        assert!((var - sigma * sigma).abs() < 3.0 * se_var, "var {var}");
    }

    #[test]
    fn laplace_sample_variance_is_two_b_squared() {
        let (mu, b) = (-0.4, 0.25);
        let d = dist(Family::Laplace, &[mu], &[b]);
        let n = 1_000_000;
        let (mean, var, m4) = moments(&coordinate_draws(&d, n, 23));
        assert!((mean - mu).abs() < 3.0 * (2.0f64).sqrt() * b / 1e3, "mean {mean}");
        let se_var = ((m4 - var * var) / n as f64).sqrt();
        assert!((var - 2.0 * b * b).abs() < 3.0 * se_var, "var {var}");
    }

    #[test]
    fn closed_form_reference_values() {
        assert_eq!(kl_gaussian(0.3, 2.0, 0.3, 2.0).unwrap(), 0.0);
        assert_relative_eq!(kl_gaussian(1.0, 1.0, 0.0, 1.0).unwrap(), 0.5);
        assert_eq!(kl_laplace(0.3, 2.0, 0.3, 2.0).unwrap(), 0.0);
        assert_relative_eq!(
            kl_laplace(0.0, 0.5, 0.0, 1.0).unwrap(),
            0.193_147_2,
            epsilon = 1e-7
        );
        assert!(kl_gaussian(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(kl_laplace(0.0, 1.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn total_is_zero_at_the_prior_and_additive() {
        let d = dist(Family::Gaussian, &[1.0, 1.0], &[1.0, 1.0]);
        let prior = PriorSnapshot::from_posterior(&d);
        assert_eq!(kl_total(&d, &prior).unwrap(), 0.0);
        let prior = PriorSnapshot::new(Family::Gaussian, vec![0.0, 0.0], d.scales()).unwrap();
        assert_relative_eq!(kl_total(&d, &prior).unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn family_mismatch_is_an_error() {
        let d = dist(Family::Gaussian, &[0.0], &[1.0]);
        let prior = PriorSnapshot::new(Family::Laplace, vec![0.0], vec![1.0]).unwrap();
        assert!(kl_total(&d, &prior).is_err());
        assert!(kl_gradients(&d, &prior).is_err());
    }

    #[test]
    fn hundred_coordinate_total_matches_independent_sum() {
        let mut rng = RngStream::new(99, 0);
        for family in [Family::Gaussian, Family::Laplace] {
            let mu: Vec<f64> = (0..100).map(|_| rng.std_normal()).collect();
            let rho: Vec<f64> = (0..100).map(|_| rng.std_normal()).collect();
            let m0: Vec<f64> = (0..100).map(|_| rng.std_normal()).collect();
            let s0: Vec<f64> = (0..100).map(|_| 0.1 + rng.uniform_open()).collect();
            let post = CoordDistribution::new(family, mu.clone(), rho.clone()).unwrap();
            let prior = PriorSnapshot::new(family, m0.clone(), s0.clone()).unwrap();
            // independent route: densities written out per coordinate
            let mut expected = 0.0;
            for i in 0..100 {
                let s1 = (1.0 + rho[i].exp()).ln();
                let d = mu[i] - m0[i];
                expected += match family {
                    Family::Gaussian => {
                        (s0[i] / s1).ln() + (s1 * s1 + d * d) / (2.0 * s0[i] * s0[i]) - 0.5
                    }
                    Family::Laplace => {
                        (s0[i] / s1).ln() + d.abs() / s0[i]
                            + s1 / s0[i] * (-d.abs() / s1).exp()
                            - 1.0
                    }
                };
            }
            assert_relative_eq!(kl_total(&post, &prior).unwrap(), expected, max_relative = 1e-10);
        }
    }

    fn fd_check(family: Family, seed: u64) {
        let mut rng = RngStream::new(seed, 0);
        let n = 12;
        let mut mu: Vec<f64> = (0..n).map(|_| rng.std_normal()).collect();
        let rho: Vec<f64> = (0..n).map(|_| rng.std_normal() - 1.0).collect();
        let m0: Vec<f64> = (0..n).map(|_| rng.std_normal()).collect();
        let s0: Vec<f64> = (0..n).map(|_| 0.2 + rng.uniform_open()).collect();
        if family == Family::Laplace {
            // keep |mu1 - mu0| away from the kink
            for i in 0..n {
                if (mu[i] - m0[i]).abs() < 1e-3 {
                    mu[i] += 0.01;
                }
            }
        }
        let prior = PriorSnapshot::new(family, m0, s0).unwrap();
        let post = CoordDistribution::new(family, mu, rho).unwrap();
        let (g_mu, g_rho) = kl_gradients(&post, &prior).unwrap();
        let h = 1e-6;
        for i in 0..n {
            for (which, analytic) in [(0, g_mu[i]), (1, g_rho[i])] {
                let mut plus = post.clone();
                let mut minus = post.clone();
                let (p, m) = if which == 0 {
                    (&mut plus.mu[i], &mut minus.mu[i])
                } else {
                    (&mut plus.rho[i], &mut minus.rho[i])
                };
                *p += h;
                *m -= h;
                let fd = (kl_total(&plus, &prior).unwrap() - kl_total(&minus, &prior).unwrap())
                    / (2.0 * h);
                let rel = (fd - analytic).abs() / analytic.abs().max(fd.abs()).max(1e-3);
                assert!(rel <= 1e-6, "{family:?} coord {i} param {which}: {analytic} vs {fd}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            fd_check(Family::Gaussian, seed);
            fd_check(Family::Laplace, seed + 100);
        }
    }

    #[test]
    fn gradient_vanishes_at_the_prior() {
        let d = dist(Family::Gaussian, &[0.2, -0.3], &[0.05, 0.05]);
        let prior = PriorSnapshot::from_posterior(&d);
        let (g_mu, g_rho) = kl_gradients(&d, &prior).unwrap();
        assert!(g_mu.iter().all(|&g| g == 0.0));
        assert!(g_rho.iter().all(|&g| g.abs() < 1e-12));
        let d = dist(Family::Laplace, &[0.2], &[0.05]);
        let (g_mu, _) = kl_gradients(&d, &PriorSnapshot::from_posterior(&d)).unwrap();
        assert_eq!(g_mu, vec![0.0]);
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(
            m1 in -5.0f64..5.0, s1 in 1e-3f64..5.0, m0 in -5.0f64..5.0, s0 in 1e-3f64..5.0
        ) {
            prop_assert!(kl_gaussian(m1, s1 * s1, m0, s0 * s0).unwrap() >= -1e-12);
            prop_assert!(kl_laplace(m1, s1, m0, s0).unwrap() >= -1e-12);
        }

        #[test]
        fn kl_total_is_additive_over_blocks(
            a in prop::collection::vec((-2.0f64..2.0, -3.0f64..1.0, -2.0f64..2.0, 0.01f64..2.0), 1..20),
            b in prop::collection::vec((-2.0f64..2.0, -3.0f64..1.0, -2.0f64..2.0, 0.01f64..2.0), 1..20),
        ) {
            for family in [Family::Gaussian, Family::Laplace] {
                let build = |xs: &[(f64, f64, f64, f64)]| {
                    let post = CoordDistribution::new(
                        family,
                        xs.iter().map(|x| x.0).collect(),
                        xs.iter().map(|x| x.1).collect(),
                    ).unwrap();
                    let prior = PriorSnapshot::new(
                        family,
                        xs.iter().map(|x| x.2).collect(),
                        xs.iter().map(|x| x.3).collect(),
                    ).unwrap();
                    kl_total(&post, &prior).unwrap()
                };
                let joined: Vec<_> = a.iter().chain(&b).copied().collect();
                // sequential summation makes concatenation exact
                let expected = {
                    let mut s = build(&a);
                    for x in &b {
                        s += build(std::slice::from_ref(x));
                    }
                    s
                };
                prop_assert_eq!(build(&joined), expected);
            }
        }
    }
}
