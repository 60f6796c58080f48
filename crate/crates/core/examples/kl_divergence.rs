//! Closed-form KL between coordinate distributions, checked by sampling.
//!
//! ```text
//! cargo run --release --example kl_divergence
//! ```

use pbb::distributions::{kl_gaussian, kl_laplace, sample, CoordDistribution, Family};
use pbb::linalg::softplus_inverse;
use pbb::rng::RngStream;

fn main() -> pbb::Result<()> {
    let (mu1, s1, mu0, s0) = (0.3, 0.2, 0.0, 0.5);
    let n = 200_000;
    let mut rng = RngStream::new(5, 0);
    for family in [Family::Gaussian, Family::Laplace] {
        let exact = match family {
            Family::Gaussian => kl_gaussian(mu1, s1 * s1, mu0, s0 * s0)?,
            Family::Laplace => kl_laplace(mu1, s1, mu0, s0)?,
        };
        let q = CoordDistribution::new(family, vec![mu1; n], vec![softplus_inverse(s1); n])?;
        let (w, _) = sample(&q, &mut rng);
        let mc: f64 = w
            .iter()
            .map(|&w| match family {
                Family::Gaussian => (s0 / s1).ln() - (w - mu1).powi(2) / (2.0 * s1 * s1) + (w - mu0).powi(2) / (2.0 * s0 * s0),
                Family::Laplace => (s0 / s1).ln() - (w - mu1).abs() / s1 + (w - mu0).abs() / s0,
            })
            .sum::<f64>()
            / n as f64;
        println!("{:<8} closed form {exact:.5}  sampled {mc:.5}", family.name());
    }
    Ok(())
}
