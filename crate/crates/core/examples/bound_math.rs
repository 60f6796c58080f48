//! The three risk certificates for hand-picked bound inputs.
//!
//! ```text
//! cargo run --example bound_math
//! ```

use pbb::certificates::{
    binary_kl, kl_inverse, lambda_certificate, mc_corrected_risk, pbkl_certificate, quad_certificate, BoundInputs,
};
use pbb::objectives::optimal_lambda;

fn main() -> pbb::Result<()> {
    let p = kl_inverse(0.02, 0.05)?;
    println!("kl_inverse(0.02, 0.05) = {p:.6}, check kl = {:.3e}", binary_kl(0.02, p)?);

    // An MNIST-sized run: 50000 examples, a few thousand nats of KL.
    let mean = 0.012;
    let emp = mc_corrected_risk(mean, 10_000, 0.01)?;
    println!("MC mean {mean} over 10000 draws -> corrected empirical risk {emp:.5}");

    println!("{:>8} {:>10} {:>10} {:>10} {:>10}", "kl", "pbkl", "quad", "lambda=1", "lambda*");
    for kl in [0.0, 100.0, 1000.0, 5000.0, 20_000.0] {
        let b = BoundInputs::new(emp, kl, 50_000, 0.04)?;
        let complexity = (kl + (2.0 * (b.n as f64).sqrt() / b.delta).ln()) / b.n as f64;
        let best = optimal_lambda(emp, complexity);
        println!(
            "{kl:>8} {:>10.5} {:>10.5} {:>10.5} {:>10.5}",
            pbkl_certificate(&b)?,
            quad_certificate(&b)?,
            lambda_certificate(&b, 1.0)?,
            lambda_certificate(&b, best)?,
        );
    }
    Ok(())
}
