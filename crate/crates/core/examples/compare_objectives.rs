//! Test error against risk certificate for each training objective on the
//! same data, in the layout of a results table.
//!
//! ```text
//! cargo run --release --example compare_objectives
//! ```

use std::path::Path;

use pbb::config::TrainConfig;
use pbb::objectives::ObjectiveKind;
use pbb::trainer::train;

fn main() -> pbb::Result<()> {
    let base = TrainConfig::from_file(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/blobs_toy.cfg"))?;
    let data = base.load_data(Path::new("."))?;
    println!("{:<8} {:>10} {:>12} {:>10} {:>8}", "method", "test err", "certificate", "KL", "lambda");
    for kind in [ObjectiveKind::Quad, ObjectiveKind::Lambda, ObjectiveKind::Bbb, ObjectiveKind::Erm] {
        let cfg = TrainConfig {
            objective: kind,
            eta: vec![1e-3],
            lambda_lr: 1e-2,
            ..base.clone()
        };
        let out = train(&cfg, &data)?;
        let c = &out.certificates.zero_one;
        println!(
            "{:<8} {:>10.4} {:>12.4} {:>10.1} {:>8}",
            kind.name(),
            out.test_error,
            c.pbkl_bound,
            c.inputs.kl_div,
            out.lambda.map_or("-".to_string(), |l| format!("{l:.3}"))
        );
    }
    Ok(())
}
