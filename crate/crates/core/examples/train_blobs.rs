//! Train a small network with the quadratic bound objective on synthetic
//! blobs and print its learning curve and certificates.
//!
//! ```text
//! cargo run --release --example train_blobs
//! ```

use std::path::Path;

use pbb::config::TrainConfig;
use pbb::trainer::train;

fn main() -> pbb::Result<()> {
    let cfg = TrainConfig::from_file(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/blobs_toy.cfg"))?;
    let data = cfg.load_data(Path::new("."))?;
    println!("{} training and {} test examples", data.train.len(), data.test.len());

    let out = train(&cfg, &data)?;
    print!("{}", out.log.to_text());
    for c in [&out.certificates.zero_one, &out.certificates.rescaled_xent] {
        println!(
            "{:?}: MC mean {:.4}, corrected {:.4}, pbkl {:.4}, quad {:.4}",
            c.loss_kind, c.mc_mean, c.mc_corrected_emp, c.pbkl_bound, c.quad_bound
        );
    }
    println!("test error {:.4}, KL {:.2}", out.test_error, out.certificates.zero_one.inputs.kl_div);
    Ok(())
}
