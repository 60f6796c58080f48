//! Grid sweep over prior scale and learning rate; runs are ranked by their
//! zero-one certificate.
//!
//! ```text
//! cargo run --release --example sweep_grid -- 2
//! ```
//!
//! The optional argument is the number of worker threads.

use std::path::Path;

use pbb::config::TrainConfig;
use pbb::report::{render_text_table, sweep_table};
use pbb::trainer::sweep;

fn main() -> pbb::Result<()> {
    let jobs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(1);
    let base = TrainConfig::from_file(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/blobs_toy.cfg"))?;
    let cfg = TrainConfig {
        prior_scale: vec![0.03, 0.1, 0.3],
        learning_rate: vec![0.01, 0.05],
        ..base
    };
    let data = cfg.load_data(Path::new("."))?;
    let result = sweep(&cfg, &data, jobs)?;
    print!("{}", render_text_table(&sweep_table(&result)));
    let best = result.best();
    println!(
        "best: prior {} lr {} -> certificate {:.4}",
        best.point.prior_scale, best.point.learning_rate, best.certificates.zero_one.pbkl_bound
    );
    Ok(())
}
