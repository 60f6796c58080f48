//! Save a trained network, load it back and certify it again with more
//! Monte Carlo draws.
//!
//! ```text
//! cargo run --release --example checkpoint_recertify
//! ```

use std::path::Path;

use pbb::certificates::{certify_both, DeltaSplit};
use pbb::checkpoint::{load_checkpoint, save_checkpoint};
use pbb::config::TrainConfig;
use pbb::rng::{RngStream, Stream};
use pbb::trainer::train;

fn main() -> pbb::Result<()> {
    let cfg = TrainConfig::from_file(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/blobs_toy.cfg"))?;
    let data = cfg.load_data(Path::new("."))?;
    let out = train(&cfg, &data)?;

    let path = std::env::temp_dir().join("pbb-example-model.pbb");
    save_checkpoint(&out.net, &path)?;
    let net = load_checkpoint(&path)?;
    assert_eq!(net, out.net);

    let split = DeltaSplit::new(cfg.delta, cfg.mc_fraction)?;
    for m in [cfg.mc_samples, 10 * cfg.mc_samples] {
        let pair = certify_both(&net, &data.train, m, split, &mut RngStream::for_stream(out.seed, Stream::Certificate))?;
        let c = &pair.zero_one;
        println!("m = {m:>5}: MC mean {:.4}, corrected {:.4}, certificate {:.4}", c.mc_mean, c.mc_corrected_emp, c.pbkl_bound);
    }
    Ok(())
}
