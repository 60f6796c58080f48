//! The command-line workflow driven in process: train, certify the saved
//! checkpoint again, and build a report.
//!
//! ```text
//! cargo run --release --example cli_pipeline
//! ```

use std::path::Path;

fn pbb(args: &[&str]) -> i32 {
    let code = pbb::cli::run(std::iter::once("pbb").chain(args.iter().copied()));
    println!("pbb {} -> exit {code}", args.join(" "));
    code
}

fn main() {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/blobs_toy.cfg");
    let cfg = cfg.to_str().expect("utf-8 path");
    let out = std::env::temp_dir().join("pbb-cli-example");
    let run = out.join("run");
    let (run_s, out_s) = (run.to_str().unwrap(), out.to_str().unwrap());

    pbb(&["--out", run_s, "train", cfg]);
    let model = run.join("model.pbb");
    let recert = out.join("recertified");
    pbb(&[
        "--out",
        recert.to_str().unwrap(),
        "certify",
        model.to_str().unwrap(),
        "--config",
        cfg,
        "--mc-samples",
        "1000",
    ]);
    let report = out.join("report");
    pbb(&["--out", report.to_str().unwrap(), "report", run_s]);
    pbb(&["--out", out_s, "train", "missing.cfg"]);
    println!("artifacts under {}", out.display());
}
