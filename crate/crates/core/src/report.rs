//! Run artifacts: certificate reports, manifests, sweep and comparison tables.
//!
//! A run directory holds
//!
//! | file               | content                                         |
//! |--------------------|-------------------------------------------------|
//! | `model.pbb`        | checkpoint (see [`crate::checkpoint`])          |
//! | `curve.tsv`        | learning curve, one [`LogRecord`] per row       |
//! | `certificate.json` | [`CertificateReport`]                           |
//! | `summary.json`     | [`RunSummary`]: test error and training facts   |
//! | `manifest.json`    | [`RunManifest`]                                 |
//!
//! JSON files are pretty-printed with a trailing newline. Numbers use the
//! shortest representation that round-trips, so equal values give equal
//! bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::certificates::{CertificatePair, DeltaSplit};
use crate::config::{GridPoint, TrainConfig};
use crate::data::hex_digest;
use crate::error::{Error, Result};
use crate::trainer::{LogRecord, RunLog, SweepResult};

pub const CERTIFICATE_FILE: &str = "certificate.json";
pub const CHECKPOINT_FILE: &str = "model.pbb";
pub const CURVE_FILE: &str = "curve.tsv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SWEEP_TABLE_FILE: &str = "sweep.tsv";

pub const REPORT_SCHEMA: &str = "pbb-certificate-report/1";

/// Everything needed to check a certificate by hand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub schema: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub run_seed: u64,
    pub train_fingerprint: String,
    pub n: usize,
    pub delta: f64,
    pub delta_split: DeltaSplit,
    pub mc_samples: usize,
    pub kl_div: f64,
    pub certificates: CertificatePair,
}

impl CertificateReport {
    pub fn new(
        cfg: &TrainConfig,
        run_seed: u64,
        train_fingerprint: String,
        certificates: CertificatePair,
    ) -> Self {
        let c = &certificates.zero_one;
        CertificateReport {
            schema: REPORT_SCHEMA.to_string(),
            config_hash: cfg.hash(),
            master_seed: cfg.seed,
            run_seed,
            train_fingerprint,
            n: c.inputs.n,
            delta: c.delta_bound + c.delta_mc,
            delta_split: DeltaSplit {
                delta_bound: c.delta_bound,
                delta_mc: c.delta_mc,
            },
            mc_samples: c.mc_samples,
            kl_div: c.inputs.kl_div,
            certificates,
        }
    }
}

/// Facts about a finished run that are not part of the certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub objective: String,
    pub family: String,
    pub dataset: String,
    pub arch: Vec<usize>,
    pub point: GridPoint,
    pub iterations: usize,
    pub final_lambda: Option<f64>,
    pub test_error: f64,
    pub eval_samples: usize,
    pub test_fingerprint: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    /// `sha256("blob <len>\0" + config text)`, in the manner of git object ids.
    pub content_version: String,
    pub master_seed: u64,
    pub run_seed: u64,
    pub dataset_fingerprint: String,
    /// Artifact name to path, relative to the manifest's directory.
    pub artifacts: BTreeMap<String, PathBuf>,
}

impl RunManifest {
    /// Names of listed artifacts that do not exist under `dir`.
    pub fn missing_artifacts(&self, dir: &Path) -> Vec<String> {
        self.artifacts
            .iter()
            .filter(|(_, p)| !dir.join(p).exists())
            .map(|(k, p)| format!("{k} ({})", dir.join(p).display()))
            .collect()
    }
}

/// Git-style content hash of a text blob.
pub fn content_version(text: &str) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", text.len()).as_bytes());
    h.update(text.as_bytes());
    hex_digest(h)
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json(value)).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        offset: 0,
        message: e.to_string(),
    })
}

pub fn read_run_log(path: &Path) -> Result<RunLog> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunLog::parse(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        offset: 0,
        message: e.to_string(),
    })
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        format!("{v}")
    }
}

pub const SWEEP_COLUMNS: &[&str] = &[
    "index",
    "prior_scale",
    "learning_rate",
    "momentum",
    "p_min",
    "eta",
    "seed",
    "status",
    "rank",
    "test_error",
    "kl",
    "mc_zero_one",
    "cert_zero_one",
    "cert_xent",
];

/// Tab-separated sweep table, one row per grid point in grid order.
pub fn sweep_table(result: &SweepResult) -> String {
    let mut rank = vec![None; result.entries.len()];
    for (r, &i) in result.ranking.iter().enumerate() {
        rank[i] = Some(r + 1);
    }
    let mut s = SWEEP_COLUMNS.join("\t");
    s.push('\n');
    for (i, e) in result.entries.iter().enumerate() {
        let p = &e.point;
        let mut row = vec![
            p.index.to_string(),
            num(p.prior_scale),
            num(p.learning_rate),
            num(p.momentum),
            num(p.p_min),
            num(p.eta),
            e.seed.to_string(),
        ];
        match &e.outcome {
            Ok(o) => {
                let z = &o.certificates.zero_one;
                row.extend([
                    "ok".to_string(),
                    rank[i].map_or("NA".into(), |r| r.to_string()),
                    num(o.test_error),
                    num(z.inputs.kl_div),
                    num(z.mc_mean),
                    num(z.pbkl_bound),
                    num(o.certificates.rescaled_xent.pbkl_bound),
                ]);
            }
            Err(_) => {
                row.push("failed".into());
                row.extend(std::iter::repeat_n("NA".to_string(), 6));
            }
        }
        s.push_str(&row.join("\t"));
        s.push('\n');
    }
    s
}

/// Aligned text rendering of a tab-separated table.
pub fn render_text_table(tsv: &str) -> String {
    let rows: Vec<Vec<&str>> = tsv.lines().map(|l| l.split('\t').collect()).collect();
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|v| v.len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, v)| format!("{v:<w$}", w = widths[c]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// One row of the cross-run comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub run: String,
    pub objective: String,
    pub dataset: String,
    pub fingerprint: String,
    pub test_error: f64,
    pub cert_zero_one: f64,
    pub cert_xent: f64,
    pub kl: f64,
}

/// Loads the artifacts of one run directory, listing every missing file.
pub fn load_run(dir: &Path) -> std::result::Result<(ComparisonRow, RunLog), Vec<String>> {
    let need = [CERTIFICATE_FILE, SUMMARY_FILE, CURVE_FILE, MANIFEST_FILE];
    let missing: Vec<String> = need
        .iter()
        .map(|f| dir.join(f))
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(missing);
    }
    let read = || -> Result<(ComparisonRow, RunLog)> {
        let cert: CertificateReport = read_json(&dir.join(CERTIFICATE_FILE))?;
        let summary: RunSummary = read_json(&dir.join(SUMMARY_FILE))?;
        let log = read_run_log(&dir.join(CURVE_FILE))?;
        Ok((
            ComparisonRow {
                run: dir.display().to_string(),
                objective: summary.objective,
                dataset: summary.dataset,
                fingerprint: cert.train_fingerprint,
                test_error: summary.test_error,
                cert_zero_one: cert.certificates.zero_one.pbkl_bound,
                cert_xent: cert.certificates.rescaled_xent.pbkl_bound,
                kl: cert.kl_div,
            },
            log,
        ))
    };
    read().map_err(|e| vec![e.to_string()])
}

pub fn comparison_table(rows: &[ComparisonRow]) -> String {
    let mut s = String::from("run\tobjective\tdataset\tfingerprint\ttest_error\tcert_zero_one\tcert_xent\tkl\n");
    for r in rows {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.run,
            r.objective,
            r.dataset,
            &r.fingerprint[..r.fingerprint.len().min(12)],
            num(r.test_error),
            num(r.cert_zero_one),
            num(r.cert_xent),
            num(r.kl)
        ));
    }
    s
}

/// Curve file with the learning-curve header, ready for plotting tools.
pub fn curve_text(log: &RunLog) -> String {
    debug_assert!(log.to_text().starts_with(LogRecord::HEADER));
    log.to_text()
}
