//! Flat `key = value` configuration files.
//!
//! One entry per line, `#` starts a comment, grids are comma-separated
//! lists. The same syntax serves training configs and CSV schemas.
//!
//! ```text
//! objective = quad
//! family = gaussian
//! hidden = 64, 32
//! prior_scale = 0.05
//! learning_rate = 5e-3
//! momentum = 0.95
//! p_min = 1e-4
//! batch_size = 256
//! iterations = 5000
//! dataset = csv
//! schema = schemas/mushroom.schema
//! data_file = uci/mushroom.csv
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    binarize_mnist, hex_digest, load_csv, load_mnist_idx_split, synth_gaussian_blobs, CsvSchema, SplitTag,
    TrainTest,
};
use crate::distributions::Family;
use crate::error::{Error, Result};
use crate::objectives::ObjectiveKind;
use crate::rng::{RngStream, Stream};

/// Splits `text` into `(line number, key, value)` triples.
///
/// Keys are case-sensitive and must be unique; values are trimmed and may be
/// empty.
pub fn parse_key_values(text: &str, path: &Path) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| Error::Config {
            path: path.to_path_buf(),
            line,
            message,
        };
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected 'key = value', found '{content}'")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(err("empty key".into()));
        }
        if !seen.insert(key.to_string()) {
            return Err(err(format!("duplicate key '{key}'")));
        }
        out.push((line, key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Where the training and test data come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Gaussian blobs: `n_train` + `n_test` examples generated together.
    Blobs {
        n_train: usize,
        n_test: usize,
        dim: usize,
        classes: usize,
        separation: f64,
    },
    /// MNIST from IDX files under the data directory. Without separate test
    /// files the test split is the `test` rows following the first `train`.
    Mnist {
        binary: bool,
        images: PathBuf,
        labels: PathBuf,
        test_images: Option<PathBuf>,
        test_labels: Option<PathBuf>,
        train: usize,
        test: usize,
    },
    /// Delimited table with a schema file; seeded split.
    Csv { schema: PathBuf, data_file: PathBuf },
}

impl DatasetSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetSpec::Blobs { .. } => "blobs",
            DatasetSpec::Mnist { binary: false, .. } => "mnist",
            DatasetSpec::Mnist { binary: true, .. } => "binary_mnist",
            DatasetSpec::Csv { .. } => "csv",
        }
    }

    /// Loads the data. Relative data paths resolve against `data_dir`,
    /// a relative schema path against `schema_dir`.
    pub fn load(&self, data_dir: &Path, schema_dir: &Path, test_fraction: f64, seed: u64) -> Result<TrainTest> {
        match self {
            DatasetSpec::Blobs {
                n_train,
                n_test,
                dim,
                classes,
                separation,
            } => {
                let mut rng = RngStream::for_stream(seed, Stream::Data);
                let all = synth_gaussian_blobs(n_train + n_test, *dim, *classes, *separation, &mut rng)?;
                all.split_at(*n_train)
            }
            DatasetSpec::Mnist {
                binary,
                images,
                labels,
                test_images,
                test_labels,
                train,
                test,
            } => {
                let (img, lab) = (data_dir.join(images), data_dir.join(labels));
                let mut tt = match (test_images, test_labels) {
                    (Some(ti), Some(tl)) => TrainTest {
                        train: load_mnist_idx_split(&img, &lab, SplitTag::Train, Some(*train))?,
                        test: load_mnist_idx_split(data_dir.join(ti), data_dir.join(tl), SplitTag::Test, Some(*test))?,
                    },
                    (None, None) => {
                        let all = load_mnist_idx_split(&img, &lab, SplitTag::Full, Some(train + test))?;
                        if all.len() < train + test {
                            return Err(Error::invalid(format!(
                                "{} holds {} examples, need {} train + {} test",
                                img.display(),
                                all.len(),
                                train,
                                test
                            )));
                        }
                        all.split_at(*train)?
                    }
                    _ => return Err(Error::invalid("test_images and test_labels must be given together")),
                };
                if tt.train.len() < *train {
                    return Err(Error::invalid(format!(
                        "{} holds {} examples, need {train}",
                        img.display(),
                        tt.train.len()
                    )));
                }
                if *binary {
                    tt = TrainTest {
                        train: binarize_mnist(&tt.train)?,
                        test: binarize_mnist(&tt.test)?,
                    };
                }
                Ok(tt)
            }
            DatasetSpec::Csv { schema, data_file } => {
                let schema = CsvSchema::from_file(schema_dir.join(schema))?;
                load_csv(data_dir.join(data_file), &schema, test_fraction, seed)
            }
        }
    }
}

/// Full training configuration, possibly holding grids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: ObjectiveKind,
    pub family: Family,
    /// Hidden-layer widths; input and output sizes come from the data.
    pub hidden: Vec<usize>,
    pub prior_scale: Vec<f64>,
    pub learning_rate: Vec<f64>,
    pub momentum: Vec<f64>,
    pub p_min: Vec<f64>,
    /// Only swept for BBB.
    pub eta: Vec<f64>,
    pub batch_size: usize,
    pub budget: Budget,
    pub lambda_lr: f64,
    pub lambda_init: f64,
    pub seed: u64,
    pub delta: f64,
    /// Share of δ spent on the Monte-Carlo estimate.
    pub mc_fraction: f64,
    pub mc_samples: usize,
    pub eval_samples: usize,
    pub log_every: usize,
    pub test_fraction: f64,
    pub dataset: DatasetSpec,
    /// Directory of the config file; relative schema paths resolve against it.
    #[serde(skip)]
    pub config_dir: Option<PathBuf>,
}

/// Number of SGD steps, given directly or as passes over the training set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Iterations(usize),
    Epochs(usize),
}

impl Budget {
    /// Steps for a training set of `n` examples; a partial last batch
    /// counts as a step.
    pub fn iterations(self, n: usize, batch_size: usize) -> usize {
        match self {
            Budget::Iterations(t) => t,
            Budget::Epochs(e) => e * n.div_ceil(batch_size.max(1)),
        }
    }
}

/// One point of the hyperparameter grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub index: usize,
    pub prior_scale: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub p_min: f64,
    pub eta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: ObjectiveKind::Quad,
            family: Family::Gaussian,
            hidden: vec![],
            prior_scale: vec![0.05],
            learning_rate: vec![5e-3],
            momentum: vec![0.95],
            p_min: vec![1e-4],
            eta: vec![1.0],
            batch_size: 256,
            budget: Budget::Iterations(1000),
            lambda_lr: 1e-4,
            lambda_init: 1.0,
            seed: 0,
            delta: 0.05,
            mc_fraction: 0.2,
            mc_samples: 1000,
            eval_samples: 1,
            log_every: 100,
            test_fraction: 0.2,
            dataset: DatasetSpec::Blobs {
                n_train: 1000,
                n_test: 1000,
                dim: 2,
                classes: 2,
                separation: 6.0,
            },
            config_dir: None,
        }
    }
}

fn parse_one<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("cannot parse '{v}': {e}"))
}

fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    if v.is_empty() {
        return Ok(vec![]);
    }
    v.split(',').map(|s| parse_one(s.trim())).collect()
}

impl TrainConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, path)?;
        cfg.config_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let entries = parse_key_values(text, path)?;
        let mut cfg = TrainConfig::default();
        let cfg_err = |line: usize, message: String| Error::Config {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut dataset_kind = None;
        let mut ds: std::collections::HashMap<&str, (usize, &str)> = Default::default();
        let mut saw_eta = false;
        for (line, key, value) in &entries {
            let line = *line;
            let v = value.as_str();
            let e = |m: String| cfg_err(line, format!("{key}: {m}"));
            match key.as_str() {
                "objective" => cfg.objective = parse_one(v).map_err(e)?,
                "family" => cfg.family = parse_one(v).map_err(e)?,
                "hidden" => {
                    cfg.hidden = if v == "none" { vec![] } else { parse_list(v).map_err(e)? }
                }
                "prior_scale" => cfg.prior_scale = parse_list(v).map_err(e)?,
                "learning_rate" => cfg.learning_rate = parse_list(v).map_err(e)?,
                "momentum" => cfg.momentum = parse_list(v).map_err(e)?,
                "p_min" => cfg.p_min = parse_list(v).map_err(e)?,
                "eta" => {
                    cfg.eta = parse_list(v).map_err(e)?;
                    saw_eta = true;
                }
                "batch_size" => cfg.batch_size = parse_one(v).map_err(e)?,
                "iterations" => cfg.budget = Budget::Iterations(parse_one(v).map_err(e)?),
                "epochs" => cfg.budget = Budget::Epochs(parse_one(v).map_err(e)?),
                "lambda_lr" => cfg.lambda_lr = parse_one(v).map_err(e)?,
                "lambda_init" => cfg.lambda_init = parse_one(v).map_err(e)?,
                "seed" => cfg.seed = parse_one(v).map_err(e)?,
                "delta" => cfg.delta = parse_one(v).map_err(e)?,
                "mc_fraction" => cfg.mc_fraction = parse_one(v).map_err(e)?,
                "mc_samples" => cfg.mc_samples = parse_one(v).map_err(e)?,
                "eval_samples" => cfg.eval_samples = parse_one(v).map_err(e)?,
                "log_every" => cfg.log_every = parse_one(v).map_err(e)?,
                "test_fraction" => cfg.test_fraction = parse_one(v).map_err(e)?,
                "dataset" => dataset_kind = Some((line, v)),
                "n_train" | "n_test" | "dim" | "classes" | "separation" | "images" | "labels"
                | "test_images" | "test_labels" | "train" | "test" | "schema" | "data_file" => {
                    ds.insert(key.as_str(), (line, v));
                }
                other => return Err(cfg_err(line, format!("unknown key '{other}'"))),
            }
        }
        if entries.iter().any(|(_, k, _)| k == "iterations")
            && entries.iter().any(|(_, k, _)| k == "epochs")
        {
            return Err(cfg_err(0, "give either iterations or epochs, not both".into()));
        }
        if cfg.objective == ObjectiveKind::Bbb && !saw_eta {
            cfg.eta = vec![1.0];
        }
        let (ds_line, kind) = dataset_kind.ok_or_else(|| cfg_err(0, "missing key 'dataset'".into()))?;
        let mut used = HashSet::new();
        let mut get = |k: &'static str| -> Option<(usize, &str)> {
            used.insert(k);
            ds.get(k).copied()
        };
        fn num<T: FromStr>(
            f: &dyn Fn(usize, String) -> Error,
            ds_line: usize,
            k: &str,
            entry: Option<(usize, &str)>,
            default: Option<T>,
        ) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            match entry {
                Some((line, v)) => parse_one(v).map_err(|m| f(line, format!("{k}: {m}"))),
                None => default.ok_or_else(|| f(ds_line, format!("dataset needs key '{k}'"))),
            }
        }
        let path_of = |entry: Option<(usize, &str)>| entry.map(|(_, v)| PathBuf::from(v));
        cfg.dataset = match kind {
            "blobs" => DatasetSpec::Blobs {
                n_train: num(&cfg_err, ds_line, "n_train", get("n_train"), Some(1000))?,
                n_test: num(&cfg_err, ds_line, "n_test", get("n_test"), Some(1000))?,
                dim: num(&cfg_err, ds_line, "dim", get("dim"), Some(2))?,
                classes: num(&cfg_err, ds_line, "classes", get("classes"), Some(2))?,
                separation: num(&cfg_err, ds_line, "separation", get("separation"), Some(6.0))?,
            },
            "mnist" | "binary_mnist" => {
                let images = path_of(get("images"))
                    .ok_or_else(|| cfg_err(ds_line, "dataset needs key 'images'".into()))?;
                let labels = path_of(get("labels"))
                    .ok_or_else(|| cfg_err(ds_line, "dataset needs key 'labels'".into()))?;
                DatasetSpec::Mnist {
                    binary: kind == "binary_mnist",
                    images,
                    labels,
                    test_images: path_of(get("test_images")),
                    test_labels: path_of(get("test_labels")),
                    train: num(&cfg_err, ds_line, "train", get("train"), None)?,
                    test: num(&cfg_err, ds_line, "test", get("test"), None)?,
                }
            }
            "csv" => DatasetSpec::Csv {
                schema: path_of(get("schema")).ok_or_else(|| cfg_err(ds_line, "dataset needs key 'schema'".into()))?,
                data_file: path_of(get("data_file"))
                    .ok_or_else(|| cfg_err(ds_line, "dataset needs key 'data_file'".into()))?,
            },
            other => return Err(cfg_err(ds_line, format!("unknown dataset '{other}'"))),
        };
        if let Some((k, (line, _))) = ds.iter().find(|(k, _)| !used.contains(*k)) {
            return Err(cfg_err(*line, format!("key '{k}' does not apply to dataset '{kind}'")));
        }
        cfg.validate().map_err(|e| cfg_err(0, e.to_string()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let grids: [(&str, &Vec<f64>); 5] = [
            ("prior_scale", &self.prior_scale),
            ("learning_rate", &self.learning_rate),
            ("momentum", &self.momentum),
            ("p_min", &self.p_min),
            ("eta", &self.eta),
        ];
        for (name, g) in grids {
            if g.is_empty() {
                return Err(Error::invalid(format!("grid '{name}' is empty")));
            }
        }
        let all = |g: &[f64], ok: fn(f64) -> bool| g.iter().all(|&v| ok(v));
        if !all(&self.prior_scale, |v| v > 0.0 && v.is_finite()) {
            return Err(Error::invalid("prior_scale values must be positive"));
        }
        if !all(&self.learning_rate, |v| v >= 0.0 && v.is_finite()) {
            return Err(Error::invalid("learning_rate values must be >= 0"));
        }
        if !all(&self.momentum, |v| (0.0..1.0).contains(&v)) {
            return Err(Error::invalid("momentum values must lie in [0,1)"));
        }
        if !all(&self.p_min, |v| v > 0.0 && v < 1.0) {
            return Err(Error::invalid("p_min values must lie in (0,1)"));
        }
        if !all(&self.eta, |v| v > 0.0 && v.is_finite()) {
            return Err(Error::invalid("eta values must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.lambda_lr > 0.0) {
            return Err(Error::invalid("lambda_lr must be positive"));
        }
        crate::objectives::check_lambda(self.lambda_init)?;
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid("delta must lie in (0,1)"));
        }
        if !(self.mc_fraction > 0.0 && self.mc_fraction < 1.0) {
            return Err(Error::invalid("mc_fraction must lie in (0,1)"));
        }
        if self.mc_samples == 0 || self.eval_samples == 0 || self.log_every == 0 {
            return Err(Error::invalid("mc_samples, eval_samples and log_every must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::invalid("test_fraction must lie in [0,1)"));
        }
        Ok(())
    }

    /// Cartesian product of the grids in a fixed order (prior scale outermost,
    /// then learning rate, momentum, p_min, and η for BBB only).
    pub fn grid(&self) -> Vec<GridPoint> {
        let etas: &[f64] = if self.objective == ObjectiveKind::Bbb {
            &self.eta
        } else {
            &self.eta[..1]
        };
        let mut out = Vec::new();
        for &prior_scale in &self.prior_scale {
            for &learning_rate in &self.learning_rate {
                for &momentum in &self.momentum {
                    for &p_min in &self.p_min {
                        for &eta in etas {
                            out.push(GridPoint {
                                index: out.len(),
                                prior_scale,
                                learning_rate,
                                momentum,
                                p_min,
                                eta,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    /// The config restricted to one grid point.
    pub fn at_point(&self, p: &GridPoint) -> TrainConfig {
        TrainConfig {
            prior_scale: vec![p.prior_scale],
            learning_rate: vec![p.learning_rate],
            momentum: vec![p.momentum],
            p_min: vec![p.p_min],
            eta: vec![p.eta],
            ..self.clone()
        }
    }

    /// The only grid point; errors if any grid has more than one value.
    pub fn single_point(&self) -> Result<GridPoint> {
        let g = self.grid();
        match g.as_slice() {
            [p] => Ok(*p),
            _ => Err(Error::invalid(format!("config describes {} grid points, expected one", g.len()))),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(&json);
        hex_digest(h)
    }

    pub fn load_data(&self, data_dir: &Path) -> Result<TrainTest> {
        let schema_dir = self.config_dir.as_deref().unwrap_or(Path::new("."));
        self.dataset.load(data_dir, schema_dir, self.test_fraction, self.seed)
    }
}
