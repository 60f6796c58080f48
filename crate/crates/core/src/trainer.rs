//! SGD with momentum over a [`ProbNetwork`], the λ alternation, learning
//! curves and the grid sweep.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::certificates::{certify_both, CertificatePair, DeltaSplit};
use crate::config::{GridPoint, TrainConfig};
use crate::data::{Dataset, TrainTest};
use crate::error::{Error, Result};
use crate::linalg::RealMatrix;
use crate::network::{ForwardMode, Gradients, ProbNetwork};
use crate::objectives::{
    argmax, bounded_xent, lambda_gradient, objective_coefficients, objective_value, ObjectiveConfig,
    ObjectiveKind,
};
use crate::rng::{mix_seed, RngStream, Stream};

pub const LAMBDA_MIN: f64 = 1e-4;
pub const LAMBDA_MAX: f64 = 2.0 - 1e-4;

/// Momentum buffer and step size.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub velocity: Gradients,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl OptimizerState {
    pub fn new(net: &ProbNetwork, learning_rate: f64, momentum: f64) -> Self {
        OptimizerState {
            velocity: Gradients::zeros_like(net),
            learning_rate,
            momentum,
        }
    }
}

/// What one step saw before updating the parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub objective: f64,
    pub surrogate: f64,
    pub zero_one: f64,
    pub kl: f64,
}

/// Batch-mean surrogate loss and its gradient for one forward pass.
pub fn batch_loss(
    net: &ProbNetwork,
    x: &RealMatrix,
    labels: &[usize],
    mode: ForwardMode,
    rng: &mut RngStream,
) -> Result<(f64, f64, Gradients)> {
    if labels.is_empty() || x.rows() != labels.len() {
        return Err(Error::invalid(format!(
            "batch needs matching non-empty inputs and labels, got {} rows and {} labels",
            x.rows(),
            labels.len()
        )));
    }
    let (probs, trace) = net.forward(x, rng, mode)?;
    let b = labels.len() as f64;
    let (mut surrogate, mut zero_one) = (0.0, 0.0);
    let mut d_scores = Vec::with_capacity(probs.rows() * probs.cols());
    for (i, &y) in labels.iter().enumerate() {
        let v = bounded_xent(probs.row(i), y, net.p_min())?;
        surrogate += v.surrogate;
        zero_one += v.zero_one;
        d_scores.extend(v.grad_scores.iter().map(|g| g / b));
    }
    let d_scores = RealMatrix::from_vec(probs.rows(), probs.cols(), d_scores)?;
    let grads = net.backward(&trace, &d_scores)?;
    Ok((surrogate / b, zero_one / b, grads))
}

/// One parameter update on a minibatch.
///
/// The ERM baseline runs the posterior means; every other objective draws a
/// single weight sample shared by the whole batch.
pub fn sgd_step(
    net: &mut ProbNetwork,
    x: &RealMatrix,
    labels: &[usize],
    objective: &ObjectiveConfig,
    state: &mut OptimizerState,
    rng: &mut RngStream,
) -> Result<StepStats> {
    let mode = if objective.kind == ObjectiveKind::Erm {
        ForwardMode::MeanOnly
    } else {
        ForwardMode::Sampled
    };
    let (surrogate, zero_one, mut grads) = batch_loss(net, x, labels, mode, rng)?;
    let kl = net.kl_total()?;
    let value = objective_value(objective, surrogate, kl)?;
    let (c_risk, c_kl) = objective_coefficients(objective, surrogate, kl)?;
    if c_kl != 0.0 {
        grads.combine(c_risk, &net.kl_gradients()?, c_kl);
    } else if c_risk != 1.0 {
        let zero = Gradients::zeros_like(net);
        grads.combine(c_risk, &zero, 0.0);
    }
    if let Some(block) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of {block}")));
    }
    state.velocity.combine(state.momentum, &grads, -state.learning_rate);
    net.apply_update(&state.velocity);
    Ok(StepStats {
        objective: value,
        surrogate,
        zero_one,
        kl,
    })
}

/// `λ ← clip(λ − lr·∂f/∂λ, [1e-4, 2 − 1e-4])`.
pub fn lambda_step(objective: &ObjectiveConfig, lambda_lr: f64, emp_estimate: f64, kl: f64) -> Result<f64> {
    let g = lambda_gradient(emp_estimate, kl, objective.n, objective.delta, objective.lambda)?;
    let next = objective.lambda - lambda_lr * g;
    Ok(if next.is_nan() {
        objective.lambda
    } else {
        next.clamp(LAMBDA_MIN, LAMBDA_MAX)
    })
}

/// One learning-curve row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    pub objective: f64,
    pub surrogate: f64,
    pub kl_over_n: f64,
    pub lambda: Option<f64>,
    pub seconds: f64,
}

impl LogRecord {
    pub const HEADER: &'static str = "iteration\tobjective\tsurrogate\tkl_over_n\tlambda\tseconds";

    pub fn to_line(&self) -> String {
        let lambda = self.lambda.map_or_else(|| "NA".to_string(), |l| format!("{l:e}"));
        format!(
            "{}\t{:e}\t{:e}\t{:e}\t{lambda}\t{:.3}",
            self.iteration, self.objective, self.surrogate, self.kl_over_n, self.seconds
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = |m: String| Error::invalid(format!("bad learning-curve row '{line}': {m}"));
        if cols.len() != 6 {
            return Err(bad(format!("expected 6 columns, found {}", cols.len())));
        }
        let f = |s: &str| s.parse::<f64>().map_err(|e| bad(e.to_string()));
        Ok(LogRecord {
            iteration: cols[0].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            objective: f(cols[1])?,
            surrogate: f(cols[2])?,
            kl_over_n: f(cols[3])?,
            lambda: if cols[4] == "NA" { None } else { Some(f(cols[4])?) },
            seconds: f(cols[5])?,
        })
    }
}

/// Learning curve, in step order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<LogRecord>,
}

impl RunLog {
    pub fn to_text(&self) -> String {
        let mut s = String::from(LogRecord::HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&r.to_line());
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == LogRecord::HEADER => {}
            other => {
                return Err(Error::invalid(format!(
                    "learning curve must start with '{}', found {other:?}",
                    LogRecord::HEADER
                )))
            }
        }
        let records = lines
            .filter(|l| !l.is_empty())
            .map(LogRecord::parse_line)
            .collect::<Result<_>>()?;
        Ok(RunLog { records })
    }

    /// Same curve with the wall-clock column zeroed.
    pub fn without_timing(&self) -> RunLog {
        RunLog {
            records: self.records.iter().map(|r| LogRecord { seconds: 0.0, ..*r }).collect(),
        }
    }
}

/// Everything a finished run produces.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub point: GridPoint,
    pub seed: u64,
    pub net: ProbNetwork,
    pub log: RunLog,
    pub lambda: Option<f64>,
    pub iterations: usize,
    pub certificates: CertificatePair,
    pub test_error: f64,
}

/// Seed of grid point `index` under master seed `master`.
pub fn point_seed(master: u64, index: usize) -> u64 {
    mix_seed(master, index as u64)
}

/// Trains one grid point, certifies it on the training set and measures its
/// test error.
///
/// When `curve` is given every log row is written to it as soon as it is
/// recorded. Non-finite objectives or gradients end the run with
/// [`Error::Diverged`].
pub fn train_point(
    cfg: &TrainConfig,
    point: &GridPoint,
    data: &TrainTest,
    mut curve: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    let train = &data.train;
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let seed = point_seed(cfg.seed, point.index);
    let mut arch = vec![train.dim()];
    arch.extend(&cfg.hidden);
    arch.push(train.num_classes());
    let mut net = ProbNetwork::init(
        &arch,
        cfg.family,
        point.prior_scale,
        point.p_min,
        &mut RngStream::for_stream(seed, Stream::Init),
    )?;
    let mut objective = ObjectiveConfig::new(cfg.objective, train.len(), cfg.delta);
    objective.eta = point.eta;
    objective.lambda = cfg.lambda_init;
    objective.validate()?;
    let mut state = OptimizerState::new(&net, point.learning_rate, point.momentum);
    let mut noise_rng = RngStream::for_stream(seed, Stream::WeightNoise);
    let mut shuffle_rng = RngStream::for_stream(seed, Stream::Shuffle);

    let n = train.len();
    let batch = cfg.batch_size.min(n);
    let iterations = cfg.budget.iterations(n, batch);
    let track_lambda = cfg.objective == ObjectiveKind::Lambda;
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut log = RunLog::default();
    let start = Instant::now();
    if let Some(w) = curve.as_deref_mut() {
        writeln!(w, "{}", LogRecord::HEADER).map_err(|e| Error::io("learning curve", e))?;
    }

    for t in 0..iterations {
        if cursor >= n {
            shuffle_rng.shuffle(&mut order);
            cursor = 0;
        }
        let end = (cursor + batch).min(n);
        let (x, y) = train.batch(&order[cursor..end]);
        cursor = end;
        let lambda_used = objective.lambda;
        let stats = sgd_step(&mut net, &x, &y, &objective, &mut state, &mut noise_rng).map_err(|e| match e {
            Error::NonFinite(what) => Error::Diverged {
                iteration: t,
                reason: format!("non-finite {what}"),
            },
            other => other,
        })?;
        if !stats.objective.is_finite() {
            return Err(Error::Diverged {
                iteration: t,
                reason: format!("objective is {}", stats.objective),
            });
        }
        if track_lambda {
            objective.lambda = lambda_step(&objective, cfg.lambda_lr, stats.surrogate, stats.kl)?;
        }
        if t % cfg.log_every == 0 || t + 1 == iterations {
            let rec = LogRecord {
                iteration: t,
                objective: stats.objective,
                surrogate: stats.surrogate,
                kl_over_n: stats.kl / n as f64,
                lambda: track_lambda.then_some(lambda_used),
                seconds: start.elapsed().as_secs_f64(),
            };
            if let Some(w) = curve.as_deref_mut() {
                writeln!(w, "{}", rec.to_line()).map_err(|e| Error::io("learning curve", e))?;
            }
            log.records.push(rec);
        }
    }

    let split = DeltaSplit::new(cfg.delta, cfg.mc_fraction)?;
    let certificates = certify_both(
        &net,
        train,
        cfg.mc_samples,
        split,
        &mut RngStream::for_stream(seed, Stream::Certificate),
    )?;
    let mode = if cfg.objective == ObjectiveKind::Erm {
        ForwardMode::MeanOnly
    } else {
        ForwardMode::Sampled
    };
    let test_error = if data.test.is_empty() {
        f64::NAN
    } else {
        eval_risk(
            &net,
            &data.test,
            mode,
            cfg.eval_samples,
            &mut RngStream::for_stream(seed, Stream::Evaluation),
        )?
    };
    Ok(TrainOutcome {
        point: *point,
        seed,
        net,
        log,
        lambda: track_lambda.then_some(objective.lambda),
        iterations,
        certificates,
        test_error,
    })
}

/// Trains a config that describes exactly one grid point.
pub fn train(cfg: &TrainConfig, data: &TrainTest) -> Result<TrainOutcome> {
    train_point(cfg, &cfg.single_point()?, data, None)
}

/// Zero-one error of the predictor on `data`.
///
/// `Sampled` draws `samples` fresh weight samples for every example and
/// predicts the argmax of their averaged class probabilities; `MeanOnly`
/// uses the posterior means.
pub fn eval_risk(
    net: &ProbNetwork,
    data: &Dataset,
    mode: ForwardMode,
    samples: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::invalid("eval_risk needs at least one sample"));
    }
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let mut errors = 0usize;
    match mode {
        ForwardMode::MeanOnly => {
            let mean = net.mean_network()?;
            for start in (0..data.len()).step_by(crate::certificates::EVAL_CHUNK) {
                let end = (start + crate::certificates::EVAL_CHUNK).min(data.len());
                let probs = mean.probs(&data.rows(start, end))?;
                for i in 0..probs.rows() {
                    errors += usize::from(argmax(probs.row(i)) != data.labels()[start + i]);
                }
            }
        }
        ForwardMode::Sampled => {
            let k = net.num_classes();
            let mut avg = vec![0.0; k];
            for i in 0..data.len() {
                let x = data.rows(i, i + 1);
                avg.iter_mut().for_each(|v| *v = 0.0);
                for _ in 0..samples {
                    let p = net.sample(rng)?.probs(&x)?;
                    for (a, v) in avg.iter_mut().zip(p.row(0)) {
                        *a += v;
                    }
                }
                errors += usize::from(argmax(&avg) != data.labels()[i]);
            }
        }
    }
    Ok(errors as f64 / data.len() as f64)
}

/// Result of one grid point in a sweep.
#[derive(Clone, Debug)]
pub struct SweepEntry {
    pub point: GridPoint,
    pub seed: u64,
    pub outcome: std::result::Result<TrainOutcome, String>,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    /// One entry per grid point, in grid order.
    pub entries: Vec<SweepEntry>,
    /// Grid indices of the completed runs, best zero-one certificate first
    /// (ties broken by grid index).
    pub ranking: Vec<usize>,
}

impl SweepResult {
    pub fn best(&self) -> &TrainOutcome {
        let i = self.ranking[0];
        self.entries[i].outcome.as_ref().expect("ranked runs completed")
    }
}

/// Trains every grid point with up to `jobs` concurrent workers.
///
/// Divergent points are recorded as failed and skipped; the sweep only
/// fails if every point does. Results do not depend on `jobs`.
pub fn sweep(cfg: &TrainConfig, data: &TrainTest, jobs: usize) -> Result<SweepResult> {
    sweep_with(cfg, data, jobs, |_| {})
}

/// [`sweep`] that calls `on_done` as each point finishes (in completion order).
pub fn sweep_with(
    cfg: &TrainConfig,
    data: &TrainTest,
    jobs: usize,
    on_done: impl Fn(&SweepEntry) + Sync,
) -> Result<SweepResult> {
    cfg.validate()?;
    let grid = cfg.grid();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<SweepEntry>>> = Mutex::new(vec![None; grid.len()]);
    let workers = jobs.clamp(1, grid.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(point) = grid.get(i) else { break };
                let entry = SweepEntry {
                    point: *point,
                    seed: point_seed(cfg.seed, point.index),
                    outcome: train_point(cfg, point, data, None).map_err(|e| e.to_string()),
                };
                on_done(&entry);
                slots.lock().expect("no worker panicked")[i] = Some(entry);
            });
        }
    });
    let entries: Vec<SweepEntry> = slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|e| e.expect("every point ran"))
        .collect();
    let mut ranking: Vec<usize> = entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.outcome.is_ok())
        .map(|(i, _)| i)
        .collect();
    if ranking.is_empty() {
        return Err(Error::AllRunsFailed);
    }
    let cert = |i: usize| entries[i].outcome.as_ref().map(|o| o.certificates.zero_one.pbkl_bound).unwrap_or(f64::NAN);
    ranking.sort_by(|&a, &b| cert(a).total_cmp(&cert(b)).then(a.cmp(&b)));
    Ok(SweepResult { entries, ranking })
}
