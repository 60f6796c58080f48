use std::path::Path;

use proptest::prelude::*;

use pbb::checkpoint::{from_bytes, to_bytes};
use pbb::config::{Budget, DatasetSpec, TrainConfig};
use pbb::distributions::Family;
use pbb::network::{ForwardMode, ProbNetwork};
use pbb::objectives::ObjectiveKind;
use pbb::rng::RngStream;
use pbb::trainer::{eval_risk, sweep, train, LogRecord, RunLog};

fn family() -> impl Strategy<Value = Family> {
    prop_oneof![Just(Family::Gaussian), Just(Family::Laplace)]
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6f64..1e6, 1e-300f64..1e-200, Just(0.0)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn checkpoints_round_trip_bit_for_bit(
        dims in prop::collection::vec(1usize..6, 2..5),
        fam in family(),
        scale in 1e-4f64..2.0,
        p_min in 1e-12f64..0.1,
        seed in any::<u64>(),
    ) {
        let net = ProbNetwork::init(&dims, fam, scale, p_min, &mut RngStream::new(seed, 1)).unwrap();
        let bytes = to_bytes(&net);
        let back = from_bytes(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(&back, &net);
        prop_assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn truncated_checkpoints_are_rejected(cut in 0usize..200, seed in any::<u64>()) {
        let net = ProbNetwork::init(&[3, 4, 2], Family::Gaussian, 0.1, 1e-4, &mut RngStream::new(seed, 1)).unwrap();
        let bytes = to_bytes(&net);
        let cut = cut.min(bytes.len() - 1);
        prop_assert!(from_bytes(&bytes[..cut], Path::new("mem")).is_err());
    }

    #[test]
    fn learning_curves_round_trip(
        rows in prop::collection::vec((finite(), finite(), finite(), prop::option::of(1e-4f64..2.0)), 0..20),
    ) {
        let log = RunLog {
            records: rows
                .iter()
                .enumerate()
                .map(|(i, &(objective, surrogate, kl_over_n, lambda))| LogRecord {
                    iteration: i * 100,
                    objective,
                    surrogate,
                    kl_over_n,
                    lambda,
                    seconds: 0.0,
                })
                .collect(),
        };
        prop_assert_eq!(RunLog::parse(&log.to_text()).unwrap(), log);
    }

    #[test]
    fn grid_is_the_cartesian_product(
        priors in prop::collection::vec(1e-3f64..1.0, 1..4),
        lrs in prop::collection::vec(1e-4f64..0.1, 1..4),
        moms in prop::collection::vec(0.0f64..0.99, 1..3),
        etas in prop::collection::vec(1e-6f64..1.0, 1..4),
        bbb in any::<bool>(),
    ) {
        let cfg = TrainConfig {
            objective: if bbb { ObjectiveKind::Bbb } else { ObjectiveKind::Quad },
            prior_scale: priors.clone(),
            learning_rate: lrs.clone(),
            momentum: moms.clone(),
            eta: etas.clone(),
            ..TrainConfig::default()
        };
        let grid = cfg.grid();
        let eta_axis = if bbb { etas.len() } else { 1 };
        prop_assert_eq!(grid.len(), priors.len() * lrs.len() * moms.len() * eta_axis);
        for (i, p) in grid.iter().enumerate() {
            prop_assert_eq!(p.index, i);
            let single = cfg.at_point(p).single_point().unwrap();
            prop_assert_eq!((single.prior_scale, single.learning_rate, single.eta), (p.prior_scale, p.learning_rate, p.eta));
        }
    }
}

fn blobs(objective: ObjectiveKind) -> TrainConfig {
    TrainConfig {
        objective,
        hidden: vec![8],
        prior_scale: vec![0.3],
        learning_rate: vec![0.05],
        momentum: vec![0.9],
        p_min: vec![1e-2],
        batch_size: 64,
        budget: Budget::Iterations(150),
        mc_samples: 30,
        log_every: 25,
        seed: 21,
        dataset: DatasetSpec::Blobs {
            n_train: 500,
            n_test: 500,
            dim: 2,
            classes: 3,
            separation: 6.0,
        },
        ..TrainConfig::default()
    }
}

#[test]
fn single_point_sweep_equals_train() {
    for objective in [ObjectiveKind::Quad, ObjectiveKind::Lambda] {
        let cfg = blobs(objective);
        let data = cfg.load_data(Path::new(".")).unwrap();
        let a = train(&cfg, &data).unwrap();
        let s = sweep(&cfg, &data, 2).unwrap();
        let b = s.best();
        assert_eq!(a.net, b.net);
        assert_eq!(a.certificates, b.certificates);
        assert_eq!(a.log.without_timing(), b.log.without_timing());
    }
}

#[test]
fn averaging_more_samples_steadies_the_error_estimate() {
    let cfg = blobs(ObjectiveKind::Quad);
    let data = cfg.load_data(Path::new(".")).unwrap();
    let net = train(&cfg, &data).unwrap().net;
    let spread = |samples: usize| {
        let errs: Vec<f64> = (0..10)
            .map(|r| eval_risk(&net, &data.test, ForwardMode::Sampled, samples, &mut RngStream::new(r, 5)).unwrap())
            .collect();
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (errs.len() - 1) as f64).sqrt()
    };
    let (one, many) = (spread(1), spread(25));
    assert!(many < one, "std with 25 samples {many} vs 1 sample {one}");
}
