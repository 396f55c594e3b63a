use mixstop::diffusion::{mean_state_at, DiffusionModel, PathConfig};
use mixstop::smooth::SmoothFn;
use mixstop::strategy::{sample_stops, ContinuationSet, Intensity, MixedStrategy, StopKind};

fn ks_statistic_exp(mut samples: Vec<f64>, rate: f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let cdf = 1.0 - (-rate * t).exp();
            (cdf - i as f64 / n)
                .abs()
                .max(((i + 1) as f64 / n - cdf).abs())
        })
        .fold(0.0, f64::max)
}

fn jump_times(intensity: Intensity, n: usize) -> Vec<f64> {
    let model = DiffusionModel::wiener();
    let strategy = MixedStrategy::new(intensity, ContinuationSet::whole(&model));
    let cfg = PathConfig::new(1e-3, 200.0, 42).unwrap();
    let out = sample_stops(&model, &strategy, 0.0, &cfg, n).unwrap();
    assert!(out.iter().all(|o| o.kind == StopKind::CoxJump));
    out.iter().map(|o| o.time).collect()
}

#[test]
fn constant_intensity_jump_time_is_exponential() {
    let n = 5000;
    let d = ks_statistic_exp(jump_times(Intensity::constant(0.7).unwrap(), n), 0.7);
    assert!(d < 1.36 / (n as f64).sqrt(), "KS statistic {d}");
}

#[test]
fn integrated_intensity_inversion_is_exponential() {
    let n = 5000;
    let flat = Intensity::function(SmoothFn::constant(0.7), "0.7");
    let d = ks_statistic_exp(jump_times(flat, n), 0.7);
    assert!(d < 1.36 / (n as f64).sqrt(), "KS statistic {d}");
}

#[test]
fn gbm_mean_grows_exponentially() {
    let (mu, s2, x, t) = (0.1, 0.2, 1.5, 2.0);
    let model = DiffusionModel::gbm(mu, s2).unwrap();
    let cfg = PathConfig::new(1e-2, 10.0, 3).unwrap();
    let m = mean_state_at(&model, x, t, &cfg, 20_000).unwrap();
    let exact = x * (mu * t).exp();
    assert!(
        m.within(exact, 3.0),
        "{} vs {exact} (se {})",
        m.estimate,
        m.std_error
    );
}

#[test]
fn wiener_mean_is_constant() {
    let model = DiffusionModel::wiener();
    let cfg = PathConfig::new(1e-2, 10.0, 4).unwrap();
    let m = mean_state_at(&model, -0.3, 1.0, &cfg, 20_000).unwrap();
    assert!(m.within(-0.3, 3.0));
    assert!((m.std_error - 1.0 / (20_000f64).sqrt()).abs() < 1e-3);
}

#[test]
fn same_seed_same_paths_any_thread_count() {
    let model = DiffusionModel::gbm(0.07, 0.45).unwrap();
    let strategy = MixedStrategy::pure(ContinuationSet::interval(0.0, 0.41).unwrap());
    let cfg = PathConfig::new(1e-3, 50.0, 9).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| sample_stops(&model, &strategy, 0.2, &cfg, 400).unwrap())
    };
    let a = run(1);
    assert_eq!(a, run(4));
    assert_eq!(a, run(3));
    let other = sample_stops(&model, &strategy, 0.2, &cfg.with_seed(10), 400).unwrap();
    assert_ne!(a, other);
}

#[test]
fn prefix_of_a_batch_is_a_smaller_batch() {
    let model = DiffusionModel::wiener();
    let strategy = MixedStrategy::new(
        Intensity::constant(0.5).unwrap(),
        ContinuationSet::interval(-1.0, 1.0).unwrap(),
    );
    let cfg = PathConfig::new(1e-3, 50.0, 1).unwrap();
    let big = sample_stops(&model, &strategy, 0.0, &cfg, 300).unwrap();
    let small = sample_stops(&model, &strategy, 0.0, &cfg, 100).unwrap();
    assert_eq!(&big[..100], &small[..]);
}

#[test]
fn mixed_strategy_stops_inside_or_on_boundary() {
    let model = DiffusionModel::wiener();
    let strategy = MixedStrategy::new(
        Intensity::constant(2.0).unwrap(),
        ContinuationSet::interval(-1.0, 1.0).unwrap(),
    );
    let cfg = PathConfig::new(1e-3, 50.0, 2).unwrap();
    let out = sample_stops(&model, &strategy, 0.5, &cfg, 2000).unwrap();
    let jumps = out.iter().filter(|o| o.kind == StopKind::CoxJump).count();
    let exits = out.iter().filter(|o| o.kind == StopKind::ExitC).count();
    assert_eq!(jumps + exits, out.len());
    assert!(jumps > 0 && exits > 0);
    for o in &out {
        match o.kind {
            StopKind::CoxJump => assert!(o.state > -1.0 && o.state < 1.0),
            StopKind::ExitC => assert!(o.state == -1.0 || o.state == 1.0),
            _ => unreachable!(),
        }
    }
}
