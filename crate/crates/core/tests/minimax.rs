use msgan_core::data::{generate_benchmark, BenchmarkSpec};
use msgan_core::networks::{build_models, NetSpec};
use msgan_core::tape::DISC_EPS;
use msgan_core::trainer::{train, PhaseReport, TrainConfig, TrainData};

/// Consecutive-phase streak of `at_extreme` over one loss series.
fn longest_streak(series: &[f64], at_extreme: impl Fn(f64) -> bool) -> usize {
    let (mut best, mut run) = (0, 0);
    for &v in series {
        run = if at_extreme(v) { run + 1 } else { 0 };
        best = best.max(run);
    }
    best
}

fn series(reports: &[PhaseReport], key: &str) -> Vec<f64> {
    reports.iter().filter_map(|r| r.losses.get(key).copied()).collect()
}

fn toy_run(seed: u64) -> Vec<PhaseReport> {
    let mut bench = BenchmarkSpec::calibrated(2, 24, seed);
    bench.image_size = 8;
    let mut sources = generate_benchmark(&bench).unwrap();
    let target = sources.pop().unwrap();
    let net = NetSpec::new(8, 3, vec![4, 8], 2);
    let params = build_models(&net, 2, seed).unwrap();
    let cfg = TrainConfig {
        max_steps: 200,
        batch_size: 4,
        seed,
        ..TrainConfig::default()
    };
    let mut reports = Vec::new();
    train(params, &TrainData { sources: &sources, target: &target }, &cfg, &mut reports).unwrap();
    reports
}

#[test]
fn adversarial_losses_stay_engaged() {
    // Each loss is a sum of at most two clamped log terms.
    let ceiling = -libm::log(DISC_EPS);
    let bound = 2.0 * ceiling + 1e-9;
    for seed in [0, 1] {
        let reports = toy_run(seed);
        for key in ["disc_source", "disc_target"] {
            let s = series(&reports, key);
            assert_eq!(s.len(), 400, "{key}");
            assert!(s.iter().all(|v| v.is_finite() && (0.0..=bound).contains(v)), "{key} unbounded");
            let streak = longest_streak(&s, |v| v <= 50.0 * -2.0 * libm::log(1.0 - DISC_EPS));
            assert!(streak <= 50, "seed {seed}: {key} at its floor for {streak} phases");
        }
        for key in ["gan_source", "gan_target"] {
            let s = series(&reports, key);
            assert!(s.iter().all(|v| v.is_finite() && (0.0..=bound).contains(v)), "{key} unbounded");
            let streak = longest_streak(&s, |v| v >= 0.9 * ceiling);
            assert!(streak <= 50, "seed {seed}: {key} at its ceiling for {streak} phases");
        }
    }
}

#[test]
fn streaks_count_consecutive_hits() {
    assert_eq!(longest_streak(&[1.0, 0.0, 0.0, 1.0, 0.0], |v| v == 0.0), 2);
    assert_eq!(longest_streak(&[], |_| true), 0);
}
