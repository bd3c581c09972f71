//! Integration tests for model scoring: skill identities, exact report
//! recomputation, CSV stability, and the multi-horizon sweep.

use chrono::{NaiveDate, TimeZone, Utc};
use skycast_core::clearsky::{smart_persistence_forecast, ClearSkyParams};
use skycast_core::dataset::{
    ingest_directory, synth_generate, SkySample, SplitKind, SplitSpec, SynthConfig,
};
use skycast_core::evaluation::{
    evaluate_model, horizon_sweep, predictions_wm2, score_predictions,
    split_label, sweep_checkpoint_name, write_reports_csv, EvaluationError, EvaluationReport,
    SweepConfig, REPORT_CSV_HEADER,
};
use skycast_core::model::{build_network, NetworkConfig};
use skycast_core::seed::{rng_for, uniform01};
use skycast_core::tensor::Tensor;
use skycast_core::training::{load_checkpoint, TrainConfig};
use tempfile::TempDir;

fn tiny_config(seed: u64) -> NetworkConfig {
    let mut cfg = NetworkConfig::for_horizon(10, 33, seed);
    cfg.filters_per_conv = 4;
    cfg
}

/// A pseudo-random sample with self-consistent irradiance bookkeeping.
fn random_sample(config: &NetworkConfig, seed: u64, tag: &str) -> SkySample {
    let s = config.input_size;
    let c = config.image_channels;
    let mut rng = rng_for(seed, &format!("evaluation-test.sample.{tag}"));
    let pixels: Vec<f32> = (0..c * s * s).map(|_| uniform01(&mut rng) as f32).collect();
    let zen = 0.3 + 1.0 * uniform01(&mut rng);
    let az = std::f64::consts::TAU * uniform01(&mut rng);
    let ghi_t = 150.0 + 700.0 * uniform01(&mut rng);
    let ghi_prev = ghi_t + 60.0 * (uniform01(&mut rng) - 0.5);
    let ghi_target = 100.0 + 800.0 * uniform01(&mut rng);
    SkySample {
        image_stack: Tensor::from_vec(vec![c, s, s], pixels).unwrap(),
        metadata: [
            (ghi_t / 1000.0) as f32,
            (ghi_prev / 1000.0) as f32,
            zen as f32,
            az as f32,
            zen.cos() as f32,
            zen.sin() as f32,
            az.cos() as f32,
            az.sin() as f32,
        ],
        target: (ghi_target / 1000.0) as f32,
        horizon_min: config.horizon_min,
        timestamp: Utc.with_ymd_and_hms(2026, 6, 1, 12, 0, 0).unwrap(),
        day_id: NaiveDate::from_ymd_opt(2026, 6, 1).unwrap(),
        ghi_t_wm2: ghi_t,
        ghi_target_wm2: ghi_target,
        ghi_clear_t_wm2: 900.0,
        ghi_clear_target_wm2: 870.0,
    }
}

fn sample_set(config: &NetworkConfig, count: usize, tag: &str) -> Vec<SkySample> {
    (0..count)
        .map(|i| random_sample(config, i as u64, &format!("{tag}{i}")))
        .collect()
}

fn persistence_of(sample: &SkySample) -> f64 {
    smart_persistence_forecast(
        sample.ghi_t_wm2,
        sample.ghi_clear_t_wm2,
        sample.ghi_clear_target_wm2,
    )
    .unwrap()
}

#[test]
fn leaked_targets_and_reference_predictions_hit_the_skill_anchors() {
    let cfg = tiny_config(3);
    let samples = sample_set(&cfg, 10, "anchor");

    // Perfect predictor: the truth leaked as the prediction.
    let leaked: Vec<f64> = samples.iter().map(|s| s.ghi_target_wm2).collect();
    let perfect = score_predictions(&samples, &leaked, "distinct-days", 7).unwrap();
    assert_eq!(perfect.mse_model, 0.0);
    assert_eq!(perfect.forecast_skill, 1.0);

    // A model that outputs exactly the smart-persistence forecast.
    let reference: Vec<f64> = samples.iter().map(persistence_of).collect();
    let tied = score_predictions(&samples, &reference, "distinct-days", 7).unwrap();
    assert_eq!(tied.mse_model, tied.mse_persistence);
    assert_eq!(tied.forecast_skill, 0.0);
    assert!(tied.mse_persistence > 0.0);
}

#[test]
fn evaluate_model_agrees_with_direct_recomputation_exactly() {
    let cfg = tiny_config(11);
    let network = build_network(&cfg).unwrap();
    // More samples than one evaluation batch, so chunking is exercised.
    let samples = sample_set(&cfg, 40, "recompute");

    let report = evaluate_model(&network, &samples, "afternoon", 99).unwrap();
    let preds = predictions_wm2(&network, &samples).unwrap();
    assert_eq!(preds.len(), samples.len());

    let mut sq_model = 0.0f64;
    let mut sq_ref = 0.0f64;
    for (s, &p) in samples.iter().zip(&preds) {
        sq_model += (p - s.ghi_target_wm2).powi(2);
        sq_ref += (persistence_of(s) - s.ghi_target_wm2).powi(2);
    }
    let n = samples.len() as f64;
    assert_eq!(report.mse_model, sq_model / n);
    assert_eq!(report.mse_persistence, sq_ref / n);
    assert_eq!(
        report.forecast_skill,
        1.0 - report.mse_model / report.mse_persistence,
        "skill is the exact ratio identity, not a reformulation"
    );
    assert_eq!(report.horizon_min, 10);
    assert_eq!(report.n_samples, 40);
    assert_eq!(report.split, "afternoon");
    assert_eq!(report.seed, 99);
}

#[test]
fn empty_sets_and_exact_reference_forecasts_are_errors() {
    let cfg = tiny_config(5);
    let network = build_network(&cfg).unwrap();
    assert!(matches!(
        evaluate_model(&network, &[], "distinct-days", 0),
        Err(EvaluationError::EmptySet)
    ));

    // If persistence nails every sample its MSE is 0 and skill is undefined.
    let mut samples = sample_set(&cfg, 4, "degenerate");
    for s in &mut samples {
        s.ghi_target_wm2 = persistence_of(s);
    }
    let preds = vec![0.0; samples.len()];
    assert!(matches!(
        score_predictions(&samples, &preds, "distinct-days", 0),
        Err(EvaluationError::UndefinedSkill { mse_persistence }) if mse_persistence == 0.0
    ));
}

#[test]
fn report_csv_bytes_are_pinned() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("report.csv");
    let reports = vec![
        EvaluationReport {
            horizon_min: 2,
            split: "distinct-days".into(),
            n_samples: 123,
            mse_model: 1234.5,
            mse_persistence: 2000.0,
            forecast_skill: 1.0 - 1234.5 / 2000.0,
            seed: 42,
        },
        EvaluationReport {
            horizon_min: 10,
            split: "distinct-days".into(),
            n_samples: 117,
            mse_model: 900.25,
            mse_persistence: 1000.0,
            forecast_skill: 1.0 - 900.25 / 1000.0,
            seed: 42,
        },
    ];
    write_reports_csv(&reports, &path).unwrap();
    let got = std::fs::read_to_string(&path).unwrap();
    let want = format!(
        "{REPORT_CSV_HEADER}\n\
         2,distinct-days,123,1234.500000,2000.000000,0.382750,42\n\
         10,distinct-days,117,900.250000,1000.000000,0.099750,42\n"
    );
    assert_eq!(got, want);
}

#[test]
fn sweep_trains_scores_and_persists_each_horizon() {
    let archive = TempDir::new().unwrap();
    let synth = SynthConfig {
        days: 2,
        start_date: NaiveDate::from_ymd_opt(2026, 6, 1).unwrap(),
        image_size: 33,
        cadence_min: 2,
        clear_fraction: 0.0,
        broken_fraction: 1.0,
        overcast_fraction: 0.0,
    };
    let site = ClearSkyParams::default();
    synth_generate(&synth, &site, 33, archive.path()).unwrap();
    let index = ingest_directory(archive.path()).unwrap();

    let sweep_cfg = SweepConfig {
        image_size: 33,
        site,
        split: SplitSpec {
            kind: SplitKind::DistinctDays { train_ratio: 0.5 },
            seed: 9,
        },
        train: TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 2,
            early_stop_patience: 2,
            shuffle_seed: 0,
        },
        seed: 1234,
        filters: Some(2),
    };
    assert_eq!(split_label(&sweep_cfg.split), "distinct-days");

    let out1 = TempDir::new().unwrap();
    // Horizon 3 is off the even-minute grid: its leg must fail without
    // taking the sweep down.
    let outcome = horizon_sweep(&index, &[2, 3, 10], &sweep_cfg, out1.path()).unwrap();
    assert_eq!(
        outcome.reports.iter().map(|r| r.horizon_min).collect::<Vec<_>>(),
        vec![2, 10]
    );
    assert_eq!(outcome.failures.len(), 1);
    assert_eq!(outcome.failures[0].horizon_min, 3);
    assert!(matches!(
        outcome.failures[0].error,
        EvaluationError::Dataset(_)
    ));
    assert_eq!(outcome.histories.len(), 2);
    for report in &outcome.reports {
        assert!(report.n_samples > 0);
        assert_eq!(report.split, "distinct-days");
        assert_eq!(report.seed, 1234);
        assert!(report.mse_persistence > 0.0);
        assert!(report.forecast_skill.is_finite());
    }

    // Artifacts: CSV (header + 2 rows), plot, and a loadable checkpoint
    // per successful horizon with the configured geometry.
    let csv1 = std::fs::read(out1.path().join("sweep.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&csv1).lines().count(), 3);
    assert!(out1.path().join("sweep_skill.png").exists());
    for &h in &[2u32, 10] {
        let net = load_checkpoint(&out1.path().join(sweep_checkpoint_name(h))).unwrap();
        assert_eq!(net.config().horizon_min, h);
        assert_eq!(net.config().filters_per_conv, 2);
        assert_eq!(net.config().input_size, 33);
    }

    // Same seeds, fresh output directory: byte-identical CSV.
    let out2 = TempDir::new().unwrap();
    let rerun = horizon_sweep(&index, &[2, 3, 10], &sweep_cfg, out2.path()).unwrap();
    let csv2 = std::fs::read(out2.path().join("sweep.csv")).unwrap();
    assert_eq!(csv1, csv2);
    assert_eq!(outcome.reports, rerun.reports);
}

#[test]
fn sweep_applies_the_short_horizon_filter_policy() {
    let archive = TempDir::new().unwrap();
    let synth = SynthConfig {
        days: 1,
        start_date: NaiveDate::from_ymd_opt(2026, 6, 10).unwrap(),
        image_size: 33,
        cadence_min: 2,
        clear_fraction: 0.0,
        broken_fraction: 1.0,
        overcast_fraction: 0.0,
    };
    let site = ClearSkyParams::default();
    synth_generate(&synth, &site, 17, archive.path()).unwrap();
    let index = ingest_directory(archive.path()).unwrap();

    let sweep_cfg = SweepConfig {
        image_size: 33,
        site,
        split: SplitSpec {
            kind: SplitKind::AfternoonValidation {
                cutoff_local: 13 * 60,
            },
            seed: 0,
        },
        train: TrainConfig {
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 1,
            early_stop_patience: 1,
            shuffle_seed: 0,
        },
        seed: 55,
        filters: None,
    };
    let out = TempDir::new().unwrap();
    let outcome = horizon_sweep(&index, &[2], &sweep_cfg, out.path()).unwrap();
    assert!(outcome.failures.is_empty());
    assert_eq!(outcome.reports.len(), 1);
    assert_eq!(outcome.reports[0].split, "afternoon");

    let net = load_checkpoint(&out.path().join(sweep_checkpoint_name(2))).unwrap();
    assert_eq!(
        net.config().filters_per_conv,
        16,
        "horizons at or below 4 minutes drop to 16 filters"
    );
}
