//! Integration tests for layered configuration: precedence, unknown-key
//! suggestions, field validation, output-root resolution, and the
//! labeled seed fan-out.

use skycast_core::clearsky::{ClearSkyModel, LinkeTurbidity};
use skycast_core::config::{
    echo_config, load_config, CliOverrides, ConfigError, RunConfig, SplitChoice,
};
use skycast_core::dataset::SplitKind;
use skycast_core::seed::derive_seed;
use std::path::PathBuf;
use tempfile::TempDir;

fn write_config(dir: &TempDir, body: &str) -> PathBuf {
    let path = dir.path().join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn defaults_apply_without_file_or_flags() {
    let config = load_config(None, &CliOverrides::default()).unwrap();
    assert_eq!(config.seed, 0);
    assert_eq!(config.horizon_min, 10);
    assert_eq!(config.image_size, 64);
    assert_eq!(config.training.learning_rate, 1e-3);
    assert_eq!(config.training.batch_size, 32);
    assert_eq!(config.network.filters, None);
    assert_eq!(config.network_config(10).filters_per_conv, 32);
    assert_eq!(
        config.split.kind,
        SplitKind::DistinctDays { train_ratio: 0.8 }
    );
    assert_eq!(config.site.model, ClearSkyModel::Esra);
    assert_eq!(config.archive, PathBuf::from("data/synth"));
}

#[test]
fn file_overrides_defaults_and_flags_override_the_file() {
    let dir = TempDir::new().unwrap();
    let path = write_config(
        &dir,
        r#"
            seed = 7
            horizon_min = 4
            archive = "elsewhere"

            [site]
            lat_deg = 44.0

            [split]
            kind = "afternoon_validation"
            cutoff_local = "14:00"

            [network]
            filters = 8

            [training]
            learning_rate = 1e-2
            max_epochs = 5
        "#,
    );

    let from_file = load_config(Some(&path), &CliOverrides::default()).unwrap();
    assert_eq!(from_file.seed, 7);
    assert_eq!(from_file.horizon_min, 4);
    assert_eq!(from_file.archive, PathBuf::from("elsewhere"));
    assert_eq!(from_file.training.learning_rate, 1e-2);
    assert_eq!(from_file.training.max_epochs, 5);
    // Untouched siblings keep their defaults (partial-table merge).
    assert_eq!(from_file.training.batch_size, 32);
    assert_eq!(from_file.site.lat_deg, 44.0);
    assert_eq!(from_file.site.model, ClearSkyModel::Esra);
    assert_eq!(from_file.network.filters, Some(8));
    assert_eq!(
        from_file.split.kind,
        SplitKind::AfternoonValidation { cutoff_local: 840 }
    );

    let flags = CliOverrides {
        seed: Some(9),
        learning_rate: Some(1e-4),
        filters: Some(16),
        horizon_min: Some(10),
        ..CliOverrides::default()
    };
    let effective = load_config(Some(&path), &flags).unwrap();
    assert_eq!(effective.seed, 9);
    assert_eq!(effective.training.learning_rate, 1e-4);
    assert_eq!(effective.network.filters, Some(16));
    assert_eq!(effective.horizon_min, 10);
    // Non-overridden file values survive.
    assert_eq!(effective.training.max_epochs, 5);
    assert_eq!(effective.site.lat_deg, 44.0);
}

#[test]
fn unknown_keys_are_rejected_with_a_nearest_key_suggestion() {
    let dir = TempDir::new().unwrap();

    let typo = write_config(&dir, "[training]\nlearnign_rate = 0.1\n");
    match load_config(Some(&typo), &CliOverrides::default()) {
        Err(ConfigError::UnknownKey {
            key,
            suggestion,
            valid,
        }) => {
            assert_eq!(key, "training.learnign_rate");
            assert_eq!(suggestion.as_deref(), Some("learning_rate"));
            assert!(valid.contains("learning_rate"));
            assert!(valid.contains("batch_size"));
        }
        other => panic!("expected UnknownKey, got {other:?}"),
    }

    let top = write_config(&dir, "sede = 1\n");
    match load_config(Some(&top), &CliOverrides::default()) {
        Err(ConfigError::UnknownKey { key, suggestion, .. }) => {
            assert_eq!(key, "sede");
            assert_eq!(suggestion.as_deref(), Some("seed"));
        }
        other => panic!("expected UnknownKey, got {other:?}"),
    }

    let far = write_config(&dir, "zzzzzzzz = 1\n");
    match load_config(Some(&far), &CliOverrides::default()) {
        Err(ConfigError::UnknownKey { suggestion, .. }) => assert_eq!(suggestion, None),
        other => panic!("expected UnknownKey, got {other:?}"),
    }
}

#[test]
fn split_tables_are_checked_against_their_kind() {
    let dir = TempDir::new().unwrap();

    let missing_kind = write_config(&dir, "[split]\ntrain_ratio = 0.7\n");
    assert!(matches!(
        load_config(Some(&missing_kind), &CliOverrides::default()),
        Err(ConfigError::Invalid { field, .. }) if field == "split.kind"
    ));

    let wrong_param = write_config(
        &dir,
        "[split]\nkind = \"afternoon_validation\"\ntrain_ratio = 0.7\n",
    );
    match load_config(Some(&wrong_param), &CliOverrides::default()) {
        Err(ConfigError::UnknownKey { key, valid, .. }) => {
            assert_eq!(key, "split.train_ratio");
            assert_eq!(valid, "kind, cutoff_local");
        }
        other => panic!("expected UnknownKey, got {other:?}"),
    }

    let bad_kind = write_config(&dir, "[split]\nkind = \"weekly\"\n");
    assert!(matches!(
        load_config(Some(&bad_kind), &CliOverrides::default()),
        Err(ConfigError::Invalid { field, .. }) if field == "split.kind"
    ));
}

#[test]
fn invariant_violations_name_the_offending_field() {
    let dir = TempDir::new().unwrap();
    let cases = [
        ("horizon_min = 7\n", "horizon_min"),
        ("image_size = 16\n", "image_size"),
        ("[training]\nlearning_rate = 0.0\n", "training"),
        ("[split]\nkind = \"distinct_days\"\ntrain_ratio = 1.5\n", "split.train_ratio"),
        ("[site]\nlat_deg = 100.0\n", "site"),
        ("[network]\nfilters = 0\n", "network.filters"),
        ("[synth]\ncadence_min = 0\n", "synth"),
    ];
    for (body, field) in cases {
        let path = write_config(&dir, body);
        match load_config(Some(&path), &CliOverrides::default()) {
            Err(ConfigError::Invalid { field: got, .. }) => {
                assert_eq!(got, field, "config body: {body}")
            }
            other => panic!("expected Invalid({field}), got {other:?} for {body}"),
        }
    }

    // A cutoff flag without the afternoon split is a contradiction.
    let flags = CliOverrides {
        cutoff_local: Some(840),
        ..CliOverrides::default()
    };
    assert!(matches!(
        load_config(None, &flags),
        Err(ConfigError::Invalid { field, .. }) if field == "split"
    ));
}

#[test]
fn output_root_resolution_and_echo_round_trip() {
    // Flag > file > SKYCAST_OUT > built-in. This test owns the env var;
    // the others never read `out` without overriding it.
    let dir = TempDir::new().unwrap();
    std::env::remove_var("SKYCAST_OUT");
    let plain = load_config(None, &CliOverrides::default()).unwrap();
    assert_eq!(plain.out, PathBuf::from("runs"));

    std::env::set_var("SKYCAST_OUT", "env-root");
    let from_env = load_config(None, &CliOverrides::default()).unwrap();
    assert_eq!(from_env.out, PathBuf::from("env-root"));

    let path = write_config(&dir, "out = \"file-root\"\n");
    let from_file = load_config(Some(&path), &CliOverrides::default()).unwrap();
    assert_eq!(from_file.out, PathBuf::from("file-root"));

    let flags = CliOverrides {
        out: Some(PathBuf::from("flag-root")),
        ..CliOverrides::default()
    };
    let from_flag = load_config(Some(&path), &flags).unwrap();
    assert_eq!(from_flag.out, PathBuf::from("flag-root"));
    std::env::remove_var("SKYCAST_OUT");

    // The echo is a faithful JSON round trip of the effective config.
    let out_dir = TempDir::new().unwrap();
    let echo_path = echo_config(&from_flag, out_dir.path()).unwrap();
    assert_eq!(echo_path.file_name().unwrap(), "config.echo.json");
    let text = std::fs::read_to_string(&echo_path).unwrap();
    let parsed: RunConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed, from_flag);
}

#[test]
fn the_global_seed_fans_out_through_stable_labels() {
    let mut config = RunConfig::default();
    config.seed = 5;
    assert_eq!(config.split_spec().seed, derive_seed(5, "split"));
    assert_eq!(config.split_spec().kind, config.split.kind);
    assert_eq!(
        config.network_config(10).init_seed,
        derive_seed(5, "init.h10")
    );
    assert_eq!(
        config.train_config(4).shuffle_seed,
        derive_seed(5, "shuffle.h4")
    );
    assert_ne!(
        config.network_config(2).init_seed,
        config.network_config(4).init_seed,
        "horizons must not share initialization"
    );
    assert_eq!(config.synth_seed(), derive_seed(5, "synth"));

    let sweep = config.sweep_config();
    assert_eq!(sweep.seed, 5);
    assert_eq!(sweep.image_size, config.image_size);
    assert_eq!(sweep.split.seed, derive_seed(5, "split"));
    assert_eq!(sweep.filters, None);
}

#[test]
fn partial_site_tables_merge_and_monthly_turbidity_parses() {
    let dir = TempDir::new().unwrap();
    let path = write_config(
        &dir,
        "[site]\nlat_deg = 10.0\nlinke_turbidity = [2.0, 2.1, 2.2, 2.3, 2.4, 2.5, 2.6, 2.7, 2.8, 2.9, 3.0, 3.1]\n",
    );
    let config = load_config(Some(&path), &CliOverrides::default()).unwrap();
    assert_eq!(config.site.lat_deg, 10.0);
    let default_site = RunConfig::default().site;
    assert_eq!(config.site.lon_deg, default_site.lon_deg);
    assert_eq!(config.site.elevation_m, default_site.elevation_m);
    match config.site.linke_turbidity {
        LinkeTurbidity::Monthly(values) => {
            assert_eq!(values[0], 2.0);
            assert_eq!(values[11], 3.1);
        }
        other => panic!("expected monthly turbidity, got {other:?}"),
    }
}
