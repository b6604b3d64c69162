use proptest::prelude::*;
use surfwatch_cli::config::AppConfig;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn toml_round_trip(
        desk in any::<bool>(),
        seed in 0..=i64::MAX as u64,
        epochs in 1usize..2000,
        lr in 1e-6..1e-1f64,
        tau_ms in 0.0..3.0f64,
        min_area in 0usize..500,
        held in 0usize..50,
        workers in 1usize..16,
    ) {
        let mut cfg = if desk { AppConfig::desk() } else { AppConfig::default() };
        cfg.seed = seed;
        cfg.train.epochs = epochs;
        cfg.train.learning_rate = lr;
        cfg.postprocess.tau_ms = tau_ms;
        cfg.postprocess.min_area = min_area;
        cfg.dataset.held_out = held;
        cfg.watch.workers = workers;
        prop_assert!(cfg.validate().is_ok());
        let text = cfg.to_toml().unwrap();
        let back = AppConfig::from_toml(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_toml().unwrap(), text);
    }

    #[test]
    fn unrepresentable_seed_rejected(seed in (i64::MAX as u64 + 1)..=u64::MAX) {
        let mut cfg = AppConfig::desk();
        cfg.seed = seed;
        prop_assert!(cfg.validate().is_err());
    }

    #[test]
    fn env_overrides_only_paths(dir in "[a-z]{1,12}") {
        let base = AppConfig::desk();
        let mut cfg = base.clone();
        let d = dir.clone();
        cfg.apply_env(move |k| (k == "SURFWATCH_DATA_DIR").then(|| d.clone()));
        prop_assert_eq!(cfg.paths.data_dir.to_str().unwrap(), dir.as_str());
        cfg.paths.data_dir = base.paths.data_dir.clone();
        prop_assert_eq!(cfg, base);
    }
}
