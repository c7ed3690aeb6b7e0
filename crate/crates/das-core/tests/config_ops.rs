use das_core::config::Config;
use das_core::error::DasError;
use das_core::search::Activation;
use das_core::space::LAYERS;

#[test]
fn an_empty_file_yields_the_documented_defaults() {
    let cfg = Config::parse("").unwrap();
    assert_eq!(cfg, Config::default());
    assert_eq!(cfg.epochs_alpha, 200);
    assert_eq!(cfg.epochs_beta, 200);
    assert_eq!(cfg.epochs_retrain, 500);
    assert_eq!(cfg.epochs_select, 50);
    assert_eq!(cfg.batch_size, 64);
    assert_eq!(cfg.learning_rate, 1e-4);
    assert_eq!(cfg.gamma, 1e-3);
    assert_eq!(cfg.activation, Activation::Sparsemax);
    assert!(!cfg.complex);
    assert_eq!(cfg.channels, 12);
    assert_eq!(cfg.per_class_train, 300);
    assert_eq!(cfg.per_class_val, 100);
    assert_eq!(cfg.per_class_test, None);
    assert!(cfg.standardize);
    assert_eq!(cfg.seed, 0);
    assert_eq!(cfg.repeats, 10);
    assert!(cfg.kernels.iter().all(|k| k.is_none()));
    assert!(cfg.depths.iter().all(|d| d.is_none()));

    // comments and blank lines change nothing
    let noisy = Config::parse("# a comment\n\n   \n# another = 5\n").unwrap();
    assert_eq!(noisy, cfg);
}

#[test]
fn every_key_parses_with_free_form_spacing() {
    let text = "\
# full override, with uneven spacing and inline comments
epochs_alpha=3
epochs_beta = 4\r
  epochs_retrain   =   7
epochs_select =2
batch_size = 16   # small batches
learning_rate = 1e-2
gamma = 0.5
activation = softmax
complex = 1
channels = 6
per_class_train = 40
per_class_val = 10
per_class_test = 25
standardize = 0
seed = 99
repeats = 2
layer1.kernels = 1x1, 3x3
layer1.depths = 4,8
layer5.depths = 3
";
    let cfg = Config::parse(text).unwrap();
    assert_eq!(cfg.epochs_alpha, 3);
    assert_eq!(cfg.epochs_beta, 4);
    assert_eq!(cfg.epochs_retrain, 7);
    assert_eq!(cfg.epochs_select, 2);
    assert_eq!(cfg.batch_size, 16);
    assert_eq!(cfg.learning_rate, 1e-2);
    assert_eq!(cfg.gamma, 0.5);
    assert_eq!(cfg.activation, Activation::Softmax);
    assert!(cfg.complex);
    assert_eq!(cfg.channels, 6);
    assert_eq!(cfg.per_class_train, 40);
    assert_eq!(cfg.per_class_val, 10);
    assert_eq!(cfg.per_class_test, Some(25));
    assert!(!cfg.standardize);
    assert_eq!(cfg.seed, 99);
    assert_eq!(cfg.repeats, 2);
    assert_eq!(cfg.kernels[0].as_deref(), Some(&[(1, 1), (3, 3)][..]));
    assert_eq!(cfg.depths[0].as_deref(), Some(&[4, 8][..]));
    assert_eq!(cfg.depths[4].as_deref(), Some(&[3][..]));
    for l in 1..LAYERS {
        assert!(cfg.kernels[l].is_none());
    }
}

#[test]
fn the_last_assignment_wins() {
    let cfg = Config::parse("seed = 1\nseed = 2\n").unwrap();
    assert_eq!(cfg.seed, 2);
}

#[test]
fn unknown_keys_are_a_hard_error() {
    for (text, wrong) in [
        ("epoch_alpha = 3", "epoch_alpha"),
        ("layer1.kernel = 3x3", "layer1.kernel"),
        ("layer6.kernels = 3x3", "layer6.kernels"),
        ("layer0.depths = 8", "layer0.depths"),
        ("layerx.depths = 8", "layerx.depths"),
        ("Seed = 1", "Seed"),
    ] {
        let err = Config::parse(text).unwrap_err();
        match &err {
            DasError::Config(msg) => {
                assert!(msg.contains("line 1"), "{text}: {msg}");
                assert!(msg.contains("unknown key"), "{text}: {msg}");
                assert!(msg.contains(wrong), "{text}: {msg}");
            }
            other => panic!("{text}: expected a config error, got {other:?}"),
        }
        assert_eq!(err.exit_code(), 1);
    }
}

#[test]
fn bad_values_name_their_line() {
    for (text, line) in [
        ("epochs_alpha = many", "line 1"),
        ("\nbatch_size = 0", "line 2"),
        ("\n\nlearning_rate = -1e-4", "line 3"),
        ("learning_rate = inf", "line 1"),
        ("gamma = -0.1", "line 1"),
        ("activation = relu", "line 1"),
        ("complex = yes", "line 1"),
        ("channels = 7", "line 1"),
        ("per_class_train = 0", "line 1"),
        ("per_class_test = some", "line 1"),
        ("repeats = 0", "line 1"),
        ("seed = -1", "line 1"),
        ("standardize = true", "line 1"),
        ("layer1.kernels = 3", "line 1"),
        ("layer1.kernels = 3xтри", "line 1"),
        ("layer2.depths = 8,, 16", "line 1"),
        ("just a stray line", "line 1"),
    ] {
        let err = Config::parse(text).unwrap_err();
        match &err {
            DasError::Config(msg) => assert!(msg.contains(line), "{text}: {msg}"),
            other => panic!("{text}: expected a config error, got {other:?}"),
        }
    }
}

#[test]
fn complex_and_channel_settings_must_agree() {
    assert!(Config::parse("complex = 1\nchannels = 6").is_ok());
    assert!(Config::parse("complex = 0\nchannels = 9").is_ok());

    let err = Config::parse("complex = 1").unwrap_err();
    assert!(matches!(err, DasError::Config(_)), "{err:?}");
    let err = Config::parse("channels = 6").unwrap_err();
    assert!(matches!(err, DasError::Config(_)), "{err:?}");
    let err = Config::parse("complex = 1\nchannels = 12").unwrap_err();
    assert!(matches!(err, DasError::Config(_)), "{err:?}");

    assert_eq!(Config::parse("channels = 9").unwrap().input_channels(), 9);
    assert_eq!(
        Config::parse("complex = 1\nchannels = 6")
            .unwrap()
            .input_channels(),
        6
    );
    assert_eq!(Config::default().input_channels(), 12);
}

#[test]
fn candidate_overrides_replace_the_stock_lists() {
    let cfg = Config::parse(
        "layer1.kernels = 1x1, 3x3\nlayer1.depths = 4, 8\nlayer4.depths = 64, 128\n",
    )
    .unwrap();
    let space = cfg.space(5).unwrap();
    assert_eq!(space.layers[0].kernel_sizes, vec![(1, 1), (3, 3)]);
    assert_eq!(space.layers[0].depths, vec![4, 8]);
    assert_eq!(space.layers[3].depths, vec![64, 128]);
    // untouched layers keep the stock lists
    let stock = das_core::space::SearchSpaceSpec::default_space(5).unwrap();
    assert_eq!(space.layers[1], stock.layers[1]);
    assert_eq!(space.layers[2], stock.layers[2]);
    assert_eq!(space.layers[4].depths, vec![5]);
    assert_eq!(
        space.total_architectures(),
        (2 * 2) * (16 * 4) * (9 * 4) * 2
    );

    // overrides still have to form a valid space
    let cfg = Config::parse("layer4.kernels = 3x3").unwrap();
    assert!(cfg.space(5).is_err());
    let cfg = Config::parse("layer5.depths = 7").unwrap();
    assert!(cfg.space(5).is_err());
    let cfg = Config::parse("layer1.depths = 8, 8").unwrap();
    assert!(cfg.space(5).is_err());
}

#[test]
fn run_settings_flow_into_the_search_and_training_configs() {
    let cfg = Config::parse(
        "epochs_alpha = 5\nepochs_beta = 6\nbatch_size = 32\nlearning_rate = 1e-3\n\
         gamma = 0.01\nactivation = softmax\nseed = 11\n",
    )
    .unwrap();
    let sc = cfg.search_config();
    assert_eq!(sc.epochs_alpha, 5);
    assert_eq!(sc.epochs_beta, 6);
    assert_eq!(sc.batch_size, 32);
    assert_eq!(sc.learning_rate, 1e-3);
    assert_eq!(sc.gamma, 0.01);
    assert_eq!(sc.activation, Activation::Softmax);
    assert!(!sc.complex_mode);
    assert_eq!(sc.seed, 11);

    let tc = cfg.train_config(77);
    assert_eq!(tc.epochs, 77);
    assert_eq!(tc.batch_size, 32);
    assert_eq!(tc.learning_rate, 1e-3);
    assert_eq!(tc.seed, 11);
    assert!(tc.select_best);
}

#[test]
fn configs_load_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, "seed = 5\nrepeats = 1\n").unwrap();
    let cfg = Config::load(&path).unwrap();
    assert_eq!(cfg.seed, 5);
    assert_eq!(cfg.repeats, 1);

    let err = Config::load(&dir.path().join("absent.cfg")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
