use das_core::config::Config;
use das_core::data::{read_pct, read_plb};
use das_core::error::DasError;
use das_core::model::{build_model, write_model};
use das_core::pipeline::{
    load_scene, prepare_splits, run_eval, run_gen, run_map, run_search, run_train, GenSettings,
    PATCH_SIZE,
};
use das_core::search::{read_architecture, write_architecture, DerivedArchitecture};

fn tiny_config() -> Config {
    Config::parse(
        "epochs_alpha = 2\nepochs_beta = 2\nepochs_retrain = 4\nepochs_select = 1\n\
         batch_size = 16\nlearning_rate = 1e-3\nper_class_train = 40\nper_class_val = 10\n\
         repeats = 1\nseed = 9\n\
         layer1.kernels = 1x1,3x3\nlayer1.depths = 4\n\
         layer2.kernels = 1x1\nlayer2.depths = 4\n\
         layer3.kernels = 1x1\nlayer3.depths = 4,8\n\
         layer4.depths = 16\n",
    )
    .unwrap()
}

fn tiny_scene() -> GenSettings {
    GenSettings {
        classes: 2,
        height: 32,
        width: 32,
        looks: 4,
        region_size: 8,
        seed: 5,
    }
}

#[test]
fn generate_search_train_eval_and_map_work_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let image = dir.path().join("scene.pct");
    let labels = dir.path().join("scene.plb");
    let arch_path = dir.path().join("arch.txt");
    let model_path = dir.path().join("model.dasm");
    let map_path = dir.path().join("map.plb");
    let cfg = tiny_config();

    run_gen(&tiny_scene(), &image, &labels).unwrap();
    let img = read_pct(&image).unwrap();
    let lab = read_plb(&labels).unwrap();
    assert_eq!((img.height, img.width), (32, 32));
    assert_eq!((lab.height, lab.width), (32, 32));
    assert_eq!(lab.max_label(), 2);

    let mut search_log = Vec::new();
    let outcome = run_search(&cfg, &image, &labels, &arch_path, Some(&mut search_log)).unwrap();
    let arch = read_architecture(&arch_path).unwrap();
    assert_eq!(arch, outcome.best);
    arch.validate_against(&cfg.space(2).unwrap()).unwrap();
    let log = String::from_utf8(search_log).unwrap();
    assert!(log.contains("run=1 seed=9"), "{log}");

    let mut train_log = Vec::new();
    let report = run_train(
        &cfg,
        &arch_path,
        &image,
        &labels,
        &model_path,
        Some(&mut train_log),
    )
    .unwrap();
    assert_eq!(report.records.len(), 4);
    assert!(report.test.oa.is_finite());
    assert!(report.val.is_some());
    let train_text = String::from_utf8(train_log).unwrap();
    assert!(train_text.contains("epoch=1 loss="), "{train_text}");

    // eval re-derives the identical split, so it must agree exactly
    let again = run_eval(&cfg, &model_path, &image, &labels).unwrap();
    assert_eq!(again.oa, report.test.oa);
    assert_eq!(again.aa, report.test.aa);
    assert_eq!(again.kappa, report.test.kappa);
    assert_eq!(again.per_class, report.test.per_class);

    run_map(&model_path, &image, &map_path).unwrap();
    let map = read_plb(&map_path).unwrap();
    assert_eq!((map.height, map.width), (32, 32));
    for i in 0..map.height {
        for j in 0..map.width {
            let v = map.at(i, j);
            assert!((1..=2).contains(&v), "pixel ({i},{j}) got label {v}");
        }
    }
}

#[test]
fn searches_with_the_same_inputs_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let image = dir.path().join("scene.pct");
    let labels = dir.path().join("scene.plb");
    let cfg = tiny_config();
    run_gen(&tiny_scene(), &image, &labels).unwrap();

    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    run_search(&cfg, &image, &labels, &a, None).unwrap();
    run_search(&cfg, &image, &labels, &b, None).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn splits_follow_the_config_and_feed_the_standardizer() {
    let s = tiny_scene();
    let covs = das_core::data::default_covariances(s.classes).unwrap();
    let (image, labels) =
        das_core::data::synth_generate(&covs, s.height, s.width, s.looks, s.region_size, s.seed)
            .unwrap();
    let cfg = tiny_config();

    let scene = prepare_splits(&image, &labels, 12, PATCH_SIZE, &cfg).unwrap();
    assert_eq!(scene.class_count, 2);
    assert_eq!(scene.train.len(), 80);
    assert_eq!(scene.val.len(), 20);
    assert_eq!(scene.test.len(), 32 * 32 - 100);
    assert!(!scene.train.x.is_complex());

    // the fitted transform centers and scales the training batch
    assert!(scene.standardizer.mean.iter().any(|&m| m != 0.0));
    let std_train = scene.train.standardized(&scene.standardizer).unwrap();
    if let das_core::model::InputBatch::Real(t) = &std_train.x {
        let shape = t.shape().to_vec();
        let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
        let data = t.data();
        for ch in 0..c {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for i in 0..n {
                for k in 0..hw {
                    let v = data[(i * c + ch) * hw + k];
                    sum += v;
                    sq += v * v;
                }
            }
            let count = (n * hw) as f64;
            let mean = sum / count;
            let var = sq / count - mean * mean;
            assert!(mean.abs() < 1e-9, "channel {ch} mean {mean}");
            if [6, 9, 11].contains(&ch) {
                // imaginary parts of the diagonal planes are identically zero
                assert_eq!(var, 0.0, "channel {ch}");
            } else {
                assert!((var - 1.0).abs() < 1e-6, "channel {ch} variance {var}");
            }
        }
    } else {
        panic!("expected a real batch");
    }

    // standardization off keeps the identity transform
    let plain_cfg = Config::parse("standardize = 0\nper_class_train = 40\nper_class_val = 10\nseed = 9").unwrap();
    let plain = prepare_splits(&image, &labels, 12, PATCH_SIZE, &plain_cfg).unwrap();
    assert_eq!(plain.standardizer.mean, vec![0.0; 12]);
    assert_eq!(plain.standardizer.scale, vec![1.0; 12]);

    // six channels build the complex layout
    let complex = prepare_splits(&image, &labels, 6, PATCH_SIZE, &cfg).unwrap();
    assert!(complex.train.x.is_complex());
    assert_eq!(complex.train.x.channels(), 6);
    assert_eq!(complex.standardizer.mean.len(), 6);
}

#[test]
fn mismatched_architectures_and_scenes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let image = dir.path().join("scene.pct");
    let labels = dir.path().join("scene.plb");
    run_gen(&tiny_scene(), &image, &labels).unwrap();
    let cfg = tiny_config();

    let arch2 = DerivedArchitecture {
        kernels: [(3, 3), (3, 3), (3, 3), (1, 1), (1, 1)],
        depths: [4, 4, 4, 16, 2],
        class_count: 2,
        complex_mode: false,
    };

    // complex flag disagreement between config and architecture file
    let complex_arch = DerivedArchitecture {
        complex_mode: true,
        ..arch2.clone()
    };
    let arch_path = dir.path().join("complex.txt");
    write_architecture(&arch_path, &complex_arch).unwrap();
    let err = run_train(&cfg, &arch_path, &image, &labels, &dir.path().join("m.dasm"), None)
        .unwrap_err();
    assert!(matches!(err, DasError::Config(_)), "{err:?}");
    assert_eq!(err.exit_code(), 1);

    // class-count disagreement with the scene
    let arch3 = DerivedArchitecture {
        kernels: [(3, 3), (3, 3), (3, 3), (1, 1), (1, 1)],
        depths: [4, 4, 4, 16, 3],
        class_count: 3,
        complex_mode: false,
    };
    let arch_path = dir.path().join("three.txt");
    write_architecture(&arch_path, &arch3).unwrap();
    let err = run_train(&cfg, &arch_path, &image, &labels, &dir.path().join("m.dasm"), None)
        .unwrap_err();
    assert!(matches!(err, DasError::Argument(_)), "{err:?}");

    // a stored three-class model cannot be scored on the two-class scene
    let model3 = build_model(&arch3, 12, PATCH_SIZE, 0).unwrap();
    let model_path = dir.path().join("three.dasm");
    write_model(&model_path, &model3).unwrap();
    let err = run_eval(&cfg, &model_path, &image, &labels).unwrap_err();
    assert!(matches!(err, DasError::Argument(_)), "{err:?}");
}

#[test]
fn search_needs_a_validation_split() {
    let dir = tempfile::tempdir().unwrap();
    let image = dir.path().join("scene.pct");
    let labels = dir.path().join("scene.plb");
    run_gen(&tiny_scene(), &image, &labels).unwrap();

    let mut cfg = tiny_config();
    cfg.per_class_val = 0;
    let err = run_search(&cfg, &image, &labels, &dir.path().join("a.txt"), None).unwrap_err();
    assert!(matches!(err, DasError::Config(_)), "{err:?}");
}

#[test]
fn scene_files_must_agree_with_each_other() {
    let dir = tempfile::tempdir().unwrap();
    let image = dir.path().join("scene.pct");
    let labels = dir.path().join("scene.plb");
    let other_labels = dir.path().join("other.plb");
    run_gen(&tiny_scene(), &image, &labels).unwrap();
    run_gen(
        &GenSettings {
            height: 24,
            width: 24,
            ..tiny_scene()
        },
        &dir.path().join("other.pct"),
        &other_labels,
    )
    .unwrap();

    let cfg = tiny_config();
    let err = load_scene(&image, &other_labels, 12, PATCH_SIZE, &cfg).unwrap_err();
    assert!(matches!(err, DasError::Argument(_)), "{err:?}");

    let err = load_scene(&dir.path().join("missing.pct"), &labels, 12, PATCH_SIZE, &cfg)
        .unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
