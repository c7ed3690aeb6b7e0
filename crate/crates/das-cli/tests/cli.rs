use std::path::Path;
use std::process::{Command, Output};

fn das(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_das"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const SMALL_CFG: &str = "\
epochs_alpha = 2
epochs_beta = 2
epochs_retrain = 4
epochs_select = 1
batch_size = 16
learning_rate = 1e-3
per_class_train = 40
per_class_val = 10
repeats = 1
seed = 9
layer1.kernels = 1x1,3x3
layer1.depths = 4
layer2.kernels = 1x1
layer2.depths = 4
layer3.kernels = 1x1
layer3.depths = 4,8
layer4.depths = 16
";

fn gen_scene(dir: &Path) {
    let out = das(
        dir,
        &[
            "gen", "--classes", "2", "--height", "32", "--width", "32", "--looks", "4",
            "--region-size", "8", "--seed", "5", "--out", "scene.pct", "--labels", "scene.plb",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
}

#[test]
fn version_prints_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = das(dir.path(), &["version"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out), format!("das {}\n", env!("CARGO_PKG_VERSION")));
}

#[test]
fn usage_problems_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["frobnicate"][..],
        &[][..],
        &["gen", "--classes", "2"][..],          // missing required outputs
        &["search", "--config", "a", "--image", "b"][..], // missing labels/out
    ] {
        let out = das(dir.path(), args);
        assert_eq!(out.status.code(), Some(1), "args {args:?}");
        assert!(!stderr(&out).is_empty(), "args {args:?}");
    }
    let out = das(dir.path(), &["frobnicate"]);
    assert!(stderr(&out).contains("Usage"), "{}", stderr(&out));
}

#[test]
fn help_is_a_success() {
    let dir = tempfile::tempdir().unwrap();
    let out = das(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    for cmd in ["gen", "search", "train", "eval", "map", "version"] {
        assert!(stdout(&out).contains(cmd), "help lacks {cmd}");
    }
}

#[test]
fn the_whole_pipeline_runs_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen_scene(d);
    assert!(d.join("scene.pct").is_file());
    assert!(d.join("scene.plb").is_file());
    std::fs::write(d.join("das.cfg"), SMALL_CFG).unwrap();

    let out = das(
        d,
        &[
            "search", "--config", "das.cfg", "--image", "scene.pct", "--labels", "scene.plb",
            "--out", "arch.txt",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("arch="), "{}", stdout(&out));
    assert!(stderr(&out).contains("run=1 seed=9"), "{}", stderr(&out));
    let arch_text = std::fs::read_to_string(d.join("arch.txt")).unwrap();
    assert!(arch_text.contains("layer1.kernel="), "{arch_text}");
    assert!(arch_text.ends_with("complex=0\n"), "{arch_text}");

    let out = das(
        d,
        &[
            "train", "--config", "das.cfg", "--arch", "arch.txt", "--image", "scene.pct",
            "--labels", "scene.plb", "--out", "model.dasm",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let train_report = stdout(&out);
    assert!(train_report.starts_with("OA="), "{train_report}");
    assert!(stderr(&out).contains("epoch=1 loss="), "{}", stderr(&out));
    assert!(d.join("model.dasm").is_file());

    let out = das(
        d,
        &[
            "eval", "--config", "das.cfg", "--model", "model.dasm", "--image", "scene.pct",
            "--labels", "scene.plb",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    // the split derives from the same config and seed, so eval repeats train's report
    assert_eq!(stdout(&out), train_report);

    let out = das(
        d,
        &["map", "--model", "model.dasm", "--image", "scene.pct", "--out", "map.plb"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let map = das_core::data::read_plb(&d.join("map.plb")).unwrap();
    assert_eq!((map.height, map.width), (32, 32));
    assert!((1..=2).contains(&map.at(0, 0)));
}

#[test]
fn identical_invocations_write_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen_scene(d);
    std::fs::write(d.join("das.cfg"), SMALL_CFG).unwrap();
    for name in ["a.txt", "b.txt"] {
        let out = das(
            d,
            &[
                "search", "--config", "das.cfg", "--image", "scene.pct", "--labels",
                "scene.plb", "--out", name,
            ],
        );
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    assert_eq!(
        std::fs::read(d.join("a.txt")).unwrap(),
        std::fs::read(d.join("b.txt")).unwrap()
    );
}

#[test]
fn broken_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen_scene(d);

    // missing model file
    let out = das(
        d,
        &["eval", "--model", "absent.dasm", "--image", "scene.pct", "--labels", "scene.plb"],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).starts_with("error:"), "{}", stderr(&out));

    // corrupted image magic
    let mut bytes = std::fs::read(d.join("scene.pct")).unwrap();
    bytes[0] = b'X';
    std::fs::write(d.join("bad.pct"), &bytes).unwrap();
    std::fs::write(d.join("das.cfg"), SMALL_CFG).unwrap();
    let out = das(
        d,
        &[
            "search", "--config", "das.cfg", "--image", "bad.pct", "--labels", "scene.plb",
            "--out", "arch.txt",
        ],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn config_mistakes_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen_scene(d);
    std::fs::write(d.join("bad.cfg"), "epochs = 3\n").unwrap();
    let out = das(
        d,
        &[
            "search", "--config", "bad.cfg", "--image", "scene.pct", "--labels", "scene.plb",
            "--out", "arch.txt",
        ],
    );
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("unknown key"), "{}", stderr(&out));
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen_scene(d);
    let cfg = SMALL_CFG.replace("learning_rate = 1e-3", "learning_rate = 1e150");
    std::fs::write(d.join("hot.cfg"), cfg).unwrap();
    let out = das(
        d,
        &[
            "search", "--config", "hot.cfg", "--image", "scene.pct", "--labels", "scene.plb",
            "--out", "arch.txt",
        ],
    );
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("divergence"), "{}", stderr(&out));
}
