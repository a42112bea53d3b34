use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn segcam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segcam")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Tiny dataset and a one-epoch model shared by the tests below.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    model: PathBuf,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let data = root.join("data");
        let o = segcam(&["synth", "--out", p(&data), "--train", "8", "--test", "3", "--size", "24", "--seed", "5"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let model = root.join("model.bin");
        let o = segcam(&[
            "train", "--data", p(&data.join("train")), "--test", p(&data.join("test")), "--out", p(&model), "--epochs", "1",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let stdout = String::from_utf8_lossy(&o.stdout);
        assert!(stdout.contains("test IoU"), "{stdout}");
        Fixture { _dir: dir, root, model }
    })
}

#[test]
fn synth_writes_image_mask_pairs() {
    let f = fixture();
    let count = |d: &str, prefix: &str| {
        fs::read_dir(f.root.join("data").join(d))
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with(prefix))
            .count()
    };
    assert_eq!((count("train", "img_"), count("train", "mask_")), (8, 8));
    assert_eq!((count("test", "img_"), count("test", "mask_")), (3, 3));
}

#[test]
fn explain_all_methods_writes_twelve_files() {
    let f = fixture();
    let out = f.root.join("explain_all");
    let image = f.root.join("data/test/img_0000.ppm");
    let o = segcam(&["explain", "--model", p(&f.model), "--image", p(&image), "--out", p(&out), "--region", "rect:0,0,12,12"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut names: Vec<String> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    assert_eq!(names.len(), 12, "{names:?}");
    assert!(names.contains(&"img_0000_seg-grad-cam.pgm".to_string()));
    assert!(names.contains(&"img_0000_seg-eigen-cam_overlay.ppm".to_string()));
}

#[test]
fn explain_with_ground_truth_mask() {
    let f = fixture();
    let out = f.root.join("explain_mask");
    let o = segcam(&[
        "explain", "--model", p(&f.model), "--image", p(&f.root.join("data/test/img_0001.ppm")), "--out", p(&out),
        "--methods", "seg-eigen-cam", "--region", "ground-truth", "--mask", p(&f.root.join("data/test/mask_0001.pgm")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_dir(&out).unwrap().count(), 2);
}

#[test]
fn unknown_method_is_a_usage_error_and_writes_nothing() {
    let f = fixture();
    let out = f.root.join("explain_bad");
    let o = segcam(&[
        "explain", "--model", p(&f.model), "--image", p(&f.root.join("data/test/img_0000.ppm")), "--out", p(&out),
        "--methods", "seg-grad-cam,seg-magic-cam",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seg-magic-cam"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn missing_model_is_a_runtime_error() {
    let f = fixture();
    let o = segcam(&[
        "explain", "--model", p(&f.root.join("nope.bin")), "--image", p(&f.root.join("data/test/img_0000.ppm")), "--out",
        p(&f.root.join("x")),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn explain_is_deterministic() {
    let f = fixture();
    let run = |name: &str| {
        let out = f.root.join(name);
        let o = segcam(&[
            "explain", "--model", p(&f.model), "--image", p(&f.root.join("data/test/img_0002.ppm")), "--out", p(&out),
            "--methods", "seg-score-cam,seg-grad-cam-pp", "--layer", "dec1", "--region", "rect:2,2,10,10",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        files
    };
    assert_eq!(run("det_a"), run("det_b"));
}

#[test]
fn evaluate_writes_csv_and_is_worker_independent() {
    let f = fixture();
    let run = |name: &str, workers: &str| {
        let out = f.root.join(name);
        let o = segcam(&[
            "evaluate", "--model", p(&f.model), "--data", p(&f.root.join("data/test")), "--out", p(&out),
            "--methods", "seg-eigen-cam,oracle-saliency,random-saliency", "--region", "ground-truth", "--workers", workers,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(String::from_utf8_lossy(&o.stdout).contains("oracle-saliency"));
        fs::read_to_string(out).unwrap()
    };
    let a = run("r1.csv", "1");
    let b = run("r3.csv", "3");
    assert_eq!(a, b);
    assert!(a.starts_with("image,method,methodology,"));
    assert_eq!(a.lines().filter(|l| l.starts_with("img_")).count(), 3 * 3 * 3);
    assert_eq!(a.lines().filter(|l| l.starts_with("mean,")).count(), 3 * 3);
}

#[test]
fn evaluate_rejects_bad_threshold() {
    let f = fixture();
    let o = segcam(&[
        "evaluate", "--model", p(&f.model), "--data", p(&f.root.join("data/test")), "--out", p(&f.root.join("bad.csv")),
        "--threshold", "1.5",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!f.root.join("bad.csv").exists());
}

#[test]
fn config_file_and_flag_precedence() {
    let f = fixture();
    let cfg = f.root.join("synth.cfg");
    fs::write(&cfg, "# small scenes\ntrain = 2\ntest = 1\nsize = 20\n").unwrap();
    let out = f.root.join("cfg_data");
    let o = segcam(&["synth", "--out", p(&out), "--config", p(&cfg), "--train", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_dir(out.join("train")).unwrap().count(), 3 * 2);
    assert_eq!(fs::read_dir(out.join("test")).unwrap().count(), 2);
    let header = fs::read(out.join("test/img_0000.ppm")).unwrap();
    assert!(header.starts_with(b"P6\n20 20\n"), "{:?}", &header[..12]);

    let bad = f.root.join("bad.cfg");
    fs::write(&bad, "train = 2\ncolour = red\n").unwrap();
    let o = segcam(&["synth", "--out", p(&f.root.join("bad_data")), "--config", p(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));
}

#[test]
fn gradcheck_passes_and_detects_an_injected_fault() {
    let o = segcam(&["gradcheck", "--trials", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("conv2d") && stdout.contains("tap:dec0"), "{stdout}");

    let o = segcam(&["gradcheck", "--trials", "3", "--inject-fault", "conv2d"]);
    assert_eq!(o.status.code(), Some(1));
    let all = format!("{}{}", String::from_utf8_lossy(&o.stdout), stderr(&o));
    assert!(all.lines().any(|l| l.contains("conv2d") && l.contains("FAIL")), "{all}");
}

#[test]
fn help_and_bad_subcommand() {
    assert!(segcam(&["--help"]).status.success());
    assert_eq!(segcam(&["frobnicate"]).status.code(), Some(2));
}
