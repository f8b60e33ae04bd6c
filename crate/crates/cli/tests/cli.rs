use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use trajfuse::pipeline::{benchmark_entries, Method, PipelineConfig, RunManifest};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_trajfuse"));
    c.env_remove("TRAJFUSE_THREADS");
    c
}

fn write_manifest(dir: &Path) -> PathBuf {
    let mut config = PipelineConfig {
        dt_words: 6,
        pose_words: 5,
        sample_cap: 4000,
        kmeans_iters: 15,
        ..PipelineConfig::default()
    };
    config.svm.epochs = 20;
    let m = RunManifest {
        dataset: None,
        synthetic: benchmark_entries(4, 5, 48, 48, 41),
        method: Method::Dt,
        config,
        seed: 1,
        out: PathBuf::from("out"),
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&m).unwrap()).unwrap();
    path
}

fn run(manifest: &Path, args: &[&str]) -> Output {
    let mut c = bin();
    c.arg(args[0]).arg("--manifest").arg(manifest).args(&args[1..]);
    c.output().unwrap()
}

fn ok(o: &Output) -> String {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status,
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn err(o: &Output) -> String {
    assert!(!o.status.success(), "expected failure, got:\n{}", String::from_utf8_lossy(&o.stdout));
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn parse_map(stdout: &str) -> f64 {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix("mAP "))
        .expect("mAP line")
        .trim()
        .parse()
        .unwrap()
}

#[test]
fn stages_run_in_order_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let m = write_manifest(tmp.path());
    assert!(ok(&run(&m, &["synth-gen"])).contains("wrote 20 clips"));
    let dataset = tmp.path().join("out/dataset");
    assert!(dataset.join("index.json").is_file());

    // later stages refuse to run before their inputs exist
    assert!(err(&run(&m, &["encode"])).contains("stale artifacts"));

    for stage in ["extract", "train-codebook", "encode", "train", "predict"] {
        ok(&run(&m, &[stage]));
    }
    let all = parse_map(&ok(&run(&m, &["eval"])));
    assert!((0.0..=1.0).contains(&all));

    let top = ok(&run(&m, &["eval", "--top-n", "2"]));
    assert_eq!(top.lines().filter(|l| l.starts_with("class")).count(), 2);

    assert!(err(&run(&m, &["eval", "--subset", "occluded"])).contains("unknown subset"));

    // a different seed changes the codebooks, so the old encodings are stale
    assert!(err(&run(&m, &["encode", "--seed", "2"])).contains("stale artifacts"));

    ok(&run(&m, &["analyze"]));
    let files = ok(&run(&m, &["report"]));
    assert!(files.lines().count() > 0);
    for f in files.lines() {
        assert!(Path::new(f.trim()).exists(), "report listed missing file {f}");
    }
}

#[test]
fn pose_methods_need_annotations() {
    let tmp = tempfile::tempdir().unwrap();
    let m = write_manifest(tmp.path());
    ok(&run(&m, &["synth-gen"]));
    let ann = tmp.path().join("out/dataset/annotations");
    for entry in std::fs::read_dir(&ann).unwrap() {
        let p = entry.unwrap().path();
        if p.file_name().unwrap().to_string_lossy().starts_with("translating-blob-000.") {
            std::fs::remove_file(p).unwrap();
        }
    }
    let e = err(&run(&m, &["extract", "--method", "PS-M"]));
    assert!(e.contains("translating-blob-000") && e.contains("no annotation file"), "{e}");
    // DT does not read annotations
    ok(&run(&m, &["extract", "--method", "DT"]));
}

#[test]
fn flags_are_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let m = write_manifest(tmp.path());
    assert!(err(&run(&m, &["extract", "--method", "HOG3D"])).contains("unknown method"));
    let missing = tmp.path().join("nope.json");
    assert!(err(&run(&missing, &["extract"])).contains("nope.json"));
    let o = bin()
        .env("TRAJFUSE_THREADS", "many")
        .args(["synth-gen", "--manifest"])
        .arg(&m)
        .output()
        .unwrap();
    assert!(err(&o).contains("TRAJFUSE_THREADS"));
}

#[test]
fn out_flag_redirects_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let m = write_manifest(tmp.path());
    let other = tmp.path().join("elsewhere");
    ok(&run(&m, &["synth-gen", "--out", other.to_str().unwrap()]));
    assert!(other.join("dataset/index.json").is_file());
    assert!(!tmp.path().join("out").exists());
}
