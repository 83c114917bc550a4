mod common;

use std::path::{Path, PathBuf};
use std::process::Command;

use ghostconv::train::data::ingest_mnist;

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn ghostconv(args: &[&str], data_env: Option<&Path>) -> Out {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ghostconv"));
    cmd.args(args).env_remove("GHOSTCONV_DATA_DIR");
    if let Some(d) = data_env {
        cmd.env("GHOSTCONV_DATA_DIR", d);
    }
    let o = cmd.output().unwrap();
    Out {
        code: o.status.code().unwrap(),
        stdout: String::from_utf8(o.stdout).unwrap(),
        stderr: String::from_utf8(o.stderr).unwrap(),
    }
}

fn ok(args: &[&str]) -> String {
    let o = ghostconv(args, None);
    assert_eq!(o.code, 0, "{args:?}\n{}", o.stderr);
    o.stdout
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture() -> PathBuf {
    common::mnist_fixture_dir()
}

fn write_pgm(path: &Path, h: usize, w: usize, pixels: &[f32]) {
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(pixels.iter().map(|&v| (v * 255.0).round() as u8));
    std::fs::write(path, bytes).unwrap();
}

const SMALL_CONV: &str = "input 1x28x28
classes 10
conv out=60 k=3 stride=2
bn
relu
conv out=120 k=3 stride=2
bn
relu
avgpool
flatten
fc out=10
";

#[test]
fn zero_alpha_is_invalid() {
    let o = ghostconv(&["build", "--arch", "ghostnet", "--alpha", "0"], None);
    assert_eq!(o.code, 2);
    assert!(o.stderr.contains("width multiplier"), "{}", o.stderr);
}

#[test]
fn bad_flags_are_invalid() {
    assert_eq!(ghostconv(&["build", "--arch", "resnet"], None).code, 2);
    assert_eq!(ghostconv(&["frobnicate"], None).code, 2);
    assert_eq!(ghostconv(&["--help"], None).code, 0);
    assert_eq!(ghostconv(&["build", "--arch", "vgg16", "--input", "3x64x64"], None).code, 2);
}

#[test]
fn missing_file_is_an_io_error() {
    let o = ghostconv(&["analyze", "--spec", "/nonexistent/net.txt"], None);
    assert_eq!(o.code, 3);
    assert!(o.stderr.contains("/nonexistent/net.txt"), "{}", o.stderr);
}

#[test]
fn invalid_spec_names_the_layer() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.txt");
    std::fs::write(&p, "input 1x8x8\nclasses 4\nconv out=4 k=3\nbn\nrelu\nfc out=4\n").unwrap();
    let o = ghostconv(&["analyze", "--spec", s(&p)], None);
    assert_eq!(o.code, 2);
    assert!(o.stderr.contains("layer 3"), "{}", o.stderr);
    std::fs::write(&p, "input 1x8x8\nclasses 4\nconvv out=4\n").unwrap();
    let o = ghostconv(&["analyze", "--spec", s(&p)], None);
    assert_eq!(o.code, 2);
    assert!(o.stderr.contains("line 3"), "{}", o.stderr);
}

#[test]
fn build_then_analyze_ghostnet() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("ghostnet.txt");
    ok(&["build", "--arch", "ghostnet", "--alpha", "1.0", "--out", s(&spec)]);
    let text = std::fs::read_to_string(&spec).unwrap();
    assert!(text.starts_with("input 3x224x224\nclasses 1000\n"), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("gbneck")).count(), 16);

    let csv = dir.path().join("cost.csv");
    let out = ok(&["analyze", "--spec", s(&spec), "--csv", s(&csv)]);
    let summary = out.lines().next().unwrap();
    let nums: Vec<u64> = summary.split(' ').map(|kv| kv.split('=').nth(1).unwrap().parse().unwrap()).collect();
    assert!(summary.starts_with("params="), "{summary}");
    assert!((4_900_000..=5_500_000).contains(&nums[0]), "{summary}");
    assert!((134_000_000..=148_000_000).contains(&nums[1]), "{summary}");
    assert!(out.lines().nth(1).unwrap().starts_with("flops_muladd="));
    let rows = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(rows.lines().count(), 28);

    let out = ok(&["analyze", "--spec", s(&spec), "--input", "448x448"]);
    assert!(out.starts_with("layer,name,params,flops_mac,flops_aux\n"));
}

#[test]
fn ratio_one_ghostify_keeps_the_cost_profile() {
    let dir = tempfile::tempdir().unwrap();
    let (vgg, g1) = (dir.path().join("vgg.txt"), dir.path().join("vgg_s1.txt"));
    ok(&["build", "--arch", "vgg16", "--out", s(&vgg)]);
    ok(&["build", "--spec", s(&vgg), "--ghostify", "--s", "1", "--d", "3", "--out", s(&g1)]);
    let a = ok(&["analyze", "--spec", s(&vgg)]);
    let b = ok(&["analyze", "--spec", s(&g1)]);
    let numeric = |t: &str| -> Vec<String> {
        t.lines()
            .map(|l| {
                let mut cols: Vec<&str> = l.split(',').collect();
                if cols.len() == 5 {
                    cols.remove(1);
                }
                cols.join(",")
            })
            .collect()
    };
    assert_eq!(numeric(&a), numeric(&b));
    assert_ne!(a, b);

    let out = ok(&["compare", "--spec", s(&vgg), "--spec", s(&g1)]);
    assert!(out.ends_with("flops_ratio=1 params_ratio=1\n"), "{out}");
}

#[test]
fn compare_reports_the_ghost_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.txt"), dir.path().join("b.txt"));
    std::fs::write(&a, "input 256x14x14\nclasses 256\nconv out=256 k=3\navgpool\nflatten\n").unwrap();
    std::fs::write(&b, "input 256x14x14\nclasses 256\nghost out=256 k=3 s=2 d=3 relu=0 bn=0 cheap_bn=0\navgpool\nflatten\n")
        .unwrap();
    let csv = dir.path().join("cmp.csv");
    let out = ok(&["compare", "--spec", s(&a), "--spec", s(&b), "--csv", s(&csv)]);
    assert!(out.starts_with("baseline params="), "{out}");
    let row: Vec<String> = std::fs::read_to_string(&csv).unwrap().lines().nth(1).unwrap().split(',').map(String::from).collect();
    let counted: f64 = row[8].parse().unwrap();
    let theory: f64 = row[9].parse().unwrap();
    assert!((counted - 2304.0 / 1156.5).abs() < 1e-12, "{row:?}");
    assert!((theory - counted).abs() < 1e-12);
    assert_eq!(ghostconv(&["compare", "--spec", s(&a)], None).code, 2);
}

#[test]
fn truncated_checkpoint_reports_offset() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("tiny.txt");
    ok(&["build", "--arch", "tiny", "--out", s(&spec)]);
    let ck = dir.path().join("bad.gnck");
    std::fs::write(&ck, b"GNCK\x01\x00\x00\x00\x05\x00\x00\x00\x03").unwrap();
    let img = dir.path().join("x.pgm");
    write_pgm(&img, 28, 28, &[0.5; 784]);
    let o = ghostconv(&["infer", "--spec", s(&spec), "--checkpoint", s(&ck), "--image", s(&img)], None);
    assert_eq!(o.code, 3);
    assert!(o.stderr.contains("bad.gnck") && o.stderr.contains("byte offset 12"), "{}", o.stderr);

    std::fs::write(&ck, b"PNG").unwrap();
    let o = ghostconv(&["infer", "--spec", s(&spec), "--checkpoint", s(&ck), "--image", s(&img)], None);
    assert_eq!(o.code, 3);
    assert!(o.stderr.contains("byte offset 0"), "{}", o.stderr);
}

#[test]
fn memorized_sample_is_recognized() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("tiny.txt");
    ok(&["build", "--arch", "tiny", "--out", s(&spec)]);
    let out_dir = dir.path().join("run");
    let fx = fixture();
    let log = ok(&[
        "train", "--spec", s(&spec), "--data", s(&fx), "--limit", "1", "--epochs", "40", "--batch-size", "1",
        "--lr", "0.05", "--schedule", "constant", "--freeze-bn", "--out-dir", s(&out_dir), "--dtype", "f64",
    ]);
    assert_eq!(log.lines().count(), 40);
    assert!(log.lines().last().unwrap().contains("train_acc=1.0000"), "{log}");
    assert!(out_dir.join("normalization.txt").exists());
    assert!(out_dir.join("history.csv").exists());

    // the same seeded pick the trainer made
    let (train, _) = ingest_mnist(&fx).unwrap();
    let one = train.subset(1, 0);
    let img = dir.path().join("sample.pgm");
    write_pgm(&img, 28, 28, one.image(0));
    let ck = out_dir.join("epoch_040.gnck");
    let out = ok(&["infer", "--spec", s(&spec), "--checkpoint", s(&ck), "--image", s(&img), "--top-k", "3", "--dtype", "f64"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3);
    let class: usize = lines[0].split(' ').next().unwrap()["class=".len()..].parse().unwrap();
    let prob: f64 = lines[0].split("prob=").nth(1).unwrap().parse().unwrap();
    assert_eq!(class, one.labels[0]);
    assert!(prob > 0.99, "{out}");
}

#[test]
fn sweep_flops_fall_with_s() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("conv.txt");
    std::fs::write(&spec, SMALL_CONV).unwrap();
    let csv = dir.path().join("sweep.csv");
    let fx = fixture();
    ok(&[
        "sweep", "--spec", s(&spec), "--param", "s", "--values", "2,3,4,5", "--data", s(&fx), "--limit", "32",
        "--epochs", "1", "--batch-size", "16", "--csv", s(&csv),
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<Vec<String>> = text.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[0][0], "baseline");
    let flops: Vec<u64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    let weights: Vec<u64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(flops.windows(2).all(|w| w[1] < w[0]), "{text}");
    assert!(weights.windows(2).all(|w| w[1] < w[0]), "{text}");
}

#[test]
fn toyfit_on_a_self_pair_gives_zero_rows() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("a.pgm");
    let (train, _) = ingest_mnist(&fixture()).unwrap();
    write_pgm(&img, 28, 28, train.image(3));
    let csv = dir.path().join("fit.csv");
    let pgm = dir.path().join("maps");
    let out = ok(&["toyfit", "--source", s(&img), "--target", s(&img), "--csv", s(&csv), "--pgm-dir", s(&pgm)]);
    assert!(out.starts_with("pair 0: "), "{out}");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 5);
    for line in text.lines().skip(1) {
        let mse: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!(mse < 1e-10, "{line}");
    }
    for f in ["pair0_source.pgm", "pair0_target.pgm", "pair0_fitted.pgm"] {
        assert!(pgm.join(f).exists(), "{f}");
    }
}

#[test]
fn toyfit_harvests_from_the_data_dir_variable() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("tiny.txt");
    ok(&["build", "--arch", "tiny", "--out", s(&spec)]);
    let data_root = fixture().parent().unwrap().to_path_buf();
    let args = ["toyfit", "--spec", s(&spec), "--layer", "2", "--top-k", "3", "--sample", "5"];
    let o = ghostconv(&args, Some(&data_root));
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert_eq!(o.stdout.lines().filter(|l| l.starts_with("pair ")).count(), 3);
    assert!(o.stdout.contains("ncc="));
    // no --data and no variable
    assert_eq!(ghostconv(&args, None).code, 2);
}

#[test]
fn training_runs_repeat_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("tiny.txt");
    ok(&["build", "--arch", "tiny", "--out", s(&spec)]);
    let root = fixture().parent().unwrap().to_path_buf();
    let run = |name: &str, threads: &str| {
        let out_dir = dir.path().join(name);
        let o = ghostconv(
            &[
                "train", "--spec", s(&spec), "--limit", "96", "--epochs", "2", "--batch-size", "32", "--augment",
                "--seed", "3", "--threads", threads, "--out-dir", s(&out_dir),
            ],
            Some(&root),
        );
        assert_eq!(o.code, 0, "{}", o.stderr);
        (
            std::fs::read(out_dir.join("history.csv")).unwrap(),
            std::fs::read(out_dir.join("epoch_002.gnck")).unwrap(),
            o.stdout,
        )
    };
    let a = run("a", "1");
    let b = run("b", "1");
    let c = run("c", "2");
    assert_eq!(a, b);
    assert_eq!(a, c);
    let history = String::from_utf8(a.0).unwrap();
    assert!(history.starts_with("epoch,loss,train_acc,test_acc\n"));
    assert_eq!(history.lines().count(), 3);
}

#[test]
fn spec_and_dataset_must_agree() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("g.txt");
    ok(&["build", "--arch", "ghostnet", "--alpha", "0.25", "--classes", "10", "--input", "3x32x32", "--out", s(&spec)]);
    let fx = fixture();
    let o = ghostconv(&["train", "--spec", s(&spec), "--data", s(&fx), "--epochs", "1"], None);
    assert_eq!(o.code, 2);
    assert!(o.stderr.contains("does not match"), "{}", o.stderr);
}
