use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn butterfly(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_butterfly")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = butterfly(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Ten disjoint cars and trucks in one 320x240 frame, UAVDT format.
fn write_scene(dir: &Path) -> std::path::PathBuf {
    let mut s = String::new();
    for k in 0..10 {
        let left = 12.0 + 30.0 * k as f64 + 0.37 * k as f64;
        let top = 20.0 + 19.0 * (k % 4) as f64 + 40.0 * (k % 3) as f64;
        let (w, h) = (14.0 + k as f64, 10.0 + 0.5 * k as f64);
        s.push_str(&format!("1,{},{left},{top},{w},{h},1,1,{}\n", k + 1, 1 + k % 2));
    }
    let path = dir.join("gt.txt");
    fs::write(&path, s).unwrap();
    path
}

fn metric(report: &str, key: &str) -> f64 {
    let line = report.lines().find(|l| l.starts_with(key)).unwrap_or_else(|| panic!("no '{key}' in\n{report}"));
    line[key.len()..].trim_start_matches([' ', '=']).split_whitespace().next().unwrap().parse().unwrap()
}

fn tally(report: &str, key: &str) -> usize {
    let line = report.lines().find(|l| l.starts_with("AP@0.70")).unwrap();
    let rest = &line[line.find(&format!("{key} = ")).unwrap() + key.len() + 3..];
    rest.split_whitespace().next().unwrap().parse().unwrap()
}

#[test]
fn roundtrip_recovers_every_box() {
    let dir = TempDir::new().unwrap();
    let gt = write_scene(dir.path());
    for mode in ["window4", "full", "center1"] {
        let out = ok(&["roundtrip", "--annotations", p(&gt), "--width", "320", "--height", "240", "--mode", mode]);
        assert_eq!(metric(&out, "AP@0.70"), 1.0, "{mode}:\n{out}");
        assert_eq!((tally(&out, "TP"), tally(&out, "FP"), tally(&out, "FN")), (10, 0, 0), "{mode}");
    }
}

#[test]
fn encode_decode_eval_pipeline() {
    let dir = TempDir::new().unwrap();
    let gt = write_scene(dir.path());
    let fields = dir.path().join("fields");
    ok(&["encode", "--annotations", p(&gt), "--width", "320", "--height", "240", "--out", p(&fields)]);
    assert!(fields.join("1.fields").is_file());

    let voting = dir.path().join("voting.txt");
    let cells = dir.path().join("cells.txt");
    let overlay = dir.path().join("overlay");
    ok(&["decode", p(&fields), "--out", p(&voting), "--overlay", p(&overlay)]);
    ok(&["decode", p(&fields), "--out", p(&cells), "--no-voting"]);
    assert!(overlay.join("1.png").is_file());

    let a = ok(&["eval", "--detections", p(&voting), "--gt", p(&gt)]);
    let b = ok(&["eval", "--detections", p(&cells), "--gt", p(&gt)]);
    assert_eq!(metric(&a, "AP@0.70"), 1.0);
    assert_eq!(tally(&a, "FP"), 0);
    // one box per confident cell leaves duplicates behind
    assert!(tally(&b, "FP") > tally(&a, "FP"), "voting:\n{a}\nno voting:\n{b}");
}

#[test]
fn empty_detections_score_zero() {
    let dir = TempDir::new().unwrap();
    let gt = write_scene(dir.path());
    let dets = dir.path().join("empty.txt");
    fs::write(&dets, "").unwrap();
    for protocol in ["uavdt", "coco"] {
        let out = ok(&["eval", "--detections", p(&dets), "--gt", p(&gt), "--protocol", protocol]);
        assert_eq!(metric(&out, "AP@0.70"), 0.0);
        assert_eq!(tally(&out, "FN"), 10);
    }
}

#[test]
fn grouped_evaluation() {
    let dir = TempDir::new().unwrap();
    let gt = write_scene(dir.path());
    let dets = dir.path().join("d.txt");
    fs::write(&dets, "").unwrap();
    let groups = dir.path().join("groups.txt");
    fs::write(&groups, "1,daylight\n").unwrap();
    let out = ok(&["eval", "--detections", p(&dets), "--gt", p(&gt), "--groups", p(&groups)]);
    assert!(out.contains("[group daylight]"));
    fs::write(&groups, "2,night\n").unwrap();
    assert!(!butterfly(&["eval", "--detections", p(&dets), "--gt", p(&gt), "--groups", p(&groups)]).status.success());
}

#[test]
fn visdrone_annotations() {
    let dir = TempDir::new().unwrap();
    let ann = dir.path().join("ann");
    fs::create_dir(&ann).unwrap();
    fs::write(ann.join("0000001.txt"), "10,10,20,12,1,4,0,0\n60,40,8,16,1,1,0,0\n100,100,30,30,0,0,0,0\n5,5,4,4,1,11,0,0\n").unwrap();
    let out = ok(&["roundtrip", "--annotations", p(&ann), "--format", "visdrone", "--width", "160", "--height", "128"]);
    assert_eq!(metric(&out, "AP@0.70"), 1.0, "{out}");
    assert!(out.contains("ground truth: 2 "));
}

#[test]
fn synth_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let args = [
            "synth", "--out", p(&out), "--scenes", "4", "--seed", "11", "--width", "256", "--height", "192", "--count-min", "5",
            "--count-max", "12", "--classes", "2", "--modes", "window4,full", "--dropout", "0,0.3", "--vector-sigma", "0,1",
            "--with-baseline",
        ];
        let stdout = ok(&args);
        (stdout, fs::read(out.join("gt.txt")).unwrap(), fs::read_to_string(out.join("ablation.csv")).unwrap())
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b);
    // 2 modes x 2 decoders x 4 noise settings, one threshold each, plus the header
    assert_eq!(a.2.lines().count(), 1 + 16);
    assert!(a.2.starts_with("mode,decoder,"));

    // the written ground truth reads back through the UAVDT parser
    let gt = dir.path().join("a/gt.txt");
    let out = ok(&["roundtrip", "--annotations", p(&gt), "--width", "256", "--height", "192"]);
    assert_eq!(metric(&out, "AP@0.70"), 1.0);
}

#[test]
fn decode_output_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let gt = write_scene(dir.path());
    let fields = dir.path().join("fields");
    ok(&["encode", "--annotations", p(&gt), "--width", "320", "--height", "240", "--mode", "full", "--out", p(&fields)]);
    let one = dir.path().join("one.txt");
    let two = dir.path().join("two.txt");
    ok(&["decode", p(&fields), "--out", p(&one), "--chi", "box", "--rho", "8,10,12"]);
    ok(&["decode", p(&fields.join("1.fields")), "--out", p(&two), "--chi", "box", "--rho", "8,10,12"]);
    assert_eq!(fs::read(&one).unwrap(), fs::read(&two).unwrap());
}

#[test]
fn bench_reports_timings() {
    let dir = TempDir::new().unwrap();
    let gt = write_scene(dir.path());
    let fields = dir.path().join("fields");
    ok(&["encode", "--annotations", p(&gt), "--width", "320", "--height", "240", "--out", p(&fields)]);
    let out = ok(&["bench", p(&fields.join("1.fields")), "--runs", "3"]);
    assert!(out.contains("runs 3  median"), "{out}");
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = TempDir::new().unwrap();
    let gt = write_scene(dir.path());
    let missing = dir.path().join("nope.txt");
    let cases: Vec<Vec<&str>> = vec![
        vec!["encode", "--annotations", p(&missing), "--width", "320", "--height", "240", "--out", p(dir.path())],
        vec!["roundtrip", "--annotations", p(&gt), "--width", "320", "--height", "240", "--mode", "window0"],
        vec!["roundtrip", "--annotations", p(&gt), "--width", "320", "--height", "240", "--chi", "-3"],
        vec!["synth", "--out", p(dir.path()), "--classes", "4"],
    ];
    for args in cases {
        let out = butterfly(&args);
        assert!(!out.status.success(), "{args:?} should fail");
        assert!(!out.stderr.is_empty());
    }
    let garbage = dir.path().join("garbage.fields");
    fs::write(&garbage, b"not a fields file").unwrap();
    assert!(!butterfly(&["decode", p(&garbage), "--out", p(&dir.path().join("o.txt"))]).status.success());
}
