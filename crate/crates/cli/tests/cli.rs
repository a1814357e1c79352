use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use floodseg::raster::{read_mask, write_mask};
use floodseg::ClassMask;

fn floodseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_floodseg"))
        .env_remove("FLOODSEG_THREADS")
        .args(args)
        .output()
        .expect("spawn floodseg")
}

fn ok(args: &[&str]) -> String {
    let out = floodseg(args);
    assert!(
        out.status.success(),
        "floodseg {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn every_subcommand_runs_on_a_small_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let d = |s: &str| dir.path().join(s);
    let data = d("data");
    ok(&["synth", "--n", "3", "--seed", "2", "--width", "32", "--height", "32", "--out", p(&data)]);
    let image = data.join("scene_0000.wfb");
    let mask = data.join("scene_0000.wfl");

    ok(&["degrade", "--data", p(&data), "--factor", "2", "--out", p(&d("coarse"))]);
    let coarse = read_mask(d("coarse").join("scene_0000.wfl")).unwrap();
    assert_eq!((coarse.width(), coarse.height()), (16, 16));

    let stdout = ok(&[
        "--threads", "1", "train", "--data", p(&data), "--val", p(&data), "--model", "linear",
        "--epochs", "2", "--patch-size", "32", "--out", p(&d("m.wfm")), "--log", p(&d("log.csv")),
    ]);
    assert!(stdout.contains("epoch 1 "), "{stdout}");
    let log = fs::read_to_string(d("log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("epoch,step,loss,val_water_iou,val_water_recall"));
    assert_eq!(log.lines().count(), 3);

    ok(&["infer", "--model", p(&d("m.wfm")), "--image", p(&image), "--out", p(&d("map.wfl")), "--render", p(&d("map.ppm"))]);
    assert!(fs::read(d("map.ppm")).unwrap().starts_with(b"P6\n32 32\n255\n"));

    let eval = ok(&["eval", "--data", p(&data), "--model", p(&d("m.wfm")), "--out", p(&d("r.csv")), "--confusion", p(&d("c.csv"))]);
    assert!(eval.lines().any(|l| l.starts_with("water precision ")), "{eval}");
    let report = fs::read_to_string(d("r.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 3 + 1);
    assert!(report.lines().last().unwrap().starts_with("AGGREGATE,"));

    let fixed = ok(&["eval", "--data", p(&data), "--ndwi", "fixed", "--out", p(&d("f.csv"))]);
    let tuned = ok(&["eval", "--data", p(&data), "--ndwi", "tuned", "--out", p(&d("t.csv"))]);
    let iou = |s: &str| -> f64 {
        let line = s.lines().find(|l| l.starts_with("water precision ")).unwrap();
        line.split_whitespace().last().unwrap().parse().unwrap()
    };
    assert!(iou(&tuned) >= iou(&fixed), "{tuned} vs {fixed}");

    ok(&["pr-curve", "--model", p(&d("m.wfm")), "--data", p(&data), "--out", p(&d("pr.csv")), "--svg", p(&d("pr.svg")), "--steps", "10"]);
    assert_eq!(fs::read_to_string(d("pr.csv")).unwrap().lines().count(), 1 + 11);
    assert!(fs::read_to_string(d("pr.svg")).unwrap().contains("<svg"));

    ok(&["ndwi", "--image", p(&image), "--truth", p(&mask), "--out", p(&d("ndwi.wfl"))]);
    ok(&["pack", "--mask", p(&d("map.wfl")), "--out", p(&d("map.bin"))]);
    assert_eq!(fs::read(d("map.bin")).unwrap().len(), 32 * 32 / 4);

    let flops = ok(&["flops", "--model", "scnn"]);
    assert!(flops.contains("229379"), "{flops}");
    assert!(flops.contains("1877798912"), "{flops}");
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# downlink\nbands = 13\nbits = 12\n").unwrap();
    let out = floodseg(&["--config", p(&cfg), "bandwidth", "--bits", "16"]);
    assert!(out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("bands = 13") && stderr.contains("bits = 16"), "{stderr}");
    // 13 * 16 / 2
    assert!(String::from_utf8(out.stdout).unwrap().contains("raw-ratio: 104"));
}

#[test]
fn usage_and_domain_errors_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    assert_eq!(floodseg(&["--config", p(&cfg), "bandwidth"]).status.code(), Some(2));
    assert_eq!(floodseg(&["bandwidth", "--bogus"]).status.code(), Some(2));

    let bogus = dir.path().join("bogus.wfl");
    fs::write(&bogus, b"not a mask").unwrap();
    let out = floodseg(&["pack", "--mask", p(&bogus), "--out", p(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error: format:"));
}

#[test]
fn packed_payload_matches_library_packing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.wfl");
    write_mask(&ClassMask::from_codes(4, 1, &[1, 2, 3, 0]).unwrap(), &path).unwrap();
    ok(&["pack", "--mask", p(&path), "--out", p(&dir.path().join("m.bin"))]);
    assert_eq!(fs::read(dir.path().join("m.bin")).unwrap(), [0x39]);
}
