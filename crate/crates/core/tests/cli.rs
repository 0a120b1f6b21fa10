use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn ncr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncr"))
        .args(args)
        .current_dir(dir)
        .env_remove("NCR_THREADS")
        .output()
        .expect("spawn ncr")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = ncr(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    ncr(dir, args).status.code().unwrap()
}

#[test]
fn zero_noise_holidays_prints_perfect_map() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["synth", "gen", "--groups", "4", "--size", "2", "--dim", "8", "--sigma", "0", "--seed", "1", "--out", "t"]);
    for f in ["t.ncd", "t.ids", "t.gt.tsv"] {
        assert!(d.join(f).is_file(), "{f}");
    }
    let text = ok(d, &["eval", "holidays", "--db", "t.ncd", "--gt", "t.gt.tsv"]);
    assert!(text.contains("mAP: 1.0000"), "{text}");
    let tsv = ok(d, &["eval", "holidays", "--db", "t.ncd", "--gt", "t.gt.tsv", "--format", "tsv", "--aggregate-only"]);
    assert_eq!(tsv, "aggregate\tholidays\tmAP\t1\t4\t0\n");
}

#[test]
fn usage_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let out = ncr(d, &["pca", "fit", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(code(d, &["frobnicate"]), 1);
    assert_eq!(code(d, &[]), 1);

    ok(d, &["synth", "gen", "--groups", "3", "--size", "2", "--dim", "4", "--out", "s"]);
    assert_eq!(code(d, &["pca", "fit", "--input", "s.ncd", "--dim", "0", "--out", "m.ncp"]), 1);
    assert!(!d.join("m.ncp").exists());
    assert_eq!(code(d, &["pca", "fit", "--input", "nope.ncd", "--dim", "2", "--out", "m.ncp"]), 1);
    assert_eq!(code(d, &["pca", "fit", "--input", "s.ncd", "--dim", "2", "--out", "no/dir/m.ncp"]), 1);
    assert_eq!(code(d, &["--threads", "0", "pca", "fit", "--input", "s.ncd", "--dim", "2", "--out", "m.ncp"]), 1);
    assert_eq!(code(d, &["--help"]), 0);
}

#[test]
fn data_and_numeric_errors() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.ncd"), b"XXXX\x01\0\0\0\x01\0\0\0\0\0\0\0").unwrap();
    fs::write(d.join("bad.ids"), "a\n").unwrap();
    assert_eq!(code(d, &["normalize", "--input", "bad.ncd", "--out", "o.ncd"]), 2);

    // 3 collinear points have rank 1
    fs::write(d.join("c.csv"), "a,1,0,0\nb,2,0,0\nc,3,0,0\n").unwrap();
    ok(d, &["convert", "--input", "c.csv", "--out", "c.ncd"]);
    assert_eq!(code(d, &["pca", "fit", "--input", "c.ncd", "--dim", "2", "--strict-rank", "--out", "m.ncp"]), 3);
    ok(d, &["pca", "fit", "--input", "c.ncd", "--dim", "2", "--out", "m.ncp"]);
}

#[test]
fn outputs_never_overwrite_inputs() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["synth", "gen", "--groups", "3", "--size", "2", "--dim", "4", "--sigma", "0.1", "--out", "s"]);
    let before = fs::read(d.join("s.ncd")).unwrap();
    assert_eq!(code(d, &["normalize", "--input", "s.ncd", "--out", "s.ncd"]), 1);
    assert_eq!(fs::read(d.join("s.ncd")).unwrap(), before);
}

#[test]
fn csv_round_trip_through_ncd() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let csv = "x,0.5,-1.25\ny,3,0.100000001\n";
    fs::write(d.join("a.csv"), csv).unwrap();
    ok(d, &["convert", "--input", "a.csv", "--out", "a.ncd"]);
    assert_eq!(fs::read_to_string(d.join("a.ids")).unwrap(), "x\ny\n");
    ok(d, &["convert", "--input", "a.ncd", "--out", "b.csv"]);
    assert_eq!(fs::read_to_string(d.join("b.csv")).unwrap(), csv);
    assert_eq!(code(d, &["convert", "--input", "a.ncd", "--out", "b.ncd"]), 1);
}

#[test]
fn pair_commands() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("g.tsv"), "a\tb\nb\tc\nc\td\nx\ty\ny\tz\n").unwrap();
    let mined = ok(d, &["pairs", "mine", "--graph", "g.tsv"]);
    assert_eq!(mined, "a\tc\tpos\nb\td\tpos\nx\tz\tpos\n");
    fs::write(d.join("p.tsv"), &mined).unwrap();
    let subset = ok(d, &["pairs", "subset", "--pairs", "p.tsv", "--budget", "2"]);
    assert_eq!(subset, "a\tc\tpos\nb\td\tpos\n");

    fs::write(d.join("cls.tsv"), "a\t1\nb\t1\nc\t2\n").unwrap();
    let negs = ok(d, &["pairs", "negatives", "--classes", "cls.tsv", "--count", "2", "--seed", "5"]);
    assert_eq!(negs.lines().count(), 2);
    assert!(negs.lines().all(|l| l.ends_with("\tneg") && l.contains('c')));
    assert_eq!(code(d, &["pairs", "negatives", "--classes", "cls.tsv", "--count", "3"]), 2);

    fs::write(d.join("bad.tsv"), "a\ta\n").unwrap();
    assert_eq!(code(d, &["pairs", "mine", "--graph", "bad.tsv"]), 2);
}

#[test]
fn index_query_lists_neighbours() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("db.csv"), "p,1,0\nq,0,1\nr,0.6,0.8\n").unwrap();
    ok(d, &["convert", "--input", "db.csv", "--out", "db.ncd"]);
    let out = ok(d, &["index", "query", "--db", "db.ncd", "--queries", "db.ncd", "--k", "2", "--exclude-self"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 6);
    let dist = |line: &str, prefix: &str| -> f64 {
        line.strip_prefix(prefix).unwrap().parse().unwrap()
    };
    // stored as f32, so distances match the exact values to ~1e-7
    assert!((dist(lines[0], "p\t1\tr\t") - 0.8f64.sqrt()).abs() < 1e-6);
    assert!((dist(lines[2], "q\t1\tr\t") - 0.4f64.sqrt()).abs() < 1e-6);
    assert!(lines[1].starts_with("p\t2\tq\t"));
    let with_self = ok(d, &["index", "query", "--db", "db.ncd", "--queries", "db.ncd", "--k", "1"]);
    assert_eq!(with_self, "p\t1\tp\t0\nq\t1\tq\t0\nr\t1\tr\t0\n");
}

#[test]
fn oxford_and_ukb() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("db.csv"), "a,1,0\nb,0.9,0.1\nc,0,1\nd,0.1,0.9\n").unwrap();
    ok(d, &["convert", "--input", "db.csv", "--out", "db.ncd"]);
    fs::write(d.join("q.csv"), "qa,1,0.05\n").unwrap();
    ok(d, &["convert", "--input", "q.csv", "--out", "q.ncd"]);
    fs::write(d.join("gt.tsv"), "qa\tgood\ta\nqa\tok\tc\nqa\tjunk\tb\n").unwrap();
    let base = ["eval", "oxford", "--db", "db.ncd", "--gt", "gt.tsv", "--queries", "q.ncd", "--format", "tsv", "--aggregate-only"];
    // ranking a, (b junk), d, c: AP = (1 + 2/3) / 2
    let out = ok(d, &base);
    assert_eq!(out, "aggregate\toxford\tmAP\t0.833333333\t1\t1\n");
    let mut junk = base.to_vec();
    junk.extend(["--ok-policy", "junk"]);
    assert_eq!(ok(d, &junk), "aggregate\toxford\tmAP\t1\t1\t2\n");

    fs::write(d.join("g.tsv"), "a\tx\nb\tx\nc\ty\nd\ty\n").unwrap();
    let ukb = ok(d, &["eval", "ukb", "--db", "db.ncd", "--gt", "g.tsv", "--format", "tsv", "--aggregate-only"]);
    assert_eq!(ukb, "aggregate\tukb\ttop4\t2\t4\t0\n");
}

#[test]
fn learned_projection_pipeline() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &[
        "synth", "gen", "--groups", "30", "--size", "4", "--dim", "32", "--sigma", "0.05",
        "--nuisance-dim", "4", "--nuisance-amp", "0.5", "--seed", "2", "--out", "n",
    ]);
    ok(d, &["synth", "pairs", "--gt", "n.gt.tsv", "--out", "pairs.tsv"]);
    ok(d, &["proj", "fit", "--input", "n.ncd", "--pairs", "pairs.tsv", "--dim", "8", "--epochs", "5", "--log", "log.tsv", "--out", "w.ncw"]);
    let manifest = fs::read_to_string(d.join("w.ncw.manifest.tsv")).unwrap();
    assert!(manifest.contains("D\t8\n") && manifest.contains("epochs\t5\n"));
    assert!(fs::read_to_string(d.join("log.tsv")).unwrap().starts_with("epoch\tstep\tloss\taccepted\n"));
    ok(d, &["proj", "apply", "--model", "w.ncw", "--input", "n.ncd", "--out", "nw.ncd"]);
    assert_eq!(fs::metadata(d.join("nw.ncd")).unwrap().len(), 12 + 120 * 8 * 4);
    let text = ok(d, &["eval", "holidays", "--db", "nw.ncd", "--gt", "n.gt.tsv"]);
    assert!(text.contains("mAP: "));

    fs::write(d.join("empty.tsv"), "").unwrap();
    assert_eq!(code(d, &["proj", "fit", "--input", "n.ncd", "--pairs", "empty.tsv", "--out", "e.ncw"]), 2);
    assert_eq!(code(d, &["proj", "fit", "--input", "n.ncd", "--pairs", "pairs.tsv", "--eta0", "1e300", "--tau-pos", "0.001", "--out", "e.ncw"]), 3);
}

#[test]
fn manifest_runs_steps_in_order() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("empty.txt"), "").unwrap();
    assert_eq!(code(d, &["run", "empty.txt"]), 0);

    fs::write(
        d.join("fail.txt"),
        "synth gen --groups 3 --size 2 --dim 4 --out s\n\
         pca fit --input missing.ncd --dim 2 --out a.ncp\n\
         pca fit --input s.ncd --dim 2 --out b.ncp\n",
    )
    .unwrap();
    assert_eq!(code(d, &["run", "fail.txt"]), 1);
    assert!(d.join("s.ncd").exists());
    assert!(!d.join("b.ncp").exists());

    fs::write(d.join("nested.txt"), "run empty.txt\n").unwrap();
    assert_eq!(code(d, &["run", "nested.txt"]), 2);
}

#[test]
fn manifest_sweep_emits_one_row_per_dimension() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let mut manifest = String::from(
        "# compression sweep\nncr synth gen --groups 130 --size 4 --dim 512 --sigma 0.1 --intrinsic-dim 32 --seed 9 --out s\n",
    );
    let dims = [16, 32, 64, 128, 256, 512];
    for dim in dims {
        manifest.push_str(&format!(
            "pca fit --input s.ncd --dim {dim} --out p{dim}.ncp\n\
             pca apply --model p{dim}.ncp --input s.ncd --out s{dim}.ncd\n\
             eval holidays --db s{dim}.ncd --gt s.gt.tsv --format tsv --aggregate-only --label 'D={dim}' --append --out sweep.tsv\n"
        ));
    }
    fs::write(d.join("sweep.txt"), manifest).unwrap();
    let out = ncr(d, &["run", "sweep.txt"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("[19/19]"), "{stderr}");
    let rows = fs::read_to_string(d.join("sweep.tsv")).unwrap();
    let rows: Vec<&str> = rows.lines().collect();
    assert_eq!(rows.len(), dims.len());
    for (row, dim) in rows.iter().zip(dims) {
        let f: Vec<&str> = row.split('\t').collect();
        assert_eq!(f[..3], ["aggregate", "holidays", "mAP"]);
        assert_eq!(f[6], format!("D={dim}"));
        let map: f64 = f[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&map));
    }
}

#[test]
fn config_file_fills_unset_flags() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["synth", "gen", "--groups", "5", "--size", "2", "--dim", "6", "--sigma", "0.1", "--out", "s"]);
    fs::write(d.join("cfg.tsv"), "dim\t3\nstrict_rank\tfalse\nunrelated\t1\n").unwrap();
    ok(d, &["--config", "cfg.tsv", "pca", "fit", "--input", "s.ncd", "--out", "a.ncp"]);
    ok(d, &["--config", "cfg.tsv", "pca", "fit", "--input", "s.ncd", "--dim", "2", "--out", "b.ncp"]);
    let dim_of = |f: &str| {
        let b = fs::read(d.join(f)).unwrap();
        u32::from_le_bytes(b[8..12].try_into().unwrap())
    };
    assert_eq!(dim_of("a.ncp"), 3);
    assert_eq!(dim_of("b.ncp"), 2);
    fs::write(d.join("bad.tsv"), "strict_rank\tmaybe\n").unwrap();
    assert_eq!(code(d, &["--config", "bad.tsv", "pca", "fit", "--input", "s.ncd", "--dim", "2", "--out", "c.ncp"]), 1);
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["synth", "gen", "--groups", "40", "--size", "3", "--dim", "24", "--sigma", "0.2", "--out", "s"]);
    let q1 = ok(d, &["--threads", "1", "index", "query", "--db", "s.ncd", "--queries", "s.ncd", "--k", "5"]);
    let q4 = ok(d, &["--threads", "4", "index", "query", "--db", "s.ncd", "--queries", "s.ncd", "--k", "5"]);
    assert_eq!(q1, q4);
    let env = Command::new(env!("CARGO_BIN_EXE_ncr"))
        .args(["index", "query", "--db", "s.ncd", "--queries", "s.ncd", "--k", "5"])
        .current_dir(d)
        .env("NCR_THREADS", "3")
        .output()
        .unwrap();
    assert_eq!(String::from_utf8(env.stdout).unwrap(), q1);
}

#[test]
fn pca_fit_can_leave_out_query_rows() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("all.csv"), "a,1,0,0\nb,0,2,0\nc,0,0,3\nq,5,5,1\n").unwrap();
    fs::write(d.join("sub.csv"), "a,1,0,0\nb,0,2,0\nc,0,0,3\n").unwrap();
    ok(d, &["convert", "--input", "all.csv", "--out", "all.ncd"]);
    ok(d, &["convert", "--input", "sub.csv", "--out", "sub.ncd"]);
    fs::write(d.join("queries.txt"), "q\nnot_in_set\n").unwrap();
    ok(d, &["pca", "fit", "--input", "all.ncd", "--dim", "2", "--exclude-ids", "queries.txt", "--out", "ex.ncp"]);
    ok(d, &["pca", "fit", "--input", "sub.ncd", "--dim", "2", "--out", "sub.ncp"]);
    ok(d, &["pca", "fit", "--input", "all.ncd", "--dim", "2", "--out", "all.ncp"]);
    assert_eq!(fs::read(d.join("ex.ncp")).unwrap(), fs::read(d.join("sub.ncp")).unwrap());
    assert_ne!(fs::read(d.join("ex.ncp")).unwrap(), fs::read(d.join("all.ncp")).unwrap());
}
