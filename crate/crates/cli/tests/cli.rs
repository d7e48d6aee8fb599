use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const LABELS: [&str; 4] = ["clear", "haze", "road", "water"];

fn canopy(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_canopy"))
        .args(args)
        .current_dir(dir)
        .env_remove("CANOPY_SEED")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = canopy(dir, args);
    assert!(
        out.status.success(),
        "canopy {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Small deterministic generator so fixtures need no RNG crate.
struct Lcg(u64);

impl Lcg {
    fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    /// `n` samples: truth tags, noisy probabilities and 3 informative features.
    fn new(n: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = Lcg(11);
        let mut tags = String::from("image_name,tags\n");
        let mut probs = format!("image_name,{}\n", LABELS.join(","));
        let mut feats = String::from("image_name,f0,f1,f2\n");
        for i in 0..n {
            let truth: Vec<bool> = (0..LABELS.len()).map(|j| rng.next() < [0.6, 0.3, 0.4, 0.2][j]).collect();
            let names: Vec<&str> = LABELS.iter().zip(&truth).filter(|(_, &t)| t).map(|(l, _)| *l).collect();
            tags.push_str(&format!("s{i},{}\n", names.join(" ")));
            let p: Vec<String> = truth
                .iter()
                .map(|&t| {
                    let base = if t { 0.45 } else { 0.05 };
                    format!("{:.6}", (base + 0.5 * rng.next()).min(1.0))
                })
                .collect();
            probs.push_str(&format!("s{i},{}\n", p.join(",")));
            let f: Vec<String> = (0..3)
                .map(|j| format!("{:.6}", f64::from(u8::from(truth[j])) * 2.0 + rng.next()))
                .collect();
            feats.push_str(&format!("s{i},{}\n", f.join(",")));
        }
        fs::write(dir.path().join("truth.csv"), tags).unwrap();
        fs::write(dir.path().join("probs.csv"), probs).unwrap();
        fs::write(dir.path().join("features.csv"), feats).unwrap();
        Fixture { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn read(&self, name: &str) -> String {
        fs::read_to_string(self.path().join(name)).unwrap()
    }
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn total_f2(report_csv: &str) -> f64 {
    let rows = csv_rows(report_csv);
    let total = rows.iter().find(|r| r[0] == "Total").expect("Total row");
    total[5].parse().unwrap()
}

#[test]
fn metrics_prints_class_rows_and_total() {
    let fx = Fixture::new(60);
    let stdout = ok(fx.path(), &["metrics", "--pred", "probs.csv", "--truth", "truth.csv", "--out", "report.csv"]);
    assert!(stdout.contains("Class"));
    for label in LABELS {
        assert!(stdout.contains(label), "{label} missing from\n{stdout}");
    }
    assert!(stdout.contains("Total"));
    let report = fx.read("report.csv");
    assert_eq!(report.lines().next().unwrap(), "Class,Precision,Recall,Accuracy,F1 Score,F2 Score");
    let rows = csv_rows(&report);
    assert_eq!(rows.len(), LABELS.len() + 1);
    for row in &rows {
        for cell in &row[1..] {
            let (_, frac) = cell.split_once('.').unwrap();
            assert_eq!(frac.len(), 6, "{cell} is not 6-decimal");
        }
    }
}

#[test]
fn manifest_records_inputs_outputs_and_seed() {
    let fx = Fixture::new(30);
    ok(fx.path(), &["--seed", "9", "split", "--truth", "truth.csv", "--k", "3", "--out", "folds.csv"]);
    let text = fx.read("folds.csv.manifest.json");
    let m: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(m["format"], "canopy-manifest");
    assert_eq!(m["command"], "split");
    assert_eq!(m["seed"], 9);
    assert_eq!(m["status"], "ok");
    assert_eq!(m["settings"]["k"], 3);
    assert_eq!(m["inputs"][0]["path"], "truth.csv");
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(m["outputs"][0]["path"], "folds.csv");
    assert!(m["finished_unix"].as_f64().unwrap() >= m["started_unix"].as_f64().unwrap());
}

#[test]
fn manifest_is_written_on_failure() {
    let fx = Fixture::new(10);
    let out = canopy(fx.path(), &["--manifest", "m.json", "metrics", "--pred", "missing.csv", "--truth", "truth.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let m: serde_json::Value = serde_json::from_str(&fx.read("m.json")).unwrap();
    assert_eq!(m["status"], "error");
    assert!(m["error"].as_str().unwrap().contains("missing.csv"));
}

#[test]
fn vote_with_one_model_reproduces_its_predictions() {
    let fx = Fixture::new(40);
    ok(fx.path(), &["vote", "--pred", "probs.csv", "--out", "voted.csv"]);
    let probs = csv_rows(&fx.read("probs.csv"));
    let voted = csv_rows(&fx.read("voted.csv"));
    assert_eq!(probs.len(), voted.len());
    for (p, v) in probs.iter().zip(&voted) {
        assert_eq!(p[0], v[0]);
        let want: Vec<&str> = LABELS
            .iter()
            .zip(&p[1..])
            .filter(|(_, c)| c.parse::<f64>().unwrap() >= 0.5)
            .map(|(l, _)| *l)
            .collect();
        let got: Vec<&str> = v.get(1).map_or(Vec::new(), |t| t.split_whitespace().collect());
        assert_eq!(got, want, "sample {}", p[0]);
    }

    // a hard-prediction file votes to itself too
    ok(fx.path(), &["vote", "--pred", "voted.csv", "--weights", "3", "--out", "again.csv"]);
    assert_eq!(fx.read("again.csv"), fx.read("voted.csv"));
}

#[test]
fn weighted_vote_follows_the_heavy_model() {
    let fx = Fixture::new(25);
    ok(fx.path(), &["vote", "--pred", "truth.csv", "--out", "t.csv"]);
    ok(fx.path(), &["vote", "--pred", "probs.csv", "--out", "p.csv"]);
    ok(fx.path(), &["vote", "--pred", "t.csv", "--pred", "p.csv", "--weights", "3,1", "--out", "w.csv"]);
    assert_eq!(fx.read("w.csv"), fx.read("t.csv"));
}

#[test]
fn tuned_cutoffs_do_not_lower_total_f2() {
    let fx = Fixture::new(150);
    ok(fx.path(), &["tune-thresholds", "--pred", "probs.csv", "--truth", "truth.csv", "--beta", "2", "--out", "cut.csv"]);
    let cut = fx.read("cut.csv");
    assert_eq!(cut.lines().next().unwrap(), "label,threshold");
    assert_eq!(cut.lines().count(), LABELS.len() + 1);
    ok(fx.path(), &["metrics", "--pred", "probs.csv", "--truth", "truth.csv", "--out", "base.csv"]);
    ok(
        fx.path(),
        &["metrics", "--pred", "probs.csv", "--truth", "truth.csv", "--thresholds", "cut.csv", "--out", "tuned.csv"],
    );
    let (base, tuned) = (total_f2(&fx.read("base.csv")), total_f2(&fx.read("tuned.csv")));
    assert!(tuned >= base, "tuned {tuned} < uniform {base}");
}

#[test]
fn cv_average_row_is_the_fold_mean() {
    let fx = Fixture::new(90);
    ok(fx.path(), &["cv", "--features", "features.csv", "--truth", "truth.csv", "--k", "3", "--out", "cv.csv"]);
    let rows = csv_rows(&fx.read("cv.csv"));
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[3][0], "average");
    for col in 1..7 {
        let folds: Vec<f64> = rows[..3].iter().map(|r| r[col].parse().unwrap()).collect();
        let mean = folds.iter().sum::<f64>() / 3.0;
        let avg: f64 = rows[3][col].parse().unwrap();
        // every cell is rounded to 6 decimals
        assert!((mean - avg).abs() <= 1e-6 + 1e-12, "column {col}: mean {mean} vs {avg}");
    }
}

#[test]
fn runs_are_deterministic_under_a_seed() {
    let fx = Fixture::new(80);
    let p = fx.path();
    ok(p, &["--seed", "5", "split", "--truth", "truth.csv", "--k", "4", "--out", "a.csv"]);
    ok(p, &["--seed", "5", "split", "--truth", "truth.csv", "--k", "4", "--out", "b.csv"]);
    assert_eq!(fx.read("a.csv"), fx.read("b.csv"));

    let env = Command::new(env!("CARGO_BIN_EXE_canopy"))
        .args(["split", "--truth", "truth.csv", "--k", "4", "--out", "c.csv"])
        .current_dir(p)
        .env("CANOPY_SEED", "5")
        .output()
        .unwrap();
    assert!(env.status.success());
    assert_eq!(fx.read("a.csv"), fx.read("c.csv"));

    for name in ["m1.json", "m2.json"] {
        ok(
            p,
            &["train", "--features", "features.csv", "--truth", "truth.csv", "--learner", "rf", "--trees", "7", "--out", name],
        );
    }
    assert_eq!(fx.read("m1.json"), fx.read("m2.json"));
}

#[test]
fn classical_train_and_predict() {
    let fx = Fixture::new(120);
    let p = fx.path();
    for learner in ["lda", "gbm", "extra", "prior"] {
        let model = format!("{learner}.json");
        let mut args = vec!["train", "--features", "features.csv", "--truth", "truth.csv", "--learner", learner];
        if learner == "gbm" {
            args.extend(["--stages", "20"]);
        }
        args.extend(["--out", &model]);
        ok(p, &args);
        ok(p, &["predict", "--model", &model, "--features", "features.csv", "--out", "pred.csv", "--tags-out", "tags.csv"]);
        let rows = csv_rows(&fx.read("pred.csv"));
        assert_eq!(rows.len(), 120);
        assert_eq!(rows[0].len(), LABELS.len() + 1);
        assert_eq!(csv_rows(&fx.read("tags.csv")).len(), 120);
    }
    // features 0..3 carry labels 0..3, so lda separates them well
    ok(p, &["train", "--features", "features.csv", "--truth", "truth.csv", "--out", "lda.json"]);
    ok(p, &["predict", "--model", "lda.json", "--features", "features.csv", "--out", "pred.csv"]);
    ok(p, &["metrics", "--pred", "pred.csv", "--truth", "truth.csv", "--out", "r.csv"]);
    let rows = csv_rows(&fx.read("r.csv"));
    for row in &rows[..3] {
        assert!(row[5].parse::<f64>().unwrap() > 0.9, "{row:?}");
    }
}

#[test]
fn mlp_and_stack_round_trip() {
    let fx = Fixture::new(200);
    let p = fx.path();
    ok(
        p,
        &[
            "train", "--features", "features.csv", "--truth", "truth.csv", "--learner", "mlp", "--hidden", "8",
            "--epochs", "30", "--batch-size", "32", "--alpha", "0.01", "--out", "mlp.json",
        ],
    );
    ok(p, &["predict", "--model", "mlp.json", "--features", "features.csv", "--out", "mlp_pred.csv"]);
    assert_eq!(csv_rows(&fx.read("mlp_pred.csv")).len(), 200);

    let stdout = ok(
        p,
        &[
            "stack", "--pred", "probs.csv", "--pred", "mlp_pred.csv", "--truth", "truth.csv", "--hidden", "8",
            "--epochs", "20", "--batch-size", "32", "--out", "stack.json",
        ],
    );
    assert!(stdout.contains("stacked"));
    ok(
        p,
        &["predict", "--model", "stack.json", "--pred", "probs.csv", "--pred", "mlp_pred.csv", "--out", "s.csv", "--tags-out", "s_tags.csv"],
    );
    assert_eq!(csv_rows(&fx.read("s.csv")).len(), 200);

    // wrong number of base models is a usage error
    let out = canopy(p, &["predict", "--model", "stack.json", "--pred", "probs.csv", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stack_accepts_a_fold_file() {
    let fx = Fixture::new(100);
    let p = fx.path();
    ok(p, &["split", "--truth", "truth.csv", "--k", "5", "--out", "folds.csv"]);
    let stdout = ok(
        p,
        &["stack", "--pred", "probs.csv", "--truth", "truth.csv", "--folds", "folds.csv", "--epochs", "5", "--out", "st.json"],
    );
    assert!(stdout.contains("validated on"));
}

#[test]
fn usage_errors_exit_2() {
    let fx = Fixture::new(10);
    let p = fx.path();
    assert_eq!(canopy(p, &["metrics", "--pred", "probs.csv"]).status.code(), Some(2));
    assert_eq!(canopy(p, &["metrics", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(canopy(p, &["split", "--truth", "truth.csv", "--k", "1"]).status.code(), Some(2));
    assert_eq!(
        canopy(p, &["tune-thresholds", "--pred", "probs.csv", "--truth", "truth.csv", "--beta", "-1"]).status.code(),
        Some(2)
    );
    assert_eq!(
        canopy(p, &["cv", "--features", "features.csv", "--truth", "truth.csv", "--learner", "lda", "--trees", "3"])
            .status
            .code(),
        Some(2)
    );
    fs::write(p.join("bad.toml"), "version = 1\n[metrics]\nbogus = 3\n").unwrap();
    let out = canopy(p, &["--config", "bad.toml", "metrics"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
    fs::write(p.join("v2.toml"), "version = 2\n").unwrap();
    assert_eq!(canopy(p, &["--config", "v2.toml", "metrics"]).status.code(), Some(2));
}

#[test]
fn data_errors_exit_1_and_name_file_and_line() {
    let fx = Fixture::new(10);
    let p = fx.path();
    fs::write(p.join("bad.csv"), "image_name,clear,haze,road,water\ns0,0.1,0.2,1.7,0.0\n").unwrap();
    let out = canopy(p, &["metrics", "--pred", "bad.csv", "--truth", "truth.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.csv") && err.contains("line 2"), "{err}");

    fs::write(p.join("t.csv"), "image_name,tags\ns0,clear\ns1,clear fog\n").unwrap();
    let out = canopy(p, &["metrics", "--pred", "probs.csv", "--truth", "t.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("t.csv") && err.contains("fog"), "{err}");
}

#[test]
fn config_values_apply_and_flags_override_them() {
    let fx = Fixture::new(60);
    let p = fx.path();
    fs::write(p.join("run.toml"), "version = 1\nseed = 5\n[split]\ntruth = \"truth.csv\"\nk = 4\nout = \"cfg.csv\"\n")
        .unwrap();
    ok(p, &["--config", "run.toml", "split"]);
    ok(p, &["--seed", "5", "split", "--truth", "truth.csv", "--k", "4", "--out", "flag.csv"]);
    assert_eq!(fx.read("cfg.csv"), fx.read("flag.csv"));
    let m: serde_json::Value = serde_json::from_str(&fx.read("cfg.csv.manifest.json")).unwrap();
    assert_eq!(m["config_file"]["path"], "run.toml");

    ok(p, &["--config", "run.toml", "split", "--k", "3", "--out", "three.csv"]);
    let folds: std::collections::BTreeSet<String> =
        csv_rows(&fx.read("three.csv")).into_iter().map(|r| r[1].clone()).collect();
    assert_eq!(folds.len(), 3);
}

fn npy_u8(shape: &[usize], data: &[u8]) -> Vec<u8> {
    let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
    let mut header = format!("{{'descr': '|u1', 'fortran_order': False, 'shape': ({},), }}", dims.join(", "));
    while (10 + header.len() + 1) % 64 != 0 {
        header.push(' ');
    }
    header.push('\n');
    let mut out = b"\x93NUMPY\x01\x00".to_vec();
    out.extend((header.len() as u16).to_le_bytes());
    out.extend(header.as_bytes());
    out.extend(data);
    out
}

fn npy_f64_values(bytes: &[u8]) -> Vec<f64> {
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    bytes[10 + header_len..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
}

#[test]
fn preprocess_maps_pixels_by_backbone() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let pixels: Vec<u8> = vec![0, 255, 51, 102, 153, 204, 10, 20, 30, 40, 50, 60];
    fs::write(p.join("img.npy"), npy_u8(&[2, 2, 3], &pixels)).unwrap();

    ok(p, &["preprocess", "--in", "img.npy", "--backbone", "inception_v3", "--out", "tf.npy"]);
    let tf = npy_f64_values(&fs::read(p.join("tf.npy")).unwrap());
    let want: Vec<f64> = pixels.iter().map(|&v| f64::from(v) / 127.5 - 1.0).collect();
    assert_eq!(tf, want);

    ok(p, &["preprocess", "--in", "img.npy", "--mode", "caffe", "--out", "caffe.npy"]);
    let caffe = npy_f64_values(&fs::read(p.join("caffe.npy")).unwrap());
    // first pixel RGB (0, 255, 51) becomes BGR minus the BGR means
    assert_eq!(&caffe[..3], &[51.0 - 103.939, 255.0 - 116.779, 0.0 - 123.68]);

    assert_eq!(
        canopy(p, &["preprocess", "--in", "img.npy", "--mode", "caffe", "--backbone", "Xception", "--out", "x.npy"])
            .status
            .code(),
        Some(2)
    );

    ok(p, &["--seed", "3", "preprocess", "--in", "img.npy", "--mode", "tf", "--augment", "--out", "a1.npy"]);
    ok(p, &["--seed", "3", "preprocess", "--in", "img.npy", "--mode", "tf", "--augment", "--out", "a2.npy"]);
    assert_eq!(fs::read(p.join("a1.npy")).unwrap(), fs::read(p.join("a2.npy")).unwrap());
    let mut a = npy_f64_values(&fs::read(p.join("a1.npy")).unwrap());
    let mut w = want.clone();
    a.sort_by(f64::total_cmp);
    w.sort_by(f64::total_cmp);
    assert_eq!(a, w);
}

