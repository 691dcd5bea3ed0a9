use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn medseq(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_medseq"))
        .args(args)
        .current_dir(cwd)
        .env_remove("MEDSEQ_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = medseq(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str], cwd: &Path) -> i32 {
    medseq(args, cwd).status.code().expect("exit code")
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

const SMALL: &[&str] = &["--random-init", "--no-augment", "--word-dim", "12", "--max-epochs", "3"];

fn train_args<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["train", "--train", "d", "--checkpoint", "m.ckpt"];
    v.extend_from_slice(SMALL);
    v.extend_from_slice(extra);
    v
}

#[test]
fn gen_writes_three_files_per_document_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    ok(&["gen", "--docs", "10", "--seed", "7", "--out", "a"], p);
    ok(&["gen", "--docs", "10", "--seed", "7", "--out", "b"], p);
    let a = dir_contents(&p.join("a"));
    assert_eq!(a.len(), 31);
    assert!(a
        .iter()
        .any(|(n, c)| n == "manifest" && String::from_utf8_lossy(c).contains("seed = 7")));
    assert_eq!(a, dir_contents(&p.join("b")));

    let out = medseq(&["gen", "--docs", "0", "--out", "z"], p);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert_eq!(dir_contents(&p.join("z")).len(), 1);
}

#[test]
fn seed_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    let run = |out: &str, seed_env: Option<&str>, extra: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_medseq"));
        cmd.args(["gen", "--docs", "2", "--out", out])
            .args(extra)
            .current_dir(p);
        match seed_env {
            Some(s) => cmd.env("MEDSEQ_SEED", s),
            None => cmd.env_remove("MEDSEQ_SEED"),
        };
        assert!(cmd.status().unwrap().success());
        dir_contents(&p.join(out))
    };
    let flag7 = run("f7", None, &["--seed", "7"]);
    assert_eq!(run("e7", Some("7"), &[]), flag7);
    assert_eq!(run("e9f7", Some("9"), &["--seed", "7"]), flag7);
    assert_ne!(run("e9", Some("9"), &[]), flag7);
    fs::write(p.join("seed.cfg"), "seed = 7\n").unwrap();
    assert_eq!(run("c7", Some("9"), &["--config", "seed.cfg"]), flag7);
}

#[test]
fn pipeline_closes_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    ok(&["gen", "--docs", "6", "--seed", "3", "--out", "d"], p);
    ok(&train_args(&[]), p);
    let ckpt = fs::read(p.join("m.ckpt")).unwrap();
    let hist = fs::read_to_string(p.join("m.ckpt.history.json")).unwrap();
    let epochs: serde_json::Value = serde_json::from_str(&hist).unwrap();
    assert_eq!(epochs.as_array().unwrap().len(), 3);

    ok(&train_args(&[]), p);
    assert_eq!(fs::read(p.join("m.ckpt")).unwrap(), ckpt);
    assert_eq!(fs::read_to_string(p.join("m.ckpt.history.json")).unwrap(), hist);

    ok(&["predict", "--checkpoint", "m.ckpt", "--input", "d", "--out", "p"], p);
    assert_eq!(dir_contents(&p.join("p")).len(), 6);
    let stdout = ok(&["evaluate", "--gold", "d", "--pred", "p", "--report", "r.json"], p);
    assert!(stdout.lines().last().unwrap().starts_with("lenient micro F1: "));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("r.json")).unwrap()).unwrap();
    for mode in ["strict", "lenient"] {
        assert_eq!(report[mode]["per_class"].as_array().unwrap().len(), 9);
        assert_eq!(report[mode]["confusion"].as_array().unwrap().len(), 10);
    }
    let strict = report["strict"]["micro"]["f1"].as_f64().unwrap();
    let lenient = report["lenient"]["micro"]["f1"].as_f64().unwrap();
    assert!(lenient >= strict);
}

#[test]
fn config_file_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    ok(&["gen", "--docs", "4", "--seed", "3", "--out", "d"], p);
    fs::write(
        p.join("run.cfg"),
        "# small run\ntrain = d\ncheckpoint = m.ckpt\nrandom_init = true\nword-dim = 8\nmax_epochs = 2\npatience = 10\n",
    )
    .unwrap();
    let epochs = |p: &Path| {
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(p.join("m.ckpt.history.json")).unwrap()).unwrap();
        v.as_array().unwrap().len()
    };
    ok(&["train", "--config", "run.cfg"], p);
    assert_eq!(epochs(p), 2);
    ok(&["train", "--config", "run.cfg", "--max-epochs", "1"], p);
    assert_eq!(epochs(p), 1);

    fs::write(p.join("typo.cfg"), "max_epoch = 2\n").unwrap();
    assert_eq!(
        code(
            &["train", "--config", "typo.cfg", "--train", "d", "--checkpoint", "x"],
            p
        ),
        1
    );
}

#[test]
fn configuration_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    ok(&["gen", "--docs", "3", "--out", "d"], p);
    fs::create_dir(p.join("nofeat")).unwrap();
    assert_eq!(code(&["train", "--train", "d", "--augment", "--checkpoint", "x"], p), 1);
    assert_eq!(
        code(
            &[
                "train",
                "--train",
                "d",
                "--embeddings",
                "e.txt",
                "--random-init",
                "--checkpoint",
                "x"
            ],
            p
        ),
        1
    );
    let out = medseq(
        &[
            "train",
            "--train",
            "d",
            "--augment",
            "--features",
            "nofeat",
            "--checkpoint",
            "x",
        ],
        p,
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("doc0001") && err.contains("doc0003"), "{err}");
    assert_eq!(
        code(
            &["predict", "--checkpoint", "missing.ckpt", "--input", "d", "--out", "p"],
            p
        ),
        1
    );
    assert_eq!(code(&["pretrain", "--corpus", "missing", "--out", "e.txt"], p), 1);
    assert_eq!(code(&["train", "--no-such-flag"], p), 1);
    assert_eq!(code(&["--help"], p), 0);
}

#[test]
fn divergence_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    ok(&["gen", "--docs", "3", "--out", "d"], p);
    assert_eq!(code(&train_args(&["--learning-rate", "1e308"]), p), 3);
}

#[test]
fn pretrain_dimension() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    ok(&["gen", "--docs", "3", "--out", "d"], p);
    ok(&["pretrain", "--corpus", "d", "--out", "e100.txt", "--epochs", "1"], p);
    ok(
        &[
            "pretrain", "--corpus", "d", "--out", "e50.txt", "--epochs", "1", "--dim", "50",
        ],
        p,
    );
    let header = |f: &str| {
        fs::read_to_string(p.join(f))
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string()
    };
    assert_eq!(header("e100.txt").split(' ').nth(1), Some("100"));
    assert_eq!(header("e50.txt").split(' ').nth(1), Some("50"));

    fs::create_dir(p.join("empty")).unwrap();
    assert_eq!(code(&["pretrain", "--corpus", "empty", "--out", "x.txt"], p), 2);

    // Pretrained vectors drive the word dimension of a model.
    ok(
        &[
            "train",
            "--train",
            "d",
            "--embeddings",
            "e50.txt",
            "--checkpoint",
            "m.ckpt",
            "--max-epochs",
            "1",
        ],
        p,
    );
    assert_eq!(
        code(
            &[
                "train",
                "--train",
                "d",
                "--embeddings",
                "e50.txt",
                "--word-dim",
                "20",
                "--checkpoint",
                "m.ckpt"
            ],
            p
        ),
        1
    );
}

#[test]
fn empty_document_gets_empty_ann() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    ok(&["gen", "--docs", "3", "--out", "d"], p);
    ok(&train_args(&["--max-epochs", "1"]), p);
    fs::create_dir(p.join("in")).unwrap();
    fs::write(p.join("in/blank.txt"), "").unwrap();
    ok(
        &["predict", "--checkpoint", "m.ckpt", "--input", "in", "--out", "out"],
        p,
    );
    assert_eq!(fs::read_to_string(p.join("out/blank.ann")).unwrap(), "");
}

fn write_doc(dir: &Path, id: &str, text: &str, ann: &str) {
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join(format!("{id}.txt")), text).unwrap();
    fs::write(dir.join(format!("{id}.ann")), ann).unwrap();
}

#[test]
fn evaluation_fixtures() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    //          0         1         2         3         4
    //          0123456789012345678901234567890123456789012345
    let text = "aspirin lasix for pain fever cough rash daily";
    let gold = "T1\tDrug 0 7\taspirin\nT2\tDrug 8 13\tlasix\nT3\tReason 18 22\tpain\nT4\tReason 23 28\tfever\nT5\tReason 29 34\tcough\n";
    // Drug: 1 tp, 1 fn. Reason: 3 tp, 1 fp.
    let pred = "T1\tDrug 0 7\taspirin\nT2\tReason 18 22\tpain\nT3\tReason 23 28\tfever\nT4\tReason 29 34\tcough\nT5\tReason 35 39\trash\n";
    write_doc(&p.join("gold"), "f", text, gold);
    write_doc(&p.join("pred"), "f", text, pred);
    let stdout = ok(
        &["evaluate", "--gold", "gold", "--pred", "pred", "--report", "r.json"],
        p,
    );
    assert_eq!(stdout.lines().last(), Some("lenient micro F1: 80.00"));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("r.json")).unwrap()).unwrap();
    assert_eq!(r["lenient"]["micro"]["f1"].as_f64(), Some(80.0));
    // Macro averages all nine classes; the seven absent ones score 0.
    let macro_f1 = (2.0 / 3.0 + 6.0 / 7.0) * 100.0 / 9.0;
    assert_eq!(
        r["lenient"]["macro"]["f1"].as_f64(),
        Some((macro_f1 * 100.0f64).round() / 100.0)
    );

    let stdout = ok(
        &["evaluate", "--gold", "gold", "--pred", "gold", "--report", "self.json"],
        p,
    );
    assert_eq!(stdout.lines().last(), Some("lenient micro F1: 100.00"));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("self.json")).unwrap()).unwrap();
    assert_eq!(r["strict"]["micro"]["f1"].as_f64(), Some(100.0));

    write_doc(&p.join("empty"), "f", text, "");
    ok(
        &["evaluate", "--gold", "gold", "--pred", "empty", "--report", "e.json"],
        p,
    );
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("e.json")).unwrap()).unwrap();
    for mode in ["strict", "lenient"] {
        assert_eq!(r[mode]["micro"]["p"].as_f64(), Some(0.0));
        assert_eq!(r[mode]["micro"]["r"].as_f64(), Some(0.0));
    }

    write_doc(&p.join("extra"), "f", text, pred);
    write_doc(&p.join("extra"), "g", text, "");
    let out = medseq(&["evaluate", "--gold", "gold", "--pred", "extra"], p);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("only in predictions: g"));
}

#[test]
fn gradcheck_reports_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(&["gradcheck", "--instances", "2"], tmp.path());
    assert!(stdout.contains("crf log-partition"));
    assert!(stdout.contains("overall"));
    assert_eq!(stdout.matches("sign fault").count(), 4);
}
