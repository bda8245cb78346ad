use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn grnn(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grnn"))
        .args(args)
        .env("GRNN_OUTPUT_ROOT", root)
        .env_remove("RUST_LOG")
        .output()
        .expect("spawn grnn")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const SMALL_SYNTH: &str = r#"
seed = 3
output = "run"
tolerance = 10.0
[task]
kind = "basic"
train_steps = 300
test_steps = 200
[model]
cell = "lstm"
hidden_dim = 4
inroll = 1
[training]
window = 20
epochs = 2
learning_rate = 0.05
optimizer = "adagrad"
seed = 5
"#;

const SMALL_PLANTED: &str = r#"
output = "w"
[data]
source = "planted"
stations = 8
days = 80
[split]
train_days = 50
[settings]
hidden_dim = 4
inroll = 1
[settings.train]
window = 10
epochs = 1
learning_rate = 0.02
optimizer = "adagrad"
clip_norm = 1.0
seed = 1
"#;

/// Relative path to bytes for every file under `dir`.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn invalid_summary_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "c.toml",
        &SMALL_SYNTH.replace("inroll = 1", "inroll = 1\nsummaries = [\"median\"]"),
    );
    let o = grnn(tmp.path(), &["synth", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("median"), "{}", stderr(&o));
    assert!(!tmp.path().join("run").exists());
}

#[test]
fn unknown_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", &SMALL_SYNTH.replace("epochs = 2", "epochs = 2\nmomentum = 0.9"));
    let o = grnn(tmp.path(), &["synth", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("momentum"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = grnn(tmp.path(), &["gradcheck", tmp.path().join("nope.toml").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn synth_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", SMALL_SYNTH);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for root in [&a, &b] {
        let o = grnn(root, &["synth", cfg.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(stdout(&o).contains("PASS"));
    }
    let (sa, sb) = (snapshot(&a.join("run")), snapshot(&b.join("run")));
    let names: Vec<_> = sa.iter().map(|(p, _)| p.to_string_lossy().into_owned()).collect();
    for want in ["model.bin", "loss.csv", "predictions.csv", "result.json", "manifest-synth.json"] {
        assert!(names.iter().any(|n| n == want), "missing {want} in {names:?}");
    }
    assert!(names.iter().any(|n| n.starts_with("checkpoints")));
    assert_eq!(sa, sb);

    // a different seed changes the result
    let c = tmp.path().join("c");
    assert_eq!(code(&grnn(&c, &["synth", cfg.to_str().unwrap(), "--seed", "4"])), 0);
    let model = |root: &Path| fs::read(root.join("run/model.bin")).unwrap();
    assert_ne!(model(&a), model(&c));
}

#[test]
fn synth_fails_when_the_optimum_is_missed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "c.toml",
        &SMALL_SYNTH
            .replace("tolerance = 10.0", "tolerance = 0.0001")
            .replace("epochs = 2", "epochs = 1"),
    );
    let o = grnn(tmp.path(), &["synth", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn manifest_records_hashes_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", SMALL_SYNTH);
    let o = grnn(tmp.path(), &["synth", cfg.to_str().unwrap(), "--epochs", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("run/manifest-synth.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "synth");
    assert_eq!(m["config_file_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(m["overrides"]["epochs"], 1);
    assert_eq!(m["config"]["training"]["epochs"], 1);
}

#[test]
fn prepare_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "w.toml", SMALL_PLANTED);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for root in [&a, &b] {
        let o = grnn(root, &["weather-prepare", cfg.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let sa = snapshot(&a.join("w"));
    assert!(sa.iter().any(|(p, _)| p == Path::new("dataset.csv")));
    assert!(sa.iter().any(|(p, _)| p == Path::new("graph.txt")));
    assert_eq!(sa, snapshot(&b.join("w")));
}

#[test]
fn train_without_prepare_explains_what_to_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "w.toml", SMALL_PLANTED);
    for cmd in ["weather-baseline", "weather-train", "weather-eval"] {
        let o = grnn(tmp.path(), &[cmd, cfg.to_str().unwrap()]);
        assert_eq!(code(&o), 1, "{cmd}");
        assert!(stderr(&o).contains("grnn weather-prepare"), "{cmd}: {}", stderr(&o));
    }
}

#[test]
fn baseline_on_toy_stations_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    // A alternates 0, 1 so every day-to-day error is 1; B and C are constant
    let mut csv = String::from("station,date,lat,lon,tmin,tavg,tmax\n");
    for d in 1..=8 {
        let a = (d + 1) % 2;
        csv += &format!("A,2015-01-0{d},40.0,-100.0,{},{a},{}\n", a - 2, a + 2);
        csv += &format!("B,2015-01-0{d},41.0,-101.0,3,5,7\n");
        csv += &format!("C,2015-01-0{d},40.5,-99.0,1,2,3\n");
    }
    let data = write(tmp.path(), "toy.csv", &csv);
    let cfg = write(
        tmp.path(),
        "w.toml",
        &format!(
            "output = \"toy\"\n[data]\nsource = \"files\"\npath = {:?}\nformat = \"simple-csv\"\n[split]\ntest_start = \"2015-01-05\"\n",
            data.to_str().unwrap()
        ),
    );
    let o = grnn(tmp.path(), &["weather-prepare", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = grnn(tmp.path(), &["weather-baseline", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = fs::read_to_string(tmp.path().join("toy/baseline.csv")).unwrap();
    let steady = report.lines().find(|l| l.starts_with("steady state,")).unwrap();
    assert_eq!(steady, "steady state,0.333333,0.333333,100.00,100.00");
}

#[test]
fn weather_pipeline_trains_and_evaluates() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "w.toml", SMALL_PLANTED);
    let c = cfg.to_str().unwrap();
    for cmd in ["weather-prepare", "weather-baseline", "weather-train"] {
        let o = grnn(tmp.path(), &[cmd, c]);
        assert_eq!(code(&o), 0, "{cmd}: {}", stderr(&o));
    }
    let w = tmp.path().join("w");
    assert!(w.join("models/gRNN-mean/model.bin").exists());
    assert!(w.join("models/iRNN/checkpoints/epoch-0001.bin").exists());
    let o = grnn(tmp.path(), &["weather-eval", c]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 4, "{out}");
    for row in rows {
        let pct = row.split_whitespace().last().unwrap();
        let (_, frac) = pct.split_once('.').unwrap();
        assert_eq!(frac.len(), 2, "{row}");
    }
    // evaluating the saved models reproduces the training report
    let train = fs::read_to_string(w.join("report.csv")).unwrap();
    let eval = fs::read_to_string(w.join("eval.csv")).unwrap();
    assert_eq!(train, eval);
    let preds = fs::read_to_string(w.join("predictions/gRNN-mean.csv")).unwrap();
    assert!(preds.starts_with("station,date,predicted_tavg,observed_tavg\n"));
    // 30 test targets (days 51..=80) x 8 stations plus the header
    assert_eq!(preds.lines().count(), 30 * 8 + 1);
}

const GRADCHECK: &str = r#"
cell = "lstm"
inroll = 2
summaries = ["sum", "max"]
seed = 2
output = "gc"
"#;

#[test]
fn gradcheck_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "g.toml", GRADCHECK);
    let o = grnn(tmp.path(), &["gradcheck", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    assert!(tmp.path().join("gc/gradcheck.txt").exists());

    let single = GRADCHECK.replace("inroll = 2", "inroll = 1\nnodes = 1").replace("cell = \"lstm\"", "cell = \"irnn\"");
    let cfg = write(tmp.path(), "g1.toml", &single);
    let o = grnn(tmp.path(), &["gradcheck", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
}

#[test]
fn gradcheck_catches_an_injected_fault() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{GRADCHECK}[inject_fault]\nparam = \"class0/readout/W\"\nindex = 1\ndelta = 0.01\n");
    let cfg = write(tmp.path(), "g.toml", &text);
    let o = grnn(tmp.path(), &["gradcheck", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1, "{}", stdout(&o));
    assert!(stderr(&o).contains("above tolerance"), "{}", stderr(&o));

    let cfg = write(tmp.path(), "g2.toml", &text.replace("class0/readout/W", "class0/nothing"));
    assert_eq!(code(&grnn(tmp.path(), &["gradcheck", cfg.to_str().unwrap()])), 2);
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write(tmp.path(), "bad.bin", "definitely not a checkpoint");
    let text = format!("{GRADCHECK}checkpoint = {:?}\n", bad.to_str().unwrap());
    let cfg = write(tmp.path(), "g.toml", &text);
    let o = grnn(tmp.path(), &["gradcheck", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(!stderr(&o).is_empty());
}

#[test]
fn shipped_configs_parse() {
    let tmp = tempfile::tempdir().unwrap();
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for e in fs::read_dir(&configs).unwrap() {
        let p = e.unwrap().path();
        let name = p.file_name().unwrap().to_str().unwrap().to_owned();
        // --epochs 0 fails validation after parsing, so a config error here is a parse problem
        let cmd = if name.starts_with("synth") {
            "synth"
        } else if name.starts_with("weather") {
            "weather-baseline"
        } else {
            "gradcheck"
        };
        let o = grnn(tmp.path(), &[cmd, p.to_str().unwrap(), "--epochs", "0"]);
        let err = stderr(&o);
        assert!(
            !err.contains("unknown field") && !err.contains("TOML parse error"),
            "{name}: {err}"
        );
        seen += 1;
    }
    assert!(seen >= 4);
}
