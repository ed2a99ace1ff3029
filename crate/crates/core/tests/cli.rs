use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_settlebench")).current_dir(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn gen_map_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = bin(dir.path(), &["gen-map", "--seed", "4", "--out", "a.txt"]);
    let b = bin(dir.path(), &["gen-map", "--seed", "4", "--out", "b.txt"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(b.status.code(), Some(0));
    assert!(stdout(&a).contains("buildable fraction"));
    let text = fs::read_to_string(dir.path().join("a.txt")).unwrap();
    assert_eq!(text, fs::read_to_string(dir.path().join("b.txt")).unwrap());
    let map = settlebench::world::decode_map(&text).unwrap();
    assert_eq!((map.width, map.height), (20, 20));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bin(dir.path(), &["gen-map", "--width", "5", "--out", "x.txt"]).status.code(), Some(2));
    assert_eq!(bin(dir.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(bin(dir.path(), &["run"]).status.code(), Some(1));
    assert_eq!(bin(dir.path(), &["--help"]).status.code(), Some(0));
    let nn = bin(dir.path(), &["run", "--evaluator", "nn", "--out-dir", "o"]);
    assert_eq!(nn.status.code(), Some(1));
    assert!(stderr(&nn).contains("--model"));
}

#[test]
fn config_overlay() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.cfg"), "episodes = 2\ncolour = red\n").unwrap();
    let o = bin(dir.path(), &["run", "--config", "bad.cfg", "--out-dir", "o"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("colour"));

    fs::write(dir.path().join("run.cfg"), "# short run\nepisodes = 50\nturns = 30\nwarmup_episodes = 3\nk = 4\n").unwrap();
    // The flag wins over the file.
    let o = bin(dir.path(), &["run", "--config", "run.cfg", "--episodes", "3", "--out-dir", "o"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("episodes 3"));
    assert_eq!(fs::read_dir(dir.path().join("o/logs")).unwrap().count(), 3);
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = |o: Output| {
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        stdout(&o)
    };
    ok(bin(d, &["gen-map", "--seed", "2", "--out", "map.txt"]));
    let common = ["--episodes", "10", "--turns", "40", "--map", "map.txt", "--warmup-episodes", "5", "--seed", "9"];
    ok(bin(d, &[&["run", "--evaluator", "kb", "--out-dir", "kb"][..], &common].concat()));
    assert_eq!(fs::read_dir(d.join("kb/logs")).unwrap().count(), 10);
    assert!(d.join("kb/value_table.txt").exists());
    let metrics = fs::read_to_string(d.join("kb/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 11);
    assert!(metrics.starts_with("episode,tgo,running_avg"));

    ok(bin(d, &[&["run", "--evaluator", "kb", "--out-dir", "kb2"][..], &common].concat()));
    assert_eq!(metrics, fs::read_to_string(d.join("kb2/metrics.csv")).unwrap());

    ok(bin(d, &["run", "--evaluator", "random", "--per-episode-maps", "--episodes", "30", "--turns", "60", "--out-dir", "boot"]));
    let built = ok(bin(d, &["build-dataset", "--logs-dir", "boot", "--out", "data.csv"]));
    assert!(built.contains("unique entries"));
    let trained = ok(bin(d, &["train-nn", "--dataset", "data.csv", "--out-model", "m.mlp", "--epochs", "20", "--folds", "3"]));
    assert!(trained.contains("mean cv mse"));

    ok(bin(d, &[&["run", "--evaluator", "nn", "--model", "m.mlp", "--out-dir", "nn"][..], &common].concat()));
    let cmp = ok(bin(d, &["compare", "--run-a", "kb", "--run-b", "nn", "--out", "cmp"]));
    assert_eq!(cmp.matches("improvement").count(), 2);
    let same = ok(bin(d, &["compare", "--run-a", "kb", "--run-b", "kb2", "--out", "cmp2"]));
    assert!(same.contains("delta (kb vs kb): +0.00%"));

    let empty = d.join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(bin(d, &["build-dataset", "--logs-dir", "empty", "--out", "x.csv"]).status.code(), Some(2));
}

#[test]
fn explain_decisions() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = bin(d, &["run", "--episodes", "2", "--turns", "30", "--warmup-episodes", "3", "--out-dir", "kb"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let log_path = d.join("kb/logs/episode_00001.jsonl");
    let log = settlebench::engine::EpisodeLog::read_jsonl(std::io::BufReader::new(fs::File::open(&log_path).unwrap())).unwrap();
    let first = log.decisions().find(|x| x.player == 0).unwrap().clone();
    let coord = format!("{},{}", first.center.x, first.center.y);
    let turn = first.turn.to_string();
    let log_arg = log_path.to_str().unwrap();
    let o = bin(d, &["explain", "--log", log_arg, "--turn", &turn, "--coord", &coord]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("alternatives"));
    assert!(text.contains(&format!("total {} points", first.score)));

    let o = bin(d, &["explain", "--log", log_arg, "--turn", "29", "--coord", "0,0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no decision"));
}
