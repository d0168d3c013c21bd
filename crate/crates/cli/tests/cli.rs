use std::fs;
use std::path::Path;
use std::process::Command;

use zsembed_cli::{run_command, RunConfig};

/// Small config that keeps every command under a few seconds.
const QUICK: &str =
    "max_iters = 110\nbatch_size = 16\nd_hidden = 8\nbeta_grid = 0.1,1\nlambda_grid = 0.1\n";

fn quick_config(dir: &Path, extra: &str) -> String {
    let p = dir.join("run.cfg");
    fs::write(&p, format!("{QUICK}{extra}")).unwrap();
    p.display().to_string()
}

fn run(args: &[&str]) -> i32 {
    run_command(std::iter::once("zsembed").chain(args.iter().copied()))
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_zsembed");
    let code = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code();
    assert_eq!(code(&["--help"]), Some(0));
    assert_eq!(code(&["train", "--no-such-flag"]), Some(1));
    assert_eq!(code(&["frobnicate"]), Some(1));
}

#[test]
fn selfcheck_passes() {
    assert_eq!(run(&["selfcheck"]), 0);
}

#[test]
fn train_is_reproducible_and_eval_reads_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), "");
    let out = |name: &str| dir.path().join(name).display().to_string();
    for name in ["a", "b"] {
        assert_eq!(
            run(&[
                "train",
                "--config",
                &cfg,
                "--data",
                "synth-smoke",
                "--out",
                &out(name)
            ]),
            0
        );
    }
    let a = dir.path().join("a");
    assert_eq!(
        read(a.join("trace.csv")),
        read(dir.path().join("b/trace.csv"))
    );
    assert_eq!(
        read(a.join("report.json")),
        read(dir.path().join("b/report.json"))
    );
    assert_eq!(read(a.join("trace.csv")).lines().count(), 111);
    assert!(a.join("pr.csv").exists());
    assert!(a.join("checkpoint").is_dir());

    let trained = read(a.join("report.json"));
    assert_eq!(
        run(&[
            "eval",
            "--config",
            &cfg,
            "--data",
            "synth-smoke",
            "--out",
            &out("a")
        ]),
        0
    );
    let evaluated: serde_json::Value = serde_json::from_str(&read(a.join("report.json"))).unwrap();
    let trained: serde_json::Value = serde_json::from_str(&trained).unwrap();
    assert_eq!(evaluated["top1"], trained["top1"]);
    assert_eq!(evaluated["map"], trained["map"]);

    // a checkpoint cannot be scored against data of another shape
    assert_eq!(run(&["eval", "--data", "synth-A", "--out", &out("a")]), 1);
}

#[test]
fn config_echo_reparses_with_every_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), "lambda = 0.25\n");
    let out = dir.path().join("o");
    assert_eq!(
        run(&[
            "train",
            "--config",
            &cfg,
            "--data",
            "synth-smoke",
            "--seed",
            "5",
            "--out",
            &out.display().to_string()
        ]),
        0
    );
    let echo = read(out.join("config.txt"));
    let keys: Vec<&str> = echo
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split('=').next().unwrap().trim())
        .collect();
    for k in [
        "synthetic",
        "split",
        "search_space",
        "log1p",
        "alpha",
        "beta",
        "gamma",
        "lambda",
        "kappa",
        "seed",
        "learning_rate",
        "variant",
    ] {
        assert!(keys.contains(&k), "{k} missing from echo");
    }
    assert!(echo.contains("# d_code = 75"));
    let back = RunConfig::parse(&echo).unwrap();
    assert_eq!(back.train.weights.lambda, 0.25);
    assert_eq!(back.train.seed, 5);
    assert_eq!(
        back.echo(None)
            .lines()
            .filter(|l| !l.starts_with('#'))
            .collect::<Vec<_>>(),
        echo.lines()
            .filter(|l| !l.starts_with('#'))
            .collect::<Vec<_>>()
    );
}

#[test]
fn ablate_writes_one_row_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), "");
    let out = dir.path().join("abl");
    assert_eq!(
        run(&[
            "ablate",
            "--config",
            &cfg,
            "--data",
            "synth-smoke",
            "--jobs",
            "2",
            "--out",
            &out.display().to_string()
        ]),
        0
    );
    let csv = read(out.join("ablation.csv"));
    assert_eq!(csv.lines().count(), 1 + 7);
    assert!(csv.starts_with("variant,top1_mean"));
}

#[test]
fn bad_config_and_divergence_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o").display().to_string();
    let bad = quick_config(dir.path(), "no_such_key = 1\n");
    assert_eq!(
        run(&[
            "train",
            "--config",
            &bad,
            "--data",
            "synth-smoke",
            "--out",
            &out
        ]),
        1
    );
    assert_eq!(
        run(&[
            "train",
            "--data",
            "synth-smoke",
            "--variant",
            "nonsense",
            "--out",
            &out
        ]),
        1
    );
    assert_eq!(run(&["train", "--out", &out]), 1);

    let diverge = quick_config(dir.path(), "learning_rate = 1e200\n");
    assert_eq!(
        run(&[
            "train",
            "--config",
            &diverge,
            "--data",
            "synth-smoke",
            "--out",
            &out
        ]),
        2
    );
    // the partial trace is still written
    assert!(read(Path::new(&out).join("trace.csv")).starts_with("iter,"));
}

#[test]
fn synthetic_files_feed_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let data_s = data.display().to_string();
    assert_eq!(
        run(&[
            "synth",
            "--data",
            "synth-smoke",
            "--seed",
            "2",
            "--out",
            &data_s
        ]),
        0
    );
    for f in ["visual.rvf", "attributes.rvf", "labels.csv", "roles.csv"] {
        assert!(data.join(f).exists(), "{f}");
    }
    let out = dir.path().join("o").display().to_string();
    // synthetic features are signed, so the default log transform refuses them
    let cfg = quick_config(dir.path(), "");
    assert_eq!(
        run(&["train", "--config", &cfg, "--data", &data_s, "--out", &out]),
        1
    );
    let cfg = quick_config(dir.path(), "log1p = false\n");
    assert_eq!(
        run(&["train", "--config", &cfg, "--data", &data_s, "--out", &out]),
        0
    );
}

#[test]
fn sweep_and_grid_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), "");
    let out = dir.path().join("s");
    let out_s = out.display().to_string();
    assert_eq!(
        run(&[
            "sweep-fraction",
            "--config",
            &cfg,
            "--data",
            "synth-smoke",
            "--fraction-grid",
            "0:1:0.5",
            "--out",
            &out_s
        ]),
        0
    );
    let csv = read(out.join("sweep.csv"));
    let ps: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(ps, ["0", "0.5", "1"]);
    assert_eq!(
        run(&[
            "sweep-fraction",
            "--data",
            "synth-smoke",
            "--fraction-grid",
            "1:0:0.5",
            "--out",
            &out_s
        ]),
        1
    );

    assert_eq!(
        run(&[
            "grid",
            "--config",
            &cfg,
            "--data",
            "synth-smoke",
            "--out",
            &out_s
        ]),
        0
    );
    let g: serde_json::Value = serde_json::from_str(&read(out.join("grid.json"))).unwrap();
    assert_eq!(g["points"].as_array().unwrap().len(), 3);
    assert_eq!(g["lambda"], 0.1);
}
