use std::process::Command;
use std::time::{Duration, Instant};

use mrcfl::cli::{run, Hooks, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_OK};
use mrcfl::protocol::CSV_HEADER;
use num_bigint::BigInt;
use num_rational::BigRational;

fn mrcfl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mrcfl"))
}

fn in_process(args: &[&str], hooks: &Hooks) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut full = vec!["mrcfl"];
    full.extend_from_slice(args);
    let code = run(full, &mut out, &mut err, hooks);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

const TINY_THEORY: &[&str] = &[
    "theory",
    "--q",
    "0.3",
    "--p",
    "0.6",
    "--n-values",
    "4",
    "--trend-n-values",
    "4,64",
    "--trials",
    "50",
    "--contraction-vectors",
    "1",
    "--contraction-trials",
    "200",
    "--n-ul-values",
    "1,4",
];

#[test]
fn train_writes_one_row_per_round() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("gr.csv");
    let out = mrcfl()
        .args([
            "train",
            "--variant",
            "GR",
            "--rounds",
            "50",
            "--set",
            "hidden=16",
            "--out",
        ])
        .arg(&csv)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 51);
    for (i, line) in lines[1..].iter().enumerate() {
        assert!(line.starts_with(&format!("{},", i + 1)), "{line}");
    }
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(
        stdout.starts_with("summary variant=GR rounds=50 seed=0"),
        "{stdout}"
    );
}

#[test]
fn zero_rounds_prints_only_the_summary() {
    let (code, out, err) = in_process(&["train", "--rounds", "0"], &Hooks::default());
    assert_eq!(code, EXIT_OK, "{err}");
    assert_eq!(out.trim_end(), CSV_HEADER);
    assert!(
        err.contains("rounds=0")
            && err.contains("max_accuracy=n/a")
            && err.contains("bpp_total=0.000000")
    );
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for k in 0..2 {
        let csv = dir.path().join(format!("run{k}.csv"));
        let out = mrcfl()
            .args([
                "train",
                "--variant",
                "PR",
                "--rounds",
                "3",
                "--seed",
                "17",
                "--set",
                "hidden=16",
                "--out",
            ])
            .arg(&csv)
            .output()
            .unwrap();
        assert!(out.status.success());
        files.push(std::fs::read(&csv).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(
        &cfg,
        "# small run\nvariant = PR_SplitDL\nrounds = 2\nhidden = 8\nn_clients = 4\n",
    )
    .unwrap();
    let (code, out, err) = in_process(
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--variant",
            "GR_Reconst",
        ],
        &Hooks::default(),
    );
    assert_eq!(code, EXIT_OK, "{err}");
    assert_eq!(out.lines().count(), 3);
    assert!(err.contains("variant=GR_Reconst rounds=2"), "{err}");
}

#[test]
fn configuration_errors_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "rounds = 2\nwarp = 9\n").unwrap();
    for args in [
        vec!["train", "--variant", "nope"],
        vec!["train", "--config", bad.to_str().unwrap()],
        vec!["train", "--config", "/definitely/missing.cfg"],
        vec!["train", "--set", "candidates=0"],
        vec!["train", "--dataset", "idx:/definitely/missing"],
        vec!["no-such-command"],
    ] {
        let (code, _, err) = in_process(&args, &Hooks::default());
        assert_eq!(code, EXIT_CONFIG, "{args:?}: {err}");
    }
    let (_, _, err) = in_process(
        &["train", "--config", bad.to_str().unwrap()],
        &Hooks::default(),
    );
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn cost_table_lists_requested_rows() {
    let (code, out, err) = in_process(&["cost-table"], &Hooks::default());
    assert_eq!(code, EXIT_OK, "{err}");
    let gr = out.lines().find(|l| l.starts_with("GR ")).unwrap();
    let cols: Vec<&str> = gr.split_whitespace().collect();
    assert_eq!(&cols[1..5], &["0.31", "0.059", "0.031", "0.28"]);

    let (code, out, _) = in_process(
        &["cost-table", "--row", "PR_SplitDL", "--dim", "2560"],
        &Hooks::default(),
    );
    assert_eq!(code, EXIT_OK);
    assert_eq!(out.lines().count(), 2);
    assert!(out.contains("PR_SplitDL"));
}

#[test]
fn single_point_theory_grid_is_fast() {
    let started = Instant::now();
    let out = mrcfl().args(TINY_THEORY).output().unwrap();
    let took = started.elapsed();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(took < Duration::from_secs(1), "took {took:?}");
    let report = String::from_utf8(out.stdout).unwrap();
    for name in [
        "mrc_error_bound",
        "marginal_error_decay",
        "quantizer_contraction",
        "averaging_trend_n_ul",
    ] {
        assert!(report.contains(name), "missing {name}:\n{report}");
    }
}

#[test]
fn broken_bound_fails_the_theory_run() {
    let zero = Hooks {
        error_bound: |_, _| BigRational::from_integer(BigInt::from(0)),
    };
    let (code, out, _) = in_process(TINY_THEORY, &zero);
    assert_eq!(code, EXIT_CHECK_FAILED);
    let line = out
        .lines()
        .find(|l| l.starts_with("mrc_error_bound"))
        .unwrap();
    assert!(line.contains("FAIL"), "{line}");

    let (code, _, _) = in_process(TINY_THEORY, &Hooks::default());
    assert_eq!(code, EXIT_OK);
}
