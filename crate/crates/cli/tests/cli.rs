//! Command-line contract: flags, error text, and the exit-code convention
//! (0 success, 2 configuration, 3 missing prerequisite, 4 violated
//! invariant). Heavy end-to-end behavior is covered by the workspace's
//! acceptance gate; these tests only exercise the argv surface.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cfx(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfx"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn help_lists_the_four_stages() {
    let dir = tempfile::tempdir().unwrap();
    let out = cfx(&["--help"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["train", "explain", "evaluate", "report"] {
        assert!(text.contains(sub), "--help must mention `{sub}`");
    }
}

#[test]
fn unknown_config_key_exits_2_and_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "[experiment]\nseed = 1\nbananas = 7\n").unwrap();
    let out = cfx(
        &["--config", cfg.to_str().unwrap(), "report"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    let err = stderr(&out);
    assert!(err.contains("bananas"), "error names the key: {err}");
    assert!(err.contains("line 3"), "error names the line: {err}");
}

#[test]
fn invalid_train_component_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = cfx(&["train", "resnet"], dir.path());
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("resnet"));
}

#[test]
fn missing_checkpoint_exits_3_with_actionable_hint() {
    let dir = tempfile::tempdir().unwrap();
    let out = cfx(
        &["--out", "empty-run", "train", "dgcex"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
    let err = stderr(&out);
    assert!(
        err.contains("discriminator.ckpt"),
        "error names the missing checkpoint: {err}"
    );
    assert!(
        err.contains("cfx train discriminator"),
        "error says how to produce it: {err}"
    );
}

#[test]
fn evaluate_without_result_logs_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = cfx(&["--out", "empty-run", "evaluate"], dir.path());
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("cfx explain"), "stderr: {}", stderr(&out));
}

#[test]
fn divergent_targets_across_methods_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    fs::create_dir_all(&run).unwrap();
    let header = "# instance_id method y y_cf y_pred_cf seconds x_ref x_cf_ref\n";
    fs::write(
        run.join("results_cfproto.log"),
        format!("{header}0 cfproto 7 4 4 0.5 images/x_0.pgm images/xcf_cfproto_0.pgm\n"),
    )
    .unwrap();
    fs::write(
        run.join("results_dgcex.log"),
        format!("{header}0 dgcex 7 9 9 0.001 images/x_0.pgm images/xcf_dgcex_0.pgm\n"),
    )
    .unwrap();
    let out = cfx(&["--out", "run", "evaluate"], dir.path());
    assert_eq!(out.status.code(), Some(4), "stderr: {}", stderr(&out));
    let err = stderr(&out);
    assert!(err.contains("instance 0"), "error names the instance: {err}");
}

#[test]
fn target_without_id_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = cfx(&["explain", "--target", "3"], dir.path());
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
}
