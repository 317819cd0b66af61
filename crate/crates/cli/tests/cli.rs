use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tiny_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.toml")
}

fn rockflow(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rockflow"))
        .arg("--config")
        .arg(tiny_config())
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("ROCKFLOW_OUTPUT")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn files_under(root: &Path) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_string_lossy().into_owned());
            }
        }
    }
    out
}

fn manifest_lines(root: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(root.join("manifest.jsonl")).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn reproduce_all_is_deterministic_and_fully_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let first = rockflow(root, &["reproduce-all", "--generate"]);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));

    let predictors: BTreeSet<String> = files_under(&root.join("checkpoints")).into_iter().filter(|f| !f.starts_with("compression-")).collect();
    assert_eq!(
        predictors,
        [
            "aae-unet", "aae-unetpp", "ae-unet", "ae-unetpp", "baseline-unetpp", "gsi-unet", "gsi-unet-rollT2", "gsi-unetpp",
            "gsi-unetpp-rollT2"
        ]
        .map(|m| format!("{m}.ckpt"))
        .into_iter()
        .collect::<BTreeSet<_>>()
    );
    assert!(root.join("checkpoints/compression-ae.ckpt").is_file());
    assert!(root.join("checkpoints/compression-aae.ckpt").is_file());
    let svg = fs::read_to_string(root.join("reports/pcc_validation.svg")).unwrap();
    assert!(svg.contains("<svg"));

    let summary = fs::read(root.join("reports/summary.csv")).unwrap();
    let steps = fs::read(root.join("reports/gsi-unet-rollT2/steps.csv")).unwrap();
    let second = rockflow(root, &["reproduce-all"]);
    assert_eq!(code(&second), 0);
    assert_eq!(fs::read(root.join("reports/summary.csv")).unwrap(), summary);
    assert_eq!(fs::read(root.join("reports/gsi-unet-rollT2/steps.csv")).unwrap(), steps);

    let lines = manifest_lines(root);
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["run_id"], lines[1]["run_id"]);
    let recorded: BTreeSet<String> =
        lines.iter().flat_map(|l| l["outputs"].as_array().unwrap().iter().map(|o| o["path"].as_str().unwrap().to_string())).collect();
    let mut on_disk = files_under(root);
    on_disk.remove("manifest.jsonl");
    assert_eq!(on_disk, recorded);
    assert_eq!(lines[1]["checkpoints"].as_array().unwrap().len(), 11);
}

#[test]
fn missing_dataset_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let o = rockflow(dir.path(), &["reproduce-all"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no dataset"));
    assert!(!dir.path().join("checkpoints").exists());
    assert!(!dir.path().join("manifest.jsonl").exists());
}

#[test]
fn individual_commands_chain_together() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert_eq!(code(&rockflow(root, &["generate"])), 0);

    let rom = rockflow(root, &["train-predictor", "--pipeline", "rom", "--compression", "ae"]);
    assert_eq!(code(&rom), 1, "reduced-order training needs the compression checkpoint");
    assert!(String::from_utf8_lossy(&rom.stderr).contains("compression-ae.ckpt"));

    assert_eq!(code(&rockflow(root, &["train-compression", "--kind", "ae"])), 0);
    assert_eq!(code(&rockflow(root, &["train-predictor", "--pipeline", "rom", "--compression", "ae"])), 0);
    assert_eq!(code(&rockflow(root, &["train-predictor", "--variant", "unet++", "--rollout", "2"])), 0);
    assert!(root.join("checkpoints/gsi-unetpp-rollT2.ckpt").is_file());

    let infer = rockflow(root, &["infer", "--model", "gsi-unetpp", "--model", "ae-unet", "--handoff"]);
    assert_eq!(code(&infer), 0, "{}", String::from_utf8_lossy(&infer.stderr));
    let provenance: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("predictions/gsi-unetpp/provenance.json")).unwrap()).unwrap();
    let stop = provenance[0]["handoff_stop_step"].as_u64().unwrap();
    assert!((1..=5).contains(&stop));

    let eval = rockflow(root, &["evaluate"]);
    assert_eq!(code(&eval), 0);
    let table = String::from_utf8_lossy(&eval.stdout);
    for m in ["ae-unet", "gsi-unetpp", "gsi-unetpp-rollT2"] {
        assert!(table.contains(m), "{m} missing from\n{table}");
    }
    let profile = rockflow(root, &["profile"]);
    assert_eq!(code(&profile), 0);
    assert!(String::from_utf8_lossy(&profile.stdout).contains("baseline-unetpp"));

    let commands: Vec<String> = manifest_lines(root).iter().map(|l| l["command"].as_str().unwrap().to_string()).collect();
    assert_eq!(commands, ["generate", "train-compression", "train-predictor", "train-predictor", "infer", "evaluate", "profile"]);
}

#[test]
fn exit_codes_separate_configuration_from_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert_eq!(code(&rockflow(root, &["--set", "no_such_key=1", "generate"])), 1);
    assert_eq!(code(&rockflow(root, &["--set", "split.validation_ids=[\"a\", \"a\"]", "generate"])), 1);
    assert_eq!(code(&rockflow(root, &["--set", "predictor.plan.one_step.schedule=[[5, 1.0], [1, 0.5]]", "generate"])), 1);
    assert_eq!(code(&rockflow(root, &["evaluate"])), 1);
    assert_eq!(code(&rockflow(root, &["generate"])), 0);
    let unknown = rockflow(root, &["--set", "split.validation_ids=[\"sim_999\"]", "train-compression"]);
    assert_eq!(code(&unknown), 1);
    let failed = rockflow(root, &["--set", "predictor.plan.regime={ kind = \"patches\", size = 10, stride = 10 }", "train-predictor"]);
    assert_eq!(code(&failed), 2);
    let msg = String::from_utf8_lossy(&failed.stderr);
    assert!(msg.contains("stage `train-predictor`") && msg.contains("(run "), "{msg}");
}

#[test]
fn output_root_comes_from_flag_then_environment() {
    let dir = tempfile::tempdir().unwrap();
    let env_root = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_rockflow"))
        .arg("--config")
        .arg(tiny_config())
        .args(["--set", "generator.seeds=[5]", "generate"])
        .env("ROCKFLOW_OUTPUT", &env_root)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(env_root.join("dataset/manifest.json").is_file());

    let flag_root = dir.path().join("from-flag");
    let o = Command::new(env!("CARGO_BIN_EXE_rockflow"))
        .arg("--config")
        .arg(tiny_config())
        .arg("--out")
        .arg(&flag_root)
        .args(["--set", "generator.seeds=[5]", "generate"])
        .env("ROCKFLOW_OUTPUT", &env_root)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(flag_root.join("dataset/manifest.json").is_file());
}

#[test]
fn shipped_configs_parse() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in fs::read_dir(configs).unwrap().flatten() {
        let dir = tempfile::tempdir().unwrap();
        let o = Command::new(env!("CARGO_BIN_EXE_rockflow"))
            .arg("--config")
            .arg(entry.path())
            .arg("--out")
            .arg(dir.path())
            .arg("reproduce-all")
            .env("RUST_LOG", "warn")
            .output()
            .unwrap();
        // a parsed config gets as far as looking for the dataset
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains("no dataset"), "{}: {err}", entry.path().display());
    }
}
