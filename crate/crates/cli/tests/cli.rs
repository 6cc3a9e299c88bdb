use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
gen.bags_per_class = 6, 6, 6, 6
gen.instances_min = 8
gen.instances_max = 12
coteach.epochs = 3
mil.epochs = 2
lof.k = 5
fusion.grid_step = 0.5
";

fn dpmil(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpmil"))
        .args(args)
        .env("DPMIL_THREADS", "2")
        .output()
        .unwrap()
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("run.ini");
    fs::write(&p, SMALL).unwrap();
    p.to_string_lossy().into_owned()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.path().is_file())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = dpmil(&["pipeline", "--config", &cfg, "--seed", "5", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta, tb);
    let names: Vec<&str> = ta.iter().map(|(n, _)| n.as_str()).collect();
    for f in ["dataset.txt", "candidates-denoised.txt", "finetuned.mlp", "binary-bl.mlp", "fusion.txt", "report.csv", "manifest.csv"] {
        assert!(names.contains(&f), "missing {f}: {names:?}");
    }
}

#[test]
fn manifest_lists_every_file_with_its_digest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("o");
    assert!(dpmil(&["pipeline", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let rows = dpmil_cli::manifest::read_manifest(&out).unwrap();
    let files: Vec<String> = tree(&out).into_iter().map(|(n, _)| n).filter(|n| n != "manifest.csv").collect();
    assert_eq!(rows.len(), files.len());
    for r in rows {
        let bytes = fs::read(out.join(&r.file)).unwrap();
        assert_eq!(r.sha256, dpmil_cli::manifest::sha256_hex(&bytes), "{}", r.file);
    }
}

#[test]
fn stages_run_one_by_one_match_the_chained_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let (chained, staged) = (tmp.path().join("c"), tmp.path().join("s"));
    assert!(dpmil(&["pipeline", "--config", &cfg, "--seed", "2", "--out", chained.to_str().unwrap()]).status.success());
    for cmd in ["gen", "split", "coteach", "denoise", "finetune", "fuse", "eval"] {
        let o = dpmil(&[cmd, "--config", &cfg, "--seed", "2", "--out", staged.to_str().unwrap()]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    assert_eq!(tree(&chained), tree(&staged));

    // re-running a stage on unchanged inputs changes nothing
    assert!(dpmil(&["denoise", "--config", &cfg, "--seed", "2", "--out", staged.to_str().unwrap()]).status.success());
    assert_eq!(tree(&chained), tree(&staged));
}

#[test]
fn ablation_table_has_one_row_per_arm() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("o");
    let o = dpmil(&["pipeline", "--ablate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let arms: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(arms, dpmil_core::pipeline::ABLATION_ARMS);
}

#[test]
fn eval_of_a_perfect_prediction_file() {
    let tmp = tempfile::tempdir().unwrap();
    let preds: Vec<_> = (0..8)
        .map(|i| {
            let mut confidences = vec![0.0; 4];
            confidences[i % 4] = 1.0;
            dpmil_core::miltrain::SlidePrediction {
                bag_id: i as u32,
                truth: i % 4,
                confidences,
                predicted: i % 4,
            }
        })
        .collect();
    let file = tmp.path().join("oracle.csv");
    dpmil_core::miltrain::write_predictions(&preds, &file).unwrap();
    let out = tmp.path().join("o");
    let o = dpmil(&["eval", "--predictions", file.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let reports = dpmil_core::evalreport::read_report(&out.join("report.csv")).unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0].stage, "oracle");
    assert_eq!(reports[0].accuracy, 1.0);
    assert_eq!(reports[0].f1_macro, 1.0);
}

#[test]
fn missing_artifact_names_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dpmil(&["finetune", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("coteach.chosen") && err.contains("dpmil coteach"), "{err}");
}

#[test]
fn config_errors_carry_line_numbers() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("bad.ini");
    fs::write(&p, "run.seed = 1\n# comment\nlof.kk = 3\n").unwrap();
    let o = dpmil(&["gen", "--config", p.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.ini:3"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(dpmil(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(dpmil(&["gen", "--seed", "minus-one"]).status.code(), Some(1));
    assert_eq!(dpmil(&["--help"]).status.code(), Some(0));
    let o = Command::new(env!("CARGO_BIN_EXE_dpmil"))
        .args(["gen", "--out", "/nonexistent-never"])
        .env("DPMIL_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn corrupt_input_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("dataset.txt"), "bags v1 dim=2\n0,0,0,0,10X,1.0\n").unwrap();
    let o = dpmil(&["split", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dataset.txt:2"), "{}", stderr(&o));
}

#[test]
fn invalid_values_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("run.ini");
    fs::write(&p, "gen.noise_fraction = 1.5\n").unwrap();
    let o = dpmil(&["gen", "--config", p.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}
