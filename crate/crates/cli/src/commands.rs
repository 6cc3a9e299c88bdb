//! One function per subcommand. Each reads its inputs from the output
//! directory, writes its artifacts there and records them in the manifest.

use std::path::PathBuf;

use dpmil_core::coteach::{extract_candidates, history_to_string, read_candidates, train_coteach, train_plain, write_candidates, Chosen};
use dpmil_core::evalreport::{write_report, MetricsReport};
use dpmil_core::fusion::{binary_confidences, fuse_all, grid_search, train_binaries, write_weights};
use dpmil_core::lofdenoise::{denoise_all, write_report as write_denoise_report};
use dpmil_core::miltrain::{finetune_two_stage, predict_bags, predictions_report, read_predictions, write_predictions};
use dpmil_core::numkernel::{read_checkpoint, write_checkpoint};
use dpmil_core::pipeline::{ablation_to_string, patch_bags, run_ablation, PipelineConfig};
use dpmil_core::synthdata::{generate, multiclass_view, read_dataset, split, write_dataset, Dataset, NUM_SUBTYPES};
use dpmil_core::textio::{read_text, write_text};
use dpmil_core::MlpModel;

use crate::error::CliError;
use crate::manifest;

pub const DATASET: &str = "dataset.txt";
pub const TRAIN: &str = "train.txt";
pub const VAL: &str = "val.txt";
pub const MODEL_A: &str = "coteach-a.mlp";
pub const MODEL_B: &str = "coteach-b.mlp";
pub const CHOSEN: &str = "coteach.chosen";
pub const HISTORY: &str = "coteach-history.csv";
pub const CANDIDATES: &str = "candidates.txt";
pub const DENOISED: &str = "candidates-denoised.txt";
pub const DENOISE_REPORT: &str = "denoise-report.csv";
pub const FINETUNED: &str = "finetuned.mlp";
pub const PREDICTIONS_VAL: &str = "predictions-val.csv";
pub const FUSION: &str = "fusion.txt";
pub const PREDICTIONS_FUSED: &str = "predictions-fused.csv";
pub const REPORT: &str = "report.csv";
pub const ABLATION: &str = "ablation.csv";

pub fn binary_model_file(code: &str) -> String {
    format!("binary-{}.mlp", code.to_lowercase())
}

/// Shared state of one invocation: the seeded configuration and the output directory.
pub struct Ctx {
    pub config: PipelineConfig,
    pub out: PathBuf,
}

impl Ctx {
    fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    /// Path of an artifact that must already exist.
    fn input(&self, file: &str, producer: &'static str) -> Result<PathBuf, CliError> {
        let p = self.path(file);
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::MissingArtifact { path: p, producer })
        }
    }

    fn dataset(&self, file: &str, producer: &'static str) -> Result<Dataset, CliError> {
        Ok(read_dataset(&self.input(file, producer)?)?)
    }

    fn record(&self, command: &str, files: &[String]) -> Result<(), CliError> {
        manifest::record(&self.out, command, files)
    }
}

pub fn gen(ctx: &Ctx) -> Result<(), CliError> {
    let d = generate(&ctx.config.gen)?;
    write_dataset(&d, &ctx.path(DATASET))?;
    ctx.record("gen", &[DATASET.into()])
}

pub fn split_cmd(ctx: &Ctx) -> Result<(), CliError> {
    let d = ctx.dataset(DATASET, "gen")?;
    let (train, val) = split(&d, ctx.config.split_ratio, ctx.config.seed)?;
    write_dataset(&train, &ctx.path(TRAIN))?;
    write_dataset(&val, &ctx.path(VAL))?;
    ctx.record("split", &[TRAIN.into(), VAL.into()])
}

/// First stage plus candidate extraction. Without peer training the single
/// model is stored as model A.
pub fn coteach(ctx: &Ctx) -> Result<(), CliError> {
    let train = ctx.dataset(TRAIN, "split")?;
    let val = ctx.dataset(VAL, "split")?;
    let (tv, vv) = (multiclass_view(&train.bags), multiclass_view(&val.bags));
    let task = &ctx.config.task;
    let mut files = vec![MODEL_A.to_string()];
    let base: MlpModel = if task.use_coteach {
        let r = train_coteach::<f64>(&tv, &vv, NUM_SUBTYPES, &task.coteach)?;
        write_checkpoint(&r.model_a, &ctx.path(MODEL_A))?;
        write_checkpoint(&r.model_b, &ctx.path(MODEL_B))?;
        write_text(&ctx.path(CHOSEN), &format!("{}\n", r.chosen.tag()))?;
        write_text(&ctx.path(HISTORY), &history_to_string(&r.history))?;
        files.extend([MODEL_B.into(), CHOSEN.into(), HISTORY.into()]);
        r.chosen_model().clone()
    } else {
        let seed = task.coteach.seeds().0;
        let r = train_plain::<f64>(&tv, &vv, NUM_SUBTYPES, &task.coteach, seed)?;
        write_checkpoint(&r.model, &ctx.path(MODEL_A))?;
        write_text(&ctx.path(CHOSEN), &format!("{}\n", Chosen::A.tag()))?;
        files.push(CHOSEN.into());
        r.model
    };
    let cands = extract_candidates(&base, &tv, task.coteach.conf_threshold)?;
    write_candidates(&cands, &ctx.path(CANDIDATES))?;
    files.push(CANDIDATES.into());
    ctx.record("coteach", &files)
}

/// Per-class outlier filtering; when disabled the candidates pass through.
pub fn denoise(ctx: &Ctx) -> Result<(), CliError> {
    let cands = read_candidates(&ctx.input(CANDIDATES, "coteach")?, NUM_SUBTYPES)?;
    let (kept, rows) = if ctx.config.task.use_lof {
        denoise_all(&cands, &ctx.config.task.lof)?
    } else {
        (cands, Vec::new())
    };
    write_candidates(&kept, &ctx.path(DENOISED))?;
    write_denoise_report(&rows, &ctx.path(DENOISE_REPORT))?;
    ctx.record("denoise", &[DENOISED.into(), DENOISE_REPORT.into()])
}

fn chosen_model(ctx: &Ctx) -> Result<MlpModel, CliError> {
    let path = ctx.input(CHOSEN, "coteach")?;
    let tag = read_text(&path)?;
    let file = match Chosen::from_tag(tag.trim()) {
        Some(Chosen::A) => MODEL_A,
        Some(Chosen::B) => MODEL_B,
        None => {
            return Err(CliError::Core(dpmil_core::Error::Parse {
                path,
                line: 1,
                msg: format!("expected `a` or `b`, found {:?}", tag.trim()),
            }))
        }
    };
    Ok(read_checkpoint(&ctx.input(file, "coteach")?)?)
}

pub fn finetune(ctx: &Ctx) -> Result<(), CliError> {
    let base = chosen_model(ctx)?;
    let kept = read_candidates(&ctx.input(DENOISED, "denoise")?, NUM_SUBTYPES)?;
    let train = ctx.dataset(TRAIN, "split")?;
    let val = ctx.dataset(VAL, "split")?;
    let (tv, vv) = (multiclass_view(&train.bags), multiclass_view(&val.bags));
    let out = finetune_two_stage(&base, &patch_bags(&tv, &kept), &vv, &ctx.config.task.mil)?;
    write_checkpoint(&out.model, &ctx.path(FINETUNED))?;
    write_predictions(&predict_bags(&out.model, &vv)?, &ctx.path(PREDICTIONS_VAL))?;
    ctx.record("finetune", &[FINETUNED.into(), PREDICTIONS_VAL.into()])
}

/// Trains the four one-vs-rest pipelines and grid-searches fusion weights on validation.
pub fn fuse(ctx: &Ctx) -> Result<(), CliError> {
    let train = ctx.dataset(TRAIN, "split")?;
    let val = ctx.dataset(VAL, "split")?;
    let cfg = &ctx.config;
    let binaries = train_binaries::<f64>(&train.bags, &val.bags, &cfg.task, cfg.fusion.binary_alpha)?;
    let mut files = Vec::new();
    for b in &binaries {
        let f = binary_model_file(b.target.code());
        write_checkpoint(&b.model, &ctx.path(&f))?;
        files.push(f);
    }
    let vv = multiclass_view(&val.bags);
    let confs = binary_confidences(&binaries, &vv)?;
    let truths: Vec<usize> = vv.iter().map(|b| b.label).collect();
    let grid = grid_search(&confs, &truths, &cfg.fusion)?;
    write_weights(&grid.weights, &ctx.path(FUSION))?;
    write_predictions(&fuse_all(&confs, &vv, &grid.weights), &ctx.path(PREDICTIONS_FUSED))?;
    files.extend([FUSION.into(), PREDICTIONS_FUSED.into()]);
    ctx.record("fuse", &files)
}

/// Reports for the given prediction files, or for the fine-tuned and fused
/// validation predictions found in the output directory.
pub fn eval(ctx: &Ctx, predictions: &[PathBuf]) -> Result<(), CliError> {
    let mut inputs: Vec<(String, PathBuf)> = Vec::new();
    if predictions.is_empty() {
        for (stage, file) in [("finetuned", PREDICTIONS_VAL), ("fused", PREDICTIONS_FUSED)] {
            let p = ctx.path(file);
            if p.is_file() {
                inputs.push((stage.into(), p));
            }
        }
        if inputs.is_empty() {
            return Err(CliError::MissingArtifact {
                path: ctx.path(PREDICTIONS_VAL),
                producer: "finetune",
            });
        }
    } else {
        for p in predictions {
            if !p.is_file() {
                return Err(CliError::Usage(format!("no predictions file at {}", p.display())));
            }
            let stage = p.file_stem().map_or("predictions".into(), |s| s.to_string_lossy().into_owned());
            inputs.push((stage, p.clone()));
        }
    }
    let reports = inputs
        .iter()
        .map(|(stage, p)| Ok(predictions_report(stage, &read_predictions(p)?, NUM_SUBTYPES)?))
        .collect::<Result<Vec<MetricsReport>, CliError>>()?;
    write_report(&reports, &ctx.path(REPORT))?;
    ctx.record("eval", &[REPORT.into()])
}

/// Every comparison arm evaluated on the validation bags.
pub fn ablate(ctx: &Ctx) -> Result<(), CliError> {
    let train = ctx.dataset(TRAIN, "split")?;
    let val = ctx.dataset(VAL, "split")?;
    let rows = run_ablation::<f64>(&train.bags, &val.bags, &val.bags, &ctx.config)?;
    write_text(&ctx.path(ABLATION), &ablation_to_string(&rows))?;
    ctx.record("pipeline", &[ABLATION.into()])
}

pub fn pipeline(ctx: &Ctx, with_ablation: bool) -> Result<(), CliError> {
    gen(ctx)?;
    split_cmd(ctx)?;
    coteach(ctx)?;
    denoise(ctx)?;
    finetune(ctx)?;
    fuse(ctx)?;
    eval(ctx, &[])?;
    if with_ablation {
        ablate(ctx)?;
    }
    Ok(())
}

