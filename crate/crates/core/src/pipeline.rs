//! In-memory stage chain: peer training, candidate selection, outlier
//! filtering and two-stage fine-tuning, plus the ablation comparisons.

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::coteach::{extract_candidates, train_coteach, train_plain, Candidate, CoteachConfig, CoteachResult};
use crate::error::{Error, Result};
use crate::evalreport::MetricsReport;
use crate::fusion::{binary_confidences, fuse_all, grid_search, train_binaries, FusionConfig, FusionWeights};
use crate::lofdenoise::{denoise_all, DenoiseRow, LofParams};
use crate::miltrain::{evaluate_bags, finetune_two_stage, predict_bags, predictions_report, FinetuneOutcome, MilConfig, PatchBag, SlidePrediction};
use crate::numkernel::Mlp;
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::synthdata::{generate, multiclass_view, split, Bag, Dataset, GenConfig, LabeledBag, NUM_SUBTYPES};
use crate::textio::fmt17;

/// Configuration of one classification task run end to end.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskConfig {
    pub coteach: CoteachConfig,
    /// When false, a single model is trained on the same sample stream.
    pub use_coteach: bool,
    pub lof: LofParams,
    pub use_lof: bool,
    pub mil: MilConfig,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            coteach: CoteachConfig::default(),
            use_coteach: true,
            lof: LofParams::default(),
            use_lof: true,
            mil: MilConfig::default(),
        }
    }
}

impl TaskConfig {
    /// Copy whose stage seeds are all derived from `seed`.
    pub fn reseeded(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.coteach.seed = derive_seed(seed, "coteach");
        c.coteach.model_seeds = None;
        if let Some(r) = c.coteach.resample.as_mut() {
            r.seed = derive_seed(seed, "resample");
        }
        c.lof.seed = derive_seed(seed, "lofdenoise");
        c.mil.seed = derive_seed(seed, "miltrain");
        if let Some(r) = c.mil.resample.as_mut() {
            r.seed = derive_seed(seed, "miltrain.resample");
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub gen: GenConfig,
    pub split_ratio: f64,
    pub task: TaskConfig,
    pub fusion: FusionConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            gen: GenConfig::default(),
            split_ratio: 0.8,
            task: TaskConfig::default(),
            fusion: FusionConfig::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Copy with every stage seeded from one global seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c.gen.seed = seed;
        c.task = self.task.reseeded(seed);
        c
    }

    pub fn generate_and_split(&self) -> Result<(Dataset, Dataset)> {
        split(&generate(&self.gen)?, self.split_ratio, self.seed)
    }
}

/// Everything one task run produces.
#[derive(Clone, Debug)]
pub struct TaskRun<T> {
    /// Present when peer training was used.
    pub coteach: Option<CoteachResult<T>>,
    /// Model after the first stage (the chosen peer, or the single model).
    pub base: Mlp<T>,
    pub candidates: Vec<Vec<Candidate>>,
    pub denoised: Vec<Vec<Candidate>>,
    pub denoise_rows: Vec<DenoiseRow>,
    pub finetune: FinetuneOutcome<T>,
}

/// Groups kept candidates back into per-bag input-feature sets, one entry
/// per training bag (bags with nothing kept get an empty entry).
pub fn patch_bags(train: &[LabeledBag<'_>], kept: &[Vec<Candidate>]) -> Vec<PatchBag> {
    let keys: HashSet<(u32, usize)> = kept.iter().flatten().map(|c| (c.bag_id, c.index)).collect();
    train
        .iter()
        .map(|lb| PatchBag {
            bag_id: lb.bag.bag_id,
            label: lb.label,
            rows: lb
                .bag
                .instances
                .iter()
                .filter(|i| keys.contains(&(i.bag_id, i.index)))
                .map(|i| i.features.clone())
                .collect(),
        })
        .collect()
}

/// First stage only: the chosen peer (or the single model) and the peer result.
pub fn train_base<T: Scalar>(
    train: &[LabeledBag<'_>],
    val: &[LabeledBag<'_>],
    num_classes: usize,
    config: &TaskConfig,
) -> Result<(Mlp<T>, Option<CoteachResult<T>>)> {
    if config.use_coteach {
        let r = train_coteach(train, val, num_classes, &config.coteach)?;
        Ok((r.chosen_model().clone(), Some(r)))
    } else {
        let seed = config.coteach.seeds().0;
        Ok((train_plain(train, val, num_classes, &config.coteach, seed)?.model, None))
    }
}

pub fn run_task<T: Scalar>(
    train: &[LabeledBag<'_>],
    val: &[LabeledBag<'_>],
    num_classes: usize,
    config: &TaskConfig,
) -> Result<TaskRun<T>> {
    let (base, coteach) = train_base::<T>(train, val, num_classes, config)?;
    let candidates = extract_candidates(&base, train, config.coteach.conf_threshold)?;
    let (denoised, denoise_rows) = if config.use_lof {
        denoise_all(&candidates, &config.lof)?
    } else {
        (candidates.clone(), Vec::new())
    };
    let finetune = finetune_two_stage(&base, &patch_bags(train, &denoised), val, &config.mil)?;
    Ok(TaskRun {
        coteach,
        base,
        candidates,
        denoised,
        denoise_rows,
        finetune,
    })
}

/// One line of the ablation table.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub arm: String,
    pub report: MetricsReport,
}

pub const ABLATION_ARMS: [&str; 13] = [
    "resample=off",
    "resample=on",
    "coteach=off",
    "coteach=on",
    "lof=off",
    "lof=on",
    "alpha=0",
    "alpha=0.5",
    "alpha=1",
    "alpha=2",
    "fusion=direct",
    "fusion=uniform",
    "fusion=weighted",
];

/// Comparisons of every stage against its removal, measured on `test`
/// (model choice and fusion weights use `val`; pass the validation bags as
/// `test` to report validation metrics).
///
/// * resample: single model with and without per-epoch balancing;
/// * coteach: single model against the chosen peer (both balanced);
/// * lof: fine-tuning with alpha 0 on unfiltered against filtered candidates;
/// * alpha: fine-tuning on filtered candidates for each slide-loss weight;
/// * fusion: the direct 4-class pipeline against uniform and grid-searched
///   one-vs-rest fusion.
pub fn run_ablation<T: Scalar>(train: &[Bag], val: &[Bag], test: &[Bag], config: &PipelineConfig) -> Result<Vec<AblationRow>> {
    let tv = multiclass_view(train);
    let vv = multiclass_view(val);
    let ev = multiclass_view(test);
    if vv.is_empty() || ev.is_empty() {
        return Err(Error::Config("ablation needs validation and test bags".into()));
    }
    let m = NUM_SUBTYPES;
    let task = &config.task;
    let mut rows = Vec::new();
    let mut push = |arm: &str, report: MetricsReport| rows.push(AblationRow { arm: arm.to_string(), report });

    let unbalanced = TaskConfig {
        coteach: CoteachConfig { resample: None, ..task.coteach.clone() },
        use_coteach: false,
        ..task.clone()
    };
    let (plain_unbalanced, _) = train_base::<T>(&tv, &vv, m, &unbalanced)?;
    push("resample=off", evaluate_bags(&plain_unbalanced, &ev, "resample=off")?);
    let single = TaskConfig { use_coteach: false, ..task.clone() };
    let (plain, _) = train_base::<T>(&tv, &vv, m, &single)?;
    push("resample=on", evaluate_bags(&plain, &ev, "resample=on")?);
    push("coteach=off", evaluate_bags(&plain, &ev, "coteach=off")?);
    let peered = TaskConfig { use_coteach: true, ..task.clone() };
    let (base, _) = train_base::<T>(&tv, &vv, m, &peered)?;
    push("coteach=on", evaluate_bags(&base, &ev, "coteach=on")?);

    let candidates = extract_candidates(&base, &tv, task.coteach.conf_threshold)?;
    let (denoised, _) = denoise_all(&candidates, &task.lof)?;
    let finetuned = |cands: &[Vec<Candidate>], alpha: f64| -> Result<Mlp<T>> {
        let mil = MilConfig { alpha, ..task.mil.clone() };
        Ok(finetune_two_stage(&base, &patch_bags(&tv, cands), &[], &mil)?.model)
    };
    push("lof=off", evaluate_bags(&finetuned(&candidates, 0.0)?, &ev, "lof=off")?);
    let lof_alpha0 = finetuned(&denoised, 0.0)?;
    push("lof=on", evaluate_bags(&lof_alpha0, &ev, "lof=on")?);
    push("alpha=0", evaluate_bags(&lof_alpha0, &ev, "alpha=0")?);
    for (arm, alpha) in [("alpha=0.5", 0.5), ("alpha=1", 1.0), ("alpha=2", 2.0)] {
        push(arm, evaluate_bags(&finetuned(&denoised, alpha)?, &ev, arm)?);
    }

    let direct = run_task::<T>(&tv, &vv, m, task)?;
    push("fusion=direct", evaluate_bags(&direct.finetune.model, &ev, "fusion=direct")?);
    let binaries = train_binaries::<T>(train, val, task, config.fusion.binary_alpha)?;
    let val_confs = binary_confidences(&binaries, &vv)?;
    let test_confs = binary_confidences(&binaries, &ev)?;
    let uniform = fuse_all(&test_confs, &ev, &FusionWeights::uniform());
    push("fusion=uniform", predictions_report("fusion=uniform", &uniform, m)?);
    let truths: Vec<usize> = vv.iter().map(|b| b.label).collect();
    let grid = grid_search(&val_confs, &truths, &config.fusion)?;
    let weighted = fuse_all(&test_confs, &ev, &grid.weights);
    push("fusion=weighted", predictions_report("fusion=weighted", &weighted, m)?);
    Ok(rows)
}

pub fn ablation_to_string(rows: &[AblationRow]) -> String {
    let mut out = String::from("arm,accuracy,precision_macro,recall_macro,f1_macro\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.arm,
            fmt17(r.report.accuracy),
            fmt17(r.report.precision_macro),
            fmt17(r.report.recall_macro),
            fmt17(r.report.f1_macro)
        );
    }
    out
}

/// Predictions of `model` on `bags` under their 4-class labels.
pub fn predict_multiclass<T: Scalar>(model: &Mlp<T>, bags: &[Bag]) -> Result<Vec<SlidePrediction>> {
    predict_bags(model, &multiclass_view(bags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{Instance, Resolution, Subtype};

    fn tiny_config() -> PipelineConfig {
        let mut c = PipelineConfig::default();
        c.gen.bags_per_class = [6, 6, 6, 6];
        c.gen.instances_per_bag = (8, 12);
        c.task.coteach.epochs = 3;
        c.task.mil.epochs = 2;
        c.task.lof.k = 5;
        c.fusion.grid_step = 0.5;
        c.with_seed(3)
    }

    #[test]
    fn patch_bags_keep_bag_order_and_empty_entries() {
        let bag = |id: u32, label| Bag {
            bag_id: id,
            label,
            instances: (0..3)
                .map(|i| Instance { bag_id: id, index: i, features: vec![i as f64], is_noise: false, resolution: Resolution::X10 })
                .collect(),
        };
        let bags = vec![bag(0, Subtype::LuminalA), bag(1, Subtype::Her2)];
        let view = multiclass_view(&bags);
        let kept = vec![
            vec![Candidate { bag_id: 0, index: 2, label: 0, confidence: 0.9, feature: vec![] }],
            vec![],
            vec![],
            vec![],
        ];
        let p = patch_bags(&view, &kept);
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].rows, vec![vec![2.0]]);
        assert!(p[1].rows.is_empty());
        assert_eq!(p[1].label, 2);
    }

    #[test]
    fn run_task_is_deterministic() {
        let cfg = tiny_config();
        let (train, val) = cfg.generate_and_split().unwrap();
        let tv = multiclass_view(&train.bags);
        let vv = multiclass_view(&val.bags);
        let a = run_task::<f64>(&tv, &vv, 4, &cfg.task).unwrap();
        let b = run_task::<f64>(&tv, &vv, 4, &cfg.task).unwrap();
        assert_eq!(a.finetune.model, b.finetune.model);
        assert_eq!(a.denoise_rows, b.denoise_rows);
        assert_eq!(a.denoise_rows.len(), 4);
    }

    #[test]
    fn ablation_has_every_arm() {
        let cfg = tiny_config();
        let (train, val) = cfg.generate_and_split().unwrap();
        let rows = run_ablation::<f64>(&train.bags, &val.bags, &val.bags, &cfg).unwrap();
        let arms: Vec<&str> = rows.iter().map(|r| r.arm.as_str()).collect();
        assert_eq!(arms, ABLATION_ARMS);
        // lof=on and alpha=0 are the same run.
        assert_eq!(rows[5].report.confusion, rows[6].report.confusion);
        let text = ablation_to_string(&rows);
        assert_eq!(text.lines().count(), 14);
    }
}
