//! One-vs-rest binary pipelines and their weighted fusion into a 4-class
//! prediction.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evalreport::{compute_metrics, macro_f1};
use crate::miltrain::{predict_slide, SlidePrediction};
use crate::numkernel::{argmax, Mlp};
use crate::pipeline::{run_task, TaskConfig, TaskRun};
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::synthdata::{Bag, LabeledBag, Subtype, NUM_SUBTYPES};
use crate::textio::{expect_header, numbered_lines, parse_f64, parse_usize, read_text, write_text};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionWeights(pub [f64; NUM_SUBTYPES]);

impl FusionWeights {
    pub fn uniform() -> Self {
        Self([1.0; NUM_SUBTYPES])
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().all(|&w| w > 0.0 && w.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("fusion weights must be positive, got {:?}", self.0)))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FusionObjective {
    #[default]
    MacroF1,
    Accuracy,
}

impl FusionObjective {
    pub fn name(self) -> &'static str {
        match self {
            FusionObjective::MacroF1 => "macro_f1",
            FusionObjective::Accuracy => "accuracy",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "macro_f1" => Some(FusionObjective::MacroF1),
            "accuracy" => Some(FusionObjective::Accuracy),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionConfig {
    pub grid_step: f64,
    pub objective: FusionObjective,
    /// Slide-loss weight used by the binary pipelines.
    pub binary_alpha: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            grid_step: 0.1,
            objective: FusionObjective::MacroF1,
            binary_alpha: 0.5,
        }
    }
}

/// `argmax_c w_c · conf_c`, lowest ordinal on ties.
pub fn fuse(confidences: &[f64; NUM_SUBTYPES], weights: &FusionWeights) -> Subtype {
    let scores: Vec<f64> = confidences.iter().zip(&weights.0).map(|(c, w)| c * w).collect();
    Subtype::ALL[argmax(&scores)]
}

/// Fused predictions for `bags`; the reported confidences are the raw
/// binary target confidences.
pub fn fuse_all(confs: &[[f64; NUM_SUBTYPES]], bags: &[LabeledBag<'_>], weights: &FusionWeights) -> Vec<SlidePrediction> {
    confs
        .iter()
        .zip(bags)
        .map(|(c, b)| SlidePrediction {
            bag_id: b.bag.bag_id,
            truth: b.label,
            confidences: c.to_vec(),
            predicted: fuse(c, weights).ordinal(),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridResult {
    pub weights: FusionWeights,
    pub objective_value: f64,
    pub evaluated: usize,
}

/// Points `i / n` for `i = 1..=n`, where `n = 1 / step`.
pub fn grid_points(step: f64) -> Result<Vec<f64>> {
    let n = (1.0 / step).round();
    if !(step > 0.0) || n < 2.0 || ((n * step) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "grid_step {step} must divide (0, 1] into at least 2 points"
        )));
    }
    let n = n as usize;
    Ok((1..=n).map(|i| i as f64 / n as f64).collect())
}

fn objective(pred: &[usize], truth: &[usize], obj: FusionObjective) -> Result<f64> {
    match obj {
        FusionObjective::MacroF1 => macro_f1(pred, truth, NUM_SUBTYPES),
        FusionObjective::Accuracy => Ok(compute_metrics("grid", pred, truth, NUM_SUBTYPES)?.accuracy),
    }
}

/// Exhaustive search over all weight 4-tuples on the grid. Tuples are
/// visited in lexicographic order and only a strictly better value replaces
/// the incumbent.
pub fn grid_search(confs: &[[f64; NUM_SUBTYPES]], truths: &[usize], config: &FusionConfig) -> Result<GridResult> {
    if confs.is_empty() {
        return Err(Error::Config("grid search needs at least one validation bag".into()));
    }
    if confs.len() != truths.len() {
        return Err(Error::Shape(format!("{} confidences but {} truths", confs.len(), truths.len())));
    }
    let pts = grid_points(config.grid_step)?;
    let g = pts.len();
    let total = g.pow(NUM_SUBTYPES as u32);
    // Each w0 slice is searched independently; slices are reduced in order.
    let best_per_slice: Vec<(f64, [f64; NUM_SUBTYPES])> = (0..g)
        .into_par_iter()
        .map(|i0| -> Result<(f64, [f64; NUM_SUBTYPES])> {
            let mut best = (f64::NEG_INFINITY, [0.0; NUM_SUBTYPES]);
            let mut pred = vec![0; confs.len()];
            for rest in 0..g * g * g {
                let w = [pts[i0], pts[rest / (g * g)], pts[(rest / g) % g], pts[rest % g]];
                let fw = FusionWeights(w);
                for (p, c) in pred.iter_mut().zip(confs) {
                    *p = fuse(c, &fw).ordinal();
                }
                let v = objective(&pred, truths, config.objective)?;
                if v > best.0 {
                    best = (v, w);
                }
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    let mut best = best_per_slice[0];
    for s in &best_per_slice[1..] {
        if s.0 > best.0 {
            best = *s;
        }
    }
    Ok(GridResult {
        weights: FusionWeights(best.1),
        objective_value: best.0,
        evaluated: total,
    })
}

/// A target-vs-rest model: output 1 is the target subtype.
#[derive(Clone, Debug)]
pub struct BinaryModel<T> {
    pub target: Subtype,
    pub model: Mlp<T>,
}

pub fn binary_view(bags: &[Bag], target: Subtype) -> Vec<LabeledBag<'_>> {
    bags.iter()
        .map(|bag| LabeledBag {
            bag,
            label: usize::from(bag.label == target),
        })
        .collect()
}

/// Task configuration for one binary pipeline: its own seed substream and
/// the binary slide-loss weight.
pub fn binary_task(task: &TaskConfig, target: Subtype, alpha: f64) -> TaskConfig {
    let mut t = task.reseeded(derive_seed(task.coteach.seed, &format!("binary.{}", target.code())));
    t.mil.alpha = alpha;
    t
}

/// Relabels to target/rest and runs the full task pipeline on two classes.
pub fn train_binary<T: Scalar>(
    target: Subtype,
    train: &[Bag],
    val: &[Bag],
    task: &TaskConfig,
) -> Result<(BinaryModel<T>, TaskRun<T>)> {
    let tv = binary_view(train, target);
    let positives = tv.iter().filter(|b| b.label == 1).count();
    if positives == 0 {
        return Err(Error::Config(format!("no training bags of target subtype {target}")));
    }
    if positives == tv.len() {
        return Err(Error::Config(format!("no training bags outside target subtype {target}")));
    }
    let vv = binary_view(val, target);
    let run = run_task::<T>(&tv, &vv, 2, task)?;
    Ok((
        BinaryModel {
            target,
            model: run.finetune.model.clone(),
        },
        run,
    ))
}

/// The four one-vs-rest models, trained in parallel, each with slide-loss weight `alpha`.
pub fn train_binaries<T: Scalar>(train: &[Bag], val: &[Bag], task: &TaskConfig, alpha: f64) -> Result<Vec<BinaryModel<T>>> {
    Subtype::ALL
        .par_iter()
        .map(|&s| Ok(train_binary::<T>(s, train, val, &binary_task(task, s, alpha))?.0))
        .collect()
}

/// Per bag, the slide-level target confidence of each binary model, by subtype ordinal.
pub fn binary_confidences<T: Scalar>(models: &[BinaryModel<T>], bags: &[LabeledBag<'_>]) -> Result<Vec<[f64; NUM_SUBTYPES]>> {
    let mut by_target: [Option<&Mlp<T>>; NUM_SUBTYPES] = [None; NUM_SUBTYPES];
    for m in models {
        if m.model.num_classes() != 2 {
            return Err(Error::Shape(format!("binary model for {} has {} outputs", m.target, m.model.num_classes())));
        }
        by_target[m.target.ordinal()] = Some(&m.model);
    }
    bags.iter()
        .map(|b| {
            let mut c = [0.0; NUM_SUBTYPES];
            for (slot, model) in c.iter_mut().zip(&by_target) {
                let model = model.ok_or_else(|| Error::Config("missing a binary model".into()))?;
                *slot = predict_slide(model, b)?.confidences[1];
            }
            Ok(c)
        })
        .collect()
}

pub const FUSION_HEADER: &str = "fusion v1";

pub fn weights_to_string(w: &FusionWeights) -> String {
    let mut out = format!("{FUSION_HEADER}\n");
    for (c, v) in w.0.iter().enumerate() {
        let _ = writeln!(out, "{c} {v}");
    }
    out
}

pub fn weights_from_str(path: &Path, text: &str) -> Result<FusionWeights> {
    let mut lines = numbered_lines(text);
    expect_header(path, &mut lines, FUSION_HEADER)?;
    let mut w = [f64::NAN; NUM_SUBTYPES];
    for (n, line) in lines {
        let mut parts = line.split_whitespace();
        let (Some(c), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::parse(path, n, "expected \"class_ordinal weight\""));
        };
        let c = parse_usize(path, n, c)?;
        if c >= NUM_SUBTYPES || !w[c].is_nan() {
            return Err(Error::parse(path, n, format!("bad or repeated class ordinal {c}")));
        }
        w[c] = parse_f64(path, n, v)?;
    }
    if w.iter().any(|v| v.is_nan()) {
        return Err(Error::parse(path, 1, "fusion file must list all four classes"));
    }
    let w = FusionWeights(w);
    w.validate()?;
    Ok(w)
}

pub fn write_weights(w: &FusionWeights, path: &Path) -> Result<()> {
    write_text(path, &weights_to_string(w))
}

pub fn read_weights(path: &Path) -> Result<FusionWeights> {
    weights_from_str(path, &read_text(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{Instance, Resolution};
    use proptest::prelude::*;

    #[test]
    fn fuse_examples() {
        assert_eq!(fuse(&[0.5, 0.5, 0.5, 0.9], &FusionWeights::uniform()), Subtype::BasalLike);
        let w = FusionWeights([0.6, 0.9, 0.5, 0.7]);
        assert_eq!(fuse(&[0.8, 0.6, 0.9, 0.7], &w), Subtype::LuminalB);
        assert_eq!(fuse(&[0.4; 4], &FusionWeights::uniform()), Subtype::LuminalA);
    }

    #[test]
    fn weighted_scores_by_hand() {
        // 0.8*0.6, 0.6*0.9, 0.9*0.5, 0.7*0.7
        let s: Vec<f64> = [0.8, 0.6, 0.9, 0.7].iter().zip([0.6, 0.9, 0.5, 0.7]).map(|(c, w)| c * w).collect();
        let expect = [0.48, 0.54, 0.45, 0.49];
        for (a, b) in s.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn grid_counts_and_bounds() {
        assert_eq!(grid_points(0.1).unwrap().len(), 10);
        assert_eq!(grid_points(0.5).unwrap(), vec![0.5, 1.0]);
        assert!(grid_points(1.0).is_err());
        assert!(grid_points(0.3).is_err());
        let confs = [[0.9, 0.2, 0.3, 0.1], [0.6, 0.7, 0.1, 0.2]];
        let r = grid_search(&confs, &[0, 1], &FusionConfig::default()).unwrap();
        assert_eq!(r.evaluated, 10_000);
        // Both bags right; the two absent classes contribute F1 = 0.
        assert_eq!(r.objective_value, 0.5);
        assert!(grid_search(&[], &[], &FusionConfig::default()).is_err());
    }

    #[test]
    fn single_bag_takes_first_lexicographic_optimum() {
        let confs = [[0.5, 0.6, 0.1, 0.1]];
        let r = grid_search(&confs, &[0], &FusionConfig::default()).unwrap();
        assert_eq!(r.objective_value, 0.25);
        // Smallest w0 that still beats class 1 at w1 = 0.1: 0.5·w0 > 0.06.
        assert_eq!(r.weights.0, [0.2, 0.1, 0.1, 0.1]);
    }

    #[test]
    fn weights_round_trip() {
        let w = FusionWeights([0.6, 0.9, 0.5, 0.7]);
        let text = weights_to_string(&w);
        assert_eq!(text, "fusion v1\n0 0.6\n1 0.9\n2 0.5\n3 0.7\n");
        assert_eq!(weights_from_str(Path::new("f"), &text).unwrap(), w);
        assert!(weights_from_str(Path::new("f"), "fusion v1\n0 0.6\n1 0.9\n2 0.5\n").is_err());
        assert!(weights_from_str(Path::new("f"), "fusion v1\n0 0.6\n1 0.9\n2 0.5\n3 0\n").is_err());
    }

    #[test]
    fn binary_requires_both_sides() {
        let bags: Vec<Bag> = (0..3)
            .map(|id| Bag {
                bag_id: id,
                label: Subtype::Her2,
                instances: vec![Instance { bag_id: id, index: 0, features: vec![0.0; 5], is_noise: false, resolution: Resolution::X10 }],
            })
            .collect();
        let task = TaskConfig::default();
        assert!(matches!(train_binary::<f64>(Subtype::LuminalA, &bags, &[], &task), Err(Error::Config(_))));
        assert!(matches!(train_binary::<f64>(Subtype::Her2, &bags, &[], &task), Err(Error::Config(_))));
    }

    fn brute_force(confs: &[[f64; 4]], truths: &[usize], pts: &[f64]) -> (f64, [f64; 4]) {
        let mut best = (f64::NEG_INFINITY, [0.0; 4]);
        for &a in pts {
            for &b in pts {
                for &c in pts {
                    for &d in pts {
                        let w = FusionWeights([a, b, c, d]);
                        let pred: Vec<usize> = confs.iter().map(|x| fuse(x, &w).ordinal()).collect();
                        let v = macro_f1(&pred, truths, 4).unwrap();
                        if v > best.0 {
                            best = (v, w.0);
                        }
                    }
                }
            }
        }
        best
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn fuse_scale_invariant(c in proptest::array::uniform4(0.0f64..1.0), w in proptest::array::uniform4(0.01f64..1.0), k in 0.1f64..10.0) {
            let scaled = FusionWeights(w.map(|v| v * k));
            prop_assert_eq!(fuse(&c, &FusionWeights(w)), fuse(&c, &scaled));
        }

        #[test]
        fn grid_matches_brute_force_and_beats_uniform(
            confs in proptest::collection::vec(proptest::array::uniform4(0.0f64..1.0), 1..12),
            seed in 0usize..4,
        ) {
            let truths: Vec<usize> = (0..confs.len()).map(|i| (i + seed) % 4).collect();
            let cfg = FusionConfig { grid_step: 0.25, ..FusionConfig::default() };
            let r = grid_search(&confs, &truths, &cfg).unwrap();
            let (v, w) = brute_force(&confs, &truths, &grid_points(0.25).unwrap());
            prop_assert_eq!(r.objective_value, v);
            prop_assert_eq!(r.weights.0, w);
            let uniform: Vec<usize> = confs.iter().map(|x| fuse(x, &FusionWeights::uniform()).ordinal()).collect();
            prop_assert!(r.objective_value >= macro_f1(&uniform, &truths, 4).unwrap());
        }
    }
}
