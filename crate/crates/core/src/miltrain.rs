//! Two-stage multi-instance fine-tuning and slide-level prediction.
//!
//! A slide's confidence vector is the mean of its patches' probability rows:
//! `P_c = (1/N_p) Σ_i p_{i,c}`. The slide loss for one slide is `−ln P_label`,
//! and a batch of slides contributes `α · mean(−ln P_label)`.
//!
//! Fine-tuning alternates two stages inside every epoch:
//! 1. patch-level cross-entropy SGD over all discriminative patches;
//! 2. one update per bag (bags shuffled) on the α-weighted slide loss, whose
//!    gradient reaches each patch's logits through the mean aggregation.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::evalreport::{compute_metrics, MetricsReport};
use crate::numkernel::{
    argmax, max_relative_error, sgd_step, Gradients, Matrix, Mlp, OptimizerState, PROB_FLOOR,
};
use crate::resample::{all_samples, balance, median_class_size, ResampleConfig};
use crate::rng::{derive_seed, stage_rng};
use crate::scalar::Scalar;
use crate::synthdata::{Bag, BagId, Instance, LabeledBag, Resolution};
use crate::textio::{expect_header, fmt17, numbered_lines, parse_f64, parse_usize, read_text, write_text};

#[derive(Clone, Debug, PartialEq)]
pub struct MilConfig {
    /// Weight of the slide-level loss.
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub power: f64,
    /// Per-epoch class balancing of the stage-1 patch stream.
    pub resample: Option<ResampleConfig>,
    pub seed: u64,
}

impl Default for MilConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            epochs: 10,
            batch_size: 32,
            lr0: 0.01,
            power: 0.9,
            resample: Some(ResampleConfig::default()),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlidePrediction {
    pub bag_id: BagId,
    pub truth: usize,
    pub confidences: Vec<f64>,
    pub predicted: usize,
}

/// Mean of the probability rows of one bag.
pub fn aggregate_slide<T: Scalar>(probs: &Matrix<T>) -> Result<Vec<T>> {
    if probs.rows() == 0 {
        return Err(Error::Aggregation("bag has no patches".into()));
    }
    let mut p = vec![T::zero(); probs.cols()];
    for row in probs.iter_rows() {
        for (acc, &v) in p.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let n = T::from_count(probs.rows());
    p.iter_mut().for_each(|v| *v /= n);
    Ok(p)
}

/// Per-slide term `−ln P_label`, with `P_label` clamped at [`PROB_FLOOR`].
pub fn slide_term<T: Scalar>(p: &[T], label: usize) -> Result<T> {
    let pl = *p.get(label).ok_or(Error::Index {
        index: label,
        len: p.len(),
    })?;
    Ok(-pl.max(T::lit(PROB_FLOOR)).ln())
}

/// One slide's contribution to the batch loss: `α · term / n_slides`.
pub fn slide_loss<T: Scalar>(p: &[T], label: usize, alpha: T, n_slides: usize) -> Result<T> {
    if n_slides == 0 {
        return Err(Error::Argument("n_slides must be at least 1".into()));
    }
    Ok(alpha * slide_term(p, label)? / T::from_count(n_slides))
}

/// `α · mean_i(−ln P_{i,label_i})` over a batch of slides.
pub fn global_slide_loss<T: Scalar>(slides: &[(Vec<T>, usize)], alpha: T) -> Result<T> {
    let mut total = T::zero();
    for (p, label) in slides {
        total += slide_loss(p, *label, alpha, slides.len())?;
    }
    Ok(total)
}

/// `weight · (−ln P_label)` for one bag and its exact parameter gradient.
///
/// With `G = −weight / (P_label · N_p)` the gradient with respect to patch
/// `i`'s logits is `G · p_{i,label} · (δ_{c,label} − p_{i,c})`. When the
/// clamp is active the loss is flat and the gradient is zero.
pub fn slide_loss_with_grad<T: Scalar>(
    model: &Mlp<T>,
    rows: &Matrix<T>,
    label: usize,
    weight: T,
) -> Result<(T, Gradients<T>)> {
    let trace = model.forward_trace(rows)?;
    let p = aggregate_slide(&trace.probs)?;
    let loss = weight * slide_term(&p, label)?;
    let pl = p[label];
    let g = if pl > T::lit(PROB_FLOOR) {
        -weight / (pl * T::from_count(rows.rows()))
    } else {
        T::zero()
    };
    let mut dlogits = trace.probs.clone();
    for r in 0..dlogits.rows() {
        let row = dlogits.row_mut(r);
        let piy = row[label];
        for (c, v) in row.iter_mut().enumerate() {
            let delta = if c == label { T::one() } else { T::zero() };
            *v = g * piy * (delta - *v);
        }
    }
    let grads = model.backward(&trace, &dlogits)?;
    Ok((loss, grads))
}

/// Global slide loss over several bags and its gradient.
pub fn global_slide_loss_with_grad<T: Scalar>(
    model: &Mlp<T>,
    bags: &[(Matrix<T>, usize)],
    alpha: T,
) -> Result<(T, Gradients<T>)> {
    if bags.is_empty() {
        return Err(Error::Aggregation("no slides".into()));
    }
    let weight = alpha / T::from_count(bags.len());
    let mut total = T::zero();
    let mut grads = Gradients::zeros_like(model);
    for (rows, label) in bags {
        let (l, g) = slide_loss_with_grad(model, rows, *label, weight)?;
        total += l;
        grads.add_assign(&g);
    }
    Ok((total, grads))
}

/// Finite-difference check of the slide-loss gradient through forward and aggregation.
pub fn slide_grad_check<T: Scalar>(
    model: &Mlp<T>,
    bags: &[(Matrix<T>, usize)],
    alpha: T,
    epsilon: f64,
) -> Result<T> {
    let (_, grads) = global_slide_loss_with_grad(model, bags, alpha)?;
    max_relative_error(model, &grads, epsilon, |m| {
        let slides = bags
            .iter()
            .map(|(rows, label)| Ok((aggregate_slide(&m.forward(rows)?.probs)?, *label)))
            .collect::<Result<Vec<_>>>()?;
        global_slide_loss(&slides, alpha)
    })
}

pub fn bag_matrix<T: Scalar>(bag: &Bag) -> Result<Matrix<T>> {
    let rows: Vec<&[f64]> = bag.instances.iter().map(|i| i.features.as_slice()).collect();
    Matrix::from_rows(&rows)
}

/// Forwards every instance of the bag, averages, and takes the argmax
/// (lowest ordinal on ties).
pub fn predict_slide<T: Scalar>(model: &Mlp<T>, bag: &LabeledBag<'_>) -> Result<SlidePrediction> {
    if bag.bag.instances.is_empty() {
        return Err(Error::Aggregation(format!("bag {} has no instances", bag.bag.bag_id)));
    }
    let probs = model.forward(&bag_matrix(bag.bag)?)?.probs;
    let p: Vec<f64> = aggregate_slide(&probs)?.into_iter().map(Scalar::as_f64).collect();
    Ok(SlidePrediction {
        bag_id: bag.bag.bag_id,
        truth: bag.label,
        predicted: argmax(&p),
        confidences: p,
    })
}

pub fn predict_bags<T: Scalar>(model: &Mlp<T>, bags: &[LabeledBag<'_>]) -> Result<Vec<SlidePrediction>> {
    bags.iter().map(|b| predict_slide(model, b)).collect()
}

pub fn predictions_report(stage: &str, preds: &[SlidePrediction], num_classes: usize) -> Result<MetricsReport> {
    let p: Vec<usize> = preds.iter().map(|s| s.predicted).collect();
    let t: Vec<usize> = preds.iter().map(|s| s.truth).collect();
    compute_metrics(stage, &p, &t, num_classes)
}

/// Bag-level metrics of `model` on `bags`.
pub fn evaluate_bags<T: Scalar>(
    model: &Mlp<T>,
    bags: &[LabeledBag<'_>],
    stage: &str,
) -> Result<MetricsReport> {
    predictions_report(stage, &predict_bags(model, bags)?, model.num_classes())
}

/// Discriminative patches (input features) of one training bag.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchBag {
    pub bag_id: BagId,
    pub label: usize,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome<T> {
    pub model: Mlp<T>,
    /// Bags with no surviving patches, left out of stage 2.
    pub excluded_bags: usize,
    /// Validation macro F1 after each epoch (empty when no validation bags).
    pub val_f1: Vec<f64>,
}

pub fn finetune_two_stage<T: Scalar>(
    init: &Mlp<T>,
    patches: &[PatchBag],
    val: &[LabeledBag<'_>],
    config: &MilConfig,
) -> Result<FinetuneOutcome<T>> {
    if !(config.alpha >= 0.0) {
        return Err(Error::Config(format!("alpha must be non-negative, got {}", config.alpha)));
    }
    let dim = init.input_dim();
    let classes = init.num_classes();
    let mut pool: Vec<Vec<Instance>> = vec![Vec::new(); classes];
    let mut slides = Vec::new();
    let mut excluded = 0;
    for pb in patches {
        if pb.label >= classes {
            return Err(Error::Index {
                index: pb.label,
                len: classes,
            });
        }
        if pb.rows.is_empty() {
            excluded += 1;
            continue;
        }
        for (index, r) in pb.rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::Shape(format!(
                    "patch of bag {} has {} features, model expects {dim}",
                    pb.bag_id,
                    r.len()
                )));
            }
            pool[pb.label].push(Instance {
                bag_id: pb.bag_id,
                index,
                features: r.clone(),
                is_noise: false,
                resolution: Resolution::default(),
            });
        }
        slides.push((Matrix::<T>::from_rows(&pb.rows)?, pb.label));
    }
    // Classes without any patch take no part in stage 1.
    let present: Vec<usize> = (0..classes).filter(|&c| !pool[c].is_empty()).collect();
    let groups: Vec<Vec<&Instance>> = present.iter().map(|&c| pool[c].iter().collect()).collect();

    let mut model = init.clone();
    let mut val_f1 = Vec::new();
    if config.epochs == 0 || groups.is_empty() {
        return Ok(FinetuneOutcome {
            model,
            excluded_bags: excluded,
            val_f1,
        });
    }
    let per_epoch = match &config.resample {
        Some(rc) => rc.target_per_class.unwrap_or_else(|| median_class_size(&groups)) * groups.len(),
        None => groups.iter().map(Vec::len).sum(),
    };
    let batch = config.batch_size.max(1);
    let mut opt = OptimizerState::new(config.lr0, config.power, config.epochs * per_epoch.div_ceil(batch), batch)?;
    let mut stage1_rng = stage_rng(config.seed, "miltrain.stage1");
    let mut stage2_rng = stage_rng(config.seed, "miltrain.stage2");
    let weight = T::lit(config.alpha);
    let mut bag_order: Vec<usize> = (0..slides.len()).collect();

    for epoch in 0..config.epochs {
        // Stage 2 runs at the learning rate the epoch started with, so the
        // final epoch's slide stage is not silenced by the decayed schedule.
        let epoch_lr = T::lit(opt.poly_lr());
        let mut samples = match &config.resample {
            Some(rc) => balance(
                &groups,
                &ResampleConfig {
                    seed: derive_seed(rc.seed, &format!("finetune.epoch.{epoch}")),
                    ..rc.clone()
                },
            )?,
            None => all_samples(&groups),
        };
        samples.shuffle(&mut stage1_rng);
        for chunk in samples.chunks(batch) {
            let rows: Vec<&[f64]> = chunk.iter().map(|s| s.features.as_slice()).collect();
            let y: Vec<usize> = chunk.iter().map(|s| present[s.label]).collect();
            sgd_step(&mut model, &Matrix::from_rows(&rows)?, &y, &opt)?;
            opt.advance();
        }
        bag_order.shuffle(&mut stage2_rng);
        for &b in &bag_order {
            let (rows, label) = &slides[b];
            let (_, grads) = slide_loss_with_grad(&model, rows, *label, weight)?;
            grads.check_finite()?;
            model.apply_gradients(&grads, epoch_lr);
        }
        if !val.is_empty() {
            val_f1.push(evaluate_bags(&model, val, "val")?.f1_macro);
        }
    }
    Ok(FinetuneOutcome {
        model,
        excluded_bags: excluded,
        val_f1,
    })
}

pub const PREDICTIONS_HEADER: &str = "predictions v1";

pub fn predictions_to_string(preds: &[SlidePrediction]) -> String {
    let m = preds.first().map_or(0, |p| p.confidences.len());
    let mut out = format!("{PREDICTIONS_HEADER}\nbag_id,true_class,predicted_class");
    for c in 0..m {
        let _ = write!(out, ",P_{c}");
    }
    out.push('\n');
    for p in preds {
        let _ = write!(out, "{},{},{}", p.bag_id, p.truth, p.predicted);
        for v in &p.confidences {
            out.push(',');
            out.push_str(&fmt17(*v));
        }
        out.push('\n');
    }
    out
}

pub fn predictions_from_str(path: &Path, text: &str) -> Result<Vec<SlidePrediction>> {
    let mut lines = numbered_lines(text);
    expect_header(path, &mut lines, PREDICTIONS_HEADER)?;
    let (hn, cols) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 2, "missing column header"))?;
    let names: Vec<&str> = cols.split(',').collect();
    if names.len() < 4 || names[..3] != ["bag_id", "true_class", "predicted_class"] {
        return Err(Error::parse(path, hn, format!("bad column header {cols:?}")));
    }
    let m = names.len() - 3;
    let mut out = Vec::new();
    for (n, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 + m {
            return Err(Error::parse(path, n, format!("expected {} fields, found {}", 3 + m, f.len())));
        }
        let bag_id = f[0]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, n, format!("bad bag id {:?}", f[0])))?;
        let truth = parse_usize(path, n, f[1])?;
        let predicted = parse_usize(path, n, f[2])?;
        if truth >= m || predicted >= m {
            return Err(Error::parse(path, n, "class index out of range"));
        }
        let confidences = f[3..]
            .iter()
            .map(|v| parse_f64(path, n, v))
            .collect::<Result<Vec<_>>>()?;
        out.push(SlidePrediction {
            bag_id,
            truth,
            confidences,
            predicted,
        });
    }
    Ok(out)
}

pub fn write_predictions(preds: &[SlidePrediction], path: &Path) -> Result<()> {
    write_text(path, &predictions_to_string(preds))
}

pub fn read_predictions(path: &Path) -> Result<Vec<SlidePrediction>> {
    predictions_from_str(path, &read_text(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{Instance, Resolution};
    use proptest::prelude::*;
    use rand::Rng;

    const LN4: f64 = 1.386_294_361_119_890_6;

    fn m(rows: usize, cols: usize, v: Vec<f64>) -> Matrix<f64> {
        Matrix::from_vec(rows, cols, v).unwrap()
    }

    #[test]
    fn aggregate_examples() {
        let p = aggregate_slide(&m(2, 2, vec![0.6, 0.4, 0.8, 0.2])).unwrap();
        assert!((p[0] - 0.7).abs() < 1e-15 && (p[1] - 0.3).abs() < 1e-15);
        let single = aggregate_slide(&m(1, 4, vec![0.1, 0.2, 0.3, 0.4])).unwrap();
        assert_eq!(single, vec![0.1, 0.2, 0.3, 0.4]);
        let row = [0.05, 0.15, 0.3, 0.5];
        let many = aggregate_slide(&m(100, 4, row.repeat(100))).unwrap();
        for (a, b) in many.iter().zip(row) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(
            aggregate_slide(&Matrix::<f64>::zeros(0, 4)),
            Err(Error::Aggregation(_))
        ));
    }

    #[test]
    fn slide_loss_examples() {
        assert_eq!(slide_term(&[0.0, 1.0, 0.0, 0.0], 1).unwrap(), 0.0);
        assert!((slide_term(&[0.25; 4], 3).unwrap() - LN4).abs() < 1e-9);
        let slides = vec![(vec![1.0f64, 0.0, 0.0, 0.0], 0), (vec![0.25; 4], 2)];
        let l = global_slide_loss(&slides, 0.5).unwrap();
        assert!((l - 0.346_573_590_279_972_65).abs() < 1e-9);
        // Clamped, not infinite.
        assert!(slide_term(&[1.0f64, 0.0], 1).unwrap().is_finite());
        assert!(slide_term(&[1.0, 0.0], 2).is_err());
    }

    fn bag_of(label: usize, probs_like: &[[f64; 4]]) -> Bag {
        Bag {
            bag_id: 1,
            label: crate::synthdata::Subtype::from_ordinal(label).unwrap(),
            instances: probs_like
                .iter()
                .enumerate()
                .map(|(i, r)| Instance {
                    bag_id: 1,
                    index: i,
                    features: r.to_vec(),
                    is_noise: false,
                    resolution: Resolution::X10,
                })
                .collect(),
        }
    }

    /// Single-layer model whose logits are `ln(x)` of the 4 inputs, so the
    /// softmax returns the (normalized) input row.
    fn log_model() -> Mlp<f64> {
        let w = Matrix::from_vec(4, 4, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        Mlp::from_parts(vec![4, 4], vec![w], vec![vec![0.0; 4]]).unwrap()
    }

    fn log_rows(rows: &[[f64; 4]]) -> Vec<[f64; 4]> {
        rows.iter()
            .map(|r| r.map(|v| if v > 0.0 { v.ln() } else { -800.0 }))
            .collect()
    }

    #[test]
    fn predict_examples() {
        let model = log_model();
        let rows = log_rows(&[[0.1 / 3.0, 0.1 / 3.0, 0.9, 0.1 / 3.0]; 5]);
        let bag = bag_of(2, &rows);
        let pred = predict_slide(&model, &LabeledBag { bag: &bag, label: 2 }).unwrap();
        assert_eq!(pred.predicted, 2);
        assert!((pred.confidences[2] - 0.9).abs() < 1e-12);

        let rows = log_rows(&[[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]);
        let bag = bag_of(1, &rows);
        let pred = predict_slide(&model, &LabeledBag { bag: &bag, label: 1 }).unwrap();
        assert!((pred.confidences[0] - 0.5).abs() < 1e-12);
        assert!((pred.confidences[1] - 0.5).abs() < 1e-12);
        assert_eq!(pred.predicted, 0);
    }

    fn random_bags(seed: u64, n_bags: usize) -> (Mlp<f64>, Vec<(Matrix<f64>, usize)>) {
        let model = Mlp::new_seeded(&[6, 32, 16, 4], seed).unwrap();
        let mut rng = crate::rng::rng_from(seed + 1000);
        let bags = (0..n_bags)
            .map(|_| {
                let n = rng.random_range(1..6);
                let v = (0..n * 6).map(|_| rng.random_range(-2.0..2.0)).collect();
                (m(n, 6, v), rng.random_range(0..4))
            })
            .collect();
        (model, bags)
    }

    #[test]
    fn slide_gradient_matches_finite_differences() {
        for seed in 0..20 {
            let (model, bags) = random_bags(seed, 3);
            let err = slide_grad_check(&model, &bags, 0.5, 1e-5).unwrap();
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn zero_alpha_gradient_is_zero() {
        let (model, bags) = random_bags(4, 2);
        let (loss, g) = global_slide_loss_with_grad(&model, &bags, 0.0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    fn patch_bags(seed: u64) -> (Vec<PatchBag>, Mlp<f64>) {
        let mut rng = crate::rng::rng_from(seed);
        let bags = (0..8)
            .map(|b| {
                let label = b % 4;
                let rows = (0..rng.random_range(2..7))
                    .map(|_| {
                        (0..6)
                            .map(|d| if d == label { 2.0 } else { 0.0 } + rng.random_range(-1.0..1.0))
                            .collect()
                    })
                    .collect();
                PatchBag {
                    bag_id: b as BagId,
                    label,
                    rows,
                }
            })
            .collect();
        (bags, Mlp::new_seeded(&[6, 32, 16, 4], seed).unwrap())
    }

    #[test]
    fn zero_epochs_returns_init() {
        let (bags, init) = patch_bags(1);
        let out = finetune_two_stage(&init, &bags, &[], &MilConfig { epochs: 0, ..MilConfig::default() }).unwrap();
        assert_eq!(out.model, init);
    }

    #[test]
    fn zero_alpha_equals_stage_one_only() {
        // Stage one alone: the same schedule and shuffles, no slide stage.
        let (bags, init) = patch_bags(2);
        let cfg = MilConfig {
            alpha: 0.0,
            epochs: 3,
            batch_size: 8,
            lr0: 0.05,
            resample: None,
            ..MilConfig::default()
        };
        let with_stage2 = finetune_two_stage(&init, &bags, &[], &cfg).unwrap().model;

        let mut model = init.clone();
        let mut rows: Vec<(&[f64], usize)> = Vec::new();
        for label in 0..4 {
            for b in bags.iter().filter(|b| b.label == label) {
                rows.extend(b.rows.iter().map(|r| (r.as_slice(), label)));
            }
        }
        let per_epoch = rows.len().div_ceil(8);
        let mut opt = OptimizerState::new(0.05, 0.9, 3 * per_epoch, 8).unwrap();
        let mut rng = stage_rng(cfg.seed, "miltrain.stage1");
        for _ in 0..3 {
            let mut epoch = rows.clone();
            epoch.shuffle(&mut rng);
            for chunk in epoch.chunks(8) {
                let x: Vec<&[f64]> = chunk.iter().map(|r| r.0).collect();
                let y: Vec<usize> = chunk.iter().map(|r| r.1).collect();
                sgd_step(&mut model, &Matrix::from_rows(&x).unwrap(), &y, &opt).unwrap();
                opt.advance();
            }
        }
        assert_eq!(with_stage2, model);
    }

    #[test]
    fn balanced_stage_one_differs_and_is_deterministic() {
        let (mut bags, init) = patch_bags(6);
        let extra = bags[0].rows.clone();
        bags[0].rows.extend(extra);
        let cfg = MilConfig { alpha: 0.0, epochs: 2, ..MilConfig::default() };
        let a = finetune_two_stage(&init, &bags, &[], &cfg).unwrap().model;
        let b = finetune_two_stage(&init, &bags, &[], &cfg).unwrap().model;
        let c = finetune_two_stage(&init, &bags, &[], &MilConfig { resample: None, ..cfg }).unwrap().model;
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn empty_bags_are_excluded_and_counted() {
        let (mut bags, init) = patch_bags(3);
        bags[0].rows.clear();
        bags[5].rows.clear();
        let out = finetune_two_stage(&init, &bags, &[], &MilConfig { epochs: 1, ..MilConfig::default() }).unwrap();
        assert_eq!(out.excluded_bags, 2);
    }

    #[test]
    fn finetune_deterministic() {
        let (bags, init) = patch_bags(5);
        let cfg = MilConfig { epochs: 2, ..MilConfig::default() };
        let a = finetune_two_stage(&init, &bags, &[], &cfg).unwrap().model;
        let b = finetune_two_stage(&init, &bags, &[], &cfg).unwrap().model;
        assert_eq!(a, b);
        assert_ne!(a, init);
    }

    #[test]
    fn predictions_round_trip() {
        let preds = vec![
            SlidePrediction { bag_id: 3, truth: 1, confidences: vec![0.1, 0.6, 0.2, 0.1], predicted: 1 },
            SlidePrediction { bag_id: 9, truth: 0, confidences: vec![0.3, 0.3, 0.2, 0.2], predicted: 0 },
        ];
        let text = predictions_to_string(&preds);
        assert!(text.starts_with("predictions v1\nbag_id,true_class,predicted_class,P_0,P_1,P_2,P_3\n"));
        assert_eq!(predictions_from_str(Path::new("p"), &text).unwrap(), preds);
    }

    proptest! {
        #[test]
        fn aggregate_normalized_and_permutation_invariant(
            raw in proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, 4), 1..30),
            rot in 0usize..30,
        ) {
            let rows: Vec<Vec<f64>> = raw.iter().map(|r| {
                let s: f64 = r.iter().sum();
                r.iter().map(|v| v / s).collect()
            }).collect();
            let mat = Matrix::<f64>::from_rows(&rows).unwrap();
            let p = aggregate_slide(&mat).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let mut rotated = rows.clone();
            let k = rot % rotated.len();
            rotated.rotate_left(k);
            rotated.reverse();
            let q = aggregate_slide(&Matrix::<f64>::from_rows(&rotated).unwrap()).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            // Rescaling every row by the same positive constant keeps the argmax.
            let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * 3.7).collect()).collect();
            let s = aggregate_slide(&Matrix::<f64>::from_rows(&scaled).unwrap()).unwrap();
            prop_assert_eq!(argmax(&s), argmax(&p));
        }

        #[test]
        fn slide_term_nonnegative(raw in proptest::collection::vec(0.0f64..1.0, 4), label in 0usize..4) {
            let s: f64 = raw.iter().sum::<f64>() + 1e-9;
            let p: Vec<f64> = raw.iter().map(|v| v / s).collect();
            let t = slide_term(&p, label).unwrap();
            prop_assert!(t >= 0.0);
            prop_assert_eq!(t == 0.0, p[label] == 1.0);
        }
    }
}
