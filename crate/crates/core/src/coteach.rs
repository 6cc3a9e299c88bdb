//! Co-teaching of two peer classifiers on noisy instance labels, and
//! confidence-based selection of candidate discriminative instances.
//!
//! Within each minibatch both models rank the samples by their own loss; each
//! keeps the `⌈R(T)·batch⌉` smallest and hands that selection to its peer,
//! which takes one SGD step on it. Both selections are made before either
//! model moves.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::miltrain::evaluate_bags;
use crate::numkernel::{argmax, per_sample_losses, sgd_step, Matrix, Mlp, OptimizerState, DEFAULT_HIDDEN};
use crate::resample::{all_samples, balance, group_by_label, ResampleConfig, Sample};
use crate::rng::{derive_seed, stage_rng};
use crate::scalar::Scalar;
use crate::synthdata::{BagId, LabeledBag};
use crate::textio::{expect_header, fmt17, numbered_lines, parse_f64, parse_usize, read_text, write_text};

#[derive(Clone, Debug, PartialEq)]
pub struct CoteachConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub power: f64,
    /// Fraction of each batch eventually dropped (tau); set it to the expected noise rate.
    pub forget_rate: f64,
    /// Epochs over which the drop fraction ramps up from zero (Tk).
    pub ramp_epochs: usize,
    pub conf_threshold: f64,
    pub hidden: Vec<usize>,
    /// Per-epoch class balancing; `None` trains on every instance once per epoch.
    pub resample: Option<ResampleConfig>,
    pub seed: u64,
    /// Explicit initialization seeds for models A and B.
    pub model_seeds: Option<(u64, u64)>,
}

impl Default for CoteachConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            lr0: 0.01,
            power: 0.9,
            forget_rate: 0.4,
            ramp_epochs: 10,
            conf_threshold: 0.5,
            hidden: DEFAULT_HIDDEN.to_vec(),
            resample: Some(ResampleConfig::default()),
            seed: 0,
            model_seeds: None,
        }
    }
}

impl CoteachConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.forget_rate) {
            return Err(Error::Config(format!("forget_rate must be in [0, 1), got {}", self.forget_rate)));
        }
        if self.ramp_epochs == 0 {
            return Err(Error::Config("ramp_epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.conf_threshold > 0.0 && self.conf_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "conf_threshold must be in (0, 1], got {}",
                self.conf_threshold
            )));
        }
        Ok(())
    }

    /// Initialization seeds of models A and B.
    pub fn seeds(&self) -> (u64, u64) {
        self.model_seeds.unwrap_or((
            derive_seed(self.seed, "coteach.model_a"),
            derive_seed(self.seed, "coteach.model_b"),
        ))
    }

    fn dims(&self, input: usize, classes: usize) -> Vec<usize> {
        let mut d = vec![input];
        d.extend(&self.hidden);
        d.push(classes);
        d
    }
}

/// `R(T) = 1 − tau · min(T / Tk, 1)`.
pub fn keep_rate(epoch: usize, tau: f64, ramp_epochs: usize) -> f64 {
    let t = if ramp_epochs == 0 {
        1.0
    } else {
        (epoch as f64 / ramp_epochs as f64).min(1.0)
    };
    1.0 - tau * t
}

/// Number of samples kept from a batch of `len`. The small slack keeps
/// products such as `0.8 · 5` from rounding up past the exact value.
pub fn keep_count(rate: f64, len: usize) -> usize {
    ((rate * len as f64 - 1e-9).ceil().max(1.0) as usize).min(len)
}

/// Ascending indices of the `keep` smallest losses; lower index wins ties.
pub fn select_small_loss<T: Scalar>(losses: &[T], keep: usize) -> Result<Vec<usize>> {
    if keep == 0 || keep > losses.len() {
        return Err(Error::Argument(format!(
            "keep count {keep} outside 1..={}",
            losses.len()
        )));
    }
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].partial_cmp(&losses[b]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let mut picked = order[..keep].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Chosen {
    A,
    B,
}

impl Chosen {
    pub fn tag(self) -> &'static str {
        match self {
            Chosen::A => "a",
            Chosen::B => "b",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        match s.trim() {
            "a" => Some(Chosen::A),
            "b" => Some(Chosen::B),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub keep_rate: f64,
    pub val_f1_a: f64,
    pub val_f1_b: f64,
}

/// Identifies a training sample by its source instance.
pub type SampleKey = (BagId, usize);

#[derive(Clone, Debug)]
pub struct CoteachResult<T> {
    pub model_a: Mlp<T>,
    pub model_b: Mlp<T>,
    pub chosen: Chosen,
    pub history: Vec<EpochStats>,
    /// Samples selected as small-loss by A and by B during the final epoch.
    pub final_selection_a: Vec<SampleKey>,
    pub final_selection_b: Vec<SampleKey>,
}

impl<T> CoteachResult<T> {
    pub fn chosen_model(&self) -> &Mlp<T> {
        match self.chosen {
            Chosen::A => &self.model_a,
            Chosen::B => &self.model_b,
        }
    }
}

/// Result of training one model without peer exchange.
#[derive(Clone, Debug)]
pub struct PlainResult<T> {
    pub model: Mlp<T>,
    pub val_f1: Vec<f64>,
}

/// The per-epoch stream of training samples shared by plain and peer training.
struct EpochStream<'a, 'b> {
    groups: Vec<Vec<&'a crate::synthdata::Instance>>,
    resample: Option<&'b ResampleConfig>,
    shuffle: crate::rng::StageRng,
}

impl<'a, 'b> EpochStream<'a, 'b> {
    fn new(train: &[LabeledBag<'a>], classes: usize, config: &'b CoteachConfig) -> Result<Self> {
        let groups = group_by_label(train, classes);
        if groups.iter().all(Vec::is_empty) {
            return Err(Error::Config("training set is empty".into()));
        }
        Ok(Self {
            groups,
            resample: config.resample.as_ref(),
            shuffle: stage_rng(config.seed, "coteach.shuffle"),
        })
    }

    fn epoch(&mut self, epoch: usize) -> Result<Vec<Sample>> {
        let mut samples = match self.resample {
            Some(rc) => balance(
                &self.groups,
                &ResampleConfig {
                    seed: derive_seed(rc.seed, &format!("epoch.{epoch}")),
                    ..rc.clone()
                },
            )?,
            None => all_samples(&self.groups),
        };
        samples.shuffle(&mut self.shuffle);
        Ok(samples)
    }

    fn samples_per_epoch(&self) -> Result<usize> {
        Ok(match self.resample {
            Some(rc) => {
                if let Some(class) = self.groups.iter().position(Vec::is_empty) {
                    return Err(Error::EmptyClass { class });
                }
                let target = rc
                    .target_per_class
                    .unwrap_or_else(|| crate::resample::median_class_size(&self.groups));
                target * self.groups.len()
            }
            None => self.groups.iter().map(Vec::len).sum(),
        })
    }
}

fn batch_matrix<T: Scalar>(samples: &[Sample]) -> Result<(Matrix<T>, Vec<usize>)> {
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.features.as_slice()).collect();
    Ok((Matrix::from_rows(&rows)?, samples.iter().map(|s| s.label).collect()))
}

fn schedule(config: &CoteachConfig, per_epoch: usize) -> Result<OptimizerState> {
    let total = config.epochs * per_epoch.div_ceil(config.batch_size);
    OptimizerState::new(config.lr0, config.power, total.max(1), config.batch_size)
}

fn val_f1<T: Scalar>(model: &Mlp<T>, val: &[LabeledBag<'_>]) -> Result<f64> {
    if val.is_empty() {
        return Ok(0.0);
    }
    Ok(evaluate_bags(model, val, "val")?.f1_macro)
}

fn input_dim(train: &[LabeledBag<'_>]) -> Result<usize> {
    train
        .iter()
        .flat_map(|b| b.bag.instances.first())
        .map(|i| i.features.len())
        .next()
        .ok_or_else(|| Error::Config("training set is empty".into()))
}

/// Single-model training on the same sample stream co-teaching uses.
pub fn train_plain<T: Scalar>(
    train: &[LabeledBag<'_>],
    val: &[LabeledBag<'_>],
    num_classes: usize,
    config: &CoteachConfig,
    model_seed: u64,
) -> Result<PlainResult<T>> {
    config.validate()?;
    let mut stream = EpochStream::new(train, num_classes, config)?;
    let mut model = Mlp::new_seeded(&config.dims(input_dim(train)?, num_classes), model_seed)?;
    let mut opt = schedule(config, stream.samples_per_epoch()?)?;
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let samples = stream.epoch(epoch)?;
        for chunk in samples.chunks(config.batch_size) {
            let (x, y) = batch_matrix::<T>(chunk)?;
            sgd_step(&mut model, &x, &y, &opt)?;
            opt.advance();
        }
        history.push(val_f1(&model, val)?);
    }
    Ok(PlainResult { model, val_f1: history })
}

pub fn train_coteach<T: Scalar>(
    train: &[LabeledBag<'_>],
    val: &[LabeledBag<'_>],
    num_classes: usize,
    config: &CoteachConfig,
) -> Result<CoteachResult<T>> {
    config.validate()?;
    let mut stream = EpochStream::new(train, num_classes, config)?;
    let dims = config.dims(input_dim(train)?, num_classes);
    let (seed_a, seed_b) = config.seeds();
    let mut model_a = Mlp::new_seeded(&dims, seed_a)?;
    let mut model_b = Mlp::new_seeded(&dims, seed_b)?;
    let mut opt = schedule(config, stream.samples_per_epoch()?)?;
    let mut history = Vec::with_capacity(config.epochs);
    let mut final_a = Vec::new();
    let mut final_b = Vec::new();

    for epoch in 0..config.epochs {
        let rate = keep_rate(epoch, config.forget_rate, config.ramp_epochs);
        let samples = stream.epoch(epoch)?;
        let last = epoch + 1 == config.epochs;
        for chunk in samples.chunks(config.batch_size) {
            let (x, y) = batch_matrix::<T>(chunk)?;
            let keep = keep_count(rate, chunk.len());
            let sel_a = select_small_loss(&per_sample_losses(&model_a, &x, &y)?, keep)?;
            let sel_b = select_small_loss(&per_sample_losses(&model_b, &x, &y)?, keep)?;
            let y_a: Vec<usize> = sel_a.iter().map(|&i| y[i]).collect();
            let y_b: Vec<usize> = sel_b.iter().map(|&i| y[i]).collect();
            sgd_step(&mut model_b, &x.select_rows(&sel_a), &y_a, &opt)?;
            sgd_step(&mut model_a, &x.select_rows(&sel_b), &y_b, &opt)?;
            opt.advance();
            if last {
                final_a.extend(sel_a.iter().map(|&i| (chunk[i].bag_id, chunk[i].index)));
                final_b.extend(sel_b.iter().map(|&i| (chunk[i].bag_id, chunk[i].index)));
            }
        }
        history.push(EpochStats {
            epoch,
            keep_rate: rate,
            val_f1_a: val_f1(&model_a, val)?,
            val_f1_b: val_f1(&model_b, val)?,
        });
    }
    let chosen = match history.last() {
        Some(h) if h.val_f1_b > h.val_f1_a => Chosen::B,
        _ => Chosen::A,
    };
    Ok(CoteachResult {
        model_a,
        model_b,
        chosen,
        history,
        final_selection_a: final_a,
        final_selection_b: final_b,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub bag_id: BagId,
    pub index: usize,
    pub label: usize,
    pub confidence: f64,
    /// Penultimate-layer activations.
    pub feature: Vec<f64>,
}

/// Instances whose predicted class equals the bag label with probability at
/// least `threshold`, grouped by label.
pub fn extract_candidates<T: Scalar>(
    model: &Mlp<T>,
    bags: &[LabeledBag<'_>],
    threshold: f64,
) -> Result<Vec<Vec<Candidate>>> {
    let mut out = vec![Vec::new(); model.num_classes()];
    for lb in bags {
        if lb.bag.instances.is_empty() {
            continue;
        }
        if lb.label >= out.len() {
            return Err(Error::Index {
                index: lb.label,
                len: out.len(),
            });
        }
        let fwd = model.forward(&crate::miltrain::bag_matrix::<T>(lb.bag)?)?;
        for (r, inst) in lb.bag.instances.iter().enumerate() {
            let p: Vec<f64> = fwd.probs.row(r).iter().map(|v| v.as_f64()).collect();
            let pred = argmax(&p);
            if pred == lb.label && p[pred] >= threshold {
                out[lb.label].push(Candidate {
                    bag_id: inst.bag_id,
                    index: inst.index,
                    label: lb.label,
                    confidence: p[pred],
                    feature: fwd.penultimate.row(r).iter().map(|v| v.as_f64()).collect(),
                });
            }
        }
    }
    Ok(out)
}

pub const CANDIDATES_HEADER: &str = "candidates v1";

pub fn candidates_to_string(classes: &[Vec<Candidate>]) -> String {
    let dim = classes.iter().flatten().map(|c| c.feature.len()).next().unwrap_or(0);
    let mut out = format!("{CANDIDATES_HEADER}\nbag_id,instance_index,class_ordinal,confidence");
    for d in 0..dim {
        let _ = write!(out, ",feat{d}");
    }
    out.push('\n');
    for c in classes.iter().flatten() {
        let _ = write!(out, "{},{},{},{}", c.bag_id, c.index, c.label, fmt17(c.confidence));
        for v in &c.feature {
            out.push(',');
            out.push_str(&fmt17(*v));
        }
        out.push('\n');
    }
    out
}

/// Parses a candidate file into `num_classes` per-class lists, preserving file order.
pub fn candidates_from_str(path: &Path, text: &str, num_classes: usize) -> Result<Vec<Vec<Candidate>>> {
    let mut lines = numbered_lines(text);
    expect_header(path, &mut lines, CANDIDATES_HEADER)?;
    let (hn, cols) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 2, "missing column header"))?;
    let names: Vec<&str> = cols.split(',').collect();
    if names.len() < 4 || names[..4] != ["bag_id", "instance_index", "class_ordinal", "confidence"] {
        return Err(Error::parse(path, hn, format!("bad column header {cols:?}")));
    }
    let dim = names.len() - 4;
    let mut out = vec![Vec::new(); num_classes];
    for (n, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 + dim {
            return Err(Error::parse(path, n, format!("expected {} fields, found {}", 4 + dim, f.len())));
        }
        let label = parse_usize(path, n, f[2])?;
        if label >= num_classes {
            return Err(Error::parse(path, n, format!("class {label} out of range")));
        }
        out[label].push(Candidate {
            bag_id: f[0]
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, n, format!("bad bag id {:?}", f[0])))?,
            index: parse_usize(path, n, f[1])?,
            label,
            confidence: parse_f64(path, n, f[3])?,
            feature: f[4..].iter().map(|v| parse_f64(path, n, v)).collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

pub fn write_candidates(classes: &[Vec<Candidate>], path: &Path) -> Result<()> {
    write_text(path, &candidates_to_string(classes))
}

pub fn read_candidates(path: &Path, num_classes: usize) -> Result<Vec<Vec<Candidate>>> {
    candidates_from_str(path, &read_text(path)?, num_classes)
}

pub fn history_to_string(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,keep_rate,val_f1_a,val_f1_b\n");
    for h in history {
        let _ = writeln!(out, "{},{},{},{}", h.epoch, fmt17(h.keep_rate), fmt17(h.val_f1_a), fmt17(h.val_f1_b));
    }
    out
}
