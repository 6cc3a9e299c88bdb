//! Synthetic bag datasets standing in for whole-slide images.
//!
//! Each bag (slide) of class `c` holds "discriminative" instances drawn from an
//! isotropic Gaussian at the class-`c` center plus "noise" instances drawn from
//! a two-component background mixture shared by every class. Bags carry clean
//! labels; instances inherit the bag label and are therefore noisy.
//!
//! Class `c` is centered at `separation · e_c`. The background components sit
//! at the centroid of the four class centers, offset by `±background_offset`
//! along axis 4, so they are equidistant from every class.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::stage_rng;
use crate::textio::{fmt17, numbered_lines, parse_f64, parse_usize, read_text, write_text};

pub const NUM_SUBTYPES: usize = 4;

/// Molecular subtype with a fixed ordinal: LuminalA = 0, LuminalB = 1,
/// Her2 = 2, BasalLike = 3.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subtype {
    LuminalA,
    LuminalB,
    Her2,
    BasalLike,
}

impl Subtype {
    pub const ALL: [Subtype; NUM_SUBTYPES] = [
        Subtype::LuminalA,
        Subtype::LuminalB,
        Subtype::Her2,
        Subtype::BasalLike,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Short code used in report headers: A, B, H, BL.
    pub fn code(self) -> &'static str {
        match self {
            Subtype::LuminalA => "A",
            Subtype::LuminalB => "B",
            Subtype::Her2 => "H",
            Subtype::BasalLike => "BL",
        }
    }
}

impl fmt::Display for Subtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Subtype::LuminalA => "LuminalA",
            Subtype::LuminalB => "LuminalB",
            Subtype::Her2 => "Her2",
            Subtype::BasalLike => "BasalLike",
        };
        f.write_str(name)
    }
}

/// Magnification tag. Metadata only; it does not change the feature distribution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Resolution {
    X5,
    #[default]
    X10,
    X20,
}

impl Resolution {
    pub fn tag(self) -> &'static str {
        match self {
            Resolution::X5 => "5X",
            Resolution::X10 => "10X",
            Resolution::X20 => "20X",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        match s {
            "5X" => Some(Resolution::X5),
            "10X" => Some(Resolution::X10),
            "20X" => Some(Resolution::X20),
            _ => None,
        }
    }
}

pub type BagId = u32;

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub bag_id: BagId,
    pub index: usize,
    pub features: Vec<f64>,
    /// Generator ground truth. Training code never reads it.
    pub is_noise: bool,
    pub resolution: Resolution,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bag {
    pub bag_id: BagId,
    pub label: Subtype,
    pub instances: Vec<Instance>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub bags: Vec<Bag>,
}

impl Dataset {
    pub fn class_counts(&self) -> [usize; NUM_SUBTYPES] {
        let mut counts = [0; NUM_SUBTYPES];
        for b in &self.bags {
            counts[b.label.ordinal()] += 1;
        }
        counts
    }

    pub fn num_instances(&self) -> usize {
        self.bags.iter().map(|b| b.instances.len()).sum()
    }
}

/// A bag paired with the class index a particular task trains on: the
/// subtype ordinal for 4-class work, target-vs-rest for binary models.
#[derive(Clone, Copy, Debug)]
pub struct LabeledBag<'a> {
    pub bag: &'a Bag,
    pub label: usize,
}

pub fn multiclass_view(bags: &[Bag]) -> Vec<LabeledBag<'_>> {
    bags.iter()
        .map(|bag| LabeledBag {
            bag,
            label: bag.label.ordinal(),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub bags_per_class: [usize; NUM_SUBTYPES],
    /// Inclusive range of instances per bag.
    pub instances_per_bag: (usize, usize),
    pub noise_fraction: f64,
    pub class_center_separation: f64,
    pub cluster_spread: f64,
    /// Distance of each background component from the class-center centroid.
    pub background_offset: f64,
    /// Spread of the background components; `None` uses `cluster_spread`.
    pub background_spread: Option<f64>,
    pub feature_dim: usize,
    pub resolution: Resolution,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            bags_per_class: [25, 30, 25, 20],
            instances_per_bag: (30, 60),
            noise_fraction: 0.4,
            class_center_separation: 3.0,
            cluster_spread: 1.0,
            background_offset: 1.5,
            background_spread: None,
            feature_dim: 16,
            resolution: Resolution::X10,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bags_per_class.iter().all(|&n| n == 0) {
            return Err(Error::Config("no bags requested".into()));
        }
        if !(0.0..1.0).contains(&self.noise_fraction) {
            return Err(Error::Config(format!(
                "noise_fraction must lie in [0, 1), got {}",
                self.noise_fraction
            )));
        }
        if !(self.class_center_separation > 0.0) {
            return Err(Error::Config("class_center_separation must be positive".into()));
        }
        if !(self.cluster_spread >= 0.0) || !(self.background_offset >= 0.0) || !(self.noise_spread() >= 0.0) {
            return Err(Error::Config("spread and background offset must be non-negative".into()));
        }
        let (lo, hi) = self.instances_per_bag;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("bad instances_per_bag range {lo}..={hi}")));
        }
        if self.feature_dim < NUM_SUBTYPES + 1 {
            return Err(Error::Config(format!(
                "feature_dim must be at least {}",
                NUM_SUBTYPES + 1
            )));
        }
        Ok(())
    }

    pub fn class_center(&self, class: Subtype) -> Vec<f64> {
        let mut c = vec![0.0; self.feature_dim];
        c[class.ordinal()] = self.class_center_separation;
        c
    }

    pub fn noise_spread(&self) -> f64 {
        self.background_spread.unwrap_or(self.cluster_spread)
    }

    pub fn background_centers(&self) -> [Vec<f64>; 2] {
        let mut base = vec![0.0; self.feature_dim];
        for v in base.iter_mut().take(NUM_SUBTYPES) {
            *v = self.class_center_separation / NUM_SUBTYPES as f64;
        }
        let mut a = base.clone();
        let mut b = base;
        a[NUM_SUBTYPES] += self.background_offset;
        b[NUM_SUBTYPES] -= self.background_offset;
        [a, b]
    }
}

fn gaussian_point<R: Rng>(rng: &mut R, center: &[f64], spread: f64) -> Vec<f64> {
    center
        .iter()
        .map(|&c| {
            let z: f64 = StandardNormal.sample(rng);
            c + spread * z
        })
        .collect()
}

pub fn generate(config: &GenConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = stage_rng(config.seed, "synthdata.generate");
    let background = config.background_centers();
    let mut bags = Vec::new();
    let mut next_id: BagId = 0;
    for class in Subtype::ALL {
        let center = config.class_center(class);
        for _ in 0..config.bags_per_class[class.ordinal()] {
            let (lo, hi) = config.instances_per_bag;
            let n = rng.random_range(lo..=hi);
            let clean = (((1.0 - config.noise_fraction) * n as f64).ceil() as usize).min(n);
            let mut flags: Vec<bool> = (0..n).map(|i| i >= clean).collect();
            flags.shuffle(&mut rng);
            let instances = flags
                .into_iter()
                .enumerate()
                .map(|(index, is_noise)| {
                    let features = if is_noise {
                        let comp = &background[usize::from(rng.random_bool(0.5))];
                        gaussian_point(&mut rng, comp, config.noise_spread())
                    } else {
                        gaussian_point(&mut rng, &center, config.cluster_spread)
                    };
                    Instance {
                        bag_id: next_id,
                        index,
                        features,
                        is_noise,
                        resolution: config.resolution,
                    }
                })
                .collect();
            bags.push(Bag {
                bag_id: next_id,
                label: class,
                instances,
            });
            next_id += 1;
        }
    }
    Ok(Dataset {
        dim: config.feature_dim,
        bags,
    })
}

/// Stratified split: per class, `round(ratio · count)` bags go to train.
pub fn split(dataset: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Split(format!("ratio must lie in (0, 1), got {ratio}")));
    }
    let mut rng = stage_rng(seed, "synthdata.split");
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in Subtype::ALL {
        let mut members: Vec<&Bag> = dataset.bags.iter().filter(|b| b.label == class).collect();
        if members.len() < 2 {
            return Err(Error::Split(format!(
                "class {class} has {} bag(s), need at least 2",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let n_train = split_count(members.len(), ratio);
        train.extend(members[..n_train].iter().map(|&b| b.clone()));
        val.extend(members[n_train..].iter().map(|&b| b.clone()));
    }
    train.sort_by_key(|b| b.bag_id);
    val.sort_by_key(|b| b.bag_id);
    Ok((
        Dataset {
            dim: dataset.dim,
            bags: train,
        },
        Dataset {
            dim: dataset.dim,
            bags: val,
        },
    ))
}

/// Per-class train count used by [`split`].
pub fn split_count(class_count: usize, ratio: f64) -> usize {
    ((ratio * class_count as f64).round() as usize).min(class_count)
}

pub const DATASET_HEADER: &str = "bags v1";

pub fn dataset_to_string(dataset: &Dataset) -> String {
    let mut out = format!("{DATASET_HEADER} dim={}\n", dataset.dim);
    for bag in &dataset.bags {
        for inst in &bag.instances {
            let _ = write!(
                out,
                "{},{},{},{},{}",
                bag.bag_id,
                bag.label.ordinal(),
                inst.index,
                u8::from(inst.is_noise),
                inst.resolution.tag()
            );
            for v in &inst.features {
                out.push(',');
                out.push_str(&fmt17(*v));
            }
            out.push('\n');
        }
    }
    out
}

pub fn dataset_from_str(path: &Path, text: &str) -> Result<Dataset> {
    let mut lines = numbered_lines(text);
    let (hn, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty file, expected \"bags v1 dim=<d>\""))?;
    let dim = header
        .strip_prefix(DATASET_HEADER)
        .map(str::trim)
        .and_then(|rest| rest.strip_prefix("dim="))
        .ok_or_else(|| Error::parse(path, hn, format!("bad header {header:?}")))
        .and_then(|d| parse_usize(path, hn, d))?;
    let mut bags: Vec<Bag> = Vec::new();
    for (n, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 + dim {
            return Err(Error::parse(
                path,
                n,
                format!("expected {} fields, found {}", 5 + dim, fields.len()),
            ));
        }
        let bag_id: BagId = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, n, format!("bad bag id {:?}", fields[0])))?;
        let label = parse_usize(path, n, fields[1])
            .ok()
            .and_then(Subtype::from_ordinal)
            .ok_or_else(|| Error::parse(path, n, format!("bad class ordinal {:?}", fields[1])))?;
        let index = parse_usize(path, n, fields[2])?;
        let is_noise = match fields[3].trim() {
            "0" => false,
            "1" => true,
            other => return Err(Error::parse(path, n, format!("bad noise flag {other:?}"))),
        };
        let resolution = Resolution::from_tag(fields[4].trim())
            .ok_or_else(|| Error::parse(path, n, format!("bad resolution {:?}", fields[4])))?;
        let features = fields[5..]
            .iter()
            .map(|f| parse_f64(path, n, f))
            .collect::<Result<Vec<_>>>()?;
        let inst = Instance {
            bag_id,
            index,
            features,
            is_noise,
            resolution,
        };
        match bags.last_mut() {
            Some(bag) if bag.bag_id == bag_id => {
                if bag.label != label {
                    return Err(Error::parse(path, n, format!("bag {bag_id} changes class")));
                }
                bag.instances.push(inst);
            }
            _ => {
                if bags.iter().any(|b| b.bag_id == bag_id) {
                    return Err(Error::parse(path, n, format!("bag {bag_id} is not contiguous")));
                }
                bags.push(Bag {
                    bag_id,
                    label,
                    instances: vec![inst],
                });
            }
        }
    }
    Ok(Dataset { dim, bags })
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    write_text(path, &dataset_to_string(dataset))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    dataset_from_str(path, &read_text(path)?)
}
