//! Per-epoch class-balanced sampling.
//!
//! Every class contributes exactly `target_per_class` samples: surplus classes
//! are subsampled without replacement, deficit classes keep all originals and
//! are topped up with jittered copies of randomly chosen originals.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{rng_from, StageRng};
use crate::synthdata::{BagId, Instance, LabeledBag};

#[derive(Clone, Debug, PartialEq)]
pub struct ResampleConfig {
    /// `None` means the median class size (upper median for even class counts).
    pub target_per_class: Option<usize>,
    pub augment_sigma: f64,
    pub seed: u64,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        Self {
            target_per_class: None,
            augment_sigma: 0.05,
            seed: 0,
        }
    }
}

/// One training item of an epoch. Augmented items point at the original they
/// were jittered from.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub label: usize,
    pub bag_id: BagId,
    pub index: usize,
    pub features: Vec<f64>,
    pub augmented: bool,
}

impl Sample {
    pub fn original(inst: &Instance, label: usize) -> Self {
        Self {
            label,
            bag_id: inst.bag_id,
            index: inst.index,
            features: inst.features.clone(),
            augmented: false,
        }
    }
}

/// Instances grouped by task label; `groups[c]` holds every instance of every bag labeled `c`.
pub fn group_by_label<'a>(bags: &[LabeledBag<'a>], num_classes: usize) -> Vec<Vec<&'a Instance>> {
    let mut groups = vec![Vec::new(); num_classes];
    for lb in bags {
        groups[lb.label].extend(lb.bag.instances.iter());
    }
    groups
}

/// Every instance once, labeled by its bag; the no-resampling baseline.
pub fn all_samples(groups: &[Vec<&Instance>]) -> Vec<Sample> {
    groups
        .iter()
        .enumerate()
        .flat_map(|(label, g)| g.iter().map(move |inst| Sample::original(inst, label)))
        .collect()
}

pub fn median_class_size(groups: &[Vec<&Instance>]) -> usize {
    let mut sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    sizes.sort_unstable();
    sizes.get(sizes.len() / 2).copied().unwrap_or(0)
}

pub fn balance(groups: &[Vec<&Instance>], config: &ResampleConfig) -> Result<Vec<Sample>> {
    if let Some(class) = groups.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass { class });
    }
    if !(config.augment_sigma >= 0.0) {
        return Err(Error::Config("augment_sigma must be non-negative".into()));
    }
    let target = config
        .target_per_class
        .unwrap_or_else(|| median_class_size(groups));
    if target == 0 {
        return Err(Error::Config("target_per_class must be at least 1".into()));
    }
    let mut rng = rng_from(config.seed);
    let mut out = Vec::with_capacity(target * groups.len());
    for (label, group) in groups.iter().enumerate() {
        if group.len() >= target {
            let mut picked = sample(&mut rng, group.len(), target).into_vec();
            picked.sort_unstable();
            out.extend(picked.into_iter().map(|i| Sample::original(group[i], label)));
        } else {
            out.extend(group.iter().map(|inst| Sample::original(inst, label)));
            for _ in group.len()..target {
                let src = group[rng.random_range(0..group.len())];
                out.push(Sample {
                    label,
                    bag_id: src.bag_id,
                    index: src.index,
                    features: jitter(&src.features, config.augment_sigma, &mut rng),
                    augmented: true,
                });
            }
        }
    }
    Ok(out)
}

fn jitter(features: &[f64], sigma: f64, rng: &mut StageRng) -> Vec<f64> {
    features
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(rng);
            v + sigma * z
        })
        .collect()
}

/// Copy of `instance` with independent `N(0, sigma²)` jitter on every feature.
/// Image flips have no feature-space analogue; jitter plays their role.
pub fn augment(instance: &Instance, sigma: f64, seed: u64) -> Result<Instance> {
    if !(sigma >= 0.0) {
        return Err(Error::Argument(format!("sigma must be non-negative, got {sigma}")));
    }
    let mut rng = rng_from(seed);
    Ok(Instance {
        features: jitter(&instance.features, sigma, &mut rng),
        ..instance.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::Resolution;
    use std::collections::HashSet;

    fn instances(bag: BagId, n: usize) -> Vec<Instance> {
        (0..n)
            .map(|i| Instance {
                bag_id: bag,
                index: i,
                features: vec![i as f64, -(i as f64)],
                is_noise: false,
                resolution: Resolution::X10,
            })
            .collect()
    }

    fn cfg(target: usize) -> ResampleConfig {
        ResampleConfig {
            target_per_class: Some(target),
            augment_sigma: 0.05,
            seed: 3,
        }
    }

    #[test]
    fn deficit_class_is_topped_up() {
        let a = instances(0, 100);
        let b = instances(1, 50);
        let groups = vec![a.iter().collect(), b.iter().collect::<Vec<_>>()];
        let out = balance(&groups, &cfg(100)).unwrap();
        let class1: Vec<_> = out.iter().filter(|s| s.label == 1).collect();
        assert_eq!(class1.len(), 100);
        assert_eq!(class1.iter().filter(|s| !s.augmented).count(), 50);
        assert_eq!(class1.iter().filter(|s| s.augmented).count(), 50);
        assert_eq!(out.iter().filter(|s| s.label == 0 && !s.augmented).count(), 100);
    }

    #[test]
    fn surplus_classes_are_subsampled() {
        let a = instances(0, 200);
        let b = instances(1, 200);
        let groups = vec![a.iter().collect(), b.iter().collect::<Vec<_>>()];
        let out = balance(&groups, &cfg(100)).unwrap();
        for label in 0..2 {
            let originals: Vec<_> = out.iter().filter(|s| s.label == label).collect();
            assert_eq!(originals.len(), 100);
            assert!(originals.iter().all(|s| !s.augmented));
        }
    }

    #[test]
    fn exact_target_takes_each_original_once() {
        let a = instances(0, 40);
        let groups = vec![a.iter().collect::<Vec<_>>()];
        let out = balance(&groups, &cfg(40)).unwrap();
        let keys: HashSet<_> = out.iter().map(|s| (s.bag_id, s.index)).collect();
        assert_eq!(keys.len(), 40);
        assert!(out.iter().all(|s| !s.augmented));
    }

    #[test]
    fn empty_class_is_named() {
        let a = instances(0, 3);
        let groups = vec![a.iter().collect(), Vec::new()];
        assert!(matches!(
            balance(&groups, &cfg(3)),
            Err(Error::EmptyClass { class: 1 })
        ));
    }

    #[test]
    fn default_target_is_median() {
        let a = instances(0, 10);
        let b = instances(1, 30);
        let c = instances(2, 20);
        let groups = vec![a.iter().collect(), b.iter().collect(), c.iter().collect::<Vec<_>>()];
        let out = balance(
            &groups,
            &ResampleConfig {
                target_per_class: None,
                ..cfg(0)
            },
        )
        .unwrap();
        assert_eq!(out.len(), 60);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = instances(0, 7);
        let b = instances(1, 30);
        let groups = vec![a.iter().collect(), b.iter().collect::<Vec<_>>()];
        assert_eq!(balance(&groups, &cfg(20)).unwrap(), balance(&groups, &cfg(20)).unwrap());
    }

    #[test]
    fn augment_zero_sigma_and_determinism() {
        let inst = &instances(4, 3)[2];
        let same = augment(inst, 0.0, 9).unwrap();
        assert_eq!(same, *inst);
        let a = augment(inst, 0.3, 9).unwrap();
        let b = augment(inst, 0.3, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.features, inst.features);
        assert_eq!((a.bag_id, a.index), (inst.bag_id, inst.index));
        assert!(augment(inst, -1.0, 0).is_err());
    }

    #[test]
    fn augment_mean_converges() {
        // Law of large numbers: the mean of 10,000 jittered copies lies within
        // 3σ/100 (three standard errors) of the original.
        let inst = Instance {
            bag_id: 0,
            index: 0,
            features: vec![1.5, -2.0, 0.25],
            is_noise: false,
            resolution: Resolution::X10,
        };
        let sigma = 0.5;
        let n = 10_000;
        let mut mean = [0.0; 3];
        for s in 0..n {
            let a = augment(&inst, sigma, s as u64).unwrap();
            for (m, v) in mean.iter_mut().zip(&a.features) {
                *m += v / n as f64;
            }
        }
        for (m, o) in mean.iter().zip(&inst.features) {
            assert!((m - o).abs() < 3.0 * sigma / 100.0, "{m} vs {o}");
        }
    }
}
