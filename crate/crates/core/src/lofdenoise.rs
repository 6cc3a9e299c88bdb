//! Local Outlier Factor scoring and per-class outlier filtering of candidates.
//!
//! Neighborhoods are exact: `N_k(p)` holds every other point within the
//! k-distance of `p`, so ties at the k-distance are all included.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rayon::prelude::*;

use crate::coteach::Candidate;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};
use crate::scalar::Scalar;
use crate::textio::{fmt17, write_text};

#[derive(Clone, Debug, PartialEq)]
pub struct LofParams {
    pub k: usize,
    pub theta: f64,
    pub cap_per_class: usize,
    pub seed: u64,
}

impl Default for LofParams {
    fn default() -> Self {
        Self {
            k: 20,
            theta: 1.5,
            cap_per_class: 2000,
            seed: 0,
        }
    }
}

impl LofParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("lof k must be at least 1".into()));
        }
        if !(self.theta >= 1.0) {
            return Err(Error::Config(format!("lof theta must be at least 1, got {}", self.theta)));
        }
        if self.cap_per_class < self.k + 1 {
            return Err(Error::Config(format!(
                "cap_per_class {} must exceed k = {}",
                self.cap_per_class, self.k
            )));
        }
        Ok(())
    }
}

fn pairwise<T: Scalar, P: AsRef<[T]> + Sync>(points: &[P]) -> Vec<T> {
    let n = points.len();
    let mut d = vec![T::zero(); n * n];
    d.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
        let p = points[i].as_ref();
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = p
                .iter()
                .zip(points[j].as_ref())
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<T>()
                .sqrt();
        }
    });
    d
}

/// `a / b` with the duplicate convention `∞ / ∞ = 1`.
fn density_ratio<T: Scalar>(a: T, b: T) -> T {
    if a.is_infinite() && b.is_infinite() {
        T::one()
    } else {
        a / b
    }
}

/// LOF score of every point for neighborhood size `k`.
pub fn lof_scores<T: Scalar, P: AsRef<[T]> + Sync>(points: &[P], k: usize) -> Result<Vec<T>> {
    let n = points.len();
    if k == 0 || n < k + 1 {
        return Err(Error::Argument(format!("LOF needs k >= 1 and at least k + 1 points, got k = {k}, n = {n}")));
    }
    let dim = points[0].as_ref().len();
    if points.iter().any(|p| p.as_ref().len() != dim) {
        return Err(Error::Shape("LOF points have differing dimensions".into()));
    }
    let dist = pairwise(points);
    let d = |i: usize, j: usize| dist[i * n + j];

    let (kdist, neighbors): (Vec<T>, Vec<Vec<usize>>) = (0..n)
        .into_par_iter()
        .map(|p| {
            let mut others: Vec<T> = (0..n).filter(|&o| o != p).map(|o| d(p, o)).collect();
            others.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            let kd = others[k - 1];
            let nb = (0..n).filter(|&o| o != p && d(p, o) <= kd).collect();
            (kd, nb)
        })
        .unzip();

    let lrd: Vec<T> = (0..n)
        .into_par_iter()
        .map(|p| {
            let nb = &neighbors[p];
            let sum: T = nb.iter().map(|&o| kdist[o].max(d(p, o))).sum();
            if sum == T::zero() {
                T::infinity()
            } else {
                T::from_count(nb.len()) / sum
            }
        })
        .collect();

    Ok((0..n)
        .into_par_iter()
        .map(|p| {
            let nb = &neighbors[p];
            let s: T = nb.iter().map(|&o| density_ratio(lrd[o], lrd[p])).sum();
            s / T::from_count(nb.len())
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiseRow {
    pub class: usize,
    pub input_count: usize,
    pub capped_count: usize,
    pub kept: usize,
    pub dropped: usize,
    pub theta: f64,
    pub k: usize,
    /// Too few candidates to score; all were passed through.
    pub passthrough: bool,
    /// Absent when nothing was scored.
    pub scores: Option<ScoreSummary>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreSummary {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

/// Scores one class's candidates and keeps those with LOF at most theta,
/// after capping the set by seeded uniform subsampling.
pub fn filter_class(class: usize, candidates: &[Candidate], params: &LofParams) -> Result<(Vec<Candidate>, DenoiseRow)> {
    params.validate()?;
    let input_count = candidates.len();
    let pool: Vec<&Candidate> = if input_count > params.cap_per_class {
        let mut rng = rng_from(derive_seed(params.seed, &format!("lofdenoise.cap.{class}")));
        let mut idx = sample(&mut rng, input_count, params.cap_per_class).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| &candidates[i]).collect()
    } else {
        candidates.iter().collect()
    };
    let mut row = DenoiseRow {
        class,
        input_count,
        capped_count: pool.len(),
        kept: pool.len(),
        dropped: 0,
        theta: params.theta,
        k: params.k,
        passthrough: false,
        scores: None,
    };
    if pool.len() <= params.k {
        row.passthrough = true;
        return Ok((pool.into_iter().cloned().collect(), row));
    }
    let features: Vec<&[f64]> = pool.iter().map(|c| c.feature.as_slice()).collect();
    let scores = lof_scores::<f64, _>(&features, params.k)?;
    let kept: Vec<Candidate> = pool
        .iter()
        .zip(&scores)
        .filter(|(_, &s)| s <= params.theta)
        .map(|(c, _)| (*c).clone())
        .collect();
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    row.kept = kept.len();
    row.dropped = pool.len() - kept.len();
    row.scores = Some(ScoreSummary {
        min: sorted[0],
        median: sorted[sorted.len() / 2],
        max: sorted[sorted.len() - 1],
    });
    Ok((kept, row))
}

/// Filters every class independently (in parallel).
pub fn denoise_all(classes: &[Vec<Candidate>], params: &LofParams) -> Result<(Vec<Vec<Candidate>>, Vec<DenoiseRow>)> {
    let results: Vec<_> = classes
        .par_iter()
        .enumerate()
        .map(|(c, cands)| filter_class(c, cands, params))
        .collect::<Result<_>>()?;
    Ok(results.into_iter().unzip())
}

pub const DENOISE_REPORT_HEADER: &str = "denoise-report v1";

pub fn report_to_string(rows: &[DenoiseRow]) -> String {
    let mut out = format!(
        "{DENOISE_REPORT_HEADER}\nclass,input_count,capped_count,kept,dropped,theta,k,passthrough,score_min,score_median,score_max\n"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.class,
            r.input_count,
            r.capped_count,
            r.kept,
            r.dropped,
            r.theta,
            r.k,
            u8::from(r.passthrough),
            r.scores
                .map(|s| format!("{},{},{}", fmt17(s.min), fmt17(s.median), fmt17(s.max)))
                .unwrap_or_else(|| ",,".into())
        );
    }
    out
}

pub fn write_report(rows: &[DenoiseRow], path: &Path) -> Result<()> {
    write_text(path, &report_to_string(rows))
}
