//! Symbol-level recall@K, mean recall@K and percentile recall.
//!
//! A prediction matches a ground-truth triplet when subject, predicate and
//! object classes are all equal. Matching is one-to-one: `n` identical
//! predictions cover at most `n` identical ground-truth triplets.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::dataset::Corpus;
use crate::error::{DebiasError, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triplet {
    pub subject: u32,
    pub predicate: u32,
    pub object: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredTriplet {
    pub triplet: Triplet,
    pub score: f64,
}

/// Per-image ranked predictions, highest score first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionList {
    images: BTreeMap<String, Vec<ScoredTriplet>>,
}

impl PredictionList {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an image, ranking its triplets by descending score. Equal
    /// scores keep their given order.
    pub fn insert(&mut self, image: impl Into<String>, mut triplets: Vec<ScoredTriplet>) -> Result<()> {
        if triplets.iter().any(|t| t.score.is_nan()) {
            return Err(DebiasError::InvalidConfig(String::from("NaN prediction score")));
        }
        triplets.sort_by(|a, b| b.score.total_cmp(&a.score));
        self.images.insert(image.into(), triplets);
        Ok(())
    }

    pub fn get(&self, image: &str) -> Option<&[ScoredTriplet]> {
        self.images.get(image).map(Vec::as_slice)
    }

    pub fn images(&self) -> impl Iterator<Item = (&String, &Vec<ScoredTriplet>)> {
        self.images.iter()
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

pub type GroundTruth = BTreeMap<String, Vec<Triplet>>;

pub fn triplets_by_image(corpus: &Corpus) -> GroundTruth {
    let mut out: GroundTruth = BTreeMap::new();
    for s in corpus.samples() {
        out.entry(s.image_id.clone()).or_default().push(Triplet {
            subject: s.subject_class,
            predicate: s.predicate,
            object: s.object_class,
        });
    }
    out
}

/// Every annotation of `corpus` as a score-1 prediction.
pub fn predictions_from_corpus(corpus: &Corpus) -> PredictionList {
    let mut list = PredictionList::new();
    for (image, triplets) in triplets_by_image(corpus) {
        let scored = triplets
            .into_iter()
            .map(|triplet| ScoredTriplet { triplet, score: 1.0 })
            .collect();
        list.insert(image, scored).expect("finite scores");
    }
    list
}

/// Per ground-truth predicate: (matched, total) for one image.
fn match_image(gt: &[Triplet], preds: &[ScoredTriplet], k: usize) -> BTreeMap<u32, (u64, u64)> {
    let mut remaining: BTreeMap<Triplet, u64> = BTreeMap::new();
    for t in gt {
        *remaining.entry(*t).or_default() += 1;
    }
    let mut out: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
    for t in gt {
        out.entry(t.predicate).or_default().1 += 1;
    }
    for p in preds.iter().take(k) {
        if let Some(n) = remaining.get_mut(&p.triplet) {
            if *n > 0 {
                *n -= 1;
                out.get_mut(&p.triplet.predicate).expect("present").0 += 1;
            }
        }
    }
    out
}

fn per_image(preds: &PredictionList, gt: &GroundTruth, k: usize) -> Result<Vec<BTreeMap<u32, (u64, u64)>>> {
    if k == 0 {
        return Err(DebiasError::InvalidConfig(String::from("K must be positive")));
    }
    let images: Vec<(&String, &Vec<Triplet>)> = gt.iter().filter(|(_, t)| !t.is_empty()).collect();
    Ok(par::map_indexed(images.len(), |i| {
        let (image, triplets) = images[i];
        match_image(triplets, preds.get(image).unwrap_or(&[]), k)
    }))
}

/// Percentage of ground-truth triplets recovered in the top `k`, averaged
/// over images with at least one ground-truth triplet. Zero when there are
/// none.
pub fn recall_at_k(preds: &PredictionList, gt: &GroundTruth, k: usize) -> Result<f64> {
    let images = per_image(preds, gt, k)?;
    if images.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = images
        .iter()
        .map(|m| {
            let (hit, total) = m.values().fold((0, 0), |(h, t), &(a, b)| (h + a, t + b));
            hit as f64 / total as f64
        })
        .sum();
    Ok(100.0 * sum / images.len() as f64)
}

/// Recall pooled per predicate over all images, then averaged unweighted
/// over predicates that occur in the ground truth.
pub fn mean_recall_at_k(preds: &PredictionList, gt: &GroundTruth, k: usize) -> Result<f64> {
    let mut pooled: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
    for m in per_image(preds, gt, k)? {
        for (p, (hit, total)) in m {
            let e = pooled.entry(p).or_default();
            e.0 += hit;
            e.1 += total;
        }
    }
    if pooled.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pooled.values().map(|&(h, t)| h as f64 / t as f64).sum();
    Ok(100.0 * sum / pooled.len() as f64)
}

/// Recall, mean recall and panoptic quality, all percentages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PRInputs {
    pub r: f64,
    pub mr: f64,
    pub pq: f64,
}

impl PRInputs {
    pub fn new(r: f64, mr: f64, pq: f64) -> Result<Self> {
        for (name, v) in [("R", r), ("mR", mr), ("PQ", pq)] {
            if !(0.0..=100.0).contains(&v) {
                return Err(DebiasError::InvalidConfig(alloc::format!("{name} = {v} is outside [0, 100]")));
            }
        }
        Ok(Self { r, mr, pq })
    }
}

pub fn percentile_recall(x: &PRInputs) -> f64 {
    0.3 * x.r + 0.6 * x.mr + 0.1 * x.pq
}
