#![allow(dead_code)]

use debias_core::dataset::{AnnotationSample, Corpus, Vocab};
use debias_core::linalg::Matrix;
use debias_core::risk::ProbMatrix;
use debias_core::representation::{
    irm_loss, BaseEmbeddings, ContrastiveParams, DomainBatch, NegativeWeights, ProjectionModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn vocab(q: usize, c: usize) -> Vocab {
    Vocab {
        predicates: (0..q).map(|i| format!("rel{i}")).collect(),
        classes: (0..c).map(|i| format!("thing{i}")).collect(),
    }
}

/// Corpus with `n` samples spread over `domains` domains and `q` predicates,
/// plus Gaussian base embeddings and a random projection head.
pub fn random_batch(
    seed: u64,
    n: usize,
    domains: u32,
    q: u32,
    e: usize,
    r: usize,
) -> (Corpus, BaseEmbeddings, ProjectionModel) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<_> = (0..n)
        .map(|i| AnnotationSample {
            sample_id: i as u64 * 3 + 1,
            image_id: format!("img{}", i / 4),
            subject_class: rng.random_range(0..domains),
            object_class: 0,
            predicate: rng.random_range(0..q),
        })
        .collect();
    let corpus = Corpus::new(samples, vocab(q as usize, domains as usize)).unwrap();
    let data: Vec<f64> = (0..n * e).map(|_| StandardNormal.sample(&mut rng)).collect();
    let base = BaseEmbeddings::new(Matrix::from_vec(n, e, data).unwrap()).unwrap();
    let w: Vec<f64> = (0..e * r)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v / (e as f64).sqrt()
        })
        .collect();
    let b: Vec<f64> = (0..r)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            0.1 * v
        })
        .collect();
    let model = ProjectionModel::new(Matrix::from_vec(e, r, w).unwrap(), b).unwrap();
    (corpus, base, model)
}

/// Central finite differences of the total loss over every parameter.
pub fn numeric_grad(
    corpus: &Corpus,
    base: &BaseEmbeddings,
    batches: &[DomainBatch],
    model: &ProjectionModel,
    weights: NegativeWeights<'_>,
    params: &ContrastiveParams,
    step: f64,
) -> Vec<f64> {
    let p0 = model.params();
    let mut m = model.clone();
    (0..p0.len())
        .map(|i| {
            let mut p = p0.clone();
            p[i] = p0[i] + step;
            m.set_params(&p);
            let up = irm_loss(corpus, base, batches, &m, weights, params).unwrap().total;
            p[i] = p0[i] - step;
            m.set_params(&p);
            let down = irm_loss(corpus, base, batches, &m, weights, params).unwrap().total;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `|a − n| / max(|a|, |n|, 1e-6)`: relative error with an absolute floor
/// for parameters whose true gradient is zero.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Mixed-predicate domains with embeddings drawn around one well separated
/// center per predicate.
pub fn separable(seed: u64, n: usize, q: u32, domains: u32, e: usize) -> (Corpus, BaseEmbeddings) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..q)
        .map(|_| (0..e).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let mut samples = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * e);
    for i in 0..n {
        let p = rng.random_range(0..q);
        samples.push(AnnotationSample {
            sample_id: i as u64,
            image_id: format!("img{}", i / 4),
            subject_class: rng.random_range(0..domains),
            object_class: 0,
            predicate: p,
        });
        for c in &centers[p as usize] {
            let eps: f64 = StandardNormal.sample(&mut rng);
            data.push(c + 0.3 * eps);
        }
    }
    let corpus = Corpus::new(samples, vocab(q as usize, domains as usize)).unwrap();
    let base = BaseEmbeddings::new(Matrix::from_vec(n, e, data).unwrap()).unwrap();
    (corpus, base)
}

/// Random corpus with a skewed label law and `c` classes on both sides.
pub fn random_corpus(seed: u64, n: usize, q: u32, c: u32) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<_> = (0..n)
        .map(|i| {
            let u: f64 = rng.random();
            AnnotationSample {
                sample_id: i as u64,
                image_id: format!("img{}", i / 3),
                subject_class: rng.random_range(0..c),
                object_class: rng.random_range(0..c),
                predicate: ((u * u) * q as f64) as u32 % q,
            }
        })
        .collect();
    Corpus::new(samples, vocab(q as usize, c as usize)).unwrap()
}

/// Probability rows that lean toward a per-domain favourite predicate.
pub fn random_probs(seed: u64, corpus: &Corpus) -> ProbMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let q = corpus.num_predicates();
    let rows: Vec<Vec<f64>> = corpus
        .samples()
        .iter()
        .map(|s| {
            let fav = ((s.subject_class * 7 + s.object_class * 3) as usize) % q;
            let mut row: Vec<f64> = (0..q).map(|_| rng.random::<f64>()).collect();
            row[fav] += 2.0 * rng.random::<f64>();
            let sum: f64 = row.iter().sum();
            row.iter().map(|v| v / sum).collect()
        })
        .collect();
    ProbMatrix::new(Matrix::from_rows(&rows).unwrap(), "random").unwrap()
}
