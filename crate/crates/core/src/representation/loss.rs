use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::config::Hyperparameters;
use crate::dataset::{Corpus, Domain};
use crate::error::{DebiasError, Result};
use crate::linalg::{self, Matrix};
use crate::par;

use super::{risk_weight, BaseEmbeddings, Gradient, PhiTable, ProjectionModel};

/// Inner products are clamped to `±COS_CLAMP` before `acos`, in both the
/// value and the gradient path; inside the clamped region the derivative is
/// zero.
pub const COS_CLAMP: f64 = 1.0 - 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveParams {
    pub margin_deg: f64,
    pub temperature: f64,
    pub lambda: f64,
}

impl ContrastiveParams {
    pub fn margin_rad(&self) -> f64 {
        self.margin_deg * core::f64::consts::PI / 180.0
    }
}

impl From<&Hyperparameters> for ContrastiveParams {
    fn from(h: &Hyperparameters) -> Self {
        Self {
            margin_deg: h.margin_deg,
            temperature: h.temperature,
            lambda: h.lambda,
        }
    }
}

/// Weighting of negative pairs.
#[derive(Debug, Clone, Copy)]
pub enum NegativeWeights<'a> {
    /// `1 − sigmoid(φ_neg − φ_anchor)`.
    Risk(&'a PhiTable),
    /// Every negative weighted 1.
    Uniform,
}

impl NegativeWeights<'_> {
    pub fn weight(&self, anchor_pred: u32, neg_pred: u32) -> f64 {
        match self {
            NegativeWeights::Risk(phi) => 1.0 - risk_weight(phi, anchor_pred, neg_pred),
            NegativeWeights::Uniform => 1.0,
        }
    }
}

/// Corpus rows that share one domain.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct DomainBatch {
    pub domain: Domain,
    pub rows: Vec<usize>,
}

impl DomainBatch {
    /// One batch per domain bucket of the corpus.
    pub fn all(corpus: &Corpus) -> Vec<DomainBatch> {
        corpus
            .domain_index()
            .iter()
            .map(|(d, rows)| DomainBatch {
                domain: *d,
                rows: rows.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorLoss {
    pub sample_id: u64,
    pub predicate: u32,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    /// ℓ(d) per batch, in canonical (domain, rows) order.
    pub per_domain: Vec<(Domain, f64)>,
    /// Anchors with a non-empty positive set.
    pub per_anchor: Vec<AnchorLoss>,
    pub per_predicate_variance: Vec<f64>,
}

/// Positive and negative sets of `anchor` within `batch`: other members of
/// the anchor's domain with the same / a different predicate.
pub fn build_sets(corpus: &Corpus, batch: &[u64], anchor: u64) -> Result<(Vec<u64>, Vec<u64>)> {
    if !batch.contains(&anchor) {
        return Err(DebiasError::UnknownSample(anchor));
    }
    let a = corpus.sample(anchor).ok_or(DebiasError::UnknownSample(anchor))?;
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    for &id in batch {
        if id == anchor {
            continue;
        }
        let s = corpus.sample(id).ok_or(DebiasError::UnknownSample(id))?;
        if s.domain() != a.domain() {
            continue;
        }
        if s.predicate == a.predicate {
            plus.push(id);
        } else {
            minus.push(id);
        }
    }
    Ok((plus, minus))
}

fn clamp_cos(c: f64) -> (f64, bool) {
    if c > COS_CLAMP {
        (COS_CLAMP, false)
    } else if c < -COS_CLAMP {
        (-COS_CLAMP, false)
    } else {
        (c, true)
    }
}

/// `cos(min(acos(ĉ) + m, π))` and its derivative with respect to the raw
/// inner product.
fn margin_cos(c: f64, margin: f64) -> (f64, f64) {
    let (c_hat, live) = clamp_cos(c);
    let theta = libm::acos(c_hat);
    let phi = theta + margin;
    if phi >= core::f64::consts::PI {
        return (-1.0, 0.0);
    }
    let d = if live {
        libm::sin(phi) / libm::sqrt(1.0 - c_hat * c_hat)
    } else {
        0.0
    };
    (libm::cos(phi), d)
}

/// `Σ_j exp(cos(θ_j + m)/T)` over the positives.
pub fn f_plus(anchor: &[f64], positives: &[&[f64]], margin_deg: f64, temperature: f64) -> f64 {
    let m = margin_deg * core::f64::consts::PI / 180.0;
    positives
        .iter()
        .map(|z| libm::exp(margin_cos(linalg::dot(anchor, z), m).0 / temperature))
        .sum()
}

/// `Σ_g (1 − sigmoid(φ_g − φ_anchor)) exp(cos θ_g / T)` over the negatives.
pub fn f_minus(
    anchor: &[f64],
    negatives: &[(&[f64], u32)],
    phi: &PhiTable,
    anchor_pred: u32,
    temperature: f64,
) -> f64 {
    let weights = NegativeWeights::Risk(phi);
    negatives
        .iter()
        .map(|(z, p)| {
            let c = clamp_cos(linalg::dot(anchor, z)).0;
            weights.weight(anchor_pred, *p) * libm::exp(c / temperature)
        })
        .sum()
}

/// `−log(f⁺ / (f⁺ + f⁻))`.
pub fn anchor_loss(f_plus: f64, f_minus: f64) -> f64 {
    libm::log1p(f_minus / f_plus)
}

struct AnchorTerms {
    local: usize,
    loss: f64,
    /// `(j, ∂loss/∂(z_anchor · z_j))`
    coeffs: Vec<(usize, f64)>,
}

struct BatchState {
    domain: Domain,
    rows: Vec<usize>,
    z: Matrix,
    norms: Vec<f64>,
    anchors: Vec<AnchorTerms>,
}

/// Per-anchor loss with `exp((·−1)/T)`-shifted terms; the ratio is
/// unchanged by the shift.
fn anchor_terms(
    a: usize,
    z: &Matrix,
    preds: &[u32],
    domains: &[Domain],
    weights: NegativeWeights<'_>,
    params: &ContrastiveParams,
) -> Option<AnchorTerms> {
    let t = params.temperature;
    let m = params.margin_rad();
    let za = z.row(a);
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for j in 0..z.rows() {
        if j == a || domains[j] != domains[a] {
            continue;
        }
        let c = linalg::dot(za, z.row(j));
        if preds[j] == preds[a] {
            let (cm, dcm) = margin_cos(c, m);
            let e = libm::exp((cm - 1.0) / t);
            pos.push((j, e, e * dcm / t));
        } else {
            let w = weights.weight(preds[a], preds[j]);
            let (c_hat, live) = clamp_cos(c);
            let e = w * libm::exp((c_hat - 1.0) / t);
            neg.push((j, e, if live { e / t } else { 0.0 }));
        }
    }
    if pos.is_empty() {
        return None;
    }
    let fp: f64 = pos.iter().map(|x| x.1).sum();
    let fm: f64 = neg.iter().map(|x| x.1).sum();
    let s = fp + fm;
    let d_fp = -fm / (fp * s);
    let d_fm = 1.0 / s;
    let mut coeffs = Vec::with_capacity(pos.len() + neg.len());
    coeffs.extend(pos.iter().map(|&(j, _, de)| (j, d_fp * de)));
    coeffs.extend(neg.iter().map(|&(j, _, de)| (j, d_fm * de)));
    coeffs.sort_unstable_by_key(|x| x.0);
    Some(AnchorTerms {
        local: a,
        loss: anchor_loss(fp, fm),
        coeffs,
    })
}

fn batch_state(
    corpus: &Corpus,
    base: &BaseEmbeddings,
    batch: &DomainBatch,
    model: &ProjectionModel,
    weights: NegativeWeights<'_>,
    params: &ContrastiveParams,
) -> BatchState {
    let mut rows = batch.rows.clone();
    rows.sort_unstable();
    let projected = par::map_indexed(rows.len(), |i| {
        let mut u = model.project(base.row(rows[i]));
        let n = linalg::normalize(&mut u);
        (u, n)
    });
    let mut z = Matrix::zeros(rows.len(), model.rep_dim());
    let mut norms = Vec::with_capacity(rows.len());
    for (i, (u, n)) in projected.into_iter().enumerate() {
        z.row_mut(i).copy_from_slice(&u);
        norms.push(n);
    }
    let samples = corpus.samples();
    let preds: Vec<u32> = rows.iter().map(|&r| samples[r].predicate).collect();
    let domains: Vec<Domain> = rows.iter().map(|&r| samples[r].domain()).collect();
    let anchors = par::map_indexed(rows.len(), |a| {
        anchor_terms(a, &z, &preds, &domains, weights, params)
    })
    .into_iter()
    .flatten()
    .collect();
    BatchState {
        domain: batch.domain,
        rows,
        z,
        norms,
        anchors,
    }
}

fn check_inputs(corpus: &Corpus, base: &BaseEmbeddings, model: &ProjectionModel) -> Result<()> {
    if base.len() != corpus.len() {
        return Err(DebiasError::ShapeMismatch {
            what: "embedding rows vs corpus samples",
            expected: corpus.len(),
            actual: base.len(),
        });
    }
    model.check_input(base)
}

/// Loss and, optionally, its gradient over a list of domain batches.
pub(super) fn evaluate(
    corpus: &Corpus,
    base: &BaseEmbeddings,
    batches: &[DomainBatch],
    model: &ProjectionModel,
    weights: NegativeWeights<'_>,
    params: &ContrastiveParams,
    with_grad: bool,
) -> Result<(LossReport, Option<Gradient>)> {
    check_inputs(corpus, base, model)?;
    let mut canonical: Vec<DomainBatch> = batches
        .iter()
        .map(|b| {
            let mut rows = b.rows.clone();
            rows.sort_unstable();
            DomainBatch {
                domain: b.domain,
                rows,
            }
        })
        .collect();
    canonical.sort();
    let states: Vec<BatchState> = canonical
        .iter()
        .map(|b| batch_state(corpus, base, b, model, weights, params))
        .collect();

    let samples = corpus.samples();
    let q = corpus.num_predicates();
    let mut per_domain = Vec::with_capacity(states.len());
    let mut per_anchor = Vec::new();
    let mut by_class: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut sum_domains = 0.0;
    for st in &states {
        let mut l = 0.0;
        for a in &st.anchors {
            let s = &samples[st.rows[a.local]];
            l += a.loss;
            per_anchor.push(AnchorLoss {
                sample_id: s.sample_id,
                predicate: s.predicate,
                loss: a.loss,
            });
            by_class.entry(s.predicate).or_default().push(a.loss);
        }
        per_domain.push((st.domain, l));
        sum_domains += l;
    }

    let mut per_predicate_variance = alloc::vec![0.0; q];
    let mut class_mean = alloc::vec![0.0; q];
    let mut class_n = alloc::vec![0usize; q];
    for (&p, losses) in &by_class {
        let n = losses.len();
        class_n[p as usize] = n;
        if n < 2 {
            continue;
        }
        let mean = losses.iter().sum::<f64>() / n as f64;
        class_mean[p as usize] = mean;
        per_predicate_variance[p as usize] =
            losses.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    }
    let penalty: f64 = per_predicate_variance.iter().sum();
    let report = LossReport {
        total: sum_domains + params.lambda * penalty,
        per_domain,
        per_anchor,
        per_predicate_variance,
    };
    if !with_grad {
        return Ok((report, None));
    }

    let mut grad = Gradient::zeros(model.embed_dim(), model.rep_dim());
    let r_dim = model.rep_dim();
    for st in &states {
        let mut gz = Matrix::zeros(st.rows.len(), r_dim);
        for a in &st.anchors {
            let p = samples[st.rows[a.local]].predicate as usize;
            let upstream = if class_n[p] >= 2 {
                1.0 + params.lambda * 2.0 / class_n[p] as f64 * (a.loss - class_mean[p])
            } else {
                1.0
            };
            for &(j, k) in &a.coeffs {
                let coef = upstream * k;
                for r in 0..r_dim {
                    let zj = st.z.get(j, r);
                    let za = st.z.get(a.local, r);
                    gz.set(a.local, r, gz.get(a.local, r) + coef * zj);
                    gz.set(j, r, gz.get(j, r) + coef * za);
                }
            }
        }
        for (i, &row) in st.rows.iter().enumerate() {
            let n = st.norms[i];
            if n == 0.0 {
                continue;
            }
            let z = st.z.row(i);
            let g = gz.row(i);
            let radial = linalg::dot(z, g);
            let gu: Vec<f64> = g.iter().zip(z).map(|(gv, zv)| (gv - radial * zv) / n).collect();
            grad.accumulate(base.row(row), &gu);
        }
    }
    Ok((report, Some(grad)))
}

/// ℓ(d): the sum of per-anchor losses of one domain batch.
pub fn domain_loss(
    corpus: &Corpus,
    base: &BaseEmbeddings,
    batch: &DomainBatch,
    model: &ProjectionModel,
    weights: NegativeWeights<'_>,
    params: &ContrastiveParams,
) -> Result<f64> {
    check_inputs(corpus, base, model)?;
    let st = batch_state(corpus, base, batch, model, weights, params);
    Ok(st.anchors.iter().map(|a| a.loss).sum())
}

/// `Σ_d ℓ(d) + λ Σ_q Var_q`, with `Var_q` the population variance of the
/// per-anchor losses of predicate `q` (zero below two anchors).
pub fn irm_loss(
    corpus: &Corpus,
    base: &BaseEmbeddings,
    batches: &[DomainBatch],
    model: &ProjectionModel,
    weights: NegativeWeights<'_>,
    params: &ContrastiveParams,
) -> Result<LossReport> {
    evaluate(corpus, base, batches, model, weights, params, false).map(|(r, _)| r)
}
