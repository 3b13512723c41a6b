//! Predicate representations learned with a within-domain contrastive
//! objective: angular margin on positives, risk-weighted negatives and a
//! per-predicate loss variance penalty.
//!
//! The trainable part is a linear projection head over fixed base sentence
//! embeddings; representations are the L2-normalized head outputs.

mod embed;
mod grad;
mod loss;
mod train;

pub use embed::{embed_base, hash_embed, EmbeddingSource, ProviderSpec};
pub use grad::{grad_irm, Gradient};
pub use loss::{
    anchor_loss, build_sets, domain_loss, f_minus, f_plus, irm_loss, AnchorLoss, ContrastiveParams,
    DomainBatch, LossReport, NegativeWeights, COS_CLAMP,
};
pub use train::{train, train_from, TrainOutput};

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{DebiasError, Result};
use crate::linalg::{self, Matrix};
use crate::risk::RiskTable;

/// Fixed input embeddings, one row per sample in `sample_id` order.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseEmbeddings(pub Matrix);

impl BaseEmbeddings {
    pub fn new(matrix: Matrix) -> Result<Self> {
        if !matrix.is_finite() {
            return Err(DebiasError::InvalidConfig("non-finite base embedding".into()));
        }
        Ok(Self(matrix))
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn row(&self, r: usize) -> &[f64] {
        self.0.row(r)
    }

    pub fn select_rows(&self, rows: &[usize]) -> BaseEmbeddings {
        BaseEmbeddings(self.0.select_rows(rows))
    }
}

/// `z = normalize(Wᵀh + b)` with `W: E × R`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionModel {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl ProjectionModel {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.cols() {
            return Err(DebiasError::ShapeMismatch {
                what: "bias length vs representation dim",
                expected: weight.cols(),
                actual: bias.len(),
            });
        }
        Ok(Self { weight, bias })
    }

    /// Gaussian weights with variance `1/E`, zero bias.
    pub fn init<R: Rng>(embed_dim: usize, rep_dim: usize, rng: &mut R) -> Self {
        let std = 1.0 / libm::sqrt(embed_dim.max(1) as f64);
        let normal = Normal::new(0.0, std).expect("finite std");
        let data = (0..embed_dim * rep_dim).map(|_| normal.sample(rng)).collect();
        Self {
            weight: Matrix::from_vec(embed_dim, rep_dim, data).expect("sized"),
            bias: alloc::vec![0.0; rep_dim],
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn rep_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn num_params(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }

    /// Pre-normalization output `Wᵀh + b`.
    pub fn project(&self, h: &[f64]) -> Vec<f64> {
        let mut u = self.bias.clone();
        for (e, &he) in h.iter().enumerate() {
            if he != 0.0 {
                for (ur, &w) in u.iter_mut().zip(self.weight.row(e)) {
                    *ur += he * w;
                }
            }
        }
        u
    }

    /// Unit-norm representation. A zero projection stays zero.
    pub fn represent(&self, h: &[f64]) -> Vec<f64> {
        let mut u = self.project(h);
        linalg::normalize(&mut u);
        u
    }

    pub fn represent_all(&self, base: &BaseEmbeddings) -> Matrix {
        let mut out = Matrix::zeros(base.len(), self.rep_dim());
        for r in 0..base.len() {
            out.row_mut(r).copy_from_slice(&self.represent(base.row(r)));
        }
        out
    }

    pub fn check_input(&self, base: &BaseEmbeddings) -> Result<()> {
        if base.dim() != self.embed_dim() {
            return Err(DebiasError::ShapeMismatch {
                what: "base embedding dim vs model input dim",
                expected: self.embed_dim(),
                actual: base.dim(),
            });
        }
        Ok(())
    }

    /// Flat parameter view: `W` row-major followed by `b`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weight.as_slice().to_vec();
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let n = self.weight.as_slice().len();
        self.weight.as_mut_slice().copy_from_slice(&params[..n]);
        self.bias.copy_from_slice(&params[n..]);
    }
}

/// Predicate-wise risks `φ_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiTable(pub Vec<f64>);

impl PhiTable {
    pub fn get(&self, p: u32) -> f64 {
        self.0[p as usize]
    }
}

/// `φ_p = Σ_d N_d · R_d[p]`, the per-sample, per-domain risk double sum
/// collapsed by domain.
pub fn phi_table(risk: &RiskTable) -> PhiTable {
    let mut phi = alloc::vec![0.0; risk.num_predicates()];
    for (domain, r) in risk.domains() {
        let n = risk.sample_count(domain) as f64;
        for (acc, &v) in phi.iter_mut().zip(r) {
            *acc += n * v;
        }
    }
    PhiTable(phi)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Risk of a negative with predicate `p_k` for an anchor with predicate
/// `p_i`: `sigmoid(φ_k − φ_i)`.
pub fn risk_weight(phi: &PhiTable, p_i: u32, p_k: u32) -> f64 {
    sigmoid(phi.get(p_k) - phi.get(p_i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{AnnotationSample, Corpus, Vocab};
    use crate::risk::{compute_risk_table, ProbMatrix};
    use alloc::string::ToString;
    use alloc::vec;

    fn corpus(spec: &[(u32, u32, u32)]) -> Corpus {
        let samples = spec
            .iter()
            .enumerate()
            .map(|(i, &(s, p, o))| AnnotationSample {
                sample_id: i as u64,
                image_id: "i".to_string(),
                subject_class: s,
                object_class: o,
                predicate: p,
            })
            .collect();
        Corpus::new(
            samples,
            Vocab {
                predicates: vec!["a".into(), "b".into()],
                classes: vec!["x".into(), "y".into()],
            },
        )
        .unwrap()
    }

    #[test]
    fn phi_single_domain() {
        let c = corpus(&[(0, 0, 1), (0, 0, 1), (0, 1, 1)]);
        // Construct the table so the domain risks are exactly (0.6, 0.4):
        // raw sums differ by ln(1.5).
        let d = libm::log(1.5) / 3.0;
        let row = vec![0.5 + d / 2.0, 0.5 - d / 2.0];
        let p = ProbMatrix::new(Matrix::from_rows(&vec![row; 3]).unwrap(), "t").unwrap();
        let t = compute_risk_table(&c, &p).unwrap();
        let phi = phi_table(&t);
        assert!((phi.0[0] - 1.8).abs() < 1e-12);
        assert!((phi.0[1] - 1.2).abs() < 1e-12);

        // Naive per-sample loop.
        let mut naive = [0.0; 2];
        for s in c.samples() {
            let r = t.risks(&s.domain()).unwrap();
            naive[0] += r[0];
            naive[1] += r[1];
        }
        assert!((phi.0[0] - naive[0]).abs() < 1e-12);
        assert!((phi.0[1] - naive[1]).abs() < 1e-12);
    }

    #[test]
    fn phi_uniform_risks() {
        let c = corpus(&[(0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 0)]);
        let p = ProbMatrix::new(Matrix::from_rows(&vec![vec![0.5, 0.5]; 4]).unwrap(), "t").unwrap();
        let phi = phi_table(&compute_risk_table(&c, &p).unwrap());
        assert_eq!(phi.0, vec![2.0, 2.0]);
    }

    #[test]
    fn risk_weight_values() {
        let phi = PhiTable(vec![1.8, 1.2]);
        assert_eq!(risk_weight(&phi, 0, 0), 0.5);
        assert!((risk_weight(&phi, 0, 1) - 0.354_343_693_774_204_2).abs() < 1e-12);
        let far = PhiTable(vec![0.0, 1e6]);
        assert_eq!(risk_weight(&far, 0, 1), 1.0);
        assert_eq!(risk_weight(&far, 1, 0), 0.0);
        let near = PhiTable(vec![0.0, 40.0]);
        assert!(risk_weight(&near, 1, 0) > 0.0);
        assert_eq!(1.0 - risk_weight(&near, 0, 1), 0.0);
    }

    #[test]
    fn representations_are_unit_norm() {
        let mut rng = crate::rng::substream(3, crate::rng::INIT);
        let model = ProjectionModel::init(16, 8, &mut rng);
        let h: Vec<f64> = (0..16).map(|i| libm::sin(i as f64 * 0.37)).collect();
        let z = model.represent(&h);
        assert!((linalg::norm(&z) - 1.0).abs() < 1e-12);
    }
}
