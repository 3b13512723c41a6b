use alloc::vec::Vec;

use crate::dataset::Corpus;
use crate::error::Result;
use crate::linalg::Matrix;

use super::loss::{evaluate, ContrastiveParams, DomainBatch, LossReport, NegativeWeights};
use super::{BaseEmbeddings, ProjectionModel};

/// Gradient with respect to the projection head parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Gradient {
    pub fn zeros(embed_dim: usize, rep_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(embed_dim, rep_dim),
            bias: alloc::vec![0.0; rep_dim],
        }
    }

    /// Adds the outer product `h ⊗ g_u` to `W` and `g_u` to `b`.
    pub(super) fn accumulate(&mut self, h: &[f64], gu: &[f64]) {
        for (e, &he) in h.iter().enumerate() {
            if he == 0.0 {
                continue;
            }
            for (w, &g) in self.weight.row_mut(e).iter_mut().zip(gu) {
                *w += he * g;
            }
        }
        for (b, &g) in self.bias.iter_mut().zip(gu) {
            *b += g;
        }
    }

    /// Same layout as [`ProjectionModel::params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.weight.as_slice().to_vec();
        v.extend_from_slice(&self.bias);
        v
    }

    pub fn max_abs(&self) -> f64 {
        self.flat().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Analytic gradient of the total loss through normalization, the angular
/// margin and the arccos chain, together with the loss report at the same
/// point.
pub fn grad_irm(
    corpus: &Corpus,
    base: &BaseEmbeddings,
    batches: &[DomainBatch],
    model: &ProjectionModel,
    weights: NegativeWeights<'_>,
    params: &ContrastiveParams,
) -> Result<(LossReport, Gradient)> {
    let (report, grad) = evaluate(corpus, base, batches, model, weights, params, true)?;
    Ok((report, grad.expect("requested")))
}
