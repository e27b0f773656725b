//! Weighted binary logistic loss, one binary problem per class.

use std::collections::BTreeSet;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Per-class ±1 targets: +1 present, −1 absent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVector(Vec<i8>);

impl LabelVector {
    pub fn new(values: Vec<i8>) -> Result<Self> {
        if let Some(v) = values.iter().find(|&&v| v != 1 && v != -1) {
            return Err(Error::InvalidInput(format!("label entries must be ±1, got {v}")));
        }
        Ok(LabelVector(values))
    }

    /// +1 for the classes in `present`, −1 elsewhere.
    pub fn from_present(classes: usize, present: &BTreeSet<usize>) -> Self {
        LabelVector((0..classes).map(|c| if present.contains(&c) { 1 } else { -1 }).collect())
    }

    pub fn values(&self) -> &[i8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn negated(&self) -> Self {
        LabelVector(self.0.iter().map(|v| -v).collect())
    }
}

/// Weight applied to the positive term of each class; negatives weigh 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassWeights(pub Vec<f64>);

impl ClassWeights {
    pub fn uniform(classes: usize) -> Self {
        ClassWeights(vec![1.0; classes])
    }

    pub fn weight(&self, class: usize, label: i8) -> f64 {
        if label > 0 {
            self.0[class]
        } else {
            1.0
        }
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `Σ_c w_c log(1 + exp(−l_c S_c))` and its gradient with respect to `S`.
pub fn logistic_loss(scores: &[f64], labels: &LabelVector, weights: &ClassWeights) -> (f64, Vec<f64>) {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    assert_eq!(scores.len(), weights.0.len(), "scores and weights differ in length");
    let mut total = 0.0;
    let grad = scores
        .iter()
        .zip(labels.values())
        .enumerate()
        .map(|(c, (&s, &l))| {
            let w = weights.weight(c, l);
            let l = l as f64;
            total += w * softplus(-l * s);
            -w * l * sigmoid(-l * s)
        })
        .collect();
    (total, grad)
}

/// Loss summed over classes and averaged over the batch, with dL/dS.
pub fn batch_loss<T: Scalar>(
    scores: &Tensor<T>,
    labels: &[LabelVector],
    weights: &ClassWeights,
) -> Result<(f64, Tensor<T>)> {
    let n = scores.batch();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} label vectors for a batch of {n}", labels.len())));
    }
    let mut grad = Tensor::zeros(scores.shape());
    let mut total = 0.0;
    for (i, l) in labels.iter().enumerate() {
        let s: Vec<f64> = scores.sample(i).iter().map(|v| v.as_f64()).collect();
        if s.len() != l.len() || s.len() != weights.0.len() {
            return Err(Error::Shape(format!(
                "{} scores, {} labels, {} weights",
                s.len(),
                l.len(),
                weights.0.len()
            )));
        }
        let (loss, g) = logistic_loss(&s, l, weights);
        total += loss;
        for (dst, v) in grad.sample_mut(i).iter_mut().zip(g) {
            *dst = T::from_f64(v / n as f64);
        }
    }
    Ok((total / n as f64, grad))
}
