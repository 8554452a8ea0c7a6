use serde::{Deserialize, Serialize};

/// Per-row nonnegative weights with their `p` and one-sidedness factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    p: f64,
    weights: Vec<f64>,
    gamma: f64,
    sum: f64,
}

impl WeightVector {
    pub fn new(p: f64, weights: Vec<f64>, gamma: f64) -> Self {
        let sum = weights.iter().sum();
        Self { p, weights, gamma, sum }
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sum(&self) -> f64 {
        self.sum
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Every weight multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self::new(self.p, self.weights.iter().map(|w| w * c).collect(), self.gamma)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.weights
    }
}
