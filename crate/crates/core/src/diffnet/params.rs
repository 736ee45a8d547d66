use super::Matrix;
use crate::{Error, Result};

/// Weights and bias of one dense layer, or any buffer shaped like them.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LayerParams {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weights: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.as_slice().len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights.as_slice().iter().chain(self.bias.iter())
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.as_mut_slice().iter_mut().chain(self.bias.iter_mut())
    }

    fn congruent(&self, other: &LayerParams) -> bool {
        self.weights.shape() == other.weights.shape() && self.bias.len() == other.bias.len()
    }
}

/// Per-layer buffers shape-aligned with a [`super::Network`].
///
/// Used for parameter snapshots, gradients and the knowledge stores.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    layers: Vec<LayerParams>,
}

pub type GradientSet = ParamSet;
pub type ParameterSnapshot = ParamSet;

impl ParamSet {
    pub fn new(layers: Vec<LayerParams>) -> Self {
        Self { layers }
    }

    pub fn zeros_like(other: &ParamSet) -> Self {
        Self {
            layers: other
                .layers
                .iter()
                .map(|l| LayerParams {
                    weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> &LayerParams {
        &self.layers[index]
    }


    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Total number of scalar entries.
    pub fn len(&self) -> usize {
        self.layers.iter().map(LayerParams::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat iteration, layer by layer, weights before bias.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(LayerParams::iter)
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(LayerParams::iter_mut)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    /// Overwrites entries from a flat vector laid out as [`ParamSet::iter`].
    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::Shape(format!(
                "flat vector has {} entries, parameter set has {}",
                values.len(),
                self.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("flat parameter vector".into()));
        }
        for (dst, src) in self.iter_mut().zip(values) {
            *dst = *src;
        }
        Ok(())
    }

    pub fn is_congruent(&self, other: &ParamSet) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.congruent(b))
    }

    pub(crate) fn check_congruent(&self, other: &ParamSet, what: &str) -> Result<()> {
        if self.is_congruent(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!("{what}: parameter sets are not shape-congruent")))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.iter().all(|v| *v == 0.0)
    }

    pub fn fill_zero(&mut self) {
        self.iter_mut().for_each(|v| *v = 0.0);
    }

    /// `self += k * other`, entrywise.
    pub fn add_scaled(&mut self, other: &ParamSet, k: f64) -> Result<()> {
        self.check_congruent(other, "add_scaled")?;
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += k * b;
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> ParamSet {
        let mut out = self.clone();
        out.iter_mut().for_each(|v| *v *= k);
        out
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &ParamSet) -> Result<f64> {
        self.check_congruent(other, "max_abs_diff")?;
        Ok(self
            .iter()
            .zip(other.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet {
        ParamSet::new(vec![
            LayerParams {
                weights: Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap(),
                bias: vec![3.0],
            },
            LayerParams {
                weights: Matrix::from_rows(&[vec![4.0], vec![5.0]]).unwrap(),
                bias: vec![6.0, 7.0],
            },
        ])
    }

    #[test]
    fn flat_layout_is_weights_then_bias() {
        assert_eq!(sample().to_flat(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn set_flat_checks_length() {
        let mut p = sample();
        assert!(p.set_flat(&[0.0; 3]).is_err());
        p.set_flat(&[0.0; 7]).unwrap();
        assert!(p.is_zero());
    }

    #[test]
    fn incongruent_add_fails() {
        let mut a = sample();
        let b = ParamSet::new(vec![LayerParams::zeros(1, 1)]);
        assert!(a.add_scaled(&b, 1.0).is_err());
    }
}
