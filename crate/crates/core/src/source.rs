//! Supervised training of the source model on clean cluster data.

use rand::Rng;

use crate::diffnet::{cross_entropy_and_grad, Network};
use crate::driftgen::Prototypes;
use crate::seed::substream;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct SourceTraining {
    /// Hidden layer widths; the network has `hidden.len() + 1` layers.
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for SourceTraining {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            steps: 1500,
            batch_size: 64,
            learning_rate: 0.1,
        }
    }
}

/// Trains a fresh network on clean samples. Initialization and data draw
/// from their own sub-streams of `seed`.
pub fn train_source(prototypes: &Prototypes, settings: &SourceTraining, seed: u64) -> Result<Network> {
    let mut dims = vec![prototypes.dim()];
    dims.extend(&settings.hidden);
    dims.push(prototypes.class_count());
    let mut net = Network::random(&dims, &mut substream(seed, "source-init"))?;
    let mut rng = substream(seed, "source-data");
    for _ in 0..settings.steps {
        let labels: Vec<usize> = (0..settings.batch_size)
            .map(|_| rng.random_range(0..prototypes.class_count()))
            .collect();
        let x = prototypes.sample(&labels, &mut rng);
        let (logits, trace) = net.forward(&x)?;
        let (_, up) = cross_entropy_and_grad(&logits, &labels)?;
        let grads = net.backward(&trace, &up)?;
        net.sgd_step(&grads, settings.learning_rate)?;
    }
    Ok(net)
}

/// Accuracy on `samples` fresh clean points.
pub fn clean_accuracy(net: &Network, prototypes: &Prototypes, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = substream(seed, "clean-eval");
    let labels: Vec<usize> = (0..samples)
        .map(|_| rng.random_range(0..prototypes.class_count()))
        .collect();
    let x = prototypes.sample(&labels, &mut rng);
    let preds = net.logits(&x)?.argmax_rows();
    let correct = preds.iter().zip(&labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / samples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driftgen::make_prototypes;

    #[test]
    fn clean_accuracy_is_high() {
        let protos = make_prototypes(0, 10, 16, 0.5).unwrap();
        let net = train_source(&protos, &SourceTraining::default(), 0).unwrap();
        assert_eq!(net.layer_count(), 3);
        assert!(clean_accuracy(&net, &protos, 2000, 1).unwrap() >= 0.95);
    }

    #[test]
    fn training_is_reproducible() {
        let protos = make_prototypes(2, 4, 4, 0.5).unwrap();
        let s = SourceTraining {
            steps: 20,
            ..SourceTraining::default()
        };
        assert_eq!(train_source(&protos, &s, 3).unwrap(), train_source(&protos, &s, 3).unwrap());
    }
}
