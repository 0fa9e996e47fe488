use serde::{Deserialize, Serialize};

use super::dense::DenseTensor;
use super::lowrank::{LowRankSpec, LowRankWeight, Structure};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TtlLayer {
    pub output_shape: Vec<usize>,
    #[serde(default)]
    pub structure: Structure,
    /// Half-size ranks when absent.
    #[serde(default)]
    pub ranks: Option<Vec<usize>>,
}

impl TtlLayer {
    pub fn tucker(output_shape: &[usize]) -> Self {
        Self {
            output_shape: output_shape.to_vec(),
            structure: Structure::Tucker,
            ranks: None,
        }
    }
}

/// Stack of tensor transformation layers. Every layer except the last is
/// followed by the activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TtlConfig {
    pub layers: Vec<TtlLayer>,
    #[serde(default)]
    pub activation: Activation,
}

impl TtlConfig {
    /// Number of activated layers.
    pub fn activated_layers(&self) -> usize {
        self.layers.len().saturating_sub(1)
    }

    pub fn output_shape(&self) -> Option<&[usize]> {
        self.layers.last().map(|l| l.output_shape.as_slice())
    }

    /// Weight specs for an input with the given (non-batch) modes.
    pub fn specs(&self, input_shape: &[usize]) -> Result<Vec<LowRankSpec>> {
        if self.layers.len() < 2 {
            return Err(Error::Config(
                "a transformation stack needs at least one activated layer and a final layer".into(),
            ));
        }
        let mut shape = input_shape.to_vec();
        self.layers
            .iter()
            .map(|layer| {
                let spec = LowRankSpec::new(layer.structure, &shape, &layer.output_shape, layer.ranks.clone())?;
                shape = layer.output_shape.clone();
                Ok(spec)
            })
            .collect()
    }
}

/// Eager forward pass through a transformation stack; biases are added
/// over the batch modes.
pub fn ttl_forward(
    config: &TtlConfig,
    weights: &[LowRankWeight],
    biases: &[DenseTensor],
    input: &DenseTensor,
) -> Result<DenseTensor> {
    if weights.len() != config.layers.len() || biases.len() != config.layers.len() {
        return Err(Error::shape(format!(
            "{} layers configured, got {} weights and {} biases",
            config.layers.len(),
            weights.len(),
            biases.len()
        )));
    }
    let mut h = input.clone();
    let mut modes: Option<&[usize]> = None;
    let last = weights.len() - 1;
    for (i, (w, b)) in weights.iter().zip(biases).enumerate() {
        if modes.is_some_and(|m| m != w.spec.input_shape) || w.spec.output_shape != config.layers[i].output_shape {
            return Err(Error::shape(format!(
                "layer {i}: weight maps {:?} -> {:?}, which does not chain",
                w.spec.input_shape, w.spec.output_shape
            )));
        }
        if b.shape() != w.spec.output_shape {
            return Err(Error::shape(format!(
                "layer {i}: bias shape {:?}, expected {:?}",
                b.shape(),
                w.spec.output_shape
            )));
        }
        h = w.contract(&h).map_err(|e| Error::shape(format!("layer {i}: {e}")))?;
        h = h.add_trailing(b)?;
        if i < last {
            h = h.map(|x| config.activation.apply(x));
        }
        modes = Some(&w.spec.output_shape);
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_layer(d: usize) -> LowRankWeight {
        let spec = LowRankSpec::new(Structure::Dense, &[d], &[d], None).unwrap();
        LowRankWeight::new(spec, vec![DenseTensor::eye(d)]).unwrap()
    }

    fn config(d: usize) -> TtlConfig {
        TtlConfig {
            layers: vec![
                TtlLayer {
                    output_shape: vec![d],
                    structure: Structure::Dense,
                    ranks: None,
                },
                TtlLayer {
                    output_shape: vec![d],
                    structure: Structure::Dense,
                    ranks: None,
                },
            ],
            activation: Activation::Relu,
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let cfg = TtlConfig {
            layers: vec![TtlLayer::tucker(&[2, 2]), TtlLayer::tucker(&[3])],
            activation: Activation::Relu,
        };
        let specs = cfg.specs(&[2, 3]).unwrap();
        let weights: Vec<_> = specs
            .iter()
            .map(|s| {
                let f = s.factor_shapes().iter().map(|sh| DenseTensor::zeros(sh)).collect();
                LowRankWeight::new(s.clone(), f).unwrap()
            })
            .collect();
        let biases = vec![DenseTensor::zeros(&[2, 2]), DenseTensor::zeros(&[3])];
        let x = DenseTensor::filled(&[4, 2, 3], 1.5);
        let y = ttl_forward(&cfg, &weights, &biases, &x).unwrap();
        assert_eq!(y.shape(), &[4, 3]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layers_pass_non_negative_input() {
        let cfg = config(3);
        let w = vec![identity_layer(3), identity_layer(3)];
        let b = vec![DenseTensor::zeros(&[3]), DenseTensor::zeros(&[3])];
        let x = DenseTensor::from_vec(vec![2, 3], vec![0., 1., 2., 3., 4., 5.]).unwrap();
        assert_eq!(ttl_forward(&cfg, &w, &b, &x).unwrap(), x);
    }

    #[test]
    fn chain_mismatch_names_layer() {
        let cfg = config(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bad = LowRankWeight::random(LowRankSpec::new(Structure::Dense, &[2], &[3], None).unwrap(), &mut rng);
        let w = vec![identity_layer(3), bad];
        let b = vec![DenseTensor::zeros(&[3]), DenseTensor::zeros(&[3])];
        let err = ttl_forward(&cfg, &w, &b, &DenseTensor::zeros(&[1, 3])).unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");
    }

    #[test]
    fn single_layer_stack_is_rejected() {
        let cfg = TtlConfig {
            layers: vec![TtlLayer::tucker(&[2])],
            activation: Activation::Relu,
        };
        assert!(cfg.specs(&[2]).is_err());
    }
}
