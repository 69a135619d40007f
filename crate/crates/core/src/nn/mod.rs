//! Multilayer perceptrons for the generator and the critics.

mod adam;

pub use adam::{AdamConfig, AdamState};

use rand::Rng as _;
use thiserror::Error;

use crate::autodiff::{AutodiffError, GradientMap, Graph, NodeId, Tensor};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("input width {got} does not match network input {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("parameter {index}: shape {got:?} does not match {expected:?}")]
    ParamShape {
        index: usize,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("expected {expected} gradient tensors, got {got}")]
    GradientCount { expected: usize, got: usize },
    #[error("no gradient for parameter node {0}")]
    MissingGradient(usize),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Hidden-layer nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Tanh,
}

impl Activation {
    pub const CRITIC_DEFAULT: Activation = Activation::LeakyRelu(0.2);
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        output_dim: usize,
        activation: Activation,
    ) -> Result<Self, NnError> {
        let spec = Self {
            input_dim,
            hidden_dims,
            output_dim,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(NnError::InvalidSpec(format!(
                "all dimensions must be positive: {} -> {:?} -> {}",
                self.input_dim, self.hidden_dims, self.output_dim
            )));
        }
        if let Activation::LeakyRelu(s) = self.activation {
            if !s.is_finite() {
                return Err(NnError::InvalidSpec("leaky-relu slope must be finite".into()));
            }
        }
        Ok(())
    }

    /// Layer widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.hidden_dims.len() + 2);
        d.push(self.input_dim);
        d.extend_from_slice(&self.hidden_dims);
        d.push(self.output_dim);
        d
    }
}

/// Weight `[out, in]` and bias `[out]` of one affine layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub spec: MlpSpec,
    pub seed: u64,
    pub layers: Vec<Layer>,
}

/// Xavier-uniform weights and zero biases, deterministic in `seed`.
pub fn init_mlp(spec: &MlpSpec, seed: u64) -> MlpParams {
    let mut rng = rng::seeded(seed);
    let dims = spec.dims();
    let layers = dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            Layer {
                weight: Tensor::from_parts(vec![fan_out, fan_in], data),
                bias: Tensor::zeros(&[fan_out]),
            }
        })
        .collect();
    MlpParams {
        spec: spec.clone(),
        seed,
        layers,
    }
}

impl MlpParams {
    /// Build from explicit layers, checking that shapes chain.
    pub fn from_layers(spec: MlpSpec, seed: u64, layers: Vec<Layer>) -> Result<Self, NnError> {
        spec.validate()?;
        let dims = spec.dims();
        if layers.len() != dims.len() - 1 {
            return Err(NnError::InvalidSpec(format!(
                "{} layers given, spec needs {}",
                layers.len(),
                dims.len() - 1
            )));
        }
        for (i, (layer, w)) in layers.iter().zip(dims.windows(2)).enumerate() {
            let expected = vec![w[1], w[0]];
            if layer.weight.shape() != expected.as_slice() {
                return Err(NnError::ParamShape {
                    index: 2 * i,
                    expected,
                    got: layer.weight.shape().to_vec(),
                });
            }
            if layer.bias.shape() != [w[1]] {
                return Err(NnError::ParamShape {
                    index: 2 * i + 1,
                    expected: vec![w[1]],
                    got: layer.bias.shape().to_vec(),
                });
            }
        }
        Ok(Self { spec, seed, layers })
    }

    /// Parameters in `[w0, b0, w1, b1, ...]` order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Register the parameters in `graph`, as differentiable leaves when
    /// `trainable` and as constants otherwise.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> BoundMlp {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    (graph.param(l.weight.clone()), graph.param(l.bias.clone()))
                } else {
                    (graph.constant(l.weight.clone()), graph.constant(l.bias.clone()))
                }
            })
            .collect();
        BoundMlp {
            layers,
            activation: self.spec.activation,
            input_dim: self.spec.input_dim,
        }
    }

    /// Value-only forward pass.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        mlp_forward(self, x)
    }
}

/// Parameters of one MLP registered in a particular graph.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    layers: Vec<(NodeId, NodeId)>,
    activation: Activation,
    input_dim: usize,
}

impl BoundMlp {
    pub fn param_ids(&self) -> Vec<NodeId> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    /// Affine then activation for every hidden layer; the last layer is
    /// affine only. `x` must be `[batch, input_dim]`.
    pub fn forward(&self, graph: &mut Graph, x: NodeId) -> Result<NodeId, NnError> {
        match graph.shape(x) {
            &[_, w] if w == self.input_dim => {}
            &[_, w] => {
                return Err(NnError::WidthMismatch {
                    expected: self.input_dim,
                    got: w,
                })
            }
            other => {
                return Err(AutodiffError::RankMismatch {
                    op: "mlp_forward",
                    expected: 2,
                    shape: other.to_vec(),
                }
                .into())
            }
        }
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wt = graph.transpose(w)?;
            let z = graph.matmul(h, wt)?;
            h = graph.add_bias(z, b)?;
            if i < last {
                h = match self.activation {
                    Activation::LeakyRelu(slope) => graph.leaky_relu(h, slope)?,
                    Activation::Tanh => graph.tanh(h)?,
                };
            }
        }
        Ok(h)
    }

    /// Gradients for this network in `[w0, b0, ...]` order.
    pub fn collect_grads(&self, grads: &GradientMap) -> Result<Vec<Tensor>, NnError> {
        self.param_ids()
            .into_iter()
            .map(|id| {
                grads
                    .get(id)
                    .cloned()
                    .ok_or(NnError::MissingGradient(id.index()))
            })
            .collect()
    }
}

/// Run `params` on a `[batch, input_dim]` batch without recording gradients.
pub fn mlp_forward(params: &MlpParams, x: &Tensor) -> Result<Tensor, NnError> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let xn = g.constant(x.clone());
    let out = bound.forward(&mut g, xn)?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn critic_spec() -> MlpSpec {
        MlpSpec::new(64, vec![128], 1, Activation::CRITIC_DEFAULT).unwrap()
    }

    #[test]
    fn init_shapes_follow_spec() {
        let p = init_mlp(&critic_spec(), 3);
        assert_eq!(p.layers.len(), 2);
        assert_eq!(p.layers[0].weight.shape(), &[128, 64]);
        assert_eq!(p.layers[0].bias.shape(), &[128]);
        assert_eq!(p.layers[1].weight.shape(), &[1, 128]);
        assert_eq!(p.layers[1].bias.shape(), &[1]);
        assert!(p.layers.iter().all(|l| l.bias.data().iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(init_mlp(&critic_spec(), 11), init_mlp(&critic_spec(), 11));
        assert_ne!(init_mlp(&critic_spec(), 11), init_mlp(&critic_spec(), 12));
    }

    #[test]
    fn init_weights_respect_bound_and_center() {
        let p = init_mlp(&critic_spec(), 5);
        let w = &p.layers[0].weight;
        let bound = (6.0f64 / (64.0 + 128.0)).sqrt();
        assert!(w.data().iter().all(|x| x.abs() <= bound));
        // U(-a, a) has variance a^2 / 3; the sample mean of n draws has
        // standard deviation a / sqrt(3 n).
        let n = w.len() as f64;
        let sigma_mean = bound / (3.0 * n).sqrt();
        assert!(w.mean().abs() < 3.0 * sigma_mean, "mean {}", w.mean());
    }

    #[test]
    fn rejects_zero_dims() {
        assert!(MlpSpec::new(0, vec![4], 1, Activation::Tanh).is_err());
        assert!(MlpSpec::new(3, vec![0], 1, Activation::Tanh).is_err());
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let spec = MlpSpec::new(2, vec![], 2, Activation::Tanh).unwrap();
        let layer = Layer {
            weight: Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]),
            bias: Tensor::zeros(&[2]),
        };
        let p = MlpParams::from_layers(spec, 0, vec![layer]).unwrap();
        let y = p.forward(&Tensor::from_rows(&[vec![1.0, 2.0]])).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_weights_return_bias() {
        let spec = MlpSpec::new(3, vec![4], 1, Activation::CRITIC_DEFAULT).unwrap();
        let mut p = init_mlp(&spec, 1);
        for t in p.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        p.layers[1].bias.data_mut()[0] = 2.5;
        let x = Tensor::from_rows(&[vec![1.0, -4.0, 9.0], vec![0.0, 0.0, 0.0]]);
        assert_eq!(p.forward(&x).unwrap().data(), &[2.5, 2.5]);
    }

    #[test]
    fn critic_output_shape_and_node_count() {
        let p = init_mlp(&critic_spec(), 2);
        let x = Tensor::full(&[3, 64], 0.1);
        assert_eq!(p.forward(&x).unwrap().shape(), &[3, 1]);

        let mut g = Graph::new();
        let bound = p.bind(&mut g, true);
        let xn = g.constant(x);
        let before = g.len();
        bound.forward(&mut g, xn).unwrap();
        // transpose + matmul + bias per layer, activation per hidden layer
        assert_eq!(g.len() - before, 2 * 3 + 1);
    }

    #[test]
    fn width_mismatch_is_reported() {
        let p = init_mlp(&critic_spec(), 2);
        let err = p.forward(&Tensor::zeros(&[2, 8])).unwrap_err();
        assert_eq!(err, NnError::WidthMismatch { expected: 64, got: 8 });
    }

    #[test]
    fn mismatched_layers_rejected() {
        let spec = MlpSpec::new(2, vec![], 1, Activation::Tanh).unwrap();
        let layer = Layer {
            weight: Tensor::zeros(&[2, 2]),
            bias: Tensor::zeros(&[1]),
        };
        assert!(matches!(
            MlpParams::from_layers(spec, 0, vec![layer]),
            Err(NnError::ParamShape { index: 0, .. })
        ));
    }
}
