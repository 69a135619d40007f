//! Nested critic families built by restricting what each critic sees.
//!
//! A critic on the first `i` steps of a sequence is a critic on the first
//! `i + 1` steps that ignores the last one, and a critic on a `k`-downsampled
//! image is a critic on a `k/2`-downsampled image that only looks at block
//! means. Ordering the bank from most to least restricted input therefore
//! gives `F_1 ⊆ F_2 ⊆ ... ⊆ F_d`.

use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, NodeId, Tensor};
use crate::nn::{init_mlp, Activation, BoundMlp, MlpParams, MlpSpec, NnError};
use crate::rng::{self, tags};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FamilyError {
    #[error("prefix length {len} out of range 1..={max}")]
    PrefixOutOfRange { len: usize, max: usize },
    #[error("image size {size} not divisible by factor {factor}")]
    NotDivisible { size: usize, factor: usize },
    #[error("transforms must be nested: {0}")]
    NotNested(String),
    #[error("critic index {index} out of range for bank of {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("critic {index} is not bound in this graph")]
    Unbound { index: usize },
    #[error("critic {index} expects input width {expected}, transform yields {got}")]
    InputDim {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("expected {expected} input, got shape {got:?}")]
    InputShape { expected: String, got: Vec<usize> },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Shape of one sample fed to the bank.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleShape {
    /// `[batch, len]`
    Sequence { len: usize },
    /// `[batch, size, size, channels]`
    Image { size: usize, channels: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputTransform {
    /// First `i` time steps.
    Prefix(usize),
    /// Average over non-overlapping `k x k` blocks.
    Downsample(usize),
}

impl InputTransform {
    pub fn kind(&self) -> &'static str {
        match self {
            InputTransform::Prefix(_) => "prefix",
            InputTransform::Downsample(_) => "downsample",
        }
    }

    pub fn param(&self) -> usize {
        match *self {
            InputTransform::Prefix(i) | InputTransform::Downsample(i) => i,
        }
    }

    /// Flattened width this transform produces for `input`.
    pub fn output_dim(&self, input: SampleShape) -> Result<usize, FamilyError> {
        match (*self, input) {
            (InputTransform::Prefix(i), SampleShape::Sequence { len }) => {
                if i == 0 || i > len {
                    Err(FamilyError::PrefixOutOfRange { len: i, max: len })
                } else {
                    Ok(i)
                }
            }
            (InputTransform::Downsample(k), SampleShape::Image { size, channels }) => {
                if k == 0 || size % k != 0 {
                    Err(FamilyError::NotDivisible { size, factor: k })
                } else {
                    Ok((size / k) * (size / k) * channels)
                }
            }
            (t, s) => Err(FamilyError::NotNested(format!(
                "{} transform cannot apply to {s:?}",
                t.kind()
            ))),
        }
    }
}

/// First `i` columns of a `[batch, T]` sequence batch.
pub fn prefix(x: &Tensor, i: usize) -> Result<Tensor, FamilyError> {
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let out = prefix_node(&mut g, xn, i)?;
    Ok(g.value(out).clone())
}

pub fn prefix_node(graph: &mut Graph, x: NodeId, i: usize) -> Result<NodeId, FamilyError> {
    let &[_, t] = graph.shape(x) else {
        return Err(FamilyError::InputShape {
            expected: "[batch, T]".into(),
            got: graph.shape(x).to_vec(),
        });
    };
    if i == 0 || i > t {
        return Err(FamilyError::PrefixOutOfRange { len: i, max: t });
    }
    Ok(graph.slice_cols(x, 0, i)?)
}

/// Block-average a `[batch, W, H, C]` image batch by factor `k`.
pub fn downsample(x: &Tensor, k: usize) -> Result<Tensor, FamilyError> {
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let out = downsample_node(&mut g, xn, k)?;
    Ok(g.value(out).clone())
}

pub fn downsample_node(graph: &mut Graph, x: NodeId, k: usize) -> Result<NodeId, FamilyError> {
    let &[_, w, h, _] = graph.shape(x) else {
        return Err(FamilyError::InputShape {
            expected: "[batch, W, H, C]".into(),
            got: graph.shape(x).to_vec(),
        });
    };
    for size in [w, h] {
        if k == 0 || size % k != 0 {
            return Err(FamilyError::NotDivisible { size, factor: k });
        }
    }
    Ok(graph.block_mean(x, k)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BankEntry {
    pub transform: InputTransform,
    pub params: MlpParams,
}

/// Ordered critics, from the most restricted input to the full sample.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticBank {
    input: SampleShape,
    entries: Vec<BankEntry>,
}

/// Per-critic bindings into one graph; `None` for critics left out.
#[derive(Clone, Debug)]
pub struct BoundBank {
    critics: Vec<Option<BoundMlp>>,
}

impl BoundBank {
    pub fn get(&self, index: usize) -> Option<&BoundMlp> {
        self.critics.get(index).and_then(Option::as_ref)
    }
}

fn critic_seed(seed: u64, index: usize) -> u64 {
    rng::derive_seed(rng::derive_seed(seed, tags::CRITIC), index as u64)
}

impl CriticBank {
    /// Assemble a bank, checking nesting and per-critic input widths.
    pub fn from_entries(input: SampleShape, entries: Vec<BankEntry>) -> Result<Self, FamilyError> {
        if entries.is_empty() {
            return Err(FamilyError::NotNested("bank is empty".into()));
        }
        for pair in entries.windows(2) {
            let ok = match (pair[0].transform, pair[1].transform) {
                (InputTransform::Prefix(a), InputTransform::Prefix(b)) => a < b,
                (InputTransform::Downsample(a), InputTransform::Downsample(b)) => a > b,
                _ => false,
            };
            if !ok {
                return Err(FamilyError::NotNested(format!(
                    "{:?} followed by {:?}",
                    pair[0].transform, pair[1].transform
                )));
            }
        }
        for (index, e) in entries.iter().enumerate() {
            let got = e.transform.output_dim(input)?;
            if got != e.params.spec.input_dim {
                return Err(FamilyError::InputDim {
                    index,
                    expected: e.params.spec.input_dim,
                    got,
                });
            }
            if e.params.spec.output_dim != 1 {
                return Err(FamilyError::Nn(NnError::InvalidSpec(format!(
                    "critic {index} must have scalar output"
                ))));
            }
        }
        Ok(Self { input, entries })
    }

    fn build(
        input: SampleShape,
        transforms: Vec<InputTransform>,
        hidden: &[usize],
        seed: u64,
    ) -> Result<Self, FamilyError> {
        let mut entries = Vec::with_capacity(transforms.len());
        for (i, transform) in transforms.into_iter().enumerate() {
            let width = transform.output_dim(input)?;
            let spec = MlpSpec::new(width, hidden.to_vec(), 1, Activation::CRITIC_DEFAULT)?;
            entries.push(BankEntry {
                transform,
                params: init_mlp(&spec, critic_seed(seed, i)),
            });
        }
        Self::from_entries(input, entries)
    }

    pub fn input(&self) -> SampleShape {
        self.input
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn critic(&self, index: usize) -> Result<&BankEntry, FamilyError> {
        self.entries.get(index).ok_or(FamilyError::IndexOutOfRange {
            index,
            len: self.entries.len(),
        })
    }

    pub fn critic_mut(&mut self, index: usize) -> Result<&mut BankEntry, FamilyError> {
        let len = self.entries.len();
        self.entries
            .get_mut(index)
            .ok_or(FamilyError::IndexOutOfRange { index, len })
    }

    /// Replace critic `index` with a fresh initialisation from `seed`.
    pub fn reinit_stage(&mut self, index: usize, seed: u64) -> Result<(), FamilyError> {
        let entry = self.critic_mut(index)?;
        entry.params = init_mlp(&entry.params.spec, seed);
        Ok(())
    }

    /// Bind the listed critics into `graph`.
    pub fn bind(
        &self,
        graph: &mut Graph,
        active: impl IntoIterator<Item = usize>,
        trainable: bool,
    ) -> Result<BoundBank, FamilyError> {
        let mut critics = vec![None; self.entries.len()];
        for i in active {
            let entry = self.critic(i)?;
            critics[i] = Some(entry.params.bind(graph, trainable));
        }
        Ok(BoundBank { critics })
    }

    /// Apply critic `index`'s input restriction to a full sample batch,
    /// flattening images to `[batch, features]`.
    pub fn transform_node(&self, graph: &mut Graph, index: usize, x: NodeId) -> Result<NodeId, FamilyError> {
        let entry = self.critic(index)?;
        match entry.transform {
            InputTransform::Prefix(i) => prefix_node(graph, x, i),
            InputTransform::Downsample(k) => {
                let d = downsample_node(graph, x, k)?;
                let batch = graph.shape(d)[0];
                let width = entry.params.spec.input_dim;
                Ok(graph.reshape(d, &[batch, width])?)
            }
        }
    }

    /// `[batch, 1]` output of critic `index` on its restricted view of `x`.
    pub fn critic_forward(
        &self,
        graph: &mut Graph,
        bound: &BoundBank,
        index: usize,
        x: NodeId,
    ) -> Result<NodeId, FamilyError> {
        let net = bound.get(index).ok_or(FamilyError::Unbound { index })?;
        let view = self.transform_node(graph, index, x)?;
        Ok(net.forward(graph, view)?)
    }
}

/// Critics on prefixes of a length-`t` sequence, one per entry of `lengths`.
pub fn build_seq_bank(
    t: usize,
    lengths: &[usize],
    hidden: &[usize],
    seed: u64,
) -> Result<CriticBank, FamilyError> {
    if lengths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(FamilyError::NotNested(format!(
            "prefix lengths must strictly increase: {lengths:?}"
        )));
    }
    CriticBank::build(
        SampleShape::Sequence { len: t },
        lengths.iter().map(|&l| InputTransform::Prefix(l)).collect(),
        hidden,
        seed,
    )
}

/// Critics on `size x size x channels` images downsampled by each factor,
/// coarsest first.
pub fn build_image_bank(
    size: usize,
    channels: usize,
    factors: &[usize],
    hidden: &[usize],
    seed: u64,
) -> Result<CriticBank, FamilyError> {
    if factors.windows(2).any(|w| w[0] <= w[1]) {
        return Err(FamilyError::NotNested(format!(
            "downsample factors must strictly decrease: {factors:?}"
        )));
    }
    CriticBank::build(
        SampleShape::Image { size, channels },
        factors.iter().map(|&k| InputTransform::Downsample(k)).collect(),
        hidden,
        seed,
    )
}
