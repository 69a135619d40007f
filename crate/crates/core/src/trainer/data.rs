use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;
use crate::nn::MlpParams;
use crate::rng::{mix, Rng};

use super::TrainError;

/// Source of real samples.
pub trait DataSource {
    /// Shape of one sample (without the batch axis).
    fn sample_shape(&self) -> Vec<usize>;
    fn sample(&self, rng: &mut Rng, m: usize) -> Tensor;
}

/// A fixed set of samples drawn uniformly with replacement.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalData {
    rows: Tensor,
}

impl EmpiricalData {
    /// `rows` has the sample index on its first axis.
    pub fn new(rows: Tensor) -> Self {
        assert!(rows.rank() >= 2, "empirical data needs a batch axis");
        Self { rows }
    }

    pub fn rows(&self) -> &Tensor {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn pick(&self, indices: &[usize]) -> Tensor {
        let n = self.len();
        let width = self.rows.len() / n;
        let mut data = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            data.extend_from_slice(&self.rows.data()[i * width..(i + 1) * width]);
        }
        let mut shape = self.rows.shape().to_vec();
        shape[0] = indices.len();
        Tensor::from_parts(shape, data)
    }
}

impl DataSource for EmpiricalData {
    fn sample_shape(&self) -> Vec<usize> {
        self.rows.shape()[1..].to_vec()
    }

    fn sample(&self, rng: &mut Rng, m: usize) -> Tensor {
        let n = self.len();
        let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
        self.pick(&idx)
    }
}

/// Anything mapping a `[batch, z_dim]` noise batch to samples.
pub trait Generator {
    fn z_dim(&self) -> usize;
    fn generate(&self, z: &Tensor) -> Result<Tensor, TrainError>;
}

impl Generator for MlpParams {
    fn z_dim(&self) -> usize {
        self.spec.input_dim
    }

    fn generate(&self, z: &Tensor) -> Result<Tensor, TrainError> {
        Ok(self.forward(z)?)
    }
}

/// Frozen generator that replays a fixed sample set, choosing a row from the
/// bits of its one-dimensional noise input.
#[derive(Clone, Debug)]
pub struct ReplayGenerator {
    data: EmpiricalData,
}

impl ReplayGenerator {
    pub fn new(rows: Tensor) -> Self {
        Self {
            data: EmpiricalData::new(rows),
        }
    }
}

impl Generator for ReplayGenerator {
    fn z_dim(&self) -> usize {
        1
    }

    fn generate(&self, z: &Tensor) -> Result<Tensor, TrainError> {
        let n = self.data.len() as u64;
        let idx: Vec<usize> = z
            .data()
            .iter()
            .map(|v| (mix(v.to_bits()) % n) as usize)
            .collect();
        Ok(self.data.pick(&idx))
    }
}

/// Standard normal noise `[m, z_dim]`.
pub fn sample_noise(rng: &mut Rng, m: usize, z_dim: usize) -> Tensor {
    let data = (0..m * z_dim).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::from_parts(vec![m, z_dim], data)
}

/// Real samples, prior noise, and per-sample interpolation weights for one
/// critic update.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub real: Tensor,
    pub noise: Tensor,
    pub interpolation: Vec<f64>,
}

impl Batch {
    pub fn sample(data: &dyn DataSource, z_dim: usize, m: usize, rng: &mut Rng) -> Self {
        let real = data.sample(rng, m);
        let noise = sample_noise(rng, m, z_dim);
        let interpolation = (0..m).map(|_| rng.random::<f64>()).collect();
        Self {
            real,
            noise,
            interpolation,
        }
    }
}

/// Row-wise `eps * real + (1 - eps) * fake`.
pub fn interpolate(real: &Tensor, fake: &Tensor, eps: &[f64]) -> Tensor {
    assert_eq!(real.shape(), fake.shape());
    let m = real.shape()[0];
    assert_eq!(eps.len(), m);
    let width = real.len() / m;
    let mut data = Vec::with_capacity(real.len());
    for (i, &e) in eps.iter().enumerate() {
        let r = &real.data()[i * width..(i + 1) * width];
        let f = &fake.data()[i * width..(i + 1) * width];
        data.extend(r.iter().zip(f).map(|(&a, &b)| e * a + (1.0 - e) * b));
    }
    Tensor::from_parts(real.shape().to_vec(), data)
}
