use rand::Rng;

use crate::error::{Error, Result};
use crate::manifold::SpaceSpec;
use crate::matrix::Matrix;

/// Scale of the random perturbation added to the identity in the linear maps.
const LINEAR_INIT_NOISE: f64 = 0.1;

/// Shape of the model: the two factor spaces, stack depth and φ width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub dim_h: usize,
    pub dim_s: usize,
    pub kappa_h: f64,
    pub kappa_s: f64,
    pub layers: usize,
    pub hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim_h: 32,
            dim_s: 32,
            kappa_h: -1.0,
            kappa_s: 1.0,
            layers: 2,
            hidden: 256,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec_h()?;
        self.spec_s()?;
        if self.hidden == 0 {
            return Err(Error::Argument("hidden width must be >= 1".into()));
        }
        Ok(())
    }

    pub fn spec_h(&self) -> Result<SpaceSpec> {
        SpaceSpec::new(self.dim_h, self.kappa_h)
    }

    pub fn spec_s(&self) -> Result<SpaceSpec> {
        SpaceSpec::new(self.dim_s, self.kappa_s)
    }
}

/// Trainable weights of one factor in one layer. `w_q` and `w_q_conv` act
/// on the counterpart factor; φ is `out · tanh(phi_q q + phi_k k + bias)`,
/// i.e. a one-hidden-layer perceptron on `[q ‖ k]` with its first matrix
/// split column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_q_conv: Matrix,
    pub w_k_conv: Matrix,
    pub phi_q: Matrix,
    pub phi_k: Matrix,
    pub phi_bias: Vec<f64>,
    pub phi_out: Vec<f64>,
}

/// Number of tensors in [`FactorParams::tensors`].
pub const FACTOR_TENSORS: usize = 9;

fn noisy_identity<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Matrix {
    let noise = Matrix::glorot(n, n, rng);
    let mut m = Matrix::identity(n);
    for (a, b) in m.data_mut().iter_mut().zip(noise.data()) {
        *a += LINEAR_INIT_NOISE * b;
    }
    m
}

impl FactorParams {
    pub fn init<R: Rng + ?Sized>(dim: usize, dim_counter: usize, hidden: usize, rng: &mut R) -> Self {
        let w_q = noisy_identity(dim_counter, rng);
        let w_k = noisy_identity(dim, rng);
        let w_v = noisy_identity(dim, rng);
        let w_q_conv = noisy_identity(dim_counter, rng);
        let w_k_conv = noisy_identity(dim, rng);
        let phi_q = Matrix::glorot(hidden, dim_counter + 1, rng);
        let phi_k = Matrix::glorot(hidden, dim + 1, rng);
        let phi_out = Matrix::glorot(hidden, 1, rng).data().to_vec();
        Self {
            w_q,
            w_k,
            w_v,
            w_q_conv,
            w_k_conv,
            phi_q,
            phi_k,
            phi_bias: vec![0.0; hidden],
            phi_out,
        }
    }

    /// All-zero tensors of the right shapes.
    pub fn zeros(dim: usize, dim_counter: usize, hidden: usize) -> Self {
        Self {
            w_q: Matrix::zeros(dim_counter, dim_counter),
            w_k: Matrix::zeros(dim, dim),
            w_v: Matrix::zeros(dim, dim),
            w_q_conv: Matrix::zeros(dim_counter, dim_counter),
            w_k_conv: Matrix::zeros(dim, dim),
            phi_q: Matrix::zeros(hidden, dim_counter + 1),
            phi_k: Matrix::zeros(hidden, dim + 1),
            phi_bias: vec![0.0; hidden],
            phi_out: vec![0.0; hidden],
        }
    }

    pub fn dim(&self) -> usize {
        self.w_k.rows()
    }

    pub fn dim_counter(&self) -> usize {
        self.w_q.rows()
    }

    pub fn hidden(&self) -> usize {
        self.phi_bias.len()
    }

    /// Fixed order: w_q, w_k, w_v, w_q_conv, w_k_conv, phi_q, phi_k,
    /// phi_bias, phi_out.
    pub fn tensors(&self) -> [&[f64]; FACTOR_TENSORS] {
        [
            self.w_q.data(),
            self.w_k.data(),
            self.w_v.data(),
            self.w_q_conv.data(),
            self.w_k_conv.data(),
            self.phi_q.data(),
            self.phi_k.data(),
            &self.phi_bias,
            &self.phi_out,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; FACTOR_TENSORS] {
        [
            self.w_q.data_mut(),
            self.w_k.data_mut(),
            self.w_v.data_mut(),
            self.w_q_conv.data_mut(),
            self.w_k_conv.data_mut(),
            self.phi_q.data_mut(),
            self.phi_k.data_mut(),
            &mut self.phi_bias,
            &mut self.phi_out,
        ]
    }

    pub fn check_shapes(&self, dim: usize, dim_counter: usize) -> Result<()> {
        let h = self.hidden();
        let want = Self::zeros(dim, dim_counter, h);
        for (got, exp) in self.tensors().iter().zip(want.tensors()) {
            if got.len() != exp.len() {
                return Err(Error::Dimension {
                    expected: exp.len(),
                    got: got.len(),
                });
            }
        }
        if self.phi_q.rows() != h || self.phi_k.rows() != h || self.phi_out.len() != h {
            return Err(Error::Dimension {
                expected: h,
                got: self.phi_q.rows(),
            });
        }
        Ok(())
    }
}

/// Per-layer parameters: one [`FactorParams`] for each factor.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub h: FactorParams,
    pub s: FactorParams,
}

impl LayerParams {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let h = FactorParams::init(cfg.dim_h, cfg.dim_s, cfg.hidden, rng);
        let s = FactorParams::init(cfg.dim_s, cfg.dim_h, cfg.hidden, rng);
        Self { h, s }
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            h: FactorParams::zeros(cfg.dim_h, cfg.dim_s, cfg.hidden),
            s: FactorParams::zeros(cfg.dim_s, cfg.dim_h, cfg.hidden),
        }
    }

    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        self.h.check_shapes(cfg.dim_h, cfg.dim_s)?;
        self.s.check_shapes(cfg.dim_s, cfg.dim_h)?;
        if self.h.hidden() != cfg.hidden || self.s.hidden() != cfg.hidden {
            return Err(Error::Dimension {
                expected: cfg.hidden,
                got: self.h.hidden(),
            });
        }
        Ok(())
    }

    /// H tensors followed by S tensors.
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.h.tensors().into_iter().chain(self.s.tensors())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.h.tensors_mut().into_iter().chain(self.s.tensors_mut())
    }
}

/// The whole trainable parameter set, layer by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub layers: Vec<LayerParams>,
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layers = (0..config.layers).map(|_| LayerParams::init(&config, rng)).collect();
        Ok(Self { config, layers })
    }

    pub fn zeros(config: ModelConfig) -> Self {
        Self {
            config,
            layers: (0..config.layers).map(|_| LayerParams::zeros(&config)).collect(),
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| l.tensors())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().map(|t| t.len()).sum()
    }

    pub fn check_shapes(&self) -> Result<()> {
        if self.layers.len() != self.config.layers {
            return Err(Error::Dimension {
                expected: self.config.layers,
                got: self.layers.len(),
            });
        }
        self.layers.iter().try_for_each(|l| l.check_shapes(&self.config))
    }
}
