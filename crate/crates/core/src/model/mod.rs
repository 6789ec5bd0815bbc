//! The learned switch model: a bidirectional LSTM stack with attention
//! pooling and a two-layer classification head, trained from scratch with
//! exact reverse-mode gradients, Adam, and a plateau learning-rate schedule.
//!
//! All arithmetic is double precision.

mod adam;
mod checkpoint;
mod net;
mod train;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use net::{attention_pool, bce_loss, forward, forward_batch, grad};
pub use train::{train, EpochLog, PlateauScheduler, TrainConfig, TrainExample, TrainOutcome};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Architecture constants. The defaults are the sizes the pipeline uses;
/// smaller configurations exist for tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchConfig {
    /// Dimension of the paired input features.
    pub input_dim: usize,
    /// LSTM cells per direction.
    pub hidden: usize,
    /// Number of stacked bidirectional layers.
    pub num_layers: usize,
    /// Dimension of the attention projection space.
    pub attn_dim: usize,
    /// Width of the hidden fully connected layer.
    pub fc_hidden: usize,
    /// Output classes (2: observed-better, enhanced-better).
    pub classes: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            input_dim: 512,
            hidden: 128,
            num_layers: 3,
            attn_dim: 256,
            fc_hidden: 128,
            classes: 2,
        }
    }
}

impl ArchConfig {
    /// Input dimension of LSTM layer `layer`.
    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            2 * self.hidden
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.input_dim,
            self.hidden,
            self.num_layers,
            self.attn_dim,
            self.fc_hidden,
            self.classes,
        ];
        if fields.iter().any(|f| *f == 0) {
            return Err(Error::invalid("architecture constants must be positive"));
        }
        if self.classes != 2 {
            return Err(Error::invalid("the switch model is a binary classifier"));
        }
        Ok(())
    }
}

/// Weights of one LSTM direction. Gate rows are ordered
/// [input, forget, cell, output], each block `hidden` rows tall.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirParams {
    /// (4*hidden) x input_dim
    pub w_x: Array2<f64>,
    /// (4*hidden) x hidden
    pub w_h: Array2<f64>,
    /// 4*hidden
    pub b: Array1<f64>,
}

/// All learnable arrays of the switching network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: ArchConfig,
    /// Per layer: [forward direction, backward direction].
    pub layers: Vec<[LstmDirParams; 2]>,
    /// attn_dim x (2*hidden)
    pub attn_w: Array2<f64>,
    pub attn_b: Array1<f64>,
    pub attn_ctx: Array1<f64>,
    /// fc_hidden x (2*hidden)
    pub fc1_w: Array2<f64>,
    pub fc1_b: Array1<f64>,
    /// classes x fc_hidden
    pub fc2_w: Array2<f64>,
    pub fc2_b: Array1<f64>,
}

/// Borrowed view of one parameter tensor, used by the optimizer, the
/// checkpoint writer, and the tests.
pub enum TensorRef<'a> {
    Mat(&'a Array2<f64>),
    Vec1(&'a Array1<f64>),
}

pub enum TensorMut<'a> {
    Mat(&'a mut Array2<f64>),
    Vec1(&'a mut Array1<f64>),
}

impl TensorRef<'_> {
    pub fn as_slice(&self) -> &[f64] {
        match self {
            TensorRef::Mat(m) => m.as_slice().expect("standard layout"),
            TensorRef::Vec1(v) => v.as_slice().expect("standard layout"),
        }
    }

    pub fn len(&self) -> usize {
        self.as_slice().len()
    }

    pub fn is_empty(&self) -> bool {
        self.as_slice().is_empty()
    }
}

impl TensorMut<'_> {
    pub fn as_slice_mut(&mut self) -> &mut [f64] {
        match self {
            TensorMut::Mat(m) => m.as_slice_mut().expect("standard layout"),
            TensorMut::Vec1(v) => v.as_slice_mut().expect("standard layout"),
        }
    }
}

impl ModelParams {
    /// Random initialization: LSTM weights uniform in ±1/sqrt(hidden) with
    /// the forget-gate bias at +1, head weights uniform in ±1/sqrt(fan_in).
    pub fn init(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = arch.hidden;
        let uniform = |rng: &mut ChaCha8Rng, rows: usize, cols: usize, k: f64| {
            Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-k..k))
        };
        let k_lstm = 1.0 / (h as f64).sqrt();
        let mut layers = Vec::with_capacity(arch.num_layers);
        for layer in 0..arch.num_layers {
            let d = arch.layer_input_dim(layer);
            let mut dirs = Vec::with_capacity(2);
            for _ in 0..2 {
                let w_x = uniform(&mut rng, 4 * h, d, k_lstm);
                let w_h = uniform(&mut rng, 4 * h, h, k_lstm);
                let mut b = Array1::from_shape_fn(4 * h, |_| rng.gen_range(-k_lstm..k_lstm));
                // Forget-gate bias starts at +1.
                for j in h..2 * h {
                    b[j] += 1.0;
                }
                dirs.push(LstmDirParams { w_x, w_h, b });
            }
            let [fwd, bwd]: [LstmDirParams; 2] = dirs.try_into().unwrap();
            layers.push([fwd, bwd]);
        }
        let k_attn = 1.0 / ((2 * h) as f64).sqrt();
        let k_fc1 = k_attn;
        let k_fc2 = 1.0 / (arch.fc_hidden as f64).sqrt();
        Ok(ModelParams {
            arch,
            attn_w: uniform(&mut rng, arch.attn_dim, 2 * h, k_attn),
            attn_b: Array1::from_shape_fn(arch.attn_dim, |_| rng.gen_range(-k_attn..k_attn)),
            attn_ctx: Array1::from_shape_fn(arch.attn_dim, |_| rng.gen_range(-k_attn..k_attn)),
            fc1_w: uniform(&mut rng, arch.fc_hidden, 2 * h, k_fc1),
            fc1_b: Array1::from_shape_fn(arch.fc_hidden, |_| rng.gen_range(-k_fc1..k_fc1)),
            fc2_w: uniform(&mut rng, arch.classes, arch.fc_hidden, k_fc2),
            fc2_b: Array1::from_shape_fn(arch.classes, |_| rng.gen_range(-k_fc2..k_fc2)),
            layers,
        })
    }

    /// Same shapes as `self`, all zeros. Gradient accumulators start here.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, mut t) in out.tensors_mut() {
            t.as_slice_mut().fill(0.0);
        }
        out
    }

    /// All tensors in a fixed declared order with stable names.
    pub fn tensors(&self) -> Vec<(String, TensorRef<'_>)> {
        let mut out = Vec::new();
        for (l, dirs) in self.layers.iter().enumerate() {
            for (d, p) in dirs.iter().enumerate() {
                let dir = if d == 0 { "fwd" } else { "bwd" };
                out.push((format!("lstm{l}.{dir}.w_x"), TensorRef::Mat(&p.w_x)));
                out.push((format!("lstm{l}.{dir}.w_h"), TensorRef::Mat(&p.w_h)));
                out.push((format!("lstm{l}.{dir}.b"), TensorRef::Vec1(&p.b)));
            }
        }
        out.push(("attn.w".into(), TensorRef::Mat(&self.attn_w)));
        out.push(("attn.b".into(), TensorRef::Vec1(&self.attn_b)));
        out.push(("attn.ctx".into(), TensorRef::Vec1(&self.attn_ctx)));
        out.push(("fc1.w".into(), TensorRef::Mat(&self.fc1_w)));
        out.push(("fc1.b".into(), TensorRef::Vec1(&self.fc1_b)));
        out.push(("fc2.w".into(), TensorRef::Mat(&self.fc2_w)));
        out.push(("fc2.b".into(), TensorRef::Vec1(&self.fc2_b)));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, TensorMut<'_>)> {
        let mut out = Vec::new();
        for (l, dirs) in self.layers.iter_mut().enumerate() {
            for (d, p) in dirs.iter_mut().enumerate() {
                let dir = if d == 0 { "fwd" } else { "bwd" };
                out.push((format!("lstm{l}.{dir}.w_x"), TensorMut::Mat(&mut p.w_x)));
                out.push((format!("lstm{l}.{dir}.w_h"), TensorMut::Mat(&mut p.w_h)));
                out.push((format!("lstm{l}.{dir}.b"), TensorMut::Vec1(&mut p.b)));
            }
        }
        out.push(("attn.w".into(), TensorMut::Mat(&mut self.attn_w)));
        out.push(("attn.b".into(), TensorMut::Vec1(&mut self.attn_b)));
        out.push(("attn.ctx".into(), TensorMut::Vec1(&mut self.attn_ctx)));
        out.push(("fc1.w".into(), TensorMut::Mat(&mut self.fc1_w)));
        out.push(("fc1.b".into(), TensorMut::Vec1(&mut self.fc1_b)));
        out.push(("fc2.w".into(), TensorMut::Mat(&mut self.fc2_w)));
        out.push(("fc2.b".into(), TensorMut::Vec1(&mut self.fc2_b)));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Accumulates `other` scaled by `scale` into `self`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        let others = other.tensors();
        for ((_, mut dst), (_, src)) in self.tensors_mut().into_iter().zip(others) {
            let s = src.as_slice();
            for (d, v) in dst.as_slice_mut().iter_mut().zip(s) {
                *d += scale * v;
            }
        }
    }
}

/// Switch posterior [p0, p1]: probability that ASR does better on the
/// observed mixture (p0) or the enhanced speech (p1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub p0: f64,
    pub p1: f64,
}

impl Posterior {
    pub fn new(p0: f64, p1: f64) -> Result<Self> {
        if !(p0 >= 0.0 && p1 >= 0.0) || (p0 + p1 - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "posterior [{p0}, {p1}] is not a normalized distribution"
            )));
        }
        Ok(Posterior { p0, p1 })
    }
}

#[cfg(test)]
mod param_tests {
    use super::*;

    fn small_arch() -> ArchConfig {
        ArchConfig {
            input_dim: 12,
            hidden: 8,
            num_layers: 3,
            attn_dim: 10,
            fc_hidden: 6,
            classes: 2,
        }
    }

    #[test]
    fn parameter_count_matches_architecture() {
        let arch = ArchConfig::default();
        let p = ModelParams::init(arch, 0).unwrap();
        let h = arch.hidden;
        let lstm = |d: usize| 4 * h * d + 4 * h * h + 4 * h;
        let expected = 2 * (lstm(arch.input_dim) + 2 * lstm(2 * h))
            + arch.attn_dim * 2 * h
            + 2 * arch.attn_dim
            + arch.fc_hidden * 2 * h
            + arch.fc_hidden
            + arch.classes * arch.fc_hidden
            + arch.classes;
        assert_eq!(p.param_count(), expected);
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let arch = small_arch();
        let a = ModelParams::init(arch, 42).unwrap();
        let b = ModelParams::init(arch, 42).unwrap();
        let c = ModelParams::init(arch, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn forget_gate_bias_shifted() {
        let arch = small_arch();
        let p = ModelParams::init(arch, 1).unwrap();
        let h = arch.hidden;
        let k = 1.0 / (h as f64).sqrt();
        let b = &p.layers[0][0].b;
        for j in h..2 * h {
            assert!(b[j] > 1.0 - k && b[j] < 1.0 + k);
        }
        for j in 0..h {
            assert!(b[j].abs() < k);
        }
    }

    #[test]
    fn posterior_validation() {
        assert!(Posterior::new(0.4, 0.6).is_ok());
        assert!(Posterior::new(0.4, 0.4).is_err());
        assert!(Posterior::new(-0.1, 1.1).is_err());
    }

    #[test]
    fn tensor_order_stable() {
        let p = ModelParams::init(small_arch(), 0).unwrap();
        let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "lstm0.fwd.w_x");
        assert_eq!(names.last().unwrap(), "fc2.b");
        assert_eq!(names.len(), 3 * 2 * 3 + 7);
    }
}
