//! FCN encoder and projection head.
//!
//! The encoder is three conv → batch-norm → ReLU blocks followed by global
//! average pooling and, by default, a dense layer to the representation
//! width. The projection head is dense → ReLU → dense → L2 normalization and
//! is only used while training; downstream classification consumes the
//! encoder output `r`.

mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tensorkit::{
    batchnorm1d, batchnorm1d_backward, conv1d_backward, conv1d_forward, dense, dense_backward, global_avg_pool,
    global_avg_pool_backward, l2_normalize_rows, l2_normalize_rows_backward, relu, relu_backward, AdamState,
    BatchNormCache, BatchNormState, Conv1dCache, Mode,
};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

/// Epsilon of the final row normalization of the projection head.
pub const NORMALIZE_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Input channels F.
    pub in_features: usize,
    pub conv_channels: Vec<usize>,
    pub kernel_sizes: Vec<usize>,
    /// Width D of the representation and of the projection head.
    pub repr_dim: usize,
    /// When true a dense layer after pooling maps to `repr_dim`; when false
    /// the pooled features themselves are the representation.
    pub dense_repr: bool,
}

impl EncoderConfig {
    /// Channels (128, 256, 128), kernels (8, 5, 3), D = 320.
    pub fn new(in_features: usize) -> Self {
        Self {
            in_features,
            conv_channels: vec![128, 256, 128],
            kernel_sizes: vec![8, 5, 3],
            repr_dim: 320,
            dense_repr: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_features == 0 {
            return Err(Error::Config("in_features must be positive".into()));
        }
        if self.conv_channels.is_empty() || self.conv_channels.len() != self.kernel_sizes.len() {
            return Err(Error::Config(format!(
                "conv_channels ({}) and kernel_sizes ({}) must be non-empty and equally long",
                self.conv_channels.len(),
                self.kernel_sizes.len()
            )));
        }
        if self.conv_channels.contains(&0) || self.kernel_sizes.contains(&0) {
            return Err(Error::Config("channel counts and kernel sizes must be positive".into()));
        }
        if self.repr_dim == 0 {
            return Err(Error::Config("repr_dim must be positive".into()));
        }
        Ok(())
    }

    /// Dimension of `r`.
    pub fn repr_width(&self) -> usize {
        if self.dense_repr {
            self.repr_dim
        } else {
            *self.conv_channels.last().expect("validated")
        }
    }

    /// Names and shapes of all trainable tensors in canonical order.
    pub fn parameter_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut cin = self.in_features;
        for (i, (&co, &k)) in self.conv_channels.iter().zip(&self.kernel_sizes).enumerate() {
            out.push((format!("conv{i}.weight"), vec![co, cin, k]));
            out.push((format!("conv{i}.bias"), vec![co]));
            out.push((format!("bn{i}.gamma"), vec![co]));
            out.push((format!("bn{i}.beta"), vec![co]));
            cin = co;
        }
        if self.dense_repr {
            out.push(("encoder.linear.weight".into(), vec![self.repr_dim, cin]));
            out.push(("encoder.linear.bias".into(), vec![self.repr_dim]));
        }
        let rw = self.repr_width();
        out.push(("head.0.weight".into(), vec![self.repr_dim, rw]));
        out.push(("head.0.bias".into(), vec![self.repr_dim]));
        out.push(("head.1.weight".into(), vec![self.repr_dim, self.repr_dim]));
        out.push(("head.1.bias".into(), vec![self.repr_dim]));
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
    pub norm: BatchNormState<S>,
}

/// Encoder and projection head parameters, batch-norm statistics and the
/// Adam moments of every trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<S> {
    pub config: EncoderConfig,
    pub blocks: Vec<ConvBlock<S>>,
    pub encoder_linear: Option<Linear<S>>,
    pub head: [Linear<S>; 2],
    /// One entry per tensor of [`EncoderConfig::parameter_layout`].
    pub adam: Vec<AdamState<S>>,
    pub rng_seed: u64,
}

/// Gradients aligned with [`EncoderConfig::parameter_layout`].
#[derive(Clone, Debug)]
pub struct Gradients<S> {
    pub tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn zeros(config: &EncoderConfig) -> Self {
        Self { tensors: config.parameter_layout().iter().map(|(_, s)| Tensor::zeros(s)).collect() }
    }

    fn add(&mut self, idx: usize, g: &Tensor<S>) -> Result<()> {
        self.tensors[idx].add_assign(g)
    }
}

struct BlockTrace<S> {
    conv: Conv1dCache<S>,
    bn: BatchNormCache<S>,
    pre_relu: Tensor<S>,
}

/// Intermediates of an encoder forward pass.
pub struct EncoderTrace<S> {
    len: usize,
    blocks: Vec<BlockTrace<S>>,
    pooled: Tensor<S>,
}

pub struct EncodeOutput<S> {
    pub r: Tensor<S>,
    pub trace: EncoderTrace<S>,
    /// Batch-norm states after the pass (running statistics updated in
    /// train mode).
    pub norm_states: Vec<BatchNormState<S>>,
}

/// Intermediates of a projection-head forward pass.
pub struct HeadTrace<S> {
    r: Tensor<S>,
    hidden_pre: Tensor<S>,
    hidden: Tensor<S>,
    unnormalized: Tensor<S>,
}

fn uniform_tensor<S: Scalar>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<S> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| S::lit(rng.random_range(-bound..bound))).collect();
    Tensor::new(shape, data).expect("positive shape")
}

/// Fresh model with fan-in-scaled uniform weights drawn from `seed`.
pub fn init_model<S: Scalar>(config: &EncoderConfig, seed: u64) -> Result<ModelState<S>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = Vec::new();
    let mut cin = config.in_features;
    for (&co, &k) in config.conv_channels.iter().zip(&config.kernel_sizes) {
        let fan_in = cin * k;
        blocks.push(ConvBlock {
            weight: uniform_tensor(&[co, cin, k], fan_in, &mut rng),
            bias: uniform_tensor(&[co], fan_in, &mut rng),
            norm: BatchNormState::new(co),
        });
        cin = co;
    }
    let linear = |dout: usize, din: usize, rng: &mut ChaCha8Rng| Linear {
        weight: uniform_tensor(&[dout, din], din, rng),
        bias: uniform_tensor(&[dout], din, rng),
    };
    let encoder_linear = config.dense_repr.then(|| linear(config.repr_dim, cin, &mut rng));
    let rw = config.repr_width();
    let head = [linear(config.repr_dim, rw, &mut rng), linear(config.repr_dim, config.repr_dim, &mut rng)];
    let adam = config.parameter_layout().iter().map(|(_, s)| AdamState::new(s)).collect();
    Ok(ModelState { config: config.clone(), blocks, encoder_linear, head, adam, rng_seed: seed })
}

impl<S: Scalar> ModelState<S> {
    pub fn parameters(&self) -> Vec<&Tensor<S>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend([&b.weight, &b.bias, &b.norm.gamma, &b.norm.beta]);
        }
        if let Some(l) = &self.encoder_linear {
            out.extend([&l.weight, &l.bias]);
        }
        for l in &self.head {
            out.extend([&l.weight, &l.bias]);
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.extend([&mut b.weight, &mut b.bias, &mut b.norm.gamma, &mut b.norm.beta]);
        }
        if let Some(l) = &mut self.encoder_linear {
            out.extend([&mut l.weight, &mut l.bias]);
        }
        for l in &mut self.head {
            out.extend([&mut l.weight, &mut l.bias]);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    /// Sets learning rate and weight decay on every optimizer state.
    pub fn set_optimizer_rates(&mut self, learning_rate: S, weight_decay: S) {
        for a in &mut self.adam {
            a.learning_rate = learning_rate;
            a.weight_decay = weight_decay;
        }
    }

    fn check_input(&self, x: &Tensor<S>) -> Result<()> {
        x.expect_ndim("encode", 3)?;
        if x.shape()[1] != self.config.in_features {
            return Err(Error::dim(
                "encode",
                format!("model expects {} input features, batch has {}", self.config.in_features, x.shape()[1]),
            ));
        }
        if let Some(i) = x.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "encoder input contains non-finite value at flat index {i}; clean missing values first"
            )));
        }
        Ok(())
    }

    /// Encoder pass over `[B, F, T]` without touching `self`.
    pub fn forward(&self, x: &Tensor<S>, mode: Mode) -> Result<EncodeOutput<S>> {
        self.check_input(x)?;
        let len = x.shape()[2];
        let mut h = x.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        let mut norm_states = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (c, conv_cache) = conv1d_forward(&h, &block.weight, &block.bias)?;
            let norm_in = block.norm.clone().with_mode(mode);
            let bn = batchnorm1d(&c, &norm_in)?;
            h = relu(&bn.output);
            blocks.push(BlockTrace { conv: conv_cache, bn: bn.cache, pre_relu: bn.output });
            norm_states.push(bn.state.with_mode(block.norm.mode));
        }
        let pooled = global_avg_pool(&h)?;
        let r = match &self.encoder_linear {
            Some(l) => dense(&pooled, &l.weight, &l.bias)?,
            None => pooled.clone(),
        };
        Ok(EncodeOutput { r, trace: EncoderTrace { len, blocks, pooled }, norm_states })
    }

    /// Eval-mode representations; safe to call concurrently.
    pub fn encode_eval(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(self.forward(x, Mode::Eval)?.r)
    }

    /// Encoder pass; in train mode the running statistics are committed.
    pub fn encode(&mut self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>> {
        let out = self.forward(x, mode)?;
        self.commit_norm_states(out.norm_states);
        Ok(out.r)
    }

    pub fn commit_norm_states(&mut self, states: Vec<BatchNormState<S>>) {
        for (b, s) in self.blocks.iter_mut().zip(states) {
            b.norm.running_mean = s.running_mean;
            b.norm.running_var = s.running_var;
        }
    }

    /// Projection head forward with its trace.
    pub fn project_forward(&self, r: &Tensor<S>) -> Result<(Tensor<S>, HeadTrace<S>)> {
        let [h0, h1] = &self.head;
        let hidden_pre = dense(r, &h0.weight, &h0.bias)?;
        let hidden = relu(&hidden_pre);
        let unnormalized = dense(&hidden, &h1.weight, &h1.bias)?;
        let z = l2_normalize_rows(&unnormalized, S::lit(NORMALIZE_EPS))?;
        Ok((z, HeadTrace { r: r.clone(), hidden_pre, hidden, unnormalized }))
    }

    /// Unit-norm embeddings `z` for representations `r`.
    pub fn project(&self, r: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(self.project_forward(r)?.0)
    }

    fn head_offset(&self) -> usize {
        self.blocks.len() * 4 + if self.encoder_linear.is_some() { 2 } else { 0 }
    }

    /// Accumulates head parameter gradients and returns the gradient w.r.t. `r`.
    pub fn project_backward(&self, trace: &HeadTrace<S>, grad_z: &Tensor<S>, grads: &mut Gradients<S>) -> Result<Tensor<S>> {
        let off = self.head_offset();
        let [h0, h1] = &self.head;
        let g_u = l2_normalize_rows_backward(&trace.unnormalized, S::lit(NORMALIZE_EPS), grad_z)?;
        let d1 = dense_backward(&trace.hidden, &h1.weight, &g_u)?;
        grads.add(off + 2, &d1.weight)?;
        grads.add(off + 3, &d1.bias)?;
        let g_pre = relu_backward(&trace.hidden_pre, &d1.input)?;
        let d0 = dense_backward(&trace.r, &h0.weight, &g_pre)?;
        grads.add(off, &d0.weight)?;
        grads.add(off + 1, &d0.bias)?;
        Ok(d0.input)
    }

    /// Accumulates encoder parameter gradients given the gradient w.r.t. `r`.
    /// Returns the gradient w.r.t. the input batch.
    pub fn encode_backward(&self, trace: &EncoderTrace<S>, grad_r: &Tensor<S>, grads: &mut Gradients<S>) -> Result<Tensor<S>> {
        let g_pooled = match &self.encoder_linear {
            Some(l) => {
                let d = dense_backward(&trace.pooled, &l.weight, grad_r)?;
                let off = self.blocks.len() * 4;
                grads.add(off, &d.weight)?;
                grads.add(off + 1, &d.bias)?;
                d.input
            }
            None => grad_r.clone(),
        };
        let mut g = global_avg_pool_backward(&g_pooled, trace.len)?;
        for (i, (block, bt)) in self.blocks.iter().zip(&trace.blocks).enumerate().rev() {
            let g_bn = relu_backward(&bt.pre_relu, &g)?;
            let bn = batchnorm1d_backward(&bt.bn, &block.norm, &g_bn)?;
            grads.add(4 * i + 2, &bn.gamma)?;
            grads.add(4 * i + 3, &bn.beta)?;
            let conv = conv1d_backward(&bt.conv, &block.weight, &bn.input)?;
            grads.add(4 * i, &conv.weight)?;
            grads.add(4 * i + 1, &conv.bias)?;
            g = conv.input;
        }
        Ok(g)
    }

    /// One Adam update of every parameter.
    pub fn apply_gradients(&mut self, grads: &Gradients<S>) -> Result<()> {
        let names: Vec<String> = self.config.parameter_layout().into_iter().map(|(n, _)| n).collect();
        let mut adam = std::mem::take(&mut self.adam);
        let result = (|| {
            for (((p, g), state), name) in self.parameters_mut().into_iter().zip(&grads.tensors).zip(adam.iter_mut()).zip(&names) {
                let (np, ns) = crate::tensorkit::adam_step(p, g, state, name)?;
                *p = np;
                *state = ns;
            }
            Ok(())
        })();
        self.adam = adam;
        result
    }

    /// Switches every batch-norm layer's stored mode.
    pub fn set_mode(&mut self, mode: Mode) {
        for b in &mut self.blocks {
            b.norm.mode = mode;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{max_rel_err, numeric_grad, rand_tensor};

    fn tiny() -> EncoderConfig {
        EncoderConfig { in_features: 2, conv_channels: vec![4, 4, 4], kernel_sizes: vec![3, 5, 2], repr_dim: 6, dense_repr: true }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = init_model::<f32>(&tiny(), 7).unwrap();
        let b = init_model::<f32>(&tiny(), 7).unwrap();
        let c = init_model::<f32>(&tiny(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.parameters(), c.parameters());
        assert!(a.blocks.iter().all(|b| b.norm.gamma.data().iter().all(|&g| g == 1.0)));
        assert!(a.adam.iter().all(|s| s.m.data().iter().all(|&m| m == 0.0)));
    }

    #[test]
    fn default_parameter_count() {
        let m = init_model::<f32>(&EncoderConfig::new(1), 0).unwrap();
        // conv weight + bias + bn gamma/beta per block, then dense layers
        let blocks = [(1, 128, 8), (128, 256, 5), (256, 128, 3)];
        let conv: usize = blocks.iter().map(|&(ci, co, k)| co * ci * k + co + 2 * co).sum();
        let dense = 320 * 128 + 320 + 2 * (320 * 320 + 320);
        assert_eq!(m.parameter_count(), conv + dense);
        assert_eq!(m.parameter_count(), 511_424);
    }

    #[test]
    fn default_representation_width() {
        let m = init_model::<f32>(&EncoderConfig::new(1), 0).unwrap();
        let x = Tensor::<f32>::zeros(&[3, 1, 20]);
        let r = m.encode_eval(&x).unwrap();
        assert_eq!(r.shape(), &[3, 320]);
        assert!(r.data().iter().all(|v| v.is_finite()));
        let z = m.project(&r).unwrap();
        assert_eq!(z.shape(), &[3, 320]);
    }

    #[test]
    fn pooled_representation_reading() {
        let mut cfg = tiny();
        cfg.dense_repr = false;
        let m = init_model::<f64>(&cfg, 0).unwrap();
        let r = m.encode_eval(&rand_tensor(&[2, 2, 9], 1)).unwrap();
        assert_eq!(r.shape(), &[2, 4]);
        assert_eq!(m.project(&r).unwrap().shape(), &[2, 6]);
    }

    #[test]
    fn rejects_nan_and_feature_mismatch() {
        let m = init_model::<f64>(&tiny(), 0).unwrap();
        let mut x = rand_tensor(&[2, 2, 5], 1);
        x.data_mut()[3] = f64::NAN;
        assert!(matches!(m.encode_eval(&x), Err(Error::InvalidInput(_))));
        assert!(matches!(m.encode_eval(&rand_tensor(&[2, 3, 5], 1)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn eval_encode_is_deterministic_and_train_updates_stats() {
        let mut m = init_model::<f64>(&tiny(), 3).unwrap();
        let x = rand_tensor(&[3, 2, 8], 2);
        assert_eq!(m.encode_eval(&x).unwrap(), m.encode_eval(&x).unwrap());
        let before = m.blocks[0].norm.running_mean.clone();
        m.encode(&x, Mode::Train).unwrap();
        assert_ne!(before, m.blocks[0].norm.running_mean);
    }

    #[test]
    fn projected_rows_are_unit_norm() {
        let m = init_model::<f64>(&tiny(), 3).unwrap();
        let z = m.project(&rand_tensor(&[5, 6], 4)).unwrap();
        for i in 0..5 {
            let n: f64 = z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn project_backward_matches_finite_differences() {
        let m = init_model::<f64>(&tiny(), 5).unwrap();
        let r = rand_tensor(&[4, 6], 6);
        let up = rand_tensor(&[4, 6], 7);
        let f = |m: &ModelState<f64>, r: &Tensor<f64>| -> f64 {
            m.project(r).unwrap().data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
        };
        let (_, trace) = m.project_forward(&r).unwrap();
        let mut grads = Gradients::zeros(&m.config);
        let gr = m.project_backward(&trace, &up, &mut grads).unwrap();
        assert!(max_rel_err(&gr, &numeric_grad(&r, |r| f(&m, r))) < 1e-6);
        let off = m.head_offset();
        for k in 0..4 {
            let num = numeric_grad(m.parameters()[off + k], |p| {
                let mut mm = m.clone();
                *mm.parameters_mut()[off + k] = p.clone();
                f(&mm, &r)
            });
            assert!(max_rel_err(&grads.tensors[off + k], &num) < 1e-6, "head tensor {k}");
        }
    }

    #[test]
    fn encoder_backward_matches_finite_differences() {
        let m = init_model::<f64>(&tiny(), 9).unwrap();
        let x = rand_tensor(&[3, 2, 7], 10);
        let up = rand_tensor(&[3, 6], 11);
        for mode in [Mode::Train, Mode::Eval] {
            let f = |m: &ModelState<f64>, x: &Tensor<f64>| -> f64 {
                m.forward(x, mode).unwrap().r.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
            };
            let out = m.forward(&x, mode).unwrap();
            let mut grads = Gradients::zeros(&m.config);
            let gx = m.encode_backward(&out.trace, &up, &mut grads).unwrap();
            assert!(max_rel_err(&gx, &numeric_grad(&x, |x| f(&m, x))) < 1e-6);
            let n = m.head_offset();
            for k in 0..n {
                let num = numeric_grad(m.parameters()[k], |p| {
                    let mut mm = m.clone();
                    *mm.parameters_mut()[k] = p.clone();
                    f(&mm, &x)
                });
                let scale = num.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let err = max_rel_err(&grads.tensors[k], &num);
                // conv biases feeding train-mode batch norm have exactly zero gradient
                assert!(err < 1e-6 || scale < 1e-8, "{mode:?} tensor {k} err {err}");
            }
        }
    }

    #[test]
    fn batch_permutation_commutes_in_eval_mode() {
        let m = init_model::<f64>(&tiny(), 1).unwrap();
        let x = rand_tensor(&[4, 2, 6], 2);
        let perm = [2, 0, 3, 1];
        let r = m.encode_eval(&x).unwrap();
        let rp = m.encode_eval(&x.select_rows(&perm).unwrap()).unwrap();
        assert!(max_rel_err(&rp, &r.select_rows(&perm).unwrap()) < 1e-14);
        let z = m.project(&r).unwrap();
        let zp = m.project(&rp).unwrap();
        assert!(max_rel_err(&zp, &z.select_rows(&perm).unwrap()) < 1e-14);
    }
}
