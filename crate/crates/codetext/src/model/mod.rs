//! Pre-norm encoder-decoder transformer with manual backprop.
//!
//! Architecture: scale-only RMS normalization before every sublayer,
//! bias-free projections, ReLU feed-forward, bucketed relative-position
//! bias shared across each stack, and a token embedding tied to the
//! output projection (final hidden states are scaled by 1/sqrt(d_model)
//! before the tied projection). The decoder consumes targets shifted
//! right with pad (id 0) as the start token.
//!
//! Parameters and activations are 32-bit for training; the whole stack
//! is generic over [`Scalar`] so gradient checks can run in 64-bit.

mod checkpoint;
mod net;
mod ops;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use net::greedy_decode;

use ndarray::{Array1, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mixture::Batch;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("id {id} out of range for vocab {vocab}")]
    IdOutOfRange { id: u32, vocab: usize },
    #[error("sequence length {len} exceeds max_len {max_len}")]
    TooLong { len: usize, max_len: usize },
    #[error("loss is undefined on all-pad targets")]
    AllPadTargets,
    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(String),
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid checkpoint: {message}")]
    BadCheckpoint {
        path: std::path::PathBuf,
        message: String,
    },
    #[error("checkpoint config does not match: {0}")]
    ConfigMismatch(String),
}

/// Element type of parameters and activations.
pub trait Scalar:
    num_traits::Float
    + ndarray::LinalgScalar
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::fmt::Debug
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Blocks per stack (encoder and decoder each).
    pub num_blocks: usize,
    pub d_model: usize,
    pub d_ff: usize,
    /// Per-head key/value width; attention inner width is
    /// `num_heads * d_kv`, decoupled from `d_model`.
    pub d_kv: usize,
    pub num_heads: usize,
    pub vocab_size: usize,
    pub dropout: f32,
    pub max_len: usize,
    pub rel_pos_buckets: usize,
    pub rel_pos_max_distance: usize,
}

impl ModelConfig {
    /// 6 blocks, d_model 512, d_ff 2048, 8 heads (~60M at vocab 32k).
    pub fn small(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            num_blocks: 6,
            d_model: 512,
            d_ff: 2048,
            d_kv: 64,
            num_heads: 8,
            vocab_size,
            dropout: 0.10,
            max_len: 512,
            rel_pos_buckets: 32,
            rel_pos_max_distance: 128,
        }
    }

    /// 12 blocks, d_model 768, d_ff 3072, 12 heads (~220M at vocab 32k).
    pub fn base(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            num_blocks: 12,
            d_model: 768,
            d_ff: 3072,
            num_heads: 12,
            ..ModelConfig::small(vocab_size)
        }
    }

    /// 24 blocks, d_model 1024, d_ff 4096, 16 heads (~770M at vocab 32k).
    pub fn large(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            num_blocks: 24,
            d_model: 1024,
            d_ff: 4096,
            num_heads: 16,
            ..ModelConfig::small(vocab_size)
        }
    }

    /// Desk-scale config for experiments and tests.
    pub fn tiny(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            num_blocks: 2,
            d_model: 64,
            d_ff: 256,
            d_kv: 16,
            num_heads: 4,
            vocab_size,
            dropout: 0.0,
            max_len: 128,
            rel_pos_buckets: 8,
            rel_pos_max_distance: 32,
        }
    }

    pub fn by_name(name: &str, vocab_size: usize) -> Option<ModelConfig> {
        match name {
            "small" => Some(ModelConfig::small(vocab_size)),
            "base" => Some(ModelConfig::base(vocab_size)),
            "large" => Some(ModelConfig::large(vocab_size)),
            "tiny" => Some(ModelConfig::tiny(vocab_size)),
            _ => None,
        }
    }

    /// Attention inner width.
    pub fn inner_dim(&self) -> usize {
        self.num_heads * self.d_kv
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.num_blocks == 0
            || self.d_model == 0
            || self.d_ff == 0
            || self.d_kv == 0
            || self.num_heads == 0
            || self.max_len == 0
        {
            return bad("dimensions must be positive".to_string());
        }
        if self.vocab_size < 5 {
            return bad(format!("vocab_size {} below specials", self.vocab_size));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0,1)", self.dropout));
        }
        if self.rel_pos_buckets < 4 || self.rel_pos_buckets % 2 != 0 {
            return bad(format!(
                "rel_pos_buckets {} must be even and >= 4",
                self.rel_pos_buckets
            ));
        }
        if self.rel_pos_max_distance <= self.rel_pos_buckets / 2 {
            return bad("rel_pos_max_distance too small for bucket range".to_string());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnParams<T> {
    /// d_model × inner
    pub wq: Array2<T>,
    pub wk: Array2<T>,
    pub wv: Array2<T>,
    /// inner × d_model
    pub wo: Array2<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlock<T> {
    pub norm_attn: Array1<T>,
    pub attn: AttnParams<T>,
    pub norm_ff: Array1<T>,
    /// d_model × d_ff
    pub w_in: Array2<T>,
    /// d_ff × d_model
    pub w_out: Array2<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderBlock<T> {
    pub norm_self: Array1<T>,
    pub self_attn: AttnParams<T>,
    pub norm_cross: Array1<T>,
    pub cross_attn: AttnParams<T>,
    pub norm_ff: Array1<T>,
    pub w_in: Array2<T>,
    pub w_out: Array2<T>,
}

/// All learned tensors. The same structure doubles as the gradient and
/// optimizer-moment container.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T> {
    /// vocab_size × d_model, shared by encoder, decoder, and the output
    /// projection.
    pub embedding: Array2<T>,
    /// rel_pos_buckets × num_heads, shared across the encoder stack.
    pub enc_rel_bias: Array2<T>,
    pub dec_rel_bias: Array2<T>,
    pub encoder: Vec<EncoderBlock<T>>,
    pub decoder: Vec<DecoderBlock<T>>,
    pub enc_final_norm: Array1<T>,
    pub dec_final_norm: Array1<T>,
}

/// Borrowed view of one named tensor.
pub enum TensorRef<'a, T> {
    Vector(&'a Array1<T>),
    Matrix(&'a Array2<T>),
}

pub enum TensorMut<'a, T> {
    Vector(&'a mut Array1<T>),
    Matrix(&'a mut Array2<T>),
}

impl<T: Scalar> Parameters<T> {
    /// Zero-filled parameters with shapes from the config.
    pub fn zeros(cfg: &ModelConfig) -> Parameters<T> {
        let d = cfg.d_model;
        let inner = cfg.inner_dim();
        let attn = || AttnParams {
            wq: Array2::zeros((d, inner)),
            wk: Array2::zeros((d, inner)),
            wv: Array2::zeros((d, inner)),
            wo: Array2::zeros((inner, d)),
        };
        Parameters {
            embedding: Array2::zeros((cfg.vocab_size, d)),
            enc_rel_bias: Array2::zeros((cfg.rel_pos_buckets, cfg.num_heads)),
            dec_rel_bias: Array2::zeros((cfg.rel_pos_buckets, cfg.num_heads)),
            encoder: (0..cfg.num_blocks)
                .map(|_| EncoderBlock {
                    norm_attn: Array1::zeros(d),
                    attn: attn(),
                    norm_ff: Array1::zeros(d),
                    w_in: Array2::zeros((d, cfg.d_ff)),
                    w_out: Array2::zeros((cfg.d_ff, d)),
                })
                .collect(),
            decoder: (0..cfg.num_blocks)
                .map(|_| DecoderBlock {
                    norm_self: Array1::zeros(d),
                    self_attn: attn(),
                    norm_cross: Array1::zeros(d),
                    cross_attn: attn(),
                    norm_ff: Array1::zeros(d),
                    w_in: Array2::zeros((d, cfg.d_ff)),
                    w_out: Array2::zeros((cfg.d_ff, d)),
                })
                .collect(),
            enc_final_norm: Array1::zeros(d),
            dec_final_norm: Array1::zeros(d),
        }
    }

    /// Visit every tensor in a fixed order with its canonical name.
    pub fn for_each<'a>(&'a self, mut f: impl FnMut(String, TensorRef<'a, T>)) {
        f("embedding".to_string(), TensorRef::Matrix(&self.embedding));
        f(
            "enc_rel_bias".to_string(),
            TensorRef::Matrix(&self.enc_rel_bias),
        );
        f(
            "dec_rel_bias".to_string(),
            TensorRef::Matrix(&self.dec_rel_bias),
        );
        for (i, b) in self.encoder.iter().enumerate() {
            f(format!("enc.{i}.norm_attn"), TensorRef::Vector(&b.norm_attn));
            f(format!("enc.{i}.attn.wq"), TensorRef::Matrix(&b.attn.wq));
            f(format!("enc.{i}.attn.wk"), TensorRef::Matrix(&b.attn.wk));
            f(format!("enc.{i}.attn.wv"), TensorRef::Matrix(&b.attn.wv));
            f(format!("enc.{i}.attn.wo"), TensorRef::Matrix(&b.attn.wo));
            f(format!("enc.{i}.norm_ff"), TensorRef::Vector(&b.norm_ff));
            f(format!("enc.{i}.ff.w_in"), TensorRef::Matrix(&b.w_in));
            f(format!("enc.{i}.ff.w_out"), TensorRef::Matrix(&b.w_out));
        }
        for (i, b) in self.decoder.iter().enumerate() {
            f(format!("dec.{i}.norm_self"), TensorRef::Vector(&b.norm_self));
            f(
                format!("dec.{i}.self_attn.wq"),
                TensorRef::Matrix(&b.self_attn.wq),
            );
            f(
                format!("dec.{i}.self_attn.wk"),
                TensorRef::Matrix(&b.self_attn.wk),
            );
            f(
                format!("dec.{i}.self_attn.wv"),
                TensorRef::Matrix(&b.self_attn.wv),
            );
            f(
                format!("dec.{i}.self_attn.wo"),
                TensorRef::Matrix(&b.self_attn.wo),
            );
            f(format!("dec.{i}.norm_cross"), TensorRef::Vector(&b.norm_cross));
            f(
                format!("dec.{i}.cross_attn.wq"),
                TensorRef::Matrix(&b.cross_attn.wq),
            );
            f(
                format!("dec.{i}.cross_attn.wk"),
                TensorRef::Matrix(&b.cross_attn.wk),
            );
            f(
                format!("dec.{i}.cross_attn.wv"),
                TensorRef::Matrix(&b.cross_attn.wv),
            );
            f(
                format!("dec.{i}.cross_attn.wo"),
                TensorRef::Matrix(&b.cross_attn.wo),
            );
            f(format!("dec.{i}.norm_ff"), TensorRef::Vector(&b.norm_ff));
            f(format!("dec.{i}.ff.w_in"), TensorRef::Matrix(&b.w_in));
            f(format!("dec.{i}.ff.w_out"), TensorRef::Matrix(&b.w_out));
        }
        f(
            "enc_final_norm".to_string(),
            TensorRef::Vector(&self.enc_final_norm),
        );
        f(
            "dec_final_norm".to_string(),
            TensorRef::Vector(&self.dec_final_norm),
        );
    }

    /// Mutable visit in the same fixed order as [`Parameters::for_each`].
    pub fn for_each_mut(&mut self, mut f: impl FnMut(String, TensorMut<'_, T>)) {
        f(
            "embedding".to_string(),
            TensorMut::Matrix(&mut self.embedding),
        );
        f(
            "enc_rel_bias".to_string(),
            TensorMut::Matrix(&mut self.enc_rel_bias),
        );
        f(
            "dec_rel_bias".to_string(),
            TensorMut::Matrix(&mut self.dec_rel_bias),
        );
        for (i, b) in self.encoder.iter_mut().enumerate() {
            f(
                format!("enc.{i}.norm_attn"),
                TensorMut::Vector(&mut b.norm_attn),
            );
            f(format!("enc.{i}.attn.wq"), TensorMut::Matrix(&mut b.attn.wq));
            f(format!("enc.{i}.attn.wk"), TensorMut::Matrix(&mut b.attn.wk));
            f(format!("enc.{i}.attn.wv"), TensorMut::Matrix(&mut b.attn.wv));
            f(format!("enc.{i}.attn.wo"), TensorMut::Matrix(&mut b.attn.wo));
            f(format!("enc.{i}.norm_ff"), TensorMut::Vector(&mut b.norm_ff));
            f(format!("enc.{i}.ff.w_in"), TensorMut::Matrix(&mut b.w_in));
            f(format!("enc.{i}.ff.w_out"), TensorMut::Matrix(&mut b.w_out));
        }
        for (i, b) in self.decoder.iter_mut().enumerate() {
            f(
                format!("dec.{i}.norm_self"),
                TensorMut::Vector(&mut b.norm_self),
            );
            f(
                format!("dec.{i}.self_attn.wq"),
                TensorMut::Matrix(&mut b.self_attn.wq),
            );
            f(
                format!("dec.{i}.self_attn.wk"),
                TensorMut::Matrix(&mut b.self_attn.wk),
            );
            f(
                format!("dec.{i}.self_attn.wv"),
                TensorMut::Matrix(&mut b.self_attn.wv),
            );
            f(
                format!("dec.{i}.self_attn.wo"),
                TensorMut::Matrix(&mut b.self_attn.wo),
            );
            f(
                format!("dec.{i}.norm_cross"),
                TensorMut::Vector(&mut b.norm_cross),
            );
            f(
                format!("dec.{i}.cross_attn.wq"),
                TensorMut::Matrix(&mut b.cross_attn.wq),
            );
            f(
                format!("dec.{i}.cross_attn.wk"),
                TensorMut::Matrix(&mut b.cross_attn.wk),
            );
            f(
                format!("dec.{i}.cross_attn.wv"),
                TensorMut::Matrix(&mut b.cross_attn.wv),
            );
            f(
                format!("dec.{i}.cross_attn.wo"),
                TensorMut::Matrix(&mut b.cross_attn.wo),
            );
            f(format!("dec.{i}.norm_ff"), TensorMut::Vector(&mut b.norm_ff));
            f(format!("dec.{i}.ff.w_in"), TensorMut::Matrix(&mut b.w_in));
            f(format!("dec.{i}.ff.w_out"), TensorMut::Matrix(&mut b.w_out));
        }
        f(
            "enc_final_norm".to_string(),
            TensorMut::Vector(&mut self.enc_final_norm),
        );
        f(
            "dec_final_norm".to_string(),
            TensorMut::Vector(&mut self.dec_final_norm),
        );
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> u64 {
        let mut n = 0u64;
        self.for_each(|_, t| {
            n += match t {
                TensorRef::Vector(v) => v.len() as u64,
                TensorRef::Matrix(m) => m.len() as u64,
            }
        });
        n
    }

    /// Element-wise accumulate `other` into `self`.
    pub fn add_assign(&mut self, other: &Parameters<T>) {
        self.zip_mut(other, |a, b| a + b);
    }

    /// Element-wise combine: `self[i] = f(self[i], other[i])`.
    pub fn zip_mut(&mut self, other: &Parameters<T>, f: impl Fn(T, T) -> T + Copy) {
        fn zip1<T: Scalar>(a: &mut Array1<T>, b: &Array1<T>, f: impl Fn(T, T) -> T) {
            a.zip_mut_with(b, |x, &y| *x = f(*x, y));
        }
        fn zip2<T: Scalar>(a: &mut Array2<T>, b: &Array2<T>, f: impl Fn(T, T) -> T) {
            a.zip_mut_with(b, |x, &y| *x = f(*x, y));
        }
        let zip_attn = |a: &mut AttnParams<T>, b: &AttnParams<T>| {
            zip2(&mut a.wq, &b.wq, f);
            zip2(&mut a.wk, &b.wk, f);
            zip2(&mut a.wv, &b.wv, f);
            zip2(&mut a.wo, &b.wo, f);
        };
        zip2(&mut self.embedding, &other.embedding, f);
        zip2(&mut self.enc_rel_bias, &other.enc_rel_bias, f);
        zip2(&mut self.dec_rel_bias, &other.dec_rel_bias, f);
        for (a, b) in self.encoder.iter_mut().zip(&other.encoder) {
            zip1(&mut a.norm_attn, &b.norm_attn, f);
            zip_attn(&mut a.attn, &b.attn);
            zip1(&mut a.norm_ff, &b.norm_ff, f);
            zip2(&mut a.w_in, &b.w_in, f);
            zip2(&mut a.w_out, &b.w_out, f);
        }
        for (a, b) in self.decoder.iter_mut().zip(&other.decoder) {
            zip1(&mut a.norm_self, &b.norm_self, f);
            zip_attn(&mut a.self_attn, &b.self_attn);
            zip1(&mut a.norm_cross, &b.norm_cross, f);
            zip_attn(&mut a.cross_attn, &b.cross_attn);
            zip1(&mut a.norm_ff, &b.norm_ff, f);
            zip2(&mut a.w_in, &b.w_in, f);
            zip2(&mut a.w_out, &b.w_out, f);
        }
        zip1(&mut self.enc_final_norm, &other.enc_final_norm, f);
        zip1(&mut self.dec_final_norm, &other.dec_final_norm, f);
    }

    /// Scale every tensor in place.
    pub fn scale(&mut self, factor: T) {
        self.for_each_mut(|_, t| match t {
            TensorMut::Vector(v) => v.mapv_inplace(|x| x * factor),
            TensorMut::Matrix(m) => m.mapv_inplace(|x| x * factor),
        });
    }

    /// Name of the first tensor holding a non-finite value, if any.
    pub fn find_non_finite(&self) -> Option<String> {
        let mut bad = None;
        self.for_each(|name, t| {
            if bad.is_some() {
                return;
            }
            let has_bad = match t {
                TensorRef::Vector(v) => v.iter().any(|x| !x.is_finite()),
                TensorRef::Matrix(m) => m.iter().any(|x| !x.is_finite()),
            };
            if has_bad {
                bad = Some(name);
            }
        });
        bad
    }

    pub fn convert<U: Scalar>(&self) -> Parameters<U> {
        let conv1 = |a: &Array1<T>| a.mapv(|x| U::from_f64(x.to_f64()));
        let conv2 = |a: &Array2<T>| a.mapv(|x| U::from_f64(x.to_f64()));
        let attn = |a: &AttnParams<T>| AttnParams {
            wq: conv2(&a.wq),
            wk: conv2(&a.wk),
            wv: conv2(&a.wv),
            wo: conv2(&a.wo),
        };
        Parameters {
            embedding: conv2(&self.embedding),
            enc_rel_bias: conv2(&self.enc_rel_bias),
            dec_rel_bias: conv2(&self.dec_rel_bias),
            encoder: self
                .encoder
                .iter()
                .map(|b| EncoderBlock {
                    norm_attn: conv1(&b.norm_attn),
                    attn: attn(&b.attn),
                    norm_ff: conv1(&b.norm_ff),
                    w_in: conv2(&b.w_in),
                    w_out: conv2(&b.w_out),
                })
                .collect(),
            decoder: self
                .decoder
                .iter()
                .map(|b| DecoderBlock {
                    norm_self: conv1(&b.norm_self),
                    self_attn: attn(&b.self_attn),
                    norm_cross: conv1(&b.norm_cross),
                    cross_attn: attn(&b.cross_attn),
                    norm_ff: conv1(&b.norm_ff),
                    w_in: conv2(&b.w_in),
                    w_out: conv2(&b.w_out),
                })
                .collect(),
            enc_final_norm: conv1(&self.enc_final_norm),
            dec_final_norm: conv1(&self.dec_final_norm),
        }
    }
}

/// Deterministic initialization: projections scaled-normal with variance
/// 1/fan_in, embeddings unit-normal, norm scales 1, bias tables 0.
pub fn init_params<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<Parameters<T>, ModelError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Parameters::<T>::zeros(cfg);
    params.for_each_mut(|name, t| match t {
        TensorMut::Vector(v) => {
            if name.contains("norm") {
                v.fill(T::one());
            }
        }
        TensorMut::Matrix(m) => {
            if name.ends_with("rel_bias") {
                return;
            }
            let std = if name == "embedding" {
                1.0
            } else {
                (1.0 / m.nrows() as f64).sqrt()
            };
            let normal = Normal::new(0.0, std).expect("std is positive");
            for x in m.iter_mut() {
                *x = T::from_f64(normal.sample(&mut rng));
            }
        }
    });
    Ok(params)
}

/// Exact parameter count from shapes alone.
pub fn param_count(cfg: &ModelConfig) -> u64 {
    let d = cfg.d_model as u64;
    let inner = cfg.inner_dim() as u64;
    let ff = cfg.d_ff as u64;
    let blocks = cfg.num_blocks as u64;
    let embedding = cfg.vocab_size as u64 * d;
    let bias_tables = 2 * cfg.rel_pos_buckets as u64 * cfg.num_heads as u64;
    let attn = 3 * d * inner + inner * d;
    let ff_params = d * ff + ff * d;
    let enc_block = 2 * d + attn + ff_params;
    let dec_block = 3 * d + 2 * attn + ff_params;
    embedding + bias_tables + blocks * (enc_block + dec_block) + 2 * d
}

/// Mean token-level cross-entropy (natural log) over unmasked positions.
///
/// `pad_mask[r, t]` is true where position t of row r is a real target.
pub fn loss<T: Scalar>(
    logits: &Array3<T>,
    target_ids: &Array2<u32>,
    pad_mask: &Array2<bool>,
) -> Result<T, ModelError> {
    let (rows, steps, vocab) = logits.dim();
    if target_ids.dim() != (rows, steps) || pad_mask.dim() != (rows, steps) {
        return Err(ModelError::ShapeMismatch(format!(
            "logits {:?} vs targets {:?} vs mask {:?}",
            logits.dim(),
            target_ids.dim(),
            pad_mask.dim()
        )));
    }
    let mut total = T::zero();
    let mut count = 0usize;
    for r in 0..rows {
        for t in 0..steps {
            if !pad_mask[[r, t]] {
                continue;
            }
            let id = target_ids[[r, t]] as usize;
            if id >= vocab {
                return Err(ModelError::IdOutOfRange {
                    id: id as u32,
                    vocab,
                });
            }
            let row = logits.slice(ndarray::s![r, t, ..]);
            let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let log_z = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
            total = total + (log_z - row[id]);
            count += 1;
        }
    }
    if count == 0 {
        return Err(ModelError::AllPadTargets);
    }
    Ok(total / T::from_f64(count as f64))
}

/// Forward pass over a padded batch. Returns logits of shape
/// (batch, target_len, vocab). Pad positions in the encoder input are
/// masked out of attention; inference mode is a pure function of
/// parameters and inputs.
pub fn forward<T: Scalar>(
    params: &Parameters<T>,
    cfg: &ModelConfig,
    input_ids: &Array2<u32>,
    decoder_input_ids: &Array2<u32>,
    train_mode: bool,
    dropout_seed: u64,
) -> Result<Array3<T>, ModelError> {
    net::forward_batch(
        params,
        cfg,
        input_ids,
        decoder_input_ids,
        train_mode,
        dropout_seed,
    )
}

/// Loss and parameter gradients for one batch (targets shifted right
/// internally). Returns the mean cross-entropy and a gradient container
/// with the same structure as the parameters.
pub fn backward<T: Scalar>(
    params: &Parameters<T>,
    cfg: &ModelConfig,
    batch: &Batch,
    train_mode: bool,
    dropout_seed: u64,
) -> Result<(T, Parameters<T>), ModelError> {
    net::loss_and_grad(params, cfg, batch, train_mode, dropout_seed)
}

/// Teacher-forced argmax accuracy over non-pad target positions.
pub fn token_accuracy<T: Scalar>(
    params: &Parameters<T>,
    cfg: &ModelConfig,
    batch: &Batch,
) -> Result<f64, ModelError> {
    net::token_accuracy(params, cfg, batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn preset_param_counts_match_published_sizes() {
        let within = |cfg: &ModelConfig, target_millions: f64| {
            let count = param_count(cfg) as f64;
            let target = target_millions * 1e6;
            let err = (count - target).abs() / target;
            assert!(err < 0.05, "param count {count} vs {target} (err {err:.3})");
        };
        within(&ModelConfig::small(32_000), 60.0);
        within(&ModelConfig::base(32_000), 220.0);
        within(&ModelConfig::large(32_000), 770.0);
    }

    #[test]
    fn param_count_matches_hand_sum_on_tiny_shapes() {
        let cfg = ModelConfig {
            num_blocks: 1,
            d_model: 8,
            d_ff: 16,
            d_kv: 4,
            num_heads: 2,
            vocab_size: 16,
            dropout: 0.0,
            max_len: 16,
            rel_pos_buckets: 4,
            rel_pos_max_distance: 8,
        };
        // Hand sum: embedding 16*8=128; bias tables 2*4*2=16;
        // enc block: 2*8 + (3*8*8 + 8*8) + (8*16 + 16*8) = 16+256+256=528;
        // dec block: 3*8 + 2*256 + 256 = 24+512+256=792;
        // final norms 2*8=16. Total = 128+16+528+792+16 = 1480.
        assert_eq!(param_count(&cfg), 1480);
        let params = init_params::<f32>(&cfg, 0).unwrap();
        assert_eq!(params.count(), 1480);
    }

    #[test]
    fn init_is_deterministic_and_biases_zero() {
        let cfg = ModelConfig::tiny(32);
        let a = init_params::<f32>(&cfg, 7).unwrap();
        let b = init_params::<f32>(&cfg, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.enc_rel_bias.iter().all(|&x| x == 0.0));
        assert!(a.dec_rel_bias.iter().all(|&x| x == 0.0));
        assert!(a.encoder[0].norm_attn.iter().all(|&x| x == 1.0));
        let c = init_params::<f32>(&cfg, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_logits_loss_is_ln_vocab() {
        let vocab = 11;
        let logits = Array3::<f64>::zeros((2, 3, vocab));
        let targets = Array2::<u32>::from_shape_fn((2, 3), |(r, t)| ((r + t) % vocab) as u32);
        let mask = Array2::from_elem((2, 3), true);
        let l = loss(&logits, &targets, &mask).unwrap();
        assert!((l - (vocab as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_drive_loss_to_zero() {
        let vocab = 7;
        let targets = Array2::<u32>::from_shape_fn((1, 4), |(_, t)| (t % vocab) as u32);
        let mask = Array2::from_elem((1, 4), true);
        for (margin, bound) in [(5.0, 0.05), (12.0, 1e-4)] {
            let mut logits = Array3::<f64>::zeros((1, 4, vocab));
            for t in 0..4 {
                logits[[0, t, targets[[0, t]] as usize]] = margin;
            }
            let l = loss(&logits, &targets, &mask).unwrap();
            assert!(l < bound, "margin {margin}: loss {l}");
        }
    }

    #[test]
    fn loss_matches_scalar_oracle_on_random_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vocab = 9;
        let logits =
            Array3::<f64>::from_shape_fn((2, 3, vocab), |_| rng.random_range(-2.0..2.0));
        let targets =
            Array2::<u32>::from_shape_fn((2, 3), |_| rng.random_range(0..vocab as u32));
        let mut mask = Array2::from_elem((2, 3), true);
        mask[[1, 2]] = false;

        // Scalar per-position softmax oracle.
        let mut sum = 0.0;
        let mut n = 0;
        for r in 0..2 {
            for t in 0..3 {
                if !mask[[r, t]] {
                    continue;
                }
                let z: f64 = (0..vocab).map(|v| logits[[r, t, v]].exp()).sum();
                let p = logits[[r, t, targets[[r, t]] as usize]].exp() / z;
                sum += -p.ln();
                n += 1;
            }
        }
        let want = sum / n as f64;
        let got = loss(&logits, &targets, &mask).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn all_pad_targets_error() {
        let logits = Array3::<f64>::zeros((1, 2, 5));
        let targets = Array2::<u32>::zeros((1, 2));
        let mask = Array2::from_elem((1, 2), false);
        assert!(matches!(
            loss(&logits, &targets, &mask),
            Err(ModelError::AllPadTargets)
        ));
    }
}
