//! Encoder-decoder forward pass, manual backward pass, and greedy
//! decoding.
//!
//! Batch rows are processed independently at their true lengths; padded
//! encoder positions are masked out of attention by id. Gradient
//! accumulation runs over fixed-size row chunks so the floating-point
//! reduction order is independent of the thread count.

use ndarray::{s, Array1, Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::ops::{
    bucket_matrix, relu, relu_bwd, rms_norm, rms_norm_bwd, softmax_rows, softmax_rows_bwd,
};
use super::{AttnParams, ModelConfig, ModelError, Parameters, Scalar};
use crate::mixture::Batch;
use crate::seeds::stream_seed;
use crate::subword::{EOS_ID, PAD_ID};

const MASKED_LOGIT: f64 = -1e9;

/// Rows per gradient-accumulation chunk; fixed so results do not depend
/// on the worker count.
const CHUNK_ROWS: usize = 4;

struct Dropout {
    rng: ChaCha8Rng,
    keep_inv: f64,
    p: f64,
    active: bool,
}

impl Dropout {
    fn new(p: f32, train_mode: bool, seed: u64) -> Dropout {
        let p = p as f64;
        Dropout {
            rng: ChaCha8Rng::seed_from_u64(seed),
            keep_inv: 1.0 / (1.0 - p),
            p,
            active: train_mode && p > 0.0,
        }
    }

    /// Scaled inverted-dropout mask, or None when inactive.
    fn mask<T: Scalar>(&mut self, rows: usize, cols: usize) -> Option<Array2<T>> {
        if !self.active {
            return None;
        }
        let mut m = Array2::zeros((rows, cols));
        for v in m.iter_mut() {
            if self.rng.random::<f64>() >= self.p {
                *v = T::from_f64(self.keep_inv);
            }
        }
        Some(m)
    }
}

fn apply_mask<T: Scalar>(x: &Array2<T>, mask: &Option<Array2<T>>) -> Array2<T> {
    match mask {
        Some(m) => x * m,
        None => x.clone(),
    }
}

fn embed<T: Scalar>(table: &Array2<T>, ids: &[u32]) -> Array2<T> {
    let d = table.ncols();
    let mut out = Array2::zeros((ids.len(), d));
    for (r, &id) in ids.iter().enumerate() {
        out.row_mut(r).assign(&table.row(id as usize));
    }
    out
}

fn scatter_embed_grad<T: Scalar>(grad: &mut Array2<T>, ids: &[u32], dx: &Array2<T>) {
    for (r, &id) in ids.iter().enumerate() {
        let mut row = grad.row_mut(id as usize);
        row += &dx.row(r);
    }
}

/// Additive key mask from encoder pad positions, broadcast over queries.
fn pad_key_mask<T: Scalar>(query_len: usize, key_ids: &[u32]) -> Array2<T> {
    let masked = T::from_f64(MASKED_LOGIT);
    Array2::from_shape_fn((query_len, key_ids.len()), |(_, k)| {
        if key_ids[k] == PAD_ID {
            masked
        } else {
            T::zero()
        }
    })
}

fn causal_mask<T: Scalar>(len: usize) -> Array2<T> {
    let masked = T::from_f64(MASKED_LOGIT);
    Array2::from_shape_fn((len, len), |(q, k)| if k > q { masked } else { T::zero() })
}

struct AttnCache<T> {
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    weights: Vec<Array2<T>>,
    ctx: Array2<T>,
}

fn attn_fwd<T: Scalar>(
    p: &AttnParams<T>,
    xq: &Array2<T>,
    xkv: &Array2<T>,
    heads: usize,
    d_kv: usize,
    bias: Option<(&Array2<T>, &Array2<usize>)>,
    mask: &Array2<T>,
) -> (Array2<T>, AttnCache<T>) {
    let tau = T::from_f64(1.0 / (d_kv as f64).sqrt());
    let q = xq.dot(&p.wq);
    let k = xkv.dot(&p.wk);
    let v = xkv.dot(&p.wv);
    let nq = xq.nrows();
    let inner = heads * d_kv;
    let mut ctx = Array2::zeros((nq, inner));
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * d_kv..(h + 1) * d_kv];
        let qh = q.slice(cols);
        let kh = k.slice(cols);
        let vh = v.slice(cols);
        let mut scores = qh.dot(&kh.t()).mapv(|x| x * tau);
        if let Some((table, buckets)) = bias {
            for qi in 0..scores.nrows() {
                for ki in 0..scores.ncols() {
                    scores[[qi, ki]] = scores[[qi, ki]] + table[[buckets[[qi, ki]], h]];
                }
            }
        }
        scores += mask;
        let a = softmax_rows(&scores);
        let ctx_h = a.dot(&vh);
        ctx.slice_mut(cols).assign(&ctx_h);
        weights.push(a);
    }
    let out = ctx.dot(&p.wo);
    (out, AttnCache { q, k, v, weights, ctx })
}

/// Backward of [`attn_fwd`]; returns (d_xq, d_xkv) and accumulates
/// projection and bias-table gradients.
#[allow(clippy::too_many_arguments)]
fn attn_bwd<T: Scalar>(
    p: &AttnParams<T>,
    cache: &AttnCache<T>,
    xq: &Array2<T>,
    xkv: &Array2<T>,
    d_out: &Array2<T>,
    heads: usize,
    d_kv: usize,
    bias_grad: Option<(&mut Array2<T>, &Array2<usize>)>,
    grads: &mut AttnParams<T>,
) -> (Array2<T>, Array2<T>) {
    let tau = T::from_f64(1.0 / (d_kv as f64).sqrt());
    grads.wo = &grads.wo + &cache.ctx.t().dot(d_out);
    let d_ctx = d_out.dot(&p.wo.t());
    let nq = cache.q.nrows();
    let nk = cache.k.nrows();
    let inner = heads * d_kv;
    let mut dq = Array2::zeros((nq, inner));
    let mut dk = Array2::zeros((nk, inner));
    let mut dv = Array2::zeros((nk, inner));
    let mut bias_grad = bias_grad;
    for h in 0..heads {
        let cols = s![.., h * d_kv..(h + 1) * d_kv];
        let a = &cache.weights[h];
        let d_ctx_h = d_ctx.slice(cols);
        let d_a = d_ctx_h.dot(&cache.v.slice(cols).t());
        dv.slice_mut(cols).assign(&a.t().dot(&d_ctx_h));
        let d_scores = softmax_rows_bwd(a, &d_a);
        if let Some((ref mut table_grad, buckets)) = bias_grad {
            for qi in 0..nq {
                for ki in 0..nk {
                    let b = buckets[[qi, ki]];
                    table_grad[[b, h]] = table_grad[[b, h]] + d_scores[[qi, ki]];
                }
            }
        }
        let d_scaled = d_scores.mapv(|x| x * tau);
        dq.slice_mut(cols)
            .assign(&d_scaled.dot(&cache.k.slice(cols)));
        dk.slice_mut(cols)
            .assign(&d_scaled.t().dot(&cache.q.slice(cols)));
    }
    grads.wq = &grads.wq + &xq.t().dot(&dq);
    grads.wk = &grads.wk + &xkv.t().dot(&dk);
    grads.wv = &grads.wv + &xkv.t().dot(&dv);
    let d_xq = dq.dot(&p.wq.t());
    let d_xkv = dk.dot(&p.wk.t()) + dv.dot(&p.wv.t());
    (d_xq, d_xkv)
}

struct SublayerCache<T> {
    x_in: Array2<T>,
    inv_rms: Array1<T>,
    normed: Array2<T>,
    drop: Option<Array2<T>>,
}

struct FfCache<T> {
    norm: SublayerCache<T>,
    pre: Array2<T>,
    act: Array2<T>,
}

struct EncBlockCache<T> {
    attn_norm: SublayerCache<T>,
    attn: AttnCache<T>,
    ff: FfCache<T>,
}

struct DecBlockCache<T> {
    self_norm: SublayerCache<T>,
    self_attn: AttnCache<T>,
    cross_norm: SublayerCache<T>,
    cross_attn: AttnCache<T>,
    ff: FfCache<T>,
}

struct EncoderCache<T> {
    ids: Vec<u32>,
    emb_drop: Option<Array2<T>>,
    blocks: Vec<EncBlockCache<T>>,
    final_in: Array2<T>,
    final_inv: Array1<T>,
    out: Array2<T>,
    buckets: Array2<usize>,
}

struct DecoderCache<T> {
    ids: Vec<u32>,
    emb_drop: Option<Array2<T>>,
    blocks: Vec<DecBlockCache<T>>,
    final_in: Array2<T>,
    final_inv: Array1<T>,
    scaled: Array2<T>,
    buckets: Array2<usize>,
}

fn encode_stack<T: Scalar>(
    p: &Parameters<T>,
    cfg: &ModelConfig,
    ids: &[u32],
    dropout: &mut Dropout,
) -> EncoderCache<T> {
    let n = ids.len();
    let buckets = bucket_matrix(n, n, true, cfg.rel_pos_buckets, cfg.rel_pos_max_distance);
    let self_mask = pad_key_mask::<T>(n, ids);
    let embedded = embed(&p.embedding, ids);
    let emb_drop = dropout.mask(n, cfg.d_model);
    let mut x = apply_mask(&embedded, &emb_drop);
    let mut blocks = Vec::with_capacity(cfg.num_blocks);
    for block in &p.encoder {
        let (normed, inv_rms) = rms_norm(&x, &block.norm_attn);
        let (attn_out, attn) = attn_fwd(
            &block.attn,
            &normed,
            &normed,
            cfg.num_heads,
            cfg.d_kv,
            Some((&p.enc_rel_bias, &buckets)),
            &self_mask,
        );
        let drop = dropout.mask(n, cfg.d_model);
        let attn_norm = SublayerCache {
            x_in: x.clone(),
            inv_rms,
            normed,
            drop,
        };
        x = &x + &apply_mask(&attn_out, &attn_norm.drop);

        let (normed, inv_rms) = rms_norm(&x, &block.norm_ff);
        let pre = normed.dot(&block.w_in);
        let act = relu(&pre);
        let ff_out = act.dot(&block.w_out);
        let drop = dropout.mask(n, cfg.d_model);
        let ff = FfCache {
            norm: SublayerCache {
                x_in: x.clone(),
                inv_rms,
                normed,
                drop,
            },
            pre,
            act,
        };
        x = &x + &apply_mask(&ff_out, &ff.norm.drop);
        blocks.push(EncBlockCache {
            attn_norm,
            attn,
            ff,
        });
    }
    let (out, final_inv) = rms_norm(&x, &p.enc_final_norm);
    EncoderCache {
        ids: ids.to_vec(),
        emb_drop,
        blocks,
        final_in: x,
        final_inv,
        out,
        buckets,
    }
}

fn decode_stack<T: Scalar>(
    p: &Parameters<T>,
    cfg: &ModelConfig,
    enc: &EncoderCache<T>,
    ids: &[u32],
    dropout: &mut Dropout,
) -> (Array2<T>, DecoderCache<T>) {
    let m = ids.len();
    let buckets = bucket_matrix(m, m, false, cfg.rel_pos_buckets, cfg.rel_pos_max_distance);
    let self_mask = causal_mask::<T>(m);
    let cross_mask = pad_key_mask::<T>(m, &enc.ids);
    let embedded = embed(&p.embedding, ids);
    let emb_drop = dropout.mask(m, cfg.d_model);
    let mut x = apply_mask(&embedded, &emb_drop);
    let mut blocks = Vec::with_capacity(cfg.num_blocks);
    for block in &p.decoder {
        let (normed, inv_rms) = rms_norm(&x, &block.norm_self);
        let (attn_out, self_attn) = attn_fwd(
            &block.self_attn,
            &normed,
            &normed,
            cfg.num_heads,
            cfg.d_kv,
            Some((&p.dec_rel_bias, &buckets)),
            &self_mask,
        );
        let drop = dropout.mask(m, cfg.d_model);
        let self_norm = SublayerCache {
            x_in: x.clone(),
            inv_rms,
            normed,
            drop,
        };
        x = &x + &apply_mask(&attn_out, &self_norm.drop);

        let (normed, inv_rms) = rms_norm(&x, &block.norm_cross);
        let (cross_out, cross_attn) = attn_fwd(
            &block.cross_attn,
            &normed,
            &enc.out,
            cfg.num_heads,
            cfg.d_kv,
            None,
            &cross_mask,
        );
        let drop = dropout.mask(m, cfg.d_model);
        let cross_norm = SublayerCache {
            x_in: x.clone(),
            inv_rms,
            normed,
            drop,
        };
        x = &x + &apply_mask(&cross_out, &cross_norm.drop);

        let (normed, inv_rms) = rms_norm(&x, &block.norm_ff);
        let pre = normed.dot(&block.w_in);
        let act = relu(&pre);
        let ff_out = act.dot(&block.w_out);
        let drop = dropout.mask(m, cfg.d_model);
        let ff = FfCache {
            norm: SublayerCache {
                x_in: x.clone(),
                inv_rms,
                normed,
                drop,
            },
            pre,
            act,
        };
        x = &x + &apply_mask(&ff_out, &ff.norm.drop);
        blocks.push(DecBlockCache {
            self_norm,
            self_attn,
            cross_norm,
            cross_attn,
            ff,
        });
    }
    let (final_out, final_inv) = rms_norm(&x, &p.dec_final_norm);
    let scale = T::from_f64(1.0 / (cfg.d_model as f64).sqrt());
    let scaled = final_out.mapv(|v| v * scale);
    let logits = scaled.dot(&p.embedding.t());
    (
        logits,
        DecoderCache {
            ids: ids.to_vec(),
            emb_drop,
            blocks,
            final_in: x,
            final_inv,
            scaled,
            buckets,
        },
    )
}

struct ExampleCache<T> {
    enc: EncoderCache<T>,
    dec: DecoderCache<T>,
}

fn forward_one<T: Scalar>(
    p: &Parameters<T>,
    cfg: &ModelConfig,
    enc_ids: &[u32],
    dec_ids: &[u32],
    train_mode: bool,
    dropout_seed: u64,
) -> (Array2<T>, ExampleCache<T>) {
    let mut dropout = Dropout::new(cfg.dropout, train_mode, dropout_seed);
    let enc = encode_stack(p, cfg, enc_ids, &mut dropout);
    let (logits, dec) = decode_stack(p, cfg, &enc, dec_ids, &mut dropout);
    (logits, ExampleCache { enc, dec })
}

/// Backward through one example given d(logits); accumulates into `grads`.
fn backward_one<T: Scalar>(
    p: &Parameters<T>,
    cfg: &ModelConfig,
    cache: &ExampleCache<T>,
    d_logits: &Array2<T>,
    grads: &mut Parameters<T>,
) {
    let scale = T::from_f64(1.0 / (cfg.d_model as f64).sqrt());

    // Tied output projection: logits = scaled . E^T.
    grads.embedding = &grads.embedding + &d_logits.t().dot(&cache.dec.scaled);
    let d_scaled = d_logits.dot(&p.embedding);
    let d_final = d_scaled.mapv(|v| v * scale);

    // Decoder final norm.
    let mut d_dec_final_norm = Array1::zeros(cfg.d_model);
    let mut dx = rms_norm_bwd(
        &d_final,
        &cache.dec.final_in,
        &p.dec_final_norm,
        &cache.dec.final_inv,
        &mut d_dec_final_norm,
    );
    grads.dec_final_norm = &grads.dec_final_norm + &d_dec_final_norm;

    let mut d_enc_out: Array2<T> = Array2::zeros(cache.enc.out.raw_dim());
    for (bi, block) in p.decoder.iter().enumerate().rev() {
        let c = &cache.dec.blocks[bi];
        let g = &mut grads.decoder[bi];

        // Feed-forward sublayer.
        let d_ff_out = apply_mask(&dx, &c.ff.norm.drop);
        g.w_out = &g.w_out + &c.ff.act.t().dot(&d_ff_out);
        let d_act = d_ff_out.dot(&block.w_out.t());
        let d_pre = relu_bwd(&c.ff.pre, &d_act);
        g.w_in = &g.w_in + &c.ff.norm.normed.t().dot(&d_pre);
        let d_normed = d_pre.dot(&block.w_in.t());
        let mut d_gain = Array1::zeros(cfg.d_model);
        let d_from_norm = rms_norm_bwd(
            &d_normed,
            &c.ff.norm.x_in,
            &block.norm_ff,
            &c.ff.norm.inv_rms,
            &mut d_gain,
        );
        g.norm_ff = &g.norm_ff + &d_gain;
        dx += &d_from_norm;

        // Cross-attention sublayer.
        let d_cross_out = apply_mask(&dx, &c.cross_norm.drop);
        let mut attn_grads = AttnParams {
            wq: Array2::zeros(block.cross_attn.wq.raw_dim()),
            wk: Array2::zeros(block.cross_attn.wk.raw_dim()),
            wv: Array2::zeros(block.cross_attn.wv.raw_dim()),
            wo: Array2::zeros(block.cross_attn.wo.raw_dim()),
        };
        let (d_q_side, d_kv_side) = attn_bwd(
            &block.cross_attn,
            &c.cross_attn,
            &c.cross_norm.normed,
            &cache.enc.out,
            &d_cross_out,
            cfg.num_heads,
            cfg.d_kv,
            None,
            &mut attn_grads,
        );
        g.cross_attn.wq = &g.cross_attn.wq + &attn_grads.wq;
        g.cross_attn.wk = &g.cross_attn.wk + &attn_grads.wk;
        g.cross_attn.wv = &g.cross_attn.wv + &attn_grads.wv;
        g.cross_attn.wo = &g.cross_attn.wo + &attn_grads.wo;
        d_enc_out += &d_kv_side;
        let mut d_gain = Array1::zeros(cfg.d_model);
        let d_from_norm = rms_norm_bwd(
            &d_q_side,
            &c.cross_norm.x_in,
            &block.norm_cross,
            &c.cross_norm.inv_rms,
            &mut d_gain,
        );
        g.norm_cross = &g.norm_cross + &d_gain;
        dx += &d_from_norm;

        // Self-attention sublayer.
        let d_self_out = apply_mask(&dx, &c.self_norm.drop);
        let mut attn_grads = AttnParams {
            wq: Array2::zeros(block.self_attn.wq.raw_dim()),
            wk: Array2::zeros(block.self_attn.wk.raw_dim()),
            wv: Array2::zeros(block.self_attn.wv.raw_dim()),
            wo: Array2::zeros(block.self_attn.wo.raw_dim()),
        };
        let (d_q_side, d_kv_side) = attn_bwd(
            &block.self_attn,
            &c.self_attn,
            &c.self_norm.normed,
            &c.self_norm.normed,
            &d_self_out,
            cfg.num_heads,
            cfg.d_kv,
            Some((&mut grads.dec_rel_bias, &cache.dec.buckets)),
            &mut attn_grads,
        );
        g.self_attn.wq = &g.self_attn.wq + &attn_grads.wq;
        g.self_attn.wk = &g.self_attn.wk + &attn_grads.wk;
        g.self_attn.wv = &g.self_attn.wv + &attn_grads.wv;
        g.self_attn.wo = &g.self_attn.wo + &attn_grads.wo;
        let d_normed = d_q_side + d_kv_side;
        let mut d_gain = Array1::zeros(cfg.d_model);
        let d_from_norm = rms_norm_bwd(
            &d_normed,
            &c.self_norm.x_in,
            &block.norm_self,
            &c.self_norm.inv_rms,
            &mut d_gain,
        );
        g.norm_self = &g.norm_self + &d_gain;
        dx += &d_from_norm;
    }
    let d_dec_embedded = apply_mask(&dx, &cache.dec.emb_drop);
    scatter_embed_grad(&mut grads.embedding, &cache.dec.ids, &d_dec_embedded);

    // Encoder backward from the accumulated cross-attention gradient.
    let mut d_enc_final_norm = Array1::zeros(cfg.d_model);
    let mut dx = rms_norm_bwd(
        &d_enc_out,
        &cache.enc.final_in,
        &p.enc_final_norm,
        &cache.enc.final_inv,
        &mut d_enc_final_norm,
    );
    grads.enc_final_norm = &grads.enc_final_norm + &d_enc_final_norm;

    for (bi, block) in p.encoder.iter().enumerate().rev() {
        let c = &cache.enc.blocks[bi];
        let g = &mut grads.encoder[bi];

        let d_ff_out = apply_mask(&dx, &c.ff.norm.drop);
        g.w_out = &g.w_out + &c.ff.act.t().dot(&d_ff_out);
        let d_act = d_ff_out.dot(&block.w_out.t());
        let d_pre = relu_bwd(&c.ff.pre, &d_act);
        g.w_in = &g.w_in + &c.ff.norm.normed.t().dot(&d_pre);
        let d_normed = d_pre.dot(&block.w_in.t());
        let mut d_gain = Array1::zeros(cfg.d_model);
        let d_from_norm = rms_norm_bwd(
            &d_normed,
            &c.ff.norm.x_in,
            &block.norm_ff,
            &c.ff.norm.inv_rms,
            &mut d_gain,
        );
        g.norm_ff = &g.norm_ff + &d_gain;
        dx += &d_from_norm;

        let d_attn_out = apply_mask(&dx, &c.attn_norm.drop);
        let mut attn_grads = AttnParams {
            wq: Array2::zeros(block.attn.wq.raw_dim()),
            wk: Array2::zeros(block.attn.wk.raw_dim()),
            wv: Array2::zeros(block.attn.wv.raw_dim()),
            wo: Array2::zeros(block.attn.wo.raw_dim()),
        };
        let (d_q_side, d_kv_side) = attn_bwd(
            &block.attn,
            &c.attn,
            &c.attn_norm.normed,
            &c.attn_norm.normed,
            &d_attn_out,
            cfg.num_heads,
            cfg.d_kv,
            Some((&mut grads.enc_rel_bias, &cache.enc.buckets)),
            &mut attn_grads,
        );
        g.attn.wq = &g.attn.wq + &attn_grads.wq;
        g.attn.wk = &g.attn.wk + &attn_grads.wk;
        g.attn.wv = &g.attn.wv + &attn_grads.wv;
        g.attn.wo = &g.attn.wo + &attn_grads.wo;
        let d_normed = d_q_side + d_kv_side;
        let mut d_gain = Array1::zeros(cfg.d_model);
        let d_from_norm = rms_norm_bwd(
            &d_normed,
            &c.attn_norm.x_in,
            &block.norm_attn,
            &c.attn_norm.inv_rms,
            &mut d_gain,
        );
        g.norm_attn = &g.norm_attn + &d_gain;
        dx += &d_from_norm;
    }
    let d_enc_embedded = apply_mask(&dx, &cache.enc.emb_drop);
    scatter_embed_grad(&mut grads.embedding, &cache.enc.ids, &d_enc_embedded);
}

fn validate_ids(ids: &[u32], cfg: &ModelConfig) -> Result<(), ModelError> {
    if ids.len() > cfg.max_len {
        return Err(ModelError::TooLong {
            len: ids.len(),
            max_len: cfg.max_len,
        });
    }
    if let Some(&bad) = ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(ModelError::IdOutOfRange {
            id: bad,
            vocab: cfg.vocab_size,
        });
    }
    Ok(())
}

/// Targets shifted right with pad as the start token.
pub(crate) fn shift_right(target_ids: &[u32]) -> Vec<u32> {
    let mut dec = Vec::with_capacity(target_ids.len());
    dec.push(PAD_ID);
    dec.extend_from_slice(&target_ids[..target_ids.len().saturating_sub(1)]);
    dec
}

pub(crate) fn forward_batch<T: Scalar>(
    params: &Parameters<T>,
    cfg: &ModelConfig,
    input_ids: &Array2<u32>,
    decoder_input_ids: &Array2<u32>,
    train_mode: bool,
    dropout_seed: u64,
) -> Result<Array3<T>, ModelError> {
    cfg.validate()?;
    if input_ids.nrows() != decoder_input_ids.nrows() {
        return Err(ModelError::ShapeMismatch(format!(
            "{} encoder rows vs {} decoder rows",
            input_ids.nrows(),
            decoder_input_ids.nrows()
        )));
    }
    let rows = input_ids.nrows();
    let tgt_len = decoder_input_ids.ncols();
    let mut logits = Array3::zeros((rows, tgt_len, cfg.vocab_size));
    let row_results: Vec<Array2<T>> = (0..rows)
        .into_par_iter()
        .map(|r| {
            let enc: Vec<u32> = input_ids.row(r).to_vec();
            let dec: Vec<u32> = decoder_input_ids.row(r).to_vec();
            validate_ids(&enc, cfg)?;
            validate_ids(&dec, cfg)?;
            let seed = stream_seed(dropout_seed, 0x0f0f, r as u64);
            Ok(forward_one(params, cfg, &enc, &dec, train_mode, seed).0)
        })
        .collect::<Result<_, ModelError>>()?;
    for (r, row_logits) in row_results.into_iter().enumerate() {
        logits.slice_mut(s![r, .., ..]).assign(&row_logits);
    }
    Ok(logits)
}

/// Loss and gradients over a batch, chunked for deterministic parallel
/// accumulation.
pub(crate) fn loss_and_grad<T: Scalar>(
    params: &Parameters<T>,
    cfg: &ModelConfig,
    batch: &Batch,
    train_mode: bool,
    dropout_seed: u64,
) -> Result<(T, Parameters<T>), ModelError> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(ModelError::AllPadTargets);
    }
    let rows: Vec<usize> = (0..batch.len()).collect();
    let chunk_results: Vec<Result<(Parameters<T>, f64, usize), ModelError>> = rows
        .par_chunks(CHUNK_ROWS)
        .map(|chunk| {
            let mut grads = Parameters::<T>::zeros(cfg);
            let mut loss_sum = 0.0f64;
            let mut tokens = 0usize;
            for &r in chunk {
                let enc: Vec<u32> = batch.input.row(r).to_vec()[..batch.input_len[r]].to_vec();
                let tgt: Vec<u32> = batch.target.row(r).to_vec()[..batch.target_len[r]].to_vec();
                validate_ids(&enc, cfg)?;
                validate_ids(&tgt, cfg)?;
                let dec_in = shift_right(&tgt);
                let seed = stream_seed(dropout_seed, 0x0d0d, r as u64);
                let (logits, cache) =
                    forward_one(params, cfg, &enc, &dec_in, train_mode, seed);
                // d(sum CE)/d(logits) = softmax - onehot per position.
                let mut d_logits = softmax_rows(&logits);
                for (t, &target) in tgt.iter().enumerate() {
                    let p_target = d_logits[[t, target as usize]].to_f64();
                    loss_sum += -p_target.max(f64::MIN_POSITIVE).ln();
                    d_logits[[t, target as usize]] =
                        d_logits[[t, target as usize]] - T::one();
                    tokens += 1;
                }
                backward_one(params, cfg, &cache, &d_logits, &mut grads);
            }
            Ok((grads, loss_sum, tokens))
        })
        .collect();

    let mut total = Parameters::<T>::zeros(cfg);
    let mut loss_sum = 0.0f64;
    let mut tokens = 0usize;
    for res in chunk_results {
        let (grads, l, n) = res?;
        total.add_assign(&grads);
        loss_sum += l;
        tokens += n;
    }
    if tokens == 0 {
        return Err(ModelError::AllPadTargets);
    }
    total.scale(T::from_f64(1.0 / tokens as f64));
    let loss = loss_sum / tokens as f64;
    if !loss.is_finite() {
        return Err(ModelError::NonFiniteLoss);
    }
    if let Some(name) = total.find_non_finite() {
        return Err(ModelError::NonFiniteGradient(name));
    }
    Ok((T::from_f64(loss), total))
}

pub(crate) fn token_accuracy<T: Scalar>(
    params: &Parameters<T>,
    cfg: &ModelConfig,
    batch: &Batch,
) -> Result<f64, ModelError> {
    let counts: Vec<Result<(usize, usize), ModelError>> = (0..batch.len())
        .into_par_iter()
        .map(|r| {
            let enc: Vec<u32> = batch.input.row(r).to_vec()[..batch.input_len[r]].to_vec();
            let tgt: Vec<u32> = batch.target.row(r).to_vec()[..batch.target_len[r]].to_vec();
            validate_ids(&enc, cfg)?;
            validate_ids(&tgt, cfg)?;
            let dec_in = shift_right(&tgt);
            let (logits, _) = forward_one(params, cfg, &enc, &dec_in, false, 0);
            let mut hit = 0usize;
            for (t, &target) in tgt.iter().enumerate() {
                let row = logits.row(t);
                let mut best = 0usize;
                for v in 1..row.len() {
                    if row[v] > row[best] {
                        best = v;
                    }
                }
                if best as u32 == target {
                    hit += 1;
                }
            }
            Ok((hit, tgt.len()))
        })
        .collect();
    let mut hits = 0usize;
    let mut total = 0usize;
    for c in counts {
        let (h, n) = c?;
        hits += h;
        total += n;
    }
    if total == 0 {
        return Err(ModelError::AllPadTargets);
    }
    Ok(hits as f64 / total as f64)
}

/// Greedy autoregressive decoding: append the argmax token until eos or
/// `max_out`. The returned sequence excludes the start token and eos.
pub fn greedy_decode<T: Scalar>(
    params: &Parameters<T>,
    cfg: &ModelConfig,
    input_ids: &[u32],
    max_out: usize,
) -> Result<Vec<u32>, ModelError> {
    cfg.validate()?;
    validate_ids(input_ids, cfg)?;
    let mut dropout = Dropout::new(cfg.dropout, false, 0);
    let enc = encode_stack(params, cfg, input_ids, &mut dropout);
    let mut out: Vec<u32> = Vec::new();
    for _ in 0..max_out {
        let mut dec_in = Vec::with_capacity(out.len() + 1);
        dec_in.push(PAD_ID);
        dec_in.extend_from_slice(&out);
        if dec_in.len() > cfg.max_len {
            break;
        }
        let mut dropout = Dropout::new(cfg.dropout, false, 0);
        let (logits, _) = decode_stack(params, cfg, &enc, &dec_in, &mut dropout);
        let last = logits.row(logits.nrows() - 1);
        let mut best = 0usize;
        for v in 1..last.len() {
            if last[v] > last[best] {
                best = v;
            }
        }
        if best as u32 == EOS_ID {
            break;
        }
        out.push(best as u32);
    }
    Ok(out)
}
