//! Building blocks shared by the three networks.

use rand_chacha::ChaCha8Rng;

use super::params::{Bound, Init};
use crate::autograd::{Graph, Real, Tensor, Var};
use crate::{Error, Result};

/// Variance floor when standardizing an epoch channel.
pub const STANDARDIZE_EPS: f64 = 1e-6;
const NORM_EPS: f64 = 1e-5;

/// Per-row (epoch, channel) zero-mean unit-variance scaling over the time axis.
pub fn standardize<F: Real>(g: &mut Graph<F>, x: Var) -> Result<Var> {
    g.layer_norm(x, None, None, STANDARDIZE_EPS)
}

pub(crate) fn check<F: Real>(g: &Graph<F>, v: Var, location: impl FnOnce() -> String) -> Result<()> {
    if g.value(v).is_finite() {
        Ok(())
    } else {
        Err(Error::NumericFailure { location: location() })
    }
}

fn token_index(batch: usize, channels: usize, len: usize, patch: usize) -> Vec<usize> {
    let t = len / patch;
    let mut idx = Vec::with_capacity(batch * channels * len);
    for b in 0..batch {
        for ti in 0..t {
            for c in 0..channels {
                let base = (b * channels + c) * len + ti * patch;
                idx.extend(base..base + patch);
            }
        }
    }
    idx
}

fn untoken_index(batch: usize, channels: usize, len: usize, patch: usize) -> Vec<usize> {
    let width = channels * patch;
    let t = len / patch;
    let mut idx = Vec::with_capacity(batch * channels * len);
    for b in 0..batch {
        for c in 0..channels {
            for s in 0..len {
                idx.push((b * t + s / patch) * width + c * patch + s % patch);
            }
        }
    }
    idx
}

fn token_dims(shape: &[usize], patch: usize) -> Result<(usize, usize, usize)> {
    if shape.len() != 3 || patch == 0 || shape[2] % patch != 0 {
        return Err(Error::Shape(format!(
            "cannot cut {:?} into patches of {} samples",
            shape, patch
        )));
    }
    Ok((shape[0], shape[1], shape[2]))
}

/// `[B, C, L]` → `[B, L/patch, C·patch]`; token `t` holds every channel's samples
/// `[t·patch, (t+1)·patch)`, channel by channel.
pub fn tokenize<F: Real>(batch: &Tensor<F>, patch: usize) -> Result<Tensor<F>> {
    let (b, c, l) = token_dims(batch.shape(), patch)?;
    let d = batch.data();
    let data = token_index(b, c, l, patch).into_iter().map(|i| d[i]).collect();
    Tensor::new(vec![b, l / patch, c * patch], data)
}

/// Inverse of [`tokenize`].
pub fn detokenize<F: Real>(tokens: &Tensor<F>, patch: usize, channels: usize) -> Result<Tensor<F>> {
    let s = tokens.shape();
    if s.len() != 3 || channels == 0 || s[2] != channels * patch {
        return Err(Error::Shape(format!(
            "tokens {:?} are not {} channels of {}-sample patches",
            s, channels, patch
        )));
    }
    let (b, l) = (s[0], s[1] * patch);
    let d = tokens.data();
    let data = untoken_index(b, channels, l, patch).into_iter().map(|i| d[i]).collect();
    Tensor::new(vec![b, channels, l], data)
}

pub(crate) fn tokenize_var<F: Real>(g: &mut Graph<F>, x: Var, patch: usize) -> Result<Var> {
    let (b, c, l) = token_dims(g.shape(x), patch)?;
    g.gather(x, token_index(b, c, l, patch), &[b, l / patch, c * patch])
}

pub(crate) fn detokenize_var<F: Real>(g: &mut Graph<F>, x: Var, patch: usize, channels: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (b, l) = (s[0], s[1] * patch);
    g.gather(x, untoken_index(b, channels, l, patch), &[b, channels, l])
}

/// Fixed sinusoidal position code `[T, D]`.
pub fn positional_encoding<F: Real>(tokens: usize, d: usize) -> Tensor<F> {
    let mut data = vec![F::zero(); tokens * d];
    for t in 0..tokens {
        for i in 0..d {
            let rate = 10000f64.powf(-((i / 2 * 2) as f64) / d as f64);
            let a = t as f64 * rate;
            data[t * d + i] = F::lit(if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    Tensor::new(vec![tokens, d], data).expect("shape matches")
}

/// Shapes of one transformer stack, used by both the autoencoder and the re-id model.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Dims {
    pub d: usize,
    pub ff: usize,
}

pub(crate) fn init_attention<F: Real, R: rand::Rng>(init: &mut Init<F, R>, prefix: &str, d: usize) -> Result<()> {
    for p in ["q", "k", "v", "o"] {
        init.linear(&format!("{prefix}.{p}"), d, d)?;
    }
    Ok(())
}

pub(crate) fn init_ff<F: Real, R: rand::Rng>(init: &mut Init<F, R>, prefix: &str, d: usize, ff: usize) -> Result<()> {
    init.linear(&format!("{prefix}.fc1"), d, ff)?;
    init.linear(&format!("{prefix}.fc2"), ff, d)
}

pub(crate) fn init_encoder_layer<F: Real, R: rand::Rng>(init: &mut Init<F, R>, prefix: &str, dims: Dims) -> Result<()> {
    init.norm(&format!("{prefix}.ln1"), dims.d)?;
    init_attention(init, &format!("{prefix}.attn"), dims.d)?;
    init.norm(&format!("{prefix}.ln2"), dims.d)?;
    init_ff(init, &format!("{prefix}.ff"), dims.d, dims.ff)
}

pub(crate) fn init_decoder_layer<F: Real, R: rand::Rng>(init: &mut Init<F, R>, prefix: &str, dims: Dims) -> Result<()> {
    init.norm(&format!("{prefix}.ln1"), dims.d)?;
    init_attention(init, &format!("{prefix}.self"), dims.d)?;
    init.norm(&format!("{prefix}.ln2"), dims.d)?;
    init_attention(init, &format!("{prefix}.cross"), dims.d)?;
    init.norm(&format!("{prefix}.ln3"), dims.d)?;
    init_ff(init, &format!("{prefix}.ff"), dims.d, dims.ff)
}

pub(crate) fn attention_params(d: usize) -> usize {
    4 * (d * d + d)
}

pub(crate) fn ff_params(d: usize, ff: usize) -> usize {
    d * ff + ff + ff * d + d
}

pub(crate) fn encoder_layer_params(d: usize, ff: usize) -> usize {
    2 * 2 * d + attention_params(d) + ff_params(d, ff)
}

pub(crate) fn decoder_layer_params(d: usize, ff: usize) -> usize {
    3 * 2 * d + 2 * attention_params(d) + ff_params(d, ff)
}

/// Forward context: graph, bound parameters and the dropout stream (training only).
pub(crate) struct Ctx<'a, F: Real> {
    pub g: &'a mut Graph<F>,
    pub p: &'a Bound,
    pub rng: Option<&'a mut ChaCha8Rng>,
    pub dropout: f64,
}

impl<'a, F: Real> Ctx<'a, F> {
    pub fn linear(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let w = self.p.var(&format!("{prefix}.w"))?;
        let b = self.p.var(&format!("{prefix}.b"))?;
        self.g.linear(x, w, Some(b))
    }

    pub fn norm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.p.var(&format!("{prefix}.gamma"))?;
        let beta = self.p.var(&format!("{prefix}.beta"))?;
        self.g.layer_norm(x, Some(gamma), Some(beta), NORM_EPS)
    }

    pub fn drop(&mut self, x: Var) -> Var {
        match self.rng.as_deref_mut() {
            Some(rng) if self.dropout > 0.0 => self.g.dropout(x, self.dropout, rng),
            _ => x,
        }
    }

    pub fn attention(&mut self, x: Var, memory: Var, prefix: &str, heads: usize) -> Result<Var> {
        let q = self.linear(x, &format!("{prefix}.q"))?;
        let k = self.linear(memory, &format!("{prefix}.k"))?;
        let v = self.linear(memory, &format!("{prefix}.v"))?;
        let a = self.g.attention(q, k, v, heads)?;
        self.linear(a, &format!("{prefix}.o"))
    }

    pub fn ff(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let h = self.linear(x, &format!("{prefix}.fc1"))?;
        let h = self.g.gelu(h);
        let h = self.drop(h);
        self.linear(h, &format!("{prefix}.fc2"))
    }

    /// Pre-norm self-attention and feed-forward blocks with residuals.
    pub fn encoder_layer(&mut self, x: Var, prefix: &str, heads: usize) -> Result<Var> {
        let h = self.norm(x, &format!("{prefix}.ln1"))?;
        let a = self.attention(h, h, &format!("{prefix}.attn"), heads)?;
        let a = self.drop(a);
        let x = self.g.add(x, a)?;
        let h = self.norm(x, &format!("{prefix}.ln2"))?;
        let f = self.ff(h, &format!("{prefix}.ff"))?;
        let f = self.drop(f);
        self.g.add(x, f)
    }

    /// Pre-norm self-attention, cross-attention to `memory`, then feed-forward.
    pub fn decoder_layer(&mut self, x: Var, memory: Var, prefix: &str, heads: usize) -> Result<Var> {
        let h = self.norm(x, &format!("{prefix}.ln1"))?;
        let a = self.attention(h, h, &format!("{prefix}.self"), heads)?;
        let a = self.drop(a);
        let x = self.g.add(x, a)?;
        let h = self.norm(x, &format!("{prefix}.ln2"))?;
        let c = self.attention(h, memory, &format!("{prefix}.cross"), heads)?;
        let c = self.drop(c);
        let x = self.g.add(x, c)?;
        let h = self.norm(x, &format!("{prefix}.ln3"))?;
        let f = self.ff(h, &format!("{prefix}.ff"))?;
        let f = self.drop(f);
        self.g.add(x, f)
    }
}
