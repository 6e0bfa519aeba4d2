//! Transformer autoencoder, sleep-stage CNN and subject re-identification transformer.

mod checkpoint;
mod layers;
mod params;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Real, Tensor, Var};
use crate::signal_io::{Epoch, EPOCH_CHANNELS, EPOCH_SAMPLES};
use crate::{Error, Result};

pub use checkpoint::{load_params, read_checkpoint, save_params, Checkpoint, CHECKPOINT_VERSION};
pub use layers::{detokenize, positional_encoding, standardize, tokenize, STANDARDIZE_EPS};
pub use params::{Bound, ParameterStore};

use layers::{check, detokenize_var, tokenize_var, Ctx, Dims};
use params::Init;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderConfig {
    pub patch_len: usize,
    pub d_model: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            patch_len: 100,
            d_model: 64,
            n_encoder_layers: 4,
            n_decoder_layers: 4,
            n_heads: 8,
            ff_dim: 256,
            dropout: 0.0,
        }
    }
}

impl AutoencoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::config(
                "d_model",
                format!("{} is not divisible by {} heads", self.d_model, self.n_heads),
            ));
        }
        if self.patch_len == 0 || EPOCH_SAMPLES % self.patch_len != 0 {
            return Err(Error::config(
                "patch_len",
                format!("{} does not divide {}", self.patch_len, EPOCH_SAMPLES),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn token_width(&self) -> usize {
        EPOCH_CHANNELS * self.patch_len
    }

    /// Closed-form size of the parameter store.
    pub fn parameter_count(&self) -> usize {
        let (d, w, ff) = (self.d_model, self.token_width(), self.ff_dim);
        (w * d + d)
            + self.n_encoder_layers * layers::encoder_layer_params(d, ff)
            + 2 * d
            + self.n_decoder_layers * layers::decoder_layer_params(d, ff)
            + 2 * d
            + (d * w + w)
    }

    fn dims(&self) -> Dims {
        Dims {
            d: self.d_model,
            ff: self.ff_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    UtilityCnn,
    ReidTransformer,
}

/// Hyperparameters of either classifier; fields of the other kind are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub kind: ClassifierKind,
    pub n_classes: usize,
    pub dropout: f64,
    /// CNN: filters per branch.
    pub filters: usize,
    pub small_kernel: usize,
    pub small_stride: usize,
    pub large_kernel: usize,
    pub large_stride: usize,
    pub hidden: usize,
    /// Transformer.
    pub patch_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub n_layers: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            kind: ClassifierKind::UtilityCnn,
            n_classes: 5,
            dropout: 0.0,
            filters: 16,
            small_kernel: 50,
            small_stride: 6,
            large_kernel: 400,
            large_stride: 50,
            hidden: 32,
            patch_len: 100,
            d_model: 64,
            n_heads: 8,
            ff_dim: 256,
            n_layers: 2,
        }
    }
}

impl ClassifierConfig {
    pub fn utility_cnn() -> Self {
        ClassifierConfig::default()
    }

    pub fn reid_transformer(n_subjects: usize) -> Self {
        ClassifierConfig {
            kind: ClassifierKind::ReidTransformer,
            n_classes: n_subjects,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::config("n_classes", format!("must be at least 2, got {}", self.n_classes)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must lie in [0, 1)"));
        }
        match self.kind {
            ClassifierKind::UtilityCnn => {
                if self.filters == 0 || self.hidden == 0 || self.small_stride == 0 || self.large_stride == 0 {
                    return Err(Error::config("filters", "CNN widths and strides must be positive"));
                }
            }
            ClassifierKind::ReidTransformer => {
                if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
                    return Err(Error::config(
                        "d_model",
                        format!("{} is not divisible by {} heads", self.d_model, self.n_heads),
                    ));
                }
                if self.patch_len == 0 || EPOCH_SAMPLES % self.patch_len != 0 {
                    return Err(Error::config("patch_len", format!("{} does not divide {}", self.patch_len, EPOCH_SAMPLES)));
                }
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        match self.kind {
            ClassifierKind::UtilityCnn => {
                let f = self.filters;
                let conv = (f * self.small_kernel + f) + (f * self.large_kernel + f);
                let feat = EPOCH_CHANNELS * 2 * f;
                conv + (feat * self.hidden + self.hidden) + (self.hidden * self.n_classes + self.n_classes)
            }
            ClassifierKind::ReidTransformer => {
                let (d, w) = (self.d_model, EPOCH_CHANNELS * self.patch_len);
                (w * d + d)
                    + self.n_layers * layers::encoder_layer_params(d, self.ff_dim)
                    + 2 * d
                    + (d * self.n_classes + self.n_classes)
            }
        }
    }
}

/// Everything needed to rebuild a network's parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "config", rename_all = "snake_case")]
pub enum ModelSpec {
    Autoencoder(AutoencoderConfig),
    Classifier(ClassifierConfig),
}

impl ModelSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelSpec::Autoencoder(_) => "autoencoder",
            ModelSpec::Classifier(c) => match c.kind {
                ClassifierKind::UtilityCnn => "utility_cnn",
                ClassifierKind::ReidTransformer => "reid_transformer",
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Autoencoder(c) => c.validate(),
            ModelSpec::Classifier(c) => c.validate(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            ModelSpec::Autoencoder(c) => c.parameter_count(),
            ModelSpec::Classifier(c) => c.parameter_count(),
        }
    }

    /// Freshly initialized parameters, a pure function of `seed`.
    pub fn init<F: Real>(&self, seed: u64) -> Result<ParameterStore<F>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init::new(&mut rng);
        match self {
            ModelSpec::Autoencoder(c) => {
                let dims = c.dims();
                init.linear("embed", c.token_width(), c.d_model)?;
                for i in 0..c.n_encoder_layers {
                    layers::init_encoder_layer(&mut init, &format!("enc.{i}"), dims)?;
                }
                init.norm("enc.norm", c.d_model)?;
                for i in 0..c.n_decoder_layers {
                    layers::init_decoder_layer(&mut init, &format!("dec.{i}"), dims)?;
                }
                init.norm("dec.norm", c.d_model)?;
                init.linear("head", c.d_model, c.token_width())?;
            }
            ModelSpec::Classifier(c) => match c.kind {
                ClassifierKind::UtilityCnn => {
                    init.normal("conv_small.w".into(), &[c.filters, 1, c.small_kernel], c.small_kernel)?;
                    init.fill("conv_small.b".into(), &[c.filters], 0.0)?;
                    init.normal("conv_large.w".into(), &[c.filters, 1, c.large_kernel], c.large_kernel)?;
                    init.fill("conv_large.b".into(), &[c.filters], 0.0)?;
                    init.linear("dense1", EPOCH_CHANNELS * 2 * c.filters, c.hidden)?;
                    init.linear("out", c.hidden, c.n_classes)?;
                }
                ClassifierKind::ReidTransformer => {
                    let dims = Dims {
                        d: c.d_model,
                        ff: c.ff_dim,
                    };
                    init.linear("embed", EPOCH_CHANNELS * c.patch_len, c.d_model)?;
                    for i in 0..c.n_layers {
                        layers::init_encoder_layer(&mut init, &format!("enc.{i}"), dims)?;
                    }
                    init.norm("enc.norm", c.d_model)?;
                    init.linear("out", c.d_model, c.n_classes)?;
                }
            },
        }
        Ok(init.store)
    }
}

/// Stacks epochs into a `[B, channels, samples]` batch.
pub fn batch_tensor<'a, F: Real>(epochs: impl IntoIterator<Item = &'a Epoch>) -> Result<Tensor<F>> {
    let mut data = Vec::new();
    let mut shape: Option<(usize, usize)> = None;
    let mut b = 0;
    for e in epochs {
        let s = (e.n_channels, e.n_samples());
        if *shape.get_or_insert(s) != s {
            return Err(Error::Shape(format!("epoch {:?} in a batch of {:?}", s, shape.unwrap())));
        }
        data.extend(e.data.iter().map(|v| F::lit(*v as f64)));
        b += 1;
    }
    let (c, l) = shape.ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
    Tensor::new(vec![b, c, l], data)
}

/// Per-row mean and standard deviation as used by [`standardize`].
pub fn row_stats<F: Real>(batch: &Tensor<F>) -> Vec<(f64, f64)> {
    let l = *batch.shape().last().unwrap_or(&1);
    batch
        .data()
        .chunks(l)
        .map(|row| {
            let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / l as f64;
            let var = row.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / l as f64;
            (mean, (var + STANDARDIZE_EPS).sqrt())
        })
        .collect()
}

/// Autoencoder on a standardized `[B, C, L]` input; output lives in the same space.
pub fn ae_graph<F: Real>(
    g: &mut Graph<F>,
    config: &AutoencoderConfig,
    params: &Bound,
    x_std: Var,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let channels = g.shape(x_std)[1];
    let mut cx = Ctx {
        g,
        p: params,
        rng,
        dropout: config.dropout,
    };
    let tokens = tokenize_var(cx.g, x_std, config.patch_len)?;
    let t = cx.g.shape(tokens)[1];
    let h = cx.linear(tokens, "embed")?;
    let h = cx.g.add_const(h, &positional_encoding(t, config.d_model))?;
    let mut h = cx.drop(h);
    check(cx.g, h, || "autoencoder embedding".into())?;
    for i in 0..config.n_encoder_layers {
        h = cx.encoder_layer(h, &format!("enc.{i}"), config.n_heads)?;
        check(cx.g, h, || format!("autoencoder encoder layer {i}"))?;
    }
    let memory = cx.norm(h, "enc.norm")?;
    let mut y = memory;
    for i in 0..config.n_decoder_layers {
        y = cx.decoder_layer(y, memory, &format!("dec.{i}"), config.n_heads)?;
        check(cx.g, y, || format!("autoencoder decoder layer {i}"))?;
    }
    let y = cx.norm(y, "dec.norm")?;
    let out = cx.linear(y, "head")?;
    check(cx.g, out, || "autoencoder head".into())?;
    detokenize_var(cx.g, out, config.patch_len, channels)
}

/// Classifier logits on a raw (µV) `[B, C, L]` input; standardization happens inside.
pub fn classifier_graph<F: Real>(
    g: &mut Graph<F>,
    config: &ClassifierConfig,
    params: &Bound,
    x: Var,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let xs = standardize(g, x)?;
    let mut cx = Ctx {
        g,
        p: params,
        rng,
        dropout: config.dropout,
    };
    let logits = match config.kind {
        ClassifierKind::UtilityCnn => {
            let s = cx.g.shape(xs).to_vec();
            let (b, c, l) = (s[0], s[1], s[2]);
            let single = cx.g.reshape(xs, &[b * c, 1, l])?;
            let mut pooled = Vec::new();
            for (name, stride) in [("conv_small", config.small_stride), ("conv_large", config.large_stride)] {
                let w = cx.p.var(&format!("{name}.w"))?;
                let bias = cx.p.var(&format!("{name}.b"))?;
                let a = cx.g.conv1d(single, w, bias, stride)?;
                let a = cx.g.gelu(a);
                check(cx.g, a, || format!("utility {name}"))?;
                pooled.push(cx.g.mean_axis(a, 2)?);
            }
            let feats = cx.g.concat_last(&pooled)?;
            let feats = cx.g.reshape(feats, &[b, c * 2 * config.filters])?;
            let h = cx.linear(feats, "dense1")?;
            let h = cx.g.gelu(h);
            let h = cx.drop(h);
            check(cx.g, h, || "utility dense1".into())?;
            cx.linear(h, "out")?
        }
        ClassifierKind::ReidTransformer => {
            let tokens = tokenize_var(cx.g, xs, config.patch_len)?;
            let t = cx.g.shape(tokens)[1];
            let h = cx.linear(tokens, "embed")?;
            let h = cx.g.add_const(h, &positional_encoding(t, config.d_model))?;
            let mut h = cx.drop(h);
            for i in 0..config.n_layers {
                h = cx.encoder_layer(h, &format!("enc.{i}"), config.n_heads)?;
                check(cx.g, h, || format!("reid encoder layer {i}"))?;
            }
            let h = cx.norm(h, "enc.norm")?;
            let pooled = cx.g.mean_axis(h, 1)?;
            cx.linear(pooled, "out")?
        }
    };
    check(cx.g, logits, || format!("{:?} logits", config.kind))?;
    Ok(logits)
}

/// Reconstruction of a µV batch, returned in µV (`z · std + mean` per row).
pub fn ae_forward<F: Real>(
    params: &ParameterStore<F>,
    config: &AutoencoderConfig,
    batch: &Tensor<F>,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Tensor<F>> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let x = g.constant(batch.clone());
    let xs = standardize(&mut g, x)?;
    let z = ae_graph(&mut g, config, &bound, xs, rng)?;
    let mut out = g.take_value(z);
    let l = *out.shape().last().unwrap();
    for (row, (mean, sd)) in out.data_mut().chunks_mut(l).zip(row_stats(batch)) {
        for v in row {
            *v = F::lit(v.as_f64() * sd + mean);
        }
    }
    Ok(out)
}

fn classifier_forward<F: Real>(
    params: &ParameterStore<F>,
    config: &ClassifierConfig,
    batch: &Tensor<F>,
    rng: Option<&mut ChaCha8Rng>,
    expected: ClassifierKind,
) -> Result<Tensor<F>> {
    if config.kind != expected {
        return Err(Error::InvalidInput(format!("{:?} config passed where {:?} is required", config.kind, expected)));
    }
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let x = g.constant(batch.clone());
    let logits = classifier_graph(&mut g, config, &bound, x, rng)?;
    Ok(g.take_value(logits))
}

pub fn utility_forward<F: Real>(
    params: &ParameterStore<F>,
    config: &ClassifierConfig,
    batch: &Tensor<F>,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Tensor<F>> {
    classifier_forward(params, config, batch, rng, ClassifierKind::UtilityCnn)
}

pub fn reid_forward<F: Real>(
    params: &ParameterStore<F>,
    config: &ClassifierConfig,
    batch: &Tensor<F>,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Tensor<F>> {
    classifier_forward(params, config, batch, rng, ClassifierKind::ReidTransformer)
}

/// Row-wise softmax of `[B, C]` logits.
pub fn softmax<F: Real>(logits: &Tensor<F>) -> Tensor<F> {
    let c = *logits.shape().last().unwrap_or(&1);
    let mut data = logits.data().to_vec();
    for row in data.chunks_mut(c) {
        let max = row.iter().fold(F::neg_infinity(), |m, v| m.max(*v));
        let mut total = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Tensor::new(logits.shape().to_vec(), data).expect("same shape")
}

#[cfg(test)]
mod tests;
