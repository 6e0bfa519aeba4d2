use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::objective::objective_graph;
use super::LossWeights;
use crate::autograd::{Graph, Tensor};
use crate::models::{AutoencoderConfig, ClassifierConfig, ModelSpec, ParameterStore};
use crate::signal_io::EPOCH_CHANNELS;
use crate::Result;

const STEP: f64 = 1e-4;
/// Denominator floor, relative to the objective value, below which gradients are
/// compared absolutely; finite-difference roundoff sits near `1e-12 · |f|`.
const REL_FLOOR: f64 = 1e-6;

/// Which objective to differentiate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CheckObjective {
    /// Reconstruction term alone.
    PureMse,
    Full(LossWeights),
}

impl CheckObjective {
    fn weights(self) -> LossWeights {
        match self {
            CheckObjective::PureMse => LossWeights::new(0.0, 0.0, 1.0),
            CheckObjective::Full(w) => w,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_parameter: String,
    pub worst_index: usize,
    pub n_checked: usize,
}

/// Small double-precision models and a short batch for finite-difference checks.
#[derive(Debug, Clone)]
pub struct TinySetup {
    pub autoencoder: AutoencoderConfig,
    pub utility: ClassifierConfig,
    pub reid: ClassifierConfig,
    pub ae_params: ParameterStore<f64>,
    pub utility_params: ParameterStore<f64>,
    pub reid_params: ParameterStore<f64>,
    /// `[B, 2, 200]` µV.
    pub batch: Tensor<f64>,
    pub stages: Vec<usize>,
    pub subjects: Vec<usize>,
}

pub const TINY_SAMPLES: usize = 200;

impl TinySetup {
    pub fn new(seed: u64) -> Result<Self> {
        let autoencoder = AutoencoderConfig {
            patch_len: 10,
            d_model: 8,
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            n_heads: 2,
            ff_dim: 16,
            dropout: 0.0,
        };
        let utility = ClassifierConfig {
            filters: 2,
            small_kernel: 10,
            small_stride: 5,
            large_kernel: 40,
            large_stride: 20,
            hidden: 4,
            ..ClassifierConfig::utility_cnn()
        };
        let reid = ClassifierConfig {
            patch_len: 10,
            d_model: 8,
            n_heads: 2,
            ff_dim: 8,
            n_layers: 1,
            ..ClassifierConfig::reid_transformer(3)
        };
        let ae_params = ModelSpec::Autoencoder(autoencoder.clone()).init(seed)?;
        let utility_params = ModelSpec::Classifier(utility.clone()).init(seed + 1)?;
        let reid_params = ModelSpec::Classifier(reid.clone()).init(seed + 2)?;
        let b = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(b * EPOCH_CHANNELS * TINY_SAMPLES);
        for _ in 0..b * EPOCH_CHANNELS {
            let f: f64 = rng.gen_range(1.0..20.0);
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            for t in 0..TINY_SAMPLES {
                let s = 20.0 * (std::f64::consts::TAU * f * t as f64 / 100.0 + phase).sin();
                let n: f64 = rng.sample(StandardNormal);
                data.push(s + 5.0 * n);
            }
        }
        Ok(TinySetup {
            autoencoder,
            utility,
            reid,
            ae_params,
            utility_params,
            reid_params,
            batch: Tensor::new(vec![b, EPOCH_CHANNELS, TINY_SAMPLES], data)?,
            stages: vec![0, 2, 3],
            subjects: vec![0, 1, 2],
        })
    }

    fn eval(&self, ae: &ParameterStore<f64>, weights: &LossWeights, grad: bool) -> Result<(f64, Option<Vec<Vec<f64>>>)> {
        let mut g = Graph::new();
        let ab = ae.bind(&mut g, grad);
        let ub = self.utility_params.bind(&mut g, false);
        let rb = self.reid_params.bind(&mut g, false);
        let vars = objective_graph(
            &mut g,
            &self.autoencoder,
            &ab,
            (&self.utility, &ub),
            (&self.reid, &rb),
            &self.batch,
            &self.stages,
            &self.subjects,
            weights,
            None,
        )?;
        let value = g.value(vars.combined).item();
        let grads = grad.then(|| ab.gradients(&g.backward(vars.combined), ae));
        Ok((value, grads))
    }

    /// Objective value at the current autoencoder parameters.
    pub fn objective(&self, objective: CheckObjective) -> Result<f64> {
        Ok(self.eval(&self.ae_params, &objective.weights(), false)?.0)
    }
}

/// Compares reverse-mode gradients of the objective with central differences
/// (step 1e-4) for every autoencoder parameter. The error of one coordinate is
/// `|a − n| / max(|a|, |n|, 1e-6 · max(1, |f|))`.
pub fn gradient_check(setup: &TinySetup, objective: CheckObjective) -> Result<GradCheckReport> {
    let weights = objective.weights();
    let (f0, analytic) = setup.eval(&setup.ae_params, &weights, true)?;
    let analytic = analytic.expect("requested gradients");
    let floor = REL_FLOOR * f0.abs().max(1.0);
    let mut probe = setup.ae_params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_parameter: String::new(),
        worst_index: 0,
        n_checked: 0,
    };
    for k in 0..probe.len() {
        for j in 0..probe.tensors()[k].numel() {
            let orig = probe.tensors()[k].data()[j];
            probe.tensors_mut()[k].data_mut()[j] = orig + STEP;
            let (up, _) = setup.eval(&probe, &weights, false)?;
            probe.tensors_mut()[k].data_mut()[j] = orig - STEP;
            let (down, _) = setup.eval(&probe, &weights, false)?;
            probe.tensors_mut()[k].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic[k][j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if err > report.max_relative_error || report.n_checked == 0 {
                report.max_relative_error = err;
                report.worst_parameter = probe.names()[k].clone();
                report.worst_index = j;
            }
            report.n_checked += 1;
        }
    }
    Ok(report)
}
