use rand_chacha::ChaCha8Rng;

use super::{LossBreakdown, LossWeights};
use crate::autograd::{Graph, Real, Tensor, Var};
use crate::models::{ae_graph, classifier_graph, standardize, AutoencoderConfig, Bound, ClassifierConfig, ParameterStore};
use crate::{Error, Result};

/// A pretrained classifier used as a fixed critic.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenModel<F> {
    pub config: ClassifierConfig,
    pub params: ParameterStore<F>,
}

impl<F: Real> FrozenModel<F> {
    pub fn new(config: ClassifierConfig, params: ParameterStore<F>) -> Self {
        FrozenModel { config, params }
    }
}

/// Graph nodes of one objective evaluation.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveVars {
    /// Autoencoder output in standardized units.
    pub recon: Var,
    pub l_util: Var,
    pub l_id: Var,
    pub l_dist: Var,
    pub combined: Var,
}

impl ObjectiveVars {
    pub fn breakdown<F: Real>(&self, g: &Graph<F>) -> LossBreakdown {
        LossBreakdown {
            l_util: g.value(self.l_util).item().as_f64(),
            l_id: g.value(self.l_id).item().as_f64(),
            l_dist: g.value(self.l_dist).item().as_f64(),
            combined: g.value(self.combined).item().as_f64(),
        }
    }
}

fn finite<F: Real>(g: &Graph<F>, v: Var, name: &str) -> Result<()> {
    if g.value(v).is_finite() {
        Ok(())
    } else {
        Err(Error::NumericFailure { location: name.into() })
    }
}

/// Builds autoencoder → (utility, re-id) on a µV batch and the weighted objective.
///
/// Zero-weighted terms are still evaluated but left out of the differentiated sum.
#[allow(clippy::too_many_arguments)]
pub fn objective_graph<F: Real>(
    g: &mut Graph<F>,
    ae_config: &AutoencoderConfig,
    ae: &Bound,
    utility: (&ClassifierConfig, &Bound),
    reid: (&ClassifierConfig, &Bound),
    batch: &Tensor<F>,
    stages: &[usize],
    subjects: &[usize],
    weights: &LossWeights,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<ObjectiveVars> {
    let x = g.constant(batch.clone());
    let xs = standardize(g, x)?;
    let recon = ae_graph(g, ae_config, ae, xs, rng)?;
    let util_logits = classifier_graph(g, utility.0, utility.1, recon, None)?;
    let l_util = g.cross_entropy(util_logits, stages)?;
    let id_logits = classifier_graph(g, reid.0, reid.1, recon, None)?;
    let l_id = g.cross_entropy(id_logits, subjects)?;
    let l_dist = g.mse(recon, xs)?;
    finite(g, l_util, "l_util")?;
    finite(g, l_id, "l_id")?;
    finite(g, l_dist, "l_dist")?;
    let clamped = g.clamp_max(l_id, weights.id_ceiling);
    let terms: Vec<(Var, F)> = [
        (l_util, weights.omega_util),
        (clamped, -weights.omega_id),
        (l_dist, weights.omega_dist),
    ]
    .into_iter()
    .filter(|(_, w)| *w != 0.0)
    .map(|(v, w)| (v, F::lit(w)))
    .collect();
    let combined = g.weighted_sum(&terms);
    Ok(ObjectiveVars {
        recon,
        l_util,
        l_id,
        l_dist,
        combined,
    })
}

/// Objective for a given reconstruction of `original` (both in µV). The distortion
/// is measured after scaling both by the original's per-row mean and deviation.
pub fn combined_loss<F: Real>(
    recon: &Tensor<F>,
    original: &Tensor<F>,
    stages: &[usize],
    subjects: &[usize],
    utility: &FrozenModel<F>,
    reid: &FrozenModel<F>,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    if recon.shape() != original.shape() || recon.shape().len() != 3 {
        return Err(Error::Shape(format!(
            "reconstruction {:?} vs original {:?}",
            recon.shape(),
            original.shape()
        )));
    }
    let l = recon.shape()[2];
    let stats = crate::models::row_stats(original);
    let scaled = |t: &Tensor<F>| -> Vec<f64> {
        t.data()
            .chunks(l)
            .zip(&stats)
            .flat_map(|(row, &(m, s))| row.iter().map(move |v| (v.as_f64() - m) / s))
            .collect()
    };
    let l_dist = crate::evaluation::mse(&scaled(recon), &scaled(original))?;

    let mut g = Graph::new();
    let ub = utility.params.bind(&mut g, false);
    let rb = reid.params.bind(&mut g, false);
    let x = g.constant(recon.clone());
    let ul = classifier_graph(&mut g, &utility.config, &ub, x, None)?;
    let l_util = g.cross_entropy(ul, stages)?;
    let il = classifier_graph(&mut g, &reid.config, &rb, x, None)?;
    let l_id = g.cross_entropy(il, subjects)?;
    finite(&g, l_util, "l_util")?;
    finite(&g, l_id, "l_id")?;
    if !l_dist.is_finite() {
        return Err(Error::NumericFailure { location: "l_dist".into() });
    }
    Ok(LossBreakdown::combine(
        weights,
        g.value(l_util).item().as_f64(),
        g.value(l_id).item().as_f64(),
        l_dist,
    ))
}
