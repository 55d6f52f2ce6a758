//! Randomized verification of the gradient magnitude bound for sigmoid
//! networks with a softmax/cross-entropy head and weights in `(-1, 1)`.
//!
//! Two bounds are reported per layer:
//!
//! * `product`: `B^l = prod_{k > l} (0.25 * n_k)`, obtained by unrolling the
//!   error recursion with `|delta^L| < 1`, `|w| < 1`, `sigmoid' <= 0.25` and
//!   activations (or inputs) in `[0, 1]`. For a convolution kernel the error
//!   is additionally summed over the pooled positions, giving
//!   `P * 0.25 * n_out` with `P` pooled cells per channel.
//! * `sum`: the neuron count `sum_{k >= l} n_k` (for a kernel, `n_out`).
//!
//! Only the product form is a hard bound; exceeding the sum form is
//! reported but not counted as a violation.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flcore::model::{
    forward_backward_traced, Activation, Architecture, ConvLayer, ModelSpec, Params,
};
use crate::flcore::Sample;
use crate::rng::{stream, tag};

pub const SIGMOID_DERIVATIVE_MAX: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerBound {
    /// Parameter block the bound covers, e.g. `fc0.weight`.
    pub name: String,
    pub neurons: usize,
    pub product: f64,
    pub sum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerReport {
    pub bound: LayerBound,
    /// Largest `|dC/dw|` seen in any trial.
    pub observed_max: f64,
    /// Trials where some entry reached the product bound.
    pub product_violations: usize,
    pub exceeds_sum: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssumptionFlags {
    pub sigmoid_hidden: bool,
    pub weights_in_unit_interval: bool,
    pub softmax_ce_head: bool,
    pub inputs_in_unit_interval: bool,
}

impl AssumptionFlags {
    pub fn all(&self) -> bool {
        self.sigmoid_hidden
            && self.weights_in_unit_interval
            && self.softmax_ce_head
            && self.inputs_in_unit_interval
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub model: String,
    pub trials: usize,
    pub layers: Vec<LayerReport>,
    pub delta_min: f64,
    pub delta_max: f64,
    /// Trials with an output error outside `(-1, 1)`.
    pub delta_violations: usize,
    /// Fraction of all gradient entries inside `(-1, 1)`.
    pub frac_in_unit: f64,
    pub max_abs_weight: f64,
    pub flags: AssumptionFlags,
}

impl BoundReport {
    /// The bound is only claimed when every assumption held.
    pub fn valid(&self) -> bool {
        self.flags.all()
    }

    pub fn product_violations(&self) -> usize {
        self.layers.iter().map(|l| l.product_violations).sum()
    }

    pub fn passed(&self) -> bool {
        self.valid() && self.product_violations() == 0 && self.delta_violations == 0
    }

    /// CSV with `#` header lines describing the bound formulas and flags.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# model: {}", self.model)?;
        writeln!(
            w,
            "# product bound: prod_(k>l) 0.25*n_k (conv kernel: pooled_cells*0.25*n_out)"
        )?;
        writeln!(w, "# sum bound: sum_(k>=l) n_k (conv kernel: n_out)")?;
        writeln!(w, "# trials: {}", self.trials)?;
        writeln!(
            w,
            "# delta_range: [{}, {}] violations: {}",
            self.delta_min, self.delta_max, self.delta_violations
        )?;
        writeln!(w, "# frac_grad_in_unit_interval: {}", self.frac_in_unit)?;
        writeln!(w, "# max_abs_weight: {}", self.max_abs_weight)?;
        writeln!(
            w,
            "# assumptions: sigmoid_hidden={} weights_in_unit={} softmax_ce_head={} inputs_in_unit={} valid={}",
            self.flags.sigmoid_hidden,
            self.flags.weights_in_unit_interval,
            self.flags.softmax_ce_head,
            self.flags.inputs_in_unit_interval,
            self.valid()
        )?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record([
            "layer",
            "neurons",
            "product_bound",
            "sum_bound",
            "observed_max",
            "product_violations",
            "exceeds_sum",
        ])?;
        for l in &self.layers {
            csv.write_record([
                l.bound.name.clone(),
                l.bound.neurons.to_string(),
                l.bound.product.to_string(),
                l.bound.sum.to_string(),
                l.observed_max.to_string(),
                l.product_violations.to_string(),
                l.exceeds_sum.to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Per-layer bounds for a sigmoid MLP with softmax/cross-entropy head.
/// Both the weight and bias block of a layer share its bound.
pub fn compute_bound_fc(spec: &ModelSpec) -> Result<Vec<LayerBound>> {
    let hidden = match &spec.architecture {
        Architecture::Mlp { hidden, .. } => hidden,
        Architecture::Cnn { .. } => {
            return Err(Error::Spec("compute_bound_fc needs an MLP".into()))
        }
    };
    if !hidden.is_empty() && spec.activation != Activation::Sigmoid {
        return Err(Error::Assumption(format!(
            "{:?} hidden activations are unbounded; the bound needs sigmoid",
            spec.activation
        )));
    }
    let sizes = spec.fc_layer_sizes()?;
    Ok((0..sizes.len())
        .map(|l| LayerBound {
            name: format!("fc{l}"),
            neurons: sizes[l],
            product: sizes[l + 1..]
                .iter()
                .map(|&n| SIGMOID_DERIVATIVE_MAX * n as f64)
                .product(),
            sum: sizes[l..].iter().sum::<usize>() as f64,
        })
        .collect())
}

/// Bounds for the single-conv-block CNN: kernel (and its bias) then the
/// fully connected head.
pub fn compute_bound_cnn(spec: &ModelSpec) -> Result<Vec<LayerBound>> {
    let (height, width, conv, hidden) = match &spec.architecture {
        Architecture::Cnn {
            height,
            width,
            conv,
            hidden,
            ..
        } => (height, width, conv, hidden),
        Architecture::Mlp { .. } => {
            return Err(Error::Spec("compute_bound_cnn needs a CNN".into()))
        }
    };
    if conv.len() != 1 || !hidden.is_empty() {
        return Err(Error::Assumption(
            "the CNN bound covers one conv/pool block followed directly by the softmax layer"
                .into(),
        ));
    }
    if spec.activation != Activation::Sigmoid {
        return Err(Error::Assumption(
            "the CNN bound needs a sigmoid conv activation".into(),
        ));
    }
    spec.layout()?;
    let ConvLayer {
        kernel, padding, ..
    } = conv[0];
    let pooled =
        (height + 2 * padding - kernel).div_ceil(2) * (width + 2 * padding - kernel).div_ceil(2);
    let n_out = spec.classes as f64;
    Ok(vec![
        LayerBound {
            name: "conv0".into(),
            neurons: pooled * conv[0].out_channels,
            product: pooled as f64 * SIGMOID_DERIVATIVE_MAX * n_out,
            sum: n_out,
        },
        LayerBound {
            name: "fc0".into(),
            neurons: spec.classes,
            product: 1.0,
            sum: n_out,
        },
    ])
}

/// Random trials with weights drawn uniformly from `(-weight_limit,
/// weight_limit)` and inputs from `[0, 1)`. Each trial is a single sample.
fn run_trials(
    spec: &ModelSpec,
    bounds: &[LayerBound],
    n_trials: usize,
    seed: u64,
    weight_limit: f64,
) -> Result<BoundReport> {
    if n_trials == 0 {
        return Err(Error::Config("need at least one trial".into()));
    }
    if weight_limit.is_nan() || weight_limit <= 0.0 {
        return Err(Error::Config("weight limit must be positive".into()));
    }
    let layout = spec.layout()?;
    // Parameter blocks come in (weight, bias) pairs matching `bounds`.
    if layout.blocks.len() != 2 * bounds.len() {
        return Err(Error::Spec("bound list does not match model layout".into()));
    }
    struct TrialStats {
        layer_max: Vec<f64>,
        layer_viol: Vec<bool>,
        delta_min: f64,
        delta_max: f64,
        delta_bad: bool,
        in_unit: usize,
        entries: usize,
        max_w: f64,
        input_ok: bool,
    }
    let trials: Vec<TrialStats> = (0..n_trials)
        .into_par_iter()
        .map(|t| -> Result<TrialStats> {
            let mut rng = stream(seed, &[tag::BOUND, t as u64]);
            let params = Params::<f64>::uniform(spec, weight_limit, &mut rng)?;
            let x: Vec<f32> = (0..spec.input_len())
                .map(|_| rng.random_range(0.0..1.0f32))
                .collect();
            let input_ok = x.iter().all(|v| (0.0..=1.0).contains(v));
            let sample = Sample {
                x,
                label: rng.random_range(0..spec.classes),
            };
            let (_, grad, trace) = forward_backward_traced(&params, std::slice::from_ref(&sample))?;
            let delta = &trace.output_delta[0];
            let delta_min = delta.iter().copied().fold(f64::INFINITY, f64::min);
            let delta_max = delta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut layer_max = Vec::with_capacity(bounds.len());
            let mut layer_viol = Vec::with_capacity(bounds.len());
            for (i, b) in bounds.iter().enumerate() {
                let m = layout.blocks[2 * i..2 * i + 2]
                    .iter()
                    .flat_map(|blk| grad.values[blk.offset..blk.offset + blk.len].iter())
                    .fold(0.0f64, |acc, v| acc.max(v.abs()));
                layer_max.push(m);
                layer_viol.push(m >= b.product);
            }
            Ok(TrialStats {
                layer_max,
                layer_viol,
                delta_min,
                delta_max,
                delta_bad: delta_min <= -1.0 || delta_max >= 1.0,
                in_unit: grad.values.iter().filter(|v| v.abs() < 1.0).count(),
                entries: grad.values.len(),
                max_w: params.values.iter().fold(0.0f64, |a, v| a.max(v.abs())),
                input_ok,
            })
        })
        .collect::<Result<_>>()?;

    let layers = bounds
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let observed_max = trials.iter().map(|t| t.layer_max[i]).fold(0.0, f64::max);
            LayerReport {
                bound: b.clone(),
                observed_max,
                product_violations: trials.iter().filter(|t| t.layer_viol[i]).count(),
                exceeds_sum: observed_max >= b.sum,
            }
        })
        .collect();
    let entries: usize = trials.iter().map(|t| t.entries).sum();
    let max_abs_weight = trials.iter().map(|t| t.max_w).fold(0.0, f64::max);
    Ok(BoundReport {
        model: format!("{:?}", spec.architecture),
        trials: n_trials,
        layers,
        delta_min: trials
            .iter()
            .map(|t| t.delta_min)
            .fold(f64::INFINITY, f64::min),
        delta_max: trials
            .iter()
            .map(|t| t.delta_max)
            .fold(f64::NEG_INFINITY, f64::max),
        delta_violations: trials.iter().filter(|t| t.delta_bad).count(),
        frac_in_unit: trials.iter().map(|t| t.in_unit).sum::<usize>() as f64 / entries as f64,
        max_abs_weight,
        flags: AssumptionFlags {
            sigmoid_hidden: spec.activation == Activation::Sigmoid,
            weights_in_unit_interval: max_abs_weight < 1.0,
            softmax_ce_head: true,
            inputs_in_unit_interval: trials.iter().all(|t| t.input_ok),
        },
    })
}

/// Randomized check of an MLP against [`compute_bound_fc`].
pub fn check_empirical(
    spec: &ModelSpec,
    n_trials: usize,
    seed: u64,
    weight_limit: f64,
) -> Result<BoundReport> {
    let bounds = compute_bound_fc(spec)?;
    run_trials(spec, &bounds, n_trials, seed, weight_limit)
}

/// Randomized check of a one-block CNN against [`compute_bound_cnn`].
pub fn check_cnn_bound(
    spec: &ModelSpec,
    n_trials: usize,
    seed: u64,
    weight_limit: f64,
) -> Result<BoundReport> {
    let bounds = compute_bound_cnn(spec)?;
    run_trials(spec, &bounds, n_trials, seed, weight_limit)
}

/// 64-input sigmoid MLP with two 16-unit hidden layers and 10 classes.
pub fn bound_mlp() -> ModelSpec {
    ModelSpec::mlp(64, &[16, 16], 10, Activation::Sigmoid)
}

/// 8x8 input, one 3x3 sigmoid conv channel, 2x2 pool, softmax over 10 classes.
pub fn bound_cnn() -> ModelSpec {
    ModelSpec {
        architecture: Architecture::Cnn {
            channels: 1,
            height: 8,
            width: 8,
            conv: vec![ConvLayer {
                out_channels: 1,
                kernel: 3,
                padding: 0,
            }],
            hidden: vec![],
        },
        activation: Activation::Sigmoid,
        classes: 10,
    }
}
