//! Server-side FedSGD: weighted aggregation, the SGD step and evaluation.

use crate::error::{Error, Result};
use crate::flcore::data::Sample;
use crate::flcore::model::{predict_log_probs, Gradient, Params};
use crate::Scalar;

/// `sum_m weight_m * g_m`. Non-finite received entries count as 0.
pub fn aggregate<T: Scalar>(gradients: &[Gradient<T>], weights: &[f64]) -> Result<Gradient<T>> {
    let first = gradients
        .first()
        .ok_or_else(|| Error::Spec("no gradients to aggregate".into()))?;
    if gradients.len() != weights.len() {
        return Err(Error::Spec(format!(
            "{} gradients but {} weights",
            gradients.len(),
            weights.len()
        )));
    }
    if gradients.iter().any(|g| g.len() != first.len()) {
        return Err(Error::Spec("gradient lengths differ".into()));
    }
    let wsum: f64 = weights.iter().sum();
    if (wsum - 1.0).abs() > 1e-9 || weights.iter().any(|w| *w < 0.0) {
        return Err(Error::Config(format!("aggregation weights sum to {wsum}")));
    }
    let mut out = vec![T::zero(); first.len()];
    for (g, &w) in gradients.iter().zip(weights) {
        let w = T::from_f64(w).unwrap();
        for (o, &v) in out.iter_mut().zip(&g.values) {
            if v.is_finite() {
                *o = *o + w * v;
            }
        }
    }
    // Summing huge finite values can still overflow.
    for o in &mut out {
        if !o.is_finite() {
            *o = saturate(*o);
        }
    }
    Ok(Gradient {
        values: out,
        client_id: None,
        round: first.round,
    })
}

fn saturate<T: Scalar>(v: T) -> T {
    if v.is_nan() {
        T::zero()
    } else if v > T::zero() {
        T::max_value()
    } else {
        T::min_value()
    }
}

/// `w - lr * g`. Results that overflow saturate at the largest finite value
/// so parameters stay finite.
pub fn global_update<T: Scalar>(
    params: &Params<T>,
    gradient: &Gradient<T>,
    lr: T,
) -> Result<Params<T>> {
    if gradient.len() != params.values.len() {
        return Err(Error::Spec(
            "gradient does not match parameter layout".into(),
        ));
    }
    let values = params
        .values
        .iter()
        .zip(&gradient.values)
        .map(|(&w, &g)| {
            let v = w - lr * g;
            if v.is_finite() {
                v
            } else {
                saturate(v)
            }
        })
        .collect();
    Ok(Params {
        layout: params.layout.clone(),
        values,
    })
}

/// Index of the largest log-probability; NaN entries never win and an
/// all-NaN output predicts class 0.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    let mut best_v = T::neg_infinity();
    for (i, &x) in v.iter().enumerate() {
        if x > best_v {
            best = i;
            best_v = x;
        }
    }
    best
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn evaluate<T: Scalar>(params: &Params<T>, test_set: &[Sample]) -> f64 {
    if test_set.is_empty() {
        return 0.0;
    }
    let correct = test_set
        .iter()
        .filter(|s| argmax(&predict_log_probs(params, &s.x)) == s.label)
        .count();
    correct as f64 / test_set.len() as f64
}
