//! Reference computations shared by the integration and acceptance tests.
//! Each oracle is written independently of the library code it checks.
#![allow(dead_code)]

use approxfl::flcore::{
    forward_backward, loss, synthetic_digits, ClientDataset, ModelSpec, Params, Sample,
};
use approxfl::rng::stream;
use approxfl::ModelParams;

/// Closed-form Gray QPSK BER over Rayleigh fading; `snr_db` is per symbol.
pub fn qpsk_rayleigh_ber_oracle(snr_db: f64) -> f64 {
    let gamma_b = 10f64.powf(snr_db / 10.0) / 2.0;
    0.5 * (1.0 - (gamma_b / (1.0 + gamma_b)).sqrt())
}

/// Relative tolerance for analytic vs finite-difference gradients.
pub const FD_REL_TOL: f64 = 1e-3;
/// Entries where both gradients are below this are at the float32 noise
/// floor and count as agreeing.
pub const FD_ABS_FLOOR: f64 = 1e-6;
const FD_STEP: f64 = 1e-6;

/// Fraction of parameters whose float32 analytic gradient matches a float64
/// central difference of the batch-mean loss.
pub fn fd_agreement(spec: &ModelSpec, seed: u64, batch: usize) -> f64 {
    let mut rng = stream(seed, &[7001]);
    let params = ModelParams::uniform(spec, 0.5, &mut rng).unwrap();
    let data: Vec<Sample> = synthetic_digits(1, seed)
        .samples
        .into_iter()
        .take(batch)
        .collect();
    let (_, grad) = forward_backward(&params, &data).unwrap();
    let p64: Params<f64> = params.cast();
    let mut ok = 0;
    for i in 0..p64.values.len() {
        let mut plus = p64.clone();
        plus.values[i] += FD_STEP;
        let mut minus = p64.clone();
        minus.values[i] -= FD_STEP;
        let fd = (loss(&plus, &data).unwrap() - loss(&minus, &data).unwrap()) / (2.0 * FD_STEP);
        let an = grad.values[i] as f64;
        let scale = an.abs().max(fd.abs());
        if scale < FD_ABS_FLOOR || (an - fd).abs() <= FD_REL_TOL * scale {
            ok += 1;
        }
    }
    ok as f64 / p64.values.len() as f64
}

/// One step of centralized gradient descent on the union of all client
/// data, computed per sample in float64.
pub fn centralized_step(p64: &Params<f64>, clients: &[ClientDataset], lr: f64) -> Vec<f64> {
    let n: usize = clients.iter().map(|c| c.samples.len()).sum();
    let mut g = vec![0.0f64; p64.values.len()];
    for s in clients.iter().flat_map(|c| &c.samples) {
        let (_, gs) = forward_backward(p64, std::slice::from_ref(s)).unwrap();
        for (a, b) in g.iter_mut().zip(&gs.values) {
            *a += b / n as f64;
        }
    }
    p64.values.iter().zip(&g).map(|(w, d)| w - lr * d).collect()
}

/// Largest relative deviation of `got` from `want`.
pub fn max_rel_err(got: &[f64], want: &[f64]) -> f64 {
    got.iter()
        .zip(want)
        .map(|(&a, &b)| {
            let d = (a - b).abs();
            if b == 0.0 {
                d
            } else {
                d / b.abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Product bound for each weight layer of a sigmoid MLP with layer sizes
/// `sizes` (input first): `prod_{k > l} n_k / 4`, with the output layer
/// getting the empty product 1.
pub fn product_bounds(sizes: &[usize]) -> Vec<f64> {
    let layers = sizes.len() - 1;
    (0..layers)
        .map(|l| sizes[l + 2..].iter().map(|&n| 0.25 * n as f64).product())
        .collect()
}
