//! Federated learning gradient aggregation over a lossy wireless uplink.
//!
//! Clients compute FedSGD gradients, serialize them as IEEE-754 words, and
//! send them over a Rayleigh block-fading channel with Gray-coded QAM. Three
//! uplink strategies are compared: error correction with retransmission,
//! naive uncoded delivery, and approximate delivery where the receiver
//! clamps the exponent MSB of every word so corrupted values stay below 2.
//!
//! Network math is generic over [`Scalar`]; the aliases below fix it to
//! `f32`, the precision used for training and transmission.

pub mod boundcheck;
pub mod channel;
pub mod codec;
pub mod error;
pub mod flcore;
pub mod harness;
pub mod link;
pub mod modem;
pub mod rng;

pub use error::{Error, Result};

/// Floating-point element type of model parameters and gradients.
pub trait Scalar:
    num_traits::Float + num_traits::FromPrimitive + Default + Send + Sync + std::fmt::Debug + 'static
{
}

impl<T> Scalar for T where
    T: num_traits::Float
        + num_traits::FromPrimitive
        + Default
        + Send
        + Sync
        + std::fmt::Debug
        + 'static
{
}

/// Trained and transmitted parameters.
pub type ModelParams = flcore::Params<f32>;
/// Gradient payload carried over the uplink.
pub type GradientTensor = flcore::Gradient<f32>;
/// Double-precision parameters for reference computations.
pub type ModelParams64 = flcore::Params<f64>;
pub type GradientTensor64 = flcore::Gradient<f64>;
