//! FedSGD over hand-written fully-connected and convolutional networks.

pub mod data;
pub mod fedsgd;
pub mod model;

pub use data::{
    load_idx, parse_idx, partition_noniid, synthetic_digits, ClientDataset, Dataset, Sample,
};
pub use fedsgd::{aggregate, argmax, evaluate, global_update};
pub use model::{
    forward_backward, forward_backward_cnn, forward_backward_fc, forward_backward_traced, loss,
    predict_log_probs, Activation, Architecture, ConvLayer, Gradient, Layout, ModelSpec,
    ParamBlock, Params, Trace,
};
