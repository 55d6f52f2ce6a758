//! Experiment orchestration: FedSGD rounds through an uplink strategy, with
//! airtime accounting and CSV output.

pub mod config;
pub mod experiment;
pub mod report;
pub mod suite;

pub use config::{DatasetConfig, ExperimentConfig, FlConfig, ModelChoice, ModemConfig, RunConfig};
pub use experiment::{run_experiment, ExperimentRun, RoundReport};
pub use report::{
    accuracy_vs_airtime, time_to_target, write_accuracy_vs_airtime, write_round_reports, AirtimeRow,
};
pub use suite::{same_snr_same_ber_suite, write_suite_csv, SuiteCurve, SuiteResult};
