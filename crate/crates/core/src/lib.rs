//! Noisy-circuit sampling on dense tensor networks.
//!
//! Error realizations are drawn before any contraction, folded into the gate
//! tensors they follow so that every realization shares one network
//! structure (and one cached contraction path per measurement stage), and
//! measurement prefixes shared by many shots are contracted once.
//!
//! Modules, bottom up: [`tensor`] (dense tensors and contraction),
//! [`path`] (planning and the path cache), [`circuit`] (gates, noise,
//! random circuits), [`engine`] (samplers), [`oracle`] (exact references)
//! and [`bench`] (metrics and sweeps).

pub mod bench;
pub mod circuit;
pub mod engine;
pub mod error;
pub mod oracle;
pub mod path;
pub mod tensor;

pub use circuit::{build_network, random_circuit, Circuit, Gate, GateKind, NoiseChannel, NoiseKind};
pub use engine::{
    merge_errors, presample_errors, run_ptsbe, BatchPlan, ErrorSet, FinalMode, PtsbeConfig,
    RunResult, Sampler, ShotRecord,
};
pub use error::{Error, Result};
pub use path::{find_path_greedy, find_path_optimal, path_cost, ContractionPath, PathCache};
pub use tensor::{contract_pair, execute_path, Index, Label, Tensor, TensorNetwork};
