//! Surrogate models for lithium-ion terminal voltage under eVTOL mission
//! profiles.
//!
//! Two model families are compared:
//!
//! - **FNN**: a ReLU multilayer perceptron mapping the raw operating
//!   conditions `[Δt, I, SOC, T, N]` straight to a (normalized) voltage.
//! - **PINN**: a hybrid residual model. An exact discrete-time second-order
//!   RC equivalent circuit ([`ecm`]) produces a physics voltage `V_phy`, and
//!   the network only learns the correction `ΔV` from the augmented vector
//!   `[Δt, I, SOC, T, N, OCV, V_RC1, V_RC2, V_phy]`. The prediction is
//!   `V_phy + ΔV`.
//!
//! The crate is organized bottom-up:
//!
//! | module         | contents                                                     |
//! |----------------|--------------------------------------------------------------|
//! | [`ecm`]        | 2RC model, OCV curve, coulomb counting, parameter fitting    |
//! | [`features`]   | FNN/PINN feature rows, normalization                          |
//! | [`nn`]         | MLP forward/backward, Adam/SGD training, weight files         |
//! | [`data`]       | CSV ingestion, train/test split, synthetic mission generator |
//! | [`metrics`]    | MAE / RMSE / R² / max error, inference timing                 |
//! | [`experiment`] | config file, architecture grid runner, trace export          |
//!
//! See `examples/` for one runnable program per capability.

pub mod data;
pub mod ecm;
pub mod error;
pub mod experiment;
pub mod features;
pub mod metrics;
pub mod nn;

pub use error::{Error, Result};
