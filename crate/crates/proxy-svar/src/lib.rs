//! Structural VAR identification through proxies for the *non-target* shocks.
//!
//! The pipeline estimates a reduced-form VAR, maps proxy moment conditions
//! into the target rows of `A = B^-1` by minimum distance, pre-tests proxy
//! relevance with a moving-block-bootstrap normality test, and produces
//! impulse responses with delta-method, bootstrap, or weak-instrument-robust
//! confidence sets.
//!
//! Modules follow the stages of that pipeline:
//!
//! * [`dataset`] - input data, sample windows, CSV ingestion
//! * [`var`] - reduced-form VAR fit, companion form, impulse responses
//! * [`moments`] - proxy cross-moments and their Jacobians
//! * [`restrictions`] - linear restriction machinery for structural matrices
//! * [`md`] - indirect minimum-distance estimation of the target rows
//! * [`cmd`] - minimum-distance estimation of the proxy-strength parameters
//! * [`mbb`] - moving block bootstrap ensembles and percentile bands
//! * [`normality`] - Doornik-Hansen, Lilliefors, and EDF-based statistics
//! * [`relevance`] - the bootstrap pre-test of instrument relevance
//! * [`robust`] - weak-instrument-robust confidence sets by test inversion
//! * [`dgp`] - the simulation design used by the Monte Carlo experiments
//! * [`experiments`] - rejection-frequency and coverage experiment runners

pub mod cmd;
pub mod dataset;
pub mod dgp;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod mbb;
pub mod md;
pub mod moments;
pub mod normality;
pub mod numdiff;
pub mod optim;
pub mod relevance;
pub mod restrictions;
pub mod robust;
pub mod var;

pub use error::{Error, Result};
