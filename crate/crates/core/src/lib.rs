// SPDX-License-Identifier: Apache-2.0

//! A 5f+1 DAG Byzantine consensus core with a guard layer for detecting and
//! recovering from safety and liveness violations, and a deterministic
//! discrete-event simulator to exercise both.

pub mod acceptance;
pub mod block;
pub mod committer;
pub mod dag;
pub mod guard;
pub mod metrics;
pub mod scenario;
pub mod simnet;
pub mod types;
pub mod validator;
