//! Intent-aware RAN slicing: channel and traffic model, KPI computation,
//! inter- and intra-slice schedulers, self-healing, a hierarchical
//! decision-making controller and the simulation harness around them.

// `!(x >= 0.0)` style checks are there to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod hdm;
pub mod healing;
pub mod intent;
pub mod inter_slice;
pub mod intra_slice;
pub mod metrics;
pub mod rng;
pub mod sim;
pub mod sla;
pub mod topology;
pub mod traffic;

pub use error::{Error, Result};
pub use metrics::{SliceKpis, UeKpis};
pub use sla::{Intent, SliceKind, SliceSla};
pub use topology::{ChannelParams, NetworkConfig};
