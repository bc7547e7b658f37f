//! Load balancing with job–server affinity relations.
//!
//! Jobs arrive with a *primary selection* of servers that process them at
//! rate `mu1`; every other server is *secondary* and processes them at the
//! slower rate `mu2`. The affinity-scheduling policy places a job on an idle
//! primary server, else on an idle secondary server, else on the least loaded
//! primary server. This crate provides
//!
//! * [`model`]: the exact policy semantics on an occupancy state,
//! * [`simulate`]: a continuous-time Markov chain simulator for general,
//!   graph and combinatorial selection families,
//! * [`coupling`]: coupled sample paths against random-assignment, MJSQ(k)
//!   and JSQ(k) reference systems with a per-event majorization check,
//! * [`stability`]: the min-max split rate `lambda0` and the structural
//!   conditions on graph density,
//! * [`fluid`]: the discontinuous fluid-limit ODE of the combinatorial model,
//! * [`fixedpoint`]: closed-form and numerical fixed points, their local
//!   stability and the derived performance metrics.

pub mod coupling;
pub mod fixedpoint;
pub mod fluid;
pub mod graph;
pub mod model;
pub mod rng;
pub mod simulate;
pub mod stability;
pub mod trajectory;

mod binom;
mod maxflow;

pub use model::{JobType, OccupancyState, SelectionFamily, ServerConfig, ServiceRates};
pub use trajectory::Trajectory;
