//! Deterministic event-driven simulation and joint order-allocation / robot
//! scheduling for robotic mobile fulfillment warehouses.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: grid, ids, item vectors and the warehouse entities.
//! * [`soft_alloc`]: matching degrees, Top-K candidates, heat vectors.
//! * [`world`]: the mutable warehouse state shared by everything below.
//! * [`finalizer`]: turning soft allocations into reservations, and the
//!   greedy default allocation.
//! * [`sim`]: the event loop, decisions, metrics and the event log.
//! * [`policies`]: order allocators and robot schedulers.
//! * [`rl_math`]: reward shaping and advantage kernels.
//! * [`obs`]: heterogeneous graph observations.
//! * [`env`]: a step/reset wrapper adding rewards and observations.
//! * [`datagen`]: instance generation and the dataset file format.
//! * [`batch`]: running many episodes, in parallel when the `parallel`
//!   feature is enabled.

pub mod batch;
pub mod datagen;
pub mod env;
pub mod error;
pub mod finalizer;
pub mod model;
pub mod obs;
pub mod policies;
pub mod rl_math;
pub mod sim;
pub mod soft_alloc;
pub mod world;

pub use datagen::{gen_instance, Dataset, Scale, ScenarioConfig};
pub use error::{AllocError, DatasetError, MathError, ModelError, SimError};
pub use model::{ItemVector, Order, OrderId, Pos, RobotId, ShelfId, SimTime, WorkstationId};
pub use policies::{AllocatorKind, Scheduler, SchedulerKind};
pub use sim::{run_episode, EpisodeMetrics, EpisodeOutcome, SimConfig, Simulation};
