//! Deterministic simulator for cache timing channels that leak through the
//! replacement state (LRU, Tree-PLRU, Bit-PLRU) of a set-associative cache.

pub mod cache;
pub mod channel;
pub mod error;
pub mod eval;
pub mod par;
pub mod plru_analysis;
pub mod policy;
pub mod rng;
pub mod secure;
pub mod timing;
pub mod transient;

pub use cache::{AccessKind, AccessOutcome, Address, CacheGeometry, CacheModel, CacheSet, LineMeta};
pub use error::{Result, SimError};
pub use policy::{BitPlruReset, PolicyKind, ReplacementState};
pub use channel::{ChannelConfig, NoiseModel, Protocol, ScheduleMode, ScheduleModel};
pub use secure::{PlCache, PlVariant};
pub use timing::{Class, LatencyProfile, Observation};
