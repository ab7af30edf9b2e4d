//! Core of the DALTON indoor air quality platform.
//!
//! The crate holds the domain model, the analytics (window statistics, the
//! Healthy Home Index, cross-correlation), and the runtime pieces of the hub:
//! an in-process topic bus, an append-only store, the stream pipeline with
//! fault recovery, and a deterministic household simulator used as ground
//! truth.

pub mod bus;
pub mod clock;
pub mod hhi;
pub mod model;
pub mod pipeline;
pub mod signal;
pub mod simulator;
pub mod store;
pub mod window_stats;

pub use hhi::{CalibrationTable, Category, HhiPoint};
pub use model::{
    Annotation, AnnotationSource, CommandAction, CommandEnvelope, CommandStatus, DeviceRecord,
    FaultKind, FaultRecord, Liveness, OperationalBounds, PollutantKind, Reading,
    ValidationVerdict,
};
pub use window_stats::{Thresholds, Window, WindowStats};
