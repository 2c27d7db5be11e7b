//! Real-time estimation of vertical ground reaction force, joint angles and
//! joint moments from insole and IMU packets.

pub mod commands;
pub mod compare;
pub mod config;
pub mod driver;
pub mod dump;
pub mod error;
pub mod ingest;
pub mod logs;
pub mod packet;
pub mod realtime;
pub mod reference;
pub mod session;

pub use error::{PipelineError, Result};
