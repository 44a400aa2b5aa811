//! File formats, experiment drivers and the command-line front end for
//! [`lgnet_core`].

pub mod checkpoint;
pub mod config;
pub mod csv_io;
pub mod error;
pub mod experiment;
pub mod report;
pub mod synth;

pub use error::AppError;
