//! File formats, configuration, pipeline and reporting around
//! `ambiguess-core`.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod evaluate;
pub mod generate;
pub mod idx;
pub mod log;
pub mod report;
pub mod svg;
pub mod train;
