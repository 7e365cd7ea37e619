//! Filesystem, configuration, and reporting layer over `prunelens-core`:
//! dataset/checkpoint persistence, pruning-pool management, evaluation
//! caching, CSV/JSON reports, and PNG plots. The `prunelens` binary is a
//! thin CLI over [`runner`].

pub mod checkpoint;
pub mod config;
pub mod container;
pub mod data_io;
pub mod evals;
pub mod plot;
pub mod pool;
pub mod report;
pub mod runner;
