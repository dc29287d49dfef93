//! File formats, manifests, model directories, reports and the command line
//! for `spurious-core`.

pub mod cli;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod model_io;
pub mod report;
pub mod run;
