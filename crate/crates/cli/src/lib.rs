//! Command-line front end: loads data bundles, runs the models, and writes
//! models, predictions, choropleth maps and comparison tables.

pub mod args;
pub mod commands;
pub mod error;
pub mod output;
pub mod svg;
