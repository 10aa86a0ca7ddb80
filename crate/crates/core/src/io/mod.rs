//! File formats: protein records, aligned FASTA, configuration files and
//! checkpoints.

pub mod records;
pub mod checkpoint;
pub mod config;
pub mod fasta;
pub mod split;
