//! Joint protein sequence and Cα structure design from conserved
//! fragments with stacked neighborhood attentive equivariant layers.

pub mod alphabet;
pub mod autodiff;
pub mod error;
pub mod evalgen;
pub mod fragments;
pub mod geometry;
pub mod io;
pub mod layers;
pub mod model;
pub mod nn;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
