//! Differentiable hybrid physics/neural model of isothermal chemical vapor
//! infiltration on an axisymmetric preform.

pub mod autodiff;
pub mod error;
pub mod grid;
pub mod io;
pub mod neural;
pub mod physics;
pub mod process;
pub mod rng;
pub mod training;
pub mod truth;

pub use error::{Error, Result};
