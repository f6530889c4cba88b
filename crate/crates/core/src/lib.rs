//! Depth-augmented spherical Gaussian lighting.
//!
//! A light is a fixed set of evenly spread lobes sharing one sharpness, each
//! carrying RGB radiance and optionally a depth. This crate fits such lights
//! to HDR panoramas, renders them back, moves them to nearby probe positions,
//! and trains a small graph-convolutional predictor that regresses them from
//! a single limited-field-of-view image.
//!
//! The geometry, model, raster and solver code is generic over [`Real`]
//! (`f32` or `f64`); the aliases below pin the common instantiations. The
//! learned predictor in [`graphnet`] runs in `f64` only.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fitter;
pub mod graphnet;
pub mod panorama;
pub mod scalar;
pub mod sg_model;
pub mod sphere_layout;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Direction = sphere_layout::Direction<f64>;
pub type Direction32 = sphere_layout::Direction<f32>;
pub type NodeLayout = sphere_layout::NodeLayout<f64>;
pub type NodeLayout32 = sphere_layout::NodeLayout<f32>;
pub type GraphSpec = sphere_layout::GraphSpec<f64>;
pub type DsgLight = sg_model::DsgLight<f64>;
pub type DsgLight32 = sg_model::DsgLight<f32>;
pub type SgAmplitude = sg_model::SgAmplitude<f64>;
pub type Panorama = panorama::Panorama<f64>;
pub type Panorama32 = panorama::Panorama<f32>;
pub type NormalSystem = fitter::NormalSystem<f64>;

/// Node count used throughout unless configured otherwise.
pub const DEFAULT_NODES: usize = 128;
/// Neighbours per node in the predictor graph.
pub const DEFAULT_K: usize = 8;
