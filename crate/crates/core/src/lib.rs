//! Core algorithms for semantic Gaussian-splat mapping.
//!
//! The scene is a collection of 3D Gaussians ([`Splat`]) carrying color,
//! opacity, and an optional object ID. This crate provides the differentiable
//! rasterizer, RGB-D camera tracking, silhouette-guided densification and map
//! refinement, object-ID assignment from segmentation masks, open-vocabulary
//! query localization, roadmap path planning over the Gaussian centers, and
//! 3D-box evaluation metrics.
//!
//! Everything here is pure computation over in-memory data; file formats,
//! providers backed by the filesystem or network, and the CLI live in the
//! companion `splatnav` crate. The crate is `no_std` (with `alloc`) so the
//! numerics behave identically wherever they are linked.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod camera;
pub mod eval;
pub mod frame;
pub mod geometry;
pub mod image;
pub mod map;
pub mod mapper;
pub mod math;
pub mod pipeline;
pub mod planner;
pub mod pose;
pub mod query;
pub mod render;
pub mod semantics;
pub mod splat;
pub mod tracker;

pub use camera::CameraIntrinsics;
pub use frame::Frame;
pub use geometry::{back_project, project, Aabb};
pub use map::{Keyframe, SplatMap};
pub use pose::Pose;
pub use splat::Splat;
