//! The world model: an ordered splat collection plus the keyframe registry.

use alloc::vec::Vec;
use thiserror::Error;

use crate::camera::CameraIntrinsics;
use crate::geometry::Aabb;
use crate::pose::Pose;
use crate::semantics::LabelRegistry;
use crate::splat::{Splat, SplatError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("splat {index} invalid: {source}")]
    InvalidSplat { index: usize, source: SplatError },
    #[error("keyframe indices must be strictly increasing ({previous} then {next})")]
    KeyframeOrder { previous: u64, next: u64 },
    #[error("splat {index} carries object id {id} which is absent from the registry")]
    UnregisteredObjectId { index: usize, id: u64 },
}

/// A keyframe retained for mapping, semantics, and query-time search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keyframe {
    pub index: u64,
    pub pose: Pose,
}

/// The reconstructed scene: splats, keyframes, the object registry, and the
/// camera the scene was built with. Mutation is single-writer; reads may be
/// shared freely between writes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplatMap {
    pub splats: Vec<Splat>,
    pub keyframes: Vec<Keyframe>,
    pub next_object_id: u64,
    pub registry: LabelRegistry,
    pub intrinsics: Option<CameraIntrinsics>,
}

impl SplatMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    /// Appends a keyframe; indices must arrive strictly increasing.
    pub fn push_keyframe(&mut self, index: u64, pose: Pose) -> Result<(), MapError> {
        if let Some(last) = self.keyframes.last() {
            if index <= last.index {
                return Err(MapError::KeyframeOrder { previous: last.index, next: index });
            }
        }
        self.keyframes.push(Keyframe { index, pose });
        Ok(())
    }

    pub fn keyframe(&self, index: u64) -> Option<&Keyframe> {
        self.keyframes.iter().find(|k| k.index == index)
    }

    /// Mints a fresh object ID.
    pub fn mint_object_id(&mut self) -> u64 {
        let id = self.next_object_id;
        self.next_object_id += 1;
        id
    }

    /// Bounding box of all splat centers; `None` for an empty map.
    pub fn center_bounds(&self) -> Option<Aabb> {
        Aabb::from_points(self.splats.iter().map(|s| &s.center))
    }

    /// Checks splat invariants, keyframe ordering, and registry closure
    /// (every tag present in the registry).
    pub fn validate(&self) -> Result<(), MapError> {
        for (index, splat) in self.splats.iter().enumerate() {
            splat
                .validate()
                .map_err(|source| MapError::InvalidSplat { index, source })?;
            if let Some(id) = splat.object_id {
                if !self.registry.contains(id) {
                    return Err(MapError::UnregisteredObjectId { index, id });
                }
            }
        }
        for pair in self.keyframes.windows(2) {
            if pair[1].index <= pair[0].index {
                return Err(MapError::KeyframeOrder {
                    previous: pair[0].index,
                    next: pair[1].index,
                });
            }
        }
        Ok(())
    }

    /// Indices of splats carrying `id`.
    pub fn splats_with_id(&self, id: u64) -> Vec<usize> {
        self.splats
            .iter()
            .enumerate()
            .filter(|(_, s)| s.object_id == Some(id))
            .map(|(i, _)| i)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn keyframe_order_is_enforced() {
        let mut map = SplatMap::new();
        map.push_keyframe(0, Pose::identity()).unwrap();
        map.push_keyframe(5, Pose::identity()).unwrap();
        assert!(matches!(
            map.push_keyframe(5, Pose::identity()),
            Err(MapError::KeyframeOrder { .. })
        ));
        assert!(matches!(
            map.push_keyframe(3, Pose::identity()),
            Err(MapError::KeyframeOrder { .. })
        ));
    }

    #[test]
    fn registry_closure_is_checked() {
        let mut map = SplatMap::new();
        let mut splat = Splat::isotropic(
            Vector3::new(0.0, 0.0, 1.0),
            0.05,
            Vector3::new(0.5, 0.5, 0.5),
            0.5,
        );
        splat.object_id = Some(7);
        map.splats.push(splat);
        assert!(matches!(map.validate(), Err(MapError::UnregisteredObjectId { id: 7, .. })));

        map.registry
            .record_observation(7, "chair", &[1.0, 0.0], 0.9, 0)
            .unwrap();
        map.validate().unwrap();
    }

    #[test]
    fn mint_increments() {
        let mut map = SplatMap::new();
        assert_eq!(map.mint_object_id(), 0);
        assert_eq!(map.mint_object_id(), 1);
        assert_eq!(map.next_object_id, 2);
    }
}
