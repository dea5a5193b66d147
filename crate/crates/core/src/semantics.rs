//! Object semantics: segmentation records from a pluggable provider, the
//! label registry, and object-ID assignment onto splats.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use thiserror::Error;

use crate::frame::Frame;
use crate::geometry::project;
use crate::image::{BoolMask, ColorImage};
use crate::map::SplatMap;
use crate::math;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemanticsError {
    #[error("embedding for '{label}' is the zero vector")]
    ZeroEmbedding { label: String },
    #[error("embedding for '{label}' has dimension {found}, table expects {expected}")]
    DimensionMismatch { label: String, found: usize, expected: usize },
    #[error("frame {frame} has no pose; run tracking before the semantic pass")]
    MissingPose { frame: u64 },
    #[error("record '{label}': mask is {mask_w}x{mask_h}, frame is {frame_w}x{frame_h}")]
    MaskDimensionMismatch { label: String, mask_w: usize, mask_h: usize, frame_w: usize, frame_h: usize },
    #[error("record '{label}': mask pixel ({x}, {y}) lies outside its bounding box")]
    MaskOutsideBox { label: String, x: usize, y: usize },
    #[error("no embedding registered for label '{label}'")]
    MissingEmbedding { label: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("provider has no record source for frame {frame}")]
    NoSource { frame: u64 },
    #[error("record '{label}' invalid: {reason}")]
    BadRecord { label: String, reason: String },
    #[error("remote provider failed: {reason}")]
    Remote { reason: String },
}

/// Pixel rectangle, half-open: `x0 <= x < x1`, `y0 <= y < y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelBox {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        (x as u32) >= self.x0 && (x as u32) < self.x1 && (y as u32) >= self.y0 && (y as u32) < self.y1
    }
}

/// One segmented object instance in one frame, as delivered by a provider.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationRecord {
    pub frame_index: u64,
    pub label: String,
    pub bbox_2d: PixelBox,
    pub mask: BoolMask,
    pub confidence: f64,
}

impl SegmentationRecord {
    pub fn validate(&self, frame_width: usize, frame_height: usize) -> Result<(), SemanticsError> {
        if self.mask.width != frame_width || self.mask.height != frame_height {
            return Err(SemanticsError::MaskDimensionMismatch {
                label: self.label.clone(),
                mask_w: self.mask.width,
                mask_h: self.mask.height,
                frame_w: frame_width,
                frame_h: frame_height,
            });
        }
        for (x, y) in self.mask.true_pixels() {
            if !self.bbox_2d.contains(x, y) {
                return Err(SemanticsError::MaskOutsideBox { label: self.label.clone(), x, y });
            }
        }
        Ok(())
    }
}

/// Source of segmentation records. Fixture directories and the remote
/// service client in the companion crate implement this; tests use
/// [`MemoryProvider`].
pub trait SegmentationProvider {
    /// Records for a live frame during reconstruction.
    fn fetch(&self, frame: &Frame) -> Result<Vec<SegmentationRecord>, ProviderError>;

    /// Query-time refinement: re-segment the stored keyframe `frame_index`
    /// targeting `label`. `rendered` is the map's RGB render at that
    /// keyframe's pose, for providers that need image content.
    fn fetch_targeted(
        &self,
        frame_index: u64,
        rendered: &ColorImage,
        label: &str,
    ) -> Result<Vec<SegmentationRecord>, ProviderError>;
}

/// Provider over an in-memory record table, keyed by frame index.
#[derive(Debug, Default, Clone)]
pub struct MemoryProvider {
    records: BTreeMap<u64, Vec<SegmentationRecord>>,
}

impl MemoryProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, frame_index: u64, records: Vec<SegmentationRecord>) {
        self.records.insert(frame_index, records);
    }
}

impl SegmentationProvider for MemoryProvider {
    fn fetch(&self, frame: &Frame) -> Result<Vec<SegmentationRecord>, ProviderError> {
        Ok(self.records.get(&frame.index).cloned().unwrap_or_default())
    }

    fn fetch_targeted(
        &self,
        frame_index: u64,
        _rendered: &ColorImage,
        label: &str,
    ) -> Result<Vec<SegmentationRecord>, ProviderError> {
        Ok(self
            .records
            .get(&frame_index)
            .map(|rs| rs.iter().filter(|r| r.label == label).cloned().collect())
            .unwrap_or_default())
    }
}

/// Label -> unit embedding table. The dimensionality is fixed at
/// construction (it comes from the embedding file header or the remote
/// service, not from code).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Stores `embedding` for `label` with unit norm. Registering the same
    /// vector again is a no-op.
    pub fn register(&mut self, label: &str, embedding: &[f64]) -> Result<(), SemanticsError> {
        if embedding.len() != self.dim {
            return Err(SemanticsError::DimensionMismatch {
                label: String::from(label),
                found: embedding.len(),
                expected: self.dim,
            });
        }
        let norm = math::sqrt(embedding.iter().map(|v| v * v).sum());
        if norm <= 0.0 {
            return Err(SemanticsError::ZeroEmbedding { label: String::from(label) });
        }
        let unit: Vec<f64> = embedding.iter().map(|v| v / norm).collect();
        self.entries.insert(String::from(label), unit);
        Ok(())
    }

    pub fn lookup(&self, label: &str) -> Option<&[f64]> {
        self.entries.get(label).map(|v| v.as_slice())
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One registered object instance.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelEntry {
    pub label: String,
    /// Unit-norm class embedding.
    pub embedding: Vec<f64>,
    /// Highest confidence among the observations that produced this entry.
    pub confidence: f64,
    /// Keyframe indices where the object was observed, ascending.
    pub keyframes: Vec<u64>,
}

/// Object-ID <-> label <-> embedding table, the backbone of query matching.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelRegistry {
    entries: BTreeMap<u64, LabelEntry>,
}

impl LabelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, id: u64) -> Option<&LabelEntry> {
        self.entries.get(&id)
    }

    pub fn entries(&self) -> impl Iterator<Item = (u64, &LabelEntry)> {
        self.entries.iter().map(|(id, e)| (*id, e))
    }

    pub fn contains(&self, id: u64) -> bool {
        self.entries.contains_key(&id)
    }

    /// Inserts or updates an entry; the embedding is normalized on the way
    /// in and the keyframe list stays sorted and unique.
    pub fn record_observation(
        &mut self,
        id: u64,
        label: &str,
        embedding: &[f64],
        confidence: f64,
        keyframe: u64,
    ) -> Result<(), SemanticsError> {
        let norm = math::sqrt(embedding.iter().map(|v| v * v).sum());
        if norm <= 0.0 {
            return Err(SemanticsError::ZeroEmbedding { label: String::from(label) });
        }
        let unit: Vec<f64> = embedding.iter().map(|v| v / norm).collect();
        let entry = self.entries.entry(id).or_insert_with(|| LabelEntry {
            label: String::from(label),
            embedding: unit.clone(),
            confidence,
            keyframes: Vec::new(),
        });
        if confidence > entry.confidence {
            entry.label = String::from(label);
            entry.embedding = unit;
            entry.confidence = confidence;
        }
        if let Err(pos) = entry.keyframes.binary_search(&keyframe) {
            entry.keyframes.insert(pos, keyframe);
        }
        Ok(())
    }

    /// IDs carrying `label`, ascending.
    pub fn ids_with_label(&self, label: &str) -> Vec<u64> {
        self.entries
            .iter()
            .filter(|(_, e)| e.label == label)
            .map(|(id, _)| *id)
            .collect()
    }

    /// Keyframes (ascending) in which any instance of `label` was observed.
    pub fn keyframes_with_label(&self, label: &str) -> Vec<u64> {
        let mut set = BTreeSet::new();
        for (_, e) in self.entries.iter() {
            if e.label == label {
                set.extend(e.keyframes.iter().copied());
            }
        }
        set.into_iter().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticsConfig {
    /// Maximum |splat camera depth - observed depth| for a mask pixel to
    /// claim a splat; prevents tagging occluded background splats.
    pub depth_assoc_tol: f64,
    /// Fraction of splat-hitting mask pixels that must already carry one ID
    /// for that ID to be reused instead of minting a new one.
    pub reuse_overlap: f64,
}

impl Default for SemanticsConfig {
    fn default() -> Self {
        Self { depth_assoc_tol: 0.10, reuse_overlap: 0.5 }
    }
}

/// Outcome of assigning one record.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordAssignment {
    pub record_index: usize,
    pub object_id: u64,
    /// Whether an existing ID was reused rather than minted.
    pub reused: bool,
    /// Number of splats carrying the ID after this record (newly tagged or
    /// re-confirmed).
    pub splats_tagged: usize,
}

/// Assigns object IDs to splats covered by each record's mask.
///
/// A splat belongs to a mask when its center projects to a masked pixel and
/// its camera-frame depth agrees with the observed depth at that pixel within
/// `depth_assoc_tol`. Each record either reuses the dominant existing ID
/// among the pixels it hits (at least `reuse_overlap` of them) or mints a new
/// one. Already-tagged splats are only retagged by a strictly more confident
/// record. Rerunning with identical inputs is a no-op.
pub fn assign_object_ids(
    map: &mut SplatMap,
    frame: &Frame,
    records: &[SegmentationRecord],
    embeddings: &EmbeddingTable,
    config: &SemanticsConfig,
) -> Result<Vec<RecordAssignment>, SemanticsError> {
    let pose = frame.pose.ok_or(SemanticsError::MissingPose { frame: frame.index })?;
    let width = frame.rgb.width;
    let height = frame.rgb.height;

    // Project all splat centers once.
    let mut projected: Vec<Option<(usize, usize, f64)>> = Vec::with_capacity(map.splats.len());
    for splat in &map.splats {
        let entry = match project(&splat.center, &pose, &frame.intrinsics) {
            Ok((u, v, z)) => {
                let px = math::round(u);
                let py = math::round(v);
                if px >= 0.0 && py >= 0.0 && (px as usize) < width && (py as usize) < height {
                    Some((px as usize, py as usize, z))
                } else {
                    None
                }
            }
            Err(_) => None,
        };
        projected.push(entry);
    }

    let mut results = Vec::with_capacity(records.len());
    for (record_index, record) in records.iter().enumerate() {
        record.validate(width, height)?;
        let embedding = embeddings
            .lookup(&record.label)
            .ok_or_else(|| SemanticsError::MissingEmbedding { label: record.label.clone() })?
            .to_vec();

        // Splats gated by mask membership and depth consistency.
        let mut hits: Vec<usize> = Vec::new();
        // Front-most gated splat per hit pixel, for the reuse vote.
        let mut front: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
        for (k, proj) in projected.iter().enumerate() {
            let Some((px, py, z)) = proj else { continue };
            if !record.mask.get(*px, *py) {
                continue;
            }
            let Some(observed) = frame.valid_depth(*px, *py) else { continue };
            if math::abs(z - observed) > config.depth_assoc_tol {
                continue;
            }
            hits.push(k);
            match front.get(&(*px, *py)) {
                Some((best_z, _)) if *best_z <= *z => {}
                _ => {
                    front.insert((*px, *py), (*z, k));
                }
            }
        }

        // Reuse vote: fraction of hit pixels whose front splat already
        // carries a single existing ID.
        let mut votes: BTreeMap<u64, usize> = BTreeMap::new();
        for (_, (_, k)) in front.iter() {
            if let Some(id) = map.splats[*k].object_id {
                *votes.entry(id).or_insert(0) += 1;
            }
        }
        let hit_pixels = front.len();
        let reused_id = votes
            .iter()
            .filter(|(_, &count)| {
                hit_pixels > 0 && count as f64 >= config.reuse_overlap * hit_pixels as f64
            })
            .map(|(id, _)| *id)
            .next();

        let (object_id, reused) = match reused_id {
            Some(id) => (id, true),
            None => (map.mint_object_id(), false),
        };

        let mut tagged = 0usize;
        for &k in &hits {
            let splat = &mut map.splats[k];
            match splat.object_id {
                None => {
                    splat.object_id = Some(object_id);
                    tagged += 1;
                }
                Some(existing) if existing == object_id => {
                    tagged += 1;
                }
                Some(existing) => {
                    let existing_conf =
                        map.registry.get(existing).map(|e| e.confidence).unwrap_or(0.0);
                    if record.confidence > existing_conf {
                        splat.object_id = Some(object_id);
                        tagged += 1;
                    }
                }
            }
        }

        map.registry.record_observation(
            object_id,
            &record.label,
            &embedding,
            record.confidence,
            frame.index,
        )?;

        results.push(RecordAssignment { record_index, object_id, reused, splats_tagged: tagged });
    }
    Ok(results)
}
