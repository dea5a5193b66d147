//! Open-vocabulary object queries: cosine matching against the registry,
//! keyframe pruning, and 3D localization of the queried object.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{back_project, Aabb};
use crate::map::SplatMap;
use crate::math;
use crate::render;
use crate::semantics::{LabelRegistry, ProviderError, SegmentationProvider};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueryError {
    #[error("registry is empty; reconstruct with a segmentation provider first")]
    EmptyRegistry,
    #[error("query embedding is the zero vector")]
    InvalidEmbedding,
    /// Unknown word: the best registry score fell below the threshold.
    #[error("no label matches the query (best '{best_label}' scored {best_score:.3}, need {min_score:.3})")]
    NoMatch { best_label: String, best_score: f64, min_score: f64 },
    /// Known word, absent object: refinement hit nothing in any keyframe.
    #[error("label '{label}' matched (score {score:.3}) but no keyframe localized it")]
    NotFound { label: String, score: f64 },
    #[error("map carries no camera intrinsics; cannot render keyframes")]
    MissingIntrinsics,
    #[error(transparent)]
    Provider(ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryConfig {
    /// Matches scoring below this are reported as no-match.
    pub min_score: f64,
    /// Percentile window kept when trimming back-projected points.
    pub outlier_low: f64,
    pub outlier_high: f64,
    /// Rendered-depth pixels below this silhouette are not back-projected.
    pub min_silhouette: f64,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self { min_score: 0.25, outlier_low: 0.02, outlier_high: 0.98, min_silhouette: 0.5 }
    }
}

/// The localized object: matched label, its splats, and the goal box.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub matched_label: String,
    pub score: f64,
    /// IDs of splats whose centers fell inside the initial pixel-derived box.
    pub object_ids: BTreeSet<u64>,
    /// Every splat carrying one of `object_ids`.
    pub splat_indices: Vec<usize>,
    pub bbox_3d: Aabb,
    /// Box center; the navigation goal.
    pub goal_point: Vector3<f64>,
    /// Keyframe whose refinement produced the hit.
    pub keyframe: u64,
    /// Whether the hit came from the fallback sweep over pruned-out keyframes.
    pub used_fallback: bool,
}

/// Cosine similarity of two embeddings.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    let na: f64 = math::sqrt(a.iter().map(|x| x * x).sum());
    let nb: f64 = math::sqrt(b.iter().map(|x| x * x).sum());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Best-scoring registry label for a query embedding.
pub fn match_query(
    query_embedding: &[f64],
    registry: &LabelRegistry,
    min_score: f64,
) -> Result<(String, f64), QueryError> {
    if registry.is_empty() {
        return Err(QueryError::EmptyRegistry);
    }
    if query_embedding.iter().all(|&v| v == 0.0) {
        return Err(QueryError::InvalidEmbedding);
    }
    let mut best: Option<(String, f64)> = None;
    for (_, entry) in registry.entries() {
        let score = cosine_similarity(query_embedding, &entry.embedding);
        match &best {
            Some((_, s)) if *s >= score => {}
            _ => best = Some((entry.label.clone(), score)),
        }
    }
    let (label, score) = best.expect("registry nonempty");
    if score < min_score {
        return Err(QueryError::NoMatch { best_label: label, best_score: score, min_score });
    }
    Ok((label, score))
}

/// Keyframes containing the label, most recent first. The complement (in the
/// same order) seeds the fallback sweep.
pub fn prune_keyframes(label: &str, registry: &LabelRegistry) -> Vec<u64> {
    let mut kfs = registry.keyframes_with_label(label);
    kfs.reverse();
    kfs
}

/// Full query pipeline: match, prune, per-keyframe refinement, fallback
/// expansion, localization per the ID-closure rule.
pub fn localize(
    map: &SplatMap,
    query_embedding: &[f64],
    provider: &dyn SegmentationProvider,
    config: &QueryConfig,
) -> Result<QueryResult, QueryError> {
    let intrinsics = map.intrinsics.ok_or(QueryError::MissingIntrinsics)?;
    let (label, score) = match_query(query_embedding, &map.registry, config.min_score)?;

    let pruned = prune_keyframes(&label, &map.registry);
    let pruned_set: BTreeSet<u64> = pruned.iter().copied().collect();
    let mut fallback: Vec<u64> =
        map.keyframes.iter().map(|k| k.index).filter(|i| !pruned_set.contains(i)).collect();
    fallback.reverse();

    for (sweep, is_fallback) in [(&pruned, false), (&fallback, true)] {
        for &kf_index in sweep.iter() {
            let Some(keyframe) = map.keyframe(kf_index) else { continue };
            let rendered = render::render(map, &keyframe.pose, &intrinsics);
            let records = provider
                .fetch_targeted(kf_index, &rendered.rgb, &label)
                .map_err(QueryError::Provider)?;

            // Highest-confidence record with a nonempty mask wins.
            let record = records
                .iter()
                .filter(|r| r.label == label && r.mask.count_true() > 0)
                .max_by(|a, b| a.confidence.total_cmp(&b.confidence));
            let Some(record) = record else { continue };

            // Back-project the masked pixels through the rendered depth.
            let mut points: Vec<Vector3<f64>> = Vec::new();
            for (x, y) in record.mask.true_pixels() {
                if x >= rendered.depth.width || y >= rendered.depth.height {
                    continue;
                }
                if rendered.silhouette.get(x, y) < config.min_silhouette {
                    continue;
                }
                let depth = rendered.depth.get(x, y);
                if depth <= 0.0 {
                    continue;
                }
                if let Ok(p) = back_project(x as f64, y as f64, depth, &keyframe.pose, &intrinsics)
                {
                    points.push(p);
                }
            }
            if points.is_empty() {
                continue;
            }

            let kept = trim_outliers(&points, config.outlier_low, config.outlier_high);
            let Some(seed_box) = Aabb::from_points(kept.iter()) else { continue };

            // IDs whose splat centers fall inside the pixel-derived box.
            let mut object_ids: BTreeSet<u64> = BTreeSet::new();
            for splat in &map.splats {
                if let Some(id) = splat.object_id {
                    if seed_box.contains(&splat.center) {
                        object_ids.insert(id);
                    }
                }
            }
            if object_ids.is_empty() {
                continue;
            }

            // Expand to every splat carrying those IDs, then grow the box to
            // cover their 1-sigma support together with the seed points.
            let mut splat_indices: Vec<usize> = Vec::new();
            let mut bbox = seed_box;
            for (idx, splat) in map.splats.iter().enumerate() {
                let Some(id) = splat.object_id else { continue };
                if !object_ids.contains(&id) {
                    continue;
                }
                splat_indices.push(idx);
                let sigma = splat.sigma_extent();
                bbox = bbox.union(&Aabb::new(splat.center - sigma, splat.center + sigma));
            }

            return Ok(QueryResult {
                matched_label: label,
                score,
                object_ids,
                splat_indices,
                goal_point: bbox.center(),
                bbox_3d: bbox,
                keyframe: kf_index,
                used_fallback: is_fallback,
            });
        }
    }

    Err(QueryError::NotFound { label, score })
}

/// Keeps points inside the per-axis percentile window.
fn trim_outliers(points: &[Vector3<f64>], low: f64, high: f64) -> Vec<Vector3<f64>> {
    if points.len() < 3 {
        return points.to_vec();
    }
    let mut lo = Vector3::zeros();
    let mut hi = Vector3::zeros();
    let mut axis_values: Vec<f64> = Vec::with_capacity(points.len());
    for axis in 0..3 {
        axis_values.clear();
        axis_values.extend(points.iter().map(|p| p[axis]));
        axis_values.sort_by(f64::total_cmp);
        lo[axis] = percentile(&axis_values, low);
        hi[axis] = percentile(&axis_values, high);
    }
    let kept: Vec<Vector3<f64>> = points
        .iter()
        .filter(|p| (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a]))
        .copied()
        .collect();
    if kept.is_empty() {
        points.to_vec()
    } else {
        kept
    }
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let idx = math::round(p * (sorted.len() - 1) as f64) as usize;
    sorted[idx.min(sorted.len() - 1)]
}
