//! Reconstruction orchestration: track every frame, densify and refine at
//! keyframes, run the semantic pass, and hand back the finished map.

use alloc::vec::Vec;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::frame::{Frame, FrameError};
use crate::image::BoolMask;
use crate::map::{MapError, SplatMap};
use crate::mapper::{self, DensifyThresholds, MapperConfig, MapperError};
use crate::pose::Pose;
use crate::semantics::{
    assign_object_ids, EmbeddingTable, SegmentationProvider, SemanticsConfig, SemanticsError,
};
use crate::tracker::{self, TrackError, TrackerConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("dataset has no frames")]
    EmptyDataset,
    #[error("first frame has no valid depth; cannot bootstrap the map")]
    FirstFrameNoDepth,
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("frame {frame}: {source}")]
    Track { frame: u64, source: TrackError },
    #[error(transparent)]
    Mapper(#[from] MapperError),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
    #[error(transparent)]
    Map(#[from] MapError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub tracker: TrackerConfig,
    pub mapper: MapperConfig,
    pub semantics: SemanticsConfig,
    pub thresholds: DensifyThresholds,
    /// Every Nth frame becomes a keyframe (frame 0 always is).
    pub keyframe_interval: usize,
    /// Pixel subsampling for densification.
    pub densify_stride: usize,
    /// Seed for the refinement-window selection.
    pub seed: u64,
    /// Retry a failed track from the previous pose before giving up.
    pub retry_with_last_pose: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tracker: TrackerConfig::default(),
            mapper: MapperConfig::default(),
            semantics: SemanticsConfig::default(),
            thresholds: DensifyThresholds::default(),
            keyframe_interval: 5,
            densify_stride: 2,
            seed: 42,
            retry_with_last_pose: true,
        }
    }
}

/// Per-frame progress data, printable by the caller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameReport {
    pub index: u64,
    pub tracking_loss: f64,
    pub is_keyframe: bool,
    pub new_splats: usize,
    pub splat_count: usize,
    pub object_count: usize,
    /// The provider failed for this keyframe; the map is unaffected but no
    /// semantic pass ran.
    pub semantic_failure: bool,
}

/// Runs the full reconstruction over `frames` (poses are written back).
/// Frame 0 seeds the map with its dataset pose (identity if absent); later
/// frames are tracked. Keyframes densify, refine over a window, and run the
/// semantic pass through `provider`.
pub fn reconstruct(
    frames: &mut [Frame],
    provider: &dyn SegmentationProvider,
    embeddings: &EmbeddingTable,
    config: &PipelineConfig,
) -> Result<(SplatMap, Vec<FrameReport>), PipelineError> {
    if frames.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    frames[0].validate()?;
    if frames[0].depth.values().iter().all(|&d| d <= 0.0) {
        return Err(PipelineError::FirstFrameNoDepth);
    }

    let mut map = SplatMap::new();
    map.intrinsics = Some(frames[0].intrinsics);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut reports = Vec::with_capacity(frames.len());
    let mut history: Vec<Pose> = Vec::new();

    let bootstrap_pose = frames[0].pose.unwrap_or_default();
    frames[0].pose = Some(bootstrap_pose);
    frames[0].is_keyframe = true;
    map.push_keyframe(frames[0].index, bootstrap_pose)?;
    let outcome = keyframe_pass(&mut map, frames, 0, provider, embeddings, config, &mut rng)?;
    history.push(bootstrap_pose);
    reports.push(FrameReport {
        index: frames[0].index,
        tracking_loss: 0.0,
        is_keyframe: true,
        new_splats: outcome.new_splats,
        splat_count: map.len(),
        object_count: map.registry.len(),
        semantic_failure: outcome.semantic_failure,
    });

    for i in 1..frames.len() {
        frames[i].validate()?;
        let guess = tracker::initial_pose_guess(&history, &config.tracker);
        let result = match tracker::track_frame(&map, &frames[i], &guess, &config.tracker) {
            Ok(r) => r,
            Err(first_err) => {
                let last = *history.last().expect("nonempty history");
                if config.retry_with_last_pose && last != guess {
                    tracker::track_frame(&map, &frames[i], &last, &config.tracker).map_err(
                        |source| PipelineError::Track { frame: frames[i].index, source },
                    )?
                } else {
                    return Err(PipelineError::Track {
                        frame: frames[i].index,
                        source: first_err,
                    });
                }
            }
        };
        frames[i].pose = Some(result.pose);
        history.push(result.pose);

        let is_keyframe = i % config.keyframe_interval == 0;
        let mut new_splats = 0;
        let mut semantic_failure = false;
        if is_keyframe {
            frames[i].is_keyframe = true;
            map.push_keyframe(frames[i].index, result.pose)?;
            let outcome =
                keyframe_pass(&mut map, frames, i, provider, embeddings, config, &mut rng)?;
            new_splats = outcome.new_splats;
            semantic_failure = outcome.semantic_failure;
        }
        reports.push(FrameReport {
            index: frames[i].index,
            tracking_loss: result.final_loss,
            is_keyframe,
            new_splats,
            splat_count: map.len(),
            object_count: map.registry.len(),
            semantic_failure,
        });
    }

    map.validate()?;
    Ok((map, reports))
}

/// Densify from the frame's mask, refine over the keyframe window, and run
/// the semantic pass. Returns the number of new splats.
fn keyframe_pass(
    map: &mut SplatMap,
    frames: &mut [Frame],
    frame_pos: usize,
    provider: &dyn SegmentationProvider,
    embeddings: &EmbeddingTable,
    config: &PipelineConfig,
    rng: &mut ChaCha8Rng,
) -> Result<KeyframeOutcome, PipelineError> {
    let mask: BoolMask = if map.is_empty() {
        let frame = &frames[frame_pos];
        let mut all_valid = BoolMask::filled(frame.depth.width, frame.depth.height, false);
        for y in 0..frame.depth.height {
            for x in 0..frame.depth.width {
                if frame.valid_depth(x, y).is_some() {
                    all_valid.set(x, y, true);
                }
            }
        }
        all_valid
    } else {
        mapper::densification_mask(map, &frames[frame_pos], &config.thresholds)?
    };
    let added = mapper::densify(map, &frames[frame_pos], &mask, config.densify_stride)?;

    let window = select_window(map, config, rng);
    let window_frames: Vec<&Frame> = frames
        .iter()
        .filter(|f| window.contains(&f.index))
        .collect();
    mapper::refine_map(map, &window_frames, &config.mapper)?;

    // A provider failure fails the frame's semantic pass, not the SLAM pass.
    match provider.fetch(&frames[frame_pos]) {
        Ok(records) if !records.is_empty() => {
            assign_object_ids(map, &frames[frame_pos], &records, embeddings, &config.semantics)?;
            Ok(KeyframeOutcome { new_splats: added, semantic_failure: false })
        }
        Ok(_) => Ok(KeyframeOutcome { new_splats: added, semantic_failure: false }),
        Err(_) => Ok(KeyframeOutcome { new_splats: added, semantic_failure: true }),
    }
}

struct KeyframeOutcome {
    new_splats: usize,
    semantic_failure: bool,
}

/// Last `window_recent` keyframes plus `window_random` random earlier ones.
fn select_window(map: &SplatMap, config: &PipelineConfig, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let indices: Vec<u64> = map.keyframes.iter().map(|k| k.index).collect();
    let recent_start = indices.len().saturating_sub(config.mapper.window_recent);
    let mut window: Vec<u64> = indices[recent_start..].to_vec();
    let mut earlier: Vec<u64> = indices[..recent_start].to_vec();
    for _ in 0..config.mapper.window_random.min(earlier.len()) {
        let pick = rng.gen_range(0..earlier.len());
        window.push(earlier.swap_remove(pick));
    }
    window.sort_unstable();
    window
}
