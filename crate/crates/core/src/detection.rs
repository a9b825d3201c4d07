//! Slot occupancy from intensity differences against an empty-lot reference.
//!
//! A slot pixel counts as changed when its absolute difference from the
//! reference exceeds `pixel_delta_threshold`. A slot is occupied when the
//! changed share of its pixels reaches `changed_fraction_threshold`, with a
//! symmetric hysteresis band of `hysteresis_margin` once a state is known.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::OccupancyEvent;
use crate::geometry::{rasterize_region, GeometryError, PixelSet, SlotMap};
use crate::video::{read_pgm_file, Frame, FrameSource, VideoError};

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("frame is {found:?}, expected {expected:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        found: (u32, u32),
    },
    #[error("invalid detection config: {0}")]
    InvalidConfig(String),
    #[error("no frames to process")]
    NoFrames,
    #[error("slot {0} has an empty pixel set")]
    EmptyRegion(u32),
    #[error("event replay: {0}")]
    Replay(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Occupancy {
    Occupied,
    Vacant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub pixel_delta_threshold: u8,
    pub changed_fraction_threshold: f64,
    pub hysteresis_margin: f64,
    pub settle_frames: u32,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            pixel_delta_threshold: 25,
            changed_fraction_threshold: 0.30,
            hysteresis_margin: 0.05,
            settle_frames: 2,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<(), DetectionError> {
        let bad = |msg: String| Err(DetectionError::InvalidConfig(msg));
        if self.pixel_delta_threshold == 0 || self.pixel_delta_threshold == 255 {
            return bad(format!(
                "pixel_delta_threshold must lie in (0, 255), got {}",
                self.pixel_delta_threshold
            ));
        }
        let tf = self.changed_fraction_threshold;
        if !(tf > 0.0 && tf < 1.0) {
            return bad(format!("changed_fraction_threshold must lie in (0, 1), got {tf}"));
        }
        let h = self.hysteresis_margin;
        if !(h >= 0.0 && h < tf) {
            return bad(format!(
                "hysteresis_margin must lie in [0, changed_fraction_threshold), got {h}"
            ));
        }
        Ok(())
    }

    /// Parses a config document; absent keys take their defaults.
    pub fn from_json(text: &str) -> Result<Self, DetectionError> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| DetectionError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionStats {
    pub slot_id: u32,
    pub pixel_count: usize,
    pub changed_pixels: usize,
    pub changed_fraction: f64,
    pub mean_intensity: f64,
}

/// Counts region pixels whose absolute difference from the reference exceeds `threshold`.
pub fn compute_region_stats(
    frame: &Frame,
    reference: &Frame,
    slot_id: u32,
    pixels: &PixelSet,
    threshold: u8,
) -> Result<RegionStats, DetectionError> {
    if frame.dimensions() != reference.dimensions() {
        return Err(DetectionError::DimensionMismatch {
            expected: reference.dimensions(),
            found: frame.dimensions(),
        });
    }
    if (pixels.width(), pixels.height()) != frame.dimensions() {
        return Err(DetectionError::DimensionMismatch {
            expected: (pixels.width(), pixels.height()),
            found: frame.dimensions(),
        });
    }
    if pixels.is_empty() {
        return Err(DetectionError::EmptyRegion(slot_id));
    }
    let (cur, base) = (frame.intensities(), reference.intensities());
    let mut changed = 0usize;
    let mut sum = 0u64;
    for &i in pixels.indices() {
        let v = cur[i as usize];
        sum += u64::from(v);
        if v.abs_diff(base[i as usize]) > threshold {
            changed += 1;
        }
    }
    let n = pixels.len();
    Ok(RegionStats {
        slot_id,
        pixel_count: n,
        changed_pixels: changed,
        changed_fraction: changed as f64 / n as f64,
        mean_intensity: sum as f64 / n as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotState {
    pub slot_id: u32,
    pub state: Occupancy,
    /// Frame at which the slot last changed state.
    pub since_frame: usize,
}

/// Applies the threshold (no previous state) or the hysteresis rule.
pub fn classify_slot(
    stats: &RegionStats,
    prev: Option<&SlotState>,
    cfg: &DetectionConfig,
    frame_index: usize,
) -> SlotState {
    let f = stats.changed_fraction;
    let tf = cfg.changed_fraction_threshold;
    let h = cfg.hysteresis_margin;
    let fresh = |state| SlotState {
        slot_id: stats.slot_id,
        state,
        since_frame: frame_index,
    };
    match prev {
        None if f >= tf => fresh(Occupancy::Occupied),
        None => fresh(Occupancy::Vacant),
        Some(p) => match p.state {
            Occupancy::Occupied if f < tf - h => fresh(Occupancy::Vacant),
            Occupancy::Vacant if f >= tf + h => fresh(Occupancy::Occupied),
            _ => SlotState {
                slot_id: stats.slot_id,
                ..*p
            },
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LotStatus {
    pub frame_index: usize,
    pub states: Vec<SlotState>,
    pub available: usize,
    pub total: usize,
}

impl LotStatus {
    pub fn from_states(frame_index: usize, states: Vec<SlotState>) -> Self {
        let available = states.iter().filter(|s| s.state == Occupancy::Vacant).count();
        let total = states.len();
        Self {
            frame_index,
            states,
            available,
            total,
        }
    }

    pub fn occupied(&self) -> usize {
        self.total - self.available
    }

    pub fn state_of(&self, slot_id: u32) -> Option<Occupancy> {
        self.states
            .iter()
            .find(|s| s.slot_id == slot_id)
            .map(|s| s.state)
    }
}

/// Per-slot pixel sets rasterized once for a given image size.
#[derive(Debug, Clone)]
pub struct SlotMasks {
    width: u32,
    height: u32,
    masks: Vec<(u32, PixelSet)>,
}

impl SlotMasks {
    pub fn new(map: &SlotMap) -> Result<Self, DetectionError> {
        let masks = map
            .slots
            .iter()
            .map(|s| Ok((s.slot_id, rasterize_region(s, map.image_width, map.image_height)?)))
            .collect::<Result<Vec<_>, GeometryError>>()?;
        Ok(Self {
            width: map.image_width,
            height: map.image_height,
            masks,
        })
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &PixelSet)> {
        self.masks.iter().map(|(id, set)| (*id, set))
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

/// Classifies every slot in one frame.
pub fn evaluate_frame(
    frame: &Frame,
    masks: &SlotMasks,
    reference: &Frame,
    prev: Option<&LotStatus>,
    cfg: &DetectionConfig,
) -> Result<LotStatus, DetectionError> {
    if frame.dimensions() != masks.dimensions() {
        return Err(DetectionError::DimensionMismatch {
            expected: masks.dimensions(),
            found: frame.dimensions(),
        });
    }
    let mut states = Vec::with_capacity(masks.len());
    for (slot_id, pixels) in masks.iter() {
        let stats = compute_region_stats(frame, reference, slot_id, pixels, cfg.pixel_delta_threshold)?;
        let before = prev.and_then(|p| p.states.iter().find(|s| s.slot_id == slot_id));
        states.push(classify_slot(&stats, before, cfg, frame.index()));
    }
    Ok(LotStatus::from_states(frame.index(), states))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub lot_id: String,
    pub timeline: Vec<LotStatus>,
    #[serde(rename = "final")]
    pub final_status: LotStatus,
    pub events: Vec<OccupancyEvent>,
}

impl DetectionReport {
    /// Rebuilds the per-frame timeline from a delta log covering `frame_count` frames.
    pub fn from_events(
        lot_id: impl Into<String>,
        events: &[OccupancyEvent],
        total: usize,
        frame_count: usize,
    ) -> Result<Self, DetectionError> {
        if frame_count == 0 {
            return Err(DetectionError::NoFrames);
        }
        let mut current: Vec<Option<SlotState>> = vec![None; total];
        let mut timeline = Vec::with_capacity(frame_count);
        let mut pending = events.iter().peekable();
        for frame in 0..frame_count {
            while let Some(ev) = pending.next_if(|e| e.frame == frame) {
                let slot = current
                    .get_mut((ev.slot_id as usize).wrapping_sub(1))
                    .ok_or_else(|| DetectionError::Replay(format!("unknown slot {}", ev.slot_id)))?;
                *slot = Some(SlotState {
                    slot_id: ev.slot_id,
                    state: ev.state,
                    since_frame: frame,
                });
            }
            let states = current
                .iter()
                .enumerate()
                .map(|(i, s)| s.ok_or_else(|| DetectionError::Replay(format!("slot {} has no state at frame {frame}", i + 1))))
                .collect::<Result<Vec<_>, _>>()?;
            timeline.push(LotStatus::from_states(frame, states));
        }
        if let Some(ev) = pending.next() {
            return Err(DetectionError::Replay(format!(
                "event for frame {} is out of order or beyond frame {}",
                ev.frame,
                frame_count - 1
            )));
        }
        let final_status = timeline.last().cloned().expect("frame_count > 0");
        Ok(Self {
            lot_id: lot_id.into(),
            timeline,
            final_status,
            events: events.to_vec(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serialization is infallible")
    }
}

/// Runs detection over a whole source, calling `on_event` for each state change as it happens.
pub fn run_detection_with<S, F>(
    source: &S,
    map: &SlotMap,
    reference: &Frame,
    cfg: &DetectionConfig,
    mut on_event: F,
) -> Result<DetectionReport, DetectionError>
where
    S: FrameSource + ?Sized,
    F: FnMut(&OccupancyEvent, &Frame, &LotStatus),
{
    cfg.validate()?;
    if source.is_empty() {
        return Err(DetectionError::NoFrames);
    }
    let map_dims = (map.image_width, map.image_height);
    for dims in [source.dimensions(), reference.dimensions()] {
        if dims != map_dims {
            return Err(DetectionError::DimensionMismatch {
                expected: map_dims,
                found: dims,
            });
        }
    }
    let masks = SlotMasks::new(map)?;
    let mut timeline: Vec<LotStatus> = Vec::with_capacity(source.len());
    let mut events = Vec::new();
    for i in 0..source.len() {
        let frame = source.frame(i)?;
        let prev = timeline.last();
        let status = evaluate_frame(&frame, &masks, reference, prev, cfg)?;
        for s in &status.states {
            let changed = prev.is_none_or(|p| p.state_of(s.slot_id) != Some(s.state));
            if changed {
                let ev = OccupancyEvent {
                    frame: i,
                    slot_id: s.slot_id,
                    state: s.state,
                    available: status.available,
                    total: status.total,
                };
                on_event(&ev, &frame, &status);
                events.push(ev);
            }
        }
        timeline.push(status);
    }
    let final_status = timeline.last().cloned().expect("source is non-empty");
    Ok(DetectionReport {
        lot_id: map.lot_id.clone(),
        timeline,
        final_status,
        events,
    })
}

pub fn run_detection<S: FrameSource + ?Sized>(
    source: &S,
    map: &SlotMap,
    reference: &Frame,
    cfg: &DetectionConfig,
) -> Result<DetectionReport, DetectionError> {
    run_detection_with(source, map, reference, cfg, |_, _, _| {})
}

/// The explicit reference frame when given, else frame 0 of the source.
/// Frame 0 is only a valid reference when the recording starts on an empty lot.
pub fn select_reference<S: FrameSource + ?Sized>(
    source: &S,
    explicit: Option<&Path>,
) -> Result<Frame, DetectionError> {
    match explicit {
        Some(path) => {
            let frame = read_pgm_file(path)?;
            if !source.is_empty() && frame.dimensions() != source.dimensions() {
                return Err(DetectionError::DimensionMismatch {
                    expected: source.dimensions(),
                    found: frame.dimensions(),
                });
            }
            Ok(frame)
        }
        None if source.is_empty() => Err(DetectionError::NoFrames),
        None => Ok(source.frame(0)?),
    }
}
