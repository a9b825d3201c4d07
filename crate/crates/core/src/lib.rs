//! Parking occupancy from fixed-camera lot footage.
//!
//! Slots are marked by hand as quadrilaterals ([`geometry`]). Each frame of a
//! lot recording ([`video`]) is compared against an empty-lot reference and
//! every slot is classified occupied or vacant ([`detection`]); state changes
//! are logged as [`events`]. The [`simulator`] renders scripted synthetic lots
//! with ground truth for testing. Users, class schedules, blocks and the
//! video history live in the [`store`], and [`suggestion`] picks a block for a
//! user from their schedule and the current availability.

pub mod catalog;
pub mod detection;
pub mod events;
pub mod geometry;
pub mod password;
pub mod pnm;
pub mod simulator;
pub mod store;
pub mod suggestion;
pub mod video;

pub use catalog::{Block, ClassEntry, ClockTime, Day, SeedData};
pub use detection::{
    classify_slot, compute_region_stats, evaluate_frame, run_detection, run_detection_with, select_reference,
    DetectionConfig, DetectionError, DetectionReport, LotStatus, Occupancy, RegionStats, SlotMasks, SlotState,
};
pub use events::{EventWriter, OccupancyEvent};
pub use geometry::{
    parse_slot_map, point_in_quad, rasterize_region, serialize_slot_map, GeometryError, PixelSet, Point2, SlotMap,
    SlotRegion, Violation,
};
pub use simulator::{generate, score, GroundTruth, LotScript, Scene, ScoreSummary};
pub use store::{Registry, StoreError, VideoRecord};
pub use suggestion::{suggest, Reason, Suggestion};
pub use video::{open_sequence, write_annotated, Frame, FrameSequence, FrameSource, VideoError};
