//! Marked parking-slot regions and their pixel rasterization.
//!
//! Vertices are pixel coordinates as clicked by the operator. A vertex at
//! `(x, y)` stands for the center of that pixel, the same sampling point used
//! for every pixel under test, so membership is decided with exact integer
//! arithmetic: a square marked from `(0,0)` to `(9,9)` covers 100 pixels.

use std::fmt;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeTuple, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest rasterized region (in pixels) a slot may cover.
pub const MIN_REGION_PIXELS: usize = 16;

/// Share of the smaller region two slots may have in common, as `numerator / denominator`.
pub const MAX_OVERLAP_NUMERATOR: usize = 5;
pub const MAX_OVERLAP_DENOMINATOR: usize = 100;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GeometryError {
    #[error("malformed slot-map document: {0}")]
    MalformedDocument(String),
    #[error("invariant violation: {0}")]
    InvariantViolation(#[from] Violation),
    #[error("region covers {pixels} pixels, minimum is {MIN_REGION_PIXELS}")]
    EmptyRegion { pixels: usize },
}

/// A broken slot-map invariant.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Violation {
    #[error("image dimensions must be positive, got {width}x{height}")]
    ZeroDimensions { width: i64, height: i64 },
    #[error("slot ids must be positive, got {0}")]
    NonPositiveId(i64),
    #[error("slot {slot_id} has {count} points, expected 4")]
    WrongPointCount { slot_id: u32, count: usize },
    #[error("slot id {0} appears more than once")]
    DuplicateId(u32),
    #[error("slot ids must run 1..={expected_max} without gaps, found {found}")]
    NonContiguousIds { expected_max: u32, found: u32 },
    #[error("slot {slot_id} point ({x},{y}) lies outside the {width}x{height} image")]
    PointOutOfBounds {
        slot_id: u32,
        x: i64,
        y: i64,
        width: u32,
        height: u32,
    },
    #[error("slot {slot_id} outline crosses itself")]
    SelfIntersecting { slot_id: u32 },
    #[error("slot {slot_id} covers {pixels} pixels, minimum is {MIN_REGION_PIXELS}")]
    RegionTooSmall { slot_id: u32, pixels: usize },
    #[error("slots {first} and {second} share {shared} pixels, more than 5% of the smaller region ({smaller})")]
    Overlap {
        first: u32,
        second: u32,
        shared: usize,
        smaller: usize,
    },
}

impl Violation {
    /// The slot the violation is attributed to, if any. For overlaps this is
    /// the later of the two slots.
    pub fn slot_id(&self) -> Option<u32> {
        match *self {
            Violation::ZeroDimensions { .. } | Violation::NonPositiveId(_) => None,
            Violation::WrongPointCount { slot_id, .. }
            | Violation::PointOutOfBounds { slot_id, .. }
            | Violation::SelfIntersecting { slot_id }
            | Violation::RegionTooSmall { slot_id, .. } => Some(slot_id),
            Violation::DuplicateId(id) => Some(id),
            Violation::NonContiguousIds { found, .. } => Some(found),
            Violation::Overlap { second, .. } => Some(second),
        }
    }
}

/// A pixel position; serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Point2 {
    pub x: u32,
    pub y: u32,
}

impl Point2 {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }
}

impl Serialize for Point2 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut tup = serializer.serialize_tuple(2)?;
        tup.serialize_element(&self.x)?;
        tup.serialize_element(&self.y)?;
        tup.end()
    }
}

impl<'de> Deserialize<'de> for Point2 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct PointVisitor;
        impl<'de> Visitor<'de> for PointVisitor {
            type Value = Point2;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an [x, y] pair of non-negative integers")
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Point2, A::Error> {
                let x = seq
                    .next_element()?
                    .ok_or_else(|| de::Error::invalid_length(0, &self))?;
                let y = seq
                    .next_element()?
                    .ok_or_else(|| de::Error::invalid_length(1, &self))?;
                if seq.next_element::<de::IgnoredAny>()?.is_some() {
                    return Err(de::Error::invalid_length(3, &self));
                }
                Ok(Point2 { x, y })
            }
        }
        deserializer.deserialize_tuple(2, PointVisitor)
    }
}

/// One marked parking slot: four vertices in the order they were clicked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SlotRegion {
    pub slot_id: u32,
    pub points: [Point2; 4],
}

impl SlotRegion {
    pub fn new(slot_id: u32, points: [Point2; 4]) -> Self {
        Self { slot_id, points }
    }

    /// Builds a region from an arbitrary vertex list, rejecting anything but 4 points.
    pub fn from_points(slot_id: u32, points: &[Point2]) -> Result<Self, Violation> {
        let points: [Point2; 4] = points.try_into().map_err(|_| Violation::WrongPointCount {
            slot_id,
            count: points.len(),
        })?;
        Ok(Self { slot_id, points })
    }

    /// The four outline segments, closing back to the first vertex.
    pub fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        (0..4).map(move |i| (self.points[i], self.points[(i + 1) % 4]))
    }

    /// True when no two non-adjacent edges touch or cross.
    pub fn is_simple(&self) -> bool {
        let p = &self.points;
        !segments_touch(p[0], p[1], p[2], p[3]) && !segments_touch(p[1], p[2], p[3], p[0])
    }
}

/// Marked slots for one lot camera.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SlotMap {
    pub lot_id: String,
    pub image_width: u32,
    pub image_height: u32,
    pub slots: Vec<SlotRegion>,
}

impl SlotMap {
    /// Validates every invariant and returns the map with slots sorted by id.
    pub fn new(
        lot_id: impl Into<String>,
        image_width: u32,
        image_height: u32,
        mut slots: Vec<SlotRegion>,
    ) -> Result<Self, Violation> {
        if image_width == 0 || image_height == 0 {
            return Err(Violation::ZeroDimensions {
                width: image_width.into(),
                height: image_height.into(),
            });
        }
        for slot in &slots {
            if slot.slot_id == 0 {
                return Err(Violation::NonPositiveId(0));
            }
            for p in &slot.points {
                if p.x >= image_width || p.y >= image_height {
                    return Err(Violation::PointOutOfBounds {
                        slot_id: slot.slot_id,
                        x: p.x.into(),
                        y: p.y.into(),
                        width: image_width,
                        height: image_height,
                    });
                }
            }
            if !slot.is_simple() {
                return Err(Violation::SelfIntersecting {
                    slot_id: slot.slot_id,
                });
            }
        }
        slots.sort_by_key(|s| s.slot_id);
        for pair in slots.windows(2) {
            if pair[0].slot_id == pair[1].slot_id {
                return Err(Violation::DuplicateId(pair[0].slot_id));
            }
        }
        let expected_max = slots.len() as u32;
        if let Some(bad) = slots.iter().find(|s| s.slot_id > expected_max) {
            return Err(Violation::NonContiguousIds {
                expected_max,
                found: bad.slot_id,
            });
        }

        let mut sets = Vec::with_capacity(slots.len());
        for slot in &slots {
            let set = rasterize_unchecked(slot, image_width, image_height);
            if set.len() < MIN_REGION_PIXELS {
                return Err(Violation::RegionTooSmall {
                    slot_id: slot.slot_id,
                    pixels: set.len(),
                });
            }
            sets.push(set);
        }
        for i in 0..sets.len() {
            for j in (i + 1)..sets.len() {
                let shared = sets[i].intersection_count(&sets[j]);
                let smaller = sets[i].len().min(sets[j].len());
                if shared * MAX_OVERLAP_DENOMINATOR > smaller * MAX_OVERLAP_NUMERATOR {
                    return Err(Violation::Overlap {
                        first: slots[i].slot_id,
                        second: slots[j].slot_id,
                        shared,
                        smaller,
                    });
                }
            }
        }

        Ok(Self {
            lot_id: lot_id.into(),
            image_width,
            image_height,
            slots,
        })
    }

    pub fn total(&self) -> usize {
        self.slots.len()
    }

    pub fn slot(&self, slot_id: u32) -> Option<&SlotRegion> {
        self.slots.iter().find(|s| s.slot_id == slot_id)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSlotMap {
    lot_id: String,
    image_width: i64,
    image_height: i64,
    slots: Vec<RawSlot>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSlot {
    slot_id: i64,
    points: Vec<(i64, i64)>,
}

/// Parses and validates a slot-map JSON document. Unknown keys are rejected.
pub fn parse_slot_map(text: &str) -> Result<SlotMap, GeometryError> {
    let raw: RawSlotMap =
        serde_json::from_str(text).map_err(|e| GeometryError::MalformedDocument(e.to_string()))?;
    let (width, height) = match (u32::try_from(raw.image_width), u32::try_from(raw.image_height)) {
        (Ok(w), Ok(h)) if w > 0 && h > 0 => (w, h),
        _ => {
            return Err(Violation::ZeroDimensions {
                width: raw.image_width,
                height: raw.image_height,
            }
            .into())
        }
    };
    let mut slots = Vec::with_capacity(raw.slots.len());
    for slot in raw.slots {
        let slot_id = u32::try_from(slot.slot_id)
            .ok()
            .filter(|&id| id > 0)
            .ok_or(Violation::NonPositiveId(slot.slot_id))?;
        let mut points = Vec::with_capacity(slot.points.len());
        for (x, y) in slot.points.iter().copied() {
            match (u32::try_from(x), u32::try_from(y)) {
                (Ok(px), Ok(py)) => points.push(Point2::new(px, py)),
                _ => {
                    return Err(Violation::PointOutOfBounds {
                        slot_id,
                        x,
                        y,
                        width,
                        height,
                    }
                    .into())
                }
            }
        }
        slots.push(SlotRegion::from_points(slot_id, &points)?);
    }
    Ok(SlotMap::new(raw.lot_id, width, height, slots)?)
}

/// Canonical compact JSON: fixed key order, slots sorted by id, no whitespace.
pub fn serialize_slot_map(map: &SlotMap) -> String {
    serde_json::to_string(map).expect("slot map serialization is infallible")
}

fn cross(o: Point2, a: Point2, b: Point2) -> i64 {
    let (ox, oy) = (i64::from(o.x), i64::from(o.y));
    (i64::from(a.x) - ox) * (i64::from(b.y) - oy) - (i64::from(a.y) - oy) * (i64::from(b.x) - ox)
}

fn within_box(p: Point2, a: Point2, b: Point2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn on_segment(p: Point2, a: Point2, b: Point2) -> bool {
    cross(a, b, p) == 0 && within_box(p, a, b)
}

/// Closed-segment intersection test (shared endpoints and collinear overlap count).
fn segments_touch(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let d1 = cross(c, d, a).signum();
    let d2 = cross(c, d, b).signum();
    let d3 = cross(a, b, c).signum();
    let d4 = cross(a, b, d).signum();
    if d1 * d2 < 0 && d3 * d4 < 0 {
        return true;
    }
    (d1 == 0 && within_box(a, c, d))
        || (d2 == 0 && within_box(b, c, d))
        || (d3 == 0 && within_box(c, a, b))
        || (d4 == 0 && within_box(d, a, b))
}

/// Crossing-number membership of the pixel `p`; pixels on the outline count as inside.
pub fn point_in_quad(p: Point2, q: &SlotRegion) -> bool {
    let mut inside = false;
    for (a, b) in q.edges() {
        if on_segment(p, a, b) {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            // Sign of the crossing's x offset relative to p, scaled by (b.y - a.y).
            let c = cross(a, b, p);
            if (b.y > a.y && c > 0) || (b.y < a.y && c < 0) {
                inside = !inside;
            }
        }
    }
    inside
}

/// A set of pixels stored as sorted row-major indices into a `width x height` image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelSet {
    width: u32,
    height: u32,
    indices: Vec<u32>,
}

impl PixelSet {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Row-major indices, ascending.
    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x < self.width
            && p.y < self.height
            && self.indices.binary_search(&(p.y * self.width + p.x)).is_ok()
    }

    pub fn points(&self) -> impl Iterator<Item = Point2> + '_ {
        self.indices
            .iter()
            .map(move |&i| Point2::new(i % self.width, i / self.width))
    }

    /// Number of pixels in both sets.
    pub fn intersection_count(&self, other: &PixelSet) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        let (a, b) = (&self.indices, &other.indices);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

fn rasterize_unchecked(q: &SlotRegion, width: u32, height: u32) -> PixelSet {
    let mut indices = Vec::new();
    if width > 0 && height > 0 {
        let xs = q.points.iter().map(|p| p.x);
        let ys = q.points.iter().map(|p| p.y);
        let (x0, x1) = (xs.clone().min().unwrap(), xs.max().unwrap().min(width - 1));
        let (y0, y1) = (ys.clone().min().unwrap(), ys.max().unwrap().min(height - 1));
        if x0 <= x1 && y0 <= y1 {
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if point_in_quad(Point2::new(x, y), q) {
                        indices.push(y * width + x);
                    }
                }
            }
        }
    }
    PixelSet {
        width,
        height,
        indices,
    }
}

/// All in-bounds pixels covered by the quad.
pub fn rasterize_region(q: &SlotRegion, width: u32, height: u32) -> Result<PixelSet, GeometryError> {
    let set = rasterize_unchecked(q, width, height);
    if set.len() < MIN_REGION_PIXELS {
        return Err(GeometryError::EmptyRegion { pixels: set.len() });
    }
    Ok(set)
}
