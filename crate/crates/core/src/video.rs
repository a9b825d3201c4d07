//! Frame sequences on disk and annotated output frames.
//!
//! A lot "video" is a directory of binary PGM files read in byte-wise
//! lexicographic name order.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::detection::{Occupancy, SlotState};
use crate::geometry::{Point2, SlotMap};
use crate::pnm::{self, PnmError};

pub const GREEN: [u8; 3] = [0, 255, 0];
pub const RED: [u8; 3] = [255, 0, 0];

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("no .pgm frames in {0}")]
    NoFrames(PathBuf),
    #[error("{path}: frame is {found:?}, expected {expected:?}")]
    DimensionMismatch {
        path: PathBuf,
        expected: (u32, u32),
        found: (u32, u32),
    },
    #[error("{path}: {source}")]
    UnreadableFrame {
        path: PathBuf,
        #[source]
        source: PnmError,
    },
    #[error("frame index {index} out of range for a sequence of {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("no occupancy state for slot {0}")]
    StateMismatch(u32),
    #[error("pixel buffer holds {found} bytes, expected {expected}")]
    BufferSize { expected: usize, found: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl VideoError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        VideoError::Io {
            path: path.into(),
            source,
        }
    }
}

/// One grayscale frame, row-major, 0 = black.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: u32,
    height: u32,
    index: usize,
    intensities: Vec<u8>,
}

impl Frame {
    pub fn new(width: u32, height: u32, intensities: Vec<u8>) -> Result<Self, VideoError> {
        let expected = width as usize * height as usize;
        if intensities.len() != expected {
            return Err(VideoError::BufferSize {
                expected,
                found: intensities.len(),
            });
        }
        Ok(Self {
            width,
            height,
            index: 0,
            intensities,
        })
    }

    /// A frame of a single uniform intensity.
    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self {
            width,
            height,
            index: 0,
            intensities: vec![value; width as usize * height as usize],
        }
    }

    pub fn with_index(mut self, index: usize) -> Self {
        self.index = index;
        self
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn intensities(&self) -> &[u8] {
        &self.intensities
    }

    pub fn intensities_mut(&mut self) -> &mut [u8] {
        &mut self.intensities
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.intensities[(y * self.width + x) as usize]
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        pnm::encode_pgm(self.width, self.height, &self.intensities)
    }
}

/// Reads a single PGM file as frame 0.
pub fn read_pgm_file(path: &Path) -> Result<Frame, VideoError> {
    let bytes = fs::read(path).map_err(|e| VideoError::io(path, e))?;
    let (width, height, intensities) =
        pnm::decode_pgm(&bytes).map_err(|source| VideoError::UnreadableFrame {
            path: path.to_owned(),
            source,
        })?;
    Frame::new(width, height, intensities)
}

pub fn write_pgm_file(path: &Path, frame: &Frame) -> Result<(), VideoError> {
    fs::write(path, frame.to_pgm()).map_err(|e| VideoError::io(path, e))
}

/// Anything that yields equally-sized frames by index.
pub trait FrameSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Shared `(width, height)`; meaningless for an empty source.
    fn dimensions(&self) -> (u32, u32);

    fn frame(&self, index: usize) -> Result<Frame, VideoError>;
}

impl FrameSource for [Frame] {
    fn len(&self) -> usize {
        <[Frame]>::len(self)
    }

    fn dimensions(&self) -> (u32, u32) {
        self.first().map_or((0, 0), Frame::dimensions)
    }

    fn frame(&self, index: usize) -> Result<Frame, VideoError> {
        self.get(index)
            .map(|f| f.clone().with_index(index))
            .ok_or(VideoError::IndexOutOfRange {
                index,
                len: <[Frame]>::len(self),
            })
    }
}

impl FrameSource for Vec<Frame> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn dimensions(&self) -> (u32, u32) {
        FrameSource::dimensions(self.as_slice())
    }

    fn frame(&self, index: usize) -> Result<Frame, VideoError> {
        self.as_slice().frame(index)
    }
}

/// A directory of `.pgm` frames sharing one size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameSequence {
    dir: PathBuf,
    names: Vec<String>,
    width: u32,
    height: u32,
}

/// Discovers, orders and header-checks every `.pgm` file in `dir`.
pub fn open_sequence(dir: &Path) -> Result<FrameSequence, VideoError> {
    let entries = fs::read_dir(dir).map_err(|e| VideoError::io(dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| VideoError::io(dir, e))?;
        let path = entry.path();
        if path.extension().is_some_and(|ext| ext == "pgm") && path.is_file() {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                names.push(name.to_owned());
            }
        }
    }
    // String ordering on UTF-8 is byte-wise.
    names.sort();

    let mut dims = None;
    for name in &names {
        let path = dir.join(name);
        let found = read_dimensions(&path)?;
        match dims {
            None => dims = Some(found),
            Some(expected) if expected != found => {
                return Err(VideoError::DimensionMismatch {
                    path,
                    expected,
                    found,
                })
            }
            Some(_) => {}
        }
    }
    let (width, height) = dims.ok_or_else(|| VideoError::NoFrames(dir.to_owned()))?;
    Ok(FrameSequence {
        dir: dir.to_owned(),
        names,
        width,
        height,
    })
}

fn read_dimensions(path: &Path) -> Result<(u32, u32), VideoError> {
    use std::io::Read;
    let mut head = Vec::with_capacity(512);
    fs::File::open(path)
        .and_then(|f| f.take(512).read_to_end(&mut head))
        .map_err(|e| VideoError::io(path, e))?;
    let header = pnm::read_header(&head, "P5").map_err(|source| VideoError::UnreadableFrame {
        path: path.to_owned(),
        source,
    })?;
    Ok((header.width, header.height))
}

impl FrameSequence {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn path(&self, index: usize) -> Option<PathBuf> {
        self.names.get(index).map(|n| self.dir.join(n))
    }
}

impl FrameSource for FrameSequence {
    fn len(&self) -> usize {
        self.names.len()
    }

    fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// Decodes frame `index`; the file must still match the sequence size.
    fn frame(&self, index: usize) -> Result<Frame, VideoError> {
        let path = self.path(index).ok_or(VideoError::IndexOutOfRange {
            index,
            len: self.names.len(),
        })?;
        let frame = read_pgm_file(&path)?;
        if frame.dimensions() != (self.width, self.height) {
            return Err(VideoError::DimensionMismatch {
                path,
                expected: (self.width, self.height),
                found: frame.dimensions(),
            });
        }
        Ok(frame.with_index(index))
    }
}

/// Integer Bresenham segment from `a` to `b`, endpoints included.
pub fn line_pixels(a: Point2, b: Point2) -> Vec<Point2> {
    let (mut x, mut y) = (i64::from(a.x), i64::from(a.y));
    let (x1, y1) = (i64::from(b.x), i64::from(b.y));
    let dx = (x1 - x).abs();
    let dy = -(y1 - y).abs();
    let sx = if x < x1 { 1 } else { -1 };
    let sy = if y < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy + 1) as usize);
    loop {
        out.push(Point2::new(x as u32, y as u32));
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

/// Renders the frame in RGB with each slot outlined green (vacant) or red (occupied).
/// Later slot ids paint over earlier ones where outlines meet.
pub fn write_annotated(frame: &Frame, map: &SlotMap, states: &[SlotState]) -> Result<Vec<u8>, VideoError> {
    let mut rgb: Vec<u8> = frame
        .intensities()
        .iter()
        .flat_map(|&v| [v, v, v])
        .collect();
    let (w, h) = frame.dimensions();
    for slot in &map.slots {
        let state = states
            .iter()
            .find(|s| s.slot_id == slot.slot_id)
            .ok_or(VideoError::StateMismatch(slot.slot_id))?;
        let color = match state.state {
            Occupancy::Vacant => GREEN,
            Occupancy::Occupied => RED,
        };
        for (a, b) in slot.edges() {
            for p in line_pixels(a, b) {
                if p.x < w && p.y < h {
                    let i = (p.y * w + p.x) as usize * 3;
                    rgb[i..i + 3].copy_from_slice(&color);
                }
            }
        }
    }
    Ok(pnm::encode_ppm(w, h, &rgb))
}

/// File name for the annotated copy of frame `index`.
pub fn annotated_file_name(index: usize) -> String {
    format!("annotated_{index:04}.ppm")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SlotRegion;

    fn sample_map() -> SlotMap {
        let sq = |id, x: u32| {
            SlotRegion::new(
                id,
                [
                    Point2::new(x, 2),
                    Point2::new(x + 10, 2),
                    Point2::new(x + 10, 12),
                    Point2::new(x, 12),
                ],
            )
        };
        SlotMap::new("T", 40, 16, vec![sq(1, 2), sq(2, 20)]).unwrap()
    }

    fn state(slot_id: u32, state: Occupancy) -> SlotState {
        SlotState {
            slot_id,
            state,
            since_frame: 0,
        }
    }

    #[test]
    fn open_sequence_orders_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["f0002.pgm", "f0000.pgm", "f0001.pgm"] {
            write_pgm_file(&dir.path().join(name), &Frame::filled(4, 3, 9)).unwrap();
        }
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let seq = open_sequence(dir.path()).unwrap();
        assert_eq!(seq.names(), ["f0000.pgm", "f0001.pgm", "f0002.pgm"]);
        assert_eq!(FrameSource::len(&seq), 3);
        assert_eq!(seq.frame(2).unwrap().index(), 2);
        assert!(matches!(
            seq.frame(3),
            Err(VideoError::IndexOutOfRange { index: 3, len: 3 })
        ));
    }

    #[test]
    fn empty_directory_has_no_frames() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(open_sequence(dir.path()), Err(VideoError::NoFrames(_))));
    }

    #[test]
    fn mixed_dimensions_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_pgm_file(&dir.path().join("a.pgm"), &Frame::filled(640, 480, 0)).unwrap();
        write_pgm_file(&dir.path().join("b.pgm"), &Frame::filled(320, 240, 0)).unwrap();
        assert!(matches!(
            open_sequence(dir.path()),
            Err(VideoError::DimensionMismatch {
                expected: (640, 480),
                found: (320, 240),
                ..
            })
        ));
    }

    #[test]
    fn unreadable_frame_in_directory() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.pgm"), b"P6\n1 1\n255\n\0\0\0").unwrap();
        assert!(matches!(
            open_sequence(dir.path()),
            Err(VideoError::UnreadableFrame { .. })
        ));
    }

    #[test]
    fn written_frame_reads_back_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        let frame = Frame::new(3, 2, vec![0, 10, 20, 30, 40, 255]).unwrap();
        write_pgm_file(&path, &frame).unwrap();
        let back = read_pgm_file(&path).unwrap();
        assert_eq!(back, frame);
        assert_eq!(back.to_pgm(), fs::read(&path).unwrap());
    }

    #[test]
    fn bresenham_endpoints_and_steps() {
        assert_eq!(
            line_pixels(Point2::new(0, 0), Point2::new(3, 1)),
            vec![
                Point2::new(0, 0),
                Point2::new(1, 0),
                Point2::new(2, 1),
                Point2::new(3, 1)
            ]
        );
        assert_eq!(line_pixels(Point2::new(2, 2), Point2::new(2, 2)), vec![Point2::new(2, 2)]);
        assert_eq!(line_pixels(Point2::new(5, 0), Point2::new(5, 4)).len(), 5);
    }

    #[test]
    fn annotation_colors_follow_state() {
        let map = sample_map();
        let frame = Frame::filled(40, 16, 120);
        let count = |bytes: &[u8], c: [u8; 3]| {
            let (_, _, rgb) = pnm::decode_ppm(bytes).unwrap();
            rgb.chunks(3).filter(|px| *px == c).count()
        };
        let vacant = write_annotated(&frame, &map, &[state(1, Occupancy::Vacant), state(2, Occupancy::Vacant)]).unwrap();
        assert_eq!(count(&vacant, GREEN), 80);
        assert_eq!(count(&vacant, RED), 0);
        let occupied = write_annotated(&frame, &map, &[state(1, Occupancy::Occupied), state(2, Occupancy::Occupied)]).unwrap();
        assert_eq!(count(&occupied, GREEN), 0);
        assert_eq!(count(&occupied, RED), 80);
    }

    #[test]
    fn missing_state_is_reported() {
        let err = write_annotated(&Frame::filled(40, 16, 0), &sample_map(), &[state(1, Occupancy::Vacant)]).unwrap_err();
        assert!(matches!(err, VideoError::StateMismatch(2)));
    }

    #[test]
    fn annotated_names_are_zero_padded() {
        assert_eq!(annotated_file_name(7), "annotated_0007.ppm");
        assert_eq!(annotated_file_name(12345), "annotated_12345.ppm");
    }
}
