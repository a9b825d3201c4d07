//! Synthetic parking-lot footage with known ground truth.
//!
//! Slots are laid out on a regular grid. Cars are flat rectangles inset 10%
//! from their slot. Every pixel of every rendered frame, including the empty
//! reference, receives independent uniform integer noise drawn from
//! [`Lcg64`], so identical scripts and seeds give identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{DetectionReport, Occupancy};
use crate::geometry::{serialize_slot_map, Point2, SlotMap, SlotRegion, Violation};
use crate::video::{open_sequence, write_pgm_file, Frame, FrameSequence, VideoError};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("grid needs {needed_w}x{needed_h} pixels but the image is {width}x{height}")]
    LayoutOverflow {
        needed_w: u64,
        needed_h: u64,
        width: u32,
        height: u32,
    },
    #[error("invalid script: {0}")]
    InvalidScript(String),
    #[error("grid produced an invalid slot map: {0}")]
    Layout(#[from] Violation),
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScoreError {
    #[error("report covers {report_frames} frames x {report_slots} slots, truth {truth_frames} x {truth_slots}")]
    DimensionMismatch {
        report_frames: usize,
        report_slots: usize,
        truth_frames: usize,
        truth_slots: usize,
    },
}

/// 64-bit linear congruential generator with Knuth's MMIX constants:
/// `state = state * 6364136223846793005 + 1442695040888963407 (mod 2^64)`.
/// Each draw returns bits 63..33 of the new state.
#[derive(Debug, Clone)]
pub struct Lcg64 {
    state: u64,
}

impl Lcg64 {
    pub const MULTIPLIER: u64 = 6_364_136_223_846_793_005;
    pub const INCREMENT: u64 = 1_442_695_040_888_963_407;
    /// Stream separation constant (2^64 / golden ratio).
    pub const STREAM_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Independent stream `stream` for a run seeded with `seed`. Stream 0 is the
    /// reference frame, stream `i + 1` is frame `i`.
    pub fn for_stream(seed: u64, stream: u64) -> Self {
        let mut rng = Self::new(seed ^ stream.wrapping_mul(Self::STREAM_STRIDE));
        rng.next_u32();
        rng
    }

    pub fn next_u32(&mut self) -> u32 {
        self.state = self
            .state
            .wrapping_mul(Self::MULTIPLIER)
            .wrapping_add(Self::INCREMENT);
        (self.state >> 33) as u32
    }

    /// Uniform integer in `[-amplitude, amplitude]` (modulo reduction).
    pub fn noise(&mut self, amplitude: u8) -> i32 {
        let span = 2 * u32::from(amplitude) + 1;
        (self.next_u32() % span) as i32 - i32::from(amplitude)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridLayout {
    pub rows: u32,
    pub cols: u32,
    pub slot_w: u32,
    pub slot_h: u32,
    pub gutter: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Arrive,
    Depart,
}

fn default_background() -> u8 {
    120
}
fn default_car() -> u8 {
    40
}
fn default_noise() -> u8 {
    3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEvent {
    pub frame: usize,
    pub slot_id: u32,
    pub action: Action,
    #[serde(default = "default_car")]
    pub car_intensity: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LotScript {
    pub lot_id: String,
    pub width: u32,
    pub height: u32,
    pub grid: GridLayout,
    #[serde(default = "default_background")]
    pub background_intensity: u8,
    #[serde(default = "default_noise")]
    pub noise_amplitude: u8,
    pub total_frames: usize,
    #[serde(default)]
    pub events: Vec<ScriptEvent>,
}

impl LotScript {
    pub fn from_json(text: &str) -> Result<Self, SimulationError> {
        serde_json::from_str(text).map_err(|e| SimulationError::InvalidScript(e.to_string()))
    }

    pub fn slot_count(&self) -> u32 {
        self.grid.rows * self.grid.cols
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let g = &self.grid;
        let needed_w = u64::from(g.gutter) + u64::from(g.cols) * (u64::from(g.slot_w) + u64::from(g.gutter));
        let needed_h = u64::from(g.gutter) + u64::from(g.rows) * (u64::from(g.slot_h) + u64::from(g.gutter));
        if needed_w > u64::from(self.width) || needed_h > u64::from(self.height) {
            return Err(SimulationError::LayoutOverflow {
                needed_w,
                needed_h,
                width: self.width,
                height: self.height,
            });
        }
        let invalid = |msg: String| Err(SimulationError::InvalidScript(msg));
        if self.total_frames == 0 {
            return invalid("total_frames must be positive".into());
        }
        if self.noise_amplitude > 127 {
            return invalid(format!("noise_amplitude {} exceeds 127", self.noise_amplitude));
        }
        let slots = self.slot_count();
        let mut parked = vec![false; slots as usize];
        let mut last_frame = 0;
        for (i, ev) in self.events.iter().enumerate() {
            if ev.frame < last_frame {
                return invalid(format!("event {i} at frame {} is out of order", ev.frame));
            }
            last_frame = ev.frame;
            if ev.frame >= self.total_frames {
                return invalid(format!("event {i} at frame {} is past total_frames", ev.frame));
            }
            if ev.slot_id == 0 || ev.slot_id > slots {
                return invalid(format!("event {i} names slot {} of {slots}", ev.slot_id));
            }
            let here = &mut parked[ev.slot_id as usize - 1];
            match (ev.action, *here) {
                (Action::Arrive, false) => *here = true,
                (Action::Depart, true) => *here = false,
                (Action::Arrive, true) => return invalid(format!("event {i}: slot {} already occupied", ev.slot_id)),
                (Action::Depart, false) => return invalid(format!("event {i}: slot {} already empty", ev.slot_id)),
            }
        }
        Ok(())
    }
}

/// Axis-aligned inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl Rect {
    pub fn contains(&self, p: Point2) -> bool {
        (self.x0..=self.x1).contains(&p.x) && (self.y0..=self.y1).contains(&p.y)
    }

    pub fn area(&self) -> usize {
        (self.x1 - self.x0 + 1) as usize * (self.y1 - self.y0 + 1) as usize
    }
}

/// Per-frame, per-slot occupancy (`occupancy[frame][slot_id - 1]`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub lot_id: String,
    pub slots: usize,
    pub total_frames: usize,
    pub occupancy: Vec<Vec<bool>>,
}

/// A scripted change of one slot's true occupancy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Transition {
    pub slot_id: u32,
    pub frame: usize,
    pub occupied: bool,
}

impl GroundTruth {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn is_occupied(&self, frame: usize, slot_id: u32) -> bool {
        self.occupancy[frame][slot_id as usize - 1]
    }

    pub fn available_at(&self, frame: usize) -> usize {
        self.occupancy[frame].iter().filter(|&&o| !o).count()
    }

    /// Every change of value, treating the lot as empty before frame 0.
    pub fn transitions(&self) -> Vec<Transition> {
        let mut out = Vec::new();
        for slot in 0..self.slots {
            let mut before = false;
            for (frame, row) in self.occupancy.iter().enumerate() {
                if row[slot] != before {
                    out.push(Transition {
                        slot_id: slot as u32 + 1,
                        frame,
                        occupied: row[slot],
                    });
                    before = row[slot];
                }
            }
        }
        out.sort_by_key(|t| (t.frame, t.slot_id));
        out
    }
}

/// A validated script ready to render.
#[derive(Debug, Clone)]
pub struct Scene {
    script: LotScript,
    seed: u64,
    map: SlotMap,
    cars: Vec<Rect>,
    truth: GroundTruth,
    car_intensity: Vec<Vec<Option<u8>>>,
}

impl Scene {
    pub fn new(script: LotScript, seed: u64) -> Result<Self, SimulationError> {
        script.validate()?;
        let g = script.grid;
        let mut slots = Vec::new();
        let mut cars = Vec::new();
        for r in 0..g.rows {
            for c in 0..g.cols {
                let x0 = g.gutter + c * (g.slot_w + g.gutter);
                let y0 = g.gutter + r * (g.slot_h + g.gutter);
                let (x1, y1) = (x0 + g.slot_w - 1, y0 + g.slot_h - 1);
                slots.push(SlotRegion::new(
                    r * g.cols + c + 1,
                    [
                        Point2::new(x0, y0),
                        Point2::new(x1, y0),
                        Point2::new(x1, y1),
                        Point2::new(x0, y1),
                    ],
                ));
                let (ix, iy) = (g.slot_w / 10, g.slot_h / 10);
                cars.push(Rect {
                    x0: x0 + ix,
                    y0: y0 + iy,
                    x1: x1 - ix,
                    y1: y1 - iy,
                });
            }
        }
        let map = SlotMap::new(script.lot_id.clone(), script.width, script.height, slots)?;

        let n = script.slot_count() as usize;
        let mut current: Vec<Option<u8>> = vec![None; n];
        let mut car_intensity = Vec::with_capacity(script.total_frames);
        let mut events = script.events.iter().peekable();
        for frame in 0..script.total_frames {
            while let Some(ev) = events.next_if(|e| e.frame == frame) {
                current[ev.slot_id as usize - 1] = match ev.action {
                    Action::Arrive => Some(ev.car_intensity),
                    Action::Depart => None,
                };
            }
            car_intensity.push(current.clone());
        }
        let truth = GroundTruth {
            lot_id: script.lot_id.clone(),
            slots: n,
            total_frames: script.total_frames,
            occupancy: car_intensity
                .iter()
                .map(|row| row.iter().map(Option::is_some).collect())
                .collect(),
        };
        Ok(Self {
            script,
            seed,
            map,
            cars,
            truth,
            car_intensity,
        })
    }

    pub fn script(&self) -> &LotScript {
        &self.script
    }

    pub fn slot_map(&self) -> &SlotMap {
        &self.map
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    /// Car rectangle for a slot (drawn only while the slot is occupied).
    pub fn car_rect(&self, slot_id: u32) -> Rect {
        self.cars[slot_id as usize - 1]
    }

    pub fn frame_count(&self) -> usize {
        self.script.total_frames
    }

    fn render(&self, stream: u64, cars: &[Option<u8>]) -> Frame {
        let (w, h) = (self.script.width, self.script.height);
        let mut base = vec![self.script.background_intensity; w as usize * h as usize];
        for (rect, intensity) in self.cars.iter().zip(cars) {
            if let Some(v) = intensity {
                for y in rect.y0..=rect.y1 {
                    let row = (y * w) as usize;
                    base[row + rect.x0 as usize..=row + rect.x1 as usize].fill(*v);
                }
            }
        }
        let mut rng = Lcg64::for_stream(self.seed, stream);
        let amp = self.script.noise_amplitude;
        for px in &mut base {
            *px = (i32::from(*px) + rng.noise(amp)).clamp(0, 255) as u8;
        }
        Frame::new(w, h, base).expect("buffer sized from script dimensions")
    }

    /// The empty lot.
    pub fn reference(&self) -> Frame {
        self.render(0, &vec![None; self.cars.len()])
    }

    pub fn render_frame(&self, index: usize) -> Frame {
        self.render(index as u64 + 1, &self.car_intensity[index])
            .with_index(index)
    }

    pub fn frames(&self) -> Vec<Frame> {
        (0..self.frame_count()).map(|i| self.render_frame(i)).collect()
    }

    /// Frame file name, zero-padded wide enough to keep lexicographic order.
    pub fn frame_file_name(&self, index: usize) -> String {
        let digits = (self.frame_count().saturating_sub(1)).to_string().len().max(4);
        format!("f{index:0digits$}.pgm")
    }
}

/// Everything [`generate`] wrote, reopened from disk.
#[derive(Debug, Clone)]
pub struct GeneratedLot {
    pub map: SlotMap,
    pub reference: Frame,
    pub sequence: FrameSequence,
    pub truth: GroundTruth,
}

/// Renders a script into `out`: `slotmap.json`, `ref.pgm`, `frames/*.pgm`, `truth.json`.
pub fn generate(script: &LotScript, seed: u64, out: &Path) -> Result<GeneratedLot, SimulationError> {
    let scene = Scene::new(script.clone(), seed)?;
    let io_err = |path: &Path| {
        let path = path.to_owned();
        move |source| SimulationError::Io { path, source }
    };
    let frames_dir = out.join("frames");
    fs::create_dir_all(&frames_dir).map_err(io_err(&frames_dir))?;
    let map_path = out.join("slotmap.json");
    fs::write(&map_path, serialize_slot_map(scene.slot_map())).map_err(io_err(&map_path))?;
    let reference = scene.reference();
    write_pgm_file(&out.join("ref.pgm"), &reference)?;
    for i in 0..scene.frame_count() {
        write_pgm_file(&frames_dir.join(scene.frame_file_name(i)), &scene.render_frame(i))?;
    }
    let truth_path = out.join("truth.json");
    let truth_json = serde_json::to_string(scene.truth()).expect("truth serialization is infallible");
    fs::write(&truth_path, truth_json).map_err(io_err(&truth_path))?;
    Ok(GeneratedLot {
        map: scene.slot_map().clone(),
        reference,
        sequence: open_sequence(&frames_dir)?,
        truth: scene.truth().clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TransitionLag {
    pub slot_id: u32,
    pub frame: usize,
    pub occupied: bool,
    /// Frames until the detector first agreed; `None` if it never did.
    pub lag: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreSummary {
    pub overall: f64,
    /// Agreement per slot, indexed by `slot_id - 1`.
    pub per_slot: Vec<f64>,
    pub compared: usize,
    pub agreed: usize,
    pub lags: Vec<TransitionLag>,
}

impl ScoreSummary {
    /// Largest lag among detected transitions.
    pub fn max_lag(&self) -> Option<usize> {
        self.lags.iter().filter_map(|l| l.lag).max()
    }

    pub fn undetected(&self) -> usize {
        self.lags.iter().filter(|l| l.lag.is_none()).count()
    }
}

/// Compares a report with ground truth, skipping `settle` frames for a slot
/// starting at each of its scripted transitions.
pub fn score(report: &DetectionReport, truth: &GroundTruth, settle: usize) -> Result<ScoreSummary, ScoreError> {
    let report_slots = report.timeline.first().map_or(0, |s| s.states.len());
    if report.timeline.len() != truth.total_frames || report_slots != truth.slots {
        return Err(ScoreError::DimensionMismatch {
            report_frames: report.timeline.len(),
            report_slots,
            truth_frames: truth.total_frames,
            truth_slots: truth.slots,
        });
    }
    let detected = |frame: usize, slot_id: u32| {
        report.timeline[frame].state_of(slot_id) == Some(Occupancy::Occupied)
    };
    let transitions = truth.transitions();
    let mut per_slot = Vec::with_capacity(truth.slots);
    let (mut compared, mut agreed) = (0, 0);
    for slot in 1..=truth.slots as u32 {
        let mut excluded = vec![false; truth.total_frames];
        for t in transitions.iter().filter(|t| t.slot_id == slot) {
            for flag in excluded.iter_mut().skip(t.frame).take(settle) {
                *flag = true;
            }
        }
        let (mut n, mut ok) = (0, 0);
        for frame in (0..truth.total_frames).filter(|&f| !excluded[f]) {
            n += 1;
            if detected(frame, slot) == truth.is_occupied(frame, slot) {
                ok += 1;
            }
        }
        per_slot.push(if n == 0 { 1.0 } else { ok as f64 / n as f64 });
        compared += n;
        agreed += ok;
    }
    let lags = transitions
        .iter()
        .map(|t| TransitionLag {
            slot_id: t.slot_id,
            frame: t.frame,
            occupied: t.occupied,
            lag: (t.frame..truth.total_frames)
                .find(|&f| detected(f, t.slot_id) == t.occupied)
                .map(|f| f - t.frame),
        })
        .collect();
    Ok(ScoreSummary {
        overall: if compared == 0 {
            1.0
        } else {
            agreed as f64 / compared as f64
        },
        per_slot,
        compared,
        agreed,
        lags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn script(events: Vec<ScriptEvent>, total_frames: usize) -> LotScript {
        LotScript {
            lot_id: "A".into(),
            width: 640,
            height: 480,
            grid: GridLayout {
                rows: 2,
                cols: 4,
                slot_w: 120,
                slot_h: 180,
                gutter: 20,
            },
            background_intensity: 120,
            noise_amplitude: 3,
            total_frames,
            events,
        }
    }

    fn ev(frame: usize, slot_id: u32, action: Action) -> ScriptEvent {
        ScriptEvent {
            frame,
            slot_id,
            action,
            car_intensity: 40,
        }
    }

    #[test]
    fn lcg_reference_values() {
        // seed 0: first state is the increment itself.
        let mut rng = Lcg64::new(0);
        assert_eq!(rng.next_u32(), (Lcg64::INCREMENT >> 33) as u32);
        let mut a = Lcg64::for_stream(42, 7);
        let mut b = Lcg64::for_stream(42, 7);
        let mut c = Lcg64::for_stream(42, 8);
        let xs: Vec<u32> = (0..8).map(|_| a.next_u32()).collect();
        assert_eq!(xs, (0..8).map(|_| b.next_u32()).collect::<Vec<_>>());
        assert_ne!(xs, (0..8).map(|_| c.next_u32()).collect::<Vec<_>>());
    }

    #[test]
    fn noise_stays_in_range() {
        let mut rng = Lcg64::new(5);
        let draws: Vec<i32> = (0..10_000).map(|_| rng.noise(3)).collect();
        assert!(draws.iter().all(|d| (-3..=3).contains(d)));
        for v in -3..=3 {
            assert!(draws.contains(&v));
        }
        assert_eq!(Lcg64::new(1).noise(0), 0);
    }

    #[test]
    fn empty_script_is_noise_only() {
        let scene = Scene::new(script(vec![], 10), 1).unwrap();
        assert_eq!(scene.slot_map().total(), 8);
        assert!(scene.truth().occupancy.iter().flatten().all(|&o| !o));
        let reference = scene.reference();
        for frame in scene.frames() {
            let max_dev = frame
                .intensities()
                .iter()
                .zip(reference.intensities())
                .map(|(a, b)| a.abs_diff(*b))
                .max()
                .unwrap();
            assert!(max_dev <= 6);
            assert!(frame.intensities().iter().all(|v| (117..=123).contains(v)));
        }
    }

    #[test]
    fn arrival_sets_truth_from_its_frame() {
        let scene = Scene::new(script(vec![ev(5, 3, Action::Arrive)], 10), 1).unwrap();
        for f in 0..10 {
            assert_eq!(scene.truth().is_occupied(f, 3), f >= 5);
            assert!(!scene.truth().is_occupied(f, 2));
        }
        let car = scene.car_rect(3);
        let frame = scene.render_frame(5);
        assert!((37..=43).contains(&frame.get(car.x0, car.y0)));
        assert!((117..=123).contains(&scene.render_frame(4).get(car.x0, car.y0)));
        assert_eq!(
            scene.truth().transitions(),
            vec![Transition {
                slot_id: 3,
                frame: 5,
                occupied: true
            }]
        );
    }

    #[test]
    fn script_validation() {
        let overflow = LotScript {
            width: 500,
            ..script(vec![], 10)
        };
        assert!(matches!(
            Scene::new(overflow, 0),
            Err(SimulationError::LayoutOverflow { needed_w: 580, .. })
        ));
        for events in [
            vec![ev(3, 1, Action::Depart)],
            vec![ev(3, 1, Action::Arrive), ev(4, 1, Action::Arrive)],
            vec![ev(5, 1, Action::Arrive), ev(4, 2, Action::Arrive)],
            vec![ev(10, 1, Action::Arrive)],
            vec![ev(1, 9, Action::Arrive)],
        ] {
            assert!(matches!(
                Scene::new(script(events, 10), 0),
                Err(SimulationError::InvalidScript(_))
            ));
        }
    }

    #[test]
    fn script_json_defaults() {
        let s = LotScript::from_json(
            r#"{"lot_id":"A","width":640,"height":480,"grid":{"rows":2,"cols":4,"slot_w":120,"slot_h":180,"gutter":20},"total_frames":300,"events":[{"frame":5,"slot_id":3,"action":"arrive"}]}"#,
        )
        .unwrap();
        assert_eq!(s.background_intensity, 120);
        assert_eq!(s.noise_amplitude, 3);
        assert_eq!(s.events[0].car_intensity, 40);
        assert!(LotScript::from_json(r#"{"lot_id":"A"}"#).is_err());
    }

    #[test]
    fn frame_names_sort_lexicographically() {
        let scene = Scene::new(script(vec![], 12_000), 0).unwrap();
        assert_eq!(scene.frame_file_name(7), "f00007.pgm");
        assert!(scene.frame_file_name(9_999) < scene.frame_file_name(10_000));
        let small = Scene::new(script(vec![], 300), 0).unwrap();
        assert_eq!(small.frame_file_name(12), "f0012.pgm");
    }
}
