//! `parkwatch` operator commands.
//!
//! Exit status: 0 on success, 1 for I/O or environment failures, 2 for
//! validation failures.

use std::collections::BTreeSet;
use std::fs;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use parkwatch_core::detection::{run_detection_with, select_reference, DetectionConfig, DetectionError, DetectionReport};
use parkwatch_core::events::{read_events, EventWriter};
use parkwatch_core::geometry::{parse_slot_map, serialize_slot_map, GeometryError, Point2, SlotMap, SlotRegion};
use parkwatch_core::simulator::{generate, score, GroundTruth, LotScript, SimulationError};
use parkwatch_core::store::Registry;
use parkwatch_core::video::{annotated_file_name, open_sequence, read_pgm_file, write_annotated, FrameSource, VideoError};
use parkwatch_core::SeedData;
use parkwatch_service::{AppState, Clock, ServiceConfig};

#[derive(Parser)]
#[command(name = "parkwatch", version, about = "Parking slot occupancy from lot camera frames")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a slot map from a points file (one slot per line: `x1,y1 x2,y2 x3,y3 x4,y4`).
    Mark {
        /// Reference image; fixes the slot map's dimensions.
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "A")]
        lot_id: String,
    },
    /// Classify every slot in every frame of a recording.
    Detect {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        map: PathBuf,
        /// Empty-lot reference frame; frame 0 of the recording is used when omitted.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Which frames get an annotated PPM copy.
        #[arg(long, value_enum, default_value_t = Annotate::Changes)]
        annotate: Annotate,
    },
    /// Render a synthetic lot recording with ground truth.
    Simulate {
        #[arg(long)]
        script: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP API.
    Serve {
        /// Listen address, e.g. `:8080` or `127.0.0.1:8080`.
        #[arg(long, default_value = ":8080")]
        addr: String,
        #[arg(long, default_value = "parkwatch_store.json")]
        store: PathBuf,
        #[arg(long)]
        seed_data: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Fixed clock for testing (RFC 3339 with offset).
        #[arg(long)]
        now: Option<String>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Compare a detect run with simulator ground truth.
    Score {
        /// Output directory of `parkwatch detect`.
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 2)]
        settle: usize,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Annotate {
    /// Every frame.
    All,
    /// Frames where at least one slot changed state.
    Changes,
    None,
}

enum CliError {
    Io(String),
    Validation(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Validation(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Io(m) | CliError::Validation(m) => m,
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn create_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

impl From<VideoError> for CliError {
    fn from(e: VideoError) -> Self {
        match e {
            VideoError::Io { .. } | VideoError::NoFrames(_) => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<DetectionError> for CliError {
    fn from(e: DetectionError) -> Self {
        match e {
            DetectionError::Video(v) => v.into(),
            DetectionError::NoFrames => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<SimulationError> for CliError {
    fn from(e: SimulationError) -> Self {
        match e {
            SimulationError::Io { .. } => CliError::Io(e.to_string()),
            SimulationError::Video(v) => v.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

fn parse_point(tok: &str) -> Option<Point2> {
    let (x, y) = tok.split_once(',')?;
    Some(Point2::new(x.trim().parse().ok()?, y.trim().parse().ok()?))
}

/// Builds a slot map from points-file text. Slot ids follow the order of
/// non-blank lines; errors name the 1-based line number.
fn slot_map_from_points(text: &str, lot_id: &str, width: u32, height: u32) -> CliResult<SlotMap> {
    let mut slots = Vec::new();
    let mut lines = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let points = line
            .split_whitespace()
            .map(|tok| {
                parse_point(tok)
                    .ok_or_else(|| CliError::Validation(format!("line {line_no}: cannot parse point {tok:?}")))
            })
            .collect::<CliResult<Vec<_>>>()?;
        let slot_id = slots.len() as u32 + 1;
        let slot = SlotRegion::from_points(slot_id, &points)
            .map_err(|v| CliError::Validation(format!("line {line_no}: {v}")))?;
        slots.push(slot);
        lines.push(line_no);
    }
    SlotMap::new(lot_id, width, height, slots).map_err(|v| {
        let msg = match v.slot_id().and_then(|id| lines.get(id as usize - 1)) {
            Some(line_no) => format!("line {line_no}: {v}"),
            None => v.to_string(),
        };
        CliError::Validation(msg)
    })
}

fn mark(image: &Path, points: &Path, out: &Path, lot_id: &str) -> CliResult {
    let frame = read_pgm_file(image)?;
    let text = read_text(points)?;
    let map = slot_map_from_points(&text, lot_id, frame.width(), frame.height())?;
    write_file(out, serialize_slot_map(&map))?;
    println!("slots: {}", map.total());
    Ok(())
}

fn load_slot_map(path: &Path) -> CliResult<SlotMap> {
    parse_slot_map(&read_text(path)?).map_err(|e| match e {
        GeometryError::MalformedDocument(_) | GeometryError::InvariantViolation(_) | GeometryError::EmptyRegion { .. } => {
            CliError::Validation(format!("{}: {e}", path.display()))
        }
    })
}

fn detect(
    frames: &Path,
    map_path: &Path,
    reference: Option<&Path>,
    config: Option<&Path>,
    out: &Path,
    annotate: Annotate,
) -> CliResult {
    let map = load_slot_map(map_path)?;
    let cfg = match config {
        Some(p) => DetectionConfig::from_json(&read_text(p)?)
            .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?,
        None => DetectionConfig::default(),
    };
    let seq = open_sequence(frames)?;
    let reference = select_reference(&seq, reference)?;
    create_dir(out)?;

    let events_path = out.join("events.jsonl");
    let file = fs::File::create(&events_path).map_err(|e| io_err(&events_path, e))?;
    let mut log = EventWriter::new(BufWriter::new(file));
    let mut log_err = None;
    let report = run_detection_with(&seq, &map, &reference, &cfg, |ev, _, _| {
        if let Err(e) = log.append(ev) {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(io_err(&events_path, e));
    }

    let final_json = serde_json::to_string(&report.final_status).expect("status serialization is infallible");
    write_file(&out.join("final.json"), final_json)?;

    let frames_to_annotate: BTreeSet<usize> = match annotate {
        Annotate::All => (0..seq.len()).collect(),
        Annotate::Changes => report.events.iter().map(|e| e.frame).collect(),
        Annotate::None => BTreeSet::new(),
    };
    for i in frames_to_annotate {
        let frame = seq.frame(i)?;
        let ppm = write_annotated(&frame, &map, &report.timeline[i].states)?;
        write_file(&out.join(annotated_file_name(i)), ppm)?;
    }
    println!(
        "available {}/{}",
        report.final_status.available, report.final_status.total
    );
    Ok(())
}

fn simulate(script_path: &Path, seed: u64, out: &Path) -> CliResult {
    let script = LotScript::from_json(&read_text(script_path)?)?;
    let lot = generate(&script, seed, out)?;
    let last = lot.truth.total_frames - 1;
    println!(
        "frames: {}, slots: {}, final available {}/{}",
        lot.truth.total_frames,
        lot.map.total(),
        lot.truth.available_at(last),
        lot.truth.slots
    );
    Ok(())
}

fn score_cmd(report_dir: &Path, truth_path: &Path, settle: usize) -> CliResult {
    let truth = GroundTruth::from_json(&read_text(truth_path)?)
        .map_err(|e| CliError::Validation(format!("{}: {e}", truth_path.display())))?;
    let events_path = report_dir.join("events.jsonl");
    let file = fs::File::open(&events_path).map_err(|e| io_err(&events_path, e))?;
    let events = read_events(std::io::BufReader::new(file)).map_err(|e| CliError::Validation(format!("{}: {e}", events_path.display())))?;
    let report = DetectionReport::from_events(truth.lot_id.clone(), &events, truth.slots, truth.total_frames)?;
    let summary = score(&report, &truth, settle).map_err(|e| CliError::Validation(e.to_string()))?;
    println!(
        "overall agreement: {:.4} ({}/{} slot-frames)",
        summary.overall, summary.agreed, summary.compared
    );
    for (i, acc) in summary.per_slot.iter().enumerate() {
        println!("slot {}: {acc:.4}", i + 1);
    }
    match summary.max_lag() {
        Some(lag) => println!(
            "transitions: {}, max lag: {lag} frames, undetected: {}",
            summary.lags.len(),
            summary.undetected()
        ),
        None => println!("transitions: {}, undetected: {}", summary.lags.len(), summary.undetected()),
    }
    Ok(())
}

fn parse_addr(addr: &str) -> CliResult<SocketAddr> {
    let full = if addr.starts_with(':') {
        format!("0.0.0.0{addr}")
    } else {
        addr.to_owned()
    };
    full.parse()
        .map_err(|_| CliError::Validation(format!("invalid listen address {addr:?}")))
}

fn serve(
    addr: &str,
    store: &Path,
    seed_data: Option<&Path>,
    config: Option<&Path>,
    now: Option<&str>,
    static_dir: Option<PathBuf>,
) -> CliResult {
    let addr = parse_addr(addr)?;
    let mut cfg = match config {
        Some(p) => serde_json::from_str::<ServiceConfig>(&read_text(p)?)
            .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?,
        None => ServiceConfig::default(),
    };
    cfg.detection
        .validate()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    if static_dir.is_some() {
        cfg.static_dir = static_dir;
    }
    let clock = match now {
        Some(t) => Clock::Fixed(
            chrono::DateTime::parse_from_rfc3339(t)
                .map_err(|e| CliError::Validation(format!("--now {t:?}: {e}")))?
                .to_utc(),
        ),
        None => Clock::System,
    };
    let registry = Registry::open(store).map_err(|e| CliError::Io(e.to_string()))?;
    if let Some(seed) = seed_data {
        let seed: SeedData = serde_json::from_str(&read_text(seed)?)
            .map_err(|e| CliError::Validation(format!("{}: {e}", seed.display())))?;
        registry
            .apply_seed(&seed)
            .map_err(|e| CliError::Validation(e.to_string()))?;
    }
    registry.persist().map_err(|e| CliError::Io(e.to_string()))?;
    let state = AppState::new(Arc::new(registry), cfg, clock);

    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Io(format!("bind {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| CliError::Io(e.to_string()))?;
        println!("listening on {local}");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        parkwatch_service::serve(listener, state, shutdown)
            .await
            .map_err(|e| CliError::Io(e.to_string()))
    })
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Mark {
            image,
            points,
            out,
            lot_id,
        } => mark(&image, &points, &out, &lot_id),
        Command::Detect {
            frames,
            map,
            reference,
            config,
            out,
            annotate,
        } => detect(&frames, &map, reference.as_deref(), config.as_deref(), &out, annotate),
        Command::Simulate { script, seed, out } => simulate(&script, seed, &out),
        Command::Serve {
            addr,
            store,
            seed_data,
            config,
            now,
            static_dir,
        } => serve(
            &addr,
            &store,
            seed_data.as_deref(),
            config.as_deref(),
            now.as_deref(),
            static_dir,
        ),
        Command::Score { report, truth, settle } => score_cmd(&report, &truth, settle),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_file_parsing() {
        let map = slot_map_from_points("0,0 9,0 9,9 0,9\n\n20,0 29,0 29,9 20,9\n", "A", 64, 64).ok().unwrap();
        assert_eq!(map.total(), 2);
        assert_eq!(map.slots[1].slot_id, 2);
        assert_eq!(slot_map_from_points("", "A", 64, 64).ok().unwrap().total(), 0);
    }

    #[test]
    fn points_errors_name_lines() {
        let text = "0,0 9,0 9,9 0,9\n20,0 29,0 29,9 20,9\n40,0 49,0 49,9\n";
        let err = slot_map_from_points(text, "A", 64, 64).err().unwrap();
        assert_eq!(err.exit_code(), 2);
        assert!(err.message().starts_with("line 3:"), "{}", err.message());

        let bad_tok = slot_map_from_points("0,0 9,0 9;9 0,9", "A", 64, 64).err().unwrap();
        assert!(bad_tok.message().starts_with("line 1:"));

        let overlap = "0,0 9,0 9,9 0,9\n\n0,0 9,0 9,9 0,9\n";
        let err = slot_map_from_points(overlap, "A", 64, 64).err().unwrap();
        assert!(err.message().starts_with("line 3:"), "{}", err.message());
    }

    #[test]
    fn listen_addresses() {
        assert_eq!(parse_addr(":8080").ok().unwrap(), "0.0.0.0:8080".parse().unwrap());
        assert_eq!(parse_addr("127.0.0.1:9").ok().unwrap(), "127.0.0.1:9".parse().unwrap());
        assert!(parse_addr("nope").is_err());
    }
}
