//! Newline-delimited JSON log of slot state changes.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::Occupancy;

/// One slot transition. `available`/`total` are the lot counter after the
/// whole frame has been evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupancyEvent {
    pub frame: usize,
    pub slot_id: u32,
    pub state: Occupancy,
    pub available: usize,
    pub total: usize,
}

#[derive(Debug, Error)]
pub enum EventLogError {
    #[error("event log i/o: {0}")]
    IoFailure(#[from] io::Error),
    #[error("line {line}: {message}")]
    BadLine { line: usize, message: String },
}

/// Single-writer appender; every event is flushed before `append` returns.
pub struct EventWriter<W: Write> {
    inner: W,
}

impl<W: Write> EventWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn append(&mut self, event: &OccupancyEvent) -> Result<(), EventLogError> {
        let mut line = serde_json::to_vec(event).expect("event serialization is infallible");
        line.push(b'\n');
        self.inner.write_all(&line)?;
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

/// Formats one event exactly as it appears in the log, without the newline.
pub fn event_line(event: &OccupancyEvent) -> String {
    serde_json::to_string(event).expect("event serialization is infallible")
}

/// Parses a whole log. Blank lines are skipped.
pub fn read_events<R: BufRead>(reader: R) -> Result<Vec<OccupancyEvent>, EventLogError> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line).map_err(|e| EventLogError::BadLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        events.push(event);
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formats_state_change() {
        let ev = OccupancyEvent {
            frame: 12,
            slot_id: 3,
            state: Occupancy::Vacant,
            available: 6,
            total: 8,
        };
        assert_eq!(
            event_line(&ev),
            r#"{"frame":12,"slot_id":3,"state":"vacant","available":6,"total":8}"#
        );
    }

    #[test]
    fn append_then_read() {
        let events = [
            OccupancyEvent {
                frame: 0,
                slot_id: 1,
                state: Occupancy::Occupied,
                available: 0,
                total: 1,
            },
            OccupancyEvent {
                frame: 4,
                slot_id: 1,
                state: Occupancy::Vacant,
                available: 1,
                total: 1,
            },
        ];
        let mut w = EventWriter::new(Vec::new());
        for ev in &events {
            w.append(ev).unwrap();
        }
        let bytes = w.into_inner();
        assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), 2);
        assert_eq!(read_events(&bytes[..]).unwrap(), events);
    }

    #[test]
    fn bad_line_is_located() {
        let log = "{\"frame\":0,\"slot_id\":1,\"state\":\"vacant\",\"available\":1,\"total\":1}\n{\"frame\":1}\n";
        assert!(matches!(
            read_events(log.as_bytes()),
            Err(EventLogError::BadLine { line: 2, .. })
        ));
        let unknown_state = "{\"frame\":0,\"slot_id\":1,\"state\":\"gray\",\"available\":1,\"total\":1}";
        assert!(read_events(unknown_state.as_bytes()).is_err());
    }
}
