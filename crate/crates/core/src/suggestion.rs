//! Block recommendation from a user's enrolled classes, the local time and
//! current per-block availability.

use std::collections::BTreeMap;

use chrono::{DateTime, Datelike, FixedOffset, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::catalog::{ClassEntry, Day};
use crate::detection::LotStatus;
use crate::store::{Registry, StoreError};

pub const DEFAULT_LOOKAHEAD_MINUTES: u16 = 120;

/// Schedule clock offset: UTC-05:00 (EST), no daylight saving.
pub fn default_offset() -> FixedOffset {
    FixedOffset::west_opt(5 * 3600).expect("valid offset")
}

/// Weekday and minute-of-day in the schedule's time zone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalMoment {
    pub day: Day,
    pub minute: u16,
}

impl LocalMoment {
    pub fn new(day: Day, hour: u16, minute: u16) -> Self {
        Self {
            day,
            minute: hour * 60 + minute,
        }
    }

    pub fn from_utc(now: DateTime<Utc>, offset: FixedOffset) -> Self {
        let local = now.with_timezone(&offset);
        Self {
            day: local.weekday().into(),
            minute: (local.hour() * 60 + local.minute()) as u16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Availability {
    pub available: usize,
    pub total: usize,
}

impl From<&LotStatus> for Availability {
    fn from(s: &LotStatus) -> Self {
        Self {
            available: s.available,
            total: s.total,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    UpcomingClass,
    NoUpcomingClassMaxAvailability,
    HomeBlockFullFallback,
    NoAvailability,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suggestion {
    pub block_id: Option<String>,
    pub reason: Reason,
    pub class_id: Option<String>,
    pub available: Option<usize>,
    pub total: Option<usize>,
}

/// The enrolled class in session now, or starting within `lookahead` minutes,
/// with the earliest start; ties go to the smallest class id.
pub fn next_relevant_class(enrolled: &[ClassEntry], now: LocalMoment, lookahead: u16) -> Option<&ClassEntry> {
    let horizon = u32::from(now.minute) + u32::from(lookahead);
    enrolled
        .iter()
        .filter(|c| c.meets_on(now.day))
        .filter(|c| {
            let (start, end) = (c.start_time.minutes(), c.end_time.minutes());
            let upcoming = start >= now.minute && u32::from(start) <= horizon;
            let in_session = start <= now.minute && now.minute < end;
            upcoming || in_session
        })
        .min_by(|a, b| (a.start_time, &a.class_id).cmp(&(b.start_time, &b.class_id)))
}

/// Block with the most free slots (ties: smallest id), if any is free.
fn best_block<'a>(
    statuses: &'a BTreeMap<String, Availability>,
    exclude: Option<&str>,
) -> Option<(&'a String, &'a Availability)> {
    statuses
        .iter()
        .filter(|(id, a)| Some(id.as_str()) != exclude && a.available > 0)
        // BTreeMap iterates ids ascending, so keep the first maximum.
        .fold(None, |best: Option<(&String, &Availability)>, cur| match best {
            Some(b) if b.1.available >= cur.1.available => Some(b),
            _ => Some(cur),
        })
}

pub fn suggest(
    enrolled: &[ClassEntry],
    statuses: &BTreeMap<String, Availability>,
    now: LocalMoment,
    lookahead: u16,
) -> Suggestion {
    let pick = |block: Option<(&String, &Availability)>, reason, class_id: Option<&String>| match block {
        Some((id, a)) => Suggestion {
            block_id: Some(id.clone()),
            reason,
            class_id: class_id.cloned(),
            available: Some(a.available),
            total: Some(a.total),
        },
        None => Suggestion {
            block_id: None,
            reason: Reason::NoAvailability,
            class_id: class_id.cloned(),
            available: None,
            total: None,
        },
    };
    match next_relevant_class(enrolled, now, lookahead) {
        Some(class) => {
            let home = statuses
                .get_key_value(&class.home_block)
                .filter(|(_, a)| a.available > 0);
            match home {
                Some(home) => pick(Some(home), Reason::UpcomingClass, Some(&class.class_id)),
                None => pick(
                    best_block(statuses, Some(&class.home_block)),
                    Reason::HomeBlockFullFallback,
                    Some(&class.class_id),
                ),
            }
        }
        None => pick(best_block(statuses, None), Reason::NoUpcomingClassMaxAvailability, None),
    }
}

/// Looks up the user's enrolled classes and suggests a block for them.
pub fn suggest_for_user(
    registry: &Registry,
    username: &str,
    statuses: &BTreeMap<String, LotStatus>,
    now: DateTime<Utc>,
    offset: FixedOffset,
    lookahead: u16,
) -> Result<Suggestion, StoreError> {
    let enrolled = registry.enrolled_classes(username)?;
    let availability = statuses
        .iter()
        .map(|(id, s)| (id.clone(), Availability::from(s)))
        .collect();
    Ok(suggest(
        &enrolled,
        &availability,
        LocalMoment::from_utc(now, offset),
        lookahead,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::ClockTime;

    fn class(id: &str, day: Day, start: (u16, u16), end: (u16, u16), block: &str) -> ClassEntry {
        ClassEntry {
            class_id: id.into(),
            title: id.into(),
            days: vec![day],
            start_time: ClockTime::hm(start.0, start.1).unwrap(),
            end_time: ClockTime::hm(end.0, end.1).unwrap(),
            home_block: block.into(),
        }
    }

    fn avail(pairs: &[(&str, usize, usize)]) -> BTreeMap<String, Availability> {
        pairs
            .iter()
            .map(|&(id, available, total)| (id.to_owned(), Availability { available, total }))
            .collect()
    }

    #[test]
    fn window_rules() {
        let mon = LocalMoment::new(Day::Mon, 9, 0);
        let c = [class("CMSC101", Day::Mon, (10, 0), (10, 50), "A")];
        assert_eq!(next_relevant_class(&c, mon, 120).unwrap().class_id, "CMSC101");
        let tue = [class("CMSC101", Day::Tue, (10, 0), (10, 50), "A")];
        assert!(next_relevant_class(&tue, mon, 120).is_none());
        // 11:01 is past the 120 minute horizon, 11:00 is on it.
        let late = [class("X", Day::Mon, (11, 1), (12, 0), "A")];
        assert!(next_relevant_class(&late, mon, 120).is_none());
        let edge = [class("X", Day::Mon, (11, 0), (12, 0), "A")];
        assert!(next_relevant_class(&edge, mon, 120).is_some());
        // in session
        let ongoing = [class("X", Day::Mon, (8, 30), (9, 20), "A")];
        assert!(next_relevant_class(&ongoing, mon, 120).is_some());
        let over = [class("X", Day::Mon, (8, 0), (9, 0), "A")];
        assert!(next_relevant_class(&over, mon, 120).is_none());
    }

    #[test]
    fn identical_times_break_ties_by_id() {
        let mon = LocalMoment::new(Day::Mon, 9, 0);
        let c = [
            class("CMSC411", Day::Mon, (10, 0), (10, 50), "B"),
            class("CMSC313", Day::Mon, (10, 0), (10, 50), "A"),
        ];
        assert_eq!(next_relevant_class(&c, mon, 120).unwrap().class_id, "CMSC313");
    }

    #[test]
    fn suggestion_rules() {
        let mon = LocalMoment::new(Day::Mon, 9, 0);
        let c = [class("CMSC101", Day::Mon, (10, 0), (10, 50), "A")];
        let s = suggest(&c, &avail(&[("A", 3, 8), ("B", 5, 7)]), mon, 120);
        assert_eq!(
            s,
            Suggestion {
                block_id: Some("A".into()),
                reason: Reason::UpcomingClass,
                class_id: Some("CMSC101".into()),
                available: Some(3),
                total: Some(8),
            }
        );
        let s = suggest(&c, &avail(&[("A", 0, 8), ("B", 2, 7)]), mon, 120);
        assert_eq!(s.block_id.as_deref(), Some("B"));
        assert_eq!(s.reason, Reason::HomeBlockFullFallback);
        let s = suggest(&c, &avail(&[("A", 0, 8), ("B", 0, 7)]), mon, 120);
        assert_eq!(s.reason, Reason::NoAvailability);
        assert!(s.block_id.is_none());
        let s = suggest(&[], &avail(&[("A", 4, 8), ("B", 4, 7)]), mon, 120);
        assert_eq!(s.block_id.as_deref(), Some("A"));
        assert_eq!(s.reason, Reason::NoUpcomingClassMaxAvailability);
        let s = suggest(&[], &avail(&[("A", 1, 8), ("B", 4, 7)]), mon, 120);
        assert_eq!(s.block_id.as_deref(), Some("B"));
    }

    #[test]
    fn eastern_clock() {
        let now: DateTime<Utc> = "2026-10-13T03:30:00Z".parse().unwrap();
        // 22:30 Monday in UTC-5
        assert_eq!(LocalMoment::from_utc(now, default_offset()), LocalMoment::new(Day::Mon, 22, 30));
    }

    #[test]
    fn reason_wire_names() {
        assert_eq!(
            serde_json::to_string(&Reason::NoUpcomingClassMaxAvailability).unwrap(),
            "\"no_upcoming_class_max_availability\""
        );
        assert_eq!(
            serde_json::to_string(&Reason::HomeBlockFullFallback).unwrap(),
            "\"home_block_full_fallback\""
        );
    }
}
