//! Event-camera streams: storage formats, frame conversion and a synthetic
//! moving-bar generator.

mod dataset;
mod frames;
mod io;
mod synth;

pub use dataset::{Batch, Batches, Dataset, Sample};
pub use frames::{event_counts, to_frames, EventCounts, EventFrames};
pub use io::{
    load_binary, load_csv, load_events, read_binary, read_manifest, save_binary, save_csv, write_binary,
    write_manifest, EventFormat, ManifestEntry, BINARY_MAGIC,
};
pub use synth::{synth_generate, Motion, SyntheticSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn as_i8(self) -> i8 {
        match self {
            Polarity::Negative => -1,
            Polarity::Positive => 1,
        }
    }

    pub fn from_i8(p: i8) -> Option<Self> {
        match p {
            -1 => Some(Polarity::Negative),
            1 => Some(Polarity::Positive),
            _ => None,
        }
    }
}

/// One brightness-change record; `t` in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: Polarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorSize {
    pub height: u32,
    pub width: u32,
}

impl SensorSize {
    pub const fn new(height: u32, width: u32) -> Self {
        Self { height, width }
    }
}

/// Time-ordered events from one sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    sensor: SensorSize,
    events: Vec<Event>,
    pub label: Option<usize>,
}

impl EventStream {
    /// Validates coordinates and sorts by timestamp (stable for ties).
    pub fn new(sensor: SensorSize, mut events: Vec<Event>) -> Result<Self> {
        if let Some((i, e)) = events
            .iter()
            .enumerate()
            .find(|(_, e)| e.x as u32 >= sensor.width || e.y as u32 >= sensor.height)
        {
            return Err(Error::Validation(format!(
                "event {i} at ({}, {}) lies outside the {}x{} sensor",
                e.x, e.y, sensor.width, sensor.height
            )));
        }
        events.sort_by_key(|e| e.t);
        Ok(Self {
            sensor,
            events,
            label: None,
        })
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn sensor(&self) -> SensorSize {
        self.sensor
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn time_range(&self) -> Option<(u64, u64)> {
        Some((self.events.first()?.t, self.events.last()?.t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: u64, x: u16, y: u16, p: i8) -> Event {
        Event {
            t,
            x,
            y,
            p: Polarity::from_i8(p).unwrap(),
        }
    }

    #[test]
    fn sorts_stably_by_time() {
        let s = EventStream::new(
            SensorSize::new(4, 4),
            vec![ev(5, 0, 0, 1), ev(1, 1, 0, 1), ev(5, 2, 0, -1), ev(1, 3, 0, -1)],
        )
        .unwrap();
        let xs: Vec<u16> = s.events().iter().map(|e| e.x).collect();
        assert_eq!(xs, vec![1, 3, 0, 2]);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(matches!(
            EventStream::new(SensorSize::new(4, 4), vec![ev(0, 4, 0, 1)]),
            Err(Error::Validation(_))
        ));
    }
}
