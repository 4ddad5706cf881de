use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{Event, EventStream, Polarity, SensorSize};
use crate::error::{Error, Result};

/// Direction a bar travels across the sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motion {
    Up,
    Down,
    Left,
    Right,
}

impl Motion {
    pub const ALL: [Motion; 4] = [Motion::Up, Motion::Down, Motion::Left, Motion::Right];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: Vec<Motion>,
    pub duration_us: u64,
    /// Mean signal events per millisecond.
    pub event_rate: f64,
    /// Mean uniformly scattered noise events per millisecond.
    pub noise_rate: f64,
    pub sensor_height: u32,
    pub sensor_width: u32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: Motion::ALL.to_vec(),
            duration_us: 100_000,
            event_rate: 40.0,
            noise_rate: 5.0,
            sensor_height: 64,
            sensor_width: 64,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::Config("synthetic data needs at least 2 classes".into()));
        }
        if !(self.event_rate >= 0.0 && self.noise_rate >= 0.0) {
            return Err(Error::Config("event and noise rates must be non-negative".into()));
        }
        if self.duration_us == 0 {
            return Err(Error::Config("synthetic duration must be positive".into()));
        }
        if self.sensor_height < 16 || self.sensor_width < 16 || self.sensor_height > 65535 || self.sensor_width > 65535
        {
            return Err(Error::Config(format!(
                "synthetic sensor {}x{} outside 16..=65535",
                self.sensor_height, self.sensor_width
            )));
        }
        Ok(())
    }

    pub fn sensor(&self) -> SensorSize {
        SensorSize::new(self.sensor_height, self.sensor_width)
    }
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as usize).unwrap_or(0)
}

/// Renders one sample of a bar sweeping in `motion`. Positive events fire on
/// the leading edge and negative events on the trailing edge.
fn render(spec: &SyntheticSpec, motion: Motion, rng: &mut ChaCha8Rng) -> Vec<Event> {
    let (h, w) = (spec.sensor_height as f64, spec.sensor_width as f64);
    // Work in a frame where the bar moves towards +u; map back at the end.
    let (along, across) = match motion {
        Motion::Left | Motion::Right => (w, h),
        Motion::Up | Motion::Down => (h, w),
    };
    let thickness = rng.random_range(3.0..8.0);
    let start = rng.random_range(-thickness..along * 0.25);
    let end = rng.random_range(along * 0.7..along);
    let extent = rng.random_range(across * 0.5..across);
    let offset = rng.random_range(0.0..(across - extent).max(1.0));
    let duration = spec.duration_us as f64;

    let n = poisson(rng, spec.event_rate * duration / 1000.0);
    let mut times: Vec<u64> = (0..n).map(|_| (rng.random::<f64>() * duration) as u64).collect();
    times.sort_unstable();

    let mut events = Vec::with_capacity(n);
    for t in times {
        let trailing = start + (end - start) * t as f64 / duration;
        let leading = rng.random::<bool>();
        let (u, p) = if leading {
            (trailing + thickness, Polarity::Positive)
        } else {
            (trailing, Polarity::Negative)
        };
        let v = offset + rng.random::<f64>() * extent;
        if u < 0.0 || u >= along || v >= across {
            continue;
        }
        let (u, v) = (u as u16, v as u16);
        let last_u = along as u16 - 1;
        let (x, y) = match motion {
            Motion::Right => (u, v),
            Motion::Left => (last_u - u, v),
            Motion::Down => (v, u),
            Motion::Up => (v, last_u - u),
        };
        events.push(Event { t, x, y, p });
    }

    let noise = poisson(rng, spec.noise_rate * duration / 1000.0);
    for _ in 0..noise {
        events.push(Event {
            t: (rng.random::<f64>() * duration) as u64,
            x: rng.random_range(0..spec.sensor_width) as u16,
            y: rng.random_range(0..spec.sensor_height) as u16,
            p: if rng.random::<bool>() {
                Polarity::Positive
            } else {
                Polarity::Negative
            },
        });
    }
    events
}

/// `n_per_class` labeled streams per class, ordered class-major. The label
/// is the index of the motion in `spec.classes`.
pub fn synth_generate(spec: &SyntheticSpec, n_per_class: usize) -> Result<Vec<EventStream>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(n_per_class * spec.classes.len());
    for (label, &motion) in spec.classes.iter().enumerate() {
        for _ in 0..n_per_class {
            let events = render(spec, motion, &mut rng);
            out.push(EventStream::new(spec.sensor(), events)?.with_label(label));
        }
    }
    Ok(out)
}
