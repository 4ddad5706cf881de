use super::{EventStream, Polarity};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Three-channel event frames `[3, T, H, W]` with values in `[0, 1]`:
/// positive counts, negative counts (each divided by its channel maximum)
/// and the normalized timestamp of the last event per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EventFrames {
    pub tensor: Tensor<f32>,
}

impl EventFrames {
    pub fn frames(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[3]
    }
}

/// Raw per-cell counts before normalization, indexed `[bin][y][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventCounts {
    pub positive: Vec<u32>,
    pub negative: Vec<u32>,
    /// Latest timestamp per cell, if any event landed there.
    pub last_t: Vec<Option<u64>>,
}

struct Binning {
    t_min: u64,
    span: u64,
    frames: usize,
    height: usize,
    width: usize,
    fy: usize,
    fx: usize,
}

impl Binning {
    fn new(stream: &EventStream, frames: usize, height: usize, width: usize) -> Result<Self> {
        if frames < 1 || height < 1 || width < 1 {
            return Err(Error::Config(format!(
                "frame geometry must be positive, got T={frames} H={height} W={width}"
            )));
        }
        let (t_min, t_max) = stream.time_range().unwrap_or((0, 0));
        let s = stream.sensor();
        Ok(Self {
            t_min,
            span: t_max - t_min,
            frames,
            height,
            width,
            fy: (s.height as usize).div_ceil(height).max(1),
            fx: (s.width as usize).div_ceil(width).max(1),
        })
    }

    fn bin(&self, t: u64) -> usize {
        if self.span == 0 {
            return 0;
        }
        let b = (t - self.t_min) as u128 * self.frames as u128 / self.span as u128;
        (b as usize).min(self.frames - 1)
    }

    fn cell(&self, t: u64, x: u16, y: u16) -> usize {
        let (row, col) = (y as usize / self.fy, x as usize / self.fx);
        (self.bin(t) * self.height + row) * self.width + col
    }
}

/// Counts events per (bin, pixel) cell over `frames` equal-width time bins.
pub fn event_counts(stream: &EventStream, frames: usize, height: usize, width: usize) -> Result<EventCounts> {
    let b = Binning::new(stream, frames, height, width)?;
    let cells = frames * height * width;
    let mut counts = EventCounts {
        positive: vec![0; cells],
        negative: vec![0; cells],
        last_t: vec![None; cells],
    };
    for e in stream.events() {
        let c = b.cell(e.t, e.x, e.y);
        match e.p {
            Polarity::Positive => counts.positive[c] += 1,
            Polarity::Negative => counts.negative[c] += 1,
        }
        counts.last_t[c] = Some(counts.last_t[c].map_or(e.t, |t| t.max(e.t)));
    }
    Ok(counts)
}

pub fn to_frames(stream: &EventStream, frames: usize, height: usize, width: usize) -> Result<EventFrames> {
    let b = Binning::new(stream, frames, height, width)?;
    let counts = event_counts(stream, frames, height, width)?;
    let cells = frames * height * width;
    let mut data = vec![0f32; 3 * cells];
    for (ch, src) in [&counts.positive, &counts.negative].into_iter().enumerate() {
        let max = src.iter().copied().max().unwrap_or(0);
        if max == 0 {
            continue;
        }
        for (dst, &c) in data[ch * cells..(ch + 1) * cells].iter_mut().zip(src) {
            *dst = c as f32 / max as f32;
        }
    }
    if b.span > 0 {
        for (dst, t) in data[2 * cells..].iter_mut().zip(&counts.last_t) {
            if let Some(t) = t {
                *dst = ((t - b.t_min) as f64 / b.span as f64) as f32;
            }
        }
    }
    Ok(EventFrames {
        tensor: Tensor::new(&[3, frames, height, width], data)?,
    })
}
