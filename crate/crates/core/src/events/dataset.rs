use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{load_events, read_manifest, to_frames, EventFormat, EventFrames, EventStream, SensorSize};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Sample {
    pub frames: EventFrames,
    pub label: usize,
}

/// Labeled event frames sharing one `[3, T, H, W]` geometry.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<Sample>,
    geometry: [usize; 3],
}

/// A stacked minibatch: `x` is `[B, 3, T, H, W]`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor<f32>,
    pub labels: Vec<usize>,
}

impl Dataset {
    /// Converts labeled streams to frames (in parallel, order preserved).
    pub fn from_streams(streams: &[EventStream], frames: usize, height: usize, width: usize) -> Result<Self> {
        let samples = streams
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let label = s
                    .label
                    .ok_or_else(|| Error::Validation(format!("stream {i} has no label")))?;
                Ok(Sample {
                    frames: to_frames(s, frames, height, width)?,
                    label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            samples,
            geometry: [frames, height, width],
        })
    }

    /// Loads every entry of a JSON-lines manifest; relative paths resolve
    /// against the manifest's directory.
    pub fn from_manifest(
        manifest: &Path,
        frames: usize,
        height: usize,
        width: usize,
        csv_sensor: SensorSize,
    ) -> Result<Self> {
        let base = manifest.parent().unwrap_or(Path::new("."));
        let entries = read_manifest(manifest)?;
        let streams = entries
            .par_iter()
            .map(|e| {
                let p = base.join(&e.path);
                Ok(load_events(&p, EventFormat::from_path(&p), csv_sensor)?.with_label(e.label))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_streams(&streams, frames, height, width)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn geometry(&self) -> [usize; 3] {
        self.geometry
    }

    pub fn max_label(&self) -> Option<usize> {
        self.samples.iter().map(|s| s.label).max()
    }

    /// Shuffled batches for one epoch; the order depends only on
    /// `(seed, epoch)`. The final partial batch is kept.
    pub fn batches(&self, batch_size: usize, seed: u64, epoch: usize) -> Result<Batches<'_>> {
        let mut order = self.order_checked(batch_size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        Ok(Batches {
            data: self,
            order,
            batch_size,
            pos: 0,
        })
    }

    /// Batches in storage order.
    pub fn sequential(&self, batch_size: usize) -> Result<Batches<'_>> {
        Ok(Batches {
            data: self,
            order: self.order_checked(batch_size)?,
            batch_size,
            pos: 0,
        })
    }

    fn order_checked(&self, batch_size: usize) -> Result<Vec<usize>> {
        if self.samples.is_empty() {
            return Err(Error::Contract("empty dataset".into()));
        }
        if batch_size == 0 {
            return Err(Error::Contract("batch size must be at least 1".into()));
        }
        Ok((0..self.samples.len()).collect())
    }
}

pub struct Batches<'a> {
    data: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Batches<'_> {
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let idx = &self.order[self.pos..(self.pos + self.batch_size).min(self.order.len())];
        self.pos += idx.len();
        let [t, h, w] = self.data.geometry;
        let mut x = Vec::with_capacity(idx.len() * 3 * t * h * w);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            let s = &self.data.samples[i];
            x.extend_from_slice(s.frames.tensor.data());
            labels.push(s.label);
        }
        Some(Batch {
            x: Tensor::new(&[idx.len(), 3, t, h, w], x).expect("batch geometry"),
            labels,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (n, Some(n))
    }
}
