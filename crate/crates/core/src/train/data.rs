//! Synthetic four-class images at 32x32.
//!
//! | class | content |
//! |-------|---------|
//! | 0 | horizontal bars |
//! | 1 | vertical bars |
//! | 2 | diagonal stripes |
//! | 3 | two magenta dots at least 16 pixels apart on a plain background |
//!
//! Each image is drawn from its own generator seeded by `(seed, index)`, so
//! samples can be produced in any order and in parallel.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;
use crate::{shape_err, Result};

pub const SIDE: usize = 32;
pub const CHANNELS: usize = 3;
pub const CLASSES: usize = 4;
/// Smallest distance between the two class-3 dots.
pub const MIN_DOT_DISTANCE: f64 = 16.0;
const DOT: usize = 4;
/// Dot color; saturated so that it survives per-site channel normalization.
const DOT_COLOR: [f32; CHANNELS] = [1.0, 0.0, 1.0];
const NOISE: f32 = 0.05;

/// Everything random about one image; the class only selects what is drawn.
#[derive(Clone, Debug, PartialEq)]
pub struct Pattern {
    pub period: usize,
    pub phase: usize,
    pub color: [f32; CHANNELS],
    /// Top-left corners of the two class-3 dots.
    pub dots: [(usize, usize); 2],
    pub noise: Vec<f32>,
}

impl Pattern {
    pub fn draw(rng: &mut impl Rng) -> Self {
        let period = rng.random_range(4..=8);
        let phase = rng.random_range(0..period);
        let color = [0; CHANNELS].map(|_| rng.random_range(0.4f32..0.75));
        let span = SIDE - DOT;
        let first = (rng.random_range(0..=span), rng.random_range(0..=span));
        let second = loop {
            let p = (rng.random_range(0..=span), rng.random_range(0..=span));
            if dot_distance(first, p) >= MIN_DOT_DISTANCE {
                break p;
            }
        };
        let noise = (0..CHANNELS * SIDE * SIDE).map(|_| rng.random_range(-NOISE..NOISE)).collect();
        Pattern { period, phase, color, dots: [first, second], noise }
    }

    /// Pixels of `class` in `[C, H, W]` order, values in `[0, 1]`.
    pub fn render(&self, class: usize) -> Vec<f32> {
        let mut img = vec![0.0f32; CHANNELS * SIDE * SIDE];
        for y in 0..SIDE {
            for x in 0..SIDE {
                let coord = match class {
                    0 => y,
                    1 => x,
                    2 => x + y,
                    _ => usize::MAX,
                };
                let on = class < 3 && (coord + self.phase) % self.period < self.period / 2;
                for c in 0..CHANNELS {
                    let i = (c * SIDE + y) * SIDE + x;
                    let base = if on { self.color[c] } else { 0.1 };
                    img[i] = (base + self.noise[i]).clamp(0.0, 1.0);
                }
            }
        }
        if class == 3 {
            for &(y0, x0) in &self.dots {
                for c in 0..CHANNELS {
                    for y in y0..y0 + DOT {
                        for x in x0..x0 + DOT {
                            img[(c * SIDE + y) * SIDE + x] = DOT_COLOR[c];
                        }
                    }
                }
            }
        }
        img
    }
}

pub fn dot_distance(a: (usize, usize), b: (usize, usize)) -> f64 {
    let dy = a.0 as f64 - b.0 as f64;
    let dx = a.1 as f64 - b.1 as f64;
    Float::sqrt(dy * dy + dx * dx)
}

/// Generator for sample `index` of the dataset with `seed`.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyDataset {
    /// `[n, 3, 32, 32]`.
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub seed: u64,
}

/// `n` images with labels cycling through the classes.
pub fn generate_toy(seed: u64, n: usize) -> Result<ToyDataset> {
    if n == 0 {
        return Err(shape_err!("dataset needs at least one sample"));
    }
    let mut data = Vec::with_capacity(n * CHANNELS * SIDE * SIDE);
    let labels: Vec<usize> = (0..n).map(|i| i % CLASSES).collect();
    for (i, &label) in labels.iter().enumerate() {
        data.extend(Pattern::draw(&mut sample_rng(seed, i)).render(label));
    }
    Ok(ToyDataset { images: Tensor::new(&[n, CHANNELS, SIDE, SIDE], data)?, labels, seed })
}

impl ToyDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> [usize; CLASSES] {
        let mut counts = [0; CLASSES];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Images and labels at `indices`, in that order.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        let per = CHANNELS * SIDE * SIDE;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            if i >= self.len() {
                return Err(shape_err!("sample {i} out of range for {} samples", self.len()));
            }
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((Tensor::new(&[indices.len(), CHANNELS, SIDE, SIDE], data)?, labels))
    }

    /// First `n` samples.
    pub fn take(&self, n: usize) -> Result<ToyDataset> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        let (images, labels) = self.batch(&idx)?;
        Ok(ToyDataset { images, labels, seed: self.seed })
    }
}
