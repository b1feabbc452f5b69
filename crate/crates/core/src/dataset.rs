//! Procedural image classification data: noisy shapes on a 1×16×16 grid.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const GRID: usize = 16;
pub const NOISE_STD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub items: Vec<(Tensor, usize)>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(items: Vec<(Tensor, usize)>, num_classes: usize, split: Split) -> Result<Self> {
        if let Some((_, label)) = items.iter().find(|(_, l)| *l >= num_classes) {
            return Err(Error::invalid(format!(
                "label {label} out of range for {num_classes} classes"
            )));
        }
        if let Some((first, _)) = items.first() {
            if items.iter().any(|(t, _)| t.shape() != first.shape()) {
                return Err(Error::invalid("dataset inputs have mixed shapes"));
            }
        }
        Ok(Self {
            items,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for (_, l) in &self.items {
            h[*l] += 1;
        }
        h
    }

    pub fn inputs(&self) -> impl Iterator<Item = &Tensor> {
        self.items.iter().map(|(t, _)| t)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|(_, l)| *l).collect()
    }
}

/// Parameters that regenerate a dataset pair exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub seed: u64,
    pub train_items: usize,
    pub test_items: usize,
    pub num_classes: usize,
}

impl DatasetSpec {
    pub fn generate(&self) -> Result<(Dataset, Dataset)> {
        generate_dataset(self.seed, self.train_items, self.test_items, self.num_classes)
    }
}

/// Builds balanced train/test sets. Item `i` has class `i % num_classes`;
/// train and test draw from separate generator streams, and any test image
/// equal to a train image is redrawn.
pub fn generate_dataset(seed: u64, n_train: usize, n_test: usize, num_classes: usize) -> Result<(Dataset, Dataset)> {
    if !(2..=10).contains(&num_classes) {
        return Err(Error::invalid(format!(
            "num_classes must be in 2..=10, got {num_classes}"
        )));
    }
    if n_train < num_classes || n_test < num_classes {
        return Err(Error::invalid(format!("need at least {num_classes} items per split")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let train: Vec<(Tensor, usize)> = (0..n_train)
        .map(|i| {
            let c = i % num_classes;
            (render(c, &mut rng), c)
        })
        .collect();

    let seen: HashSet<Vec<u64>> = train.iter().map(|(t, _)| bit_key(t)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let test: Vec<(Tensor, usize)> = (0..n_test)
        .map(|i| {
            let c = i % num_classes;
            loop {
                let t = render(c, &mut rng);
                if !seen.contains(&bit_key(&t)) {
                    return (t, c);
                }
            }
        })
        .collect();

    Ok((
        Dataset::new(train, num_classes, Split::Train)?,
        Dataset::new(test, num_classes, Split::Test)?,
    ))
}

fn bit_key(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn render<R: Rng>(class: usize, rng: &mut R) -> Tensor {
    let mut img = [[0.0f64; GRID]; GRID];
    let g = GRID as f64;
    let intensity = rng.random_range(0.7..1.3);
    let cx = rng.random_range(5.0..g - 5.0);
    let cy = rng.random_range(5.0..g - 5.0);
    let size = rng.random_range(2.5..4.5);
    let phase = rng.random_range(0..4usize);
    let vertical = rng.random_bool(0.5);

    for (y, row) in img.iter_mut().enumerate() {
        for (x, px) in row.iter_mut().enumerate() {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let (dx, dy) = (fx - cx, fy - cy);
            let on = match class {
                // disk
                0 => dx * dx + dy * dy <= size * size,
                // square outline
                1 => {
                    let m = dx.abs().max(dy.abs());
                    m <= size && m > size - 1.0
                }
                // plus-shaped cross
                2 => (dx.abs() < 1.0 && dy.abs() <= size) || (dy.abs() < 1.0 && dx.abs() <= size),
                // full-width stripes with period 4
                3 => {
                    let k = if vertical { x } else { y };
                    (k + phase) % 4 < 2
                }
                // ring
                4 => {
                    let r = (dx * dx + dy * dy).sqrt();
                    r <= size && r > size - 1.2
                }
                // diagonal bar
                5 => (dx - dy).abs() < 1.0 && dx.abs() <= size,
                // filled triangle
                6 => dy >= -size && dy <= size && dx.abs() <= (dy + size) / 2.0,
                // checkerboard
                7 => ((x / 2) + (y / 2) + phase) % 2 == 0,
                // single horizontal bar
                8 => dy.abs() < 1.0 && dx.abs() <= size + 1.0,
                // L-shaped corner
                _ => (dx.abs() < 1.0 && dy >= -size && dy <= 0.0) || (dy.abs() < 1.0 && dx >= 0.0 && dx <= size),
            };
            if on {
                *px = intensity;
            }
        }
    }

    let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
    let data = img.iter().flatten().map(|v| v + noise.sample(rng)).collect();
    Tensor::new(vec![1, GRID, GRID], data).expect("grid shape")
}
