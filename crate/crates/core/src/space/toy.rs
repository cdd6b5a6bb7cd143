//! Seven 2-D toy densities, quantized to Gray-coded binary states.
//!
//! Each axis of the square `[-lim, lim]^2` is split into `2^bits` cells; the
//! cell index is Gray-encoded and the x block is followed by the y block.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::gray::{gray_decode, gray_encode};
use super::{State, StateSpace};
use crate::rng::{seeded, SimRng};
use crate::{Error, Result};

/// Points generated per independent seed chunk.
const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyDataset {
    #[serde(rename = "2spirals")]
    TwoSpirals,
    #[serde(rename = "8gaussians")]
    EightGaussians,
    Circles,
    Moons,
    Pinwheel,
    Swissroll,
    Checkerboard,
}

impl ToyDataset {
    pub const ALL: [ToyDataset; 7] = [
        ToyDataset::TwoSpirals,
        ToyDataset::EightGaussians,
        ToyDataset::Circles,
        ToyDataset::Moons,
        ToyDataset::Pinwheel,
        ToyDataset::Swissroll,
        ToyDataset::Checkerboard,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ToyDataset::TwoSpirals => "2spirals",
            ToyDataset::EightGaussians => "8gaussians",
            ToyDataset::Circles => "circles",
            ToyDataset::Moons => "moons",
            ToyDataset::Pinwheel => "pinwheel",
            ToyDataset::Swissroll => "swissroll",
            ToyDataset::Checkerboard => "checkerboard",
        }
    }
}

impl fmt::Display for ToyDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ToyDataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ToyDataset::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::config(format!("unknown toy dataset {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyDatasetSpec {
    pub dataset: ToyDataset,
    pub bits_per_axis: u32,
    /// Half-width of the bounding square.
    pub lim: f64,
}

impl ToyDatasetSpec {
    pub const DEFAULT_BITS: u32 = 16;
    pub const DEFAULT_LIM: f64 = 4.0;

    pub fn new(dataset: ToyDataset, bits_per_axis: u32) -> Result<Self> {
        let spec = Self {
            dataset,
            bits_per_axis,
            lim: Self::DEFAULT_LIM,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=16).contains(&self.bits_per_axis) {
            return Err(Error::config(format!(
                "bits_per_axis {} outside 2..=16",
                self.bits_per_axis
            )));
        }
        if !(self.lim > 0.0 && self.lim.is_finite()) {
            return Err(Error::config("bounding box half-width must be positive"));
        }
        Ok(())
    }

    /// Binary space of `2 * bits_per_axis` dimensions.
    pub fn space(&self) -> StateSpace {
        StateSpace::binary(2 * self.bits_per_axis as usize).expect("bits_per_axis >= 2")
    }

    pub fn cells(&self) -> u64 {
        1u64 << self.bits_per_axis
    }

    pub fn cell_width(&self) -> f64 {
        2.0 * self.lim / self.cells() as f64
    }

    /// Draws one point from the density, clamped to the box.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let p = draw(self.dataset, self.lim, rng);
        [
            p[0].clamp(-self.lim, self.lim),
            p[1].clamp(-self.lim, self.lim),
        ]
    }

    /// Draws one quantized state.
    pub fn sample_state<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        let p = self.sample_point(rng);
        quantize2d(p, self).expect("clamped points lie in the box")
    }
}

/// `count` points, deterministic in `seed`.
///
/// Chunk `k` of 1024 points is drawn from seed `seed + k`, so chunks can be
/// produced independently.
pub fn sample_toy2d(spec: &ToyDatasetSpec, count: usize, seed: u64) -> Result<Vec<[f64; 2]>> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::domain("sample count must be at least 1"));
    }
    let mut out = Vec::with_capacity(count);
    for chunk in 0..count.div_ceil(CHUNK) {
        let mut rng = seeded(seed.wrapping_add(chunk as u64));
        let take = CHUNK.min(count - chunk * CHUNK);
        out.extend((0..take).map(|_| spec.sample_point(&mut rng)));
    }
    Ok(out)
}

pub fn quantize2d(point: [f64; 2], spec: &ToyDatasetSpec) -> Result<State> {
    let bits = spec.bits_per_axis;
    let mut values = Vec::with_capacity(2 * bits as usize);
    for &v in &point {
        if !(v >= -spec.lim && v <= spec.lim) {
            return Err(Error::domain(format!(
                "coordinate {v} outside [-{0}, {0}]",
                spec.lim
            )));
        }
        let scaled = ((v + spec.lim) / (2.0 * spec.lim) * spec.cells() as f64).floor() as u64;
        let cell = scaled.min(spec.cells() - 1);
        values.extend(gray_encode(cell, bits)?.into_iter().map(usize::from));
    }
    Ok(State(values))
}

/// Cell center of the decoded integer pair.
pub fn dequantize2d(state: &State, spec: &ToyDatasetSpec) -> Result<[f64; 2]> {
    let bits = spec.bits_per_axis as usize;
    if state.len() != 2 * bits {
        return Err(Error::domain(format!(
            "state has {} bits, expected {}",
            state.len(),
            2 * bits
        )));
    }
    let mut out = [0.0; 2];
    for (axis, slot) in out.iter_mut().enumerate() {
        let code: Vec<u8> = state.0[axis * bits..(axis + 1) * bits]
            .iter()
            .map(|&v| v as u8)
            .collect();
        let cell = gray_decode(&code)?;
        *slot = -spec.lim + (cell as f64 + 0.5) * spec.cell_width();
    }
    Ok(out)
}

fn draw<R: Rng + ?Sized>(dataset: ToyDataset, lim: f64, rng: &mut R) -> [f64; 2] {
    let gauss = |rng: &mut R| -> f64 { StandardNormal.sample(rng) };
    match dataset {
        ToyDataset::TwoSpirals => {
            let theta = rng.random::<f64>().sqrt() * 3.0 * PI;
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let r = theta * lim / 12.0 + 0.1 * lim * gauss(rng);
            [-sign * r * theta.cos(), sign * r * theta.sin()]
        }
        ToyDataset::EightGaussians => {
            let k = rng.random_range(0..8) as f64;
            let angle = k * PI / 4.0;
            let sigma = lim / 20.0;
            [
                0.5 * lim * angle.cos() + sigma * gauss(rng),
                0.5 * lim * angle.sin() + sigma * gauss(rng),
            ]
        }
        ToyDataset::Circles => {
            let radius = if rng.random::<bool>() { lim / 2.0 } else { lim / 4.0 };
            let angle = rng.random::<f64>() * 2.0 * PI;
            let sigma = lim / 40.0;
            [
                radius * angle.cos() + sigma * gauss(rng),
                radius * angle.sin() + sigma * gauss(rng),
            ]
        }
        ToyDataset::Moons => {
            let radius = lim / 2.0;
            let angle = rng.random::<f64>() * PI;
            let sigma = lim / 40.0;
            let (x, y) = if rng.random::<bool>() {
                (radius * angle.cos() - radius / 2.0, radius * angle.sin() - lim / 16.0)
            } else {
                (radius / 2.0 - radius * angle.cos(), lim / 16.0 - radius * angle.sin())
            };
            [x + sigma * gauss(rng), y + sigma * gauss(rng)]
        }
        ToyDataset::Pinwheel => {
            const BLADES: usize = 5;
            const RADIAL_STD: f64 = 0.3;
            const TANGENTIAL_STD: f64 = 0.1;
            const SHEAR: f64 = 0.25;
            let blade = rng.random_range(0..BLADES);
            let radial = 1.0 + RADIAL_STD * gauss(rng);
            let tangential = TANGENTIAL_STD * gauss(rng);
            let angle = 2.0 * PI * blade as f64 / BLADES as f64 + SHEAR * radial.exp();
            let (s, c) = angle.sin_cos();
            let scale = lim / 2.0;
            [
                scale * (radial * c + tangential * s),
                scale * (tangential * c - radial * s),
            ]
        }
        ToyDataset::Swissroll => {
            let theta = 1.5 * PI * (1.0 + 2.0 * rng.random::<f64>());
            let r = theta * 0.7 * lim / (4.5 * PI);
            let sigma = lim / 40.0;
            [
                r * theta.cos() + sigma * gauss(rng),
                r * theta.sin() + sigma * gauss(rng),
            ]
        }
        ToyDataset::Checkerboard => {
            let width = lim / 2.0;
            // One of the 8 cells with even (column + row) on the 4x4 board.
            let cell = rng.random_range(0..8usize);
            let row = cell / 2;
            let col = 2 * (cell % 2) + row % 2;
            [
                -lim + (col as f64 + rng.random::<f64>()) * width,
                -lim + (row as f64 + rng.random::<f64>()) * width,
            ]
        }
    }
}

/// On-the-fly source of quantized toy states.
#[derive(Debug, Clone, Copy)]
pub struct ToySource {
    pub spec: ToyDatasetSpec,
}

impl crate::training::DataSource for ToySource {
    fn space(&self) -> StateSpace {
        self.spec.space()
    }

    fn sample(&self, rng: &mut SimRng) -> State {
        self.spec.sample_state(rng)
    }
}

/// Writes `x,y,state` rows.
pub fn write_points_csv(path: &Path, header_comment: &str, points: &[[f64; 2]], spec: &ToyDatasetSpec) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "# {header_comment}")?;
        writeln!(w, "x,y,state")?;
        for p in points {
            let state = quantize2d(*p, spec).map_err(std::io::Error::other)?;
            writeln!(w, "{},{},{}", p[0], p[1], state.encode(2))?;
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}
