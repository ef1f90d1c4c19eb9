//! Uniform tensor grids and the value and policy fields stored on them.
//!
//! # File layout
//!
//! A field file is one line of JSON (the header) terminated by `\n`, followed
//! by a payload of little-endian `f64` values. Points are stored in row-major
//! order with the last axis varying fastest. A value field stores one number
//! per point; a policy field stores `u_1..u_I, v_1..v_J` per point.
//!
//! ```json
//! {"kind":"policy","model_hash":"...","lower":[-6.0],"upper":[6.0],
//!  "points":[1201],"classes":1,"stations":1,"values_per_point":2}
//! ```

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{ControlPoint, TreeModel};

/// One axis of a grid: `points` equally spaced nodes on `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
}

impl Axis {
    pub fn new(lower: f64, upper: f64, points: usize) -> Result<Self> {
        if !lower.is_finite() || !upper.is_finite() || !(lower < upper) {
            return Err(invalid(format!(
                "axis bounds [{lower}, {upper}] are not a finite interval"
            )));
        }
        if points < 3 {
            return Err(invalid(format!(
                "an axis needs at least 3 points, got {points}"
            )));
        }
        Ok(Self {
            lower,
            upper,
            points,
        })
    }

    /// Axis with spacing as close as possible to `h`.
    pub fn with_spacing(lower: f64, upper: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(invalid("grid spacing must be positive"));
        }
        let intervals = ((upper - lower) / h).round().max(2.0) as usize;
        Self::new(lower, upper, intervals + 1)
    }

    pub fn h(&self) -> f64 {
        (self.upper - self.lower) / (self.points - 1) as f64
    }

    pub fn coord(&self, k: usize) -> f64 {
        if k + 1 == self.points {
            self.upper
        } else {
            self.lower + k as f64 * self.h()
        }
    }

    /// Fractional position of `x`, clamped to the axis.
    fn position(&self, x: f64) -> f64 {
        ((x - self.lower) / self.h()).clamp(0.0, (self.points - 1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    axes: Vec<Axis>,
    strides: Vec<usize>,
    len: usize,
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(invalid("a grid needs at least one axis"));
        }
        let mut strides = vec![1; axes.len()];
        for d in (0..axes.len() - 1).rev() {
            strides[d] = strides[d + 1] * axes[d + 1].points;
        }
        let len = strides[0] * axes[0].points;
        Ok(Self { axes, strides, len })
    }

    /// Box `[-6 sigma_i, 6 sigma_i]`, `sigma_i = r_i / sqrt(2 gamma)`, with
    /// spacing close to `h` on every axis.
    pub fn default_box(model: &TreeModel, h: f64) -> Result<Self> {
        let gamma = model.gamma();
        let axes = (0..model.classes())
            .map(|i| {
                let sigma = model.r(i) / (2.0 * gamma).sqrt();
                Axis::with_spacing(-6.0 * sigma, 6.0 * sigma, h)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(axes)
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn stride(&self, d: usize) -> usize {
        self.strides[d]
    }

    pub fn h(&self, d: usize) -> f64 {
        self.axes[d].h()
    }

    /// True when the box has points on both sides of `e.x = 0`.
    pub fn straddles_kink(&self) -> bool {
        let low: f64 = self.axes.iter().map(|a| a.lower).sum();
        let high: f64 = self.axes.iter().map(|a| a.upper).sum();
        low < 0.0 && high > 0.0
    }

    pub fn multi_index(&self, mut flat: usize, out: &mut [usize]) {
        for d in 0..self.dims() {
            out[d] = flat / self.strides[d];
            flat %= self.strides[d];
        }
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(k, s)| k * s).sum()
    }

    pub fn coords(&self, flat: usize, out: &mut [f64]) {
        let mut rest = flat;
        for d in 0..self.dims() {
            let k = rest / self.strides[d];
            rest %= self.strides[d];
            out[d] = self.axes[d].coord(k);
        }
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dims()];
        self.coords(flat, &mut x);
        x
    }

    /// True when the point lies on the outer face of the box.
    pub fn is_boundary(&self, flat: usize) -> bool {
        let mut rest = flat;
        for d in 0..self.dims() {
            let k = rest / self.strides[d];
            rest %= self.strides[d];
            if k == 0 || k + 1 == self.axes[d].points {
                return true;
            }
        }
        false
    }

    /// True when the point is at least `margin` nodes away from every face.
    pub fn is_interior(&self, flat: usize, margin: usize) -> bool {
        let mut rest = flat;
        for d in 0..self.dims() {
            let k = rest / self.strides[d];
            rest %= self.strides[d];
            if k < margin || k + margin >= self.axes[d].points {
                return false;
            }
        }
        true
    }

    /// Flat index of the node nearest to `x`, clamping to the box.
    pub fn nearest(&self, x: &[f64]) -> usize {
        self.axes
            .iter()
            .zip(x)
            .zip(&self.strides)
            .map(|((a, &xd), s)| (a.position(xd).round() as usize) * s)
            .sum()
    }

    /// Corner nodes and weights of the multilinear interpolant at `x`.
    pub fn corners(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let mut out = vec![(0usize, 1.0f64)];
        for (d, a) in self.axes.iter().enumerate() {
            let pos = a.position(x[d]);
            let base = (pos.floor() as usize).min(a.points - 2);
            let frac = pos - base as f64;
            let s = self.strides[d];
            let mut next = Vec::with_capacity(out.len() * 2);
            for &(idx, w) in &out {
                next.push((idx + base * s, w * (1.0 - frac)));
                next.push((idx + (base + 1) * s, w * frac));
            }
            out = next;
        }
        out
    }

    /// Multilinear interpolation of nodal values at `x` (clamped).
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        self.corners(x)
            .into_iter()
            .map(|(i, w)| w * values[i])
            .sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    kind: String,
    model_hash: String,
    lower: Vec<f64>,
    upper: Vec<f64>,
    points: Vec<usize>,
    classes: usize,
    stations: usize,
    values_per_point: usize,
}

fn header_for(
    grid: &Grid,
    kind: &str,
    hash: &str,
    classes: usize,
    stations: usize,
    per: usize,
) -> Header {
    Header {
        kind: kind.into(),
        model_hash: hash.into(),
        lower: grid.axes.iter().map(|a| a.lower).collect(),
        upper: grid.axes.iter().map(|a| a.upper).collect(),
        points: grid.axes.iter().map(|a| a.points).collect(),
        classes,
        stations,
        values_per_point: per,
    }
}

fn write_field<W: Write>(
    out: &mut W,
    header: &Header,
    payload: impl Iterator<Item = f64>,
) -> Result<()> {
    let line = serde_json::to_string(header)?;
    out.write_all(line.as_bytes())?;
    out.write_all(b"\n")?;
    for v in payload {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_field<R: Read>(input: R, kind: &str) -> Result<(Header, Grid, Vec<f64>)> {
    let mut reader = BufReader::new(input);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let header: Header = serde_json::from_str(line.trim_end())?;
    if header.kind != kind {
        return Err(invalid(format!(
            "expected a {kind} field, found {}",
            header.kind
        )));
    }
    if header.lower.len() != header.points.len() || header.upper.len() != header.points.len() {
        return Err(invalid("field header axes disagree in length"));
    }
    let axes = (0..header.points.len())
        .map(|d| Axis::new(header.lower[d], header.upper[d], header.points[d]))
        .collect::<Result<Vec<_>>>()?;
    let grid = Grid::new(axes)?;
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let expected = grid.len() * header.values_per_point * 8;
    if bytes.len() != expected {
        return Err(invalid(format!(
            "field payload has {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((header, grid, data))
}

/// Values of a function on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub model_hash: String,
}

impl ValueField {
    pub fn new(grid: Grid, values: Vec<f64>, model_hash: String) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self {
            grid,
            values,
            model_hash,
        })
    }

    pub fn at(&self, x: &[f64]) -> f64 {
        self.grid.interpolate(&self.values, x)
    }

    pub fn write<W: Write>(&self, out: &mut W) -> Result<()> {
        let h = header_for(
            &self.grid,
            "value",
            &self.model_hash,
            self.grid.dims(),
            0,
            1,
        );
        write_field(out, &h, self.values.iter().copied())
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let (header, grid, values) = read_field(input, "value")?;
        if header.values_per_point != 1 {
            return Err(invalid("value fields store one number per point"));
        }
        Self::new(grid, values, header.model_hash)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::fs::File::open(path)?)
    }
}

/// A control for every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyField {
    pub grid: Grid,
    pub controls: Vec<ControlPoint>,
    pub model_hash: String,
}

impl PolicyField {
    pub fn new(grid: Grid, controls: Vec<ControlPoint>, model_hash: String) -> Result<Self> {
        if controls.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} controls for a grid of {} points",
                controls.len(),
                grid.len()
            )));
        }
        Ok(Self {
            grid,
            controls,
            model_hash,
        })
    }

    pub fn classes(&self) -> usize {
        self.controls[0].u.len()
    }

    pub fn stations(&self) -> usize {
        self.controls[0].v.len()
    }

    pub fn write<W: Write>(&self, out: &mut W) -> Result<()> {
        let (i, j) = (self.classes(), self.stations());
        let h = header_for(&self.grid, "policy", &self.model_hash, i, j, i + j);
        let payload = self
            .controls
            .iter()
            .flat_map(|c| c.u.iter().chain(&c.v).copied());
        write_field(out, &h, payload)
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let (header, grid, data) = read_field(input, "policy")?;
        let (i, j) = (header.classes, header.stations);
        if i == 0 || j == 0 || header.values_per_point != i + j {
            return Err(invalid("policy header dimensions are inconsistent"));
        }
        let controls = data
            .chunks_exact(i + j)
            .map(|c| ControlPoint::new(c[..i].to_vec(), c[i..].to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid, controls, header.model_hash)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::fs::File::open(path)?)
    }
}
