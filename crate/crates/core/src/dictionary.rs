//! Block-diagonal Fourier dictionary mapping an f-k diagram onto the antenna.
//!
//! The same L×N block of atoms `exp(i·r_l·k_n)` serves every frequency, so the
//! full LF×NF operator is never formed. Coefficients use the frequency-major
//! flat index `n = f_index·N + k_index`; observations use `f_index·L + l`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::exec::Exec;
use crate::math::{dot_h, dot_t};
use crate::waveguide::ArrayGeometry;

/// Uniform grid of horizontal wavenumbers shared by all frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WavenumberGrid {
    pub k_min: f64,
    pub k_max: f64,
    pub points: usize,
}

impl WavenumberGrid {
    pub fn new(k_min: f64, k_max: f64, points: usize) -> Result<Self> {
        let grid = WavenumberGrid {
            k_min,
            k_max,
            points,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_min.is_finite() && self.k_max.is_finite() && self.k_min < self.k_max) {
            return Err(Error::Config(format!(
                "wavenumber grid needs k_min < k_max, got [{}, {}]",
                self.k_min, self.k_max
            )));
        }
        if self.points < 2 {
            return Err(Error::Config(format!(
                "wavenumber grid needs at least 2 points, got {}",
                self.points
            )));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        (self.k_max - self.k_min) / (self.points - 1) as f64
    }

    pub fn point(&self, index: usize) -> f64 {
        self.k_min + index as f64 * self.step()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.point(i)).collect()
    }

    /// Index of the grid point nearest to `k`, or `None` outside `[k_min, k_max]`.
    pub fn nearest(&self, k: f64) -> Option<usize> {
        let slack = 1e-9 * self.step();
        if !(k >= self.k_min - slack && k <= self.k_max + slack) {
            return None;
        }
        let pos = ((k - self.k_min) / self.step()).round();
        Some((pos.max(0.0) as usize).min(self.points - 1))
    }
}

/// Binary F×N support of an f-k diagram, frequency-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Support {
    pub n_freq: usize,
    pub n_grid: usize,
    pub bits: Vec<bool>,
}

impl Support {
    pub fn zeros(n_freq: usize, n_grid: usize) -> Self {
        Support {
            n_freq,
            n_grid,
            bits: vec![false; n_freq * n_grid],
        }
    }

    pub fn from_bits(n_freq: usize, n_grid: usize, bits: Vec<bool>) -> Result<Self> {
        ensure_len("support bits", n_freq * n_grid, bits.len())?;
        Ok(Support {
            n_freq,
            n_grid,
            bits,
        })
    }

    pub fn get(&self, f: usize, k: usize) -> bool {
        self.bits[f * self.n_grid + k]
    }

    pub fn set(&mut self, f: usize, k: usize, value: bool) {
        self.bits[f * self.n_grid + k] = value;
    }

    pub fn row(&self, f: usize) -> &[bool] {
        &self.bits[f * self.n_grid..(f + 1) * self.n_grid]
    }

    pub fn row_sum(&self, f: usize) -> usize {
        self.row(f).iter().filter(|&&b| b).count()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Complex F×N f-k diagram, frequency-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FkDiagram {
    pub n_freq: usize,
    pub n_grid: usize,
    pub values: Vec<Complex64>,
}

impl FkDiagram {
    pub fn zeros(n_freq: usize, n_grid: usize) -> Self {
        FkDiagram {
            n_freq,
            n_grid,
            values: vec![Complex64::new(0.0, 0.0); n_freq * n_grid],
        }
    }

    pub fn support(&self) -> Support {
        Support {
            n_freq: self.n_freq,
            n_grid: self.n_grid,
            bits: self.values.iter().map(|z| z.norm_sqr() > 0.0).collect(),
        }
    }
}

/// How atom correlations are formed.
///
/// `Hermitian` uses `d^H r`. `LiteralTranspose` uses the unconjugated
/// `d^T r` and exists only to compare against that reading of the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerProduct {
    #[default]
    Hermitian,
    LiteralTranspose,
}

#[derive(Debug, Clone)]
pub struct BlockDictionary {
    grid: WavenumberGrid,
    ranges: Vec<f64>,
    freqs: Vec<f64>,
    /// Atom-major: atom k occupies `atoms[k*L..(k+1)*L]`.
    atoms: Vec<Complex64>,
}

impl BlockDictionary {
    pub fn build(grid: WavenumberGrid, array: &ArrayGeometry, freqs: &[f64]) -> Result<Self> {
        grid.validate()?;
        array.validate()?;
        if freqs.is_empty() {
            return Err(Error::Config("frequency axis is empty".into()));
        }
        if let Some(dr) = array.uniform_spacing() {
            let span = grid.k_max - grid.k_min;
            let limit = 2.0 * PI / dr;
            if span > limit * (1.0 + 1e-12) {
                return Err(Error::Config(format!(
                    "grid span {span} rad/m exceeds the alias-free limit 2π/Δr = {limit} rad/m for sensor spacing Δr = {dr} m"
                )));
            }
        }
        let ranges = array.ranges.clone();
        let l = ranges.len();
        let mut atoms = Vec::with_capacity(grid.points * l);
        for k in 0..grid.points {
            let kn = grid.point(k);
            atoms.extend(ranges.iter().map(|&r| Complex64::from_polar(1.0, r * kn)));
        }
        Ok(BlockDictionary {
            grid,
            ranges,
            freqs: freqs.to_vec(),
            atoms,
        })
    }

    pub fn grid(&self) -> &WavenumberGrid {
        &self.grid
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn ranges(&self) -> &[f64] {
        &self.ranges
    }

    pub fn n_sensors(&self) -> usize {
        self.ranges.len()
    }

    pub fn n_freq(&self) -> usize {
        self.freqs.len()
    }

    pub fn n_grid(&self) -> usize {
        self.grid.points
    }

    /// NF, the number of coefficients.
    pub fn n_coeffs(&self) -> usize {
        self.n_freq() * self.n_grid()
    }

    /// LF, the number of observations.
    pub fn n_obs(&self) -> usize {
        self.n_freq() * self.n_sensors()
    }

    /// d_n^H d_n, identical for every atom.
    pub fn atom_energy(&self) -> f64 {
        self.n_sensors() as f64
    }

    /// Entry (l, k) of the shared block.
    pub fn entry(&self, l: usize, k: usize) -> Complex64 {
        self.atoms[k * self.n_sensors() + l]
    }

    /// Atom for grid index `k` (without its frequency embedding).
    pub fn block_atom(&self, k: usize) -> &[Complex64] {
        let l = self.n_sensors();
        &self.atoms[k * l..(k + 1) * l]
    }

    /// Splits a flat coefficient index into (frequency index, grid index).
    pub fn split_index(&self, n: usize) -> (usize, usize) {
        (n / self.n_grid(), n % self.n_grid())
    }

    pub fn flat_index(&self, f: usize, k: usize) -> usize {
        f * self.n_grid() + k
    }

    /// Observation range occupied by frequency block `f`.
    pub fn obs_block(&self, f: usize) -> std::ops::Range<usize> {
        let l = self.n_sensors();
        f * l..(f + 1) * l
    }

    /// Correlation of atom `n` with the full-length observation vector `v`.
    pub fn correlate(&self, n: usize, v: &[Complex64], product: InnerProduct) -> Complex64 {
        let (f, k) = self.split_index(n);
        let block = &v[self.obs_block(f)];
        match product {
            InnerProduct::Hermitian => dot_h(self.block_atom(k), block),
            InnerProduct::LiteralTranspose => dot_t(self.block_atom(k), block),
        }
    }

    /// `v += scale · d_n` in place.
    pub fn add_atom(&self, n: usize, scale: Complex64, v: &mut [Complex64]) {
        let (f, k) = self.split_index(n);
        let range = self.obs_block(f);
        for (out, d) in v[range].iter_mut().zip(self.block_atom(k)) {
            *out += scale * d;
        }
    }

    pub fn apply(&self, z: &[Complex64]) -> Result<Vec<Complex64>> {
        self.apply_with(z, Exec::default())
    }

    /// D z, one frequency block at a time.
    pub fn apply_with(&self, z: &[Complex64], exec: Exec) -> Result<Vec<Complex64>> {
        ensure_len("coefficient vector", self.n_coeffs(), z.len())?;
        let l = self.n_sensors();
        let n = self.n_grid();
        let mut y = vec![Complex64::new(0.0, 0.0); self.n_obs()];
        exec.for_each_chunk_mut(&mut y, l, |f, out| {
            let zf = &z[f * n..(f + 1) * n];
            for (k, &coef) in zf.iter().enumerate() {
                if coef.norm_sqr() == 0.0 {
                    continue;
                }
                for (o, d) in out.iter_mut().zip(self.block_atom(k)) {
                    *o += d * coef;
                }
            }
        });
        Ok(y)
    }

    pub fn adjoint_apply(&self, y: &[Complex64]) -> Result<Vec<Complex64>> {
        self.adjoint_apply_with(y, Exec::default())
    }

    /// D^H y, one frequency block at a time.
    pub fn adjoint_apply_with(&self, y: &[Complex64], exec: Exec) -> Result<Vec<Complex64>> {
        ensure_len("observation vector", self.n_obs(), y.len())?;
        let l = self.n_sensors();
        let n = self.n_grid();
        let mut z = vec![Complex64::new(0.0, 0.0); self.n_coeffs()];
        exec.for_each_chunk_mut(&mut z, n, |f, out| {
            let yf = &y[f * l..(f + 1) * l];
            for (k, o) in out.iter_mut().enumerate() {
                *o = dot_h(self.block_atom(k), yf);
            }
        });
        Ok(z)
    }

    /// Mutual coherence max_{k≠k'} |d_k^H d_k'| / L within one block.
    pub fn coherence(&self) -> f64 {
        let n = self.n_grid();
        let energy = self.atom_energy();
        let mut best: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let c = dot_h(self.block_atom(i), self.block_atom(j)).norm() / energy;
                best = best.max(c);
            }
        }
        best.min(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_array(l: usize, dr: f64) -> ArrayGeometry {
        ArrayGeometry::uniform(dr, dr, l, 50.0)
    }

    #[test]
    fn zero_wavenumber_atom_is_all_ones() {
        let grid = WavenumberGrid::new(0.0, 0.2, 5).unwrap();
        let dict = BlockDictionary::build(grid, &uniform_array(6, 10.0), &[50.0]).unwrap();
        assert!(dict
            .block_atom(0)
            .iter()
            .all(|d| (d - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn single_sensor_block_has_unit_modulus() {
        let grid = WavenumberGrid::new(0.1, 0.3, 7).unwrap();
        let array = ArrayGeometry::new(vec![123.0], 30.0).unwrap();
        let dict = BlockDictionary::build(grid, &array, &[10.0, 20.0]).unwrap();
        assert_eq!(dict.n_sensors(), 1);
        assert_eq!(dict.n_coeffs(), 14);
        for k in 0..7 {
            assert!((dict.entry(0, k).norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn entry_matches_direct_exponential() {
        let array = uniform_array(8, 12.5);
        let grid = WavenumberGrid::new(0.05, 0.45, 9).unwrap();
        let dict = BlockDictionary::build(grid, &array, &[40.0]).unwrap();
        // r_3 = 4·12.5 = 50 m (zero-based l = 3), k_5 = 0.05 + 5·0.05 = 0.30
        let phase: f64 = 50.0 * 0.30;
        let expected = Complex64::new(phase.cos(), phase.sin());
        assert!((dict.entry(3, 5) - expected).norm() < 1e-12);
        for k in 0..9 {
            let e: f64 = dict.block_atom(k).iter().map(|d| d.norm_sqr()).sum();
            assert!((e - 8.0).abs() < 1e-12);
        }
    }

    #[test]
    fn aliasing_is_rejected() {
        let array = uniform_array(8, 20.0);
        // 2π/20 ≈ 0.314 < span 0.4
        let grid = WavenumberGrid::new(0.0, 0.4, 10).unwrap();
        let err = BlockDictionary::build(grid, &array, &[50.0]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("Δr = 20"), "{msg}");
    }

    #[test]
    fn unit_coefficient_extracts_embedded_atom() {
        let array = uniform_array(4, 10.0);
        let grid = WavenumberGrid::new(0.0, 0.3, 5).unwrap();
        let dict = BlockDictionary::build(grid, &array, &[10.0, 20.0, 30.0]).unwrap();
        let n = dict.flat_index(1, 3);
        let mut z = vec![Complex64::new(0.0, 0.0); dict.n_coeffs()];
        z[n] = Complex64::new(1.0, 0.0);
        let y = dict.apply(&z).unwrap();
        for (i, v) in y.iter().enumerate() {
            if (4..8).contains(&i) {
                assert_eq!(*v, dict.entry(i - 4, 3));
            } else {
                assert_eq!(*v, Complex64::new(0.0, 0.0));
            }
        }
        let back = dict.adjoint_apply(&y).unwrap();
        assert!((back[n] - Complex64::new(4.0, 0.0)).norm() < 1e-12);
        for k in 0..5 {
            let expected = dot_h(dict.block_atom(k), dict.block_atom(3));
            assert!((back[dict.flat_index(1, k)] - expected).norm() < 1e-12);
        }
        assert!(back[..5].iter().chain(&back[10..]).all(|c| c.norm() == 0.0));
    }

    #[test]
    fn zero_maps_to_zero() {
        let dict = BlockDictionary::build(
            WavenumberGrid::new(0.0, 0.3, 5).unwrap(),
            &uniform_array(4, 10.0),
            &[10.0, 20.0],
        )
        .unwrap();
        assert!(dict
            .apply(&vec![Complex64::new(0.0, 0.0); 10])
            .unwrap()
            .iter()
            .all(|c| c.norm() == 0.0));
        assert!(dict
            .adjoint_apply(&vec![Complex64::new(0.0, 0.0); 8])
            .unwrap()
            .iter()
            .all(|c| c.norm() == 0.0));
        assert!(matches!(
            dict.apply(&[Complex64::new(0.0, 0.0); 3]),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            dict.adjoint_apply(&[Complex64::new(0.0, 0.0); 3]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn orthogonal_dft_configuration_has_zero_coherence() {
        let l = 8;
        let dr = 10.0;
        let step = 2.0 * PI / (l as f64 * dr);
        let grid = WavenumberGrid::new(0.0, step * (l - 1) as f64, l).unwrap();
        let dict = BlockDictionary::build(grid, &uniform_array(l, dr), &[1.0]).unwrap();
        assert!(dict.coherence() < 1e-12);
    }

    #[test]
    fn duplicated_grid_point_has_unit_coherence() {
        // Two grid points one full alias period apart give identical atoms.
        let dr = 10.0;
        let grid = WavenumberGrid::new(0.0, 2.0 * PI / dr, 2).unwrap();
        let dict = BlockDictionary::build(grid, &uniform_array(5, dr), &[1.0]).unwrap();
        assert!((dict.coherence() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nearest_grid_point() {
        let grid = WavenumberGrid::new(0.0, 1.0, 11).unwrap();
        assert_eq!(grid.nearest(0.0), Some(0));
        assert_eq!(grid.nearest(0.44), Some(4));
        assert_eq!(grid.nearest(0.46), Some(5));
        assert_eq!(grid.nearest(1.0), Some(10));
        assert_eq!(grid.nearest(1.01), None);
        assert_eq!(grid.nearest(-0.01), None);
    }
}
