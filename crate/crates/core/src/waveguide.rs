//! Modal propagation in range-independent shallow-water waveguides.
//!
//! The field received at range `r` and frequency `f` is the modal sum
//! `y(f, r) = Q·S(f)·Σ_m A_m(f)·exp(i·r·k_m(f))`, with modal amplitudes
//! independent of range so every mode is a pure exponential across the array.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dictionary::{FkDiagram, Support, WavenumberGrid};
use crate::error::{ensure_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentKind {
    /// Pressure-release surface over a rigid bottom.
    Ideal,
    /// Isovelocity water layer over a fluid half-space.
    Pekeris,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub kind: EnvironmentKind,
    /// Water depth D in meters.
    pub depth: f64,
    pub water_speed: f64,
    /// Ignored by the ideal guide.
    pub bottom_speed: f64,
    pub water_density: f64,
    pub bottom_density: f64,
}

impl EnvironmentSpec {
    pub fn ideal(depth: f64, water_speed: f64) -> Self {
        EnvironmentSpec {
            kind: EnvironmentKind::Ideal,
            depth,
            water_speed,
            bottom_speed: f64::INFINITY,
            water_density: 1000.0,
            bottom_density: f64::INFINITY,
        }
    }

    pub fn pekeris(
        depth: f64,
        water_speed: f64,
        bottom_speed: f64,
        water_density: f64,
        bottom_density: f64,
    ) -> Self {
        EnvironmentSpec {
            kind: EnvironmentKind::Pekeris,
            depth,
            water_speed,
            bottom_speed,
            water_density,
            bottom_density,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.depth > 0.0 && self.depth.is_finite()) {
            return Err(Error::Config(format!("depth must be positive, got {}", self.depth)));
        }
        if !(self.water_speed > 0.0 && self.water_speed.is_finite()) {
            return Err(Error::Config(format!(
                "water sound speed must be positive, got {}",
                self.water_speed
            )));
        }
        if self.kind == EnvironmentKind::Pekeris {
            if !(self.bottom_speed > self.water_speed) {
                return Err(Error::Config(format!(
                    "Pekeris guide needs bottom speed > water speed for trapped modes, got c2 = {} <= c1 = {}",
                    self.bottom_speed, self.water_speed
                )));
            }
            if !(self.water_density > 0.0 && self.bottom_density > 0.0) {
                return Err(Error::Config(format!(
                    "densities must be positive, got rho1 = {}, rho2 = {}",
                    self.water_density, self.bottom_density
                )));
            }
        }
        Ok(())
    }

    /// Wavenumber 2πf/c1 in the water column.
    pub fn water_wavenumber(&self, f: f64) -> f64 {
        2.0 * PI * f / self.water_speed
    }

    /// Lower edge of the trapped-mode band: 2πf/c2 (Pekeris) or 0 (ideal).
    pub fn bottom_wavenumber(&self, f: f64) -> f64 {
        match self.kind {
            EnvironmentKind::Ideal => 0.0,
            EnvironmentKind::Pekeris => 2.0 * PI * f / self.bottom_speed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    /// S(f), one complex amplitude per frequency.
    pub spectrum: Vec<Complex64>,
    pub depth: f64,
    /// The constant factor Q.
    pub scale: f64,
}

impl SourceSpec {
    pub fn flat(n_freq: usize, depth: f64) -> Self {
        SourceSpec {
            spectrum: vec![Complex64::new(1.0, 0.0); n_freq],
            depth,
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    /// Sensor ranges in meters, strictly increasing.
    pub ranges: Vec<f64>,
    pub receiver_depth: f64,
}

impl ArrayGeometry {
    pub fn new(ranges: Vec<f64>, receiver_depth: f64) -> Result<Self> {
        let array = ArrayGeometry {
            ranges,
            receiver_depth,
        };
        array.validate()?;
        Ok(array)
    }

    /// `count` sensors at `first, first + spacing, ...`.
    pub fn uniform(first: f64, spacing: f64, count: usize, receiver_depth: f64) -> Self {
        ArrayGeometry {
            ranges: (0..count).map(|i| first + i as f64 * spacing).collect(),
            receiver_depth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ranges.is_empty() {
            return Err(Error::Config("array needs at least one sensor".into()));
        }
        if self.ranges.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::Config("sensor ranges must be positive".into()));
        }
        if self.ranges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("sensor ranges must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    /// Common spacing when the sensors are uniformly spaced.
    pub fn uniform_spacing(&self) -> Option<f64> {
        if self.ranges.len() < 2 {
            return None;
        }
        let dr = self.ranges[1] - self.ranges[0];
        let uniform = self
            .ranges
            .windows(2)
            .all(|w| ((w[1] - w[0]) - dr).abs() <= 1e-9 * dr);
        uniform.then_some(dr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    /// Horizontal wavenumber k_m in rad/m.
    pub wavenumber: f64,
    pub amplitude: Complex64,
}

/// Propagating modes at every frequency of an axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSet {
    pub freqs: Vec<f64>,
    /// `modes[f]` sorted by decreasing wavenumber.
    pub modes: Vec<Vec<Mode>>,
}

impl ModeSet {
    pub fn count(&self, f: usize) -> usize {
        self.modes[f].len()
    }

    /// Moves every wavenumber onto its nearest grid point.
    pub fn snap_to_grid(&self, grid: &WavenumberGrid) -> Result<ModeSet> {
        let mut modes = self.modes.clone();
        for (fi, row) in modes.iter_mut().enumerate() {
            for (mi, mode) in row.iter_mut().enumerate() {
                let k = grid
                    .nearest(mode.wavenumber)
                    .ok_or_else(|| out_of_grid(self.freqs[fi], mi, mode.wavenumber, grid))?;
                mode.wavenumber = grid.point(k);
            }
        }
        Ok(ModeSet {
            freqs: self.freqs.clone(),
            modes,
        })
    }

    /// Binary support: each mode marks the bin nearest to its wavenumber.
    pub fn support(&self, grid: &WavenumberGrid) -> Result<Support> {
        let mut support = Support::zeros(self.freqs.len(), grid.points);
        for (fi, row) in self.modes.iter().enumerate() {
            for (mi, mode) in row.iter().enumerate() {
                let k = grid
                    .nearest(mode.wavenumber)
                    .ok_or_else(|| out_of_grid(self.freqs[fi], mi, mode.wavenumber, grid))?;
                support.set(fi, k, true);
            }
        }
        Ok(support)
    }

    /// f-k coefficients `Q·S(f)·A_m` placed at the nearest grid bins. Modes
    /// sharing a bin add up.
    pub fn coefficients(&self, grid: &WavenumberGrid, source: &SourceSpec) -> Result<FkDiagram> {
        ensure_len("source spectrum", self.freqs.len(), source.spectrum.len())?;
        let mut z = FkDiagram::zeros(self.freqs.len(), grid.points);
        for (fi, row) in self.modes.iter().enumerate() {
            let gain = source.scale * source.spectrum[fi];
            for (mi, mode) in row.iter().enumerate() {
                let k = grid
                    .nearest(mode.wavenumber)
                    .ok_or_else(|| out_of_grid(self.freqs[fi], mi, mode.wavenumber, grid))?;
                z.values[fi * grid.points + k] += gain * mode.amplitude;
            }
        }
        Ok(z)
    }
}

fn out_of_grid(f: f64, mode: usize, k: f64, grid: &WavenumberGrid) -> Error {
    Error::Domain(format!(
        "mode {} at f = {f} Hz has wavenumber {k} rad/m outside the grid [{}, {}]",
        mode + 1,
        grid.k_min,
        grid.k_max
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub n_sensors: usize,
    pub freqs: Vec<f64>,
    /// Frequency-major blocks of `n_sensors` samples.
    pub y: Vec<Complex64>,
    /// σ_w², total variance per complex sample.
    pub noise_variance: f64,
}

impl Measurement {
    pub fn validate(&self) -> Result<()> {
        ensure_len("measurement samples", self.n_sensors * self.freqs.len(), self.y.len())?;
        if self.y.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::Domain("measurement contains non-finite samples".into()));
        }
        Ok(())
    }
}

/// Modal wavenumbers of the ideal guide (pressure-release surface, rigid
/// bottom): `sqrt(k² − ((m − ½)π/D)²)` for every positive radicand, descending.
pub fn ideal_wavenumbers(env: &EnvironmentSpec, f: f64) -> Vec<f64> {
    let k = env.water_wavenumber(f);
    let mut out = Vec::new();
    for m in 1.. {
        let gamma = (m as f64 - 0.5) * PI / env.depth;
        if gamma >= k {
            break;
        }
        out.push((k * k - gamma * gamma).sqrt());
    }
    out
}

/// Scaled Pekeris dispersion function `sin(γ1·D)·ρ1·γ2 + ρ2·γ1·cos(γ1·D)`.
///
/// Its zeros are those of `tan(γ1·D) + ρ2·γ1/(ρ1·γ2)` but it stays finite at
/// the poles of the tangent.
pub fn pekeris_dispersion(env: &EnvironmentSpec, f: f64, kr: f64) -> f64 {
    let k1 = env.water_wavenumber(f);
    let k2 = env.bottom_wavenumber(f);
    let g1 = (k1 * k1 - kr * kr).max(0.0).sqrt();
    let g2 = (kr * kr - k2 * k2).max(0.0).sqrt();
    let phase = g1 * env.depth;
    phase.sin() * env.water_density * g2 + env.bottom_density * g1 * phase.cos()
}

/// Residual `|tan(γ1·D)·ρ1·γ2 + ρ2·γ1|` of the dispersion relation at `kr`.
pub fn pekeris_residual(env: &EnvironmentSpec, f: f64, kr: f64) -> f64 {
    let k1 = env.water_wavenumber(f);
    let k2 = env.bottom_wavenumber(f);
    let g1 = (k1 * k1 - kr * kr).sqrt();
    let g2 = (kr * kr - k2 * k2).sqrt();
    ((g1 * env.depth).tan() * env.water_density * g2 + env.bottom_density * g1).abs()
}

/// Trapped-mode wavenumbers of the Pekeris guide, descending.
///
/// Mode m has its vertical wavenumber γ1 in `((m − ½)π/D, min(mπ/D, K))` with
/// `K² = k1² − k2²`; the dispersion function changes sign exactly once there,
/// so each root is bisected to machine precision.
pub fn pekeris_wavenumbers(env: &EnvironmentSpec, f: f64) -> Result<Vec<f64>> {
    if env.kind != EnvironmentKind::Pekeris {
        return Err(Error::Config("pekeris_wavenumbers needs a Pekeris environment".into()));
    }
    env.validate()?;
    if !(f > 0.0) {
        return Err(Error::Domain(format!("frequency must be positive, got {f}")));
    }
    let k1 = env.water_wavenumber(f);
    let k2 = env.bottom_wavenumber(f);
    let big_k = (k1 * k1 - k2 * k2).sqrt();
    let mut roots = Vec::new();
    for m in 1.. {
        let g_lo = (m as f64 - 0.5) * PI / env.depth;
        if g_lo >= big_k {
            break;
        }
        let g_hi = (m as f64 * PI / env.depth).min(big_k);
        // larger γ1 means smaller k_r
        let mut hi = (k1 * k1 - g_lo * g_lo).sqrt();
        let mut lo = if g_hi >= big_k {
            k2
        } else {
            (k1 * k1 - g_hi * g_hi).sqrt()
        };
        let mut f_lo = pekeris_dispersion(env, f, lo);
        for _ in 0..256 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let f_mid = pekeris_dispersion(env, f, mid);
            if f_mid == 0.0 {
                lo = mid;
                hi = mid;
                break;
            }
            if (f_mid > 0.0) == (f_lo > 0.0) {
                lo = mid;
                f_lo = f_mid;
            } else {
                hi = mid;
            }
        }
        let root = 0.5 * (lo + hi);
        // a root pinned to the bracket edge at γ2 = 0 is a mode at cutoff
        if root > k2 && root < k1 {
            roots.push(root);
        }
    }
    Ok(roots)
}

/// Modal wavenumbers for either environment kind.
pub fn wavenumbers(env: &EnvironmentSpec, f: f64) -> Result<Vec<f64>> {
    env.validate()?;
    if !(f > 0.0) {
        return Err(Error::Domain(format!("frequency must be positive, got {f}")));
    }
    match env.kind {
        EnvironmentKind::Ideal => Ok(ideal_wavenumbers(env, f)),
        EnvironmentKind::Pekeris => pekeris_wavenumbers(env, f),
    }
}

/// `A_m = sin(γ_m·zs)·sin(γ_m·zr)/sqrt(k_m)` with `γ_m = sqrt(k1² − k_m²)`.
pub fn mode_amplitudes(
    env: &EnvironmentSpec,
    f: f64,
    zs: f64,
    zr: f64,
    mode_k: &[f64],
) -> Result<Vec<Complex64>> {
    for (name, z) in [("source", zs), ("receiver", zr)] {
        if !(z > 0.0 && z < env.depth) {
            return Err(Error::Domain(format!(
                "{name} depth {z} m must lie inside the water column (0, {})",
                env.depth
            )));
        }
    }
    let k1 = env.water_wavenumber(f);
    mode_k
        .iter()
        .map(|&k| {
            if !(k > 0.0) {
                return Err(Error::Domain(format!("modal wavenumber must be positive, got {k}")));
            }
            let gamma = (k1 * k1 - k * k).max(0.0).sqrt();
            Ok(Complex64::new(
                (gamma * zs).sin() * (gamma * zr).sin() / k.sqrt(),
                0.0,
            ))
        })
        .collect()
}

/// Wavenumbers and amplitudes for every frequency.
pub fn compute_modes(
    env: &EnvironmentSpec,
    freqs: &[f64],
    source_depth: f64,
    receiver_depth: f64,
) -> Result<ModeSet> {
    let modes = freqs
        .iter()
        .map(|&f| {
            let ks = wavenumbers(env, f)?;
            let amps = mode_amplitudes(env, f, source_depth, receiver_depth, &ks)?;
            Ok(ks
                .into_iter()
                .zip(amps)
                .map(|(wavenumber, amplitude)| Mode {
                    wavenumber,
                    amplitude,
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModeSet {
        freqs: freqs.to_vec(),
        modes,
    })
}

/// Noiseless modal sum at every sensor and frequency.
pub fn modal_field(modes: &ModeSet, source: &SourceSpec, array: &ArrayGeometry) -> Result<Vec<Complex64>> {
    ensure_len("source spectrum", modes.freqs.len(), source.spectrum.len())?;
    array.validate()?;
    let mut y = Vec::with_capacity(array.len() * modes.freqs.len());
    for (fi, row) in modes.modes.iter().enumerate() {
        let gain = source.scale * source.spectrum[fi];
        for &r in &array.ranges {
            let sum: Complex64 = row
                .iter()
                .map(|m| m.amplitude * Complex64::from_polar(1.0, r * m.wavenumber))
                .sum();
            y.push(gain * sum);
        }
    }
    Ok(y)
}

/// Adds circular Gaussian noise of total variance `noise_variance` per
/// sample (each quadrature gets half).
pub fn add_noise(y: &mut [Complex64], noise_variance: f64, seed: u64) -> Result<()> {
    if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
        return Err(Error::Domain(format!(
            "noise variance must be nonnegative, got {noise_variance}"
        )));
    }
    if noise_variance == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, (noise_variance / 2.0).sqrt())
        .map_err(|e| Error::Domain(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in y.iter_mut() {
        let re = normal.sample(&mut rng);
        let im = normal.sample(&mut rng);
        *v += Complex64::new(re, im);
    }
    Ok(())
}

/// Measurement generated from an explicit mode set.
pub fn simulate_modes(
    modes: &ModeSet,
    source: &SourceSpec,
    array: &ArrayGeometry,
    noise_variance: f64,
    seed: u64,
) -> Result<Measurement> {
    let mut y = modal_field(modes, source, array)?;
    add_noise(&mut y, noise_variance, seed)?;
    Ok(Measurement {
        n_sensors: array.len(),
        freqs: modes.freqs.clone(),
        y,
        noise_variance,
    })
}

pub fn simulate_field(
    env: &EnvironmentSpec,
    source: &SourceSpec,
    array: &ArrayGeometry,
    freqs: &[f64],
    noise_variance: f64,
    seed: u64,
) -> Result<Measurement> {
    ensure_len("source spectrum", freqs.len(), source.spectrum.len())?;
    let modes = compute_modes(env, freqs, source.depth, array.receiver_depth)?;
    simulate_modes(&modes, source, array, noise_variance, seed)
}

/// Ground-truth support: bin (f, n) is active iff a mode at f falls nearest
/// to grid point n.
pub fn true_support(env: &EnvironmentSpec, freqs: &[f64], grid: &WavenumberGrid) -> Result<Support> {
    let mut support = Support::zeros(freqs.len(), grid.points);
    for (fi, &f) in freqs.iter().enumerate() {
        for (mi, k) in wavenumbers(env, f)?.into_iter().enumerate() {
            let n = grid.nearest(k).ok_or_else(|| out_of_grid(f, mi, k, grid))?;
            support.set(fi, n, true);
        }
    }
    Ok(support)
}

/// σ_w² giving `10·log10(‖y‖²/(len·σ_w²)) = snr_db` for a noiseless field.
pub fn noise_variance_for_snr(noiseless: &[Complex64], snr_db: f64) -> f64 {
    let power = noiseless.iter().map(|v| v.norm_sqr()).sum::<f64>() / noiseless.len() as f64;
    power / 10f64.powf(snr_db / 10.0)
}
