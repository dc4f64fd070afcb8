//! Recovery metrics, the exhaustive MAP oracle, training-set generation and
//! run aggregation.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dictionary::{BlockDictionary, InnerProduct, Support, WavenumberGrid};
use crate::error::{ensure_len, Error, Result};
use crate::exec::Exec;
use crate::io;
use crate::math::{cholesky_hermitian, cholesky_solve, norm_sqr, softplus};
use crate::pursuit::ModelHyper;
use crate::rbm::{bits_from_index, RbmParams, SupportDataset};
use crate::waveguide::{true_support, EnvironmentSpec};

/// Confusion-matrix summary of a binary support estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportMetrics {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub hamming: usize,
}

impl SupportMetrics {
    /// Precision is 1 when nothing is predicted and nothing is true, 0 when
    /// nothing is predicted but something is true; recall likewise.
    fn from_counts(tp_hat: usize, n_hat: usize, tp_true: usize, n_true: usize, hamming: usize) -> Self {
        let ratio = |num: usize, den: usize, other_empty: bool| {
            if den == 0 {
                if other_empty {
                    1.0
                } else {
                    0.0
                }
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp_hat, n_hat, n_true == 0);
        let recall = ratio(tp_true, n_true, n_hat == 0);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        SupportMetrics {
            true_positives: tp_true,
            false_positives: n_hat - tp_hat,
            false_negatives: n_true - tp_true,
            precision,
            recall,
            f1,
            hamming,
        }
    }
}

/// Strict metrics over flat supports.
pub fn support_metrics(s_hat: &[bool], s_true: &[bool]) -> Result<SupportMetrics> {
    ensure_len("estimated support", s_true.len(), s_hat.len())?;
    let tp = s_hat.iter().zip(s_true).filter(|(a, b)| **a && **b).count();
    let n_hat = s_hat.iter().filter(|&&b| b).count();
    let n_true = s_true.iter().filter(|&&b| b).count();
    let hamming = s_hat.iter().zip(s_true).filter(|(a, b)| a != b).count();
    Ok(SupportMetrics::from_counts(tp, n_hat, tp, n_true, hamming))
}

fn near(row: &[bool], k: usize) -> bool {
    let lo = k.saturating_sub(1);
    let hi = (k + 1).min(row.len() - 1);
    row[lo..=hi].iter().any(|&b| b)
}

/// Metrics where an active bin counts as matched if the other support has an
/// active bin within ±1 grid bin at the same frequency. `hamming` counts
/// unmatched bins on both sides.
pub fn tolerant_metrics(s_hat: &Support, s_true: &Support) -> Result<SupportMetrics> {
    ensure_len("estimated support frequencies", s_true.n_freq, s_hat.n_freq)?;
    ensure_len("estimated support grid", s_true.n_grid, s_hat.n_grid)?;
    let (mut tp_hat, mut n_hat, mut tp_true, mut n_true) = (0, 0, 0, 0);
    for f in 0..s_true.n_freq {
        let (hat, truth) = (s_hat.row(f), s_true.row(f));
        for k in 0..s_true.n_grid {
            if hat[k] {
                n_hat += 1;
                tp_hat += usize::from(near(truth, k));
            }
            if truth[k] {
                n_true += 1;
                tp_true += usize::from(near(hat, k));
            }
        }
    }
    let hamming = (n_hat - tp_hat) + (n_true - tp_true);
    Ok(SupportMetrics::from_counts(tp_hat, n_hat, tp_true, n_true, hamming))
}

/// ‖ẑ − z‖²/‖z‖². Zero iff ẑ = z; infinite when z = 0 ≠ ẑ.
pub fn nmse(z_hat: &[Complex64], z_true: &[Complex64]) -> Result<f64> {
    ensure_len("estimated coefficients", z_true.len(), z_hat.len())?;
    let err: f64 = z_hat.iter().zip(z_true).map(|(a, b)| (a - b).norm_sqr()).sum();
    let reference = norm_sqr(z_true);
    Ok(if err == 0.0 {
        0.0
    } else if reference == 0.0 {
        f64::INFINITY
    } else {
        err / reference
    })
}

/// Mean |k̂ − k| over true modes that have an estimated bin within ±1 bin of
/// their nearest grid point. `true_k[f]` lists the modal wavenumbers at
/// frequency f. `None` when no mode is matched.
pub fn wavenumber_error(s_hat: &Support, true_k: &[Vec<f64>], grid: &WavenumberGrid) -> Result<Option<f64>> {
    ensure_len("true wavenumber rows", s_hat.n_freq, true_k.len())?;
    ensure_len("estimated support grid", grid.points, s_hat.n_grid)?;
    let mut total = 0.0;
    let mut matched = 0usize;
    for (f, ks) in true_k.iter().enumerate() {
        let row = s_hat.row(f);
        for &k in ks {
            let Some(center) = grid.nearest(k) else { continue };
            let lo = center.saturating_sub(1);
            let hi = (center + 1).min(grid.points - 1);
            let best = (lo..=hi)
                .filter(|&j| row[j])
                .map(|j| (grid.point(j) - k).abs())
                .fold(f64::INFINITY, f64::min);
            if best.is_finite() {
                total += best;
                matched += 1;
            }
        }
    }
    Ok((matched > 0).then(|| total / matched as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryMetrics {
    pub strict: SupportMetrics,
    pub tolerant: SupportMetrics,
    pub nmse: Option<f64>,
    pub wavenumber_error: Option<f64>,
}

impl RecoveryMetrics {
    pub fn evaluate(
        s_hat: &Support,
        s_true: &Support,
        coefficients: Option<(&[Complex64], &[Complex64])>,
        wavenumbers: Option<(&[Vec<f64>], &WavenumberGrid)>,
    ) -> Result<Self> {
        Ok(RecoveryMetrics {
            strict: support_metrics(&s_hat.bits, &s_true.bits)?,
            tolerant: tolerant_metrics(s_hat, s_true)?,
            nmse: coefficients.map(|(zh, zt)| nmse(zh, zt)).transpose()?,
            wavenumber_error: match wavenumbers {
                Some((ks, grid)) => wavenumber_error(s_hat, ks, grid)?,
                None => None,
            },
        })
    }

    pub const FIELDS: [&'static str; 9] = [
        "precision",
        "recall",
        "f1",
        "hamming",
        "tolerant_precision",
        "tolerant_recall",
        "tolerant_f1",
        "nmse",
        "wavenumber_error",
    ];

    /// Values in the order of [`RecoveryMetrics::FIELDS`]; missing values are NaN.
    pub fn values(&self) -> [f64; 9] {
        [
            self.strict.precision,
            self.strict.recall,
            self.strict.f1,
            self.strict.hamming as f64,
            self.tolerant.precision,
            self.tolerant.recall,
            self.tolerant.f1,
            self.nmse.unwrap_or(f64::NAN),
            self.wavenumber_error.unwrap_or(f64::NAN),
        ]
    }
}

pub const MAX_BRUTE_FORCE_VISIBLE: usize = 14;
pub const MAX_BRUTE_FORCE_HIDDEN: usize = 8;

const ENUMERATION_CHUNK: usize = 256;

/// Precomputed block quantities for repeated likelihood evaluation.
struct BlockLikelihood {
    n_grid: usize,
    n_sensors: usize,
    /// Gram matrix of the block atoms, N×N row-major.
    gram: Vec<Complex64>,
    /// Per frequency: D_blockᴴ y_f.
    corr: Vec<Complex64>,
    /// Per frequency: ‖y_f‖².
    energy: Vec<f64>,
    hyper: ModelHyper,
}

impl BlockLikelihood {
    fn new(y: &[Complex64], dict: &BlockDictionary, hyper: &ModelHyper) -> Self {
        let n = dict.n_grid();
        let mut gram = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                gram[i * n + j] = crate::math::dot_h(dict.block_atom(i), dict.block_atom(j));
            }
        }
        let corr = (0..dict.n_coeffs())
            .map(|idx| dict.correlate(idx, y, InnerProduct::Hermitian))
            .collect();
        let energy = (0..dict.n_freq()).map(|f| norm_sqr(&y[dict.obs_block(f)])).collect();
        BlockLikelihood {
            n_grid: n,
            n_sensors: dict.n_sensors(),
            gram,
            corr,
            energy,
            hyper: *hyper,
        }
    }

    /// log CN(y; 0, σw² I + σx² D_s D_sᴴ), block by block, through the
    /// determinant lemma and Woodbury identity on the active atoms.
    fn log_likelihood(&self, s: &[bool]) -> f64 {
        let sw = self.hyper.sigma_w_sq;
        let ratio = sw / self.hyper.sigma_x_sq;
        let l = self.n_sensors as f64;
        let mut total = 0.0;
        let mut active = Vec::with_capacity(self.n_grid);
        for (f, &energy) in self.energy.iter().enumerate() {
            active.clear();
            active.extend((0..self.n_grid).filter(|&k| s[f * self.n_grid + k]));
            let m = active.len();
            let mut log_det = l * sw.ln();
            let mut quad = energy;
            if m > 0 {
                let mut mat = vec![Complex64::new(0.0, 0.0); m * m];
                for (i, &ki) in active.iter().enumerate() {
                    for (j, &kj) in active.iter().enumerate() {
                        mat[i * m + j] = self.gram[ki * self.n_grid + kj];
                    }
                    mat[i * m + i] += ratio;
                }
                let chol = cholesky_hermitian(&mat, m).expect("Gram plus ridge is positive definite");
                let c: Vec<Complex64> = active.iter().map(|&k| self.corr[f * self.n_grid + k]).collect();
                let x = cholesky_solve(&chol, m, &c);
                let diag_log: f64 = (0..m).map(|i| chol[i * m + i].re.ln()).sum();
                log_det += 2.0 * diag_log - m as f64 * ratio.ln();
                quad -= c.iter().zip(&x).map(|(a, b)| (a.conj() * b).re).sum::<f64>();
            }
            total += -l * PI.ln() - log_det - quad / sw;
        }
        total
    }
}

/// log p(s) + log p(y|s) up to a constant independent of s.
pub fn log_posterior_unnormalized(
    y: &[Complex64],
    dict: &BlockDictionary,
    prior: &RbmParams,
    hyper: &ModelHyper,
    s: &[bool],
) -> Result<f64> {
    ensure_len("measurement", dict.n_obs(), y.len())?;
    ensure_len("prior visible units", dict.n_coeffs(), prior.n_visible())?;
    ensure_len("support", dict.n_coeffs(), s.len())?;
    hyper.validate()?;
    let lik = BlockLikelihood::new(y, dict, hyper);
    Ok(lik.log_likelihood(s) + log_prior_unnormalized(prior, s))
}

/// b·s + Σ_l softplus(a_l + (Wᵀs)_l).
fn log_prior_unnormalized(prior: &RbmParams, s: &[bool]) -> f64 {
    let visible: f64 = prior
        .visible_bias
        .iter()
        .zip(s)
        .filter(|(_, &on)| on)
        .map(|(b, _)| b)
        .sum();
    visible + prior.hidden_input(s).into_iter().map(softplus).sum::<f64>()
}

pub fn brute_force_map(y: &[Complex64], dict: &BlockDictionary, prior: &RbmParams, hyper: &ModelHyper) -> Result<Vec<bool>> {
    brute_force_map_with(y, dict, prior, hyper, Exec::default())
}

/// Exhaustive argmax over all 2^NF supports. Ties go to the smallest
/// support index.
pub fn brute_force_map_with(
    y: &[Complex64],
    dict: &BlockDictionary,
    prior: &RbmParams,
    hyper: &ModelHyper,
    exec: Exec,
) -> Result<Vec<bool>> {
    ensure_len("measurement", dict.n_obs(), y.len())?;
    ensure_len("prior visible units", dict.n_coeffs(), prior.n_visible())?;
    prior.validate()?;
    hyper.validate()?;
    let nf = dict.n_coeffs();
    if nf > MAX_BRUTE_FORCE_VISIBLE || prior.n_hidden() > MAX_BRUTE_FORCE_HIDDEN {
        return Err(Error::SizeBound(format!(
            "exhaustive MAP needs NF <= {MAX_BRUTE_FORCE_VISIBLE} and P <= {MAX_BRUTE_FORCE_HIDDEN}, got NF = {nf}, P = {}",
            prior.n_hidden()
        )));
    }
    let lik = BlockLikelihood::new(y, dict, hyper);
    let total = 1usize << nf;
    let chunks = total.div_ceil(ENUMERATION_CHUNK);
    let best = exec.map_range(chunks, |c| {
        let start = c * ENUMERATION_CHUNK;
        let end = (start + ENUMERATION_CHUNK).min(total);
        let mut best = (f64::NEG_INFINITY, start);
        for index in start..end {
            let s = bits_from_index(index, nf);
            let value = lik.log_likelihood(&s) + log_prior_unnormalized(prior, &s);
            if value > best.0 {
                best = (value, index);
            }
        }
        best
    });
    let (_, index) = best
        .into_iter()
        .fold((f64::NEG_INFINITY, 0), |acc, b| if b.0 > acc.0 { b } else { acc });
    Ok(bits_from_index(index, nf))
}

/// Uniform ranges for random Pekeris environments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSampler {
    pub depth: [f64; 2],
    pub water_speed: [f64; 2],
    pub bottom_speed: [f64; 2],
    pub bottom_density: [f64; 2],
    pub water_density: f64,
}

impl EnvSampler {
    /// A sampler that always returns `env`.
    pub fn fixed(env: &EnvironmentSpec) -> Self {
        EnvSampler {
            depth: [env.depth; 2],
            water_speed: [env.water_speed; 2],
            bottom_speed: [env.bottom_speed; 2],
            bottom_density: [env.bottom_density; 2],
            water_density: env.water_density,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [
            ("depth", self.depth),
            ("water_speed", self.water_speed),
            ("bottom_speed", self.bottom_speed),
            ("bottom_density", self.bottom_density),
        ] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::Config(format!(
                    "sampler range {name} = [{lo}, {hi}] must satisfy 0 < lo <= hi"
                )));
            }
        }
        if self.bottom_speed[0] <= self.water_speed[1] {
            return Err(Error::Config(format!(
                "sampler bottom_speed lower bound {} must exceed water_speed upper bound {}",
                self.bottom_speed[0], self.water_speed[1]
            )));
        }
        if !(self.water_density > 0.0) {
            return Err(Error::Config("sampler water_density must be positive".into()));
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> EnvironmentSpec {
        let mut draw = |[lo, hi]: [f64; 2]| if lo == hi { lo } else { rng.random_range(lo..hi) };
        let depth = draw(self.depth);
        let water_speed = draw(self.water_speed);
        let bottom_speed = draw(self.bottom_speed);
        let bottom_density = draw(self.bottom_density);
        EnvironmentSpec::pekeris(depth, water_speed, bottom_speed, self.water_density, bottom_density)
    }

    pub fn describe(&self) -> String {
        format!(
            "pekeris D=[{}, {}] c1=[{}, {}] c2=[{}, {}] rho1={} rho2=[{}, {}]",
            self.depth[0],
            self.depth[1],
            self.water_speed[0],
            self.water_speed[1],
            self.bottom_speed[0],
            self.bottom_speed[1],
            self.water_density,
            self.bottom_density[0],
            self.bottom_density[1]
        )
    }
}

pub const MAX_REDRAWS: usize = 100;

/// Seeded stream for sample `index` of a generation run.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn draw_support(sampler: &EnvSampler, freqs: &[f64], grid: &WavenumberGrid, seed: u64, index: usize) -> Result<Vec<bool>> {
    let mut rng = sample_rng(seed, index);
    for _ in 0..MAX_REDRAWS {
        let env = sampler.sample(&mut rng);
        match true_support(&env, freqs, grid) {
            Ok(s) => return Ok(s.bits),
            Err(Error::Domain(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Domain(format!(
        "sample {index}: no environment with all modes inside the grid [{}, {}] after {MAX_REDRAWS} draws",
        grid.k_min, grid.k_max
    )))
}

pub fn gen_training_supports(
    sampler: &EnvSampler,
    freqs: &[f64],
    grid: &WavenumberGrid,
    count: usize,
    seed: u64,
) -> Result<SupportDataset> {
    gen_training_supports_with(sampler, freqs, grid, count, seed, Exec::default())
}

/// Draws `count` environments and returns their true supports. Sample i uses
/// its own stream, so the result does not depend on `exec`.
pub fn gen_training_supports_with(
    sampler: &EnvSampler,
    freqs: &[f64],
    grid: &WavenumberGrid,
    count: usize,
    seed: u64,
    exec: Exec,
) -> Result<SupportDataset> {
    sampler.validate()?;
    grid.validate()?;
    if count == 0 {
        return Err(Error::Config("dataset count must be at least 1".into()));
    }
    let samples = exec
        .map_range(count, |i| draw_support(sampler, freqs, grid, seed, i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(SupportDataset {
        n_freq: freqs.len(),
        n_grid: grid.points,
        k_min: grid.k_min,
        k_max: grid.k_max,
        samples,
        provenance: Some(format!("{} seed={seed} count={count}", sampler.describe())),
    })
}

/// One evaluated run: a method at an SNR with its metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub snr_db: f64,
    pub metrics: RecoveryMetrics,
}

/// Mean and sample standard deviation of every metric for one
/// (method, SNR) group. NaN values (missing metrics) are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub snr_db: f64,
    pub runs: usize,
    pub mean: [f64; 9],
    pub std: [f64; 9],
}

/// Groups records by (method, SNR) in order of first appearance.
pub fn compare_runs(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut keys: Vec<(&str, f64)> = Vec::new();
    for r in records {
        if !keys.iter().any(|(m, s)| *m == r.method && *s == r.snr_db) {
            keys.push((&r.method, r.snr_db));
        }
    }
    keys.into_iter()
        .map(|(method, snr)| {
            let group: Vec<[f64; 9]> = records
                .iter()
                .filter(|r| r.method == method && r.snr_db == snr)
                .map(|r| r.metrics.values())
                .collect();
            let mut mean = [f64::NAN; 9];
            let mut std = [f64::NAN; 9];
            for j in 0..9 {
                let vals: Vec<f64> = group.iter().map(|v| v[j]).filter(|v| !v.is_nan()).collect();
                (mean[j], std[j]) = mean_std(&vals);
            }
            SummaryRow {
                method: method.to_string(),
                snr_db: snr,
                runs: group.len(),
                mean,
                std,
            }
        })
        .collect()
}

/// Mean and sample standard deviation (0 for a single value, NaN for none).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    match values.len() {
        0 => (f64::NAN, f64::NAN),
        1 => (values[0], 0.0),
        n => {
            let mean = values.iter().sum::<f64>() / n as f64;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (mean, var.sqrt())
        }
    }
}

/// Columns: method, snr_db, runs, then `<metric>_mean,<metric>_std` for every
/// entry of [`RecoveryMetrics::FIELDS`].
pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut header = String::from("method,snr_db,runs");
    for name in RecoveryMetrics::FIELDS {
        header.push_str(&format!(",{name}_mean,{name}_std"));
    }
    io::write_csv(
        path,
        &header,
        rows.iter().map(|r| {
            let mut line = format!("{},{},{}", r.method, r.snr_db, r.runs);
            for j in 0..9 {
                line.push_str(&format!(",{},{}", r.mean[j], r.std[j]));
            }
            line
        }),
    )
}
