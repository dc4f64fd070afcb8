use std::path::{Path, PathBuf};

use fkpursuit::dictionary::{FkDiagram, Support};
use fkpursuit::eval::{compare_runs, gen_training_supports, write_summary_csv, RecoveryMetrics, RunRecord, SupportMetrics};
use fkpursuit::io::{self, GridMeta};
use fkpursuit::pursuit::{self, EstimateResult, ModelHyper};
use fkpursuit::rbm::{self, RbmParams, SupportDataset};
use fkpursuit::waveguide::{self, compute_modes, modal_field, noise_variance_for_snr, Measurement};

use crate::config::{ExperimentConfig, SEED_DATASET, SEED_SIMULATE};
use crate::error::{CliError, CliResult};
use crate::render;

pub const MEASUREMENT: &str = "measurement.fkms";
pub const MEASUREMENT_CSV: &str = "measurement.csv";
pub const TRUTH_SUPPORT: &str = "truth_support.fksp";
pub const TRUTH_COEFFS: &str = "truth_coeffs.fkzd";
pub const TRUTH_MODES: &str = "truth_modes.csv";
pub const DATASET: &str = "dataset.supp";
pub const RBM_PARAMS: &str = "rbm.rbm1";
pub const TRAINING_LOG: &str = "training_log.csv";
pub const SUMMARY: &str = "summary.csv";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn ensure_dir(config: &ExperimentConfig) -> CliResult<()> {
    std::fs::create_dir_all(&config.io.dir).map_err(io_err(&config.io.dir))
}

pub struct SimulateOutcome {
    pub noise_variance: f64,
    pub modes: usize,
}

pub fn simulate(config: &ExperimentConfig, snr_db: Option<f64>) -> CliResult<SimulateOutcome> {
    let env = config.environment()?;
    let freqs = config.frequencies()?;
    let source = config.source(freqs.len())?;
    let array = config.array()?;
    let grid = config.grid;
    let physical = compute_modes(&env, &freqs, source.depth, array.receiver_depth)?;
    let modes = if config.simulation.grid_aligned {
        physical.snap_to_grid(&grid)?
    } else {
        physical.clone()
    };
    let truth = physical.support(&grid)?;
    let coeffs = modes.snap_to_grid(&grid)?.coefficients(&grid, &source)?;
    let clean = modal_field(&modes, &source, &array)?;
    let noise_variance = match (snr_db.or(config.simulation.snr_db), config.simulation.noise_variance) {
        (Some(snr), _) => noise_variance_for_snr(&clean, snr),
        (None, Some(v)) => v,
        (None, None) => {
            return Err(CliError::Config(
                "simulation needs `snr_db` or `noise_variance` (or --snr-db)".into(),
            ))
        }
    };
    let mut y = clean;
    waveguide::add_noise(&mut y, noise_variance, config.io.seed.wrapping_add(SEED_SIMULATE))?;
    let measurement = Measurement {
        n_sensors: array.len(),
        freqs: freqs.clone(),
        y,
        noise_variance,
    };

    ensure_dir(config)?;
    let meta = GridMeta::new(&grid, freqs.len());
    io::write_measurement(&config.out(MEASUREMENT), &measurement)?;
    io::write_measurement_csv(&config.out(MEASUREMENT_CSV), &measurement)?;
    io::write_support(&config.out(TRUTH_SUPPORT), &truth, &meta)?;
    io::write_diagram(&config.out(TRUTH_COEFFS), &coeffs, &meta, &freqs)?;
    let mut rows = Vec::new();
    for (fi, row) in physical.modes.iter().enumerate() {
        for (mi, m) in row.iter().enumerate() {
            let bin = grid.nearest(m.wavenumber).expect("support construction checked the grid");
            rows.push(format!(
                "{fi},{},{},{},{bin},{},{}",
                freqs[fi],
                mi + 1,
                m.wavenumber,
                m.amplitude.re,
                m.amplitude.im
            ));
        }
    }
    io::write_csv(
        &config.out(TRUTH_MODES),
        "f_index,freq_hz,mode,wavenumber,grid_index,amplitude_re,amplitude_im",
        rows,
    )?;
    Ok(SimulateOutcome {
        noise_variance,
        modes: truth.count(),
    })
}

pub fn make_dataset(config: &ExperimentConfig, count: Option<usize>, out: Option<PathBuf>, csv: bool) -> CliResult<SupportDataset> {
    let sampler = config
        .sampler
        .ok_or_else(|| CliError::Config("make-dataset needs a [sampler] section".into()))?;
    let freqs = config.frequencies()?;
    let count = count.unwrap_or(config.dataset.count);
    let dataset = gen_training_supports(
        &sampler,
        &freqs,
        &config.grid,
        count,
        config.io.seed.wrapping_add(SEED_DATASET),
    )?;
    ensure_dir(config)?;
    let path = out.unwrap_or_else(|| config.out(DATASET));
    dataset.save(&path)?;
    if csv {
        dataset.save_csv(&path.with_extension("csv"))?;
    }
    Ok(dataset)
}

pub fn train(config: &ExperimentConfig, dataset: Option<PathBuf>, out: Option<PathBuf>) -> CliResult<Vec<rbm::EpochLog>> {
    let freqs = config.frequencies()?;
    let path = dataset.unwrap_or_else(|| config.out(DATASET));
    let data = SupportDataset::load(&path)?;
    let meta = GridMeta::new(&config.grid, freqs.len());
    if data.n_grid != meta.n_grid || data.n_freq != meta.n_freq {
        return Err(fkpursuit::Error::Dimension {
            what: format!("dataset {} (grid points x frequencies) vs config", path.display()),
            expected: meta.n_coeffs(),
            found: data.n_visible(),
        }
        .into());
    }
    let hidden = config.rbm.hidden.unwrap_or(freqs.len());
    let training = config.training();
    training.validate()?;
    let (params, log) = rbm::train(&data, hidden, &training)?;
    ensure_dir(config)?;
    params.save(&out.unwrap_or_else(|| config.out(RBM_PARAMS)), &meta)?;
    rbm::write_training_log(&config.out(TRAINING_LOG), &log)?;
    Ok(log)
}

pub enum PriorChoice {
    Rbm(PathBuf),
    Bernoulli(f64),
}

pub fn estimate(config: &ExperimentConfig, measurement: Option<PathBuf>, prior: PriorChoice, prefix: &str) -> CliResult<EstimateResult> {
    let freqs = config.frequencies()?;
    let dict = config.dictionary()?;
    let path = measurement.unwrap_or_else(|| config.out(MEASUREMENT));
    let m = io::read_measurement(&path)?;
    m.validate()?;
    if m.n_sensors != dict.n_sensors() {
        return Err(fkpursuit::Error::Dimension {
            what: format!("sensors in {} vs config array", path.display()),
            expected: dict.n_sensors(),
            found: m.n_sensors,
        }
        .into());
    }
    if m.freqs.len() != freqs.len() || m.freqs.iter().zip(&freqs).any(|(a, b)| (a - b).abs() > 1e-9 * b.abs()) {
        return Err(CliError::Config(format!(
            "frequencies in {} do not match the config frequency axis",
            path.display()
        )));
    }
    let sigma_w_sq = config.solver.sigma_w_sq.unwrap_or(m.noise_variance);
    let sigma_x_sq = config
        .solver
        .sigma_x_sq
        .ok_or_else(|| CliError::Config("solver.sigma_x_sq must be set".into()))?;
    let hyper = ModelHyper { sigma_w_sq, sigma_x_sq };
    hyper.validate()?;
    let params = match prior {
        PriorChoice::Rbm(p) => RbmParams::load_for(&p, dict.n_grid(), dict.n_freq())?,
        PriorChoice::Bernoulli(p) => RbmParams::bernoulli(dict.n_coeffs(), p)?,
    };
    let result = pursuit::run(&m.y, &dict, &params, &hyper, &config.solver.options)?;

    ensure_dir(config)?;
    let meta = GridMeta::new(&config.grid, freqs.len());
    let z = FkDiagram {
        n_freq: freqs.len(),
        n_grid: dict.n_grid(),
        values: result.z_hat.clone(),
    };
    io::write_diagram(&config.out(&format!("{prefix}_coeffs.fkzd")), &z, &meta, &freqs)?;
    let support = Support::from_bits(freqs.len(), dict.n_grid(), result.s_hat.clone())?;
    io::write_support(&config.out(&format!("{prefix}_support.fksp")), &support, &meta)?;
    let grid = dict.grid();
    io::write_csv(
        &config.out(&format!("{prefix}_qs.csv")),
        "f_index,freq_hz,k_index,wavenumber,qs,s_hat",
        (0..dict.n_coeffs()).map(|n| {
            let (f, k) = dict.split_index(n);
            format!("{f},{},{k},{},{},{}", freqs[f], grid.point(k), result.qs[n], u8::from(result.s_hat[n]))
        }),
    )?;
    io::write_csv(
        &config.out(&format!("{prefix}_qh.csv")),
        "l,qh",
        result.qh.iter().enumerate().map(|(l, q)| format!("{l},{q}")),
    )?;
    io::write_csv(
        &config.out(&format!("{prefix}_trace.csv")),
        "sweep,free_energy,max_delta_qs",
        result.free_energy_trace.iter().enumerate().map(|(i, f)| {
            let delta = if i == 0 { f64::NAN } else { result.delta_trace[i - 1] };
            format!("{i},{f},{delta}")
        }),
    )?;
    Ok(result)
}

const METRICS_HEADER: &str = "method,snr_db,tp,fp,fn,precision,recall,f1,hamming,tol_tp,tol_fp,tol_fn,tol_precision,tol_recall,tol_f1,tol_hamming,nmse,wavenumber_error";

fn support_fields(m: &SupportMetrics) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        m.true_positives, m.false_positives, m.false_negatives, m.precision, m.recall, m.f1, m.hamming
    )
}

pub fn metrics_row(record: &RunRecord) -> String {
    let opt = |v: Option<f64>| v.map_or("nan".to_string(), |x| x.to_string());
    format!(
        "{},{},{},{},{},{}",
        record.method,
        record.snr_db,
        support_fields(&record.metrics.strict),
        support_fields(&record.metrics.tolerant),
        opt(record.metrics.nmse),
        opt(record.metrics.wavenumber_error)
    )
}

fn parse_metrics_row(line: &str, source: &Path) -> CliResult<RunRecord> {
    let bad = || CliError::Config(format!("malformed metrics row in {}: `{line}`", source.display()));
    let cols: Vec<&str> = line.split(',').collect();
    if cols.len() != METRICS_HEADER.split(',').count() {
        return Err(bad());
    }
    let num = |i: usize| cols[i].parse::<f64>().map_err(|_| bad());
    let count = |i: usize| cols[i].parse::<usize>().map_err(|_| bad());
    let support = |o: usize| -> CliResult<SupportMetrics> {
        Ok(SupportMetrics {
            true_positives: count(o)?,
            false_positives: count(o + 1)?,
            false_negatives: count(o + 2)?,
            precision: num(o + 3)?,
            recall: num(o + 4)?,
            f1: num(o + 5)?,
            hamming: count(o + 6)?,
        })
    };
    let opt = |i: usize| -> CliResult<Option<f64>> { num(i).map(|v| (!v.is_nan()).then_some(v)) };
    Ok(RunRecord {
        method: cols[0].to_string(),
        snr_db: num(1)?,
        metrics: RecoveryMetrics {
            strict: support(2)?,
            tolerant: support(9)?,
            nmse: opt(16)?,
            wavenumber_error: opt(17)?,
        },
    })
}

pub fn read_metrics(path: &Path) -> CliResult<Vec<RunRecord>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(CliError::Config(format!("{} is not a metrics CSV", path.display())));
    }
    lines.filter(|l| !l.is_empty()).map(|l| parse_metrics_row(l, path)).collect()
}

fn read_true_wavenumbers(path: &Path, n_freq: usize) -> CliResult<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = vec![Vec::new(); n_freq];
    for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
        let cols: Vec<&str> = line.split(',').collect();
        let bad = || CliError::Config(format!("malformed mode row in {}: `{line}`", path.display()));
        let f: usize = cols.first().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let k: f64 = cols.get(3).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        out.get_mut(f).ok_or_else(bad)?.push(k);
    }
    Ok(out)
}

pub struct EvaluateInputs {
    pub truth: PathBuf,
    pub truth_coeffs: Option<PathBuf>,
    pub truth_modes: Option<PathBuf>,
    pub estimate: PathBuf,
    pub estimate_coeffs: Option<PathBuf>,
    pub method: String,
    pub snr_db: f64,
}

pub fn evaluate(inputs: &EvaluateInputs, out: &Path) -> CliResult<RunRecord> {
    let (truth, truth_meta) = io::read_support(&inputs.truth)?;
    let (estimate, est_meta) = io::read_support(&inputs.estimate)?;
    if truth_meta != est_meta {
        return Err(CliError::Config(format!(
            "grid metadata differs between {} and {}",
            inputs.truth.display(),
            inputs.estimate.display()
        )));
    }
    let coeffs = match (&inputs.truth_coeffs, &inputs.estimate_coeffs) {
        (Some(t), Some(e)) => Some((io::read_diagram(t)?.0, io::read_diagram(e)?.0)),
        _ => None,
    };
    let grid = fkpursuit::dictionary::WavenumberGrid::new(truth_meta.k_min, truth_meta.k_max, truth_meta.n_grid)?;
    let true_k = inputs
        .truth_modes
        .as_ref()
        .map(|p| read_true_wavenumbers(p, truth_meta.n_freq))
        .transpose()?;
    let metrics = RecoveryMetrics::evaluate(
        &estimate,
        &truth,
        coeffs.as_ref().map(|(t, e)| (e.values.as_slice(), t.values.as_slice())),
        true_k.as_ref().map(|k| (k.as_slice(), &grid)),
    )?;
    let record = RunRecord {
        method: inputs.method.clone(),
        snr_db: inputs.snr_db,
        metrics,
    };
    io::write_csv(out, METRICS_HEADER, [metrics_row(&record)])?;
    Ok(record)
}

pub fn compare(inputs: &[PathBuf], out: &Path) -> CliResult<usize> {
    let mut records = Vec::new();
    for p in inputs {
        records.extend(read_metrics(p)?);
    }
    let rows = compare_runs(&records);
    write_summary_csv(out, &rows)?;
    Ok(rows.len())
}

/// Paths listed one per line; blank lines and `#` comments are skipped.
/// Relative entries resolve against the manifest's directory.
pub fn read_manifest(path: &Path) -> CliResult<Vec<PathBuf>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect())
}

pub fn render(input: &Path, image: &Path, csv: &Path, db: bool, range_db: f64) -> CliResult<()> {
    let magic = {
        let bytes = std::fs::read(input).map_err(io_err(input))?;
        bytes.get(..4).map(|m| [m[0], m[1], m[2], m[3]])
    };
    let (values, meta) = match magic.as_ref() {
        Some(m) if m == io::MAGIC_DIAGRAM => {
            let (z, meta, _) = io::read_diagram(input)?;
            (z.values.iter().map(|v| v.norm()).collect::<Vec<f64>>(), meta)
        }
        Some(m) if m == io::MAGIC_SUPPORT => {
            let (s, meta) = io::read_support(input)?;
            (s.bits.iter().map(|&b| f64::from(u8::from(b))).collect(), meta)
        }
        _ => {
            return Err(fkpursuit::Error::Format(format!(
                "{} is neither an f-k diagram nor a support file",
                input.display()
            ))
            .into())
        }
    };
    let pixels = render::pixels(&values, db, range_db);
    render::write_pgm(image, meta.n_grid, meta.n_freq, &pixels)?;
    let step = if meta.n_grid > 1 {
        (meta.k_max - meta.k_min) / (meta.n_grid - 1) as f64
    } else {
        0.0
    };
    io::write_csv(
        csv,
        "f_index,k_index,wavenumber,value,pixel",
        (0..values.len()).map(|i| {
            let (f, k) = (i / meta.n_grid, i % meta.n_grid);
            format!("{f},{k},{},{},{}", meta.k_min + step * k as f64, values[i], pixels[i])
        }),
    )?;
    Ok(())
}
