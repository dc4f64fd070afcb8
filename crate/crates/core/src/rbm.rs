//! Restricted Boltzmann machine over binary f-k supports.
//!
//! `p(s, h) ∝ exp(aᵀh + bᵀs + sᵀWh)` with visible units `s` laid out in the
//! frequency-major flat index of the dictionary and `P` hidden units `h`.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::exec::Exec;
use crate::io::{self, GridMeta, MAGIC_DATASET, MAGIC_RBM};
use crate::math::{log_sum_exp, logistic, logit, softplus};

/// Largest visible or hidden layer enumerated by the exact oracles.
pub const MAX_ENUMERATION: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct RbmParams {
    /// a, one bias per hidden unit.
    pub hidden_bias: Vec<f64>,
    /// b, one bias per visible unit.
    pub visible_bias: Vec<f64>,
    /// W, visible-major: `weights[n * P + l]`.
    pub weights: Vec<f64>,
}

impl RbmParams {
    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        RbmParams {
            hidden_bias: vec![0.0; n_hidden],
            visible_bias: vec![0.0; n_visible],
            weights: vec![0.0; n_visible * n_hidden],
        }
    }

    /// Independent Bernoulli(p) prior: no hidden units, `b_n = logit(p)`.
    pub fn bernoulli(n_visible: usize, p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!(
                "Bernoulli probability must lie in (0, 1), got {p}"
            )));
        }
        let mut params = RbmParams::zeros(n_visible, 0);
        params.visible_bias.fill(logit(p));
        Ok(params)
    }

    pub fn n_visible(&self) -> usize {
        self.visible_bias.len()
    }

    pub fn n_hidden(&self) -> usize {
        self.hidden_bias.len()
    }

    pub fn weight(&self, n: usize, l: usize) -> f64 {
        self.weights[n * self.n_hidden() + l]
    }

    pub fn weight_row(&self, n: usize) -> &[f64] {
        let p = self.n_hidden();
        &self.weights[n * p..(n + 1) * p]
    }

    pub fn validate(&self) -> Result<()> {
        ensure_len(
            "RBM weights",
            self.n_visible() * self.n_hidden(),
            self.weights.len(),
        )?;
        let finite = self
            .hidden_bias
            .iter()
            .chain(&self.visible_bias)
            .chain(&self.weights)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain("RBM parameters must be finite".into()));
        }
        Ok(())
    }

    /// `−(aᵀh + bᵀs + sᵀWh)`.
    pub fn energy(&self, s: &[bool], h: &[bool]) -> f64 {
        let mut e = 0.0;
        for (l, &hl) in h.iter().enumerate() {
            if hl {
                e += self.hidden_bias[l];
            }
        }
        for (n, &sn) in s.iter().enumerate() {
            if sn {
                e += self.visible_bias[n];
                let row = self.weight_row(n);
                e += h.iter().zip(row).filter(|(&hl, _)| hl).map(|(_, w)| w).sum::<f64>();
            }
        }
        -e
    }

    /// `a + Wᵀs` for a binary visible vector.
    pub fn hidden_input(&self, s: &[bool]) -> Vec<f64> {
        let mut out = self.hidden_bias.clone();
        for (n, _) in s.iter().enumerate().filter(|(_, &sn)| sn) {
            for (o, w) in out.iter_mut().zip(self.weight_row(n)) {
                *o += w;
            }
        }
        out
    }

    /// `a + Wᵀq` for real-valued visible activations.
    pub fn hidden_input_mean(&self, q: &[f64]) -> Vec<f64> {
        let mut out = self.hidden_bias.clone();
        for (n, &qn) in q.iter().enumerate() {
            if qn == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.weight_row(n)) {
                *o += w * qn;
            }
        }
        out
    }

    /// `b_n + Σ_l w_nl·q_l` for a single visible unit.
    pub fn visible_input_mean(&self, n: usize, q: &[f64]) -> f64 {
        self.visible_bias[n]
            + self
                .weight_row(n)
                .iter()
                .zip(q)
                .map(|(w, ql)| w * ql)
                .sum::<f64>()
    }

    /// `b + Wh` for a binary hidden vector.
    pub fn visible_input(&self, h: &[bool]) -> Vec<f64> {
        let active: Vec<usize> = h
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(l, _)| l)
            .collect();
        (0..self.n_visible())
            .map(|n| {
                let row = self.weight_row(n);
                self.visible_bias[n] + active.iter().map(|&l| row[l]).sum::<f64>()
            })
            .collect()
    }

    /// p(h_l = 1 | s) for every hidden unit.
    pub fn cond_h_given_s(&self, s: &[bool]) -> Vec<f64> {
        self.hidden_input(s).into_iter().map(logistic).collect()
    }

    /// p(s_n = 1 | h) for every visible unit.
    pub fn cond_s_given_h(&self, h: &[bool]) -> Vec<f64> {
        self.visible_input(h).into_iter().map(logistic).collect()
    }

    /// Unnormalized log p(s) with h summed out: `bᵀs + Σ_l softplus((a + Wᵀs)_l)`.
    pub fn log_marginal_visible(&self, s: &[bool]) -> f64 {
        let bias: f64 = s
            .iter()
            .zip(&self.visible_bias)
            .filter(|(&sn, _)| sn)
            .map(|(_, b)| b)
            .sum();
        bias + self.hidden_input(s).into_iter().map(softplus).sum::<f64>()
    }

    /// Unnormalized log p(h) with s summed out.
    pub fn log_marginal_hidden(&self, h: &[bool]) -> f64 {
        let bias: f64 = h
            .iter()
            .zip(&self.hidden_bias)
            .filter(|(&hl, _)| hl)
            .map(|(_, a)| a)
            .sum();
        bias + self.visible_input(h).into_iter().map(softplus).sum::<f64>()
    }

    pub fn save(&self, path: &Path, meta: &GridMeta) -> Result<()> {
        self.validate()?;
        ensure_len("RBM visible units vs grid", meta.n_coeffs(), self.n_visible())?;
        let mut w = io::create(path)?;
        w.header(MAGIC_RBM)?;
        w.u64(self.n_visible())?;
        w.u64(self.n_hidden())?;
        w.u64(meta.n_grid)?;
        w.u64(meta.n_freq)?;
        w.f64(meta.k_min)?;
        w.f64(meta.k_max)?;
        w.f64s(&self.visible_bias)?;
        w.f64s(&self.hidden_bias)?;
        w.f64s(&self.weights)?;
        w.finish()
    }

    pub fn load(path: &Path) -> Result<(RbmParams, GridMeta)> {
        let mut r = io::open(path)?;
        r.header(MAGIC_RBM)?;
        let n_visible = r.u64()?;
        let n_hidden = r.u64()?;
        let meta = GridMeta {
            n_grid: r.u64()?,
            n_freq: r.u64()?,
            k_min: r.f64()?,
            k_max: r.f64()?,
        };
        ensure_len("RBM visible units vs header grid", meta.n_coeffs(), n_visible)?;
        let visible_bias = r.f64s(n_visible)?;
        let hidden_bias = r.f64s(n_hidden)?;
        let weights = r.f64s(n_visible * n_hidden)?;
        r.expect_end()?;
        Ok((
            RbmParams {
                hidden_bias,
                visible_bias,
                weights,
            },
            meta,
        ))
    }

    /// Loads a parameter file and checks it against the experiment layout.
    pub fn load_for(path: &Path, n_grid: usize, n_freq: usize) -> Result<RbmParams> {
        let (params, meta) = RbmParams::load(path)?;
        if meta.n_grid != n_grid {
            return Err(Error::dim("RBM file grid points", n_grid, meta.n_grid));
        }
        if meta.n_freq != n_freq {
            return Err(Error::dim("RBM file frequencies", n_freq, meta.n_freq));
        }
        Ok(params)
    }
}

pub(crate) fn sample_bits<R: Rng>(probs: &[f64], rng: &mut R) -> Vec<bool> {
    probs.iter().map(|&p| rng.random::<f64>() < p).collect()
}

/// Block Gibbs sampler alternating h ~ p(h|s) and s ~ p(s|h).
pub struct GibbsSampler<'a> {
    params: &'a RbmParams,
    state: Vec<bool>,
    rng: ChaCha8Rng,
}

impl<'a> GibbsSampler<'a> {
    pub fn new(params: &'a RbmParams, s0: Vec<bool>, seed: u64) -> Self {
        GibbsSampler {
            params,
            state: s0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn step(&mut self) -> &[bool] {
        let h = sample_bits(&self.params.cond_h_given_s(&self.state), &mut self.rng);
        self.state = sample_bits(&self.params.cond_s_given_h(&h), &mut self.rng);
        &self.state
    }

    pub fn state(&self) -> &[bool] {
        &self.state
    }
}

pub fn gibbs_chain(params: &RbmParams, s0: &[bool], steps: usize, seed: u64) -> Vec<bool> {
    let mut sampler = GibbsSampler::new(params, s0.to_vec(), seed);
    for _ in 0..steps.max(1) {
        sampler.step();
    }
    sampler.state
}

/// Binary f-k supports used to train the prior.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportDataset {
    pub n_freq: usize,
    pub n_grid: usize,
    pub k_min: f64,
    pub k_max: f64,
    pub samples: Vec<Vec<bool>>,
    /// Free-form description of how the samples were produced.
    pub provenance: Option<String>,
}

impl SupportDataset {
    pub fn n_visible(&self) -> usize {
        self.n_freq * self.n_grid
    }

    pub fn meta(&self) -> GridMeta {
        GridMeta {
            n_grid: self.n_grid,
            n_freq: self.n_freq,
            k_min: self.k_min,
            k_max: self.k_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.samples {
            ensure_len("dataset sample", self.n_visible(), s.len())?;
        }
        Ok(())
    }

    /// Mean activation of every visible unit.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n_visible()];
        for s in &self.samples {
            for (acc, &b) in m.iter_mut().zip(s) {
                if b {
                    *acc += 1.0;
                }
            }
        }
        let count = self.samples.len().max(1) as f64;
        m.iter_mut().for_each(|v| *v /= count);
        m
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut w = io::create(path)?;
        w.header(MAGIC_DATASET)?;
        w.u64(self.samples.len())?;
        w.u64(self.n_visible())?;
        w.u64(self.n_grid)?;
        w.u64(self.n_freq)?;
        w.f64(self.k_min)?;
        w.f64(self.k_max)?;
        for s in &self.samples {
            w.bytes(&io::pack_bits(s))?;
        }
        w.finish()
    }

    pub fn load(path: &Path) -> Result<SupportDataset> {
        let mut r = io::open(path)?;
        r.header(MAGIC_DATASET)?;
        let count = r.u64()?;
        let nf = r.u64()?;
        let n_grid = r.u64()?;
        let n_freq = r.u64()?;
        ensure_len("dataset visible units vs grid", n_grid * n_freq, nf)?;
        let k_min = r.f64()?;
        let k_max = r.f64()?;
        let width = io::packed_len(nf);
        let samples = (0..count)
            .map(|_| Ok(io::unpack_bits(&r.bytes(width)?, nf)))
            .collect::<Result<Vec<_>>>()?;
        r.expect_end()?;
        Ok(SupportDataset {
            n_freq,
            n_grid,
            k_min,
            k_max,
            samples,
            provenance: None,
        })
    }

    /// One row per sample with a 0/1 column per visible unit.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let header = (0..self.n_visible())
            .map(|n| format!("s{n}"))
            .collect::<Vec<_>>()
            .join(",");
        io::write_csv(
            path,
            &header,
            self.samples.iter().map(|s| {
                s.iter()
                    .map(|&b| if b { "1" } else { "0" })
                    .collect::<Vec<_>>()
                    .join(",")
            }),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub cd_steps: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub weight_decay: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Standard deviation of the initial weights.
    pub init_std: f64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            cd_steps: 1,
            learning_rate: 0.05,
            epochs: 200,
            minibatch_size: 32,
            weight_decay: 1e-4,
            momentum: 0.5,
            seed: 0,
            init_std: 0.01,
            exec: Exec::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cd_steps < 1 {
            return Err(Error::Config("cd_steps must be at least 1".into()));
        }
        if self.minibatch_size < 1 {
            return Err(Error::Config("minibatch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be nonnegative".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Minibatch-averaged contrastive divergence gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct CdGradient {
    pub hidden_bias: Vec<f64>,
    pub visible_bias: Vec<f64>,
    pub weights: Vec<f64>,
}

impl CdGradient {
    fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        CdGradient {
            hidden_bias: vec![0.0; n_hidden],
            visible_bias: vec![0.0; n_visible],
            weights: vec![0.0; n_visible * n_hidden],
        }
    }

    fn add(&mut self, other: &CdGradient) {
        for (a, b) in self.hidden_bias.iter_mut().zip(&other.hidden_bias) {
            *a += b;
        }
        for (a, b) in self.visible_bias.iter_mut().zip(&other.visible_bias) {
            *a += b;
        }
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
    }

    fn scale(&mut self, factor: f64) {
        self.hidden_bias
            .iter_mut()
            .chain(self.visible_bias.iter_mut())
            .chain(self.weights.iter_mut())
            .for_each(|v| *v *= factor);
    }
}

/// Momentum buffers carried between CD updates.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity(CdGradient);

impl Velocity {
    pub fn zeros(params: &RbmParams) -> Self {
        Velocity(CdGradient::zeros(params.n_visible(), params.n_hidden()))
    }
}

fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn content_key(s: &[bool]) -> u64 {
    s.chunks(64).fold(mix64(s.len() as u64), |acc, chunk| {
        let word = chunk
            .iter()
            .enumerate()
            .fold(0u64, |w, (i, &b)| w | (u64::from(b) << i));
        mix64(acc ^ word)
    })
}

const CD_CHUNK: usize = 8;

/// CD-k gradient over a minibatch.
///
/// The negative chain of each sample starts at the sample and draws from its
/// own ChaCha stream keyed by `(seed, update, sample bits)`, so the result is
/// independent of thread count and of where the sample sits in the batch.
pub fn cd_gradient(
    params: &RbmParams,
    minibatch: &[Vec<bool>],
    k: usize,
    seed: u64,
    update: u64,
    exec: Exec,
) -> Result<CdGradient> {
    if minibatch.is_empty() {
        return Err(Error::Domain("CD update needs a nonempty minibatch".into()));
    }
    let nv = params.n_visible();
    let nh = params.n_hidden();
    for s in minibatch {
        ensure_len("minibatch sample", nv, s.len())?;
    }
    let partials = exec.map_chunks(minibatch, CD_CHUNK, |_, chunk| {
        let mut grad = CdGradient::zeros(nv, nh);
        for s in chunk {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(mix64(update ^ mix64(content_key(s))));
            let pos_h = params.cond_h_given_s(s);
            let mut neg = s.clone();
            for _ in 0..k.max(1) {
                let h = sample_bits(&params.cond_h_given_s(&neg), &mut rng);
                neg = sample_bits(&params.cond_s_given_h(&h), &mut rng);
            }
            let neg_h = params.cond_h_given_s(&neg);
            for l in 0..nh {
                grad.hidden_bias[l] += pos_h[l] - neg_h[l];
            }
            for n in 0..nv {
                let (sp, sn) = (s[n], neg[n]);
                if sp == sn && !sp {
                    continue;
                }
                grad.visible_bias[n] += f64::from(u8::from(sp)) - f64::from(u8::from(sn));
                let row = &mut grad.weights[n * nh..(n + 1) * nh];
                if sp {
                    row.iter_mut().zip(&pos_h).for_each(|(g, p)| *g += p);
                }
                if sn {
                    row.iter_mut().zip(&neg_h).for_each(|(g, p)| *g -= p);
                }
            }
        }
        grad
    });
    let mut total = CdGradient::zeros(nv, nh);
    for part in &partials {
        total.add(part);
    }
    total.scale(1.0 / minibatch.len() as f64);
    Ok(total)
}

/// Applies a gradient with momentum; weight decay acts on W only.
pub fn apply_gradient(
    params: &RbmParams,
    velocity: &mut Velocity,
    grad: &CdGradient,
    learning_rate: f64,
    momentum: f64,
    weight_decay: f64,
) -> RbmParams {
    let v = &mut velocity.0;
    let mut next = params.clone();
    for ((p, vel), g) in next.hidden_bias.iter_mut().zip(&mut v.hidden_bias).zip(&grad.hidden_bias) {
        *vel = momentum * *vel + learning_rate * g;
        *p += *vel;
    }
    for ((p, vel), g) in next.visible_bias.iter_mut().zip(&mut v.visible_bias).zip(&grad.visible_bias) {
        *vel = momentum * *vel + learning_rate * g;
        *p += *vel;
    }
    for ((p, vel), g) in next.weights.iter_mut().zip(&mut v.weights).zip(&grad.weights) {
        *vel = momentum * *vel + learning_rate * (g - weight_decay * *p);
        *p += *vel;
    }
    next
}

/// One contrastive divergence step: gradient plus parameter update.
pub fn cd_update(
    params: &RbmParams,
    velocity: &mut Velocity,
    minibatch: &[Vec<bool>],
    config: &TrainingConfig,
    update: u64,
) -> Result<RbmParams> {
    let grad = cd_gradient(
        params,
        minibatch,
        config.cd_steps,
        config.seed,
        update,
        config.exec,
    )?;
    Ok(apply_gradient(
        params,
        velocity,
        &grad,
        config.learning_rate,
        config.momentum,
        config.weight_decay,
    ))
}

/// Initial parameters: W ~ N(0, init_std²), a = 0, b from clamped data means.
pub fn initial_params(dataset_mean: &[f64], n_hidden: usize, init_std: f64, seed: u64) -> RbmParams {
    let nv = dataset_mean.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, init_std.max(0.0)).expect("finite std");
    RbmParams {
        hidden_bias: vec![0.0; n_hidden],
        visible_bias: dataset_mean
            .iter()
            .map(|&m| logit(m.clamp(1e-3, 1.0 - 1e-3)))
            .collect(),
        weights: (0..nv * n_hidden).map(|_| normal.sample(&mut rng)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean squared error of a mean-field down-up reconstruction.
    pub reconstruction_error: f64,
    /// Exact KL(data ‖ model), present when the model is small enough.
    pub kl_exact: Option<f64>,
}

/// Largest NF + P for which training logs the exact KL divergence.
pub const KL_LOG_LIMIT: usize = 20;

pub fn reconstruction_error(params: &RbmParams, samples: &[Vec<bool>], exec: Exec) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let per = exec.map_range(samples.len(), |i| {
        let s = &samples[i];
        let ph = params.cond_h_given_s(s);
        (0..params.n_visible())
            .map(|n| {
                let p = logistic(params.visible_input_mean(n, &ph));
                let target = if s[n] { 1.0 } else { 0.0 };
                (target - p) * (target - p)
            })
            .sum::<f64>()
            / params.n_visible() as f64
    });
    per.iter().sum::<f64>() / samples.len() as f64
}

/// Trains an RBM with `n_hidden` hidden units by shuffled minibatch CD-k.
pub fn train(
    dataset: &SupportDataset,
    n_hidden: usize,
    config: &TrainingConfig,
) -> Result<(RbmParams, Vec<EpochLog>)> {
    config.validate()?;
    dataset.validate()?;
    if dataset.samples.is_empty() {
        return Err(Error::Domain("training dataset is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init_seed = rng.random::<u64>();
    let mut params = initial_params(&dataset.mean(), n_hidden, config.init_std, init_seed);
    let mut velocity = Velocity::zeros(&params);
    let track_kl = dataset.n_visible() + n_hidden <= KL_LOG_LIMIT;
    let mut order: Vec<usize> = (0..dataset.samples.len()).collect();
    let mut update = 0u64;
    let mut log = Vec::with_capacity(config.epochs);
    let mut batch: Vec<Vec<bool>> = Vec::with_capacity(config.minibatch_size);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(config.minibatch_size) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| dataset.samples[i].clone()));
            params = cd_update(&params, &mut velocity, &batch, config, update)?;
            update += 1;
        }
        let kl_exact = if track_kl {
            Some(kl_data_model(&dataset.samples, &params)?)
        } else {
            None
        };
        log.push(EpochLog {
            epoch: epoch + 1,
            reconstruction_error: reconstruction_error(&params, &dataset.samples, config.exec),
            kl_exact,
        });
    }
    Ok((params, log))
}

pub fn write_training_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    io::write_csv(
        path,
        "epoch,reconstruction_error,kl_exact_or_nan",
        log.iter().map(|e| {
            format!(
                "{},{:e},{:e}",
                e.epoch,
                e.reconstruction_error,
                e.kl_exact.unwrap_or(f64::NAN)
            )
        }),
    )
}

/// Binary vector whose bit `n` is bit `n` of `index`.
pub fn bits_from_index(index: usize, len: usize) -> Vec<bool> {
    (0..len).map(|n| index >> n & 1 == 1).collect()
}

pub fn index_from_bits(bits: &[bool]) -> usize {
    bits.iter()
        .enumerate()
        .fold(0, |acc, (n, &b)| acc | (usize::from(b) << n))
}

fn check_enumerable(what: &str, size: usize) -> Result<()> {
    if size > MAX_ENUMERATION {
        return Err(Error::SizeBound(format!(
            "{what} has {size} units, exact enumeration supports at most {MAX_ENUMERATION}"
        )));
    }
    Ok(())
}

/// log Z by enumerating every visible configuration.
pub fn log_partition_over_visible(params: &RbmParams) -> Result<f64> {
    check_enumerable("visible layer", params.n_visible())?;
    let nv = params.n_visible();
    let terms: Vec<f64> = (0..1usize << nv)
        .map(|i| params.log_marginal_visible(&bits_from_index(i, nv)))
        .collect();
    Ok(log_sum_exp(&terms))
}

/// log Z by enumerating every hidden configuration.
pub fn log_partition_over_hidden(params: &RbmParams) -> Result<f64> {
    check_enumerable("hidden layer", params.n_hidden())?;
    let nh = params.n_hidden();
    let terms: Vec<f64> = (0..1usize << nh)
        .map(|i| params.log_marginal_hidden(&bits_from_index(i, nh)))
        .collect();
    Ok(log_sum_exp(&terms))
}

/// Exact log partition function, enumerating the smaller layer.
pub fn exact_log_partition(params: &RbmParams) -> Result<f64> {
    params.validate()?;
    let total = params.n_visible() + params.n_hidden();
    if total > MAX_ENUMERATION {
        return Err(Error::SizeBound(format!(
            "NF + P = {total} exceeds {MAX_ENUMERATION}"
        )));
    }
    if params.n_hidden() < params.n_visible() {
        log_partition_over_hidden(params)
    } else {
        log_partition_over_visible(params)
    }
}

/// Exact p(s) for every visible configuration, indexed by [`index_from_bits`].
pub fn exact_visible_distribution(params: &RbmParams) -> Result<Vec<f64>> {
    check_enumerable("visible layer", params.n_visible())?;
    let nv = params.n_visible();
    let log_z = exact_log_partition(params)?;
    Ok((0..1usize << nv)
        .map(|i| (params.log_marginal_visible(&bits_from_index(i, nv)) - log_z).exp())
        .collect())
}

/// Exact KL(data ‖ model) for the empirical distribution of `samples`.
pub fn kl_data_model(samples: &[Vec<bool>], params: &RbmParams) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Domain("KL needs at least one sample".into()));
    }
    let log_z = exact_log_partition(params)?;
    let mut counts = std::collections::BTreeMap::new();
    for s in samples {
        ensure_len("sample", params.n_visible(), s.len())?;
        *counts.entry(index_from_bits(s)).or_insert(0usize) += 1;
    }
    let total = samples.len() as f64;
    let nv = params.n_visible();
    Ok(counts
        .into_iter()
        .map(|(idx, c)| {
            let p = c as f64 / total;
            let log_q = params.log_marginal_visible(&bits_from_index(idx, nv)) - log_z;
            p * (p.ln() - log_q)
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_params(nv: usize, nh: usize, scale: f64, seed: u64) -> RbmParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, scale).unwrap();
        RbmParams {
            hidden_bias: (0..nh).map(|_| normal.sample(&mut rng)).collect(),
            visible_bias: (0..nv).map(|_| normal.sample(&mut rng)).collect(),
            weights: (0..nv * nh).map(|_| normal.sample(&mut rng)).collect(),
        }
    }

    #[test]
    fn energy_trivial_cases() {
        let p = random_params(6, 3, 1.0, 1);
        assert_eq!(p.energy(&[false; 6], &[false; 3]), 0.0);
        let e = p.energy(&[true; 6], &[false; 3]);
        assert!((e + p.visible_bias.iter().sum::<f64>()).abs() < 1e-14);
    }

    #[test]
    fn energy_matches_triple_sum() {
        let p = random_params(6, 3, 1.0, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let s: Vec<bool> = (0..6).map(|_| rng.random()).collect();
            let h: Vec<bool> = (0..3).map(|_| rng.random()).collect();
            let sf: Vec<f64> = s.iter().map(|&b| b as u8 as f64).collect();
            let hf: Vec<f64> = h.iter().map(|&b| b as u8 as f64).collect();
            let mut naive = 0.0;
            for l in 0..3 {
                naive += p.hidden_bias[l] * hf[l];
            }
            for n in 0..6 {
                naive += p.visible_bias[n] * sf[n];
                for l in 0..3 {
                    naive += sf[n] * p.weights[n * 3 + l] * hf[l];
                }
            }
            assert!((p.energy(&s, &h) + naive).abs() < 1e-12);
        }
    }

    #[test]
    fn conditionals_trivial_cases() {
        let p = RbmParams::zeros(4, 3);
        assert!(p.cond_h_given_s(&[true, false, true, true]).iter().all(|&v| v == 0.5));
        assert!(p.cond_s_given_h(&[true, false, true]).iter().all(|&v| v == 0.5));
        let mut sat = RbmParams::zeros(4, 3);
        sat.hidden_bias[1] = 50.0;
        sat.visible_bias[2] = 50.0;
        assert!((1.0 - sat.cond_h_given_s(&[false; 4])[1]).abs() < 1e-20);
        assert!((1.0 - sat.cond_s_given_h(&[false; 3])[2]).abs() < 1e-20);
    }

    /// p(h_l = 1 | s) and p(s_n = 1 | h) from the joint by enumeration.
    #[test]
    fn conditionals_match_enumeration() {
        let (nv, nh) = (6, 2);
        let p = random_params(nv, nh, 1.0, 4);
        let joint = |si: usize, hi: usize| {
            (-p.energy(&bits_from_index(si, nv), &bits_from_index(hi, nh))).exp()
        };
        for si in 0..1 << nv {
            let s = bits_from_index(si, nv);
            let total: f64 = (0..1 << nh).map(|hi| joint(si, hi)).sum();
            let cond = p.cond_h_given_s(&s);
            for l in 0..nh {
                let on: f64 = (0..1 << nh).filter(|hi| hi >> l & 1 == 1).map(|hi| joint(si, hi)).sum();
                assert!((on / total - cond[l]).abs() < 1e-12);
            }
        }
        for hi in 0..1 << nh {
            let h = bits_from_index(hi, nh);
            let total: f64 = (0..1 << nv).map(|si| joint(si, hi)).sum();
            let cond = p.cond_s_given_h(&h);
            for n in 0..nv {
                let on: f64 = (0..1 << nv).filter(|si| si >> n & 1 == 1).map(|si| joint(si, hi)).sum();
                assert!((on / total - cond[n]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn joint_factorizes_through_conditionals() {
        let (nv, nh) = (5, 3);
        let p = random_params(nv, nh, 0.8, 5);
        let log_z = exact_log_partition(&p).unwrap();
        for si in 0..1 << nv {
            let s = bits_from_index(si, nv);
            let ps = (p.log_marginal_visible(&s) - log_z).exp();
            let cond = p.cond_h_given_s(&s);
            for hi in 0..1 << nh {
                let h = bits_from_index(hi, nh);
                let joint = (-p.energy(&s, &h) - log_z).exp();
                let factored: f64 = ps * h
                    .iter()
                    .zip(&cond)
                    .map(|(&b, &q)| if b { q } else { 1.0 - q })
                    .product::<f64>();
                assert!((joint - factored).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn log_partition_closed_forms() {
        let p = RbmParams::zeros(7, 4);
        let expected = 11.0 * std::f64::consts::LN_2;
        assert!((exact_log_partition(&p).unwrap() - expected).abs() < 1e-12);

        let mut q = random_params(6, 3, 1.0, 6);
        q.weights.fill(0.0);
        let expected: f64 = q.visible_bias.iter().chain(&q.hidden_bias).map(|&x| softplus(x)).sum();
        assert!((exact_log_partition(&q).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn log_partition_orders_agree() {
        for seed in 0..10 {
            let p = random_params(8, 5, 1.0, seed);
            let v = log_partition_over_visible(&p).unwrap();
            let h = log_partition_over_hidden(&p).unwrap();
            assert!((v - h).abs() < 1e-10, "{v} vs {h}");
        }
    }

    #[test]
    fn log_partition_rejects_large_models() {
        let p = RbmParams::zeros(20, 5);
        assert!(matches!(exact_log_partition(&p), Err(Error::SizeBound(_))));
    }

    proptest! {
        #[test]
        fn energy_is_invariant_under_hidden_permutation(
            seed in 0u64..1000,
            bits in proptest::collection::vec(any::<bool>(), 10),
            perm_seed in 0u64..1000,
        ) {
            let (nv, nh) = (6, 4);
            let p = random_params(nv, nh, 1.0, seed);
            let mut perm: Vec<usize> = (0..nh).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
            let mut q = p.clone();
            for (new, &old) in perm.iter().enumerate() {
                q.hidden_bias[new] = p.hidden_bias[old];
                for n in 0..nv {
                    q.weights[n * nh + new] = p.weights[n * nh + old];
                }
            }
            let s = &bits[..nv];
            let h = &bits[nv..];
            let hp: Vec<bool> = perm.iter().map(|&old| h[old]).collect();
            prop_assert!((p.energy(s, h) - q.energy(s, &hp)).abs() < 1e-12);
        }
    }

    #[test]
    fn gibbs_neutral_marginals_are_fair() {
        let p = RbmParams::zeros(4, 3);
        let mut sampler = GibbsSampler::new(&p, vec![false; 4], 11);
        let steps = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..steps {
            for (c, &b) in counts.iter_mut().zip(sampler.step()) {
                *c += usize::from(b);
            }
        }
        for c in counts {
            assert!((c as f64 / steps as f64 - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn gibbs_is_deterministic_under_seed() {
        let p = random_params(10, 4, 1.0, 7);
        let a = gibbs_chain(&p, &[false; 10], 50, 99);
        let b = gibbs_chain(&p, &[false; 10], 50, 99);
        assert_eq!(a, b);
    }

    /// Starting many chains from exact samples, one Gibbs round keeps the
    /// marginals within Monte Carlo error.
    #[test]
    fn gibbs_round_preserves_exact_distribution() {
        let (nv, nh) = (5, 2);
        let p = random_params(nv, nh, 1.0, 8);
        let dist = exact_visible_distribution(&p).unwrap();
        let cdf: Vec<f64> = dist
            .iter()
            .scan(0.0, |acc, &x| {
                *acc += x;
                Some(*acc)
            })
            .collect();
        let exact_marg: Vec<f64> = (0..nv)
            .map(|n| (0..dist.len()).filter(|i| i >> n & 1 == 1).map(|i| dist[i]).sum())
            .collect();
        let chains = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = vec![0usize; nv];
        for _ in 0..chains {
            let u: f64 = rng.random();
            let idx = cdf.iter().position(|&c| u < c).unwrap_or(dist.len() - 1);
            let s = bits_from_index(idx, nv);
            let h = sample_bits(&p.cond_h_given_s(&s), &mut rng);
            let next = sample_bits(&p.cond_s_given_h(&h), &mut rng);
            for (c, &b) in counts.iter_mut().zip(&next) {
                *c += usize::from(b);
            }
        }
        for n in 0..nv {
            let m = exact_marg[n];
            let se = (m * (1.0 - m) / chains as f64).sqrt();
            let emp = counts[n] as f64 / chains as f64;
            assert!((emp - m).abs() < 3.0 * se + 1e-12, "unit {n}: {emp} vs {m}");
        }
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let p = random_params(6, 2, 0.5, 10);
        let mut vel = Velocity::zeros(&p);
        let batch = vec![vec![true, false, true, false, false, true]; 3];
        let cfg = TrainingConfig {
            learning_rate: 0.0,
            ..TrainingConfig::default()
        };
        let q = cd_update(&p, &mut vel, &batch, &cfg, 0).unwrap();
        assert_eq!(p, q);
        assert!(cd_update(&p, &mut vel, &[], &cfg, 0).is_err());
    }

    #[test]
    fn cd_gradient_is_stationary_at_the_model() {
        // W = 0: the model is independent Bernoulli(logistic(b)); data drawn
        // from it gives a zero-mean visible bias gradient. Negative chains are
        // keyed by sample content, so the layer is wide enough for the
        // samples to be mostly distinct.
        let nv = 24;
        let mut p = RbmParams::zeros(nv, 2);
        p.visible_bias = (0..nv).map(|n| -1.5 + 3.0 * n as f64 / (nv - 1) as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let probs: Vec<f64> = p.visible_bias.iter().map(|&b| logistic(b)).collect();
        let data: Vec<Vec<bool>> = (0..10_000).map(|_| sample_bits(&probs, &mut rng)).collect();
        let grad = cd_gradient(&p, &data, 1, 13, 0, Exec::Parallel).unwrap();
        for n in 0..nv {
            // difference of two independent Bernoulli means over 1e4 samples
            let se = (2.0 * probs[n] * (1.0 - probs[n]) / 10_000.0).sqrt();
            assert!(grad.visible_bias[n].abs() < 3.0 * se, "unit {n}: {}", grad.visible_bias[n]);
        }
    }

    #[test]
    fn cd_gradient_identical_across_exec_modes() {
        let p = random_params(12, 3, 0.5, 14);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let data: Vec<Vec<bool>> = (0..37).map(|_| (0..12).map(|_| rng.random()).collect()).collect();
        let a = cd_gradient(&p, &data, 2, 16, 5, Exec::Sequential).unwrap();
        let b = cd_gradient(&p, &data, 2, 16, 5, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    fn toy_dataset() -> SupportDataset {
        // F = 2 rows of N = 3 bins, one mode per row following a curve
        let patterns: [[bool; 6]; 3] = [
            [true, false, false, true, false, false],
            [false, true, false, false, true, false],
            [false, false, true, false, true, false],
        ];
        SupportDataset {
            n_freq: 2,
            n_grid: 3,
            k_min: 0.0,
            k_max: 1.0,
            samples: patterns.iter().map(|p| p.to_vec()).collect(),
            provenance: None,
        }
    }

    #[test]
    fn cd1_reduces_exact_kl_by_half() {
        let data = toy_dataset();
        let cfg = TrainingConfig {
            minibatch_size: 3,
            learning_rate: 0.1,
            momentum: 0.5,
            weight_decay: 0.0,
            seed: 17,
            ..TrainingConfig::default()
        };
        let mut p = initial_params(&data.mean(), 2, 0.01, 18);
        let kl0 = kl_data_model(&data.samples, &p).unwrap();
        let mut vel = Velocity::zeros(&p);
        for step in 0..5000 {
            p = cd_update(&p, &mut vel, &data.samples, &cfg, step).unwrap();
        }
        let kl1 = kl_data_model(&data.samples, &p).unwrap();
        assert!(kl1 <= 0.5 * kl0, "KL {kl0} -> {kl1}");
    }

    #[test]
    fn training_on_empty_support_drives_biases_negative() {
        let data = SupportDataset {
            n_freq: 2,
            n_grid: 4,
            k_min: 0.0,
            k_max: 1.0,
            samples: vec![vec![false; 8]; 20],
            provenance: None,
        };
        let cfg = TrainingConfig {
            epochs: 20,
            minibatch_size: 5,
            ..TrainingConfig::default()
        };
        let (p, log) = train(&data, 2, &cfg).unwrap();
        let mean: f64 = p.cond_s_given_h(&[false; 2]).iter().sum::<f64>() / 8.0;
        assert!(mean < 0.05, "{mean}");
        assert_eq!(log.len(), 20);
        assert!(log.iter().all(|e| e.kl_exact.is_some()));
    }

    #[test]
    fn training_rejects_empty_dataset() {
        let mut data = toy_dataset();
        data.samples.clear();
        assert!(train(&data, 2, &TrainingConfig::default()).is_err());
    }

    #[test]
    fn duplicated_dataset_trains_identically() {
        let data = toy_dataset();
        let mut doubled = data.clone();
        doubled.samples.extend(data.samples.clone());
        let base = TrainingConfig {
            epochs: 30,
            seed: 19,
            ..TrainingConfig::default()
        };
        let (a, _) = train(&data, 2, &TrainingConfig { minibatch_size: 3, ..base }).unwrap();
        let (b, _) = train(&doubled, 2, &TrainingConfig { minibatch_size: 6, ..base }).unwrap();
        for (x, y) in a.weights.iter().chain(&a.visible_bias).zip(b.weights.iter().chain(&b.visible_bias)) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy_dataset();
        let cfg = TrainingConfig {
            epochs: 10,
            minibatch_size: 2,
            seed: 20,
            ..TrainingConfig::default()
        };
        let (a, la) = train(&data, 3, &cfg).unwrap();
        let (b, lb) = train(&data, 3, &TrainingConfig { exec: Exec::Sequential, ..cfg }).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn params_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.rbm");
        let p = random_params(12, 3, 1.0, 21);
        let meta = GridMeta {
            n_grid: 4,
            n_freq: 3,
            k_min: 0.1,
            k_max: 0.4,
        };
        p.save(&path, &meta).unwrap();
        let (q, m) = RbmParams::load(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(m, meta);
        assert!(RbmParams::load_for(&path, 4, 3).is_ok());
        assert!(matches!(
            RbmParams::load_for(&path, 5, 3),
            Err(Error::Dimension { .. })
        ));
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"RBM1");
    }

    #[test]
    fn dataset_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.supp");
        let data = toy_dataset();
        data.save(&path).unwrap();
        let back = SupportDataset::load(&path).unwrap();
        assert_eq!(back.samples, data.samples);
        assert_eq!(back.meta(), data.meta());
    }
}
