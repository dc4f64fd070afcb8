//! Mean-field variational Bayes pursuit with an RBM support prior.
//!
//! The posterior over amplitudes `x`, supports `s` and hidden units `h` is
//! approximated by `Π_n q(x_n|s_n) q(s_n) Π_l q(h_l)`. Each sweep refreshes
//! every coordinate n against the residual with its own contribution removed,
//!
//! ```text
//! Σ(s_n) = σx²σw² / (σw² + s_n σx² L)
//! m(s_n) = s_n σx² / (σw² + s_n σx² L) · d_nᴴ⟨r_n⟩
//! ⟨r_n⟩  = y − Σ_{j≠n} q(s_j=1) m(s_j=1) d_j
//! ```
//!
//! then sets `q(s_n=1)` from the prior field `b_n + Σ_l w_nl q(h_l=1)` and the
//! Gaussian evidence, and finally every `q(h_l=1) = σ(a_l + Σ_n w_nl q(s_n=1))`.
//! With W = 0 and no hidden units the prior reduces to independent Bernoulli
//! coefficients, which is the baseline solver.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dictionary::{BlockDictionary, InnerProduct};
use crate::error::{ensure_len, Error, Result};
use crate::exec::Exec;
use crate::math::{bernoulli_entropy, logistic, norm_sqr};
use crate::rbm::RbmParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelHyper {
    /// σ_w², noise variance per complex sample.
    pub sigma_w_sq: f64,
    /// σ_x², prior variance of active amplitudes.
    pub sigma_x_sq: f64,
}

impl ModelHyper {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma_w_sq", self.sigma_w_sq), ("sigma_x_sq", self.sigma_x_sq)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    /// Σ(s_n = 1) for atoms of squared norm `energy`.
    pub fn active_variance(&self, energy: f64) -> f64 {
        self.sigma_x_sq * self.sigma_w_sq / (self.sigma_w_sq + self.sigma_x_sq * energy)
    }

    /// σx² / (σw² + σx²·energy), the gain from correlation to m(s_n = 1).
    pub fn shrinkage(&self, energy: f64) -> f64 {
        self.sigma_x_sq / (self.sigma_w_sq + self.sigma_x_sq * energy)
    }
}

/// Normalization used in the q(s_n) update.
///
/// `CircularComplex` weighs each hypothesis by `Σ·exp(|m|²/Σ)`, the exact
/// mean-field solution for circular complex amplitudes. `PaperLiteral` uses
/// `sqrt(Σ)·exp(½|m|²/Σ)`, the real-Gaussian form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QsVariant {
    PaperLiteral,
    #[default]
    CircularComplex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum UpdateOrder {
    #[default]
    Sequential,
    /// A fresh permutation of the coordinates every sweep.
    RandomPermutation { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub max_sweeps: usize,
    /// Convergence threshold on max |Δq(s_n = 1)| over a sweep.
    pub tol: f64,
    pub damping: f64,
    pub variant: QsVariant,
    pub order: UpdateOrder,
    /// ŝ_n = 1 iff q(s_n = 1) > threshold.
    pub threshold: f64,
    pub inner_product: InnerProduct,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_sweeps: 200,
            tol: 1e-6,
            damping: 0.0,
            variant: QsVariant::default(),
            order: UpdateOrder::default(),
            threshold: 0.5,
            inner_product: InnerProduct::default(),
            exec: Exec::default(),
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_sweeps < 1 {
            return Err(Error::Config("max_sweeps must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::Config(format!("damping must lie in [0, 1), got {}", self.damping)));
        }
        Ok(())
    }
}

/// Factorized variational posterior plus the cached residual.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState {
    /// q(s_n = 1).
    pub qs: Vec<f64>,
    /// q(h_l = 1).
    pub qh: Vec<f64>,
    /// m(s_n = 1).
    pub m1: Vec<Complex64>,
    /// Σ(s_n = 1).
    pub sigma1: Vec<f64>,
    /// y − Σ_j qs_j·m1_j·d_j.
    pub residual: Vec<Complex64>,
}

impl PosteriorState {
    /// Prior mean-field start: qh = σ(a), qs = σ(b + W qh), m1 = 0, residual = y.
    pub fn initial(y: &[Complex64], dict: &BlockDictionary, prior: &RbmParams, hyper: &ModelHyper) -> Self {
        let qh: Vec<f64> = prior.hidden_bias.iter().map(|&a| logistic(a)).collect();
        let qs = (0..prior.n_visible())
            .map(|n| logistic(prior.visible_input_mean(n, &qh)))
            .collect();
        PosteriorState {
            qs,
            qh,
            m1: vec![Complex64::new(0.0, 0.0); dict.n_coeffs()],
            sigma1: vec![hyper.active_variance(dict.atom_energy()); dict.n_coeffs()],
            residual: y.to_vec(),
        }
    }

    /// Posterior mean E[z_n] = qs_n·m1_n.
    pub fn posterior_mean(&self) -> Vec<Complex64> {
        self.qs.iter().zip(&self.m1).map(|(&q, &m)| m * q).collect()
    }
}

/// Residual recomputed from scratch.
pub fn recompute_residual(state: &PosteriorState, y: &[Complex64], dict: &BlockDictionary) -> Result<Vec<Complex64>> {
    let dz = dict.apply(&state.posterior_mean())?;
    Ok(y.iter().zip(&dz).map(|(a, b)| a - b).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub s_hat: Vec<bool>,
    pub z_hat: Vec<Complex64>,
    pub qs: Vec<f64>,
    pub qh: Vec<f64>,
    pub sweeps_used: usize,
    /// Free energy of the initial state, then after every sweep.
    pub free_energy_trace: Vec<f64>,
    /// Max |Δqs| of every sweep.
    pub delta_trace: Vec<f64>,
    pub converged: bool,
}

/// (Σ(s_n), m(s_n)) from the correlation `corr = d_nᴴ⟨r_n⟩`.
pub fn moments_from_correlation(corr: Complex64, energy: f64, active: bool, hyper: &ModelHyper) -> (f64, Complex64) {
    if active {
        (hyper.active_variance(energy), corr * hyper.shrinkage(energy))
    } else {
        (hyper.sigma_x_sq, Complex64::new(0.0, 0.0))
    }
}

/// Gaussian moments of q(x_n | s_n) given ⟨r_n⟩, the residual with the
/// contribution of coordinate n removed.
pub fn gaussian_moments(
    dict: &BlockDictionary,
    n: usize,
    active: bool,
    residual_without_n: &[Complex64],
    hyper: &ModelHyper,
    product: InnerProduct,
) -> (f64, Complex64) {
    let corr = dict.correlate(n, residual_without_n, product);
    moments_from_correlation(corr, dict.atom_energy(), active, hyper)
}

/// log ρ(1) − log ρ(0) for the q(s_n) update, computed in the log domain.
pub fn qs_log_odds(prior_field: f64, sigma1: f64, m1: Complex64, hyper: &ModelHyper, variant: QsVariant) -> f64 {
    let sigma0 = hyper.sigma_x_sq;
    let evidence = m1.norm_sqr() / sigma1;
    match variant {
        QsVariant::CircularComplex => prior_field + (sigma1.ln() - sigma0.ln()) + evidence,
        QsVariant::PaperLiteral => prior_field + 0.5 * (sigma1.ln() - sigma0.ln()) + 0.5 * evidence,
    }
}

/// Refreshes coordinate `n`. `state.residual` must be ⟨r_n⟩, i.e. exclude the
/// contribution of n. Updates m1, sigma1 and qs at n and returns the new qs_n.
pub fn update_s(
    n: usize,
    state: &mut PosteriorState,
    prior: &RbmParams,
    hyper: &ModelHyper,
    dict: &BlockDictionary,
    opts: &SolverOptions,
) -> f64 {
    let (sigma1, m1) = gaussian_moments(dict, n, true, &state.residual, hyper, opts.inner_product);
    let field = prior.visible_input_mean(n, &state.qh);
    let q = logistic(qs_log_odds(field, sigma1, m1, hyper, opts.variant));
    let q = (1.0 - opts.damping) * q + opts.damping * state.qs[n];
    state.sigma1[n] = sigma1;
    state.m1[n] = m1;
    state.qs[n] = q;
    q
}

/// q(h_l = 1) = σ(a_l + Σ_n w_nl·qs_n).
pub fn update_h(l: usize, state: &PosteriorState, prior: &RbmParams) -> f64 {
    let p = prior.n_hidden();
    let field = prior.hidden_bias[l]
        + state
            .qs
            .iter()
            .enumerate()
            .map(|(n, &q)| prior.weights[n * p + l] * q)
            .sum::<f64>();
    logistic(field)
}

fn update_hidden(state: &mut PosteriorState, prior: &RbmParams, exec: Exec) {
    let qh = exec.map_range(prior.n_hidden(), |l| update_h(l, state, prior));
    state.qh = qh;
}

/// One pass over every coordinate in `order`, then all hidden units.
pub fn sweep(
    state: &mut PosteriorState,
    order: &[usize],
    dict: &BlockDictionary,
    prior: &RbmParams,
    hyper: &ModelHyper,
    opts: &SolverOptions,
) {
    for &n in order {
        let old = state.m1[n] * state.qs[n];
        dict.add_atom(n, old, &mut state.residual);
        update_s(n, state, prior, hyper, dict, opts);
        let new = state.m1[n] * state.qs[n];
        dict.add_atom(n, -new, &mut state.residual);
    }
    update_hidden(state, prior, opts.exec);
}

/// Variational free energy E_q[log q] − E_q[log p̃(y, x, s, h)], where p̃
/// omits the RBM partition function. Minimized by every exact mean-field
/// coordinate update.
pub fn compute_free_energy(
    state: &PosteriorState,
    y: &[Complex64],
    dict: &BlockDictionary,
    prior: &RbmParams,
    hyper: &ModelHyper,
) -> Result<f64> {
    let sw = hyper.sigma_w_sq;
    let sx = hyper.sigma_x_sq;
    let energy = dict.atom_energy();
    let residual = recompute_residual(state, y, dict)?;

    let mut var_sum = 0.0;
    let mut x_second = 0.0;
    let mut log_q_x = 0.0;
    for n in 0..state.qs.len() {
        let q = state.qs[n];
        let m2 = state.m1[n].norm_sqr();
        let s1 = state.sigma1[n];
        let active_second = m2 + s1;
        var_sum += q * active_second - q * q * m2;
        x_second += q * active_second + (1.0 - q) * sx;
        log_q_x += -q * (PI * std::f64::consts::E * s1).ln() - (1.0 - q) * (PI * std::f64::consts::E * sx).ln();
    }
    let n_coeffs = state.qs.len() as f64;
    let expected_loglik = -(dict.n_obs() as f64) * (PI * sw).ln() - (norm_sqr(&residual) + energy * var_sum) / sw;
    let expected_log_px = -n_coeffs * (PI * sx).ln() - x_second / sx;

    let mut expected_log_psh: f64 = prior.hidden_bias.iter().zip(&state.qh).map(|(a, q)| a * q).sum();
    let hidden_input = prior.hidden_input_mean(&state.qs);
    for (l, qh) in state.qh.iter().enumerate() {
        // Σ_n w_nl qs_n = hidden_input_l − a_l
        expected_log_psh += (hidden_input[l] - prior.hidden_bias[l]) * qh;
    }
    expected_log_psh += prior.visible_bias.iter().zip(&state.qs).map(|(b, q)| b * q).sum::<f64>();

    let entropy_s: f64 = state.qs.iter().map(|&q| bernoulli_entropy(q)).sum();
    let entropy_h: f64 = state.qh.iter().map(|&q| bernoulli_entropy(q)).sum();
    let expected_log_q = log_q_x - entropy_s - entropy_h;

    Ok(expected_log_q - expected_loglik - expected_log_px - expected_log_psh)
}

fn check_inputs(y: &[Complex64], dict: &BlockDictionary, prior: &RbmParams, hyper: &ModelHyper, opts: &SolverOptions) -> Result<()> {
    ensure_len("measurement", dict.n_obs(), y.len())?;
    ensure_len("prior visible units", dict.n_coeffs(), prior.n_visible())?;
    prior.validate()?;
    hyper.validate()?;
    opts.validate()?;
    if y.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(Error::Domain("measurement contains non-finite samples".into()));
    }
    Ok(())
}

pub fn run(
    y: &[Complex64],
    dict: &BlockDictionary,
    prior: &RbmParams,
    hyper: &ModelHyper,
    opts: &SolverOptions,
) -> Result<EstimateResult> {
    run_observed(y, dict, prior, hyper, opts, |_, _| {})
}

/// [`run`] calling `observer(sweep, state)` after every sweep.
pub fn run_observed<F>(
    y: &[Complex64],
    dict: &BlockDictionary,
    prior: &RbmParams,
    hyper: &ModelHyper,
    opts: &SolverOptions,
    mut observer: F,
) -> Result<EstimateResult>
where
    F: FnMut(usize, &PosteriorState),
{
    check_inputs(y, dict, prior, hyper, opts)?;
    let mut state = PosteriorState::initial(y, dict, prior, hyper);
    let mut order: Vec<usize> = (0..dict.n_coeffs()).collect();
    let mut perm_rng = match opts.order {
        UpdateOrder::Sequential => None,
        UpdateOrder::RandomPermutation { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
    };
    let mut trace = vec![compute_free_energy(&state, y, dict, prior, hyper)?];
    let mut deltas = Vec::new();
    let mut converged = false;
    let mut sweeps_used = 0;
    for it in 0..opts.max_sweeps {
        if let Some(rng) = perm_rng.as_mut() {
            order.shuffle(rng);
        }
        let before = state.qs.clone();
        sweep(&mut state, &order, dict, prior, hyper, opts);
        sweeps_used = it + 1;
        let delta = before
            .iter()
            .zip(&state.qs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        deltas.push(delta);
        trace.push(compute_free_energy(&state, y, dict, prior, hyper)?);
        observer(it + 1, &state);
        if delta < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(EstimateResult {
        s_hat: state.qs.iter().map(|&q| q > opts.threshold).collect(),
        z_hat: state.posterior_mean(),
        qs: state.qs,
        qh: state.qh,
        sweeps_used,
        free_energy_trace: trace,
        delta_trace: deltas,
        converged,
    })
}

/// Bernoulli-prior baseline: the same solver with W = 0, no hidden units and
/// b_n = logit(p).
pub fn sobap_baseline(
    y: &[Complex64],
    dict: &BlockDictionary,
    p_bernoulli: f64,
    hyper: &ModelHyper,
    opts: &SolverOptions,
) -> Result<EstimateResult> {
    let prior = RbmParams::bernoulli(dict.n_coeffs(), p_bernoulli)?;
    run(y, dict, &prior, hyper, opts)
}
