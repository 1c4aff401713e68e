//! Queue model and phase-type inter-arrival distributions.
//!
//! A phase-type distribution is the absorption time of a finite Markov
//! chain with initial law `γ` and sub-generator `T`; the exit-rate vector
//! is `T⃗ = −T·e`. The queue model adds the server count `c`, the
//! exponential service rate `μ`, and the impatience bound `τ`: a customer
//! whose waiting time would reach `τ` is lost.
//!
//! Both types are immutable after construction and safe to share across
//! threads; every invariant is checked when they are built, never later.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{complexify, rcond, RMat, RVec};

/// Tolerance on |Σγ_j − 1| when validating the initial-phase law.
pub const PROB_SUM_TOL: f64 = 1e-12;
/// Slack below zero absorbed (and clamped) when validating nonnegative
/// quantities; anything more negative is a modeling error.
pub const NONNEG_SLACK: f64 = 1e-14;
/// Reciprocal-condition threshold below which `T` is rejected as singular.
pub const SINGULAR_RCOND: f64 = 1e-13;

/// Phase-type inter-arrival distribution `(γ, T)` with the derived exit
/// vector `T⃗ = −T·e`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseType {
    gamma: RVec,
    t: RMat,
    exit: RVec,
}

impl PhaseType {
    /// Number of phases.
    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// Initial phase probabilities γ.
    pub fn gamma(&self) -> &RVec {
        &self.gamma
    }

    /// Sub-generator T.
    pub fn t(&self) -> &RMat {
        &self.t
    }

    /// Exit rate vector T⃗ = −T·e.
    pub fn exit(&self) -> &RVec {
        &self.exit
    }

    /// Total rate out of phase `j`: λ_j = −t_jj.
    pub fn rate(&self, j: usize) -> f64 {
        -self.t[(j, j)]
    }

    /// Probability of jumping from phase `j` to phase `l` (0 for `l == j`):
    /// β_{jl} = t_{jl}/λ_j.
    pub fn jump_prob(&self, j: usize, l: usize) -> f64 {
        if j == l {
            0.0
        } else {
            self.t[(j, l)] / self.rate(j)
        }
    }

    /// Probability of absorbing (an arrival) out of phase `j`:
    /// α_j = exit_j/λ_j.
    pub fn absorb_prob(&self, j: usize) -> f64 {
        self.exit[j] / self.rate(j)
    }
}

fn clamp_nonneg(x: f64, what: &str, pos: String) -> Result<f64> {
    if x < -NONNEG_SLACK {
        return Err(Error::InvalidModel(format!("{what} {pos} is negative ({x:e})")));
    }
    Ok(x.max(0.0))
}

/// Builds and validates a phase-type distribution from `γ` and `T`.
pub fn make_phase_type(gamma: &[f64], t_rows: &[Vec<f64>]) -> Result<PhaseType> {
    let m = gamma.len();
    if m == 0 {
        return Err(Error::Dimension("gamma: must have at least one phase".into()));
    }
    if t_rows.len() != m || t_rows.iter().any(|r| r.len() != m) {
        return Err(Error::Dimension(format!(
            "T: expected a {m}x{m} matrix to match gamma of length {m}"
        )));
    }
    if gamma.iter().any(|x| !x.is_finite())
        || t_rows.iter().flatten().any(|x| !x.is_finite())
    {
        return Err(Error::InvalidModel("gamma/T: non-finite entry".into()));
    }

    let mut g = RVec::zeros(m);
    for (j, &x) in gamma.iter().enumerate() {
        g[j] = clamp_nonneg(x, "gamma", format!("[{j}]"))?;
    }
    let sum: f64 = g.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::InvalidModel(format!(
            "gamma: entries sum to {sum:.17}, expected 1 within {PROB_SUM_TOL:e}"
        )));
    }

    let mut t = RMat::zeros(m, m);
    for (i, row) in t_rows.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            if i == j {
                if x >= 0.0 {
                    return Err(Error::InvalidModel(format!(
                        "T: diagonal entry [{i}][{j}] must be strictly negative, got {x}"
                    )));
                }
                t[(i, j)] = x;
            } else {
                t[(i, j)] = clamp_nonneg(x, "T", format!("[{i}][{j}]"))?;
            }
        }
    }

    let r = rcond(&complexify(&t))?;
    if r < SINGULAR_RCOND {
        return Err(Error::InvalidModel(format!(
            "T: numerically singular (reciprocal condition {r:.3e} < {SINGULAR_RCOND:e})"
        )));
    }

    let ones = RVec::from_element(m, 1.0);
    let mut exit = -(&t * &ones);
    for j in 0..m {
        exit[j] = clamp_nonneg(exit[j], "exit vector -T*e", format!("[{j}]"))?;
    }

    Ok(PhaseType { gamma: g, t, exit })
}

/// Builds the Coxian distribution with the given per-phase rates and
/// continuation probabilities: γ = (1, 0, …, 0), `T` bidiagonal with
/// t_ii = −rates_i and t_{i,i+1} = rates_i·continue_probs_i.
pub fn make_coxian(rates: &[f64], continue_probs: &[f64]) -> Result<PhaseType> {
    let m = rates.len();
    if m == 0 {
        return Err(Error::Dimension("rates: must have at least one phase".into()));
    }
    if continue_probs.len() != m - 1 {
        return Err(Error::Dimension(format!(
            "continue_probs: expected length {} for {m} phases, got {}",
            m - 1,
            continue_probs.len()
        )));
    }
    for (i, &r) in rates.iter().enumerate() {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::InvalidModel(format!(
                "rates[{i}] must be positive and finite, got {r}"
            )));
        }
    }
    for (i, &p) in continue_probs.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidModel(format!(
                "continue_probs[{i}] must lie in [0, 1], got {p}"
            )));
        }
    }

    let mut gamma = vec![0.0; m];
    gamma[0] = 1.0;
    let mut t = vec![vec![0.0; m]; m];
    for i in 0..m {
        t[i][i] = -rates[i];
        if i + 1 < m {
            t[i][i + 1] = rates[i] * continue_probs[i];
        }
    }
    make_phase_type(&gamma, &t)
}

/// Mean of the distribution: γ·(−T)⁻¹·e.
pub fn ph_mean(ph: &PhaseType) -> f64 {
    let m = ph.dim();
    let neg_t_inv = (-ph.t.clone())
        .try_inverse()
        .expect("T validated nonsingular at construction");
    let ones = RVec::from_element(m, 1.0);
    (ph.gamma.transpose() * neg_t_inv * ones)[(0, 0)]
}

/// One exponential draw by inversion of the stream's next uniform.
pub(crate) fn sample_exp<R: Rng>(rng: &mut R, rate: f64) -> f64 {
    let u: f64 = rng.gen();
    -(1.0 - u).ln() / rate
}

/// Draws an index from a sub-probability vector; `None` selects the
/// complementary (absorption) branch. No uniform is consumed when every
/// entry is zero — the choice is forced.
fn sample_index<R: Rng>(rng: &mut R, probs: &[f64]) -> Option<usize> {
    if probs.iter().all(|&p| p <= 0.0) {
        return None;
    }
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Some(i);
        }
    }
    // Rounding can leave acc marginally below a nominal total of 1;
    // attribute the sliver to the last positive entry.
    if acc > 1.0 - 1e-9 {
        return probs.iter().rposition(|&p| p > 0.0);
    }
    None
}

/// One absorption time of the phase chain: start phase ~ γ, hold
/// Exp(λ_j) in phase j, then jump with probability β_{jl} or absorb with
/// probability α_j. Deterministic given the state of `rng`; a forced
/// choice (single positive γ entry, no jump out of a phase) consumes no
/// randomness, so a single-phase distribution reduces to exponential
/// inversion of the stream's next uniform.
pub fn ph_sample<R: Rng>(ph: &PhaseType, rng: &mut R) -> f64 {
    let m = ph.dim();
    let mut total = 0.0;
    let gamma: Vec<f64> = ph.gamma.iter().copied().collect();
    let mut phase = if gamma.iter().filter(|&&p| p > 0.0).count() == 1 {
        gamma.iter().position(|&p| p > 0.0).unwrap()
    } else {
        sample_index(rng, &gamma).expect("gamma validated to sum to 1")
    };
    loop {
        total += sample_exp(rng, ph.rate(phase));
        let jumps: Vec<f64> = (0..m).map(|l| ph.jump_prob(phase, l)).collect();
        match sample_index(rng, &jumps) {
            Some(next) => phase = next,
            None => return total,
        }
    }
}

/// Queue model: phase-type arrivals, `c` exponential servers of rate `μ`,
/// FCFS discipline, deterministic impatience bound `τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueModel {
    pub ph: PhaseType,
    pub c: usize,
    pub mu: f64,
    pub tau: f64,
}

impl QueueModel {
    pub fn new(ph: PhaseType, c: usize, mu: f64, tau: f64) -> Result<Self> {
        if c < 1 {
            return Err(Error::InvalidModel("c: server count must be at least 1".into()));
        }
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::InvalidModel(format!(
                "mu: service rate must be positive and finite, got {mu}"
            )));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidModel(format!(
                "tau: impatience time must be positive and finite, got {tau}"
            )));
        }
        Ok(QueueModel { ph, c, mu, tau })
    }

    /// Number of arrival phases.
    pub fn m(&self) -> usize {
        self.ph.dim()
    }
}

/// On-disk model description.
///
/// ```json
/// {"gamma": [..m..], "T": [[..m..] x m], "c": 1, "mu": 1.0, "tau": 2.0}
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelInput {
    pub gamma: Vec<f64>,
    #[serde(rename = "T")]
    pub t: Vec<Vec<f64>>,
    pub c: usize,
    pub mu: f64,
    pub tau: f64,
}

impl ModelInput {
    pub fn into_model(self) -> Result<QueueModel> {
        let ph = make_phase_type(&self.gamma, &self.t)?;
        QueueModel::new(ph, self.c, self.mu, self.tau)
    }

    pub fn from_model(model: &QueueModel) -> Self {
        let m = model.m();
        ModelInput {
            gamma: model.ph.gamma().iter().copied().collect(),
            t: (0..m)
                .map(|i| (0..m).map(|j| model.ph.t()[(i, j)]).collect())
                .collect(),
            c: model.c,
            mu: model.mu,
            tau: model.tau,
        }
    }
}

/// Parses a model from JSON text. Syntax errors carry line/column from
/// the parser; semantic violations name the offending field.
pub fn model_from_json_str(text: &str) -> Result<QueueModel> {
    let input: ModelInput = serde_json::from_str(text)?;
    input.into_model()
}

pub fn model_from_json_file(path: &Path) -> Result<QueueModel> {
    let text = std::fs::read_to_string(path)?;
    model_from_json_str(&text)
}
