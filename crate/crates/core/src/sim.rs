//! Discrete-event simulation oracle for the FCFS PH/M/c queue with a
//! deterministic waiting-time bound.
//!
//! The simulation runs directly on the remaining-loads recursion:
//! between arrivals every load decays at unit rate with floor 0; at an
//! arrival the offered wait is w = min_i V_i; a customer with w < τ
//! joins, adding an Exp(μ) service requirement to the minimizing server
//! (lowest index on ties); a customer with w ≥ τ is lost and the loads
//! are unchanged.
//!
//! The estimated quantities are *time-stationary*: the atom, loss and
//! CDF values are exact occupation-time fractions of the piecewise
//! linear trajectory min V(t), not arrival-epoch samples. Arrival-epoch
//! sampling would estimate the arrival-average law instead, which
//! differs from the stationary law whenever the arrival process is not
//! Poisson — exactly the regime this oracle must cover. On an interval
//! of length A starting from m₀ = min_i V_i, the running minimum is
//! max(0, m₀ − s), so all occupation times below a level have closed
//! forms and the estimator adds no discretization error.
//!
//! Replications own independent counter-seeded RNG streams and are
//! merged in replication order, so results are bit-identical regardless
//! of thread count.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ph_mean, ph_sample, sample_exp, QueueModel};
use crate::waiting::VirtualWaitDistribution;

/// Batches per replication for the batch-means standard errors.
const BATCHES_PER_REP: usize = 8;

/// Simulation sizes, seed, and evaluation grid.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub seed: u64,
    /// Arrivals discarded before measurement, per replication.
    pub warmup_arrivals: usize,
    /// Arrivals measured per replication.
    pub measured_arrivals: usize,
    pub replications: usize,
    /// Evaluation points for the empirical CDF, inside [0, τ].
    pub grid: Vec<f64>,
}

impl SimConfig {
    /// Default configuration for a model: warmup is the larger of 10⁵
    /// arrivals and 50·c·(1/μ) divided by the mean inter-arrival time,
    /// and the grid has `grid_points` evenly spaced interior points.
    pub fn for_model(
        model: &QueueModel,
        seed: u64,
        measured_arrivals: usize,
        replications: usize,
        grid_points: usize,
    ) -> Result<Self> {
        let mean_ia = ph_mean(&model.ph);
        let rule = (50.0 * model.c as f64 / model.mu / mean_ia).ceil() as usize;
        let grid = (1..=grid_points)
            .map(|i| model.tau * i as f64 / (grid_points as f64 + 1.0))
            .collect();
        let cfg = SimConfig {
            seed,
            warmup_arrivals: rule.max(100_000),
            measured_arrivals,
            replications,
            grid,
        };
        cfg.validate(model)?;
        Ok(cfg)
    }

    pub fn validate(&self, model: &QueueModel) -> Result<()> {
        if self.measured_arrivals < 10_000 {
            return Err(Error::InvalidModel(format!(
                "measured_arrivals must be at least 10^4, got {}",
                self.measured_arrivals
            )));
        }
        if self.replications < 1 {
            return Err(Error::InvalidModel("replications must be at least 1".into()));
        }
        if self
            .grid
            .iter()
            .any(|&x| !(0.0..=model.tau).contains(&x) || !x.is_finite())
        {
            return Err(Error::InvalidModel(
                "grid points must lie inside [0, tau]".into(),
            ));
        }
        if self.grid.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidModel("grid points must be sorted".into()));
        }
        Ok(())
    }
}

/// Empirical estimates with batch-means standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct SimEstimate {
    /// Time fraction with min V = 0 (a virtual arrival waits 0).
    pub atom0_hat: f64,
    pub atom0_se: f64,
    /// Time fraction with min V ≥ τ (a virtual arrival would be lost).
    pub loss_hat: f64,
    pub loss_se: f64,
    /// Fraction of simulated arrivals actually lost (offered wait ≥ τ).
    pub arrival_loss_hat: f64,
    /// (v, time fraction with min V ≤ v) at the configured grid.
    pub ecdf: Vec<(f64, f64)>,
    /// Time-average remaining load per server.
    pub mean_load: Vec<f64>,
    /// Pooled measured arrivals across replications.
    pub measured_arrivals_total: usize,
}

/// Occupation-time accumulator for one replication.
struct Accumulator {
    time: f64,
    atom_time: f64,
    loss_time: f64,
    /// Difference arrays for occupation time below each grid point:
    /// below[j] = prefix(d_const)[j] + prefix(d_slope)[j]·grid[j]
    ///          + prefix(d_full)[j].
    d_const: Vec<f64>,
    d_slope: Vec<f64>,
    d_full: Vec<f64>,
    load_integral: Vec<f64>,
    arrivals: usize,
    lost: usize,
    /// (atom_time, loss_time, time) per batch.
    batches: Vec<(f64, f64, f64)>,
}

impl Accumulator {
    fn new(grid_len: usize, servers: usize) -> Self {
        Accumulator {
            time: 0.0,
            atom_time: 0.0,
            loss_time: 0.0,
            d_const: vec![0.0; grid_len + 1],
            d_slope: vec![0.0; grid_len + 1],
            d_full: vec![0.0; grid_len + 1],
            load_integral: vec![0.0; servers],
            arrivals: 0,
            lost: 0,
            batches: Vec::new(),
        }
    }

    /// Accounts one inter-arrival interval of length `a` starting from
    /// loads `v` (minimum `m0`), with impatience bound `tau`.
    fn add_interval(&mut self, grid: &[f64], v: &[f64], m0: f64, a: f64, tau: f64) {
        self.time += a;
        self.atom_time += (a - m0).max(0.0);
        self.loss_time += (m0 - tau).clamp(0.0, a);
        for (acc, &vi) in self.load_integral.iter_mut().zip(v.iter()) {
            let rem = (vi - a).max(0.0);
            *acc += (vi * vi - rem * rem) / 2.0;
        }

        // Occupation below level x: a for x ≥ m0; (a − m0) + x for
        // m0 − a < x < m0; 0 otherwise.
        let hi = grid.partition_point(|&g| g < m0);
        let lo = grid.partition_point(|&g| g <= m0 - a);
        self.d_full[hi] += a;
        self.d_const[lo] += a - m0;
        self.d_const[hi] -= a - m0;
        self.d_slope[lo] += 1.0;
        self.d_slope[hi] -= 1.0;
    }

    fn finish_batch(&mut self) {
        let done: (f64, f64, f64) = self
            .batches
            .iter()
            .fold((0.0, 0.0, 0.0), |s, b| (s.0 + b.0, s.1 + b.1, s.2 + b.2));
        self.batches.push((
            self.atom_time - done.0,
            self.loss_time - done.1,
            self.time - done.2,
        ));
    }
}

fn run_replication(model: &QueueModel, cfg: &SimConfig, rep: usize) -> Accumulator {
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    rng.set_stream(rep as u64);

    let c = model.c;
    let mut loads = vec![0.0f64; c];
    let mut acc = Accumulator::new(cfg.grid.len(), c);
    let total = cfg.warmup_arrivals + cfg.measured_arrivals;
    let batch_size = (cfg.measured_arrivals / BATCHES_PER_REP).max(1);

    for n in 0..total {
        let a = ph_sample(&model.ph, &mut rng);
        let measured = n >= cfg.warmup_arrivals;

        if measured {
            let m0 = loads.iter().copied().fold(f64::INFINITY, f64::min);
            acc.add_interval(&cfg.grid, &loads, m0, a, model.tau);
        }

        // Decay to the arrival instant, then the admission decision.
        for v in loads.iter_mut() {
            *v = (*v - a).max(0.0);
        }
        let (mut argmin, mut w) = (0usize, loads[0]);
        for (i, &v) in loads.iter().enumerate().skip(1) {
            if v < w {
                w = v;
                argmin = i;
            }
        }
        if w < model.tau {
            let service = sample_exp(&mut rng, model.mu);
            loads[argmin] += service;
        } else if measured {
            acc.lost += 1;
        }
        if measured {
            acc.arrivals += 1;
            if acc.arrivals % batch_size == 0 && acc.batches.len() + 1 < BATCHES_PER_REP {
                acc.finish_batch();
            }
        }
    }
    acc.finish_batch();
    acc
}

/// Runs the simulation. Deterministic given (model, config): the merge
/// happens in replication order whatever the thread count.
pub fn run_sim(model: &QueueModel, cfg: &SimConfig) -> Result<SimEstimate> {
    cfg.validate(model)?;
    let accs: Vec<Accumulator> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| run_replication(model, cfg, rep))
        .collect();

    let g = cfg.grid.len();
    let c = model.c;
    let mut time = 0.0;
    let mut atom_time = 0.0;
    let mut loss_time = 0.0;
    let mut d_const = vec![0.0; g + 1];
    let mut d_slope = vec![0.0; g + 1];
    let mut d_full = vec![0.0; g + 1];
    let mut load_integral = vec![0.0; c];
    let mut arrivals = 0usize;
    let mut lost = 0usize;
    let mut batches = Vec::new();
    for acc in &accs {
        time += acc.time;
        atom_time += acc.atom_time;
        loss_time += acc.loss_time;
        for j in 0..=g {
            d_const[j] += acc.d_const[j];
            d_slope[j] += acc.d_slope[j];
            d_full[j] += acc.d_full[j];
        }
        for i in 0..c {
            load_integral[i] += acc.load_integral[i];
        }
        arrivals += acc.arrivals;
        lost += acc.lost;
        batches.extend_from_slice(&acc.batches);
    }
    if time <= 0.0 {
        return Err(Error::Numerical("simulation accumulated no time".into()));
    }

    let mut ecdf = Vec::with_capacity(g);
    let (mut pc, mut ps, mut pf) = (0.0f64, 0.0f64, 0.0f64);
    for j in 0..g {
        pc += d_const[j];
        ps += d_slope[j];
        pf += d_full[j];
        let below = pc + ps * cfg.grid[j] + pf;
        ecdf.push((cfg.grid[j], (below / time).clamp(0.0, 1.0)));
    }

    let se_of = |select: &dyn Fn(&(f64, f64, f64)) -> f64, pooled: f64| -> f64 {
        let nb = batches.len();
        if nb < 2 {
            return f64::NAN;
        }
        let var: f64 = batches
            .iter()
            .map(|b| {
                let e = select(b) / b.2;
                (e - pooled) * (e - pooled)
            })
            .sum::<f64>()
            / (nb as f64 - 1.0);
        (var / nb as f64).sqrt()
    };

    let atom0_hat = atom_time / time;
    let loss_hat = loss_time / time;
    Ok(SimEstimate {
        atom0_hat,
        atom0_se: se_of(&|b| b.0, atom0_hat),
        loss_hat,
        loss_se: se_of(&|b| b.1, loss_hat),
        arrival_loss_hat: lost as f64 / arrivals as f64,
        ecdf,
        mean_load: load_integral.iter().map(|x| x / time).collect(),
        measured_arrivals_total: arrivals,
    })
}

/// Comparison thresholds: Kolmogorov–Smirnov distance on the conditional
/// CDF, and z-score bound against binomial standard errors.
#[derive(Debug, Clone, Copy)]
pub struct CompareThresholds {
    pub ks: f64,
    pub z: f64,
}

impl Default for CompareThresholds {
    fn default() -> Self {
        CompareThresholds { ks: 0.005, z: 4.0 }
    }
}

/// Analytic-vs-empirical comparison verdict.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ComparisonReport {
    /// Sup gap between the conditional-on-(0,τ) CDFs on the grid.
    pub ks_distance: f64,
    pub atom_z: f64,
    pub loss_z: f64,
    pub ks_pass: bool,
    pub atom_pass: bool,
    pub loss_pass: bool,
    pub pass: bool,
}

/// Compares an analytic distribution against simulation estimates:
/// KS distance of the conditional CDFs plus z-scores of atom and loss
/// against binomial standard errors at the pooled arrival count.
pub fn compare(
    analytic: &VirtualWaitDistribution,
    emp: &SimEstimate,
    thresholds: CompareThresholds,
) -> Result<ComparisonReport> {
    if emp.ecdf.is_empty() {
        return Err(Error::Dimension("empirical CDF grid is empty".into()));
    }
    if emp
        .ecdf
        .iter()
        .any(|&(v, _)| !(0.0..analytic.tau).contains(&v))
    {
        return Err(Error::Dimension(format!(
            "grid mismatch: empirical grid extends outside [0, {})",
            analytic.tau
        )));
    }

    let cont_a = analytic.continuous_mass();
    let cont_e = 1.0 - emp.atom0_hat - emp.loss_hat;
    if cont_a <= 0.0 || cont_e <= 0.0 {
        return Err(Error::Numerical(
            "conditional comparison impossible: no continuous mass".into(),
        ));
    }
    let mut ks: f64 = 0.0;
    for &(v, fe) in &emp.ecdf {
        let fa = (analytic.cdf(v)? - analytic.atom0) / cont_a;
        let fe_cond = (fe - emp.atom0_hat) / cont_e;
        ks = ks.max((fa - fe_cond).abs());
    }

    let n = emp.measured_arrivals_total as f64;
    let z = |p_hat: f64, p: f64| (p_hat - p) / (p * (1.0 - p) / n).sqrt();
    let atom_z = z(emp.atom0_hat, analytic.atom0);
    let loss_z = z(emp.loss_hat, analytic.tail);

    let ks_pass = ks <= thresholds.ks;
    let atom_pass = atom_z.abs() <= thresholds.z;
    let loss_pass = loss_z.abs() <= thresholds.z;
    Ok(ComparisonReport {
        ks_distance: ks,
        atom_z,
        loss_z,
        ks_pass,
        atom_pass,
        loss_pass,
        pass: ks_pass && atom_pass && loss_pass,
    })
}

fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes the estimate as CSV: `stat,estimate,stderr` rows followed by
/// an `ecdf_v,ecdf_value` block.
pub fn write_sim_csv<W: Write>(est: &SimEstimate, out: &mut W) -> Result<()> {
    writeln!(out, "stat,estimate,stderr")?;
    writeln!(out, "atom0,{},{}", fmt_g17(est.atom0_hat), fmt_g17(est.atom0_se))?;
    writeln!(out, "loss,{},{}", fmt_g17(est.loss_hat), fmt_g17(est.loss_se))?;
    writeln!(out, "arrival_loss,{},", fmt_g17(est.arrival_loss_hat))?;
    for (i, x) in est.mean_load.iter().enumerate() {
        writeln!(out, "mean_load_{i},{},", fmt_g17(*x))?;
    }
    writeln!(out, "ecdf_v,ecdf_value")?;
    for &(v, f) in &est.ecdf {
        writeln!(out, "{},{}", fmt_g17(v), fmt_g17(f))?;
    }
    Ok(())
}
