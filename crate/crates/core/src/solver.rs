//! Spectral solver for the stationary remaining-loads distribution.
//!
//! The pipeline, per model:
//!
//! 1. Spectral data. η_1,…,η_m are the eigenvalues of (cμ·e·γ + T)/c in
//!    decreasing modulus order; F holds the right eigenvectors of
//!    cμ·e·γ + T. κ_1 = 0, κ_2,…,κ_m are the eigenvalues of the arrival
//!    phase generator G = T + T⃗·γ, with left eigenvector rows B and the
//!    diagonal matrices D = diag 1/(cμ−κ_ℓ) and E = diag e^{−τcη_k}.
//! 2. Per mode k: the rank-one matrix R_k = T⃗·γ·(cη_k I − T)⁻¹, a left
//!    nullvector y_{c−1}^k of (c−1)μ(I − e·γ) − T − cμR_k normalized to
//!    leading component 1, the top level y_c^k = cμ·y_{c−1}^k·R_k, and a
//!    downward recursion for y_{c−2}^k,…,y_0^k.
//! 3. The mixing coefficients δ, solved two independent ways: directly,
//!    by stacking the m balance equations with the normalization row and
//!    least-squaring via QR; and through the real left nullvector φ of
//!    the bracket matrix, undoing φ = δ·E·Y_{c−1}. The direct result is
//!    authoritative; the gap between routes is the cheapest detector of
//!    spectral trouble and is always recorded.
//!
//! All preconditions on the spectrum (distinct η, no collision with the
//! eigenvalues of T/c, irreducible G, distinct κ) are verified up front
//! and reported as structured diagnostics naming the violated clause.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::QueueModel;
use crate::numerics::{
    cinverse, complexify, eig_general, left_nullvector_scaled, qr_solve_stacked, rank_is_m_minus_1_scaled,
    rcond, row_solve, sort_spectrum, C, CMat, CRow, CVec, RMat, TOL_NONZERO_DEFAULT,
    TOL_ZERO_DEFAULT,
};

/// Absolute tolerance on the characteristic-root identity
/// (μ−η)/μ = γ(cηI−T)⁻¹T⃗ for every computed η.
pub const ETA_ROOT_TOL: f64 = 1e-10;
/// Absolute tolerance on the solved balance equations ‖δEY(…)‖.
pub const BALANCE_TOL: f64 = 1e-9;
/// Absolute tolerance on the normalization equation |Σδ_k w_k − 1|.
pub const NORMALIZATION_TOL: f64 = 1e-10;
/// Largest imaginary residue tolerated in the (provably real) φ vector.
pub const PHI_IMAG_TOL: f64 = 1e-10;
/// |κ| below this fraction of ‖G‖ is snapped to the exact zero eigenvalue.
pub const KAPPA_ZERO_RELTOL: f64 = 1e-10;
/// Below this modulus, η-dependent expressions switch to series form.
pub const ETA_SERIES_THRESHOLD: f64 = 1e-6;

/// Order of the factors relating φ to δ. The solved system fixes
/// δ·E·Y_{c−1}·(bracket) = 0, so recovering δ from φ uses
/// φ = δ·E·Y_{c−1} by default; the transposed reading φ = δ·Y_{c−1}·E is
/// kept available for investigation (E is diagonal, so the two differ in
/// general).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhiOrder {
    WeightsThenRows,
    RowsThenWeights,
}

impl PhiOrder {
    fn as_str(self) -> &'static str {
        match self {
            PhiOrder::WeightsThenRows => "weights-then-rows",
            PhiOrder::RowsThenWeights => "rows-then-weights",
        }
    }
}

/// Tolerances and switches for the solver pipeline.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// "Numerically zero" threshold for rank decisions.
    pub tol_zero: f64,
    /// "Safely nonzero" threshold for rank decisions.
    pub tol_nonzero: f64,
    /// Relative spectral margins below this are hard errors.
    pub hard_margin: f64,
    /// Relative spectral margins below this (but above `hard_margin`)
    /// produce a warning verdict, not an error.
    pub warn_margin: f64,
    pub phi_order: PhiOrder,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol_zero: TOL_ZERO_DEFAULT,
            tol_nonzero: TOL_NONZERO_DEFAULT,
            hard_margin: 1e-8,
            warn_margin: 1e-6,
            phi_order: PhiOrder::WeightsThenRows,
        }
    }
}

/// Ordered spectra and eigenvector matrices for one model.
#[derive(Debug, Clone)]
pub struct SpectralData {
    /// η_k, decreasing modulus, conjugate pairs positive-imaginary first.
    pub eta: CVec,
    /// Eigenvalues of the arrival phase generator, κ_1 = 0 exactly.
    pub kappa: CVec,
    /// Rows: unit-norm left eigenvectors of the phase generator, κ order.
    pub b: CMat,
    /// diag 1/(cμ − κ_ℓ).
    pub d: CMat,
    /// diag e^{−τcη_k}.
    pub e: CMat,
    /// Columns: right eigenvectors of cμ·e·γ + T, η order.
    pub f: CMat,
    pub finv: CMat,
}

impl SpectralData {
    /// B⁻¹DB; equals the (real) resolvent (cμI − T − T⃗γ)⁻¹ and is
    /// invariant under rescaling of the rows of B.
    pub fn b_inv_d_b(&self) -> Result<CMat> {
        Ok(cinverse(&self.b)? * &self.d * &self.b)
    }
}

/// Pass/warn/fail verdict for a single checked clause.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Warn,
    Fail,
}

/// One clause of the spectral preconditions with its measured margin
/// (`None` when the clause is vacuous, e.g. distinctness with m = 1).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClauseReport {
    pub name: String,
    pub margin: Option<f64>,
    pub verdict: Verdict,
}

/// Margins and verdicts for the four spectral preconditions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub eta_distinct: ClauseReport,
    pub eta_vs_t_over_c: ClauseReport,
    pub phase_generator_irreducible: ClauseReport,
    pub kappa_distinct: ClauseReport,
}

impl AssumptionReport {
    pub fn pass(&self) -> bool {
        self.clauses().iter().all(|c| c.verdict != Verdict::Fail)
    }

    pub fn clauses(&self) -> [&ClauseReport; 4] {
        [
            &self.eta_distinct,
            &self.eta_vs_t_over_c,
            &self.phase_generator_irreducible,
            &self.kappa_distinct,
        ]
    }

    /// Structural failures (reducibility) take precedence: they
    /// invalidate the eigenvalue margins measured by the other clauses.
    fn first_failure(&self) -> Option<&ClauseReport> {
        [
            &self.phase_generator_irreducible,
            &self.eta_distinct,
            &self.eta_vs_t_over_c,
            &self.kappa_distinct,
        ]
        .into_iter()
        .find(|c| c.verdict == Verdict::Fail)
    }
}

/// Named residuals and solve facts recorded with every solution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    /// ‖δ·E·Y_{c−1}·(bracket)‖.
    pub balance_residual: f64,
    /// |Σ_k δ_k w_k − 1| for the normalization weights w.
    pub normalization_residual: f64,
    /// max_k |(μ−η_k)/μ − γ(cη_k I−T)⁻¹T⃗|.
    pub eta_root_max_residual: f64,
    /// max_k ‖R_k·T⃗ − ((μ−η_k)/μ)·T⃗‖.
    pub r_exit_eigen_max_residual: f64,
    /// Per-mode row systems: worst σ_min ratio (should be ≤ tol_zero).
    pub mode_system_max_sigma_ratio: f64,
    /// Per-mode row systems: worst σ_{m−1} ratio (should be ≥ tol_nonzero).
    pub mode_system_min_second_sigma_ratio: f64,
    /// φ-system bracket: σ_min ratio.
    pub phi_system_sigma_ratio: f64,
    /// φ-system bracket: σ_{m−1} ratio.
    pub phi_system_second_sigma_ratio: f64,
    /// Reciprocal condition of the matrix of y_{c−1} rows.
    pub y_rows_rcond: f64,
    /// max_k |μ·(y_c^k·T⃗) − cμ(μ−η_k)·(y_{c−1}^k·T⃗)|.
    pub exit_rate_identity_max_residual: f64,
    /// max_k ‖y_c^k(cη_k I−T) − cμ·y_{c−1}^k·T⃗·γ‖.
    pub resolvent_row_identity_max_residual: f64,
    /// max over conjugate pairs of |δ_l − conj(δ_k)|.
    pub delta_conjugate_pairing_residual: f64,
    /// ‖δ_direct − δ_phi‖ / ‖δ_direct‖.
    pub route_gap: f64,
    /// max_j |Im φ_j| after normalization.
    pub phi_imag_residual: f64,
    /// ‖Im(B⁻¹DB)‖.
    pub bdb_imag_residual: f64,
    /// ‖B⁻¹DB − (cμI − T − T⃗γ)⁻¹‖ / ‖(cμI − T − T⃗γ)⁻¹‖.
    pub bdb_resolvent_gap: f64,
    /// With one server the top level is seeded from the idle-level
    /// nullvector: y_1 = cμ·y_0·R_k. Recorded for audit.
    pub c1_top_level_from_idle_vector: bool,
    pub phi_order: String,
}

/// Full solution of the remaining-loads problem for one model.
#[derive(Debug, Clone)]
pub struct LoadSolution {
    pub model: QueueModel,
    pub spectral: SpectralData,
    /// R_k, one rank-one matrix per mode.
    pub r: Vec<CMat>,
    /// y[i][k] for occupancy level i = 0..=c and mode k = 0..m.
    pub y: Vec<Vec<CRow>>,
    /// Mixing coefficients (direct route; authoritative).
    pub delta: CVec,
    /// Mixing coefficients recovered through φ (cross-check).
    pub delta_phi: CVec,
    pub diagnostics: Diagnostics,
}

/// Complexified model quantities shared by the solver stages.
pub(crate) struct ModelMats {
    pub m: usize,
    pub c: f64,
    pub mu: f64,
    pub tau: f64,
    pub gamma: CRow,
    pub exit: CVec,
    pub t: CMat,
    /// e·γ (rank-one, rows all equal to γ).
    pub e_gamma: CMat,
}

impl ModelMats {
    pub fn new(model: &QueueModel) -> Self {
        let m = model.m();
        let gamma = CRow::from_iterator(m, model.ph.gamma().iter().map(|&x| C::new(x, 0.0)));
        let exit = CVec::from_iterator(m, model.ph.exit().iter().map(|&x| C::new(x, 0.0)));
        let t = complexify(model.ph.t());
        let ones = CVec::from_element(m, C::new(1.0, 0.0));
        let e_gamma = &ones * &gamma;
        ModelMats {
            m,
            c: model.c as f64,
            mu: model.mu,
            tau: model.tau,
            gamma,
            exit,
            t,
            e_gamma,
        }
    }

    /// cμ·e·γ + T; its eigenvalues are cη_k.
    pub fn exponent_matrix(&self, model: &QueueModel) -> RMat {
        let m = self.m;
        let cmu = self.c * self.mu;
        let mut a = model.ph.t().clone();
        for i in 0..m {
            for j in 0..m {
                a[(i, j)] += cmu * model.ph.gamma()[j];
            }
        }
        a
    }

    /// Arrival phase generator G = T + T⃗·γ.
    pub fn phase_generator(&self, model: &QueueModel) -> RMat {
        let m = self.m;
        let mut g = model.ph.t().clone();
        for i in 0..m {
            for j in 0..m {
                g[(i, j)] += model.ph.exit()[i] * model.ph.gamma()[j];
            }
        }
        g
    }
}

/// (1 − e^{−w·η})/η, evaluated by series when |η| is tiny so that no
/// digits are lost to cancellation (η = 0 is a legal spectral point).
pub(crate) fn one_minus_exp_ratio(eta: C, w: f64) -> C {
    if eta.norm() < ETA_SERIES_THRESHOLD {
        // w − w²η/2 + w³η²/6 − … = w·Σ (−wη)^n/(n+1)!
        let x = -eta * w;
        let mut term = C::new(w, 0.0);
        let mut sum = term;
        for n in 1..8 {
            term = term * x / (n as f64 + 1.0);
            sum += term;
        }
        sum
    } else {
        (C::new(1.0, 0.0) - (-eta * w).exp()) / eta
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

fn strongly_connected(adj: &[Vec<usize>]) -> bool {
    let n = adj.len();
    if n <= 1 {
        return true;
    }
    let mut radj = vec![Vec::new(); n];
    for (u, outs) in adj.iter().enumerate() {
        for &v in outs {
            radj[v].push(u);
        }
    }
    let reach = |edges: &[Vec<usize>]| -> usize {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &edges[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count
    };
    reach(adj) == n && reach(&radj) == n
}

fn distinctness_margin(values: &CVec) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let scale = values
        .iter()
        .map(|z| z.norm())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            best = best.min((values[i] - values[j]).norm());
        }
    }
    Some(best / scale)
}

fn clause(name: &str, margin: Option<f64>, config: &SolverConfig) -> ClauseReport {
    let verdict = match margin {
        None => Verdict::Pass,
        Some(v) if v < config.hard_margin => Verdict::Fail,
        Some(v) if v < config.warn_margin => Verdict::Warn,
        Some(_) => Verdict::Pass,
    };
    ClauseReport {
        name: name.to_string(),
        margin,
        verdict,
    }
}

fn assumption_report(
    model: &QueueModel,
    eta: &CVec,
    kappa: &CVec,
    g: &RMat,
    config: &SolverConfig,
) -> Result<AssumptionReport> {
    let m = model.m();

    let eta_distinct = clause("eta-distinct", distinctness_margin(eta), config);

    // η may not collide with any eigenvalue of T/c.
    let t_eigs = sort_spectrum(&eig_general(model.ph.t())?).values / C::new(model.c as f64, 0.0);
    let scale = eta
        .iter()
        .chain(t_eigs.iter())
        .map(|z| z.norm())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut gap = f64::INFINITY;
    for k in 0..m {
        for l in 0..m {
            gap = gap.min((eta[k] - t_eigs[l]).norm());
        }
    }
    let eta_vs_t_over_c = clause("eta-vs-T/c", Some(gap / scale), config);

    let adj: Vec<Vec<usize>> = (0..m)
        .map(|i| (0..m).filter(|&j| j != i && g[(i, j)] > 0.0).collect())
        .collect();
    let irreducible = ClauseReport {
        name: "phase-generator-irreducible".to_string(),
        margin: None,
        verdict: if strongly_connected(&adj) {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
    };

    let kappa_distinct = clause("kappa-distinct", distinctness_margin(kappa), config);

    Ok(AssumptionReport {
        eta_distinct,
        eta_vs_t_over_c,
        phase_generator_irreducible: irreducible,
        kappa_distinct,
    })
}

/// Measures every spectral precondition for an already-computed spectrum.
/// Purely diagnostic: never fails the model, only reports.
pub fn check_assumptions(model: &QueueModel, s: &SpectralData) -> Result<AssumptionReport> {
    let mats = ModelMats::new(model);
    let g = mats.phase_generator(model);
    assumption_report(model, &s.eta, &s.kappa, &g, &SolverConfig::default())
}

/// Like [`check_assumptions`], but computes the spectra itself so it can
/// report on models the gated pipeline would reject.
pub fn diagnose_assumptions(model: &QueueModel, config: &SolverConfig) -> Result<AssumptionReport> {
    let mats = ModelMats::new(model);
    let a = mats.exponent_matrix(model);
    let eta = sort_spectrum(&eig_general(&a)?).values / C::new(mats.c, 0.0);
    let g = mats.phase_generator(model);
    let kappa = sort_spectrum(&eig_general(&g)?).values;
    assumption_report(model, &eta, &kappa, &g, config)
}

/// Characteristic-root residual |(μ−η)/μ − γ(cηI−T)⁻¹T⃗| for one η.
fn eta_root_residual(mats: &ModelMats, eta: C) -> Result<f64> {
    let m = mats.m;
    let mut shifted = -mats.t.clone();
    for i in 0..m {
        shifted[(i, i)] += eta * mats.c;
    }
    let resolvent_row = row_solve(&mats.gamma, &shifted)?;
    let rhs = (&resolvent_row * &mats.exit)[(0, 0)];
    let lhs = (C::new(mats.mu, 0.0) - eta) / mats.mu;
    Ok((lhs - rhs).norm())
}

/// Computes the ordered spectral data for a model and verifies every
/// precondition, erroring with the violated clause's name on failure.
pub fn compute_spectral(model: &QueueModel, config: &SolverConfig) -> Result<SpectralData> {
    let mats = ModelMats::new(model);
    let m = mats.m;
    let cmu = mats.c * mats.mu;

    let a = mats.exponent_matrix(model);
    let a_spec = sort_spectrum(&eig_general(&a)?);
    let eta = a_spec.values.clone() / C::new(mats.c, 0.0);
    let f = a_spec.right.clone();
    let finv = cinverse(&f)?;

    let g = mats.phase_generator(model);
    let g_spec = sort_spectrum(&eig_general(&g)?);
    let g_norm = g.norm();

    // Locate the structurally-guaranteed zero eigenvalue of the phase
    // generator, snap it to exactly 0, and order it first.
    let zero_idx = (0..m)
        .min_by(|&i, &j| g_spec.values[i].norm().total_cmp(&g_spec.values[j].norm()))
        .expect("at least one phase");
    if g_spec.values[zero_idx].norm() > KAPPA_ZERO_RELTOL * g_norm.max(f64::MIN_POSITIVE) {
        return Err(Error::Numerical(format!(
            "phase generator has no numerically-zero eigenvalue (closest modulus {:.3e}, norm {:.3e})",
            g_spec.values[zero_idx].norm(),
            g_norm
        )));
    }
    let mut order: Vec<usize> = Vec::with_capacity(m);
    order.push(zero_idx);
    order.extend((0..m).filter(|&i| i != zero_idx));
    let mut kappa = CVec::from_iterator(m, order.iter().map(|&i| g_spec.values[i]));
    kappa[0] = C::new(0.0, 0.0);
    let mut b = CMat::zeros(m, m);
    for (row, &i) in order.iter().enumerate() {
        b.row_mut(row).copy_from(&g_spec.left.row(i));
    }

    for l in 1..m {
        if kappa[l].re >= 0.0 {
            return Err(Error::Numerical(format!(
                "phase generator eigenvalue κ_{} = {} has nonnegative real part",
                l + 1,
                kappa[l]
            )));
        }
    }

    let report = assumption_report(model, &eta, &kappa, &g, config)?;
    if let Some(failed) = report.first_failure() {
        return Err(Error::Assumption {
            clause: failed.name.clone(),
            detail: match failed.margin {
                Some(margin) => format!(
                    "relative margin {margin:.3e} below hard threshold {:.1e}",
                    config.hard_margin
                ),
                None => "arrival phase generator is not strongly connected".to_string(),
            },
        });
    }

    let d = CMat::from_diagonal(&CVec::from_iterator(
        m,
        kappa.iter().map(|&k| C::new(1.0, 0.0) / (C::new(cmu, 0.0) - k)),
    ));
    let e = CMat::from_diagonal(&CVec::from_iterator(
        m,
        eta.iter().map(|&h| (-h * mats.c * mats.tau).exp()),
    ));

    let spectral = SpectralData {
        eta,
        kappa,
        b,
        d,
        e,
        f,
        finv,
    };

    for k in 0..m {
        let res = eta_root_residual(&mats, spectral.eta[k])?;
        if res > ETA_ROOT_TOL {
            return Err(Error::Numerical(format!(
                "characteristic-root residual for η_{} is {res:.3e} (> {ETA_ROOT_TOL:e})",
                k + 1
            )));
        }
    }

    Ok(spectral)
}

/// R_k = T⃗·γ·(cη_k I − T)⁻¹ (rank one; T⃗ is a right eigenvector with
/// eigenvalue (μ−η_k)/μ).
pub fn compute_r(model: &QueueModel, s: &SpectralData, k: usize) -> Result<CMat> {
    let mats = ModelMats::new(model);
    compute_r_inner(&mats, s.eta[k])
}

fn compute_r_inner(mats: &ModelMats, eta: C) -> Result<CMat> {
    let m = mats.m;
    let mut shifted = -mats.t.clone();
    for i in 0..m {
        shifted[(i, i)] += eta * mats.c;
    }
    let inv = cinverse(&shifted)
        .map_err(|_| Error::Numerical(format!("cη I − T is singular at η = {eta}")))?;
    Ok(&mats.exit * &mats.gamma * inv)
}

/// Per-mode y-vectors for every occupancy level: `y[i][k]` is the row
/// vector at level i for mode k.
pub fn solve_y(model: &QueueModel, s: &SpectralData, config: &SolverConfig) -> Result<(Vec<CMat>, Vec<Vec<CRow>>)> {
    let mats = ModelMats::new(model);
    let m = mats.m;
    let c = model.c;
    let cmu = mats.c * mats.mu;
    let eye = CMat::identity(m, m);

    let mut r_all = Vec::with_capacity(m);
    let mut y = vec![vec![CRow::zeros(m); m]; c + 1];

    for k in 0..m {
        let r = compute_r_inner(&mats, s.eta[k])?;

        // Row system at level c−1: (c−1)μ(I − e·γ) − T − cμ·R_k.
        let level_term = (&eye - &mats.e_gamma) * C::new((mats.c - 1.0) * mats.mu, 0.0);
        let system = &level_term - &mats.t - &r * C::new(cmu, 0.0);
        // The summands can cancel to machine zero (they do exactly that
        // for m = 1); judge rank against their sizes, not the remainder.
        let floor = level_term.norm() + mats.t.norm() + cmu * r.norm();
        let y_cm1 = left_nullvector_scaled(&system, config.tol_zero, floor).map_err(|e| {
            Error::Numerical(format!(
                "row system for mode {} is not rank-deficient by exactly one: {e}",
                k + 1
            ))
        })?;

        let y_c = &y_cm1 * &r * C::new(cmu, 0.0);
        y[c - 1][k] = y_cm1;
        y[c][k] = y_c;

        if c >= 2 {
            // Downward recursion y_i = (c−i)μ · y_{i+1} · (iμ(I−e·γ) − T)⁻¹.
            for i in (1..=c.saturating_sub(2)).rev() {
                let im = i as f64 * mats.mu;
                let rec = (&eye - &mats.e_gamma) * C::new(im, 0.0) - &mats.t;
                let solved = row_solve(&y[i + 1][k], &rec).map_err(|_| {
                    Error::Numerical(format!(
                        "level-{i} recursion matrix is singular (internal inconsistency)"
                    ))
                })?;
                y[i][k] = solved * C::new((c - i) as f64 * mats.mu, 0.0);
            }
            let idle = row_solve(&y[1][k], &mats.t).map_err(|_| {
                Error::Numerical("T is singular in the idle-level step".to_string())
            })?;
            y[0][k] = idle * C::new(-cmu, 0.0);
        }

        r_all.push(r);
    }

    Ok((r_all, y))
}

/// The bracket matrix cμ·T⃗·γ·B⁻¹DB − (c−1)μI + (c−1)μ·e·γ + T shared by
/// the balance equations and the φ route, plus the magnitude of its
/// summands for scale-aware rank tests.
fn bracket_matrix(mats: &ModelMats, s: &SpectralData) -> Result<(CMat, f64)> {
    let m = mats.m;
    let cmu = mats.c * mats.mu;
    let bdb = s.b_inv_d_b()?;
    let eye = CMat::identity(m, m);
    let lead = &mats.exit * &mats.gamma * &bdb * C::new(cmu, 0.0);
    let level = (&mats.e_gamma - &eye) * C::new((mats.c - 1.0) * mats.mu, 0.0);
    let bracket = &lead + &level + &mats.t;
    let floor = lead.norm() + level.norm() + mats.t.norm();
    Ok((bracket, floor))
}

/// Normalization weights w_k = Σ_{i<c} C(c,i)·y_i^k·e
/// + (y_c^k·e)·[e^{−cη_kτ}/μ + (1−e^{−cη_kτ})/η_k].
pub(crate) fn normalization_weights(
    model: &QueueModel,
    s: &SpectralData,
    y: &[Vec<CRow>],
) -> CVec {
    let m = model.m();
    let c = model.c;
    let cf = c as f64;
    let ones = CVec::from_element(m, C::new(1.0, 0.0));
    CVec::from_iterator(
        m,
        (0..m).map(|k| {
            let mut w = C::new(0.0, 0.0);
            for i in 0..c {
                w += (&y[i][k] * &ones)[(0, 0)] * binomial(c, i);
            }
            let yce = (&y[c][k] * &ones)[(0, 0)];
            let eta = s.eta[k];
            let decay = (-eta * cf * model.tau).exp();
            w + yce * (decay / model.mu + one_minus_exp_ratio(eta, cf * model.tau))
        }),
    )
}

/// Result of one δ solve with its equation residuals.
#[derive(Debug, Clone)]
pub struct DeltaSolve {
    pub delta: CVec,
    pub balance_residual: f64,
    pub normalization_residual: f64,
}

fn delta_residuals(delta: &CVec, system: &CMat, weights: &CVec) -> (f64, f64) {
    let balance = (CRow::from_iterator(delta.len(), delta.iter().copied()) * system).norm();
    let norm_res = (delta.iter().zip(weights.iter()).map(|(d, w)| d * w).sum::<C>()
        - C::new(1.0, 0.0))
    .norm();
    (balance, norm_res)
}

/// Solves for δ by stacking the m balance equations with the
/// normalization row and least-squaring the (m+1)×m system via QR.
pub fn solve_delta_direct(
    model: &QueueModel,
    s: &SpectralData,
    y: &[Vec<CRow>],
) -> Result<DeltaSolve> {
    let mats = ModelMats::new(model);
    let m = mats.m;
    let c = model.c;

    let (bracket, _) = bracket_matrix(&mats, s)?;
    let mut y_rows = CMat::zeros(m, m);
    for k in 0..m {
        y_rows.row_mut(k).copy_from(&y[c - 1][k]);
    }
    let system = &s.e * &y_rows * &bracket;
    let weights = normalization_weights(model, s, y);

    let mut stacked = CMat::zeros(m + 1, m);
    stacked.view_mut((0, 0), (m, m)).copy_from(&system.transpose());
    for k in 0..m {
        stacked[(m, k)] = weights[k];
    }
    let mut rhs = CVec::zeros(m + 1);
    rhs[m] = C::new(1.0, 0.0);

    let delta = qr_solve_stacked(&stacked, &rhs)?;
    let (balance, norm_res) = delta_residuals(&delta, &system, &weights);
    if balance > BALANCE_TOL {
        return Err(Error::Numerical(format!(
            "balance-equation residual {balance:.3e} exceeds {BALANCE_TOL:e}"
        )));
    }
    if norm_res > NORMALIZATION_TOL {
        return Err(Error::Numerical(format!(
            "normalization residual {norm_res:.3e} exceeds {NORMALIZATION_TOL:e}"
        )));
    }
    Ok(DeltaSolve {
        delta,
        balance_residual: balance,
        normalization_residual: norm_res,
    })
}

/// Result of the φ-route solve.
#[derive(Debug, Clone)]
pub struct PhiSolve {
    pub delta: CVec,
    pub phi: CRow,
    pub phi_imag_residual: f64,
    pub balance_residual: f64,
    pub normalization_residual: f64,
}

/// Solves for δ through the real left nullvector φ of the bracket
/// matrix, then undoes φ = δ·E·Y_{c−1} (or the transposed reading, per
/// config) and rescales so the normalization equation equals 1.
pub fn solve_delta_phi(
    model: &QueueModel,
    s: &SpectralData,
    y: &[Vec<CRow>],
    config: &SolverConfig,
) -> Result<PhiSolve> {
    let mats = ModelMats::new(model);
    let m = mats.m;
    let c = model.c;

    let (bracket, floor) = bracket_matrix(&mats, s)?;
    let phi = left_nullvector_scaled(&bracket, config.tol_zero, floor)?;
    let phi_imag = phi.iter().map(|z| z.im.abs()).fold(0.0f64, f64::max);
    if phi_imag > PHI_IMAG_TOL {
        return Err(Error::Numerical(format!(
            "φ has imaginary residue {phi_imag:.3e} (> {PHI_IMAG_TOL:e}); it is real by construction"
        )));
    }

    let mut y_rows = CMat::zeros(m, m);
    for k in 0..m {
        y_rows.row_mut(k).copy_from(&y[c - 1][k]);
    }
    let y_rc = rcond(&y_rows)?;
    if y_rc < config.tol_zero {
        return Err(Error::Numerical(format!(
            "matrix of level-(c−1) rows is ill-conditioned (rcond {y_rc:.3e})"
        )));
    }

    let product = match config.phi_order {
        PhiOrder::WeightsThenRows => &s.e * &y_rows,
        PhiOrder::RowsThenWeights => &y_rows * &s.e,
    };
    let unscaled = row_solve(&phi, &product)?;

    let weights = normalization_weights(model, s, y);
    let total: C = unscaled
        .iter()
        .zip(weights.iter())
        .map(|(d, w)| d * w)
        .sum();
    if total.norm() == 0.0 {
        return Err(Error::Numerical(
            "φ-route normalization sum is zero; cannot rescale".into(),
        ));
    }
    let delta = CVec::from_iterator(m, unscaled.iter().map(|d| d / total));

    let system = &s.e * &y_rows * &bracket;
    let (balance, norm_res) = delta_residuals(&delta, &system, &weights);
    Ok(PhiSolve {
        delta,
        phi,
        phi_imag_residual: phi_imag,
        balance_residual: balance,
        normalization_residual: norm_res,
    })
}

fn conjugate_pairing_residual(eta: &CVec, delta: &CVec) -> f64 {
    let m = eta.len();
    let scale = eta
        .iter()
        .map(|z| z.norm())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for k in 0..m {
        if eta[k].im == 0.0 {
            continue;
        }
        for l in 0..m {
            if (eta[l] - eta[k].conj()).norm() <= 1e-8 * scale {
                worst = worst.max((delta[l] - delta[k].conj()).norm());
            }
        }
    }
    worst
}

/// Runs the full pipeline with default configuration.
pub fn solve(model: &QueueModel) -> Result<LoadSolution> {
    solve_with(model, &SolverConfig::default())
}

/// Runs the full pipeline: spectral data, per-mode systems, both δ
/// routes, and the complete diagnostics block.
pub fn solve_with(model: &QueueModel, config: &SolverConfig) -> Result<LoadSolution> {
    let mats = ModelMats::new(model);
    let m = mats.m;
    let c = model.c;
    let cmu = mats.c * mats.mu;

    let s = compute_spectral(model, config)?;
    let (r_all, y) = solve_y(model, &s, config)?;
    let direct = solve_delta_direct(model, &s, &y)?;
    let phi = solve_delta_phi(model, &s, &y, config)?;

    // Identity residuals along every mode.
    let mut eta_root_max: f64 = 0.0;
    let mut r_eigen_max: f64 = 0.0;
    let mut exit_rate_max: f64 = 0.0;
    let mut resolvent_row_max: f64 = 0.0;
    let mut mode_sigma_max: f64 = 0.0;
    let mut mode_second_sigma_min = f64::INFINITY;
    let eye = CMat::identity(m, m);
    for k in 0..m {
        eta_root_max = eta_root_max.max(eta_root_residual(&mats, s.eta[k])?);

        let ratio = (C::new(mats.mu, 0.0) - s.eta[k]) / mats.mu;
        r_eigen_max = r_eigen_max.max((&r_all[k] * &mats.exit - &mats.exit * ratio).norm());

        let yc_exit = (&y[c][k] * &mats.exit)[(0, 0)];
        let ycm1_exit = (&y[c - 1][k] * &mats.exit)[(0, 0)];
        exit_rate_max = exit_rate_max.max(
            (yc_exit * mats.mu - ycm1_exit * cmu * (C::new(mats.mu, 0.0) - s.eta[k])).norm(),
        );

        let mut shifted = -mats.t.clone();
        for i in 0..m {
            shifted[(i, i)] += s.eta[k] * mats.c;
        }
        let lhs = &y[c][k] * &shifted;
        let rhs = &y[c - 1][k] * &mats.exit * &mats.gamma * C::new(cmu, 0.0);
        resolvent_row_max = resolvent_row_max.max((lhs - rhs).norm());

        let level_term = (&eye - &mats.e_gamma) * C::new((mats.c - 1.0) * mats.mu, 0.0);
        let system = &level_term - &mats.t - &r_all[k] * C::new(cmu, 0.0);
        let floor = level_term.norm() + mats.t.norm() + cmu * r_all[k].norm();
        let report =
            rank_is_m_minus_1_scaled(&system, config.tol_zero, config.tol_nonzero, floor)?;
        mode_sigma_max = mode_sigma_max.max(report.singular_values[m - 1] / report.scale.max(f64::MIN_POSITIVE));
        if m >= 2 {
            mode_second_sigma_min =
                mode_second_sigma_min.min(report.singular_values[m - 2] / report.scale);
        }
    }

    let (bracket, bracket_floor) = bracket_matrix(&mats, &s)?;
    let bracket_rank =
        rank_is_m_minus_1_scaled(&bracket, config.tol_zero, config.tol_nonzero, bracket_floor)?;
    let phi_sigma = bracket_rank.singular_values[m - 1] / bracket_rank.scale.max(f64::MIN_POSITIVE);
    let phi_second = if m >= 2 {
        bracket_rank.singular_values[m - 2] / bracket_rank.scale
    } else {
        f64::INFINITY
    };

    let mut y_rows = CMat::zeros(m, m);
    for k in 0..m {
        y_rows.row_mut(k).copy_from(&y[c - 1][k]);
    }
    let y_rc = rcond(&y_rows)?;

    let bdb = s.b_inv_d_b()?;
    let bdb_imag = bdb.iter().map(|z| z.im.abs()).fold(0.0f64, f64::max);
    let mut resolvent = -mats.t.clone() - &mats.exit * &mats.gamma;
    for i in 0..m {
        resolvent[(i, i)] += C::new(cmu, 0.0);
    }
    let resolvent_inv = cinverse(&resolvent)?;
    let bdb_gap = (&bdb - &resolvent_inv).norm() / resolvent_inv.norm();

    let route_gap = (&direct.delta - &phi.delta).norm() / direct.delta.norm();
    let pairing = conjugate_pairing_residual(&s.eta, &direct.delta);

    let diagnostics = Diagnostics {
        balance_residual: direct.balance_residual,
        normalization_residual: direct.normalization_residual,
        eta_root_max_residual: eta_root_max,
        r_exit_eigen_max_residual: r_eigen_max,
        mode_system_max_sigma_ratio: mode_sigma_max,
        mode_system_min_second_sigma_ratio: mode_second_sigma_min,
        phi_system_sigma_ratio: phi_sigma,
        phi_system_second_sigma_ratio: phi_second,
        y_rows_rcond: y_rc,
        exit_rate_identity_max_residual: exit_rate_max,
        resolvent_row_identity_max_residual: resolvent_row_max,
        delta_conjugate_pairing_residual: pairing,
        route_gap,
        phi_imag_residual: phi.phi_imag_residual,
        bdb_imag_residual: bdb_imag,
        bdb_resolvent_gap: bdb_gap,
        c1_top_level_from_idle_vector: c == 1,
        phi_order: config.phi_order.as_str().to_string(),
    };

    Ok(LoadSolution {
        model: model.clone(),
        spectral: s,
        r: r_all,
        y,
        delta: direct.delta,
        delta_phi: phi.delta,
        diagnostics,
    })
}

fn complex_pairs(v: &CVec) -> Vec<[f64; 2]> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

/// Machine-readable solution export.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionExport {
    /// η_k as [re, im] pairs.
    pub eta: Vec<[f64; 2]>,
    /// κ_ℓ as [re, im] pairs.
    pub kappa: Vec<[f64; 2]>,
    /// δ_k as [re, im] pairs.
    pub delta: Vec<[f64; 2]>,
    /// y[i][k][j] as [re, im] pairs, i = 0..=c.
    pub y: Vec<Vec<Vec<[f64; 2]>>>,
    pub diagnostics: Diagnostics,
}

impl LoadSolution {
    pub fn export(&self) -> SolutionExport {
        SolutionExport {
            eta: complex_pairs(&self.spectral.eta),
            kappa: complex_pairs(&self.spectral.kappa),
            delta: complex_pairs(&self.delta),
            y: self
                .y
                .iter()
                .map(|level| {
                    level
                        .iter()
                        .map(|row| row.iter().map(|z| [z.re, z.im]).collect())
                        .collect()
                })
                .collect(),
            diagnostics: self.diagnostics.clone(),
        }
    }
}
