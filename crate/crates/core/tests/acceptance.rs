//! Acceptance suite: one test per release criterion, each printing a
//! single pass line with the measured values. Tolerances are pinned
//! here, not configurable.
//!
//! Desk-scale reference values were recomputed by hand from the closed
//! scalar case before being frozen: with λ = 0.5, μ = 1, c = 1, τ = 2
//! the normalization equation reads δ·(2 − e⁻¹/2) = 1, giving
//! δ = atom = 0.550643, continuous = δ(1 − e⁻¹) = 0.348072,
//! tail = δe⁻¹/2 = 0.101285.

mod common;

use std::time::Instant;

use common::{erlang2_model, erlang3_model, hyperexp_model, m1_model};
use phmcd::model::{make_phase_type, QueueModel};
use phmcd::numerics::{complexify, rank_is_m_minus_1, C, CMat};
use phmcd::sim::{compare, run_sim, CompareThresholds, SimConfig};
use phmcd::solver::{compute_spectral, solve, SolverConfig};
use phmcd::waiting::{
    kt_density, loads_density, proposition_bridge, virtual_density, wait_decomposition,
    VirtualWaitDistribution,
};

fn three_models() -> [QueueModel; 3] {
    [m1_model(), erlang2_model(), hyperexp_model()]
}

#[test]
fn criterion_1_scalar_closed_case() {
    let model = m1_model();
    // Warm pass, then timed pass.
    let _ = solve(&model).unwrap();
    let started = Instant::now();
    let sol = solve(&model).unwrap();
    let parts = wait_decomposition(&sol).unwrap();
    let elapsed = started.elapsed();

    let delta = sol.delta[0].re;
    assert!((delta - 0.550643).abs() <= 1e-5, "delta {delta}");
    assert!((parts.atom0 - 0.550643).abs() <= 1e-5, "atom {}", parts.atom0);
    assert!(
        (parts.continuous - 0.348071).abs() <= 1e-5,
        "continuous {}",
        parts.continuous
    );
    assert!((parts.tail - 0.101286).abs() <= 1e-5, "tail {}", parts.tail);
    let mass = parts.atom0 + parts.continuous + parts.tail;
    assert!((mass - 1.0).abs() <= 1e-10, "mass {mass}");

    // Exact hand oracle: δ = 1/(2 − e⁻¹/2).
    let oracle = 1.0 / (2.0 - 0.5 * (-1.0f64).exp());
    assert!((delta - oracle).abs() <= 1e-12);

    assert!(
        elapsed.as_secs_f64() < 1e-3,
        "solve took {:?}, limit 1 ms",
        elapsed
    );
    println!(
        "[criterion 1] PASS: delta {delta:.6}, atom {:.6}, continuous {:.6}, tail {:.6}, mass-1 {:+.1e}, {:.0} µs",
        parts.atom0,
        parts.continuous,
        parts.tail,
        mass - 1.0,
        elapsed.as_secs_f64() * 1e6
    );
}

#[test]
fn criterion_2_scalar_eigenvalue_law() {
    let mut worst: f64 = 0.0;
    for &lambda in &[0.1, 0.5, 0.9, 2.0, 3.7, 10.0] {
        for &mu in &[0.3, 1.0, 1.5, 4.0] {
            for &c in &[1usize, 2, 3, 7] {
                let ph = make_phase_type(&[1.0], &[vec![-lambda]]).unwrap();
                let model = QueueModel::new(ph, c, mu, 1.0).unwrap();
                let s = compute_spectral(&model, &SolverConfig::default()).unwrap();
                let want = mu - lambda / c as f64;
                let gap = (s.eta[0] - C::new(want, 0.0)).norm();
                worst = worst.max(gap);
                assert!(gap <= 1e-12, "eta law violated: λ={lambda}, μ={mu}, c={c}");
            }
        }
    }
    println!("[criterion 2] PASS: max |eta - (mu - lambda/c)| = {worst:.1e} over 96 scalar models");
}

#[test]
fn criterion_3_representation_equivalence() {
    for model in [erlang2_model(), hyperexp_model()] {
        let started = Instant::now();
        let sol = solve(&model).unwrap();
        let (rep, bridge) = proposition_bridge(&sol).unwrap();
        let mut peak: f64 = 0.0;
        let mut gap: f64 = 0.0;
        for i in 1..=1000 {
            let v = model.tau * i as f64 / 1001.0;
            let fs = virtual_density(&sol, v).unwrap();
            let fm = kt_density(&model, &rep, v).unwrap();
            peak = peak.max(fs.abs());
            gap = gap.max((fs - fm).abs());
        }
        let rel = gap / peak;
        let elapsed = started.elapsed();
        assert!(rel <= 1e-8, "density gap {rel:.3e} on c={} model", model.c);
        assert!(
            bridge.max_residual <= 1e-8,
            "coefficient residual {:.3e}",
            bridge.max_residual
        );
        assert!(
            elapsed.as_secs_f64() < 0.1,
            "representation check took {elapsed:?}, limit 100 ms"
        );
        println!(
            "[criterion 3] PASS (m={}): max relative density gap {rel:.1e}, coefficient residual {:.1e}, {:.1} ms",
            model.m(),
            bridge.max_residual,
            elapsed.as_secs_f64() * 1e3
        );
    }
}

#[test]
fn criterion_4_route_equivalence() {
    for model in three_models() {
        let sol = solve(&model).unwrap();
        let d = &sol.diagnostics;
        assert!(
            d.route_gap <= 1e-8,
            "route gap {:.3e} (m={})",
            d.route_gap,
            model.m()
        );
        assert!(
            d.phi_imag_residual <= 1e-10,
            "phi imaginary residue {:.3e}",
            d.phi_imag_residual
        );
        println!(
            "[criterion 4] PASS (m={}, c={}): route gap {:.1e}, phi imag {:.1e}",
            model.m(),
            model.c,
            d.route_gap,
            d.phi_imag_residual
        );
    }
}

#[test]
fn criterion_5_rank_lemma_suite() {
    for model in three_models() {
        let sol = solve(&model).unwrap();
        let d = &sol.diagnostics;
        let m = model.m();

        assert!(
            d.eta_root_max_residual <= 1e-10,
            "characteristic-root residual {:.3e}",
            d.eta_root_max_residual
        );
        // Scale-aware ratios recorded by the solver (the m = 1 systems
        // cancel to machine zero, so raw σ_max is meaningless there).
        assert!(d.mode_system_max_sigma_ratio <= 1e-10);
        assert!(m == 1 || d.mode_system_min_second_sigma_ratio >= 1e-6);
        assert!(d.phi_system_sigma_ratio <= 1e-10);
        assert!(m == 1 || d.phi_system_second_sigma_ratio >= 1e-6);
        assert!(d.y_rows_rcond >= 1e-6, "rows rcond {:.3e}", d.y_rows_rcond);

        // For the multi-phase models the plain (1e-10, 1e-6) test must
        // hold directly on the stated matrices.
        if m >= 2 {
            let mats = spectral_matrices(&model, &sol);
            for (name, matrix) in mats {
                let report = rank_is_m_minus_1(&matrix, 1e-10, 1e-6).unwrap();
                assert!(
                    report.deficient_by_one,
                    "{name} is not rank m-1: σ = {:?}",
                    report.singular_values
                );
            }
        }
        println!(
            "[criterion 5] PASS (m={}, c={}): eta-root {:.1e}, mode σ ratio {:.1e}, rows rcond {:.1e}",
            m, model.c, d.eta_root_max_residual, d.mode_system_max_sigma_ratio, d.y_rows_rcond
        );
    }
}

/// Rebuilds the per-mode row systems and the φ-system bracket from a
/// solution, independently of the solver's own rank bookkeeping.
fn spectral_matrices(model: &QueueModel, sol: &phmcd::solver::LoadSolution) -> Vec<(String, CMat)> {
    let m = model.m();
    let cf = model.c as f64;
    let cmu = cf * model.mu;
    let t = complexify(model.ph.t());
    let gamma = nalgebra::RowDVector::from_iterator(
        m,
        model.ph.gamma().iter().map(|&x| C::new(x, 0.0)),
    );
    let exit = nalgebra::DVector::from_iterator(
        m,
        model.ph.exit().iter().map(|&x| C::new(x, 0.0)),
    );
    let ones = nalgebra::DVector::from_element(m, C::new(1.0, 0.0));
    let eye = CMat::identity(m, m);
    let e_gamma = &ones * &gamma;

    let mut out = Vec::new();
    for (k, r) in sol.r.iter().enumerate() {
        let system =
            (&eye - &e_gamma) * C::new((cf - 1.0) * model.mu, 0.0) - &t - r * C::new(cmu, 0.0);
        out.push((format!("mode-{k}-row-system"), system));
    }
    let bdb = sol.spectral.b_inv_d_b().unwrap();
    let bracket = &exit * &gamma * &bdb * C::new(cmu, 0.0)
        + (&e_gamma - &eye) * C::new((cf - 1.0) * model.mu, 0.0)
        + &t;
    out.push(("phi-system-bracket".to_string(), bracket));
    out
}

#[test]
fn criterion_6_flow_identities() {
    for model in three_models() {
        let sol = solve(&model).unwrap();
        let d = &sol.diagnostics;
        assert!(
            d.exit_rate_identity_max_residual <= 1e-9,
            "exit-rate identity residual {:.3e}",
            d.exit_rate_identity_max_residual
        );
        assert!(
            d.resolvent_row_identity_max_residual <= 1e-9,
            "resolvent-row identity residual {:.3e}",
            d.resolvent_row_identity_max_residual
        );
        println!(
            "[criterion 6] PASS (m={}, c={}): exit-rate identity {:.1e}, resolvent-row identity {:.1e}",
            model.m(),
            model.c,
            d.exit_rate_identity_max_residual,
            d.resolvent_row_identity_max_residual
        );
    }
}

#[test]
fn criterion_7_simulation_concordance() {
    let started = Instant::now();
    for model in three_models() {
        let sol = solve(&model).unwrap();
        let dist = VirtualWaitDistribution::from_solution(&sol).unwrap();
        // 4 replications × 250k measured arrivals = 10^6 pooled.
        let cfg = SimConfig::for_model(&model, 1, 250_000, 4, 1000).unwrap();
        let est = run_sim(&model, &cfg).unwrap();
        assert_eq!(est.measured_arrivals_total, 1_000_000);
        let report = compare(&dist, &est, CompareThresholds { ks: 0.005, z: 4.0 }).unwrap();
        assert!(
            report.pass,
            "concordance failed for m={}, c={}: {report:?}",
            model.m(),
            model.c
        );
        println!(
            "[criterion 7] PASS (m={}, c={}): KS {:.4}, atom z {:+.2}, loss z {:+.2}",
            model.m(),
            model.c,
            report.ks_distance,
            report.atom_z,
            report.loss_z
        );
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() <= 60.0,
        "three concordance runs took {elapsed:?}, limit 60 s"
    );
    println!(
        "[criterion 7] PASS: total concordance runtime {:.1} s (limit 60 s)",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_8_realness_positivity_continuity() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(8);

    for model in [m1_model(), erlang2_model(), hyperexp_model(), erlang3_model()] {
        let sol = solve(&model).unwrap();
        // Density evaluation errors out if the imaginary residue
        // exceeds 1e-10 or the value drops below −1e-12; a clean pass
        // over the grid is the realness/positivity assertion.
        for i in 1..=1000 {
            let v = model.tau * i as f64 / 1001.0;
            let f = virtual_density(&sol, v).unwrap();
            assert!(f >= 0.0);
        }

        // Continuity at min v_i = τ along 100 random rays: evaluate at
        // the two floating-point neighbors of the boundary.
        for _ in 0..100 {
            let ray: Vec<f64> = (0..model.c).map(|_| rng.gen_range(0.2..3.0)).collect();
            let min_ray = ray.iter().copied().fold(f64::INFINITY, f64::min);
            let lo: Vec<f64> = ray
                .iter()
                .map(|&r| r * (model.tau / min_ray) * (1.0 - 2.0 * f64::EPSILON))
                .collect();
            let hi: Vec<f64> = ray
                .iter()
                .map(|&r| r * (model.tau / min_ray) * (1.0 + 2.0 * f64::EPSILON))
                .collect();
            let jump = (loads_density(&sol, &lo).unwrap() - loads_density(&sol, &hi).unwrap()).abs();
            assert!(jump <= 1e-12, "boundary jump {jump:.3e} (m={})", model.m());
        }
        println!(
            "[criterion 8] PASS (m={}, c={}): 1000 grid points real and nonnegative, 100 rays continuous at the bound",
            model.m(),
            model.c
        );
    }
}

#[test]
fn criterion_9_determinism() {
    let model = erlang2_model();
    let cfg = SimConfig::for_model(&model, 42, 10_000, 3, 64).unwrap();
    let base = run_sim(&model, &cfg).unwrap();
    for threads in [1, 2, 8] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let alt = pool.install(|| run_sim(&model, &cfg).unwrap());
        assert_eq!(base, alt, "estimates differ with {threads} threads");
    }
    let again = run_sim(&model, &cfg).unwrap();
    assert_eq!(base, again);
    println!(
        "[criterion 9] PASS: identical estimates across reruns and thread counts 1/2/8 (byte-level file determinism covered by the CLI suite)"
    );
}
