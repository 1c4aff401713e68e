//! Shared fixtures and oracles for the integration tests.

use phmcd::model::{make_coxian, make_phase_type, QueueModel};

pub fn m1_model() -> QueueModel {
    let ph = make_phase_type(&[1.0], &[vec![-0.5]]).unwrap();
    QueueModel::new(ph, 1, 1.0, 2.0).unwrap()
}

pub fn erlang2_model() -> QueueModel {
    let ph = make_phase_type(&[1.0, 0.0], &[vec![-4.0, 4.0], vec![0.0, -4.0]]).unwrap();
    QueueModel::new(ph, 2, 1.5, 1.0).unwrap()
}

pub fn hyperexp_model() -> QueueModel {
    let ph = make_phase_type(&[0.3, 0.7], &[vec![-1.0, 0.0], vec![0.0, -3.0]]).unwrap();
    QueueModel::new(ph, 2, 1.0, 1.0).unwrap()
}

/// Critically loaded Erlang-3 arrivals: complex η pair plus an η ≈ 0
/// mode. Used for realness/pairing properties, not for the pinned
/// desk-scale values.
pub fn erlang3_model() -> QueueModel {
    let ph = make_coxian(&[6.0, 6.0, 6.0], &[1.0, 1.0]).unwrap();
    QueueModel::new(ph, 2, 1.0, 1.0).unwrap()
}

// Gauss–Kronrod 7–15 nodes and weights on [-1, 1] (positive half; the
// rule is symmetric). Kronrod values give the estimate, the embedded
// Gauss rule the error gauge.
const K15_NODES: [f64; 8] = [
    0.0,
    0.207_784_955_007_898_5,
    0.405_845_151_377_397_2,
    0.586_087_235_467_691_1,
    0.741_531_185_599_394_4,
    0.864_864_423_359_769_1,
    0.949_107_912_342_758_5,
    0.991_455_371_120_812_6,
];
const K15_WEIGHTS: [f64; 8] = [
    0.209_482_141_084_727_8,
    0.204_432_940_075_298_9,
    0.190_350_578_064_785_4,
    0.169_004_726_639_267_9,
    0.140_653_259_715_525_9,
    0.104_790_010_322_250_2,
    0.063_092_092_629_978_56,
    0.022_935_322_010_529_22,
];
// Gauss-7 weights aligned with K15 node indices 0, 2, 4, 6.
const G7_WEIGHTS: [f64; 4] = [
    0.417_959_183_673_469_4,
    0.381_830_050_505_118_9,
    0.279_705_391_489_276_7,
    0.129_484_966_168_869_7,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut k15 = K15_WEIGHTS[0] * f(mid);
    let mut g7 = G7_WEIGHTS[0] * f(mid);
    for i in 1..8 {
        let dx = half * K15_NODES[i];
        let pair = f(mid - dx) + f(mid + dx);
        k15 += K15_WEIGHTS[i] * pair;
        if i % 2 == 0 {
            g7 += G7_WEIGHTS[i / 2] * pair;
        }
    }
    (k15 * half, (k15 - g7).abs() * half)
}

fn adapt<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    let (value, err) = gk15(f, a, b);
    if err <= tol || depth >= 48 {
        return value;
    }
    let mid = 0.5 * (a + b);
    adapt(f, a, mid, tol / 2.0, depth + 1) + adapt(f, mid, b, tol / 2.0, depth + 1)
}

/// Adaptive Gauss–Kronrod quadrature to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    adapt(&f, a, b, tol, 0)
}
