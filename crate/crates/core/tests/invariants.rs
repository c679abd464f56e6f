use std::f64::consts::PI;

use proptest::prelude::*;

use qudit_graybox::algebra::{
    choi_of_unitary, clock_shift_basis, expm_skew, gell_mann_basis, hermitian_eigen, process_fidelity, Operator, C64,
};
use qudit_graybox::config::preset;
use qudit_graybox::control::{gate_cost, target_expectations, ExactClosedModel};
use qudit_graybox::dynamics::SystemConfig;
use qudit_graybox::graybox::GrayboxModel;
use qudit_graybox::interpret::{control_cost, default_grid, fit_taylor, gate_infidelity, noise_sensitivity};
use qudit_graybox::noisegen::synthesize;
use qudit_graybox::noiseop::{NoiseOperatorParams, SubUnitary};
use qudit_graybox::pulses::{envelope, waveform, Channel, PulseParams};

const CASES: u32 = 32;

fn small_config() -> SystemConfig {
    let mut c = preset("qutrit-desk-strong").unwrap();
    c.carrier.steps = 200;
    c.noise.steps = 200;
    c.noise.realizations = 4;
    c.n_max = 3;
    c
}

fn operator(d: usize, v: &[f64]) -> Operator {
    Operator::from_fn(d, |i, j| C64::new(v[2 * (i * d + j)], v[2 * (i * d + j) + 1]))
}

fn hermitian(d: usize, v: &[f64]) -> Operator {
    operator(d, v).hermitian_part()
}

fn unitary(d: usize, v: &[f64]) -> Operator {
    expm_skew(&hermitian(d, v), 1.0).unwrap()
}

fn entries(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, 2 * d * d)
}

fn check_w_constraints(w: &Operator, d: usize) -> Result<(), TestCaseError> {
    let df = d as f64;
    prop_assert!(w.hermiticity_error() < 1e-12);
    let tr = w.trace();
    prop_assert!(tr.re.abs() <= df + 1e-12 && tr.im.abs() < 1e-12);
    for l in hermitian_eigen(w).values {
        prop_assert!(l.abs() <= df + 1e-12);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn gell_mann_is_orthogonal_and_traceless(d in 2usize..=5) {
        let gm = gell_mann_basis(d).unwrap();
        prop_assert_eq!(gm.len(), d * d - 1);
        for (i, a) in gm.elements().iter().enumerate() {
            prop_assert!(a.hermiticity_error() <= 1e-12 && a.trace().norm() <= 1e-12);
            for (j, b) in gm.elements().iter().enumerate() {
                let want = if i == j { 2.0 } else { 0.0 };
                prop_assert!((a.trace_product(b) - C64::new(want, 0.0)).norm() <= 1e-12);
            }
        }
    }

    #[test]
    fn clock_shift_reconstructs_from_hermitian_parts(d in 2usize..=5) {
        let cs = clock_shift_basis(d).unwrap();
        for (n, g) in cs.gates.iter().enumerate() {
            let re = &cs.hermitian_set[2 * n];
            let im = &cs.hermitian_set[2 * n + 1];
            let back = re + &im.scale(C64::new(0.0, 1.0));
            prop_assert!(back.distance(g) <= 1e-12);
        }
    }

    #[test]
    fn expm_skew_is_a_one_parameter_group(v in entries(3), a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let h = hermitian(3, &v);
        let ua = expm_skew(&h, a).unwrap();
        let ub = expm_skew(&h, b).unwrap();
        prop_assert!(ua.unitarity_error() < 1e-10);
        prop_assert!((&ua * &ub).distance(&expm_skew(&h, a + b).unwrap()) < 1e-9);
    }

    #[test]
    fn process_fidelity_is_symmetric_and_phase_blind(v in entries(3), w in entries(3), phase in 0.0..(2.0 * PI)) {
        let (u, g) = (unitary(3, &v), unitary(3, &w));
        let (ju, jg) = (choi_of_unitary(&u).unwrap(), choi_of_unitary(&g).unwrap());
        let f1 = process_fidelity(&ju, &jg).unwrap();
        let f2 = process_fidelity(&jg, &ju).unwrap();
        prop_assert!((f1 - f2).abs() < 1e-10);
        prop_assert!((process_fidelity(&ju, &ju).unwrap() - 1.0).abs() < 1e-10);
        let shifted = choi_of_unitary(&g.scale(C64::from_polar(1.0, phase))).unwrap();
        prop_assert!((process_fidelity(&ju, &shifted).unwrap() - f1).abs() < 1e-10);
    }

    #[test]
    fn envelope_vanishes_at_endpoints(amps in prop::collection::vec(-1e7..1e7f64, 40)) {
        let theta = PulseParams::from_flat(3, 10, amps.clone()).unwrap();
        let t = 0.25e-6;
        for tr in 0..2 {
            for ch in [Channel::InPhase, Channel::Quadrature] {
                prop_assert_eq!(envelope(&theta, tr, ch, 0.0, t).unwrap(), 0.0);
                prop_assert!(envelope(&theta, tr, ch, t, t).unwrap().abs() <= 1e-9 * amps.iter().map(|a| a.abs()).sum::<f64>());
            }
        }
        prop_assert_eq!(theta.into_flat(), amps);
    }

    #[test]
    fn waveform_is_linear(
        a in prop::collection::vec(-1e7..1e7f64, 12),
        b in prop::collection::vec(-1e7..1e7f64, 12),
        x in -2.0..2.0f64,
        y in -2.0..2.0f64,
    ) {
        let c = small_config();
        let ta = PulseParams::from_flat(3, 3, a.clone()).unwrap();
        let tb = PulseParams::from_flat(3, 3, b.clone()).unwrap();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(p, q)| x * p + y * q).collect();
        let wa = waveform(&ta, &c.carrier).unwrap();
        let wb = waveform(&tb, &c.carrier).unwrap();
        let wm = waveform(&PulseParams::from_flat(3, 3, mix).unwrap(), &c.carrier).unwrap();
        let scale = a.iter().chain(&b).map(|v| v.abs()).sum::<f64>();
        for k in 0..wm.len() {
            prop_assert!((wm[k] - (x * wa[k] + y * wb[k])).abs() <= 1e-12 * scale);
        }
        let ws = waveform(&ta.scaled(x), &c.carrier).unwrap();
        for k in 0..ws.len() {
            prop_assert!((ws[k] - x * wa[k]).abs() <= 1e-15 * scale);
        }
    }

    #[test]
    fn parameterized_w_satisfies_constraints(
        r in prop::collection::vec(0.0..=1.0f64, 3),
        angles in prop::collection::vec(0.0..=(2.0 * PI), 6),
        x in prop::collection::vec(-1.0..=1.0f64, 3),
        e in prop::collection::vec(1e-6..1.0f64, 3),
    ) {
        let subs = (0..3).map(|i| SubUnitary { r: r[i], theta: angles[2 * i], psi: angles[2 * i + 1] }).collect();
        let total: f64 = e.iter().sum();
        let p = e.iter().map(|v| v / total).collect();
        let w = NoiseOperatorParams::new(3, subs, x, p).unwrap().w().unwrap();
        check_w_constraints(&w, 3)?;
    }

    #[test]
    fn graybox_output_is_physical_for_any_weights(
        seed in any::<u64>(),
        spread in 0.01..3.0f64,
        amps in prop::collection::vec(-1.0..1.0f64, 12),
    ) {
        let c = small_config();
        let mut model = GrayboxModel::new(&c, 6, seed).unwrap();
        for w in model.weights_mut() {
            *w *= spread / 0.08;
        }
        let theta = PulseParams::from_flat(3, 3, amps.iter().map(|v| v * model.a_max()).collect()).unwrap();
        let out = model.forward(&theta).unwrap();
        for p in &out.params {
            prop_assert!(p.subunitaries.iter().all(|s| (0.0..=1.0).contains(&s.r)));
            prop_assert!(p.x.iter().all(|v| v.abs() <= 1.0));
            prop_assert!((p.p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for w in &out.w {
            check_w_constraints(w, 3)?;
        }
    }

    #[test]
    fn graybox_prediction_is_linear_in_observable(
        seed in any::<u64>(),
        o1 in entries(3),
        o2 in entries(3),
        t in 0.0..1.0f64,
    ) {
        let c = small_config();
        let model = GrayboxModel::new(&c, 6, seed).unwrap();
        let theta = PulseParams::zeros(3, 3);
        let (a, b) = (hermitian(3, &o1), hermitian(3, &o2));
        let rho1 = Operator::diag_real(&[1.0, 0.0, 0.0]);
        let rho2 = Operator::diag_real(&[0.2, 0.3, 0.5]);
        let mix_o = &a.scale_real(t) + &b.scale_real(2.0);
        let lhs = model.predict_expectation(&theta, &rho1, &mix_o).unwrap();
        let rhs = t * model.predict_expectation(&theta, &rho1, &a).unwrap()
            + 2.0 * model.predict_expectation(&theta, &rho1, &b).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-10);
        let mix_rho = &rho1.scale_real(t) + &rho2.scale_real(1.0 - t);
        let lhs = model.predict_expectation(&theta, &mix_rho, &a).unwrap();
        let rhs = t * model.predict_expectation(&theta, &rho1, &a).unwrap()
            + (1.0 - t) * model.predict_expectation(&theta, &rho2, &a).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn gate_cost_ignores_global_phase(amps in prop::collection::vec(-1.0..1.0f64, 12), phase in 0.0..(2.0 * PI), v in entries(3)) {
        let c = small_config();
        let model = ExactClosedModel::new(&c).unwrap();
        let theta = PulseParams::from_flat(3, 3, amps.iter().map(|a| a * 2.0 * PI / c.duration_s()).collect()).unwrap();
        let g = unitary(3, &v);
        let c1 = gate_cost(&model, &theta, &target_expectations(&g).unwrap()).unwrap();
        let c2 = gate_cost(&model, &theta, &target_expectations(&g.scale(C64::from_polar(1.0, phase))).unwrap()).unwrap();
        prop_assert!((c1 - c2).abs() <= 1e-10 * c1.max(1.0));
    }

    #[test]
    fn landscape_costs_are_ordered(vs in prop::collection::vec(entries(3), 1..4), u in entries(3), g in entries(3)) {
        let vs: Vec<Operator> = vs.iter().map(|v| operator(3, v)).collect();
        let (u, g) = (unitary(3, &u), unitary(3, &g));
        let n = noise_sensitivity(&vs);
        let inf = gate_infidelity(&u, &g);
        prop_assert!(n >= 0.0);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&inf));
        prop_assert!(control_cost(&vs, &u, &g) >= n);
    }

    #[test]
    fn expansion_residuals_bound_every_sample(
        coeffs in prop::collection::vec(entries(3), 4),
        noise in prop::collection::vec(-1e-3..1e-3f64, 41),
        order in 0usize..4,
    ) {
        let grid = default_grid();
        let cs: Vec<Operator> = coeffs.iter().map(|c| operator(3, c)).collect();
        let samples: Vec<Operator> = grid
            .iter()
            .zip(&noise)
            .map(|(&e, &z)| {
                let mut s = Operator::identity(3).scale_real(z);
                for (k, c) in cs.iter().enumerate() {
                    s = &s + &c.scale_real(e.powi(k as i32));
                }
                s
            })
            .collect();
        let fit = fit_taylor(&samples, &grid, order, 0).unwrap();
        for (e, s) in grid.iter().zip(&samples) {
            let err = &fit.evaluate(*e) - s;
            for (r, x) in fit.residuals.iter().zip(err.as_slice()) {
                prop_assert!(x.norm() <= r + 1e-12);
            }
        }
        if order < 3 {
            let next = fit_taylor(&samples, &grid, order + 1, 0).unwrap();
            prop_assert!(next.sum_squared_residual <= fit.sum_squared_residual * (1.0 + 1e-9) + 1e-24);
        }
    }

    #[test]
    fn noise_synthesis_is_deterministic(seed in any::<u64>()) {
        let mut spec = small_config().noise;
        spec.realizations = 2;
        let a = synthesize(&spec, seed).unwrap();
        let b = synthesize(&spec, seed).unwrap();
        prop_assert_eq!(a.samples(), b.samples());
    }
}
