//! Pulse optimization against target gates.
//!
//! The cost of a pulse is the squared distance between the ideal
//! expectation table of the gate and the table predicted by a model, over
//! the full informationally complete set. Minimization is box-constrained
//! in normalized coordinates `theta / A_max`, with central-difference
//! gradients, a limited-memory quasi-Newton direction and Armijo
//! backtracking; restarts run in parallel and the lowest cost wins (ties go
//! to the lower restart index).

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{
    choi_of_channel, choi_of_unitary, clock_shift_basis, embed_two_level, gell_mann_basis, hadamard, pauli_x,
    pauli_y, pauli_z, process_fidelity, ObservableBasis, Operator, C64,
};
use crate::dynamics::{expectations_from_ensemble, Simulator, SystemConfig};
use crate::error::{Error, Result};
use crate::graybox::GrayboxModel;
use crate::noisegen::NoiseRealizationSet;
use crate::pulses::PulseParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateFamily {
    ClockShift,
    Subspace,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetGate {
    pub name: String,
    pub unitary: Operator,
    pub family: GateFamily,
}

/// `exp(-i pi/8 X)`, the pi/4 rotation about X.
pub fn r_gate() -> Operator {
    let (c, s) = ((PI / 8.0).cos(), (PI / 8.0).sin());
    Operator::from_vec(
        2,
        vec![C64::new(c, 0.0), C64::new(0.0, -s), C64::new(0.0, -s), C64::new(c, 0.0)],
    )
    .expect("2x2")
}

fn two_level(letter: char) -> Option<Operator> {
    match letter {
        'I' => Some(Operator::identity(2)),
        'X' => Some(pauli_x()),
        'Y' => Some(pauli_y()),
        'Z' => Some(pauli_z()),
        'H' => Some(hadamard()),
        'R' => Some(r_gate()),
        _ => None,
    }
}

/// Every gate name accepted for dimension `d`.
pub fn gate_names(d: usize) -> Vec<String> {
    let mut out = Vec::new();
    for j in 0..d {
        for k in 0..d {
            out.push(format!("sigma_{j}_{k}"));
        }
    }
    if d == 2 {
        out.extend(["I", "X", "Y", "Z", "H", "R"].map(String::from));
    }
    for letter in ['X', 'Y', 'Z', 'H', 'R'] {
        for p in 0..d {
            for q in p + 1..d {
                if d > 2 || (p, q) == (0, 1) {
                    out.push(format!("{letter}{p}{q}"));
                }
            }
        }
    }
    out
}

/// Parses `sigma_j_k`, `{X,Y,Z,H,R}pq` and, for qubits, the bare letters.
pub fn parse_gate(name: &str, d: usize) -> Result<TargetGate> {
    let unknown = || {
        Error::InvalidConfig(format!(
            "unknown gate {name} for d = {d}; valid names: {}",
            gate_names(d).join(", ")
        ))
    };
    if d < 2 {
        return Err(Error::InvalidDimension(d));
    }
    if let Some(rest) = name.strip_prefix("sigma_") {
        let mut it = rest.split('_');
        let (j, k) = match (it.next(), it.next(), it.next()) {
            (Some(j), Some(k), None) => (j.parse::<usize>().map_err(|_| unknown())?, k.parse::<usize>().map_err(|_| unknown())?),
            _ => return Err(unknown()),
        };
        if j >= d || k >= d {
            return Err(unknown());
        }
        return Ok(TargetGate {
            name: name.into(),
            unitary: clock_shift_basis(d)?.gate(j, k).clone(),
            family: GateFamily::ClockShift,
        });
    }
    let mut chars = name.chars();
    let letter = chars.next().ok_or_else(unknown)?;
    let g2 = two_level(letter).ok_or_else(unknown)?;
    let digits: Vec<usize> = chars
        .map(|c| c.to_digit(10).map(|v| v as usize))
        .collect::<Option<_>>()
        .ok_or_else(unknown)?;
    let (p, q) = match digits.as_slice() {
        [] if d == 2 => (0, 1),
        [p, q] if p < q && *q < d && letter != 'I' => (*p, *q),
        _ => return Err(unknown()),
    };
    Ok(TargetGate {
        name: name.into(),
        unitary: embed_two_level(&g2, p, q, d)?,
        family: GateFamily::Subspace,
    })
}

/// Frame in which targets are compared with the full propagator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    /// `U(T)` itself must equal `G`.
    #[default]
    Lab,
    /// `U(T)` must equal `diag(exp(-i omega_j T)) G`, i.e. `G` up to free
    /// evolution.
    Rotating,
}

impl std::str::FromStr for Frame {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lab" => Ok(Self::Lab),
            "rotating" => Ok(Self::Rotating),
            other => Err(Error::InvalidConfig(format!("frame must be lab or rotating, got {other}"))),
        }
    }
}

/// The unitary `U(T)` should equal for `gate` in `frame`.
pub fn frame_target(config: &SystemConfig, gate: &TargetGate, frame: Frame) -> Operator {
    match frame {
        Frame::Lab => gate.unitary.clone(),
        Frame::Rotating => &config.drift_propagator() * &gate.unitary,
    }
}

/// Anything that predicts the dataset-ordered expectation table of a pulse.
pub trait ExpectationModel: Sync {
    fn config(&self) -> &SystemConfig;
    fn predict(&self, theta: &PulseParams) -> Result<Vec<f64>>;
}

impl ExpectationModel for GrayboxModel {
    fn config(&self) -> &SystemConfig {
        GrayboxModel::config(self)
    }

    fn predict(&self, theta: &PulseParams) -> Result<Vec<f64>> {
        Ok(self.forward(theta)?.expectations)
    }
}

/// The noiseless whitebox alone: every noise operator is the identity.
#[derive(Clone, Debug)]
pub struct ExactClosedModel {
    sim: Simulator,
    basis: ObservableBasis,
}

impl ExactClosedModel {
    pub fn new(config: &SystemConfig) -> Result<Self> {
        Ok(Self {
            sim: Simulator::new(config.clone())?,
            basis: gell_mann_basis(config.d)?,
        })
    }
}

impl ExpectationModel for ExactClosedModel {
    fn config(&self) -> &SystemConfig {
        self.sim.config()
    }

    fn predict(&self, theta: &PulseParams) -> Result<Vec<f64>> {
        Ok(expectations_from_ensemble(&[self.sim.closed(theta)?], &self.basis))
    }
}

/// Ideal expectation table of `target`.
pub fn target_expectations(target: &Operator) -> Result<Vec<f64>> {
    Ok(expectations_from_ensemble(std::slice::from_ref(target), &gell_mann_basis(target.dim())?))
}

/// `sum (tr(G rho G^dagger O) - E(theta; rho, O))^2` over the table.
pub fn gate_cost<M: ExpectationModel + ?Sized>(model: &M, theta: &PulseParams, target_table: &[f64]) -> Result<f64> {
    let pred = model.predict(theta)?;
    if pred.len() != target_table.len() {
        return Err(Error::ContractViolation(format!(
            "target table has {} entries, model predicts {}",
            target_table.len(),
            pred.len()
        )));
    }
    Ok(pred
        .iter()
        .zip(target_table)
        .map(|(p, t)| (p - t) * (p - t))
        .sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSettings {
    pub restarts: usize,
    pub max_iterations: usize,
    pub seed: u64,
    /// Central-difference step in normalized units.
    pub fd_step: f64,
    pub memory: usize,
    /// Stop when the projected gradient's largest entry falls below this.
    pub gradient_tol: f64,
    /// Starting points are uniform in `[-init_scale, init_scale] * A_max`.
    pub init_scale: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            restarts: 5,
            max_iterations: 300,
            seed: 0,
            fd_step: 1e-6,
            memory: 10,
            gradient_tol: 1e-9,
            init_scale: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub gate: String,
    pub frame: Frame,
    pub theta_star: Vec<f64>,
    pub cost: f64,
    /// Cost after every iteration of the winning restart.
    pub cost_trace: Vec<f64>,
    pub restart_costs: Vec<f64>,
    pub best_restart: usize,
    pub iterations: usize,
    /// Filled in by the caller, keyed by noise setting.
    #[serde(default)]
    pub fidelities: BTreeMap<String, f64>,
}

struct RestartOutcome {
    u: Vec<f64>,
    cost: f64,
    trace: Vec<f64>,
}

fn project(u: &mut [f64]) {
    u.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
}

fn minimize(
    f: &dyn Fn(&[f64]) -> Result<f64>,
    mut u: Vec<f64>,
    s: &OptimizerSettings,
) -> Result<RestartOutcome> {
    let n = u.len();
    let grad = |u: &[f64]| -> Result<Vec<f64>> {
        let mut g = vec![0.0; n];
        let mut w = u.to_vec();
        for i in 0..n {
            let x = w[i];
            w[i] = x + s.fd_step;
            let fp = f(&w)?;
            w[i] = x - s.fd_step;
            let fm = f(&w)?;
            w[i] = x;
            g[i] = (fp - fm) / (2.0 * s.fd_step);
        }
        Ok(g)
    };
    project(&mut u);
    let mut fu = f(&u)?;
    let mut g = grad(&u)?;
    let mut mem: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let mut trace = Vec::with_capacity(s.max_iterations);
    for _ in 0..s.max_iterations {
        if !fu.is_finite() {
            break;
        }
        // free coordinates: not pinned to a bound by the gradient
        let free: Vec<bool> = (0..n)
            .map(|i| !((u[i] >= 1.0 && g[i] < 0.0) || (u[i] <= -1.0 && g[i] > 0.0)))
            .collect();
        let pg = (0..n)
            .filter(|&i| free[i])
            .fold(0.0f64, |m, i| m.max(g[i].abs()));
        if pg < s.gradient_tol {
            break;
        }
        let gf: Vec<f64> = (0..n).map(|i| if free[i] { g[i] } else { 0.0 }).collect();
        let mut dir = lbfgs_direction(&gf, &mem);
        for i in 0..n {
            if !free[i] {
                dir[i] = 0.0;
            }
        }
        let mut slope: f64 = dir.iter().zip(&gf).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            mem.clear();
            dir = gf.iter().map(|v| -v).collect();
            slope = -gf.iter().map(|v| v * v).sum::<f64>();
        }
        let mut alpha = if mem.is_empty() {
            (0.1 / dir.iter().fold(0.0f64, |m, v| m.max(v.abs()))).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..40 {
            let mut cand: Vec<f64> = u.iter().zip(&dir).map(|(a, b)| a + alpha * b).collect();
            project(&mut cand);
            let fc = f(&cand)?;
            let decrease: f64 = cand.iter().zip(&u).zip(&g).map(|((c, x), gi)| (c - x) * gi).sum();
            if fc.is_finite() && fc <= fu + 1e-4 * decrease {
                accepted = Some((cand, fc));
                break;
            }
            alpha *= 0.5;
        }
        let Some((un, fn_)) = accepted else { break };
        let gn = grad(&un)?;
        let sv: Vec<f64> = un.iter().zip(&u).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = sv.iter().zip(&yv).map(|(a, b)| a * b).sum();
        if sy > 1e-12 {
            if mem.len() == s.memory {
                mem.remove(0);
            }
            mem.push((sv, yv, 1.0 / sy));
        }
        let improvement = fu - fn_;
        u = un;
        fu = fn_;
        g = gn;
        trace.push(fu);
        if improvement <= 1e-14 * fu.abs().max(1e-300) {
            break;
        }
    }
    Ok(RestartOutcome { u, cost: fu, trace })
}

/// Two-loop recursion: `-H g` from the stored `(s, y, 1/(s.y))` pairs.
fn lbfgs_direction(g: &[f64], mem: &[(Vec<f64>, Vec<f64>, f64)]) -> Vec<f64> {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y, rho) in mem.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = mem.last() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Multistart minimization of [`gate_cost`] over the amplitude box.
pub fn optimize_gate<M: ExpectationModel + ?Sized>(
    model: &M,
    gate: &TargetGate,
    frame: Frame,
    a_max: f64,
    settings: &OptimizerSettings,
) -> Result<OptimizationResult> {
    let config = model.config();
    let (d, n_max) = (config.d, config.n_max);
    if gate.unitary.dim() != d {
        return Err(Error::ContractViolation(format!(
            "gate {} acts on d = {}, model has d = {d}",
            gate.name,
            gate.unitary.dim()
        )));
    }
    if settings.restarts == 0 || !(a_max > 0.0) {
        return Err(Error::InvalidConfig("need at least one restart and a positive bound".into()));
    }
    let table = target_expectations(&frame_target(config, gate, frame))?;
    let cost = |u: &[f64]| -> Result<f64> {
        let theta = PulseParams::from_flat(d, n_max, u.iter().map(|v| v * a_max).collect())?;
        gate_cost(model, &theta, &table)
    };
    let len = config.param_len();
    let run = |r: usize| -> Result<RestartOutcome> {
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        rng.set_stream(r as u64);
        let start: Vec<f64> = (0..len)
            .map(|_| rng.random_range(-settings.init_scale..=settings.init_scale))
            .collect();
        minimize(&cost, start, settings)
    };
    #[cfg(feature = "parallel")]
    let outcomes: Vec<Result<RestartOutcome>> = {
        use rayon::prelude::*;
        (0..settings.restarts).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<Result<RestartOutcome>> = (0..settings.restarts).map(run).collect();

    let mut best: Option<(usize, &RestartOutcome)> = None;
    let mut restart_costs = Vec::with_capacity(outcomes.len());
    for (r, o) in outcomes.iter().enumerate() {
        let c = o.as_ref().map(|o| o.cost).unwrap_or(f64::NAN);
        restart_costs.push(c);
        if let Ok(o) = o {
            if o.cost.is_finite() && best.is_none_or(|(_, b)| o.cost < b.cost) {
                best = Some((r, o));
            }
        }
    }
    let Some((r, o)) = best else {
        let first = outcomes.iter().find_map(|o| o.as_ref().ok());
        return Err(Error::OptimizationFailure {
            message: format!("all {} restarts diverged", settings.restarts),
            best_theta: first.map(|o| o.u.iter().map(|v| v * a_max).collect()).unwrap_or_default(),
        });
    };
    Ok(OptimizationResult {
        gate: gate.name.clone(),
        frame,
        theta_star: o.u.iter().map(|v| v * a_max).collect(),
        cost: o.cost,
        iterations: o.trace.len(),
        cost_trace: o.trace.clone(),
        restart_costs,
        best_restart: r,
        fidelities: BTreeMap::new(),
    })
}

/// Process fidelity between the gate and the channel the pulse produces:
/// the single closed unitary when `noise` is `None`, otherwise the
/// Monte-Carlo mixture over every realization.
pub fn evaluate_fidelity(
    config: &SystemConfig,
    theta: &PulseParams,
    gate: &TargetGate,
    frame: Frame,
    noise: Option<&NoiseRealizationSet>,
) -> Result<f64> {
    let sim = Simulator::new(config.clone())?;
    let unitaries = match noise {
        Some(set) if !config.is_closed() => sim.ensemble(theta, set)?,
        _ => vec![sim.closed(theta)?],
    };
    let target = choi_of_unitary(&frame_target(config, gate, frame))?;
    process_fidelity(&target, &choi_of_channel(&unitaries)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::tests::small_qutrit;
    use crate::pulses::sample_random_params;

    #[test]
    fn vocabulary_parses() {
        for d in [2, 3] {
            for name in gate_names(d) {
                let g = parse_gate(&name, d).unwrap();
                assert!(g.unitary.is_unitary(1e-12), "{name}");
            }
        }
        assert_eq!(gate_names(3).len(), 9 + 15);
        assert!(parse_gate("X03", 3).is_err());
        assert!(parse_gate("X", 3).is_err());
        assert!(parse_gate("sigma_3_0", 3).is_err());
        assert!(parse_gate("Q01", 3).is_err());
        let msg = parse_gate("bogus", 3).unwrap_err().to_string();
        assert!(msg.contains("sigma_1_0") && msg.contains("R12"));
    }

    #[test]
    fn r_is_quarter_turn() {
        let r = r_gate();
        let r2 = &r * &r;
        // R^2 = exp(-i pi/4 X)
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((r2[(0, 0)] - C64::new(h, 0.0)).norm() < 1e-15);
        assert!((r2[(0, 1)] - C64::new(0.0, -h)).norm() < 1e-15);
    }

    #[test]
    fn exact_model_cost_zero_means_unit_fidelity() {
        let c = small_qutrit([0.0; 3], 128, 1);
        let theta = sample_random_params(3, 4, 2.0 * PI / 0.25e-6, 3);
        let u0 = Simulator::new(c.clone()).unwrap().closed(&theta).unwrap();
        let gate = TargetGate {
            name: "self".into(),
            unitary: u0.scale(C64::from_polar(1.0, 0.7)),
            family: GateFamily::Subspace,
        };
        let exact = ExactClosedModel::new(&c).unwrap();
        let table = target_expectations(&gate.unitary).unwrap();
        assert!(gate_cost(&exact, &theta, &table).unwrap() < 1e-20);
        let f = evaluate_fidelity(&c, &theta, &gate, Frame::Lab, None).unwrap();
        assert!(f >= 1.0 - 1e-9);
    }

    #[test]
    fn rotating_frame_absorbs_free_evolution() {
        let c = small_qutrit([0.0; 3], 64, 1);
        let zero = PulseParams::zeros(3, 4);
        let id = parse_gate("sigma_0_0", 3).unwrap();
        assert!(evaluate_fidelity(&c, &zero, &id, Frame::Rotating, None).unwrap() > 1.0 - 1e-9);
        assert!(evaluate_fidelity(&c, &zero, &id, Frame::Lab, None).unwrap() < 0.99);
    }

    #[test]
    fn optimizer_reduces_cost_and_is_deterministic() {
        let c = small_qutrit([0.0; 3], 64, 1);
        let exact = ExactClosedModel::new(&c).unwrap();
        let gate = parse_gate("X01", 3).unwrap();
        let s = OptimizerSettings {
            restarts: 2,
            max_iterations: 15,
            ..Default::default()
        };
        let a_max = 2.0 * PI / 0.25e-6;
        let a = optimize_gate(&exact, &gate, Frame::Lab, a_max, &s).unwrap();
        let b = optimize_gate(&exact, &gate, Frame::Lab, a_max, &s).unwrap();
        assert_eq!(a, b);
        assert!(a.cost < a.cost_trace[0] || a.iterations == 1);
        let table = target_expectations(&gate.unitary).unwrap();
        let zero = gate_cost(&exact, &PulseParams::zeros(3, 4), &table).unwrap();
        assert!(a.cost < zero);
        let theta = PulseParams::from_flat(3, 4, a.theta_star.clone()).unwrap();
        assert!(theta.within_bound(a_max));
    }
}
