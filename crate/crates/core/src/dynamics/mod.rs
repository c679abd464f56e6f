//! Driven anharmonic qudit under classical dephasing noise.
//!
//! `H(t_k) = sum_j (omega_j + g_j beta_j(t_k)) |j><j| + f(t_k) (a + a^dagger)`
//! is held constant on each step of the left-endpoint grid and the step
//! exponentials are multiplied in chronological order.

mod dataset;

use serde::{Deserialize, Serialize};

use crate::algebra::{hermitian_eigen, EigenWorkspace, ObservableBasis, Operator, C64, ZERO};
use crate::error::{Error, Result};
use crate::noisegen::{NoiseRealizationSet, NoiseSpec};
use crate::pulses::{control_at, CarrierSpec, PulseParams, WaveformSynth};

pub use dataset::{
    config_hash, derive_seed, generate_dataset, split_sizes, Dataset, DatasetExample, DatasetManifest,
    DATASET_FORMAT_VERSION, ORDERING,
};

/// Physical model of one qudit: drift levels, drive carriers and noise
/// couplings. All frequencies are angular (rad/s).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub d: usize,
    /// Level energies `omega_j`.
    pub levels_rad_s: Vec<f64>,
    pub carrier: CarrierSpec,
    pub n_max: usize,
    /// Noise couplings `g_j`.
    pub couplings: Vec<f64>,
    /// Noise process driving each level. Levels sharing a process see the
    /// same `beta(t)`.
    pub noise_channel: Vec<usize>,
    pub noise: NoiseSpec,
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let d = self.d;
        if d < 2 {
            return Err(Error::InvalidDimension(d));
        }
        if self.levels_rad_s.len() != d || self.couplings.len() != d || self.noise_channel.len() != d
        {
            return Err(Error::InvalidConfig(format!(
                "levels, couplings and noise channel map must all have {d} entries"
            )));
        }
        if self.n_max == 0 {
            return Err(Error::InvalidConfig("n_max must be at least 1".into()));
        }
        self.carrier.validate(d)?;
        self.noise.validate()?;
        if self.noise.steps != self.carrier.steps {
            return Err(Error::InvalidConfig(
                "noise and carrier must share the time grid".into(),
            ));
        }
        if (self.noise.duration_s - self.carrier.duration_s).abs() > 1e-15 * self.carrier.duration_s
        {
            return Err(Error::InvalidConfig(
                "noise and carrier must share the evolution time".into(),
            ));
        }
        if let Some(&c) = self.noise_channel.iter().find(|&&c| c >= self.noise.channels) {
            return Err(Error::InvalidConfig(format!(
                "noise channel {c} exceeds the {} synthesized channels",
                self.noise.channels
            )));
        }
        Ok(())
    }

    pub fn is_closed(&self) -> bool {
        self.couplings.iter().all(|&g| g == 0.0)
    }

    pub fn steps(&self) -> usize {
        self.carrier.steps
    }

    pub fn duration_s(&self) -> f64 {
        self.carrier.duration_s
    }

    pub fn dt(&self) -> f64 {
        self.carrier.dt()
    }

    pub fn param_len(&self) -> usize {
        2 * (self.d - 1) * self.n_max
    }

    /// Same system with every coupling replaced.
    pub fn with_couplings(&self, couplings: Vec<f64>) -> Self {
        Self {
            couplings,
            ..self.clone()
        }
    }

    /// `diag(exp(-i omega_j T))`, the free evolution over the full window.
    pub fn drift_propagator(&self) -> Operator {
        let t = self.duration_s();
        Operator::diag(
            &self
                .levels_rad_s
                .iter()
                .map(|w| C64::from_polar(1.0, -w * t))
                .collect::<Vec<_>>(),
        )
    }
}

/// Propagation engine for one configuration, holding the tabulated carrier.
#[derive(Clone, Debug)]
pub struct Simulator {
    config: SystemConfig,
    synth: WaveformSynth,
    ladder: Vec<f64>,
}

impl Simulator {
    pub fn new(config: SystemConfig) -> Result<Self> {
        config.validate()?;
        let synth = WaveformSynth::new(&config.carrier, config.d, config.n_max)?;
        let ladder = (1..config.d).map(|j| (j as f64).sqrt()).collect();
        Ok(Self {
            config,
            synth,
            ladder,
        })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.d
    }

    fn check_params(&self, theta: &PulseParams) -> Result<()> {
        if theta.dim() != self.config.d || theta.n_max() != self.config.n_max {
            return Err(Error::InvalidConfig(format!(
                "pulse has d={}, n_max={} but the system has d={}, n_max={}",
                theta.dim(),
                theta.n_max(),
                self.config.d,
                self.config.n_max
            )));
        }
        Ok(())
    }

    pub fn waveform(&self, theta: &PulseParams) -> Result<Vec<f64>> {
        self.check_params(theta)?;
        self.synth.waveform(theta)
    }

    fn check_noise(&self, set: &NoiseRealizationSet, r: usize) -> Result<()> {
        if r >= set.realizations() {
            return Err(Error::Index(format!(
                "realization {r} requested but the set holds {}",
                set.realizations()
            )));
        }
        if set.steps() != self.config.steps() {
            return Err(Error::InvalidConfig(format!(
                "noise has {} samples per realization, grid has {}",
                set.steps(),
                self.config.steps()
            )));
        }
        if let Some(&c) = self.config.noise_channel.iter().find(|&&c| c >= set.channels()) {
            return Err(Error::Index(format!("noise channel {c} missing from the set")));
        }
        Ok(())
    }

    fn fill_hamiltonian(&self, h: &mut [C64], f: f64, betas: Option<&[f64]>) {
        let d = self.config.d;
        h.fill(ZERO);
        for j in 0..d {
            let mut e = self.config.levels_rad_s[j];
            if let Some(b) = betas {
                e += self.config.couplings[j] * b[j];
            }
            h[j * d + j] = C64::new(e, 0.0);
        }
        for (j, s) in self.ladder.iter().enumerate() {
            h[j * d + j + 1] = C64::new(f * s, 0.0);
            h[(j + 1) * d + j] = C64::new(f * s, 0.0);
        }
    }

    /// Time-ordered product for a sampled waveform, optionally with one
    /// noise realization.
    fn propagate_wave(
        &self,
        wave: &[f64],
        noise: Option<(&NoiseRealizationSet, usize)>,
        ws: &mut EigenWorkspace,
    ) -> Operator {
        let d = self.config.d;
        let dt = self.config.dt();
        let mut h = vec![ZERO; d * d];
        let mut step = vec![ZERO; d * d];
        let mut acc = Operator::identity(d).into_vec();
        let traces: Option<Vec<&[f64]>> = noise.map(|(set, r)| {
            self.config
                .noise_channel
                .iter()
                .map(|&c| set.realization(c, r))
                .collect()
        });
        let mut betas = vec![0.0; d];
        for (k, &f) in wave.iter().enumerate() {
            let b = traces.as_ref().map(|tr| {
                for (slot, trace) in betas.iter_mut().zip(tr) {
                    *slot = trace[k];
                }
                betas.as_slice()
            });
            self.fill_hamiltonian(&mut h, f, b);
            ws.step_into(&h, dt, &mut step, &mut acc);
        }
        Operator::from_vec(d, acc).expect("square buffer")
    }

    pub fn hamiltonian_at(
        &self,
        theta: &PulseParams,
        beta_values: &[f64],
        k: usize,
    ) -> Result<Operator> {
        self.check_params(theta)?;
        let d = self.config.d;
        if k >= self.config.steps() {
            return Err(Error::Index(format!(
                "step {k} outside the {}-step grid",
                self.config.steps()
            )));
        }
        if beta_values.len() != d {
            return Err(Error::Index(format!(
                "expected {d} noise values, got {}",
                beta_values.len()
            )));
        }
        let f = control_at(theta, &self.config.carrier, k)?;
        let mut h = Operator::zeros(d);
        self.fill_hamiltonian(h.as_mut_slice(), f, Some(beta_values));
        Ok(h)
    }

    pub fn closed(&self, theta: &PulseParams) -> Result<Operator> {
        let wave = self.waveform(theta)?;
        Ok(self.propagate_wave(&wave, None, &mut EigenWorkspace::new(self.dim())))
    }

    pub fn noisy(&self, theta: &PulseParams, set: &NoiseRealizationSet, r: usize) -> Result<Operator> {
        self.check_noise(set, r)?;
        let wave = self.waveform(theta)?;
        Ok(self.propagate_wave(&wave, Some((set, r)), &mut EigenWorkspace::new(self.dim())))
    }

    /// One unitary per realization, in realization order. A closed system
    /// yields the single noiseless unitary regardless of the set.
    pub fn ensemble(&self, theta: &PulseParams, set: &NoiseRealizationSet) -> Result<Vec<Operator>> {
        self.ensemble_with(theta, set, &mut EigenWorkspace::new(self.dim()))
    }

    pub fn ensemble_with(
        &self,
        theta: &PulseParams,
        set: &NoiseRealizationSet,
        ws: &mut EigenWorkspace,
    ) -> Result<Vec<Operator>> {
        let wave = self.waveform(theta)?;
        if self.config.is_closed() {
            return Ok(vec![self.propagate_wave(&wave, None, ws)]);
        }
        self.check_noise(set, 0)?;
        Ok((0..set.realizations())
            .map(|r| self.propagate_wave(&wave, Some((set, r)), ws))
            .collect())
    }

    /// `(U_0, [U_r])` with the closed unitary computed once.
    pub fn closed_and_ensemble(
        &self,
        theta: &PulseParams,
        set: &NoiseRealizationSet,
    ) -> Result<(Operator, Vec<Operator>)> {
        let wave = self.waveform(theta)?;
        let mut ws = EigenWorkspace::new(self.dim());
        let u0 = self.propagate_wave(&wave, None, &mut ws);
        if self.config.is_closed() {
            return Ok((u0.clone(), vec![u0]));
        }
        self.check_noise(set, 0)?;
        let us = (0..set.realizations())
            .map(|r| self.propagate_wave(&wave, Some((set, r)), &mut ws))
            .collect();
        Ok((u0, us))
    }

    pub fn expectations(
        &self,
        theta: &PulseParams,
        set: &NoiseRealizationSet,
        basis: &ObservableBasis,
    ) -> Result<Vec<f64>> {
        let us = self.ensemble(theta, set)?;
        Ok(expectations_from_ensemble(&us, basis))
    }
}

/// `mean_r U_r^dagger A U_r`, summed in realization order.
pub fn heisenberg_mean(unitaries: &[Operator], a: &Operator) -> Operator {
    let d = a.dim();
    let mut acc = Operator::zeros(d);
    let mut tmp = vec![ZERO; d * d];
    let mut out = vec![ZERO; d * d];
    for u in unitaries {
        let ud = u.adjoint();
        crate::algebra::matmul_into(ud.as_slice(), a.as_slice(), d, &mut tmp);
        crate::algebra::matmul_into(&tmp, u.as_slice(), d, &mut out);
        for (x, y) in acc.as_mut_slice().iter_mut().zip(&out) {
            *x += y;
        }
    }
    acc.scale_real(1.0 / unitaries.len() as f64)
}

/// Dataset-ordered expectation vector: for each basis element `j`, each of
/// its eigenvectors `k` as the initial state, each element `i` measured.
pub fn expectations_from_ensemble(unitaries: &[Operator], basis: &ObservableBasis) -> Vec<f64> {
    let d = basis.dim();
    let n = basis.len();
    let heis: Vec<Operator> = basis
        .elements()
        .iter()
        .map(|a| heisenberg_mean(unitaries, a))
        .collect();
    let mut out = Vec::with_capacity(n * d * n);
    for state in basis.initial_states() {
        for m in &heis {
            out.push(m.expectation(&state).re);
        }
    }
    out
}

pub fn hamiltonian_at(
    config: &SystemConfig,
    theta: &PulseParams,
    beta_values: &[f64],
    k: usize,
) -> Result<Operator> {
    Simulator::new(config.clone())?.hamiltonian_at(theta, beta_values, k)
}

pub fn propagate_closed(config: &SystemConfig, theta: &PulseParams) -> Result<Operator> {
    Simulator::new(config.clone())?.closed(theta)
}

pub fn propagate_noisy(
    config: &SystemConfig,
    theta: &PulseParams,
    set: &NoiseRealizationSet,
    r: usize,
) -> Result<Operator> {
    Simulator::new(config.clone())?.noisy(theta, set, r)
}

pub fn monte_carlo_expectations(
    config: &SystemConfig,
    theta: &PulseParams,
    set: &NoiseRealizationSet,
    basis: &ObservableBasis,
) -> Result<Vec<f64>> {
    Simulator::new(config.clone())?.expectations(theta, set, basis)
}

/// Predicts `tr(O E(rho))` from a dataset-ordered table `G(i, j, k)` of
/// basis-element expectations, using linearity of the channel:
/// `rho = I/d + sum_j b_j sum_k lambda_k^(j) P_k^(j)` and
/// `O = c_0 I + sum_i a_i A_i`.
pub fn assemble_expectation(basis: &ObservableBasis, table: &[f64], rho: &Operator, o: &Operator) -> Result<f64> {
    let d = basis.dim();
    let n = basis.len();
    if table.len() != n * d * n {
        return Err(Error::ContractViolation(format!(
            "expectation table has {} entries, expected {}",
            table.len(),
            n * d * n
        )));
    }
    if rho.dim() != d || o.dim() != d {
        return Err(Error::ContractViolation(format!(
            "operators of dimension {} and {} against a basis of dimension {d}",
            rho.dim(),
            o.dim()
        )));
    }
    check_density(rho)?;
    if !o.is_hermitian(1e-10 * o.max_abs().max(1.0)) {
        return Err(Error::ContractViolation("observable must be Hermitian".into()));
    }
    let g = |i: usize, j: usize, k: usize| table[(j * d + k) * n + i];
    let a = basis.coefficients(o);
    let b = basis.coefficients(rho);
    let c0 = o.trace().re / d as f64;
    let mut total = c0;
    for (i, ai) in a.iter().enumerate() {
        if *ai == 0.0 {
            continue;
        }
        // the identity part of rho, resolved on the first eigenbasis
        let mut e = (0..d).map(|k| g(i, 0, k)).sum::<f64>() / d as f64;
        for (j, bj) in b.iter().enumerate() {
            let lambda = &basis.eigensystem(j).values;
            e += bj * (0..d).map(|k| lambda[k] * g(i, j, k)).sum::<f64>();
        }
        total += ai * e;
    }
    Ok(total)
}

/// Hermitian, unit trace, eigenvalues `>= -1e-10`.
pub fn check_density(rho: &Operator) -> Result<()> {
    if !rho.is_hermitian(1e-10) {
        return Err(Error::Domain("density matrix is not Hermitian".into()));
    }
    let tr = rho.trace().re;
    if (tr - 1.0).abs() > 1e-10 {
        return Err(Error::Domain(format!("density matrix has trace {tr}")));
    }
    let min = hermitian_eigen(rho).values[0];
    if min < -1e-10 {
        return Err(Error::Domain(format!("density matrix has eigenvalue {min}")));
    }
    Ok(())
}

/// Relative eigenvalue floor below which an observable counts as singular.
pub const INVERTIBILITY_THRESHOLD: f64 = 1e-6;

/// `V_O = O^-1 U_0 mean_r(U_r^dagger O U_r) U_0^dagger` from propagated
/// unitaries.
pub fn noise_operator_from_ensemble(u0: &Operator, unitaries: &[Operator], o: &Operator) -> Result<Operator> {
    let w = oracle_w_from_ensemble(u0, unitaries, o);
    let o_inv = o.hermitian_inverse(INVERTIBILITY_THRESHOLD * o.hermitian_spectral_norm())?;
    Ok(&o_inv * &w)
}

/// `W_O = U_0 mean_r(U_r^dagger O U_r) U_0^dagger`, which satisfies
/// `tr(W_O U_0 rho U_0^dagger) = mean_r tr(O U_r rho U_r^dagger)`.
pub fn oracle_w_from_ensemble(u0: &Operator, unitaries: &[Operator], o: &Operator) -> Operator {
    let m = heisenberg_mean(unitaries, o);
    (&(u0 * &m) * &u0.adjoint()).hermitian_part()
}

pub fn oracle_noise_operator(
    config: &SystemConfig,
    theta: &PulseParams,
    set: &NoiseRealizationSet,
    o: &Operator,
) -> Result<Operator> {
    if o.hermitian_spectral_norm() == 0.0 {
        return Err(Error::Invertibility("zero observable".into()));
    }
    let sim = Simulator::new(config.clone())?;
    let (u0, us) = sim.closed_and_ensemble(theta, set)?;
    noise_operator_from_ensemble(&u0, &us, o)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::algebra::{gell_mann_basis, pauli_x, pauli_z, ONE};
    use crate::noisegen::synthesize;
    use crate::pulses::sample_random_params;
    use std::f64::consts::PI;

    pub(crate) fn small_qutrit(couplings: [f64; 3], steps: usize, k: usize) -> SystemConfig {
        let t = 0.25e-6;
        SystemConfig {
            d: 3,
            levels_rad_s: vec![0.0, 2.0 * PI * 0.45e9, 2.0 * PI * 0.70e9],
            carrier: CarrierSpec {
                scale: vec![2.0, 2.0],
                drive_rad_s: vec![2.0 * PI * 0.49e9, 2.0 * PI * 0.28e9],
                duration_s: t,
                steps,
            },
            n_max: 4,
            couplings: couplings.to_vec(),
            noise_channel: vec![0, 1, 2],
            noise: NoiseSpec {
                alpha1: 1e9,
                alpha2: 1e-9,
                f_min_hz: None,
                channels: 3,
                realizations: k,
                steps,
                duration_s: t,
            },
        }
    }

    fn a_max() -> f64 {
        2.0 * PI / 0.25e-6
    }

    #[test]
    fn drift_only_hamiltonian() {
        let c = small_qutrit([0.0, 0.0, 0.0], 64, 1);
        let h = hamiltonian_at(&c, &PulseParams::zeros(3, 4), &[0.0; 3], 5).unwrap();
        assert_eq!(h, Operator::diag_real(&c.levels_rad_s));
    }

    #[test]
    fn drive_couples_through_ladder() {
        let c = small_qutrit([0.0, 0.0, 0.0], 64, 1);
        let theta = sample_random_params(3, 4, a_max(), 1);
        let sim = Simulator::new(c.clone()).unwrap();
        let k = 17;
        let h = sim.hamiltonian_at(&theta, &[0.0; 3], k).unwrap();
        let f = control_at(&theta, &c.carrier, k).unwrap();
        assert!(h.is_hermitian(0.0));
        assert!((h[(0, 1)].re - f).abs() <= 1e-9 * f.abs());
        assert!((h[(1, 2)].re - 2f64.sqrt() * f).abs() <= 1e-9 * f.abs());
        assert_eq!(h[(0, 2)], ZERO);
        assert!(sim.hamiltonian_at(&theta, &[0.0; 3], 64).is_err());
    }

    #[test]
    fn qubit_pauli_form() {
        // (omega/2) Z + Omega f X + g beta Z with levels (omega/2, -omega/2)
        // and couplings (g, -g) on one shared channel
        let (omega, g, beta) = (2.0 * PI * 0.45e9, 110.0, 0.37);
        let t = 0.25e-6;
        let c = SystemConfig {
            d: 2,
            levels_rad_s: vec![omega / 2.0, -omega / 2.0],
            carrier: CarrierSpec {
                scale: vec![2.0],
                drive_rad_s: vec![2.0 * PI * 0.49e9],
                duration_s: t,
                steps: 64,
            },
            n_max: 3,
            couplings: vec![g, -g],
            noise_channel: vec![0, 0],
            noise: NoiseSpec {
                alpha1: 1e9,
                alpha2: 1e-9,
                f_min_hz: None,
                channels: 1,
                realizations: 1,
                steps: 64,
                duration_s: t,
            },
        };
        let theta = sample_random_params(2, 3, a_max(), 4);
        let k = 9;
        let h = hamiltonian_at(&c, &theta, &[beta, beta], k).unwrap();
        // control_at already carries the Omega_1 factor
        let f = control_at(&theta, &c.carrier, k).unwrap();
        let paper = &(&pauli_z().scale_real(omega / 2.0) + &pauli_x().scale_real(f))
            + &pauli_z().scale_real(g * beta);
        assert!(h.distance(&paper) <= 1e-12 * omega);
        // the same physics written with a ground level at zero differs by a
        // multiple of the identity only
        let mut zero_ground = c.clone();
        zero_ground.levels_rad_s = vec![0.0, -omega];
        let h0 = hamiltonian_at(&zero_ground, &theta, &[beta, beta], k).unwrap();
        let diff = &h - &h0;
        assert!(diff.distance(&Operator::identity(2).scale_real(omega / 2.0)) <= 1e-12 * omega);
    }

    #[test]
    fn zero_pulse_closed_is_drift_phase() {
        let c = small_qutrit([0.0, 0.0, 0.0], 200, 1);
        let u = propagate_closed(&c, &PulseParams::zeros(3, 4)).unwrap();
        assert!(u.distance(&c.drift_propagator()) < 1e-10);
    }

    #[test]
    fn closed_propagation_is_unitary() {
        let c = small_qutrit([0.0, 0.0, 0.0], 500, 1);
        for seed in 0..3 {
            let theta = sample_random_params(3, 4, a_max(), seed);
            assert!(propagate_closed(&c, &theta).unwrap().is_unitary(1e-9));
        }
    }

    #[test]
    fn first_order_step_convergence() {
        // weak drive keeps the error in the asymptotic regime
        let theta = sample_random_params(3, 4, 0.2 * a_max(), 7);
        let u = |m: usize| propagate_closed(&small_qutrit([0.0; 3], m, 1), &theta).unwrap();
        let (u1, u2, u4) = (u(2000), u(4000), u(8000));
        let e1 = u1.distance(&u2);
        let e2 = u2.distance(&u4);
        let ratio = e1 / e2;
        assert!((1.6..2.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn zero_coupling_noisy_matches_closed_bitwise() {
        let c = small_qutrit([0.0, 0.0, 0.0], 128, 3);
        let set = synthesize(&c.noise, 5).unwrap();
        let theta = sample_random_params(3, 4, a_max(), 2);
        let u0 = propagate_closed(&c, &theta).unwrap();
        for r in 0..3 {
            assert_eq!(propagate_noisy(&c, &theta, &set, r).unwrap(), u0);
        }
        assert!(matches!(
            propagate_noisy(&c, &theta, &set, 3),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn pure_dephasing_is_diagonal() {
        let c = small_qutrit([0.0, 110.0, 120.0], 128, 2);
        let set = synthesize(&c.noise, 6).unwrap();
        let u = propagate_noisy(&c, &PulseParams::zeros(3, 4), &set, 1).unwrap();
        for r in 0..3 {
            for col in 0..3 {
                let z = u[(r, col)].norm();
                if r == col {
                    assert!((z - 1.0).abs() < 1e-12);
                } else {
                    assert!(z < 1e-12);
                }
            }
        }
    }

    #[test]
    fn expectation_vector_shape_and_bounds() {
        let c = small_qutrit([0.0, 110.0, 120.0], 128, 8);
        let set = synthesize(&c.noise, 7).unwrap();
        let basis = gell_mann_basis(3).unwrap();
        let theta = sample_random_params(3, 4, a_max(), 3);
        let e = monte_carlo_expectations(&c, &theta, &set, &basis).unwrap();
        assert_eq!(e.len(), 192);
        for (n, v) in e.iter().enumerate() {
            let eig = &basis.eigensystem(n % 8).values;
            assert!(*v >= eig[0] - 1e-9 && *v <= eig[2] + 1e-9);
        }
        let b2 = gell_mann_basis(2).unwrap();
        let mut q = small_qutrit([0.0; 3], 64, 1);
        q.d = 2;
        q.levels_rad_s.truncate(2);
        q.couplings.truncate(2);
        q.noise_channel.truncate(2);
        q.carrier.scale.truncate(1);
        q.carrier.drive_rad_s.truncate(1);
        let th2 = sample_random_params(2, 4, a_max(), 3);
        assert_eq!(monte_carlo_expectations(&q, &th2, &set, &b2).unwrap().len(), 18);
    }

    #[test]
    fn ground_population_preserved_by_drift() {
        let c = small_qutrit([0.0; 3], 64, 1);
        let u = propagate_closed(&c, &PulseParams::zeros(3, 4)).unwrap();
        let o = Operator::diag_real(&[1.0, -1.0, 0.0]);
        let psi = [ONE, ZERO, ZERO];
        let phi = u.apply(&psi);
        assert!((o.expectation(&phi).re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn closed_oracle_is_identity() {
        let c = small_qutrit([0.0; 3], 128, 4);
        let set = synthesize(&c.noise, 1).unwrap();
        let theta = sample_random_params(3, 4, a_max(), 5);
        let o = Operator::diag_real(&[1.0, 2.0, -0.5]);
        let v = oracle_noise_operator(&c, &theta, &set, &o).unwrap();
        assert!(v.distance(&Operator::identity(3)) < 1e-10);
        let singular = Operator::diag_real(&[1.0, -1.0, 0.0]);
        assert!(matches!(
            oracle_noise_operator(&c, &theta, &set, &singular),
            Err(Error::Invertibility(_))
        ));
    }

    #[test]
    fn noisy_oracle_reproduces_expectations() {
        let c = small_qutrit([0.0, 110.0, 120.0], 128, 6);
        let set = synthesize(&c.noise, 2).unwrap();
        let theta = sample_random_params(3, 4, a_max(), 6);
        let sim = Simulator::new(c).unwrap();
        let (u0, us) = sim.closed_and_ensemble(&theta, &set).unwrap();
        let o = Operator::from_fn(3, |r, col| {
            if r == col {
                C64::new(1.0 + r as f64, 0.0)
            } else if r < col {
                C64::new(0.3, 0.2)
            } else {
                C64::new(0.3, -0.2)
            }
        });
        let v = noise_operator_from_ensemble(&u0, &us, &o).unwrap();
        let w = &o * &v;
        assert!(w.hermiticity_error() < 1e-10);
        let psi = [C64::new(0.6, 0.0), C64::new(0.0, 0.48), C64::new(0.64, 0.0)];
        let rho = Operator::projector(&psi);
        let r = &(&u0 * &rho) * &u0.adjoint();
        let predicted = (&(&v * &r) * &o).trace().re;
        let direct: f64 = us
            .iter()
            .map(|u| (&(&(&o * u) * &rho) * &u.adjoint()).trace().re)
            .sum::<f64>()
            / us.len() as f64;
        assert!((predicted - direct).abs() < 1e-10);
    }

    #[test]
    fn assembled_prediction_matches_direct_average() {
        use crate::noiseop::tests::random_unitary;
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;
        let c = small_qutrit([0.0, 50.0, 60.0], 64, 6);
        let set = synthesize(&c.noise, 4).unwrap();
        let sim = Simulator::new(c.clone()).unwrap();
        let theta = sample_random_params(3, 4, a_max(), 8);
        let us = sim.ensemble(&theta, &set).unwrap();
        let basis = gell_mann_basis(3).unwrap();
        let table = expectations_from_ensemble(&us, &basis);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let v = random_unitary(3, &mut rng);
            let w: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            let total: f64 = w.iter().sum();
            let rho = &(&v * &Operator::diag_real(&w.iter().map(|x| x / total).collect::<Vec<_>>())) * &v.adjoint();
            let rho = rho.hermitian_part();
            let o = Operator::from_fn(3, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .hermitian_part();
            let direct = us
                .iter()
                .map(|u| (&(&(u * &rho) * &u.adjoint()) * &o).trace().re)
                .sum::<f64>()
                / us.len() as f64;
            let got = assemble_expectation(&basis, &table, &rho, &o).unwrap();
            assert!((got - direct).abs() < 1e-10, "{got} vs {direct}");
        }
        let not_a_state = Operator::diag_real(&[1.5, -0.5, 0.0]);
        assert!(matches!(
            assemble_expectation(&basis, &table, &not_a_state, &Operator::identity(3)),
            Err(Error::Domain(_))
        ));
    }
}
