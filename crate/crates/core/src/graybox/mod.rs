//! Graybox model: a recurrent network maps pulse parameters to one bounded
//! noise operator per basis observable, and the closed-system propagator
//! turns those into predicted expectation values.
//!
//! Input: `theta / A_max` read as `n_max` steps of `2 (d - 1)` features
//! (harmonic `n` at step `n - 1`; transition-major, in-phase first). An
//! encoder cell runs over the sequence; each observable has its own cell,
//! applied once to the encoding from a zero state, and a dense head whose
//! outputs are squashed into `(r, Theta/2pi, Psi/2pi)` by sigmoids, `x` by
//! tanh and `p` by softmax.

mod checkpoint;
mod gru;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::algebra::{gell_mann_basis, ObservableBasis, Operator, C64};
use crate::dynamics::{assemble_expectation, DatasetExample, Simulator, SystemConfig};
use crate::error::{Error, Result};
use crate::noiseop::{
    build_v, shift_observable, w_backward, NoiseOperatorParams, ShiftedObservable, SubUnitary,
};
use crate::pulses::{max_amplitude, AmplitudeMode, PulseParams};
use gru::{GruShape, StepTape};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use train::{train, Hyperparameters, TrainingRecord};

pub const DEFAULT_HIDDEN: usize = 60;
pub const INIT_SCALE: f64 = 0.08;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Offsets of each block in the flat weight vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Layout {
    pub enc: GruShape,
    pub obs: GruShape,
    pub n_obs: usize,
    pub head_out: usize,
}

impl Layout {
    fn new(d: usize, hidden: usize) -> Self {
        Self {
            enc: GruShape {
                input: 2 * (d - 1),
                hidden,
            },
            obs: GruShape { input: hidden, hidden },
            n_obs: d * d - 1,
            head_out: 3 * d * (d - 1) / 2 + 2 * d,
        }
    }

    pub fn obs_offset(&self, o: usize) -> usize {
        self.enc.len() + o * self.obs.len()
    }

    pub fn head_len(&self) -> usize {
        self.head_out * (self.enc.hidden + 1)
    }

    pub fn head_offset(&self, o: usize) -> usize {
        self.enc.len() + self.n_obs * self.obs.len() + o * self.head_len()
    }

    pub fn total(&self) -> usize {
        self.head_offset(self.n_obs)
    }

    /// Named blocks in payload order, for checkpoints and diagnostics.
    pub fn blocks(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let gru = |out: &mut Vec<(String, usize, usize)>, name: &str, off: usize, s: GruShape| {
            out.push((format!("{name}.w"), off, s.w_len()));
            out.push((format!("{name}.u"), off + s.w_len(), s.u_len()));
            out.push((format!("{name}.b"), off + s.w_len() + s.u_len(), 3 * s.hidden));
        };
        gru(&mut out, "encoder", 0, self.enc);
        for o in 0..self.n_obs {
            gru(&mut out, &format!("observable{o}"), self.obs_offset(o), self.obs);
        }
        for o in 0..self.n_obs {
            let off = self.head_offset(o);
            let wl = self.head_out * self.enc.hidden;
            out.push((format!("head{o}.w"), off, wl));
            out.push((format!("head{o}.b"), off + wl, self.head_out));
        }
        out
    }
}

/// A training example with its closed-system propagator folded into the
/// initial states.
#[derive(Clone, Debug)]
pub struct PreparedExample {
    input: Vec<f64>,
    /// `U_0 |q_jk>` in dataset order.
    states: Vec<Vec<C64>>,
    target: Vec<f64>,
}

/// Everything the model predicts for one pulse.
#[derive(Clone, Debug)]
pub struct GrayboxOutput {
    pub u0: Operator,
    pub params: Vec<NoiseOperatorParams>,
    /// Noise operators of the shifted observables.
    pub w: Vec<Operator>,
    pub v: Vec<Operator>,
    /// Predicted expectations in dataset order.
    pub expectations: Vec<f64>,
}

struct HeadTape {
    h: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    params: NoiseOperatorParams,
    w: Operator,
}

struct Tape {
    steps: Vec<StepTape>,
    h_enc: Vec<f64>,
    heads: Vec<HeadTape>,
    expectations: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct GrayboxModel {
    config: SystemConfig,
    hidden: usize,
    a_max: f64,
    weights: Vec<f64>,
    layout: Layout,
    sim: Simulator,
    basis: ObservableBasis,
    shifts: Vec<ShiftedObservable>,
}

impl GrayboxModel {
    /// Fresh model with weights uniform in `[-0.08, 0.08]` and zero biases.
    pub fn new(config: &SystemConfig, hidden: usize, seed: u64) -> Result<Self> {
        let mut model = Self::with_weights(config, hidden, Vec::new())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = vec![0.0; model.layout.total()];
        for (name, off, len) in model.layout.blocks() {
            if name.ends_with(".b") {
                continue;
            }
            for v in &mut w[off..off + len] {
                *v = rng.random_range(-INIT_SCALE..=INIT_SCALE);
            }
        }
        model.weights = w;
        Ok(model)
    }

    /// Model with the given weights; an empty vector is accepted as a
    /// placeholder for [`GrayboxModel::new`].
    pub(crate) fn with_weights(config: &SystemConfig, hidden: usize, weights: Vec<f64>) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::InvalidConfig("hidden width must be positive".into()));
        }
        let sim = Simulator::new(config.clone())?;
        let d = config.d;
        let basis = gell_mann_basis(d)?;
        let shifts = basis
            .elements()
            .iter()
            .map(shift_observable)
            .collect::<Result<Vec<_>>>()?;
        let layout = Layout::new(d, hidden);
        if !weights.is_empty() && weights.len() != layout.total() {
            return Err(Error::Format(format!(
                "{} weights for a model of size {}",
                weights.len(),
                layout.total()
            )));
        }
        Ok(Self {
            a_max: max_amplitude(config.duration_s(), config.n_max, AmplitudeMode::TotalEnvelope)?,
            config: config.clone(),
            hidden,
            weights,
            layout,
            sim,
            basis,
            shifts,
        })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    pub fn basis(&self) -> &ObservableBasis {
        &self.basis
    }

    pub fn shifts(&self) -> &[ShiftedObservable] {
        &self.shifts
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn num_weights(&self) -> usize {
        self.weights.len()
    }

    /// Named `(name, offset, length)` blocks of the weight vector.
    pub fn weight_blocks(&self) -> Vec<(String, usize, usize)> {
        self.layout.blocks()
    }

    fn input_sequence(&self, theta: &PulseParams) -> Result<Vec<f64>> {
        let (d, n_max) = (self.config.d, self.config.n_max);
        if theta.dim() != d || theta.n_max() != n_max {
            return Err(Error::ContractViolation(format!(
                "pulse for d = {}, n_max = {} given to a model for d = {d}, n_max = {n_max}",
                theta.dim(),
                theta.n_max()
            )));
        }
        let width = 2 * (d - 1);
        let mut seq = vec![0.0; n_max * width];
        let flat = theta.as_slice();
        for i in 0..d - 1 {
            for c in 0..2 {
                for n in 0..n_max {
                    seq[n * width + 2 * i + c] = flat[i * 2 * n_max + c * n_max + n] / self.a_max;
                }
            }
        }
        Ok(seq)
    }

    fn prepare_one(&self, theta: &PulseParams, target: Vec<f64>) -> Result<PreparedExample> {
        let u0 = self.sim.closed(theta)?;
        self.prepare_with(theta, &u0, target)
    }

    fn prepare_with(&self, theta: &PulseParams, u0: &Operator, target: Vec<f64>) -> Result<PreparedExample> {
        let states = self
            .basis
            .initial_states()
            .iter()
            .map(|q| u0.apply(q))
            .collect();
        Ok(PreparedExample {
            input: self.input_sequence(theta)?,
            states,
            target,
        })
    }

    /// Propagates every example's pulse once and caches the rotated states.
    pub fn prepare(&self, examples: &[DatasetExample]) -> Result<Vec<PreparedExample>> {
        let n_e = self.config.d * self.layout.n_obs * self.layout.n_obs;
        let one = |ex: &DatasetExample| -> Result<PreparedExample> {
            if ex.expectations.len() != n_e {
                return Err(Error::ContractViolation(format!(
                    "example has {} expectations, expected {n_e}",
                    ex.expectations.len()
                )));
            }
            let theta = PulseParams::from_flat(self.config.d, self.config.n_max, ex.theta.clone())?;
            self.prepare_one(&theta, ex.expectations.clone())
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            examples.par_iter().map(one).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            examples.iter().map(one).collect()
        }
    }

    fn head_params(&self, y: &[f64]) -> Result<NoiseOperatorParams> {
        let d = self.config.d;
        let np = d * (d - 1) / 2;
        let subs = (0..np)
            .map(|m| SubUnitary {
                r: gru::sigmoid(y[3 * m]),
                theta: TWO_PI * gru::sigmoid(y[3 * m + 1]),
                psi: TWO_PI * gru::sigmoid(y[3 * m + 2]),
            })
            .collect();
        let x = y[3 * np..3 * np + d].iter().map(|v| v.tanh()).collect();
        let logits = &y[3 * np + d..];
        let top = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let e: Vec<f64> = logits.iter().map(|v| (v - top).exp()).collect();
        let total: f64 = e.iter().sum();
        let p = e.iter().map(|v| v / total).collect();
        NoiseOperatorParams::new(d, subs, x, p)
    }

    fn run(&self, input: &[f64], states: &[Vec<C64>]) -> Result<Tape> {
        let lay = &self.layout;
        let w = &self.weights;
        let enc = gru::view(w, 0, lay.enc);
        let width = lay.enc.input;
        let mut h = vec![0.0; self.hidden];
        let mut steps = Vec::with_capacity(self.config.n_max);
        for x in input.chunks_exact(width) {
            let (next, tape) = gru::step(&enc, lay.enc, x, &h);
            steps.push(tape);
            h = next;
        }
        let h_enc = h;
        let n = lay.n_obs;
        let mut heads = Vec::with_capacity(n);
        for o in 0..n {
            let cell = gru::view(w, lay.obs_offset(o), lay.obs);
            let (ho, z, nn) = gru::step_from_zero(&cell, lay.obs, &h_enc);
            let off = lay.head_offset(o);
            let hw = &w[off..off + lay.head_out * self.hidden];
            let mut y = w[off + lay.head_out * self.hidden..off + lay.head_len()].to_vec();
            gru::gemv_acc(hw, &ho, &mut y);
            let params = self.head_params(&y)?;
            let wo = params.w()?;
            heads.push(HeadTape {
                h: ho,
                z,
                n: nn,
                params,
                w: wo,
            });
        }
        let mut expectations = Vec::with_capacity(states.len() * n);
        for phi in states {
            for (head, shift) in heads.iter().zip(&self.shifts) {
                expectations.push(shift.recover(head.w.expectation(phi).re));
            }
        }
        Ok(Tape {
            steps,
            h_enc,
            heads,
            expectations,
        })
    }

    /// Accumulates `dL/dweights` given `dL/dexpectations`.
    fn backward(&self, tape: &Tape, states: &[Vec<C64>], de: &[f64], grad: &mut [f64]) {
        let lay = &self.layout;
        let d = self.config.d;
        let np = d * (d - 1) / 2;
        let hd = self.hidden;
        let w = &self.weights;
        let n = lay.n_obs;
        let mut dh_enc = vec![0.0; hd];
        for (o, head) in tape.heads.iter().enumerate() {
            let a = self.shifts[o].a;
            let g = Operator::from_fn(d, |r, c| {
                states
                    .iter()
                    .enumerate()
                    .map(|(s, phi)| phi[r] * phi[c].conj() * (de[s * n + o] / a))
                    .sum()
            });
            let pg = w_backward(&head.params, &g);
            let prm = &head.params;
            let mut dy = vec![0.0; lay.head_out];
            for m in 0..np {
                let u = prm.subunitaries[m];
                let gs = pg.subunitaries[m];
                let r = u.r;
                let ds_dr_chain = if r < 1.0 {
                    -r * r * ((1.0 - r) / (1.0 + r)).sqrt()
                } else {
                    0.0
                };
                dy[3 * m] = gs.r * r * (1.0 - r) + gs.s * ds_dr_chain;
                let st = u.theta / TWO_PI;
                dy[3 * m + 1] = gs.theta * TWO_PI * st * (1.0 - st);
                let sp = u.psi / TWO_PI;
                dy[3 * m + 2] = gs.psi * TWO_PI * sp * (1.0 - sp);
            }
            for i in 0..d {
                dy[3 * np + i] = pg.x[i] * (1.0 - prm.x[i] * prm.x[i]);
            }
            let mean: f64 = (0..d).map(|i| prm.p[i] * pg.p[i]).sum();
            for i in 0..d {
                dy[3 * np + d + i] = prm.p[i] * (pg.p[i] - mean);
            }

            let off = lay.head_offset(o);
            let wl = lay.head_out * hd;
            let mut dho = vec![0.0; hd];
            gru::gemv_t_acc(&w[off..off + wl], &dy, &mut dho);
            {
                let (gw, gb) = grad[off..off + lay.head_len()].split_at_mut(wl);
                gru::ger_acc(gw, &dy, &head.h);
                for (g, v) in gb.iter_mut().zip(&dy) {
                    *g += v;
                }
            }
            let cell = gru::view(w, lay.obs_offset(o), lay.obs);
            let mut gcell = gru::view_mut(grad, lay.obs_offset(o), lay.obs);
            gru::step_from_zero_backward(
                &cell,
                &mut gcell,
                lay.obs,
                &tape.h_enc,
                &head.z,
                &head.n,
                &dho,
                &mut dh_enc,
            );
        }
        let enc = gru::view(w, 0, lay.enc);
        let mut genc = gru::view_mut(grad, 0, lay.enc);
        let mut dh = dh_enc;
        for st in tape.steps.iter().rev() {
            let (prev, _) = gru::step_backward(&enc, &mut genc, lay.enc, st, &dh, false);
            dh = prev;
        }
    }

    /// Sum of squared errors over `batch`, and its gradient when requested.
    fn sse(&self, batch: &[PreparedExample], grad: Option<&mut [f64]>) -> Result<f64> {
        let mut total = 0.0;
        match grad {
            None => {
                for ex in batch {
                    let tape = self.run(&ex.input, &ex.states)?;
                    total += squared_error(&tape.expectations, &ex.target);
                }
            }
            Some(g) => {
                for ex in batch {
                    let tape = self.run(&ex.input, &ex.states)?;
                    total += squared_error(&tape.expectations, &ex.target);
                    let de: Vec<f64> = tape
                        .expectations
                        .iter()
                        .zip(&ex.target)
                        .map(|(p, t)| 2.0 * (p - t))
                        .collect();
                    self.backward(&tape, &ex.states, &de, g);
                }
            }
        }
        Ok(total)
    }

    fn entries(&self, n_examples: usize) -> f64 {
        (n_examples * self.config.d * self.layout.n_obs * self.layout.n_obs) as f64
    }

    /// Mean squared error over every expectation entry of `batch`.
    pub fn loss(&self, batch: &[PreparedExample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::ContractViolation("empty batch".into()));
        }
        Ok(self.sse(batch, None)? / self.entries(batch.len()))
    }

    /// Loss and its gradient, summed serially in batch order.
    pub fn loss_and_grad(&self, batch: &[PreparedExample]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::ContractViolation("empty batch".into()));
        }
        let mut g = vec![0.0; self.weights.len()];
        let sse = self.sse(batch, Some(&mut g))?;
        let scale = 1.0 / self.entries(batch.len());
        g.iter_mut().for_each(|v| *v *= scale);
        Ok((sse * scale, g))
    }

    /// Full forward pass, including `U_0` for `theta`.
    pub fn forward(&self, theta: &PulseParams) -> Result<GrayboxOutput> {
        let u0 = self.sim.closed(theta)?;
        self.forward_with(theta, u0)
    }

    /// Forward pass with a caller-supplied closed propagator.
    pub fn forward_with(&self, theta: &PulseParams, u0: Operator) -> Result<GrayboxOutput> {
        let prep = self.prepare_with(theta, &u0, Vec::new())?;
        let tape = self.run(&prep.input, &prep.states)?;
        let v = tape
            .heads
            .iter()
            .zip(&self.shifts)
            .map(|(h, s)| build_v(&s.original, &h.w, Some(s)))
            .collect::<Result<Vec<_>>>()?;
        Ok(GrayboxOutput {
            u0,
            params: tape.heads.iter().map(|h| h.params.clone()).collect(),
            w: tape.heads.into_iter().map(|h| h.w).collect(),
            v,
            expectations: tape.expectations,
        })
    }

    /// Predicted `tr(O E(rho))` for any state and observable, assembled from
    /// the basis predictions.
    pub fn predict_expectation(&self, theta: &PulseParams, rho: &Operator, o: &Operator) -> Result<f64> {
        let out = self.forward(theta)?;
        assemble_expectation(&self.basis, &out.expectations, rho, o)
    }
}

fn squared_error(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::generate_dataset;
    use crate::noisegen::NoiseSpec;
    use crate::pulses::{sample_random_params, CarrierSpec};
    use std::f64::consts::PI;

    pub(crate) fn tiny_config(couplings: [f64; 3], k: usize) -> SystemConfig {
        let t = 0.25e-6;
        let steps = 64;
        SystemConfig {
            d: 3,
            levels_rad_s: vec![0.0, 2.0 * PI * 0.45e9, 2.0 * PI * 0.70e9],
            carrier: CarrierSpec {
                scale: vec![2.0, 2.0],
                drive_rad_s: vec![2.0 * PI * 0.49e9, 2.0 * PI * 0.28e9],
                duration_s: t,
                steps,
            },
            n_max: 3,
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

    #[test]
    fn layout_is_contiguous() {
        let lay = Layout::new(3, 60);
        assert_eq!(lay.head_out, 15);
        let mut next = 0;
        for (_, off, len) in lay.blocks() {
            assert_eq!(off, next);
            next += len;
        }
        assert_eq!(next, lay.total());
    }

    #[test]
    fn forward_is_bounded_and_consistent() {
        let c = tiny_config([0.0, 50.0, 60.0], 2);
        let model = GrayboxModel::new(&c, 8, 1).unwrap();
        let theta = sample_random_params(3, 3, model.a_max(), 4);
        let out = model.forward(&theta).unwrap();
        assert_eq!(out.expectations.len(), 192);
        for w in &out.w {
            assert!(w.is_hermitian(0.0));
            let nuclear: f64 = crate::algebra::hermitian_eigen(w).values.iter().map(|v| v.abs()).sum();
            assert!(nuclear <= 3.0 + 1e-10);
        }
        let rho = Operator::projector(&model.basis().eigensystem(0).vector(0));
        let o = model.basis().element(0).clone();
        let p = model.predict_expectation(&theta, &rho, &o).unwrap();
        assert!((p - out.expectations[0]).abs() < 1e-12);
        let one = model.predict_expectation(&theta, &rho, &Operator::identity(3)).unwrap();
        assert!((one - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let c = tiny_config([0.0, 50.0, 60.0], 2);
        let ds = generate_dataset(&c, 3, 2).unwrap();
        let model = GrayboxModel::new(&c, 6, 3).unwrap();
        let batch = model.prepare(&ds.examples).unwrap();
        let (_, g) = model.loss_and_grad(&batch).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-4;
        for (name, off, len) in model.weight_blocks() {
            for _ in 0..12 {
                let k = off + rng.random_range(0..len);
                let mut p = model.clone();
                p.weights[k] += h;
                let mut m = model.clone();
                m.weights[k] -= h;
                let fd = (p.loss(&batch).unwrap() - m.loss(&batch).unwrap()) / (2.0 * h);
                let err = relative_error(fd, g[k], 1e-7);
                assert!(err < 1e-4, "{name}[{}]: fd {fd} vs {}", k - off, g[k]);
            }
        }
    }
}
