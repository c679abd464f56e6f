//! Hanning-window pulse parameterization with I/Q carrier modulation.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// I/Q quadrature of a drive envelope.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    InPhase,
    Quadrature,
}

impl Channel {
    fn offset(self) -> usize {
        match self {
            Channel::InPhase => 0,
            Channel::Quadrature => 1,
        }
    }
}

/// Amplitude bound convention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AmplitudeMode {
    /// Every coefficient equal gives a pi pulse area: `2 pi / (n_max T)`.
    PerCoefficient,
    /// Envelope bound and dataset sampling range: `2 pi / T`.
    TotalEnvelope,
}

/// Hanning amplitudes `A_{n,i}^{(c)}` in rad/s.
///
/// Flattened order is transition-major, then I before Q, then harmonic
/// `n = 1..n_max` ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseParams {
    d: usize,
    n_max: usize,
    amplitudes: Vec<f64>,
}

impl PulseParams {
    pub fn zeros(d: usize, n_max: usize) -> Self {
        Self {
            d,
            n_max,
            amplitudes: vec![0.0; 2 * (d - 1) * n_max],
        }
    }

    pub fn from_flat(d: usize, n_max: usize, amplitudes: Vec<f64>) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidDimension(d));
        }
        let expected = 2 * (d - 1) * n_max;
        if amplitudes.len() != expected {
            return Err(Error::InvalidConfig(format!(
                "pulse vector has {} entries, expected 2(d-1)n_max = {expected}",
                amplitudes.len()
            )));
        }
        Ok(Self { d, n_max, amplitudes })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.amplitudes
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.amplitudes
    }

    #[inline]
    pub fn index(&self, transition: usize, channel: Channel, n: usize) -> usize {
        debug_assert!(n >= 1 && n <= self.n_max);
        transition * 2 * self.n_max + channel.offset() * self.n_max + (n - 1)
    }

    pub fn amplitude(&self, transition: usize, channel: Channel, n: usize) -> f64 {
        self.amplitudes[self.index(transition, channel, n)]
    }

    pub fn set_amplitude(&mut self, transition: usize, channel: Channel, n: usize, value: f64) {
        let idx = self.index(transition, channel, n);
        self.amplitudes[idx] = value;
    }

    pub fn scaled(&self, eps: f64) -> Self {
        Self {
            d: self.d,
            n_max: self.n_max,
            amplitudes: self.amplitudes.iter().map(|a| a * eps).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.amplitudes.iter().fold(0.0, |m, a| m.max(a.abs()))
    }

    pub fn within_bound(&self, a_max: f64) -> bool {
        self.max_abs() <= a_max * (1.0 + 1e-12)
    }

    pub fn clamp(&mut self, a_max: f64) {
        self.amplitudes
            .iter_mut()
            .for_each(|a| *a = a.clamp(-a_max, a_max));
    }
}

/// Carrier scaling, drive frequencies and time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarrierSpec {
    /// Scaling factors `Omega_i`, one per transition.
    pub scale: Vec<f64>,
    /// Drive angular frequencies `omega_Di` in rad/s.
    pub drive_rad_s: Vec<f64>,
    /// Total evolution time in seconds.
    pub duration_s: f64,
    /// Number of piecewise-constant time steps.
    pub steps: usize,
}

impl CarrierSpec {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.scale.len() != d - 1 || self.drive_rad_s.len() != d - 1 {
            return Err(Error::InvalidConfig(format!(
                "carrier needs {} scale factors and drive frequencies",
                d - 1
            )));
        }
        if self.drive_rad_s.iter().any(|w| *w <= 0.0 || !w.is_finite()) {
            return Err(Error::InvalidConfig("drive frequencies must be positive".into()));
        }
        if self.steps < 2 {
            return Err(Error::InvalidConfig("need at least 2 time steps".into()));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::InvalidConfig("evolution time must be positive".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.duration_s / self.steps as f64
    }

    /// Left endpoint of step `k`.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }
}

pub fn max_amplitude(duration_s: f64, n_max: usize, mode: AmplitudeMode) -> Result<f64> {
    if !(duration_s > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "evolution time must be positive, got {duration_s}"
        )));
    }
    if n_max == 0 {
        return Err(Error::InvalidConfig("n_max must be at least 1".into()));
    }
    Ok(match mode {
        AmplitudeMode::PerCoefficient => 2.0 * PI / (n_max as f64 * duration_s),
        AmplitudeMode::TotalEnvelope => 2.0 * PI / duration_s,
    })
}

/// `(1 - cos(2 pi n t / T)) / 2`, exact zero at both endpoints.
#[inline]
fn hann(n: usize, t_over_period: f64) -> f64 {
    let phase = (n as f64 * t_over_period).fract();
    0.5 * (1.0 - (2.0 * PI * phase).cos())
}

/// Envelope `sum_n (A_n / 2)(1 - cos(2 pi n t / T))` of one transition and
/// channel, in rad/s.
pub fn envelope(
    params: &PulseParams,
    transition: usize,
    channel: Channel,
    t: f64,
    duration_s: f64,
) -> Result<f64> {
    if !(0.0..=duration_s).contains(&t) {
        return Err(Error::Domain(format!("t = {t} outside [0, {duration_s}]")));
    }
    if transition + 1 >= params.d {
        return Err(Error::Index(format!(
            "transition {transition} out of range for d = {}",
            params.d
        )));
    }
    let x = t / duration_s;
    Ok((1..=params.n_max)
        .map(|n| params.amplitude(transition, channel, n) * hann(n, x))
        .sum())
}

/// Control field `f(t_k)` at a single step.
pub fn control_at(params: &PulseParams, carrier: &CarrierSpec, k: usize) -> Result<f64> {
    let t = carrier.time(k);
    let mut f = 0.0;
    for i in 0..params.d - 1 {
        let (s, c) = (carrier.drive_rad_s[i] * t).sin_cos();
        let fi = envelope(params, i, Channel::InPhase, t, carrier.duration_s)?;
        let fq = envelope(params, i, Channel::Quadrature, t, carrier.duration_s)?;
        f += carrier.scale[i] * (fi * c + fq * s);
    }
    Ok(f)
}

/// Precomputed Hanning and carrier tables for repeated waveform synthesis on
/// a fixed time grid.
#[derive(Clone, Debug)]
pub struct WaveformSynth {
    d: usize,
    n_max: usize,
    steps: usize,
    /// `hann[k * n_max + (n-1)]`
    hann: Vec<f64>,
    /// `carrier[(i * steps + k) * 2 + {0: Omega cos, 1: Omega sin}]`
    carrier: Vec<f64>,
}

impl WaveformSynth {
    pub fn new(carrier: &CarrierSpec, d: usize, n_max: usize) -> Result<Self> {
        carrier.validate(d)?;
        let m = carrier.steps;
        let mut hann_table = Vec::with_capacity(m * n_max);
        for k in 0..m {
            let x = k as f64 / m as f64;
            hann_table.extend((1..=n_max).map(|n| hann(n, x)));
        }
        let mut table = Vec::with_capacity((d - 1) * m * 2);
        for i in 0..d - 1 {
            for k in 0..m {
                let (s, c) = (carrier.drive_rad_s[i] * carrier.time(k)).sin_cos();
                table.push(carrier.scale[i] * c);
                table.push(carrier.scale[i] * s);
            }
        }
        Ok(Self {
            d,
            n_max,
            steps: m,
            hann: hann_table,
            carrier: table,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn waveform_into(&self, params: &PulseParams, out: &mut [f64]) -> Result<()> {
        if params.d != self.d || params.n_max != self.n_max {
            return Err(Error::InvalidConfig(format!(
                "pulse shape (d={}, n_max={}) does not match carrier (d={}, n_max={})",
                params.d, params.n_max, self.d, self.n_max
            )));
        }
        let nm = self.n_max;
        let amps = params.as_slice();
        for (k, f) in out.iter_mut().enumerate().take(self.steps) {
            let h = &self.hann[k * nm..(k + 1) * nm];
            let mut acc = 0.0;
            for i in 0..self.d - 1 {
                let base = i * 2 * nm;
                let fi: f64 = h.iter().zip(&amps[base..base + nm]).map(|(a, b)| a * b).sum();
                let fq: f64 = h
                    .iter()
                    .zip(&amps[base + nm..base + 2 * nm])
                    .map(|(a, b)| a * b)
                    .sum();
                let c = &self.carrier[(i * self.steps + k) * 2..];
                acc += fi * c[0] + fq * c[1];
            }
            *f = acc;
        }
        Ok(())
    }

    pub fn waveform(&self, params: &PulseParams) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.steps];
        self.waveform_into(params, &mut out)?;
        Ok(out)
    }
}

/// `f(t_k)` for `t_k = k T / M`, `k = 0..M-1`.
pub fn waveform(params: &PulseParams, carrier: &CarrierSpec) -> Result<Vec<f64>> {
    WaveformSynth::new(carrier, params.d, params.n_max)?.waveform(params)
}

/// Amplitudes i.i.d. uniform on `[-a_max, a_max]`.
pub fn sample_random_params(d: usize, n_max: usize, a_max: f64, seed: u64) -> PulseParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_params_with(d, n_max, a_max, &mut rng)
}

pub fn sample_params_with<R: Rng + ?Sized>(
    d: usize,
    n_max: usize,
    a_max: f64,
    rng: &mut R,
) -> PulseParams {
    let amplitudes = (0..2 * (d - 1) * n_max)
        .map(|_| rng.random_range(-a_max..=a_max))
        .collect();
    PulseParams { d, n_max, amplitudes }
}
