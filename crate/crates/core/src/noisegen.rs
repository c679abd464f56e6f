//! Stationary Gaussian noise with PSD `alpha_1 / f + alpha_2 f`, generated
//! by random-phase spectral synthesis.
//!
//! Each realization is built from independent Gaussian cosine/sine
//! coefficients on the grid `f_m = m / T`, `m = 1..M/2`, with variance
//! `S(f_m) df`, followed by an inverse FFT. The DC bin is zero and the
//! Nyquist coefficient is real, so the time series is real and its variance
//! is `sum_m S(f_m) df`.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DUMP_MAGIC: &[u8; 4] = b"QGBN";
const DUMP_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Coefficient of the `1/f` branch.
    pub alpha1: f64,
    /// Coefficient of the `f` branch.
    pub alpha2: f64,
    /// Frequencies below this cutoff (Hz) use `S(f_min)`. Defaults to `1/T`.
    pub f_min_hz: Option<f64>,
    /// Number of independent processes.
    pub channels: usize,
    /// Realizations per channel.
    pub realizations: usize,
    /// Samples per realization.
    pub steps: usize,
    pub duration_s: f64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.alpha1 < 0.0 || self.alpha2 < 0.0 {
            return Err(Error::InvalidConfig("noise amplitudes must be non-negative".into()));
        }
        if self.steps % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "noise synthesis needs an even number of samples, got {}",
                self.steps
            )));
        }
        if self.steps < 16 {
            return Err(Error::InvalidConfig("noise synthesis needs at least 16 samples".into()));
        }
        if self.realizations == 0 || self.channels == 0 {
            return Err(Error::InvalidConfig("need at least one channel and realization".into()));
        }
        if !(self.duration_s > 0.0) {
            return Err(Error::InvalidConfig("evolution time must be positive".into()));
        }
        if let Some(f) = self.f_min_hz {
            if !(f > 0.0) {
                return Err(Error::InvalidConfig("f_min must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn f_min(&self) -> f64 {
        self.f_min_hz.unwrap_or(1.0 / self.duration_s)
    }

    pub fn df(&self) -> f64 {
        1.0 / self.duration_s
    }

    /// Target PSD with the low-frequency clamp applied.
    pub fn psd(&self, f: f64) -> f64 {
        let f = f.max(self.f_min());
        self.alpha1 / f + self.alpha2 * f
    }

    /// Frequency at which the two branches are equal.
    pub fn crossover_hz(&self) -> f64 {
        (self.alpha1 / self.alpha2).sqrt()
    }

    /// `sum_m S(f_m) df`, the per-sample variance of the synthesized process.
    pub fn expected_variance(&self) -> f64 {
        let df = self.df();
        (1..=self.steps / 2).map(|m| self.psd(m as f64 * df) * df).sum()
    }
}

/// Realizations stored channel-major: `samples[(c * K + r) * M + k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseRealizationSet {
    channels: usize,
    realizations: usize,
    steps: usize,
    duration_s: f64,
    seed: u64,
    samples: Vec<f64>,
}

impl NoiseRealizationSet {
    /// All-zero set, used for closed-system runs.
    pub fn zeros(channels: usize, realizations: usize, steps: usize, duration_s: f64) -> Self {
        Self {
            channels,
            realizations,
            steps,
            duration_s,
            seed: 0,
            samples: vec![0.0; channels * realizations * steps],
        }
    }

    pub fn from_samples(
        channels: usize,
        realizations: usize,
        steps: usize,
        duration_s: f64,
        samples: Vec<f64>,
    ) -> Result<Self> {
        if samples.len() != channels * realizations * steps {
            return Err(Error::Format(format!(
                "expected {} samples, got {}",
                channels * realizations * steps,
                samples.len()
            )));
        }
        Ok(Self {
            channels,
            realizations,
            steps,
            duration_s,
            seed: 0,
            samples,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn realizations(&self) -> usize {
        self.realizations
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_s
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn realization(&self, channel: usize, r: usize) -> &[f64] {
        let start = (channel * self.realizations + r) * self.steps;
        &self.samples[start..start + self.steps]
    }

    /// Keeps only the first `k` realizations of every channel.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.realizations);
        let mut samples = Vec::with_capacity(self.channels * k * self.steps);
        for c in 0..self.channels {
            for r in 0..k {
                samples.extend_from_slice(self.realization(c, r));
            }
        }
        Self {
            realizations: k,
            samples,
            ..self.clone()
        }
    }

    /// Writes the documented binary dump: magic `QGBN`, `u32` version,
    /// `u32` channels, `u64` realizations, `u64` steps, `f64` duration, then
    /// the samples as little-endian `f64`, channel-major.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&DUMP_VERSION.to_le_bytes())?;
        w.write_all(&(self.channels as u32).to_le_bytes())?;
        w.write_all(&(self.realizations as u64).to_le_bytes())?;
        w.write_all(&(self.steps as u64).to_le_bytes())?;
        w.write_all(&self.duration_s.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.samples.len() * 8);
        for x in &self.samples {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_dump<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::Format("not a noise dump (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != DUMP_VERSION {
            return Err(Error::Format(format!("unsupported noise dump version {version}")));
        }
        let channels = read_u32(&mut r)? as usize;
        let realizations = read_u64(&mut r)? as usize;
        let steps = read_u64(&mut r)? as usize;
        let duration_s = f64::from_le_bytes(read_array(&mut r)?);
        let n = channels
            .checked_mul(realizations)
            .and_then(|x| x.checked_mul(steps))
            .ok_or_else(|| Error::Format("noise dump header overflows".into()))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != n * 8 {
            return Err(Error::Format(format!(
                "noise dump payload has {} bytes, expected {}",
                bytes.len(),
                n * 8
            )));
        }
        let samples = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Self::from_samples(channels, realizations, steps, duration_s, samples)
    }
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

/// Generates `channels x K` realizations. Realization `r` of channel `c` uses
/// ChaCha stream `c * K + r` of `seed`, so the output does not depend on how
/// the work is split across threads.
pub fn synthesize(spec: &NoiseSpec, seed: u64) -> Result<NoiseRealizationSet> {
    spec.validate()?;
    let m = spec.steps;
    let k = spec.realizations;
    let df = spec.df();
    let sigmas: Vec<f64> = (1..=m / 2)
        .map(|j| (spec.psd(j as f64 * df) * df).sqrt())
        .collect();
    let ifft = FftPlanner::new().plan_fft_inverse(m);
    let mut samples = vec![0.0; spec.channels * k * m];

    let fill = |index: usize, out: &mut [f64], buf: &mut Vec<Complex64>| {
        synthesize_one(seed, index as u64, &sigmas, &ifft, out, buf);
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        samples
            .par_chunks_mut(m)
            .enumerate()
            .for_each_init(Vec::new, |buf, (i, out)| fill(i, out, buf));
    }
    #[cfg(not(feature = "parallel"))]
    {
        let mut buf = Vec::new();
        for (i, out) in samples.chunks_mut(m).enumerate() {
            fill(i, out, &mut buf);
        }
    }

    Ok(NoiseRealizationSet {
        channels: spec.channels,
        realizations: k,
        steps: m,
        duration_s: spec.duration_s,
        seed,
        samples,
    })
}

fn synthesize_one(
    seed: u64,
    stream: u64,
    sigmas: &[f64],
    ifft: &Arc<dyn Fft<f64>>,
    out: &mut [f64],
    buf: &mut Vec<Complex64>,
) {
    let m = out.len();
    let half = m / 2;
    if sigmas.iter().all(|&s| s == 0.0) {
        out.fill(0.0);
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    buf.clear();
    buf.resize(m, Complex64::new(0.0, 0.0));
    let scale = m as f64 / 2.0;
    for j in 1..half {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        let s = sigmas[j - 1];
        let x = Complex64::new(a * s * scale, -b * s * scale);
        buf[j] = x;
        buf[m - j] = x.conj();
    }
    let c: f64 = rng.sample(StandardNormal);
    buf[half] = Complex64::new(c * sigmas[half - 1] * m as f64, 0.0);
    ifft.process(buf);
    let norm = 1.0 / m as f64;
    for (o, z) in out.iter_mut().zip(buf.iter()) {
        *o = z.re * norm;
    }
}

/// Averaged periodogram over every channel and realization of the set, at
/// `f_m = m / T` for `m = 1..M/2`. Normalized so its expectation is the
/// synthesis target `S(f_m)`.
pub fn empirical_psd(set: &NoiseRealizationSet) -> Vec<(f64, f64)> {
    let indices: Vec<(usize, usize)> = (0..set.channels)
        .flat_map(|c| (0..set.realizations).map(move |r| (c, r)))
        .collect();
    averaged_periodogram(set, &indices)
}

/// Averaged periodogram of a single channel.
pub fn empirical_psd_channel(set: &NoiseRealizationSet, channel: usize) -> Vec<(f64, f64)> {
    let indices: Vec<(usize, usize)> = (0..set.realizations).map(|r| (channel, r)).collect();
    averaged_periodogram(set, &indices)
}

fn averaged_periodogram(set: &NoiseRealizationSet, indices: &[(usize, usize)]) -> Vec<(f64, f64)> {
    let m = set.steps;
    let half = m / 2;
    let df = 1.0 / set.duration_s;
    let fft = FftPlanner::new().plan_fft_forward(m);
    let mut power = vec![0.0; half];
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    for &(c, r) in indices {
        for (b, &x) in buf.iter_mut().zip(set.realization(c, r)) {
            *b = Complex64::new(x, 0.0);
        }
        fft.process(&mut buf);
        for (j, p) in power.iter_mut().enumerate() {
            *p += buf[j + 1].norm_sqr();
        }
    }
    let count = indices.len().max(1) as f64;
    let mf = m as f64;
    power
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            let bin = j + 1;
            let one_sided = if bin == half { 1.0 } else { 2.0 };
            (bin as f64 * df, one_sided * p / (count * mf * mf * df))
        })
        .collect()
}

/// Least-squares slope of `log10 S` against `log10 f` over `[lo, hi]`.
pub fn log_log_slope(psd: &[(f64, f64)], lo_hz: f64, hi_hz: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = psd
        .iter()
        .filter(|(f, s)| *f >= lo_hz && *f <= hi_hz && *s > 0.0)
        .map(|(f, s)| (f.log10(), s.log10()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(alpha1: f64, alpha2: f64, k: usize, m: usize) -> NoiseSpec {
        NoiseSpec {
            alpha1,
            alpha2,
            f_min_hz: None,
            channels: 2,
            realizations: k,
            steps: m,
            duration_s: 0.25e-6,
        }
    }

    #[test]
    fn zero_psd_gives_zero_samples() {
        let set = synthesize(&spec(0.0, 0.0, 4, 64), 1).unwrap();
        assert!(set.samples().iter().all(|&x| x == 0.0));
        assert!(empirical_psd(&set).iter().all(|&(_, p)| p == 0.0));
    }

    #[test]
    fn crossover_at_one_gigahertz() {
        let s = spec(1e9, 1e-9, 1, 16);
        assert!((s.crossover_hz() - 1e9).abs() < 1e-3);
        let f = s.crossover_hz();
        assert!((s.alpha1 / f - s.alpha2 * f).abs() < 1e-12);
    }

    #[test]
    fn odd_or_short_grids_rejected() {
        assert!(synthesize(&spec(1.0, 1.0, 1, 63), 0).is_err());
        assert!(synthesize(&spec(1.0, 1.0, 1, 8), 0).is_err());
    }

    #[test]
    fn low_frequency_clamp() {
        let mut s = spec(1e9, 0.0, 1, 16);
        s.f_min_hz = Some(1e7);
        assert_eq!(s.psd(1.0), s.psd(1e7));
        assert!(s.psd(2e7) < s.psd(1e7));
    }

    #[test]
    fn deterministic_per_seed() {
        let s = spec(1e9, 1e-9, 8, 128);
        let a = synthesize(&s, 3).unwrap();
        let b = synthesize(&s, 3).unwrap();
        let c = synthesize(&s, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.samples(), c.samples());
    }

    #[test]
    fn variance_matches_parseval() {
        let s = spec(1e9, 1e-9, 2000, 256);
        let set = synthesize(&s, 11).unwrap();
        let n = set.samples().len() as f64;
        let var = set.samples().iter().map(|x| x * x).sum::<f64>() / n;
        let expected = s.expected_variance();
        assert!((var / expected - 1.0).abs() < 0.05, "{var} vs {expected}");
    }

    #[test]
    fn white_noise_periodogram_is_flat() {
        // alpha1 = 0 with f_min at Nyquist makes S constant on the grid
        let mut s = spec(0.0, 0.0, 1000, 256);
        s.alpha1 = 1.0;
        s.f_min_hz = Some(1e12);
        s.channels = 1;
        let set = synthesize(&s, 5).unwrap();
        let target = s.psd(1.0);
        for (f, p) in empirical_psd(&set) {
            assert!((p / target - 1.0).abs() < 0.15, "f={f}: {p} vs {target}");
        }
        let mean: f64 = empirical_psd(&set).iter().map(|x| x.1).sum::<f64>() / 128.0;
        assert!((mean / target - 1.0).abs() < 0.01);
    }

    #[test]
    fn slopes_either_side_of_crossover() {
        let s = NoiseSpec {
            channels: 1,
            ..spec(1e9, 1e-9, 200, 4096)
        };
        let psd = empirical_psd(&synthesize(&s, 8).unwrap());
        let low = log_log_slope(&psd, 1e7, 1e8).unwrap();
        let high = log_log_slope(&psd, 5e9, 8.2e9).unwrap();
        assert!((low + 1.0).abs() < 0.15, "low slope {low}");
        assert!((high - 1.0).abs() < 0.15, "high slope {high}");
    }

    #[test]
    fn channels_uncorrelated() {
        let s = spec(1e9, 1e-9, 1000, 64);
        let set = synthesize(&s, 21).unwrap();
        let var = s.expected_variance();
        let mut cross = 0.0;
        let mut mean = 0.0;
        for r in 0..1000 {
            for (a, b) in set.realization(0, r).iter().zip(set.realization(1, r)) {
                cross += a * b;
                mean += a;
            }
        }
        let n = (1000 * 64) as f64;
        assert!((cross / n / var).abs() < 4.0 / n.sqrt());
        // 1/f noise is strongly correlated in time, so use the per-realization
        // effective sample count for the mean
        assert!((mean / n).abs() < 4.0 * (var / 1000.0).sqrt());
    }

    #[test]
    fn dump_round_trip() {
        let set = synthesize(&spec(1e9, 1e-9, 3, 32), 2).unwrap();
        let mut bytes = Vec::new();
        set.write_dump(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"QGBN");
        assert_eq!(bytes.len(), 4 + 4 + 4 + 8 + 8 + 8 + 2 * 3 * 32 * 8);
        let back = NoiseRealizationSet::read_dump(bytes.as_slice()).unwrap();
        assert_eq!(back.samples(), set.samples());
        assert!(NoiseRealizationSet::read_dump(&bytes[..30]).is_err());
    }
}
