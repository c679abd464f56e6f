//! Browser bindings: pulse waveforms, synthesized noise spectra and
//! closed-system amplitude sweeps. Every export returns a flat `Float64Array`.

use wasm_bindgen::prelude::*;

use qudit_graybox::config::{preset, with_noise_level, NoiseLevel, PRESETS};
use qudit_graybox::control::{frame_target, parse_gate, Frame};
use qudit_graybox::dynamics::{Simulator, SystemConfig};
use qudit_graybox::interpret::{gate_infidelity, uniform_grid};
use qudit_graybox::noisegen::{empirical_psd, synthesize};
use qudit_graybox::pulses::{max_amplitude, sample_random_params, AmplitudeMode};

/// Bundled presets without the full-scale ones, which are too slow for a page.
pub fn demo_presets() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).filter(|n| n.contains("desk")).collect()
}

fn config(name: &str) -> Result<SystemConfig, String> {
    if !demo_presets().contains(&name) {
        return Err(format!("unknown preset {name}; choose one of {}", demo_presets().join(", ")));
    }
    preset(name).map_err(|e| e.to_string())
}

/// Control field of a random pulse, as `[t_0, f_0, t_1, f_1, ...]` with t in
/// ns and f in rad/ns. `scale` multiplies the amplitudes.
pub fn pulse_waveform(name: &str, seed: u64, scale: f64) -> Result<Vec<f64>, String> {
    let c = config(name)?;
    let a_max = max_amplitude(c.duration_s(), c.n_max, AmplitudeMode::TotalEnvelope).map_err(|e| e.to_string())?;
    let theta = sample_random_params(c.d, c.n_max, a_max, seed).scaled(scale);
    let sim = Simulator::new(c.clone()).map_err(|e| e.to_string())?;
    let wave = sim.waveform(&theta).map_err(|e| e.to_string())?;
    let dt = c.dt();
    Ok(wave
        .iter()
        .enumerate()
        .flat_map(|(k, f)| [k as f64 * dt * 1e9, f * 1e-9])
        .collect())
}

/// Averaged periodogram of `realisations` synthesized traces, as
/// `[f, empirical, target, ...]` with f in Hz.
pub fn noise_spectrum(name: &str, realisations: usize, seed: u64) -> Result<Vec<f64>, String> {
    let mut spec = config(name)?.noise;
    spec.realizations = realisations.clamp(1, 500);
    let set = synthesize(&spec, seed).map_err(|e| e.to_string())?;
    Ok(empirical_psd(&set)
        .into_iter()
        .flat_map(|(f, s)| [f, s, spec.psd(f)])
        .collect())
}

/// Gate infidelity `1 - |tr(U^dag G)|^2 / d^2` of the closed evolution under
/// `eps * theta` for a random pulse theta, as `[eps, infidelity, ...]`.
pub fn closed_sweep(name: &str, gate: &str, seed: u64, points: usize) -> Result<Vec<f64>, String> {
    let c = with_noise_level(&config(name)?, NoiseLevel::Closed);
    let g = parse_gate(gate, c.d).map_err(|e| e.to_string())?;
    let target = frame_target(&c, &g, Frame::Lab);
    let a_max = max_amplitude(c.duration_s(), c.n_max, AmplitudeMode::TotalEnvelope).map_err(|e| e.to_string())?;
    let theta = sample_random_params(c.d, c.n_max, a_max, seed);
    let sim = Simulator::new(c).map_err(|e| e.to_string())?;
    let grid = uniform_grid(-1.0, 1.0, points.clamp(2, 201)).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(2 * grid.len());
    for eps in grid {
        let u = sim.closed(&theta.scaled(eps)).map_err(|e| e.to_string())?;
        out.push(eps);
        out.push(gate_infidelity(&u, &target));
    }
    Ok(out)
}

#[wasm_bindgen(js_name = presets)]
pub fn js_presets() -> String {
    demo_presets().join(",")
}

#[wasm_bindgen(js_name = pulseWaveform)]
pub fn js_pulse_waveform(preset: &str, seed: u32, scale: f64) -> Result<Vec<f64>, JsError> {
    pulse_waveform(preset, seed.into(), scale).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = noiseSpectrum)]
pub fn js_noise_spectrum(preset: &str, realisations: u32, seed: u32) -> Result<Vec<f64>, JsError> {
    noise_spectrum(preset, realisations as usize, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = closedSweep)]
pub fn js_closed_sweep(preset: &str, gate: &str, seed: u32, points: u32) -> Result<Vec<f64>, JsError> {
    closed_sweep(preset, gate, seed.into(), points as usize).map_err(|e| JsError::new(&e))
}
