use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use qudit_graybox::config::{load_config, preset, with_noise_level, NoiseLevel};
use qudit_graybox::control::{
    evaluate_fidelity, optimize_gate, parse_gate, Frame, OptimizationResult, OptimizerSettings,
};
use qudit_graybox::dynamics::{config_hash, generate_dataset, SystemConfig};
use qudit_graybox::graybox::{train as fit, write_checkpoint, GrayboxModel, Hyperparameters};
use qudit_graybox::interpret::{
    argmin_j, fit_scan, landscape_rows, parse_grid, scan_epsilon, write_landscape_csv, CostSource,
};
use qudit_graybox::noisegen::{empirical_psd, synthesize, NoiseRealizationSet};
use qudit_graybox::pulses::{sample_random_params, PulseParams};
use qudit_graybox::{Error, Result};

use crate::files::{create, manifest_path, read_dataset, read_model, sidecar_path, write_json, write_sidecar};
use crate::SystemSource;

fn load_system(src: &SystemSource) -> Result<SystemConfig> {
    match (&src.config, &src.preset) {
        (Some(path), _) => load_config(path),
        (None, Some(name)) => preset(name),
        (None, None) => Err(Error::InvalidConfig("either --config or --preset is required".into())),
    }
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

pub fn gen_dataset(src: &SystemSource, out: &Path, examples: usize, seed: u64, dump: Option<&Path>) -> Result<()> {
    let config = load_system(src)?;
    let start = Instant::now();
    let dataset = generate_dataset(&config, examples, seed)?;
    let elapsed = start.elapsed().as_secs_f64();

    let mut w = create(out)?;
    dataset.write_jsonl(&mut w)?;
    w.flush()?;
    let mut m = create(&manifest_path(out))?;
    dataset.write_manifest(&mut m)?;
    m.write_all(b"\n")?;
    m.flush()?;

    if let Some(dump) = dump {
        let noise = if config.is_closed() {
            NoiseRealizationSet::zeros(config.noise.channels, 1, config.steps(), config.duration_s())
        } else {
            synthesize(&config.noise, dataset.manifest.noise_seed)?
        };
        let mut w = create(dump)?;
        noise.write_dump(&mut w)?;
        w.flush()?;
    }

    eprintln!(
        "wrote {} examples ({} train, {} test), K = {}, M = {}, {:.1} s, config {}",
        examples,
        dataset.manifest.train,
        dataset.manifest.test,
        config.noise.realizations,
        config.steps(),
        elapsed,
        &dataset.manifest.config_hash[..12],
    );
    Ok(())
}

pub struct TrainArgs {
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub iters: usize,
    pub seed: u64,
    pub hidden: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub curves: Option<PathBuf>,
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let dataset = read_dataset(&a.dataset)?;
    let hyper = Hyperparameters {
        learning_rate: a.learning_rate,
        batch_size: a.batch_size,
        iterations: a.iters,
        seed: a.seed,
        ..Hyperparameters::default()
    };
    let model = GrayboxModel::new(&dataset.manifest.config, a.hidden, a.seed)?;
    let report_every = (a.iters / 10).max(1);
    let (model, record) = fit(model, &dataset, &hyper, |it, train, test| {
        if it % report_every == 0 || it == a.iters {
            match test {
                Some(t) => eprintln!("iteration {it}: train {train:.3e} test {t:.3e}"),
                None => eprintln!("iteration {it}: train {train:.3e}"),
            }
        }
    })?;

    let extra = json!({
        "dataset": path_str(&a.dataset),
        "hyperparameters": hyper,
        "final_train_mse": record.final_train_mse,
        "final_test_mse": record.final_test_mse,
    });
    let mut w = create(&a.out)?;
    write_checkpoint(&model, extra, &mut w)?;
    w.flush()?;

    let curves = a.curves.clone().unwrap_or_else(|| a.out.with_extension("curves.csv"));
    let mut w = create(&curves)?;
    record.write_csv(&mut w)?;
    w.flush()?;
    write_sidecar(
        &curves,
        "train",
        &dataset.manifest.config_hash,
        json!({ "model": path_str(&a.out), "hyperparameters": hyper }),
    )?;
    eprintln!(
        "final train MSE {:.3e}, test MSE {}, {:.1} s",
        record.final_train_mse,
        record.final_test_mse.map(|t| format!("{t:.3e}")).unwrap_or_else(|| "n/a".into()),
        record.wall_time_s
    );
    Ok(())
}

/// One realization set shared by every noise level, so fidelities at a fixed
/// pulse differ only through the couplings.
fn evaluation_noise(config: &SystemConfig, realizations: Option<usize>, seed: u64) -> Result<NoiseRealizationSet> {
    let mut spec = config.noise.clone();
    if let Some(k) = realizations {
        spec.realizations = k;
    }
    synthesize(&spec, seed)
}

pub struct OptimizeArgs {
    pub model: PathBuf,
    pub gate: String,
    pub out: PathBuf,
    pub frame: String,
    pub restarts: usize,
    pub iters: usize,
    pub seed: u64,
    pub eval_realisations: Option<usize>,
}

pub fn optimize(a: &OptimizeArgs) -> Result<()> {
    let frame: Frame = a.frame.parse()?;
    let (model, _) = read_model(&a.model)?;
    let config = model.config().clone();
    let gate = parse_gate(&a.gate, config.d)?;
    let settings = OptimizerSettings {
        restarts: a.restarts,
        max_iterations: a.iters,
        seed: a.seed,
        ..OptimizerSettings::default()
    };
    let start = Instant::now();
    let mut result: OptimizationResult = optimize_gate(&model, &gate, frame, model.a_max(), &settings)?;
    let theta = PulseParams::from_flat(config.d, config.n_max, result.theta_star.clone())?;
    let noise = evaluation_noise(&config, a.eval_realisations, a.seed)?;
    for level in NoiseLevel::ALL {
        let c = with_noise_level(&config, level);
        let f = evaluate_fidelity(&c, &theta, &gate, frame, Some(&noise))?;
        result.fidelities.insert(level.name().into(), f);
    }
    let mut value = serde_json::to_value(&result)?;
    if let Value::Object(m) = &mut value {
        m.insert("config_hash".into(), config_hash(&config).into());
        m.insert("model".into(), path_str(&a.model).into());
        m.insert("evaluation_realisations".into(), noise.realizations().into());
    }
    write_json(&a.out, &value)?;
    eprintln!(
        "{} ({:?} frame): cost {:.3e}, closed-system infidelity {:.3e}, {:.1} s",
        result.gate,
        frame,
        result.cost,
        1.0 - result.fidelities["closed"],
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

pub struct LandscapeArgs {
    pub model: PathBuf,
    pub pulses: String,
    pub gate: String,
    pub grid: String,
    pub out: PathBuf,
    pub frame: String,
    pub source: String,
    pub order: usize,
    pub fidelity_realisations: usize,
    pub seed: u64,
}

fn parse_source(s: &str) -> Result<CostSource> {
    match s {
        "samples" => Ok(CostSource::Samples),
        "expansion" => Ok(CostSource::Expansion),
        other => Err(Error::InvalidConfig(format!("--source must be samples or expansion, got {other}"))),
    }
}

fn parse_index(s: &str, what: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::InvalidConfig(format!("{what}: expected a non-negative integer, got {s:?}")))
}

/// Expands a pulse SPEC into (label, theta) pairs.
fn resolve_pulses(spec: &str, config: &SystemConfig, a_max: f64) -> Result<Vec<(String, PulseParams)>> {
    let hash = config_hash(config);
    let mut out = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (kind, rest) = item.split_once(':').unwrap_or((item, ""));
        match kind {
            "random" => {
                let mut parts = rest.split(':');
                let n = parse_index(parts.next().unwrap_or(""), "random:N")?;
                let seed = match parts.next() {
                    Some(s) => s
                        .parse::<u64>()
                        .map_err(|_| Error::InvalidConfig(format!("random seed {s:?} is not an integer")))?,
                    None => 0,
                };
                for i in 0..n {
                    let theta = sample_random_params(config.d, config.n_max, a_max, seed.wrapping_add(i as u64));
                    out.push((format!("random:{i}:{seed}"), theta));
                }
            }
            "result" => {
                let text = std::fs::read_to_string(rest)
                    .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{rest}: {e}"))))?;
                let r: OptimizationResult = serde_json::from_str(&text)?;
                out.push((item.to_string(), PulseParams::from_flat(config.d, config.n_max, r.theta_star)?));
            }
            "dataset" => {
                let (path, ids) = rest
                    .rsplit_once(':')
                    .ok_or_else(|| Error::InvalidConfig(format!("{item}: expected dataset:PATH:ID")))?;
                let dataset = read_dataset(Path::new(path))?;
                if dataset.manifest.config_hash != hash {
                    return Err(Error::ContractViolation(format!(
                        "dataset {path} was built for a different configuration than the model"
                    )));
                }
                let (lo, hi) = match ids.split_once('-') {
                    Some((lo, hi)) => (parse_index(lo, "dataset id")?, parse_index(hi, "dataset id")?),
                    None => {
                        let i = parse_index(ids, "dataset id")?;
                        (i, i)
                    }
                };
                for i in lo..=hi {
                    out.push((format!("dataset:{path}:{i}"), dataset.params(i)?));
                }
            }
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown pulse source {other:?}; use random:N[:SEED], result:PATH or dataset:PATH:ID"
                )))
            }
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidConfig("--pulses selects no pulses".into()));
    }
    Ok(out)
}

pub fn landscape(a: &LandscapeArgs) -> Result<()> {
    let frame: Frame = a.frame.parse()?;
    let source = parse_source(&a.source)?;
    let grid = parse_grid(&a.grid)?;
    let (model, _) = read_model(&a.model)?;
    let config = model.config().clone();
    let gate = parse_gate(&a.gate, config.d)?;
    let pulses = resolve_pulses(&a.pulses, &config, model.a_max())?;
    let noise = if config.is_closed() {
        None
    } else {
        Some(evaluation_noise(&config, Some(a.fidelity_realisations), a.seed)?)
    };

    let mut rows = Vec::with_capacity(pulses.len() * grid.len());
    let mut designated = Vec::with_capacity(pulses.len());
    for (id, (label, theta)) in pulses.iter().enumerate() {
        let mut r = landscape_rows(&model, id, theta, &gate, frame, &grid, source, a.order)?;
        if let Some(best) = argmin_j(&r) {
            let eps = r[best].epsilon;
            let f = evaluate_fidelity(&config, &theta.scaled(eps), &gate, frame, noise.as_ref())?;
            r[best].fidelity = Some(f);
            designated.push(json!({ "pulse_id": id, "source": label, "epsilon": eps, "J": r[best].j, "fidelity": f }));
        }
        rows.extend(r);
    }
    let mut w = create(&a.out)?;
    write_landscape_csv(&rows, &mut w)?;
    w.flush()?;
    write_sidecar(
        &a.out,
        "landscape",
        &config_hash(&config),
        json!({
            "model": path_str(&a.model),
            "gate": gate.name,
            "frame": frame,
            "source": source,
            "order": a.order,
            "grid": grid,
            "fidelity_realisations": noise.as_ref().map(|n| n.realizations()),
            "pulses": designated,
        }),
    )?;
    eprintln!("wrote {} rows for {} pulses", rows.len(), pulses.len());
    Ok(())
}

pub fn expand(model_path: &Path, pulse_id: usize, order: usize, out: &Path, dataset: Option<&Path>, grid: &str) -> Result<()> {
    let grid = parse_grid(grid)?;
    let (model, extra) = read_model(model_path)?;
    let dataset_path = match dataset {
        Some(p) => p.to_path_buf(),
        None => extra
            .get("dataset")
            .and_then(Value::as_str)
            .map(PathBuf::from)
            .ok_or_else(|| Error::InvalidConfig("model does not record its dataset; pass --dataset".into()))?,
    };
    let data = read_dataset(&dataset_path)?;
    let hash = config_hash(model.config());
    if data.manifest.config_hash != hash {
        return Err(Error::ContractViolation(format!(
            "dataset {} was built for a different configuration than the model",
            dataset_path.display()
        )));
    }
    let theta = data.params(pulse_id)?;
    let scan = scan_epsilon(&model, &theta, &grid, false)?;
    let expansions = fit_scan(&scan, order)?;
    let worst = expansions.iter().map(|e| e.max_residual()).fold(0.0, f64::max);
    write_json(
        out,
        &json!({
            "config_hash": hash,
            "model": path_str(model_path),
            "dataset": path_str(&dataset_path),
            "pulse_id": pulse_id,
            "order": order,
            "grid": grid,
            "expansions": expansions,
        }),
    )?;
    eprintln!("order-{order} expansion of {} noise operators, max residual {worst:.3e}", expansions.len());
    Ok(())
}

pub fn psd_check(src: &SystemSource, out: &Path, realisations: Option<usize>, steps: Option<usize>, seed: u64) -> Result<()> {
    let config = load_system(src)?;
    let mut spec = config.noise.clone();
    if let Some(k) = realisations {
        spec.realizations = k;
    }
    if let Some(m) = steps {
        spec.steps = m;
    }
    let set = synthesize(&spec, seed)?;
    let psd = empirical_psd(&set);
    let mut w = create(out)?;
    writeln!(w, "frequency_hz,empirical,analytic,ratio")?;
    let mut worst: f64 = 0.0;
    let crossover = spec.crossover_hz();
    for &(f, s) in &psd {
        let target = spec.psd(f);
        let ratio = s / target;
        if f >= crossover / 10f64.sqrt() && f <= crossover * 10f64.sqrt() {
            worst = worst.max((ratio - 1.0).abs());
        }
        writeln!(w, "{f:e},{s:e},{target:e},{ratio:e}")?;
    }
    w.flush()?;
    write_sidecar(
        out,
        "psd-check",
        &config_hash(&config),
        json!({
            "realisations": spec.realizations,
            "steps": spec.steps,
            "channels": spec.channels,
            "seed": seed,
            "crossover_hz": crossover,
            "max_relative_deviation_near_crossover": worst,
        }),
    )?;
    eprintln!(
        "{} bins, crossover {:.3e} Hz, max deviation within the decade around it {:.1}% (metadata in {})",
        psd.len(),
        crossover,
        100.0 * worst,
        sidecar_path(out).display()
    );
    Ok(())
}
