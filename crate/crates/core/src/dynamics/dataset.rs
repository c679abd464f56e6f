use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{expectations_from_ensemble, Simulator, SystemConfig};
use crate::algebra::{gell_mann_basis, EigenWorkspace};
use crate::error::{Error, Result};
use crate::noisegen::{synthesize, NoiseRealizationSet};
use crate::pulses::{max_amplitude, sample_params_with, AmplitudeMode, PulseParams};

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Layout of the expectation vector.
pub const ORDERING: &str =
    "gell-mann(sym,antisym,diag); state j-major, eigenvector k ascending; observable i";

const NOISE_TAG: u64 = 0x6e6f697365;
const PULSE_TAG: u64 = 0x70756c7365;

/// SplitMix64 finalizer over `seed ^ tag`, for independent sub-seeds.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = (seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15)).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetExample {
    pub theta: Vec<f64>,
    pub expectations: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub ordering: String,
    pub basis: String,
    pub seed: u64,
    pub noise_seed: u64,
    pub examples: usize,
    pub train: usize,
    pub test: usize,
    pub config_hash: String,
    pub config: SystemConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub examples: Vec<DatasetExample>,
}

/// Train/test sizes in the 8192 : 1840 proportion.
pub fn split_sizes(n: usize) -> (usize, usize) {
    let train = ((n as f64) * 8192.0 / 10032.0).round() as usize;
    let train = train.clamp(1.min(n), n);
    (train, n - train)
}

pub fn config_hash(config: &SystemConfig) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Samples `n_examples` pulses uniformly in `[-2pi/T, 2pi/T]` and records
/// their Monte-Carlo expectation vectors. One noise ensemble, drawn from
/// `seed`, is shared by every example; pulse `i` uses ChaCha stream `i`.
pub fn generate_dataset(config: &SystemConfig, n_examples: usize, seed: u64) -> Result<Dataset> {
    if n_examples == 0 {
        return Err(Error::InvalidConfig("dataset needs at least one example".into()));
    }
    let sim = Simulator::new(config.clone())?;
    let basis = gell_mann_basis(config.d)?;
    let a_max = max_amplitude(config.duration_s(), config.n_max, AmplitudeMode::TotalEnvelope)?;
    let noise_seed = derive_seed(seed, NOISE_TAG);
    let pulse_seed = derive_seed(seed, PULSE_TAG);
    let noise = if config.is_closed() {
        NoiseRealizationSet::zeros(config.noise.channels, 1, config.steps(), config.duration_s())
    } else {
        synthesize(&config.noise, noise_seed)?
    };

    let make = |i: usize, ws: &mut EigenWorkspace| -> Result<DatasetExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(pulse_seed);
        rng.set_stream(i as u64);
        let theta = sample_params_with(config.d, config.n_max, a_max, &mut rng);
        let us = sim.ensemble_with(&theta, &noise, ws)?;
        Ok(DatasetExample {
            expectations: expectations_from_ensemble(&us, &basis),
            theta: theta.into_flat(),
        })
    };
    #[cfg(feature = "parallel")]
    let examples: Vec<DatasetExample> = {
        use rayon::prelude::*;
        (0..n_examples)
            .into_par_iter()
            .map_init(|| EigenWorkspace::new(config.d), |ws, i| make(i, ws))
            .collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let examples: Vec<DatasetExample> = {
        let mut ws = EigenWorkspace::new(config.d);
        (0..n_examples).map(|i| make(i, &mut ws)).collect::<Result<_>>()?
    };

    let (train, test) = split_sizes(n_examples);
    Ok(Dataset {
        manifest: DatasetManifest {
            format_version: DATASET_FORMAT_VERSION,
            ordering: ORDERING.into(),
            basis: "gell-mann".into(),
            seed,
            noise_seed,
            examples: n_examples,
            train,
            test,
            config_hash: config_hash(config),
            config: config.clone(),
        },
        examples,
    })
}

impl Dataset {
    pub fn train(&self) -> &[DatasetExample] {
        &self.examples[..self.manifest.train]
    }

    pub fn test(&self) -> &[DatasetExample] {
        &self.examples[self.manifest.train..]
    }

    pub fn params(&self, index: usize) -> Result<PulseParams> {
        let ex = self
            .examples
            .get(index)
            .ok_or_else(|| Error::Index(format!("pulse {index} not in dataset")))?;
        let c = &self.manifest.config;
        PulseParams::from_flat(c.d, c.n_max, ex.theta.clone())
    }

    /// One JSON object per line: `{"theta":[..],"expectations":[..]}`.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for ex in &self.examples {
            serde_json::to_writer(&mut w, ex)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_manifest<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.manifest)?;
        Ok(())
    }

    pub fn read<R1: BufRead, R2: std::io::Read>(jsonl: R1, manifest: R2) -> Result<Self> {
        let manifest: DatasetManifest = serde_json::from_reader(manifest)?;
        if manifest.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "dataset format version {} is not supported",
                manifest.format_version
            )));
        }
        manifest.config.validate()?;
        if config_hash(&manifest.config) != manifest.config_hash {
            return Err(Error::Format("manifest config hash does not match its config".into()));
        }
        let d = manifest.config.d;
        let theta_len = manifest.config.param_len();
        let e_len = d * (d * d - 1) * (d * d - 1);
        let mut examples = Vec::with_capacity(manifest.examples);
        for (n, line) in jsonl.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ex: DatasetExample = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("dataset line {}: {e}", n + 1)))?;
            if ex.theta.len() != theta_len || ex.expectations.len() != e_len {
                return Err(Error::Format(format!(
                    "dataset line {} has {} parameters and {} expectations, expected {theta_len} and {e_len}",
                    n + 1,
                    ex.theta.len(),
                    ex.expectations.len()
                )));
            }
            examples.push(ex);
        }
        if examples.len() != manifest.examples || manifest.train + manifest.test != manifest.examples {
            return Err(Error::Format(format!(
                "manifest lists {} examples ({} + {}), file holds {}",
                manifest.examples,
                manifest.train,
                manifest.test,
                examples.len()
            )));
        }
        Ok(Self { manifest, examples })
    }
}
