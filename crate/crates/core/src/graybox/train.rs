use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GrayboxModel, PreparedExample};
use crate::dynamics::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparameters {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Examples per gradient chunk. Chunks are reduced in a fixed order so
    /// results do not depend on the thread count.
    pub chunk_size: usize,
    /// Abort when the batch loss stays above this multiple of the first
    /// batch loss for `divergence_patience` iterations.
    pub divergence_factor: f64,
    pub divergence_patience: usize,
    /// Test-set evaluation period in iterations; 0 disables it.
    pub eval_every: usize,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 256,
            iterations: 1000,
            seed: 0,
            chunk_size: 16,
            divergence_factor: 10.0,
            divergence_patience: 50,
            eval_every: 1,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.batch_size > 0
            && self.chunk_size > 0
            && self.divergence_factor > 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid hyperparameters: {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    /// Mini-batch loss before each update.
    pub train_mse: Vec<f64>,
    /// Test loss after the update, where evaluated.
    pub test_mse: Vec<Option<f64>>,
    pub final_train_mse: f64,
    pub final_test_mse: Option<f64>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl TrainingRecord {
    /// `iteration,train_mse,test_mse`, one row per iteration.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iteration,train_mse,test_mse")?;
        for (i, (tr, te)) in self.train_mse.iter().zip(&self.test_mse).enumerate() {
            match te {
                Some(te) => writeln!(w, "{},{tr:e},{te:e}", i + 1)?,
                None => writeln!(w, "{},{tr:e},", i + 1)?,
            }
        }
        Ok(())
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, w: &mut [f64], g: &[f64], h: &Hyperparameters) {
        self.t += 1;
        let c1 = 1.0 - h.beta1.powi(self.t);
        let c2 = 1.0 - h.beta2.powi(self.t);
        for i in 0..w.len() {
            self.m[i] = h.beta1 * self.m[i] + (1.0 - h.beta1) * g[i];
            self.v[i] = h.beta2 * self.v[i] + (1.0 - h.beta2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            w[i] -= h.learning_rate * mh / (vh.sqrt() + h.epsilon);
        }
    }
}

/// Deterministic mean loss and gradient over `batch`, chunked for threads.
fn chunked_loss_and_grad(model: &GrayboxModel, batch: &[&PreparedExample], chunk: usize) -> Result<(f64, Vec<f64>)> {
    let n = model.num_weights();
    let work = |c: &[&PreparedExample]| -> Result<(f64, Vec<f64>)> {
        let mut g = vec![0.0; n];
        let mut sse = 0.0;
        for ex in c {
            sse += model.sse(std::slice::from_ref(*ex), Some(&mut g))?;
        }
        Ok((sse, g))
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<(f64, Vec<f64>)> = {
        use rayon::prelude::*;
        batch.par_chunks(chunk).map(work).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<(f64, Vec<f64>)> = batch.chunks(chunk).map(work).collect::<Result<_>>()?;
    let mut sse = 0.0;
    let mut g = vec![0.0; n];
    for (s, pg) in parts {
        sse += s;
        for (a, b) in g.iter_mut().zip(&pg) {
            *a += b;
        }
    }
    let scale = 1.0 / model.entries(batch.len());
    g.iter_mut().for_each(|v| *v *= scale);
    Ok((sse * scale, g))
}

/// Deterministic mean loss over `set`.
pub(crate) fn chunked_loss(model: &GrayboxModel, set: &[PreparedExample], chunk: usize) -> Result<f64> {
    let work = |c: &[PreparedExample]| model.sse(c, None);
    #[cfg(feature = "parallel")]
    let parts: Vec<f64> = {
        use rayon::prelude::*;
        set.par_chunks(chunk).map(work).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<f64> = set.chunks(chunk).map(work).collect::<Result<_>>()?;
    Ok(parts.iter().sum::<f64>() / model.entries(set.len()))
}

/// Trains `model` on the dataset's train split with Adam, calling
/// `progress(iteration, train_mse, test_mse)` after every update.
pub fn train(
    mut model: GrayboxModel,
    dataset: &Dataset,
    hyper: &Hyperparameters,
    mut progress: impl FnMut(usize, f64, Option<f64>),
) -> Result<(GrayboxModel, TrainingRecord)> {
    hyper.validate()?;
    if crate::dynamics::config_hash(model.config()) != dataset.manifest.config_hash {
        return Err(Error::ContractViolation(
            "model and dataset were built for different configurations".into(),
        ));
    }
    let start = Instant::now();
    let train_set = model.prepare(dataset.train())?;
    let test_set = model.prepare(dataset.test())?;
    if train_set.is_empty() {
        return Err(Error::InvalidConfig("training split is empty".into()));
    }
    let batch_size = hyper.batch_size.min(train_set.len());
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;

    let mut adam = Adam::new(model.num_weights());
    let mut record = TrainingRecord {
        train_mse: Vec::with_capacity(hyper.iterations),
        test_mse: Vec::with_capacity(hyper.iterations),
        final_train_mse: f64::NAN,
        final_test_mse: None,
        wall_time_s: 0.0,
    };
    let mut first = None;
    let mut above = 0usize;
    for it in 1..=hyper.iterations {
        if cursor + batch_size > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let batch: Vec<&PreparedExample> = order[cursor..cursor + batch_size]
            .iter()
            .map(|&i| &train_set[i])
            .collect();
        cursor += batch_size;
        let (loss, grad) = chunked_loss_and_grad(&model, &batch, hyper.chunk_size)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!("non-finite loss at iteration {it}")));
        }
        let initial = *first.get_or_insert(loss);
        if loss > hyper.divergence_factor * initial {
            above += 1;
            if above >= hyper.divergence_patience {
                return Err(Error::Divergence(format!(
                    "loss {loss:e} above {} x initial {initial:e} for {above} iterations",
                    hyper.divergence_factor
                )));
            }
        } else {
            above = 0;
        }
        adam.step(&mut model.weights, &grad, hyper);
        let test = if hyper.eval_every > 0 && !test_set.is_empty() && it % hyper.eval_every == 0 {
            Some(chunked_loss(&model, &test_set, hyper.chunk_size)?)
        } else {
            None
        };
        record.train_mse.push(loss);
        record.test_mse.push(test);
        progress(it, loss, test);
    }
    record.final_train_mse = chunked_loss(&model, &train_set, hyper.chunk_size)?;
    record.final_test_mse = if test_set.is_empty() {
        None
    } else {
        Some(chunked_loss(&model, &test_set, hyper.chunk_size)?)
    };
    record.wall_time_s = start.elapsed().as_secs_f64();
    Ok((model, record))
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_config;
    use super::*;
    use crate::dynamics::generate_dataset;

    #[test]
    fn chunking_does_not_change_the_gradient_much() {
        let c = tiny_config([0.0; 3], 1);
        let ds = generate_dataset(&c, 6, 1).unwrap();
        let model = GrayboxModel::new(&c, 5, 1).unwrap();
        let set = model.prepare(&ds.examples).unwrap();
        let refs: Vec<&PreparedExample> = set.iter().collect();
        let (l1, g1) = chunked_loss_and_grad(&model, &refs, 1).unwrap();
        let (l2, g2) = model.loss_and_grad(&set).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn short_run_is_reproducible_and_descends() {
        let c = tiny_config([0.0; 3], 1);
        let ds = generate_dataset(&c, 40, 5).unwrap();
        let hyper = Hyperparameters {
            iterations: 60,
            batch_size: 16,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let run = || {
            let model = GrayboxModel::new(&c, 8, 2).unwrap();
            train(model, &ds, &hyper, |_, _, _| {}).unwrap()
        };
        let (ma, ra) = run();
        let (mb, rb) = run();
        assert_eq!(ma.weights(), mb.weights());
        assert_eq!(ra.train_mse, rb.train_mse);
        assert!(ra.train_mse.last().unwrap() < &(0.5 * ra.train_mse[0]));
        let mut csv = Vec::new();
        ra.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("iteration,train_mse,test_mse\n1,"));
        assert_eq!(text.lines().count(), 61);
    }

    #[test]
    fn mismatched_dataset_is_rejected() {
        let c = tiny_config([0.0; 3], 1);
        let other = tiny_config([0.0, 50.0, 60.0], 1);
        let ds = generate_dataset(&other, 4, 5).unwrap();
        let model = GrayboxModel::new(&c, 4, 2).unwrap();
        assert!(train(model, &ds, &Hyperparameters::default(), |_, _, _| {}).is_err());
    }
}
