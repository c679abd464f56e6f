//! Local expansions of the learned noise operators along the amplitude
//! scaling `theta -> eps * theta`, and the cost landscapes built from them.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::algebra::{Operator, C64};
use crate::control::{frame_target, Frame, TargetGate};
use crate::error::{Error, Result};
use crate::graybox::GrayboxModel;
use crate::pulses::PulseParams;

/// `n` uniform points from `lo` to `hi` inclusive; the midpoint of a
/// symmetric odd grid is exactly zero.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 || !(hi > lo) {
        return Err(Error::InvalidConfig(format!("grid {lo}:{hi}:{n} needs lo < hi and n >= 2")));
    }
    let step = (hi - lo) / (n - 1) as f64;
    Ok((0..n)
        .map(|i| {
            // symmetric evaluation keeps mirrored points exact negatives
            let from_lo = lo + step * i as f64;
            let from_hi = hi - step * (n - 1 - i) as f64;
            if 2 * i < n - 1 {
                from_lo
            } else if 2 * i > n - 1 {
                from_hi
            } else {
                (lo + hi) / 2.0
            }
        })
        .collect())
}

/// 41 points on `[-1, 1]`.
pub fn default_grid() -> Vec<f64> {
    uniform_grid(-1.0, 1.0, 41).expect("valid grid")
}

/// Parses `lo:hi:n`.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidConfig(format!("grid must look like -1:1:41, got {spec}"));
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi, n] = parts.as_slice() else {
        return Err(bad());
    };
    uniform_grid(
        lo.trim().parse().map_err(|_| bad())?,
        hi.trim().parse().map_err(|_| bad())?,
        n.trim().parse().map_err(|_| bad())?,
    )
}

/// Model outputs along the scaling grid.
#[derive(Clone, Debug)]
pub struct EpsilonScan {
    pub grid: Vec<f64>,
    /// `v[e][o]`: noise operator of observable `o` at `grid[e]`.
    pub v: Vec<Vec<Operator>>,
    /// Closed propagator at each grid point.
    pub u0: Vec<Operator>,
}

impl EpsilonScan {
    /// Samples of one observable across the grid.
    pub fn observable(&self, o: usize) -> Vec<Operator> {
        self.v.iter().map(|vs| vs[o].clone()).collect()
    }
}

/// Runs the model at every `eps * theta`. Scaled pulses must stay inside
/// the amplitude box unless `waive_bounds` is set.
pub fn scan_epsilon(model: &GrayboxModel, theta: &PulseParams, grid: &[f64], waive_bounds: bool) -> Result<EpsilonScan> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty epsilon grid".into()));
    }
    if !waive_bounds {
        for &e in grid {
            if !theta.scaled(e).within_bound(model.a_max()) {
                return Err(Error::Domain(format!(
                    "eps = {e} scales the pulse past the amplitude bound {:e}",
                    model.a_max()
                )));
            }
        }
    }
    let one = |e: &f64| -> Result<(Vec<Operator>, Operator)> {
        let out = model.forward(&theta.scaled(*e))?;
        Ok((out.v, out.u0))
    };
    #[cfg(feature = "parallel")]
    let points: Vec<(Vec<Operator>, Operator)> = {
        use rayon::prelude::*;
        grid.par_iter().map(one).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let points: Vec<(Vec<Operator>, Operator)> = grid.iter().map(one).collect::<Result<_>>()?;
    let (v, u0) = points.into_iter().unzip();
    Ok(EpsilonScan {
        grid: grid.to_vec(),
        v,
        u0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaylorExpansion {
    pub observable: usize,
    pub order: usize,
    /// `X_0 .. X_k`.
    pub coefficients: Vec<Operator>,
    /// Row-major, per matrix element: largest `|fit - sample|` on the grid.
    pub residuals: Vec<f64>,
    /// `sum |fit - sample|^2` over every element and grid point.
    pub sum_squared_residual: f64,
    pub grid: Vec<f64>,
}

impl TaylorExpansion {
    pub fn evaluate(&self, eps: f64) -> Operator {
        let d = self.coefficients[0].dim();
        let mut acc = vec![C64::new(0.0, 0.0); d * d];
        // Horner, highest order first
        for x in self.coefficients.iter().rev() {
            for (a, b) in acc.iter_mut().zip(x.as_slice()) {
                *a = *a * eps + b;
            }
        }
        Operator::from_vec(d, acc).expect("square")
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, &r| m.max(r))
    }
}

/// Least squares `min ||A c - b||` by Householder QR. `a` is row-major
/// `m x n` with `m >= n`; fails when a pivot is negligible.
fn least_squares(a: &[f64], m: usize, n: usize, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut r = a.to_vec();
    let mut bs: Vec<Vec<f64>> = rhs.to_vec();
    let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    for k in 0..n {
        let norm = (k..m).map(|i| r[i * n + k].powi(2)).sum::<f64>().sqrt();
        if norm <= 1e-12 * scale.max(1.0) * (m as f64).sqrt() {
            return Err(Error::Fit(format!("design matrix is rank deficient at column {k}")));
        }
        let alpha = if r[k * n + k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..m).map(|i| r[i * n + k]).collect();
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|x| x * x).sum();
        for j in k..n {
            let dot: f64 = (k..m).map(|i| v[i - k] * r[i * n + j]).sum();
            let f = 2.0 * dot / vv;
            for i in k..m {
                r[i * n + j] -= f * v[i - k];
            }
        }
        for b in &mut bs {
            let dot: f64 = (k..m).map(|i| v[i - k] * b[i]).sum();
            let f = 2.0 * dot / vv;
            for i in k..m {
                b[i] -= f * v[i - k];
            }
        }
    }
    let mut out = Vec::with_capacity(bs.len());
    for b in &bs {
        let mut c = vec![0.0; n];
        for k in (0..n).rev() {
            let s: f64 = (k + 1..n).map(|j| r[k * n + j] * c[j]).sum();
            c[k] = (b[k] - s) / r[k * n + k];
        }
        out.push(c);
    }
    Ok(out)
}

/// Degree-`order` least-squares fit of every matrix element (real and
/// imaginary parts separately) of `samples` against `grid`.
pub fn fit_taylor(samples: &[Operator], grid: &[f64], order: usize, observable: usize) -> Result<TaylorExpansion> {
    if samples.len() != grid.len() || samples.is_empty() {
        return Err(Error::ContractViolation(format!(
            "{} samples for {} grid points",
            samples.len(),
            grid.len()
        )));
    }
    if grid.len() < order + 2 {
        return Err(Error::Fit(format!(
            "order {order} needs at least {} grid points, got {}",
            order + 2,
            grid.len()
        )));
    }
    let d = samples[0].dim();
    let m = grid.len();
    let n = order + 1;
    let design: Vec<f64> = grid
        .iter()
        .flat_map(|&e| (0..n).map(move |p| e.powi(p as i32)))
        .collect();
    let mut rhs = Vec::with_capacity(2 * d * d);
    for idx in 0..d * d {
        rhs.push(samples.iter().map(|s| s.as_slice()[idx].re).collect());
        rhs.push(samples.iter().map(|s| s.as_slice()[idx].im).collect());
    }
    let sol = least_squares(&design, m, n, &rhs)?;
    let coefficients: Vec<Operator> = (0..n)
        .map(|p| {
            let entries = (0..d * d)
                .map(|idx| C64::new(sol[2 * idx][p], sol[2 * idx + 1][p]))
                .collect();
            Operator::from_vec(d, entries).expect("square")
        })
        .collect();
    let mut exp = TaylorExpansion {
        observable,
        order,
        coefficients,
        residuals: vec![0.0; d * d],
        sum_squared_residual: 0.0,
        grid: grid.to_vec(),
    };
    for (s, &e) in samples.iter().zip(grid) {
        let fit = exp.evaluate(e);
        for (idx, r) in exp.residuals.iter_mut().enumerate() {
            let diff = fit.as_slice()[idx] - s.as_slice()[idx];
            *r = r.max(diff.norm());
            exp.sum_squared_residual += diff.norm_sqr();
        }
    }
    Ok(exp)
}

/// One expansion per observable of a scan.
pub fn fit_scan(scan: &EpsilonScan, order: usize) -> Result<Vec<TaylorExpansion>> {
    let n_obs = scan.v.first().map(|v| v.len()).unwrap_or(0);
    (0..n_obs)
        .map(|o| fit_taylor(&scan.observable(o), &scan.grid, order, o))
        .collect()
}

/// `N = sum_k ||V_k - I||_F`.
pub fn noise_sensitivity(vs: &[Operator]) -> f64 {
    vs.iter()
        .map(|v| v.distance(&Operator::identity(v.dim())))
        .sum()
}

/// `1 - |tr(U^dagger G)|^2 / d^2`, clamped to `[0, 1]`.
pub fn gate_infidelity(u: &Operator, g: &Operator) -> f64 {
    let d = u.dim() as f64;
    (1.0 - u.adjoint().trace_product(g).norm_sqr() / (d * d)).clamp(0.0, 1.0)
}

/// `J = N + (1 - |tr(U^dagger G)|^2 / d^2)`.
pub fn control_cost(vs: &[Operator], u: &Operator, g: &Operator) -> f64 {
    noise_sensitivity(vs) + gate_infidelity(u, g)
}

/// Where the noise operators in `J` and `N` come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostSource {
    Samples,
    Expansion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeRow {
    pub pulse_id: usize,
    pub epsilon: f64,
    pub j: f64,
    pub n: f64,
    /// Process fidelity, evaluated only at the designated point of a pulse.
    pub fidelity: Option<f64>,
}

/// `J` and `N` of one pulse over the grid. With [`CostSource::Expansion`]
/// the noise operators come from an order-`order` fit of the scan.
pub fn landscape_rows(
    model: &GrayboxModel,
    pulse_id: usize,
    theta: &PulseParams,
    gate: &TargetGate,
    frame: Frame,
    grid: &[f64],
    source: CostSource,
    order: usize,
) -> Result<Vec<LandscapeRow>> {
    let scan = scan_epsilon(model, theta, grid, false)?;
    let target = frame_target(model.config(), gate, frame);
    let fitted = match source {
        CostSource::Samples => None,
        CostSource::Expansion => Some(fit_scan(&scan, order)?),
    };
    Ok(grid
        .iter()
        .enumerate()
        .map(|(e, &eps)| {
            let vs = match &fitted {
                None => scan.v[e].clone(),
                Some(f) => f.iter().map(|x| x.evaluate(eps)).collect(),
            };
            let n = noise_sensitivity(&vs);
            LandscapeRow {
                pulse_id,
                epsilon: eps,
                j: n + gate_infidelity(&scan.u0[e], &target),
                n,
                fidelity: None,
            }
        })
        .collect())
}

/// Index of the smallest `J` (first on ties).
pub fn argmin_j(rows: &[LandscapeRow]) -> Option<usize> {
    rows.iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, r)| match best {
            Some((_, j)) if j <= r.j => best,
            _ => Some((i, r.j)),
        })
        .map(|(i, _)| i)
}

/// `pulse_id,epsilon,J,N,fidelity`.
pub fn write_landscape_csv<W: Write>(rows: &[LandscapeRow], mut w: W) -> Result<()> {
    writeln!(w, "pulse_id,epsilon,J,N,fidelity")?;
    for r in rows {
        let f = r.fidelity.map(|f| format!("{f:e}")).unwrap_or_default();
        writeln!(w, "{},{},{:e},{:e},{f}", r.pulse_id, r.epsilon, r.j, r.n)?;
    }
    Ok(())
}
