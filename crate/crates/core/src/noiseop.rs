//! Bounded parameterization of noise operators.
//!
//! `W_O = Q D Q^dagger` with `Q` a fixed-order product of embedded 2x2
//! unitaries and `D = d diag(p * x)`, `x` in `[-1, 1]`, `p` on the simplex.
//! The image is exactly the set of Hermitian `W` with `sum_i |lambda_i| <= d`,
//! which implies `|lambda_i| <= d` and `|tr W| <= d`. `V_O = O^-1 W_O`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::algebra::{hermitian_eigen, matmul_into, Operator, C64, ZERO};
use crate::error::{Error, Result};

const BOUND_SLACK: f64 = 1e-12;
const TWO_PI: f64 = 2.0 * PI;

/// `[[r e^{i Theta}, s e^{i Psi}], [-s e^{-i Psi}, r e^{-i Theta}]]`,
/// `s = sqrt(1 - r^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubUnitary {
    pub r: f64,
    pub theta: f64,
    pub psi: f64,
}

impl SubUnitary {
    pub fn identity() -> Self {
        Self {
            r: 1.0,
            theta: 0.0,
            psi: 0.0,
        }
    }

    pub fn s(&self) -> f64 {
        (1.0 - self.r * self.r).max(0.0).sqrt()
    }

    pub fn entries(&self) -> [C64; 4] {
        let s = self.s();
        [
            C64::from_polar(self.r, self.theta),
            C64::from_polar(s, self.psi),
            -C64::from_polar(s, -self.psi),
            C64::from_polar(self.r, -self.theta),
        ]
    }

    pub fn matrix(&self) -> Operator {
        Operator::from_vec(2, self.entries().to_vec()).expect("2x2")
    }
}

/// `(p, q)` pairs in product order: `p` ascending, then `q` ascending.
pub fn pair_order(d: usize) -> Vec<(usize, usize)> {
    (0..d)
        .flat_map(|p| (p + 1..d).map(move |q| (p, q)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseOperatorParams {
    pub d: usize,
    /// One triple per pair of [`pair_order`].
    pub subunitaries: Vec<SubUnitary>,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

fn clamp_checked(v: f64, lo: f64, hi: f64, what: &str) -> Result<f64> {
    if !v.is_finite() || v < lo - BOUND_SLACK || v > hi + BOUND_SLACK {
        return Err(Error::Domain(format!("{what} = {v} outside [{lo}, {hi}]")));
    }
    Ok(v.clamp(lo, hi))
}

impl NoiseOperatorParams {
    /// Validates and clamps every bound within `1e-12` slack.
    pub fn new(d: usize, subunitaries: Vec<SubUnitary>, x: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidDimension(d));
        }
        if subunitaries.len() != d * (d - 1) / 2 || x.len() != d || p.len() != d {
            return Err(Error::ContractViolation(format!(
                "d = {d} needs {} subunitaries and {d} x and p values, got {}, {}, {}",
                d * (d - 1) / 2,
                subunitaries.len(),
                x.len(),
                p.len()
            )));
        }
        let subunitaries = subunitaries
            .into_iter()
            .map(|u| {
                Ok(SubUnitary {
                    r: clamp_checked(u.r, 0.0, 1.0, "r")?,
                    theta: clamp_checked(u.theta, 0.0, TWO_PI, "Theta")?,
                    psi: clamp_checked(u.psi, 0.0, TWO_PI, "Psi")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let x = x
            .into_iter()
            .map(|v| clamp_checked(v, -1.0, 1.0, "x"))
            .collect::<Result<Vec<_>>>()?;
        let p = p
            .into_iter()
            .map(|v| clamp_checked(v, 0.0, 1.0, "p"))
            .collect::<Result<Vec<_>>>()?;
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::Domain(format!("p sums to {total}, expected 1")));
        }
        Ok(Self {
            d,
            subunitaries,
            x,
            p,
        })
    }

    /// `Q = I`, `D = I`.
    pub fn identity(d: usize) -> Self {
        Self {
            d,
            subunitaries: vec![SubUnitary::identity(); d * (d - 1) / 2],
            x: vec![1.0; d],
            p: vec![1.0 / d as f64; d],
        }
    }

    pub fn q(&self) -> Result<Operator> {
        build_q(&self.subunitaries, self.d)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let d = self.d as f64;
        self.p.iter().zip(&self.x).map(|(p, x)| d * p * x).collect()
    }

    pub fn w(&self) -> Result<Operator> {
        Ok(build_w(&self.q()?, &self.diagonal()))
    }
}

/// Embeds a triple into levels `(p, q)` of the identity.
fn embedded(u: &SubUnitary, p: usize, q: usize, d: usize) -> Operator {
    let [a, b, c, e] = u.entries();
    let mut m = Operator::identity(d);
    m[(p, p)] = a;
    m[(p, q)] = b;
    m[(q, p)] = c;
    m[(q, q)] = e;
    m
}

/// `Q = prod_{p<q} U_pq`, multiplied left to right in [`pair_order`].
pub fn build_q(subunitaries: &[SubUnitary], d: usize) -> Result<Operator> {
    let pairs = pair_order(d);
    if subunitaries.len() != pairs.len() {
        return Err(Error::ContractViolation(format!(
            "d = {d} needs {} subunitaries, got {}",
            pairs.len(),
            subunitaries.len()
        )));
    }
    let mut q = Operator::identity(d);
    for (u, &(a, b)) in subunitaries.iter().zip(&pairs) {
        q = &q * &embedded(u, a, b, d);
    }
    Ok(q)
}

/// `D = d diag(p_1 x_1, ..., p_d x_d)`.
pub fn build_d(x: &[f64], p: &[f64], d: usize) -> Result<Operator> {
    let params = NoiseOperatorParams::new(
        d,
        vec![SubUnitary::identity(); d * (d - 1) / 2],
        x.to_vec(),
        p.to_vec(),
    )?;
    Ok(Operator::diag_real(&params.diagonal()))
}

/// `W = Q D Q^dagger`, symmetrized so it is exactly Hermitian.
pub fn build_w(q: &Operator, diagonal: &[f64]) -> Operator {
    let d = q.dim();
    let qd = Operator::from_fn(d, |r, c| q[(r, c)] * diagonal[c]);
    (&qd * &q.adjoint()).hermitian_part()
}

/// `V = O~^-1 W`, where `O~` is the shifted observable when one is given.
pub fn build_v(o: &Operator, w: &Operator, shift: Option<&ShiftedObservable>) -> Result<Operator> {
    let target = shift.map(|s| &s.shifted).unwrap_or(o);
    let norm = target.hermitian_spectral_norm();
    if norm == 0.0 {
        return Err(Error::Invertibility("zero observable".into()));
    }
    let inv = target.hermitian_inverse(1e-6 * norm)?;
    Ok(&inv * w)
}

/// `O~ = a O + b I`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftedObservable {
    pub original: Operator,
    pub a: f64,
    pub b: f64,
    pub shifted: Operator,
}

impl ShiftedObservable {
    pub fn is_identity_map(&self) -> bool {
        self.a == 1.0 && self.b == 0.0
    }

    pub fn recover(&self, e_shifted: f64) -> f64 {
        recover_expectation(e_shifted, self.a, self.b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShiftRule {
    /// `b` at a midpoint between consecutive eigenvalues of `-O`, chosen to
    /// maximize the smallest shifted eigenvalue magnitude while keeping
    /// `sum |lambda + b| <= d` so the shifted `W` stays representable.
    Interior,
    /// `b = 2 ||O||`, making every eigenvalue at least `||O||`.
    DoubleNorm,
}

pub fn shift_observable(o: &Operator) -> Result<ShiftedObservable> {
    shift_observable_with(o, ShiftRule::Interior)
}

pub fn shift_observable_with(o: &Operator, rule: ShiftRule) -> Result<ShiftedObservable> {
    if !o.is_hermitian(1e-10 * o.max_abs().max(1.0)) {
        return Err(Error::ContractViolation("observable must be Hermitian".into()));
    }
    let eig = hermitian_eigen(o);
    let norm = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if norm == 0.0 {
        return Err(Error::DegenerateObservable("the zero operator cannot be shifted".into()));
    }
    let min_abs = eig.values.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let (a, b) = if min_abs >= 1e-6 * norm {
        (1.0, 0.0)
    } else {
        match rule {
            ShiftRule::DoubleNorm => (1.0, 2.0 * norm),
            ShiftRule::Interior => interior_shift(&eig.values, o.dim())?,
        }
    };
    let shifted = &o.scale_real(a) + &Operator::identity(o.dim()).scale_real(b);
    Ok(ShiftedObservable {
        original: o.clone(),
        a,
        b,
        shifted,
    })
}

fn interior_shift(values: &[f64], d: usize) -> Result<(f64, f64)> {
    let norm = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut distinct: Vec<f64> = Vec::new();
    for &v in values {
        if distinct.last().is_none_or(|&l| v - l > 1e-9 * norm) {
            distinct.push(v);
        }
    }
    if distinct.len() < 2 {
        return Err(Error::DegenerateObservable(
            "observable with a single eigenvalue cannot be singular unless zero".into(),
        ));
    }
    let dd = d as f64;
    // ranked by (largest min |lambda + b|, smallest |b|, positive b)
    let mut best: Option<(f64, f64)> = None;
    let mut best_key = (f64::NEG_INFINITY, f64::INFINITY);
    let mut fallback: Option<(f64, f64)> = None;
    for w in distinct.windows(2) {
        let b = -(w[0] + w[1]) / 2.0;
        let shifted: Vec<f64> = values.iter().map(|v| v + b).collect();
        let nuclear: f64 = shifted.iter().map(|v| v.abs()).sum();
        let largest = shifted.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let smallest = shifted.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        let key = (smallest, b.abs());
        let better = key.0 > best_key.0 + 1e-12
            || ((key.0 - best_key.0).abs() <= 1e-12
                && (key.1 < best_key.1 - 1e-12
                    || ((key.1 - best_key.1).abs() <= 1e-12 && b > 0.0)));
        if nuclear <= dd * (1.0 + 1e-12) && largest <= dd {
            if better {
                best = Some((1.0, b));
                best_key = key;
            }
        } else if fallback.is_none() {
            let a = (dd / nuclear).min(dd / largest);
            fallback = Some((a, a * b));
        }
    }
    best.or(fallback)
        .ok_or_else(|| Error::DegenerateObservable("no admissible shift".into()))
}

/// `(e - b) / a`.
pub fn recover_expectation(e_shifted: f64, a: f64, b: f64) -> f64 {
    (e_shifted - b) / a
}

/// Recovers parameters with `build_w(extract_params(W)) = W`.
///
/// Eigenvalues map to `p_i = |lambda_i| / sum |lambda|` (uniform when
/// `W = 0`) and `x_i = lambda_i / (d p_i)`. The eigenvector matrix is reduced
/// to a diagonal phase by left-multiplying `U_pq^dagger` in product order,
/// zeroing column `p` below the diagonal; the leftover phases commute with
/// `D` and are dropped.
pub fn extract_params(w: &Operator, d: usize) -> Result<NoiseOperatorParams> {
    if w.dim() != d {
        return Err(Error::InvalidDimension(w.dim()));
    }
    let scale = w.max_abs().max(1.0);
    if w.hermiticity_error() > 1e-10 * scale {
        return Err(Error::Domain("W must be Hermitian".into()));
    }
    let eig = hermitian_eigen(w);
    let nuclear: f64 = eig.values.iter().map(|v| v.abs()).sum();
    if nuclear > d as f64 * (1.0 + 1e-9) {
        return Err(Error::Domain(format!(
            "sum of |eigenvalues| is {nuclear}, exceeding d = {d}"
        )));
    }
    let (x, p) = if nuclear == 0.0 {
        (vec![0.0; d], vec![1.0 / d as f64; d])
    } else {
        let p: Vec<f64> = eig.values.iter().map(|v| v.abs() / nuclear).collect();
        let x = eig
            .values
            .iter()
            .zip(&p)
            .map(|(v, &pi)| if pi == 0.0 { 0.0 } else { (v / (d as f64 * pi)).clamp(-1.0, 1.0) })
            .collect();
        (x, p)
    };

    let mut m = eig.vectors();
    let mut subunitaries = Vec::with_capacity(d * (d - 1) / 2);
    for (p_idx, q_idx) in pair_order(d) {
        let a = m[(p_idx, p_idx)];
        let b = m[(q_idx, p_idx)];
        let n = (a.norm_sqr() + b.norm_sqr()).sqrt();
        let u = if n == 0.0 || b.norm() == 0.0 {
            SubUnitary::identity()
        } else {
            let arg_a = if a.norm() == 0.0 { 0.0 } else { a.arg() };
            SubUnitary {
                r: (a.norm() / n).min(1.0),
                theta: 0.0,
                psi: (arg_a - b.arg() + PI).rem_euclid(TWO_PI),
            }
        };
        let ud = embedded(&u, p_idx, q_idx, d).adjoint();
        m = &ud * &m;
        subunitaries.push(u);
    }
    NoiseOperatorParams::new(d, subunitaries, x, p)
}

/// Derivative of a scalar loss with respect to one triple. `r` is the
/// partial derivative at fixed `s`; the `s` path is reported separately so
/// callers can chain through `s = sqrt(1 - r^2)` without the `r -> 1`
/// singularity.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SubUnitaryGrad {
    pub r: f64,
    pub s: f64,
    pub theta: f64,
    pub psi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrad {
    pub subunitaries: Vec<SubUnitaryGrad>,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

/// Back-propagates `G = dL/dW` (with `dL = Re tr(G^dagger dW)`) through
/// `W = Q D Q^dagger`.
pub fn w_backward(params: &NoiseOperatorParams, g: &Operator) -> ParamGrad {
    let d = params.d;
    let pairs = pair_order(d);
    let factors: Vec<Operator> = params
        .subunitaries
        .iter()
        .zip(&pairs)
        .map(|(u, &(a, b))| embedded(u, a, b, d))
        .collect();
    let n = factors.len();
    // prefix[m] = U_0 ... U_{m-1}, suffix[m] = U_{m+1} ... U_{n-1}
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(Operator::identity(d));
    for f in &factors {
        let next = prefix.last().expect("nonempty") * f;
        prefix.push(next);
    }
    let mut suffix = vec![Operator::identity(d); n + 1];
    for m in (0..n).rev() {
        suffix[m] = &factors[m] * &suffix[m + 1];
    }
    let q = &prefix[n];
    let diag = params.diagonal();

    let gh = g + &g.adjoint();
    let qh = q.adjoint();
    let mut tmp = vec![ZERO; d * d];
    let mut inner = vec![ZERO; d * d];
    matmul_into(qh.as_slice(), g.as_slice(), d, &mut tmp);
    matmul_into(&tmp, q.as_slice(), d, &mut inner);
    let g_diag: Vec<f64> = (0..d).map(|i| inner[i * d + i].re).collect();
    let x = (0..d).map(|i| d as f64 * params.p[i] * g_diag[i]).collect();
    let p = (0..d).map(|i| d as f64 * params.x[i] * g_diag[i]).collect();

    // G_Q = (G + G^dagger) Q D
    let gq = Operator::from_fn(d, |r, c| {
        (0..d).map(|k| gh[(r, k)] * q[(k, c)]).sum::<C64>() * diag[c]
    });
    let mut subs = Vec::with_capacity(n);
    for m in 0..n {
        let gu = &(&prefix[m].adjoint() * &gq) * &suffix[m + 1].adjoint();
        let (a, b) = pairs[m];
        let u = params.subunitaries[m];
        let s = u.s();
        let g00 = gu[(a, a)];
        let g01 = gu[(a, b)];
        let g10 = gu[(b, a)];
        let g11 = gu[(b, b)];
        let e_t = C64::from_polar(1.0, u.theta);
        let e_p = C64::from_polar(1.0, u.psi);
        let dot = |g: C64, du: C64| (g.conj() * du).re;
        let i = C64::new(0.0, 1.0);
        subs.push(SubUnitaryGrad {
            r: dot(g00, e_t) + dot(g11, e_t.conj()),
            s: dot(g01, e_p) + dot(g10, -e_p.conj()),
            theta: dot(g00, i * e_t * u.r) + dot(g11, -i * e_t.conj() * u.r),
            psi: dot(g01, i * e_p * s) + dot(g10, i * e_p.conj() * s),
        });
    }
    ParamGrad {
        subunitaries: subs,
        x,
        p,
    }
}
