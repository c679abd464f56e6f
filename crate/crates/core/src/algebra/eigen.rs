use super::{matmul_into, Operator, C64, ONE, ZERO};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 64;

/// Eigendecomposition `A = V diag(values) V^dagger` of a Hermitian operator.
///
/// Eigenvalues ascend. Each eigenvector (a column of `V`) has its first
/// component of modulus above `1e-10` made real and positive, so repeated
/// decompositions of the same input return the same vectors.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    vectors: Vec<C64>,
    dim: usize,
}

impl HermitianEigen {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The `k`-th eigenvector.
    pub fn vector(&self, k: usize) -> Vec<C64> {
        (0..self.dim).map(|r| self.vectors[r * self.dim + k]).collect()
    }

    /// The unitary whose columns are the eigenvectors.
    pub fn vectors(&self) -> Operator {
        Operator::from_vec(self.dim, self.vectors.clone()).expect("square buffer")
    }

    /// `V f(diag) V^dagger`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Operator {
        self.map_values_complex(|v| C64::new(f(v), 0.0))
    }

    pub fn map_values_complex(&self, f: impl Fn(f64) -> C64) -> Operator {
        let d = self.dim;
        let fv: Vec<C64> = self.values.iter().map(|&v| f(v)).collect();
        Operator::from_fn(d, |r, c| {
            (0..d)
                .map(|k| self.vectors[r * d + k] * fv[k] * self.vectors[c * d + k].conj())
                .sum()
        })
    }
}

/// Eigendecomposition of a Hermitian operator by cyclic complex Jacobi
/// rotations. Only the Hermitian part of the input is used.
pub fn hermitian_eigen(a: &Operator) -> HermitianEigen {
    let d = a.dim();
    let mut ws = EigenWorkspace::new(d);
    ws.a.copy_from_slice(a.hermitian_part().as_slice());
    ws.diagonalize();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| ws.values[i].total_cmp(&ws.values[j]));
    let values = order.iter().map(|&i| ws.values[i]).collect();
    let mut vectors = vec![ZERO; d * d];
    for (new_col, &old_col) in order.iter().enumerate() {
        let phase = (0..d)
            .map(|r| ws.v[r * d + old_col])
            .find(|z| z.norm() > 1e-10)
            .map(|z| z.conj() / z.norm())
            .unwrap_or(ONE);
        for r in 0..d {
            vectors[r * d + new_col] = ws.v[r * d + old_col] * phase;
        }
    }
    HermitianEigen {
        values,
        vectors,
        dim: d,
    }
}

/// Returns `exp(-i H dt)` for Hermitian `H`.
pub fn expm_skew(h: &Operator, dt: f64) -> Result<Operator> {
    let scale = h.max_abs().max(1.0);
    if h.hermiticity_error() > 1e-10 * scale {
        return Err(Error::ContractViolation(format!(
            "expm_skew requires a Hermitian generator (deviation {:e})",
            h.hermiticity_error()
        )));
    }
    let d = h.dim();
    let mut ws = EigenWorkspace::new(d);
    let mut out = Operator::zeros(d);
    ws.expm_skew_into(h.as_slice(), dt, out.as_mut_slice());
    Ok(out)
}

/// Reusable buffers for repeated small Hermitian eigendecompositions,
/// used in the propagation hot loop.
#[derive(Clone, Debug)]
pub struct EigenWorkspace {
    dim: usize,
    a: Vec<C64>,
    v: Vec<C64>,
    values: Vec<f64>,
    phases: Vec<C64>,
    tmp: Vec<C64>,
}

impl EigenWorkspace {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            a: vec![ZERO; dim * dim],
            v: vec![ZERO; dim * dim],
            values: vec![0.0; dim],
            phases: vec![ZERO; dim],
            tmp: vec![ZERO; dim * dim],
        }
    }

    /// Writes `exp(-i H dt)` into `out`; `h` must be Hermitian.
    pub fn expm_skew_into(&mut self, h: &[C64], dt: f64, out: &mut [C64]) {
        let d = self.dim;
        self.a.copy_from_slice(h);
        self.diagonalize();
        for k in 0..d {
            let (s, c) = (-self.values[k] * dt).sin_cos();
            self.phases[k] = C64::new(c, s);
        }
        for r in 0..d {
            for k in 0..d {
                self.tmp[r * d + k] = self.v[r * d + k] * self.phases[k];
            }
        }
        for r in 0..d {
            for c in 0..d {
                let mut acc = ZERO;
                for k in 0..d {
                    acc += self.tmp[r * d + k] * self.v[c * d + k].conj();
                }
                out[r * d + c] = acc;
            }
        }
    }

    /// `acc <- exp(-i H dt) * acc`, the left-multiplied step of a
    /// time-ordered product.
    pub fn step_into(&mut self, h: &[C64], dt: f64, step: &mut [C64], acc: &mut [C64]) {
        self.expm_skew_into(h, dt, step);
        let d = self.dim;
        let mut prod = std::mem::take(&mut self.tmp);
        matmul_into(step, acc, d, &mut prod);
        acc.copy_from_slice(&prod);
        self.tmp = prod;
    }

    fn diagonalize(&mut self) {
        let d = self.dim;
        let a = &mut self.a;
        let v = &mut self.v;
        v.iter_mut().for_each(|x| *x = ZERO);
        for i in 0..d {
            v[i * d + i] = ONE;
        }
        let total: f64 = a.iter().map(|x| x.norm_sqr()).sum();
        if total > 0.0 {
            for _ in 0..MAX_SWEEPS {
                let mut off = 0.0;
                for p in 0..d {
                    for q in p + 1..d {
                        off += a[p * d + q].norm_sqr();
                    }
                }
                if off <= 1e-34 * total {
                    break;
                }
                for p in 0..d {
                    for q in p + 1..d {
                        rotate(a, v, d, p, q);
                    }
                }
            }
        }
        for i in 0..d {
            self.values[i] = a[i * d + i].re;
        }
    }
}

/// One Jacobi rotation annihilating entry `(p, q)`.
#[inline]
fn rotate(a: &mut [C64], v: &mut [C64], d: usize, p: usize, q: usize) {
    let apq = a[p * d + q];
    let mag = apq.norm();
    if mag == 0.0 {
        return;
    }
    let app = a[p * d + p].re;
    let aqq = a[q * d + q].re;
    let phase = apq / mag;
    let tau = (aqq - app) / (2.0 * mag);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    // J = diag(1, e^{-i phi}) * [[c, s], [-s, c]] on levels (p, q).
    let jqp = -phase.conj() * s;
    let jqq = phase.conj() * c;
    for k in 0..d {
        let akp = a[k * d + p];
        let akq = a[k * d + q];
        a[k * d + p] = akp * c + akq * jqp;
        a[k * d + q] = akp * s + akq * jqq;
        let vkp = v[k * d + p];
        let vkq = v[k * d + q];
        v[k * d + p] = vkp * c + vkq * jqp;
        v[k * d + q] = vkp * s + vkq * jqq;
    }
    for k in 0..d {
        let apk = a[p * d + k];
        let aqk = a[q * d + k];
        a[p * d + k] = apk * c + aqk * jqp.conj();
        a[q * d + k] = apk * s + aqk * jqq.conj();
    }
    a[p * d + q] = ZERO;
    a[q * d + p] = ZERO;
    a[p * d + p] = C64::new(a[p * d + p].re, 0.0);
    a[q * d + q] = C64::new(a[q * d + q].re, 0.0);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{pauli_x, I};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(d: usize, rng: &mut impl Rng) -> Operator {
        let m = Operator::from_fn(d, |_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        &m + &m.adjoint()
    }

    #[test]
    fn reconstructs_random_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in 2..=9 {
            let h = random_hermitian(d, &mut rng);
            let eig = hermitian_eigen(&h);
            assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
            let back = eig.map_values(|x| x);
            assert!(back.distance(&h) < 1e-12, "d={d}");
            assert!(eig.vectors().is_unitary(1e-12));
        }
    }

    #[test]
    fn phase_convention_first_component_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = random_hermitian(4, &mut rng);
        let eig = hermitian_eigen(&h);
        for k in 0..4 {
            let v = eig.vector(k);
            let first = v.iter().find(|z| z.norm() > 1e-10).unwrap();
            assert!(first.im.abs() < 1e-14 && first.re > 0.0);
        }
    }

    #[test]
    fn expm_of_zero_is_identity() {
        let u = expm_skew(&Operator::zeros(3), 0.7).unwrap();
        assert!(u.distance(&Operator::identity(3)) < 1e-15);
    }

    #[test]
    fn expm_of_pauli_x_quarter_turn() {
        let u = expm_skew(&pauli_x(), std::f64::consts::FRAC_PI_2).unwrap();
        let expected = pauli_x().scale(-I);
        assert!(u.distance(&expected) < 1e-14);
    }

    #[test]
    fn expm_matches_eigen_oracle_and_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_hermitian(3, &mut rng);
        let dt = 0.37;
        let u = expm_skew(&h, dt).unwrap();
        let back = expm_skew(&h, -dt).unwrap();
        assert!((&u * &back).distance(&Operator::identity(3)) < 1e-12);
        let oracle = hermitian_eigen(&h).map_values_complex(|l| C64::new(0.0, -l * dt).exp());
        assert!(u.distance(&oracle) < 1e-12);
    }

    #[test]
    fn expm_rejects_non_hermitian() {
        let m = Operator::from_fn(2, |r, c| if r == 0 && c == 1 { ONE } else { ZERO });
        assert!(matches!(expm_skew(&m, 1.0), Err(Error::ContractViolation(_))));
    }

    #[test]
    fn expm_group_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for d in [2, 3, 5] {
            let h = random_hermitian(d, &mut rng);
            let (a, b) = (0.3, 1.1);
            let lhs = &expm_skew(&h, a).unwrap() * &expm_skew(&h, b).unwrap();
            let rhs = expm_skew(&h, a + b).unwrap();
            assert!(lhs.distance(&rhs) < 1e-9);
            assert!(rhs.is_unitary(1e-10));
        }
    }
}
