use super::{hermitian_eigen, Operator, C64};
use crate::error::{Error, Result};

const NEGATIVE_EIGENVALUE_SLACK: f64 = 1e-10;
/// Eigenvalues below this fraction of the largest are rounding noise; their
/// square roots would otherwise add ~1e-8 to the fidelity of pure Choi states.
const RELATIVE_ZERO: f64 = 1e-14;

/// Trace-one Choi matrix `(1/d) sum_ij U|i><j|U^dagger ⊗ |i><j|` of a
/// unitary channel. Row index `a * d + i` pairs output level `a` with
/// reference level `i`.
pub fn choi_of_unitary(u: &Operator) -> Result<Operator> {
    if !u.is_unitary(1e-9) {
        return Err(Error::ContractViolation(format!(
            "choi_of_unitary needs a unitary (||U^dag U - I||_F = {:e})",
            u.unitarity_error()
        )));
    }
    Ok(choi_unchecked(u))
}

/// Choi matrix of the mixed-unitary channel `rho -> mean_r U_r rho U_r^dagger`.
pub fn choi_of_channel(unitaries: &[Operator]) -> Result<Operator> {
    let first = unitaries
        .first()
        .ok_or_else(|| Error::ContractViolation("empty channel ensemble".into()))?;
    let d = first.dim();
    let mut acc = vec![C64::new(0.0, 0.0); d * d * d * d];
    for u in unitaries {
        if u.dim() != d {
            return Err(Error::ContractViolation("mixed dimensions in ensemble".into()));
        }
        let j = choi_unchecked(u);
        for (a, b) in acc.iter_mut().zip(j.as_slice()) {
            *a += b;
        }
    }
    let k = unitaries.len() as f64;
    acc.iter_mut().for_each(|x| *x /= k);
    Operator::from_vec(d * d, acc)
}

fn choi_unchecked(u: &Operator) -> Operator {
    let d = u.dim();
    let norm = 1.0 / d as f64;
    // |psi> with psi_{a,i} = U_{a,i} / sqrt(d); J = |psi><psi|.
    Operator::from_fn(d * d, |row, col| {
        let (a, i) = (row / d, row % d);
        let (b, j) = (col / d, col % d);
        u[(a, i)] * u[(b, j)].conj() * norm
    })
}

/// `tr sqrt( sqrt(J_t) J_a sqrt(J_t) )` for trace-one Choi matrices.
pub fn process_fidelity(j_target: &Operator, j_actual: &Operator) -> Result<f64> {
    if j_target.dim() != j_actual.dim() {
        return Err(Error::InvalidChoi(format!(
            "dimension mismatch {} vs {}",
            j_target.dim(),
            j_actual.dim()
        )));
    }
    for (name, j) in [("target", j_target), ("actual", j_actual)] {
        let tr = j.trace();
        if (tr.re - 1.0).abs() > 1e-6 || tr.im.abs() > 1e-6 {
            return Err(Error::InvalidChoi(format!("{name} trace is {tr}, expected 1")));
        }
    }
    let sqrt_t = psd_sqrt(j_target)?;
    let inner = &(&sqrt_t * j_actual) * &sqrt_t;
    let eig = hermitian_eigen(&inner);
    let floor = RELATIVE_ZERO * eig.values.last().copied().unwrap_or(0.0).abs();
    let mut f = 0.0;
    for &v in &eig.values {
        f += clamp_psd(v, floor)?.sqrt();
    }
    Ok(f.clamp(0.0, 1.0))
}

fn clamp_psd(v: f64, floor: f64) -> Result<f64> {
    if v < -NEGATIVE_EIGENVALUE_SLACK {
        return Err(Error::InvalidChoi(format!("negative eigenvalue {v:e}")));
    }
    Ok(if v <= floor { 0.0 } else { v })
}

fn psd_sqrt(j: &Operator) -> Result<Operator> {
    let eig = hermitian_eigen(j);
    let floor = RELATIVE_ZERO * eig.values.last().copied().unwrap_or(0.0).abs();
    for &v in &eig.values {
        clamp_psd(v, floor)?;
    }
    Ok(eig.map_values(|v| if v <= floor { 0.0 } else { v.sqrt() }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{expm_skew, pauli_x, pauli_z};

    fn bell_projector() -> Operator {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let phi = [C64::new(s, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(s, 0.0)];
        Operator::projector(&phi)
    }

    #[test]
    fn identity_choi_is_bell_state() {
        let j = choi_of_unitary(&Operator::identity(2)).unwrap();
        assert!(j.distance(&bell_projector()) < 1e-15);
    }

    #[test]
    fn unitary_choi_is_rank_one_trace_one() {
        let u = expm_skew(&(&pauli_x() + &pauli_z().scale_real(0.3)), 0.9).unwrap();
        let j = choi_of_unitary(&u).unwrap();
        assert!((j.trace().re - 1.0).abs() < 1e-14);
        let eig = hermitian_eigen(&j);
        let nonzero = eig.values.iter().filter(|v| v.abs() > 1e-12).count();
        assert_eq!(nonzero, 1);
    }

    #[test]
    fn fidelity_self_and_orthogonal() {
        let ji = choi_of_unitary(&Operator::identity(2)).unwrap();
        let jx = choi_of_unitary(&pauli_x()).unwrap();
        assert!((process_fidelity(&ji, &ji).unwrap() - 1.0).abs() < 1e-7);
        assert!(process_fidelity(&ji, &jx).unwrap() < 1e-7);
    }

    #[test]
    fn fidelity_of_z_rotation_is_cos_half_angle() {
        let ji = choi_of_unitary(&Operator::identity(2)).unwrap();
        for theta in [0.1, 0.8, 2.0, 3.0] {
            let rz = expm_skew(&pauli_z(), theta / 2.0).unwrap();
            let jr = choi_of_unitary(&rz).unwrap();
            let f = process_fidelity(&ji, &jr).unwrap();
            // closed form: |tr(U)| / d for rank-one Choi states
            let oracle = (rz.trace().norm() / 2.0).min(1.0);
            assert!((f - oracle).abs() < 1e-7, "theta={theta}");
            assert!((f - (theta / 2.0).cos().abs()).abs() < 1e-7);
            assert!((f - process_fidelity(&jr, &ji).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_trace() {
        let j = choi_of_unitary(&Operator::identity(2)).unwrap();
        let bad = j.scale_real(2.0);
        assert!(matches!(process_fidelity(&j, &bad), Err(Error::InvalidChoi(_))));
    }

    #[test]
    fn mixed_channel_choi() {
        let j = choi_of_channel(&[Operator::identity(2), pauli_z()]).unwrap();
        assert!((j.trace().re - 1.0).abs() < 1e-14);
        let ji = choi_of_unitary(&Operator::identity(2)).unwrap();
        // dephasing by 50/50 Z: fidelity with identity is sqrt(1/2)
        let f = process_fidelity(&ji, &j).unwrap();
        assert!((f - 0.5f64.sqrt()).abs() < 1e-7);
    }
}
