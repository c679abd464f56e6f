use std::f64::consts::PI;

use super::{hermitian_eigen, HermitianEigen, Operator, C64, I, ONE};
use crate::error::{Error, Result};

/// An ordered Hermitian operator basis with precomputed eigensystems.
#[derive(Clone, Debug)]
pub struct ObservableBasis {
    dim: usize,
    elements: Vec<Operator>,
    eigensystems: Vec<HermitianEigen>,
}

impl ObservableBasis {
    pub fn new(dim: usize, elements: Vec<Operator>) -> Self {
        let eigensystems = elements.iter().map(hermitian_eigen).collect();
        Self {
            dim,
            elements,
            eigensystems,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[Operator] {
        &self.elements
    }

    pub fn element(&self, i: usize) -> &Operator {
        &self.elements[i]
    }

    pub fn eigensystem(&self, j: usize) -> &HermitianEigen {
        &self.eigensystems[j]
    }

    /// Initial states of the informationally complete set in dataset order:
    /// for each element `j`, each of its eigenvectors `k`.
    pub fn initial_states(&self) -> Vec<Vec<C64>> {
        self.eigensystems
            .iter()
            .flat_map(|e| (0..self.dim).map(move |k| e.vector(k)))
            .collect()
    }

    /// Coefficients `c_i = tr(O A_i) / tr(A_i A_i)` of `O` in this basis.
    pub fn coefficients(&self, o: &Operator) -> Vec<f64> {
        self.elements
            .iter()
            .map(|a| (o.trace_product(a) / a.trace_product(a)).re)
            .collect()
    }
}

/// The `d^2 - 1` generalized Gell-Mann matrices.
///
/// Order: symmetric `|j><k| + |k><j|` for `j < k` lexicographic, then the
/// antisymmetric `-i(|j><k| - |k><j|)` in the same order, then the diagonal
/// `sqrt(2/(l(l+1))) (sum_{m<l} |m><m| - l |l><l|)` for `l = 1..d-1`.
pub fn gell_mann_basis(d: usize) -> Result<ObservableBasis> {
    if d < 2 {
        return Err(Error::InvalidDimension(d));
    }
    let mut elements = Vec::with_capacity(d * d - 1);
    for j in 0..d {
        for k in j + 1..d {
            let mut m = Operator::zeros(d);
            m[(j, k)] = ONE;
            m[(k, j)] = ONE;
            elements.push(m);
        }
    }
    for j in 0..d {
        for k in j + 1..d {
            let mut m = Operator::zeros(d);
            m[(j, k)] = -I;
            m[(k, j)] = I;
            elements.push(m);
        }
    }
    for l in 1..d {
        let norm = (2.0 / (l * (l + 1)) as f64).sqrt();
        let mut diag = vec![0.0; d];
        diag[..l].iter_mut().for_each(|x| *x = norm);
        diag[l] = -(l as f64) * norm;
        elements.push(Operator::diag_real(&diag));
    }
    Ok(ObservableBasis::new(d, elements))
}

/// Shift and clock matrices with the derived operator families.
#[derive(Clone, Debug)]
pub struct ClockShiftBasis {
    /// Cyclic shift `|j+1 mod d> -> |j>`, the orientation for which
    /// `shift * clock = w * clock * shift`.
    pub shift: Operator,
    /// `diag(1, w, ..., w^(d-1))` with `w = exp(2 pi i / d)`.
    pub clock: Operator,
    /// `sigma_{j,k} = shift^j clock^k`, indexed `j * d + k`.
    pub gates: Vec<Operator>,
    /// `(sigma + sigma^dagger)/2` and `(sigma - sigma^dagger)/(2i)` for every
    /// `(j, k)`, interleaved: index `2 (j d + k)` is the Hermitian part.
    pub hermitian_set: Vec<Operator>,
}

impl ClockShiftBasis {
    pub fn gate(&self, j: usize, k: usize) -> &Operator {
        let d = self.shift.dim();
        &self.gates[(j % d) * d + (k % d)]
    }
}

pub fn clock_shift_basis(d: usize) -> Result<ClockShiftBasis> {
    if d < 2 {
        return Err(Error::InvalidDimension(d));
    }
    let mut shift = Operator::zeros(d);
    for j in 0..d {
        shift[(j, (j + 1) % d)] = ONE;
    }
    let clock = Operator::diag(&(0..d).map(|k| root_of_unity(k, d)).collect::<Vec<_>>());
    let mut gates = Vec::with_capacity(d * d);
    let mut hermitian_set = Vec::with_capacity(2 * d * d);
    for j in 0..d {
        let sj = shift.powi(j as u32);
        for k in 0..d {
            let g = &sj * &clock.powi(k as u32);
            let gd = g.adjoint();
            hermitian_set.push((&g + &gd).scale_real(0.5));
            hermitian_set.push((&g - &gd).scale(C64::new(0.0, -0.5)));
            gates.push(g);
        }
    }
    Ok(ClockShiftBasis {
        shift,
        clock,
        gates,
        hermitian_set,
    })
}

/// `exp(2 pi i k / d)` with the exact values at the quarter turns.
fn root_of_unity(k: usize, d: usize) -> C64 {
    let k = k % d;
    if 4 * k % d == 0 {
        return match 4 * k / d {
            0 => ONE,
            1 => I,
            2 => -ONE,
            _ => -I,
        };
    }
    C64::from_polar(1.0, 2.0 * PI * k as f64 / d as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{pauli_x, pauli_y, pauli_z};

    #[test]
    fn qubit_gell_mann_is_pauli() {
        let b = gell_mann_basis(2).unwrap();
        assert_eq!(b.len(), 3);
        assert_eq!(b.element(0), &pauli_x());
        assert_eq!(b.element(1), &pauli_y());
        assert_eq!(b.element(2), &pauli_z());
    }

    #[test]
    fn qutrit_last_diagonal() {
        let b = gell_mann_basis(3).unwrap();
        let s = (1.0f64 / 3.0).sqrt();
        let expected = Operator::diag_real(&[s, s, -2.0 * s]);
        assert!(b.element(7).distance(&expected) < 1e-15);
    }

    #[test]
    fn gell_mann_orthogonality() {
        for d in 2..=5 {
            let b = gell_mann_basis(d).unwrap();
            assert_eq!(b.len(), d * d - 1);
            for (i, a) in b.elements().iter().enumerate() {
                assert!(a.trace().norm() < 1e-12);
                assert!(a.is_hermitian(1e-12));
                for (j, c) in b.elements().iter().enumerate() {
                    let expected = if i == j { 2.0 } else { 0.0 };
                    assert!((a.trace_product(c) - expected).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn invalid_dimension() {
        assert!(matches!(gell_mann_basis(1), Err(Error::InvalidDimension(1))));
        assert!(matches!(clock_shift_basis(0), Err(Error::InvalidDimension(0))));
    }

    #[test]
    fn qubit_clock_shift() {
        let cs = clock_shift_basis(2).unwrap();
        assert_eq!(cs.shift, pauli_x());
        assert_eq!(cs.clock, pauli_z());
        assert_eq!(cs.gate(1, 1), &(&cs.shift * &cs.clock));
    }

    #[test]
    fn identity_element_parts() {
        let cs = clock_shift_basis(3).unwrap();
        assert_eq!(cs.gate(0, 0), &Operator::identity(3));
        assert_eq!(cs.hermitian_set[0], Operator::identity(3));
        assert!(cs.hermitian_set[1].max_abs() < 1e-15);
    }

    #[test]
    fn commutation_and_order() {
        for d in 2..=5 {
            let cs = clock_shift_basis(d).unwrap();
            let w = root_of_unity(1, d);
            let lhs = &cs.shift * &cs.clock;
            let rhs = (&cs.clock * &cs.shift).scale(w);
            assert!(lhs.distance(&rhs) < 1e-12);
            let id = Operator::identity(d);
            assert!(cs.shift.powi(d as u32).distance(&id) < 1e-12);
            assert!(cs.clock.powi(d as u32).distance(&id) < 1e-12);
        }
    }

    #[test]
    fn hermitian_parts_reconstruct_gates() {
        let cs = clock_shift_basis(4).unwrap();
        for (n, g) in cs.gates.iter().enumerate() {
            let h = &cs.hermitian_set[2 * n];
            let a = &cs.hermitian_set[2 * n + 1];
            assert!(h.is_hermitian(1e-14) && a.is_hermitian(1e-14));
            let back = h + &a.scale(I);
            assert!(back.distance(g) < 1e-14);
        }
    }
}
