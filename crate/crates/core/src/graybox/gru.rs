//! Gated recurrent cell in the update/reset form
//!
//! ```text
//! z  = sigmoid(W_z x + U_z h + b_z)
//! r  = sigmoid(W_r x + U_r h + b_r)
//! n  = tanh(W_n x + U_n (r * h) + b_n)
//! h' = (1 - z) * n + z * h
//! ```
//!
//! Weights live in a flat buffer: `W` is `3H x I` row-major with the gate
//! blocks stacked z, r, n; `U` is `3H x H`; `b` has `3H` entries.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct GruShape {
    pub input: usize,
    pub hidden: usize,
}

impl GruShape {
    pub fn w_len(&self) -> usize {
        3 * self.hidden * self.input
    }

    pub fn u_len(&self) -> usize {
        3 * self.hidden * self.hidden
    }

    pub fn len(&self) -> usize {
        self.w_len() + self.u_len() + 3 * self.hidden
    }
}

/// Views into a cell's weights or gradients at `offset`.
pub(crate) struct GruView<'a> {
    pub w: &'a [f64],
    pub u: &'a [f64],
    pub b: &'a [f64],
}

pub(crate) fn view(buf: &[f64], offset: usize, shape: GruShape) -> GruView<'_> {
    let s = &buf[offset..offset + shape.len()];
    let (w, rest) = s.split_at(shape.w_len());
    let (u, b) = rest.split_at(shape.u_len());
    GruView { w, u, b }
}

pub(crate) struct GruViewMut<'a> {
    pub w: &'a mut [f64],
    pub u: &'a mut [f64],
    pub b: &'a mut [f64],
}

pub(crate) fn view_mut(buf: &mut [f64], offset: usize, shape: GruShape) -> GruViewMut<'_> {
    let s = &mut buf[offset..offset + shape.len()];
    let (w, rest) = s.split_at_mut(shape.w_len());
    let (u, b) = rest.split_at_mut(shape.u_len());
    GruViewMut { w, u, b }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out += W x` for row-major `W` of shape `rows x x.len()`.
#[inline]
pub(crate) fn gemv_acc(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `dx += W^T dy`.
#[inline]
pub(crate) fn gemv_t_acc(w: &[f64], dy: &[f64], dx: &mut [f64]) {
    let cols = dx.len();
    for (g, row) in dy.iter().zip(w.chunks_exact(cols)) {
        if *g == 0.0 {
            continue;
        }
        for (d, a) in dx.iter_mut().zip(row) {
            *d += g * a;
        }
    }
}

/// `dW += dy x^T`.
#[inline]
pub(crate) fn ger_acc(dw: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    for (g, row) in dy.iter().zip(dw.chunks_exact_mut(cols)) {
        if *g == 0.0 {
            continue;
        }
        for (d, a) in row.iter_mut().zip(x) {
            *d += g * a;
        }
    }
}

/// Saved activations of one step.
#[derive(Clone, Debug, Default)]
pub(crate) struct StepTape {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub n: Vec<f64>,
}

/// One step from `h_prev`; returns `h'` and the tape.
pub(crate) fn step(cell: &GruView, shape: GruShape, x: &[f64], h_prev: &[f64]) -> (Vec<f64>, StepTape) {
    let hd = shape.hidden;
    let mut gx = cell.b.to_vec();
    gemv_acc(cell.w, x, &mut gx);
    let mut gh = vec![0.0; 2 * hd];
    gemv_acc(&cell.u[..2 * hd * hd], h_prev, &mut gh);
    let z: Vec<f64> = (0..hd).map(|i| sigmoid(gx[i] + gh[i])).collect();
    let r: Vec<f64> = (0..hd).map(|i| sigmoid(gx[hd + i] + gh[hd + i])).collect();
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let mut an = gx[2 * hd..].to_vec();
    gemv_acc(&cell.u[2 * hd * hd..], &rh, &mut an);
    let n: Vec<f64> = an.iter().map(|a| a.tanh()).collect();
    let h: Vec<f64> = (0..hd).map(|i| (1.0 - z[i]) * n[i] + z[i] * h_prev[i]).collect();
    (
        h,
        StepTape {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            z,
            r,
            n,
        },
    )
}

/// Backward through one step. Accumulates weight gradients and returns
/// `(dL/dh_prev, dL/dx)`.
pub(crate) fn step_backward(
    cell: &GruView,
    grad: &mut GruViewMut,
    shape: GruShape,
    tape: &StepTape,
    dh: &[f64],
    want_dx: bool,
) -> (Vec<f64>, Vec<f64>) {
    let hd = shape.hidden;
    let h = &tape.h_prev;
    let mut da = vec![0.0; 3 * hd];
    let mut dh_prev: Vec<f64> = (0..hd).map(|i| dh[i] * tape.z[i]).collect();
    for i in 0..hd {
        let dz = dh[i] * (h[i] - tape.n[i]);
        let dn = dh[i] * (1.0 - tape.z[i]);
        da[i] = dz * tape.z[i] * (1.0 - tape.z[i]);
        da[2 * hd + i] = dn * (1.0 - tape.n[i] * tape.n[i]);
    }
    let un = &cell.u[2 * hd * hd..];
    let rh: Vec<f64> = tape.r.iter().zip(h).map(|(a, b)| a * b).collect();
    let mut drh = vec![0.0; hd];
    gemv_t_acc(un, &da[2 * hd..], &mut drh);
    for i in 0..hd {
        let dr = drh[i] * h[i];
        dh_prev[i] += drh[i] * tape.r[i];
        da[hd + i] = dr * tape.r[i] * (1.0 - tape.r[i]);
    }
    ger_acc(grad.w, &da, &tape.x);
    for (g, a) in grad.b.iter_mut().zip(&da) {
        *g += a;
    }
    ger_acc(&mut grad.u[..2 * hd * hd], &da[..2 * hd], h);
    ger_acc(&mut grad.u[2 * hd * hd..], &da[2 * hd..], &rh);
    gemv_t_acc(&cell.u[..2 * hd * hd], &da[..2 * hd], &mut dh_prev);
    let mut dx = Vec::new();
    if want_dx {
        dx = vec![0.0; shape.input];
        gemv_t_acc(cell.w, &da, &mut dx);
    }
    (dh_prev, dx)
}

/// Single step from a zero state: `h = (1 - z) * n` with the reset gate and
/// `U` dropping out. Returns `(h, z, n)`.
pub(crate) fn step_from_zero(cell: &GruView, shape: GruShape, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hd = shape.hidden;
    let cols = shape.input;
    let mut az = cell.b[..hd].to_vec();
    gemv_acc(&cell.w[..hd * cols], x, &mut az);
    let mut an = cell.b[2 * hd..].to_vec();
    gemv_acc(&cell.w[2 * hd * cols..], x, &mut an);
    let z: Vec<f64> = az.iter().map(|&a| sigmoid(a)).collect();
    let n: Vec<f64> = an.iter().map(|a| a.tanh()).collect();
    let h = z.iter().zip(&n).map(|(z, n)| (1.0 - z) * n).collect();
    (h, z, n)
}

/// Backward of [`step_from_zero`]; accumulates `dW_z, dW_n, db_z, db_n` and
/// adds `dL/dx` into `dx`.
pub(crate) fn step_from_zero_backward(
    cell: &GruView,
    grad: &mut GruViewMut,
    shape: GruShape,
    x: &[f64],
    z: &[f64],
    n: &[f64],
    dh: &[f64],
    dx: &mut [f64],
) {
    let hd = shape.hidden;
    let cols = shape.input;
    let daz: Vec<f64> = (0..hd).map(|i| -dh[i] * n[i] * z[i] * (1.0 - z[i])).collect();
    let dan: Vec<f64> = (0..hd)
        .map(|i| dh[i] * (1.0 - z[i]) * (1.0 - n[i] * n[i]))
        .collect();
    ger_acc(&mut grad.w[..hd * cols], &daz, x);
    ger_acc(&mut grad.w[2 * hd * cols..], &dan, x);
    for i in 0..hd {
        grad.b[i] += daz[i];
        grad.b[2 * hd + i] += dan[i];
    }
    gemv_t_acc(&cell.w[..hd * cols], &daz, dx);
    gemv_t_acc(&cell.w[2 * hd * cols..], &dan, dx);
}
