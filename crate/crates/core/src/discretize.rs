//! Exact zero-order-hold discretization and the shift ↔ incremental maps.

use nalgebra::DMatrix;

use crate::linalg::{all_finite, clip_eigenvalues, min_eigenvalue, symmetrize};
use crate::model::{ContinuousModel, IncrementalModel, ShiftModel, PSD_TOLERANCE};
use crate::{Error, Result};

/// `exp(M)` by scaling and squaring with a degree-13 Padé approximant.
pub fn matrix_exponential(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!("matrix exponential of a {:?} matrix", m.shape())));
    }
    if !all_finite(m) {
        return Err(Error::NonFinite("matrix exponential argument"));
    }
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    Ok(m.exp())
}

/// Zero-order-hold equivalent on a grid of step `delta`.
///
/// `Bd = ∫₀^Δ e^{As} ds B` comes from the exponential of `[[A, B], [0, 0]]·Δ`
/// and `Qd = ∫₀^Δ e^{As} Q e^{Aᵀs} ds` from the exponential of
/// `[[−A, Q], [0, Aᵀ]]·Δ` (Van Loan), so `A` may be singular.
pub fn c2d_shift(model: &ContinuousModel, delta: f64) -> Result<ShiftModel> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {delta}")));
    }
    let n = model.state_dim();
    let ad = matrix_exponential(&(&model.a * delta))?;

    let mut aug = DMatrix::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&model.a);
    aug.view_mut((0, n), (n, 1)).copy_from(&model.b);
    let e = matrix_exponential(&(aug * delta))?;
    let bd = e.view((0, n), (n, 1)).column(0).into_owned();

    let mut vl = DMatrix::zeros(2 * n, 2 * n);
    vl.view_mut((0, 0), (n, n)).copy_from(&(-&model.a));
    vl.view_mut((0, n), (n, n)).copy_from(&model.q);
    vl.view_mut((n, n), (n, n)).copy_from(&model.a.transpose());
    let f = matrix_exponential(&(vl * delta))?;
    let f12 = f.view((0, n), (n, n));
    let f22 = f.view((n, n), (n, n));
    let mut qd = symmetrize(&(f22.transpose() * f12));

    let min = min_eigenvalue(&qd);
    if min < 0.0 {
        if min < -PSD_TOLERANCE * qd.norm() {
            return Err(Error::NotPsd { name: "Qd", min_eigenvalue: min });
        }
        qd = clip_eigenvalues(&qd, 0.0);
    }

    Ok(ShiftModel { ad, bd, c: model.c.clone(), d: model.d, qd, delta })
}

/// `Ain = (Ad − I)/Δ`, `Bin = Bd/Δ`, `Qin = Qd/Δ`.
pub fn shift_to_incremental(m: &ShiftModel) -> IncrementalModel {
    let n = m.ad.nrows();
    IncrementalModel {
        ain: (&m.ad - DMatrix::identity(n, n)) / m.delta,
        bin: &m.bd / m.delta,
        c: m.c.clone(),
        d: m.d,
        qin: &m.qd / m.delta,
        delta: m.delta,
    }
}

/// `Ad = I + Δ Ain`, `Bd = Δ Bin`, `Qd = Δ Qin`.
pub fn incremental_to_shift(m: &IncrementalModel) -> ShiftModel {
    let n = m.ain.nrows();
    ShiftModel {
        ad: DMatrix::identity(n, n) + &m.ain * m.delta,
        bd: &m.bin * m.delta,
        c: m.c.clone(),
        d: m.d,
        qd: &m.qin * m.delta,
        delta: m.delta,
    }
}
