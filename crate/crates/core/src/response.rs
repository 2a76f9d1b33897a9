//! Frequency response `G(jω) = C (jωI − A)⁻¹ B + D` of a continuous model.

use nalgebra::{Complex, DMatrix, DVector};

use crate::model::ContinuousModel;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrequencyPoint {
    pub omega: f64,
    pub gain: Complex<f64>,
}

impl FrequencyPoint {
    pub fn magnitude_db(&self) -> f64 {
        20.0 * self.gain.norm().log10()
    }

    pub fn phase_deg(&self) -> f64 {
        self.gain.arg().to_degrees()
    }
}

#[derive(Clone, Debug, Default)]
pub struct FrequencyResponse {
    pub points: Vec<FrequencyPoint>,
    /// Frequencies where `jωI − A` was singular.
    pub skipped: Vec<f64>,
}

impl FrequencyResponse {
    /// Phase in degrees, unwrapped along the grid.
    pub fn unwrapped_phase_deg(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::with_capacity(self.points.len());
        for p in &self.points {
            let mut phase = p.phase_deg();
            if let Some(&prev) = out.last() {
                phase += 360.0 * ((prev - phase) / 360.0).round();
            }
            out.push(phase);
        }
        out
    }
}

/// `points` log-spaced frequencies from `min` to `max` inclusive.
pub fn log_grid(min: f64, max: f64, points: usize) -> Result<Vec<f64>> {
    if !(min > 0.0) || !(max >= min) || !max.is_finite() {
        return Err(Error::InvalidArgument(format!("frequency grid needs 0 < min ≤ max, got [{min}, {max}]")));
    }
    match points {
        0 => Err(Error::InvalidArgument("frequency grid needs at least one point".into())),
        1 => Ok(vec![min]),
        _ => {
            let (lo, hi) = (min.log10(), max.log10());
            let step = (hi - lo) / (points - 1) as f64;
            Ok((0..points).map(|i| if i + 1 == points { max } else { 10f64.powf(lo + step * i as f64) }).collect())
        }
    }
}

pub fn frequency_response(model: &ContinuousModel, omegas: &[f64]) -> FrequencyResponse {
    let n = model.a.nrows();
    let mut out = FrequencyResponse::default();
    let b: DVector<Complex<f64>> = model.b.map(|x| Complex::new(x, 0.0));
    for &omega in omegas {
        if n == 0 {
            out.points.push(FrequencyPoint { omega, gain: Complex::new(model.d, 0.0) });
            continue;
        }
        let resolvent = DMatrix::from_fn(n, n, |i, j| {
            let diag = if i == j { Complex::new(0.0, omega) } else { Complex::new(0.0, 0.0) };
            diag - Complex::new(model.a[(i, j)], 0.0)
        });
        let solved = resolvent.lu().solve(&b).filter(|x| x.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
        match solved {
            Some(x) => {
                let gain = model.c.iter().zip(x.iter()).map(|(&c, z)| z * c).sum::<Complex<f64>>() + model.d;
                out.points.push(FrequencyPoint { omega, gain });
            }
            None => out.skipped.push(omega),
        }
    }
    out
}

/// Largest `| |G₁(jω)|_dB − |G₂(jω)|_dB |` over frequencies where both are defined.
pub fn max_magnitude_deviation_db(a: &ContinuousModel, b: &ContinuousModel, omegas: &[f64]) -> f64 {
    let ra = frequency_response(a, omegas);
    let rb = frequency_response(b, omegas);
    let mut worst = 0.0f64;
    let mut j = 0;
    for p in &ra.points {
        while j < rb.points.len() && rb.points[j].omega < p.omega {
            j += 1;
        }
        if let Some(q) = rb.points.get(j).filter(|q| q.omega == p.omega) {
            worst = worst.max((p.magnitude_db() - q.magnitude_db()).abs());
        }
    }
    worst
}
