//! Fast-grid simulation of the stochastic system and the send-on-delta
//! quantizer with hysteresis.
//!
//! Threshold levels live on the lattice `ℓ·τ`, `ℓ ∈ ℤ`. Every event moves the
//! transmitted level by exactly one lattice step, so events are stored as
//! integer levels and their values are always `level as f64 * τ`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::discretize::c2d_shift;
use crate::linalg::symmetric_sqrt;
use crate::model::{ContinuousModel, InitialState, ShiftModel};
use crate::{Error, Result};

/// Grid-aligned event record of the hysteresis quantizer.
#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord {
    pub tau: f64,
    pub delta: f64,
    /// `⌊z_0/τ⌋`.
    pub initial_level: i64,
    /// `⌊z_0/τ⌋·τ`.
    pub initial_value: f64,
    /// Event instants `t_l = k_l Δ`, strictly increasing.
    pub times: Vec<f64>,
    /// Transmitted threshold levels, each one step from its predecessor.
    pub levels: Vec<i64>,
    /// `levels[l] as f64 * τ`.
    pub values: Vec<f64>,
}

impl EventRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Grid indices of the events, or `OffGrid` if any time is not a multiple of Δ.
    pub fn grid_indices(&self) -> Result<Vec<usize>> {
        self.times
            .iter()
            .map(|&t| {
                let x = t / self.delta;
                let k = x.round();
                if k < 0.0 || (x - k).abs() > 1e-6 {
                    Err(Error::OffGrid { time: t, delta: self.delta })
                } else {
                    Ok(k as usize)
                }
            })
            .collect()
    }
}

/// How the censoring interval of each grid step is derived from the events.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensoringRule {
    /// The set of outputs consistent with the quantizer at each step: the floor
    /// band at the first step, the hysteresis band `[y−τ, y+τ]` while no event
    /// fires, and the half-line beyond the crossed threshold at an event.
    #[default]
    Exact,
    /// Floor band `[y₀, y₀+τ]` until the first event and `[y−τ, y+τ]` afterwards,
    /// event steps included.
    Band,
}

/// Per-grid-step held output and censoring interval.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedTrace {
    pub y: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub event_flag: Vec<bool>,
    pub delta: f64,
    pub tau: f64,
}

impl QuantizedTrace {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// A trace with no censoring information at all, `(−∞, ∞)` everywhere.
    pub fn uninformative(n: usize, delta: f64) -> Self {
        QuantizedTrace {
            y: vec![0.0; n],
            a: vec![f64::NEG_INFINITY; n],
            b: vec![f64::INFINITY; n],
            event_flag: vec![false; n],
            delta,
            tau: f64::INFINITY,
        }
    }

    /// Number of steps where `z_k ∉ [a_k, b_k]`.
    pub fn containment_violations(&self, z: &[f64]) -> usize {
        z.iter()
            .zip(self.a.iter().zip(&self.b))
            .filter(|(&zk, (&a, &b))| zk < a || zk > b)
            .count()
    }
}

/// States and noiseless output from [`simulate_sde`].
#[derive(Clone, Debug)]
pub struct Simulation {
    /// `N × n`, row `k` is `x_k`.
    pub states: DMatrix<f64>,
    pub z: Vec<f64>,
}

pub(crate) fn sample_gaussian(
    mean: &DVector<f64>,
    factor: &DMatrix<f64>,
    rng: &mut ChaCha8Rng,
) -> DVector<f64> {
    let xi = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(rng));
    mean + factor * xi
}

/// Exact-discretization simulation of the SDE under a zero-order-hold input.
pub fn simulate_sde(model: &ContinuousModel, u: &[f64], delta: f64, seed: u64) -> Result<Simulation> {
    let shift = c2d_shift(model, delta)?;
    simulate_shift(&shift, &model.initial_state(), u, seed)
}

/// Same as [`simulate_sde`] for a model already in shift form.
pub fn simulate_shift(
    model: &ShiftModel,
    prior: &InitialState,
    u: &[f64],
    seed: u64,
) -> Result<Simulation> {
    let n = model.ad.nrows();
    let noise = symmetric_sqrt(&model.qd, "Qd")?;
    let init = symmetric_sqrt(&prior.cov, "P1")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = sample_gaussian(&prior.mean, &init, &mut rng);
    let mut states = DMatrix::zeros(u.len(), n);
    let mut z = Vec::with_capacity(u.len());
    let zero = DVector::zeros(n);
    for (k, &uk) in u.iter().enumerate() {
        states.row_mut(k).copy_from(&x.transpose());
        z.push((&model.c * &x)[0] + model.d * uk);
        x = &model.ad * &x + &model.bd * uk + sample_gaussian(&zero, &noise, &mut rng);
    }
    Ok(Simulation { states, z })
}

/// I.i.d. Gaussian input samples held over each grid step.
pub fn gaussian_input(len: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| -> f64 { sigma * Distribution::<f64>::sample(&StandardNormal, &mut rng) }).collect()
}

/// Send-on-delta quantizer with hysteresis, detected on the Δ grid.
///
/// The first sample is floor-quantized; afterwards an event fires at the first
/// grid index where `|z_k − last| > τ`, and the transmitted value is the crossed
/// threshold `last ± τ`.
pub fn lebesgue_sample(z: &[f64], tau: f64, delta: f64) -> Result<EventRecord> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {tau}")));
    }
    let first = z.first().copied().unwrap_or(0.0);
    let initial_level = (first / tau).floor() as i64;
    let mut level = initial_level;
    let mut last = level as f64 * tau;
    let mut record = EventRecord {
        tau,
        delta,
        initial_level,
        initial_value: last,
        times: Vec::new(),
        levels: Vec::new(),
        values: Vec::new(),
    };
    for (k, &zk) in z.iter().enumerate().skip(1) {
        let gap = zk - last;
        if gap.abs() > tau {
            level += if gap > 0.0 { 1 } else { -1 };
            last = level as f64 * tau;
            record.times.push(k as f64 * delta);
            record.levels.push(level);
            record.values.push(last);
        }
    }
    Ok(record)
}

/// Zero-order hold of the event record plus the per-step censoring interval.
pub fn build_trace(events: &EventRecord, len: usize, rule: CensoringRule) -> Result<QuantizedTrace> {
    let indices = events.grid_indices()?;
    if indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("event times must be strictly increasing".into()));
    }
    if let Some(&k) = indices.last() {
        if k >= len {
            return Err(Error::InvalidArgument(format!("event at index {k} beyond trace length {len}")));
        }
    }
    if indices.first() == Some(&0) {
        return Err(Error::InvalidArgument("an event cannot coincide with the first sample".into()));
    }

    let tau = events.tau;
    let mut trace = QuantizedTrace {
        y: Vec::with_capacity(len),
        a: Vec::with_capacity(len),
        b: Vec::with_capacity(len),
        event_flag: vec![false; len],
        delta: events.delta,
        tau,
    };
    let mut next = indices.iter().zip(&events.values).peekable();
    let mut held = events.initial_value;
    let mut seen_event = false;
    for k in 0..len {
        let mut crossing = None;
        if let Some(&(&ke, &value)) = next.peek() {
            if ke == k {
                crossing = Some(value > held);
                held = value;
                seen_event = true;
                trace.event_flag[k] = true;
                next.next();
            }
        }
        let (a, b) = match rule {
            CensoringRule::Band if !seen_event => (held, held + tau),
            CensoringRule::Band => (held - tau, held + tau),
            CensoringRule::Exact => match crossing {
                _ if k == 0 => (held, held + tau),
                Some(true) => (held, f64::INFINITY),
                Some(false) => (f64::NEG_INFINITY, held),
                None => (held - tau, held + tau),
            },
        };
        trace.y.push(held);
        trace.a.push(a);
        trace.b.push(b);
    }
    Ok(trace)
}
