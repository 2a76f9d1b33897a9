//! Model types: the continuous-time SISO system, its discrete equivalents,
//! and the similarity-invariant parameters used for reporting and
//! convergence control.

use std::cmp::Ordering;

use nalgebra::{Complex, DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{all_finite, min_eigenvalue, relative_asymmetry, symmetrize, vec_finite};
use crate::{Error, Result};

/// Relative asymmetry below which `Q` and `P1` are silently symmetrized.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;
/// PSD check: smallest eigenvalue must be ≥ `-PSD_TOLERANCE · ‖·‖_F`.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// `dx = (A x + B u) dt + dw`, `z = C x + D u`, with `E{dw dwᵀ} = Q dt`
/// and `x(0) ~ N(mu1, P1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct ContinuousModel {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: RowDVector<f64>,
    pub d: f64,
    pub q: DMatrix<f64>,
    pub mu1: DVector<f64>,
    pub p1: DMatrix<f64>,
}

/// Zero-order-hold equivalent `x_{k+1} = Ad x_k + Bd u_k + w_k`, `w_k ~ N(0, Qd)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftModel {
    pub ad: DMatrix<f64>,
    pub bd: DVector<f64>,
    pub c: RowDVector<f64>,
    pub d: f64,
    pub qd: DMatrix<f64>,
    pub delta: f64,
}

/// Delta-operator form `x_{k+1} - x_k = Δ (Ain x_k + Bin u_k) + dw_k`,
/// `E{dw dwᵀ} = Δ Qin`.
#[derive(Clone, Debug, PartialEq)]
pub struct IncrementalModel {
    pub ain: DMatrix<f64>,
    pub bin: DVector<f64>,
    pub c: RowDVector<f64>,
    pub d: f64,
    pub qin: DMatrix<f64>,
    pub delta: f64,
}

/// Gaussian prior on the first state.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl ContinuousModel {
    pub fn scalar(a: f64, b: f64, c: f64, d: f64, q: f64, mu1: f64, p1: f64) -> Self {
        ContinuousModel {
            a: DMatrix::from_element(1, 1, a),
            b: DVector::from_element(1, b),
            c: RowDVector::from_element(1, c),
            d,
            q: DMatrix::from_element(1, 1, q),
            mu1: DVector::from_element(1, mu1),
            p1: DMatrix::from_element(1, 1, p1),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn initial_state(&self) -> InitialState {
        InitialState { mean: self.mu1.clone(), cov: self.p1.clone() }
    }

    pub fn validate(self) -> Result<Self> {
        validate(self)
    }

    /// Change of state basis `x' = T x`.
    pub fn similarity_transform(&self, t: &DMatrix<f64>) -> Result<Self> {
        let n = self.state_dim();
        if t.shape() != (n, n) {
            return Err(Error::Dimension(format!("transform is {:?}, state dimension is {n}", t.shape())));
        }
        let t_inv = t
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("similarity transform is singular".into()))?;
        Ok(ContinuousModel {
            a: t * &self.a * &t_inv,
            b: t * &self.b,
            c: &self.c * &t_inv,
            d: self.d,
            q: t * &self.q * t.transpose(),
            mu1: t * &self.mu1,
            p1: t * &self.p1 * t.transpose(),
        })
    }

    pub fn invariants(&self) -> InvariantParameters {
        invariant_parameters(self)
    }

    /// Reads the incremental-form matrices as continuous-time ones, keeping `prior`.
    pub fn from_incremental(m: &IncrementalModel, prior: &InitialState) -> Self {
        ContinuousModel {
            a: m.ain.clone(),
            b: m.bin.clone(),
            c: m.c.clone(),
            d: m.d,
            q: m.qin.clone(),
            mu1: prior.mean.clone(),
            p1: prior.cov.clone(),
        }
    }
}

fn check_covariance(m: &DMatrix<f64>, name: &'static str) -> Result<DMatrix<f64>> {
    let asym = relative_asymmetry(m);
    if asym > SYMMETRY_TOLERANCE {
        return Err(Error::NotSymmetric { name, asymmetry: asym });
    }
    let sym = symmetrize(m);
    let min = min_eigenvalue(&sym);
    if min < -PSD_TOLERANCE * sym.norm() {
        return Err(Error::NotPsd { name, min_eigenvalue: min });
    }
    Ok(sym)
}

/// Checks dimensions, finiteness, symmetry and PSD-ness of `Q` and `P1`.
/// Returns the model with `Q` and `P1` exactly symmetrized.
pub fn validate(model: ContinuousModel) -> Result<ContinuousModel> {
    let n = model.a.nrows();
    if n == 0 {
        return Err(Error::Dimension("state dimension must be at least 1".into()));
    }
    if model.a.ncols() != n {
        return Err(Error::Dimension(format!("A is {}×{}", n, model.a.ncols())));
    }
    if model.b.len() != n {
        return Err(Error::Dimension(format!("A is {n}×{n} but B is {}×1", model.b.len())));
    }
    if model.c.len() != n {
        return Err(Error::Dimension(format!("A is {n}×{n} but C is 1×{}", model.c.len())));
    }
    if model.q.shape() != (n, n) {
        return Err(Error::Dimension(format!("Q is {:?}, expected ({n}, {n})", model.q.shape())));
    }
    if model.p1.shape() != (n, n) {
        return Err(Error::Dimension(format!("P1 is {:?}, expected ({n}, {n})", model.p1.shape())));
    }
    if model.mu1.len() != n {
        return Err(Error::Dimension(format!("mu1 has length {}, expected {n}", model.mu1.len())));
    }
    if !all_finite(&model.a) {
        return Err(Error::NonFinite("A"));
    }
    if !vec_finite(&model.b) || !model.c.iter().all(|x| x.is_finite()) || !model.d.is_finite() {
        return Err(Error::NonFinite("B, C or D"));
    }
    if !all_finite(&model.q) {
        return Err(Error::NonFinite("Q"));
    }
    if !all_finite(&model.p1) || !vec_finite(&model.mu1) {
        return Err(Error::NonFinite("initial state"));
    }
    let q = check_covariance(&model.q, "Q")?;
    let p1 = check_covariance(&model.p1, "P1")?;
    Ok(ContinuousModel { q, p1, ..model })
}

/// Quantities unchanged by a change of state basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantParameters {
    /// Eigenvalues of `A` as `(re, im)`, sorted by real then imaginary part.
    pub eigenvalues: Vec<(f64, f64)>,
    pub cb: f64,
    pub d: f64,
    pub cqc: f64,
}

impl InvariantParameters {
    /// `[re_1, im_1, …, re_n, im_n, CB, D, CQCᵀ]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.eigenvalues.iter().flat_map(|&(re, im)| [re, im]).collect();
        v.extend([self.cb, self.d, self.cqc]);
        v
    }

    /// Column names matching [`to_vec`](Self::to_vec).
    pub fn names(n: usize) -> Vec<String> {
        let mut names = Vec::with_capacity(2 * n + 3);
        for i in 1..=n {
            names.push(format!("eig_re_{i}"));
            names.push(format!("eig_im_{i}"));
        }
        names.extend(["cb".to_string(), "d".to_string(), "cqc".to_string()]);
        names
    }

    /// `‖self − previous‖₂ / ‖previous‖₂`.
    pub fn relative_change(&self, previous: &InvariantParameters) -> f64 {
        let a = self.to_vec();
        let b = previous.to_vec();
        let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        diff / norm.max(1e-300)
    }
}

fn sort_eigenvalues(eigs: &mut [Complex<f64>]) {
    eigs.sort_by(|x, y| match x.re.total_cmp(&y.re) {
        Ordering::Equal => x.im.total_cmp(&y.im),
        other => other,
    });
}

pub fn invariant_parameters(model: &ContinuousModel) -> InvariantParameters {
    let mut eigs: Vec<Complex<f64>> = model.a.complex_eigenvalues().iter().cloned().collect();
    sort_eigenvalues(&mut eigs);
    let cb = (&model.c * &model.b)[(0, 0)];
    let cqc = (&model.c * &model.q * model.c.transpose())[(0, 0)];
    InvariantParameters {
        eigenvalues: eigs.into_iter().map(|z| (z.re, z.im)).collect(),
        cb,
        d: model.d,
        cqc,
    }
}

// JSON model file: matrices are row-major nested arrays.

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum VectorRepr {
    Nested(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

impl VectorRepr {
    fn into_flat(self) -> Vec<f64> {
        match self {
            VectorRepr::Flat(v) => v,
            VectorRepr::Nested(rows) => rows.into_iter().flatten().collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: VectorRepr,
    #[serde(rename = "C")]
    c: VectorRepr,
    #[serde(rename = "D")]
    d: f64,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    mu1: Vec<f64>,
    #[serde(rename = "P1")]
    p1: Vec<Vec<f64>>,
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension(format!("{name} has ragged rows")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl TryFrom<ModelFile> for ContinuousModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        let a = matrix_from_rows(&f.a, "A")?;
        let q = matrix_from_rows(&f.q, "Q")?;
        let p1 = matrix_from_rows(&f.p1, "P1")?;
        Ok(ContinuousModel {
            a,
            b: DVector::from_vec(f.b.into_flat()),
            c: RowDVector::from_vec(f.c.into_flat()),
            d: f.d,
            q,
            mu1: DVector::from_vec(f.mu1),
            p1,
        })
    }
}

impl From<ContinuousModel> for ModelFile {
    fn from(m: ContinuousModel) -> Self {
        ModelFile {
            a: matrix_to_rows(&m.a),
            b: VectorRepr::Nested(m.b.iter().map(|&x| vec![x]).collect()),
            c: VectorRepr::Nested(vec![m.c.iter().copied().collect()]),
            d: m.d,
            q: matrix_to_rows(&m.q),
            mu1: m.mu1.iter().copied().collect(),
            p1: matrix_to_rows(&m.p1),
        }
    }
}
