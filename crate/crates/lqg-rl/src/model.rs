//! Problem definition: system matrices, noise covariances and quadratic costs,
//! with validated construction and cost evaluation.

use nalgebra::{DMatrix, DVector};
use serde_json::Value;

use crate::{Error, Result};

/// Relative tolerance for accepting slightly negative eigenvalues in PSD checks.
pub const PSD_TOL: f64 = 1e-10;

/// Linear dynamics x' = F x + G u + w and observation y = H x + e,
/// with Gaussian white noises w ~ N(0, W), e ~ N(0, E) and initial state
/// x_1 ~ N(x1_mean, sigma1).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    /// State transition, n x n.
    pub f: DMatrix<f64>,
    /// Control gain, n x m.
    pub g: DMatrix<f64>,
    /// Observation map, k x n.
    pub h: DMatrix<f64>,
    /// Process-noise covariance, n x n.
    pub w: DMatrix<f64>,
    /// Observation-noise covariance, k x k.
    pub e: DMatrix<f64>,
    /// Initial state mean.
    pub x1_mean: DVector<f64>,
    /// Initial state covariance.
    pub sigma1: DMatrix<f64>,
}

/// Quadratic step cost x^T Q x + u^T R u, final cost x^T Qf x, and the
/// per-step stopping probability p.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qf: DMatrix<f64>,
    pub p: f64,
}

/// A system/cost pair that has passed [`validate_system`]. Covariance and cost
/// matrices are symmetrized and eigenvalue-clamped; all dimensions are
/// mutually consistent. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedModel {
    system: LinearSystem,
    cost: CostModel,
}

impl ValidatedModel {
    pub fn system(&self) -> &LinearSystem {
        &self.system
    }

    pub fn cost(&self) -> &CostModel {
        &self.cost
    }

    /// State dimension n.
    pub fn state_dim(&self) -> usize {
        self.system.f.nrows()
    }

    /// Control dimension m.
    pub fn control_dim(&self) -> usize {
        self.system.g.ncols()
    }

    /// Observation dimension k.
    pub fn obs_dim(&self) -> usize {
        self.system.h.nrows()
    }
}

fn dim_err(name: &str, expected: String, rows: usize, cols: usize) -> Error {
    Error::DimensionMismatch {
        name: name.to_string(),
        expected,
        actual: format!("{rows}x{cols}"),
    }
}

fn check_shape(m: &DMatrix<f64>, name: &str, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(dim_err(name, format!("{rows}x{cols}"), m.nrows(), m.ncols()));
    }
    Ok(())
}

/// (M + M^T)/2. Exactly the identity on symmetric inputs.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetrize, check eigenvalues against `-PSD_TOL * scale`, and clamp any
/// negative eigenvalues to zero. Returns the repaired matrix.
fn check_psd(m: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    let sym = symmetrize(m);
    let eig = sym.clone().symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    let min = eig.eigenvalues.min();
    if min < -PSD_TOL * scale {
        return Err(Error::NotPsd {
            name: name.to_string(),
            eigenvalue: min,
        });
    }
    if min < 0.0 {
        let clamped = eig.eigenvalues.map(|l| l.max(0.0));
        let rebuilt = &eig.eigenvectors
            * DMatrix::from_diagonal(&clamped)
            * eig.eigenvectors.transpose();
        Ok(symmetrize(&rebuilt))
    } else {
        Ok(sym)
    }
}

/// Symmetrize and require the smallest eigenvalue to be strictly positive.
fn check_pd(m: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    let sym = symmetrize(m);
    let min = sym.clone().symmetric_eigen().eigenvalues.min();
    if min <= 0.0 {
        return Err(Error::NotPd {
            name: name.to_string(),
            eigenvalue: min,
        });
    }
    Ok(sym)
}

/// Check all invariants of the pair and return it in canonical form:
/// symmetric inputs are re-symmetrized as (M + M^T)/2 before the checks and
/// slightly negative eigenvalues are clamped to zero.
pub fn validate_system(system: LinearSystem, cost: CostModel) -> Result<ValidatedModel> {
    let n = system.f.nrows();
    if system.f.ncols() != n || n == 0 {
        return Err(dim_err("F", "square n x n, n >= 1".into(), system.f.nrows(), system.f.ncols()));
    }
    let m = system.g.ncols();
    if system.g.nrows() != n || m == 0 {
        return Err(dim_err("G", format!("{n}x m, m >= 1"), system.g.nrows(), system.g.ncols()));
    }
    let k = system.h.nrows();
    if system.h.ncols() != n || k == 0 {
        return Err(dim_err("H", format!("k x {n}, k >= 1"), system.h.nrows(), system.h.ncols()));
    }
    check_shape(&system.w, "W", n, n)?;
    check_shape(&system.e, "E", k, k)?;
    check_shape(&system.sigma1, "Sigma1", n, n)?;
    if system.x1_mean.len() != n {
        return Err(dim_err("x1_mean", format!("{n}x1"), system.x1_mean.len(), 1));
    }
    check_shape(&cost.q, "Q", n, n)?;
    check_shape(&cost.r, "R", m, m)?;
    check_shape(&cost.qf, "Qf", n, n)?;
    if !(cost.p > 0.0 && cost.p <= 1.0) {
        return Err(Error::ProbabilityOutOfRange { p: cost.p });
    }

    let system = LinearSystem {
        w: check_psd(&system.w, "W")?,
        e: check_psd(&system.e, "E")?,
        sigma1: check_psd(&system.sigma1, "Sigma1")?,
        ..system
    };
    let cost = CostModel {
        q: check_psd(&cost.q, "Q")?,
        r: check_pd(&cost.r, "R")?,
        qf: check_psd(&cost.qf, "Qf")?,
        p: cost.p,
    };
    Ok(ValidatedModel { system, cost })
}

/// Step cost c(x, u) = x^T Q x + u^T R u.
pub fn step_cost(x: &DVector<f64>, u: &DVector<f64>, cost: &CostModel) -> Result<f64> {
    if x.len() != cost.q.nrows() {
        return Err(dim_err("x", format!("{}x1", cost.q.nrows()), x.len(), 1));
    }
    if u.len() != cost.r.nrows() {
        return Err(dim_err("u", format!("{}x1", cost.r.nrows()), u.len(), 1));
    }
    Ok((x.transpose() * &cost.q * x)[(0, 0)] + (u.transpose() * &cost.r * u)[(0, 0)])
}

/// Final cost c_f(x) = x^T Qf x.
pub fn final_cost(x: &DVector<f64>, cost: &CostModel) -> Result<f64> {
    if x.len() != cost.qf.nrows() {
        return Err(dim_err("x", format!("{}x1", cost.qf.nrows()), x.len(), 1));
    }
    Ok((x.transpose() * &cost.qf * x)[(0, 0)])
}

// ---------------------------------------------------------------------------
// JSON model documents
// ---------------------------------------------------------------------------

fn parse_err(path: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        message: message.into(),
    }
}

/// Look up a required key, reporting the full key path on failure.
pub fn json_get<'a>(v: &'a Value, parent: &str, key: &str) -> Result<&'a Value> {
    let path = if parent.is_empty() {
        key.to_string()
    } else {
        format!("{parent}.{key}")
    };
    v.as_object()
        .ok_or_else(|| parse_err(parent, "expected an object"))?
        .get(key)
        .ok_or_else(|| parse_err(&path, "missing key"))
}

pub fn json_number(v: &Value, path: &str) -> Result<f64> {
    v.as_f64().ok_or_else(|| parse_err(path, "expected a number"))
}

/// Parse a row-major nested array of numbers into a matrix. Rows must be
/// nonempty and of equal length.
pub fn json_matrix(v: &Value, path: &str) -> Result<DMatrix<f64>> {
    let rows = v
        .as_array()
        .ok_or_else(|| parse_err(path, "expected an array of rows"))?;
    if rows.is_empty() {
        return Err(parse_err(path, "matrix has no rows"));
    }
    let mut data: Vec<f64> = Vec::new();
    let mut ncols = None;
    for (i, row) in rows.iter().enumerate() {
        let row = row
            .as_array()
            .ok_or_else(|| parse_err(&format!("{path}[{i}]"), "expected an array of numbers"))?;
        match ncols {
            None => ncols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(parse_err(
                    &format!("{path}[{i}]"),
                    format!("row length {} differs from {}", row.len(), c),
                ));
            }
            _ => {}
        }
        for (j, x) in row.iter().enumerate() {
            data.push(json_number(x, &format!("{path}[{i}][{j}]"))?);
        }
    }
    let ncols = ncols.unwrap();
    if ncols == 0 {
        return Err(parse_err(path, "matrix has zero columns"));
    }
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &data))
}

pub fn json_vector(v: &Value, path: &str) -> Result<DVector<f64>> {
    let items = v
        .as_array()
        .ok_or_else(|| parse_err(path, "expected an array of numbers"))?;
    let mut data = Vec::with_capacity(items.len());
    for (i, x) in items.iter().enumerate() {
        data.push(json_number(x, &format!("{path}[{i}]"))?);
    }
    Ok(DVector::from_vec(data))
}

pub fn matrix_to_json(m: &DMatrix<f64>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| m[(i, j)].into()).collect()))
            .collect(),
    )
}

pub fn vector_to_json(v: &DVector<f64>) -> Value {
    Value::Array(v.iter().map(|&x| x.into()).collect())
}

/// Parse a model document: {"system": {F,G,H,W,E,x1_mean,Sigma1},
/// "cost": {Q,R,Qf,p}} with matrices as row-major nested arrays.
pub fn model_from_json(doc: &Value) -> Result<ValidatedModel> {
    let sys = json_get(doc, "", "system")?;
    let system = LinearSystem {
        f: json_matrix(json_get(sys, "system", "F")?, "system.F")?,
        g: json_matrix(json_get(sys, "system", "G")?, "system.G")?,
        h: json_matrix(json_get(sys, "system", "H")?, "system.H")?,
        w: json_matrix(json_get(sys, "system", "W")?, "system.W")?,
        e: json_matrix(json_get(sys, "system", "E")?, "system.E")?,
        x1_mean: json_vector(json_get(sys, "system", "x1_mean")?, "system.x1_mean")?,
        sigma1: json_matrix(json_get(sys, "system", "Sigma1")?, "system.Sigma1")?,
    };
    let cost_v = json_get(doc, "", "cost")?;
    let cost = CostModel {
        q: json_matrix(json_get(cost_v, "cost", "Q")?, "cost.Q")?,
        r: json_matrix(json_get(cost_v, "cost", "R")?, "cost.R")?,
        qf: json_matrix(json_get(cost_v, "cost", "Qf")?, "cost.Qf")?,
        p: json_number(json_get(cost_v, "cost", "p")?, "cost.p")?,
    };
    validate_system(system, cost)
}

/// Serialize a validated model back into the document format accepted by
/// [`model_from_json`].
pub fn model_to_json(model: &ValidatedModel) -> Value {
    let s = model.system();
    let c = model.cost();
    serde_json::json!({
        "system": {
            "F": matrix_to_json(&s.f),
            "G": matrix_to_json(&s.g),
            "H": matrix_to_json(&s.h),
            "W": matrix_to_json(&s.w),
            "E": matrix_to_json(&s.e),
            "x1_mean": vector_to_json(&s.x1_mean),
            "Sigma1": matrix_to_json(&s.sigma1),
        },
        "cost": {
            "Q": matrix_to_json(&c.q),
            "R": matrix_to_json(&c.r),
            "Qf": matrix_to_json(&c.qf),
            "p": c.p,
        },
    })
}
