//! Problem instances, iterate points, objective values, residual checks,
//! the instance file format and the seeded random instance generator.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed instance file: {0}")]
    Parse(String),
    #[error("inconsistent instance structure: {0}")]
    Structure(String),
    #[error("degenerate vector: e^T x = {sum:e} after clipping")]
    DegenerateVector { sum: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// A QEiCP triple `(A, B, C)`: find `λ`, `x ≥ 0`, `x ≠ 0` with
/// `w = λ²Ax + λBx + Cx ≥ 0` and `xᵀw = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QeicpInstance {
    pub n: usize,
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub label: String,
}

impl QeicpInstance {
    pub fn new(
        a: Matrix,
        b: Matrix,
        c: Matrix,
        label: impl Into<String>,
    ) -> Result<Self, ModelError> {
        let n = a.rows();
        if n == 0 {
            return Err(ModelError::Structure("dimension must be at least 1".into()));
        }
        for (name, m) in [("A", &a), ("B", &b), ("C", &c)] {
            if m.rows() != n || m.cols() != n {
                return Err(ModelError::Structure(format!(
                    "matrix {name} is {}x{}, expected {n}x{n}",
                    m.rows(),
                    m.cols()
                )));
            }
            m.check_finite()?;
        }
        Ok(Self {
            n,
            a,
            b,
            c,
            label: label.into(),
        })
    }

    /// `λ²A + λB + C` applied to `x`.
    pub fn apply_pencil(&self, lambda: f64, x: &[f64]) -> Vec<f64> {
        let ax = self.a.mul_vec(x);
        let bx = self.b.mul_vec(x);
        let cx = self.c.mul_vec(x);
        (0..self.n)
            .map(|i| lambda * lambda * ax[i] + lambda * bx[i] + cx[i])
            .collect()
    }

    /// `Az + By + Cx`.
    pub fn linear_w(&self, x: &[f64], y: &[f64], z: &[f64]) -> Vec<f64> {
        let az = self.a.mul_vec(z);
        let by = self.b.mul_vec(y);
        let cx = self.c.mul_vec(x);
        (0..self.n).map(|i| az[i] + by[i] + cx[i]).collect()
    }
}

/// Offsets of the blocks in the flattened `(x, y, z, w, λ)` vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarLayout {
    pub n: usize,
}

impl VarLayout {
    pub fn new(n: usize) -> Self {
        Self { n }
    }
    pub fn x(&self, i: usize) -> usize {
        i
    }
    pub fn y(&self, i: usize) -> usize {
        self.n + i
    }
    pub fn z(&self, i: usize) -> usize {
        2 * self.n + i
    }
    pub fn w(&self, i: usize) -> usize {
        3 * self.n + i
    }
    pub fn lambda(&self) -> usize {
        4 * self.n
    }
    /// Number of primal variables, `4n + 1`.
    pub fn dim(&self) -> usize {
        4 * self.n + 1
    }
}

/// A point `(x, y, z, w, λ)` of the lifted formulations.
#[derive(Debug, Clone, PartialEq)]
pub struct IteratePoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub w: Vec<f64>,
    pub lambda: f64,
}

impl IteratePoint {
    pub fn zeros(n: usize) -> Self {
        Self {
            x: vec![0.0; n],
            y: vec![0.0; n],
            z: vec![0.0; n],
            w: vec![0.0; n],
            lambda: 0.0,
        }
    }

    /// The canonical lift of an eigenpair: `y = λx`, `z = λy`, `w = Az + By + Cx`.
    pub fn from_eigenpair(inst: &QeicpInstance, lambda: f64, x: &[f64]) -> Self {
        let y = linalg::scale(lambda, x);
        let z = linalg::scale(lambda, &y);
        let w = inst.linear_w(x, &y, &z);
        Self {
            x: x.to_vec(),
            y,
            z,
            w,
            lambda,
        }
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn layout(&self) -> VarLayout {
        VarLayout::new(self.n())
    }

    /// Flattened in the fixed order `(x, y, z, w, λ)`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(4 * self.n() + 1);
        v.extend_from_slice(&self.x);
        v.extend_from_slice(&self.y);
        v.extend_from_slice(&self.z);
        v.extend_from_slice(&self.w);
        v.push(self.lambda);
        v
    }

    /// Inverse of [`flatten`](Self::flatten); trailing entries beyond `4n + 1` are ignored.
    pub fn from_flat(n: usize, v: &[f64]) -> Result<Self, ModelError> {
        if v.len() < 4 * n + 1 {
            return Err(ModelError::Dimension {
                expected: 4 * n + 1,
                got: v.len(),
            });
        }
        Ok(Self {
            x: v[..n].to_vec(),
            y: v[n..2 * n].to_vec(),
            z: v[2 * n..3 * n].to_vec(),
            w: v[3 * n..4 * n].to_vec(),
            lambda: v[4 * n],
        })
    }

    /// Euclidean distance between flattened points.
    pub fn distance(&self, other: &IteratePoint) -> f64 {
        linalg::norm2(&linalg::sub(&self.flatten(), &other.flatten()))
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

/// `f = ‖y − λx‖² + ‖z − λy‖² + xᵀw`.
pub fn eval_f(pt: &IteratePoint) -> f64 {
    eigen_gap(pt) + linalg::dot(&pt.x, &pt.w)
}

/// `f' = ‖y − λx‖² + ‖z − λy‖² + Σ min(xᵢ, wᵢ)`.
pub fn eval_f_prime(pt: &IteratePoint) -> f64 {
    eigen_gap(pt) + pt.x.iter().zip(&pt.w).map(|(a, b)| a.min(*b)).sum::<f64>()
}

fn eigen_gap(pt: &IteratePoint) -> f64 {
    let l = pt.lambda;
    let mut s = 0.0;
    for i in 0..pt.n() {
        let d1 = pt.y[i] - l * pt.x[i];
        let d2 = pt.z[i] - l * pt.y[i];
        s += d1 * d1 + d2 * d2;
    }
    s
}

/// Componentwise residuals of a candidate eigenpair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ResidualReport {
    /// `‖w − (λ²Ax + λBx + Cx)‖∞`
    pub eq_residual: f64,
    /// `|xᵀw|`
    pub compl_residual: f64,
    /// `‖min(x, 0)‖∞`
    pub neg_x: f64,
    /// `‖min(w, 0)‖∞`
    pub neg_w: f64,
}

impl ResidualReport {
    pub fn max(&self) -> f64 {
        self.eq_residual
            .max(self.compl_residual)
            .max(self.neg_x)
            .max(self.neg_w)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

impl fmt::Display for ResidualReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "eq={:.3e} compl={:.3e} neg_x={:.3e} neg_w={:.3e}",
            self.eq_residual, self.compl_residual, self.neg_x, self.neg_w
        )
    }
}

/// Raw residuals for a supplied `(λ, x, w)`, no normalization.
pub fn residuals(inst: &QeicpInstance, lambda: f64, x: &[f64], w: &[f64]) -> ResidualReport {
    let expected = inst.apply_pencil(lambda, x);
    ResidualReport {
        eq_residual: linalg::norm_inf(&linalg::sub(w, &expected)),
        compl_residual: linalg::dot(x, w).abs(),
        neg_x: x.iter().fold(0.0, |m, v| m.max(-v)),
        neg_w: w.iter().fold(0.0, |m, v| m.max(-v)),
    }
}

/// A verified (or at least checked) complementary eigenpair with `eᵀx = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct QeicpSolution {
    pub lambda: f64,
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    pub residual: ResidualReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub ok: bool,
    pub report: ResidualReport,
    pub solution: QeicpSolution,
}

/// Checks `(λ, x)` against the complementarity conditions.
///
/// Entries of `x` in `[−tol, 0)` are clipped to zero, then `x` is scaled to
/// `eᵀx = 1` and `w` is recomputed from the pencil.
pub fn verify_solution(
    inst: &QeicpInstance,
    lambda: f64,
    x: &[f64],
    tol: f64,
) -> Result<Verification, ModelError> {
    if x.len() != inst.n {
        return Err(ModelError::Dimension {
            expected: inst.n,
            got: x.len(),
        });
    }
    let clipped: Vec<f64> = x
        .iter()
        .map(|&v| if v < 0.0 && v >= -tol { 0.0 } else { v })
        .collect();
    let sum: f64 = clipped.iter().sum();
    if !(sum > 0.0) {
        return Err(ModelError::DegenerateVector { sum });
    }
    let xn = linalg::scale(1.0 / sum, &clipped);
    let w = inst.apply_pencil(lambda, &xn);
    let report = residuals(inst, lambda, &xn, &w);
    Ok(Verification {
        ok: report.within(tol),
        report,
        solution: QeicpSolution {
            lambda,
            x: xn,
            w,
            residual: report,
        },
    })
}

/// Entry range family of the random generator: `B ~ U[0, U]`, `C ~ −U[0, U]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Unit,
    Ten,
    Hundred,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Unit, Family::Ten, Family::Hundred];

    pub fn upper(self) -> f64 {
        match self {
            Family::Unit => 1.0,
            Family::Ten => 10.0,
            Family::Hundred => 100.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Unit => "unit",
            Family::Ten => "ten",
            Family::Hundred => "hundred",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "unit" | "1" => Some(Family::Unit),
            "ten" | "10" => Some(Family::Ten),
            "hundred" | "100" => Some(Family::Hundred),
            _ => None,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Seeded random instance `Rand(0, U, n)`.
///
/// `A = I`. The generator is `ChaCha8Rng::seed_from_u64(seed)`; `B` is drawn
/// row-major first, then `C`, each entry as `U * r` (resp. `−U * r`) with
/// `r` the generator's standard uniform `f64` on `[0, 1)`.
pub fn generate_random(family: Family, n: usize, seed: u64) -> QeicpInstance {
    assert!(n >= 1, "instance dimension must be positive");
    let upper = family.upper();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = Matrix::from_fn(n, n, |_, _| upper * rng.gen::<f64>());
    let c = Matrix::from_fn(n, n, |_, _| -upper * rng.gen::<f64>());
    QeicpInstance {
        n,
        a: Matrix::identity(n),
        b,
        c,
        label: random_label(family, n),
    }
}

pub fn random_label(family: Family, n: usize) -> String {
    format!("Rand(0,{},{:02})", family.upper() as u32, n)
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    n: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

/// Parses the JSON instance format `{"n", "A", "B", "C", "label"?}`.
pub fn instance_from_json(text: &str) -> Result<QeicpInstance, ModelError> {
    let file: InstanceFile =
        serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
    let n = file.n;
    let mut mats = Vec::with_capacity(3);
    for (name, rows) in [("A", &file.a), ("B", &file.b), ("C", &file.c)] {
        if rows.len() != n {
            return Err(ModelError::Structure(format!(
                "matrix {name} has {} rows, expected n = {n}",
                rows.len()
            )));
        }
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(ModelError::Structure(format!(
                "matrix {name} row {i} has {} entries, expected n = {n}",
                r.len()
            )));
        }
        mats.push(Matrix::from_rows(rows)?);
    }
    let c = mats.pop().unwrap();
    let b = mats.pop().unwrap();
    let a = mats.pop().unwrap();
    QeicpInstance::new(a, b, c, file.label.unwrap_or_default())
}

pub fn instance_to_json(inst: &QeicpInstance) -> String {
    let file = InstanceFile {
        n: inst.n,
        a: inst.a.to_rows(),
        b: inst.b.to_rows(),
        c: inst.c.to_rows(),
        label: if inst.label.is_empty() {
            None
        } else {
            Some(inst.label.clone())
        },
    };
    // serde_json prints the shortest decimal that round-trips each f64
    serde_json::to_string(&file).expect("instance serialization cannot fail")
}

pub fn read_instance(path: impl AsRef<Path>) -> Result<QeicpInstance, ModelError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    instance_from_json(&text)
}

pub fn write_instance(inst: &QeicpInstance, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    let mut text = instance_to_json(inst);
    text.push('\n');
    fs::write(path, text).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}
