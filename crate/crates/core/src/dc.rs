//! The four DC decompositions of the lifted objectives, their (sub)gradients,
//! Hessians of the nonconvex parts and the lifting of the quartic convex part
//! into a QP with eight convex quadratic constraints.
//!
//! Every flattened vector uses the order `(x, y, z, w, λ)` followed, for
//! lifted problems, by the eight lifting variables `t`.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::RhoPair;
use crate::linalg::{self, Matrix};
use crate::model::{eval_f, eval_f_prime, IteratePoint, VarLayout};
use crate::subproblem::{FeasibleRegion, QuadConstraint, QuadraticObjective, SparseRow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DcError {
    #[error("formulation {0} needs curvature constants")]
    MissingRho(FormulationKind),
    #[error("formulation {0} takes no curvature constants")]
    UnexpectedRho(FormulationKind),
    #[error("formulation {0} has a quadratic convex part and is not lifted")]
    NotLiftable(FormulationKind),
    #[error("formulation {0} has a quartic convex part")]
    NotQuadratic(FormulationKind),
    #[error("gradient has length {got}, expected {expected}")]
    GradientLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FormulationKind {
    /// Sums-of-squares decomposition of `f`.
    Pdc,
    /// Universal decomposition of `f` with curvature constants.
    PHatDc,
    /// Sums-of-squares decomposition of `f'`.
    PPrimeDc,
    /// Universal decomposition of `f'` with curvature constants.
    PHatPrimeDc,
}

impl FormulationKind {
    pub const ALL: [FormulationKind; 4] = [
        FormulationKind::Pdc,
        FormulationKind::PHatDc,
        FormulationKind::PPrimeDc,
        FormulationKind::PHatPrimeDc,
    ];

    pub fn is_hat(self) -> bool {
        matches!(self, FormulationKind::PHatDc | FormulationKind::PHatPrimeDc)
    }

    pub fn is_prime(self) -> bool {
        matches!(
            self,
            FormulationKind::PPrimeDc | FormulationKind::PHatPrimeDc
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            FormulationKind::Pdc => "pdc",
            FormulationKind::PHatDc => "phat",
            FormulationKind::PPrimeDc => "pprime",
            FormulationKind::PHatPrimeDc => "phatprime",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for FormulationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A decomposition kind, with curvature constants for the universal kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Formulation {
    pub kind: FormulationKind,
    pub rho: Option<RhoPair>,
}

impl Formulation {
    pub fn new(kind: FormulationKind, rho: Option<RhoPair>) -> Result<Self, DcError> {
        match (kind.is_hat(), rho.is_some()) {
            (true, false) => Err(DcError::MissingRho(kind)),
            (false, true) => Err(DcError::UnexpectedRho(kind)),
            _ => Ok(Self { kind, rho }),
        }
    }

    pub fn plain(kind: FormulationKind) -> Result<Self, DcError> {
        Self::new(kind, None)
    }

    pub fn hat(kind: FormulationKind, rho: RhoPair) -> Result<Self, DcError> {
        Self::new(kind, Some(rho))
    }

    fn rho(&self) -> RhoPair {
        self.rho
            .expect("hat formulations carry curvature constants")
    }
}

/// `f` or `f'` according to the kind.
pub fn eval_objective(kind: FormulationKind, pt: &IteratePoint) -> f64 {
    if kind.is_prime() {
        eval_f_prime(pt)
    } else {
        eval_f(pt)
    }
}

/// Selectors `(u, v)` of a subgradient of `−Σ min(xᵢ, wᵢ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgradientChoice {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl SubgradientChoice {
    /// `uᵢ = 1` when `xᵢ ≤ wᵢ` (ties go to the `x` side), else `0`; `v = e − u`.
    pub fn at(pt: &IteratePoint) -> Self {
        let u: Vec<f64> =
            pt.x.iter()
                .zip(&pt.w)
                .map(|(x, w)| if x <= w { 1.0 } else { 0.0 })
                .collect();
        let v = u.iter().map(|u| 1.0 - u).collect();
        Self { u, v }
    }
}

/// Norms shared by the sums-of-squares components.
struct SosTerms {
    nx: f64,
    ny: f64,
    ypx: f64,
    ymx: f64,
    ypz: f64,
    ymz: f64,
    lambda: f64,
}

impl SosTerms {
    fn of(pt: &IteratePoint) -> Self {
        let mut t = SosTerms {
            nx: 0.0,
            ny: 0.0,
            ypx: 0.0,
            ymx: 0.0,
            ypz: 0.0,
            ymz: 0.0,
            lambda: pt.lambda,
        };
        for i in 0..pt.n() {
            let (x, y, z) = (pt.x[i], pt.y[i], pt.z[i]);
            t.nx += x * x;
            t.ny += y * y;
            t.ypx += (y + x) * (y + x);
            t.ymx += (y - x) * (y - x);
            t.ypz += (y + z) * (y + z);
            t.ymz += (y - z) * (y - z);
        }
        t
    }

    /// `4λ² + 4 + ‖y − x‖² + ‖y − z‖²`
    fn t1(&self) -> f64 {
        4.0 * self.lambda * self.lambda + 4.0 + self.ymx + self.ymz
    }

    /// `4(λ + 1)² + ‖y + x‖² + ‖y + z‖²`
    fn t2(&self) -> f64 {
        4.0 * (self.lambda + 1.0).powi(2) + self.ypx + self.ypz
    }

    /// Convex quartic part shared by `g` and `g'`.
    fn g_quartic(&self) -> f64 {
        let l2 = self.lambda * self.lambda;
        let a = 4.0 * l2 + 4.0 + self.ypx + self.ypz;
        let b = 4.0 * (self.lambda + 1.0).powi(2) + self.ymx + self.ymz;
        ((l2 + self.nx).powi(2) + (l2 + self.ny).powi(2)) / 2.0 + (a * a + b * b) / 32.0
    }

    /// Convex quartic part shared by `h` and `h'`.
    fn h_quartic(&self) -> f64 {
        let l = self.lambda;
        (2.0 * l.powi(4) + self.nx * self.nx + self.ny * self.ny) / 2.0
            + (self.t1().powi(2) + self.t2().powi(2)) / 32.0
    }
}

fn sum_min(pt: &IteratePoint) -> f64 {
    pt.x.iter().zip(&pt.w).map(|(a, b)| a.min(*b)).sum()
}

/// `ĝ` (or `ĝ'` without the `‖x + w‖²/4` term).
fn hat_g(kind: FormulationKind, rho: RhoPair, pt: &IteratePoint) -> f64 {
    let nx = linalg::norm2_sq(&pt.x);
    let ny = linalg::norm2_sq(&pt.y);
    let nz = linalg::norm2_sq(&pt.z);
    let l2 = pt.lambda * pt.lambda;
    let mut g = ny + nz + rho.rho1 / 2.0 * (nx + ny + nz + l2) + rho.rho2 / 2.0 * (nx + ny + l2);
    if !kind.is_prime() {
        g += linalg::norm2_sq(&linalg::add(&pt.x, &pt.w)) / 4.0;
    }
    g
}

/// First convex component.
pub fn eval_g(form: &Formulation, pt: &IteratePoint) -> f64 {
    match form.kind {
        FormulationKind::Pdc => {
            let s = SosTerms::of(pt);
            s.ny + linalg::norm2_sq(&pt.z)
                + linalg::norm2_sq(&linalg::add(&pt.x, &pt.w)) / 4.0
                + s.g_quartic()
        }
        FormulationKind::PPrimeDc => {
            let s = SosTerms::of(pt);
            s.ny + linalg::norm2_sq(&pt.z) + s.g_quartic()
        }
        FormulationKind::PHatDc | FormulationKind::PHatPrimeDc => hat_g(form.kind, form.rho(), pt),
    }
}

/// Second convex component (convex on the bounded regions for the hat kinds).
pub fn eval_h(form: &Formulation, pt: &IteratePoint) -> f64 {
    match form.kind {
        FormulationKind::Pdc => {
            let s = SosTerms::of(pt);
            linalg::norm2_sq(&linalg::sub(&pt.x, &pt.w)) / 4.0 + s.h_quartic()
        }
        FormulationKind::PPrimeDc => -sum_min(pt) + SosTerms::of(pt).h_quartic(),
        FormulationKind::PHatDc | FormulationKind::PHatPrimeDc => {
            hat_g(form.kind, form.rho(), pt) - eval_objective(form.kind, pt)
        }
    }
}

/// Gradient of `h`, or a subgradient for the prime kinds (selectors from
/// [`SubgradientChoice::at`] unless supplied).
pub fn grad_h(
    form: &Formulation,
    pt: &IteratePoint,
    choice: Option<&SubgradientChoice>,
) -> Vec<f64> {
    let n = pt.n();
    let lay = VarLayout::new(n);
    let mut g = vec![0.0; lay.dim()];
    let own;
    let sel = if form.kind.is_prime() {
        Some(match choice {
            Some(c) => c,
            None => {
                own = SubgradientChoice::at(pt);
                &own
            }
        })
    } else {
        None
    };
    let l = pt.lambda;
    match form.kind {
        FormulationKind::Pdc | FormulationKind::PPrimeDc => {
            let s = SosTerms::of(pt);
            let (t1, t2) = (s.t1(), s.t2());
            for i in 0..n {
                let (x, y, z, w) = (pt.x[i], pt.y[i], pt.z[i], pt.w[i]);
                let lin_x = match sel {
                    Some(c) => -c.u[i],
                    None => (x - w) / 2.0,
                };
                g[lay.x(i)] = lin_x + 2.0 * s.nx * x + t1 * (x - y) / 8.0 + t2 * (x + y) / 8.0;
                g[lay.y(i)] =
                    2.0 * s.ny * y + t1 * (2.0 * y - x - z) / 8.0 + t2 * (2.0 * y + x + z) / 8.0;
                g[lay.z(i)] = t1 * (z - y) / 8.0 + t2 * (z + y) / 8.0;
                g[lay.w(i)] = match sel {
                    Some(c) => -c.v[i],
                    None => (w - x) / 2.0,
                };
            }
            g[lay.lambda()] = 4.0 * l.powi(3) + t1 * l / 2.0 + t2 * (l + 1.0) / 2.0;
        }
        FormulationKind::PHatDc | FormulationKind::PHatPrimeDc => {
            let rho = form.rho();
            let r12 = rho.rho1 + rho.rho2;
            let nx = linalg::norm2_sq(&pt.x);
            let ny = linalg::norm2_sq(&pt.y);
            let mut yxz = 0.0;
            for i in 0..n {
                let (x, y, z, w) = (pt.x[i], pt.y[i], pt.z[i], pt.w[i]);
                yxz += y * (x + z);
                let lin_x = match sel {
                    Some(c) => -c.u[i],
                    None => (x + w) / 2.0 - w,
                };
                g[lay.x(i)] = lin_x + r12 * x + 2.0 * l * y - 2.0 * l * l * x;
                g[lay.y(i)] = (r12 - 2.0 * l * l) * y + 2.0 * l * (x + z);
                g[lay.z(i)] = rho.rho1 * z + 2.0 * l * y;
                g[lay.w(i)] = match sel {
                    Some(c) => -c.v[i],
                    None => (w - x) / 2.0,
                };
            }
            g[lay.lambda()] = (r12 - 2.0 * (nx + ny)) * l + 2.0 * yxz;
        }
    }
    g
}

/// `ĝ` (or `ĝ'`) as a quadratic over `(x, y, z, w, λ)`.
pub fn hat_convex_objective(form: &Formulation, n: usize) -> Result<QuadraticObjective, DcError> {
    if !form.kind.is_hat() {
        return Err(DcError::NotQuadratic(form.kind));
    }
    let rho = form.rho();
    let lay = VarLayout::new(n);
    let mut obj = QuadraticObjective::zeros(lay.dim());
    for i in 0..n {
        obj.p[(lay.x(i), lay.x(i))] += rho.rho1 + rho.rho2;
        obj.p[(lay.y(i), lay.y(i))] += 2.0 + rho.rho1 + rho.rho2;
        obj.p[(lay.z(i), lay.z(i))] += 2.0 + rho.rho1;
        if !form.kind.is_prime() {
            obj.add_square(0.25, &[(lay.x(i), 1.0), (lay.w(i), 1.0)], 0.0);
        }
    }
    obj.p[(lay.lambda(), lay.lambda())] += rho.rho1 + rho.rho2;
    Ok(obj)
}

/// Convex majorant of the objective built at `at`:
/// `g(q) − h(at) − ⟨∇h(at), q − at⟩`.
pub fn majorant(form: &Formulation, at: &IteratePoint, q: &IteratePoint) -> f64 {
    let grad = grad_h(form, at, None);
    let d = linalg::sub(&q.flatten(), &at.flatten());
    eval_g(form, q) - eval_h(form, at) - linalg::dot(&grad, &d)
}

/// Number of lifting variables.
pub const LIFT_VARS: usize = 8;

/// `(‖x‖², ‖y‖², ‖x + y‖², ‖y + z‖², ‖y − x‖², ‖y − z‖², λ², (λ + 1)²)`.
pub fn lifting_values(pt: &IteratePoint) -> [f64; LIFT_VARS] {
    let s = SosTerms::of(pt);
    [
        s.nx,
        s.ny,
        s.ypx,
        s.ypz,
        s.ymx,
        s.ymz,
        pt.lambda * pt.lambda,
        (pt.lambda + 1.0).powi(2),
    ]
}

/// The lifted convex part: a quadratic in `(x, y, z, w, λ, t)` with eight
/// constraints `‖·‖² ≤ tᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedObjective {
    pub objective: QuadraticObjective,
    pub constraints: Vec<QuadConstraint>,
}

fn lifted_g_objective(kind: FormulationKind, n: usize) -> QuadraticObjective {
    let lay = VarLayout::new(n);
    let t = |k: usize| lay.dim() + k;
    let mut obj = QuadraticObjective::zeros(lay.dim() + LIFT_VARS);
    obj.q[t(1)] += 1.0;
    for i in 0..n {
        obj.add_square(1.0, &[(lay.z(i), 1.0)], 0.0);
        if !kind.is_prime() {
            obj.add_square(0.25, &[(lay.x(i), 1.0), (lay.w(i), 1.0)], 0.0);
        }
    }
    obj.add_square(0.5, &[(t(6), 1.0), (t(0), 1.0)], 0.0);
    obj.add_square(0.5, &[(t(6), 1.0), (t(1), 1.0)], 0.0);
    obj.add_square(1.0 / 32.0, &[(t(6), 4.0), (t(2), 1.0), (t(3), 1.0)], 4.0);
    obj.add_square(1.0 / 32.0, &[(t(7), 4.0), (t(4), 1.0), (t(5), 1.0)], 0.0);
    obj
}

fn lifting_constraints(n: usize) -> Vec<QuadConstraint> {
    let lay = VarLayout::new(n);
    let t = |k: usize| lay.dim() + k;
    let combo = |a: &dyn Fn(usize) -> usize,
                 b: Option<(&dyn Fn(usize) -> usize, f64)>|
     -> Vec<(SparseRow, f64)> {
        (0..n)
            .map(|i| {
                let mut row = vec![(a(i), 1.0)];
                if let Some((bf, s)) = b {
                    row.push((bf(i), s));
                }
                (row, 0.0)
            })
            .collect()
    };
    let x = |i| lay.x(i);
    let y = |i| lay.y(i);
    let z = |i| lay.z(i);
    let squares: Vec<Vec<(SparseRow, f64)>> = vec![
        combo(&x, None),
        combo(&y, None),
        combo(&x, Some((&y, 1.0))),
        combo(&y, Some((&z, 1.0))),
        combo(&y, Some((&x, -1.0))),
        combo(&y, Some((&z, -1.0))),
        vec![(vec![(lay.lambda(), 1.0)], 0.0)],
        vec![(vec![(lay.lambda(), 1.0)], 1.0)],
    ];
    squares
        .into_iter()
        .enumerate()
        .map(|(k, sq)| QuadConstraint {
            squares: sq,
            linear: vec![(t(k), -1.0)],
            rhs: 0.0,
        })
        .collect()
}

/// Lifted form of `g(v) − ⟨v, grad⟩` for the sums-of-squares kinds.
pub fn lift_linearized_objective(
    kind: FormulationKind,
    n: usize,
    grad: &[f64],
) -> Result<LiftedObjective, DcError> {
    if kind.is_hat() {
        return Err(DcError::NotLiftable(kind));
    }
    let lay = VarLayout::new(n);
    if grad.len() != lay.dim() {
        return Err(DcError::GradientLength {
            expected: lay.dim(),
            got: grad.len(),
        });
    }
    let mut objective = lifted_g_objective(kind, n);
    for (j, g) in grad.iter().enumerate() {
        objective.q[j] -= g;
    }
    Ok(LiftedObjective {
        objective,
        constraints: lifting_constraints(n),
    })
}

/// Lifted `g` at `pt` with explicit `t`; equals `g(pt)` when `t` is tight.
pub fn eval_lifted_g(kind: FormulationKind, pt: &IteratePoint, t: &[f64; LIFT_VARS]) -> f64 {
    let mut v = pt.flatten();
    v.extend_from_slice(t);
    lifted_g_objective(kind, pt.n()).value(&v)
}

/// `∇²f₁` for `f₁ = −2λ yᵀ(x + z)` over `(x, y, z, λ)`.
pub fn hessian_f1(pt: &IteratePoint) -> Matrix {
    let n = pt.n();
    let l = pt.lambda;
    let mut h = Matrix::zeros(3 * n + 1, 3 * n + 1);
    let lam = 3 * n;
    for i in 0..n {
        let (xi, yi, zi) = (i, n + i, 2 * n + i);
        h[(xi, yi)] = -2.0 * l;
        h[(yi, xi)] = -2.0 * l;
        h[(yi, zi)] = -2.0 * l;
        h[(zi, yi)] = -2.0 * l;
        h[(xi, lam)] = -2.0 * pt.y[i];
        h[(lam, xi)] = -2.0 * pt.y[i];
        h[(zi, lam)] = -2.0 * pt.y[i];
        h[(lam, zi)] = -2.0 * pt.y[i];
        h[(yi, lam)] = -2.0 * (pt.x[i] + pt.z[i]);
        h[(lam, yi)] = -2.0 * (pt.x[i] + pt.z[i]);
    }
    h
}

/// `∇²f₂` for `f₂ = λ²(‖x‖² + ‖y‖²)` over `(x, y, λ)`.
pub fn hessian_f2(pt: &IteratePoint) -> Matrix {
    let n = pt.n();
    let l = pt.lambda;
    let mut h = Matrix::zeros(2 * n + 1, 2 * n + 1);
    let lam = 2 * n;
    for i in 0..n {
        h[(i, i)] = 2.0 * l * l;
        h[(n + i, n + i)] = 2.0 * l * l;
        h[(i, lam)] = 4.0 * l * pt.x[i];
        h[(lam, i)] = 4.0 * l * pt.x[i];
        h[(n + i, lam)] = 4.0 * l * pt.y[i];
        h[(lam, n + i)] = 4.0 * l * pt.y[i];
    }
    h[(lam, lam)] = 2.0 * (linalg::norm2_sq(&pt.x) + linalg::norm2_sq(&pt.y));
    h
}

/// `f₁` through its product decomposition of the two DC factors
/// `−2λ` and `yᵀ(x + z)`.
pub fn f1_product_form(pt: &IteratePoint) -> f64 {
    let s = SosTerms::of(pt);
    let l2 = s.lambda * s.lambda;
    let a = 4.0 * l2 + 4.0 + s.ypx + s.ypz;
    let b = 4.0 * (s.lambda + 1.0).powi(2) + s.ymx + s.ymz;
    (a * a + b * b - s.t1().powi(2) - s.t2().powi(2)) / 32.0
}

/// Random point from the part of `region` that the curvature bounds rely on:
/// `x` on the simplex, `y = λ·(simplex point)`, `eᵀz` within its bound, `w`
/// in its box. Equality rows tying `w` to the data are not enforced.
pub fn sample_region_point<R: Rng>(region: &FeasibleRegion, rng: &mut R) -> IteratePoint {
    let lay = region.layout;
    let n = lay.n;
    let simplex = |rng: &mut R| -> Vec<f64> {
        let e: Vec<f64> = (0..n).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    };
    let finite_or = |v: f64, d: f64| if v.is_finite() { v } else { d };
    let (lo, hi) = region.lambda_range();
    let lambda = rng.gen_range(finite_or(lo, -3.0)..=finite_or(hi, 3.0));
    let x = simplex(rng);
    let y = linalg::scale(lambda, &simplex(rng));
    let z_sum_hi = region.ineq_rhs.first().copied().unwrap_or(9.0);
    let z = linalg::scale(rng.gen_range(0.0..=z_sum_hi), &simplex(rng));
    let w = (0..n)
        .map(|i| rng.gen_range(0.0..=finite_or(region.upper[lay.w(i)], 10.0)))
        .collect();
    IteratePoint { x, y, z, w, lambda }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConvexityReport {
    pub trials: usize,
    pub g_violations: usize,
    pub h_violations: usize,
    /// Most negative `(φ(a) + φ(b))/2 − φ((a + b)/2)` seen for each component.
    pub worst_g: f64,
    pub worst_h: f64,
}

/// Midpoint-convexity test of `g` and `h` on random segments inside `region`.
pub fn convexity_witness<R: Rng>(
    form: &Formulation,
    region: &FeasibleRegion,
    trials: usize,
    rng: &mut R,
) -> ConvexityReport {
    let mut rep = ConvexityReport {
        trials,
        ..Default::default()
    };
    for _ in 0..trials {
        let a = sample_region_point(region, rng);
        let b = sample_region_point(region, rng);
        let mid = IteratePoint::from_flat(
            a.n(),
            &linalg::scale(0.5, &linalg::add(&a.flatten(), &b.flatten())),
        )
        .expect("same layout");
        for (is_g, phi) in [
            (true, eval_g as fn(&Formulation, &IteratePoint) -> f64),
            (false, eval_h),
        ] {
            let avg = 0.5 * (phi(form, &a) + phi(form, &b));
            let gap = avg - phi(form, &mid);
            let slack = 1e-8 * (1.0 + avg.abs());
            if is_g {
                rep.worst_g = rep.worst_g.min(gap);
                rep.g_violations += usize::from(gap < -slack);
            } else {
                rep.worst_h = rep.worst_h.min(gap);
                rep.h_violations += usize::from(gap < -slack);
            }
        }
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{rho_constants, BoundMethod, LambdaBounds};
    use crate::model::{generate_random, Family, QeicpInstance};
    use crate::subproblem::{build_region, RegionKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn all_forms(rho: RhoPair) -> Vec<Formulation> {
        FormulationKind::ALL
            .into_iter()
            .map(|k| Formulation::new(k, k.is_hat().then_some(rho)).unwrap())
            .collect()
    }

    fn hand_point() -> IteratePoint {
        IteratePoint {
            x: vec![1.0],
            y: vec![2.0],
            z: vec![3.0],
            w: vec![4.0],
            lambda: 1.0,
        }
    }

    #[test]
    fn formulation_validation() {
        let rho = rho_constants(1.0);
        assert!(Formulation::new(FormulationKind::PHatDc, None).is_err());
        assert!(Formulation::new(FormulationKind::Pdc, Some(rho)).is_err());
        assert!(Formulation::hat(FormulationKind::PHatPrimeDc, rho).is_ok());
    }

    #[test]
    fn pdc_hand_case() {
        let form = Formulation::plain(FormulationKind::Pdc).unwrap();
        let pt = hand_point();
        let d = eval_g(&form, &pt) - eval_h(&form, &pt);
        assert!((d - 6.0).abs() < 1e-12);
        let prime = Formulation::plain(FormulationKind::PPrimeDc).unwrap();
        assert!((eval_g(&prime, &pt) - eval_h(&prime, &pt) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn hat_at_origin_vanishes() {
        let form = Formulation::hat(
            FormulationKind::PHatDc,
            RhoPair {
                rho1: 2.0,
                rho2: 2.0,
            },
        )
        .unwrap();
        let pt = IteratePoint::zeros(3);
        assert_eq!(eval_g(&form, &pt), 0.0);
        assert_eq!(eval_h(&form, &pt), 0.0);
        assert!(grad_h(&form, &pt, None).iter().all(|g| *g == 0.0));
    }

    #[test]
    fn tie_rule_prefers_x() {
        let mut pt = hand_point();
        pt.w[0] = pt.x[0];
        let c = SubgradientChoice::at(&pt);
        assert_eq!((c.u[0], c.v[0]), (1.0, 0.0));
    }

    #[test]
    fn product_decomposition_reproduces_f1() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let pt = random_point(&mut rng, 4);
            let f1 = -2.0 * pt.lambda * linalg::dot(&pt.y, &linalg::add(&pt.x, &pt.z));
            let scale = 1.0 + linalg::norm2_sq(&pt.flatten()).powi(2);
            assert!((f1_product_form(&pt) - f1).abs() <= 1e-9 * scale);
        }
    }

    pub(crate) fn random_point(rng: &mut ChaCha8Rng, n: usize) -> IteratePoint {
        let mut draw = || (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<_>>();
        let (x, y, z, w) = (draw(), draw(), draw(), draw());
        IteratePoint {
            x,
            y,
            z,
            w,
            lambda: rng.gen_range(-2.0..2.0),
        }
    }

    #[test]
    fn dc_identity_all_kinds() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for form in all_forms(rho_constants(1.7)) {
            for _ in 0..300 {
                let pt = random_point(&mut rng, 3);
                let f = eval_objective(form.kind, &pt);
                let d = eval_g(&form, &pt) - eval_h(&form, &pt);
                assert!(
                    (d - f).abs() <= 1e-9 * (1.0 + f.abs()),
                    "{:?}: {d} vs {f}",
                    form.kind
                );
            }
        }
    }

    #[test]
    fn lifting_is_tight_at_exact_t() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in [FormulationKind::Pdc, FormulationKind::PPrimeDc] {
            let form = Formulation::plain(kind).unwrap();
            for _ in 0..100 {
                let pt = random_point(&mut rng, 3);
                let t = lifting_values(&pt);
                let g = eval_g(&form, &pt);
                assert!((eval_lifted_g(kind, &pt, &t) - g).abs() <= 1e-10 * (1.0 + g));
                // larger t only increases the lifted value
                let mut t2 = t;
                t2[rng.gen_range(0..LIFT_VARS)] += 0.5;
                assert!(eval_lifted_g(kind, &pt, &t2) > g);
            }
        }
    }

    #[test]
    fn lifting_constraint_order() {
        let cons = lifting_constraints(2);
        assert_eq!(cons.len(), 8);
        let pt = IteratePoint {
            x: vec![0.1, 0.2],
            y: vec![0.3, -0.4],
            z: vec![0.5, 0.6],
            w: vec![0.0, 0.0],
            lambda: -0.7,
        };
        let mut v = pt.flatten();
        v.extend_from_slice(&[0.0; 8]);
        let t = lifting_values(&pt);
        for (k, c) in cons.iter().enumerate() {
            assert!((c.value(&v) - t[k]).abs() < 1e-14);
        }
        assert!((t[2] - ((0.1_f64 + 0.3).powi(2) + (0.2_f64 - 0.4).powi(2))).abs() < 1e-15);
        assert!((t[7] - 0.09).abs() < 1e-15);
    }

    #[test]
    fn lifting_rejects_bad_input() {
        assert!(matches!(
            lift_linearized_objective(FormulationKind::PHatDc, 2, &[0.0; 9]),
            Err(DcError::NotLiftable(_))
        ));
        assert!(matches!(
            lift_linearized_objective(FormulationKind::Pdc, 2, &[0.0; 3]),
            Err(DcError::GradientLength { .. })
        ));
    }

    #[test]
    fn hat_objective_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for kind in [FormulationKind::PHatDc, FormulationKind::PHatPrimeDc] {
            let form = Formulation::hat(kind, rho_constants(2.5)).unwrap();
            let obj = hat_convex_objective(&form, 3).unwrap();
            for _ in 0..50 {
                let pt = random_point(&mut rng, 3);
                let a = obj.value(&pt.flatten());
                let b = eval_g(&form, &pt);
                assert!((a - b).abs() <= 1e-10 * (1.0 + b));
            }
        }
    }

    fn branch_region(n: usize) -> FeasibleRegion {
        let inst: QeicpInstance = generate_random(Family::Unit, n, 2);
        let b = LambdaBounds {
            l: -2.0,
            u: 1.5,
            method: BoundMethod::External,
        };
        build_region(RegionKind::HatPos, &inst, &b, None).unwrap()
    }

    #[test]
    fn convexity_on_branch_region() {
        let region = branch_region(3);
        let rho = rho_constants(region.p.unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for form in all_forms(rho) {
            let rep = convexity_witness(&form, &region, 500, &mut rng);
            assert_eq!(rep.g_violations, 0, "{:?}", form.kind);
            assert_eq!(rep.h_violations, 0, "{:?} {rep:?}", form.kind);
        }
        let flat = Formulation::hat(
            FormulationKind::PHatDc,
            RhoPair {
                rho1: 0.0,
                rho2: 0.0,
            },
        )
        .unwrap();
        assert!(convexity_witness(&flat, &region, 500, &mut rng).h_violations > 0);
    }

    #[test]
    fn majorant_ordering_in_rho() {
        let region = branch_region(3);
        let p = region.p.unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for kind in [FormulationKind::PHatDc, FormulationKind::PHatPrimeDc] {
            let small = Formulation::hat(kind, rho_constants(p)).unwrap();
            let big = Formulation::hat(kind, rho_constants(p + 1.5)).unwrap();
            for _ in 0..200 {
                let at = sample_region_point(&region, &mut rng);
                let q = sample_region_point(&region, &mut rng);
                let (ms, mb) = (majorant(&small, &at, &q), majorant(&big, &at, &q));
                assert!(ms <= mb + 1e-8 * (1.0 + mb.abs()));
                let f = eval_objective(kind, &q);
                assert!(f <= ms + 1e-8 * (1.0 + ms.abs()));
            }
        }
    }
}
