//! Eigenvalue intervals, boxes on the lifted variables and the curvature
//! constants of the universal decomposition.
//!
//! The two closed-form intervals assume `A` positive definite and the
//! co-hyperbolic condition; only the former is checked; the latter is assumed.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, cholesky_pd_check, symmetric_extreme_eigenvalues, LinalgError, Matrix};
use crate::model::QeicpInstance;
use crate::subproblem::{
    infeasibility_measure, solve_convex, ConvexSubproblem, QuadraticObjective, SolveStatus,
    SolverOptions,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("matrix A is not positive definite")]
    NotPositiveDefinite,
    #[error("alpha = {alpha:e} is negative (beta = {beta:e}, gamma = {gamma:e}, s = {s:e})")]
    InvalidAlpha {
        alpha: f64,
        beta: f64,
        gamma: f64,
        s: f64,
    },
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMethod {
    /// Entrywise bounds over the simplex.
    Thm31,
    /// Spectral bounds over the unit sphere.
    Thm32,
    /// LP lower and fractional-program upper bound, positive and mirrored negative side.
    LpUp,
    /// Supplied by the caller.
    External,
}

impl BoundMethod {
    pub fn name(self) -> &'static str {
        match self {
            BoundMethod::Thm31 => "thm31",
            BoundMethod::Thm32 => "thm32",
            BoundMethod::LpUp => "lpup",
            BoundMethod::External => "external",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "thm31" => Some(BoundMethod::Thm31),
            "thm32" => Some(BoundMethod::Thm32),
            "lpup" | "lp_up" => Some(BoundMethod::LpUp),
            "external" => Some(BoundMethod::External),
            _ => None,
        }
    }
}

impl fmt::Display for BoundMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Interval `[l, u]` containing the eigenvalues of interest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaBounds {
    pub l: f64,
    pub u: f64,
    pub method: BoundMethod,
}

impl LambdaBounds {
    pub fn length(&self) -> f64 {
        self.u - self.l
    }

    pub fn contains(&self, lambda: f64, slack: f64) -> bool {
        lambda >= self.l - slack && lambda <= self.u + slack
    }

    /// `max{|l|, |u|}`.
    pub fn p(&self) -> f64 {
        self.l.abs().max(self.u.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundIntermediates {
    pub s: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

fn require_pd(inst: &QeicpInstance) -> Result<(), BoundsError> {
    if cholesky_pd_check(&inst.a)?.is_pd {
        Ok(())
    } else {
        Err(BoundsError::NotPositiveDefinite)
    }
}

fn finish(
    method: BoundMethod,
    s: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
) -> Result<(LambdaBounds, BoundIntermediates), BoundsError> {
    if !alpha.is_finite() || !beta.is_finite() || !gamma.is_finite() {
        return Err(BoundsError::Numeric(format!(
            "non-finite intermediates alpha={alpha} beta={beta} gamma={gamma}"
        )));
    }
    if alpha < 0.0 {
        return Err(BoundsError::InvalidAlpha {
            alpha,
            beta,
            gamma,
            s,
        });
    }
    let r = alpha.sqrt();
    Ok((
        LambdaBounds {
            l: beta - r,
            u: gamma + r,
            method,
        },
        BoundIntermediates {
            s,
            alpha,
            beta,
            gamma,
        },
    ))
}

/// `min{xᵀMx : eᵀx = 1, x ≥ 0}` and a minimizer.
pub fn simplex_quadratic_min(m: &Matrix) -> Result<(f64, Vec<f64>), BoundsError> {
    let n = m.rows();
    let sym = m.symmetrized()?;
    let mut obj = QuadraticObjective::zeros(n);
    obj.p = sym.scaled(2.0);
    let mut sp = ConvexSubproblem::new(obj);
    sp.lower.iter_mut().for_each(|l| *l = 0.0);
    sp.eq_rows.push((0..n).map(|j| (j, 1.0)).collect());
    sp.eq_rhs.push(1.0);
    let res = solve_convex(&sp, None, &SolverOptions::default());
    if res.status != SolveStatus::Optimal {
        return Err(BoundsError::Numeric(format!(
            "simplex quadratic minimization ended {}",
            res.status
        )));
    }
    let mut x: Vec<f64> = res.point.iter().map(|v| v.max(0.0)).collect();
    let sum: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= sum);
    Ok((sym.quad_form(&x).min(res.objective), x))
}

/// Interval from entrywise extremes of `A`, `B`, `C` and
/// `s = min{xᵀAx : x in the unit simplex}`.
pub fn lambda_bounds_thm31(
    inst: &QeicpInstance,
) -> Result<(LambdaBounds, BoundIntermediates), BoundsError> {
    require_pd(inst)?;
    let (smin, _) = simplex_quadratic_min(&inst.a)?;
    // shrink against solver error; a smaller s only widens the interval
    let s = smin * (1.0 - 1e-9);
    if !(s > 0.0) {
        return Err(BoundsError::AssumptionViolated(format!(
            "s = {s:e} is not positive"
        )));
    }
    let max_a = inst.a.max_entry();
    let min_nb = -inst.b.max_entry();
    let max_nb = -inst.b.min_entry();
    let max_nc = -inst.c.min_entry();
    let beta = if min_nb > 0.0 {
        min_nb / (2.0 * max_a)
    } else {
        min_nb / (2.0 * s)
    };
    let gamma = if max_nb > 0.0 {
        max_nb / (2.0 * s)
    } else {
        max_nb / (2.0 * max_a)
    };
    let alpha = gamma.powi(2).max(beta.powi(2)) + max_nc / s;
    finish(BoundMethod::Thm31, s, alpha, beta, gamma)
}

/// Interval from extreme eigenvalues of `A`, `−B − Bᵀ` and `−C − Cᵀ`.
///
/// With `literal_gamma` the upper branch uses `λ_min(−B − Bᵀ)` in both
/// cases, as in the original statement; otherwise `λ_max(−B − Bᵀ)`, which
/// mirrors the entrywise interval and keeps the upper bound valid.
pub fn lambda_bounds_thm32(
    inst: &QeicpInstance,
    literal_gamma: bool,
) -> Result<(LambdaBounds, BoundIntermediates), BoundsError> {
    require_pd(inst)?;
    let ea = symmetric_extreme_eigenvalues(&inst.a)?;
    let s = ea.lambda_min;
    let nb = inst.b.transpose();
    let nbb = Matrix::from_fn(inst.n, inst.n, |i, j| -inst.b[(i, j)] - nb[(i, j)]);
    let nc = inst.c.transpose();
    let ncc = Matrix::from_fn(inst.n, inst.n, |i, j| -inst.c[(i, j)] - nc[(i, j)]);
    let eb = symmetric_extreme_eigenvalues(&nbb)?;
    let ec = symmetric_extreme_eigenvalues(&ncc)?;
    let beta = if eb.lambda_min > 0.0 {
        eb.lambda_min / (4.0 * ea.lambda_max)
    } else {
        eb.lambda_min / (4.0 * s)
    };
    let num = if literal_gamma {
        eb.lambda_min
    } else {
        eb.lambda_max
    };
    let gamma = if eb.lambda_max > 0.0 {
        num / (4.0 * s)
    } else {
        num / (4.0 * ea.lambda_max)
    };
    let alpha = gamma.powi(2).max(beta.powi(2)) + ec.lambda_max / (2.0 * s);
    finish(BoundMethod::Thm32, s, alpha, beta, gamma)
}

/// True iff no `0 ≠ x ≥ 0` has `Cx ≥ 0`, decided by a feasibility LP.
pub fn check_c_not_in_s0(c: &Matrix) -> bool {
    let n = c.rows();
    let mut sp = ConvexSubproblem::new(QuadraticObjective::zeros(n));
    sp.lower.iter_mut().for_each(|l| *l = 0.0);
    sp.eq_rows.push((0..n).map(|j| (j, 1.0)).collect());
    sp.eq_rhs.push(1.0);
    for i in 0..n {
        sp.ineq_rows.push(
            (0..n)
                .filter(|&j| c[(i, j)] != 0.0)
                .map(|j| (j, -c[(i, j)]))
                .collect(),
        );
        sp.ineq_rhs.push(0.0);
    }
    infeasibility_measure(&sp, &SolverOptions::default()) > 1e-7
}

/// One side of the LP / fractional-program bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct LpUpSide {
    pub lp_value: f64,
    pub up_value: f64,
    /// Parametric values `F(μ_k)` of the Dinkelbach iteration.
    pub parametric: Vec<f64>,
    /// Ratios `μ_k`.
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpUpBounds {
    /// Bounds `[lp, up]` on the positive eigenvalues.
    pub positive: LpUpSide,
    /// Same for `−λ` on the negative side, from the mirrored triple `(A, −B, C)`.
    pub negative: LpUpSide,
}

impl LpUpBounds {
    /// Interval containing every eigenvalue: `[−up⁻, up⁺]`.
    pub fn interval(&self) -> LambdaBounds {
        LambdaBounds {
            l: -self.negative.up_value,
            u: self.positive.up_value,
            method: BoundMethod::LpUp,
        }
    }
}

/// `pᵢ = 1 + Σⱼ (max{0, −Bᵢⱼ} + max{0, −Cᵢⱼ})`.
pub fn up_weights(b: &Matrix, c: &Matrix) -> Vec<f64> {
    (0..b.rows())
        .map(|i| {
            1.0 + (0..b.cols())
                .map(|j| (-b[(i, j)]).max(0.0) + (-c[(i, j)]).max(0.0))
                .sum::<f64>()
        })
        .collect()
}

/// `min{eᵀv + eᵀy : Av + By + Cx ≥ 0, eᵀy + eᵀx = 1, (x, y, v) ≥ 0}`.
pub fn lower_lp_value(a: &Matrix, b: &Matrix, c: &Matrix) -> Result<f64, BoundsError> {
    let n = a.rows();
    // variables (x, y, v)
    let mut obj = QuadraticObjective::zeros(3 * n);
    for i in 0..n {
        obj.q[n + i] = 1.0;
        obj.q[2 * n + i] = 1.0;
    }
    let mut sp = ConvexSubproblem::new(obj);
    sp.lower.iter_mut().for_each(|l| *l = 0.0);
    for i in 0..n {
        let mut row = Vec::with_capacity(3 * n);
        for j in 0..n {
            row.push((j, -c[(i, j)]));
            row.push((n + j, -b[(i, j)]));
            row.push((2 * n + j, -a[(i, j)]));
        }
        row.retain(|e| e.1 != 0.0);
        sp.ineq_rows.push(row);
        sp.ineq_rhs.push(0.0);
    }
    sp.eq_rows.push((0..2 * n).map(|j| (j, 1.0)).collect());
    sp.eq_rhs.push(1.0);
    let res = solve_convex(&sp, None, &SolverOptions::default());
    if res.status != SolveStatus::Optimal {
        return Err(BoundsError::Numeric(format!(
            "lower LP ended {}",
            res.status
        )));
    }
    Ok(res.objective)
}

/// Dinkelbach iteration for `max{pᵀy / (yᵀAy + xᵀx) : eᵀy + eᵀx = 1, (x, y) ≥ 0}`.
pub fn upper_fractional_value(
    a: &Matrix,
    p: &[f64],
) -> Result<(f64, Vec<f64>, Vec<f64>), BoundsError> {
    let n = a.rows();
    let asym = a.symmetrized()?;
    let ratio = |v: &[f64]| {
        let (x, y) = v.split_at(n);
        linalg::dot(p, y) / (asym.quad_form(y) + linalg::norm2_sq(x))
    };
    let mut v = vec![0.5 / n as f64; 2 * n];
    let mut mu = ratio(&v);
    let mut ratios = vec![mu];
    let mut parametric = Vec::new();
    for _ in 0..100 {
        // max pᵀy − μ(yᵀAy + xᵀx) as a convex minimization
        let mut obj = QuadraticObjective::zeros(2 * n);
        for i in 0..n {
            obj.p[(i, i)] = 2.0 * mu;
            obj.q[n + i] = -p[i];
            for j in 0..n {
                obj.p[(n + i, n + j)] = 2.0 * mu * asym[(i, j)];
            }
        }
        let mut sp = ConvexSubproblem::new(obj);
        sp.lower.iter_mut().for_each(|l| *l = 0.0);
        sp.eq_rows.push((0..2 * n).map(|j| (j, 1.0)).collect());
        sp.eq_rhs.push(1.0);
        let res = solve_convex(&sp, Some(&v), &SolverOptions::default());
        if res.status != SolveStatus::Optimal {
            return Err(BoundsError::Numeric(format!(
                "Dinkelbach subproblem ended {}",
                res.status
            )));
        }
        let value = -res.objective;
        if !value.is_finite() {
            return Err(BoundsError::Numeric("non-finite Dinkelbach value".into()));
        }
        parametric.push(value);
        v = res.point.iter().map(|x| x.max(0.0)).collect();
        let next = ratio(&v);
        if !next.is_finite() {
            return Err(BoundsError::Numeric("non-finite Dinkelbach ratio".into()));
        }
        if value <= 1e-9 {
            break;
        }
        mu = next.max(mu);
        ratios.push(mu);
    }
    Ok((mu, parametric, ratios))
}

fn lp_up_side(a: &Matrix, b: &Matrix, c: &Matrix) -> Result<LpUpSide, BoundsError> {
    let lp_value = lower_lp_value(a, b, c)?;
    if !(lp_value > 0.0) {
        return Err(BoundsError::AssumptionViolated(format!(
            "lower LP value {lp_value:e} is not positive"
        )));
    }
    let (up_value, parametric, ratios) = upper_fractional_value(a, &up_weights(b, c))?;
    Ok(LpUpSide {
        lp_value,
        up_value,
        parametric,
        ratios,
    })
}

/// Positive-side `[LP, UP]` bounds and the mirrored negative side.
pub fn lambda_bounds_lp_up(inst: &QeicpInstance) -> Result<LpUpBounds, BoundsError> {
    require_pd(inst)?;
    if !check_c_not_in_s0(&inst.c) {
        return Err(BoundsError::AssumptionViolated("C belongs to S0".into()));
    }
    let positive = lp_up_side(&inst.a, &inst.b, &inst.c)?;
    let negative = lp_up_side(&inst.a, &inst.b.scaled(-1.0), &inst.c)?;
    Ok(LpUpBounds { positive, negative })
}

/// Computes the interval for `method`. `External` is not computable here.
pub fn lambda_bounds(
    inst: &QeicpInstance,
    method: BoundMethod,
    literal_gamma: bool,
) -> Result<LambdaBounds, BoundsError> {
    match method {
        BoundMethod::Thm31 => lambda_bounds_thm31(inst).map(|r| r.0),
        BoundMethod::Thm32 => lambda_bounds_thm32(inst, literal_gamma).map(|r| r.0),
        BoundMethod::LpUp => lambda_bounds_lp_up(inst).map(|r| r.interval()),
        BoundMethod::External => Err(BoundsError::AssumptionViolated(
            "external bounds must be supplied by the caller".into(),
        )),
    }
}

/// Boxes satisfied by every optimal point once `λ ∈ [l, u]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableBox {
    pub p: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
    pub z_hi: f64,
    pub z_sum_hi: f64,
    pub w_hi: Vec<f64>,
}

pub fn variable_box(inst: &QeicpInstance, bounds: &LambdaBounds) -> VariableBox {
    let p = bounds.p();
    let w_hi = (0..inst.n)
        .map(|i| p * p * inst.a.row_norm(i) + p * inst.b.row_norm(i) + inst.c.row_norm(i))
        .collect();
    VariableBox {
        p,
        x_hi: 1.0,
        y_lo: bounds.l.min(0.0),
        y_hi: bounds.u.max(0.0),
        z_hi: p * p,
        z_sum_hi: p * p,
        w_hi,
    }
}

/// Curvature constants `ρ₁ ≥ ρ(∇²f₁)` and `ρ₂ ≥ ρ(∇²f₂)` on the bounded regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoPair {
    pub rho1: f64,
    pub rho2: f64,
}

/// `ρ₁ = 2(p + 1)²`, `ρ₂ = 6p² + 4p + 2`.
pub fn rho_constants(p: f64) -> RhoPair {
    RhoPair {
        rho1: 2.0 * (p + 1.0).powi(2),
        rho2: 6.0 * p * p + 4.0 * p + 2.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_random, Family};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn analytic(n: usize, c_sign: f64) -> QeicpInstance {
        QeicpInstance::new(
            Matrix::identity(n),
            Matrix::zeros(n, n),
            Matrix::identity(n).scaled(c_sign),
            "",
        )
        .unwrap()
    }

    #[test]
    fn thm31_analytic() {
        for n in [1, 3, 7] {
            let (b, inter) = lambda_bounds_thm31(&analytic(n, -1.0)).unwrap();
            let rn = (n as f64).sqrt();
            assert!((inter.s - 1.0 / n as f64).abs() < 1e-8);
            assert_eq!((inter.beta, inter.gamma), (0.0, 0.0));
            assert!((b.l + rn).abs() < 1e-7 && (b.u - rn).abs() < 1e-7);
        }
    }

    #[test]
    fn thm32_analytic() {
        for n in [1, 4, 9] {
            let (b, _) = lambda_bounds_thm32(&analytic(n, -1.0), false).unwrap();
            assert!((b.l + 1.0).abs() <= 1e-12 && (b.u - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn not_pd_is_rejected() {
        let mut inst = analytic(2, -1.0);
        inst.a[(1, 1)] = -1.0;
        assert_eq!(
            lambda_bounds_thm31(&inst).unwrap_err(),
            BoundsError::NotPositiveDefinite
        );
        assert_eq!(
            lambda_bounds_thm32(&inst, false).unwrap_err(),
            BoundsError::NotPositiveDefinite
        );
    }

    #[test]
    fn negative_alpha_is_reported() {
        // C = I makes the C-term negative with B = 0
        let err = lambda_bounds_thm32(&analytic(3, 1.0), false).unwrap_err();
        assert!(matches!(err, BoundsError::InvalidAlpha { .. }));
    }

    #[test]
    fn intervals_are_ordered() {
        for seed in 0..20 {
            let inst = generate_random(Family::Unit, 5, seed);
            let (b1, i1) = lambda_bounds_thm31(&inst).unwrap();
            let (b2, i2) = lambda_bounds_thm32(&inst, false).unwrap();
            assert!(b1.l <= b1.u && b2.l <= b2.u);
            assert!(i1.alpha >= i1.beta.powi(2).max(i1.gamma.powi(2)));
            assert!(i2.alpha >= i2.beta.powi(2).max(i2.gamma.powi(2)));
        }
    }

    #[test]
    fn up_weights_for_nonnegative_data() {
        let b = Matrix::from_fn(3, 3, |i, j| (i + j) as f64);
        assert_eq!(up_weights(&b, &b), vec![1.0; 3]);
        let nb = b.scaled(-1.0);
        assert_eq!(
            up_weights(&nb, &Matrix::zeros(3, 3))[1],
            1.0 + 1.0 + 2.0 + 3.0
        );
    }

    #[test]
    fn c_not_in_s0() {
        assert!(check_c_not_in_s0(&Matrix::identity(3).scaled(-1.0)));
        assert!(!check_c_not_in_s0(&Matrix::identity(3)));
        // a single nonnegative column gives a feasible x
        let mut c = Matrix::identity(3).scaled(-1.0);
        c[(0, 0)] = 1.0;
        assert!(!check_c_not_in_s0(&c));
    }

    #[test]
    fn lp_up_analytic() {
        let r = lambda_bounds_lp_up(&analytic(3, -1.0)).unwrap();
        assert!(r.positive.lp_value > 0.0);
        assert!(r.positive.lp_value <= 1.0 + 1e-9);
        assert!(r.positive.up_value >= 1.0 - 1e-9);
        let iv = r.interval();
        assert!(iv.l <= -1.0 + 1e-9 && iv.u >= 1.0 - 1e-9);
    }

    #[test]
    fn lp_value_matches_scalar_hand_solution() {
        // n = 1, A = 1, B = 0, C = −1: v ≥ x, x + y = 1, min v + y → x = 1, v = 1, value 1
        let a = Matrix::identity(1);
        let v = lower_lp_value(&a, &Matrix::zeros(1, 1), &a.scaled(-1.0)).unwrap();
        assert!((v - 1.0).abs() < 1e-8);
    }

    #[test]
    fn dinkelbach_against_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            // n = 1: maximize p y / (a y² + x²) over x + y = 1
            let a = rng.gen_range(0.5..3.0);
            let p = rng.gen_range(1.0..4.0);
            let (val, parametric, ratios) =
                upper_fractional_value(&Matrix::from_diagonal(&[a]), &[p]).unwrap();
            let grid = (0..=200_000)
                .map(|k| {
                    let y = k as f64 / 200_000.0;
                    p * y / (a * y * y + (1.0 - y).powi(2))
                })
                .fold(f64::MIN, f64::max);
            assert!((val - grid).abs() <= 1e-6 * grid, "{val} vs {grid}");
            for w in parametric.windows(2).skip(1) {
                assert!(w[1] <= w[0] + 1e-9);
            }
            for w in ratios.windows(2) {
                assert!(w[1] >= w[0]);
            }
        }
    }

    #[test]
    fn variable_box_formula() {
        let inst = analytic(2, -1.0);
        let b = LambdaBounds {
            l: -2.0,
            u: 0.5,
            method: BoundMethod::External,
        };
        let vb = variable_box(&inst, &b);
        assert_eq!(vb.p, 2.0);
        assert_eq!(
            (vb.y_lo, vb.y_hi, vb.z_hi, vb.z_sum_hi),
            (-2.0, 0.5, 4.0, 4.0)
        );
        assert_eq!(vb.w_hi, vec![5.0, 5.0]);
    }

    #[test]
    fn rho_formula() {
        assert_eq!(
            rho_constants(1.0),
            RhoPair {
                rho1: 8.0,
                rho2: 12.0
            }
        );
        assert_eq!(
            rho_constants(0.0),
            RhoPair {
                rho1: 2.0,
                rho2: 2.0
            }
        );
    }
}
