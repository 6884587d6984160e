//! Feasible regions of the lifted problem and a dense primal-dual
//! interior-point solver for the convex programs met along the way: LPs,
//! convex QPs and QPs with convex quadratic inequality constraints.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{variable_box, LambdaBounds};
use crate::dc::{self, Formulation};
use crate::linalg::{self, LuFactorization, Matrix};
use crate::model::{IteratePoint, QeicpInstance, VarLayout};

/// Sparse row as `(column, value)` pairs.
pub type SparseRow = Vec<(usize, f64)>;

pub fn sparse_dot(row: &[(usize, f64)], v: &[f64]) -> f64 {
    row.iter().map(|&(j, a)| a * v[j]).sum()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegionError {
    #[error("local window [{lo}, {hi}] leaves the bound interval [{l}, {u}]")]
    WindowOutsideBounds { lo: f64, hi: f64, l: f64, u: f64 },
    #[error("local windows apply only to bounded regions")]
    WindowOnPlainRegion,
    #[error("the {branch} branch is empty for bounds [{l}, {u}]")]
    EmptyBranch {
        branch: &'static str,
        l: f64,
        u: f64,
    },
}

/// `Σ_k (a_k·v + c_k)² + linear·v ≤ rhs`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuadConstraint {
    pub squares: Vec<(SparseRow, f64)>,
    pub linear: SparseRow,
    pub rhs: f64,
}

impl QuadConstraint {
    /// Constraint function `c(v) = lhs − rhs`; feasible iff `c(v) ≤ 0`.
    pub fn value(&self, v: &[f64]) -> f64 {
        let sq: f64 = self
            .squares
            .iter()
            .map(|(a, c)| {
                let r = sparse_dot(a, v) + c;
                r * r
            })
            .sum();
        sq + sparse_dot(&self.linear, v) - self.rhs
    }

    fn gradient(&self, v: &[f64]) -> SparseRow {
        let mut g: Vec<(usize, f64)> = Vec::new();
        for (a, c) in &self.squares {
            let r = 2.0 * (sparse_dot(a, v) + c);
            for &(j, aj) in a {
                g.push((j, r * aj));
            }
        }
        g.extend_from_slice(&self.linear);
        merge_sparse(g)
    }
}

fn merge_sparse(mut g: SparseRow) -> SparseRow {
    g.sort_by_key(|e| e.0);
    let mut out: SparseRow = Vec::with_capacity(g.len());
    for (j, a) in g {
        match out.last_mut() {
            Some(last) if last.0 == j => last.1 += a,
            _ => out.push((j, a)),
        }
    }
    out
}

/// `½ vᵀPv + qᵀv + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    pub p: Matrix,
    pub q: Vec<f64>,
    pub constant: f64,
}

impl QuadraticObjective {
    pub fn zeros(dim: usize) -> Self {
        Self {
            p: Matrix::zeros(dim, dim),
            q: vec![0.0; dim],
            constant: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// Adds `coef · (a·v + offset)²`.
    pub fn add_square(&mut self, coef: f64, a: &[(usize, f64)], offset: f64) {
        for &(i, ai) in a {
            for &(j, aj) in a {
                self.p[(i, j)] += 2.0 * coef * ai * aj;
            }
            self.q[i] += 2.0 * coef * offset * ai;
        }
        self.constant += coef * offset * offset;
    }

    pub fn add_linear(&mut self, a: &[f64]) {
        linalg::axpy(1.0, a, &mut self.q);
    }

    pub fn value(&self, v: &[f64]) -> f64 {
        0.5 * self.p.quad_form(v) + linalg::dot(&self.q, v) + self.constant
    }

    pub fn gradient(&self, v: &[f64]) -> Vec<f64> {
        linalg::add(&self.p.mul_vec(v), &self.q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    /// `w = Az + By + Cx`, `eᵀx = 1`, `eᵀy = λ`, `x, z, w ≥ 0`.
    Plain,
    /// The plain region intersected with the optimal-solution boxes.
    Hat,
    /// Bounded region restricted to `λ ≥ 0`.
    HatPos,
    /// Bounded region restricted to `λ ≤ 0`.
    HatNeg,
}

/// Shrunken `λ`-interval around the current iterate, for local decompositions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalWindow {
    pub lambda_k: f64,
    pub a: f64,
    /// Lower bound on `p_k`, large enough for the current iterate to stay inside.
    pub p_floor: f64,
    /// Range that the `y` box must keep covering.
    pub y_cover: (f64, f64),
}

impl LocalWindow {
    pub fn new(lambda_k: f64, a: f64) -> Self {
        Self {
            lambda_k,
            a,
            p_floor: 0.0,
            y_cover: (0.0, 0.0),
        }
    }

    /// Window centred at `pt.lambda` with `a = min{1, (λᵏ − l)/2, (u − λᵏ)/2}`,
    /// widened so that `pt` itself remains feasible.
    pub fn around(pt: &IteratePoint, bounds: &LambdaBounds) -> Self {
        let lk = pt.lambda;
        let a = 1.0_f64
            .min((lk - bounds.l) / 2.0)
            .min((bounds.u - lk) / 2.0)
            .max(0.0);
        let z_sum: f64 = pt.z.iter().map(|v| v.max(0.0)).sum();
        let z_max = pt.z.iter().fold(0.0_f64, |m, v| m.max(*v));
        let y_abs = pt.y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let y_lo = pt.y.iter().fold(0.0_f64, |m, v| m.min(*v));
        let y_hi = pt.y.iter().fold(0.0_f64, |m, v| m.max(*v));
        Self {
            lambda_k: lk,
            a,
            p_floor: z_sum.sqrt().max(z_max.sqrt()).max(y_abs),
            y_cover: (y_lo, y_hi),
        }
    }

    /// `p_k = max{|λᵏ − a|, |λᵏ + a|}`, raised to the floor.
    pub fn p_k(&self) -> f64 {
        (self.lambda_k - self.a)
            .abs()
            .max((self.lambda_k + self.a).abs())
            .max(self.p_floor)
    }
}

/// Linear constraints and variable boxes over the flattened `(x, y, z, w, λ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleRegion {
    pub kind: RegionKind,
    pub layout: VarLayout,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub eq_rows: Vec<SparseRow>,
    pub eq_rhs: Vec<f64>,
    pub ineq_rows: Vec<SparseRow>,
    pub ineq_rhs: Vec<f64>,
    /// The `p` behind the boxes; `None` for the plain region.
    pub p: Option<f64>,
    pub local: Option<LocalWindow>,
}

impl FeasibleRegion {
    pub fn lambda_range(&self) -> (f64, f64) {
        let k = self.layout.lambda();
        (self.lower[k], self.upper[k])
    }

    /// Largest violation of any constraint at `pt` (0 when feasible).
    pub fn violation(&self, pt: &IteratePoint) -> f64 {
        let v = pt.flatten();
        let mut worst = 0.0_f64;
        for (row, b) in self.eq_rows.iter().zip(&self.eq_rhs) {
            worst = worst.max((sparse_dot(row, &v) - b).abs());
        }
        for (row, b) in self.ineq_rows.iter().zip(&self.ineq_rhs) {
            worst = worst.max(sparse_dot(row, &v) - b);
        }
        for (j, x) in v.iter().enumerate() {
            worst = worst.max(self.lower[j] - x).max(x - self.upper[j]);
        }
        worst
    }

    pub fn contains(&self, pt: &IteratePoint, tol: f64) -> bool {
        self.violation(pt) <= tol
    }
}

pub fn build_region(
    kind: RegionKind,
    inst: &QeicpInstance,
    bounds: &LambdaBounds,
    local: Option<&LocalWindow>,
) -> Result<FeasibleRegion, RegionError> {
    let n = inst.n;
    let lay = VarLayout::new(n);
    let dim = lay.dim();
    let mut lower = vec![f64::NEG_INFINITY; dim];
    let upper = vec![f64::INFINITY; dim];
    for i in 0..n {
        lower[lay.x(i)] = 0.0;
        lower[lay.z(i)] = 0.0;
        lower[lay.w(i)] = 0.0;
    }

    let mut eq_rows = Vec::with_capacity(n + 2);
    let mut eq_rhs = Vec::with_capacity(n + 2);
    for i in 0..n {
        let mut row: SparseRow = Vec::with_capacity(3 * n + 1);
        for j in 0..n {
            push_nonzero(&mut row, lay.x(j), -inst.c[(i, j)]);
            push_nonzero(&mut row, lay.y(j), -inst.b[(i, j)]);
            push_nonzero(&mut row, lay.z(j), -inst.a[(i, j)]);
        }
        row.push((lay.w(i), 1.0));
        eq_rows.push(row);
        eq_rhs.push(0.0);
    }
    eq_rows.push((0..n).map(|i| (lay.x(i), 1.0)).collect());
    eq_rhs.push(1.0);
    let mut row: SparseRow = (0..n).map(|i| (lay.y(i), 1.0)).collect();
    row.push((lay.lambda(), -1.0));
    eq_rows.push(row);
    eq_rhs.push(0.0);

    let mut region = FeasibleRegion {
        kind,
        layout: lay,
        lower,
        upper,
        eq_rows,
        eq_rhs,
        ineq_rows: Vec::new(),
        ineq_rhs: Vec::new(),
        p: None,
        local: local.copied(),
    };
    if kind == RegionKind::Plain {
        if local.is_some() {
            return Err(RegionError::WindowOnPlainRegion);
        }
        return Ok(region);
    }

    let vb = variable_box(inst, bounds);
    let (l, u) = (bounds.l, bounds.u);
    let (mut lam_lo, mut lam_hi, mut y_lo, mut y_hi) = match kind {
        RegionKind::Hat => (l, u, vb.y_lo, vb.y_hi),
        RegionKind::HatPos => {
            if u < 0.0 {
                return Err(RegionError::EmptyBranch {
                    branch: "positive",
                    l,
                    u,
                });
            }
            (l.max(0.0), u, 0.0, u)
        }
        RegionKind::HatNeg => {
            if l > 0.0 {
                return Err(RegionError::EmptyBranch {
                    branch: "negative",
                    l,
                    u,
                });
            }
            (l, u.min(0.0), l, 0.0)
        }
        RegionKind::Plain => unreachable!(),
    };
    let mut p = vb.p;
    let mut z_hi = vb.z_hi;
    let mut z_sum_hi = vb.z_sum_hi;
    if let Some(win) = local {
        let lo = win.lambda_k - win.a;
        let hi = win.lambda_k + win.a;
        let slack = 1e-12 * (1.0 + l.abs().max(u.abs()));
        if lo < l - slack || hi > u + slack {
            return Err(RegionError::WindowOutsideBounds { lo, hi, l, u });
        }
        lam_lo = lam_lo.max(lo);
        lam_hi = lam_hi.min(hi);
        let pk = win.p_k().min(p);
        y_lo = y_lo.max(lo.min(0.0).min(win.y_cover.0));
        y_hi = y_hi.min(hi.max(0.0).max(win.y_cover.1));
        p = pk;
        z_hi = z_hi.min(pk * pk);
        z_sum_hi = z_sum_hi.min(pk * pk);
    }

    for i in 0..n {
        region.upper[lay.x(i)] = 1.0;
        region.lower[lay.y(i)] = y_lo;
        region.upper[lay.y(i)] = y_hi;
        region.upper[lay.z(i)] = z_hi;
        region.upper[lay.w(i)] = vb.w_hi[i];
    }
    region.lower[lay.lambda()] = lam_lo;
    region.upper[lay.lambda()] = lam_hi;
    region
        .ineq_rows
        .push((0..n).map(|i| (lay.z(i), 1.0)).collect());
    region.ineq_rhs.push(z_sum_hi);
    region.p = Some(p);
    Ok(region)
}

fn push_nonzero(row: &mut SparseRow, j: usize, v: f64) {
    if v != 0.0 {
        row.push((j, v));
    }
}

/// A convex program: quadratic objective, linear equalities, variable boxes,
/// linear inequalities and convex quadratic inequalities.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexSubproblem {
    pub objective: QuadraticObjective,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub eq_rows: Vec<SparseRow>,
    pub eq_rhs: Vec<f64>,
    pub ineq_rows: Vec<SparseRow>,
    pub ineq_rhs: Vec<f64>,
    pub quad: Vec<QuadConstraint>,
}

/// One inequality `c(v) ≤ 0` in the solver's fixed enumeration order:
/// lower then upper bounds per variable, linear rows, quadratic rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InequalityRef {
    Lower(usize),
    Upper(usize),
    Linear(usize),
    Quad(usize),
}

impl ConvexSubproblem {
    /// Unconstrained problem over `dim` variables.
    pub fn new(objective: QuadraticObjective) -> Self {
        let dim = objective.dim();
        Self {
            objective,
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
            eq_rows: Vec::new(),
            eq_rhs: Vec::new(),
            ineq_rows: Vec::new(),
            ineq_rhs: Vec::new(),
            quad: Vec::new(),
        }
    }

    /// The region's constraints on the leading variables; any extra
    /// variables of `objective` are left free.
    pub fn over_region(objective: QuadraticObjective, region: &FeasibleRegion) -> Self {
        let mut sp = Self::new(objective);
        let d = region.lower.len();
        sp.lower[..d].copy_from_slice(&region.lower);
        sp.upper[..d].copy_from_slice(&region.upper);
        sp.eq_rows = region.eq_rows.clone();
        sp.eq_rhs = region.eq_rhs.clone();
        sp.ineq_rows = region.ineq_rows.clone();
        sp.ineq_rhs = region.ineq_rhs.clone();
        sp
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn inequalities(&self) -> Vec<InequalityRef> {
        let mut out = Vec::new();
        for j in 0..self.dim() {
            if self.lower[j].is_finite() {
                out.push(InequalityRef::Lower(j));
            }
            if self.upper[j].is_finite() {
                out.push(InequalityRef::Upper(j));
            }
        }
        out.extend((0..self.ineq_rows.len()).map(InequalityRef::Linear));
        out.extend((0..self.quad.len()).map(InequalityRef::Quad));
        out
    }

    pub fn inequality_value(&self, r: InequalityRef, v: &[f64]) -> f64 {
        match r {
            InequalityRef::Lower(j) => self.lower[j] - v[j],
            InequalityRef::Upper(j) => v[j] - self.upper[j],
            InequalityRef::Linear(k) => sparse_dot(&self.ineq_rows[k], v) - self.ineq_rhs[k],
            InequalityRef::Quad(k) => self.quad[k].value(v),
        }
    }

    pub fn inequality_gradient(&self, r: InequalityRef, v: &[f64]) -> SparseRow {
        match r {
            InequalityRef::Lower(j) => vec![(j, -1.0)],
            InequalityRef::Upper(j) => vec![(j, 1.0)],
            InequalityRef::Linear(k) => self.ineq_rows[k].clone(),
            InequalityRef::Quad(k) => self.quad[k].gradient(v),
        }
    }

    fn eq_residual(&self, v: &[f64]) -> Vec<f64> {
        self.eq_rows
            .iter()
            .zip(&self.eq_rhs)
            .map(|(row, b)| sparse_dot(row, v) - b)
            .collect()
    }

    /// Largest constraint violation of `v`, equalities relative to `1 + |b|`.
    pub fn violation(&self, v: &[f64]) -> f64 {
        let eq = self
            .eq_residual(v)
            .iter()
            .zip(&self.eq_rhs)
            .fold(0.0_f64, |m, (r, b)| m.max(r.abs() / (1.0 + b.abs())));
        self.inequalities()
            .into_iter()
            .fold(eq, |m, r| m.max(self.inequality_value(r, v)))
    }

    fn has_contradictory_boxes(&self) -> bool {
        self.lower.iter().zip(&self.upper).any(|(lo, hi)| lo > hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
    Numeric,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Numeric => "numeric",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Bound on `sᵀz / (1 + |objective|)`.
    pub gap_tol: f64,
    /// Bound on the scaled primal and dual residuals.
    pub feas_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-10,
            feas_tol: 1e-8,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub point: Vec<f64>,
    pub objective: f64,
    /// `sᵀz / (1 + |objective|)` at the returned iterate.
    pub duality_gap: f64,
    /// Largest entry of [`KktReport`] for the returned primal-dual pair, on
    /// the internally rescaled problem.
    pub kkt_residual: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Multipliers of the equality rows.
    pub eq_duals: Vec<f64>,
    /// Multipliers of the inequalities, in [`ConvexSubproblem::inequalities`] order.
    pub ineq_duals: Vec<f64>,
}

/// Componentwise KKT residuals, all in the ∞-norm.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktReport {
    pub stationarity: f64,
    pub primal_eq: f64,
    pub primal_ineq: f64,
    pub dual_feas: f64,
    pub complementarity: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_eq)
            .max(self.primal_ineq)
            .max(self.dual_feas)
            .max(self.complementarity)
    }
}

/// KKT residuals of `(v, ν, z)` evaluated from scratch.
pub fn kkt_report(
    sp: &ConvexSubproblem,
    v: &[f64],
    eq_duals: &[f64],
    ineq_duals: &[f64],
) -> KktReport {
    let mut stat = sp.objective.gradient(v);
    for (row, nu) in sp.eq_rows.iter().zip(eq_duals) {
        for &(j, a) in row {
            stat[j] += nu * a;
        }
    }
    let mut primal_ineq = 0.0_f64;
    let mut dual_feas = 0.0_f64;
    let mut compl = 0.0_f64;
    for (r, &z) in sp.inequalities().into_iter().zip(ineq_duals) {
        let c = sp.inequality_value(r, v);
        for (j, g) in sp.inequality_gradient(r, v) {
            stat[j] += z * g;
        }
        primal_ineq = primal_ineq.max(c);
        dual_feas = dual_feas.max(-z);
        compl = compl.max((z * c).abs());
    }
    KktReport {
        stationarity: linalg::norm_inf(&stat),
        primal_eq: linalg::norm_inf(&sp.eq_residual(v)),
        primal_ineq,
        dual_feas,
        complementarity: compl,
    }
}

/// Phase-1 feasibility measure: `min τ` subject to `|Ev − b| ≤ τ` and
/// every inequality relaxed by `τ`. Values above `1e-7` certify infeasibility.
pub fn infeasibility_measure(sp: &ConvexSubproblem, opts: &SolverOptions) -> f64 {
    let n = sp.dim();
    let tau = n;
    let mut obj = QuadraticObjective::zeros(n + 1);
    obj.q[tau] = 1.0;
    // tiny proximal term keeps the optimal face bounded
    for j in 0..n {
        obj.p[(j, j)] = 1e-10;
    }
    let mut p1 = ConvexSubproblem::new(obj);
    p1.lower[tau] = -1.0;
    for (row, &b) in sp.eq_rows.iter().zip(&sp.eq_rhs) {
        let mut pos = row.clone();
        pos.push((tau, -1.0));
        p1.ineq_rows.push(pos);
        p1.ineq_rhs.push(b);
        let mut neg: SparseRow = row.iter().map(|&(j, a)| (j, -a)).collect();
        neg.push((tau, -1.0));
        p1.ineq_rows.push(neg);
        p1.ineq_rhs.push(-b);
    }
    for j in 0..n {
        if sp.lower[j].is_finite() {
            p1.ineq_rows.push(vec![(j, -1.0), (tau, -1.0)]);
            p1.ineq_rhs.push(-sp.lower[j]);
        }
        if sp.upper[j].is_finite() {
            p1.ineq_rows.push(vec![(j, 1.0), (tau, -1.0)]);
            p1.ineq_rhs.push(sp.upper[j]);
        }
    }
    for (row, &b) in sp.ineq_rows.iter().zip(&sp.ineq_rhs) {
        let mut r = row.clone();
        r.push((tau, -1.0));
        p1.ineq_rows.push(r);
        p1.ineq_rhs.push(b);
    }
    for q in &sp.quad {
        let mut q1 = q.clone();
        q1.linear.push((tau, -1.0));
        p1.quad.push(q1);
    }
    let res = interior_point(&p1, None, None, opts);
    res.point[tau]
}

/// Solves the convex program, falling back to a phase-1 feasibility check
/// when the main iteration does not reach optimality.
pub fn solve_convex(
    sp: &ConvexSubproblem,
    warm_start: Option<&[f64]>,
    opts: &SolverOptions,
) -> SolveResult {
    solve_convex_warm(sp, warm_start, None, opts)
}

/// [`solve_convex`] with the multipliers `(eq, ineq)` of a nearby problem of
/// the same shape as the dual starting point.
pub fn solve_convex_warm(
    sp: &ConvexSubproblem,
    warm_start: Option<&[f64]>,
    duals: Option<(&[f64], &[f64])>,
    opts: &SolverOptions,
) -> SolveResult {
    if sp.has_contradictory_boxes() {
        return SolveResult {
            point: vec![0.0; sp.dim()],
            objective: f64::NAN,
            duality_gap: f64::INFINITY,
            kkt_residual: f64::INFINITY,
            status: SolveStatus::Infeasible,
            iterations: 0,
            eq_duals: vec![0.0; sp.eq_rows.len()],
            ineq_duals: vec![0.0; sp.inequalities().len()],
        };
    }
    let sc = Equilibration::new(sp, warm_start);
    let scaled = sc.apply(sp);
    let warm_hat = warm_start.map(|w| sc.point_to_scaled(w));
    let duals_hat = duals.map(|(eq, ineq)| sc.duals_to_scaled(eq, ineq));
    let mut res = interior_point(
        &scaled,
        warm_hat.as_deref(),
        duals_hat
            .as_ref()
            .map(|(e, i)| (e.as_slice(), i.as_slice())),
        opts,
    );
    // a feasible warm start already certifies the region is nonempty
    let certified = warm_hat
        .as_deref()
        .is_some_and(|w| w.len() == scaled.dim() && scaled.violation(w) <= 1e-7);
    if res.status != SolveStatus::Optimal
        && !certified
        && infeasibility_measure(&scaled, opts) > 1e-7
    {
        res.status = SolveStatus::Infeasible;
    }
    sc.restore(sp, res)
}

/// Diagonal rescaling `v = D v̂` around the warm start, unit-norm rows and a
/// normalized objective, so that iterates far from the origin stay well
/// conditioned.
struct Equilibration {
    d: Vec<f64>,
    sigma: f64,
    eq_scale: Vec<f64>,
    /// Per inequality, in [`ConvexSubproblem::inequalities`] order.
    ineq_scale: Vec<f64>,
    lin_scale: Vec<f64>,
    quad_scale: Vec<f64>,
}

fn row_max(row: &[(usize, f64)], d: &[f64]) -> f64 {
    row.iter()
        .fold(0.0_f64, |m, &(j, a)| m.max((a * d[j]).abs()))
}

fn positive_or_one(x: f64) -> f64 {
    if x > 0.0 && x.is_finite() {
        x
    } else {
        1.0
    }
}

impl Equilibration {
    fn new(sp: &ConvexSubproblem, warm_start: Option<&[f64]>) -> Self {
        let n = sp.dim();
        let d: Vec<f64> = match warm_start {
            Some(w) if w.len() >= n => w[..n]
                .iter()
                .map(|x| if x.is_finite() { x.abs().max(1.0) } else { 1.0 })
                .collect(),
            _ => vec![1.0; n],
        };
        let mut obj_max = sp
            .objective
            .q
            .iter()
            .zip(&d)
            .fold(0.0_f64, |m, (q, d)| m.max((q * d).abs()));
        for i in 0..n {
            for j in 0..n {
                obj_max = obj_max.max((sp.objective.p[(i, j)] * d[i] * d[j]).abs());
            }
        }
        let sigma = 1.0 / obj_max.max(1.0);
        let eq_scale = sp
            .eq_rows
            .iter()
            .map(|r| positive_or_one(row_max(r, &d)))
            .collect();
        let lin_scale: Vec<f64> = sp
            .ineq_rows
            .iter()
            .map(|r| positive_or_one(row_max(r, &d)))
            .collect();
        let quad_scale: Vec<f64> = sp
            .quad
            .iter()
            .map(|q| {
                let sq = q.squares.iter().fold(0.0_f64, |m, (a, _)| {
                    let s: f64 = a.iter().map(|&(j, aj)| (aj * d[j]).abs()).sum();
                    m.max(s * s)
                });
                positive_or_one(sq.max(row_max(&q.linear, &d)))
            })
            .collect();
        let ineq_scale = sp
            .inequalities()
            .into_iter()
            .map(|r| match r {
                InequalityRef::Lower(j) | InequalityRef::Upper(j) => d[j],
                InequalityRef::Linear(k) => lin_scale[k],
                InequalityRef::Quad(k) => quad_scale[k],
            })
            .collect();
        Self {
            d,
            sigma,
            eq_scale,
            ineq_scale,
            lin_scale,
            quad_scale,
        }
    }

    fn scale_row(&self, row: &[(usize, f64)], r: f64) -> SparseRow {
        row.iter().map(|&(j, a)| (j, a * self.d[j] / r)).collect()
    }

    fn apply(&self, sp: &ConvexSubproblem) -> ConvexSubproblem {
        let n = sp.dim();
        let d = &self.d;
        let mut obj = QuadraticObjective::zeros(n);
        for i in 0..n {
            for j in 0..n {
                obj.p[(i, j)] = self.sigma * sp.objective.p[(i, j)] * d[i] * d[j];
            }
            obj.q[i] = self.sigma * sp.objective.q[i] * d[i];
        }
        obj.constant = self.sigma * sp.objective.constant;
        let quad = sp
            .quad
            .iter()
            .zip(&self.quad_scale)
            .map(|(q, &r)| {
                let sr = r.sqrt();
                QuadConstraint {
                    squares: q
                        .squares
                        .iter()
                        .map(|(a, c)| (self.scale_row(a, sr), c / sr))
                        .collect(),
                    linear: self.scale_row(&q.linear, r),
                    rhs: q.rhs / r,
                }
            })
            .collect();
        ConvexSubproblem {
            objective: obj,
            lower: sp.lower.iter().zip(d).map(|(l, d)| l / d).collect(),
            upper: sp.upper.iter().zip(d).map(|(u, d)| u / d).collect(),
            eq_rows: sp
                .eq_rows
                .iter()
                .zip(&self.eq_scale)
                .map(|(row, &e)| self.scale_row(row, e))
                .collect(),
            eq_rhs: sp
                .eq_rhs
                .iter()
                .zip(&self.eq_scale)
                .map(|(b, e)| b / e)
                .collect(),
            ineq_rows: sp
                .ineq_rows
                .iter()
                .zip(&self.lin_scale)
                .map(|(row, &r)| self.scale_row(row, r))
                .collect(),
            ineq_rhs: sp
                .ineq_rhs
                .iter()
                .zip(&self.lin_scale)
                .map(|(b, r)| b / r)
                .collect(),
            quad,
        }
    }

    fn point_to_scaled(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.d).map(|(x, d)| x / d).collect()
    }

    fn duals_to_scaled(&self, eq: &[f64], ineq: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let map = |v: &[f64], s: &[f64]| -> Vec<f64> {
            if v.len() != s.len() {
                return Vec::new();
            }
            v.iter().zip(s).map(|(y, r)| y * self.sigma * r).collect()
        };
        (map(eq, &self.eq_scale), map(ineq, &self.ineq_scale))
    }

    fn restore(&self, sp: &ConvexSubproblem, mut res: SolveResult) -> SolveResult {
        res.point = res.point.iter().zip(&self.d).map(|(x, d)| x * d).collect();
        res.objective = sp.objective.value(&res.point);
        for (y, e) in res.eq_duals.iter_mut().zip(&self.eq_scale) {
            *y /= self.sigma * e;
        }
        for (y, r) in res.ineq_duals.iter_mut().zip(&self.ineq_scale) {
            *y /= self.sigma * r;
        }
        res
    }
}

struct Workspace<'a> {
    sp: &'a ConvexSubproblem,
    ineqs: Vec<InequalityRef>,
}

impl Workspace<'_> {
    fn values(&self, v: &[f64]) -> Vec<f64> {
        self.ineqs
            .iter()
            .map(|&r| self.sp.inequality_value(r, v))
            .collect()
    }

    fn gradients(&self, v: &[f64]) -> Vec<SparseRow> {
        self.ineqs
            .iter()
            .map(|&r| self.sp.inequality_gradient(r, v))
            .collect()
    }
}

fn starting_point(sp: &ConvexSubproblem, warm_start: Option<&[f64]>) -> Vec<f64> {
    let n = sp.dim();
    let mut v = match warm_start {
        Some(w) if w.len() >= n && w[..n].iter().all(|x| x.is_finite()) => w[..n].to_vec(),
        _ => vec![0.0; n],
    };
    for j in 0..n {
        let (lo, hi) = (sp.lower[j], sp.upper[j]);
        match (lo.is_finite(), hi.is_finite()) {
            (true, true) => {
                let c = 0.5 * (lo + hi);
                v[j] = v[j].clamp(lo, hi);
                v[j] += 1e-6 * (c - v[j]);
            }
            (true, false) => v[j] = v[j].max(lo + 1e-6 * (1.0 + lo.abs())),
            (false, true) => v[j] = v[j].min(hi - 1e-6 * (1.0 + hi.abs())),
            (false, false) => {}
        }
    }
    v
}

fn interior_point(
    sp: &ConvexSubproblem,
    warm_start: Option<&[f64]>,
    duals: Option<(&[f64], &[f64])>,
    opts: &SolverOptions,
) -> SolveResult {
    let n = sp.dim();
    let me = sp.eq_rows.len();
    let ws = Workspace {
        sp,
        ineqs: sp.inequalities(),
    };
    let m = ws.ineqs.len();

    let mut v = starting_point(sp, warm_start);
    let c0 = ws.values(&v);
    let (mut nu, mut s, mut z) = match duals {
        Some((eq, ineq)) if eq.len() == me && ineq.len() == m => {
            // keep both sides of every complementarity pair off zero
            let theta = 1e-3;
            let s: Vec<f64> = c0.iter().map(|c| (-c).max(theta)).collect();
            let z: Vec<f64> = ineq.iter().map(|z| z.max(theta)).collect();
            (eq.to_vec(), s, z)
        }
        _ => {
            let s: Vec<f64> = c0.iter().map(|c| (-c).max(1.0)).collect();
            let z: Vec<f64> = s.iter().map(|s| 1.0 / s).collect();
            (vec![0.0; me], s, z)
        }
    };

    let b_scale = 1.0 + linalg::norm_inf(&sp.eq_rhs);
    let q_scale = 1.0 + linalg::norm_inf(&sp.objective.q);
    let reg_p = 1e-11 * (1.0 + sp.objective.p.max_abs_diagonal());
    let reg_d = 1e-11;

    let mut status = SolveStatus::MaxIter;
    let mut iterations = 0;
    let mut stalls = 0;
    // least-infeasible iterate seen, returned when the loop ends without convergence
    let mut best = (
        f64::INFINITY,
        Vec::new(),
        Vec::new(),
        Vec::new(),
        Vec::new(),
    );
    for iter in 0..=opts.max_iter {
        iterations = iter;
        let cv = ws.values(&v);
        let grads = ws.gradients(&v);
        let mut r_d = sp.objective.gradient(&v);
        for (row, nu_k) in sp.eq_rows.iter().zip(&nu) {
            for &(j, a) in row {
                r_d[j] += nu_k * a;
            }
        }
        for (g, zi) in grads.iter().zip(&z) {
            for &(j, a) in g {
                r_d[j] += zi * a;
            }
        }
        let r_p = sp.eq_residual(&v);
        let r_i: Vec<f64> = cv.iter().zip(&s).map(|(c, s)| c + s).collect();
        let obj = sp.objective.value(&v);
        let sz = linalg::dot(&s, &z);
        let mu = if m > 0 { sz / m as f64 } else { 0.0 };

        let all_finite = obj.is_finite()
            && r_d.iter().all(|x| x.is_finite())
            && r_i.iter().all(|x| x.is_finite());
        if !all_finite {
            status = SolveStatus::Numeric;
            break;
        }
        let gap = sz / (1.0 + obj.abs());
        let pinf = (linalg::norm_inf(&r_p) / b_scale).max(linalg::norm_inf(&r_i) / b_scale);
        let dinf = linalg::norm_inf(&r_d) / q_scale;
        if gap <= opts.gap_tol && pinf <= opts.feas_tol && dinf <= opts.feas_tol {
            status = SolveStatus::Optimal;
            break;
        }
        let merit = (gap / opts.gap_tol)
            .max(pinf / opts.feas_tol)
            .max(dinf / opts.feas_tol);
        if merit < best.0 {
            best = (merit, v.clone(), nu.clone(), s.clone(), z.clone());
        }
        if iter == opts.max_iter {
            break;
        }

        // reduced Newton matrix H + Jᵀ D J
        let mut kkt = Matrix::zeros(n + me, n + me);
        for i in 0..n {
            for j in 0..n {
                kkt[(i, j)] = sp.objective.p[(i, j)];
            }
        }
        for (k, &r) in ws.ineqs.iter().enumerate() {
            if let InequalityRef::Quad(qi) = r {
                for (a, _) in &sp.quad[qi].squares {
                    for &(i, ai) in a {
                        for &(j, aj) in a {
                            kkt[(i, j)] += 2.0 * z[k] * ai * aj;
                        }
                    }
                }
            }
            let d = z[k] / s[k];
            let g = &grads[k];
            for &(i, gi) in g {
                for &(j, gj) in g {
                    kkt[(i, j)] += d * gi * gj;
                }
            }
        }
        let mut k0 = kkt.clone();
        for (r, row) in sp.eq_rows.iter().enumerate() {
            for &(j, a) in row {
                kkt[(n + r, j)] = a;
                kkt[(j, n + r)] = a;
                k0[(n + r, j)] = a;
                k0[(j, n + r)] = a;
            }
        }
        // escalate the regularization when elimination breaks down
        let mut lu = None;
        for scale in [1.0, 1e3, 1e6] {
            let mut reg = kkt.clone();
            for i in 0..n {
                reg[(i, i)] += scale * reg_p;
            }
            for r in 0..me {
                reg[(n + r, n + r)] = -scale * reg_d;
            }
            if let Ok(f) = LuFactorization::new(reg) {
                lu = Some(f);
                break;
            }
        }
        let Some(lu) = lu else {
            status = SolveStatus::Numeric;
            break;
        };

        let solve_dir = |r_c: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
            let mut rhs = vec![0.0; n + me];
            for j in 0..n {
                rhs[j] = -r_d[j];
            }
            for k in 0..m {
                let coef = z[k] / s[k] * r_i[k] - r_c[k] / s[k];
                for &(j, g) in &grads[k] {
                    rhs[j] -= coef * g;
                }
            }
            for r in 0..me {
                rhs[n + r] = -r_p[r];
            }
            let mut sol = lu.solve(&rhs);
            // refine against the unregularized system
            for _ in 0..2 {
                let res = linalg::sub(&rhs, &k0.mul_vec(&sol));
                let corr = lu.solve(&res);
                let cand = linalg::add(&sol, &corr);
                let new_res = linalg::sub(&rhs, &k0.mul_vec(&cand));
                if linalg::norm_inf(&new_res) < linalg::norm_inf(&res) {
                    sol = cand;
                } else {
                    break;
                }
            }
            let dv = sol[..n].to_vec();
            let dnu = sol[n..].to_vec();
            let mut ds = vec![0.0; m];
            let mut dz = vec![0.0; m];
            for k in 0..m {
                let jdv = sparse_dot(&grads[k], &dv);
                ds[k] = -r_i[k] - jdv;
                dz[k] = (-r_c[k] - z[k] * ds[k]) / s[k];
            }
            (dv, dnu, ds, dz)
        };

        let r_aff: Vec<f64> = s.iter().zip(&z).map(|(s, z)| s * z).collect();
        let (dv_a, _, ds_a, dz_a) = solve_dir(&r_aff);
        let alpha_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a)).min(1.0);
        let sigma = if m > 0 {
            let mu_aff: f64 = (0..m)
                .map(|k| (s[k] + alpha_aff * ds_a[k]) * (z[k] + alpha_aff * dz_a[k]))
                .sum::<f64>()
                / m as f64;
            (mu_aff / mu).clamp(0.0, 1.0).powi(3)
        } else {
            0.0
        };
        let _ = dv_a;
        let r_c: Vec<f64> = (0..m)
            .map(|k| s[k] * z[k] + ds_a[k] * dz_a[k] - sigma * mu)
            .collect();
        let (dv, dnu, ds, dz) = solve_dir(&r_c);
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
        if !alpha.is_finite() {
            status = SolveStatus::Numeric;
            break;
        }
        if alpha < 1e-12 {
            stalls += 1;
            if stalls >= 3 {
                break;
            }
        } else {
            stalls = 0;
        }
        linalg::axpy(alpha, &dv, &mut v);
        linalg::axpy(alpha, &dnu, &mut nu);
        for k in 0..m {
            s[k] = (s[k] + alpha * ds[k]).max(1e-300);
            z[k] = (z[k] + alpha * dz[k]).max(1e-300);
        }
    }
    if status != SolveStatus::Optimal && best.0.is_finite() {
        (_, v, nu, s, z) = best;
    }

    let objective = sp.objective.value(&v);
    let report = kkt_report(sp, &v, &nu, &z);
    SolveResult {
        duality_gap: linalg::dot(&s, &z) / (1.0 + objective.abs()),
        kkt_residual: report.max(),
        objective,
        point: v,
        status,
        iterations,
        eq_duals: nu,
        ineq_duals: z,
    }
}

/// Largest `α ∈ [0, ∞)` with `x + α dx ≥ 0`.
fn max_step(x: &[f64], dx: &[f64]) -> f64 {
    x.iter()
        .zip(dx)
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

/// The convex program solved at one DCA step, with the map back to points.
#[derive(Debug, Clone, PartialEq)]
pub struct DcaSubproblem {
    pub problem: ConvexSubproblem,
    pub layout: VarLayout,
    /// Whether the trailing eight variables are the lifting variables `t`.
    pub lifted: bool,
}

impl DcaSubproblem {
    /// Convex majorant `g(v) − ⟨v, grad⟩` over `region`.
    pub fn build(
        form: &Formulation,
        region: &FeasibleRegion,
        grad: &[f64],
    ) -> Result<Self, dc::DcError> {
        let layout = region.layout;
        if form.kind.is_hat() {
            let mut obj = dc::hat_convex_objective(form, layout.n)?;
            if grad.len() != layout.dim() {
                return Err(dc::DcError::GradientLength {
                    expected: layout.dim(),
                    got: grad.len(),
                });
            }
            linalg::axpy(-1.0, grad, &mut obj.q);
            Ok(Self {
                problem: ConvexSubproblem::over_region(obj, region),
                layout,
                lifted: false,
            })
        } else {
            let lifted = dc::lift_linearized_objective(form.kind, layout.n, grad)?;
            let mut problem = ConvexSubproblem::over_region(lifted.objective, region);
            problem.quad = lifted.constraints;
            Ok(Self {
                problem,
                layout,
                lifted: true,
            })
        }
    }

    /// Solver-space vector for `pt`, with tight lifting variables.
    pub fn embed(&self, pt: &IteratePoint) -> Vec<f64> {
        let mut v = pt.flatten();
        if self.lifted {
            v.extend_from_slice(&dc::lifting_values(pt));
        }
        v
    }

    pub fn point_of(&self, v: &[f64]) -> IteratePoint {
        IteratePoint::from_flat(self.layout.n, v).expect("solver vector has the layout's length")
    }

    pub fn solve(&self, warm: &IteratePoint, opts: &SolverOptions) -> (IteratePoint, SolveResult) {
        self.solve_warm(warm, None, opts)
    }

    /// [`Self::solve`] reusing the multipliers of the previous step.
    pub fn solve_warm(
        &self,
        warm: &IteratePoint,
        previous: Option<&SolveResult>,
        opts: &SolverOptions,
    ) -> (IteratePoint, SolveResult) {
        let duals = previous
            .filter(|r| r.status == SolveStatus::Optimal)
            .map(|r| (r.eq_duals.as_slice(), r.ineq_duals.as_slice()));
        let res = solve_convex_warm(&self.problem, Some(&self.embed(warm)), duals, opts);
        (self.point_of(&res.point), res)
    }
}

/// One DCA step: minimize the convex majorant built from `grad` over `region`,
/// warm-started at `pt_k`.
pub fn solve_dca_step(
    form: &Formulation,
    region: &FeasibleRegion,
    pt_k: &IteratePoint,
    grad: &[f64],
    opts: &SolverOptions,
) -> Result<(IteratePoint, SolveResult), dc::DcError> {
    let sub = DcaSubproblem::build(form, region, grad)?;
    Ok(sub.solve(pt_k, opts))
}
