//! DCA drivers: the plain scheme over a fixed region, the local-decomposition
//! variant that re-derives the curvature constants around each iterate, the
//! initial point, solution polishing and the branch/formulation orchestration.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{self, rho_constants, BoundMethod, BoundsError, LambdaBounds, RhoPair};
use crate::dc::{self, DcError, Formulation, FormulationKind};
use crate::linalg::{self, cholesky_pd_check, LuFactorization, Matrix};
use crate::model::{self, IteratePoint, QeicpInstance, QeicpSolution};
use crate::subproblem::{
    build_region, DcaSubproblem, FeasibleRegion, LocalWindow, RegionError, RegionKind, SolveResult,
    SolveStatus, SolverOptions,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DcaError {
    #[error("matrix A is not positive definite")]
    NotPositiveDefinite,
    #[error("bounds: {0}")]
    Bounds(#[from] BoundsError),
    #[error("region: {0}")]
    Region(#[from] RegionError),
    #[error("decomposition: {0}")]
    Dc(#[from] DcError),
    #[error("configuration: {0}")]
    Config(String),
}

/// Stopping tolerances: objective change, step length, objective level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
}

impl Tolerances {
    pub fn uniform(eps: f64) -> Self {
        Self {
            eps1: eps,
            eps2: eps,
            eps3: eps,
        }
    }

    /// Residual tolerance for verifying a solution found at level `eps3`.
    pub fn verify_tol(&self) -> f64 {
        1e-6_f64.max(10.0 * self.eps3.sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcaOptions {
    pub tol: Tolerances,
    pub max_iter: usize,
    pub solver: SolverOptions,
}

impl Default for DcaOptions {
    fn default() -> Self {
        Self {
            tol: Tolerances::uniform(1e-6),
            max_iter: 10_000,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DcaStatus {
    /// `f* ≤ ε₃`: a complementarity solution.
    GlobalEps,
    /// Stopped on `Δf ≤ ε₁` or `ΔX ≤ ε₂` away from zero.
    KktPoint,
    InfeasibleRegion,
    IterationLimit,
}

impl DcaStatus {
    pub fn name(self) -> &'static str {
        match self {
            DcaStatus::GlobalEps => "global_eps",
            DcaStatus::KktPoint => "kkt_point",
            DcaStatus::InfeasibleRegion => "infeasible_region",
            DcaStatus::IterationLimit => "iteration_limit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            DcaStatus::GlobalEps,
            DcaStatus::KktPoint,
            DcaStatus::InfeasibleRegion,
            DcaStatus::IterationLimit,
        ]
        .into_iter()
        .find(|v| v.name() == s)
    }
}

impl fmt::Display for DcaStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    pub f_value: f64,
    pub delta_f: f64,
    pub delta_x: f64,
    pub lambda: f64,
    pub rho_used: Option<RhoPair>,
    pub subproblem_status: SolveStatus,
    pub subproblem_iterations: usize,
    /// Seconds since the start of the run.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DcaTrace {
    /// Objective at the starting point.
    pub f_initial: f64,
    pub records: Vec<TraceRecord>,
}

impl DcaTrace {
    /// Largest increase `f_{k+1} − f_k − slack·(1 + |f_k|)` over consecutive
    /// records; non-positive when the trace is monotone within `slack`.
    pub fn worst_ascent(&self, slack: f64) -> f64 {
        self.records
            .windows(2)
            .map(|w| w[1].f_value - w[0].f_value - slack * (1.0 + w[0].f_value.abs()))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_monotone(&self, slack: f64) -> bool {
        self.worst_ascent(slack) <= 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcaOutcome {
    pub kind: FormulationKind,
    pub point: IteratePoint,
    pub f_star: f64,
    pub status: DcaStatus,
    pub trace: DcaTrace,
    pub solution: Option<QeicpSolution>,
    pub cpu_seconds: f64,
    pub diagnostic: Option<String>,
}

impl DcaOutcome {
    pub fn iterations(&self) -> usize {
        self.trace.records.len()
    }

    pub fn is_verified(&self) -> bool {
        self.solution.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::Plus => "plus",
            Branch::Minus => "minus",
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialPoint {
    pub pt: IteratePoint,
    pub is_solution: bool,
    pub branch: Branch,
    /// The quadratic in `λ` had no real root; `λ⁰` is the real part.
    pub fallback: bool,
}

/// `x⁰ = argmin{xᵀAx : simplex}`, `λ⁰` a root of
/// `(x⁰ᵀAx⁰)λ² + (x⁰ᵀBx⁰)λ + x⁰ᵀCx⁰ = 0`, then the canonical lift.
pub fn initial_point(inst: &QeicpInstance, branch: Branch) -> Result<InitialPoint, DcaError> {
    if !cholesky_pd_check(&inst.a).map_err(BoundsError::from)?.is_pd {
        return Err(DcaError::NotPositiveDefinite);
    }
    let (_, x) = bounds::simplex_quadratic_min(&inst.a)?;
    let a = inst.a.quad_form(&x);
    let b = inst.b.quad_form(&x);
    let c = inst.c.quad_form(&x);
    let disc = b * b - 4.0 * a * c;
    let (lambda, fallback) = if disc < 0.0 {
        (-b / (2.0 * a), true)
    } else {
        let r = disc.sqrt();
        match branch {
            Branch::Plus => ((-b + r) / (2.0 * a), false),
            Branch::Minus => ((-b - r) / (2.0 * a), false),
        }
    };
    let pt = IteratePoint::from_eigenpair(inst, lambda, &x);
    let is_solution = model::residuals(inst, lambda, &pt.x, &pt.w).within(1e-9);
    Ok(InitialPoint {
        pt,
        is_solution,
        branch,
        fallback,
    })
}

/// Per-iteration decomposition and region.
struct StepSetup {
    form: Formulation,
    region: FeasibleRegion,
}

fn dca_loop(
    kind: FormulationKind,
    inst: &QeicpInstance,
    opts: &DcaOptions,
    pt0: &IteratePoint,
    setup: &mut dyn FnMut(&IteratePoint) -> Result<StepSetup, String>,
    on_step: &mut dyn FnMut(&DcaSubproblem, &SolveResult),
) -> DcaOutcome {
    let start = Instant::now();
    let f0 = dc::eval_objective(kind, pt0);
    let mut trace = DcaTrace {
        f_initial: f0,
        records: Vec::new(),
    };
    let mut pt = pt0.clone();
    let mut f_cur = f0;
    let mut status = DcaStatus::IterationLimit;
    let mut diagnostic = None;
    let mut previous: Option<SolveResult> = None;
    for k in 0..opts.max_iter {
        let StepSetup { form, region } = match setup(&pt) {
            Ok(s) => s,
            Err(msg) => {
                status = DcaStatus::KktPoint;
                diagnostic = Some(msg);
                break;
            }
        };
        let grad = dc::grad_h(&form, &pt, None);
        let sub = match DcaSubproblem::build(&form, &region, &grad) {
            Ok(s) => s,
            Err(e) => {
                status = DcaStatus::KktPoint;
                diagnostic = Some(e.to_string());
                break;
            }
        };
        let (next, res) = sub.solve_warm(&pt, previous.as_ref(), &opts.solver);
        on_step(&sub, &res);
        if res.status == SolveStatus::Infeasible {
            status = DcaStatus::InfeasibleRegion;
            diagnostic = Some(format!("subproblem infeasible at iteration {}", k + 1));
            break;
        }
        let warm = sub.embed(&pt);
        let m_warm = sub.problem.objective.value(&warm);
        let m_next = sub.problem.objective.value(&sub.embed(&next));
        let warm_feasible = region.violation(&pt) <= 1e-7;
        if res.status != SolveStatus::Optimal {
            // accept an inexact step only if it is feasible and does not
            // increase the convex majorant
            let ok = next.is_finite()
                && warm_feasible
                && region.violation(&next) <= 1e-7
                && m_next <= m_warm;
            if !ok {
                status = DcaStatus::KktPoint;
                diagnostic = Some(format!(
                    "subproblem ended {} at iteration {}",
                    res.status,
                    k + 1
                ));
                break;
            }
        }
        // the current point is feasible for the subproblem, so a step that
        // does not lower the majorant is replaced by a null step
        let next = if warm_feasible && m_next > m_warm {
            pt.clone()
        } else {
            next
        };
        let f_next = dc::eval_objective(kind, &next);
        let delta_f = (f_next - f_cur).abs();
        let delta_x = next.distance(&pt);
        trace.records.push(TraceRecord {
            k: k + 1,
            f_value: f_next,
            delta_f,
            delta_x,
            lambda: next.lambda,
            rho_used: form.rho,
            subproblem_status: res.status,
            subproblem_iterations: res.iterations,
            wall_time: start.elapsed().as_secs_f64(),
        });
        pt = next;
        f_cur = f_next;
        previous = Some(res);
        if f_next <= opts.tol.eps3 {
            status = DcaStatus::GlobalEps;
            break;
        }
        if delta_f <= opts.tol.eps1 || delta_x <= opts.tol.eps2 {
            status = DcaStatus::KktPoint;
            break;
        }
    }
    let mut outcome = DcaOutcome {
        kind,
        f_star: f_cur,
        point: pt,
        status,
        trace,
        solution: None,
        cpu_seconds: start.elapsed().as_secs_f64(),
        diagnostic,
    };
    if outcome.status == DcaStatus::GlobalEps {
        match extract_solution(inst, &outcome.point, opts.tol.verify_tol()) {
            Some(sol) => outcome.solution = Some(sol),
            None => {
                outcome.status = DcaStatus::KktPoint;
                outcome.diagnostic =
                    Some("objective below eps3 but the eigenpair failed verification".into());
            }
        }
    }
    outcome
}

/// Region of a formulation on the branch selected by the sign of `λ⁰`.
pub fn region_for(kind: FormulationKind, lambda0: f64) -> RegionKind {
    if !kind.is_hat() {
        RegionKind::Plain
    } else if lambda0 >= 0.0 {
        RegionKind::HatPos
    } else {
        RegionKind::HatNeg
    }
}

fn formulation_for(kind: FormulationKind, bounds: &LambdaBounds) -> Result<Formulation, DcError> {
    Formulation::new(kind, kind.is_hat().then(|| rho_constants(bounds.p())))
}

/// Plain DCA: the region and the decomposition stay fixed across iterations.
pub fn run_dca(
    kind: FormulationKind,
    inst: &QeicpInstance,
    bounds: &LambdaBounds,
    opts: &DcaOptions,
    pt0: &IteratePoint,
) -> Result<DcaOutcome, DcaError> {
    run_dca_observed(kind, inst, bounds, opts, pt0, &mut |_, _| {})
}

/// [`run_dca`] with a callback receiving every subproblem and its result.
pub fn run_dca_observed(
    kind: FormulationKind,
    inst: &QeicpInstance,
    bounds: &LambdaBounds,
    opts: &DcaOptions,
    pt0: &IteratePoint,
    on_step: &mut dyn FnMut(&DcaSubproblem, &SolveResult),
) -> Result<DcaOutcome, DcaError> {
    let form = formulation_for(kind, bounds)?;
    let region = build_region(region_for(kind, pt0.lambda), inst, bounds, None)?;
    let mut setup = |_: &IteratePoint| {
        Ok(StepSetup {
            form,
            region: region.clone(),
        })
    };
    Ok(dca_loop(kind, inst, opts, pt0, &mut setup, on_step))
}

/// Local DCA: per iteration, shrink the `λ`-interval to
/// `[λᵏ − a, λᵏ + a]` with `a = min{1, (λᵏ − l)/2, (u − λᵏ)/2}` and rebuild the
/// universal decomposition with the local constants.
///
/// A starting `λ⁰` outside `(l, u)` is moved inside before the first window.
pub fn run_dca_local(
    kind: FormulationKind,
    inst: &QeicpInstance,
    bounds: &LambdaBounds,
    opts: &DcaOptions,
    pt0: &IteratePoint,
) -> Result<DcaOutcome, DcaError> {
    if !kind.is_hat() {
        return Err(DcaError::Config(format!(
            "local decomposition needs a hat formulation, got {kind}"
        )));
    }
    let branch = region_for(kind, pt0.lambda);
    let margin = 0.01 * bounds.length();
    let start = if pt0.lambda <= bounds.l || pt0.lambda >= bounds.u {
        let lambda = pt0.lambda.clamp(bounds.l + margin, bounds.u - margin);
        IteratePoint::from_eigenpair(inst, lambda, &pt0.x)
    } else {
        pt0.clone()
    };
    // validate the parent region once
    build_region(branch, inst, bounds, None)?;
    let mut setup = |pt: &IteratePoint| -> Result<StepSetup, String> {
        let win = LocalWindow::around(pt, bounds);
        if !(win.a > 0.0) {
            return Err(format!(
                "lambda = {} reached the bound interval [{}, {}]",
                pt.lambda, bounds.l, bounds.u
            ));
        }
        let region = build_region(branch, inst, bounds, Some(&win)).map_err(|e| e.to_string())?;
        let p = region.p.expect("bounded regions carry p");
        let form = Formulation::hat(kind, rho_constants(p)).map_err(|e| e.to_string())?;
        Ok(StepSetup { form, region })
    };
    Ok(dca_loop(
        kind,
        inst,
        opts,
        &start,
        &mut setup,
        &mut |_, _| {},
    ))
}

/// Clips and renormalizes `x`, refines `(λ, x)` by Newton's method on the
/// support, and verifies the result at `tol`.
pub fn extract_solution(
    inst: &QeicpInstance,
    pt: &IteratePoint,
    tol: f64,
) -> Option<QeicpSolution> {
    let x: Vec<f64> =
        pt.x.iter()
            .map(|v| if *v < 0.0 && *v >= -1e-9 { 0.0 } else { *v })
            .collect();
    let base = model::verify_solution(inst, pt.lambda, &x, tol.max(1e-9)).ok()?;
    let mut best = base.solution;
    if let Some(refined) = newton_polish(inst, best.lambda, &best.x) {
        if refined.residual.max() < best.residual.max() {
            best = refined;
        }
    }
    best.residual.within(tol).then_some(best)
}

/// Newton refinement of `Q(λ)_SS x_S = 0`, `eᵀx_S = 1` on the support
/// `S = {i : xᵢ > wᵢ}` with `Q(λ) = λ²A + λB + C`.
fn newton_polish(inst: &QeicpInstance, lambda: f64, x: &[f64]) -> Option<QeicpSolution> {
    let n = inst.n;
    let w = inst.apply_pencil(lambda, x);
    let support: Vec<usize> = (0..n).filter(|&i| x[i] > w[i]).collect();
    if support.is_empty() {
        return None;
    }
    let m = support.len();
    let mut lam = lambda;
    let mut xs: Vec<f64> = support.iter().map(|&i| x[i]).collect();
    let full = |xs: &[f64]| {
        let mut v = vec![0.0; n];
        for (k, &i) in support.iter().enumerate() {
            v[i] = xs[k];
        }
        v
    };
    let score = |lam: f64, xs: &[f64]| -> Option<QeicpSolution> {
        let v = model::verify_solution(inst, lam, &full(xs), 1.0).ok()?;
        Some(v.solution)
    };
    let mut best = score(lam, &xs)?;
    for _ in 0..20 {
        let q = |i: usize, j: usize, l: f64| {
            l * l * inst.a[(i, j)] + l * inst.b[(i, j)] + inst.c[(i, j)]
        };
        let dq = |i: usize, j: usize, l: f64| 2.0 * l * inst.a[(i, j)] + inst.b[(i, j)];
        let mut jac = Matrix::zeros(m + 1, m + 1);
        let mut rhs = vec![0.0; m + 1];
        for (r, &i) in support.iter().enumerate() {
            let mut fi = 0.0;
            let mut dl = 0.0;
            for (c, &j) in support.iter().enumerate() {
                jac[(r, c)] = q(i, j, lam);
                fi += q(i, j, lam) * xs[c];
                dl += dq(i, j, lam) * xs[c];
            }
            jac[(r, m)] = dl;
            rhs[r] = -fi;
        }
        for c in 0..m {
            jac[(m, c)] = 1.0;
        }
        rhs[m] = 1.0 - xs.iter().sum::<f64>();
        let step = LuFactorization::new(jac).ok()?.solve(&rhs);
        if !step.iter().all(|s| s.is_finite()) {
            break;
        }
        let cand_x = linalg::add(&xs, &step[..m]);
        let cand_l = lam + step[m];
        if cand_x.iter().any(|v| *v < 0.0) {
            break;
        }
        let Some(cand) = score(cand_l, &cand_x) else {
            break;
        };
        if cand.residual.max() >= best.residual.max() {
            break;
        }
        best = cand;
        xs = cand_x;
        lam = cand_l;
        if best.residual.max() <= 1e-14 {
            break;
        }
    }
    Some(best)
}

/// Which runs [`solve_qeicp`] performs.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    pub formulations: Vec<FormulationKind>,
    pub bound_method: BoundMethod,
    /// Use the original statement of the spectral interval's upper branch.
    pub literal_gamma: bool,
    /// Used when `bound_method` is `External`.
    pub external_bounds: Option<LambdaBounds>,
    pub branches: Vec<Branch>,
    pub local_dc: bool,
    pub options: DcaOptions,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            formulations: FormulationKind::ALL.to_vec(),
            bound_method: BoundMethod::Thm32,
            literal_gamma: false,
            external_bounds: None,
            branches: vec![Branch::Plus, Branch::Minus],
            local_dc: false,
            options: DcaOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeEntry {
    pub branch: Branch,
    pub kind: FormulationKind,
    pub local_dc: bool,
    pub result: Result<DcaOutcome, DcaError>,
}

impl OutcomeEntry {
    pub fn is_verified(&self) -> bool {
        matches!(&self.result, Ok(o) if o.is_verified())
    }
}

/// Resolves the bound interval requested by `config`.
pub fn config_bounds(inst: &QeicpInstance, config: &SolveConfig) -> Result<LambdaBounds, DcaError> {
    if config.bound_method == BoundMethod::External {
        return config.external_bounds.ok_or_else(|| {
            DcaError::Config("external bound method without supplied bounds".into())
        });
    }
    Ok(bounds::lambda_bounds(
        inst,
        config.bound_method,
        config.literal_gamma,
    )?)
}

/// Runs every configured formulation on every configured branch; verified
/// outcomes come first.
pub fn solve_qeicp(
    inst: &QeicpInstance,
    config: &SolveConfig,
) -> Result<Vec<OutcomeEntry>, DcaError> {
    if config.formulations.is_empty() || config.branches.is_empty() {
        return Err(DcaError::Config(
            "at least one formulation and one branch are required".into(),
        ));
    }
    let needs_bounds = config.formulations.iter().any(|k| k.is_hat());
    let bounds = if needs_bounds {
        Some(config_bounds(inst, config))
    } else {
        None
    };
    let mut entries = Vec::new();
    for &branch in &config.branches {
        let init = initial_point(inst, branch);
        for &kind in &config.formulations {
            let local = config.local_dc && kind.is_hat();
            let result = match (&init, kind.is_hat(), &bounds) {
                (Err(e), _, _) => Err(e.clone()),
                (_, true, Some(Err(e))) => Err(e.clone()),
                (Ok(ip), true, Some(Ok(b))) => {
                    if local {
                        run_dca_local(kind, inst, b, &config.options, &ip.pt)
                    } else {
                        run_dca(kind, inst, b, &config.options, &ip.pt)
                    }
                }
                (Ok(ip), _, _) => {
                    // plain formulations do not use the interval
                    let unused = LambdaBounds {
                        l: f64::NEG_INFINITY,
                        u: f64::INFINITY,
                        method: BoundMethod::External,
                    };
                    run_dca(kind, inst, &unused, &config.options, &ip.pt)
                }
            };
            entries.push(OutcomeEntry {
                branch,
                kind,
                local_dc: local,
                result,
            });
        }
    }
    entries.sort_by_key(|e| !e.is_verified());
    Ok(entries)
}
