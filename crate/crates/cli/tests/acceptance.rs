//! Acceptance suite: one test per criterion, each printing a single
//! `[PASS]` or `[FAIL]` line before asserting.

use std::io::Write;
use std::process::Command;
use std::time::Instant;

use qeicp_cli::{run_cell, BenchSpec};
use qeicp_core::bounds::{
    check_c_not_in_s0, lambda_bounds_lp_up, lambda_bounds_thm31, lambda_bounds_thm32,
    rho_constants, BoundMethod, LambdaBounds,
};
use qeicp_core::dc::{
    eval_g, eval_h, eval_objective, grad_h, hessian_f1, hessian_f2, sample_region_point,
    Formulation, FormulationKind,
};
use qeicp_core::dca::{
    initial_point, run_dca, run_dca_local, run_dca_observed, solve_qeicp, Branch, DcaOptions,
    DcaStatus, SolveConfig, Tolerances,
};
use qeicp_core::linalg::{spectral_radius_symmetric, Matrix};
use qeicp_core::model::{generate_random, write_instance, Family, IteratePoint, QeicpInstance};
use qeicp_core::subproblem::{build_region, DcaSubproblem, RegionKind, SolveResult};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(criterion: usize, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    // straight to the process stream so the line survives output capture
    let line = format!("[{tag}] criterion {criterion}: {detail}\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn analytic(n: usize, c_sign: f64) -> QeicpInstance {
    QeicpInstance::new(
        Matrix::identity(n),
        Matrix::zeros(n, n),
        Matrix::identity(n).scaled(c_sign),
        format!("analytic({n})"),
    )
    .unwrap()
}

fn random_point(rng: &mut ChaCha8Rng, n: usize) -> IteratePoint {
    let mut u = |lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.gen_range(lo..hi)).collect() };
    IteratePoint {
        x: u(0.0, 1.0),
        y: u(-2.0, 2.0),
        z: u(-2.0, 2.0),
        w: u(-2.0, 2.0),
        lambda: rng.gen_range(-3.0..3.0),
    }
}

fn formulation(kind: FormulationKind) -> Formulation {
    Formulation::new(kind, kind.is_hat().then(|| rho_constants(3.0))).unwrap()
}

#[test]
fn criterion_01_dc_identity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0_f64;
    for kind in FormulationKind::ALL {
        let form = formulation(kind);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=6);
            let pt = random_point(&mut rng, n);
            let f = eval_objective(kind, &pt);
            let err = (eval_g(&form, &pt) - eval_h(&form, &pt) - f).abs() / (1.0 + f.abs());
            worst = worst.max(err);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-9 && secs < 5.0;
    report(
        1,
        pass,
        &format!("max relative |g-h-f| = {worst:.2e} over 4000 points in {secs:.2}s"),
    );
    assert!(pass);
}

#[test]
fn criterion_02_derivatives() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_fd = 0.0_f64;
    for kind in FormulationKind::ALL {
        let form = formulation(kind);
        let mut done = 0;
        while done < 100 {
            let n = rng.gen_range(1..=5);
            let pt = random_point(&mut rng, n);
            if (0..n).any(|i| (pt.x[i] - pt.w[i]).abs() < 1e-2) {
                continue;
            }
            done += 1;
            let g = grad_h(&form, &pt, None);
            let v = pt.flatten();
            let scale = g.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
            for j in 0..v.len() {
                let h = 1e-5;
                let mut vp = v.clone();
                vp[j] += h;
                let mut vm = v.clone();
                vm[j] -= h;
                let fp = eval_h(&form, &IteratePoint::from_flat(n, &vp).unwrap());
                let fm = eval_h(&form, &IteratePoint::from_flat(n, &vm).unwrap());
                let fd = (fp - fm) / (2.0 * h);
                worst_fd = worst_fd.max((fd - g[j]).abs() / scale);
            }
        }
    }

    // subgradient inequality for the nonsmooth second components
    let inst = generate_random(Family::Unit, 4, 7);
    let (b, _) = lambda_bounds_thm32(&inst, false).unwrap();
    let region = build_region(RegionKind::HatPos, &inst, &b, None).unwrap();
    let mut worst_slack = f64::INFINITY;
    for kind in [FormulationKind::PPrimeDc, FormulationKind::PHatPrimeDc] {
        let form = Formulation::new(kind, kind.is_hat().then(|| rho_constants(b.p()))).unwrap();
        for _ in 0..1000 {
            let (p, q) = if kind.is_hat() {
                (
                    sample_region_point(&region, &mut rng),
                    sample_region_point(&region, &mut rng),
                )
            } else {
                let n = rng.gen_range(1..=5);
                (random_point(&mut rng, n), random_point(&mut rng, n))
            };
            let g = grad_h(&form, &p, None);
            let d: f64 = q
                .flatten()
                .iter()
                .zip(p.flatten())
                .zip(&g)
                .map(|((qi, pi), gi)| gi * (qi - pi))
                .sum();
            let slack = eval_h(&form, &q) - eval_h(&form, &p) - d;
            worst_slack = worst_slack.min(slack);
        }
    }
    let pass = worst_fd <= 1e-6 && worst_slack >= -1e-8;
    report(
        2,
        pass,
        &format!(
            "max relative gradient error {worst_fd:.2e}; min subgradient slack {worst_slack:.2e}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_03_curvature_certificate() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut violations = 0;
    let mut worst = 0.0_f64;
    let mut total = 0;
    for (family, n, seed) in [
        (Family::Unit, 5, 1),
        (Family::Ten, 4, 2),
        (Family::Hundred, 3, 3),
        (Family::Unit, 10, 4),
    ] {
        let inst = generate_random(family, n, seed);
        let (b, _) = lambda_bounds_thm32(&inst, false).unwrap();
        let rho = rho_constants(b.p());
        let region = build_region(RegionKind::HatPos, &inst, &b, None).unwrap();
        for _ in 0..250 {
            let pt = sample_region_point(&region, &mut rng);
            let r1 = spectral_radius_symmetric(&hessian_f1(&pt)).unwrap();
            let r2 = spectral_radius_symmetric(&hessian_f2(&pt)).unwrap();
            worst = worst.max(r1 / rho.rho1).max(r2 / rho.rho2);
            if r1 > rho.rho1 || r2 > rho.rho2 {
                violations += 1;
            }
            total += 1;
        }
    }
    let pass = violations == 0;
    report(
        3,
        pass,
        &format!("{violations} violations over {total} points; max radius/bound ratio {worst:.3}"),
    );
    assert!(pass);
}

/// Seeded `Rand(0,1,n)` instances shared by the bound criteria.
fn bound_suite() -> Vec<QeicpInstance> {
    (0..100u64)
        .map(|i| {
            let n = [5, 10, 20][(i % 3) as usize];
            generate_random(Family::Unit, n, 1000 + i)
        })
        .collect()
}

fn success_options() -> DcaOptions {
    DcaOptions {
        tol: Tolerances {
            eps1: 1e-9,
            eps2: 1e-9,
            eps3: 1e-3,
        },
        max_iter: 3000,
        ..DcaOptions::default()
    }
}

#[test]
fn criterion_04_bound_containment() {
    let mut checked = 0;
    let mut violations = 0;
    for inst in bound_suite() {
        let (b31, _) = lambda_bounds_thm31(&inst).unwrap();
        let (b32, _) = lambda_bounds_thm32(&inst, false).unwrap();
        let config = SolveConfig {
            formulations: vec![FormulationKind::Pdc],
            options: success_options(),
            ..SolveConfig::default()
        };
        for e in solve_qeicp(&inst, &config).unwrap() {
            let Ok(o) = &e.result else { continue };
            let Some(sol) = &o.solution else { continue };
            if sol.residual.max() > 1e-6 {
                continue;
            }
            checked += 1;
            if !b31.contains(sol.lambda, 1e-9) || !b32.contains(sol.lambda, 1e-9) {
                violations += 1;
            }
        }
    }
    let pass = violations == 0 && checked > 0;
    report(
        4,
        pass,
        &format!("{checked} verified eigenvalues, {violations} outside an interval"),
    );
    assert!(pass);
}

#[test]
fn criterion_05_tightness_trend() {
    let suite = bound_suite();
    let mut tighter = 0;
    let mut ratios = Vec::new();
    for inst in &suite {
        let (b31, _) = lambda_bounds_thm31(inst).unwrap();
        let (b32, _) = lambda_bounds_thm32(inst, false).unwrap();
        if b32.length() < b31.length() {
            tighter += 1;
        }
        ratios.push(b32.length() / b31.length());
    }
    let share = tighter as f64 / suite.len() as f64;
    let med = median(&mut ratios);
    let pass = share >= 0.95;
    report(
        5,
        pass,
        &format!(
            "spectral interval shorter in {:.0}% of instances; median length ratio {med:.3}",
            100.0 * share
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06_analytic_instance() {
    let start = Instant::now();
    let mut problems = Vec::new();
    for n in [1, 5, 50] {
        let inst = analytic(n, -1.0);
        for branch in [Branch::Plus, Branch::Minus] {
            let ip = initial_point(&inst, branch).unwrap();
            if !ip.is_solution || ip.pt.w.iter().any(|w| *w != 0.0) {
                problems.push(format!("n={n} {branch}: initial point is not exact"));
            }
        }
        let (b, _) = lambda_bounds_thm32(&inst, false).unwrap();
        if (b.l + 1.0).abs() > 1e-12 || (b.u - 1.0).abs() > 1e-12 {
            problems.push(format!("n={n}: spectral interval [{}, {}]", b.l, b.u));
        }
        let entries = solve_qeicp(&inst, &SolveConfig::default()).unwrap();
        for target in [1.0, -1.0] {
            let found = entries.iter().any(|e| {
                e.result
                    .as_ref()
                    .ok()
                    .and_then(|o| o.solution.as_ref())
                    .is_some_and(|s| (s.lambda - target).abs() <= 1e-10 && s.residual.within(1e-10))
            });
            if !found {
                problems.push(format!("n={n}: lambda = {target} not certified"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 2.0 {
        problems.push(format!("runtime {secs:.2}s"));
    }
    let pass = problems.is_empty();
    report(
        6,
        pass,
        &format!("n in {{1,5,50}} in {secs:.2}s {problems:?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_07_infeasible_instance() {
    let inst = analytic(3, 1.0);
    let config = SolveConfig {
        bound_method: BoundMethod::External,
        external_bounds: Some(LambdaBounds {
            l: -5.0,
            u: 5.0,
            method: BoundMethod::External,
        }),
        options: DcaOptions {
            tol: Tolerances::uniform(1e-6),
            max_iter: 10_000,
            ..DcaOptions::default()
        },
        ..SolveConfig::default()
    };
    let entries = solve_qeicp(&inst, &config).unwrap();
    let mut reached = 0;
    let mut floor = f64::INFINITY;
    let mut runs = 0;
    for e in &entries {
        let o = e.result.as_ref().unwrap();
        runs += 1;
        if o.status == DcaStatus::GlobalEps {
            reached += 1;
        }
        for r in &o.trace.records {
            floor = floor.min(r.f_value);
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("infeasible.json");
    write_instance(&inst, &path).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_qeicp"))
        .args(["solve", "--instance"])
        .arg(&path)
        .args(["--eps", "1e-6", "--max-iter", "2000"])
        .output()
        .unwrap()
        .status;
    let pass = reached == 0 && floor > 1e-6 && !status.success();
    report(
        7,
        pass,
        &format!(
            "{runs} runs, {reached} reached eps3; objective floor {floor:.3e}; cli exit {:?}",
            status.code()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_descent() {
    let spec = BenchSpec {
        families: Family::ALL.to_vec(),
        sizes: vec![5, 10, 20, 30],
        eps: vec![1e-3],
        local_modes: vec![false],
        max_iter: 300,
        ..BenchSpec::default()
    };
    let mut traces = 0;
    let mut violations = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    for cell in spec.cells() {
        let (_, entries) = run_cell(&spec, &cell).unwrap();
        for e in entries {
            let Ok(o) = e.result else { continue };
            traces += 1;
            let ascent = o.trace.worst_ascent(1e-6);
            worst = worst.max(ascent);
            if ascent > 0.0 {
                violations.push(format!(
                    "{} n={} {} {}: +{ascent:.2e}",
                    cell.family, cell.n, e.branch, e.kind
                ));
            }
        }
    }
    let pass = violations.is_empty() && traces > 0;
    report(
        8,
        pass,
        &format!(
            "{traces} traces, {} with ascent beyond slack {violations:?}",
            violations.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_success_rate() {
    let order = [
        FormulationKind::Pdc,
        FormulationKind::PPrimeDc,
        FormulationKind::PHatDc,
        FormulationKind::PHatPrimeDc,
    ];
    let mut solved = 0;
    let mut total = 0;
    let mut slowest = 0.0_f64;
    for n in [5, 10] {
        for seed in 0..20u64 {
            total += 1;
            let inst = generate_random(Family::Unit, n, seed);
            let start = Instant::now();
            let mut ok = false;
            'outer: for branch in [Branch::Plus, Branch::Minus] {
                for kind in order {
                    let config = SolveConfig {
                        formulations: vec![kind],
                        branches: vec![branch],
                        options: success_options(),
                        ..SolveConfig::default()
                    };
                    let entries = solve_qeicp(&inst, &config).unwrap();
                    let hit = entries.iter().any(|e| {
                        e.result.as_ref().ok().is_some_and(|o| {
                            o.status == DcaStatus::GlobalEps
                                && o.solution.as_ref().is_some_and(|s| s.residual.within(1e-4))
                        })
                    });
                    if hit {
                        ok = true;
                        break 'outer;
                    }
                }
            }
            slowest = slowest.max(start.elapsed().as_secs_f64());
            if ok {
                solved += 1;
            }
        }
    }
    let rate = solved as f64 / total as f64;
    let pass = rate >= 0.9 && slowest <= 60.0;
    report(
        9,
        pass,
        &format!("{solved}/{total} instances solved; slowest instance {slowest:.2}s"),
    );
    assert!(pass);
}

#[test]
fn criterion_10_local_decomposition() {
    let opts = DcaOptions {
        tol: Tolerances::uniform(1e-4),
        max_iter: 10_000,
        ..DcaOptions::default()
    };
    let mut plain = Vec::new();
    let mut local = Vec::new();
    for seed in 0..20u64 {
        let inst = generate_random(Family::Ten, 10, seed);
        let (b, _) = lambda_bounds_thm32(&inst, false).unwrap();
        let ip = initial_point(&inst, Branch::Plus).unwrap();
        let p = run_dca(FormulationKind::PHatDc, &inst, &b, &opts, &ip.pt).unwrap();
        let l = run_dca_local(FormulationKind::PHatDc, &inst, &b, &opts, &ip.pt).unwrap();
        plain.push(p.iterations() as f64);
        local.push(l.iterations() as f64);
    }
    let dist = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x}"))
            .collect::<Vec<_>>()
            .join(",")
    };
    let (dp, dl) = (dist(&plain), dist(&local));
    let mp = median(&mut plain);
    let ml = median(&mut local);
    let pass = ml <= mp;
    report(
        10,
        pass,
        &format!("median iterations local {ml} vs plain {mp}; local [{dl}] plain [{dp}]"),
    );
    assert!(pass);
}

/// Minimum of the linearized majorant over the plain region for `n = 1`,
/// where the free variables are `(z, λ)` and `w = az + bλ + c ≥ 0`.
fn grid_minimum(inst: &QeicpInstance, form: &Formulation, grad: &[f64]) -> f64 {
    let (a, b, c) = (inst.a[(0, 0)], inst.b[(0, 0)], inst.c[(0, 0)]);
    let value = |z: f64, lam: f64| {
        let pt = IteratePoint {
            x: vec![1.0],
            y: vec![lam],
            z: vec![z],
            w: vec![a * z + b * lam + c],
            lambda: lam,
        };
        eval_g(form, &pt)
            - pt.flatten()
                .iter()
                .zip(grad)
                .map(|(v, g)| v * g)
                .sum::<f64>()
    };
    let golden = |lo: f64, hi: f64, f: &dyn Fn(f64) -> f64| -> (f64, f64) {
        // coarse scan, then golden-section refinement around the best cell
        let cells = 200;
        let step = (hi - lo) / cells as f64;
        let best = (0..=cells)
            .map(|k| lo + step * k as f64)
            .min_by(|p, q| f(*p).total_cmp(&f(*q)))
            .unwrap();
        let (mut l, mut r) = ((best - step).max(lo), (best + step).min(hi));
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..80 {
            let m1 = r - phi * (r - l);
            let m2 = l + phi * (r - l);
            if f(m1) <= f(m2) {
                r = m2;
            } else {
                l = m1;
            }
        }
        let t = 0.5 * (l + r);
        (t, f(t))
    };
    let inner = |lam: f64| {
        let zlo = (-(b * lam + c) / a).max(0.0);
        golden(zlo, zlo + 10.0, &|z| value(z, lam)).1
    };
    golden(-4.0, 4.0, &inner).1
}

#[test]
fn criterion_11_subproblem_solver() {
    let mut harvested: Vec<(f64, f64)> = Vec::new();
    'harvest: for seed in 0..50u64 {
        let inst = generate_random(Family::Unit, 5, 500 + seed);
        let (b, _) = lambda_bounds_thm32(&inst, false).unwrap();
        for branch in [Branch::Plus, Branch::Minus] {
            let ip = initial_point(&inst, branch).unwrap();
            for kind in FormulationKind::ALL {
                let opts = DcaOptions {
                    tol: Tolerances::uniform(1e-3),
                    max_iter: 8,
                    ..DcaOptions::default()
                };
                let mut hook = |_: &DcaSubproblem, res: &SolveResult| {
                    harvested.push((res.kkt_residual, res.duality_gap));
                };
                run_dca_observed(kind, &inst, &b, &opts, &ip.pt, &mut hook).unwrap();
                if harvested.len() >= 500 {
                    break 'harvest;
                }
            }
        }
    }
    harvested.truncate(500);
    let worst_kkt = harvested.iter().map(|h| h.0).fold(0.0, f64::max);
    let worst_gap = harvested.iter().map(|h| h.1).fold(0.0, f64::max);
    let failures = harvested
        .iter()
        .filter(|h| h.0 > 1e-6 || h.1 > 1e-8)
        .count();

    // lifted subproblem against a direct search at n = 1
    let mut worst_oracle = 0.0_f64;
    for (bv, cv, lam0) in [(0.5, -1.0, 0.3), (2.0, -3.0, -1.5), (0.0, -0.5, 1.2)] {
        let inst = QeicpInstance::new(
            Matrix::identity(1),
            Matrix::from_rows(&[vec![bv]]).unwrap(),
            Matrix::from_rows(&[vec![cv]]).unwrap(),
            "scalar",
        )
        .unwrap();
        let pt = IteratePoint::from_eigenpair(&inst, lam0, &[1.0]);
        for kind in [FormulationKind::Pdc, FormulationKind::PPrimeDc] {
            let form = Formulation::plain(kind).unwrap();
            let region = build_region(
                RegionKind::Plain,
                &inst,
                &LambdaBounds {
                    l: -4.0,
                    u: 4.0,
                    method: BoundMethod::External,
                },
                None,
            )
            .unwrap();
            let grad = grad_h(&form, &pt, None);
            let sub = DcaSubproblem::build(&form, &region, &grad).unwrap();
            let (next, _) = sub.solve(&pt, &Default::default());
            let solver_value = eval_g(&form, &next)
                - next
                    .flatten()
                    .iter()
                    .zip(&grad)
                    .map(|(v, g)| v * g)
                    .sum::<f64>();
            let oracle = grid_minimum(&inst, &form, &grad);
            worst_oracle = worst_oracle.max((solver_value - oracle).abs());
        }
    }
    let pass = failures == 0 && harvested.len() == 500 && worst_oracle <= 1e-5;
    report(
        11,
        pass,
        &format!(
            "{} subproblems, {failures} failing; max kkt {worst_kkt:.2e}, max gap {worst_gap:.2e}; scalar oracle gap {worst_oracle:.2e}",
            harvested.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_12_lp_up_bounds() {
    let mut violations = Vec::new();
    let mut checked = 0;
    for seed in 0..20u64 {
        let n = 3 + (seed % 4) as usize;
        let base = generate_random(Family::Unit, n, 1200 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = Matrix::from_fn(n, n, |i, j| {
            -(rng.gen::<f64>() + if i == j { 1.0 } else { 0.0 })
        });
        let inst =
            QeicpInstance::new(base.a.clone(), base.b.clone(), c, format!("lpup-{seed}")).unwrap();
        if !check_c_not_in_s0(&inst.c) {
            violations.push(format!("seed {seed}: C reported in S0"));
            continue;
        }
        let lu = lambda_bounds_lp_up(&inst).unwrap();
        let side = &lu.positive;
        if !(side.lp_value > 0.0) {
            violations.push(format!("seed {seed}: LP value {}", side.lp_value));
        }
        let config = SolveConfig {
            branches: vec![Branch::Plus],
            formulations: vec![FormulationKind::Pdc, FormulationKind::PHatDc],
            options: success_options(),
            ..SolveConfig::default()
        };
        for e in solve_qeicp(&inst, &config).unwrap() {
            let Some(sol) = e.result.as_ref().ok().and_then(|o| o.solution.clone()) else {
                continue;
            };
            if sol.lambda <= 0.0 {
                continue;
            }
            checked += 1;
            if sol.lambda < side.lp_value - 1e-6 || sol.lambda > side.up_value + 1e-6 {
                violations.push(format!(
                    "seed {seed}: lambda {} outside [{}, {}]",
                    sol.lambda, side.lp_value, side.up_value
                ));
            }
        }
    }
    let pass = violations.is_empty() && checked > 0;
    report(
        12,
        pass,
        &format!("20 instances, {checked} positive eigenvalues checked; violations {violations:?}"),
    );
    assert!(pass);
}
