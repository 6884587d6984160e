use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use qeicp_cli::*;
use qeicp_core::dc::FormulationKind;
use qeicp_core::dca::{Branch, DcaStatus};
use qeicp_core::linalg::Matrix;
use qeicp_core::model::{self, QeicpInstance};

fn qeicp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qeicp"))
        .args(args)
        .output()
        .unwrap()
}

fn write_analytic(dir: &Path, n: usize, c_sign: f64) -> String {
    let inst = QeicpInstance::new(
        Matrix::identity(n),
        Matrix::zeros(n, n),
        Matrix::identity(n).scaled(c_sign),
        "analytic",
    )
    .unwrap();
    let path = dir.join("analytic.json");
    model::write_instance(&inst, &path).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn gen_writes_identical_files_for_equal_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for p in [&a, &b] {
        let out = qeicp(&[
            "gen",
            "ten",
            "8",
            "--seed",
            "4",
            "--out",
            p.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let inst = model::read_instance(&a).unwrap();
    assert_eq!(inst, model::generate_random(model::Family::Ten, 8, 4));
}

#[test]
fn bounds_table_lists_every_method() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_analytic(dir.path(), 4, -1.0);
    let out = qeicp(&["bounds", "--instance", &path]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "label,n,thm31_l,thm31_u,thm32_l,thm32_u,lpup_l,lpup_u"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "analytic");
    for pair in row[2..].chunks(2) {
        let (l, u): (f64, f64) = (pair[0].parse().unwrap(), pair[1].parse().unwrap());
        assert!(l <= -1.0 && u >= 1.0, "{l} {u}");
    }
}

#[test]
fn verify_exit_codes_follow_the_check() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_analytic(dir.path(), 3, -1.0);
    let x = dir.path().join("x.txt");
    fs::write(&x, "0.25 0.25 0.5\n").unwrap();
    let x = x.to_str().unwrap();
    let exact = qeicp(&["verify", "--instance", &path, "--lambda", "-1", "--x", x]);
    assert_eq!(exact.status.code(), Some(0));
    assert!(String::from_utf8(exact.stdout)
        .unwrap()
        .contains("verified: true"));
    let off = qeicp(&["verify", "--instance", &path, "--lambda", "1.1", "--x", x]);
    assert_eq!(off.status.code(), Some(1));
    let zero = dir.path().join("zero.txt");
    fs::write(&zero, "0,0,0").unwrap();
    let bad = qeicp(&[
        "verify",
        "--instance",
        &path,
        "--lambda",
        "1",
        "--x",
        zero.to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn unreadable_instance_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    fs::write(&path, "{ not an instance").unwrap();
    let out = qeicp(&["solve", "--instance", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let missing = qeicp(&["solve", "--instance", "/nonexistent/file.json"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn solve_reports_both_eigenvalues_of_the_analytic_instance() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_analytic(dir.path(), 5, -1.0);
    let out = qeicp(&["solve", "--instance", &path, "--formulation", "phat"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("global_eps"), "{text}");
}

#[test]
fn benchmark_rows_round_trip_through_csv() {
    let rows = vec![
        BenchmarkRow {
            label: "Rand(0,1,05)".into(),
            n: 5,
            seed: 3,
            eps: 1e-3,
            local_dc: false,
            branch: Branch::Plus,
            cells: [
                Some(FormulationCell {
                    kind: FormulationKind::Pdc,
                    lambda: 0.123456789012345,
                    iterations: 17,
                    cpu_seconds: 0.25,
                    status: DcaStatus::GlobalEps,
                    verified: true,
                }),
                None,
                Some(FormulationCell {
                    kind: FormulationKind::PPrimeDc,
                    lambda: -2.5,
                    iterations: 1000,
                    cpu_seconds: 3.0,
                    status: DcaStatus::IterationLimit,
                    verified: false,
                }),
                None,
            ],
        },
        BenchmarkRow {
            label: "Rand(0,100,30)".into(),
            n: 30,
            seed: 0,
            eps: 1e-4,
            local_dc: true,
            branch: Branch::Minus,
            cells: [None, None, None, None],
        },
    ];
    let text = render_benchmark(&rows, OutputFormat::Csv).unwrap();
    assert!(text.starts_with("label,n,seed,eps,local_dc,branch,pdc_lambda,"));
    assert_eq!(parse_benchmark_csv(&text).unwrap(), rows);
}
