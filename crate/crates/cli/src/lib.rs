//! Command implementations behind the `qeicp` binary: instance generation,
//! bound tables, solving, benchmarks and solution verification.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use qeicp_core::bounds::{self, BoundMethod};
use qeicp_core::dc::FormulationKind;
use qeicp_core::dca::{
    self, Branch, DcaError, DcaOptions, DcaStatus, OutcomeEntry, SolveConfig, Tolerances,
};
use qeicp_core::model::{self, Family, ModelError, QeicpInstance, Verification};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solve(#[from] DcaError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed input: {0}")]
    Parse(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Markdown,
}

impl FromStr for OutputFormat {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "markdown" | "md" => Ok(OutputFormat::Markdown),
            _ => Err(CliError::Config(format!("unknown output format '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InstanceSource {
    File(PathBuf),
    Generated { family: Family, n: usize, seed: u64 },
}

impl InstanceSource {
    pub fn load(&self) -> Result<QeicpInstance, CliError> {
        match self {
            InstanceSource::File(path) => Ok(model::read_instance(path)?),
            InstanceSource::Generated { family, n, seed } => {
                if *n == 0 {
                    return Err(CliError::Config(
                        "instance dimension must be positive".into(),
                    ));
                }
                Ok(model::generate_random(*family, *n, *seed))
            }
        }
    }
}

/// Parses `pdc`, `phat`, `pprime`, `phatprime` or `all`, comma separated.
pub fn parse_formulations(s: &str) -> Result<Vec<FormulationKind>, CliError> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if part == "all" {
            for k in FormulationKind::ALL {
                if !out.contains(&k) {
                    out.push(k);
                }
            }
            continue;
        }
        let k = FormulationKind::parse(part)
            .ok_or_else(|| CliError::Config(format!("unknown formulation '{part}'")))?;
        if !out.contains(&k) {
            out.push(k);
        }
    }
    if out.is_empty() {
        return Err(CliError::Config("no formulation selected".into()));
    }
    Ok(out)
}

/// Parses `plus`, `minus` or `both`.
pub fn parse_branches(s: &str) -> Result<Vec<Branch>, CliError> {
    match s {
        "plus" => Ok(vec![Branch::Plus]),
        "minus" => Ok(vec![Branch::Minus]),
        "both" => Ok(vec![Branch::Plus, Branch::Minus]),
        _ => Err(CliError::Config(format!("unknown branch '{s}'"))),
    }
}

pub fn parse_bound_method(s: &str) -> Result<BoundMethod, CliError> {
    BoundMethod::parse(s).ok_or_else(|| CliError::Config(format!("unknown bound method '{s}'")))
}

pub fn parse_family(s: &str) -> Result<Family, CliError> {
    Family::parse(s)
        .ok_or_else(|| CliError::Config(format!("unknown family '{s}' (unit, ten, hundred)")))
}

/// Everything one `solve` invocation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub source: InstanceSource,
    pub solve: SolveConfig,
    pub format: OutputFormat,
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.solve.formulations.is_empty() {
            return Err(CliError::Config(
                "at least one formulation is required".into(),
            ));
        }
        if self.solve.branches.is_empty() {
            return Err(CliError::Config("at least one branch is required".into()));
        }
        let t = self.solve.options.tol;
        for (name, v) in [("eps1", t.eps1), ("eps2", t.eps2), ("eps3", t.eps3)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Config(format!(
                    "{name} must be a positive number, got {v}"
                )));
            }
        }
        if self.solve.options.max_iter == 0 {
            return Err(CliError::Config("max-iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Writes `text` to `path`, or to stdout when no path is given.
pub fn emit(text: &str, path: Option<&Path>) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(io_err(p)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn render_table(
    header: &[String],
    rows: &[Vec<String>],
    format: OutputFormat,
) -> Result<String, CliError> {
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(header)?;
            for r in rows {
                w.write_record(r)?;
            }
            let bytes = w.into_inner().map_err(|e| CliError::Parse(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| CliError::Parse(e.to_string()))
        }
        OutputFormat::Markdown => {
            let mut out = String::new();
            let _ = writeln!(out, "| {} |", header.join(" | "));
            let _ = writeln!(out, "|{}|", vec!["---"; header.len()].join("|"));
            for r in rows {
                let _ = writeln!(out, "| {} |", r.join(" | "));
            }
            Ok(out)
        }
    }
}

pub fn cmd_gen(family: Family, n: usize, seed: u64, out: &Path) -> Result<QeicpInstance, CliError> {
    let inst = InstanceSource::Generated { family, n, seed }.load()?;
    model::write_instance(&inst, out)?;
    Ok(inst)
}

/// Marker printed in bound tables when a method's assumptions fail.
pub const ASSUMPTION_MARKER: &str = "n/a";

/// One bound-table row: the interval per method or the reason it is missing.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsRow {
    pub label: String,
    pub n: usize,
    pub entries: Vec<(String, Result<(f64, f64), String>)>,
}

/// Externally computed intervals keyed by instance label, read from a CSV
/// file with columns `label,l,u`.
pub fn read_external_bounds(path: &Path) -> Result<Vec<(String, f64, f64)>, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(CliError::Parse(format!(
                "external bounds row needs label,l,u: {rec:?}"
            )));
        }
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Parse(format!("'{s}': {e}")))
        };
        out.push((rec[0].to_string(), num(&rec[1])?, num(&rec[2])?));
    }
    Ok(out)
}

pub fn cmd_bounds(
    instances: &[QeicpInstance],
    methods: &[BoundMethod],
    literal_gamma: bool,
    external: &[(String, f64, f64)],
) -> Vec<BoundsRow> {
    instances
        .iter()
        .map(|inst| {
            let mut entries = Vec::new();
            for &m in methods {
                let r = match m {
                    BoundMethod::External => external
                        .iter()
                        .find(|(label, _, _)| *label == inst.label)
                        .map(|&(_, l, u)| (l, u))
                        .ok_or_else(|| "no external entry".to_string()),
                    BoundMethod::LpUp => bounds::lambda_bounds_lp_up(inst)
                        .map(|b| {
                            let iv = b.interval();
                            (iv.l, iv.u)
                        })
                        .map_err(|e| e.to_string()),
                    _ => bounds::lambda_bounds(inst, m, literal_gamma)
                        .map(|b| (b.l, b.u))
                        .map_err(|e| e.to_string()),
                };
                entries.push((m.name().to_string(), r));
            }
            BoundsRow {
                label: inst.label.clone(),
                n: inst.n,
                entries,
            }
        })
        .collect()
}

pub fn render_bounds(rows: &[BoundsRow], format: OutputFormat) -> Result<String, CliError> {
    let Some(first) = rows.first() else {
        return Ok(String::new());
    };
    let mut header = vec!["label".to_string(), "n".to_string()];
    for (m, _) in &first.entries {
        header.push(format!("{m}_l"));
        header.push(format!("{m}_u"));
    }
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut cells = vec![r.label.clone(), r.n.to_string()];
            for (_, e) in &r.entries {
                match e {
                    Ok((l, u)) => {
                        cells.push(l.to_string());
                        cells.push(u.to_string());
                    }
                    Err(_) => {
                        cells.push(ASSUMPTION_MARKER.into());
                        cells.push(ASSUMPTION_MARKER.into());
                    }
                }
            }
            cells
        })
        .collect();
    render_table(&header, &body, format)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub label: String,
    pub n: usize,
    pub entries: Vec<OutcomeEntry>,
}

impl SolveReport {
    pub fn verified(&self) -> bool {
        self.entries.iter().any(OutcomeEntry::is_verified)
    }

    /// 0 when at least one verified solution was found.
    pub fn exit_code(&self) -> i32 {
        if self.verified() {
            0
        } else {
            1
        }
    }
}

pub fn cmd_solve(config: &RunConfig) -> Result<SolveReport, CliError> {
    config.validate()?;
    let inst = config.source.load()?;
    let entries = dca::solve_qeicp(&inst, &config.solve)?;
    Ok(SolveReport {
        label: inst.label.clone(),
        n: inst.n,
        entries,
    })
}

pub fn render_solve(report: &SolveReport, format: OutputFormat) -> Result<String, CliError> {
    let header: Vec<String> = [
        "label",
        "n",
        "branch",
        "formulation",
        "local_dc",
        "lambda",
        "iterations",
        "cpu_seconds",
        "status",
        "f_star",
        "residual",
        "note",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let rows: Vec<Vec<String>> = report
        .entries
        .iter()
        .map(|e| {
            let mut r = vec![
                report.label.clone(),
                report.n.to_string(),
                e.branch.to_string(),
                e.kind.to_string(),
                e.local_dc.to_string(),
            ];
            match &e.result {
                Ok(o) => {
                    let lambda = o.solution.as_ref().map_or(o.point.lambda, |s| s.lambda);
                    r.push(lambda.to_string());
                    r.push(o.iterations().to_string());
                    r.push(format!("{:.4}", o.cpu_seconds));
                    r.push(o.status.to_string());
                    r.push(format!("{:e}", o.f_star));
                    r.push(
                        o.solution
                            .as_ref()
                            .map_or(String::new(), |s| format!("{:e}", s.residual.max())),
                    );
                    r.push(o.diagnostic.clone().unwrap_or_default());
                }
                Err(err) => {
                    r.extend(["", "", "", "error", "", ""].map(String::from));
                    r.push(err.to_string());
                }
            }
            r
        })
        .collect();
    render_table(&header, &rows, format)
}

/// Reads a vector given as whitespace- or comma-separated numbers,
/// optionally wrapped in brackets.
pub fn read_vector(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_vector(&text)
}

pub fn parse_vector(text: &str) -> Result<Vec<f64>, CliError> {
    let trimmed = text.trim().trim_start_matches('[').trim_end_matches(']');
    let v: Result<Vec<f64>, _> = trimmed
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| CliError::Parse(format!("'{t}': {e}")))
        })
        .collect();
    let v = v?;
    if v.is_empty() {
        return Err(CliError::Parse("empty vector".into()));
    }
    Ok(v)
}

pub fn cmd_verify(
    inst: &QeicpInstance,
    lambda: f64,
    x: &[f64],
    tol: f64,
) -> Result<Verification, CliError> {
    Ok(model::verify_solution(inst, lambda, x, tol)?)
}

pub fn render_verification(v: &Verification) -> String {
    let r = &v.report;
    let mut out = String::new();
    let _ = writeln!(out, "verified: {}", v.ok);
    let _ = writeln!(out, "lambda: {}", v.solution.lambda);
    let _ = writeln!(out, "pencil residual: {:e}", r.eq_residual);
    let _ = writeln!(out, "complementarity: {:e}", r.compl_residual);
    let _ = writeln!(out, "negative x: {:e}", r.neg_x);
    let _ = writeln!(out, "negative w: {:e}", r.neg_w);
    out
}

/// Result of one formulation inside a benchmark row.
#[derive(Debug, Clone, PartialEq)]
pub struct FormulationCell {
    pub kind: FormulationKind,
    pub lambda: f64,
    pub iterations: usize,
    pub cpu_seconds: f64,
    pub status: DcaStatus,
    pub verified: bool,
}

/// One benchmark line: a seeded instance, a tolerance, a branch and the
/// outcome of each formulation run on it.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub label: String,
    pub n: usize,
    pub seed: u64,
    pub eps: f64,
    pub local_dc: bool,
    pub branch: Branch,
    /// Indexed like [`FormulationKind::ALL`]; `None` when not run or failed.
    pub cells: [Option<FormulationCell>; 4],
}

/// Column order of the benchmark CSV.
pub fn benchmark_header() -> Vec<String> {
    let mut h: Vec<String> = ["label", "n", "seed", "eps", "local_dc", "branch"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for k in FormulationKind::ALL {
        for col in ["lambda", "it", "cpu", "status", "verified"] {
            h.push(format!("{}_{col}", k.name()));
        }
    }
    h
}

impl BenchmarkRow {
    pub fn to_record(&self) -> Vec<String> {
        let mut r = vec![
            self.label.clone(),
            self.n.to_string(),
            self.seed.to_string(),
            self.eps.to_string(),
            self.local_dc.to_string(),
            self.branch.to_string(),
        ];
        for cell in &self.cells {
            match cell {
                Some(c) => {
                    r.push(c.lambda.to_string());
                    r.push(c.iterations.to_string());
                    r.push(c.cpu_seconds.to_string());
                    r.push(c.status.to_string());
                    r.push(c.verified.to_string());
                }
                None => r.extend(std::iter::repeat(String::new()).take(5)),
            }
        }
        r
    }

    pub fn from_record(rec: &csv::StringRecord) -> Result<Self, CliError> {
        if rec.len() != benchmark_header().len() {
            return Err(CliError::Parse(format!(
                "benchmark row has {} fields",
                rec.len()
            )));
        }
        fn num<T: FromStr>(s: &str) -> Result<T, CliError>
        where
            T::Err: std::fmt::Display,
        {
            s.parse::<T>()
                .map_err(|e| CliError::Parse(format!("'{s}': {e}")))
        }
        let branch = match &rec[5] {
            "plus" => Branch::Plus,
            "minus" => Branch::Minus,
            other => return Err(CliError::Parse(format!("unknown branch '{other}'"))),
        };
        let mut cells: [Option<FormulationCell>; 4] = Default::default();
        for (i, kind) in FormulationKind::ALL.into_iter().enumerate() {
            let base = 6 + 5 * i;
            if rec[base].is_empty() {
                continue;
            }
            cells[i] = Some(FormulationCell {
                kind,
                lambda: num(&rec[base])?,
                iterations: num(&rec[base + 1])?,
                cpu_seconds: num(&rec[base + 2])?,
                status: DcaStatus::parse(&rec[base + 3]).ok_or_else(|| {
                    CliError::Parse(format!("unknown status '{}'", &rec[base + 3]))
                })?,
                verified: num(&rec[base + 4])?,
            });
        }
        Ok(Self {
            label: rec[0].to_string(),
            n: num(&rec[1])?,
            seed: num(&rec[2])?,
            eps: num(&rec[3])?,
            local_dc: num(&rec[4])?,
            branch,
            cells,
        })
    }
}

pub fn render_benchmark(rows: &[BenchmarkRow], format: OutputFormat) -> Result<String, CliError> {
    let body: Vec<Vec<String>> = rows.iter().map(BenchmarkRow::to_record).collect();
    render_table(&benchmark_header(), &body, format)
}

pub fn parse_benchmark_csv(text: &str) -> Result<Vec<BenchmarkRow>, CliError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    if header
        .iter()
        .ne(benchmark_header().iter().map(String::as_str))
    {
        return Err(CliError::Parse("unexpected benchmark header".into()));
    }
    rdr.records()
        .map(|r| BenchmarkRow::from_record(&r?))
        .collect()
}

/// One benchmark cell: a seeded instance solved at one tolerance, with or
/// without the local decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchCell {
    pub family: Family,
    pub n: usize,
    pub seed: u64,
    pub eps: f64,
    pub local_dc: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub families: Vec<Family>,
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub eps: Vec<f64>,
    pub local_modes: Vec<bool>,
    pub formulations: Vec<FormulationKind>,
    pub bound_method: BoundMethod,
    pub branches: Vec<Branch>,
    pub max_iter: usize,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            families: Family::ALL.to_vec(),
            sizes: vec![5, 10, 20, 30, 40, 50],
            seeds: vec![0],
            eps: vec![1e-3, 1e-4],
            local_modes: vec![false, true],
            formulations: FormulationKind::ALL.to_vec(),
            bound_method: BoundMethod::Thm32,
            branches: vec![Branch::Plus, Branch::Minus],
            max_iter: 1000,
        }
    }
}

impl BenchSpec {
    pub fn cells(&self) -> Vec<BenchCell> {
        let mut out = Vec::new();
        for &family in &self.families {
            for &n in &self.sizes {
                for &seed in &self.seeds {
                    for &eps in &self.eps {
                        for &local_dc in &self.local_modes {
                            out.push(BenchCell {
                                family,
                                n,
                                seed,
                                eps,
                                local_dc,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn solve_config(&self, cell: &BenchCell) -> SolveConfig {
        // the local decomposition only changes the hat formulations
        let formulations = if cell.local_dc {
            self.formulations
                .iter()
                .copied()
                .filter(|k| k.is_hat())
                .collect()
        } else {
            self.formulations.clone()
        };
        SolveConfig {
            formulations,
            bound_method: self.bound_method,
            literal_gamma: false,
            external_bounds: None,
            branches: self.branches.clone(),
            local_dc: cell.local_dc,
            options: DcaOptions {
                tol: Tolerances::uniform(cell.eps),
                max_iter: self.max_iter,
                ..DcaOptions::default()
            },
        }
    }
}

/// Solves one cell and returns its rows plus the raw outcomes.
pub fn run_cell(
    spec: &BenchSpec,
    cell: &BenchCell,
) -> Result<(Vec<BenchmarkRow>, Vec<OutcomeEntry>), CliError> {
    let inst = model::generate_random(cell.family, cell.n, cell.seed);
    let config = spec.solve_config(cell);
    if config.formulations.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let entries = dca::solve_qeicp(&inst, &config)?;
    let mut rows = Vec::new();
    for &branch in &spec.branches {
        let mut cells: [Option<FormulationCell>; 4] = Default::default();
        for e in entries.iter().filter(|e| e.branch == branch) {
            let Ok(o) = &e.result else { continue };
            let idx = FormulationKind::ALL
                .iter()
                .position(|k| *k == e.kind)
                .expect("known kind");
            cells[idx] = Some(FormulationCell {
                kind: e.kind,
                lambda: o.solution.as_ref().map_or(o.point.lambda, |s| s.lambda),
                iterations: o.iterations(),
                cpu_seconds: o.cpu_seconds,
                status: o.status,
                verified: o.is_verified(),
            });
        }
        rows.push(BenchmarkRow {
            label: inst.label.clone(),
            n: inst.n,
            seed: cell.seed,
            eps: cell.eps,
            local_dc: cell.local_dc,
            branch,
            cells,
        });
    }
    Ok((rows, entries))
}

/// Worker count: `QEICP_THREADS` when set and positive, else all cores.
pub fn worker_threads() -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    std::env::var("QEICP_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or(available)
}

/// Runs every cell in a worker pool; rows come back in cell order with the
/// wall-clock seconds spent on each cell.
pub fn cmd_bench(spec: &BenchSpec) -> Result<Vec<(BenchCell, f64, Vec<BenchmarkRow>)>, CliError> {
    if spec.formulations.is_empty() || spec.branches.is_empty() {
        return Err(CliError::Config(
            "benchmark needs formulations and branches".into(),
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let cells = spec.cells();
    let results: Vec<Result<(BenchCell, f64, Vec<BenchmarkRow>), CliError>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let start = Instant::now();
                let (rows, _) = run_cell(spec, cell)?;
                Ok((*cell, start.elapsed().as_secs_f64(), rows))
            })
            .collect()
    });
    results.into_iter().collect()
}
