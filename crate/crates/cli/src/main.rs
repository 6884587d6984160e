use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qeicp_cli::*;
use qeicp_core::bounds::BoundMethod;
use qeicp_core::dca::{DcaOptions, SolveConfig, Tolerances};
use qeicp_core::model;

#[derive(Parser)]
#[command(
    name = "qeicp",
    version,
    about = "DC programming solvers for the quadratic eigenvalue complementarity problem"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded random instance Rand(0, U, n) to a file.
    Gen {
        /// unit, ten or hundred
        family: String,
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate the eigenvalue intervals of one or more instances.
    Bounds(BoundsArgs),
    /// Solve an instance with the selected DC formulations.
    Solve(SolveArgs),
    /// Run the seeded benchmark suite and emit one row per instance and branch.
    Bench(BenchArgs),
    /// Check a candidate eigenpair against an instance.
    Verify {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        lambda: f64,
        /// File with the entries of x (whitespace or comma separated)
        #[arg(long)]
        x: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
}

#[derive(Args)]
struct SourceArgs {
    /// Instance file; otherwise generate from --family, --n, --seed
    #[arg(long, conflicts_with_all = ["family", "n"])]
    instance: Option<PathBuf>,
    #[arg(long, requires = "n")]
    family: Option<String>,
    #[arg(long, requires = "family")]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SourceArgs {
    fn source(&self) -> Result<InstanceSource, CliError> {
        match (&self.instance, &self.family, self.n) {
            (Some(p), _, _) => Ok(InstanceSource::File(p.clone())),
            (None, Some(f), Some(n)) => Ok(InstanceSource::Generated {
                family: parse_family(f)?,
                n,
                seed: self.seed,
            }),
            _ => Err(CliError::Config(
                "give --instance or --family with --n".into(),
            )),
        }
    }
}

#[derive(Args)]
struct BoundsArgs {
    /// Instance files
    #[arg(long = "instance")]
    instances: Vec<PathBuf>,
    #[arg(long)]
    family: Option<String>,
    /// Comma-separated sizes for generated instances
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated methods: thm31, thm32, lpup
    #[arg(long, default_value = "thm31,thm32,lpup")]
    bounds: String,
    /// CSV file with columns label,l,u adding an external column
    #[arg(long)]
    external: Option<PathBuf>,
    #[arg(long)]
    bounds_literal: bool,
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// pdc, phat, pprime, phatprime or all (comma separated)
    #[arg(long, default_value = "all")]
    formulation: String,
    /// thm31, thm32 or lpup
    #[arg(long, default_value = "thm32")]
    bounds: String,
    /// Sets eps1, eps2 and eps3 at once
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    eps1: Option<f64>,
    #[arg(long)]
    eps2: Option<f64>,
    #[arg(long)]
    eps3: Option<f64>,
    #[arg(long)]
    local_dc: bool,
    /// plus, minus or both
    #[arg(long, default_value = "both")]
    branch: String,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    /// Use the unmodified upper branch of the spectral interval
    #[arg(long)]
    bounds_literal: bool,
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated families
    #[arg(long, default_value = "unit,ten,hundred")]
    families: String,
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,30,40,50")]
    sizes: Vec<usize>,
    /// Number of seeds per size, starting at --seed
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "1e-3,1e-4")]
    eps: Vec<f64>,
    /// off, on or both
    #[arg(long, default_value = "both")]
    local_dc: String,
    #[arg(long, default_value = "all")]
    formulation: String,
    #[arg(long, default_value = "thm32")]
    bounds: String,
    #[arg(long, default_value = "both")]
    branch: String,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_bounds(args: &BoundsArgs) -> Result<ExitCode, CliError> {
    let mut instances = Vec::new();
    for p in &args.instances {
        instances.push(model::read_instance(p)?);
    }
    if let Some(f) = &args.family {
        let family = parse_family(f)?;
        for &n in &args.n {
            instances.push(
                InstanceSource::Generated {
                    family,
                    n,
                    seed: args.seed,
                }
                .load()?,
            );
        }
    }
    if instances.is_empty() {
        return Err(CliError::Config(
            "no instances: give --instance or --family with --n".into(),
        ));
    }
    let mut methods = args
        .bounds
        .split(',')
        .map(|s| parse_bound_method(s.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    let external = match &args.external {
        Some(p) => {
            if !methods.contains(&BoundMethod::External) {
                methods.push(BoundMethod::External);
            }
            read_external_bounds(p)?
        }
        None => Vec::new(),
    };
    let rows = cmd_bounds(&instances, &methods, args.bounds_literal, &external);
    emit(
        &render_bounds(&rows, args.format.parse()?)?,
        args.out.as_deref(),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn run_solve(args: &SolveArgs) -> Result<ExitCode, CliError> {
    let base = args.eps.unwrap_or(1e-6);
    let tol = Tolerances {
        eps1: args.eps1.unwrap_or(base),
        eps2: args.eps2.unwrap_or(base),
        eps3: args.eps3.unwrap_or(base),
    };
    let config = RunConfig {
        source: args.source.source()?,
        solve: SolveConfig {
            formulations: parse_formulations(&args.formulation)?,
            bound_method: parse_bound_method(&args.bounds)?,
            literal_gamma: args.bounds_literal,
            external_bounds: None,
            branches: parse_branches(&args.branch)?,
            local_dc: args.local_dc,
            options: DcaOptions {
                tol,
                max_iter: args.max_iter,
                ..DcaOptions::default()
            },
        },
        format: args.format.parse()?,
        output: args.out.clone(),
    };
    let report = cmd_solve(&config)?;
    emit(
        &render_solve(&report, config.format)?,
        config.output.as_deref(),
    )?;
    Ok(ExitCode::from(report.exit_code() as u8))
}

fn run_bench(args: &BenchArgs) -> Result<ExitCode, CliError> {
    let families = args
        .families
        .split(',')
        .map(|s| parse_family(s.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    let local_modes = match args.local_dc.as_str() {
        "off" => vec![false],
        "on" => vec![true],
        "both" => vec![false, true],
        other => return Err(CliError::Config(format!("unknown local-dc mode '{other}'"))),
    };
    let spec = BenchSpec {
        families,
        sizes: args.sizes.clone(),
        seeds: (args.seed..args.seed + args.seeds).collect(),
        eps: args.eps.clone(),
        local_modes,
        formulations: parse_formulations(&args.formulation)?,
        bound_method: parse_bound_method(&args.bounds)?,
        branches: parse_branches(&args.branch)?,
        max_iter: args.max_iter,
    };
    let results = cmd_bench(&spec)?;
    for (cell, secs, _) in &results {
        eprintln!(
            "{} n={} seed={} eps={} local_dc={}: {secs:.2}s",
            cell.family, cell.n, cell.seed, cell.eps, cell.local_dc
        );
    }
    let rows: Vec<BenchmarkRow> = results.into_iter().flat_map(|(_, _, r)| r).collect();
    emit(
        &render_benchmark(&rows, args.format.parse()?)?,
        args.out.as_deref(),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn run_verify(instance: &Path, lambda: f64, x: &Path, tol: f64) -> Result<ExitCode, CliError> {
    let inst = model::read_instance(instance)?;
    let xv = read_vector(x)?;
    let v = cmd_verify(&inst, lambda, &xv, tol)?;
    print!("{}", render_verification(&v));
    Ok(if v.ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen {
            family,
            n,
            seed,
            out,
        } => parse_family(family)
            .and_then(|f| cmd_gen(f, *n, *seed, out))
            .map(|_| ExitCode::SUCCESS),
        Command::Bounds(args) => run_bounds(args),
        Command::Solve(args) => run_solve(args),
        Command::Bench(args) => run_bench(args),
        Command::Verify {
            instance,
            lambda,
            x,
            tol,
        } => run_verify(instance, *lambda, x, *tol),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
