//! `floqlab`: validate configs, run ensembles, print closed-form predictions,
//! inspect binary containers and compare runs.
//!
//! Exit status: 0 on success, 1 when a z-score gate is exceeded, 2 on errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use floquet_lab::haar::unitarity_residual;
use floquet_lab::harness::{self, RunConfig};
use floquet_lab::io::{self, Container};
use floquet_lab::lattice::CircuitSpec;
use floquet_lab::theory::{self, Category, Params, PredictGrid, Variant};
use floquet_lab::{Error, Result};

#[derive(Parser)]
#[command(
    name = "floqlab",
    version,
    about = "Floquet random-circuit and CUE ensemble statistics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a run config or a bare circuit spec.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Sample an ensemble and write CSVs plus a summary.
    Run(RunArgs),
    /// Write closed-form prediction tables without sampling.
    Predict(PredictArgs),
    /// Describe a persisted matrix, spectrum or accumulator file.
    Inspect {
        path: PathBuf,
        /// Print every entry (matrices) or quasienergy (spectra).
        #[arg(long)]
        dump: bool,
    },
    /// Join the CSVs of two run directories.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "z-gate", default_value_t = harness::DEFAULT_Z_GATE)]
        z_gate: f64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "z-gate")]
    z_gate: Option<f64>,
}

#[derive(Args)]
struct PredictArgs {
    /// Predict every statistic of a run config.
    #[arg(long, conflicts_with = "statistic")]
    config: Option<PathBuf>,
    /// A single statistic, one of the registered prediction names.
    #[arg(long, required_unless_present = "config")]
    statistic: Option<String>,
    #[arg(long, default_value_t = 32)]
    n: usize,
    #[arg(long = "n-a")]
    n_a: Option<usize>,
    /// Integer times `0..=t_max` (or `-t_max..=t_max` for correlators).
    #[arg(long = "t-max")]
    t_max: Option<usize>,
    /// Histogram bins for frequency statistics.
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    category: Option<String>,
    #[arg(long, default_value = "exact")]
    variant: String,
    #[arg(long)]
    trace: Option<f64>,
    #[arg(long = "trace-sq")]
    trace_sq: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { config } => validate(&config),
        Command::Run(args) => run(args),
        Command::Predict(args) => predict(args),
        Command::Inspect { path, dump } => inspect(&path, dump),
        Command::Compare { a, b, out, z_gate } => compare(&a, &b, out.as_deref(), z_gate),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn validate(path: &Path) -> Result<bool> {
    let text = fs::read_to_string(path)?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    if table.contains_key("ensemble") {
        let config = RunConfig::from_toml(&text)?;
        let plan = config.plan()?;
        println!(
            "run config OK: N = {}, {} samples",
            plan.dim(),
            config.samples
        );
        for label in plan.labels() {
            println!("  statistic {label}");
        }
        for w in plan.warnings() {
            println!("warning: {w}");
        }
    } else {
        let spec: CircuitSpec = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        let v = spec.validate()?;
        println!(
            "circuit spec OK: N = {}, {} substeps",
            v.dim(),
            v.substeps().len()
        );
        for w in v.warnings() {
            println!("warning: {w}");
        }
    }
    Ok(true)
}

fn run(args: RunArgs) -> Result<bool> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(w) = args.workers {
        config.workers = w;
    }
    if let Some(out) = args.out {
        config.out = out;
    }
    if let Some(z) = args.z_gate {
        config.z_gate = z;
    }
    let bundle = harness::run(&config)?;
    harness::write_bundle(&bundle, &config.out)?;
    print!("{}", bundle.summary());
    Ok(bundle.passed())
}

fn predict(args: PredictArgs) -> Result<bool> {
    let tables: Vec<(String, String)> = match &args.config {
        Some(path) => {
            let plan = RunConfig::load(path)?.plan()?;
            harness::predictions(&plan)?
                .into_iter()
                .map(|(name, grid, values)| (name, harness::prediction_csv(&grid, &values)))
                .collect()
        }
        None => {
            let statistic = args
                .statistic
                .clone()
                .expect("clap requires --statistic without --config");
            let variant: Variant = args.variant.parse()?;
            let category = args
                .category
                .as_deref()
                .map(str::parse::<Category>)
                .transpose()?;
            let params = Params {
                n_a: args.n_a,
                category,
                trace: args.trace,
                trace_sq: args.trace_sq,
                ..Params::new(args.n)
            };
            let grid = match (args.t_max, args.bins) {
                (Some(t), None)
                    if statistic.starts_with("corr_time") || statistic == "op_corr_time" =>
                {
                    PredictGrid::times(-(t as i64)..=t as i64)
                }
                (Some(t), None) => PredictGrid::times(0..=t as i64),
                (None, Some(b)) => {
                    PredictGrid::Bins(floquet_lab::spectral::OmegaGrid::histogram(b)?)
                }
                _ => {
                    return Err(Error::Config(
                        "give exactly one of --t-max or --bins".into(),
                    ))
                }
            };
            let table = theory::predict(&statistic, variant, &params, &grid)?;
            for (at, mass) in &table.deltas {
                eprintln!("delta mass {mass:.16e} at {at}");
            }
            vec![(
                statistic,
                harness::prediction_csv(&table.grid, &table.values),
            )]
        }
    };
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            for (name, csv) in &tables {
                fs::write(dir.join(format!("{name}_predicted.csv")), csv)?;
            }
            println!(
                "wrote {} prediction table(s) to {}",
                tables.len(),
                dir.display()
            );
        }
        None => {
            for (name, csv) in &tables {
                if tables.len() > 1 {
                    println!("# {name}");
                }
                print!("{csv}");
            }
        }
    }
    Ok(true)
}

fn inspect(path: &Path, dump: bool) -> Result<bool> {
    let mut magic = [0u8; 4];
    {
        use std::io::Read;
        fs::File::open(path)?.read_exact(&mut magic)?;
    }
    if magic == io::ACCUMULATOR_MAGIC {
        let acc = io::load_accumulators(path)?;
        println!("accumulators: {} statistic(s)", acc.len());
        for name in acc.names() {
            let a = acc.get(name).expect("listed name");
            println!(
                "  {name}: width {}, {} samples, {} blocks",
                a.len(),
                a.count(),
                a.blocks()
            );
        }
        return Ok(true);
    }
    match io::load_container(path)? {
        Container::Matrix(m) => {
            println!("matrix: N = {}", m.nrows());
            println!("unitarity residual: {:.3e}", unitarity_residual(&m));
            if dump {
                println!("row,col,re,im");
                for r in 0..m.nrows() {
                    for c in 0..m.ncols() {
                        println!("{r},{c},{:.16e},{:.16e}", m[(r, c)].re, m[(r, c)].im);
                    }
                }
            }
        }
        Container::Spectral(s) => {
            println!("spectrum: N = {}", s.dim());
            println!("eigensolver residual: {:.3e}", s.residual());
            println!("orthonormality error: {:.3e}", s.orthonormality());
            let e = s.quasienergies();
            if dump {
                println!("index,quasienergy");
                for (k, x) in e.iter().enumerate() {
                    println!("{k},{x:.16e}");
                }
            } else {
                println!("quasienergies: {:.6} .. {:.6}", e[0], e[e.len() - 1]);
            }
        }
    }
    Ok(true)
}

fn compare(a: &Path, b: &Path, out: Option<&Path>, z_gate: f64) -> Result<bool> {
    let comparisons = harness::compare_dirs(a, b)?;
    if comparisons.is_empty() {
        return Err(Error::Config(format!(
            "no CSV files shared by {} and {}",
            a.display(),
            b.display()
        )));
    }
    let mut pass = true;
    for c in &comparisons {
        let z = c.max_abs_z();
        pass &= z <= z_gate;
        let verdict = if z <= z_gate {
            "consistent"
        } else {
            "DIFFERENT"
        };
        println!(
            "[{}] {} shared rows, {} unmatched, max |z| = {z:.3}: {verdict}",
            c.name,
            c.rows.len(),
            c.unmatched
        );
        if let Some(dir) = out {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(format!("{}_compare.csv", c.name)), c.to_csv())?;
        }
    }
    Ok(pass)
}
