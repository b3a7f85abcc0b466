//! Command-line driver: runs configured studies and writes CSV results.
//!
//! Exit status is 0 on success, 2 for invalid input and 3 when a solver or
//! I/O step fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use qmc_feedback::config::{digest_hex, ExperimentConfig, PointMethod, QmcConfig, QoiKind};
use qmc_feedback::experiment::{self, LawChoice, Table};
use qmc_feedback::qmc::{cbc_lattice_kernel, theoretical_bound, LatticeKernel, WeightSpec};

#[derive(Parser, Debug)]
#[command(name = "qmc-feedback", version, about = "QMC-averaged Riccati feedback studies")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Omit the timestamp comment so reruns are byte-identical.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Lattice,
    Shifted,
    Folded,
    Centered,
    Interlaced,
    Mc,
}

impl From<MethodArg> for PointMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Lattice => PointMethod::Lattice,
            MethodArg::Shifted => PointMethod::Shifted,
            MethodArg::Folded => PointMethod::Folded,
            MethodArg::Centered => PointMethod::Centered,
            MethodArg::Interlaced => PointMethod::Interlaced,
            MethodArg::Mc => PointMethod::Mc,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KernelArg {
    Shift,
    Tent,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LawArg {
    Exact,
    Nominal,
    Mean,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the study named in the configuration.
    Run,
    /// Write a point set as `k,x1..xs`.
    Points {
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long = "N")]
        n: usize,
        #[arg(long)]
        s: usize,
        #[arg(long, default_value_t = 2)]
        alpha: usize,
        #[arg(long, default_value_t = 0.1)]
        b_scale: f64,
        #[arg(long, default_value_t = 2.0)]
        b_decay: f64,
    },
    /// Construct a lattice generating vector and report the error history.
    Cbc {
        #[arg(long = "N")]
        n: usize,
        #[arg(long)]
        s: usize,
        #[arg(long, value_enum, default_value = "shift")]
        kernel: KernelArg,
        #[arg(long, default_value_t = 0.1)]
        b_scale: f64,
        #[arg(long, default_value_t = 2.0)]
        b_decay: f64,
    },
    /// Solve the Riccati equation at one parameter and summarize it.
    Riccati {
        /// Parameter coordinates, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        sigma: Vec<f64>,
        /// Append the entries of Π(t_k) to every row.
        #[arg(long)]
        flatten: bool,
    },
    /// Closed-loop simulation at one parameter.
    Simulate {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        sigma: Vec<f64>,
        #[arg(long, value_enum, default_value = "exact")]
        law: LawArg,
        /// Also write `trajectory.csv` with `t,y_1..y_n,u_1..u_m`.
        #[arg(long)]
        dump_trajectory: bool,
    },
}

/// Failure with its exit status.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl From<qmc_feedback::Error> for Failure {
    fn from(e: qmc_feedback::Error) -> Self {
        let code = if e.is_validation() { 2 } else { 3 };
        Self { code, err: e.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        let code = match err.downcast_ref::<qmc_feedback::Error>() {
            Some(e) if e.is_validation() => 2,
            _ => 3,
        };
        Self { code, err }
    }
}

fn validation(msg: impl Into<String>) -> Failure {
    qmc_feedback::Error::Config(msg.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, err }) => {
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}

fn load_config(cli: &Cli, required: bool) -> Result<Option<ExperimentConfig>, Failure> {
    let Some(path) = &cli.config else {
        return if required {
            Err(validation("this command needs --config <path>"))
        } else {
            Ok(None)
        };
    };
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        if let Some(q) = cfg.qmc.as_mut() {
            q.seed = seed;
        }
    }
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    Ok(Some(cfg))
}

/// Configuration for commands that can run on the default model.
fn config_or_default(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    match load_config(cli, false)? {
        Some(cfg) => Ok(cfg),
        None => {
            let mut cfg = ExperimentConfig::from_json(r#"{"study": {"kind": "riccati-check"}}"#)?;
            if let Some(out) = &cli.out {
                cfg.output = out.clone();
            }
            Ok(cfg)
        }
    }
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn write(table: &Table, dir: &Path, name: &str, hash: &str, deterministic: bool) -> Result<(), Failure> {
    let path = dir.join(name);
    table
        .write_csv(&path, hash, deterministic)
        .with_context(|| format!("writing {}", path.display()))?;
    println!("{}", path.display());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Run => {
            let cfg = load_config(cli, true)?.expect("required");
            let table = experiment::run_study(&cfg)?;
            let name = format!("{}.csv", cfg.study.name());
            write(&table, &cfg.output, &name, &cfg.hash(), cli.deterministic)
        }
        Command::Points {
            method,
            n,
            s,
            alpha,
            b_scale,
            b_decay,
        } => {
            let q = QmcConfig {
                method: (*method).into(),
                n: Some(*n),
                n_list: None,
                s: *s,
                alpha: *alpha,
                repeats: 1,
                seed: cli.seed.unwrap_or(0),
                qoi: QoiKind::Feedback,
                b_scale: *b_scale,
                b_decay: *b_decay,
            };
            if *s == 0 || *n == 0 {
                return Err(validation("--N and --s must be positive"));
            }
            let table = experiment::points_table(&experiment::build_points(&q, *n)?);
            let hash = digest_hex(format!("{:?}", cli.command).as_bytes());
            write(&table, &out_dir(cli), "points.csv", &hash, cli.deterministic)
        }
        Command::Cbc {
            n,
            s,
            kernel,
            b_scale,
            b_decay,
        } => {
            let w = WeightSpec::pod(WeightSpec::power_decay(*b_scale, *b_decay, *s))?;
            let k = match kernel {
                KernelArg::Shift => LatticeKernel::ShiftAveraged,
                KernelArg::Tent => LatticeKernel::Tent,
            };
            let (rule, history) = cbc_lattice_kernel(*n, *s, &w, k)?;
            let mut table = Table::new(&["j", "z", "e2"]);
            for (j, (z, e2)) in rule.z().iter().zip(&history).enumerate() {
                table.push(vec![(j + 1).to_string(), z.to_string(), e2.to_string()]);
            }
            let mut note = format!("N={n},s={s},kernel={kernel:?}").to_lowercase();
            if matches!(kernel, KernelArg::Shift) {
                note += &format!(",bound={}", theoretical_bound(*n, *s, &w, 1.0)?);
            }
            table.comments.push(note);
            let hash = digest_hex(format!("{:?}", cli.command).as_bytes());
            write(&table, &out_dir(cli), "cbc.csv", &hash, cli.deterministic)
        }
        Command::Riccati { sigma, flatten } => {
            let cfg = config_or_default(cli)?;
            let table = experiment::riccati_table(&cfg.model, sigma, *flatten)?;
            let hash = digest_hex(format!("{}{:?}", cfg.hash(), cli.command).as_bytes());
            write(&table, &cfg.output, "riccati.csv", &hash, cli.deterministic)
        }
        Command::Simulate {
            sigma,
            law,
            dump_trajectory,
        } => {
            let cfg = config_or_default(cli)?;
            if matches!(law, LawArg::Mean) && cfg.qmc.is_none() {
                return Err(validation("--law mean needs a configuration with a \"qmc\" block"));
            }
            let choice = match law {
                LawArg::Exact => LawChoice::Exact,
                LawArg::Nominal => LawChoice::Nominal,
                LawArg::Mean => LawChoice::Mean,
            };
            let (traj, cost) = experiment::simulate_run(&cfg, sigma, choice)?;
            let hash = digest_hex(format!("{}{:?}", cfg.hash(), cli.command).as_bytes());
            let mut summary = Table::new(&["law", "cost", "final_state_norm"]);
            let last = traj.ys.last().expect("nonempty trajectory");
            summary.push(vec![
                format!("{law:?}").to_lowercase(),
                cost.to_string(),
                (last.norm() * (1.0 / (cfg.model.n as f64 + 1.0)).sqrt()).to_string(),
            ]);
            write(&summary, &cfg.output, "simulate.csv", &hash, cli.deterministic)?;
            if *dump_trajectory {
                let table = experiment::trajectory_table(&traj);
                write(&table, &cfg.output, "trajectory.csv", &hash, cli.deterministic)?;
            }
            Ok(())
        }
    }
}
