use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use tfqkd::channel::ObservedCounts;
use tfqkd::config::{NTot, RunConfig};
use tfqkd::dominance::verify_dominance;
use tfqkd::keyrate::{self, RateRow};
use tfqkd::montecarlo::run_coverage;
use tfqkd::optimizer::optimize;
use tfqkd::Error;

const EXIT_DOMINANCE_FAILED: u8 = 4;

#[derive(Parser)]
#[command(name = "tfqkd", version, about = "Finite-key rates for twin-field QKD without phase postselection")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON config file with flat keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    distance_km: Option<f64>,
    /// Number of rounds, or `inf`.
    #[arg(long, global = true)]
    n_tot: Option<String>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[arg(long, global = true)]
    cutoff: Option<u32>,
    #[arg(long, global = true)]
    lambda_override: Option<f64>,
    #[arg(long, global = true)]
    lambda_scale: Option<f64>,
    #[arg(long, global = true)]
    gamma_override: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Key rate at the configured parameters.
    Rate {
        /// Announced counts (CSV) to use instead of the expected ones.
        #[arg(long)]
        counts: Option<PathBuf>,
    },
    /// Optimized rates over the distance and round-count grid.
    Table {
        /// Also write the grid layout (rows N_tot, columns L) here.
        #[arg(long)]
        wide: Option<PathBuf>,
    },
    /// Optimize parameters at one distance and round count.
    Optimize,
    /// Numerically check the dominance inequality.
    VerifyDominance,
    /// Coverage of the phase-error and decoy bounds on simulated runs.
    Montecarlo,
}

fn build_config(g: &Global) -> Result<RunConfig, Error> {
    let mut c = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &g.out {
        c.out = Some(o.clone());
    }
    if let Some(s) = g.seed {
        c.seed = s;
    }
    if let Some(d) = g.distance_km {
        c.distance_km = d;
    }
    if let Some(n) = &g.n_tot {
        c.n_tot = n.parse()?;
    }
    if let Some(t) = g.trials {
        c.trials = t;
    }
    if let Some(k) = g.cutoff {
        c.cutoff = k;
    }
    if g.lambda_override.is_some() {
        c.lambda_override = g.lambda_override;
    }
    if let Some(s) = g.lambda_scale {
        c.lambda_scale = s;
    }
    if g.gamma_override.is_some() {
        c.gamma_override = g.gamma_override;
    }
    c.validate()?;
    Ok(c)
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>, Error> {
    match path {
        Some(p) => File::create(p)
            .map(|f| Box::new(io::BufWriter::new(f)) as Box<dyn Write>)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display()))),
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn write_json<T: serde::Serialize>(value: &T, path: Option<&Path>) -> Result<(), Error> {
    let mut w = open_out(path)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Input(e.to_string()))?;
    writeln!(w, "{text}").map_err(|e| Error::Input(e.to_string()))
}

fn cmd_rate(c: &RunConfig, counts: Option<&Path>) -> Result<(), Error> {
    let mut params = c.protocol();
    let channel = c.channel();
    let (n, result) = match counts {
        Some(path) => {
            let f = File::open(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let obs = ObservedCounts::read_csv(f).map_err(|e| Error::Config(e.to_string()))?;
            params.n_tot = obs.n_tot;
            (Some(obs.n_tot), keyrate::key_length(&obs, &params, &channel)?)
        }
        None => {
            let n = c.n_tot.as_option();
            (n, keyrate::expected_rate(&params, &channel, n)?)
        }
    };
    let row = RateRow::new(c.distance_km, n, &params, &result);
    keyrate::write_rate_csv(&[row], open_out(c.out.as_deref())?)
}

fn cmd_optimize(c: &RunConfig) -> Result<(), Error> {
    let n = c.n_tot.as_option();
    let r = optimize(&c.search_space(), &c.channel(), n, &c.protocol(), &c.optimize_options())?;
    log::info!("{} evaluations, rate {:.4e}", r.evaluations, r.result.rate_per_pulse);
    write_json(&r, c.out.as_deref())
}

fn cmd_table(c: &RunConfig, wide: Option<&Path>) -> Result<(), Error> {
    let template = c.protocol();
    let space = c.search_space();
    let opts = c.optimize_options();
    let cells: Vec<(NTot, f64)> =
        c.n_tot_list.iter().flat_map(|&n| c.distances_km.iter().map(move |&d| (n, d))).collect();
    let rows: Vec<RateRow> = cells
        .par_iter()
        .map(|&(n, d)| {
            let n = n.as_option();
            match optimize(&space, &c.channel_at(d), n, &template, &opts) {
                Ok(r) => Ok(RateRow::new(d, n, &r.params, &r.result)),
                // No valid protocol anywhere in the box: the rate is zero.
                Err(Error::SearchFailure(msg)) => {
                    log::warn!("L = {d} km: {msg}");
                    let zero = keyrate::expected_rate(&template, &c.channel_at(d), Some(0))?;
                    Ok(RateRow::new(d, n, &template, &zero))
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_, Error>>()?;
    keyrate::write_rate_csv(&rows, open_out(c.out.as_deref())?)?;

    if let Some(p) = wide {
        let io_err = |e: io::Error| Error::Input(e.to_string());
        let mut w = open_out(Some(p))?;
        let header: Vec<String> = c.distances_km.iter().map(|d| format!("{d}")).collect();
        writeln!(w, "N_tot,{}", header.join(",")).map_err(io_err)?;
        for (i, n) in c.n_tot_list.iter().enumerate() {
            let vals: Vec<String> = rows[i * c.distances_km.len()..(i + 1) * c.distances_km.len()]
                .iter()
                .map(|r| format!("{:e}", r.rate_per_pulse))
                .collect();
            writeln!(w, "{n},{}", vals.join(",")).map_err(io_err)?;
        }
    }
    Ok(())
}

fn cmd_verify(c: &RunConfig) -> Result<bool, Error> {
    let coeffs = c.dominance_coefficients()?;
    let report = verify_dominance(&c.protocol().dominance_params(), &coeffs, c.cutoff)?;
    write_json(&report, c.out.as_deref())?;
    Ok(report.pass)
}

fn cmd_montecarlo(c: &RunConfig) -> Result<(), Error> {
    let report = run_coverage(&c.montecarlo())?;
    write_json(&report, c.out.as_deref())
}

fn run(cli: &Cli) -> Result<ExitCode, Error> {
    let c = build_config(&cli.global)?;
    match &cli.command {
        Command::Rate { counts } => cmd_rate(&c, counts.as_deref())?,
        Command::Table { wide } => cmd_table(&c, wide.as_deref())?,
        Command::Optimize => cmd_optimize(&c)?,
        Command::VerifyDominance => {
            if !cmd_verify(&c)? {
                return Ok(ExitCode::from(EXIT_DOMINANCE_FAILED));
            }
        }
        Command::Montecarlo => cmd_montecarlo(&c)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
