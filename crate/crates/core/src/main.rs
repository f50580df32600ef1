use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use fracobstacle::harness::{run_case, write_artifacts, ExperimentConfig};
use fracobstacle::{Error, Result};

/// Convergence sweeps for fractional obstacle problems.
#[derive(Parser, Debug)]
#[command(name = "fracobstacle", version)]
struct Cli {
    /// Plain-text file of `key=value` lines; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    case: Option<String>,
    #[arg(long)]
    dim: Option<String>,
    /// interval, lshape, square or polydisk.
    #[arg(long)]
    domain: Option<String>,
    #[arg(long)]
    s: Option<String>,
    /// Drift as `b` or `b1,b2`.
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<String>,
    /// Scale `a` of the diffusion matrix `a·I` in case C.
    #[arg(long)]
    diffusion: Option<String>,
    #[arg(long)]
    chi: Option<String>,
    #[arg(long)]
    f: Option<String>,
    /// Sinc step.
    #[arg(long)]
    k: Option<String>,
    /// Truncation parameter of the dilated balls.
    #[arg(long = "M")]
    truncation: Option<String>,
    /// `a..b` or a comma separated list.
    #[arg(long)]
    levels: Option<String>,
    #[arg(long)]
    ref_level: Option<String>,
    #[arg(long)]
    rho: Option<String>,
    #[arg(long)]
    eps_stop: Option<String>,
    /// reduced or schur.
    #[arg(long)]
    inner: Option<String>,
    /// auto, none, spectral or multilevel.
    #[arg(long)]
    precond: Option<String>,
    #[arg(long)]
    rel_tol: Option<String>,
    #[arg(long)]
    max_iter: Option<String>,
    /// Elliptic regularity index used for the predicted rate.
    #[arg(long)]
    regularity: Option<String>,
    /// Two levels whose rate is reported as the headline value.
    #[arg(long)]
    oroc_pair: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_config_file(path: &PathBuf) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{}:{}: expected key=value", path.display(), n + 1)))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

fn collect_pairs(cli: &Cli) -> Result<Vec<(String, String)>> {
    let mut pairs = match &cli.config {
        Some(p) => read_config_file(p)?,
        None => Vec::new(),
    };
    let flags = [
        ("case", &cli.case),
        ("dim", &cli.dim),
        ("domain", &cli.domain),
        ("s", &cli.s),
        ("beta", &cli.beta),
        ("diffusion", &cli.diffusion),
        ("chi", &cli.chi),
        ("f", &cli.f),
        ("k", &cli.k),
        ("M", &cli.truncation),
        ("levels", &cli.levels),
        ("ref-level", &cli.ref_level),
        ("rho", &cli.rho),
        ("eps-stop", &cli.eps_stop),
        ("inner", &cli.inner),
        ("precond", &cli.precond),
        ("rel-tol", &cli.rel_tol),
        ("max-iter", &cli.max_iter),
        ("regularity", &cli.regularity),
        ("oroc-pair", &cli.oroc_pair),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            pairs.push((key.to_string(), v.clone()));
        }
    }
    if let Some(out) = &cli.out {
        pairs.push(("out".into(), out.display().to_string()));
    }
    Ok(pairs)
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = ExperimentConfig::from_pairs(&collect_pairs(cli)?)?;
    let output = run_case(&cfg)?;
    for w in &output.report.warnings {
        eprintln!("warning: {w}");
    }
    write_artifacts(&output, &cfg.out)?;
    print!("{}", output.table.to_csv());
    if let Some(d) = &output.report.designated_oroc {
        println!("designated OROC ({}, {}): {:.4}", d.from, d.to, d.value);
    }
    if let Some(m) = output.report.mean_oroc {
        println!("mean adjacent OROC: {m:.4} (predicted {})", output.report.predicted_rate);
    }
    let failed = output.report.failed_levels();
    for l in &output.report.levels {
        if let Some(e) = &l.error {
            eprintln!("level {} failed: {e}", l.level);
        }
    }
    Ok(failed.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
