use std::fs;
use std::io::{self, BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use serde_json::Value;

use rds::config::{load_value, parse_cli_value, set_path, BuiltPrior, ExperimentConfig};
use rds::external::serve;
use rds::harness::{
    median_mse_by_method, row_record, run_experiment, ResultRow, CSV_HEADER, RESULTS_FILE,
};
use rds::io::{load_tensor, save_tensor};
use rds_core::degrade::{corrupt_measurement, CorruptionSpec};
use rds_core::metrics::evaluate;
use rds_core::Tensor;

const SEED_ENV: &str = "RDS_SEED";

#[derive(Parser)]
#[command(
    name = "rds",
    version,
    about = "Robust diffusion solvers for inverse problems with outliers"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment config and write results.csv
    Run {
        config: PathBuf,
        /// Overrides `output_dir` from the config
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Corrupt a tensor with Gaussian noise and outliers
    Degrade {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
        xi: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the outlier mask (1 = corrupted) as a tensor
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// PSNR, SSIM and MSE of a tensor against a reference, as JSON
    Metrics { x: PathBuf, reference: PathBuf },
    /// Run a config over a grid of parameter overrides
    Ablate {
        config: PathBuf,
        /// `dotted.path=v1,v2,...`; repeat for a product grid
        #[arg(long, required = true)]
        grid: Vec<String>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Serve the config's analytic prior over the external-denoiser protocol on stdin/stdout
    #[command(hide = true)]
    ServeAnalytic { config: PathBuf },
}

fn load_config_value(path: &Path, output_dir: Option<&Path>) -> anyhow::Result<Value> {
    let mut v = load_value(path)?;
    if let Ok(s) = std::env::var(SEED_ENV) {
        let seed: u64 = s
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV}={s:?} is not an unsigned integer"))?;
        set_path(&mut v, "seed", seed.into())?;
    }
    if let Some(dir) = output_dir {
        set_path(
            &mut v,
            "output_dir",
            dir.to_string_lossy().into_owned().into(),
        )?;
    }
    Ok(v)
}

fn print_summary(rows: &[ResultRow]) {
    for (m, med, n) in median_mse_by_method(rows) {
        let failed = rows
            .iter()
            .filter(|r| r.method == m && r.error.is_some())
            .count();
        match med {
            Some(v) => println!(
                "{:<10} median mse {v:.6} over {n} runs ({failed} failed)",
                m.name()
            ),
            None => println!("{:<10} no successful runs ({failed} failed)", m.name()),
        }
    }
}

fn run(config: &Path, output_dir: Option<&Path>) -> anyhow::Result<()> {
    let cfg = ExperimentConfig::from_value(load_config_value(config, output_dir)?)
        .with_context(|| format!("loading {}", config.display()))?;
    let rows = run_experiment(&cfg)?;
    print_summary(&rows);
    println!("wrote {}", cfg.output_dir.join(RESULTS_FILE).display());
    Ok(())
}

fn parse_grid(specs: &[String]) -> anyhow::Result<Vec<(String, Vec<String>)>> {
    specs
        .iter()
        .map(|s| {
            let (k, vs) = s
                .split_once('=')
                .with_context(|| format!("grid entry {s:?} is not param=v1,v2,..."))?;
            let vals: Vec<String> = vs.split(',').map(str::to_owned).collect();
            if k.is_empty() || vals.iter().any(String::is_empty) {
                bail!("grid entry {s:?} has an empty parameter or value");
            }
            Ok((k.to_owned(), vals))
        })
        .collect()
}

fn ablate(config: &Path, grid: &[String], output_dir: Option<&Path>) -> anyhow::Result<()> {
    let base = load_config_value(config, output_dir)?;
    let base_dir = ExperimentConfig::from_value(base.clone())
        .with_context(|| format!("loading {}", config.display()))?
        .output_dir;
    let grid = parse_grid(grid)?;

    let mut combos: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (k, vals) in &grid {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                vals.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((k.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }

    let table = base_dir.join("ablation.csv");
    fs::create_dir_all(&base_dir).with_context(|| base_dir.display().to_string())?;
    let mut w = csv::Writer::from_path(&table).with_context(|| table.display().to_string())?;
    let mut header: Vec<String> = grid.iter().map(|(k, _)| k.clone()).collect();
    header.extend(CSV_HEADER.iter().map(|s| s.to_string()));
    w.write_record(&header)?;

    for combo in combos {
        let mut v = base.clone();
        let label: Vec<String> = combo.iter().map(|(k, val)| format!("{k}={val}")).collect();
        for (k, val) in &combo {
            set_path(&mut v, k, parse_cli_value(val))?;
        }
        let sub = base_dir.join(label.join("_").replace(['/', '\\', ' '], "-"));
        set_path(
            &mut v,
            "output_dir",
            sub.to_string_lossy().into_owned().into(),
        )?;
        let cfg = ExperimentConfig::from_value(v).with_context(|| label.join(", "))?;
        println!("== {}", label.join(", "));
        let rows = run_experiment(&cfg)?;
        print_summary(&rows);
        for row in &rows {
            let mut out: Vec<String> = combo.iter().map(|(_, val)| val.clone()).collect();
            out.extend(row_record(row));
            w.write_record(&out)?;
        }
    }
    w.flush()?;
    println!("wrote {}", table.display());
    Ok(())
}

fn degrade(
    input: &Path,
    output: &Path,
    spec: CorruptionSpec,
    mask_out: Option<&Path>,
) -> anyhow::Result<()> {
    let x = load_tensor(input)?;
    let (y, mask) = corrupt_measurement(&x, &spec)?;
    let prov = format!(
        "degrade of {}: rho {} sigma {} xi {} seed {}",
        input.display(),
        spec.rho,
        spec.sigma,
        spec.xi,
        spec.seed
    );
    save_tensor(output, &y, &prov)?;
    if let Some(p) = mask_out {
        let m = Tensor::new(
            x.shape().to_vec(),
            mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )?;
        save_tensor(p, &m, &format!("outlier mask; {prov}"))?;
    }
    let n = mask.iter().filter(|&&b| b).count();
    println!("{n} of {} entries replaced by {}", mask.len(), spec.xi);
    Ok(())
}

fn metrics(x: &Path, reference: &Path) -> anyhow::Result<()> {
    let m = evaluate(&load_tensor(x)?, &load_tensor(reference)?)?;
    let out = serde_json::json!({ "psnr": m.psnr, "ssim": m.ssim, "mse": m.mse });
    println!("{out}");
    Ok(())
}

fn serve_analytic(config: &Path) -> anyhow::Result<()> {
    let cfg = ExperimentConfig::from_path(config)?;
    let BuiltPrior::Analytic(mut prior) = cfg.build_prior()? else {
        bail!("serve-analytic needs a gaussian or gmm prior");
    };
    let schedule = cfg.schedule()?;
    let stdin = io::stdin();
    let stdout = io::stdout();
    serve(
        &mut prior,
        &schedule,
        &mut BufReader::new(stdin.lock()),
        &mut BufWriter::new(stdout.lock()),
    )?;
    Ok(())
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Cmd::Run { config, output_dir } => run(&config, output_dir.as_deref()),
        Cmd::Degrade {
            input,
            output,
            rho,
            sigma,
            xi,
            seed,
            mask,
        } => degrade(
            &input,
            &output,
            CorruptionSpec {
                sigma,
                rho,
                xi,
                seed,
            },
            mask.as_deref(),
        ),
        Cmd::Metrics { x, reference } => metrics(&x, &reference),
        Cmd::Ablate {
            config,
            grid,
            output_dir,
        } => ablate(&config, &grid, output_dir.as_deref()),
        Cmd::ServeAnalytic { config } => serve_analytic(&config),
    }
}
