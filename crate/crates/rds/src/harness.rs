//! Batch runner: ground truth, measurement, corruption, every configured
//! method, metrics, and the result tables.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use rds_core::degrade::corrupt_measurement;
use rds_core::denoiser::DataPredictionModel;
use rds_core::metrics::evaluate;
use rds_core::operators::{build_operator, ForwardOperator, Operator};
use rds_core::rng::RngStream;
use rds_core::sampler::run_sampler;
use rds_core::Tensor;

use crate::config::{BuiltPrior, ExperimentConfig, Method};
use crate::error::{RdsError, Result};
use crate::external::ExternalModel;
use crate::io::{load_tensor, save_pgm, save_tensor};

pub const CSV_HEADER: [&str; 9] = [
    "task", "method", "rho", "sigma", "seed", "psnr", "ssim", "mse", "wall_s",
];
pub const RESULTS_FILE: &str = "results.csv";
pub const ERRORS_FILE: &str = "errors.csv";

const STREAM_TRUTH: u64 = 1;
const STREAM_OPERATOR: u64 = 2;
const STREAM_CORRUPTION: u64 = 3;
const STREAM_SAMPLER: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub task: String,
    pub method: Method,
    pub rho: f64,
    pub sigma: f64,
    pub seed: u64,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub mse: Option<f64>,
    pub wall_s: f64,
    /// Set when the run failed; the metric cells are then empty.
    pub error: Option<String>,
}

/// Seed of the `repeat`-th run.
pub fn run_seed(base: u64, repeat: usize) -> u64 {
    base.wrapping_add(repeat as u64)
}

/// Independent 64-bit seed for one purpose of one run (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, purpose: u64) -> u64 {
    let mut z = seed
        .wrapping_add(purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One synthetic problem: truth, operator and corrupted measurement.
#[derive(Debug, Clone)]
pub struct Instance {
    pub seed: u64,
    pub truth: Tensor,
    pub op: Operator,
    pub y: Tensor,
    /// Realized outliers, for inspection only.
    pub mask: Vec<bool>,
}

pub fn make_instance(
    cfg: &ExperimentConfig,
    prior: &BuiltPrior,
    fixed_truth: Option<&Tensor>,
    seed: u64,
) -> Result<Instance> {
    let truth = match (fixed_truth, prior) {
        (Some(t), _) => t.clone(),
        (None, BuiltPrior::Analytic(p)) => {
            p.sample(&mut RngStream::with_stream(seed, STREAM_TRUTH))
        }
        (None, BuiltPrior::External(_)) => {
            return Err(RdsError::Config(
                "truth is required with an external prior".into(),
            ))
        }
    };
    let op = build_operator(
        &cfg.operator().to_spec(),
        &cfg.shape,
        &mut RngStream::with_stream(seed, STREAM_OPERATOR),
    )?;
    let y_clean = op.apply(&truth)?;
    let (y, mask) = corrupt_measurement(
        &y_clean,
        &cfg.corruption_spec(derive_seed(seed, STREAM_CORRUPTION)),
    )?;
    Ok(Instance {
        seed,
        truth,
        op,
        y,
        mask,
    })
}

/// Reconstruct `inst` with `method`.
pub fn solve(
    cfg: &ExperimentConfig,
    prior: &BuiltPrior,
    inst: &Instance,
    method: Method,
) -> Result<Tensor> {
    let solver = cfg.solver_config(method, derive_seed(inst.seed, STREAM_SAMPLER))?;
    let schedule = cfg.schedule()?;
    let grid = cfg.time_grid()?;
    let mut model: Box<dyn DataPredictionModel> = match prior {
        BuiltPrior::Analytic(p) => Box::new(p.clone()),
        BuiltPrior::External(cmd) => Box::new(ExternalModel::spawn(cmd)?),
    };
    let (x, _) = run_sampler(model.as_mut(), &inst.y, &inst.op, &solver, &schedule, &grid)?;
    Ok(x)
}

fn row_for(
    cfg: &ExperimentConfig,
    method: Method,
    seed: u64,
    outcome: Result<(Tensor, &Tensor)>,
    wall_s: f64,
) -> ResultRow {
    let mut row = ResultRow {
        task: cfg.task.name().to_owned(),
        method,
        rho: cfg.corruption.rho,
        sigma: cfg.corruption.sigma,
        seed,
        psnr: None,
        ssim: None,
        mse: None,
        wall_s: if cfg.record_wall_time { wall_s } else { 0.0 },
        error: None,
    };
    match outcome.and_then(|(x, truth)| Ok(evaluate(&x, truth)?)) {
        Ok(m) => {
            row.psnr = Some(m.psnr);
            row.ssim = m.ssim;
            row.mse = Some(m.mse);
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

struct Writer<'a> {
    dir: Option<PathBuf>,
    pgm: bool,
    cfg: &'a ExperimentConfig,
}

impl Writer<'_> {
    fn put(&self, name: &str, t: &Tensor, provenance: &str) -> Result<()> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        save_tensor(&dir.join(format!("{name}.rtn")), t, provenance)?;
        if self.pgm && t.shape().len() == 2 {
            save_pgm(&dir.join(format!("{name}.pgm")), t)?;
        }
        Ok(())
    }

    fn provenance(&self, what: &str, seed: u64) -> String {
        format!("{what}; task {}; seed {seed}", self.cfg.task.name())
    }
}

fn run_repeat(
    cfg: &ExperimentConfig,
    prior: &BuiltPrior,
    fixed_truth: Option<&Tensor>,
    writer: &Writer<'_>,
    seed: u64,
) -> Result<Vec<ResultRow>> {
    let inst = match make_instance(cfg, prior, fixed_truth, seed) {
        Ok(i) => i,
        Err(e @ RdsError::Io { .. }) => return Err(e),
        Err(e) => {
            let msg = e.to_string();
            return Ok(cfg
                .methods
                .iter()
                .map(|&m| row_for(cfg, m, seed, Err(RdsError::Config(msg.clone())), 0.0))
                .collect());
        }
    };
    writer.put(
        &format!("seed{seed}_truth"),
        &inst.truth,
        &writer.provenance("ground truth", seed),
    )?;
    writer.put(
        &format!("seed{seed}_y"),
        &inst.y,
        &writer.provenance("corrupted measurement", seed),
    )?;
    let mut rows = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let start = Instant::now();
        let out = solve(cfg, prior, &inst, method);
        let wall = start.elapsed().as_secs_f64();
        if let Ok(x) = &out {
            writer.put(
                &format!("seed{seed}_{}", method.name()),
                x,
                &writer.provenance(&format!("{} reconstruction", method.name()), seed),
            )?;
        }
        rows.push(row_for(
            cfg,
            method,
            seed,
            out.map(|x| (x, &inst.truth)),
            wall,
        ));
    }
    Ok(rows)
}

/// Run every repeat and method, in config order. Writes tensors when enabled but no tables.
pub fn execute(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let prior = cfg.build_prior()?;
    let fixed_truth = match &cfg.truth {
        Some(p) => {
            let t = load_tensor(p)?;
            if t.shape() != cfg.shape.as_slice() {
                return Err(RdsError::Config(format!(
                    "truth {} has shape {:?}, expected {:?}",
                    p.display(),
                    t.shape(),
                    cfg.shape
                )));
            }
            Some(t)
        }
        None => None,
    };
    let writer = Writer {
        dir: cfg.save_tensors.then(|| cfg.output_dir.join("tensors")),
        pgm: cfg.pgm_previews,
        cfg,
    };
    if let Some(dir) = &writer.dir {
        fs::create_dir_all(dir).map_err(|e| RdsError::io(dir, e))?;
    }
    let work = || {
        (0..cfg.repeats)
            .into_par_iter()
            .map(|r| {
                run_repeat(
                    cfg,
                    &prior,
                    fixed_truth.as_ref(),
                    &writer,
                    run_seed(cfg.seed, r),
                )
            })
            .collect::<Result<Vec<_>>>()
    };
    let per_repeat = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| RdsError::Config(format!("threads: {e}")))?
            .install(work)?,
        None => work()?,
    };
    Ok(per_repeat.into_iter().flatten().collect())
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Cells of `row` in [`CSV_HEADER`] order; failed metrics are empty.
pub fn row_record(r: &ResultRow) -> [String; 9] {
    [
        r.task.clone(),
        r.method.name().to_owned(),
        r.rho.to_string(),
        r.sigma.to_string(),
        r.seed.to_string(),
        cell(r.psnr),
        cell(r.ssim),
        cell(r.mse),
        r.wall_s.to_string(),
    ]
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(CSV_HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(row_record(r))
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| RdsError::io(path, e))
}

fn write_errors(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["task", "method", "seed", "error"])
        .map_err(|e| csv_err(path, e))?;
    for r in rows {
        if let Some(err) = &r.error {
            w.write_record([r.task.as_str(), r.method.name(), &r.seed.to_string(), err])
                .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| RdsError::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> RdsError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => RdsError::io(path, io),
        other => RdsError::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

/// Run the batch and write `results.csv` (plus `errors.csv` when any run failed).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let rows = execute(cfg)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| RdsError::io(dir, e))?;
    write_results(&dir.join(RESULTS_FILE), &rows)?;
    let errors = dir.join(ERRORS_FILE);
    if rows.iter().any(|r| r.error.is_some()) {
        write_errors(&errors, &rows)?;
    } else if errors.exists() {
        fs::remove_file(&errors).map_err(|e| RdsError::io(&errors, e))?;
    }
    Ok(rows)
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Per-method median MSE over successful rows, in first-appearance order.
pub fn median_mse_by_method(rows: &[ResultRow]) -> Vec<(Method, Option<f64>, usize)> {
    let mut order: Vec<Method> = Vec::new();
    for r in rows {
        if !order.contains(&r.method) {
            order.push(r.method);
        }
    }
    order
        .into_iter()
        .map(|m| {
            let mut v: Vec<f64> = rows
                .iter()
                .filter(|r| r.method == m)
                .filter_map(|r| r.mse)
                .collect();
            let n = v.len();
            (m, median(&mut v), n)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Task;

    #[test]
    fn derived_seeds_differ_by_purpose() {
        let s: Vec<u64> = (1..=4).map(|p| derive_seed(7, p)).collect();
        for i in 0..4 {
            for j in 0..i {
                assert_ne!(s[i], s[j]);
            }
        }
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }

    #[test]
    fn medians() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }

    #[test]
    fn failed_runs_keep_their_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::gaussian_testbed(Task::Inpainting, 0.1);
        cfg.solver.steps = 3;
        cfg.repeats = 2;
        cfg.methods = vec![Method::RobustGd, Method::RobustCg];
        // a learning rate this large blows up the GD iterate
        cfg.solver.gd.eta_x = Some(1e6);
        cfg.solver.gd.iterations = Some(200);
        cfg.output_dir = dir.path().to_owned();
        cfg.save_tensors = false;
        let rows = run_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows[0].error.is_some() && rows[0].mse.is_none());
        assert!(rows[1].error.is_none() && rows[1].mse.is_some());
        let text = fs::read_to_string(dir.path().join(RESULTS_FILE)).unwrap();
        let first = text.lines().nth(1).unwrap();
        assert!(
            first.starts_with("inpainting,robust_gd,0.1,0.05,0,,,,0"),
            "{first}"
        );
        assert!(dir.path().join(ERRORS_FILE).exists());
    }
}
