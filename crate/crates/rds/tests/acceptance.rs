//! Acceptance suite: one PASS/FAIL line per criterion.

use std::fs;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rds::config::{ExperimentConfig, Method, OperatorConfig, Task};
use rds::harness::{execute, median, ResultRow};
use rds_core::degrade::{corrupt_measurement, CorruptionSpec};
use rds_core::inner::{cg_step_size, robust_cg_inner_observed, CgConfig, CgState, StepNumerator};
use rds_core::operators::{
    build_operator, jvp_finite_difference, DenseMatrix, ForwardOperator, OperatorSpec,
};
use rds_core::refine::{refine_measurement, RefineParams};
use rds_core::rng::RngStream;
use rds_core::robust_loss::{
    huber_objective, irls_weights, residual, robust_objective_and_gradient, HuberParams,
    RobustObjectiveParams,
};
use rds_core::Tensor;

struct Outcome {
    pass: bool,
    detail: String,
}

fn random_matrix(rng: &mut RngStream, rows: usize, cols: usize) -> DenseMatrix {
    let s = 1.0 / (cols as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gaussian() * s).collect();
    DenseMatrix::new(rows, cols, data).unwrap()
}

fn randn(rng: &mut RngStream, n: usize, scale: f64) -> Tensor {
    Tensor::from_fn(&[n], |_| rng.gaussian() * scale)
}

fn rel_err(a: &Tensor, b: &Tensor) -> f64 {
    a.sub(b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

fn gradient_identity() -> Outcome {
    let mut rng = RngStream::new(101);
    let (n, h) = (32, 1e-7);
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    while instances < 100 {
        let a = random_matrix(&mut rng, n, n);
        let x0hat = randn(&mut rng, n, 0.5);
        let x = x0hat.add(&randn(&mut rng, n, 0.1));
        let ybar = randn(&mut rng, n, 0.5);
        let delta = 0.02 + 0.3 * rng.uniform();
        let p = RobustObjectiveParams::new(
            0.2 + rng.uniform(),
            0.2 + rng.uniform(),
            HuberParams::new(delta).unwrap(),
        )
        .unwrap();
        let r = residual(&a, &x, &ybar).unwrap();
        if r.as_slice().iter().any(|v| (v.abs() - delta).abs() < 1e-6) {
            continue;
        }
        instances += 1;
        let w = irls_weights(&r, delta).unwrap();
        let (_, g) = robust_objective_and_gradient(&x, &x0hat, &ybar, &a, &p, &w).unwrap();
        let fd = Tensor::from_fn(&[n], |i| {
            let (mut up, mut dn) = (x.clone(), x.clone());
            up.as_mut_slice()[i] += h;
            dn.as_mut_slice()[i] -= h;
            (huber_objective(&up, &x0hat, &ybar, &a, &p).unwrap()
                - huber_objective(&dn, &x0hat, &ybar, &a, &p).unwrap())
                / (2.0 * h)
        });
        worst = worst.max(rel_err(&g, &fd));
    }
    Outcome {
        pass: worst <= 1e-6,
        detail: format!("max relative error {worst:.2e} over {instances} instances (limit 1e-6)"),
    }
}

fn line_search_exactness() -> Outcome {
    let mut rng = RngStream::new(202);
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let n = 2 + k % 15;
        let m = 1 + (k * 7) % 16;
        let a = random_matrix(&mut rng, m, n);
        let x0hat = randn(&mut rng, n, 0.5);
        let x = x0hat.add(&randn(&mut rng, n, 0.2));
        let ybar = randn(&mut rng, m, 0.5);
        let p = RobustObjectiveParams::new(
            0.2 + rng.uniform(),
            0.2 + rng.uniform(),
            HuberParams::new(0.05 + 0.2 * rng.uniform()).unwrap(),
        )
        .unwrap();
        let w = irls_weights(&residual(&a, &x, &ybar).unwrap(), p.delta()).unwrap();
        let (_, grad) = robust_objective_and_gradient(&x, &x0hat, &ybar, &a, &p, &w).unwrap();
        let g = grad.scale(-1.0);
        let d = g.add(&randn(&mut rng, n, 0.5 * g.norm() / (n as f64).sqrt()));
        let cfg = CgConfig {
            iterations: 1,
            eta: 1e-4,
            numerator: StepNumerator::GradDir,
        };
        let state = CgState {
            x: x.clone(),
            g: g.clone(),
            d: d.clone(),
        };
        let alpha = cg_step_size(&state, &a, &w, &p, &cfg).unwrap();
        let mut moved = x.clone();
        moved.axpy(alpha, &d);
        let (_, grad_a) = robust_objective_and_gradient(&moved, &x0hat, &ybar, &a, &p, &w).unwrap();
        let phi0 = grad.dot(&d);
        worst = worst.max(grad_a.dot(&d).abs() / phi0.abs());
    }
    Outcome {
        pass: worst <= 1e-10,
        detail: format!(
            "max |phi'(alpha)| / |phi'(0)| = {worst:.2e} over 50 systems (limit 1e-10)"
        ),
    }
}

/// Solve `m x = b` by Gaussian elimination with partial pivoting.
fn dense_solve(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
            .unwrap();
        m.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            let pivot = m[c].clone();
            for (dst, src) in m[r][c..].iter_mut().zip(&pivot[c..]) {
                *dst -= f * src;
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| m[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / m[r][r];
    }
    x
}

fn cg_finite_termination() -> Outcome {
    let mut rng = RngStream::new(303);
    let n = 16;
    let a = random_matrix(&mut rng, n, n);
    let x0hat = randn(&mut rng, n, 0.5);
    let ybar = randn(&mut rng, n, 0.5);
    let (r_t, gamma_t) = (0.7, 0.4);
    let p = RobustObjectiveParams::new(r_t, gamma_t, HuberParams::squared_l2()).unwrap();
    let cfg = CgConfig {
        iterations: n,
        eta: 1e-4,
        numerator: StepNumerator::GradDir,
    };
    let mut grad_norms = Vec::new();
    let x = robust_cg_inner_observed(&x0hat, &ybar, &a, &p, &cfg, |_, s| {
        grad_norms.push(s.g.norm())
    })
    .unwrap();
    // one more iteration, reported for context only
    let mut longer = Vec::new();
    let extra = CgConfig {
        iterations: n + 1,
        ..cfg
    };
    robust_cg_inner_observed(&x0hat, &ybar, &a, &p, &extra, |_, s| {
        longer.push(s.g.norm())
    })
    .unwrap();
    let (ir2, ig2) = (1.0 / (r_t * r_t), 1.0 / (gamma_t * gamma_t));
    let lhs: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let ata: f64 = (0..n).map(|k| a.entry(k, i) * a.entry(k, j)).sum();
                    ig2 * ata + if i == j { ir2 } else { 0.0 }
                })
                .collect()
        })
        .collect();
    let rhs: Vec<f64> = (0..n)
        .map(|i| {
            ir2 * x0hat.as_slice()[i]
                + ig2
                    * (0..n)
                        .map(|k| a.entry(k, i) * ybar.as_slice()[k])
                        .sum::<f64>()
        })
        .collect();
    let direct = Tensor::from_vec(dense_solve(lhs, rhs));
    let final_g = *grad_norms.last().unwrap();
    let err = rel_err(&x, &direct);
    Outcome {
        pass: final_g <= 1e-8 && err <= 1e-6,
        detail: format!(
            "gradient norm {final_g:.2e} after {} iterations (limit 1e-8; {:.2e} after {}), relative error to direct solve {err:.2e} (limit 1e-6)",
            grad_norms.len() - 1,
            longer.last().unwrap(),
            longer.len() - 1
        ),
    }
}

fn fd_jvp() -> Outcome {
    let shape = [32, 32];
    let mut rng = RngStream::new(404);
    let x = Tensor::from_fn(&shape, |_| rng.gaussian() * 0.5);
    let d = Tensor::from_fn(&shape, |_| rng.gaussian());
    let linear = [
        ("inpainting", OperatorSpec::Inpaint { mask_ratio: 0.7 }),
        ("downsample", OperatorSpec::Downsample { factor: 4 }),
        ("conv2d", OperatorSpec::default_gaussian_blur()),
        (
            "conv2d-motion",
            OperatorSpec::MotionBlur {
                size: 9,
                length: 9,
                angle_deg: 30.0,
                std: 0.5,
                boundary: Default::default(),
            },
        ),
    ];
    let mut worst: f64 = 0.0;
    for (_, spec) in &linear {
        let op = build_operator(spec, &shape, &mut rng).unwrap();
        let ad = op.apply(&d).unwrap();
        for eta in [1e-3, 1e-4] {
            worst = worst.max(rel_err(
                &jvp_finite_difference(&op, &x, &d, eta).unwrap(),
                &ad,
            ));
        }
    }
    let sat = build_operator(&OperatorSpec::default_nonlinear_blur(), &shape, &mut rng).unwrap();
    let exact = sat.jvp(&x, &d).unwrap();
    let e2 = rel_err(&jvp_finite_difference(&sat, &x, &d, 1e-2).unwrap(), &exact);
    let e3 = rel_err(&jvp_finite_difference(&sat, &x, &d, 1e-3).unwrap(), &exact);
    let ratio = e2 / e3;
    Outcome {
        pass: worst <= 1e-10 && ratio >= 5.0,
        detail: format!(
            "linear operators max relative error {worst:.2e} (limit 1e-10); saturated blur error {e2:.2e} -> {e3:.2e}, ratio {ratio:.2} (limit >= 5)"
        ),
    }
}

fn refinement_optimality() -> Outcome {
    let mut rng = RngStream::new(505);
    let mut failures = 0;
    let mut worst_gap = f64::NEG_INFINITY;
    for _ in 0..100 {
        let sigma = 0.01 + rng.uniform();
        let gamma = 0.01 + 3.0 * rng.uniform();
        let y = 2.0 * rng.uniform() - 1.0;
        let ax = 2.0 * rng.uniform() - 1.0;
        let b = y - ax;
        let f = |nu: f64| nu * nu / (sigma * sigma) + (b - nu) * (b - nu) / (gamma * gamma);
        let (nu, _) = refine_measurement(
            &Tensor::from_vec(vec![y]),
            &Tensor::from_vec(vec![ax]),
            &RefineParams::new(sigma, gamma).unwrap(),
        )
        .unwrap();
        let nu = nu.as_slice()[0];
        let (lo, hi) = (-b.abs() - 0.5, b.abs() + 0.5);
        let step = (hi - lo) / 9999.0;
        let (best_nu, best_f) = (0..10_000)
            .map(|i| lo + step * i as f64)
            .map(|v| (v, f(v)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let gap = f(nu) - best_f;
        worst_gap = worst_gap.max(gap);
        if gap > 1e-12 * (1.0 + best_f.abs()) || (nu - best_nu).abs() > step {
            failures += 1;
        }
    }
    Outcome {
        pass: failures == 0,
        detail: format!(
            "{failures} of 100 instances beaten by the 1e4-point grid; worst f(nu) - min grid f = {worst_gap:.2e}"
        ),
    }
}

fn testbed(task: Task, rho: f64, repeats: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::gaussian_testbed(task, rho);
    cfg.solver.steps = 50;
    cfg.repeats = repeats;
    cfg.save_tensors = false;
    cfg
}

fn mse_of(rows: &[ResultRow], method: Method) -> Vec<f64> {
    rows.iter()
        .filter(|r| r.method == method)
        .map(|r| r.mse.unwrap_or(f64::NAN))
        .collect()
}

fn inpainting_testbed(rho: f64) -> ExperimentConfig {
    let mut cfg = testbed(Task::Inpainting, rho, 20);
    cfg.operator = Some(OperatorConfig::Inpainting { mask_ratio: 0.7 });
    cfg.methods = vec![Method::RobustCg, Method::L2Cg];
    cfg
}

fn robustness_ordering() -> Outcome {
    let rows = execute(&inpainting_testbed(0.10)).unwrap();
    let (rob, l2) = (mse_of(&rows, Method::RobustCg), mse_of(&rows, Method::L2Cg));
    let wins = rob.iter().zip(&l2).filter(|(r, l)| r < l).count();
    let mut ratios: Vec<f64> = rob.iter().zip(&l2).map(|(r, l)| r / l).collect();
    let med = median(&mut ratios).unwrap_or(f64::NAN);
    Outcome {
        pass: wins >= 16 && med <= 0.8,
        detail: format!(
            "robust lower in {wins}/20 seeds (need >= 16), median ratio {med:.3} (limit 0.8)"
        ),
    }
}

fn graceful_degradation() -> Outcome {
    let low = execute(&inpainting_testbed(0.02)).unwrap();
    let high = execute(&inpainting_testbed(0.10)).unwrap();
    let inflation = |m: Method| {
        let mut v: Vec<f64> = mse_of(&high, m)
            .iter()
            .zip(mse_of(&low, m))
            .map(|(h, l)| h / l)
            .collect();
        median(&mut v).unwrap_or(f64::NAN)
    };
    let (rob, l2) = (inflation(Method::RobustCg), inflation(Method::L2Cg));
    Outcome {
        pass: rob < l2,
        detail: format!("median MSE inflation 0.02 -> 0.10: robust {rob:.3}, l2 {l2:.3}"),
    }
}

fn delta_insensitivity() -> Outcome {
    let mut medians = Vec::new();
    for delta in [0.005, 0.01, 0.02, 0.04] {
        let mut cfg = testbed(Task::GaussianDeblur, 0.10, 10);
        cfg.methods = vec![Method::RobustCg];
        cfg.solver.delta = Some(delta);
        let rows = execute(&cfg).unwrap();
        medians.push(median(&mut mse_of(&rows, Method::RobustCg)).unwrap_or(f64::NAN));
    }
    let max = medians.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = medians.iter().cloned().fold(f64::INFINITY, f64::min);
    let ratio = max / min;
    Outcome {
        pass: ratio <= 1.5,
        detail: format!(
            "median MSE per delta {:?}, max/min {ratio:.3} (limit 1.5)",
            medians
                .iter()
                .map(|m| format!("{m:.4}"))
                .collect::<Vec<_>>()
        ),
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::gaussian_testbed(Task::GaussianDeblur, 0.10);
    cfg.solver.steps = 20;
    cfg.repeats = 3;
    cfg.methods = vec![Method::RobustCg, Method::L2Cg, Method::RobustGd];
    let path = dir.path().join("det.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        let status = Command::new(env!("CARGO_BIN_EXE_rds"))
            .arg("run")
            .arg(&path)
            .arg("--output-dir")
            .arg(&out)
            .env_remove("RDS_SEED")
            .output()
            .unwrap();
        assert!(
            status.status.success(),
            "{}",
            String::from_utf8_lossy(&status.stderr)
        );
        outputs.push(fs::read(out.join("results.csv")).unwrap());
    }
    let same = outputs[0] == outputs[1];
    Outcome {
        pass: same && !outputs[0].is_empty(),
        detail: format!(
            "two runs {} ({} bytes)",
            if same { "byte-identical" } else { "differ" },
            outputs[0].len()
        ),
    }
}

fn corruption_statistics() -> Outcome {
    let m = 100_000;
    let y = Tensor::from_fn(&[m], |i| ((i % 17) as f64 - 8.0) / 10.0);
    let mut parts = Vec::new();
    let mut pass = true;
    for (rho, seed) in [(0.02, 11), (0.10, 12)] {
        let spec = CorruptionSpec {
            sigma: 0.05,
            rho,
            xi: -1.0,
            seed,
        };
        let (out, mask) = corrupt_measurement(&y, &spec).unwrap();
        let hits = mask.iter().filter(|&&b| b).count();
        let frac = hits as f64 / m as f64;
        let band = 3.0 * (rho * (1.0 - rho) / m as f64).sqrt();
        let exact = out
            .as_slice()
            .iter()
            .zip(&mask)
            .all(|(&v, &b)| !b || v == -1.0);
        pass &= (frac - rho).abs() <= band && exact;
        parts.push(format!(
            "rho {rho}: fraction {frac:.5} (band +/-{band:.5}), outliers exact: {exact}"
        ));
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (
            "gradient identity",
            gradient_identity,
            Duration::from_secs(5),
        ),
        (
            "line-search exactness",
            line_search_exactness,
            Duration::from_secs(2),
        ),
        (
            "CG finite termination",
            cg_finite_termination,
            Duration::from_secs(2),
        ),
        ("finite-difference JVP", fd_jvp, Duration::from_secs(5)),
        (
            "refinement optimality",
            refinement_optimality,
            Duration::from_secs(5),
        ),
        (
            "robustness ordering",
            robustness_ordering,
            Duration::from_secs(600),
        ),
        (
            "graceful degradation",
            graceful_degradation,
            Duration::from_secs(900),
        ),
        (
            "delta insensitivity",
            delta_insensitivity,
            Duration::from_secs(600),
        ),
        ("determinism", determinism, Duration::from_secs(60)),
        (
            "corruption statistics",
            corruption_statistics,
            Duration::from_secs(1),
        ),
    ];
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = run();
        let took = start.elapsed();
        let ok = out.pass && took <= *limit;
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {name}: {} [{:.2}s, limit {}s]",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64(),
            limit.as_secs()
        );
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
