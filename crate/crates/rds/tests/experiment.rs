use rds::config::{ExperimentConfig, Method, OperatorConfig, Task};
use rds::harness::{execute, median, run_experiment, RESULTS_FILE};
use rds::io::save_tensor;
use rds_core::Tensor;

fn small(task: Task, rho: f64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::gaussian_testbed(task, rho);
    cfg.solver.steps = 20;
    cfg.save_tensors = false;
    cfg
}

#[test]
fn noiseless_identity_recovery_exceeds_40_db() {
    let mut cfg = ExperimentConfig::gaussian_testbed(Task::Inpainting, 0.0);
    cfg.corruption.sigma = 0.0;
    cfg.operator = Some(OperatorConfig::Inpainting { mask_ratio: 0.0 });
    cfg.methods = vec![Method::L2Cg];
    cfg.save_tensors = false;
    let rows = execute(&cfg).unwrap();
    assert_eq!(rows.len(), 1);
    let psnr = rows[0].psnr.unwrap();
    assert!(psnr >= 40.0, "{psnr}");
}

#[test]
fn rows_follow_config_order() {
    let mut cfg = small(Task::SuperResolution, 0.1);
    cfg.repeats = 3;
    cfg.seed = 40;
    cfg.methods = vec![Method::L2Cg, Method::RobustCg];
    let rows = execute(&cfg).unwrap();
    let got: Vec<(u64, Method)> = rows.iter().map(|r| (r.seed, r.method)).collect();
    assert_eq!(
        got,
        vec![
            (40, Method::L2Cg),
            (40, Method::RobustCg),
            (41, Method::L2Cg),
            (41, Method::RobustCg),
            (42, Method::L2Cg),
            (42, Method::RobustCg),
        ]
    );
    assert!(rows
        .iter()
        .all(|r| r.task == "super_resolution" && r.error.is_none()));
    assert!(rows
        .iter()
        .all(|r| r.ssim.is_some() && r.mse.unwrap().is_finite()));
}

#[test]
fn thread_count_does_not_change_results() {
    let mut cfg = small(Task::MotionDeblur, 0.1);
    cfg.repeats = 4;
    cfg.threads = Some(1);
    let one = execute(&cfg).unwrap();
    cfg.threads = Some(3);
    assert_eq!(one, execute(&cfg).unwrap());
}

#[test]
fn every_task_runs() {
    for task in [
        Task::SuperResolution,
        Task::Inpainting,
        Task::GaussianDeblur,
        Task::MotionDeblur,
        Task::NonlinearDeblur,
    ] {
        let mut cfg = small(task, 0.1);
        cfg.solver.steps = 5;
        cfg.methods = vec![
            Method::RobustGd,
            Method::RobustCg,
            Method::L2Gd,
            Method::L2Cg,
        ];
        let rows = execute(&cfg).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.error.is_none()), "{task:?}: {rows:?}");
    }
}

#[test]
fn robust_cg_beats_l2_at_ten_percent_outliers() {
    let mut cfg = ExperimentConfig::gaussian_testbed(Task::Inpainting, 0.10);
    cfg.solver.steps = 50;
    cfg.repeats = 20;
    cfg.save_tensors = false;
    let rows = execute(&cfg).unwrap();
    let mut rob: Vec<f64> = rows
        .iter()
        .filter(|r| r.method == Method::RobustCg)
        .map(|r| r.mse.unwrap())
        .collect();
    let mut l2: Vec<f64> = rows
        .iter()
        .filter(|r| r.method == Method::L2Cg)
        .map(|r| r.mse.unwrap())
        .collect();
    assert!(median(&mut rob).unwrap() < median(&mut l2).unwrap());
}

#[test]
fn fixed_truth_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let truth_path = dir.path().join("truth.rtn");
    let truth = Tensor::from_fn(&[16, 16], |i| ((i % 16) as f64 / 8.0 - 1.0) * 0.5);
    save_tensor(&truth_path, &truth, "test").unwrap();

    let mut cfg = small(Task::GaussianDeblur, 0.05);
    cfg.shape = vec![16, 16];
    cfg.truth = Some(truth_path);
    cfg.repeats = 2;
    cfg.methods = vec![Method::RobustCg];
    cfg.output_dir = dir.path().join("out");
    cfg.save_tensors = true;
    cfg.pgm_previews = true;
    let rows = run_experiment(&cfg).unwrap();
    assert_eq!(rows.len(), 2);
    let t = cfg.output_dir.join("tensors");
    for name in [
        "seed0_truth.rtn",
        "seed1_y.rtn",
        "seed1_robust_cg.rtn",
        "seed0_robust_cg.pgm",
    ] {
        assert!(t.join(name).exists(), "{name}");
    }
    assert_eq!(
        rds::io::load_tensor(&t.join("seed1_truth.rtn")).unwrap(),
        truth
    );
    let csv = std::fs::read_to_string(cfg.output_dir.join(RESULTS_FILE)).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "task,method,rho,sigma,seed,psnr,ssim,mse,wall_s"
    );
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn invalid_mask_ratio_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.json");
    std::fs::write(
        &p,
        r#"{"task": "inpainting", "operator": {"kind": "inpainting", "mask_ratio": 1.2},
            "corruption": {"sigma": 0.05, "rho": 0.1},
            "prior": {"kind": "gaussian", "mean": 0.0, "var": 0.04}}"#,
    )
    .unwrap();
    let err = ExperimentConfig::from_path(&p).unwrap_err().to_string();
    assert!(err.contains("operator.mask_ratio"), "{err}");
}
