//! End-to-end runs on a deliberately small network.

use ptl_core::analytic::LinearOscillator;
use ptl_core::checkpoint::Checkpoint;
use ptl_core::experiments::{
    emit_plot_data, run_comparison, run_p_sweep, solve_instance, ExperimentConfig, Provenance, RunConfig, Table,
    Workspace, COMPARISON_COLUMNS,
};
use ptl_core::oracle::IntegratorConfig;
use ptl_core::training::{train_duffing_class, TrainConfig};
use ptl_core::transfer::{duffing_residual_from_samples, factorization_count, solve_cascade, SolutionSamples};

fn small_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        heads: 3,
        iterations: 400,
        lr0: 2e-3,
        collocation_n: 60,
        layer_widths: vec![24, 24, 2 * 12],
        hidden_columns: 12,
        seed,
        log_every: 0,
        ..Default::default()
    }
}

fn small_experiment() -> ExperimentConfig {
    ExperimentConfig {
        p_values: vec![0, 1, 2, 4],
        instance_count: 3,
        sweep_instances: 3,
        comparison_p: 4,
        transfer_points: 120,
        eval_points: 101,
        integrator: IntegratorConfig {
            rel_tol: 1e-9,
            abs_tol: 1e-11,
            max_steps: 50_000,
        },
        ..Default::default()
    }
}

fn trained(seed: u64) -> Checkpoint {
    let config = small_train_config(seed);
    let (sets, outcome) = train_duffing_class(&config).unwrap();
    Checkpoint::new(config, sets, &outcome)
}

#[test]
fn training_is_reproducible_and_checkpoint_reloads() {
    let a = trained(3);
    let b = trained(3);
    assert_eq!(a, b);
    assert_eq!(a.hash().unwrap(), b.hash().unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    a.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, a);
    // the frozen trunk cache is bitwise the direct forward pass
    let trunk = back.frozen_trunk(50).unwrap();
    let direct = trunk.evaluate(&trunk.grid).unwrap();
    assert_eq!(direct, trunk.cache);
}

#[test]
fn sweep_and_comparison_are_deterministic() {
    let ckpt = trained(5);
    let cfg = small_experiment();
    let ws = Workspace::new(&ckpt, &cfg).unwrap();
    let s1 = run_p_sweep(&ws, &cfg).unwrap().table();
    let s2 = run_p_sweep(&ws, &cfg).unwrap().table();
    assert_eq!(s1, s2);

    let strip_time = |t: Table| {
        let col = t.column("solve_seconds").unwrap();
        t.rows.into_iter().map(|mut r| {
            r.remove(col);
            r
        }).collect::<Vec<_>>()
    };
    let c1 = run_comparison(&ws, &cfg).unwrap();
    let c2 = run_comparison(&ws, &cfg).unwrap();
    assert_eq!(c1.metrics_table().header, COMPARISON_COLUMNS);
    assert_eq!(strip_time(c1.metrics_table()), strip_time(c2.metrics_table()));
    assert_eq!(c1.trajectory_table(), c2.trajectory_table());
    assert_eq!(c1.rows.len(), 3);
}

#[test]
fn p0_sweep_entry_is_the_linear_approximation() {
    let ckpt = trained(7);
    let cfg = small_experiment();
    let ws = Workspace::new(&ckpt, &cfg).unwrap();
    let sweep = run_p_sweep(&ws, &cfg).unwrap();
    let params = sweep.instances[0];
    // p = 0 solves the linear part with the full boundary value
    let linear = ws.solve(&params.linear_part(), 0).unwrap();
    let expected = ws.residual_loss(&linear, &params).log10();
    assert!((sweep.log10_loss[0][0] - expected).abs() < 1e-12);
}

#[test]
fn one_factorization_per_equation() {
    let ckpt = trained(9);
    let trunk = ckpt.frozen_trunk(80).unwrap();
    let cfg = small_experiment();
    for params in cfg.instances(3) {
        let ode = params.to_ode().unwrap();
        let before = factorization_count();
        let sol = solve_cascade(&ode, 6, &trunk).unwrap();
        // tests in this binary run in parallel; the counter is process-wide
        assert!(factorization_count() > before);
        assert_eq!(sol.weights.len(), 7);
    }
}

#[test]
fn transfer_recovers_linear_instance() {
    let ckpt = trained(11);
    let cfg = small_experiment();
    let ws = Workspace::new(&ckpt, &cfg).unwrap();
    let mut params = cfg.instances(1)[0];
    params.beta = 0.0;
    let report = solve_instance(&ws, &params, 0, true, &cfg.integrator).unwrap();
    let osc = LinearOscillator::new(params.delta, params.alpha, params.gamma, params.omega, params.x0, 0.0);
    let exact: Vec<f64> = report.t.iter().map(|&t| osc.x(t)).collect();
    let oracle = report.x_oracle.as_ref().unwrap();
    let oracle_err = exact.iter().zip(oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(oracle_err < 1e-7);
    // small network: loose bound; the full configuration is checked in the acceptance suite
    let num: f64 = exact.iter().zip(&report.x_tl).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = exact.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(num / den < 0.2, "{}", num / den);
    assert_eq!(report.table().header, ["t", "x_TL", "x_oracle", "residual"]);
}

#[test]
fn residual_loss_is_zero_for_exact_samples() {
    // independent of any network: analytic solution of the linear equation
    let params = ptl_core::ode::DuffingParams {
        delta: 1.1,
        alpha: 2.0,
        beta: 0.0,
        gamma: 0.7,
        omega: 2.4,
        x0: 0.9,
    };
    let osc = LinearOscillator::new(1.1, 2.0, 0.7, 2.4, 0.9, 0.0);
    let t: Vec<f64> = (0..=200).map(|i| i as f64 * 0.025).collect();
    let s = SolutionSamples {
        x: t.iter().map(|&s| osc.x(s)).collect(),
        x_dot: t.iter().map(|&s| osc.xdot(s)).collect(),
        v: t.iter().map(|&s| osc.xdot(s)).collect(),
        v_dot: t.iter().map(|&s| osc.xddot(s)).collect(),
        t,
    };
    assert!(duffing_residual_from_samples(&params, &s, [0.9, 0.0]) < 1e-20);
}

#[test]
fn plot_data_from_written_csvs() {
    let ckpt = trained(13);
    let cfg = small_experiment();
    let ws = Workspace::new(&ckpt, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let run = RunConfig {
        train: ckpt.config.clone(),
        experiment: cfg.clone(),
    };
    let prov = Provenance {
        config: run.hash().unwrap(),
        checkpoint: ckpt.hash().unwrap(),
    };
    let sweep_path = dir.path().join("sweep.csv");
    let traj_path = dir.path().join("trajectories.csv");
    run_p_sweep(&ws, &cfg).unwrap().table().write(&sweep_path, &prov).unwrap();
    run_comparison(&ws, &cfg).unwrap().trajectory_table().write(&traj_path, &prov).unwrap();
    let out = emit_plot_data(&sweep_path, &traj_path, dir.path(), true).unwrap();
    let (table, p) = Table::read(&out.data).unwrap();
    assert_eq!(p, Some(prov));
    assert_eq!(table.header, ["figure", "series", "x", "y"]);
    // 3 instances + median, 4 p values; 3 trajectory pairs of 101 points
    assert_eq!(table.rows.len(), 4 * 4 + 3 * 2 * 101);
    assert_eq!(out.svgs.len(), 2);
    for svg in &out.svgs {
        let text = std::fs::read_to_string(svg).unwrap();
        assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"));
    }
}
