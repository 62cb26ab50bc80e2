use std::cell::RefCell;
use std::f64::consts::PI;

use crabctl_core::dynamics::{ConstantDrive, IntegratorSettings};
use crabctl_core::interferometer::{fringe_metrics, ramsey_scan, tau_grid, RamseyOptions};
use crabctl_core::optimizer::{
    constant_pulse_error, optimize_preparation, subplex_minimize, sweep_pulse_length, OptimizationRecord,
    PreparationOptions, SubplexOptions, Termination,
};
use crabctl_core::spin_system::DIM;
use crabctl_core::{builtin_target, khz, SystemParams};

fn rosenbrock(x: &[f64]) -> f64 {
    x.windows(2).map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2)).sum()
}

#[test]
fn rosenbrock_in_four_dimensions() {
    let opts = SubplexOptions { max_evals: 40_000, restarts: 1, simplex_scale: 0.5, xtol: 1e-14, ..Default::default() };
    let r = subplex_minimize(rosenbrock, &[-1.2, 1.0, -1.2, 1.0], &opts);
    assert!(r.best_value < 1e-8, "{r:?}");
}

#[test]
fn ill_conditioned_quadratic() {
    let f = |x: &[f64]| x.iter().enumerate().map(|(i, v)| 10f64.powi(i as i32 % 4) * (v - 0.5).powi(2)).sum::<f64>();
    let opts = SubplexOptions { max_evals: 20_000, restarts: 1, simplex_scale: 0.3, xtol: 1e-14, ..Default::default() };
    let r = subplex_minimize(f, &[0.0; 12], &opts);
    assert!(r.best_value < 1e-10, "{}", r.best_value);
}

#[test]
fn evaluation_sequence_is_reproducible() {
    let run = |seed: u64| {
        let seen = RefCell::new(Vec::new());
        let f = |x: &[f64]| {
            seen.borrow_mut().push(x.to_vec());
            rosenbrock(x) + x.iter().map(|v| (5.0 * v).sin()).sum::<f64>()
        };
        let opts = SubplexOptions { max_evals: 500, restarts: 4, rng_seed: seed, ..Default::default() };
        let r = subplex_minimize(f, &[0.1; 7], &opts);
        (r, seen.into_inner())
    };
    let (a, sa) = run(9);
    let (b, sb) = run(9);
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    assert_eq!(sa.len(), 2000);
    let (c, _) = run(10);
    assert_ne!(a.starts[1].x0, c.starts[1].x0);
    assert!(a.starts.iter().all(|s| s.termination == Termination::Budget || s.termination == Termination::Converged));
}

fn small_options(seed: u64) -> PreparationOptions {
    let mut opts = PreparationOptions { n_f: 3, ..Default::default() };
    opts.solver.max_evals = 60;
    opts.solver.restarts = 2;
    opts.solver.rng_seed = seed;
    opts.integrator = IntegratorSettings::default().with_step(1e-8);
    opts
}

#[test]
fn preparation_is_deterministic_and_revalidates() {
    let target = builtin_target("D").unwrap();
    let system = SystemParams::reference();
    let a = optimize_preparation(&target, 10e-6, &system, &small_options(3)).unwrap();
    let b = optimize_preparation(&target, 10e-6, &system, &small_options(3)).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert!(a.eval_count <= 120);
    assert!(a.revalidate().unwrap() < 1e-12);
    let back = OptimizationRecord::from_json(&a.to_json()).unwrap();
    assert!((back.best_pulse.duration - a.best_pulse.duration).abs() < 1e-15 * a.best_pulse.duration);
    assert_eq!(back.best_pulse.coefficients, a.best_pulse.coefficients);
    assert!(a.best_error <= a.history.first().unwrap().1 + 1e-15);
}

#[test]
fn warm_started_sweep_keeps_pulse_lengths_and_improves() {
    let target = builtin_target("A").unwrap();
    let system = SystemParams::reference();
    let durations = [5e-6, 10e-6];
    let points = sweep_pulse_length(&target, &durations, &system, &small_options(1), true, None).unwrap();
    assert_eq!(points.len(), 2);
    for (p, t) in points.iter().zip(durations) {
        assert!((p.duration_us - t * 1e6).abs() < 1e-9);
        assert!((p.record.best_pulse.duration - t).abs() < 1e-15);
        assert!(p.envelope.is_none());
    }
    assert!(sweep_pulse_length(&target, &[10e-6, 5e-6], &system, &small_options(1), true, None).is_err());
}

#[test]
fn constant_baseline_is_finite_and_starts_at_initial_error() {
    let target = builtin_target("A").unwrap();
    let grid: Vec<f64> = (0..=4).map(|j| j as f64 * 1e-6).collect();
    let rows = constant_pulse_error(&target, khz(4323.0), &grid, &SystemParams::reference(), &IntegratorSettings::default()).unwrap();
    assert_eq!(rows.len(), 5);
    assert!((rows[0].1 - 0.5).abs() < 1e-12);
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.1)));
}

#[test]
fn ramsey_fringe_of_detuned_drive_shows_level_gaps() {
    let system = SystemParams::reference();
    let drive = ConstantDrive(khz(4323.0));
    let taus = tau_grid(2e-9, 1001);
    let series = ramsey_scan(&drive, 5e-6, &system, &taus, &RamseyOptions::default()).unwrap();
    for p in &series.populations {
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let m = fringe_metrics(&series).unwrap();
    let gap = m.dominant_gap.unwrap();
    let res = m.frequency_resolution.unwrap();
    // any fringe must sit at a multiple of one of the neighbour gaps (≈ 4.3 MHz)
    let w = system.level_energies;
    let candidates: Vec<f64> = (0..DIM).flat_map(|i| (0..DIM).map(move |j| (w[i] - w[j]).abs())).filter(|g| *g > 0.0).collect();
    assert!(candidates.iter().any(|c| (c - gap).abs() <= res), "{gap} not among {candidates:?}");
}

#[test]
fn dephasing_during_free_evolution_damps_the_fringe() {
    let drive = ConstantDrive(khz(4323.0));
    let taus: Vec<f64> = (0..400).map(|j| 1e-3 + j as f64 * 2e-9).collect();
    let run = |gamma_hz: f64| {
        let system = SystemParams::reference().with_dephasing(2.0 * PI * gamma_hz).unwrap();
        let series = ramsey_scan(&drive, 5e-6, &system, &taus, &RamseyOptions::default()).unwrap();
        fringe_metrics(&series).unwrap().amplitude
    };
    let clean = run(0.0);
    let damped = run(200.0);
    assert!(damped < clean * 0.9, "{damped} vs {clean}");
    let no_free = {
        let system = SystemParams::reference().with_dephasing(2.0 * PI * 200.0).unwrap();
        let opts = RamseyOptions { free_dephasing: false, ..RamseyOptions::default() };
        fringe_metrics(&ramsey_scan(&drive, 5e-6, &system, &taus, &opts).unwrap()).unwrap().amplitude
    };
    assert!(no_free > damped);
}
