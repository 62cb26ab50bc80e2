use std::f64::consts::PI;

use approx::assert_relative_eq;
use crabctl_core::dynamics::{
    evolve, expm_propagator, propagate, propagate_final, propagate_free, propagator, ConstantDrive, Drive,
    FnDrive, IntegratorSettings, Method, Superoperator,
};
use crabctl_core::spin_system::{breit_rabi_energies, eigenstate_target, rb87, DIM, M_F};
use crabctl_core::{khz, to_khz, DensityMatrix, Eigenstate, SystemParams};
use nalgebra::{DMatrix, Vector5};
use num_complex::Complex64 as C64;

/// F = 2 energies (Hz) from diagonalising the full 8×8 hyperfine + Zeeman
/// Hamiltonian in the |m_J, m_I⟩ basis.
fn f2_levels_by_diagonalisation(b_gauss: f64) -> [f64; DIM] {
    use rb87::*;
    let b = b_gauss * 1e-4;
    let a_hfs = HYPERFINE_SPLITTING_HZ / (NUCLEAR_SPIN + 0.5);
    let mu = BOHR_MAGNETON * b / PLANCK;
    let m_j = [0.5, -0.5];
    let m_i = [1.5, 0.5, -0.5, -1.5];
    let states: Vec<(f64, f64)> = m_j.iter().flat_map(|&j| m_i.iter().map(move |&i| (j, i))).collect();
    let ladder = |s: f64, m: f64, up: bool| {
        let mm = if up { m + 1.0 } else { m - 1.0 };
        if mm.abs() > s {
            0.0
        } else if up {
            (s * (s + 1.0) - m * (m + 1.0)).sqrt()
        } else {
            (s * (s + 1.0) - m * (m - 1.0)).sqrt()
        }
    };
    let mut h = DMatrix::<f64>::zeros(8, 8);
    for (r, &(jr, ir)) in states.iter().enumerate() {
        for (c, &(jc, ic)) in states.iter().enumerate() {
            let mut v = 0.0;
            if r == c {
                v += a_hfs * jc * ic + mu * (G_J * jc + G_I * ic);
            }
            // ½(J₊I₋ + J₋I₊)
            if jr == jc + 1.0 && ir == ic - 1.0 {
                v += 0.5 * a_hfs * ladder(0.5, jc, true) * ladder(NUCLEAR_SPIN, ic, false);
            }
            if jr == jc - 1.0 && ir == ic + 1.0 {
                v += 0.5 * a_hfs * ladder(0.5, jc, false) * ladder(NUCLEAR_SPIN, ic, true);
            }
            h[(r, c)] = v;
        }
    }
    let eig = h.symmetric_eigen();
    let mut out = [0.0; DIM];
    for (slot, &m_f) in out.iter_mut().zip(M_F.iter()) {
        // the upper state of each m_F block belongs to F = 2
        let mut best = f64::NEG_INFINITY;
        for k in 0..8 {
            let v = eig.eigenvectors.column(k);
            let m: f64 = (0..8).map(|r| v[r] * v[r] * (states[r].0 + states[r].1)).sum();
            if (m - m_f).abs() < 1e-6 {
                best = best.max(eig.eigenvalues[k]);
            }
        }
        *slot = best;
    }
    let mid = out[2];
    out.map(|e| e - mid)
}

#[test]
fn breit_rabi_matches_full_diagonalisation() {
    for b in [0.5, 6.179, 20.0, 80.0] {
        let closed = breit_rabi_energies(b).unwrap();
        let oracle = f2_levels_by_diagonalisation(b);
        for i in 0..DIM {
            let hz = closed[i] / (2.0 * PI);
            assert!((hz - oracle[i]).abs() < 1e-3 * hz.abs().max(1.0), "B={b} level {i}: {hz} vs {}", oracle[i]);
        }
    }
}

#[test]
fn breit_rabi_reference_levels() {
    let e = breit_rabi_energies(6.179).unwrap().map(to_khz);
    let quoted = [8635.0, 4320.0, 0.0, -4326.0, -8657.0];
    for (got, want) in e.iter().zip(quoted) {
        assert!((got - want).abs() < 2.0, "{e:?}");
    }
}

#[test]
fn eigenstate_targets_are_extremal_and_stationary() {
    let system = SystemParams::reference();
    let f_bar = khz(4323.0);
    let h = *system.total_hamiltonian(f_bar).matrix();
    let energy = |rho: &DensityMatrix| (rho.matrix() * h).trace().re;
    let ground = eigenstate_target(&system, f_bar, Eigenstate::Ground).unwrap();
    let highest = eigenstate_target(&system, f_bar, Eigenstate::Highest).unwrap();
    let g = ground.full_target.unwrap();
    let top = highest.full_target.unwrap();
    assert!((g.purity() - 1.0).abs() < 1e-10);
    for rho in [&g, &top] {
        let comm = rho.matrix() * h - h * rho.matrix();
        assert!(comm.norm() < 1e-6 * h.norm());
    }
    // Rayleigh quotients of basis states and a few mixtures bound the extremes
    for k in 0..DIM {
        let e = energy(&DensityMatrix::basis(k));
        assert!(energy(&g) <= e + 1e-6 && energy(&top) >= e - 1e-6);
    }
}

#[test]
fn rk4_matches_exponential_on_piecewise_constant_drive() {
    let system = SystemParams::reference().with_dephasing(2.0 * PI * 200.0).unwrap();
    let segment = 1e-6;
    let levels = [khz(4323.0), khz(4100.0), khz(4600.0), khz(4323.0)];
    let settings = IntegratorSettings::default();
    let mut rho = DensityMatrix::basis(0);
    let mut exact = Superoperator::identity();
    for &f in &levels {
        // each segment is integrated on its own so that no step straddles a jump
        rho = propagate_final(&rho, &ConstantDrive(f), &system, segment, &settings).unwrap();
        let step = expm_propagator(&system.total_hamiltonian(f), system.dephasing_rate, segment).unwrap();
        exact = step.after(&exact);
    }
    let want = exact.apply(&DensityMatrix::basis(0));
    let diff = (rho.matrix() - want.matrix()).norm();
    assert!(diff < 1e-7, "{diff}");
}

#[test]
fn rk4_matches_exponential_on_constant_drive() {
    let system = SystemParams::reference();
    let duration = 2e-6;
    let rho0 = DensityMatrix::basis(1);
    let rk4 = propagate_final(&rho0, &ConstantDrive(khz(4323.0)), &system, duration, &IntegratorSettings::default().with_step(1e-9)).unwrap();
    let exact = expm_propagator(&system.total_hamiltonian(khz(4323.0)), 0.0, duration).unwrap().apply(&rho0);
    assert!((rk4.matrix() - exact.matrix()).norm() < 1e-8);
}

#[test]
fn exponential_method_agrees_with_rk4() {
    let system = SystemParams::reference().with_dephasing(2.0 * PI * 100.0).unwrap();
    let drive = FnDrive(|t: f64| khz(4323.0) * (1.0 + 0.03 * (2.0 * PI * t / 5e-6).sin()));
    let rho0 = DensityMatrix::basis(0);
    let base = IntegratorSettings::default().with_step(5e-10);
    let a = propagate_final(&rho0, &drive, &system, 5e-6, &base).unwrap();
    let b = propagate_final(&rho0, &drive, &system, 5e-6, &base.with_method(Method::Exponential)).unwrap();
    // the midpoint rule is only second order in the step
    assert!((a.matrix() - b.matrix()).norm() < 1e-4);
}

fn coherent_superposition() -> DensityMatrix {
    let psi = Vector5::from_fn(|i, _| C64::from_polar(1.0, 0.3 * i as f64) / (DIM as f64).sqrt());
    DensityMatrix::pure(&psi).unwrap()
}

fn assert_coherences_decay(traj_times: &[f64], states: &[DensityMatrix], rho0: &DensityMatrix, gamma: f64) {
    for (t, rho) in traj_times.iter().zip(states) {
        let decay = (-2.0 * gamma * t).exp();
        for i in 0..DIM {
            for j in 0..DIM {
                if i != j {
                    let want = rho0.matrix()[(i, j)].norm() * decay;
                    assert_relative_eq!(rho.matrix()[(i, j)].norm(), want, max_relative = 1e-8);
                }
            }
        }
    }
}

#[test]
fn pure_dephasing_decay_under_rk4() {
    let gamma = 2.0 * PI * 200.0;
    let system = SystemParams::with_level_energies([0.0; DIM], 0.0, gamma).unwrap();
    let rho0 = coherent_superposition();
    let settings = IntegratorSettings::default().with_stride(50_000);
    let traj = propagate(&rho0, &ConstantDrive(0.0), &system, 1e-3, &settings).unwrap();
    assert_eq!(traj.times.len(), 11);
    assert_coherences_decay(&traj.times, &traj.states, &rho0, gamma);
}

#[test]
fn pure_dephasing_decay_with_zeeman_ladder() {
    let gamma = 2.0 * PI * 200.0;
    let system = SystemParams::reference().with_rabi_rate(0.0).unwrap().with_dephasing(gamma).unwrap();
    let rho0 = coherent_superposition();
    let settings = IntegratorSettings::default().with_step(1e-6).with_stride(50).with_method(Method::Exponential);
    let traj = propagate(&rho0, &ConstantDrive(khz(4323.0)), &system, 1e-3, &settings).unwrap();
    assert_coherences_decay(&traj.times, &traj.states, &rho0, gamma);
    let closed = propagate_free(&rho0, &system, 1e-3).unwrap();
    let last = traj.final_state();
    for i in 0..DIM {
        for j in 0..DIM {
            assert_relative_eq!(closed.matrix()[(i, j)].norm(), last.matrix()[(i, j)].norm(), max_relative = 1e-8);
        }
    }
}

#[test]
fn free_evolution_matches_integration() {
    let system = SystemParams::reference().with_rabi_rate(0.0).unwrap().with_dephasing(2.0 * PI * 60.0).unwrap();
    let rho0 = coherent_superposition();
    let duration = 3e-6;
    let closed = propagate_free(&rho0, &system, duration).unwrap();
    let exact = IntegratorSettings::default().with_step(duration).with_method(Method::Exponential);
    let numeric = propagate_final(&rho0, &ConstantDrive(0.0), &system, duration, &exact).unwrap();
    assert!((closed.matrix() - numeric.matrix()).norm() < 1e-10);
}

#[test]
fn state_vector_path_agrees_with_density_matrix_path() {
    let system = SystemParams::reference();
    let drive = FnDrive(|t: f64| khz(4323.0) + khz(150.0) * (2.0 * PI * t / 10e-6).cos());
    let rho0 = DensityMatrix::basis(0);
    let settings = IntegratorSettings::default();
    let fast = evolve(&rho0, &drive, &system, 10e-6, &settings).unwrap();
    let slow = propagate_final(&rho0, &drive, &system, 10e-6, &settings).unwrap();
    assert!((fast.matrix() - slow.matrix()).norm() < 1e-9);
}

#[test]
fn propagator_reproduces_direct_evolution() {
    for gamma in [0.0, 2.0 * PI * 200.0] {
        let system = SystemParams::reference().with_dephasing(gamma).unwrap();
        let drive = ConstantDrive(khz(4300.0));
        let settings = IntegratorSettings::default();
        let map = propagator(&drive, &system, 3e-6, &settings).unwrap();
        let rho0 = coherent_superposition();
        let direct = propagate_final(&rho0, &drive, &system, 3e-6, &settings).unwrap();
        assert!((map.apply(&rho0).matrix() - direct.matrix()).norm() < 1e-8);
    }
}

#[test]
fn far_detuned_drive_leaves_initial_state_nearly_unchanged() {
    let system = SystemParams::reference();
    let rho0 = DensityMatrix::basis(0);
    let rho = evolve(&rho0, &ConstantDrive(khz(6000.0)), &system, 100e-6, &IntegratorSettings::default()).unwrap();
    assert!(rho.populations()[0] > 0.95, "{:?}", rho.populations());
}

#[test]
fn resonant_two_level_rabi_flop() {
    // a single coupled pair with equal energies behaves as a two-level system
    let system = SystemParams::with_level_energies([0.0; DIM], khz(10.0), 0.0).unwrap();
    let drive = ConstantDrive(0.0);
    // without detuning the stretched pair still couples to the ladder, so check
    // only the short-time quadratic onset |c₂|² ≈ (Ωt)²
    let t = 0.2e-6;
    let rho = evolve(&DensityMatrix::basis(0), &drive, &system, t, &IntegratorSettings::default().with_step(1e-10)).unwrap();
    let expected = (khz(10.0) * t).powi(2);
    assert_relative_eq!(rho.populations()[1], expected, max_relative = 0.01);
}

#[test]
fn drive_sampling_matches_values() {
    let drive = FnDrive(|t: f64| t * t);
    let mut out = Vec::new();
    drive.sample(1.0, 0.5, 3, &mut out);
    assert_eq!(out, vec![1.0, 2.25, 4.0]);
}
