//! Time evolution under dρ/dt = −i[H₀ + H₁ + V(t), ρ] + L(ρ).
//!
//! The workhorse is a fixed-step classical Runge-Kutta scheme specialised to
//! the tridiagonal structure of the Hamiltonian. A dense Liouvillian
//! exponential is provided for constant drives and as a cross-check.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix5, Vector5};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pulse::CrabPulse;
use crate::spin_system::{DensityMatrix, HamiltonianTerm, StateTolerance, SystemParams, DIM};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// A real, time-dependent drive frequency f(t) in rad/s.
pub trait Drive: Sync {
    fn value(&self, t: f64) -> f64;

    /// Values on t0, t0 + dt, …, t0 + (count − 1)·dt.
    fn sample(&self, t0: f64, dt: f64, count: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..count).map(|j| self.value(t0 + j as f64 * dt)));
    }
}

impl Drive for CrabPulse {
    fn value(&self, t: f64) -> f64 {
        self.f_unchecked(t)
    }

    fn sample(&self, t0: f64, dt: f64, count: usize, out: &mut Vec<f64>) {
        self.sample_f(t0, dt, count, out)
    }
}

impl<D: Drive + ?Sized> Drive for &D {
    fn value(&self, t: f64) -> f64 {
        (**self).value(t)
    }

    fn sample(&self, t0: f64, dt: f64, count: usize, out: &mut Vec<f64>) {
        (**self).sample(t0, dt, count, out)
    }
}

/// f(t) = const.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantDrive(pub f64);

impl Drive for ConstantDrive {
    fn value(&self, _t: f64) -> f64 {
        self.0
    }

    fn sample(&self, _t0: f64, _dt: f64, count: usize, out: &mut Vec<f64>) {
        out.clear();
        out.resize(count, self.0);
    }
}

/// Adapts a closure to [`Drive`].
pub struct FnDrive<F>(pub F);

impl<F: Fn(f64) -> f64 + Sync> Drive for FnDrive<F> {
    fn value(&self, t: f64) -> f64 {
        (self.0)(t)
    }
}

/// A CRAB pulse followed by a constant drive for t > T.
#[derive(Debug, Clone)]
pub struct PulseThenHold {
    pub pulse: CrabPulse,
    pub hold: f64,
}

impl Drive for PulseThenHold {
    fn value(&self, t: f64) -> f64 {
        if t <= self.pulse.duration {
            self.pulse.f_unchecked(t)
        } else {
            self.hold
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Classical fixed-step 4th-order Runge-Kutta.
    Rk4,
    /// Exact Liouvillian exponential per step with f frozen at the step midpoint.
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSettings {
    /// s
    pub step_size: f64,
    pub sample_stride: usize,
    pub method: Method,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            step_size: 2e-9,
            sample_stride: 50,
            method: Method::Rk4,
        }
    }
}

impl IntegratorSettings {
    pub fn with_step(mut self, step_size: f64) -> Self {
        self.step_size = step_size;
        self
    }

    pub fn with_stride(mut self, sample_stride: usize) -> Self {
        self.sample_stride = sample_stride;
        self
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Domain {
                quantity: "step size (s)",
                value: self.step_size,
                domain: "(0, ∞)".into(),
            });
        }
        if self.sample_stride == 0 {
            return Err(Error::Domain {
                quantity: "sample stride",
                value: 0.0,
                domain: "[1, ∞)".into(),
            });
        }
        Ok(())
    }

    /// Number of steps and the adjusted step that exactly spans `duration`.
    fn grid(&self, duration: f64) -> (usize, f64) {
        if duration <= 0.0 {
            return (0, 0.0);
        }
        let n = ((duration / self.step_size) - 1e-9).ceil().max(1.0) as usize;
        (n, duration / n as f64)
    }
}

/// Sampled solution of the master equation.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// s
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    pub populations: Vec<[f64; DIM]>,
}

impl Trajectory {
    fn with_capacity(n: usize) -> Self {
        Self {
            times: Vec::with_capacity(n),
            states: Vec::with_capacity(n),
            populations: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, t: f64, state: DensityMatrix) {
        self.times.push(t);
        self.populations.push(state.populations());
        self.states.push(state);
    }

    pub fn final_state(&self) -> &DensityMatrix {
        self.states.last().expect("trajectory holds the initial state")
    }

    /// CSV with columns t_us, p1..p5 and, optionally, Re/Im of the ten
    /// upper-triangle coherences.
    pub fn write_csv<W: Write>(&self, writer: W, with_coherences: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = vec!["t_us".into()];
        header.extend((1..=DIM).map(|i| format!("p{i}")));
        if with_coherences {
            for i in 0..DIM {
                for j in i + 1..DIM {
                    header.push(format!("re_rho{}{}", i + 1, j + 1));
                    header.push(format!("im_rho{}{}", i + 1, j + 1));
                }
            }
        }
        w.write_record(&header)?;
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![format!("{:.16e}", t * 1e6)];
            row.extend(self.populations[k].iter().map(|p| format!("{p:.16e}")));
            if with_coherences {
                let m = self.states[k].matrix();
                for i in 0..DIM {
                    for j in i + 1..DIM {
                        row.push(format!("{:.16e}", m[(i, j)].re));
                        row.push(format!("{:.16e}", m[(i, j)].im));
                    }
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// −i[H, ρ] + Σ_j γ(−{|j⟩⟨j|, ρ} + 2|j⟩⟨j|ρ|j⟩⟨j|) for a general Hermitian `H`.
pub fn lindblad_rhs(state: &Matrix5<C64>, hamiltonian: &HamiltonianTerm, gamma: f64) -> Matrix5<C64> {
    let h = hamiltonian.matrix();
    let mut out = (h * state - state * h) * C64::new(0.0, -1.0);
    for j in 0..DIM {
        let mut proj = Matrix5::<C64>::zeros();
        proj[(j, j)] = C64::new(1.0, 0.0);
        let anti = proj * state + state * proj;
        let sandwich = proj * state * proj;
        out += (sandwich * C64::new(2.0, 0.0) - anti) * C64::new(gamma, 0.0);
    }
    out
}

type Flat = [C64; DIM * DIM];

#[inline(always)]
fn idx(i: usize, j: usize) -> usize {
    i * DIM + j
}

fn to_flat(m: &Matrix5<C64>) -> Flat {
    std::array::from_fn(|k| m[(k / DIM, k % DIM)])
}

fn from_flat(f: &Flat) -> Matrix5<C64> {
    Matrix5::from_fn(|i, j| f[idx(i, j)])
}

/// Master-equation right-hand side for H = diag(d) + tridiag(c) and equal dephasing rates.
#[inline(always)]
fn rhs_tridiagonal(d: &[f64; DIM], c: &[f64; DIM - 1], gamma: f64, rho: &Flat, out: &mut Flat) {
    let mut hr = [ZERO; DIM * DIM];
    for i in 0..DIM {
        for j in 0..DIM {
            let mut acc = rho[idx(i, j)] * d[i];
            if i > 0 {
                acc += rho[idx(i - 1, j)] * c[i - 1];
            }
            if i + 1 < DIM {
                acc += rho[idx(i + 1, j)] * c[i];
            }
            hr[idx(i, j)] = acc;
        }
    }
    // ρH = (Hρ)† for Hermitian ρ, but the map is also applied to non-Hermitian
    // basis matrices when building propagators, so ρH is formed explicitly.
    for i in 0..DIM {
        for j in 0..DIM {
            let mut rh = rho[idx(i, j)] * d[j];
            if j > 0 {
                rh += rho[idx(i, j - 1)] * c[j - 1];
            }
            if j + 1 < DIM {
                rh += rho[idx(i, j + 1)] * c[j];
            }
            let comm = hr[idx(i, j)] - rh;
            let mut v = C64::new(comm.im, -comm.re);
            if i != j {
                v -= rho[idx(i, j)] * (2.0 * gamma);
            }
            out[idx(i, j)] = v;
        }
    }
}

#[inline(always)]
fn axpy(y: &Flat, a: f64, x: &Flat) -> Flat {
    std::array::from_fn(|k| y[k] + x[k] * a)
}

/// Runs RK4 for `n_steps` of size `h` from time `t0`; `f_half` holds the
/// drive on the half-step grid (2·n_steps + 1 values). `observe` is called
/// after every step with (step index, state).
fn rk4_density<O>(
    rho0: Flat,
    system: &SystemParams,
    f_half: &[f64],
    h: f64,
    n_steps: usize,
    mut observe: O,
) -> Result<Flat>
where
    O: FnMut(usize, &Flat) -> Result<()>,
{
    let c = system.couplings();
    let gamma = system.dephasing_rate;
    let mut rho = rho0;
    let (mut k1, mut k2, mut k3, mut k4) = ([ZERO; 25], [ZERO; 25], [ZERO; 25], [ZERO; 25]);
    for step in 0..n_steps {
        let d0 = system.diagonal(f_half[2 * step]);
        let dm = system.diagonal(f_half[2 * step + 1]);
        let d1 = system.diagonal(f_half[2 * step + 2]);
        rhs_tridiagonal(&d0, &c, gamma, &rho, &mut k1);
        rhs_tridiagonal(&dm, &c, gamma, &axpy(&rho, 0.5 * h, &k1), &mut k2);
        rhs_tridiagonal(&dm, &c, gamma, &axpy(&rho, 0.5 * h, &k2), &mut k3);
        rhs_tridiagonal(&d1, &c, gamma, &axpy(&rho, h, &k3), &mut k4);
        for k in 0..DIM * DIM {
            rho[k] += (k1[k] + (k2[k] + k3[k]) * 2.0 + k4[k]) * (h / 6.0);
        }
        observe(step + 1, &rho)?;
    }
    Ok(rho)
}

fn rk4_state<O>(
    psi0: [C64; DIM],
    system: &SystemParams,
    f_half: &[f64],
    h: f64,
    n_steps: usize,
    mut observe: O,
) -> Result<[C64; DIM]>
where
    O: FnMut(usize, &[C64; DIM]) -> Result<()>,
{
    let c = system.couplings();
    // −iHψ
    let rhs = |d: &[f64; DIM], psi: &[C64; DIM]| -> [C64; DIM] {
        std::array::from_fn(|i| {
            let mut acc = psi[i] * d[i];
            if i > 0 {
                acc += psi[i - 1] * c[i - 1];
            }
            if i + 1 < DIM {
                acc += psi[i + 1] * c[i];
            }
            C64::new(acc.im, -acc.re)
        })
    };
    let add = |y: &[C64; DIM], a: f64, x: &[C64; DIM]| -> [C64; DIM] { std::array::from_fn(|k| y[k] + x[k] * a) };
    let mut psi = psi0;
    for step in 0..n_steps {
        let d0 = system.diagonal(f_half[2 * step]);
        let dm = system.diagonal(f_half[2 * step + 1]);
        let d1 = system.diagonal(f_half[2 * step + 2]);
        let k1 = rhs(&d0, &psi);
        let k2 = rhs(&dm, &add(&psi, 0.5 * h, &k1));
        let k3 = rhs(&dm, &add(&psi, 0.5 * h, &k2));
        let k4 = rhs(&d1, &add(&psi, h, &k3));
        for k in 0..DIM {
            psi[k] += (k1[k] + (k2[k] + k3[k]) * 2.0 + k4[k]) * (h / 6.0);
        }
        observe(step + 1, &psi)?;
    }
    Ok(psi)
}

fn check_duration(duration: f64) -> Result<()> {
    if duration >= 0.0 && duration.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            quantity: "duration (s)",
            value: duration,
            domain: "[0, ∞)".into(),
        })
    }
}

/// Tolerances applied to states produced by the integrator.
fn propagation_tolerance() -> StateTolerance {
    StateTolerance {
        hermiticity: 1e-9,
        trace: 1e-9,
        positivity: 1e-8,
    }
}

fn checked_state(m: Matrix5<C64>, time: f64) -> Result<DensityMatrix> {
    DensityMatrix::with_tolerance(m, propagation_tolerance()).map_err(|e| Error::Integration {
        time,
        reason: e.to_string(),
    })
}

fn sample_half_grid(drive: &dyn Drive, h: f64, n_steps: usize) -> Vec<f64> {
    let mut f_half = Vec::new();
    drive.sample(0.0, 0.5 * h, 2 * n_steps + 1, &mut f_half);
    f_half
}

/// Integrates the master equation over `[0, duration]` and stores every
/// `sample_stride`-th step plus the final state. Noiseless runs from a pure
/// state take the state-vector path, as in [`evolve`].
pub fn propagate(
    initial: &DensityMatrix,
    drive: &dyn Drive,
    system: &SystemParams,
    duration: f64,
    settings: &IntegratorSettings,
) -> Result<Trajectory> {
    settings.validate()?;
    check_duration(duration)?;
    let (n_steps, h) = settings.grid(duration);
    let stride = settings.sample_stride;
    let mut traj = Trajectory::with_capacity(n_steps / stride + 2);
    traj.push(0.0, *initial);
    let pure = if system.dephasing_rate == 0.0 { pure_vector(initial) } else { None };
    match settings.method {
        Method::Rk4 if pure.is_some() => {
            let f_half = sample_half_grid(drive, h, n_steps);
            let psi = pure.unwrap();
            rk4_state(std::array::from_fn(|i| psi[i]), system, &f_half, h, n_steps, |step, psi| {
                if step % stride == 0 || step == n_steps {
                    let t = if step == n_steps { duration } else { step as f64 * h };
                    let v = Vector5::from_fn(|i, _| psi[i]).normalize();
                    traj.push(t, checked_state(v * v.adjoint(), t)?);
                }
                Ok(())
            })?;
        }
        Method::Rk4 => {
            let f_half = sample_half_grid(drive, h, n_steps);
            rk4_density(to_flat(initial.matrix()), system, &f_half, h, n_steps, |step, rho| {
                if step % stride == 0 || step == n_steps {
                    let t = if step == n_steps { duration } else { step as f64 * h };
                    traj.push(t, checked_state(from_flat(rho), t)?);
                }
                Ok(())
            })?;
        }
        Method::Exponential => {
            let mut rho = *initial.matrix();
            let mut cache: Option<(f64, Superoperator)> = None;
            for step in 0..n_steps {
                let f_mid = drive.value((step as f64 + 0.5) * h);
                if cache.as_ref().is_none_or(|(f, _)| *f != f_mid) {
                    cache = Some((f_mid, expm_propagator(&system.total_hamiltonian(f_mid), system.dephasing_rate, h)?));
                }
                rho = cache.as_ref().unwrap().1.apply_matrix(&rho);
                let done = step + 1;
                if done % stride == 0 || done == n_steps {
                    let t = if done == n_steps { duration } else { done as f64 * h };
                    traj.push(t, checked_state(rho, t)?);
                }
            }
        }
    }
    Ok(traj)
}

/// Like [`propagate`] but keeps only the final state.
pub fn propagate_final(
    initial: &DensityMatrix,
    drive: &dyn Drive,
    system: &SystemParams,
    duration: f64,
    settings: &IntegratorSettings,
) -> Result<DensityMatrix> {
    settings.validate()?;
    check_duration(duration)?;
    if settings.method == Method::Exponential {
        return Ok(*propagate(initial, drive, system, duration, &settings.with_stride(usize::MAX))?.final_state());
    }
    let (n_steps, h) = settings.grid(duration);
    let f_half = sample_half_grid(drive, h, n_steps);
    let rho = rk4_density(to_flat(initial.matrix()), system, &f_half, h, n_steps, |_, _| Ok(()))?;
    checked_state(from_flat(&rho), duration)
}

/// Schrödinger evolution of a state vector (only meaningful without dephasing).
pub fn propagate_pure(
    psi: &Vector5<C64>,
    drive: &dyn Drive,
    system: &SystemParams,
    duration: f64,
    settings: &IntegratorSettings,
) -> Result<Vector5<C64>> {
    settings.validate()?;
    check_duration(duration)?;
    if system.dephasing_rate != 0.0 {
        return Err(Error::InvalidState(
            "state-vector propagation requires zero dephasing".into(),
        ));
    }
    let (n_steps, h) = settings.grid(duration);
    let f_half = sample_half_grid(drive, h, n_steps);
    let out = rk4_state(std::array::from_fn(|i| psi[i]), system, &f_half, h, n_steps, |_, _| Ok(()))?;
    if out.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Integration {
            time: duration,
            reason: "non-finite amplitude".into(),
        });
    }
    Ok(Vector5::from_fn(|i, _| out[i]))
}

/// The dominant eigenvector of `state` if it is pure to within 1e-12.
fn pure_vector(state: &DensityMatrix) -> Option<Vector5<C64>> {
    if (state.purity() - 1.0).abs() > 1e-12 {
        return None;
    }
    let m = state.matrix();
    // a column with the largest diagonal entry is proportional to ψ for pure states
    let k = (0..DIM).max_by(|&a, &b| m[(a, a)].re.total_cmp(&m[(b, b)].re))?;
    let col: Vector5<C64> = m.column(k).into_owned();
    Some(col / C64::new(m[(k, k)].re.sqrt(), 0.0))
}

/// Final state after `duration`, using the state-vector path when the system is
/// noiseless and the initial state is pure, and the density-matrix path otherwise.
pub fn evolve(
    initial: &DensityMatrix,
    drive: &dyn Drive,
    system: &SystemParams,
    duration: f64,
    settings: &IntegratorSettings,
) -> Result<DensityMatrix> {
    if system.dephasing_rate == 0.0 && settings.method == Method::Rk4 {
        if let Some(psi) = pure_vector(initial) {
            // RK4 is not norm-preserving; the O(h⁴) norm defect is removed here
            let out = propagate_pure(&psi, drive, system, duration, settings)?.normalize();
            return checked_state(out * out.adjoint(), duration);
        }
    }
    propagate_final(initial, drive, system, duration, settings)
}

/// Free evolution under H₀ with dephasing, in closed form.
pub fn propagate_free(initial: &DensityMatrix, system: &SystemParams, duration: f64) -> Result<DensityMatrix> {
    check_duration(duration)?;
    let w = &system.level_energies;
    let decay = (-2.0 * system.dephasing_rate * duration).exp();
    let m = Matrix5::from_fn(|i, j| {
        let v = initial.matrix()[(i, j)];
        if i == j {
            v
        } else {
            v * C64::from_polar(decay, -(w[i] - w[j]) * duration)
        }
    });
    Ok(DensityMatrix::new_unchecked(m))
}

/// A linear map on 5×5 matrices acting on column-stacked vectors,
/// vec(ρ)[i + 5j] = ρ_ij.
#[derive(Debug, Clone, PartialEq)]
pub struct Superoperator(DMatrix<C64>);

impl Superoperator {
    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn identity() -> Self {
        Self(DMatrix::identity(DIM * DIM, DIM * DIM))
    }

    /// ρ ↦ UρU†.
    pub fn from_unitary(u: &Matrix5<C64>) -> Self {
        let n = DIM * DIM;
        Self(DMatrix::from_fn(n, n, |r, c| {
            let (i, j) = (r % DIM, r / DIM);
            let (k, l) = (c % DIM, c / DIM);
            u[(i, k)] * u[(j, l)].conj()
        }))
    }

    pub fn apply_matrix(&self, rho: &Matrix5<C64>) -> Matrix5<C64> {
        let v = DVector::from_iterator(DIM * DIM, rho.iter().copied());
        let out = &self.0 * v;
        Matrix5::from_iterator(out.iter().copied())
    }

    pub fn apply(&self, rho: &DensityMatrix) -> DensityMatrix {
        DensityMatrix::new_unchecked(self.apply_matrix(rho.matrix()))
    }

    /// self ∘ first
    pub fn after(&self, first: &Superoperator) -> Self {
        Self(&self.0 * &first.0)
    }

    pub fn singular_values(&self) -> Vec<f64> {
        self.0.clone().singular_values().iter().copied().collect()
    }
}

/// Dense Liouvillian of the master equation in the column-stacked convention.
pub fn liouvillian(hamiltonian: &HamiltonianTerm, gamma: f64) -> DMatrix<C64> {
    let n = DIM * DIM;
    let h = hamiltonian.matrix();
    let mut l = DMatrix::<C64>::zeros(n, n);
    let minus_i = C64::new(0.0, -1.0);
    // −i(I ⊗ H − Hᵀ ⊗ I)
    for j in 0..DIM {
        for i in 0..DIM {
            let r = i + DIM * j;
            for k in 0..DIM {
                l[(r, k + DIM * j)] += minus_i * h[(i, k)];
                l[(r, i + DIM * k)] -= minus_i * h[(k, j)];
            }
            if i != j {
                l[(r, r)] -= C64::new(2.0 * gamma, 0.0);
            }
        }
    }
    l
}

/// exp(L·dt) for a constant Hamiltonian, by Padé scaling-and-squaring.
pub fn expm_propagator(hamiltonian: &HamiltonianTerm, gamma: f64, dt: f64) -> Result<Superoperator> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Domain {
            quantity: "time step (s)",
            value: dt,
            domain: "(0, ∞)".into(),
        });
    }
    let l = liouvillian(hamiltonian, gamma) * C64::new(dt, 0.0);
    Ok(Superoperator(l.exp()))
}

/// The full linear map generated by the drive over `duration`, assembled by
/// integrating each matrix unit (or each basis vector when noiseless).
pub fn propagator(
    drive: &dyn Drive,
    system: &SystemParams,
    duration: f64,
    settings: &IntegratorSettings,
) -> Result<Superoperator> {
    settings.validate()?;
    check_duration(duration)?;
    let (n_steps, h) = settings.grid(duration);
    let f_half = sample_half_grid(drive, h, n_steps);
    if system.dephasing_rate == 0.0 {
        let mut u = Matrix5::<C64>::zeros();
        for k in 0..DIM {
            let mut e = [ZERO; DIM];
            e[k] = C64::new(1.0, 0.0);
            let col = rk4_state(e, system, &f_half, h, n_steps, |_, _| Ok(()))?;
            for i in 0..DIM {
                u[(i, k)] = col[i];
            }
        }
        // RK4 is not norm-preserving; keep the nearest unitary (polar factor)
        let svd = u.svd(true, true);
        let u = svd.u.expect("requested") * svd.v_t.expect("requested");
        return Ok(Superoperator::from_unitary(&u));
    }
    let n = DIM * DIM;
    let mut s = DMatrix::<C64>::zeros(n, n);
    for c in 0..n {
        let (k, l) = (c % DIM, c / DIM);
        let mut unit = [ZERO; DIM * DIM];
        unit[idx(k, l)] = C64::new(1.0, 0.0);
        let out = rk4_density(unit, system, &f_half, h, n_steps, |_, _| Ok(()))?;
        for j in 0..DIM {
            for i in 0..DIM {
                s[(i + DIM * j, c)] = out[idx(i, j)];
            }
        }
    }
    Ok(Superoperator(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin_system::{khz, max_abs};
    use approx::assert_abs_diff_eq;

    #[test]
    fn rhs_vanishes_without_hamiltonian_or_noise() {
        let rho = *DensityMatrix::basis(0).matrix();
        assert_eq!(lindblad_rhs(&rho, &HamiltonianTerm::zero(), 0.0), Matrix5::zeros());
    }

    #[test]
    fn pure_dephasing_preserves_populations() {
        let rho = *DensityMatrix::diagonal(&[0.1, 0.2, 0.3, 0.25, 0.15]).unwrap().matrix();
        assert_eq!(lindblad_rhs(&rho, &HamiltonianTerm::zero(), 123.0), Matrix5::zeros());
    }

    #[test]
    fn single_coherence_decays_at_twice_gamma() {
        // hand expansion: −γ(ρ₁₂ + ρ₁₂) + 0 for the off-diagonal element
        let c = C64::new(0.2, -0.1);
        let mut rho = Matrix5::<C64>::zeros();
        rho[(0, 1)] = c;
        let gamma = 7.5;
        let d = lindblad_rhs(&rho, &HamiltonianTerm::zero(), gamma);
        assert_abs_diff_eq!(d[(0, 1)].re, -2.0 * gamma * c.re, epsilon = 1e-15);
        assert_abs_diff_eq!(d[(0, 1)].im, -2.0 * gamma * c.im, epsilon = 1e-15);
        let mut rest = d;
        rest[(0, 1)] = ZERO;
        assert_eq!(rest, Matrix5::zeros());
    }

    #[test]
    fn tridiagonal_kernel_matches_dense_rhs() {
        let s = SystemParams::reference().with_dephasing(khz(0.2)).unwrap();
        let f = khz(4400.0);
        let psi = Vector5::from_fn(|i, _| C64::new(0.3 + i as f64 * 0.1, 0.05 * i as f64));
        let rho = *DensityMatrix::pure(&psi).unwrap().matrix();
        let dense = lindblad_rhs(&rho, &s.total_hamiltonian(f), s.dephasing_rate);
        let mut out = [ZERO; 25];
        rhs_tridiagonal(&s.diagonal(f), &s.couplings(), s.dephasing_rate, &to_flat(&rho), &mut out);
        assert!(max_abs(&(dense - from_flat(&out))) < 1e-6 * max_abs(&dense));
    }

    #[test]
    fn undriven_basis_state_is_stationary() {
        let s = SystemParams::reference().with_rabi_rate(0.0).unwrap();
        let rho0 = DensityMatrix::basis(0);
        let traj = propagate(&rho0, &ConstantDrive(khz(4323.0)), &s, 5e-6, &IntegratorSettings::default()).unwrap();
        for st in &traj.states {
            assert!(max_abs(&(st.matrix() - rho0.matrix())) < 1e-14);
        }
    }

    #[test]
    fn noiseless_trajectory_ends_where_evolve_does() {
        let s = SystemParams::reference();
        let drive = ConstantDrive(khz(4330.0));
        let settings = IntegratorSettings::default().with_stride(250);
        let traj = propagate(&DensityMatrix::basis(1), &drive, &s, 3e-6, &settings).unwrap();
        let end = evolve(&DensityMatrix::basis(1), &drive, &s, 3e-6, &settings).unwrap();
        assert!(max_abs(&(traj.final_state().matrix() - end.matrix())) < 1e-14);
        let dense = propagate_final(&DensityMatrix::basis(1), &drive, &s, 3e-6, &settings).unwrap();
        assert!(max_abs(&(dense.matrix() - end.matrix())) < 1e-9);
    }

    #[test]
    fn trajectory_sampling() {
        let s = SystemParams::reference();
        let settings = IntegratorSettings::default().with_stride(100);
        let traj = propagate(&DensityMatrix::basis(0), &ConstantDrive(khz(4323.0)), &s, 1e-6, &settings).unwrap();
        // 500 steps, every 100th plus the initial state
        assert_eq!(traj.times.len(), 6);
        assert_eq!(*traj.times.last().unwrap(), 1e-6);
        for (p, st) in traj.populations.iter().zip(&traj.states) {
            assert_eq!(*p, st.populations());
        }
    }

    #[test]
    fn free_evolution_identity_at_zero() {
        let s = SystemParams::reference().with_dephasing(100.0).unwrap();
        let psi = Vector5::from_fn(|i, _| C64::new(1.0, i as f64));
        let rho = DensityMatrix::pure(&psi).unwrap();
        assert_eq!(propagate_free(&rho, &s, 0.0).unwrap(), rho);
        let diag = DensityMatrix::diagonal(&[0.2; 5]).unwrap();
        assert_eq!(propagate_free(&diag, &s, 3e-6).unwrap(), diag);
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let s = SystemParams::reference();
        let bad = IntegratorSettings::default().with_step(0.0);
        assert!(propagate(&DensityMatrix::basis(0), &ConstantDrive(0.0), &s, 1e-6, &bad).is_err());
        let bad = IntegratorSettings::default().with_stride(0);
        assert!(propagate(&DensityMatrix::basis(0), &ConstantDrive(0.0), &s, 1e-6, &bad).is_err());
        assert!(propagate(&DensityMatrix::basis(0), &ConstantDrive(0.0), &s, -1e-6, &IntegratorSettings::default()).is_err());
    }

    #[test]
    fn blow_up_is_reported_with_time() {
        let s = SystemParams::reference();
        // a huge drive makes the fixed step unstable
        let settings = IntegratorSettings::default().with_step(1e-7).with_stride(1);
        let err = propagate(&DensityMatrix::basis(0), &ConstantDrive(khz(1e7)), &s, 2e-5, &settings).unwrap_err();
        assert!(matches!(err, Error::Integration { time, .. } if time > 0.0));
    }

    #[test]
    fn zero_duration_returns_initial_state() {
        let s = SystemParams::reference();
        let rho = DensityMatrix::basis(1);
        assert_eq!(propagate_final(&rho, &ConstantDrive(1.0), &s, 0.0, &IntegratorSettings::default()).unwrap(), rho);
        assert_eq!(evolve(&rho, &ConstantDrive(1.0), &s, 0.0, &IntegratorSettings::default()).unwrap(), rho);
    }

    #[test]
    fn expm_small_step_is_near_identity() {
        let s = SystemParams::reference().with_dephasing(khz(0.1)).unwrap();
        let h = s.total_hamiltonian(khz(4323.0));
        let dt = 1e-12;
        let prop = expm_propagator(&h, s.dephasing_rate, dt).unwrap();
        let diff = prop.matrix() - DMatrix::<C64>::identity(25, 25);
        let worst = diff.iter().fold(0.0f64, |a, z| a.max(z.norm()));
        let scale = liouvillian(&h, s.dephasing_rate).iter().fold(0.0f64, |a, z| a.max(z.norm()));
        assert!(worst <= 2.0 * scale * dt);
    }

    #[test]
    fn expm_closed_system_is_unitary() {
        let s = SystemParams::reference();
        let prop = expm_propagator(&s.total_hamiltonian(khz(4300.0)), 0.0, 3e-6).unwrap();
        for sv in prop.singular_values() {
            assert_abs_diff_eq!(sv, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn superoperator_from_unitary_matches_conjugation() {
        let s = SystemParams::reference();
        let h = *s.total_hamiltonian(khz(4323.0)).matrix();
        let u = (h * C64::new(0.0, -1e-6)).exp();
        let psi = Vector5::from_fn(|i, _| C64::new(1.0 + i as f64, -0.5));
        let rho = *DensityMatrix::pure(&psi).unwrap().matrix();
        let direct = u * rho * u.adjoint();
        let via = Superoperator::from_unitary(&u).apply_matrix(&rho);
        assert!(max_abs(&(direct - via)) < 1e-14);
    }
}
