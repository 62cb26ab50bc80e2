//! Subplex: Nelder-Mead simplex searches cycled over low-dimensional
//! coordinate subspaces, with the subspace partition and step sizes adapted
//! from the progress of the previous cycle (Rowan's scheme).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;
/// Inner simplex searches stop once their size has dropped by this factor.
const PSI: f64 = 0.25;
/// Bounds on the step rescaling between cycles.
const OMEGA: f64 = 0.1;
/// Relative simplex size treated as collapsed.
const COLLAPSE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubplexOptions {
    /// Objective evaluations allowed per start.
    pub max_evals: usize,
    /// Initial step along every coordinate.
    pub simplex_scale: f64,
    /// Smallest and largest subspace dimension.
    pub subspace_size: (usize, usize),
    /// Number of independent starts (the first one at `x0`).
    pub restarts: usize,
    pub rng_seed: u64,
    /// Half-width of the box around `x0` from which further starts are drawn.
    pub init_radius: f64,
    /// Relative tolerance on the point for convergence of a start.
    pub xtol: f64,
    /// Stop as soon as the objective falls to this value.
    pub stop_below: Option<f64>,
}

impl Default for SubplexOptions {
    fn default() -> Self {
        Self {
            max_evals: 3000,
            simplex_scale: 0.02,
            subspace_size: (2, 5),
            restarts: 5,
            rng_seed: 1,
            init_radius: 0.05,
            xtol: 1e-10,
            stop_below: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    Budget,
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub x0: Vec<f64>,
    pub best_value: f64,
    pub evals: usize,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_x: Vec<f64>,
    pub best_value: f64,
    /// Total evaluations over all starts.
    pub evals: usize,
    /// (cumulative evaluation index, value) whenever the overall best improved.
    pub history: Vec<(usize, f64)>,
    pub starts: Vec<StartSummary>,
}

/// Start points for `subplex_minimize`: `x0`, then uniform draws from the box
/// `x0 ± init_radius`.
pub fn start_points(x0: &[f64], options: &SubplexOptions) -> Vec<Vec<f64>> {
    let mut starts = vec![x0.to_vec()];
    starts.extend(box_samples(x0, options.restarts.max(1) - 1, options, |_| true));
    starts
}

/// Draws from the box `center ± init_radius` that satisfy `accept`, seeded by
/// `rng_seed`. After `MAX_DRAWS` rejections the remaining points are taken unfiltered.
pub fn box_samples<P>(center: &[f64], count: usize, options: &SubplexOptions, accept: P) -> Vec<Vec<f64>>
where
    P: Fn(&[f64]) -> bool,
{
    const MAX_DRAWS: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(options.rng_seed);
    let mut out = Vec::with_capacity(count);
    let mut draws = 0;
    while out.len() < count {
        let x: Vec<f64> = center
            .iter()
            .map(|&c| c + options.init_radius * rng.random_range(-1.0..=1.0))
            .collect();
        draws += 1;
        if draws > MAX_DRAWS || accept(&x) {
            out.push(x);
        }
    }
    out
}

/// Multi-start Subplex from `x0` (see [`start_points`]).
pub fn subplex_minimize<F>(objective: F, x0: &[f64], options: &SubplexOptions) -> SearchResult
where
    F: FnMut(&[f64]) -> f64,
{
    subplex_from_starts(objective, &start_points(x0, options), options)
}

/// Runs one Subplex search per start point in order and keeps the best.
/// Remaining starts are skipped once `stop_below` has been reached.
pub fn subplex_from_starts<F>(objective: F, starts: &[Vec<f64>], options: &SubplexOptions) -> SearchResult
where
    F: FnMut(&[f64]) -> f64,
{
    search(objective, None, starts, options)
}

/// Evaluates `probe` once, charged to the first start's budget, and returns
/// immediately if it already reaches `stop_below`; otherwise continues as
/// [`subplex_from_starts`].
pub fn subplex_with_probe<F>(objective: F, probe: &[f64], starts: &[Vec<f64>], options: &SubplexOptions) -> SearchResult
where
    F: FnMut(&[f64]) -> f64,
{
    search(objective, Some(probe), starts, options)
}

fn search<F>(mut objective: F, probe: Option<&[f64]>, starts: &[Vec<f64>], options: &SubplexOptions) -> SearchResult
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(!starts.is_empty(), "at least one start point is required");
    let mut tracker = Tracker {
        objective: &mut objective,
        evals: 0,
        start_evals: 0,
        budget: options.max_evals.max(1),
        best_x: starts[0].clone(),
        best_value: f64::INFINITY,
        start_best: f64::INFINITY,
        history: Vec::new(),
        stop_below: options.stop_below,
    };
    let mut summaries = Vec::with_capacity(starts.len() + 1);
    if let Some(p) = probe {
        if let Ok(v) = tracker.eval(p) {
            if tracker.reached_target() {
                summaries.push(StartSummary {
                    x0: p.to_vec(),
                    best_value: v,
                    evals: 1,
                    termination: Termination::Target,
                });
                return tracker.finish(summaries);
            }
        }
    }
    for (i, x0) in starts.iter().enumerate() {
        if i > 0 || probe.is_none() {
            tracker.start_evals = 0;
        }
        tracker.start_best = f64::INFINITY;
        let termination = run_start(&mut tracker, x0, options);
        summaries.push(StartSummary {
            x0: x0.clone(),
            best_value: tracker.start_best,
            evals: tracker.start_evals,
            termination,
        });
        if termination == Termination::Target {
            break;
        }
    }
    tracker.finish(summaries)
}

struct Tracker<'a, F> {
    objective: &'a mut F,
    evals: usize,
    start_evals: usize,
    budget: usize,
    best_x: Vec<f64>,
    best_value: f64,
    start_best: f64,
    history: Vec<(usize, f64)>,
    stop_below: Option<f64>,
}

enum Halt {
    Budget,
    Target,
}

impl<F: FnMut(&[f64]) -> f64> Tracker<'_, F> {
    fn eval(&mut self, x: &[f64]) -> Result<f64, Halt> {
        if self.start_evals >= self.budget {
            return Err(Halt::Budget);
        }
        let mut v = (self.objective)(x);
        if v.is_nan() {
            v = f64::INFINITY;
        }
        self.evals += 1;
        self.start_evals += 1;
        self.start_best = self.start_best.min(v);
        if v < self.best_value {
            self.best_value = v;
            self.best_x.clear();
            self.best_x.extend_from_slice(x);
            self.history.push((self.evals, v));
        }
        Ok(v)
    }

    fn finish(self, starts: Vec<StartSummary>) -> SearchResult {
        SearchResult {
            best_x: self.best_x,
            best_value: self.best_value,
            evals: self.evals,
            history: self.history,
            starts,
        }
    }

    fn reached_target(&self) -> bool {
        self.stop_below.is_some_and(|s| self.start_best <= s)
    }
}

fn run_start<F: FnMut(&[f64]) -> f64>(tracker: &mut Tracker<'_, F>, x0: &[f64], options: &SubplexOptions) -> Termination {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = match tracker.eval(&x) {
        Ok(v) => v,
        Err(_) => return Termination::Budget,
    };
    if tracker.reached_target() || n == 0 {
        return if n == 0 { Termination::Converged } else { Termination::Target };
    }
    let ns_min = options.subspace_size.0.clamp(1, n);
    let ns_max = options.subspace_size.1.clamp(ns_min, n);
    let mut step = vec![options.simplex_scale; n];
    let mut dx = step.clone();

    loop {
        let xprev = x.clone();
        let subspaces = partition(&dx, ns_min, ns_max);
        for dims in &subspaces {
            let sub_step: Vec<f64> = dims.iter().map(|&i| step[i]).collect();
            match nelder_mead(tracker, &mut x, &mut fx, dims, &sub_step) {
                Ok(()) => {}
                Err(Halt::Budget) => return Termination::Budget,
                Err(Halt::Target) => return Termination::Target,
            }
        }
        for i in 0..n {
            dx[i] = x[i] - xprev[i];
        }
        let converged = (0..n).all(|i| dx[i].abs().max(PSI * step[i].abs()) <= options.xtol * x[i].abs().max(1.0));
        if converged {
            return Termination::Converged;
        }
        let scale = if subspaces.len() == 1 {
            PSI
        } else {
            let dx_norm: f64 = dx.iter().map(|d| d.abs()).sum();
            let step_norm: f64 = step.iter().map(|s| s.abs()).sum();
            (dx_norm / step_norm).clamp(OMEGA, 1.0 / OMEGA)
        };
        for i in 0..n {
            step[i] = if dx[i] == 0.0 {
                -step[i] * scale
            } else {
                (step[i] * scale).abs().copysign(dx[i])
            };
        }
    }
}

/// Splits coordinates, ordered by decreasing |dx|, into consecutive
/// subspaces whose sizes lie in [ns_min, ns_max], choosing each cut where
/// the average progress drops the most.
pub(crate) fn partition(dx: &[f64], ns_min: usize, ns_max: usize) -> Vec<Vec<usize>> {
    let n = dx.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dx[b].abs().total_cmp(&dx[a].abs()));
    let total: f64 = dx.iter().map(|d| d.abs()).sum();
    let mut subspaces = Vec::new();
    let mut assigned = 0.0;
    let mut i = 0;
    while i < n {
        let remaining = n - i;
        if remaining <= ns_min {
            subspaces.push(order[i..].to_vec());
            break;
        }
        let mut norm = assigned;
        for &k in &order[i..i + ns_min - 1] {
            norm += dx[k].abs();
        }
        let mut best = f64::NEG_INFINITY;
        let mut ns = ns_min;
        for k in (i + ns_min - 1)..(i + ns_max).min(n) {
            norm += dx[order[k]].abs();
            let rest = n - (k + 1);
            if rest > 0 && rest < ns_min {
                continue;
            }
            let goodness = if rest > 0 {
                norm / (k + 1) as f64 - (total - norm) / rest as f64
            } else {
                total / n as f64
            };
            if goodness > best {
                best = goodness;
                ns = k + 1 - i;
            }
        }
        assigned += order[i..i + ns].iter().map(|&k| dx[k].abs()).sum::<f64>();
        subspaces.push(order[i..i + ns].to_vec());
        i += ns;
    }
    subspaces
}

/// Nelder-Mead over coordinates `dims` of `x`, starting from the axis simplex
/// `x + steps[j]·e_dims[j]`. On return `x`/`fx` hold the best vertex.
fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    tracker: &mut Tracker<'_, F>,
    x: &mut [f64],
    fx: &mut f64,
    dims: &[usize],
    steps: &[f64],
) -> Result<(), Halt> {
    let m = dims.len();
    let mut full = x.to_vec();
    let mut eval_sub = |tracker: &mut Tracker<'_, F>, p: &[f64]| -> Result<f64, Halt> {
        for (&d, &v) in dims.iter().zip(p) {
            full[d] = v;
        }
        tracker.eval(&full)
    };

    let base: Vec<f64> = dims.iter().map(|&d| x[d]).collect();
    let mut simplex: Vec<Vec<f64>> = vec![base.clone()];
    let mut values = vec![*fx];
    let write_back = |simplex: &[Vec<f64>], values: &[f64], x: &mut [f64], fx: &mut f64| {
        let lo = argmin(values);
        if values[lo] <= *fx {
            for (&d, &v) in dims.iter().zip(&simplex[lo]) {
                x[d] = v;
            }
            *fx = values[lo];
        }
    };

    let outcome = (|| -> Result<(), Halt> {
        for j in 0..m {
            let mut v = base.clone();
            v[j] += steps[j];
            let fv = eval_sub(tracker, &v)?;
            simplex.push(v);
            values.push(fv);
        }
        let initial_size = steps.iter().fold(0.0f64, |a, s| a.max(s.abs()));
        let scale = base.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        loop {
            if tracker.reached_target() {
                return Err(Halt::Target);
            }
            let (lo, hi, second) = extremes(&values);
            let size: f64 = simplex
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != lo)
                .map(|(_, v)| l1(v, &simplex[lo]))
                .fold(0.0, f64::max);
            if size <= PSI * initial_size || size <= COLLAPSE * scale {
                return Ok(());
            }
            let mut centroid = vec![0.0; m];
            for (i, v) in simplex.iter().enumerate() {
                if i != hi {
                    for (c, &p) in centroid.iter_mut().zip(v) {
                        *c += p / m as f64;
                    }
                }
            }
            let along = |coef: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[hi])
                    .map(|(&c, &w)| c + coef * (c - w))
                    .collect()
            };
            let reflected = along(REFLECT);
            let fr = eval_sub(tracker, &reflected)?;
            if fr < values[lo] {
                let expanded = along(EXPAND);
                let fe = eval_sub(tracker, &expanded)?;
                if fe < fr {
                    simplex[hi] = expanded;
                    values[hi] = fe;
                } else {
                    simplex[hi] = reflected;
                    values[hi] = fr;
                }
                continue;
            }
            if fr < values[second] {
                simplex[hi] = reflected;
                values[hi] = fr;
                continue;
            }
            let (contracted, fc, accept) = if fr < values[hi] {
                let c = along(REFLECT * CONTRACT);
                let fc = eval_sub(tracker, &c)?;
                (c, fc, fc <= fr)
            } else {
                let c = along(-CONTRACT);
                let fc = eval_sub(tracker, &c)?;
                (c, fc, fc < values[hi])
            };
            if accept {
                simplex[hi] = contracted;
                values[hi] = fc;
                continue;
            }
            let best = simplex[lo].clone();
            for i in 0..=m {
                if i == lo {
                    continue;
                }
                for (p, &b) in simplex[i].iter_mut().zip(&best) {
                    *p = b + SHRINK * (*p - b);
                }
                values[i] = eval_sub(tracker, &simplex[i])?;
            }
        }
    })();
    write_back(&simplex, &values, x, fx);
    outcome
}

fn argmin(values: &[f64]) -> usize {
    (0..values.len())
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .expect("non-empty simplex")
}

/// Indices of the best, worst and second-worst vertices.
fn extremes(values: &[f64]) -> (usize, usize, usize) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let k = order.len();
    (order[0], order[k - 1], order[k.saturating_sub(2)])
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(max_evals: usize, scale: f64) -> SubplexOptions {
        SubplexOptions {
            max_evals,
            simplex_scale: scale,
            restarts: 1,
            xtol: 1e-12,
            ..SubplexOptions::default()
        }
    }

    #[test]
    fn partition_sizes_stay_in_range() {
        for n in 1..=20 {
            let dx: Vec<f64> = (0..n).map(|i| ((i * 7919) % 13) as f64 + 0.5).collect();
            let parts = partition(&dx, 2.min(n), 5.min(n));
            let mut seen: Vec<usize> = parts.iter().flatten().copied().collect();
            seen.sort();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
            for p in &parts {
                assert!(p.len() <= 5, "n = {n}: {parts:?}");
                assert!(p.len() >= 2.min(n), "n = {n}: {parts:?}");
            }
        }
    }

    #[test]
    fn partition_splits_at_progress_drop() {
        let dx = [10.0, 0.01, 9.0, 0.02, 0.03, 8.0];
        let parts = partition(&dx, 2, 5);
        let mut first = parts[0].clone();
        first.sort();
        assert_eq!(first, vec![0, 2, 5]);
    }

    #[test]
    fn shifted_quadratic_in_ten_dimensions() {
        let f = |x: &[f64]| x.iter().map(|v| (v - 3.0).powi(2)).sum::<f64>();
        let r = subplex_minimize(f, &[0.0; 10], &single(20_000, 1.0));
        for v in &r.best_x {
            assert!((v - 3.0).abs() < 1e-6, "{:?}", r.best_x);
        }
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let r = subplex_minimize(f, &[-1.2, 1.0], &single(10_000, 0.5));
        assert!(r.evals <= 10_000);
        assert!((r.best_x[0] - 1.0).abs() < 1e-4 && (r.best_x[1] - 1.0).abs() < 1e-4, "{:?}", r.best_x);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let f = |x: &[f64]| x.iter().enumerate().map(|(i, v)| (v - i as f64).powi(2) * (1.0 + v.sin().powi(2))).sum::<f64>();
        let opts = SubplexOptions {
            max_evals: 400,
            restarts: 3,
            rng_seed: 42,
            ..SubplexOptions::default()
        };
        let a = subplex_minimize(f, &[0.3; 6], &opts);
        let b = subplex_minimize(f, &[0.3; 6], &opts);
        assert_eq!(a, b);
        let c = subplex_minimize(f, &[0.3; 6], &SubplexOptions { rng_seed: 43, ..opts });
        assert_ne!(a.starts[1].x0, c.starts[1].x0);
    }

    #[test]
    fn history_running_minimum_is_monotone() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + (x[1] + 2.0).powi(4) + x[2].abs();
        let r = subplex_minimize(f, &[0.0; 3], &SubplexOptions { max_evals: 300, ..SubplexOptions::default() });
        assert!(r.history.windows(2).all(|w| w[1].1 <= w[0].1 && w[1].0 > w[0].0));
        assert_eq!(r.history.last().unwrap().1, r.best_value);
    }

    #[test]
    fn stops_at_target_on_first_evaluation() {
        let r = subplex_minimize(|_| 0.0, &[0.0; 4], &SubplexOptions { stop_below: Some(1e-9), ..SubplexOptions::default() });
        assert_eq!(r.evals, 1);
        assert_eq!(r.starts.len(), 1);
        assert_eq!(r.starts[0].termination, Termination::Target);
    }

    #[test]
    fn budget_is_respected_per_start() {
        let r = subplex_minimize(|x| x.iter().map(|v| v.cos()).sum(), &[0.1; 5], &SubplexOptions { max_evals: 50, restarts: 3, ..SubplexOptions::default() });
        assert_eq!(r.evals, 150);
        assert!(r.starts.iter().all(|s| s.termination == Termination::Budget));
    }

    #[test]
    fn nan_objective_is_treated_as_worst() {
        let f = |x: &[f64]| if x[0] > 0.5 { f64::NAN } else { (x[0] - 0.4).powi(2) + x[1] * x[1] };
        let r = subplex_minimize(f, &[0.0, 0.3], &single(2000, 0.1));
        assert!((r.best_x[0] - 0.4).abs() < 1e-4);
    }
}
