//! Free propagator, Strang-split integrator and a Duhamel fixed-point solver.

use std::fmt;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::nonlinearity::{HartreeModel, ModelParams};
use crate::radial::{h1dot_from_spectrum, FieldState, RadialGrid, BOUNDARY_MASS_LIMIT};

/// Relative tolerance for matching requested times against sample times.
const TIME_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Integrator {
    Strang,
    Picard,
    Free,
}

impl fmt::Display for Integrator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Integrator::Strang => "strang",
            Integrator::Picard => "picard",
            Integrator::Free => "free",
        })
    }
}

/// Uniformly sampled solution `t -> u(t)`.
#[derive(Clone)]
pub struct Trajectory {
    grid: Arc<RadialGrid>,
    params: ModelParams,
    states: Vec<FieldState>,
    boundary_flags: Vec<bool>,
    dt_record: f64,
    dt_internal: f64,
    integrator: Integrator,
    x_density: OnceLock<Vec<f64>>,
    w_density: OnceLock<Vec<f64>>,
}

impl fmt::Debug for Trajectory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Trajectory")
            .field("integrator", &self.integrator)
            .field("states", &self.states.len())
            .field("start", &self.start())
            .field("end", &self.end())
            .field("dt_record", &self.dt_record)
            .field("dt_internal", &self.dt_internal)
            .finish()
    }
}

impl Trajectory {
    /// Wraps externally produced states; they must share the grid and be uniformly spaced in time.
    pub fn from_states(
        params: ModelParams,
        states: Vec<FieldState>,
        dt_internal: f64,
        integrator: Integrator,
    ) -> Result<Self> {
        let first = states
            .first()
            .ok_or_else(|| Error::invalid("states", "trajectory needs at least one state"))?;
        let grid = first.grid().clone();
        for s in &states {
            grid.check(s)?;
            if !s.is_finite() {
                return Err(Error::invalid(
                    "states",
                    format!("non-finite state at t = {}", s.time()),
                ));
            }
        }
        let dt_record = if states.len() > 1 {
            states[1].time() - states[0].time()
        } else {
            dt_internal
        };
        if states.len() > 1 {
            if dt_record <= 0.0 {
                return Err(Error::invalid("states", "times must be strictly increasing"));
            }
            let t0 = states[0].time();
            for (k, s) in states.iter().enumerate() {
                let expected = t0 + k as f64 * dt_record;
                if (s.time() - expected).abs() > 1e-12 * expected.abs().max(1.0) + 1e-9 * dt_record {
                    return Err(Error::invalid(
                        "states",
                        format!("sample {k} at t = {} breaks the uniform spacing {dt_record}", s.time()),
                    ));
                }
            }
        }
        let boundary_flags = states
            .iter()
            .map(|s| grid.boundary_mass_fraction(s) > BOUNDARY_MASS_LIMIT)
            .collect();
        Ok(Trajectory {
            grid,
            params,
            states,
            boundary_flags,
            dt_record,
            dt_internal,
            integrator,
            x_density: OnceLock::new(),
            w_density: OnceLock::new(),
        })
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn states(&self) -> &[FieldState] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.time()).collect()
    }

    pub fn start(&self) -> f64 {
        self.states[0].time()
    }

    pub fn end(&self) -> f64 {
        self.states[self.states.len() - 1].time()
    }

    pub fn dt_record(&self) -> f64 {
        self.dt_record
    }

    pub fn dt_internal(&self) -> f64 {
        self.dt_internal
    }

    pub fn integrator(&self) -> Integrator {
        self.integrator
    }

    /// Per-state flag: mass fraction beyond `0.9 r_max` exceeds the limit.
    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary_flags
    }

    pub fn any_boundary_flag(&self) -> bool {
        self.boundary_flags.iter().any(|f| *f)
    }

    pub fn first(&self) -> &FieldState {
        &self.states[0]
    }

    pub fn last(&self) -> &FieldState {
        &self.states[self.states.len() - 1]
    }

    /// Index of the sample at time `t`.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let (start, end) = (self.start(), self.end());
        let slack = TIME_TOL * self.dt_record.max(f64::MIN_POSITIVE);
        if !(t >= start - slack && t <= end + slack) {
            return Err(Error::TimeOutOfRange { time: t, start, end });
        }
        if self.states.len() == 1 {
            return Ok(0);
        }
        let pos = (t - start) / self.dt_record;
        let k = pos.round();
        if (pos - k).abs() > TIME_TOL.max(1e-12 * pos.abs()) {
            return Err(Error::invalid(
                "time",
                format!("t = {t} is not a sample time (spacing {})", self.dt_record),
            ));
        }
        Ok(k as usize)
    }

    /// Index of the sample closest to `t`, clamped to the run.
    pub fn index_of_nearest(&self, t: f64) -> usize {
        if self.states.len() == 1 {
            return 0;
        }
        let pos = ((t - self.start()) / self.dt_record).round();
        pos.clamp(0.0, (self.states.len() - 1) as f64) as usize
    }

    pub fn state_at(&self, t: f64) -> Result<&FieldState> {
        Ok(&self.states[self.index_of(t)?])
    }

    /// Sample indices `lo..=hi` covering `[t1, t2]`.
    pub fn index_range(&self, t1: f64, t2: f64) -> Result<(usize, usize)> {
        let (a, b) = (self.index_of(t1)?, self.index_of(t2)?);
        if a > b {
            return Err(Error::invalid("interval", format!("[{t1}, {t2}] is reversed")));
        }
        Ok((a, b))
    }

    pub(crate) fn cached_x_density(&self, compute: impl FnOnce() -> Vec<f64>) -> &[f64] {
        self.x_density.get_or_init(compute)
    }

    pub(crate) fn cached_w_density(&self, compute: impl FnOnce() -> Vec<f64>) -> &[f64] {
        self.w_density.get_or_init(compute)
    }
}

fn free_phases(grid: &RadialGrid, t: f64) -> Vec<Complex64> {
    grid.xi_nodes()
        .iter()
        .map(|xi| Complex64::from_polar(1.0, -xi * xi * t))
        .collect()
}

fn apply_free(grid: &RadialGrid, values: &[Complex64], phases: &[Complex64]) -> Vec<Complex64> {
    let mut spec = grid.forward_values(values);
    for (c, p) in spec.iter_mut().zip(phases) {
        *c *= p;
    }
    grid.inverse_values(&spec)
}

/// `e^{it Laplacian} u`; the returned state carries time `u.time() + t`.
pub fn free_propagate(grid: &RadialGrid, u: &FieldState, t: f64) -> Result<FieldState> {
    grid.check(u)?;
    if !t.is_finite() {
        return Err(Error::invalid("duration", "must be finite"));
    }
    let mut out = u.with_values(apply_free(grid, u.values(), &free_phases(grid, t)));
    out.set_time(u.time() + t);
    Ok(out)
}

fn rotate(values: &mut [Complex64], potential: &[f64], angle: f64) {
    for (v, p) in values.iter_mut().zip(potential) {
        *v *= Complex64::from_polar(1.0, -angle * p);
    }
}

/// Split-step integrator with cached free phases for a fixed step.
pub struct StrangStepper<'a> {
    model: &'a HartreeModel,
    dt: f64,
    phases: Vec<Complex64>,
}

impl<'a> StrangStepper<'a> {
    pub fn new(model: &'a HartreeModel, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("dt", format!("dt = {dt} must be positive")));
        }
        Ok(StrangStepper {
            model,
            dt,
            phases: free_phases(model.grid(), dt),
        })
    }

    /// One step given the potential of the incoming state; returns the
    /// potential of the outgoing state so callers can reuse it.
    fn step_with(&self, values: &mut Vec<Complex64>, potential: &[f64]) -> Vec<f64> {
        let half = 0.5 * self.model.params().coupling * self.dt;
        rotate(values, potential, half);
        *values = apply_free(self.model.grid(), values, &self.phases);
        let density: Vec<f64> = values.iter().map(|v| v.norm_sqr()).collect();
        let next = self.model.kernel().apply_unchecked(&density);
        rotate(values, &next, half);
        next
    }

    pub fn step(&self, u: &FieldState) -> Result<FieldState> {
        let pot = self.model.potential(u)?;
        let mut values = u.values().to_vec();
        self.step_with(&mut values, &pot);
        let mut out = u.with_values(values);
        out.set_time(u.time() + self.dt);
        Ok(out)
    }
}

/// Nonlinear half step, free step, nonlinear half step.
pub fn strang_step(model: &HartreeModel, u: &FieldState, dt: f64) -> Result<FieldState> {
    StrangStepper::new(model, dt)?.step(u)
}

fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid("dt", format!("dt = {dt} must be positive")));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::invalid("t_end", format!("t_end = {t_end} must be positive")));
    }
    let steps = (t_end / dt).round();
    if steps < 1.0 || (steps * dt - t_end).abs() > TIME_TOL * t_end {
        return Err(Error::invalid(
            "t_end",
            format!("t_end = {t_end} is not an integer multiple of dt = {dt}"),
        ));
    }
    Ok(steps as usize)
}

/// Strang integration from `u0` over `[t0, t0 + t_end]`, recording every `record_every` steps.
pub fn evolve(model: &HartreeModel, u0: &FieldState, t_end: f64, dt: f64, record_every: usize) -> Result<Trajectory> {
    evolve_with(model, u0, t_end, dt, record_every, |_| {})
}

/// [`evolve`] with a callback invoked on every recorded state.
pub fn evolve_with(
    model: &HartreeModel,
    u0: &FieldState,
    t_end: f64,
    dt: f64,
    record_every: usize,
    mut on_record: impl FnMut(&FieldState),
) -> Result<Trajectory> {
    model.grid().check(u0)?;
    if !u0.is_finite() {
        return Err(Error::invalid("initial data", "contains non-finite values"));
    }
    let steps = step_count(t_end, dt)?;
    if record_every == 0 || steps % record_every != 0 {
        return Err(Error::invalid(
            "record_every",
            format!("{steps} steps are not a multiple of record_every = {record_every}"),
        ));
    }
    let stepper = StrangStepper::new(model, dt)?;
    let t0 = u0.time();
    let mut states = vec![u0.clone()];
    on_record(u0);
    let mut values = u0.values().to_vec();
    let mut potential = model.potential(u0)?;
    for k in 1..=steps {
        potential = stepper.step_with(&mut values, &potential);
        let time = t0 + k as f64 * dt;
        if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            let last_good = Trajectory::from_states(*model.params(), states, dt, Integrator::Strang)?;
            return Err(Error::NonFinite {
                time,
                steps: k,
                last_good: Box::new(last_good),
            });
        }
        if k % record_every == 0 {
            let state = FieldState::new(model.grid().clone(), values.clone(), time)?;
            on_record(&state);
            states.push(state);
        }
    }
    Trajectory::from_states(*model.params(), states, dt, Integrator::Strang)
}

/// Exact free evolution sampled at `t0 + k dt_record`, `k = 0..=records`.
pub fn free_trajectory(grid: &Arc<RadialGrid>, u0: &FieldState, dt_record: f64, records: usize) -> Result<Trajectory> {
    grid.check(u0)?;
    if !(dt_record > 0.0) {
        return Err(Error::invalid("dt", "must be positive"));
    }
    let spec = grid.forward_values(u0.values());
    let t0 = u0.time();
    let states = (0..=records)
        .map(|k| {
            let s = k as f64 * dt_record;
            let evolved: Vec<Complex64> = spec
                .iter()
                .zip(grid.xi_nodes())
                .map(|(c, xi)| c * Complex64::from_polar(1.0, -xi * xi * s))
                .collect();
            FieldState::new(grid.clone(), grid.inverse_values(&evolved), t0 + s)
        })
        .collect::<Result<Vec<_>>>()?;
    let params = ModelParams {
        dim: grid.dim(),
        gamma: 4.0,
        coupling: 0.0,
    };
    Trajectory::from_states(params, states, dt_record, Integrator::Free)
}

#[derive(Clone, Copy, Debug)]
pub struct PicardOptions {
    /// Number of time steps on the interval.
    pub steps: usize,
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone)]
pub struct PicardOutcome {
    pub trajectory: Trajectory,
    pub iterations: usize,
    /// Sup-over-samples Ḣ¹ distance between successive iterates.
    pub distances: Vec<f64>,
    /// Successive distance ratios.
    pub contraction_ratios: Vec<f64>,
}

impl PicardOutcome {
    /// Largest ratio among the iterations once the distance has dropped below `threshold`.
    pub fn contraction_below(&self, threshold: f64) -> Option<f64> {
        self.distances
            .windows(2)
            .filter(|w| w[0] <= threshold)
            .map(|w| w[1] / w[0])
            .filter(|r| r.is_finite())
            .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))))
    }
}

/// Fixed point of the discretized Duhamel map on `[t0, t1]`, iterated from the free evolution.
pub fn picard_solve(
    model: &HartreeModel,
    u0: &FieldState,
    t0: f64,
    t1: f64,
    options: PicardOptions,
) -> Result<PicardOutcome> {
    let grid = model.grid();
    grid.check(u0)?;
    if !(t1 > t0) {
        return Err(Error::invalid("interval", format!("[{t0}, {t1}] is empty")));
    }
    if options.steps == 0 {
        return Err(Error::invalid("steps", "must be positive"));
    }
    if !(options.tol > 0.0) || options.max_iter == 0 {
        return Err(Error::invalid("tolerance", "tol and max_iter must be positive"));
    }
    let steps = options.steps;
    let h = (t1 - t0) / steps as f64;
    let step_phase = free_phases(grid, h);
    let base = grid.forward_values(u0.values());

    // Free evolution from u0 in spectral space at every sample.
    let mut free = Vec::with_capacity(steps + 1);
    free.push(base.clone());
    for k in 1..=steps {
        let prev: &Vec<Complex64> = &free[k - 1];
        free.push(prev.iter().zip(&step_phase).map(|(c, p)| c * p).collect::<Vec<_>>());
    }

    let coupling = model.params().coupling;
    let kernel = model.kernel();
    let force_spec = |spec: &[Complex64]| -> Vec<Complex64> {
        let values = grid.inverse_values(spec);
        let density: Vec<f64> = values.iter().map(|v| v.norm_sqr()).collect();
        let pot = kernel.apply_unchecked(&density);
        let f: Vec<Complex64> = values.iter().zip(&pot).map(|(v, p)| v * (coupling * p)).collect();
        grid.forward_values(&f)
    };

    let mut iterate = free.clone();
    let mut distances = Vec::new();
    let mut rises = 0;
    for iteration in 1..=options.max_iter {
        let forces: Vec<Vec<Complex64>> = iterate.iter().map(|s| force_spec(s)).collect();
        let mut next = Vec::with_capacity(steps + 1);
        next.push(base.clone());
        let mut duhamel = vec![Complex64::new(0.0, 0.0); base.len()];
        for k in 1..=steps {
            for m in 0..duhamel.len() {
                duhamel[m] = step_phase[m] * (duhamel[m] + 0.5 * h * forces[k - 1][m]) + 0.5 * h * forces[k][m];
            }
            let state: Vec<Complex64> = free[k]
                .iter()
                .zip(&duhamel)
                .map(|(a, d)| a - Complex64::i() * d)
                .collect();
            next.push(state);
        }
        let dist = next
            .iter()
            .zip(&iterate)
            .map(|(a, b)| {
                let diff: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
                h1dot_from_spectrum(grid, &diff)
            })
            .fold(0.0, f64::max);
        if !dist.is_finite() {
            return Err(Error::NonContraction { distances });
        }
        if let Some(&prev) = distances.last() {
            rises = if dist > prev { rises + 1 } else { 0 };
        }
        distances.push(dist);
        iterate = next;
        if rises >= 3 {
            return Err(Error::NonContraction { distances });
        }
        if dist <= options.tol {
            let states = iterate
                .iter()
                .enumerate()
                .map(|(k, spec)| FieldState::new(grid.clone(), grid.inverse_values(spec), t0 + k as f64 * h))
                .collect::<Result<Vec<_>>>()?;
            let trajectory = Trajectory::from_states(*model.params(), states, h, Integrator::Picard)?;
            let contraction_ratios = distances.windows(2).map(|w| w[1] / w[0]).collect();
            return Ok(PicardOutcome {
                trajectory,
                iterations: iteration,
                distances,
                contraction_ratios,
            });
        }
    }
    Err(Error::NotConverged {
        tol: options.tol,
        max_iter: options.max_iter,
        last: *distances.last().unwrap_or(&f64::NAN),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlinearity::mass;

    fn setup(len: usize, r_max: f64, coupling: f64) -> (Arc<RadialGrid>, HartreeModel) {
        let grid = RadialGrid::new(5, len, r_max).unwrap();
        let model = HartreeModel::new(grid.clone(), ModelParams::new(5, 4.0, coupling).unwrap()).unwrap();
        (grid, model)
    }

    fn max_diff(a: &FieldState, b: &FieldState) -> f64 {
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn free_identity_and_group_law() {
        let (grid, _) = setup(128, 15.0, 1.0);
        let u = FieldState::from_real_profile(grid.clone(), 0.0, |r| (-r * r).exp());
        let same = free_propagate(&grid, &u, 0.0).unwrap();
        assert!(max_diff(&same, &u) < 1e-13);
        let a = free_propagate(&grid, &free_propagate(&grid, &u, 0.1).unwrap(), 0.25).unwrap();
        let b = free_propagate(&grid, &u, 0.35).unwrap();
        assert!(max_diff(&a, &b) < 1e-10);
        assert!((b.time() - 0.35).abs() < 1e-15);
    }

    #[test]
    fn free_gaussian_center_modulus() {
        let (grid, _) = setup(256, 20.0, 1.0);
        let u = FieldState::from_real_profile(grid.clone(), 0.0, |r| (-r * r).exp());
        let t: f64 = 0.5;
        let v = free_propagate(&grid, &u, t).unwrap();
        let r1 = grid.nodes()[0];
        let z = Complex64::new(1.0, 4.0 * t);
        let exact = (z.powf(-2.5) * (-r1 * r1 / z).exp()).norm();
        assert!((v.values()[0].norm() - exact).abs() / exact < 1e-6);
        assert!(((1.0 + 16.0 * t * t).powf(-1.25) - exact).abs() / exact < 1e-3);
    }

    #[test]
    fn uncoupled_step_is_free_step() {
        let (grid, model) = setup(128, 15.0, 0.0);
        let u = FieldState::from_real_profile(grid.clone(), 0.0, |r| (-r * r).exp());
        let a = strang_step(&model, &u, 0.01).unwrap();
        let b = free_propagate(&grid, &u, 0.01).unwrap();
        assert!(max_diff(&a, &b) < 1e-14);
        assert!(strang_step(&model, &u, 0.0).is_err());
    }

    #[test]
    fn step_preserves_mass() {
        let (grid, model) = setup(128, 15.0, 1.0);
        let u = FieldState::from_real_profile(grid.clone(), 0.0, |r| 2.0 * (-r * r).exp());
        let m0 = mass(&grid, &u).unwrap();
        let v = strang_step(&model, &u, 0.01).unwrap();
        let m1 = mass(&grid, &v).unwrap();
        assert!((m1 - m0).abs() / m0 < 1e-13);
    }

    #[test]
    fn evolve_single_step_and_bookkeeping() {
        let (grid, model) = setup(64, 10.0, 1.0);
        let u = FieldState::from_real_profile(grid.clone(), 0.0, |r| (-r * r).exp());
        let traj = evolve(&model, &u, 0.01, 0.01, 1).unwrap();
        assert_eq!(traj.len(), 2);
        let direct = strang_step(&model, &u, 0.01).unwrap();
        assert!(max_diff(&traj.states()[1], &direct) < 1e-14);
        assert!(evolve(&model, &u, 0.015, 0.01, 1).is_err());
        assert!(evolve(&model, &u, 0.03, 0.01, 2).is_err());
        let traj = evolve(&model, &u, 0.04, 0.01, 2).unwrap();
        assert_eq!(traj.times().len(), 3);
        assert_eq!(traj.index_of(0.02).unwrap(), 1);
        assert!(matches!(traj.index_of(0.05), Err(Error::TimeOutOfRange { .. })));
        assert!(traj.index_of(0.01).is_err());
    }

    #[test]
    fn evolve_fused_matches_repeated_steps() {
        let (grid, model) = setup(64, 10.0, 1.0);
        let u = FieldState::from_real_profile(grid.clone(), 0.0, |r| 1.5 * (-r * r).exp());
        let traj = evolve(&model, &u, 0.05, 0.01, 5).unwrap();
        let mut v = u.clone();
        for _ in 0..5 {
            v = strang_step(&model, &v, 0.01).unwrap();
        }
        assert!(max_diff(traj.last(), &v) < 1e-13);
    }

    #[test]
    fn blow_up_reports_last_good_state() {
        let (grid, model) = setup(64, 10.0, 1.0);
        let mut u = FieldState::from_real_profile(grid.clone(), 0.0, |r| (-r * r).exp());
        u.values_mut()[3] = Complex64::new(1e200, 0.0);
        match evolve(&model, &u, 0.02, 0.01, 1) {
            Err(Error::NonFinite { steps, last_good, .. }) => {
                assert_eq!(steps, 1);
                assert_eq!(last_good.len(), 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn picard_uncoupled_is_free() {
        let (grid, model) = setup(64, 10.0, 0.0);
        let u = FieldState::from_real_profile(grid.clone(), 0.0, |r| (-r * r).exp());
        let out = picard_solve(
            &model,
            &u,
            0.0,
            0.1,
            PicardOptions {
                steps: 10,
                tol: 1e-12,
                max_iter: 10,
            },
        )
        .unwrap();
        assert_eq!(out.iterations, 1);
        let free = free_propagate(&grid, &u, 0.1).unwrap();
        assert!(max_diff(out.trajectory.last(), &free) < 1e-12);
    }

    #[test]
    fn picard_rejects_large_interval() {
        let (grid, model) = setup(64, 10.0, 1.0);
        let u = FieldState::from_real_profile(grid.clone(), 0.0, |r| 30.0 * (-r * r).exp());
        let res = picard_solve(
            &model,
            &u,
            0.0,
            2.0,
            PicardOptions {
                steps: 40,
                tol: 1e-12,
                max_iter: 60,
            },
        );
        assert!(matches!(
            res,
            Err(Error::NonContraction { .. }) | Err(Error::NotConverged { .. })
        ));
    }
}
