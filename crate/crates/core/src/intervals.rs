//! Spacetime norms, the eta-partition of time, exceptional intervals, bubbles,
//! the interval cascade and the non-evacuation count.

use std::fmt;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::diagnostics::local_mass;
use crate::error::{Error, Result};
use crate::evolution::Trajectory;
use crate::radial::{h1dot_from_spectrum, lp_norm_of, RadialGrid};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SixConstants {
    pub c1: u32,
    pub c2: u32,
    pub c3: u32,
    pub eta: f64,
}

impl SixConstants {
    pub const DEFAULT_ETA: f64 = 0.3;

    /// `C1 = 6n`, `C2 = 3`, `C3 = 18n`.
    pub fn for_dimension(dim: usize) -> Self {
        SixConstants {
            c1: 6 * dim as u32,
            c2: 3,
            c3: 18 * dim as u32,
            eta: Self::DEFAULT_ETA,
        }
    }

    /// Small constants under which the exceptional/unexceptional split is non-degenerate on desk-scale runs.
    pub fn pedagogical() -> Self {
        SixConstants {
            c1: 2,
            c2: 3,
            c3: 3,
            eta: Self::DEFAULT_ETA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::invalid("eta", format!("eta = {} must lie in (0, 1)", self.eta)));
        }
        if self.c1 == 0 || self.c2 == 0 || self.c3 == 0 {
            return Err(Error::invalid("constants", "C1, C2, C3 must be positive"));
        }
        Ok(())
    }

    /// `ln(eta^power)`, usable where the power itself over- or underflows.
    pub fn ln_eta_pow(&self, power: f64) -> f64 {
        power * self.eta.ln()
    }

    pub fn eta_pow(&self, power: f64) -> f64 {
        self.ln_eta_pow(power).exp()
    }
}

/// Lebesgue exponent of the spatial part of the X norm, `6n / (3n - 8)`.
pub fn x_exponent(dim: usize) -> f64 {
    let n = dim as f64;
    6.0 * n / (3.0 * n - 8.0)
}

/// Lebesgue exponent of the spatial part of the W norm, `6n / (3n - 4)`.
pub fn w_exponent(dim: usize) -> f64 {
    let n = dim as f64;
    6.0 * n / (3.0 * n - 4.0)
}

/// Piecewise-linear time density on uniform samples; integrals are exact for the interpolant.
#[derive(Clone, Debug)]
struct SampledDensity<'a> {
    t0: f64,
    dt: f64,
    values: &'a [f64],
    /// Trapezoid integral up to each sample.
    prefix: Vec<f64>,
}

impl<'a> SampledDensity<'a> {
    fn new(t0: f64, dt: f64, values: &'a [f64]) -> Self {
        let mut prefix = Vec::with_capacity(values.len());
        let mut acc = 0.0;
        prefix.push(acc);
        for w in values.windows(2) {
            acc += 0.5 * (w[0] + w[1]) * dt;
            prefix.push(acc);
        }
        SampledDensity { t0, dt, values, prefix }
    }

    fn end(&self) -> f64 {
        self.t0 + self.dt * (self.values.len() - 1) as f64
    }

    /// `\int_{t0}^{t} density`.
    fn cumulative(&self, t: f64) -> f64 {
        let n = self.values.len();
        if n < 2 || t <= self.t0 {
            return 0.0;
        }
        let pos = ((t - self.t0) / self.dt).min((n - 1) as f64);
        let k = (pos.floor() as usize).min(n - 2);
        let full = self.prefix[k];
        let s = (pos - k as f64) * self.dt;
        let (a, b) = (self.values[k], self.values[k + 1]);
        full + a * s + 0.5 * (b - a) * s * s / self.dt
    }

    fn integral(&self, a: f64, b: f64) -> f64 {
        self.cumulative(b) - self.cumulative(a)
    }

    /// Smallest `t >= start` with `\int_start^t density = target`, or `None` if the run ends first.
    fn reach(&self, start: f64, target: f64) -> Option<f64> {
        let base = self.cumulative(start);
        let end = self.end();
        if self.cumulative(end) - base < target {
            return None;
        }
        let (mut lo, mut hi) = (start, end);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cumulative(mid) - base >= target {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-15 * hi.abs().max(self.dt) {
                break;
            }
        }
        Some(hi)
    }
}

fn check_interval(traj: &Trajectory, t1: f64, t2: f64) -> Result<()> {
    let slack = 1e-9 * traj.dt_record();
    if t1 > t2 {
        return Err(Error::invalid("interval", format!("[{t1}, {t2}] is reversed")));
    }
    for t in [t1, t2] {
        if t < traj.start() - slack || t > traj.end() + slack {
            return Err(Error::TimeOutOfRange {
                time: t,
                start: traj.start(),
                end: traj.end(),
            });
        }
    }
    Ok(())
}

/// `||u(t)||_{L^{6n/(3n-8)}}^6` at every sample.
pub fn x_density(traj: &Trajectory) -> &[f64] {
    traj.cached_x_density(|| {
        let grid = traj.grid();
        let q = x_exponent(grid.dim());
        traj.states()
            .par_iter()
            .map(|u| lp_norm_of(grid, u.values(), q).map(|v| v.powi(6)).unwrap_or(f64::NAN))
            .collect()
    })
}

/// `||grad u(t)||_{L^{6n/(3n-4)}}^3` at every sample.
pub fn w_density(traj: &Trajectory) -> &[f64] {
    traj.cached_w_density(|| {
        let grid = traj.grid();
        let q = w_exponent(grid.dim());
        traj.states()
            .par_iter()
            .map(|u| {
                grid.radial_derivative(u)
                    .and_then(|d| lp_norm_of(grid, &d, q))
                    .map(|v| v.powi(3))
                    .unwrap_or(f64::NAN)
            })
            .collect()
    })
}

fn density_view<'a>(traj: &Trajectory, values: &'a [f64]) -> SampledDensity<'a> {
    SampledDensity::new(traj.start(), traj.dt_record(), values)
}

/// `(\int_{t1}^{t2} ||u||^6_{L^{6n/(3n-8)}} dt)^{1/6}`.
pub fn x_norm(traj: &Trajectory, t1: f64, t2: f64) -> Result<f64> {
    check_interval(traj, t1, t2)?;
    Ok(density_view(traj, x_density(traj))
        .integral(t1, t2)
        .max(0.0)
        .powf(1.0 / 6.0))
}

/// `(\int_{t1}^{t2} ||grad u||^3_{L^{6n/(3n-4)}} dt)^{1/3}`.
pub fn w_norm(traj: &Trajectory, t1: f64, t2: f64) -> Result<f64> {
    check_interval(traj, t1, t2)?;
    Ok(density_view(traj, w_density(traj))
        .integral(t1, t2)
        .max(0.0)
        .powf(1.0 / 3.0))
}

/// `sup_t ||u(t) - U(t - t1) u(t1)||_{H^1 dot} / (||u||_X^2 ||u||_W)` over `[t1, t2]`.
pub fn nonlinear_estimate_ratio(traj: &Trajectory, t1: f64, t2: f64) -> Result<f64> {
    let (lo, hi) = traj.index_range(t1, t2)?;
    let grid = traj.grid();
    let states = traj.states();
    let base = grid.forward_values(states[lo].values());
    let t0 = states[lo].time();
    let increment = states[lo..=hi]
        .par_iter()
        .map(|u| {
            let spec = grid.forward_values(u.values());
            let diff: Vec<Complex64> = spec
                .iter()
                .zip(&base)
                .zip(grid.xi_nodes())
                .map(|((c, b), xi)| c - b * Complex64::from_polar(1.0, -xi * xi * (u.time() - t0)))
                .collect();
            h1dot_from_spectrum(grid, &diff)
        })
        .reduce(|| 0.0, f64::max);
    let x = x_norm(traj, t1, t2)?;
    let w = w_norm(traj, t1, t2)?;
    let denom = x * x * w;
    Ok(if denom > 0.0 { increment / denom } else { 0.0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntervalLabel {
    Exceptional,
    Unexceptional,
}

impl fmt::Display for IntervalLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IntervalLabel::Exceptional => "exceptional",
            IntervalLabel::Unexceptional => "unexceptional",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeInterval {
    pub start: f64,
    pub end: f64,
    pub x_norm: f64,
    /// Final partial interval, exempt from the `[eta/2, eta]` window.
    pub tail: bool,
    pub label: Option<IntervalLabel>,
    /// Largest X norm of the two endpoint free evolutions on this interval.
    pub free_x_norm: Option<f64>,
}

impl TimeInterval {
    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntervalTiling {
    pub eta: f64,
    pub intervals: Vec<TimeInterval>,
    /// X norm of the whole run.
    pub total_x_norm: f64,
}

impl IntervalTiling {
    pub fn start(&self) -> f64 {
        self.intervals.first().map_or(0.0, |i| i.start)
    }

    pub fn end(&self) -> f64 {
        self.intervals.last().map_or(0.0, |i| i.end)
    }

    /// Non-tail intervals whose X norm leaves `[eta/2, eta]` (beyond round-off).
    ///
    /// Interval norms are differences of cumulative sixth-power integrals, so their
    /// round-off grows like `eps (total / eta)^6` when the run is finely subdivided.
    pub fn out_of_window(&self) -> Vec<usize> {
        let conditioning = (self.total_x_norm / self.eta).powi(6);
        let tol = (1e-12 + 16.0 * f64::EPSILON * conditioning) * self.eta;
        self.intervals
            .iter()
            .enumerate()
            .filter(|(_, i)| !i.tail && (i.x_norm < 0.5 * self.eta - tol || i.x_norm > self.eta + tol))
            .map(|(k, _)| k)
            .collect()
    }

    /// Largest amount by which a non-tail interval exceeds `eta`.
    pub fn overshoot(&self) -> f64 {
        self.intervals
            .iter()
            .filter(|i| !i.tail)
            .map(|i| (i.x_norm - self.eta).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn unexceptional(&self) -> impl Iterator<Item = (usize, &TimeInterval)> {
        self.intervals
            .iter()
            .enumerate()
            .filter(|(_, i)| i.label == Some(IntervalLabel::Unexceptional))
    }
}

/// Greedy left-to-right partition into intervals of X norm `eta`.
pub fn partition_by_x_norm(traj: &Trajectory, eta: f64) -> Result<IntervalTiling> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::invalid("eta", format!("eta = {eta} must be positive")));
    }
    let density = density_view(traj, x_density(traj));
    if density.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite X-norm density".into()));
    }
    let (t_start, t_end) = (traj.start(), traj.end());
    let total = density.integral(t_start, t_end).max(0.0);
    let total_x_norm = total.powf(1.0 / 6.0);
    let norm = |a: f64, b: f64| density.integral(a, b).max(0.0).powf(1.0 / 6.0);
    let tail = |a: f64| TimeInterval {
        start: a,
        end: t_end,
        x_norm: norm(a, t_end),
        tail: true,
        label: None,
        free_x_norm: None,
    };
    if total_x_norm < 2.0 * eta {
        return Ok(IntervalTiling {
            eta,
            intervals: vec![tail(t_start)],
            total_x_norm,
        });
    }
    let target = eta.powi(6);
    let mut intervals = Vec::new();
    let mut start = t_start;
    while let Some(end) = density.reach(start, target) {
        if end >= t_end {
            intervals.push(TimeInterval {
                start,
                end: t_end,
                x_norm: norm(start, t_end),
                tail: false,
                label: None,
                free_x_norm: None,
            });
            start = t_end;
            break;
        }
        intervals.push(TimeInterval {
            start,
            end,
            x_norm: norm(start, end),
            tail: false,
            label: None,
            free_x_norm: None,
        });
        start = end;
    }
    if start < t_end {
        intervals.push(tail(start));
    }
    Ok(IntervalTiling {
        eta,
        intervals,
        total_x_norm,
    })
}

/// X-norm densities of `U(t - t_-) u(t_-)` and `U(t - t_+) u(t_+)` at the trajectory samples.
fn endpoint_free_densities(traj: &Trajectory) -> (Vec<f64>, Vec<f64>) {
    let grid = traj.grid();
    let q = x_exponent(grid.dim());
    let density = |anchor: &crate::radial::FieldState| -> Vec<f64> {
        let spec = grid.forward_values(anchor.values());
        traj.states()
            .par_iter()
            .map(|u| {
                let s = u.time() - anchor.time();
                let evolved: Vec<Complex64> = spec
                    .iter()
                    .zip(grid.xi_nodes())
                    .map(|(c, xi)| c * Complex64::from_polar(1.0, -xi * xi * s))
                    .collect();
                lp_norm_of(grid, &grid.inverse_values(&evolved), q)
                    .map(|v| v.powi(6))
                    .unwrap_or(f64::NAN)
            })
            .collect()
    };
    (density(traj.first()), density(traj.last()))
}

/// Labels each interval exceptional iff a free evolution from either endpoint of the run exceeds `eta^{C3}` in X norm on it.
pub fn classify_exceptional(
    tiling: &IntervalTiling,
    traj: &Trajectory,
    constants: &SixConstants,
) -> Result<IntervalTiling> {
    constants.validate()?;
    let (minus, plus) = endpoint_free_densities(traj);
    let threshold = constants.eta_pow(constants.c3 as f64);
    let dm = density_view(traj, &minus);
    let dp = density_view(traj, &plus);
    let mut out = tiling.clone();
    for interval in &mut out.intervals {
        check_interval(traj, interval.start, interval.end)?;
        let a = dm.integral(interval.start, interval.end).max(0.0).powf(1.0 / 6.0);
        let b = dp.integral(interval.start, interval.end).max(0.0).powf(1.0 / 6.0);
        let free = a.max(b);
        interval.free_x_norm = Some(free);
        interval.label = Some(if free > threshold {
            IntervalLabel::Exceptional
        } else {
            IntervalLabel::Unexceptional
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BubbleRecord {
    pub index: usize,
    pub radius: f64,
    pub min_local_mass: f64,
    pub threshold: f64,
    pub ratio: f64,
    /// The bubble radius exceeds the grid.
    pub unresolved: bool,
    /// No mass at all near the origin on this interval.
    pub vacuous: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BubbleReport {
    pub records: Vec<BubbleRecord>,
    /// `sum_j |I_j|^{1/2}` over unexceptional intervals divided by `eta^{-13 C1} |I|^{1/2}`.
    pub control_ratio: f64,
}

/// Local mass at radius `eta^{-3 C1} |I_j|^{1/2}` on every unexceptional interval, against `eta^{C1} |I_j|`.
pub fn bubble_report(traj: &Trajectory, tiling: &IntervalTiling, constants: &SixConstants) -> Result<BubbleReport> {
    constants.validate()?;
    let grid: &RadialGrid = traj.grid();
    let c1 = constants.c1 as f64;
    let mut records = Vec::new();
    for (index, interval) in tiling.unexceptional() {
        let len = interval.length();
        let radius = (constants.ln_eta_pow(-3.0 * c1) + 0.5 * len.ln()).exp();
        let threshold = constants.eta_pow(c1) * len;
        let (mut lo, mut hi) = (
            traj.index_of_nearest(interval.start),
            traj.index_of_nearest(interval.end),
        );
        if traj.states()[lo].time() < interval.start - 1e-12 && lo < hi {
            lo += 1;
        }
        if traj.states()[hi].time() > interval.end + 1e-12 && hi > lo {
            hi -= 1;
        }
        let min_local_mass = if radius.is_finite() && radius > 0.0 {
            traj.states()[lo..=hi]
                .iter()
                .map(|u| local_mass(grid, u, radius))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold(f64::INFINITY, f64::min)
        } else {
            // Radius beyond floating range: every sample is fully inside the ball.
            traj.states()[lo..=hi]
                .iter()
                .map(|u| grid.integrate(u.values().iter().map(|v| v.norm_sqr())))
                .fold(f64::INFINITY, f64::min)
        };
        let ratio = if threshold > 0.0 {
            min_local_mass / threshold
        } else {
            f64::INFINITY
        };
        records.push(BubbleRecord {
            index,
            radius,
            min_local_mass,
            threshold,
            ratio,
            unresolved: !(radius <= grid.r_max()),
            vacuous: min_local_mass == 0.0,
        });
    }
    let total = tiling.end() - tiling.start();
    let sum: f64 = tiling.unexceptional().map(|(_, i)| i.length().sqrt()).sum();
    let control_ratio = if sum > 0.0 {
        (sum.ln() - constants.ln_eta_pow(-13.0 * constants.c1 as f64) - 0.5 * total.ln()).exp()
    } else {
        0.0
    };
    Ok(BubbleReport { records, control_ratio })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CascadeResult {
    pub a: f64,
    pub lengths: Vec<f64>,
    /// Generation of every interval, starting at 1.
    pub generations: Vec<usize>,
    /// Chain `j_1, ..., j_K` (0-based indices).
    pub chain: Vec<usize>,
    /// Midpoint of `I_{j_K}`, measured from the left end of the tiling.
    pub t_star: f64,
}

impl CascadeResult {
    pub fn k(&self) -> usize {
        self.chain.len()
    }

    pub fn start_of(&self, index: usize) -> f64 {
        self.lengths[..index].iter().sum()
    }

    /// Distance from `t` to interval `index`.
    pub fn distance(&self, index: usize, t: f64) -> f64 {
        let a = self.start_of(index);
        let b = a + self.lengths[index];
        if t < a {
            a - t
        } else if t > b {
            t - b
        } else {
            0.0
        }
    }

    /// `log N / log(2 / a)`.
    pub fn lower_bound(&self) -> f64 {
        (self.lengths.len() as f64).ln() / (2.0 / self.a).ln()
    }

    /// Dyadic decay along the chain, the distance bound to `t_star` and the lower bound on `K`.
    pub fn check_invariants(&self) -> Result<()> {
        let tol = 1e-12;
        for w in self.chain.windows(2) {
            let (a, b) = (self.lengths[w[0]], self.lengths[w[1]]);
            if a < 2.0 * b * (1.0 - tol) {
                return Err(Error::CascadeInvariant(format!(
                    "|I_{}| = {a} < 2 |I_{}| = {}",
                    w[0],
                    w[1],
                    2.0 * b
                )));
            }
        }
        for &j in &self.chain {
            let d = self.distance(j, self.t_star);
            let bound = 2.0 / self.a * self.lengths[j];
            if d > bound * (1.0 + tol) {
                return Err(Error::CascadeInvariant(format!(
                    "dist(I_{j}, t*) = {d} exceeds 2 |I_{j}| / a = {bound}"
                )));
            }
        }
        if (self.k() as f64) < self.lower_bound() - tol {
            return Err(Error::CascadeInvariant(format!(
                "K = {} below log N / log(2/a) = {}",
                self.k(),
                self.lower_bound()
            )));
        }
        Ok(())
    }
}

fn label_gap(lengths: &[f64], a: f64, start: usize, end: usize, generation: usize, out: &mut [usize]) -> Result<()> {
    if start >= end {
        return Ok(());
    }
    let total: f64 = lengths[start..end].iter().sum();
    let longest = lengths[start..end].iter().copied().fold(0.0, f64::max);
    if longest < a * total * (1.0 - 1e-12) {
        return Err(Error::CascadeHypothesis {
            start,
            end,
            longest,
            total,
        });
    }
    let cut = 0.5 * a * total;
    for k in start..end {
        if lengths[k] > cut {
            out[k] = generation;
        }
    }
    let mut gap_start = start;
    for k in start..=end {
        if k == end || out[k] == generation {
            label_gap(lengths, a, gap_start, k, generation + 1, out)?;
            gap_start = k + 1;
        }
    }
    Ok(())
}

/// Generation labels, the cascade chain and the concentration time for a tiling with the given lengths.
pub fn cascade_generations(lengths: &[f64], a: f64) -> Result<CascadeResult> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::invalid("a", format!("a = {a} must lie in (0, 1)")));
    }
    if lengths.is_empty() {
        return Err(Error::invalid("tiling", "no intervals"));
    }
    if let Some(bad) = lengths.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(Error::invalid(
            "tiling",
            format!("interval length {bad} must be positive"),
        ));
    }
    let mut generations = vec![0; lengths.len()];
    label_gap(lengths, a, 0, lengths.len(), 1, &mut generations)?;

    let depth = *generations.iter().max().expect("nonempty");
    let deepest = generations.iter().position(|g| *g == depth).expect("depth attained");
    let mut chain = Vec::with_capacity(depth);
    for g in 1..depth {
        // Gap of generation >= g around the deepest interval.
        let mut lo = deepest;
        while lo > 0 && generations[lo - 1] >= g {
            lo -= 1;
        }
        let mut hi = deepest;
        while hi + 1 < lengths.len() && generations[hi + 1] >= g {
            hi += 1;
        }
        let pick = (lo..=hi)
            .filter(|&k| generations[k] == g)
            .fold(None, |best: Option<usize>, k| match best {
                Some(b) if lengths[b] >= lengths[k] => Some(b),
                _ => Some(k),
            })
            .ok_or_else(|| Error::CascadeInvariant(format!("no generation-{g} interval encloses I_{deepest}")))?;
        chain.push(pick);
    }
    chain.push(deepest);
    let t_star = lengths[..deepest].iter().sum::<f64>() + 0.5 * lengths[deepest];
    let result = CascadeResult {
        a,
        lengths: lengths.to_vec(),
        generations,
        chain,
        t_star,
    };
    result.check_invariants()?;
    Ok(result)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Annulus {
    pub chain_position: usize,
    pub interval: usize,
    /// `log10` of the inner and outer radii `eta^{C1} |I|^{1/2}` and `eta^{-27 C1} |I|^{1/2}`.
    pub log10_inner: f64,
    pub log10_outer: f64,
    /// `\int_A |u(t*)|^{2n/(n-2)} dx` over the part of the annulus inside the grid.
    pub critical_mass: Option<f64>,
    /// Part of the annulus lies beyond `r_max`.
    pub exceeds_domain: Option<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NonEvacuationReport {
    pub spacing: usize,
    pub t_star: f64,
    /// Recorded time at which the annuli were evaluated.
    pub t_sample: Option<f64>,
    pub annuli: Vec<Annulus>,
    /// Arithmetic disjointness of consecutive sampled annuli.
    pub disjoint: bool,
    pub k: usize,
    pub log10_k_bound: f64,
    /// `log10 log10` of the interval-count bound `e^{eta^{-200 C1}}`.
    pub log10_log10_j_bound: f64,
    pub k_within_bound: bool,
}

/// Subsampling step `M = ceil(-56 C1 log2 eta)` along the chain.
pub fn annulus_spacing(constants: &SixConstants) -> usize {
    (-56.0 * constants.c1 as f64 * constants.eta.log2()).ceil().max(1.0) as usize
}

/// Annulus radii, disjointness and counting bounds of a cascade, without a field.
pub fn nonevacuation_geometry(cascade: &CascadeResult, constants: &SixConstants) -> Result<NonEvacuationReport> {
    constants.validate()?;
    let c1 = constants.c1 as f64;
    let ln10 = std::f64::consts::LN_10;
    let spacing = annulus_spacing(constants);
    let annuli: Vec<Annulus> = (0..cascade.k())
        .step_by(spacing)
        .map(|pos| {
            let j = cascade.chain[pos];
            let half_ln_len = 0.5 * cascade.lengths[j].ln();
            Annulus {
                chain_position: pos + 1,
                interval: j,
                log10_inner: (constants.ln_eta_pow(c1) + half_ln_len) / ln10,
                log10_outer: (constants.ln_eta_pow(-27.0 * c1) + half_ln_len) / ln10,
                critical_mass: None,
                exceeds_domain: None,
            }
        })
        .collect();
    let disjoint = annuli.windows(2).all(|w| w[1].log10_outer <= w[0].log10_inner + 1e-12);
    let log10_k_bound = -100.0 * c1 * constants.eta.log10();
    let log10_log10_j_bound = -200.0 * c1 * constants.eta.log10() + std::f64::consts::E.log10().log10();
    let k = cascade.k();
    Ok(NonEvacuationReport {
        spacing,
        t_star: cascade.t_star,
        t_sample: None,
        annuli,
        disjoint,
        k,
        log10_k_bound,
        log10_log10_j_bound,
        k_within_bound: (k as f64).log10() <= log10_k_bound,
    })
}

/// Energy in the disjoint annuli attached to the chain, evaluated at `t_origin + t_star`.
pub fn nonevacuation_count(
    traj: &Trajectory,
    cascade: &CascadeResult,
    t_origin: f64,
    constants: &SixConstants,
) -> Result<NonEvacuationReport> {
    let mut report = nonevacuation_geometry(cascade, constants)?;
    let grid = traj.grid();
    let t_star = t_origin + cascade.t_star;
    let slack = 1e-9 * traj.dt_record();
    if t_star < traj.start() - slack || t_star > traj.end() + slack {
        return Err(Error::TimeOutOfRange {
            time: t_star,
            start: traj.start(),
            end: traj.end(),
        });
    }
    let u = &traj.states()[traj.index_of_nearest(t_star)];
    let n = grid.dim() as f64;
    let p = 2.0 * n / (n - 2.0);
    let ln10 = std::f64::consts::LN_10;
    for annulus in &mut report.annuli {
        let inner = (annulus.log10_inner * ln10).exp();
        let outer = (annulus.log10_outer * ln10).exp().min(2.0 * grid.r_max());
        let mass = if inner >= grid.r_max() {
            0.0
        } else {
            let big = grid.ball_weights(outer);
            let small = grid.ball_weights(inner);
            big.iter()
                .zip(&small)
                .zip(u.values())
                .map(|((b, s), v)| (b - s) * v.norm().powf(p))
                .sum()
        };
        annulus.critical_mass = Some(mass);
        annulus.exceeds_domain = Some(annulus.log10_outer * ln10 > grid.r_max().ln());
    }
    report.t_star = t_star;
    report.t_sample = Some(u.time());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::Integrator;
    use crate::nonlinearity::ModelParams;
    use crate::radial::FieldState;
    use std::sync::Arc;

    fn constant_trajectory(grid: &Arc<RadialGrid>, amplitude: f64, dt: f64, count: usize) -> Trajectory {
        let states = (0..count)
            .map(|k| FieldState::from_real_profile(grid.clone(), k as f64 * dt, |r| amplitude * (-r * r).exp()))
            .collect();
        Trajectory::from_states(ModelParams::critical(5), states, dt, Integrator::Free).unwrap()
    }

    #[test]
    fn exponents() {
        assert!((x_exponent(5) - 30.0 / 7.0).abs() < 1e-15);
        assert!((w_exponent(5) - 30.0 / 11.0).abs() < 1e-15);
        let c = SixConstants::for_dimension(5);
        assert_eq!((c.c1, c.c2, c.c3), (30, 3, 90));
        assert!(SixConstants { eta: 1.0, ..c }.validate().is_err());
    }

    #[test]
    fn constant_profile_norms() {
        let grid = RadialGrid::new(5, 64, 8.0).unwrap();
        let traj = constant_trajectory(&grid, 1.0, 0.1, 11);
        let q = lp_norm_of(&grid, traj.first().values(), x_exponent(5)).unwrap();
        let x = x_norm(&traj, 0.0, 1.0).unwrap();
        assert!((x - q).abs() < 1e-12 * q);
        let x = x_norm(&traj, 0.05, 0.55).unwrap();
        assert!((x - 0.5f64.powf(1.0 / 6.0) * q).abs() < 1e-12 * q);
        let a = x_norm(&traj, 0.0, 0.37).unwrap().powi(6);
        let b = x_norm(&traj, 0.37, 1.0).unwrap().powi(6);
        assert!((a + b - q.powi(6)).abs() < 1e-12 * q.powi(6));
        assert!(x_norm(&traj, 0.0, 1.5).is_err());
        assert_eq!(x_norm(&traj, 0.3, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn uniform_density_partition() {
        let grid = RadialGrid::new(5, 64, 8.0).unwrap();
        let traj = constant_trajectory(&grid, 1.0, 0.1, 11);
        let d = x_density(&traj)[0];
        let eta = (d * 0.013).powf(1.0 / 6.0);
        let tiling = partition_by_x_norm(&traj, eta).unwrap();
        let full: Vec<_> = tiling.intervals.iter().filter(|i| !i.tail).collect();
        assert_eq!(full.len(), 76);
        for i in &full {
            assert!((i.length() - 0.013).abs() < 1e-12);
        }
        let sum: f64 = tiling.intervals.iter().map(|i| i.x_norm.powi(6)).sum();
        assert!((sum - d).abs() < 1e-12 * d);
        assert!(tiling.out_of_window().is_empty());
        assert!(tiling.intervals.last().unwrap().tail);
        let big = partition_by_x_norm(&traj, 10.0 * d.powf(1.0 / 6.0)).unwrap();
        assert_eq!(big.intervals.len(), 1);
        assert!(big.intervals[0].tail);
        assert!(partition_by_x_norm(&traj, 0.0).is_err());
    }

    #[test]
    fn cascade_single_and_simple() {
        let r = cascade_generations(&[1.0], 0.5).unwrap();
        assert_eq!((r.k(), r.chain.clone(), r.generations.clone()), (1, vec![0], vec![1]));
        let r = cascade_generations(&[0.5, 0.25, 0.125, 0.125], 0.25).unwrap();
        assert_eq!(r.generations, vec![1, 1, 2, 2]);
        assert_eq!(r.chain, vec![0, 2]);
        let r = cascade_generations(&[0.5, 0.25, 0.125, 0.125], 0.5).unwrap();
        assert_eq!(r.generations, vec![1, 2, 3, 3]);
        assert_eq!(r.chain, vec![0, 1, 2]);
        assert!((r.t_star - 0.8125).abs() < 1e-15);
        assert!(matches!(
            cascade_generations(&[0.25; 4], 0.5),
            Err(Error::CascadeHypothesis { start: 0, end: 4, .. })
        ));
        assert!(cascade_generations(&[1.0], 1.0).is_err());
    }

    #[test]
    fn spacing_gives_disjoint_annuli() {
        let c = SixConstants::pedagogical();
        let m = annulus_spacing(&c) as f64;
        // 2^{-M} <= eta^{56 C1}
        assert!(-m * 2f64.ln() <= c.ln_eta_pow(56.0 * c.c1 as f64));
    }
}
