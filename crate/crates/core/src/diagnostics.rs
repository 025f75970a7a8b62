//! Local mass, localized Morawetz quantities, dispersive decay and scattering residuals.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evolution::Trajectory;
use crate::nonlinearity::HartreeModel;
use crate::quadrature::{gauss_legendre_on, integrate_with_breaks};
use crate::radial::{h1dot_from_spectrum, h1dot_norm, lp_norm_of, sphere_area, FieldState, RadialGrid};

/// Smooth cutoff equal to 1 on `[0, 1/2]` and 0 on `[1, inf)`, rescaled to radius `R`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BumpProfile {
    radius: f64,
}

fn smooth_step(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / x).exp();
        let b = (-1.0 / (1.0 - x)).exp();
        a / (a + b)
    }
}

fn smooth_step_derivative(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        0.0
    } else {
        let s = smooth_step(x);
        s * (1.0 - s) * (1.0 / (x * x) + 1.0 / ((1.0 - x) * (1.0 - x)))
    }
}

impl BumpProfile {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid("radius", format!("R = {radius} must be positive")));
        }
        Ok(BumpProfile { radius })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// `chi(s) = step(2 (1 - s))`.
    pub fn chi(s: f64) -> f64 {
        smooth_step(2.0 * (1.0 - s))
    }

    pub fn chi_prime(s: f64) -> f64 {
        -2.0 * smooth_step_derivative(2.0 * (1.0 - s))
    }

    /// `chi(r / R)`.
    pub fn value(&self, r: f64) -> f64 {
        Self::chi(r / self.radius)
    }

    /// `d/dr chi(r / R)`.
    pub fn derivative(&self, r: f64) -> f64 {
        Self::chi_prime(r / self.radius) / self.radius
    }
}

/// `\int |chi(|x|/R) u|^2 dx`.
pub fn local_mass(grid: &RadialGrid, u: &FieldState, radius: f64) -> Result<f64> {
    grid.check(u)?;
    let bump = BumpProfile::new(radius)?;
    Ok(grid.integrate(
        grid.nodes()
            .iter()
            .zip(u.values())
            .map(|(r, v)| bump.value(*r).powi(2) * v.norm_sqr()),
    ))
}

/// Exact time derivative of [`local_mass`], `2 \int d_r(chi^2) Im(conj(u) d_r u) dx`.
pub fn local_mass_flux(grid: &RadialGrid, u: &FieldState, radius: f64) -> Result<f64> {
    let bump = BumpProfile::new(radius)?;
    let du = grid.radial_derivative(u)?;
    Ok(2.0
        * grid.integrate(
            grid.nodes()
                .iter()
                .zip(u.values())
                .zip(&du)
                .map(|((r, v), d)| 2.0 * bump.value(*r) * bump.derivative(*r) * (v.conj() * d).im),
        ))
}

/// `(|M(t1)^{1/2} - M(t2)^{1/2}|, |t1 - t2| / R)` for the local mass at radius `R`.
pub fn local_mass_drift(traj: &Trajectory, radius: f64, t1: f64, t2: f64) -> Result<(f64, f64)> {
    let a = traj.state_at(t1)?;
    let b = traj.state_at(t2)?;
    let grid = traj.grid();
    let lhs = (local_mass(grid, a, radius)?.sqrt() - local_mass(grid, b, radius)?.sqrt()).abs();
    Ok((lhs, (t1 - t2).abs() / radius))
}

/// Constants measured for the local mass bounds along a trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalMassConstants {
    pub radius: f64,
    /// `max_t |d/dt M^{1/2}| R / ||grad u||_2`.
    pub drift: f64,
    /// `max |M^{1/2}(t_{k+1}) - M^{1/2}(t_k)| R / (t_{k+1} - t_k)` over consecutive samples.
    pub drift_sampled: f64,
    /// `max_t M / (R^2 ||grad u||_2^2)`.
    pub small_volume: f64,
}

pub fn local_mass_constants(traj: &Trajectory, radius: f64) -> Result<LocalMassConstants> {
    let grid = traj.grid();
    let rows = traj
        .states()
        .par_iter()
        .map(|u| -> Result<(f64, f64, f64)> {
            let m = local_mass(grid, u, radius)?;
            let flux = local_mass_flux(grid, u, radius)?;
            let g = h1dot_norm(grid, u)?;
            Ok((m, flux, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut drift: f64 = 0.0;
    let mut small_volume: f64 = 0.0;
    for &(m, flux, g) in &rows {
        if g > 0.0 {
            if m > 0.0 {
                drift = drift.max((flux / (2.0 * m.sqrt())).abs() * radius / g);
            }
            small_volume = small_volume.max(m / (radius * radius * g * g));
        }
    }
    let mut drift_sampled: f64 = 0.0;
    let dt = traj.dt_record();
    for w in rows.windows(2) {
        drift_sampled = drift_sampled.max((w[1].0.sqrt() - w[0].0.sqrt()).abs() * radius / dt);
    }
    Ok(LocalMassConstants {
        radius,
        drift,
        drift_sampled,
        small_volume,
    })
}

/// `a'(r)` for the multiplier `a(x) = |x| chi(|x|/R)`.
fn multiplier_slope(bump: &BumpProfile, r: f64) -> f64 {
    let s = r / bump.radius();
    BumpProfile::chi(s) + s * BumpProfile::chi_prime(s)
}

/// `V_0^a(t) = \int a |u|^2 dx` with `a(x) = |x| chi(|x|/R)`.
pub fn morawetz_weight(grid: &RadialGrid, u: &FieldState, radius: f64) -> Result<f64> {
    grid.check(u)?;
    let bump = BumpProfile::new(radius)?;
    Ok(grid.integrate(
        grid.nodes()
            .iter()
            .zip(u.values())
            .map(|(r, v)| r * bump.value(*r) * v.norm_sqr()),
    ))
}

/// `M_0^a = 2 Im \int grad a . grad u conj(u) dx`, the time derivative of [`morawetz_weight`].
pub fn morawetz_action(grid: &RadialGrid, u: &FieldState, radius: f64) -> Result<f64> {
    let bump = BumpProfile::new(radius)?;
    let du = grid.radial_derivative(u)?;
    Ok(2.0
        * grid.integrate(
            grid.nodes()
                .iter()
                .zip(u.values())
                .zip(&du)
                .map(|((r, v), d)| multiplier_slope(&bump, *r) * (d * v.conj()).im),
        ))
}

fn trapezoid(values: &[f64], dt: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => dt * (0.5 * (values[0] + values[n - 1]) + values[1..n - 1].iter().sum::<f64>()),
    }
}

/// `\int_I \int_{|x| <= A |I|^{1/2}} |u|^2 / |x|^3 dx dt`.
pub fn morawetz_linear_term(traj: &Trajectory, t1: f64, t2: f64, multiplier: f64) -> Result<f64> {
    if !(multiplier >= 1.0) {
        return Err(Error::invalid("A", format!("A = {multiplier} must be at least 1")));
    }
    let (lo, hi) = traj.index_range(t1, t2)?;
    let radius = multiplier * (t2 - t1).abs().sqrt();
    let grid = traj.grid();
    let ball = grid.ball_weights(radius);
    let per_time: Vec<f64> = traj.states()[lo..=hi]
        .iter()
        .map(|u| {
            grid.nodes()
                .iter()
                .zip(&ball)
                .zip(u.values())
                .map(|((r, w), v)| w * v.norm_sqr() / (r * r * r))
                .sum()
        })
        .collect();
    Ok(trapezoid(&per_time, traj.dt_record()))
}

/// Sphere average of the Morawetz interaction weight
/// `gamma (|x||y| - x.y)(1/|x| + 1/|y|) / |x - y|^{gamma + 2}` at `|x| = r`, `|y| = s`.
pub fn bilinear_kernel(dim: usize, gamma: f64, r: f64, s: f64) -> f64 {
    let norm = sphere_area(dim - 1) / sphere_area(dim);
    let power = dim as i32 - 2;
    let prefactor = gamma * r * s * (1.0 / r + 1.0 / s);
    let gap = (r - s) * (r - s);
    let rs = r * s;
    let half_exp = 0.5 * (gamma + 2.0);
    let integrand = |theta: f64| {
        let h = (0.5 * theta).sin();
        let h2 = h * h;
        2.0 * h2 * theta.sin().powi(power) / (gap + 4.0 * rs * h2).powf(half_exp)
    };
    let delta = ((r - s).abs() / rs.sqrt()).max(1e-12);
    let mut breaks = vec![0.0];
    let mut b = delta;
    while b < PI {
        breaks.push(b);
        b *= 4.0;
    }
    breaks.push(PI);
    norm * prefactor * integrate_with_breaks(integrand, &breaks, 0.0, 1e-11)
}

/// Tensor quadrature of the Morawetz interaction term over the ball `|x|, |y| <= rho`.
///
/// Cells touching the diagonal, where the sphere-averaged weight has a
/// logarithmic singularity, and cells near the origin use the average of the
/// weight against the volume element `r^{n-1} s^{n-1} dr ds`.
#[derive(Debug, Clone)]
pub struct BilinearTerm {
    grid: Arc<RadialGrid>,
    radius: f64,
    weights: Vec<f64>,
    kernel: Array2<f64>,
}

const CELL_ORDER: usize = 4;
/// Cells this close to the origin are averaged even off the diagonal, where the weight varies like `r^{-gamma-1}`.
const NEAR_ORIGIN_CELLS: usize = 8;
const DIAGONAL_BREAKS: i32 = 16;

impl BilinearTerm {
    pub fn new(grid: Arc<RadialGrid>, gamma: f64, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid("radius", format!("rho = {radius} must be positive")));
        }
        let dim = grid.dim();
        let weights: Vec<f64> = grid.ball_weights(radius).into_iter().take_while(|w| *w > 0.0).collect();
        let m = weights.len();
        let dr = grid.spacing();
        let nodes = &grid.nodes()[..m];
        let power = dim as i32 - 1;
        // Each cell, clipped to the ball, with a Gauss rule for the measure r^{n-1} dr normalized to unit mass.
        let cells: Vec<(f64, f64)> = nodes
            .iter()
            .map(|&r| ((r - 0.5 * dr).max(0.0), (r + 0.5 * dr).min(radius)))
            .collect();
        let rules: Vec<(Vec<f64>, Vec<f64>)> = cells
            .iter()
            .map(|&(a, b)| {
                let (x, w) = gauss_legendre_on(CELL_ORDER, a, b);
                let w: Vec<f64> = x.iter().zip(&w).map(|(x, w)| w * x.powi(power)).collect();
                let total: f64 = w.iter().sum();
                (x, w.into_iter().map(|v| v / total).collect())
            })
            .collect();
        let pairs: Vec<(usize, usize)> = (0..m).flat_map(|k| (k..m).map(move |l| (k, l))).collect();
        let values: Vec<f64> = pairs
            .par_iter()
            .map(|&(k, l)| {
                if l - k >= 2 && k >= NEAR_ORIGIN_CELLS {
                    bilinear_kernel(dim, gamma, nodes[k], nodes[l])
                } else if l != k {
                    let (xr, wr) = &rules[k];
                    let (xs, ws) = &rules[l];
                    let mut acc = 0.0;
                    for (a, wa) in xr.iter().zip(wr) {
                        for (b, wb) in xs.iter().zip(ws) {
                            acc += wa * wb * bilinear_kernel(dim, gamma, *a, *b);
                        }
                    }
                    acc
                } else {
                    // Symmetric in (r, s): twice the triangle below the diagonal.
                    let (lo, hi) = cells[k];
                    let (xr, wr) = gauss_legendre_on(2 * CELL_ORDER, lo, hi);
                    let mut acc = 0.0;
                    let mut mass = 0.0;
                    for (a, wa) in xr.iter().zip(&wr) {
                        let wa = wa * a.powi(power);
                        // Gauss panels shrinking geometrically towards the logarithmic singularity at b = a.
                        let f = |b: f64| b.powi(power) * bilinear_kernel(dim, gamma, *a, b);
                        let mut inner = 0.0;
                        let mut left = lo;
                        for j in 1..=DIAGONAL_BREAKS {
                            let right = a - (a - lo) * 0.25f64.powi(j);
                            let (xt, wt) = gauss_legendre_on(2 * CELL_ORDER, left, right);
                            inner += xt.iter().zip(&wt).map(|(x, w)| w * f(*x)).sum::<f64>();
                            left = right;
                        }
                        let (xt, wt) = gauss_legendre_on(2 * CELL_ORDER, left, *a);
                        inner += xt.iter().zip(&wt).map(|(x, w)| w * f(*x)).sum::<f64>();
                        acc += wa * inner;
                        mass += wa;
                    }
                    2.0 * acc / (mass * mass)
                }
            })
            .collect();
        let mut kernel = Array2::<f64>::zeros((m, m));
        for (&(k, l), v) in pairs.iter().zip(&values) {
            kernel[[k, l]] = *v;
            kernel[[l, k]] = *v;
        }
        Ok(BilinearTerm {
            grid,
            radius,
            weights,
            kernel,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Kernel values at every quadrature pair inside the ball.
    pub fn kernel_values(&self) -> &Array2<f64> {
        &self.kernel
    }

    pub fn evaluate(&self, u: &FieldState) -> Result<f64> {
        self.grid.check(u)?;
        let m = self.weights.len();
        let rho: Vec<f64> = u.values()[..m]
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| w * v.norm_sqr())
            .collect();
        let v = ndarray::ArrayView1::from(&rho[..]);
        Ok(v.dot(&self.kernel.dot(&v)))
    }
}

/// Interaction term of the Morawetz identity over `|x|, |y| <= rho` at one time.
pub fn morawetz_bilinear_term(grid: &Arc<RadialGrid>, u: &FieldState, gamma: f64, radius: f64) -> Result<f64> {
    BilinearTerm::new(grid.clone(), gamma, radius)?.evaluate(u)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MorawetzReport {
    pub t1: f64,
    pub t2: f64,
    pub multiplier: f64,
    pub radius: f64,
    pub linear_term: f64,
    pub bilinear_term: f64,
    pub energy: f64,
    pub rhs_scale: f64,
    pub ratio: f64,
}

/// Both sides of the localized Morawetz estimate on `[t1, t2]` with radius `A |I|^{1/2}`.
pub fn morawetz_budget(
    traj: &Trajectory,
    model: &HartreeModel,
    t1: f64,
    t2: f64,
    multiplier: f64,
) -> Result<MorawetzReport> {
    let (lo, hi) = traj.index_range(t1, t2)?;
    let linear_term = morawetz_linear_term(traj, t1, t2, multiplier)?;
    let radius = multiplier * (t2 - t1).abs().sqrt();
    let grid = traj.grid();
    let bilinear = BilinearTerm::new(grid.clone(), model.params().gamma, radius)?;
    let per_time = traj.states()[lo..=hi]
        .par_iter()
        .map(|u| bilinear.evaluate(u))
        .collect::<Result<Vec<_>>>()?;
    let bilinear_term = model.params().coupling * trapezoid(&per_time, traj.dt_record());
    let energy = model.energy(&traj.states()[lo])?.total;
    let rhs_scale = radius * energy;
    let ratio = if rhs_scale > 0.0 {
        (linear_term + bilinear_term) / rhs_scale
    } else {
        0.0
    };
    Ok(MorawetzReport {
        t1,
        t2,
        multiplier,
        radius,
        linear_term,
        bilinear_term,
        energy,
        rhs_scale,
        ratio,
    })
}

/// `(t, ||u(t)||_p |t|^{n (1/2 - 1/p)})` for every recorded time.
pub fn dispersive_decay_report(traj: &Trajectory, p: f64) -> Result<Vec<(f64, f64)>> {
    if p.is_nan() || p < 2.0 {
        return Err(Error::invalid("exponent", format!("p = {p}, need p >= 2")));
    }
    let grid = traj.grid();
    let exponent = grid.dim() as f64 * (0.5 - 1.0 / p);
    traj.states()
        .iter()
        .map(|u| {
            let norm = lp_norm_of(grid, u.values(), p)?;
            let t = u.time();
            Ok((t, norm * t.abs().powf(exponent)))
        })
        .collect()
}

/// `||U(-t1) u(t1) - U(-t2) u(t2)||_{H^1 dot}`.
pub fn scattering_residual(traj: &Trajectory, t1: f64, t2: f64) -> Result<f64> {
    let grid = traj.grid();
    let pull_back = |t: f64| -> Result<Vec<Complex64>> {
        let u = traj.state_at(t)?;
        let spec = grid.forward_values(u.values());
        Ok(spec
            .iter()
            .zip(grid.xi_nodes())
            .map(|(c, xi)| c * Complex64::from_polar(1.0, xi * xi * u.time()))
            .collect())
    };
    let a = pull_back(t1)?;
    let b = pull_back(t2)?;
    let diff: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    Ok(h1dot_from_spectrum(grid, &diff))
}
