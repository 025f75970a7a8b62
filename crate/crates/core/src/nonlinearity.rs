//! Riesz-potential convolution, the Hartree force and the conserved functionals.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::bessel::bessel_lambda;
use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;
use crate::radial::{gamma as gamma_fn, h1dot_norm, sphere_area, FieldState, RadialGrid, BOUNDARY_MASS_LIMIT};

/// Negative density entries below this are treated as round-off.
pub const DENSITY_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams {
    pub dim: usize,
    /// Exponent of the kernel `|x|^{-gamma}`.
    pub gamma: f64,
    /// Prefactor of the nonlinearity; `+1` is defocusing.
    pub coupling: f64,
}

impl ModelParams {
    pub fn new(dim: usize, gamma: f64, coupling: f64) -> Result<Self> {
        let p = ModelParams { dim, gamma, coupling };
        p.validate()?;
        Ok(p)
    }

    /// Energy-critical defocusing model `gamma = 4`, `coupling = 1`.
    pub fn critical(dim: usize) -> Self {
        ModelParams {
            dim,
            gamma: 4.0,
            coupling: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < self.dim as f64) {
            return Err(Error::invalid(
                "gamma",
                format!("gamma = {} must satisfy 0 < gamma < n = {}", self.gamma, self.dim),
            ));
        }
        if !self.coupling.is_finite() {
            return Err(Error::invalid("coupling", "must be finite"));
        }
        Ok(())
    }

    pub fn is_critical(&self) -> bool {
        self.gamma == 4.0 && self.dim >= 5
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyBreakdown {
    pub kinetic: f64,
    pub potential: f64,
    pub total: f64,
}

/// Constant `c` with `(|x|^{-gamma} * f)^ = c |xi|^{gamma-n} f^` in the unitary convention.
pub fn riesz_constant(dim: usize, gamma: f64) -> f64 {
    let n = dim as f64;
    PI.powf(n / 2.0) * 2f64.powf(n - gamma) * gamma_fn((n - gamma) / 2.0) / gamma_fn(gamma / 2.0)
}

/// Linear map `density -> |x|^{-gamma} * density` on a fixed grid.
///
/// `(V*rho)(r) = c \int_0^inf rho^(xi) xi^{gamma-1} Lambda(xi r) dxi` with
/// `Lambda(z) = z^{-nu} J_nu(z)` and `rho^(xi) = sum_j (w_j / sigma) Lambda(xi r_j) rho_j`.
/// The xi-integral runs to the grid Nyquist frequency `pi/dr` on Gauss-Legendre
/// panels of width `pi / r_max`, fine enough to resolve the oscillation of
/// `Lambda(xi r)` at every node. The resulting matrix is `S W` with `S`
/// symmetric, so the operator is self-adjoint in the quadrature inner product.
#[derive(Debug)]
pub struct RieszKernel {
    grid: Arc<RadialGrid>,
    gamma: f64,
    matrix: Array2<f64>,
}

const PANEL_ORDER: usize = 8;

impl RieszKernel {
    pub fn new(grid: Arc<RadialGrid>, gamma: f64) -> Result<Self> {
        let dim = grid.dim();
        if !(gamma > 0.0 && gamma < dim as f64) {
            return Err(Error::invalid(
                "gamma",
                format!("gamma = {gamma} must satisfy 0 < gamma < n = {dim}"),
            ));
        }
        let nu = grid.order();
        let n = grid.len();
        let (xs, ws) = xi_quadrature(&grid, gamma);

        let nodes = grid.nodes().to_vec();
        let chunk = 2048;
        let mut sym = Array2::<f64>::zeros((n, n));
        for start in (0..xs.len()).step_by(chunk) {
            let end = (start + chunk).min(xs.len());
            let mut block = Array2::<f64>::zeros((end - start, n));
            block
                .axis_iter_mut(Axis(0))
                .into_par_iter()
                .enumerate()
                .for_each(|(q, mut row)| {
                    let xi = xs[start + q];
                    let sw = ws[start + q].sqrt();
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = sw * bessel_lambda(nu, xi * nodes[j]);
                    }
                });
            sym += &block.t().dot(&block);
        }
        let scale = riesz_constant(dim, gamma) / sphere_area(dim);
        let weights = grid.weights();
        let mut matrix = sym;
        for ((_, j), v) in matrix.indexed_iter_mut() {
            *v *= scale * weights[j];
        }
        Ok(RieszKernel { grid, gamma, matrix })
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `(|x|^{-gamma} * density)` at the grid nodes.
    pub fn apply(&self, density: &[f64]) -> Result<Vec<f64>> {
        if density.len() != self.grid.len() {
            return Err(Error::invalid(
                "density",
                format!("{} values for a grid of {} nodes", density.len(), self.grid.len()),
            ));
        }
        if let Some((index, &value)) = density
            .iter()
            .enumerate()
            .find(|(_, v)| **v < -DENSITY_TOLERANCE || v.is_nan())
        {
            return Err(Error::NegativeDensity { index, value });
        }
        Ok(self.apply_unchecked(density))
    }

    pub(crate) fn apply_unchecked(&self, density: &[f64]) -> Vec<f64> {
        let v = ndarray::ArrayView1::from(density);
        self.matrix.dot(&v).to_vec()
    }
}

/// Frequency nodes on `[0, pi/dr]` and weights including `xi^{gamma-1}`.
fn xi_quadrature(grid: &RadialGrid, gamma: f64) -> (Vec<f64>, Vec<f64>) {
    let width = PI / grid.r_max();
    let cutoff = PI / grid.spacing();
    let panels = (cutoff / width).ceil() as usize;
    let (gx, gw) = gauss_legendre(PANEL_ORDER);
    let mut xs = Vec::with_capacity(panels * PANEL_ORDER);
    let mut ws = Vec::with_capacity(panels * PANEL_ORDER);
    for p in 0..panels {
        let a = p as f64 * width;
        for (t, w) in gx.iter().zip(&gw) {
            let u = 0.5 * (t + 1.0);
            if p == 0 && gamma < 1.0 {
                // xi = width * u^{1/gamma} absorbs the xi^{gamma-1} singularity.
                xs.push(width * u.powf(1.0 / gamma));
                ws.push(0.5 * w * width.powf(gamma) / gamma);
            } else {
                let xi = a + u * width;
                xs.push(xi);
                ws.push(0.5 * w * width * xi.powf(gamma - 1.0));
            }
        }
    }
    (xs, ws)
}

/// `(|x|^{-gamma} * density)` at arbitrary radii, including the origin, by the quadrature of [`RieszKernel`].
pub fn riesz_potential_at(grid: &RadialGrid, density: &[f64], gamma: f64, radii: &[f64]) -> Result<Vec<f64>> {
    let dim = grid.dim();
    if !(gamma > 0.0 && gamma < dim as f64) {
        return Err(Error::invalid(
            "gamma",
            format!("gamma = {gamma} must satisfy 0 < gamma < n = {dim}"),
        ));
    }
    if density.len() != grid.len() {
        return Err(Error::invalid(
            "density",
            format!("{} values for a grid of {} nodes", density.len(), grid.len()),
        ));
    }
    let nu = grid.order();
    let (xs, ws) = xi_quadrature(grid, gamma);
    let hat: Vec<f64> = xs
        .par_iter()
        .map(|&xi| {
            grid.nodes()
                .iter()
                .zip(grid.weights())
                .zip(density)
                .map(|((&r, &w), &rho)| w * rho * bessel_lambda(nu, xi * r))
                .sum()
        })
        .collect();
    let scale = riesz_constant(dim, gamma) / sphere_area(dim);
    Ok(radii
        .iter()
        .map(|&r| {
            scale
                * xs.iter()
                    .zip(&ws)
                    .zip(&hat)
                    .map(|((&xi, &w), &h)| w * h * bessel_lambda(nu, xi * r))
                    .sum::<f64>()
        })
        .collect())
}

/// One-shot convolution; builds a [`RieszKernel`] each call.
pub fn riesz_convolve(grid: &Arc<RadialGrid>, density: &[f64], gamma: f64) -> Result<Vec<f64>> {
    RieszKernel::new(grid.clone(), gamma)?.apply(density)
}

/// Grid, parameters and the precomputed convolution operator.
#[derive(Debug, Clone)]
pub struct HartreeModel {
    params: ModelParams,
    kernel: Arc<RieszKernel>,
}

impl HartreeModel {
    pub fn new(grid: Arc<RadialGrid>, params: ModelParams) -> Result<Self> {
        params.validate()?;
        if params.dim != grid.dim() {
            return Err(Error::invalid(
                "dimension",
                format!("model has n = {} but grid has n = {}", params.dim, grid.dim()),
            ));
        }
        let kernel = Arc::new(RieszKernel::new(grid, params.gamma)?);
        Ok(HartreeModel { params, kernel })
    }

    /// Same kernel with a different coupling constant.
    pub fn with_coupling(&self, coupling: f64) -> Self {
        HartreeModel {
            params: ModelParams {
                coupling,
                ..self.params
            },
            kernel: self.kernel.clone(),
        }
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        self.kernel.grid()
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn kernel(&self) -> &RieszKernel {
        &self.kernel
    }

    /// `V * |u|^2` without the coupling prefactor.
    pub fn potential(&self, u: &FieldState) -> Result<Vec<f64>> {
        self.grid().check(u)?;
        Ok(self.kernel.apply_unchecked(&u.density()))
    }

    pub fn force(&self, u: &FieldState) -> Result<FieldState> {
        let pot = self.potential(u)?;
        let c = self.params.coupling;
        let values = u.values().iter().zip(&pot).map(|(v, p)| v * (c * p)).collect();
        Ok(u.with_values(values))
    }

    pub fn energy(&self, u: &FieldState) -> Result<EnergyBreakdown> {
        let grid = self.grid();
        let h1 = h1dot_norm(grid, u)?;
        let density = u.density();
        let pot = self.kernel.apply_unchecked(&density);
        let kinetic = 0.5 * h1 * h1;
        let potential = 0.25 * self.params.coupling * grid.integrate(pot.iter().zip(&density).map(|(p, d)| p * d));
        Ok(EnergyBreakdown {
            kinetic,
            potential,
            total: kinetic + potential,
        })
    }
}

/// `f(u) = coupling (V * |u|^2) u`.
pub fn hartree_force(model: &HartreeModel, u: &FieldState) -> Result<FieldState> {
    model.force(u)
}

/// `\int |u|^2 dx`.
pub fn mass(grid: &RadialGrid, u: &FieldState) -> Result<f64> {
    grid.check(u)?;
    Ok(grid.integrate(u.values().iter().map(|v| v.norm_sqr())))
}

pub fn energy(model: &HartreeModel, u: &FieldState) -> Result<EnergyBreakdown> {
    model.energy(u)
}

#[derive(Clone, Debug)]
pub struct Rescaled {
    pub field: FieldState,
    /// False when the rescaled profile leaves the resolved spatial or spectral band.
    pub resolved: bool,
}

/// `u_lambda(x) = lambda^{(n-2)/2} u(lambda x)` by cubic interpolation of the radial profile.
pub fn rescale_field(grid: &Arc<RadialGrid>, u: &FieldState, lambda: f64) -> Result<Rescaled> {
    grid.check(u)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("scale", format!("lambda = {lambda} must be positive")));
    }
    let n = grid.dim() as f64;
    let amp = lambda.powf((n - 2.0) / 2.0);
    let values: Vec<Complex64> = grid
        .nodes()
        .iter()
        .map(|&r| amp * cubic_sample(grid, u.values(), lambda * r))
        .collect();

    // Spatial reach: mass of u beyond 0.9 lambda r_max ends up past 0.9 r_max.
    let cut = 0.9 * lambda * grid.r_max();
    let total: f64 = grid.integrate(u.values().iter().map(|v| v.norm_sqr()));
    let outer: f64 = grid
        .nodes()
        .iter()
        .zip(grid.weights())
        .zip(u.values())
        .filter(|((r, _), _)| **r > cut)
        .map(|((_, w), v)| w * v.norm_sqr())
        .sum();
    // Spectral reach: content of u above xi_max / lambda lands beyond xi_max.
    let spectral = grid.forward_values(u.values());
    let kcut = grid.xi_max() / lambda;
    let spec_total: f64 = grid.integrate_spectral(spectral.iter().map(|c| c.norm_sqr()));
    let spec_outer: f64 = grid
        .xi_nodes()
        .iter()
        .zip(grid.xi_weights())
        .zip(&spectral)
        .filter(|((k, _), _)| **k > kcut)
        .map(|((_, w), c)| w * c.norm_sqr())
        .sum();
    let frac = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    let resolved = frac(outer, total) <= BOUNDARY_MASS_LIMIT && frac(spec_outer, spec_total) <= BOUNDARY_MASS_LIMIT;
    Ok(Rescaled {
        field: FieldState::new(grid.clone(), values, u.time())?,
        resolved,
    })
}

/// Four-point Lagrange interpolation of a radial profile, even across the
/// origin and zero beyond `r_max`.
fn cubic_sample(grid: &RadialGrid, values: &[Complex64], r: f64) -> Complex64 {
    let n = values.len() as isize;
    let pos = r / grid.spacing() - 0.5;
    let base = pos.floor() as isize;
    let t = pos - base as f64;
    let at = |i: isize| -> Complex64 {
        let idx = if i < 0 { -i - 1 } else { i };
        if idx >= n {
            Complex64::new(0.0, 0.0)
        } else {
            values[idx as usize]
        }
    };
    let w = [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ];
    at(base - 1) * w[0] + at(base) * w[1] + at(base + 1) * w[2] + at(base + 2) * w[3]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, r_max: f64) -> Arc<RadialGrid> {
        RadialGrid::new(5, n, r_max).unwrap()
    }

    #[test]
    fn gamma_range_enforced() {
        assert!(ModelParams::new(5, 6.0, 1.0).is_err());
        assert!(ModelParams::new(5, 0.0, 1.0).is_err());
        assert!(ModelParams::new(5, 4.0, 1.0).unwrap().is_critical());
        assert!(!ModelParams::new(5, 3.0, 1.0).unwrap().is_critical());
        let g = grid(64, 10.0);
        assert!(RieszKernel::new(g.clone(), 5.0).is_err());
        assert!(HartreeModel::new(g, ModelParams::critical(6)).is_err());
    }

    #[test]
    fn negative_density_rejected() {
        let g = grid(64, 10.0);
        let k = RieszKernel::new(g.clone(), 4.0).unwrap();
        let mut d = vec![0.0; 64];
        d[3] = -1e-13;
        assert!(k.apply(&d).is_ok());
        d[5] = -1e-6;
        assert!(matches!(k.apply(&d), Err(Error::NegativeDensity { index: 5, .. })));
    }

    #[test]
    fn zero_density_gives_zero_potential() {
        let g = grid(64, 10.0);
        let p = riesz_convolve(&g, &vec![0.0; 64], 4.0).unwrap();
        assert!(p.iter().all(|v| *v == 0.0));
    }

    /// `|x|^{-4} * e^{-a|x|^2}` in five dimensions.
    fn gaussian_potential(a: f64, r: f64) -> f64 {
        // 4 pi^{5/2} / 3 * a^{-1/2} * 1F1(2; 5/2; -z), summed after Kummer's transformation
        let z = a * r * r;
        let (mut term, mut sum) = (1.0, 1.0);
        for k in 0..400 {
            let kf = k as f64;
            term *= (0.5 + kf) / (2.5 + kf) * z / (kf + 1.0);
            sum += term;
            if term.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        4.0 * PI.powf(2.5) / 3.0 / a.sqrt() * (-z).exp() * sum
    }

    #[test]
    fn off_grid_potential() {
        let g = grid(256, 20.0);
        let rho: Vec<f64> = g.nodes().iter().map(|r| (-r * r).exp()).collect();
        let on_grid = riesz_convolve(&g, &rho, 4.0).unwrap();
        let at = riesz_potential_at(&g, &rho, 4.0, &[0.0, g.nodes()[10]]).unwrap();
        assert!((at[0] - 4.0 * PI.powf(2.5) / 3.0).abs() < 1e-10 * at[0]);
        assert!((at[1] - on_grid[10]).abs() < 1e-12 * at[1]);
    }

    #[test]
    fn gaussian_potential_matches_closed_form() {
        let g = grid(256, 20.0);
        let density: Vec<f64> = g.nodes().iter().map(|r| (-r * r).exp()).collect();
        let p = riesz_convolve(&g, &density, 4.0).unwrap();
        for (k, &r) in g.nodes().iter().enumerate().filter(|(_, r)| **r < 4.0) {
            let exact = gaussian_potential(1.0, r);
            assert!((p[k] - exact).abs() / exact < 1e-11, "r = {r}: {} vs {exact}", p[k]);
        }
        assert!((gaussian_potential(1.0, 0.0) - 23.3246).abs() < 1e-3);
    }

    #[test]
    fn far_field_decays_like_mass() {
        let g = grid(256, 20.0);
        let density: Vec<f64> = g.nodes().iter().map(|r| (-r * r).exp()).collect();
        let p = riesz_convolve(&g, &density, 4.0).unwrap();
        let m = g.integrate(density.iter().copied());
        let k = g.nodes().iter().position(|r| *r > 0.8 * g.r_max()).unwrap();
        let r = g.nodes()[k];
        assert!((p[k] * r.powi(4) / m - 1.0).abs() < 1e-2, "{}", p[k] * r.powi(4) / m);
    }

    #[test]
    fn kernel_is_self_adjoint() {
        let g = grid(128, 12.0);
        let k = RieszKernel::new(g.clone(), 4.0).unwrap();
        let f: Vec<f64> = g.nodes().iter().map(|r| (-r * r).exp()).collect();
        let h: Vec<f64> = g.nodes().iter().map(|r| (1.0 + r * r) * (-0.5 * r * r).exp()).collect();
        let kf = k.apply(&f).unwrap();
        let kh = k.apply(&h).unwrap();
        let a = g.integrate(kf.iter().zip(&h).map(|(x, y)| x * y));
        let b = g.integrate(kh.iter().zip(&f).map(|(x, y)| x * y));
        assert!((a - b).abs() / a.abs() < 1e-8, "{a} vs {b}");
    }

    #[test]
    fn force_of_real_field_is_real() {
        let g = grid(128, 12.0);
        let model = HartreeModel::new(g.clone(), ModelParams::critical(5)).unwrap();
        let u = FieldState::from_real_profile(g.clone(), 0.0, |r| (-r * r).exp());
        let f = model.force(&u).unwrap();
        assert!(f.values().iter().all(|v| v.im == 0.0 && v.re > 0.0));
        let r1 = g.nodes()[0];
        let expected = gaussian_potential(2.0, r1) * (-r1 * r1).exp();
        assert!(
            (f.values()[0].re - expected).abs() / expected < 1e-3,
            "{} vs {expected}",
            f.values()[0].re
        );
        let z = model.force(&FieldState::zeros(g, 0.0)).unwrap();
        assert!(z.values().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn energy_of_zero_and_gauge_invariance() {
        let g = grid(128, 12.0);
        let model = HartreeModel::new(g.clone(), ModelParams::critical(5)).unwrap();
        let z = model.energy(&FieldState::zeros(g.clone(), 0.0)).unwrap();
        assert_eq!((z.kinetic, z.potential, z.total), (0.0, 0.0, 0.0));
        let u = FieldState::from_real_profile(g.clone(), 0.0, |r| (-r * r).exp());
        let e = model.energy(&u).unwrap();
        assert!((e.kinetic - 7.731).abs() < 1e-3);
        for theta in [0.3, 1.7, -2.2] {
            let v = u.scaled(Complex64::from_polar(1.0, theta));
            let ev = model.energy(&v).unwrap();
            assert!((ev.total - e.total).abs() < 1e-12 * e.total);
        }
        let m = mass(&g, &u).unwrap();
        let m3 = mass(&g, &u.scaled(Complex64::new(0.0, 3.0))).unwrap();
        assert!((m3 - 9.0 * m).abs() < 1e-12 * m3);
    }

    #[test]
    fn rescale_identity() {
        let g = grid(128, 12.0);
        let u = FieldState::from_real_profile(g.clone(), 0.0, |r| (-r * r).exp());
        let r = rescale_field(&g, &u, 1.0).unwrap();
        assert!(r.resolved);
        for (a, b) in r.field.values().iter().zip(u.values()) {
            assert!((a - b).norm() < 1e-15);
        }
        assert!(rescale_field(&g, &u, 0.0).is_err());
    }

    #[test]
    fn rescale_flags_unresolved() {
        let g = grid(128, 12.0);
        let wide = FieldState::from_real_profile(g.clone(), 0.0, |r| (-r * r / 16.0).exp());
        assert!(!rescale_field(&g, &wide, 0.25).unwrap().resolved);
    }
}
