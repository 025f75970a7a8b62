//! Independent reference computations: direct quadratures, Monte-Carlo
//! estimates, Gaussian closed forms and a brute-force cascade.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::intervals::CascadeResult;
use crate::quadrature::{integrate, integrate_with_breaks};
use crate::radial::{gamma as gamma_fn, sphere_area, FieldState, RadialGrid};

/// Kummer's `1F1(a; b; -z)` for `z >= 0`, summed after the transformation
/// `1F1(a; b; -z) = e^{-z} 1F1(b - a; b; z)` so all terms are positive when `b > a`.
pub fn hyp1f1_negative(a: f64, b: f64, z: f64) -> f64 {
    let c = b - a;
    let (mut term, mut sum) = (1.0, 1.0);
    for k in 0..10_000 {
        let kf = k as f64;
        term *= (c + kf) / (b + kf) * z / (kf + 1.0);
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    (-z).exp() * sum
}

/// `(|x|^{-gamma} * e^{-a|x|^2})(r)` in `R^dim`.
pub fn gaussian_riesz(dim: usize, gamma: f64, a: f64, r: f64) -> f64 {
    let n = dim as f64;
    PI.powf(n / 2.0) * gamma_fn((n - gamma) / 2.0) / gamma_fn(n / 2.0)
        * a.powf((gamma - n) / 2.0)
        * hyp1f1_negative(gamma / 2.0, n / 2.0, a * r * r)
}

/// `\int_{R^dim} e^{-2|x|^2} dx`, the mass of `e^{-|x|^2}`.
pub fn gaussian_mass(dim: usize) -> f64 {
    (PI / 2.0).powf(dim as f64 / 2.0)
}

/// `||grad e^{-|x|^2}||_2^2`.
pub fn gaussian_h1dot_squared(dim: usize) -> f64 {
    dim as f64 * gaussian_mass(dim)
}

/// Transform of `e^{-|x|^2}` in the unitary convention.
pub fn gaussian_transform(dim: usize, xi: f64) -> f64 {
    2f64.powf(-(dim as f64) / 2.0) * (-xi * xi / 4.0).exp()
}

/// Free Schrödinger evolution of `e^{-|x|^2}`: `(1 + 4it)^{-n/2} e^{-|x|^2 / (1 + 4it)}`.
pub fn gaussian_free(dim: usize, t: f64, r: f64) -> Complex64 {
    let z = Complex64::new(1.0, 4.0 * t);
    z.powf(-(dim as f64) / 2.0) * (-r * r / z).exp()
}

/// `sup_x |u(t, x)| t^{n/2}` for the free Gaussian.
pub fn gaussian_dispersive_product(dim: usize, t: f64) -> f64 {
    let n = dim as f64;
    (1.0 + 16.0 * t * t).powf(-n / 4.0) * t.abs().powf(n / 2.0)
}

/// Sphere average of `|x - y|^{-gamma}` at `|x| = r`, `|y| = s`.
fn sphere_averaged_riesz(dim: usize, gamma: f64, r: f64, s: f64) -> f64 {
    let norm = sphere_area(dim - 1) / sphere_area(dim);
    let power = dim as i32 - 2;
    let gap = (r - s) * (r - s);
    let rs = r * s;
    let f = |theta: f64| {
        let h = (0.5 * theta).sin();
        theta.sin().powi(power) / (gap + 4.0 * rs * h * h).powf(0.5 * gamma)
    };
    let delta = ((r - s).abs() / rs.sqrt()).max(1e-12);
    let mut breaks = vec![0.0];
    let mut b = delta;
    while b < PI {
        breaks.push(b);
        b *= 4.0;
    }
    breaks.push(PI);
    norm * integrate_with_breaks(f, &breaks, 0.0, 1e-12)
}

/// `(|x|^{-gamma} * rho)(r)` by direct quadrature over `|y|` and the angle, for
/// a radial density supported in `[0, support]`.
pub fn riesz_direct(dim: usize, gamma: f64, density: &(dyn Fn(f64) -> f64 + Sync), support: f64, r: f64) -> f64 {
    let sigma = sphere_area(dim);
    let p = dim as i32 - 1;
    let f = |s: f64| density(s) * s.powi(p) * sphere_averaged_riesz(dim, gamma, r, s);
    let mut breaks = vec![0.0];
    if r < support {
        breaks.push(r);
    }
    breaks.push(support);
    sigma * integrate_with_breaks(f, &breaks, 1e-15, 1e-11)
}

/// `1/4 \int rho (|x|^{-gamma} * rho) dx` by nested direct quadrature.
pub fn potential_energy_direct(dim: usize, gamma: f64, density: &(dyn Fn(f64) -> f64 + Sync), support: f64) -> f64 {
    let sigma = sphere_area(dim);
    let p = dim as i32 - 1;
    let f = |r: f64| density(r) * r.powi(p) * riesz_direct(dim, gamma, density, support, r);
    0.25 * sigma * integrate(f, 0.0, support, 1e-14, 1e-9)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonteCarloEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Monte-Carlo estimate of the Morawetz interaction term
/// `\int\int_{|x|,|y| <= rho} gamma (|x||y| - x.y)(1/|x| + 1/|y|) |x-y|^{-gamma-2} density(|x|) density(|y|) dx dy`.
///
/// `(r, s)` are drawn uniformly on `[0, rho]^2` and the relative angle with
/// density proportional to `1 / (theta + delta)`, `delta = |r - s| / max(r, s)`,
/// which flattens the near-diagonal peak.
pub fn bilinear_monte_carlo(
    dim: usize,
    gamma: f64,
    density: &dyn Fn(f64) -> f64,
    rho: f64,
    samples: usize,
    seed: u64,
) -> MonteCarloEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = sphere_area(dim);
    let angular = sphere_area(dim - 1);
    let p = dim as i32 - 1;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let r: f64 = rho * rng.random::<f64>();
        let s: f64 = rho * rng.random::<f64>();
        let delta = ((r - s).abs() / r.max(s)).max(1e-300);
        let span = ((PI + delta) / delta).ln();
        let theta = delta * ((span * rng.random::<f64>()).exp() - 1.0);
        let pdf = 1.0 / ((theta + delta) * span);
        let dist2 = r * r + s * s - 2.0 * r * s * theta.cos();
        let weight = gamma * r * s * (1.0 - theta.cos()) * (1.0 / r + 1.0 / s) / dist2.powf(0.5 * (gamma + 2.0));
        let value = sigma
            * angular
            * r.powi(p)
            * s.powi(p)
            * density(r)
            * density(s)
            * weight
            * theta.sin().powi(dim as i32 - 2)
            * rho
            * rho
            / pdf;
        let value = if value.is_finite() { value } else { 0.0 };
        sum += value;
        sum_sq += value * value;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    MonteCarloEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
        samples,
    }
}

/// `||grad f||_2` from centred finite differences on the node values, with even reflection at the origin.
pub fn finite_difference_h1dot(grid: &RadialGrid, f: &FieldState) -> f64 {
    let v = f.values();
    let n = v.len();
    let dr = grid.spacing();
    let at = |i: isize| -> Complex64 {
        if i < 0 {
            v[(-i - 1) as usize]
        } else if i as usize >= n {
            Complex64::new(0.0, 0.0)
        } else {
            v[i as usize]
        }
    };
    let sum = grid.integrate((0..n as isize).map(|k| {
        // Fourth-order central difference.
        let d = (-at(k + 2) + 8.0 * at(k + 1) - 8.0 * at(k - 1) + at(k - 2)) / (12.0 * dr);
        d.norm_sqr()
    }));
    sum.sqrt()
}

/// Reference cascade: recursion over explicit gap lists, chain by nested-run search.
pub fn cascade_reference(lengths: &[f64], a: f64) -> Result<CascadeResult> {
    if !(a > 0.0 && a < 1.0) || lengths.is_empty() || lengths.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::invalid("tiling", "bad cascade input"));
    }
    let n = lengths.len();
    let mut generations: Vec<Option<usize>> = vec![None; n];
    let mut pending: Vec<(Vec<usize>, usize)> = vec![((0..n).collect(), 1)];
    while let Some((gap, generation)) = pending.pop() {
        if gap.is_empty() {
            continue;
        }
        let total: f64 = gap.iter().map(|&k| lengths[k]).sum();
        let longest = gap.iter().map(|&k| lengths[k]).fold(f64::MIN, f64::max);
        if longest < a * total * (1.0 - 1e-12) {
            return Err(Error::CascadeHypothesis {
                start: gap[0],
                end: gap[gap.len() - 1] + 1,
                longest,
                total,
            });
        }
        let chosen: Vec<usize> = gap.iter().copied().filter(|&k| lengths[k] > a * total / 2.0).collect();
        for &k in &chosen {
            generations[k] = Some(generation);
        }
        let mut run = Vec::new();
        let mut runs = Vec::new();
        for &k in &gap {
            if chosen.contains(&k) {
                runs.push(std::mem::take(&mut run));
            } else {
                run.push(k);
            }
        }
        runs.push(run);
        // Push in reverse so the leftmost gap is processed first; the order only matters for error reporting.
        for r in runs.into_iter().rev() {
            pending.push((r, generation + 1));
        }
    }
    let generations: Vec<usize> = generations.into_iter().map(|g| g.expect("all labelled")).collect();
    let depth = generations.iter().copied().max().unwrap_or(0);
    let deepest = (0..n).find(|&k| generations[k] == depth).expect("depth attained");
    let mut chain = Vec::new();
    for g in 1..=depth {
        let members: Vec<usize> = (0..n)
            .filter(|&k| generations[k] == g)
            .filter(|&k| {
                let (lo, hi) = if k < deepest { (k, deepest) } else { (deepest, k) };
                (lo..=hi).all(|m| generations[m] >= g)
            })
            .collect();
        let mut best = members[0];
        for &m in &members {
            if lengths[m] > lengths[best] {
                best = m;
            }
        }
        chain.push(if g == depth { deepest } else { best });
    }
    let t_star = lengths[..deepest].iter().sum::<f64>() + lengths[deepest] / 2.0;
    Ok(CascadeResult {
        a,
        lengths: lengths.to_vec(),
        generations,
        chain,
        t_star,
    })
}

/// Every ordered sequence of at most `max_parts` lengths `2^{-k}`, `k <= max_depth`, summing to one.
pub fn dyadic_tilings(max_parts: usize, max_depth: u32) -> Vec<Vec<f64>> {
    // Work in units of 2^{-max_depth}.
    let unit = 1u64 << max_depth;
    let mut out = Vec::new();
    let mut current = Vec::new();
    fn walk(
        remaining: u64,
        max_parts: usize,
        max_depth: u32,
        unit: u64,
        current: &mut Vec<u64>,
        out: &mut Vec<Vec<f64>>,
    ) {
        if remaining == 0 {
            out.push(current.iter().map(|&c| c as f64 / unit as f64).collect());
            return;
        }
        if current.len() == max_parts {
            return;
        }
        for k in 0..=max_depth {
            let piece = unit >> k;
            if piece <= remaining {
                current.push(piece);
                walk(remaining - piece, max_parts, max_depth, unit, current, out);
                current.pop();
            }
        }
    }
    walk(unit, max_parts, max_depth, unit, &mut current, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        assert!((gaussian_mass(5) - 3.0924).abs() < 1e-3);
        assert!((gaussian_h1dot_squared(5) - 15.462).abs() < 1e-3);
        assert!((gaussian_riesz(5, 4.0, 1.0, 0.0) - 23.3245).abs() < 1e-3);
        assert!((hyp1f1_negative(1.0, 2.0, 0.0) - 1.0).abs() < 1e-15);
        // 1F1(1; 2; -z) = (1 - e^{-z}) / z
        for z in [0.1_f64, 3.0, 40.0] {
            let exact = (1.0 - (-z).exp()) / z;
            assert!((hyp1f1_negative(1.0, 2.0, z) - exact).abs() < 1e-14 * exact.max(1e-3));
        }
        assert_eq!(gaussian_free(5, 0.0, 0.7), Complex64::new((-0.49f64).exp(), 0.0));
    }

    #[test]
    fn direct_riesz_matches_closed_form() {
        let density = |s: f64| (-s * s).exp();
        for r in [0.0, 0.5, 1.3, 4.0] {
            let v = riesz_direct(5, 4.0, &density, 12.0, r);
            let exact = gaussian_riesz(5, 4.0, 1.0, r);
            assert!((v - exact).abs() < 1e-8 * exact, "r = {r}: {v} vs {exact}");
        }
        let v = riesz_direct(7, 3.0, &density, 12.0, 0.8);
        let exact = gaussian_riesz(7, 3.0, 1.0, 0.8);
        assert!((v - exact).abs() < 1e-8 * exact);
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let density = |s: f64| (-2.0 * s * s).exp();
        let a = bilinear_monte_carlo(5, 4.0, &density, 1.0, 1000, 9);
        let b = bilinear_monte_carlo(5, 4.0, &density, 1.0, 1000, 9);
        assert_eq!(a, b);
        assert!(a.value > 0.0);
    }

    #[test]
    fn tiling_enumeration() {
        let t = dyadic_tilings(3, 2);
        // {1}, {1/2,1/2}, {1/2,1/4,1/4} x 3 orders
        assert_eq!(t.len(), 5);
        for tiling in dyadic_tilings(8, 7) {
            assert!((tiling.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }
}
