use hartree_core::diagnostics::BilinearTerm;
use hartree_core::evolution::{evolve, free_propagate, Integrator, Trajectory};
use hartree_core::intervals::{cascade_generations, partition_by_x_norm};
use hartree_core::io::{parse_config, read_checkpoint, write_checkpoint};
use hartree_core::nonlinearity::{mass, riesz_potential_at, HartreeModel, ModelParams};
use hartree_core::oracles::{cascade_reference, dyadic_tilings, gaussian_free, gaussian_riesz, gaussian_transform};
use hartree_core::radial::{hankel_forward, hankel_inverse};
use hartree_core::{Error, FieldState, RadialGrid, Result};
use num_complex::Complex64;

use crate::CliError;

type Check = fn() -> Result<(bool, String)>;

const CHECKS: &[(&str, Check)] = &[
    ("hankel_round_trip", hankel_round_trip),
    ("gaussian_transform", transform_closed_form),
    ("riesz_origin", riesz_origin),
    ("mass_conservation", mass_conservation),
    ("free_evolution", free_evolution),
    ("bilinear_kernel_nonnegative", bilinear_nonnegative),
    ("cascade_reference", cascade_agreement),
    ("partition_window", partition_window),
    ("checkpoint_round_trip", checkpoint_round_trip),
    ("config_round_trip", config_round_trip),
];

pub fn run() -> Result<(), CliError> {
    let mut failed = Vec::new();
    for (name, check) in CHECKS {
        match check() {
            Ok((true, detail)) => println!("pass {name}: {detail}"),
            Ok((false, detail)) => {
                println!("FAIL {name}: {detail}");
                failed.push(*name);
            }
            Err(e) => {
                println!("FAIL {name}: {e}");
                failed.push(*name);
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(format!("failed: {}", failed.join(", "))))
    }
}

fn gaussian(len: usize, r_max: f64) -> Result<FieldState> {
    let grid = RadialGrid::new(5, len, r_max)?;
    Ok(FieldState::from_real_profile(grid, 0.0, |r| (-r * r).exp()))
}

fn hankel_round_trip() -> Result<(bool, String)> {
    let u = gaussian(128, 12.0)?;
    let grid = u.grid().clone();
    let back = hankel_inverse(&grid, &hankel_forward(&grid, &u)?, 0.0)?;
    let err = u
        .values()
        .iter()
        .zip(back.values())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    Ok((err < 1e-12, format!("max error {err:.3e}")))
}

fn transform_closed_form() -> Result<(bool, String)> {
    let u = gaussian(128, 12.0)?;
    let grid = u.grid().clone();
    let spec = hankel_forward(&grid, &u)?;
    let err = spec
        .iter()
        .zip(grid.xi_nodes())
        .map(|(c, &xi)| (c - Complex64::new(gaussian_transform(5, xi), 0.0)).norm())
        .fold(0.0, f64::max);
    Ok((err < 1e-10, format!("max error {err:.3e}")))
}

fn riesz_origin() -> Result<(bool, String)> {
    let u = gaussian(128, 12.0)?;
    let p = riesz_potential_at(
        u.grid(),
        &u.values().iter().map(|v| v.re).collect::<Vec<_>>(),
        4.0,
        &[0.0],
    )?[0];
    let exact = gaussian_riesz(5, 4.0, 1.0, 0.0);
    let err = (p - exact).abs() / exact;
    Ok((err < 1e-6, format!("{p:.8} vs {exact:.8}, relative error {err:.3e}")))
}

fn mass_conservation() -> Result<(bool, String)> {
    let u = gaussian(128, 12.0)?;
    let grid = u.grid().clone();
    let model = HartreeModel::new(grid.clone(), ModelParams::critical(5))?;
    let traj = evolve(&model, &u, 0.05, 1e-3, 10)?;
    let m0 = mass(&grid, traj.first())?;
    let drift = traj
        .states()
        .iter()
        .map(|s| mass(&grid, s).map(|m| (m - m0).abs() / m0))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok((drift < 1e-12, format!("relative drift {drift:.3e}")))
}

fn free_evolution() -> Result<(bool, String)> {
    let u = gaussian(256, 20.0)?;
    let grid = u.grid().clone();
    let v = free_propagate(&grid, &u, 0.5)?;
    let (mut num, mut den) = (0.0, 0.0);
    for ((a, &r), &w) in v.values().iter().zip(grid.nodes()).zip(grid.weights()) {
        let exact = gaussian_free(5, 0.5, r);
        num += w * (a - exact).norm_sqr();
        den += w * exact.norm_sqr();
    }
    let err = (num / den).sqrt();
    Ok((err < 1e-6, format!("relative L2 error {err:.3e}")))
}

fn bilinear_nonnegative() -> Result<(bool, String)> {
    let grid = RadialGrid::new(5, 64, 8.0)?;
    let term = BilinearTerm::new(grid, 4.0, 3.0)?;
    let values = term.kernel_values();
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((min >= 0.0, format!("{} pairs, minimum {min:.3e}", values.len())))
}

fn cascade_agreement() -> Result<(bool, String)> {
    let mut count = 0;
    for lengths in dyadic_tilings(8, 7) {
        for a in [0.25, 0.5] {
            count += 1;
            let same = match (cascade_generations(&lengths, a), cascade_reference(&lengths, a)) {
                (Ok(x), Ok(y)) => x.generations == y.generations && x.chain == y.chain && x.t_star == y.t_star,
                (Err(Error::CascadeHypothesis { .. }), Err(Error::CascadeHypothesis { .. })) => true,
                _ => false,
            };
            if !same {
                return Ok((false, format!("disagreement on {lengths:?} with a = {a}")));
            }
        }
    }
    Ok((true, format!("{count} tilings")))
}

fn partition_window() -> Result<(bool, String)> {
    let u = gaussian(64, 8.0)?;
    let grid = u.grid().clone();
    let states = (0..=20)
        .map(|k| free_propagate(&grid, &u, 0.05 * k as f64))
        .collect::<Result<Vec<_>>>()?;
    let traj = Trajectory::from_states(ModelParams::critical(5), states, 0.05, Integrator::Free)?;
    let tiling = partition_by_x_norm(&traj, 0.5 * tiling_scale(&traj)?)?;
    let out = tiling.out_of_window();
    Ok((
        out.is_empty() && tiling.intervals.len() > 1,
        format!("{} intervals, {} outside the window", tiling.intervals.len(), out.len()),
    ))
}

fn tiling_scale(traj: &Trajectory) -> Result<f64> {
    Ok(partition_by_x_norm(traj, f64::MAX)?.total_x_norm)
}

fn checkpoint_round_trip() -> Result<(bool, String)> {
    let dir = tempfile::tempdir()?;
    let u = gaussian(64, 8.0)?.scaled(Complex64::new(0.6, -0.8));
    let path = dir.path().join("u.hrtl");
    write_checkpoint(&path, &u)?;
    let v = read_checkpoint(&path, u.grid())?;
    let same = u.time() == v.time()
        && u.values()
            .iter()
            .zip(v.values())
            .all(|(a, b)| a.re.to_bits() == b.re.to_bits() && a.im.to_bits() == b.im.to_bits());
    Ok((same, "bit-identical".into()))
}

fn config_round_trip() -> Result<(bool, String)> {
    let c = parse_config("n = 5\n[grid]\npoints = 256\nr_max = 20\n[time]\ndt = 1e-3\nt_end = 1\n")?;
    let again = parse_config(&c.emit())?;
    Ok((
        again.emit() == c.emit() && again.constants() == c.constants(),
        "emit and re-parse agree".into(),
    ))
}
