use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use hartree_core::diagnostics::{
    bilinear_kernel, local_mass, local_mass_constants, morawetz_action, morawetz_bilinear_term, morawetz_budget,
};
use hartree_core::evolution::{evolve_with, free_propagate, Integrator, Trajectory};
use hartree_core::intervals::{
    bubble_report, cascade_generations, classify_exceptional, nonevacuation_count, nonevacuation_geometry,
    partition_by_x_norm, IntervalLabel, SixConstants,
};
use hartree_core::io::{
    cascade_report, format_float, parse_config, parse_tiling, read_checkpoint, read_csv, write_atomic,
    write_checkpoint, CsvTable, DiagnosticsRecord, RunConfig, OUTPUT_DIR_ENV,
};
use hartree_core::nonlinearity::{energy, mass, riesz_convolve, riesz_potential_at, HartreeModel};
use hartree_core::oracles::{
    bilinear_monte_carlo, cascade_reference, dyadic_tilings, gaussian_free, gaussian_h1dot_squared, gaussian_mass,
    gaussian_riesz, gaussian_transform, riesz_direct,
};
use hartree_core::radial::{h1dot_norm, hankel_forward, lp_norm};
use hartree_core::{Error, FieldState, RadialGrid, Result};

use crate::CliError;

const CONFIG_ECHO: &str = "config.toml";
const DIAGNOSTICS_CSV: &str = "diagnostics.csv";
const CHECKPOINT_DIR: &str = "checkpoints";
/// Records between checkpoints.
const CHECKPOINT_EVERY: usize = 10;

fn read_config(path: &Path) -> Result<RunConfig> {
    parse_config(&fs::read_to_string(path)?)
}

fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(CHECKPOINT_DIR).join(format!("step_{step:09}.hrtl"))
}

pub fn simulate(config_path: &Path) -> Result<(), CliError> {
    let config = read_config(config_path)?;
    let out = config.output_dir();
    fs::create_dir_all(out.join(CHECKPOINT_DIR))?;
    write_atomic(&out.join(CONFIG_ECHO), config.emit().as_bytes())?;

    let grid = config.build_grid()?;
    let model = config.build_model(grid.clone())?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let u0 = config.initial_state(&grid, base)?;
    let diag = &config.diagnostics;
    let mut table = CsvTable::new(&DiagnosticsRecord::header(&diag.radii))?;
    let record_every = config.time.record_every;

    let mut records = 0usize;
    let mut failure: Option<Error> = None;
    let mut energies = Vec::new();
    let mut masses = Vec::new();
    let mut last_checkpoint = None;
    let mut on_record = |u: &FieldState| {
        if failure.is_some() {
            return;
        }
        let outcome = (|| -> Result<()> {
            if diag.enabled {
                let rec = DiagnosticsRecord::compute(&model, u, &diag.radii, diag.morawetz_radius)?;
                energies.push(rec.energy);
                masses.push(rec.mass);
                table.push(&rec.fields())?;
            }
            if records.is_multiple_of(CHECKPOINT_EVERY) {
                let step = records * record_every;
                write_checkpoint(&checkpoint_path(&out, step), u)?;
                last_checkpoint = Some(step);
            }
            Ok(())
        })();
        if let Err(e) = outcome {
            failure = Some(e);
        }
        records += 1;
    };
    let evolved = evolve_with(
        &model,
        &u0,
        config.time.t_end,
        config.time.dt,
        record_every,
        &mut on_record,
    );
    if let Some(e) = failure {
        return Err(e.into());
    }
    let traj = match evolved {
        Ok(t) => t,
        Err(Error::NonFinite { time, steps, last_good }) => {
            let step = (last_good.len() - 1) * record_every;
            write_checkpoint(&checkpoint_path(&out, step), last_good.last())?;
            if diag.enabled {
                table.write(&out.join(DIAGNOSTICS_CSV))?;
            }
            return Err(Error::NonFinite { time, steps, last_good }.into());
        }
        Err(e) => return Err(e.into()),
    };
    let final_step = config.steps();
    if last_checkpoint != Some(final_step) {
        write_checkpoint(&checkpoint_path(&out, final_step), traj.last())?;
    }
    if diag.enabled {
        table.write(&out.join(DIAGNOSTICS_CSV))?;
        println!("energy_drift_max = {}", format_float(relative_drift(&energies)));
        println!("mass_drift_max = {}", format_float(relative_drift(&masses)));
    }
    println!("steps = {final_step}");
    println!("records = {}", traj.len());
    if traj.any_boundary_flag() {
        let first = traj.boundary_flags().iter().position(|&f| f).unwrap_or(0);
        eprintln!(
            "warning: boundary mass fraction exceeds the limit from t = {}",
            traj.states()[first].time()
        );
    }
    println!("output = {}", out.display());
    Ok(())
}

fn relative_drift(values: &[f64]) -> f64 {
    let Some(&first) = values.first() else { return 0.0 };
    let scale = first.abs().max(f64::MIN_POSITIVE);
    values.iter().map(|v| (v - first).abs() / scale).fold(0.0, f64::max)
}

struct Run {
    config: RunConfig,
    grid: Arc<RadialGrid>,
    model: HartreeModel,
    checkpoints: Vec<FieldState>,
}

fn load_run(dir: &Path) -> Result<Run> {
    let config = read_config(&dir.join(CONFIG_ECHO))?;
    let grid = config.build_grid()?;
    let model = config.build_model(grid.clone())?;
    let mut paths: Vec<PathBuf> = fs::read_dir(dir.join(CHECKPOINT_DIR))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "hrtl"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidParameter {
            name: "checkpoints",
            reason: format!("none found in {}", dir.display()),
        });
    }
    let checkpoints = paths
        .iter()
        .map(|p| read_checkpoint(p, &grid))
        .collect::<Result<Vec<_>>>()?;
    Ok(Run {
        config,
        grid,
        model,
        checkpoints,
    })
}

impl Run {
    /// Longest uniformly spaced prefix of the checkpoints.
    fn trajectory(&self) -> Result<Trajectory> {
        let states = &self.checkpoints;
        let mut count = states.len().min(2);
        if states.len() > 2 {
            let (t0, h) = (states[0].time(), states[1].time() - states[0].time());
            while count < states.len() && (states[count].time() - t0 - count as f64 * h).abs() <= 1e-9 * h {
                count += 1;
            }
        }
        Trajectory::from_states(
            self.config.model_params(),
            states[..count].to_vec(),
            self.config.time.dt,
            Integrator::Strang,
        )
    }
}

pub fn diagnose(dir: &Path) -> Result<(), CliError> {
    let run = load_run(dir)?;
    let diag = &run.config.diagnostics;
    let mut header: Vec<String> = ["t", "mass", "energy", "mass_drift", "energy_drift"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(diag.radii.iter().map(|r| format!("local_mass_{r}")));
    header.push("morawetz_action".into());
    let mut table = CsvTable::new(&header)?;
    let (mut m0, mut e0) = (0.0, 0.0);
    let (mut mass_drift, mut energy_drift) = (0.0f64, 0.0f64);
    for (k, u) in run.checkpoints.iter().enumerate() {
        let m = mass(&run.grid, u)?;
        let e = energy(&run.model, u)?.total;
        if k == 0 {
            (m0, e0) = (m, e);
        }
        let dm = (m - m0).abs() / m0.abs().max(f64::MIN_POSITIVE);
        let de = (e - e0).abs() / e0.abs().max(f64::MIN_POSITIVE);
        mass_drift = mass_drift.max(dm);
        energy_drift = energy_drift.max(de);
        let mut row = vec![u.time(), m, e, dm, de];
        for &r in &diag.radii {
            row.push(local_mass(&run.grid, u, r)?);
        }
        row.push(morawetz_action(&run.grid, u, diag.morawetz_radius)?);
        table.push(&row)?;
    }
    table.write(&dir.join("drift.csv"))?;

    let mut report = String::new();
    let _ = writeln!(report, "checkpoints = {}", run.checkpoints.len());
    let _ = writeln!(report, "mass_drift_max = {}", format_float(mass_drift));
    let _ = writeln!(report, "energy_drift_max = {}", format_float(energy_drift));
    let csv_path = dir.join(DIAGNOSTICS_CSV);
    if csv_path.exists() {
        let (names, rows) = read_csv(&csv_path)?;
        let column = |name: &str| -> Result<Vec<f64>> {
            let j = names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::InvalidParameter {
                    name: "diagnostics",
                    reason: format!("missing column {name}"),
                })?;
            Ok(rows.iter().map(|r| r[j]).collect())
        };
        let _ = writeln!(
            report,
            "records_mass_drift_max = {}",
            format_float(relative_drift(&column("mass")?))
        );
        let _ = writeln!(
            report,
            "records_energy_drift_max = {}",
            format_float(relative_drift(&column("energy")?))
        );
    }

    let traj = run.trajectory()?;
    let mut violations = Vec::new();
    if traj.len() >= 2 {
        let budget = morawetz_budget(&traj, &run.model, traj.start(), traj.end(), diag.morawetz_multiplier)?;
        let _ = writeln!(
            report,
            "morawetz_interval = {} {}",
            format_float(budget.t1),
            format_float(budget.t2)
        );
        let _ = writeln!(report, "morawetz_radius = {}", format_float(budget.radius));
        let _ = writeln!(report, "morawetz_linear = {}", format_float(budget.linear_term));
        let _ = writeln!(report, "morawetz_bilinear = {}", format_float(budget.bilinear_term));
        let _ = writeln!(report, "morawetz_rhs_scale = {}", format_float(budget.rhs_scale));
        let _ = writeln!(report, "morawetz_ratio = {}", format_float(budget.ratio));
        if !budget.ratio.is_finite() {
            violations.push("non-finite Morawetz ratio".to_string());
        }
        if run.model.params().coupling >= 0.0 && budget.bilinear_term < 0.0 {
            violations.push(format!("negative bilinear term {}", budget.bilinear_term));
        }
        for &r in &diag.radii {
            let c = local_mass_constants(&traj, r)?;
            let _ = writeln!(
                report,
                "local_mass_constants_{r} = drift {} sampled {} small_volume {}",
                format_float(c.drift),
                format_float(c.drift_sampled),
                format_float(c.small_volume)
            );
        }
    }
    let flagged = traj.boundary_flags().iter().filter(|&&f| f).count();
    let _ = writeln!(report, "boundary_flagged_checkpoints = {flagged}");
    write_atomic(&dir.join("diagnose.txt"), report.as_bytes())?;
    print!("{report}");
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(violations.join("; ")))
    }
}

pub fn intervals(dir: &Path) -> Result<(), CliError> {
    let run = load_run(dir)?;
    let traj = run.trajectory()?;
    let constants = run.config.constants();
    let tiling = partition_by_x_norm(&traj, constants.eta)?;
    let tiling = classify_exceptional(&tiling, &traj, &constants)?;
    let bubbles = bubble_report(&traj, &tiling, &constants)?;

    let mut table = CsvTable::new(&["start", "end", "length", "x_norm", "tail", "exceptional", "free_x_norm"])?;
    for i in &tiling.intervals {
        table.push(&[
            i.start,
            i.end,
            i.length(),
            i.x_norm,
            if i.tail { 1.0 } else { 0.0 },
            if i.label == Some(IntervalLabel::Exceptional) {
                1.0
            } else {
                0.0
            },
            i.free_x_norm.unwrap_or(0.0),
        ])?;
    }
    table.write(&dir.join("intervals.csv"))?;

    let mut table = CsvTable::new(&[
        "index",
        "radius",
        "min_local_mass",
        "threshold",
        "ratio",
        "unresolved",
        "vacuous",
    ])?;
    for b in &bubbles.records {
        table.push(&[
            b.index as f64,
            b.radius,
            b.min_local_mass,
            b.threshold,
            b.ratio,
            if b.unresolved { 1.0 } else { 0.0 },
            if b.vacuous { 1.0 } else { 0.0 },
        ])?;
    }
    table.write(&dir.join("bubbles.csv"))?;

    let mut tiling_text = format!("a = {}\n", run.config.diagnostics.cascade_ratio);
    for i in &tiling.intervals {
        let _ = writeln!(tiling_text, "{}", format_float(i.length()));
    }
    write_atomic(&dir.join("tiling.txt"), tiling_text.as_bytes())?;

    let exceptional = tiling
        .intervals
        .iter()
        .filter(|i| i.label == Some(IntervalLabel::Exceptional))
        .count();
    let below = bubbles
        .records
        .iter()
        .filter(|b| !b.unresolved && b.ratio < run.config.diagnostics.bubble_threshold)
        .count();
    println!("intervals = {}", tiling.intervals.len());
    println!("total_x_norm = {}", format_float(tiling.total_x_norm));
    println!("exceptional = {exceptional}");
    println!("bubble_records = {}", bubbles.records.len());
    println!("bubble_below_threshold = {below}");
    println!("bubble_control_ratio = {}", format_float(bubbles.control_ratio));
    let out = tiling.out_of_window();
    if out.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(format!(
            "intervals {out:?} leave the [eta/2, eta] window"
        )))
    }
}

pub fn cascade(
    tiling_path: &Path,
    a: Option<f64>,
    dim: usize,
    run_dir: Option<&Path>,
    output: Option<&Path>,
) -> Result<(), CliError> {
    let tiling = parse_tiling(&fs::read_to_string(tiling_path)?)?;
    let run = run_dir.map(load_run).transpose()?;
    let a = a
        .or(tiling.a)
        .or(run.as_ref().map(|r| r.config.diagnostics.cascade_ratio))
        .unwrap_or(0.5);
    let constants = match &run {
        Some(r) => r.config.constants(),
        None => SixConstants::for_dimension(dim),
    };
    let result = cascade_generations(&tiling.lengths, a)?;
    let geometry = match &run {
        Some(r) => {
            let traj = r.trajectory()?;
            nonevacuation_count(&traj, &result, traj.start(), &constants)?
        }
        None => nonevacuation_geometry(&result, &constants)?,
    };
    let report = cascade_report(&result, &constants, &geometry);
    match output {
        Some(path) => write_atomic(path, report.as_bytes())?,
        None => print!("{report}"),
    }
    Ok(())
}

fn oracle_dir(output: Option<PathBuf>) -> PathBuf {
    output.unwrap_or_else(|| match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(d) if !d.is_empty() => PathBuf::from(d).join("oracle"),
        _ => PathBuf::from("out").join("oracle"),
    })
}

struct Table {
    text: String,
}

impl Table {
    fn new(header: &str) -> Self {
        Table {
            text: format!("{header}\n"),
        }
    }

    fn row(&mut self, name: &str, values: &[f64]) {
        let cells: Vec<String> = values.iter().map(|&v| format_float(v)).collect();
        let _ = writeln!(self.text, "{name},{}", cells.join(","));
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub fn oracle(output: Option<PathBuf>, seed: u64, samples: usize) -> Result<(), CliError> {
    let dir = oracle_dir(output);
    fs::create_dir_all(&dir)?;
    let mut failures = Vec::new();
    let grid = RadialGrid::new(5, 256, 20.0)?;
    let fine = RadialGrid::new(5, 512, 20.0)?;
    let gamma = 4.0;

    // Riesz convolution against nested direct quadrature.
    let gaussian = |r: f64| (-2.0 * r * r).exp();
    let bump = |r: f64| {
        let s = r / 2.0;
        if s < 1.0 {
            (1.0 - 1.0 / (1.0 - s * s)).exp()
        } else {
            0.0
        }
    };
    let densities: [(&str, &Profile, f64); 2] = [("gaussian", &gaussian, 12.0), ("bump", &bump, 2.0)];
    let mut riesz = Table::new("density,r,spectral,direct,rel_err");
    let mut worst: f64 = 0.0;
    for (name, density, support) in densities {
        let rho: Vec<f64> = fine.nodes().iter().map(|&r| density(r)).collect();
        let spectral = riesz_convolve(&fine, &rho, gamma)?;
        for k in (0..fine.len()).step_by(32) {
            let r = fine.nodes()[k];
            let direct = riesz_direct(5, gamma, density, support, r);
            let e = rel(spectral[k], direct);
            worst = worst.max(e);
            riesz.row(name, &[r, spectral[k], direct, e]);
        }
    }
    write_atomic(&dir.join("riesz.csv"), riesz.text.as_bytes())?;
    if worst > 1e-4 {
        failures.push(format!("riesz relative error {worst:e}"));
    }

    // Gaussian closed forms.
    let u = FieldState::from_real_profile(grid.clone(), 0.0, |r| (-r * r).exp());
    let mut closed = Table::new("quantity,numeric,exact,rel_err");
    let mut check = |name: &str, numeric: f64, exact: f64, tol: f64, failures: &mut Vec<String>| {
        let e = rel(numeric, exact);
        closed.row(name, &[numeric, exact, e]);
        if e.is_nan() || e > tol {
            failures.push(format!("{name} relative error {e:e}"));
        }
    };
    check("mass", mass(&grid, &u)?, gaussian_mass(5), 1e-10, &mut failures);
    check(
        "h1dot_squared",
        h1dot_norm(&grid, &u)?.powi(2),
        gaussian_h1dot_squared(5),
        1e-8,
        &mut failures,
    );
    let spec = hankel_forward(&grid, &u)?;
    let k = grid.len() / 16;
    check(
        "transform",
        spec[k].re,
        gaussian_transform(5, grid.xi_nodes()[k]),
        1e-8,
        &mut failures,
    );
    let rho: Vec<f64> = u.density();
    let p = riesz_convolve(&grid, &rho, gamma)?;
    check(
        "riesz_first_node",
        p[0],
        gaussian_riesz(5, gamma, 2.0, grid.nodes()[0]),
        1e-8,
        &mut failures,
    );
    let unit: Vec<f64> = grid.nodes().iter().map(|r| (-r * r).exp()).collect();
    let origin = riesz_potential_at(&grid, &unit, gamma, &[0.0])?[0];
    check(
        "riesz_origin",
        origin,
        gaussian_riesz(5, gamma, 1.0, 0.0),
        1e-8,
        &mut failures,
    );
    let free = free_propagate(&grid, &u, 0.5)?;
    let exact = FieldState::from_profile(grid.clone(), 0.5, |r| gaussian_free(5, 0.5, r));
    let diff = free.with_values(free.values().iter().zip(exact.values()).map(|(a, b)| a - b).collect());
    let l2 = lp_norm(&grid, &diff, 2.0)? / lp_norm(&grid, &exact, 2.0)?;
    check("free_l2_error_t0.5", 1.0 + l2, 1.0, 1e-6, &mut failures);
    write_atomic(&dir.join("gaussian.csv"), closed.text.as_bytes())?;

    // Morawetz interaction term against Monte Carlo.
    let radius = 2.0;
    let term = morawetz_bilinear_term(&grid, &u, gamma, radius)?;
    let mc = bilinear_monte_carlo(5, gamma, &gaussian, radius, samples, seed);
    let mut bil = Table::new("quantity,value,std_error");
    bil.row("quadrature", &[term, 0.0]);
    bil.row("monte_carlo", &[mc.value, mc.std_error]);
    bil.row("rel_err", &[rel(term, mc.value), mc.std_error / mc.value]);
    write_atomic(&dir.join("bilinear.csv"), bil.text.as_bytes())?;
    if rel(term, mc.value) > 5e-2 {
        failures.push(format!("bilinear term {term} vs Monte Carlo {}", mc.value));
    }
    if grid
        .nodes()
        .iter()
        .any(|&r| grid.nodes().iter().any(|&s| bilinear_kernel(5, gamma, r, s) < 0.0))
    {
        failures.push("negative bilinear kernel value".into());
    }

    // Cascade against the brute-force reference on every short dyadic tiling.
    let mut cascade = Table::new("a,tilings,accepted,agree");
    for a in [0.25, 0.5] {
        let (mut total, mut accepted, mut agree) = (0usize, 0usize, 0usize);
        for lengths in dyadic_tilings(8, 7) {
            total += 1;
            match (cascade_generations(&lengths, a), cascade_reference(&lengths, a)) {
                (Ok(x), Ok(y)) => {
                    accepted += 1;
                    if x.generations == y.generations && x.chain == y.chain && x.t_star == y.t_star {
                        agree += 1;
                    }
                }
                (Err(Error::CascadeHypothesis { .. }), Err(Error::CascadeHypothesis { .. })) => agree += 1,
                _ => {}
            }
        }
        cascade.row(&a.to_string(), &[total as f64, accepted as f64, agree as f64]);
        if agree != total {
            failures.push(format!(
                "cascade disagrees on {} of {total} tilings (a = {a})",
                total - agree
            ));
        }
    }
    write_atomic(&dir.join("cascade.csv"), cascade.text.as_bytes())?;

    println!("riesz_max_rel_err = {}", format_float(worst));
    println!("bilinear_rel_err = {}", format_float(rel(term, mc.value)));
    println!("tables = {}", dir.display());
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(failures.join("; ")))
    }
}

type Profile = dyn Fn(f64) -> f64 + Sync;
