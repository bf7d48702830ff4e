//! Scenario orchestration: realize a configuration, run the ε-sweep against
//! the (ε-independent) limit systems, aggregate the convergence functionals,
//! and emit the artifact files of a run directory.
//!
//! # Run directory layout
//!
//! ```text
//! out/
//!   config.echo         verbatim text of the configuration that ran
//!   table.csv           one row per ε (deterministic columns only)
//!   timings.csv         wall-clock seconds per ε (kept out of table.csv so
//!                       table.csv is byte-identical across reruns)
//!   limit.csv           limit-system time series (GPE scenarios)
//!   flow.csv            flow time series (flow-only scenarios)
//!   per-eps/eps-<ε>/
//!     modenergy.csv     modulated-energy time series
//!     conserved.csv     wavefunction invariants over time
//!     final_psi.csv     the final wavefunction snapshot
//!     error.txt         present only when this ε failed
//! ```
//!
//! A failure inside one ε aborts that row only: the error is recorded in the
//! row (and in `error.txt`), and the sweep continues.  `table.csv` carries
//! `NaN` entries for failed rows.  The sweep runs members sequentially; all
//! artifact writes are isolated per run directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::{synthesize_modes, DensitySpec, InitialSpec, ScenarioConfig};
use crate::error::{CoreError, Result};
use crate::fastwave::{self, EigenSystem, DEFAULT_GAP_TOL};
use crate::fieldio;
use crate::gpe::{self, EvolveOptions, InitialData, WaveState};
use crate::grid::{derivative, divergence, l2_norm, Reality, TorusField, TorusGrid};
use crate::helmholtz;
use crate::limits::{self, FlowOptions, FlowState, OscillatingOptions, OscillatingState};
use crate::modenergy::{self, ConvergenceFunctionals, ModulatedEnergyReport};

/// The scenarios shipped with the crate, as `(name, config text)`.
pub const BUNDLED: &[(&str, &str)] = &[
    ("wellprep-1d", include_str!("../scenarios/wellprep-1d.cfg")),
    ("illprep-1d", include_str!("../scenarios/illprep-1d.cfg")),
    (
        "cosine-rho0-1d",
        include_str!("../scenarios/cosine-rho0-1d.cfg"),
    ),
    (
        "const-rho0-2d-euler",
        include_str!("../scenarios/const-rho0-2d-euler.cfg"),
    ),
];

/// Configuration text of a bundled scenario, if `name` is one.
pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|&(_, text)| text)
}

/// Resolve `spec` as a bundled scenario name, else as a file path.
pub fn load(spec: &str) -> Result<ScenarioConfig> {
    match bundled(spec) {
        Some(text) => ScenarioConfig::parse(text),
        None => ScenarioConfig::from_file(Path::new(spec)),
    }
}

/// Fields realized from a configuration (everything ε-independent).
#[derive(Clone, Debug)]
pub struct Realized {
    pub grid: TorusGrid,
    pub rho0: TorusField,
    /// Initial density fluctuation (zero for file-based initial data).
    pub phi0: TorusField,
    /// Initial phase function (zero for file-based initial data).
    pub s0: TorusField,
    pub winding: [f64; 2],
    /// Path of the raw initial wavefunction, when the scenario uses one.
    pub psi0_path: Option<PathBuf>,
    /// Initial momentum from the `[stream]` section (flow-only scenarios).
    pub stream_momentum: Option<TorusField>,
}

fn resolve(base: Option<&Path>, path: &str) -> PathBuf {
    let p = Path::new(path);
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p.to_path_buf(),
    }
}

/// Realize the grid and fields of a configuration.  Relative file paths are
/// resolved against `base_dir` (typically the configuration's directory);
/// without one they are taken relative to the working directory.
pub fn realize(cfg: &ScenarioConfig, base_dir: Option<&Path>) -> Result<Realized> {
    let grid = cfg.grid()?;
    let rho0 = match &cfg.background {
        DensitySpec::Constant(v) => TorusField::from_fn_real(grid, 1, |_, _| *v),
        DensitySpec::Modes { base, modes } => synthesize_modes(grid, *base, modes),
        DensitySpec::File(path) => {
            let full = resolve(base_dir, path);
            let (field, _) = fieldio::read_field(&full)?;
            let origin = full.display().to_string();
            if field.components() != 1 || field.reality() != Reality::Real {
                return Err(CoreError::FieldFormat {
                    path: origin,
                    msg: "a background density file must hold one real component".into(),
                });
            }
            check_same_grid(&field.grid(), &grid, &origin)?;
            field
        }
    };
    crate::grid::check_density(&rho0)?;

    let (phi0, s0, winding, psi0_path) = match &cfg.initial {
        InitialSpec::Wkb { phi0, s0, winding } => (
            synthesize_modes(grid, 0.0, phi0),
            synthesize_modes(grid, 0.0, s0),
            *winding,
            None,
        ),
        InitialSpec::File(path) => (
            TorusField::zeros(grid, 1, Reality::Real),
            TorusField::zeros(grid, 1, Reality::Real),
            [0.0; 2],
            Some(resolve(base_dir, path)),
        ),
    };

    let stream_momentum = if cfg.stream.is_empty() {
        None
    } else {
        let f = synthesize_modes(grid, 0.0, &cfg.stream);
        let fy = derivative(&f, 1);
        let fx = derivative(&f, 0);
        Some(TorusField::stack(&[&fy, &fx.scaled(-1.0)])?)
    };

    Ok(Realized {
        grid,
        rho0,
        phi0,
        s0,
        winding,
        psi0_path,
        stream_momentum,
    })
}

fn check_same_grid(got: &TorusGrid, want: &TorusGrid, origin: &str) -> Result<()> {
    if got.dim() != want.dim()
        || got.n() != want.n()
        || (got.period() - want.period()).abs() > 1e-12 * want.period()
    {
        return Err(CoreError::FieldFormat {
            path: origin.to_string(),
            msg: format!(
                "grid mismatch: file has dim {}, n {}, period {}, scenario wants \
                 dim {}, n {}, period {}",
                got.dim(),
                got.n(),
                got.period(),
                want.dim(),
                want.n(),
                want.period()
            ),
        });
    }
    Ok(())
}

/// Build the initial wavefunction for one ε: either WKB data or the
/// configured snapshot file (which must match the grid, ε, α, and start at
/// time zero).
pub fn initial_state(cfg: &ScenarioConfig, real: &Realized, eps: f64) -> Result<WaveState> {
    match &real.psi0_path {
        None => gpe::build_initial_state(
            &InitialData {
                rho0: &real.rho0,
                phi0: &real.phi0,
                s0: &real.s0,
                winding: real.winding,
            },
            eps,
            cfg.alpha,
        ),
        Some(path) => {
            let state = fieldio::read_wave_state(path)?;
            let origin = path.display().to_string();
            check_same_grid(&state.psi.grid(), &real.grid, &origin)?;
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + b.abs());
            if !close(state.eps, eps) || !close(state.alpha, cfg.alpha) {
                return Err(CoreError::InvalidParameter(format!(
                    "wavefunction file {origin} was written for eps = {}, alpha = {}, \
                     but the run asks for eps = {eps}, alpha = {}",
                    state.eps, state.alpha, cfg.alpha
                )));
            }
            if state.time != 0.0 {
                return Err(CoreError::InvalidParameter(format!(
                    "wavefunction file {origin} starts at t = {}, scenarios start at 0",
                    state.time
                )));
            }
            Ok(state)
        }
    }
}

/// One row of the convergence table.
#[derive(Clone, Debug)]
pub struct EpsRow {
    pub eps: f64,
    pub sup_density_error: f64,
    pub max_weak_defect: f64,
    pub h_initial: f64,
    pub max_h: f64,
    pub max_w_abs: f64,
    pub max_s_abs: f64,
    /// Wall-clock seconds (reported in `timings.csv`, never in `table.csv`).
    pub runtime: f64,
    pub error: Option<String>,
}

/// The ε-sweep summary: one row per configured ε, in order.
#[derive(Clone, Debug, Default)]
pub struct ConvergenceTable {
    pub rows: Vec<EpsRow>,
}

/// Shortest-round-trip scientific formatting used by every CSV artifact.
pub fn csv_float(x: f64) -> String {
    format!("{x:e}")
}

impl ConvergenceTable {
    /// The deterministic summary table (no wall-clock column).
    pub fn table_csv(&self) -> String {
        let mut out =
            String::from("eps,sup_density_error,max_weak_defect,h_initial,max_h,max_w,max_s\n");
        for r in &self.rows {
            let vals = [
                r.eps,
                r.sup_density_error,
                r.max_weak_defect,
                r.h_initial,
                r.max_h,
                r.max_w_abs,
                r.max_s_abs,
            ];
            let cells: Vec<String> = vals.iter().copied().map(csv_float).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Wall-clock seconds per ε.
    pub fn timings_csv(&self) -> String {
        let mut out = String::from("eps,runtime_s\n");
        for r in &self.rows {
            out.push_str(&format!("{},{}\n", csv_float(r.eps), csv_float(r.runtime)));
        }
        out
    }
}

/// Flow-only artifacts (scenarios with `run_gpe = false`).
#[derive(Clone, Debug)]
pub struct FlowComparison {
    pub anelastic: Vec<FlowState>,
    /// The Leray-projected Euler reference (run when `rho0` is constant).
    pub euler: Option<Vec<FlowState>>,
    /// `L²` velocity gap per snapshot between the two solvers.
    pub velocity_gaps: Option<Vec<f64>>,
}

/// Everything a sweep produces in memory.
#[derive(Clone, Debug, Default)]
pub struct ScenarioOutput {
    pub table: ConvergenceTable,
    /// Limit-system trajectory at the output times (GPE scenarios).
    pub limit: Vec<OscillatingState>,
    /// Modulated-energy reports per ε (empty for a failed row).
    pub reports: Vec<Vec<ModulatedEnergyReport>>,
    /// Aggregated functionals per ε (`None` for a failed row).
    pub functionals: Vec<Option<ConvergenceFunctionals>>,
    /// Flow-only artifacts (`run_gpe = false` scenarios).
    pub flow: Option<FlowComparison>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CoreError::io(path.display().to_string(), e))
}

fn make_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CoreError::io(path.display().to_string(), e))
}

fn is_constant(field: &TorusField) -> Option<f64> {
    let first = field.comp(0)[0].re;
    let ok = field
        .comp(0)
        .iter()
        .all(|z| (z.re - first).abs() <= 1e-12 * (1.0 + first.abs()));
    ok.then_some(first)
}

/// Run a scenario: solve the limit systems once, sweep the configured ε
/// values, aggregate the table, and (when `out_dir` is given) write the run
/// directory.  Per-ε failures are recorded in their row and do not abort
/// the sweep; failures of the shared stages (realization, limit systems,
/// artifact writes) do.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    base_dir: Option<&Path>,
    out_dir: Option<&Path>,
) -> Result<ScenarioOutput> {
    let real = realize(cfg, base_dir)?;
    if let Some(dir) = out_dir {
        make_dir(dir)?;
        write_text(&dir.join("config.echo"), &cfg.source)?;
    }
    let times = cfg.output_times();
    let later = &times[1..];

    if !cfg.run_gpe {
        return run_flow_only(cfg, &real, later, out_dir);
    }

    // The limit systems are ε-independent: solve them once.
    let eig = fastwave::acoustic_eigensystem(&real.rho0, cfg.truncation, cfg.max_modes)?;
    let tables = fastwave::q2_tables(&eig, cfg.tol.resonance, DEFAULT_GAP_TOL)?;
    let j_limit = limits::limit_current(&real.rho0, &real.s0, real.winding)?;
    let momentum0 = helmholtz::project(&j_limit, &real.rho0, cfg.tol.projection)?.solenoidal;
    let coords0 = limits::initial_wave_coords(&eig, &real.phi0, &j_limit, cfg.tol.projection)?;
    let osc_opts = OscillatingOptions {
        dt: cfg.flow_dt,
        project_tol: cfg.tol.projection,
        sol_tol: cfg.tol.solver,
        ..Default::default()
    };
    let mut limit_traj = vec![OscillatingState {
        coords: coords0.clone(),
        momentum: momentum0.clone(),
        time: 0.0,
    }];
    limit_traj.extend(limits::evolve_oscillating(
        &eig,
        &tables,
        &coords0,
        &momentum0,
        cfg.t_final,
        later,
        &osc_opts,
    )?);

    if let Some(dir) = out_dir {
        write_text(&dir.join("limit.csv"), &limit_csv(&limit_traj, &real.rho0)?)?;
    }

    let mut out = ScenarioOutput::default();
    for &eps in &cfg.eps_list {
        let started = Instant::now();
        let eps_dir = out_dir.map(|d| d.join("per-eps").join(format!("eps-{eps}")));
        if let Some(d) = &eps_dir {
            make_dir(d)?;
        }
        match run_one_eps(
            cfg,
            &real,
            &eig,
            &limit_traj,
            eps,
            later,
            eps_dir.as_deref(),
        ) {
            Ok((reports, func)) => {
                out.table.rows.push(EpsRow {
                    eps,
                    sup_density_error: func.sup_density_error,
                    max_weak_defect: func.max_weak_defect,
                    h_initial: func.h_initial,
                    max_h: func.max_h,
                    max_w_abs: func.max_w_abs,
                    max_s_abs: func.max_s_abs,
                    runtime: started.elapsed().as_secs_f64(),
                    error: None,
                });
                out.reports.push(reports);
                out.functionals.push(Some(func));
            }
            Err(e) => {
                let msg = e.to_string();
                if let Some(d) = &eps_dir {
                    write_text(&d.join("error.txt"), &format!("{msg}\n"))?;
                }
                out.table.rows.push(EpsRow {
                    eps,
                    sup_density_error: f64::NAN,
                    max_weak_defect: f64::NAN,
                    h_initial: f64::NAN,
                    max_h: f64::NAN,
                    max_w_abs: f64::NAN,
                    max_s_abs: f64::NAN,
                    runtime: started.elapsed().as_secs_f64(),
                    error: Some(msg),
                });
                out.reports.push(Vec::new());
                out.functionals.push(None);
            }
        }
    }
    out.limit = limit_traj;

    if let Some(dir) = out_dir {
        write_text(&dir.join("table.csv"), &out.table.table_csv())?;
        write_text(&dir.join("timings.csv"), &out.table.timings_csv())?;
    }
    Ok(out)
}

fn run_one_eps(
    cfg: &ScenarioConfig,
    real: &Realized,
    eig: &EigenSystem,
    limit_traj: &[OscillatingState],
    eps: f64,
    later: &[f64],
    eps_dir: Option<&Path>,
) -> Result<(Vec<ModulatedEnergyReport>, ConvergenceFunctionals)> {
    let state0 = initial_state(cfg, real, eps)?;
    let opts = EvolveOptions {
        dt: cfg.dt,
        max_steps: cfg.max_steps,
        ..Default::default()
    };
    let mut snaps = vec![state0];
    let rest = gpe::evolve(&snaps[0], &real.rho0, cfg.t_final, later, &opts)?;
    snaps.extend(rest);

    let mut reports = Vec::with_capacity(snaps.len());
    for (wave, limit) in snaps.iter().zip(limit_traj) {
        reports.push(modenergy::modulated_energy(
            wave,
            limit,
            eig,
            cfg.tol.projection,
        )?);
    }
    let func = modenergy::convergence_functionals(&reports)?;

    if let Some(dir) = eps_dir {
        write_text(&dir.join("modenergy.csv"), &modenergy_csv(&reports, &func))?;
        write_text(
            &dir.join("conserved.csv"),
            &conserved_csv(&snaps, &real.rho0)?,
        )?;
        fieldio::write_wave_state(&dir.join("final_psi.csv"), snaps.last().unwrap())?;
    }
    Ok((reports, func))
}

fn run_flow_only(
    cfg: &ScenarioConfig,
    real: &Realized,
    later: &[f64],
    out_dir: Option<&Path>,
) -> Result<ScenarioOutput> {
    let started = Instant::now();
    // Config validation guarantees a stream for flow-only scenarios.
    let m0 = real
        .stream_momentum
        .clone()
        .ok_or_else(|| CoreError::InvalidParameter("flow-only scenario without a stream".into()))?;
    let opts = FlowOptions {
        dt: cfg.flow_dt,
        project_tol: cfg.tol.projection,
        sol_tol: cfg.tol.solver,
        ..Default::default()
    };
    let mut anelastic = vec![FlowState {
        momentum: m0.clone(),
        time: 0.0,
    }];
    anelastic.extend(limits::evolve_anelastic(
        &m0,
        &real.rho0,
        cfg.t_final,
        later,
        &opts,
    )?);

    let (euler, gaps) = match is_constant(&real.rho0) {
        Some(r0) => {
            let v0 = m0.scaled(1.0 / r0);
            let mut euler = vec![FlowState {
                momentum: v0.clone(),
                time: 0.0,
            }];
            euler.extend(limits::evolve_euler_leray(&v0, cfg.t_final, later, &opts)?);
            let gaps = anelastic
                .iter()
                .zip(&euler)
                .map(|(a, e)| {
                    let va = a.momentum.scaled(1.0 / r0);
                    Ok(l2_norm(&va.sub(&e.momentum)?))
                })
                .collect::<Result<Vec<f64>>>()?;
            (Some(euler), Some(gaps))
        }
        None => (None, None),
    };

    if let Some(dir) = out_dir {
        write_text(
            &dir.join("flow.csv"),
            &flow_csv(&anelastic, &real.rho0, gaps.as_deref())?,
        )?;
        let table = ConvergenceTable::default();
        write_text(&dir.join("table.csv"), &table.table_csv())?;
        write_text(
            &dir.join("timings.csv"),
            &format!(
                "eps,runtime_s\nflow,{}\n",
                csv_float(started.elapsed().as_secs_f64())
            ),
        )?;
    }

    Ok(ScenarioOutput {
        flow: Some(FlowComparison {
            anelastic,
            euler,
            velocity_gaps: gaps,
        }),
        ..Default::default()
    })
}

/// CSV time series of the coupled limit system: kinetic energy of the
/// mean flow, the divergence of its momentum, and the squared wave norm.
pub fn limit_csv(traj: &[OscillatingState], rho0: &TorusField) -> Result<String> {
    let mut out = String::from("time,kinetic_energy,momentum_divergence,wave_norm_sq\n");
    for s in traj {
        let kin = limits::kinetic_energy(&s.momentum, rho0)?;
        let div = l2_norm(&divergence(&s.momentum)?);
        let norm_sq = s.coords.norm().powi(2);
        out.push_str(&format!(
            "{},{},{},{}\n",
            csv_float(s.time),
            csv_float(kin),
            csv_float(div),
            csv_float(norm_sq)
        ));
    }
    Ok(out)
}

/// CSV time series of a limit flow, with an optional per-snapshot gap
/// column against the Euler reference.
pub fn flow_csv(traj: &[FlowState], rho0: &TorusField, gaps: Option<&[f64]>) -> Result<String> {
    let mut out = String::from("time,kinetic_energy,momentum_divergence");
    if gaps.is_some() {
        out.push_str(",euler_gap");
    }
    out.push('\n');
    for (i, s) in traj.iter().enumerate() {
        let kin = limits::kinetic_energy(&s.momentum, rho0)?;
        let div = l2_norm(&divergence(&s.momentum)?);
        out.push_str(&format!(
            "{},{},{}",
            csv_float(s.time),
            csv_float(kin),
            csv_float(div)
        ));
        if let Some(g) = gaps {
            out.push_str(&format!(",{}", csv_float(g[i])));
        }
        out.push('\n');
    }
    Ok(out)
}

/// CSV time series of the wavefunction invariants (mass, total current,
/// Hamiltonian) and their drifts relative to the first snapshot.
pub fn conserved_csv(snaps: &[WaveState], rho0: &TorusField) -> Result<String> {
    let dim = rho0.grid().dim();
    let mut out = String::from("time,mass,current_x");
    if dim == 2 {
        out.push_str(",current_y");
    }
    out.push_str(",hamiltonian,mass_drift,current_drift\n");
    let first = gpe::conserved_quantities(&snaps[0], rho0)?;
    for s in snaps {
        let c = gpe::conserved_quantities(s, rho0)?;
        let mass_drift = (c.mass - first.mass).abs() / first.mass.abs().max(f64::MIN_POSITIVE);
        let current_drift = (0..dim)
            .map(|d| (c.current[d] - first.current[d]).abs())
            .fold(0.0, f64::max);
        out.push_str(&format!("{},{}", csv_float(s.time), csv_float(c.mass)));
        for d in 0..dim {
            out.push_str(&format!(",{}", csv_float(c.current[d])));
        }
        out.push_str(&format!(
            ",{},{},{}\n",
            csv_float(c.hamiltonian),
            csv_float(mass_drift),
            csv_float(current_drift)
        ));
    }
    Ok(out)
}

fn modenergy_csv(reports: &[ModulatedEnergyReport], func: &ConvergenceFunctionals) -> String {
    let mut out = String::from("eps,time,H,kineticPart,fluctuationPart,W,S,densityError");
    for m in 1..=modenergy::N_TEST_MODES {
        out.push_str(&format!(",defect_mode_{m}"));
    }
    out.push('\n');
    for (i, r) in reports.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}",
            csv_float(r.eps),
            csv_float(r.time),
            csv_float(r.h),
            csv_float(r.kinetic_part),
            csv_float(r.fluctuation_part),
            csv_float(r.w),
            csv_float(r.s),
            csv_float(r.density_error)
        ));
        for m in 0..modenergy::N_TEST_MODES {
            out.push_str(&format!(",{}", csv_float(func.weak_defects[m][i])));
        }
        out.push('\n');
    }
    out
}
