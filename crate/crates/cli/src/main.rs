//! `gpelab` — command-line harness for the torus Gross-Pitaevskii /
//! anelastic-limit laboratory.
//!
//! Every subcommand takes `--config`, naming either a bundled scenario
//! (`wellprep-1d`, `illprep-1d`, `cosine-rho0-1d`, `const-rho0-2d-euler`)
//! or a configuration file path, and writes its artifacts into `--out`
//! (default `runs/<scenario name>`).  Exit codes: 0 success, 1 runtime
//! failure, 2 configuration or usage error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gpelab_core::config::{synthesize_modes, Mode, ScenarioConfig};
use gpelab_core::fastwave::{self, DEFAULT_GAP_TOL};
use gpelab_core::fieldio;
use gpelab_core::gpe::{self, EvolveOptions};
use gpelab_core::grid::{divergence, l2_norm, weighted_inner_product};
use gpelab_core::helmholtz;
use gpelab_core::limits::{self, FlowOptions, FlowState, OscillatingOptions, OscillatingState};
use gpelab_core::scenario::{self, csv_float, Realized};
use gpelab_core::TorusField;

#[derive(Parser)]
#[command(
    name = "gpelab",
    version,
    about = "Numerical laboratory for the scaled Gross-Pitaevskii equation on the torus \
             and its anelastic limit"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evolve the wavefunction for one ε and record its invariants
    Simulate(Common),
    /// Eigendecompose the acoustic operator of the background density
    Spectrum(Common),
    /// Enumerate the resonance triples of the averaged wave interactions
    Resonances(Common),
    /// Split a vector field into weighted-solenoidal and gradient parts
    Project(ProjectArgs),
    /// Integrate the anelastic limit flow
    Anelastic(Common),
    /// Integrate the coupled oscillating/anelastic limit system
    Oscillate(Common),
    /// Run the full ε-sweep and write the convergence table
    Converge(Common),
    /// Modulated-energy time series for a single ε
    Modenergy(Common),
}

#[derive(Args)]
struct Common {
    /// Bundled scenario name or path to a configuration file
    #[arg(long)]
    config: String,
    /// Run directory (default: runs/<scenario name>)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the scenario's ε list with this single value
    #[arg(long)]
    eps: Option<f64>,
    /// Override the grid resolution
    #[arg(long)]
    resolution: Option<usize>,
    /// Suppress progress output
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct ProjectArgs {
    #[command(flatten)]
    common: Common,
    /// Vector field file to decompose (default: a seeded random field)
    #[arg(long)]
    field: Option<PathBuf>,
}

struct Run {
    cfg: ScenarioConfig,
    base: Option<PathBuf>,
    out: PathBuf,
    quiet: bool,
}

fn load(c: &Common) -> Result<Run> {
    let is_bundled = scenario::bundled(&c.config).is_some();
    let cfg = scenario::load(&c.config)
        .with_context(|| format!("loading configuration {:?}", c.config))?;
    let cfg = cfg.with_overrides(c.eps, c.resolution)?;
    let base = if is_bundled {
        None
    } else {
        Path::new(&c.config)
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
    };
    let out = c
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name));
    Ok(Run {
        cfg,
        base,
        out,
        quiet: c.quiet,
    })
}

/// Configuration problems are usage errors: report and exit 2.
fn load_or_exit(c: &Common) -> Run {
    match load(c) {
        Ok(run) => run,
        Err(e) => {
            eprintln!("error: {e:#}");
            process::exit(2);
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::Simulate(c) => simulate(load_or_exit(&c)),
        Cmd::Spectrum(c) => spectrum(load_or_exit(&c)),
        Cmd::Resonances(c) => resonances(load_or_exit(&c)),
        Cmd::Project(a) => project(load_or_exit(&a.common), a.field),
        Cmd::Anelastic(c) => anelastic(load_or_exit(&c)),
        Cmd::Oscillate(c) => oscillate(load_or_exit(&c)),
        Cmd::Converge(c) => converge(load_or_exit(&c)),
        Cmd::Modenergy(c) => modenergy(load_or_exit(&c)),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e:#}");
        process::exit(1);
    }
}

fn say(run: &Run, msg: impl AsRef<str>) {
    if !run.quiet {
        println!("{}", msg.as_ref());
    }
}

fn make_out(run: &Run) -> Result<()> {
    fs::create_dir_all(&run.out)
        .with_context(|| format!("creating run directory {}", run.out.display()))?;
    let echo = run.out.join("config.echo");
    fs::write(&echo, &run.cfg.source).with_context(|| format!("writing {}", echo.display()))
}

fn write_artifact(run: &Run, name: &str, text: &str) -> Result<PathBuf> {
    let path = run.out.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn pick_eps(run: &Run) -> Result<f64> {
    run.cfg
        .eps_list
        .first()
        .copied()
        .ok_or_else(|| anyhow::anyhow!("this scenario has no ε values (flow-only); pass --eps"))
}

/// Initial momentum of the limit flow: the stream function when one is
/// configured, otherwise the weighted-solenoidal part of the limit current.
fn flow_momentum(run: &Run, real: &Realized) -> Result<TorusField> {
    if let Some(m) = &real.stream_momentum {
        return Ok(m.clone());
    }
    let j = limits::limit_current(&real.rho0, &real.s0, real.winding)?;
    Ok(helmholtz::project(&j, &real.rho0, run.cfg.tol.projection)?.solenoidal)
}

fn simulate(run: Run) -> Result<()> {
    let eps = pick_eps(&run)?;
    let real = scenario::realize(&run.cfg, run.base.as_deref())?;
    let state0 = scenario::initial_state(&run.cfg, &real, eps)?;
    let times = run.cfg.output_times();
    let opts = EvolveOptions {
        dt: run.cfg.dt,
        max_steps: run.cfg.max_steps,
        ..Default::default()
    };
    let mut snaps = vec![state0];
    snaps.extend(gpe::evolve(
        &snaps[0],
        &real.rho0,
        run.cfg.t_final,
        &times[1..],
        &opts,
    )?);
    make_out(&run)?;
    let table = scenario::conserved_csv(&snaps, &real.rho0)?;
    let path = write_artifact(&run, "conserved.csv", &table)?;
    fieldio::write_wave_state(&run.out.join("final_psi.csv"), snaps.last().unwrap())?;

    let first = gpe::conserved_quantities(&snaps[0], &real.rho0)?;
    let last = gpe::conserved_quantities(snaps.last().unwrap(), &real.rho0)?;
    say(
        &run,
        format!(
            "eps {}: t = {} in {} snapshots; mass drift {}, Hamiltonian drift {}",
            csv_float(eps),
            csv_float(run.cfg.t_final),
            snaps.len(),
            csv_float((last.mass - first.mass).abs() / first.mass),
            csv_float(
                (last.hamiltonian - first.hamiltonian).abs() / first.hamiltonian.abs().max(1e-300)
            ),
        ),
    );
    say(&run, format!("wrote {}", path.display()));
    Ok(())
}

fn spectrum(run: Run) -> Result<()> {
    let real = scenario::realize(&run.cfg, run.base.as_deref())?;
    let eig = fastwave::acoustic_eigensystem(&real.rho0, run.cfg.truncation, run.cfg.max_modes)?;
    let mut csv = String::from("index,kappa,cluster_id\n");
    for j in 0..eig.len() {
        csv.push_str(&format!(
            "{j},{},{}\n",
            csv_float(eig.kappas[j]),
            eig.cluster_of[j]
        ));
    }
    make_out(&run)?;
    let path = write_artifact(&run, "spectrum.csv", &csv)?;
    say(
        &run,
        format!(
            "{} eigenmodes in {} clusters; kappa in [{}, {}]",
            eig.len(),
            eig.clusters.len(),
            csv_float(eig.kappas[0]),
            csv_float(*eig.kappas.last().unwrap())
        ),
    );
    say(&run, format!("wrote {}", path.display()));
    Ok(())
}

fn resonances(run: Run) -> Result<()> {
    let real = scenario::realize(&run.cfg, run.base.as_deref())?;
    let eig = fastwave::acoustic_eigensystem(&real.rho0, run.cfg.truncation, run.cfg.max_modes)?;
    let tables = fastwave::q2_tables(&eig, run.cfg.tol.resonance, DEFAULT_GAP_TOL)?;
    let mut csv = String::from("j,l,m,sign_j,sign_l,sign_m,defect\n");
    for t in &tables.triples {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            t.j,
            t.l,
            t.m,
            t.signs[0],
            t.signs[1],
            t.signs[2],
            csv_float(t.defect)
        ));
    }
    make_out(&run)?;
    let path = write_artifact(&run, "resonances.csv", &csv)?;
    say(
        &run,
        format!(
            "{} exact resonance triples, {} ambiguous near-resonances, {} interaction terms",
            tables.triples.len(),
            tables.near.len(),
            tables.terms.len()
        ),
    );
    say(&run, format!("wrote {}", path.display()));
    Ok(())
}

/// A reproducible band-limited random vector field for projection demos.
fn random_field(real: &Realized, seed: u64) -> TorusField {
    let grid = real.grid;
    let dim = grid.dim();
    let kb: i64 = ((grid.n() / 4) as i64).min(4).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: Vec<TorusField> = Vec::new();
    for _ in 0..dim {
        let mut modes = Vec::new();
        for kx in -kb..=kb {
            let ky_range: Vec<i64> = if dim == 2 {
                (-kb..=kb).collect()
            } else {
                vec![0]
            };
            for ky in ky_range {
                if kx == 0 && ky == 0 {
                    continue;
                }
                let decay = 1.0 / (1.0 + (kx * kx + ky * ky) as f64);
                modes.push(Mode {
                    k: [kx, ky],
                    amp: rng.gen_range(-1.0..1.0) * decay,
                    phase: rng.gen_range(0.0..std::f64::consts::TAU),
                });
            }
        }
        parts.push(synthesize_modes(grid, 0.0, &modes));
    }
    let refs: Vec<&TorusField> = parts.iter().collect();
    TorusField::stack(&refs).expect("components share the grid")
}

fn project(run: Run, field_path: Option<PathBuf>) -> Result<()> {
    let real = scenario::realize(&run.cfg, run.base.as_deref())?;
    let field = match field_path {
        Some(path) => {
            let (f, _) = fieldio::read_field(&path)?;
            if f.grid().dim() != real.grid.dim() || f.grid().n() != real.grid.n() {
                bail!(
                    "field file {} does not match the scenario grid",
                    path.display()
                );
            }
            f
        }
        None => random_field(&real, run.cfg.seed),
    };
    let dec = helmholtz::project(&field, &real.rho0, run.cfg.tol.projection)?;
    make_out(&run)?;
    fieldio::write_field(
        &run.out.join("solenoidal.csv"),
        &dec.solenoidal,
        &Default::default(),
    )?;
    fieldio::write_field(
        &run.out.join("gradient.csv"),
        &dec.gradient_part,
        &Default::default(),
    )?;
    fieldio::write_field(
        &run.out.join("potential.csv"),
        &dec.potential,
        &Default::default(),
    )?;

    let div_sol = l2_norm(&divergence(&dec.solenoidal)?);
    let ortho = weighted_inner_product(&dec.solenoidal, &dec.gradient_part, &real.rho0)?.norm();
    let nf = weighted_inner_product(&field, &field, &real.rho0)?.re;
    let ns = weighted_inner_product(&dec.solenoidal, &dec.solenoidal, &real.rho0)?.re;
    let ng = weighted_inner_product(&dec.gradient_part, &dec.gradient_part, &real.rho0)?.re;
    say(
        &run,
        format!(
            "projection: solve residual {}, div(solenoidal) {}, sigma-orthogonality {}, \
             Pythagoras defect {}",
            csv_float(dec.residual),
            csv_float(div_sol),
            csv_float(ortho),
            csv_float((nf - ns - ng).abs())
        ),
    );
    say(
        &run,
        format!("wrote {}", run.out.join("solenoidal.csv").display()),
    );
    Ok(())
}

fn anelastic(run: Run) -> Result<()> {
    let real = scenario::realize(&run.cfg, run.base.as_deref())?;
    let m0 = flow_momentum(&run, &real)?;
    let opts = FlowOptions {
        dt: run.cfg.flow_dt,
        project_tol: run.cfg.tol.projection,
        sol_tol: run.cfg.tol.solver,
        ..Default::default()
    };
    let times = run.cfg.output_times();
    let mut traj = vec![FlowState {
        momentum: m0.clone(),
        time: 0.0,
    }];
    traj.extend(limits::evolve_anelastic(
        &m0,
        &real.rho0,
        run.cfg.t_final,
        &times[1..],
        &opts,
    )?);
    make_out(&run)?;
    let path = write_artifact(
        &run,
        "flow.csv",
        &scenario::flow_csv(&traj, &real.rho0, None)?,
    )?;
    let e0 = limits::kinetic_energy(&traj[0].momentum, &real.rho0)?;
    let e1 = limits::kinetic_energy(&traj.last().unwrap().momentum, &real.rho0)?;
    say(
        &run,
        format!(
            "anelastic flow to t = {}: kinetic energy drift {}",
            csv_float(run.cfg.t_final),
            csv_float((e1 - e0).abs() / e0.max(1e-300))
        ),
    );
    say(&run, format!("wrote {}", path.display()));
    Ok(())
}

fn oscillate(run: Run) -> Result<()> {
    let real = scenario::realize(&run.cfg, run.base.as_deref())?;
    let eig = fastwave::acoustic_eigensystem(&real.rho0, run.cfg.truncation, run.cfg.max_modes)?;
    let tables = fastwave::q2_tables(&eig, run.cfg.tol.resonance, DEFAULT_GAP_TOL)?;
    let j_limit = limits::limit_current(&real.rho0, &real.s0, real.winding)?;
    let m0 = flow_momentum(&run, &real)?;
    let coords0 = limits::initial_wave_coords(&eig, &real.phi0, &j_limit, run.cfg.tol.projection)?;
    let opts = OscillatingOptions {
        dt: run.cfg.flow_dt,
        project_tol: run.cfg.tol.projection,
        sol_tol: run.cfg.tol.solver,
        ..Default::default()
    };
    let times = run.cfg.output_times();
    let mut traj = vec![OscillatingState {
        coords: coords0.clone(),
        momentum: m0.clone(),
        time: 0.0,
    }];
    traj.extend(limits::evolve_oscillating(
        &eig,
        &tables,
        &coords0,
        &m0,
        run.cfg.t_final,
        &times[1..],
        &opts,
    )?);
    make_out(&run)?;
    let path = write_artifact(&run, "wave.csv", &scenario::limit_csv(&traj, &real.rho0)?)?;
    let n0 = traj[0].coords.norm();
    let n1 = traj.last().unwrap().coords.norm();
    say(
        &run,
        format!(
            "oscillating system to t = {}: wave norm drift {} per unit time",
            csv_float(run.cfg.t_final),
            csv_float((n1 - n0).abs() / run.cfg.t_final)
        ),
    );
    say(&run, format!("wrote {}", path.display()));
    Ok(())
}

fn converge(run: Run) -> Result<()> {
    let out = scenario::run_scenario(&run.cfg, run.base.as_deref(), Some(&run.out))?;
    let mut failures = 0;
    for row in &out.table.rows {
        match &row.error {
            None => say(
                &run,
                format!(
                    "eps {}: sup density error {}, max H {}, max weak defect {}",
                    csv_float(row.eps),
                    csv_float(row.sup_density_error),
                    csv_float(row.max_h),
                    csv_float(row.max_weak_defect)
                ),
            ),
            Some(msg) => {
                failures += 1;
                eprintln!("eps {} failed: {msg}", csv_float(row.eps));
            }
        }
    }
    say(
        &run,
        format!("wrote {}", run.out.join("table.csv").display()),
    );
    if failures > 0 {
        bail!(
            "{failures} of {} sweep member(s) failed",
            out.table.rows.len()
        );
    }
    Ok(())
}

fn modenergy(run: Run) -> Result<()> {
    let eps = pick_eps(&run)?;
    // A single-ε sweep: reuses the full pipeline and artifact layout.
    let cfg = run.cfg.with_overrides(Some(eps), None)?;
    let single = Run { cfg, ..run };
    let out = scenario::run_scenario(&single.cfg, single.base.as_deref(), Some(&single.out))?;
    let row = &out.table.rows[0];
    if let Some(msg) = &row.error {
        bail!("eps {} failed: {msg}", csv_float(eps));
    }
    say(
        &single,
        format!(
            "eps {}: H(0) = {}, max H = {}, sup density error = {}, max weak defect = {}",
            csv_float(eps),
            csv_float(row.h_initial),
            csv_float(row.max_h),
            csv_float(row.sup_density_error),
            csv_float(row.max_weak_defect)
        ),
    );
    let csv = single
        .out
        .join("per-eps")
        .join(format!("eps-{eps}"))
        .join("modenergy.csv");
    say(&single, format!("wrote {}", csv.display()));
    Ok(())
}
