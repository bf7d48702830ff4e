//! Scenario configuration: a flat, sectioned key-value text format.
//!
//! # Grammar
//!
//! ```text
//! # full-line comment (first non-blank character '#')
//! [section]
//! key = value
//! ```
//!
//! Blank lines are ignored.  Keys live inside a `[section]`; a duplicate
//! key within one section block is an error, but a section may be reopened
//! later, in which case scalar keys override earlier values (used for
//! command-line overrides) while `mode` lines always accumulate.
//!
//! ## Sections and keys
//!
//! | section        | keys |
//! |----------------|------|
//! | `[scenario]`   | `name` (string, default `"unnamed"`), `seed` (u64, default 0) |
//! | `[grid]`       | `dim` (1 or 2, required), `n` (points per dimension, required), `period` (default 2π) |
//! | `[background]` | `kind` = `constant` \| `modes` \| `file` (default `constant`); `value` (constant, default 1); `base` (modes, default 1); `mode` lines; `path` (field file) |
//! | `[initial]`    | `winding` (`w` or `wx,wy`, default 0), `psi0` (path to a wavefunction file; excludes `[phi0]`, `[s0]` and nonzero winding) |
//! | `[phi0]`       | `mode` lines — initial density fluctuation |
//! | `[s0]`         | `mode` lines — initial phase function |
//! | `[stream]`     | `mode` lines — 2D momentum stream function `f`; the flow starts from `m = (∂y f, −∂x f)` (flow-only scenarios) |
//! | `[evolution]`  | `eps` (comma list, strictly decreasing), `alpha` (default 1), `t_final` (required), `outputs` (snapshot count incl. endpoints, default 11, min 2), `dt` (optional explicit step), `run_gpe` (default true), `max_steps` (default 2000000) |
//! | `[limit]`      | `truncation` (spectral assembly cutoff, default 24 in 1D / 8 in 2D), `modes` (retained eigenmodes, default 40), `flow_dt` (default 5e-3) |
//! | `[tolerances]` | `solver` (default 1e-6), `projection` (default 1e-10), `resonance` (default 1e-8) — all positive |
//!
//! ## Mode lines
//!
//! A `mode` value is `k:amp` or `k:amp:phase` in 1D and `kx,ky:amp` or
//! `kx,ky:amp:phase` in 2D, contributing `amp · cos(k·x̂ + phase)` where
//! `x̂_c = 2π x_c / period`.  The zero wave vector is rejected (constants
//! enter through `base`/`value`), as are wave numbers at or beyond the grid
//! Nyquist limit.  Sines are written as phase-shifted cosines:
//! `sin θ = cos(θ − π/2)`.

use std::fs;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::grid::{TorusField, TorusGrid};

/// One trigonometric mode `amp · cos(k·x̂ + phase)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mode {
    pub k: [i64; 2],
    pub amp: f64,
    pub phase: f64,
}

/// Background density specification.
#[derive(Clone, Debug, PartialEq)]
pub enum DensitySpec {
    Constant(f64),
    Modes { base: f64, modes: Vec<Mode> },
    File(String),
}

/// Initial-data specification.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialSpec {
    Wkb {
        phi0: Vec<Mode>,
        s0: Vec<Mode>,
        winding: [f64; 2],
    },
    File(String),
}

/// Tolerance block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    /// Admission checks of the time integrators (solenoidality and the like).
    pub solver: f64,
    /// Weighted-Poisson / projection iteration tolerance.
    pub projection: f64,
    /// Resonance-detection tolerance coefficient.
    pub resonance: f64,
}

/// A fully parsed scenario.
#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub dim: usize,
    pub n: usize,
    pub period: f64,
    pub background: DensitySpec,
    pub initial: InitialSpec,
    /// Momentum stream-function modes (flow-only scenarios, 2D).
    pub stream: Vec<Mode>,
    /// Strictly decreasing; may be empty only when `run_gpe` is false.
    pub eps_list: Vec<f64>,
    pub alpha: f64,
    pub t_final: f64,
    /// Snapshot count including both endpoints.
    pub outputs: usize,
    /// Explicit wavefunction time step (otherwise the stable default).
    pub dt: Option<f64>,
    pub run_gpe: bool,
    pub max_steps: usize,
    /// Spectral cutoff of the acoustic-operator assembly.
    pub truncation: i64,
    /// Retained eigenmode count of the oscillating system.
    pub max_modes: usize,
    /// Base step of the limit-flow integrators.
    pub flow_dt: f64,
    pub tol: Tolerances,
    /// The verbatim configuration text this value was parsed from.
    pub source: String,
}

fn cfg_err(line: usize, msg: impl Into<String>) -> CoreError {
    CoreError::Config {
        line,
        msg: msg.into(),
    }
}

struct RawEntry {
    key: String,
    value: String,
    line: usize,
}

struct RawSection {
    name: String,
    line: usize,
    entries: Vec<RawEntry>,
}

fn scan(text: &str) -> Result<Vec<RawSection>> {
    let mut sections: Vec<RawSection> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if let Some(rest) = t.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| cfg_err(line, "unterminated [section] header"))?
                .trim()
                .to_string();
            if name.is_empty() {
                return Err(cfg_err(line, "empty section name"));
            }
            sections.push(RawSection {
                name,
                line,
                entries: Vec::new(),
            });
        } else {
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| cfg_err(line, "expected `key = value`"))?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(cfg_err(line, "empty key"));
            }
            let section = sections
                .last_mut()
                .ok_or_else(|| cfg_err(line, "key before the first [section]"))?;
            if key != "mode" && section.entries.iter().any(|e| e.key == key) {
                return Err(cfg_err(
                    line,
                    format!("duplicate key {key:?} in section [{}]", section.name),
                ));
            }
            section.entries.push(RawEntry {
                key,
                value: v.trim().to_string(),
                line,
            });
        }
    }
    Ok(sections)
}

fn parse_f64(e: &RawEntry) -> Result<f64> {
    let v: f64 = e
        .value
        .parse()
        .map_err(|_| cfg_err(e.line, format!("{}: bad number {:?}", e.key, e.value)))?;
    if !v.is_finite() {
        return Err(cfg_err(e.line, format!("{}: must be finite", e.key)));
    }
    Ok(v)
}

fn parse_int<T: std::str::FromStr>(e: &RawEntry) -> Result<T> {
    e.value
        .parse()
        .map_err(|_| cfg_err(e.line, format!("{}: bad integer {:?}", e.key, e.value)))
}

fn parse_bool(e: &RawEntry) -> Result<bool> {
    match e.value.as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(cfg_err(
            e.line,
            format!("{}: expected true or false, got {other:?}", e.key),
        )),
    }
}

fn parse_f64_list(e: &RawEntry) -> Result<Vec<f64>> {
    e.value
        .split(',')
        .map(|tok| {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|_| cfg_err(e.line, format!("{}: bad number {tok:?}", e.key)))?;
            if !v.is_finite() {
                return Err(cfg_err(e.line, format!("{}: must be finite", e.key)));
            }
            Ok(v)
        })
        .collect()
}

fn parse_vec2(e: &RawEntry, dim: usize) -> Result<[f64; 2]> {
    let parts = parse_f64_list(e)?;
    if parts.len() != dim {
        return Err(cfg_err(
            e.line,
            format!(
                "{}: expected {dim} component(s), got {}",
                e.key,
                parts.len()
            ),
        ));
    }
    let mut out = [0.0; 2];
    out[..dim].copy_from_slice(&parts);
    Ok(out)
}

fn parse_mode(e: &RawEntry, dim: usize) -> Result<Mode> {
    let parts: Vec<&str> = e.value.split(':').collect();
    if parts.len() != 2 && parts.len() != 3 {
        return Err(cfg_err(
            e.line,
            format!("mode: expected `k:amp` or `k:amp:phase`, got {:?}", e.value),
        ));
    }
    let ks: Vec<&str> = parts[0].split(',').collect();
    if ks.len() != dim {
        return Err(cfg_err(
            e.line,
            format!(
                "mode: wave vector needs {dim} component(s), got {}",
                ks.len()
            ),
        ));
    }
    let mut k = [0i64; 2];
    for (c, tok) in ks.iter().enumerate() {
        k[c] = tok
            .trim()
            .parse()
            .map_err(|_| cfg_err(e.line, format!("mode: bad wave number {tok:?}")))?;
    }
    if k[..dim].iter().all(|&v| v == 0) {
        return Err(cfg_err(
            e.line,
            "mode: the zero wave vector is not a mode (use base/value for constants)",
        ));
    }
    let amp: f64 = parts[1]
        .trim()
        .parse()
        .map_err(|_| cfg_err(e.line, format!("mode: bad amplitude {:?}", parts[1])))?;
    let phase: f64 = if parts.len() == 3 {
        parts[2]
            .trim()
            .parse()
            .map_err(|_| cfg_err(e.line, format!("mode: bad phase {:?}", parts[2])))?
    } else {
        0.0
    };
    if !amp.is_finite() || !phase.is_finite() {
        return Err(cfg_err(e.line, "mode: amplitude and phase must be finite"));
    }
    Ok(Mode { k, amp, phase })
}

/// Tracks a scalar value together with the line that set it.
#[derive(Clone, Copy)]
struct Slot<T> {
    value: Option<T>,
    line: usize,
}

impl<T> Default for Slot<T> {
    fn default() -> Self {
        Slot {
            value: None,
            line: 0,
        }
    }
}

impl<T> Slot<T> {
    fn set(&mut self, value: T, line: usize) {
        self.value = Some(value);
        self.line = line;
    }
}

#[derive(Default)]
struct Builder {
    name: Slot<String>,
    seed: Slot<u64>,
    dim: Slot<usize>,
    n: Slot<usize>,
    period: Slot<f64>,
    bg_kind: Slot<String>,
    bg_value: Slot<f64>,
    bg_base: Slot<f64>,
    bg_modes: Vec<(Mode, usize)>,
    bg_path: Slot<String>,
    winding: Slot<[f64; 2]>,
    psi0: Slot<String>,
    phi0: Vec<(Mode, usize)>,
    s0: Vec<(Mode, usize)>,
    stream: Vec<(Mode, usize)>,
    eps: Slot<Vec<f64>>,
    alpha: Slot<f64>,
    t_final: Slot<f64>,
    outputs: Slot<usize>,
    dt: Slot<f64>,
    run_gpe: Slot<bool>,
    max_steps: Slot<usize>,
    truncation: Slot<i64>,
    max_modes: Slot<usize>,
    flow_dt: Slot<f64>,
    tol_solver: Slot<f64>,
    tol_projection: Slot<f64>,
    tol_resonance: Slot<f64>,
}

impl ScenarioConfig {
    /// Parse a configuration from its text.
    pub fn parse(text: &str) -> Result<ScenarioConfig> {
        let sections = scan(text)?;
        let mut b = Builder::default();

        // The grid dimension is needed to parse vectors and modes; resolve it
        // first so its value is available regardless of section order.
        for sec in &sections {
            if sec.name == "grid" {
                for e in &sec.entries {
                    if e.key == "dim" {
                        b.dim.set(parse_int(e)?, e.line);
                    }
                }
            }
        }
        let dim = match b.dim.value {
            Some(d @ (1 | 2)) => d,
            Some(d) => return Err(cfg_err(b.dim.line, format!("dim: must be 1 or 2, got {d}"))),
            None => {
                let line = sections.first().map_or(1, |s| s.line);
                return Err(cfg_err(line, "missing required key dim in [grid]"));
            }
        };

        for sec in &sections {
            match sec.name.as_str() {
                "scenario" => {
                    for e in &sec.entries {
                        match e.key.as_str() {
                            "name" => b.name.set(e.value.clone(), e.line),
                            "seed" => b.seed.set(parse_int(e)?, e.line),
                            _ => return Err(unknown_key(e, "scenario")),
                        }
                    }
                }
                "grid" => {
                    for e in &sec.entries {
                        match e.key.as_str() {
                            "dim" => {} // already resolved
                            "n" => b.n.set(parse_int(e)?, e.line),
                            "period" => b.period.set(parse_f64(e)?, e.line),
                            _ => return Err(unknown_key(e, "grid")),
                        }
                    }
                }
                "background" => {
                    for e in &sec.entries {
                        match e.key.as_str() {
                            "kind" => b.bg_kind.set(e.value.clone(), e.line),
                            "value" => b.bg_value.set(parse_f64(e)?, e.line),
                            "base" => b.bg_base.set(parse_f64(e)?, e.line),
                            "mode" => b.bg_modes.push((parse_mode(e, dim)?, e.line)),
                            "path" => b.bg_path.set(e.value.clone(), e.line),
                            _ => return Err(unknown_key(e, "background")),
                        }
                    }
                }
                "initial" => {
                    for e in &sec.entries {
                        match e.key.as_str() {
                            "winding" => b.winding.set(parse_vec2(e, dim)?, e.line),
                            "psi0" => b.psi0.set(e.value.clone(), e.line),
                            _ => return Err(unknown_key(e, "initial")),
                        }
                    }
                }
                "phi0" | "s0" | "stream" => {
                    let list = match sec.name.as_str() {
                        "phi0" => &mut b.phi0,
                        "s0" => &mut b.s0,
                        _ => &mut b.stream,
                    };
                    for e in &sec.entries {
                        match e.key.as_str() {
                            "mode" => list.push((parse_mode(e, dim)?, e.line)),
                            _ => return Err(unknown_key(e, &sec.name)),
                        }
                    }
                }
                "evolution" => {
                    for e in &sec.entries {
                        match e.key.as_str() {
                            "eps" => b.eps.set(parse_f64_list(e)?, e.line),
                            "alpha" => b.alpha.set(parse_f64(e)?, e.line),
                            "t_final" => b.t_final.set(parse_f64(e)?, e.line),
                            "outputs" => b.outputs.set(parse_int(e)?, e.line),
                            "dt" => b.dt.set(parse_f64(e)?, e.line),
                            "run_gpe" => b.run_gpe.set(parse_bool(e)?, e.line),
                            "max_steps" => b.max_steps.set(parse_int(e)?, e.line),
                            _ => return Err(unknown_key(e, "evolution")),
                        }
                    }
                }
                "limit" => {
                    for e in &sec.entries {
                        match e.key.as_str() {
                            "truncation" => b.truncation.set(parse_int(e)?, e.line),
                            "modes" => b.max_modes.set(parse_int(e)?, e.line),
                            "flow_dt" => b.flow_dt.set(parse_f64(e)?, e.line),
                            _ => return Err(unknown_key(e, "limit")),
                        }
                    }
                }
                "tolerances" => {
                    for e in &sec.entries {
                        match e.key.as_str() {
                            "solver" => b.tol_solver.set(parse_f64(e)?, e.line),
                            "projection" => b.tol_projection.set(parse_f64(e)?, e.line),
                            "resonance" => b.tol_resonance.set(parse_f64(e)?, e.line),
                            _ => return Err(unknown_key(e, "tolerances")),
                        }
                    }
                }
                other => {
                    return Err(cfg_err(sec.line, format!("unknown section [{other}]")));
                }
            }
        }

        b.finish(text, dim, &sections)
    }

    /// Read and parse a configuration file.
    pub fn from_file(path: &Path) -> Result<ScenarioConfig> {
        let text =
            fs::read_to_string(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
        ScenarioConfig::parse(&text)
    }

    /// The grid this configuration describes.
    pub fn grid(&self) -> Result<TorusGrid> {
        TorusGrid::new(self.dim, self.n, self.period)
    }

    /// Snapshot times: `outputs` points uniformly spaced on `[0, t_final]`.
    pub fn output_times(&self) -> Vec<f64> {
        let m = self.outputs;
        (0..m)
            .map(|k| {
                if k + 1 == m {
                    self.t_final
                } else {
                    self.t_final * k as f64 / (m - 1) as f64
                }
            })
            .collect()
    }

    /// Apply command-line overrides by appending override sections to the
    /// source text and re-parsing, so the echoed configuration stays the
    /// exact text the run used.
    pub fn with_overrides(
        &self,
        eps: Option<f64>,
        resolution: Option<usize>,
    ) -> Result<ScenarioConfig> {
        if eps.is_none() && resolution.is_none() {
            return Ok(self.clone());
        }
        let mut text = self.source.clone();
        text.push_str("\n# command-line overrides\n");
        if let Some(e) = eps {
            text.push_str(&format!("[evolution]\neps = {e:e}\n"));
        }
        if let Some(n) = resolution {
            text.push_str(&format!("[grid]\nn = {n}\n"));
        }
        ScenarioConfig::parse(&text)
    }
}

fn unknown_key(e: &RawEntry, section: &str) -> CoreError {
    cfg_err(
        e.line,
        format!("unknown key {:?} in section [{section}]", e.key),
    )
}

impl Builder {
    fn finish(self, text: &str, dim: usize, sections: &[RawSection]) -> Result<ScenarioConfig> {
        let anchor = |name: &str| {
            sections
                .iter()
                .find(|s| s.name == name)
                .map_or(1, |s| s.line)
        };

        let n = self
            .n
            .value
            .ok_or_else(|| cfg_err(anchor("grid"), "missing required key n in [grid]"))?;
        let period = self.period.value.unwrap_or(2.0 * std::f64::consts::PI);
        if !(period > 0.0) {
            return Err(cfg_err(self.period.line, "period: must be positive"));
        }
        // Surface bad grid parameters here, with the section line.
        let grid =
            TorusGrid::new(dim, n, period).map_err(|e| cfg_err(anchor("grid"), e.to_string()))?;
        let check_modes = |modes: &[(Mode, usize)]| -> Result<Vec<Mode>> {
            let limit = (n / 2) as i64;
            for &(m, line) in modes {
                for c in 0..dim {
                    if m.k[c].unsigned_abs() as i64 >= limit {
                        return Err(cfg_err(
                            line,
                            format!(
                                "mode: wave number {} is at or beyond the Nyquist limit {limit}",
                                m.k[c]
                            ),
                        ));
                    }
                }
            }
            Ok(modes.iter().map(|&(m, _)| m).collect())
        };

        let background =
            match self.bg_kind.value.as_deref().unwrap_or("constant") {
                "constant" => {
                    if let Some((_, line)) = self.bg_modes.first() {
                        return Err(cfg_err(
                            *line,
                            "mode lines belong to `kind = modes` backgrounds",
                        ));
                    }
                    let v = self.bg_value.value.unwrap_or(1.0);
                    if !(v > 0.0) {
                        return Err(cfg_err(self.bg_value.line, "value: must be positive"));
                    }
                    DensitySpec::Constant(v)
                }
                "modes" => DensitySpec::Modes {
                    base: self.bg_base.value.unwrap_or(1.0),
                    modes: check_modes(&self.bg_modes)?,
                },
                "file" => DensitySpec::File(self.bg_path.value.ok_or_else(|| {
                    cfg_err(self.bg_kind.line, "kind = file requires a path key")
                })?),
                other => {
                    return Err(cfg_err(
                        self.bg_kind.line,
                        format!("kind: expected constant, modes or file, got {other:?}"),
                    ))
                }
            };

        let winding = self.winding.value.unwrap_or([0.0; 2]);
        let initial = if let Some(path) = self.psi0.value {
            if !self.phi0.is_empty() || !self.s0.is_empty() {
                return Err(cfg_err(
                    self.psi0.line,
                    "psi0 excludes [phi0] and [s0] sections",
                ));
            }
            if winding[..dim].iter().any(|&w| w != 0.0) {
                return Err(cfg_err(
                    self.psi0.line,
                    "psi0 excludes a nonzero winding (the file already fixes the phase)",
                ));
            }
            InitialSpec::File(path)
        } else {
            InitialSpec::Wkb {
                phi0: check_modes(&self.phi0)?,
                s0: check_modes(&self.s0)?,
                winding,
            }
        };

        let run_gpe = self.run_gpe.value.unwrap_or(true);
        let stream = check_modes(&self.stream)?;
        if !stream.is_empty() {
            if run_gpe {
                return Err(cfg_err(
                    self.stream[0].1,
                    "[stream] applies only to flow-only scenarios (run_gpe = false)",
                ));
            }
            if dim != 2 {
                return Err(cfg_err(
                    self.stream[0].1,
                    "[stream] requires a two-dimensional grid",
                ));
            }
        }
        if !run_gpe && stream.is_empty() {
            return Err(cfg_err(
                self.run_gpe.line,
                "run_gpe = false requires a [stream] section for the initial momentum",
            ));
        }

        let eps_list = self.eps.value.unwrap_or_default();
        if run_gpe && eps_list.is_empty() {
            return Err(cfg_err(
                anchor("evolution"),
                "missing required key eps in [evolution]",
            ));
        }
        for w in eps_list.windows(2) {
            if !(w[1] < w[0]) {
                return Err(cfg_err(
                    self.eps.line,
                    "eps: list must be strictly decreasing",
                ));
            }
        }
        if eps_list.iter().any(|&e| !(e > 0.0)) {
            return Err(cfg_err(self.eps.line, "eps: all values must be positive"));
        }

        let alpha = self.alpha.value.unwrap_or(1.0);
        if !(alpha > 0.0) {
            return Err(cfg_err(self.alpha.line, "alpha: must be positive"));
        }
        let t_final = self.t_final.value.ok_or_else(|| {
            cfg_err(
                anchor("evolution"),
                "missing required key t_final in [evolution]",
            )
        })?;
        if !(t_final > 0.0) {
            return Err(cfg_err(self.t_final.line, "t_final: must be positive"));
        }
        let outputs = self.outputs.value.unwrap_or(11);
        if outputs < 2 {
            return Err(cfg_err(self.outputs.line, "outputs: must be at least 2"));
        }
        if let Some(dt) = self.dt.value {
            if !(dt > 0.0) {
                return Err(cfg_err(self.dt.line, "dt: must be positive"));
            }
        }
        let max_steps = self.max_steps.value.unwrap_or(2_000_000);
        if max_steps == 0 {
            return Err(cfg_err(self.max_steps.line, "max_steps: must be positive"));
        }

        // The default cutoff adapts to the grid; an explicit value must fit.
        let default_truncation = (if dim == 1 { 24 } else { 8 })
            .min((grid.n() / 2) as i64 - 1)
            .max(1);
        let truncation = self.truncation.value.unwrap_or(default_truncation);
        if truncation < 1 {
            return Err(cfg_err(
                self.truncation.line,
                "truncation: must be positive",
            ));
        }
        if truncation >= (grid.n() / 2) as i64 {
            return Err(cfg_err(
                self.truncation.line,
                format!(
                    "truncation {truncation} is at or beyond the grid Nyquist limit {}",
                    grid.n() / 2
                ),
            ));
        }
        let max_modes = self.max_modes.value.unwrap_or(40);
        if max_modes == 0 {
            return Err(cfg_err(self.max_modes.line, "modes: must be positive"));
        }
        let flow_dt = self.flow_dt.value.unwrap_or(5e-3);
        if !(flow_dt > 0.0) {
            return Err(cfg_err(self.flow_dt.line, "flow_dt: must be positive"));
        }

        let tol = Tolerances {
            solver: self.tol_solver.value.unwrap_or(1e-6),
            projection: self.tol_projection.value.unwrap_or(1e-10),
            resonance: self.tol_resonance.value.unwrap_or(1e-8),
        };
        for (v, line, name) in [
            (tol.solver, self.tol_solver.line, "solver"),
            (tol.projection, self.tol_projection.line, "projection"),
            (tol.resonance, self.tol_resonance.line, "resonance"),
        ] {
            if !(v > 0.0) {
                return Err(cfg_err(line, format!("{name}: must be positive")));
            }
        }

        Ok(ScenarioConfig {
            name: self.name.value.unwrap_or_else(|| "unnamed".into()),
            seed: self.seed.value.unwrap_or(0),
            dim,
            n,
            period,
            background,
            initial,
            stream,
            eps_list,
            alpha,
            t_final,
            outputs,
            dt: self.dt.value,
            run_gpe,
            max_steps,
            truncation,
            max_modes,
            flow_dt,
            tol,
            source: text.to_string(),
        })
    }
}

/// Evaluate `base + Σ amp·cos(k·x̂ + phase)` on the grid (`x̂` the angular
/// coordinates, so integer wave vectors are periodic for any period).
pub fn synthesize_modes(grid: TorusGrid, base: f64, modes: &[Mode]) -> TorusField {
    let scale = 2.0 * std::f64::consts::PI / grid.period();
    TorusField::from_fn_real(grid, 1, |x, _| {
        let mut v = base;
        for m in modes {
            let mut arg = m.phase;
            for c in 0..grid.dim() {
                arg += m.k[c] as f64 * scale * x[c];
            }
            v += m.amp * arg.cos();
        }
        v
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = "\
# an exhaustive scenario
[scenario]
name = demo
seed = 42

[grid]
dim = 1
n = 64

[background]
kind = modes
base = 1
mode = 1:0.3:0

[phi0]
mode = 1:0.2
mode = 2:0.05:-1.5707963267948966

[s0]
mode = 1:0.1

[initial]
winding = 1

[evolution]
eps = 0.2, 0.1, 0.05
alpha = 1
t_final = 0.5
outputs = 6
run_gpe = true

[limit]
truncation = 12
modes = 16
flow_dt = 0.004

[tolerances]
solver = 1e-6
projection = 1e-11
resonance = 1e-8
";

    #[test]
    fn full_scenario_parses() {
        let cfg = ScenarioConfig::parse(FULL).unwrap();
        assert_eq!(cfg.name, "demo");
        assert_eq!(cfg.seed, 42);
        assert_eq!((cfg.dim, cfg.n), (1, 64));
        assert!((cfg.period - 2.0 * std::f64::consts::PI).abs() < 1e-15);
        match &cfg.background {
            DensitySpec::Modes { base, modes } => {
                assert_eq!(*base, 1.0);
                assert_eq!(
                    modes,
                    &[Mode {
                        k: [1, 0],
                        amp: 0.3,
                        phase: 0.0
                    }]
                );
            }
            other => panic!("unexpected background {other:?}"),
        }
        match &cfg.initial {
            InitialSpec::Wkb { phi0, s0, winding } => {
                assert_eq!(phi0.len(), 2);
                assert_eq!(phi0[1].k, [2, 0]);
                assert!(phi0[1].phase < 0.0);
                assert_eq!(s0.len(), 1);
                assert_eq!(*winding, [1.0, 0.0]);
            }
            other => panic!("unexpected initial {other:?}"),
        }
        assert_eq!(cfg.eps_list, vec![0.2, 0.1, 0.05]);
        assert_eq!(cfg.outputs, 6);
        assert_eq!(cfg.truncation, 12);
        assert_eq!(cfg.max_modes, 16);
        assert_eq!(cfg.tol.projection, 1e-11);
        assert_eq!(cfg.source, FULL);
        let times = cfg.output_times();
        assert_eq!(times.len(), 6);
        assert_eq!(times[0], 0.0);
        assert_eq!(*times.last().unwrap(), 0.5);
    }

    #[test]
    fn defaults_fill_a_minimal_scenario() {
        let cfg =
            ScenarioConfig::parse("[grid]\ndim = 2\nn = 32\n[evolution]\neps = 0.1\nt_final = 1\n")
                .unwrap();
        assert_eq!(cfg.name, "unnamed");
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.background, DensitySpec::Constant(1.0));
        assert_eq!(cfg.alpha, 1.0);
        assert_eq!(cfg.outputs, 11);
        assert!(cfg.run_gpe);
        assert_eq!(cfg.truncation, 8); // 2D default
        assert_eq!(cfg.max_modes, 40);
        assert_eq!(cfg.tol.solver, 1e-6);
        assert_eq!(cfg.dt, None);
    }

    fn err_line(text: &str) -> (usize, String) {
        match ScenarioConfig::parse(text).unwrap_err() {
            CoreError::Config { line, msg } => (line, msg),
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn diagnostics_carry_line_numbers() {
        // duplicate key on line 4
        let (line, msg) = err_line("[grid]\ndim = 1\nn = 32\nn = 64\n");
        assert_eq!(line, 4);
        assert!(msg.contains("duplicate"), "{msg}");

        // unknown key
        let (line, msg) = err_line("[grid]\ndim = 1\nn = 32\nfoo = 1\n");
        assert_eq!(line, 4);
        assert!(msg.contains("unknown key"), "{msg}");

        // unknown section
        let (line, msg) = err_line("[grid]\ndim = 1\nn = 32\n[wat]\n");
        assert_eq!(line, 4);
        assert!(msg.contains("unknown section"), "{msg}");

        // key outside a section
        let (line, _) = err_line("dim = 1\n");
        assert_eq!(line, 1);

        // missing '='
        let (line, msg) = err_line("[grid]\ndim 1\n");
        assert_eq!(line, 2);
        assert!(msg.contains("key = value"), "{msg}");

        // eps not decreasing, reported at the eps line
        let (line, msg) =
            err_line("[grid]\ndim = 1\nn = 32\n[evolution]\nt_final = 1\neps = 0.1, 0.2\n");
        assert_eq!(line, 6);
        assert!(msg.contains("strictly decreasing"), "{msg}");

        // bad mode wave vector arity
        let (line, msg) = err_line(
            "[grid]\ndim = 2\nn = 32\n[phi0]\nmode = 1:0.5\n[evolution]\neps = 0.1\nt_final = 1\n",
        );
        assert_eq!(line, 5);
        assert!(msg.contains("2 component"), "{msg}");

        // zero wave vector
        let (line, _) = err_line(
            "[grid]\ndim = 1\nn = 32\n[phi0]\nmode = 0:0.5\n[evolution]\neps = 0.1\nt_final = 1\n",
        );
        assert_eq!(line, 5);

        // mode beyond Nyquist
        let (_, msg) = err_line(
            "[grid]\ndim = 1\nn = 32\n[phi0]\nmode = 16:0.5\n[evolution]\neps = 0.1\nt_final = 1\n",
        );
        assert!(msg.contains("Nyquist"), "{msg}");
    }

    #[test]
    fn stream_rules_are_enforced() {
        // stream with run_gpe = true
        let (_, msg) = err_line(
            "[grid]\ndim = 2\nn = 32\n[stream]\nmode = 1,1:1\n[evolution]\neps = 0.1\nt_final = 1\n",
        );
        assert!(msg.contains("flow-only"), "{msg}");

        // flow-only without stream
        let (_, msg) =
            err_line("[grid]\ndim = 2\nn = 32\n[evolution]\nrun_gpe = false\nt_final = 1\n");
        assert!(msg.contains("requires a [stream]"), "{msg}");

        // stream in 1D
        let (_, msg) = err_line(
            "[grid]\ndim = 1\nn = 32\n[stream]\nmode = 1:1\n[evolution]\nrun_gpe = false\nt_final = 1\n",
        );
        assert!(msg.contains("two-dimensional"), "{msg}");

        // a valid flow-only scenario needs no eps
        let cfg = ScenarioConfig::parse(
            "[grid]\ndim = 2\nn = 32\n[stream]\nmode = 1,1:1\n[evolution]\nrun_gpe = false\nt_final = 1\n",
        )
        .unwrap();
        assert!(cfg.eps_list.is_empty());
        assert!(!cfg.run_gpe);
    }

    #[test]
    fn psi0_excludes_wkb_keys() {
        let (_, msg) = err_line(
            "[grid]\ndim = 1\nn = 32\n[initial]\npsi0 = a.csv\n[phi0]\nmode = 1:0.1\n[evolution]\neps = 0.1\nt_final = 1\n",
        );
        assert!(msg.contains("excludes"), "{msg}");
        let cfg = ScenarioConfig::parse(
            "[grid]\ndim = 1\nn = 32\n[initial]\npsi0 = a.csv\n[evolution]\neps = 0.1\nt_final = 1\n",
        )
        .unwrap();
        assert_eq!(cfg.initial, InitialSpec::File("a.csv".into()));
    }

    #[test]
    fn reopened_sections_override_scalars() {
        let base = "[grid]\ndim = 1\nn = 32\n[evolution]\neps = 0.2, 0.1\nt_final = 1\n";
        let cfg = ScenarioConfig::parse(base).unwrap();
        assert_eq!(cfg.eps_list, vec![0.2, 0.1]);

        let over = cfg.with_overrides(Some(0.05), Some(64)).unwrap();
        assert_eq!(over.eps_list, vec![0.05]);
        assert_eq!(over.n, 64);
        // the echoed source is the exact text that produced the values
        assert!(over.source.starts_with(base));
        assert!(over.source.contains("command-line overrides"));
        let again = ScenarioConfig::parse(&over.source).unwrap();
        assert_eq!(again.eps_list, vec![0.05]);
        assert_eq!(again.n, 64);
    }

    #[test]
    fn synthesize_matches_closed_form() {
        let grid = TorusGrid::unit(1, 32).unwrap();
        let f = synthesize_modes(
            grid,
            1.0,
            &[
                Mode {
                    k: [1, 0],
                    amp: 0.3,
                    phase: 0.0,
                },
                // sin(2x) written as a shifted cosine
                Mode {
                    k: [2, 0],
                    amp: 0.1,
                    phase: -std::f64::consts::FRAC_PI_2,
                },
            ],
        );
        for p in 0..grid.points() {
            let x = grid.coords(p)[0];
            let want = 1.0 + 0.3 * x.cos() + 0.1 * (2.0 * x).sin();
            assert!((f.comp(0)[p].re - want).abs() < 1e-14);
        }

        let grid2 = TorusGrid::unit(2, 8).unwrap();
        let g = synthesize_modes(
            grid2,
            0.0,
            &[Mode {
                k: [1, -1],
                amp: 0.5,
                phase: 0.25,
            }],
        );
        for p in 0..grid2.points() {
            let x = grid2.coords(p);
            let want = 0.5 * (x[0] - x[1] + 0.25).cos();
            assert!((g.comp(0)[p].re - want).abs() < 1e-14);
        }
    }
}
