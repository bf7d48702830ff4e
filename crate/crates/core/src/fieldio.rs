//! Plain-text serialization of field snapshots.
//!
//! # Format
//!
//! A field file is a CSV table preceded by a single header comment line:
//!
//! ```text
//! # {"dim":1,"n":8,"period":6.283185307179586,"components":1,"reality":"complex","eps":0.1,"alpha":1.0,"time":0.5}
//! i,c0_re,c0_im
//! 0,1e0,0e0
//! ...
//! ```
//!
//! * Line 1: `# ` followed by a JSON object describing the grid
//!   (`dim`, `n`, `period`), the sample layout (`components`,
//!   `reality` = `"real" | "complex"`), and optional trajectory metadata
//!   (`eps`, `alpha`, `time`).
//! * Line 2: column names — the grid indices (`i` in 1D, `i,j` in 2D)
//!   followed by `c<k>_re,c<k>_im` per component.
//! * One row per grid point in flat row-major order; every floating-point
//!   value is printed in shortest-round-trip scientific notation, so a
//!   write/read cycle reproduces the samples bit for bit (well inside the
//!   1e-12 fidelity contract).

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::gpe::WaveState;
use crate::grid::{Reality, TorusField, TorusGrid};

/// Optional trajectory metadata carried in the header line.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FieldMeta {
    pub eps: Option<f64>,
    pub alpha: Option<f64>,
    pub time: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dim: usize,
    n: usize,
    period: f64,
    components: usize,
    reality: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    time: Option<f64>,
}

/// Render a field (plus optional metadata) to the documented CSV text.
pub fn field_to_csv(field: &TorusField, meta: &FieldMeta) -> String {
    let grid = field.grid();
    let header = Header {
        dim: grid.dim(),
        n: grid.n(),
        period: grid.period(),
        components: field.components(),
        reality: match field.reality() {
            Reality::Real => "real".into(),
            Reality::Complex => "complex".into(),
        },
        eps: meta.eps,
        alpha: meta.alpha,
        time: meta.time,
    };
    // Header serialization cannot fail: plain struct of numbers and strings.
    let mut out = format!("# {}\n", serde_json::to_string(&header).unwrap());
    for d in 0..grid.dim() {
        out.push_str(["i", "j"][d]);
        out.push(',');
    }
    for c in 0..field.components() {
        if c > 0 {
            out.push(',');
        }
        out.push_str(&format!("c{c}_re,c{c}_im"));
    }
    out.push('\n');
    for p in 0..grid.points() {
        let idx = grid.multi(p);
        for d in 0..grid.dim() {
            out.push_str(&format!("{},", idx[d]));
        }
        for c in 0..field.components() {
            if c > 0 {
                out.push(',');
            }
            let z = field.comp(c)[p];
            out.push_str(&format!("{:e},{:e}", z.re, z.im));
        }
        out.push('\n');
    }
    out
}

fn format_err(origin: &str, msg: impl Into<String>) -> CoreError {
    CoreError::FieldFormat {
        path: origin.to_string(),
        msg: msg.into(),
    }
}

fn parse_f64(tok: &str, origin: &str, line: usize) -> Result<f64> {
    tok.trim()
        .parse::<f64>()
        .map_err(|_| format_err(origin, format!("line {line}: bad float {tok:?}")))
}

/// Parse the documented CSV text back into a field.  `origin` names the
/// source (a path or a description) for error messages.
pub fn field_from_csv(text: &str, origin: &str) -> Result<(TorusField, FieldMeta)> {
    let mut lines = text.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| format_err(origin, "empty file"))?;
    let json = header_line
        .strip_prefix('#')
        .ok_or_else(|| format_err(origin, "first line must be a '# {...}' header comment"))?
        .trim();
    let header: Header = serde_json::from_str(json)
        .map_err(|e| format_err(origin, format!("bad header JSON: {e}")))?;
    let grid = TorusGrid::new(header.dim, header.n, header.period)?;
    let reality = match header.reality.as_str() {
        "real" => Reality::Real,
        "complex" => Reality::Complex,
        other => return Err(format_err(origin, format!("unknown reality {other:?}"))),
    };
    if header.components == 0 {
        return Err(format_err(origin, "components must be at least 1"));
    }
    // Column-name line (validated only for count; names are documentation).
    let expected_cols = grid.dim() + 2 * header.components;
    let names = lines
        .next()
        .ok_or_else(|| format_err(origin, "missing column-name line"))?;
    if names.split(',').count() != expected_cols {
        return Err(format_err(
            origin,
            format!(
                "column-name line has {} fields, expected {expected_cols}",
                names.split(',').count()
            ),
        ));
    }

    let mut field = TorusField::zeros(grid, header.components, reality);
    let mut rows = 0usize;
    for (lineno, line) in lines.enumerate() {
        let lineno = lineno + 3; // 1-based, after header and column lines
        if line.trim().is_empty() {
            continue;
        }
        if rows >= grid.points() {
            return Err(format_err(
                origin,
                format!("more data rows than the {} grid points", grid.points()),
            ));
        }
        let toks: Vec<&str> = line.split(',').collect();
        if toks.len() != expected_cols {
            return Err(format_err(
                origin,
                format!(
                    "line {lineno}: {} fields, expected {expected_cols}",
                    toks.len()
                ),
            ));
        }
        let expected_idx = grid.multi(rows);
        for d in 0..grid.dim() {
            let got: usize = toks[d].trim().parse().map_err(|_| {
                format_err(origin, format!("line {lineno}: bad index {:?}", toks[d]))
            })?;
            if got != expected_idx[d] {
                return Err(format_err(
                    origin,
                    format!(
                        "line {lineno}: index {got}, expected {} (rows must be in \
                         flat row-major order)",
                        expected_idx[d]
                    ),
                ));
            }
        }
        for c in 0..header.components {
            let re = parse_f64(toks[grid.dim() + 2 * c], origin, lineno)?;
            let im = parse_f64(toks[grid.dim() + 2 * c + 1], origin, lineno)?;
            field.comp_mut(c)[rows] = Complex64::new(re, im);
        }
        rows += 1;
    }
    if rows != grid.points() {
        return Err(format_err(
            origin,
            format!("{rows} data rows, expected {}", grid.points()),
        ));
    }
    Ok((
        field,
        FieldMeta {
            eps: header.eps,
            alpha: header.alpha,
            time: header.time,
        },
    ))
}

/// Write a field snapshot to `path`.
pub fn write_field(path: &Path, field: &TorusField, meta: &FieldMeta) -> Result<()> {
    fs::write(path, field_to_csv(field, meta))
        .map_err(|e| CoreError::io(path.display().to_string(), e))
}

/// Read a field snapshot from `path`.
pub fn read_field(path: &Path) -> Result<(TorusField, FieldMeta)> {
    let text =
        fs::read_to_string(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    field_from_csv(&text, &path.display().to_string())
}

/// Write a wavefunction snapshot (`psi` with its `eps`, `alpha`, `time`).
pub fn write_wave_state(path: &Path, state: &WaveState) -> Result<()> {
    write_field(
        path,
        &state.psi,
        &FieldMeta {
            eps: Some(state.eps),
            alpha: Some(state.alpha),
            time: Some(state.time),
        },
    )
}

/// Read a wavefunction snapshot; the header must carry `eps`, `alpha`,
/// `time` and describe a single-component complex field.
pub fn read_wave_state(path: &Path) -> Result<WaveState> {
    let (psi, meta) = read_field(path)?;
    let origin = path.display().to_string();
    if psi.components() != 1 || psi.reality() != Reality::Complex {
        return Err(format_err(
            &origin,
            "a wavefunction file must hold one complex component",
        ));
    }
    let need = |v: Option<f64>, name: &str| {
        v.ok_or_else(|| format_err(&origin, format!("header is missing {name:?}")))
    };
    Ok(WaveState {
        psi,
        eps: need(meta.eps, "eps")?,
        alpha: need(meta.alpha, "alpha")?,
        time: need(meta.time, "time")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact_for_random_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (dim, n, components, reality) in [
            (1, 8, 1, Reality::Real),
            (1, 16, 2, Reality::Complex),
            (2, 8, 2, Reality::Real),
            (2, 8, 1, Reality::Complex),
        ] {
            let grid = TorusGrid::new(dim, n, 2.0 * std::f64::consts::PI).unwrap();
            let mut field = TorusField::zeros(grid, components, reality);
            for v in field.data_mut() {
                // Wild magnitudes exercise the shortest-round-trip formatting.
                let mag = 10f64.powi(rng.gen_range(-18..18));
                *v = Complex64::new(
                    rng.gen_range(-1.0..1.0) * mag,
                    if reality == Reality::Real {
                        0.0
                    } else {
                        rng.gen_range(-1.0..1.0) * mag
                    },
                );
            }
            let meta = FieldMeta {
                eps: Some(0.1),
                alpha: Some(1.0),
                time: Some(0.375),
            };
            let text = field_to_csv(&field, &meta);
            let (back, meta_back) = field_from_csv(&text, "roundtrip").unwrap();
            assert_eq!(back.grid().dim(), dim);
            assert_eq!(back.grid().n(), n);
            assert_eq!(back.components(), components);
            assert_eq!(back.reality(), reality);
            assert_eq!(meta_back, meta);
            for (a, b) in field.data().iter().zip(back.data()) {
                assert_eq!(a.re.to_bits(), b.re.to_bits());
                assert_eq!(a.im.to_bits(), b.im.to_bits());
            }
        }
    }

    #[test]
    fn wave_state_round_trips_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("psi.csv");
        let grid = TorusGrid::unit(1, 16).unwrap();
        let psi =
            TorusField::from_fn_complex(grid, 1, |x, _| Complex64::new(x[0].cos(), x[0].sin()));
        let state = WaveState {
            psi,
            time: 0.25,
            eps: 0.05,
            alpha: 1.0,
        };
        write_wave_state(&path, &state).unwrap();
        let back = read_wave_state(&path).unwrap();
        assert_eq!(back.time, state.time);
        assert_eq!(back.eps, state.eps);
        assert_eq!(back.alpha, state.alpha);
        for (a, b) in state.psi.data().iter().zip(back.psi.data()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn malformed_inputs_are_rejected_with_context() {
        let grid = TorusGrid::unit(1, 8).unwrap();
        let field = TorusField::from_fn_real(grid, 1, |x, _| x[0]);
        let good = field_to_csv(&field, &FieldMeta::default());

        // missing header
        let no_header = good.lines().skip(1).collect::<Vec<_>>().join("\n");
        assert!(matches!(
            field_from_csv(&no_header, "t").unwrap_err(),
            CoreError::FieldFormat { .. }
        ));

        // truncated data
        let truncated = good.lines().take(6).collect::<Vec<_>>().join("\n");
        let err = field_from_csv(&truncated, "t").unwrap_err();
        assert!(err.to_string().contains("expected 8"), "{err}");

        // corrupt float
        let corrupt = good.replacen(",0e0", ",zounds", 1);
        assert!(field_from_csv(&corrupt, "t").is_err());

        // missing file surfaces an io error with the path
        let err = read_field(Path::new("/nonexistent/field.csv")).unwrap_err();
        assert!(matches!(err, CoreError::Io { .. }));

        // wave state requires metadata
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bare.csv");
        let psi = TorusField::from_fn_complex(grid, 1, |_, _| Complex64::new(1.0, 0.0));
        write_field(&path, &psi, &FieldMeta::default()).unwrap();
        let err = read_wave_state(&path).unwrap_err();
        assert!(err.to_string().contains("eps"), "{err}");
    }
}
