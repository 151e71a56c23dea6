//! Adobe/Resolve `.cube` text format.
//!
//! ```text
//! # comment
//! TITLE "name"
//! LUT_3D_SIZE 33
//! DOMAIN_MIN 0.0 0.0 0.0
//! DOMAIN_MAX 1.0 1.0 1.0
//! 0.000000 0.000000 0.000000
//! ...
//! ```
//!
//! Tokens are whitespace separated, `#` starts a comment anywhere on a line,
//! CRLF line endings are accepted, and data rows list the red index fastest.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::Lut3D;
use crate::image::ImagePlane;
use crate::{FilmError, Result, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct CubeFile<T> {
    pub title: Option<String>,
    pub domain_min: [f64; 3],
    pub domain_max: [f64; 3],
    pub lut: Lut3D<T>,
}

impl<T: Scalar> CubeFile<T> {
    pub fn new(lut: Lut3D<T>) -> Self {
        Self {
            title: None,
            domain_min: [0.0; 3],
            domain_max: [1.0; 3],
            lut,
        }
    }

    /// Rescales input from the declared domain to `[0, 1]`, then applies the lattice.
    pub fn apply(&self, img: &ImagePlane<T>) -> Result<ImagePlane<T>> {
        img.require_rgb()?;
        let unit = self.domain_min == [0.0; 3] && self.domain_max == [1.0; 3];
        if unit {
            return super::apply_lut(&self.lut, img);
        }
        let lo = self.domain_min.map(T::lit);
        let span = [0, 1, 2].map(|k| T::lit(self.domain_max[k] - self.domain_min[k]));
        let data = img
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - lo[i % 3]) / span[i % 3])
            .collect();
        super::apply_lut(&self.lut, &ImagePlane::new(img.height(), img.width(), 3, data)?)
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> FilmError {
    FilmError::CubeParse {
        line,
        msg: msg.into(),
    }
}

fn parse_floats<const N: usize>(tokens: &[&str], line: usize) -> Result<[f64; N]> {
    if tokens.len() != N {
        return Err(parse_err(line, format!("expected {N} numbers, found {}", tokens.len())));
    }
    let mut out = [0.0; N];
    for (o, t) in out.iter_mut().zip(tokens) {
        *o = t
            .parse::<f64>()
            .map_err(|_| parse_err(line, format!("not a number: {t:?}")))?;
        if !o.is_finite() {
            return Err(parse_err(line, format!("non-finite value {t:?}")));
        }
    }
    Ok(out)
}

pub fn parse_cube<T: Scalar>(text: &str) -> Result<CubeFile<T>> {
    let mut title = None;
    let mut size: Option<usize> = None;
    let mut domain_min = [0.0; 3];
    let mut domain_max = [1.0; 3];
    let mut rows: Vec<[f64; 3]> = Vec::new();

    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let head = tokens[0];
        if head.starts_with(|c: char| c.is_ascii_alphabetic()) && head.parse::<f64>().is_err() {
            if !rows.is_empty() {
                return Err(parse_err(line_no, format!("keyword {head} after data rows")));
            }
            match head {
                "TITLE" => {
                    let rest = line["TITLE".len()..].trim();
                    title = Some(rest.trim_matches('"').to_string());
                }
                "LUT_3D_SIZE" => {
                    let [m] = parse_floats::<1>(&tokens[1..], line_no)?;
                    if m.fract() != 0.0 || !(2.0..=256.0).contains(&m) {
                        return Err(parse_err(line_no, format!("invalid LUT_3D_SIZE {m}")));
                    }
                    size = Some(m as usize);
                }
                "DOMAIN_MIN" => domain_min = parse_floats::<3>(&tokens[1..], line_no)?,
                "DOMAIN_MAX" => domain_max = parse_floats::<3>(&tokens[1..], line_no)?,
                "LUT_3D_INPUT_RANGE" => {
                    let [lo, hi] = parse_floats::<2>(&tokens[1..], line_no)?;
                    domain_min = [lo; 3];
                    domain_max = [hi; 3];
                }
                "LUT_1D_SIZE" | "LUT_1D_INPUT_RANGE" => {
                    return Err(parse_err(line_no, "1D LUTs are not supported"));
                }
                other => log::debug!("cube line {line_no}: ignoring keyword {other}"),
            }
            continue;
        }
        if size.is_none() {
            return Err(parse_err(line_no, "data row before LUT_3D_SIZE"));
        }
        rows.push(parse_floats::<3>(&tokens, line_no)?);
    }

    let m = size.ok_or_else(|| parse_err(0, "missing LUT_3D_SIZE"))?;
    if rows.len() != m * m * m {
        return Err(parse_err(
            text.lines().count(),
            format!("expected {} data rows, found {}", m * m * m, rows.len()),
        ));
    }
    for k in 0..3 {
        if domain_max[k] <= domain_min[k] {
            return Err(parse_err(0, format!("empty domain on channel {k}")));
        }
    }
    let mut data = vec![[T::zero(); 3]; m * m * m];
    for (i, row) in rows.iter().enumerate() {
        let (r, g, b) = (i % m, (i / m) % m, i / (m * m));
        data[(r * m + g) * m + b] = row.map(T::lit);
    }
    Ok(CubeFile {
        title,
        domain_min,
        domain_max,
        lut: Lut3D::new(m, data)?,
    })
}

pub fn read_cube<T: Scalar>(path: impl AsRef<Path>) -> Result<CubeFile<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| FilmError::io(path, e))?;
    parse_cube(&text)
}

/// Serializes with six decimals per value.
pub fn write_cube<T: Scalar>(cube: &CubeFile<T>) -> String {
    let m = cube.lut.bins();
    let mut s = String::with_capacity(m * m * m * 30 + 128);
    if let Some(t) = &cube.title {
        let _ = writeln!(s, "TITLE \"{}\"", t.replace('"', "'"));
    }
    let _ = writeln!(s, "LUT_3D_SIZE {m}");
    let [a, b, c] = cube.domain_min;
    let _ = writeln!(s, "DOMAIN_MIN {a:.6} {b:.6} {c:.6}");
    let [a, b, c] = cube.domain_max;
    let _ = writeln!(s, "DOMAIN_MAX {a:.6} {b:.6} {c:.6}");
    for bi in 0..m {
        for g in 0..m {
            for r in 0..m {
                let [x, y, z] = cube.lut.get(r, g, bi).map(|v| v.to_f64_lossless());
                let _ = writeln!(s, "{x:.6} {y:.6} {z:.6}");
            }
        }
    }
    s
}

pub fn write_cube_file<T: Scalar>(cube: &CubeFile<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_cube(cube)).map_err(|e| FilmError::io(path, e))
}
