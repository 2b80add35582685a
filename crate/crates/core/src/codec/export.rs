use std::fmt::Write as _;

use super::Grid;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Value interval mapped onto `0..=255`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgmRange {
    /// `[-1, 1]`, for angle grids.
    Signed,
    /// `[0, 1]`, for the confidence grid.
    Unit,
}

/// Binary 8-bit PGM (P5). Values outside the range are clamped.
pub fn to_pgm<T: Scalar>(grid: &Grid<T>, range: PgmRange) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", grid.w, grid.h).into_bytes();
    out.extend(grid.data.iter().map(|&v| {
        let v = v.as_f64();
        let unit = match range {
            PgmRange::Signed => (v + 1.0) / 2.0,
            PgmRange::Unit => v,
        };
        let unit = if unit.is_nan() { 0.0 } else { unit.clamp(0.0, 1.0) };
        (unit * 255.0).round() as u8
    }));
    out
}

/// One grid row per line, values separated by single spaces, printed with
/// enough digits to round-trip exactly.
pub fn to_text_dump<T: Scalar>(grid: &Grid<T>) -> String {
    let mut s = String::new();
    for row in grid.data.chunks(grid.w) {
        let line: Vec<String> = row.iter().map(|v| format!("{:?}", v.as_f64())).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    s
}

pub fn parse_text_dump<T: Scalar>(text: &str) -> Result<Grid<T>> {
    let mut data = Vec::new();
    let mut w = None;
    let mut h = 0;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map(T::lit).map_err(|e| Error::Format {
                    location: format!("line {}", i + 1),
                    detail: format!("{tok:?}: {e}"),
                })
            })
            .collect::<Result<Vec<T>>>()?;
        match w {
            None => w = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Format {
                    location: format!("line {}", i + 1),
                    detail: format!("expected {w} values, got {}", row.len()),
                })
            }
            _ => {}
        }
        data.extend(row);
        h += 1;
    }
    let w = w.ok_or_else(|| Error::Format { location: "line 1".into(), detail: "empty dump".into() })?;
    Grid::from_vec(h, w, data)
}
