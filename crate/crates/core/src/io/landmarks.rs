//! Landmark text files: a count line, then one `x y` line per point.

use std::fmt::Write;
use std::path::Path;

use super::{read_text, write_bytes};
use crate::error::{Error, Result};
use crate::registration::{LandmarkSet, Point, N_LANDMARKS};

/// Six decimals per coordinate.
pub fn format_landmarks(lms: &LandmarkSet) -> String {
    let mut out = format!("{N_LANDMARKS}\n");
    for p in lms.points() {
        writeln!(out, "{:.6} {:.6}", p.x, p.y).unwrap();
    }
    out
}

pub fn parse_landmarks(text: &str) -> Result<LandmarkSet> {
    let mut offset = 0;
    let mut lines = text.split_inclusive('\n').map(|l| {
        let at = offset;
        offset += l.len();
        (at, l.trim())
    });
    let (at, first) = lines.next().ok_or_else(|| Error::parse(0, "empty landmark file"))?;
    let count: usize = first
        .parse()
        .map_err(|_| Error::parse(at, format!("expected point count, got `{first}`")))?;
    if count != N_LANDMARKS {
        return Err(Error::parse(at, format!("expected {N_LANDMARKS} points, file declares {count}")));
    }
    let mut points = Vec::with_capacity(count);
    for (at, line) in lines {
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace().map(str::parse::<f64>);
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(x)), Some(Ok(y)), None) if x.is_finite() && y.is_finite() => points.push(Point::new(x, y)),
            _ => return Err(Error::parse(at, format!("expected `x y`, got `{line}`"))),
        }
    }
    if points.len() != count {
        return Err(Error::parse(
            text.len(),
            format!("expected {count} points, found {}", points.len()),
        ));
    }
    LandmarkSet::new(points)
}

pub fn read_landmarks(path: &Path) -> Result<LandmarkSet> {
    parse_landmarks(&read_text(path)?)
}

pub fn write_landmarks(path: &Path, lms: &LandmarkSet) -> Result<()> {
    write_bytes(path, format_landmarks(lms).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> LandmarkSet {
        LandmarkSet::new((0..N_LANDMARKS).map(|i| Point::new(i as f64 * 1.234_567_89, 200.0 - i as f64 / 3.0)).collect())
            .unwrap()
    }

    #[test]
    fn round_trip_at_six_decimals() {
        let text = format_landmarks(&sample());
        let back = parse_landmarks(&text).unwrap();
        for (a, b) in sample().points().iter().zip(back.points()) {
            assert!((a.x - b.x).abs() <= 5e-7 && (a.y - b.y).abs() <= 5e-7);
        }
        assert_eq!(format_landmarks(&back), text);
    }

    #[test]
    fn bad_line_offset() {
        let mut text = format_landmarks(&sample());
        let at = text.find('\n').unwrap() + 1;
        text.replace_range(at..at + 1, "z");
        match parse_landmarks(&text) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, at),
            other => panic!("{other:?}"),
        }
        assert!(parse_landmarks("65\n").is_err());
        assert!(parse_landmarks("66\n1 2\n").is_err());
    }
}
