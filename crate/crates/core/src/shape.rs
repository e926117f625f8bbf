//! Shape matrices and the compiled shape table.
//!
//! A shape is given as an integer grid: `-1` marks cells outside the shape and
//! the labels `0..n` each occupy exactly one cell. The shape table maps every
//! label to the labels in its surrounding 3x3 window together with the bearing
//! and distance to each of them. Bearings use +x = increasing column and
//! +y = decreasing row.

use std::collections::VecDeque;
use std::f64::consts::SQRT_2;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::vec2::{normalize_angle, Vec2};

/// Marker for grid cells that are not part of the shape.
pub const EMPTY: i32 = -1;

pub const TABLE_HEADER: &str = "label,neighbor,angle_rad,distance_m";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapeError {
    #[error("shape matrix is empty")]
    Empty,
    #[error("row {row} has {found} columns, expected {expected}")]
    Ragged { row: usize, expected: usize, found: usize },
    #[error("invalid token {token:?} at row {row}")]
    BadToken { row: usize, token: String },
    #[error("label {0} appears more than once")]
    DuplicateLabel(i32),
    #[error("label {missing} is missing (labels must cover 0..{n})")]
    MissingLabel { missing: usize, n: usize },
    #[error("shape has no seed cell (label 0)")]
    NoSeed,
    #[error("shape is disconnected: label {0} is not 8-connected to label 0")]
    Disconnected(usize),
    #[error("spacing must be positive and finite, got {0}")]
    BadSpacing(f64),
    #[error("malformed shape table: {0}")]
    BadTable(String),
}

/// A validated integer shape matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeMatrix {
    rows: usize,
    cols: usize,
    cells: Vec<i32>,
    /// (row, col) of each label.
    positions: Vec<(usize, usize)>,
}

impl ShapeMatrix {
    /// Validate a row-major grid.
    pub fn from_cells(rows: usize, cols: usize, cells: Vec<i32>) -> Result<Self, ShapeError> {
        if rows == 0 || cols == 0 || cells.is_empty() {
            return Err(ShapeError::Empty);
        }
        assert_eq!(cells.len(), rows * cols, "cell count must equal rows * cols");

        let max = cells.iter().copied().max().unwrap_or(EMPTY);
        if max < 0 {
            return Err(ShapeError::NoSeed);
        }
        let mut slots: Vec<Option<(usize, usize)>> = vec![None; max as usize + 1];
        for (idx, &label) in cells.iter().enumerate() {
            if label < 0 {
                continue;
            }
            let slot = &mut slots[label as usize];
            if slot.is_some() {
                return Err(ShapeError::DuplicateLabel(label));
            }
            *slot = Some((idx / cols, idx % cols));
        }
        if slots[0].is_none() {
            return Err(ShapeError::NoSeed);
        }
        let n = slots.len();
        let positions = slots
            .into_iter()
            .enumerate()
            .map(|(label, p)| p.ok_or(ShapeError::MissingLabel { missing: label, n }))
            .collect::<Result<Vec<_>, _>>()?;

        let m = ShapeMatrix { rows, cols, cells, positions };
        m.check_connected()?;
        Ok(m)
    }

    fn check_connected(&self) -> Result<(), ShapeError> {
        let mut seen = vec![false; self.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(label) = queue.pop_front() {
            for (_, other) in self.window(label) {
                if !seen[other] {
                    seen[other] = true;
                    queue.push_back(other);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(label) => Err(ShapeError::Disconnected(label)),
            None => Ok(()),
        }
    }

    /// Labeled cells in the 3x3 window around `label`, as ((d_row, d_col), label).
    fn window(&self, label: usize) -> impl Iterator<Item = ((i64, i64), usize)> + '_ {
        let (r, c) = self.positions[label];
        (-1i64..=1)
            .flat_map(|dr| (-1i64..=1).map(move |dc| (dr, dc)))
            .filter(|&d| d != (0, 0))
            .filter_map(move |(dr, dc)| {
                let rr = r as i64 + dr;
                let cc = c as i64 + dc;
                if rr < 0 || cc < 0 || rr >= self.rows as i64 || cc >= self.cols as i64 {
                    return None;
                }
                let v = self.cells[rr as usize * self.cols + cc as usize];
                (v >= 0).then_some(((dr, dc), v as usize))
            })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of labels (bots required).
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn cell(&self, row: usize, col: usize) -> i32 {
        self.cells[row * self.cols + col]
    }

    /// (row, col) of `label`.
    pub fn position_of(&self, label: usize) -> (usize, usize) {
        self.positions[label]
    }
}

impl FromStr for ShapeMatrix {
    type Err = ShapeError;

    /// Rows are separated by newlines (or `/`), tokens by whitespace.
    fn from_str(text: &str) -> Result<Self, ShapeError> {
        let mut rows: Vec<Vec<i32>> = Vec::new();
        for line in text.split(['\n', '/']) {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = rows.len();
            let parsed = line
                .split_whitespace()
                .map(|tok| match tok.parse::<i32>() {
                    Ok(v) if v >= EMPTY => Ok(v),
                    _ => Err(ShapeError::BadToken { row, token: tok.to_string() }),
                })
                .collect::<Result<Vec<_>, _>>()?;
            if let Some(first) = rows.first() {
                if first.len() != parsed.len() {
                    return Err(ShapeError::Ragged { row, expected: first.len(), found: parsed.len() });
                }
            }
            rows.push(parsed);
        }
        if rows.is_empty() {
            return Err(ShapeError::Empty);
        }
        let (r, c) = (rows.len(), rows[0].len());
        ShapeMatrix::from_cells(r, c, rows.concat())
    }
}

impl fmt::Display for ShapeMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|c| self.cell(r, c).to_string()).collect();
            writeln!(f, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

/// One entry of a shape-table row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborRef {
    pub label: usize,
    /// Bearing from the row's label to `label`, in (-π, π].
    pub angle: f64,
    /// Meters.
    pub distance: f64,
}

impl NeighborRef {
    /// Offset vector from the row's label to this neighbor.
    pub fn offset(&self) -> Vec2 {
        Vec2::polar(self.distance, self.angle)
    }
}

/// Compiled formation geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeTable {
    spacing: f64,
    rows: Vec<Vec<NeighborRef>>,
    /// Grid position of every label relative to label 0, in meters.
    layout: Vec<Vec2>,
}

/// Compile the shape table of `m` with grid pitch `spacing` meters.
pub fn build_shape_table(m: &ShapeMatrix, spacing: f64) -> Result<ShapeTable, ShapeError> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(ShapeError::BadSpacing(spacing));
    }
    let rows = (0..m.len())
        .map(|label| {
            let mut row: Vec<NeighborRef> = m
                .window(label)
                .map(|((dr, dc), other)| {
                    let (dx, dy) = (dc as f64, -dr as f64);
                    let distance = if dr != 0 && dc != 0 { spacing * SQRT_2 } else { spacing };
                    NeighborRef { label: other, angle: normalize_angle(dy.atan2(dx)), distance }
                })
                .collect();
            row.sort_by_key(|n| n.label);
            row
        })
        .collect();
    let (r0, c0) = m.position_of(0);
    let layout = (0..m.len())
        .map(|label| {
            let (r, c) = m.position_of(label);
            Vec2::new((c as f64 - c0 as f64) * spacing, (r0 as f64 - r as f64) * spacing)
        })
        .collect();
    Ok(ShapeTable { spacing, rows, layout })
}

impl ShapeTable {
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Number of labels.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, label: usize) -> &[NeighborRef] {
        &self.rows[label]
    }

    pub fn contains(&self, label: i32) -> bool {
        label >= 0 && (label as usize) < self.rows.len()
    }

    /// Entry for `neighbor` in the row of `label`, if they are grid neighbors.
    pub fn entry(&self, label: usize, neighbor: usize) -> Option<&NeighborRef> {
        self.rows.get(label)?.iter().find(|n| n.label == neighbor)
    }

    /// Designed offset from `from` to `to` (any two labels), in meters.
    pub fn reference_offset(&self, from: usize, to: usize) -> Vec2 {
        self.layout[to] - self.layout[from]
    }

    /// Designed position of `label` relative to label 0.
    pub fn layout(&self) -> &[Vec2] {
        &self.layout
    }

    /// CSV rendering: header plus one line per (label, neighbor) pair.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TABLE_HEADER);
        out.push('\n');
        for (label, row) in self.rows.iter().enumerate() {
            for n in row {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    label,
                    n.label,
                    fmt_fixed9(n.angle),
                    fmt_fixed9(n.distance)
                ));
            }
        }
        out
    }

    /// Parse a table written by [`ShapeTable::to_csv`]. The spacing is recovered
    /// from the shortest listed distance.
    pub fn from_csv(text: &str) -> Result<ShapeTable, ShapeError> {
        let bad = |msg: String| ShapeError::BadTable(msg);
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
        if header.iter().collect::<Vec<_>>().join(",") != TABLE_HEADER {
            return Err(bad(format!("unexpected header {:?}", header)));
        }
        let mut edges = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let field = |i: usize| rec.get(i).ok_or_else(|| bad("short record".into()));
            let label: usize = field(0)?.parse().map_err(|_| bad("bad label".into()))?;
            let neighbor: usize = field(1)?.parse().map_err(|_| bad("bad neighbor".into()))?;
            let angle: f64 = field(2)?.parse().map_err(|_| bad("bad angle".into()))?;
            let distance: f64 = field(3)?.parse().map_err(|_| bad("bad distance".into()))?;
            edges.push((label, NeighborRef { label: neighbor, angle, distance }));
        }
        let n = edges.iter().map(|(l, e)| (*l).max(e.label) + 1).max().unwrap_or(1);
        let spacing = edges.iter().map(|(_, e)| e.distance).fold(f64::INFINITY, f64::min);
        let spacing = if spacing.is_finite() { spacing } else { 1.0 };
        let mut rows = vec![Vec::new(); n];
        for (label, e) in edges {
            rows[label].push(e);
        }
        for row in &mut rows {
            row.sort_by_key(|n| n.label);
        }
        // Re-derive the layout by walking outward from label 0.
        let mut layout = vec![None; n];
        layout[0] = Some(Vec2::ZERO);
        let mut queue = VecDeque::from([0usize]);
        while let Some(label) = queue.pop_front() {
            let here = layout[label].expect("queued labels are placed");
            for e in &rows[label] {
                if layout[e.label].is_none() {
                    layout[e.label] = Some(here + e.offset());
                    queue.push_back(e.label);
                }
            }
        }
        let layout = layout
            .into_iter()
            .enumerate()
            .map(|(l, p)| p.ok_or(ShapeError::Disconnected(l)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ShapeTable { spacing, rows, layout })
    }

    /// Rebuild the tightest matrix whose table this is.
    pub fn to_matrix(&self) -> Result<ShapeMatrix, ShapeError> {
        let grid: Vec<(i64, i64)> = self
            .layout
            .iter()
            .map(|p| ((-p.y / self.spacing).round() as i64, (p.x / self.spacing).round() as i64))
            .collect();
        let rmin = grid.iter().map(|g| g.0).min().unwrap_or(0);
        let rmax = grid.iter().map(|g| g.0).max().unwrap_or(0);
        let cmin = grid.iter().map(|g| g.1).min().unwrap_or(0);
        let cmax = grid.iter().map(|g| g.1).max().unwrap_or(0);
        let rows = (rmax - rmin + 1) as usize;
        let cols = (cmax - cmin + 1) as usize;
        let mut cells = vec![EMPTY; rows * cols];
        for (label, (r, c)) in grid.into_iter().enumerate() {
            let idx = (r - rmin) as usize * cols + (c - cmin) as usize;
            if cells[idx] != EMPTY {
                return Err(ShapeError::BadTable(format!("labels {} and {label} share a cell", cells[idx])));
            }
            cells[idx] = label as i32;
        }
        ShapeMatrix::from_cells(rows, cols, cells)
    }
}

/// Round to 9 decimal places and print the shortest decimal that round-trips.
pub fn fmt_fixed9(x: f64) -> String {
    let rounded: f64 = format!("{x:.9}").parse().unwrap_or(x);
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    format!("{rounded:?}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    const TRIANGLE: &str = "-1 2 -1 / -1 0 -1 / 1 -1 3";

    #[test]
    fn parses_triangle() {
        let m: ShapeMatrix = TRIANGLE.parse().unwrap();
        assert_eq!((m.rows(), m.cols(), m.len()), (3, 3, 4));
        assert_eq!(m.position_of(0), (1, 1));
    }

    #[test]
    fn single_cell() {
        let m: ShapeMatrix = "0".parse().unwrap();
        assert_eq!(m.len(), 1);
        let t = build_shape_table(&m, 0.7).unwrap();
        assert!(t.row(0).is_empty());
        assert_eq!(t.to_csv(), format!("{TABLE_HEADER}\n"));
    }

    #[test]
    fn rejects_invalid_matrices() {
        assert_eq!("0 0".parse::<ShapeMatrix>(), Err(ShapeError::DuplicateLabel(0)));
        assert_eq!("1 2".parse::<ShapeMatrix>(), Err(ShapeError::NoSeed));
        assert_eq!("-1 -1".parse::<ShapeMatrix>(), Err(ShapeError::NoSeed));
        assert_eq!("0 2".parse::<ShapeMatrix>(), Err(ShapeError::MissingLabel { missing: 1, n: 3 }));
        assert_eq!("0 -1 1".parse::<ShapeMatrix>(), Err(ShapeError::Disconnected(1)));
        assert!(matches!("0 1\n2".parse::<ShapeMatrix>(), Err(ShapeError::Ragged { row: 1, .. })));
        assert!(matches!("0 x".parse::<ShapeMatrix>(), Err(ShapeError::BadToken { .. })));
        assert!(matches!("0 -2".parse::<ShapeMatrix>(), Err(ShapeError::BadToken { .. })));
        assert_eq!("  \n ".parse::<ShapeMatrix>(), Err(ShapeError::Empty));
    }

    #[test]
    fn triangle_row_for_label_zero() {
        let m: ShapeMatrix = TRIANGLE.parse().unwrap();
        let t = build_shape_table(&m, 1.0).unwrap();
        let row = t.row(0);
        let labels: Vec<usize> = row.iter().map(|n| n.label).collect();
        assert_eq!(labels, vec![1, 2, 3]);
        let expected = [(-3.0 * FRAC_PI_4, SQRT_2), (FRAC_PI_2, 1.0), (-FRAC_PI_4, SQRT_2)];
        for (n, (a, d)) in row.iter().zip(expected) {
            assert!((n.angle - a).abs() < 1e-12);
            assert!((n.distance - d).abs() < 1e-12);
        }
    }

    #[test]
    fn vertical_pair() {
        let m: ShapeMatrix = "0\n1".parse().unwrap();
        let t = build_shape_table(&m, 2.0).unwrap();
        assert_eq!(t.row(0).len(), 1);
        assert!((t.row(0)[0].angle + FRAC_PI_2).abs() < 1e-15);
        assert_eq!(t.row(0)[0].distance, 2.0);
        assert!((t.row(1)[0].angle - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(t.to_csv().lines().count(), 3);
    }

    #[test]
    fn csv_line_format() {
        let m: ShapeMatrix = TRIANGLE.parse().unwrap();
        let csv = build_shape_table(&m, 1.0).unwrap().to_csv();
        assert!(csv.lines().any(|l| l == "0,2,1.570796327,1.0"), "{csv}");
        assert!(csv.lines().any(|l| l == "0,1,-2.35619449,1.414213562"), "{csv}");
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn reference_offsets_follow_grid() {
        let m: ShapeMatrix = TRIANGLE.parse().unwrap();
        let t = build_shape_table(&m, 0.5).unwrap();
        let d = t.reference_offset(1, 3);
        assert!((d - Vec2::new(1.0, 0.0)).norm() < 1e-12);
        let d = t.reference_offset(2, 1);
        assert!((d - Vec2::new(-0.5, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn rejects_bad_spacing() {
        let m: ShapeMatrix = "0".parse().unwrap();
        assert!(build_shape_table(&m, 0.0).is_err());
        assert!(build_shape_table(&m, f64::NAN).is_err());
    }

    #[test]
    fn fixed9_formatting() {
        assert_eq!(fmt_fixed9(1.0), "1.0");
        assert_eq!(fmt_fixed9(PI), "3.141592654");
        assert_eq!(fmt_fixed9(-1e-12), "0.0");
    }
}
