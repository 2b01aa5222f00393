//! Coarse-grained heat-maps of TSSC triad clouds and DCR delay-pair clouds.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::triad::{triad_sequence, TriadPoint};

pub const DEFAULT_GRID: usize = 64;

/// Bounds of the difference plane for series normalized to `[-1, 1]`.
pub const TSSC_BOUNDS: (f64, f64) = (-2.0, 2.0);
pub const DCR_BOUNDS: (f64, f64) = (-1.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Encoder {
    Tssc,
    Dcr,
}

impl Encoder {
    pub fn name(self) -> &'static str {
        match self {
            Encoder::Tssc => "tssc",
            Encoder::Dcr => "dcr",
        }
    }
}

/// How raw counts are scaled into cell values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Divide by the largest cell count, so the brightest cell is 1.
    #[default]
    Max,
    /// Divide by the number of binned points.
    Total,
}

/// A `G x G` grid of normalized point densities.
///
/// Cells are stored row-major with row 0 holding the lowest y-bin; image
/// exports flip rows so the top of the image is the largest y.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMap {
    pub grid: usize,
    pub bounds: (f64, f64),
    pub cells: Vec<f64>,
    pub raw_counts: Vec<u32>,
    pub encoder: Encoder,
    /// Points that fell outside the bounds and were not binned.
    pub dropped: usize,
}

impl HeatMap {
    fn from_points(
        encoder: Encoder,
        grid: usize,
        bounds: (f64, f64),
        points: impl Iterator<Item = (f64, f64)>,
        norm: Normalization,
    ) -> Result<Self> {
        if grid < 2 {
            return Err(Error::Domain(format!("grid size must be at least 2, got {grid}")));
        }
        let mut raw_counts = vec![0u32; grid * grid];
        let mut dropped = 0;
        let mut seen = 0usize;
        for (x, y) in points {
            seen += 1;
            match (bin(x, bounds, grid), bin(y, bounds, grid)) {
                (Some(col), Some(row)) => raw_counts[row * grid + col] += 1,
                _ => dropped += 1,
            }
        }
        if seen == 0 {
            return Err(Error::Domain("cannot build a heat-map from zero points".into()));
        }
        let denom = match norm {
            Normalization::Max => raw_counts.iter().copied().max().unwrap_or(0),
            Normalization::Total => raw_counts.iter().sum(),
        };
        let cells = raw_counts
            .iter()
            .map(|&c| if denom == 0 { 0.0 } else { f64::from(c) / f64::from(denom) })
            .collect();
        Ok(HeatMap {
            grid,
            bounds,
            cells,
            raw_counts,
            encoder,
            dropped,
        })
    }

    /// Cell value at `(row, col)` in bin order (row 0 = lowest y).
    pub fn cell(&self, row: usize, col: usize) -> f64 {
        self.cells[row * self.grid + col]
    }

    pub fn count(&self, row: usize, col: usize) -> u32 {
        self.raw_counts[row * self.grid + col]
    }

    pub fn total_count(&self) -> u64 {
        self.raw_counts.iter().map(|&c| u64::from(c)).sum()
    }

    /// Rows in image order: top row first.
    pub fn image_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.cells.chunks(self.grid).rev()
    }

    /// Binary PGM, maxval 255, one byte per cell.
    pub fn to_pgm(&self) -> Vec<u8> {
        let header = format!("P5\n{g} {g}\n255\n", g = self.grid);
        let mut out = Vec::with_capacity(header.len() + self.cells.len());
        out.extend_from_slice(header.as_bytes());
        for row in self.image_rows() {
            out.extend(row.iter().map(|&v| (255.0 * v.clamp(0.0, 1.0)).round() as u8));
        }
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    /// Cell values as CSV in image row order, 6 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.image_rows() {
            let line: Vec<String> = row.iter().map(|&v| format_sig6(v)).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_csv().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// Variance of the cell values.
    pub fn cell_variance(&self) -> f64 {
        let n = self.cells.len() as f64;
        let mean = self.cells.iter().sum::<f64>() / n;
        self.cells.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
    }
}

/// Lower-edge-inclusive bin index; a value exactly on the upper bound goes
/// into the last bin.
fn bin(v: f64, (lo, hi): (f64, f64), grid: usize) -> Option<usize> {
    if !(v >= lo && v <= hi) {
        return None;
    }
    let idx = (grid as f64 * (v - lo) / (hi - lo)).floor() as usize;
    Some(idx.min(grid - 1))
}

fn format_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let exponent = v.abs().log10().floor() as i32;
    if !(-5..6).contains(&exponent) {
        return format!("{v:.5e}");
    }
    let decimals = (5 - exponent).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn tssc_heatmap_with(points: &[TriadPoint], grid: usize, norm: Normalization) -> Result<HeatMap> {
    HeatMap::from_points(
        Encoder::Tssc,
        grid,
        TSSC_BOUNDS,
        points.iter().map(|p| (p.dx, p.dy)),
        norm,
    )
}

/// Bins each triad at its Cartesian difference-plane position
/// `(R cos theta, R sin theta) = (dx, dy)` over `[-2, 2]^2`.
pub fn tssc_heatmap(points: &[TriadPoint], grid: usize) -> Result<HeatMap> {
    tssc_heatmap_with(points, grid, Normalization::Max)
}

pub fn dcr_heatmap_with(values: &[f64], grid: usize, norm: Normalization) -> Result<HeatMap> {
    if values.len() < 2 {
        return Err(Error::Domain(format!(
            "delay embedding needs at least 2 values, got {}",
            values.len()
        )));
    }
    HeatMap::from_points(
        Encoder::Dcr,
        grid,
        DCR_BOUNDS,
        values.windows(2).map(|w| (w[0], w[1])),
        norm,
    )
}

/// Delay-one embedding `(x_t, x_{t+1})` binned over `[-1, 1]^2`.
pub fn dcr_heatmap(values: &[f64], grid: usize) -> Result<HeatMap> {
    dcr_heatmap_with(values, grid, Normalization::Max)
}

/// Heat-map of a normalized series under either encoder.
pub fn encode_series(values: &[f64], encoder: Encoder, grid: usize) -> Result<HeatMap> {
    match encoder {
        Encoder::Tssc => tssc_heatmap(&triad_sequence(values)?, grid),
        Encoder::Dcr => dcr_heatmap(values, grid),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::normalize_values;
    use proptest::prelude::*;

    fn at(dx: f64, dy: f64) -> TriadPoint {
        TriadPoint::from_triad(0, [0.0, dx, dx + dy]).unwrap()
    }

    #[test]
    fn single_point() {
        let hm = tssc_heatmap(&[at(0.0, 0.0)], 8).unwrap();
        assert_eq!(hm.cells.iter().filter(|&&v| v == 1.0).count(), 1);
        assert_eq!(hm.cells.iter().filter(|&&v| v == 0.0).count(), 63);
        assert_eq!(hm.cell(4, 4), 1.0);
    }

    #[test]
    fn max_normalization() {
        let pts = [at(0.1, 0.1), at(0.2, 0.2), at(-1.5, 1.5)];
        let hm = tssc_heatmap(&pts, 8).unwrap();
        let mut nonzero: Vec<f64> = hm.cells.iter().copied().filter(|&v| v > 0.0).collect();
        nonzero.sort_by(f64::total_cmp);
        assert_eq!(nonzero, vec![0.5, 1.0]);

        let total = tssc_heatmap_with(&pts, 8, Normalization::Total).unwrap();
        assert!((total.cells.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn upper_bound_clamps_into_last_cell() {
        let p = TriadPoint {
            t: 0,
            dx: 2.0,
            dy: -2.0,
            r: 8f64.sqrt(),
            theta: -std::f64::consts::FRAC_PI_4,
            pattern: crate::triad::OrdinalPattern::P132,
        };
        let hm = tssc_heatmap(&[p], 8).unwrap();
        assert_eq!(hm.count(0, 7), 1);
        assert_eq!(hm.dropped, 0);
    }

    #[test]
    fn empty_input_errors() {
        assert!(tssc_heatmap(&[], 8).is_err());
        assert!(dcr_heatmap(&[0.5], 8).is_err());
        assert!(tssc_heatmap(&[at(0.0, 0.0)], 1).is_err());
    }

    #[test]
    fn dcr_examples() {
        let hm = dcr_heatmap(&[0.0, 0.0, 0.0], 8).unwrap();
        assert_eq!(hm.cell(4, 4), 1.0);
        assert_eq!(hm.total_count(), 2);

        // pairs (-1,1), (1,-1), (-1,1)
        let hm = dcr_heatmap(&[-1.0, 1.0, -1.0, 1.0], 8).unwrap();
        assert_eq!(hm.cell(7, 0), 1.0);
        assert_eq!(hm.cell(0, 7), 0.5);
        assert_eq!(hm.total_count(), 3);

        let diag = dcr_heatmap(&[0.3; 20], 16).unwrap();
        let on_diag: u64 = (0..16).map(|i| u64::from(diag.count(i, i))).sum();
        assert_eq!(on_diag, diag.total_count());
    }

    #[test]
    fn pgm_format() {
        let hm = tssc_heatmap(&[at(0.0, 0.0)], 64).unwrap();
        let bytes = hm.to_pgm();
        let header = b"P5\n64 64\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 64 * 64);
        assert_eq!(bytes[header.len()..].iter().filter(|&&b| b == 255).count(), 1);

        let mut zero = hm.clone();
        zero.cells.iter_mut().for_each(|c| *c = 0.0);
        assert!(zero.to_pgm()[header.len()..].iter().all(|&b| b == 0));
    }

    #[test]
    fn pgm_top_row_is_largest_y() {
        let hm = tssc_heatmap(&[at(-2.0, 2.0)], 4).unwrap();
        let px = &hm.to_pgm()[b"P5\n4 4\n255\n".len()..];
        assert_eq!(px[0], 255);
    }

    #[test]
    fn csv_format() {
        let hm = dcr_heatmap(&[-1.0, 1.0, -1.0, 1.0], 2).unwrap();
        assert_eq!(hm.to_csv(), "1,0\n0,0.5\n");
        assert_eq!(format_sig6(1.0 / 3.0), "0.333333");
        assert_eq!(format_sig6(0.000123456789), "0.000123457");
    }

    proptest! {
        #[test]
        fn mass_conservation(raw in prop::collection::vec(-50.0f64..50.0, 3..400), g in 2usize..70) {
            let v = normalize_values(&raw);
            let pts = triad_sequence(&v).unwrap();
            let t = tssc_heatmap(&pts, g).unwrap();
            prop_assert_eq!(t.dropped, 0);
            prop_assert_eq!(t.total_count(), pts.len() as u64);
            prop_assert_eq!(t.cells.iter().copied().fold(0.0, f64::max), 1.0);
            prop_assert!(t.cells.iter().all(|c| (0.0..=1.0).contains(c)));
            prop_assert_eq!(&t, &tssc_heatmap(&pts, g).unwrap());

            let d = dcr_heatmap(&v, g).unwrap();
            prop_assert_eq!(d.dropped, 0);
            prop_assert_eq!(d.total_count(), (v.len() - 1) as u64);
        }

        #[test]
        fn scaling_counts_keeps_cells(raw in prop::collection::vec(-1.0f64..1.0, 3..100), k in 1usize..5) {
            let v = normalize_values(&raw);
            let pts = triad_sequence(&v).unwrap();
            let once = tssc_heatmap(&pts, 16).unwrap();
            let repeated: Vec<TriadPoint> = pts.iter().flat_map(|p| std::iter::repeat(*p).take(k)).collect();
            let many = tssc_heatmap(&repeated, 16).unwrap();
            prop_assert_eq!(once.cells, many.cells);
        }
    }
}
