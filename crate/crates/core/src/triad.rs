//! Triadic motifs: polar coordinates of consecutive differences, ordinal
//! patterns, Bandt-Pompe probabilities and permutation entropy.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use crate::error::{Error, Result};

/// Ordinal pattern of a triad: the indices 1..=3 listed by ascending value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OrdinalPattern {
    P123 = 0,
    P132 = 1,
    P213 = 2,
    P231 = 3,
    P312 = 4,
    P321 = 5,
}

impl OrdinalPattern {
    pub const ALL: [OrdinalPattern; 6] = [
        OrdinalPattern::P123,
        OrdinalPattern::P132,
        OrdinalPattern::P213,
        OrdinalPattern::P231,
        OrdinalPattern::P312,
        OrdinalPattern::P321,
    ];

    pub fn code(self) -> u16 {
        match self {
            OrdinalPattern::P123 => 123,
            OrdinalPattern::P132 => 132,
            OrdinalPattern::P213 => 213,
            OrdinalPattern::P231 => 231,
            OrdinalPattern::P312 => 312,
            OrdinalPattern::P321 => 321,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn from_order(order: [usize; 3]) -> Self {
        match order {
            [0, 1, 2] => OrdinalPattern::P123,
            [0, 2, 1] => OrdinalPattern::P132,
            [1, 0, 2] => OrdinalPattern::P213,
            [1, 2, 0] => OrdinalPattern::P231,
            [2, 0, 1] => OrdinalPattern::P312,
            _ => OrdinalPattern::P321,
        }
    }
}

impl fmt::Display for OrdinalPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// Ordinal pattern with ties broken by ascending index.
pub fn ordinal_pattern(triad: [f64; 3]) -> Result<OrdinalPattern> {
    if let Some(v) = triad.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite value {v} in triad")));
    }
    let mut order = [0usize, 1, 2];
    // stable, so equal values keep index order
    order.sort_by(|&i, &j| triad[i].total_cmp(&triad[j]));
    Ok(OrdinalPattern::from_order(order))
}

/// One triad `(x_t, x_{t+1}, x_{t+2})` in the difference plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriadPoint {
    pub t: usize,
    /// `x_{t+1} - x_t`
    pub dx: f64,
    /// `x_{t+2} - x_{t+1}`
    pub dy: f64,
    pub r: f64,
    /// Angle in `[-pi, pi)`.
    pub theta: f64,
    pub pattern: OrdinalPattern,
}

impl TriadPoint {
    pub fn from_triad(t: usize, triad: [f64; 3]) -> Result<Self> {
        let pattern = ordinal_pattern(triad)?;
        let dx = triad[1] - triad[0];
        let dy = triad[2] - triad[1];
        let (r, theta) = polar(dx, dy);
        Ok(TriadPoint {
            t,
            dx,
            dy,
            r,
            theta,
            pattern,
        })
    }
}

/// Radius and half-open angle of `(dx, dy)`; the origin gets angle 0.
pub fn polar(dx: f64, dy: f64) -> (f64, f64) {
    let r = dx.hypot(dy);
    if r == 0.0 {
        return (0.0, 0.0);
    }
    let theta = dy.atan2(dx);
    (r, if theta >= PI { -PI } else { theta })
}

pub fn triad_sequence(values: &[f64]) -> Result<Vec<TriadPoint>> {
    if values.len() < 3 {
        return Err(Error::Domain(format!(
            "need at least 3 values for a triad, got {}",
            values.len()
        )));
    }
    values
        .windows(3)
        .enumerate()
        .map(|(t, w)| TriadPoint::from_triad(t, [w[0], w[1], w[2]]))
        .collect()
}

/// Empirical distribution of the six ordinal patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct BandtPompe {
    pub probs: [f64; 6],
    pub count: usize,
}

impl BandtPompe {
    pub fn prob(&self, p: OrdinalPattern) -> f64 {
        self.probs[p.index()]
    }

    pub fn from_points(points: &[TriadPoint]) -> Self {
        let mut counts = [0usize; 6];
        for p in points {
            counts[p.pattern.index()] += 1;
        }
        let n = points.len();
        let probs = counts.map(|c| if n == 0 { 0.0 } else { c as f64 / n as f64 });
        BandtPompe { probs, count: n }
    }

    /// Shannon entropy in nats, optionally divided by `ln 6`.
    pub fn permutation_entropy(&self, normalized: bool) -> f64 {
        permutation_entropy(&self.probs, normalized)
    }
}

pub fn bandt_pompe(values: &[f64]) -> Result<BandtPompe> {
    Ok(BandtPompe::from_points(&triad_sequence(values)?))
}

pub fn permutation_entropy(probs: &[f64; 6], normalized: bool) -> f64 {
    let h: f64 = probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.recip().ln()).sum();
    if normalized {
        h / 6f64.ln()
    } else {
        h
    }
}

/// Fraction of points whose angle lies within `half_width` of `+pi/2` or `-pi/2`.
pub fn forbidden_band_fraction(points: &[TriadPoint], half_width: f64) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Domain("no triad points".into()));
    }
    if !(half_width > 0.0 && half_width < PI / 4.0) {
        return Err(Error::Domain(format!("half width must lie in (0, pi/4), got {half_width}")));
    }
    let inside = points
        .iter()
        .filter(|p| {
            (p.theta - FRAC_PI_2).abs() < half_width || (p.theta + FRAC_PI_2).abs() < half_width
        })
        .count();
    Ok(inside as f64 / points.len() as f64)
}
