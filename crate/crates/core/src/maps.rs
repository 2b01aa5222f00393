//! The nine discrete chaotic maps used as surrogate signal sources.
//!
//! Two-dimensional maps iterate their full state but only the first
//! coordinate is emitted. Series start exactly at the initial condition;
//! there is no transient discard.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, TAU};
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};

/// Identifies one of the nine maps. The discriminant doubles as the class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MapId {
    Logistic = 0,
    LinearCongruential = 1,
    SkewTent = 2,
    Lozi = 3,
    DissipativeStandard = 4,
    Sinai = 5,
    Cat = 6,
    ChirikovStandard = 7,
    ChaoticWeb = 8,
}

impl MapId {
    pub const ALL: [MapId; 9] = [
        MapId::Logistic,
        MapId::LinearCongruential,
        MapId::SkewTent,
        MapId::Lozi,
        MapId::DissipativeStandard,
        MapId::Sinai,
        MapId::Cat,
        MapId::ChirikovStandard,
        MapId::ChaoticWeb,
    ];

    pub fn label(self) -> u8 {
        self as u8
    }

    pub fn from_label(label: u8) -> Option<MapId> {
        Self::ALL.get(label as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MapId::Logistic => "logistic",
            MapId::LinearCongruential => "lcg",
            MapId::SkewTent => "skew-tent",
            MapId::Lozi => "lozi",
            MapId::DissipativeStandard => "dissipative-standard",
            MapId::Sinai => "sinai",
            MapId::Cat => "cat",
            MapId::ChirikovStandard => "chirikov-standard",
            MapId::ChaoticWeb => "chaotic-web",
        }
    }

    /// Number of state coordinates.
    pub fn dimension(self) -> usize {
        match self {
            MapId::Logistic | MapId::LinearCongruential | MapId::SkewTent => 1,
            _ => 2,
        }
    }
}

impl fmt::Display for MapId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MapId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MapId::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown map '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamRange {
    pub name: &'static str,
    pub lower: f64,
    pub upper: f64,
}

impl ParamRange {
    const fn new(name: &'static str, lower: f64, upper: f64) -> Self {
        ParamRange { name, lower, upper }
    }

    /// Values accepted by [`iterate_map`]. The upper end is admitted so the
    /// reference parameters shown for the figures (e.g. logistic r = 4.0)
    /// remain valid; sampling grids never reach it.
    pub fn admits(&self, v: f64) -> bool {
        v.is_finite() && v >= self.lower && v <= self.upper
    }
}

const LCG_MULTIPLIER: f64 = 7141.0;
const LCG_INCREMENT: f64 = 54773.0;
const LOZI_ESCAPE: f64 = 4.0;

/// Definition of one chaotic map: parameter ranges, base initial condition and
/// the coordinate that is emitted.
#[derive(Debug, Clone, PartialEq)]
pub struct MapSpec {
    pub id: MapId,
    pub param_ranges: Vec<ParamRange>,
    pub base_ic: Vec<f64>,
    pub observed_coordinate: usize,
    /// Rotation angle of the chaotic web map; ignored by the other maps.
    pub web_rotation: f64,
}

impl MapSpec {
    pub fn new(id: MapId) -> Self {
        let (param_ranges, base_ic) = match id {
            MapId::Logistic => (vec![ParamRange::new("r", 3.5, 4.0)], vec![1e-6]),
            MapId::LinearCongruential => {
                (vec![ParamRange::new("C", 259_200.0, 600_000.0)], vec![0.0])
            }
            MapId::SkewTent => (vec![ParamRange::new("w", 0.11, 0.9)], vec![0.1]),
            MapId::Lozi => (
                vec![ParamRange::new("a", 1.6, 1.8), ParamRange::new("b", 0.4, 0.6)],
                vec![-0.1, 0.1],
            ),
            MapId::DissipativeStandard => (
                vec![ParamRange::new("b", 0.1, 1.0), ParamRange::new("k", 1.0, 10.0)],
                vec![0.1, 0.1],
            ),
            MapId::Sinai => (vec![ParamRange::new("delta", 0.1, 1.0)], vec![0.9, 0.5]),
            MapId::Cat => (vec![ParamRange::new("k", 1.0, 10.0)], vec![0.0, FRAC_1_SQRT_2]),
            MapId::ChirikovStandard => (vec![ParamRange::new("k", 1.0, 5.0)], vec![0.0, 6.0]),
            MapId::ChaoticWeb => (vec![ParamRange::new("k", 1.0, 5.0)], vec![0.0, 3.0]),
        };
        MapSpec {
            id,
            param_ranges,
            base_ic,
            observed_coordinate: 0,
            web_rotation: FRAC_PI_2,
        }
    }

    pub fn all() -> Vec<MapSpec> {
        MapId::ALL.into_iter().map(MapSpec::new).collect()
    }

    pub fn with_web_rotation(mut self, alpha: f64) -> Self {
        self.web_rotation = alpha;
        self
    }

    /// Upper end of parameter `index` for sampling grids, given the values
    /// already chosen for the preceding parameters. The Lozi map escapes to
    /// infinity once `2a + b >= 4`, so its `b` axis is cut there.
    pub fn grid_upper(&self, index: usize, leading: &[f64]) -> f64 {
        let upper = self.param_ranges[index].upper;
        match (self.id, index) {
            (MapId::Lozi, 1) => upper.min(LOZI_ESCAPE - 2.0 * leading[0]),
            _ => upper,
        }
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_ranges.len() {
            return Err(Error::Domain(format!(
                "{} takes {} parameter(s), got {}",
                self.id,
                self.param_ranges.len(),
                params.len()
            )));
        }
        for (range, &v) in self.param_ranges.iter().zip(params) {
            if !range.admits(v) {
                return Err(Error::Domain(format!(
                    "{}: parameter {} = {v} outside [{}, {})",
                    self.id, range.name, range.lower, range.upper
                )));
            }
        }
        Ok(())
    }

    /// Advances `state` by one step.
    fn step(&self, state: &mut [f64; 2], p: &[f64]) {
        let [x, y] = *state;
        *state = match self.id {
            MapId::Logistic => [p[0] * x * (1.0 - x), 0.0],
            MapId::LinearCongruential => [wrap(LCG_MULTIPLIER * x + LCG_INCREMENT, p[0]), 0.0],
            MapId::SkewTent => {
                let w = p[0];
                if x <= w {
                    [x / w, 0.0]
                } else {
                    [(1.0 - x) / (1.0 - w), 0.0]
                }
            }
            MapId::Lozi => [1.0 - p[0] * x.abs() + p[1] * y, x],
            MapId::DissipativeStandard => {
                let y_next = wrap(p[0] * y + p[1] * x.sin(), TAU);
                [wrap(x + y_next, TAU), y_next]
            }
            MapId::Sinai => {
                let delta = p[0];
                [
                    wrap(x + y + delta * (TAU * y).cos(), 1.0),
                    wrap(x + 2.0 * y, 1.0),
                ]
            }
            MapId::Cat => [wrap(x + y, 1.0), wrap(x + p[0] * y, 1.0)],
            MapId::ChirikovStandard => {
                let y_next = wrap(y + p[0] * x.sin(), TAU);
                [wrap(x + y_next, TAU), y_next]
            }
            MapId::ChaoticWeb => {
                let (sin_a, cos_a) = self.web_rotation.sin_cos();
                let kicked = y + p[0] * x.sin();
                [x * cos_a - kicked * sin_a, x * sin_a + kicked * cos_a]
            }
        };
    }
}

/// Non-negative remainder in `[0, m)`.
fn wrap(v: f64, m: f64) -> f64 {
    let r = v.rem_euclid(m);
    // rem_euclid can round up to exactly m for tiny negative inputs
    if r >= m {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Segment {
    Full,
    FirstHalf,
    SecondHalf,
}

/// A scalar series together with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub values: Vec<f64>,
    pub map: MapId,
    pub params: Vec<f64>,
    pub ic: Vec<f64>,
    pub segment: Segment,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Splits into two equal halves (the first takes the extra point when the
    /// length is odd).
    pub fn split_halves(&self) -> (TimeSeries, TimeSeries) {
        let mid = self.values.len().div_ceil(2);
        let half = |values: &[f64], segment| TimeSeries {
            values: values.to_vec(),
            map: self.map,
            params: self.params.clone(),
            ic: self.ic.clone(),
            segment,
        };
        (
            half(&self.values[..mid], Segment::FirstHalf),
            half(&self.values[mid..], Segment::SecondHalf),
        )
    }
}

/// Runs the map for `n` steps starting from `ic` and returns the raw observed
/// coordinate, `x_1 = ic[observed]`.
pub fn iterate_map(spec: &MapSpec, params: &[f64], ic: &[f64], n: usize) -> Result<TimeSeries> {
    spec.check_params(params)?;
    if n < 3 {
        return Err(Error::Domain(format!("series length must be at least 3, got {n}")));
    }
    let dim = spec.id.dimension();
    if ic.len() != dim {
        return Err(Error::Domain(format!(
            "{} needs a {dim}-coordinate initial condition, got {}",
            spec.id,
            ic.len()
        )));
    }
    if let Some(bad) = ic.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("{}: non-finite initial condition {bad}", spec.id)));
    }

    let mut state = [ic[0], if dim == 2 { ic[1] } else { 0.0 }];
    let mut values = Vec::with_capacity(n);
    values.push(state[spec.observed_coordinate]);
    for step in 2..=n {
        spec.step(&mut state, params);
        if !state.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!(
                "{} produced a non-finite state at step {step} (params {params:?})",
                spec.id
            )));
        }
        values.push(state[spec.observed_coordinate]);
    }

    Ok(TimeSeries {
        values,
        map: spec.id,
        params: params.to_vec(),
        ic: ic.to_vec(),
        segment: Segment::Full,
    })
}

/// Min-max rescaling onto `[-1, 1]`; a constant series maps to all zeros.
pub fn normalize_values(values: &[f64]) -> Vec<f64> {
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = max - min;
    if !(span > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|&v| 2.0 * (v - min) / span - 1.0).collect()
}

pub fn normalize_series(ts: &TimeSeries) -> TimeSeries {
    TimeSeries {
        values: normalize_values(&ts.values),
        ..ts.clone()
    }
}

/// Draws an initial condition whose observed coordinate is uniform on
/// `[c0, c0 + width)`; the other coordinates keep their base values.
pub fn perturb_ic<R: Rng + ?Sized>(spec: &MapSpec, width: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(width >= 0.0) || !width.is_finite() {
        return Err(Error::Domain(format!("initial-condition width must be >= 0, got {width}")));
    }
    let mut ic = spec.base_ic.clone();
    if width > 0.0 {
        let c0 = ic[spec.observed_coordinate];
        ic[spec.observed_coordinate] = rng.gen_range(c0..c0 + width);
    }
    Ok(ic)
}
