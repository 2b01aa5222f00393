//! Benchmark datasets D0..D5 and their TSSD file format.
//!
//! Every slice holds one initial condition per map and `params_per_map`
//! control parameters per map. Parameters with even grid index feed the BASE
//! and NS^SP quadrants, odd ones feed DP and NS^DP; first halves of each
//! series go to BASE/DP, second halves to NS^SP/NS^DP. Each half is
//! normalized on its own.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::maps::{iterate_map, normalize_series, perturb_ic, MapId, MapSpec, Segment, TimeSeries};

pub const MAGIC: &[u8; 4] = b"TSSD";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub params_per_map: usize,
    pub slices: usize,
    pub series_len: usize,
    /// Width `p_i` of the initial-condition interval.
    pub ic_width: f64,
    pub master_seed: u64,
}

impl DatasetConfig {
    /// Configuration of `D_i` with the given parameter count and slice count
    /// for the perturbed datasets (`D_0` always has a single slice).
    pub fn for_index(index: usize, params_per_map: usize, slices: usize, series_len: usize, seed: u64) -> Self {
        DatasetConfig {
            params_per_map,
            slices: if index == 0 { 1 } else { slices },
            series_len,
            ic_width: 0.1 * index as f64,
            master_seed: seed,
        }
    }

    pub fn paper(index: usize, seed: u64) -> Self {
        Self::for_index(index, 1024, 32, 2000, seed)
    }

    pub fn desk(index: usize, seed: u64) -> Self {
        Self::for_index(index, 64, 2, 2000, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.params_per_map < 2 || !self.params_per_map.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "params_per_map must be even and >= 2, got {}",
                self.params_per_map
            )));
        }
        if self.params_per_map > usize::from(u16::MAX) + 1 {
            return Err(Error::Config(format!("params_per_map {} too large", self.params_per_map)));
        }
        if self.series_len < 6 || !self.series_len.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "series_len must be even and >= 6, got {}",
                self.series_len
            )));
        }
        if self.slices > usize::from(u16::MAX) + 1 {
            return Err(Error::Config(format!("too many slices: {}", self.slices)));
        }
        if !(self.ic_width >= 0.0) || !self.ic_width.is_finite() {
            return Err(Error::Config(format!("ic width must be >= 0, got {}", self.ic_width)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quadrant {
    Base = 0,
    Dp = 1,
    NsSp = 2,
    NsDp = 3,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [Quadrant::Base, Quadrant::Dp, Quadrant::NsSp, Quadrant::NsDp];

    pub fn name(self) -> &'static str {
        match self {
            Quadrant::Base => "base",
            Quadrant::Dp => "dp",
            Quadrant::NsSp => "ns-sp",
            Quadrant::NsDp => "ns-dp",
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(usize::from(code)).copied()
    }
}

impl std::str::FromStr for Quadrant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Quadrant::ALL
            .into_iter()
            .find(|q| q.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown quadrant '{s}'")))
    }
}

/// A labelled, normalized half-series.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub label: u8,
    pub param_index: u16,
    pub series: TimeSeries,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuadrantSet {
    pub base: Vec<Sample>,
    pub dp: Vec<Sample>,
    pub ns_sp: Vec<Sample>,
    pub ns_dp: Vec<Sample>,
}

impl QuadrantSet {
    pub fn get(&self, q: Quadrant) -> &[Sample] {
        match q {
            Quadrant::Base => &self.base,
            Quadrant::Dp => &self.dp,
            Quadrant::NsSp => &self.ns_sp,
            Quadrant::NsDp => &self.ns_dp,
        }
    }

    fn get_mut(&mut self, q: Quadrant) -> &mut Vec<Sample> {
        match q {
            Quadrant::Base => &mut self.base,
            Quadrant::Dp => &mut self.dp,
            Quadrant::NsSp => &mut self.ns_sp,
            Quadrant::NsDp => &mut self.ns_dp,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub index: usize,
    pub quadrants: QuadrantSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub slices: Vec<Slice>,
}

impl Dataset {
    /// All samples of one quadrant, pooled over slices.
    pub fn pooled(&self, q: Quadrant) -> Vec<&Sample> {
        self.slices.iter().flat_map(|s| s.quadrants.get(q)).collect()
    }
}

/// Evenly spaced control parameters over the half-open range. Two-parameter
/// maps get a `sqrt(m) x sqrt(m)` grid with the first parameter outermost.
pub fn sample_control_params(spec: &MapSpec, m: usize) -> Result<Vec<Vec<f64>>> {
    if m < 2 {
        return Err(Error::Config(format!("need at least 2 control parameters, got {m}")));
    }
    let axis = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
        (0..n).map(|j| lo + j as f64 * (hi - lo) / n as f64).collect()
    };
    match spec.param_ranges.as_slice() {
        [r] => Ok(axis(r.lower, spec.grid_upper(0, &[]), m).into_iter().map(|v| vec![v]).collect()),
        [ra, rb] => {
            let side = (m as f64).sqrt().round() as usize;
            if side * side != m {
                return Err(Error::Config(format!(
                    "{} has two parameters; {m} is not a perfect square",
                    spec.id
                )));
            }
            let mut out = Vec::with_capacity(m);
            for a in axis(ra.lower, spec.grid_upper(0, &[]), side) {
                for b in axis(rb.lower, spec.grid_upper(1, &[a]), side) {
                    out.push(vec![a, b]);
                }
            }
            Ok(out)
        }
        other => Err(Error::Config(format!("unsupported parameter count {}", other.len()))),
    }
}

/// Random source for the initial condition of `map` in `slice`.
pub fn slice_rng(master_seed: u64, slice: usize, map: MapId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream((slice as u64) << 8 | u64::from(map.label()));
    rng
}

/// Initial condition used by `spec` in `slice`.
pub fn slice_ic(cfg: &DatasetConfig, spec: &MapSpec, slice: usize) -> Result<Vec<f64>> {
    perturb_ic(spec, cfg.ic_width, &mut slice_rng(cfg.master_seed, slice, spec.id))
}

pub fn build_dataset(cfg: &DatasetConfig, specs: &[MapSpec]) -> Result<Dataset> {
    cfg.validate()?;
    let mut slices = Vec::with_capacity(cfg.slices);
    for s in 0..cfg.slices {
        let mut quadrants = QuadrantSet::default();
        for spec in specs {
            let ic = slice_ic(cfg, spec, s)?;
            let params = sample_control_params(spec, cfg.params_per_map)?;
            for (j, p) in params.iter().enumerate() {
                let full = iterate_map(spec, p, &ic, cfg.series_len).map_err(|e| Error::Generation {
                    map: spec.id.name(),
                    slice: s,
                    param_index: j,
                    source: Box::new(e),
                })?;
                let (first, second) = full.split_halves();
                let (q_first, q_second) = if j % 2 == 0 {
                    (Quadrant::Base, Quadrant::NsSp)
                } else {
                    (Quadrant::Dp, Quadrant::NsDp)
                };
                for (q, half) in [(q_first, first), (q_second, second)] {
                    quadrants.get_mut(q).push(Sample {
                        label: spec.id.label(),
                        param_index: j as u16,
                        series: normalize_series(&half),
                    });
                }
            }
        }
        slices.push(Slice { index: s, quadrants });
    }
    Ok(Dataset {
        config: cfg.clone(),
        slices,
    })
}

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let cfg = &ds.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(MapId::ALL.len() as u16).to_le_bytes());
    out.extend_from_slice(&(cfg.params_per_map as u32).to_le_bytes());
    out.extend_from_slice(&(ds.slices.len() as u32).to_le_bytes());
    out.extend_from_slice(&(cfg.series_len as u32).to_le_bytes());
    out.extend_from_slice(&cfg.master_seed.to_le_bytes());
    out.extend_from_slice(&cfg.ic_width.to_le_bytes());
    for slice in &ds.slices {
        for q in Quadrant::ALL {
            for sample in slice.quadrants.get(q) {
                out.push(sample.label);
                out.push(q as u8);
                out.extend_from_slice(&(slice.index as u16).to_le_bytes());
                out.extend_from_slice(&sample.param_index.to_le_bytes());
                for v in sample.series.ic.iter().chain(&sample.series.values) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    out
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, encode_dataset(ds)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let end = self.pos + N;
        let bytes = self.buf.get(self.pos..end).ok_or_else(|| Error::Corrupt {
            offset: self.pos as u64,
            msg: format!("truncated while reading {what}"),
        })?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice length checked"))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take::<1>(what)?[0])
    }
    fn u16(&mut self, what: &str) -> Result<u16> {
        self.take(what).map(u16::from_le_bytes)
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        self.take(what).map(u32::from_le_bytes)
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        self.take(what).map(u64::from_le_bytes)
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        self.take(what).map(f64::from_le_bytes)
    }

    fn done(&self) -> bool {
        self.pos >= self.buf.len()
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if &r.take::<4>("magic")? != MAGIC {
        return Err(Error::Format("not a TSSD file (bad magic)".into()));
    }
    let version = r.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported TSSD version {version}")));
    }
    let map_count = r.u16("map count")?;
    if usize::from(map_count) != MapId::ALL.len() {
        return Err(Error::Format(format!("expected 9 maps, header says {map_count}")));
    }
    let params_per_map = r.u32("params_per_map")? as usize;
    let slice_count = r.u32("slice count")? as usize;
    let series_len = r.u32("series_len")? as usize;
    let master_seed = r.u64("seed")?;
    let ic_width = r.f64("ic width")?;
    let config = DatasetConfig {
        params_per_map,
        slices: slice_count,
        series_len,
        ic_width,
        master_seed,
    };
    config.validate().map_err(|e| Error::Format(format!("bad header: {e}")))?;

    let specs = MapSpec::all();
    let grids = specs
        .iter()
        .map(|s| sample_control_params(s, params_per_map))
        .collect::<Result<Vec<_>>>()?;
    let half = series_len / 2;
    let mut slices: Vec<Slice> = (0..slice_count)
        .map(|index| Slice {
            index,
            quadrants: QuadrantSet::default(),
        })
        .collect();

    while !r.done() {
        let at = r.pos as u64;
        let label = r.u8("label")?;
        let quadrant = r.u8("quadrant")?;
        let slice = usize::from(r.u16("slice")?);
        let param_index = r.u16("param index")?;
        let map = MapId::from_label(label).ok_or(Error::Corrupt {
            offset: at,
            msg: format!("invalid label {label}"),
        })?;
        let q = Quadrant::from_code(quadrant).ok_or(Error::Corrupt {
            offset: at + 1,
            msg: format!("invalid quadrant {quadrant}"),
        })?;
        if slice >= slice_count || usize::from(param_index) >= params_per_map {
            return Err(Error::Corrupt {
                offset: at + 2,
                msg: format!("slice {slice} / param index {param_index} out of range"),
            });
        }
        let ic = (0..map.dimension()).map(|_| r.f64("initial condition")).collect::<Result<Vec<_>>>()?;
        let values = (0..half).map(|_| r.f64("series value")).collect::<Result<Vec<_>>>()?;
        let segment = match q {
            Quadrant::Base | Quadrant::Dp => Segment::FirstHalf,
            Quadrant::NsSp | Quadrant::NsDp => Segment::SecondHalf,
        };
        slices[slice].quadrants.get_mut(q).push(Sample {
            label,
            param_index,
            series: TimeSeries {
                values,
                map,
                params: grids[usize::from(label)][usize::from(param_index)].clone(),
                ic,
                segment,
            },
        });
    }
    Ok(Dataset { config, slices })
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes)
}
