//! Experiment orchestration: datasets D_0..D_5, three classifiers, accuracy
//! reports and figure rendering.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::dataset::{build_dataset, Dataset, DatasetConfig, Quadrant, Sample};
use crate::error::{Error, Result};
use crate::grid::{encode_series, Encoder, DEFAULT_GRID};
use crate::maps::{iterate_map, normalize_values, MapId, MapSpec};
use crate::nn::{evaluate, train, Architecture, ConvNet, LabeledSet, Optimizer, TrainConfig, CLASS_COUNT};

pub const MAX_INDEX: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Classifier {
    Ts,
    Dcr,
    Tssc,
}

impl Classifier {
    pub const ALL: [Classifier; 3] = [Classifier::Ts, Classifier::Dcr, Classifier::Tssc];

    pub fn name(self) -> &'static str {
        match self {
            Classifier::Ts => "TS",
            Classifier::Dcr => "DCR",
            Classifier::Tssc => "TSSC",
        }
    }

    pub fn encoder(self) -> Option<Encoder> {
        match self {
            Classifier::Ts => None,
            Classifier::Dcr => Some(Encoder::Dcr),
            Classifier::Tssc => Some(Encoder::Tssc),
        }
    }

    /// Network for half-series of length `half_len` or `grid x grid` images.
    pub fn architecture(self, half_len: usize, grid: usize) -> Architecture {
        match self {
            Classifier::Ts => Architecture::series(half_len, CLASS_COUNT),
            Classifier::Dcr | Classifier::Tssc => Architecture::heatmap(grid, CLASS_COUNT),
        }
    }
}

impl fmt::Display for Classifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Classifier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Classifier::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown classifier {s:?} (expected ts, dcr or tssc)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentId {
    ControlParams,
    InitialConditions,
    Segmentation,
}

impl ExperimentId {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::ControlParams => "e1_control_params",
            ExperimentId::InitialConditions => "e2_initial_conditions",
            ExperimentId::Segmentation => "e3_segmentation",
        }
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "e1" | "e1_control_params" => Ok(ExperimentId::ControlParams),
            "e2" | "e2_initial_conditions" => Ok(ExperimentId::InitialConditions),
            "e3" | "e3_segmentation" => Ok(ExperimentId::Segmentation),
            _ => Err(Error::Config(format!("unknown experiment {s:?} (expected e1, e2 or e3)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub params_per_map: usize,
    /// Slices of D_1..D_5; D_0 always has one.
    pub slices: usize,
    pub series_len: usize,
    pub grid: usize,
    /// Dataset indices `i` evaluated by experiments 1 and 3.
    pub indices: Vec<usize>,
    pub classifiers: Vec<Classifier>,
    pub maps: Vec<MapSpec>,
    pub data_seed: u64,
    /// Seed of the network initialization.
    pub model_seed: u64,
    pub train: TrainConfig,
    /// Directory for cached heat-maps; `None` keeps them in memory only.
    pub cache_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Laptop-sized configuration: 64 parameters per map, 2 slices, 15 epochs.
    pub fn desk(seed: u64) -> Self {
        ExperimentConfig {
            params_per_map: 64,
            slices: 2,
            series_len: 2000,
            grid: DEFAULT_GRID,
            indices: (0..=MAX_INDEX).collect(),
            classifiers: Classifier::ALL.to_vec(),
            maps: MapSpec::all(),
            data_seed: seed,
            model_seed: seed,
            train: TrainConfig {
                epochs: 15,
                batch_size: 16,
                learning_rate: 1e-3,
                optimizer: Optimizer::adam(),
                seed,
                validation_fraction: 0.0,
            },
            cache_dir: None,
        }
    }

    pub fn paper(seed: u64) -> Self {
        ExperimentConfig {
            params_per_map: 1024,
            slices: 32,
            train: TrainConfig {
                epochs: 30,
                batch_size: 64,
                ..ExperimentConfig::desk(seed).train
            },
            ..ExperimentConfig::desk(seed)
        }
    }

    pub fn dataset_config(&self, index: usize) -> DatasetConfig {
        DatasetConfig::for_index(index, self.params_per_map, self.slices, self.series_len, self.data_seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 {
            return Err(Error::Config("grid size must be at least 1".into()));
        }
        if self.maps.is_empty() || self.classifiers.is_empty() {
            return Err(Error::Config("need at least one map and one classifier".into()));
        }
        if let Some(&i) = self.indices.iter().find(|&&i| i > MAX_INDEX) {
            return Err(Error::Config(format!("dataset index {i} outside 0..={MAX_INDEX}")));
        }
        self.dataset_config(1).validate()?;
        self.train.validate()
    }

    /// One-line description recorded in reports.
    pub fn snapshot(&self) -> String {
        let maps: Vec<&str> = self.maps.iter().map(|m| m.id.name()).collect();
        format!(
            "params_per_map={} slices={} series_len={} grid={} maps={} data_seed={} model_seed={} epochs={} batch={} lr={}",
            self.params_per_map,
            self.slices,
            self.series_len,
            self.grid,
            maps.join("+"),
            self.data_seed,
            self.model_seed,
            self.train.epochs,
            self.train.batch_size,
            self.train.learning_rate
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub i: usize,
    pub classifier: Classifier,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub i: usize,
    pub classifier: Classifier,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub experiment: ExperimentId,
    pub trial: String,
    pub rows: Vec<ReportRow>,
    pub failures: Vec<Failure>,
    pub config: String,
    pub wall_clock: Duration,
}

impl ExperimentReport {
    pub fn accuracy(&self, i: usize, classifier: Classifier) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.i == i && r.classifier == classifier)
            .map(|r| r.accuracy)
    }

    /// Rows without the CSV header.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                self.experiment.name(),
                self.trial,
                r.i,
                r.classifier,
                r.accuracy
            );
        }
        out
    }
}

pub const REPORT_HEADER: &str = "experiment,trial,i,classifier,accuracy";

pub fn reports_csv(reports: &[ExperimentReport]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in reports {
        out.push_str(&r.csv_rows());
    }
    out
}

/// 64-bit FNV-1a over the bit patterns of the values.
pub fn series_hash(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Heat-map store keyed by (series hash, encoder, grid), optionally backed by
/// one little-endian f64 file per image.
#[derive(Debug, Default)]
pub struct HeatMapCache {
    dir: Option<PathBuf>,
    memory: HashMap<(u64, Encoder, usize), Vec<f64>>,
}

impl HeatMapCache {
    pub fn new(dir: Option<PathBuf>) -> Result<Self> {
        if let Some(d) = &dir {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        Ok(HeatMapCache {
            dir,
            memory: HashMap::new(),
        })
    }

    fn path(&self, key: (u64, Encoder, usize)) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(format!("{:016x}-{}-{}.f64", key.0, key.1.name(), key.2)))
    }

    pub fn get(&mut self, values: &[f64], encoder: Encoder, grid: usize) -> Result<Vec<f64>> {
        let key = (series_hash(values), encoder, grid);
        if let Some(cells) = self.memory.get(&key) {
            return Ok(cells.clone());
        }
        let cells = match self.path(key) {
            Some(path) if path.exists() => {
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                if bytes.len() != grid * grid * 8 {
                    return Err(Error::Corrupt {
                        offset: 0,
                        msg: format!("cached heat-map {} has {} bytes", path.display(), bytes.len()),
                    });
                }
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect()
            }
            path => {
                let cells = encode_series(values, encoder, grid)?.cells;
                if let Some(path) = path {
                    let bytes: Vec<u8> = cells.iter().flat_map(|v| v.to_le_bytes()).collect();
                    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
                }
                cells
            }
        };
        self.memory.insert(key, cells.clone());
        Ok(cells)
    }

    pub fn len(&self) -> usize {
        self.memory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.memory.is_empty()
    }
}

/// Network inputs for `samples` as seen by `classifier`.
pub fn labeled_set(
    samples: &[&Sample],
    classifier: Classifier,
    grid: usize,
    cache: &mut HeatMapCache,
) -> Result<LabeledSet> {
    let labels = samples.iter().map(|s| s.label).collect();
    match classifier.encoder() {
        None => {
            let len = samples.first().map_or(0, |s| s.series.len());
            let inputs = samples.iter().map(|s| s.series.values.clone()).collect();
            LabeledSet::new([1, 1, len], inputs, labels)
        }
        Some(encoder) => {
            let inputs = samples
                .iter()
                .map(|s| cache.get(&s.series.values, encoder, grid))
                .collect::<Result<_>>()?;
            LabeledSet::new([1, grid, grid], inputs, labels)
        }
    }
}

/// Trains a fresh network for `classifier` on `samples`.
pub fn train_classifier(
    samples: &[&Sample],
    classifier: Classifier,
    grid: usize,
    model_seed: u64,
    cfg: &TrainConfig,
    cache: &mut HeatMapCache,
) -> Result<ConvNet> {
    let data = labeled_set(samples, classifier, grid, cache)?;
    let half_len = data.item_shape[2];
    let mut model = ConvNet::new(&classifier.architecture(half_len, grid), model_seed)?;
    train(&mut model, &data, cfg)?;
    Ok(model)
}

/// Builds datasets and trains networks on demand, memoizing both so that the
/// experiments share work: a network trained on BASE_i serves every test set.
pub struct Runner {
    pub config: ExperimentConfig,
    datasets: HashMap<usize, Dataset>,
    models: HashMap<(usize, Classifier), ConvNet>,
    cache: HeatMapCache,
}

impl Runner {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let cache = HeatMapCache::new(config.cache_dir.clone())?;
        Ok(Runner {
            config,
            datasets: HashMap::new(),
            models: HashMap::new(),
            cache,
        })
    }

    pub fn dataset(&mut self, i: usize) -> Result<&Dataset> {
        if !self.datasets.contains_key(&i) {
            let ds = build_dataset(&self.config.dataset_config(i), &self.config.maps)?;
            self.datasets.insert(i, ds);
        }
        Ok(&self.datasets[&i])
    }

    /// Network trained on the pooled BASE quadrant of D_i.
    pub fn model(&mut self, i: usize, classifier: Classifier) -> Result<&ConvNet> {
        if !self.models.contains_key(&(i, classifier)) {
            self.dataset(i)?;
            let samples = self.datasets[&i].pooled(Quadrant::Base);
            let model = train_classifier(
                &samples,
                classifier,
                self.config.grid,
                self.config.model_seed,
                &self.config.train,
                &mut self.cache,
            )?;
            self.models.insert((i, classifier), model);
        }
        Ok(&self.models[&(i, classifier)])
    }

    /// Accuracy of the BASE_`train_i` network on quadrant `q` of D_`test_i`.
    pub fn accuracy(&mut self, train_i: usize, test_i: usize, q: Quadrant, classifier: Classifier) -> Result<f64> {
        self.model(train_i, classifier)?;
        self.dataset(test_i)?;
        let samples = self.datasets[&test_i].pooled(q);
        let data = labeled_set(&samples, classifier, self.config.grid, &mut self.cache)?;
        Ok(evaluate(&self.models[&(train_i, classifier)], &data)?.accuracy)
    }

    fn report(&mut self, experiment: ExperimentId, trial: &str, cells: &[(usize, usize, Quadrant)]) -> ExperimentReport {
        let start = Instant::now();
        let mut rows = Vec::new();
        let mut failures = Vec::new();
        for &(train_i, test_i, q) in cells {
            for classifier in self.config.classifiers.clone() {
                match self.accuracy(train_i, test_i, q, classifier) {
                    Ok(accuracy) => rows.push(ReportRow {
                        i: test_i,
                        classifier,
                        accuracy,
                    }),
                    Err(e) => failures.push(Failure {
                        i: test_i,
                        classifier,
                        error: e.to_string(),
                    }),
                }
            }
        }
        ExperimentReport {
            experiment,
            trial: trial.to_string(),
            rows,
            failures,
            config: self.config.snapshot(),
            wall_clock: start.elapsed(),
        }
    }

    /// Train on BASE_i, test on DP_i.
    pub fn run_e1(&mut self) -> ExperimentReport {
        let cells: Vec<_> = self.config.indices.iter().map(|&i| (i, i, Quadrant::Dp)).collect();
        self.report(ExperimentId::ControlParams, "dp", &cells)
    }

    /// Trial A trains on BASE_0 and tests on BASE_1..5; trial B trains on
    /// BASE_5 and tests on BASE_0..4.
    pub fn run_e2(&mut self) -> [ExperimentReport; 2] {
        let a: Vec<_> = (1..=MAX_INDEX).map(|i| (0, i, Quadrant::Base)).collect();
        let b: Vec<_> = (0..MAX_INDEX).map(|i| (MAX_INDEX, i, Quadrant::Base)).collect();
        [
            self.report(ExperimentId::InitialConditions, "a", &a),
            self.report(ExperimentId::InitialConditions, "b", &b),
        ]
    }

    /// Train on BASE_i, test on NS^SP_i and NS^DP_i.
    pub fn run_e3(&mut self) -> [ExperimentReport; 2] {
        let cells = |q| -> Vec<_> { self.config.indices.iter().map(|&i| (i, i, q)).collect() };
        let (sp, dp) = (cells(Quadrant::NsSp), cells(Quadrant::NsDp));
        [
            self.report(ExperimentId::Segmentation, "ns-sp", &sp),
            self.report(ExperimentId::Segmentation, "ns-dp", &dp),
        ]
    }

    pub fn run(&mut self, id: ExperimentId) -> Vec<ExperimentReport> {
        match id {
            ExperimentId::ControlParams => vec![self.run_e1()],
            ExperimentId::InitialConditions => self.run_e2().to_vec(),
            ExperimentId::Segmentation => self.run_e3().to_vec(),
        }
    }
}

pub const FIGURE_STEPS: usize = 4000;

/// Control parameters of the showcase images.
pub fn figure_params(id: MapId) -> Vec<f64> {
    match id {
        MapId::Logistic => vec![4.0],
        MapId::LinearCongruential => vec![259_200.0],
        MapId::SkewTent => vec![0.8],
        MapId::Lozi => vec![1.7, 0.5],
        MapId::DissipativeStandard => vec![0.1, 8.8],
        MapId::Sinai => vec![0.1],
        MapId::Cat => vec![2.0],
        MapId::ChirikovStandard => vec![1.0],
        MapId::ChaoticWeb => vec![1.0],
    }
}

/// Normalized 4000-step showcase series of `spec`.
pub fn figure_series(spec: &MapSpec) -> Result<Vec<f64>> {
    let ts = iterate_map(spec, &figure_params(spec.id), &spec.base_ic, FIGURE_STEPS)?;
    Ok(normalize_values(&ts.values))
}

/// Writes `<map>-tssc.pgm` and `<map>-dcr.pgm` for every map into `dir`.
pub fn render_figures(specs: &[MapSpec], grid: usize, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for spec in specs {
        let values = figure_series(spec)?;
        for encoder in [Encoder::Tssc, Encoder::Dcr] {
            let path = dir.join(format!("{}-{}.pgm", spec.id.name(), encoder.name()));
            encode_series(&values, encoder, grid)?.write_pgm(&path)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::tssc_heatmap;
    use crate::triad::{forbidden_band_fraction, triad_sequence};

    fn tiny(maps: Vec<MapSpec>) -> ExperimentConfig {
        ExperimentConfig {
            params_per_map: 4,
            slices: 1,
            series_len: 64,
            grid: 8,
            indices: vec![0],
            classifiers: Classifier::ALL.to_vec(),
            maps,
            train: TrainConfig {
                epochs: 1,
                batch_size: 4,
                ..ExperimentConfig::desk(0).train
            },
            ..ExperimentConfig::desk(0)
        }
    }

    #[test]
    fn single_map_task_is_trivial() {
        let mut cfg = tiny(vec![MapSpec::new(MapId::Logistic)]);
        cfg.train.epochs = 20;
        cfg.train.learning_rate = 1e-2;
        let report = Runner::new(cfg).unwrap().run_e1();
        assert!(report.failures.is_empty(), "{:?}", report.failures);
        assert_eq!(report.rows.len(), 3);
        assert!(report.rows.iter().all(|r| r.accuracy == 1.0), "{:?}", report.rows);
    }

    #[test]
    fn reports_are_complete_and_reproducible() {
        let cfg = ExperimentConfig {
            indices: vec![0, 1],
            maps: vec![MapSpec::new(MapId::Logistic), MapSpec::new(MapId::Cat)],
            ..tiny(vec![])
        };
        let run = || {
            let mut runner = Runner::new(cfg.clone()).unwrap();
            let mut reports = vec![runner.run_e1()];
            reports.extend(runner.run_e3());
            reports
        };
        let (a, b) = (run(), run());
        for r in &a {
            assert!(r.failures.is_empty());
            assert_eq!(r.rows.len(), 6);
            for i in [0, 1] {
                for c in Classifier::ALL {
                    let n = r.rows.iter().filter(|row| row.i == i && row.classifier == c).count();
                    assert_eq!(n, 1);
                }
            }
            assert!(r.rows.iter().all(|row| (0.0..=1.0).contains(&row.accuracy)));
        }
        assert_eq!(reports_csv(&a), reports_csv(&b));
        let csv = reports_csv(&a);
        assert!(csv.starts_with("experiment,trial,i,classifier,accuracy\ne1_control_params,dp,0,TS,"));
        assert_eq!(csv.lines().count(), 1 + 18);
    }

    #[test]
    fn initial_condition_trials_cover_other_indices() {
        let cfg = ExperimentConfig {
            classifiers: vec![Classifier::Tssc],
            ..tiny(vec![MapSpec::new(MapId::Logistic)])
        };
        let [a, b] = Runner::new(cfg).unwrap().run_e2();
        let idx = |r: &ExperimentReport| r.rows.iter().map(|row| row.i).collect::<Vec<_>>();
        assert_eq!(idx(&a), vec![1, 2, 3, 4, 5]);
        assert_eq!(idx(&b), vec![0, 1, 2, 3, 4]);
        assert_eq!(a.trial, "a");
    }

    #[test]
    fn failures_are_recorded_per_cell() {
        // a zero grid breaks both image encoders but not the raw-series net
        let mut runner = Runner::new(tiny(vec![MapSpec::new(MapId::Logistic)])).unwrap();
        runner.config.grid = 0;
        let report = runner.run_e1();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.failures.len(), 2);
        assert!(report.failures.iter().all(|f| f.i == 0 && f.classifier != Classifier::Ts));
    }

    #[test]
    fn config_validation() {
        let mut cfg = ExperimentConfig::desk(0);
        assert!(cfg.validate().is_ok());
        cfg.indices = vec![6];
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::desk(0);
        cfg.params_per_map = 3;
        assert!(Runner::new(cfg).is_err());
        assert_eq!(ExperimentConfig::paper(0).params_per_map, 1024);
    }

    #[test]
    fn names_parse() {
        assert_eq!("tssc".parse::<Classifier>().unwrap(), Classifier::Tssc);
        assert_eq!("TS".parse::<Classifier>().unwrap(), Classifier::Ts);
        assert!("gaf".parse::<Classifier>().is_err());
        assert_eq!("e2".parse::<ExperimentId>().unwrap(), ExperimentId::InitialConditions);
        assert!("e4".parse::<ExperimentId>().is_err());
    }

    #[test]
    fn heatmap_cache_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let values = normalize_values(&(0..50).map(|i| f64::from(i * i % 17)).collect::<Vec<_>>());
        let mut cache = HeatMapCache::new(Some(dir.path().to_path_buf())).unwrap();
        let first = cache.get(&values, Encoder::Tssc, 16).unwrap();
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
        let mut fresh = HeatMapCache::new(Some(dir.path().to_path_buf())).unwrap();
        assert_eq!(fresh.get(&values, Encoder::Tssc, 16).unwrap(), first);
        assert_eq!(first, encode_series(&values, Encoder::Tssc, 16).unwrap().cells);
        fresh.get(&values, Encoder::Dcr, 16).unwrap();
        assert_eq!(fresh.len(), 2);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 2);
    }

    #[test]
    fn hash_separates_series() {
        assert_ne!(series_hash(&[0.0, 1.0]), series_hash(&[1.0, 0.0]));
        assert_ne!(series_hash(&[0.0]), series_hash(&[-0.0]));
        assert_eq!(series_hash(&[]), 0xcbf2_9ce4_8422_2325);
    }

    #[test]
    fn figures() {
        let dir = tempfile::tempdir().unwrap();
        let files = render_figures(&MapSpec::all(), DEFAULT_GRID, dir.path()).unwrap();
        assert_eq!(files.len(), 18);
        assert!(files.iter().all(|f| f.exists()));

        let logistic = figure_series(&MapSpec::new(MapId::Logistic)).unwrap();
        let frac = forbidden_band_fraction(&triad_sequence(&logistic).unwrap(), 0.05).unwrap();
        assert!(frac < 0.01, "{frac}");

        let cat = figure_series(&MapSpec::new(MapId::Cat)).unwrap();
        let tssc = tssc_heatmap(&triad_sequence(&cat).unwrap(), DEFAULT_GRID).unwrap();
        let dcr = encode_series(&cat, Encoder::Dcr, DEFAULT_GRID).unwrap();
        assert!(tssc.cell_variance() > dcr.cell_variance());
    }
}
