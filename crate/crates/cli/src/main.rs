use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use tssc::dataset::{build_dataset, read_dataset, write_dataset, DatasetConfig, Quadrant, Sample};
use tssc::experiment::{
    labeled_set, render_figures, reports_csv, Classifier, ExperimentConfig, ExperimentId, HeatMapCache, Runner,
};
use tssc::grid::{encode_series, Encoder, DEFAULT_GRID};
use tssc::maps::MapSpec;
use tssc::nn::{evaluate, load_model, metrics_csv, save_model, train, ConvNet, Optimizer, TrainConfig};

#[derive(Parser)]
#[command(name = "tssc", version, about = "TSSC images of chaotic time series and ConvNet classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    Desk,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Subcommand)]
enum Command {
    /// Generate dataset D_i and write it as a TSSD file.
    Generate {
        /// D0..D5
        #[arg(long, value_parser = parse_dataset_index)]
        dataset: usize,
        #[arg(long, default_value_t = 64)]
        params_per_map: usize,
        /// Slices for D1..D5 (D0 always has one).
        #[arg(long, default_value_t = 2)]
        slices: usize,
        #[arg(long, default_value_t = 2000)]
        series_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write one heat-map PGM per series of a TSSD file.
    Encode {
        #[arg(long, value_parser = parse_encoder)]
        method: Encoder,
        #[arg(long, default_value_t = DEFAULT_GRID)]
        grid: usize,
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Only encode this quadrant.
        #[arg(long, value_parser = parse_quadrant)]
        quadrant: Option<Quadrant>,
    },
    /// Train a classifier on one quadrant of a dataset and save a TSSM checkpoint.
    Train {
        #[arg(long, value_parser = parse_classifier)]
        classifier: Classifier,
        #[arg(long, default_value = "base", value_parser = parse_quadrant)]
        train_quadrant: Quadrant,
        #[arg(long, default_value_t = 15)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// TSSD dataset to train on.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_GRID)]
        grid: usize,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        #[arg(long, value_enum, default_value = "adam")]
        optimizer: OptimizerArg,
        #[arg(long, default_value_t = 0.0)]
        validation_fraction: f64,
        /// Per-epoch loss/accuracy CSV.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one quadrant of a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_parser = parse_quadrant)]
        test_quadrant: Quadrant,
        #[arg(long)]
        data: PathBuf,
        /// Needed for image models, whose checkpoints look the same for TSSC and DCR.
        #[arg(long, value_parser = parse_classifier)]
        classifier: Option<Classifier>,
    },
    /// Run an experiment and write its accuracy table as CSV.
    Experiment {
        #[arg(long, value_parser = parse_experiment)]
        id: ExperimentId,
        #[arg(long, value_enum, default_value = "desk")]
        scale: Scale,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        params_per_map: Option<usize>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write TSSC and DCR PGMs of the nine maps at their showcase parameters.
    RenderFigures {
        #[arg(long, default_value = "figures")]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_GRID)]
        grid: usize,
    },
}

fn parse_dataset_index(s: &str) -> Result<usize, String> {
    let digits = s.strip_prefix(['D', 'd']).unwrap_or(s);
    match digits.parse::<usize>() {
        Ok(i) if i <= 5 => Ok(i),
        _ => Err(format!("expected D0..D5, got {s:?}")),
    }
}

fn parse_encoder(s: &str) -> Result<Encoder, String> {
    match s.to_ascii_lowercase().as_str() {
        "tssc" => Ok(Encoder::Tssc),
        "dcr" => Ok(Encoder::Dcr),
        _ => Err(format!("expected tssc or dcr, got {s:?}")),
    }
}

fn parse_quadrant(s: &str) -> Result<Quadrant, String> {
    s.parse().map_err(|e: tssc::Error| e.to_string())
}

fn parse_classifier(s: &str) -> Result<Classifier, String> {
    s.parse().map_err(|e: tssc::Error| e.to_string())
}

fn parse_experiment(s: &str) -> Result<ExperimentId, String> {
    s.parse().map_err(|e: tssc::Error| e.to_string())
}

fn load_samples(path: &Path, quadrant: Quadrant) -> Result<Vec<Sample>> {
    let ds = read_dataset(path).with_context(|| format!("reading {}", path.display()))?;
    let samples: Vec<Sample> = ds.pooled(quadrant).into_iter().cloned().collect();
    if samples.is_empty() {
        bail!("{} has no {} samples", path.display(), quadrant.name());
    }
    Ok(samples)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate {
            dataset,
            params_per_map,
            slices,
            series_len,
            seed,
            out,
        } => {
            let cfg = DatasetConfig::for_index(dataset, params_per_map, slices, series_len, seed);
            let ds = build_dataset(&cfg, &MapSpec::all())?;
            write_dataset(&ds, &out)?;
            eprintln!(
                "D{dataset}: {} slice(s), {} series per quadrant -> {}",
                ds.slices.len(),
                ds.pooled(Quadrant::Base).len(),
                out.display()
            );
        }
        Command::Encode {
            method,
            grid,
            input,
            out,
            quadrant,
        } => {
            let ds = read_dataset(&input)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut written = 0;
            for slice in &ds.slices {
                for q in Quadrant::ALL.into_iter().filter(|&q| quadrant.map_or(true, |w| w == q)) {
                    for s in slice.quadrants.get(q) {
                        let name = format!(
                            "{}-s{}-{}-p{:04}-{}.pgm",
                            q.name(),
                            slice.index,
                            s.series.map.name(),
                            s.param_index,
                            method.name()
                        );
                        encode_series(&s.series.values, method, grid)?.write_pgm(&out.join(name))?;
                        written += 1;
                    }
                }
            }
            eprintln!("wrote {written} images to {}", out.display());
        }
        Command::Train {
            classifier,
            train_quadrant,
            epochs,
            seed,
            data,
            out,
            grid,
            batch_size,
            learning_rate,
            optimizer,
            validation_fraction,
            metrics,
        } => {
            let samples = load_samples(&data, train_quadrant)?;
            let refs: Vec<&Sample> = samples.iter().collect();
            let set = labeled_set(&refs, classifier, grid, &mut HeatMapCache::default())?;
            let mut model = ConvNet::new(&classifier.architecture(set.item_shape[2], grid), seed)?;
            let cfg = TrainConfig {
                epochs,
                batch_size,
                learning_rate,
                optimizer: match optimizer {
                    OptimizerArg::Adam => Optimizer::adam(),
                    OptimizerArg::Sgd => Optimizer::sgd_momentum(),
                },
                seed,
                validation_fraction,
            };
            let start = Instant::now();
            let history = train(&mut model, &set, &cfg)?;
            if let Some(last) = history.last() {
                eprintln!(
                    "{classifier}: {} samples, {epochs} epochs in {:.1?}, final {} loss {:.4} accuracy {:.4}",
                    set.len(),
                    start.elapsed(),
                    last.split.name(),
                    last.loss,
                    last.accuracy
                );
            }
            if let Some(path) = metrics {
                fs::write(&path, metrics_csv(&history)).with_context(|| format!("writing {}", path.display()))?;
            }
            save_model(&model, &out)?;
        }
        Command::Eval {
            model,
            test_quadrant,
            data,
            classifier,
        } => {
            let net = load_model(&model)?;
            let [_, h, w] = net.input_shape;
            let classifier = match classifier {
                Some(c) => c,
                None if h == 1 => Classifier::Ts,
                None => bail!("{} is an image model; pass --classifier tssc or dcr", model.display()),
            };
            let samples = load_samples(&data, test_quadrant)?;
            let refs: Vec<&Sample> = samples.iter().collect();
            let set = labeled_set(&refs, classifier, w, &mut HeatMapCache::default())?;
            let eval = evaluate(&net, &set)?;
            println!("accuracy,{}", eval.accuracy);
            println!("confusion (rows = true label, columns = predicted)");
            for row in &eval.confusion {
                let cells: Vec<String> = row.iter().map(u64::to_string).collect();
                println!("{}", cells.join(","));
            }
        }
        Command::Experiment {
            id,
            scale,
            seed,
            epochs,
            params_per_map,
            cache_dir,
            out,
        } => {
            let mut cfg = match scale {
                Scale::Desk => ExperimentConfig::desk(seed),
                Scale::Paper => ExperimentConfig::paper(seed),
            };
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(m) = params_per_map {
                cfg.params_per_map = m;
            }
            cfg.cache_dir = cache_dir;
            let mut runner = Runner::new(cfg)?;
            let reports = runner.run(id);
            for r in &reports {
                eprintln!("{} trial {}: {:.1?}", r.experiment.name(), r.trial, r.wall_clock);
                for f in &r.failures {
                    eprintln!("  failed i={} {}: {}", f.i, f.classifier, f.error);
                }
            }
            let csv = reports_csv(&reports);
            match out {
                Some(path) => fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{csv}"),
            }
            if reports.iter().any(|r| !r.failures.is_empty()) {
                bail!("some experiment cells failed");
            }
        }
        Command::RenderFigures { out, grid } => {
            let files = render_figures(&MapSpec::all(), grid, &out)?;
            eprintln!("wrote {} images to {}", files.len(), out.display());
        }
    }
    Ok(())
}
