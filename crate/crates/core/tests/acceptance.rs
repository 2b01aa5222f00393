//! Exit criteria. Each test prints one `criterion N: PASS|FAIL` line straight
//! to stdout (bypassing the harness capture) and then asserts.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::io::Write;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tssc::dataset::{build_dataset, decode_dataset, encode_dataset, read_dataset, write_dataset, DatasetConfig, Quadrant};
use tssc::experiment::{Classifier, ExperimentConfig, Runner};
use tssc::maps::{iterate_map, normalize_values, MapId, MapSpec};
use tssc::nn::{Architecture, ConvNet, Layer, LayerSpec, Tensor};
use tssc::triad::{
    bandt_pompe, forbidden_band_fraction, ordinal_pattern, permutation_entropy, triad_sequence, OrdinalPattern,
    TriadPoint,
};

fn verdict(n: u32, pass: bool, detail: &str) {
    let line = format!("criterion {n}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "criterion {n} failed: {detail}");
}

#[test]
fn criterion_1_worked_triads() {
    let cases = [
        ([1.9, 2.0, 3.0], 1.005, 1.471),
        ([2.1, 2.0, 3.0], 1.005, 1.670),
        ([2.9, 2.0, 3.0], 1.345, 2.303),
    ];
    let tol = 5e-4;
    let mut worst: f64 = 0.0;
    let mut details = Vec::new();
    for (triad, r, theta) in cases {
        let p = TriadPoint::from_triad(0, triad).unwrap();
        let err = (p.r - r).abs().max((p.theta - theta).abs());
        worst = worst.max(err);
        details.push(format!("{triad:?} -> ({:.5}, {:.5})", p.r, p.theta));
    }
    let pattern = ordinal_pattern([8.0, 2.0, 5.0]).unwrap();
    let pass = worst < tol && pattern == OrdinalPattern::P231;
    verdict(
        1,
        pass,
        &format!("{}; max error {worst:.2e} vs {tol:.0e}; (8,2,5) -> {pattern}", details.join(", ")),
    );
}

/// Pattern implied by the open angular sector containing `theta`.
fn sector_pattern(theta: f64) -> Option<OrdinalPattern> {
    let p = if theta > 0.0 && theta < FRAC_PI_2 {
        OrdinalPattern::P123
    } else if theta > -FRAC_PI_4 && theta < 0.0 {
        OrdinalPattern::P132
    } else if theta > FRAC_PI_2 && theta < 3.0 * FRAC_PI_4 {
        OrdinalPattern::P213
    } else if theta > 3.0 * FRAC_PI_4 && theta < PI {
        OrdinalPattern::P231
    } else if theta > -FRAC_PI_2 && theta < -FRAC_PI_4 {
        OrdinalPattern::P312
    } else if theta > -PI && theta < -FRAC_PI_2 {
        OrdinalPattern::P321
    } else {
        return None;
    };
    Some(p)
}

#[test]
fn criterion_2_sector_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 100_000;
    let mut agree = 0;
    let mut drawn = 0;
    while drawn < n {
        let t: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
            continue;
        }
        drawn += 1;
        let dx = t[1] - t[0];
        let dy = t[2] - t[1];
        if sector_pattern(dy.atan2(dx)) == Some(ordinal_pattern(t).unwrap()) {
            agree += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        2,
        agree == n && secs < 1.0,
        &format!("{agree}/{n} agree in {secs:.3} s"),
    );
}

#[test]
fn criterion_3_entropy_extremes() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise: Vec<f64> = (0..100_000).map(|_| rng.gen::<f64>()).collect();
    let pe_noise = bandt_pompe(&noise).unwrap().permutation_entropy(true);
    let ramp: Vec<f64> = (0..100_000).map(|i| f64::from(i) * 0.5 - 7.0).collect();
    let pe_ramp = bandt_pompe(&ramp).unwrap().permutation_entropy(true);
    let down = permutation_entropy(&bandt_pompe(&ramp.iter().rev().copied().collect::<Vec<_>>()).unwrap().probs, true);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        3,
        pe_noise >= 0.99 && pe_ramp == 0.0 && down == 0.0 && secs < 1.0,
        &format!("noise PE {pe_noise:.5}, increasing ramp PE {pe_ramp}, decreasing ramp PE {down}, {secs:.3} s"),
    );
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Worst relative error between analytic and central-difference gradients
/// of `sum(w * layer(x))` for the input and every parameter.
fn layer_fd_error(layer: &Layer, x: &Tensor, train: bool, rng: &mut ChaCha8Rng) -> f64 {
    let h = 1e-4;
    let (out, cache, _) = layer.forward(x, train).unwrap();
    let w: Vec<f64> = (0..out.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let objective = |l: &Layer, x: &Tensor| -> f64 {
        let (o, _, _) = l.forward(x, train).unwrap();
        o.data.iter().zip(&w).map(|(a, b)| a * b).sum()
    };
    let grad_out = Tensor::new(out.shape.clone(), w.clone()).unwrap();
    let mut grads: Vec<Vec<f64>> = layer.params.iter().map(|p| vec![0.0; p.len()]).collect();
    let grad_in = layer.backward(&cache, &grad_out, &mut grads).unwrap();

    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let (mut plus, mut minus) = (x.clone(), x.clone());
        plus.data[i] += h;
        minus.data[i] -= h;
        let num = (objective(layer, &plus) - objective(layer, &minus)) / (2.0 * h);
        worst = worst.max(rel_err(grad_in.data[i], num));
    }
    for p in 0..layer.params.len() {
        for i in 0..layer.params[p].len() {
            let (mut plus, mut minus) = (layer.clone(), layer.clone());
            plus.params[p][i] += h;
            minus.params[p][i] -= h;
            let num = (objective(&plus, x) - objective(&minus, x)) / (2.0 * h);
            worst = worst.max(rel_err(grads[p][i], num));
        }
    }
    worst
}

/// Composed check on a net with every layer type:
/// input 2x6x6 -> conv 3@3x3 -> BN -> ReLU -> maxpool 2x2 -> conv 4@3x3 ->
/// BN -> ReLU -> global average pool -> dense 5 -> ReLU -> dense 9, batch of 3.
fn network_fd_error(seed: u64) -> f64 {
    let arch = Architecture {
        input_shape: [2, 6, 6],
        layers: vec![
            LayerSpec::conv_same(3, 3),
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
            LayerSpec::MaxPool { pool_h: 2, pool_w: 2 },
            LayerSpec::conv_same(4, 3),
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense { out_features: 5 },
            LayerSpec::Relu,
            LayerSpec::Dense { out_features: 9 },
        ],
    };
    let net = ConvNet::new(&arch, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let x = Tensor::new(vec![3, 2, 6, 6], (0..216).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let labels: Vec<u8> = (0..3).map(|_| rng.gen_range(0..9)).collect();
    let (_, grads, _, _) = net.loss_and_gradients(&x, &labels).unwrap();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for l in 0..net.layers.len() {
        for p in 0..net.layers[l].params.len() {
            for i in 0..net.layers[l].params[p].len() {
                let (mut plus, mut minus) = (net.clone(), net.clone());
                plus.layers[l].params[p][i] += h;
                minus.layers[l].params[p][i] -= h;
                let num = (plus.train_loss(&x, &labels).unwrap() - minus.train_loss(&x, &labels).unwrap()) / (2.0 * h);
                worst = worst.max(rel_err(grads[l][p][i], num));
            }
        }
    }
    worst
}

#[test]
fn criterion_4_gradient_check() {
    let start = Instant::now();
    // per layer: (spec, per-item input shape, batch, train mode)
    let cases = [
        (LayerSpec::conv_same(3, 3), [2, 5, 5], 2, true),
        (
            LayerSpec::Conv {
                out_channels: 2,
                kernel_h: 3,
                kernel_w: 2,
                stride: 2,
                pad_h: 1,
                pad_w: 0,
            },
            [2, 6, 5],
            2,
            true,
        ),
        (LayerSpec::conv1d_same(3, 5), [2, 1, 9], 2, true),
        (LayerSpec::BatchNorm, [3, 3, 3], 4, true),
        (LayerSpec::BatchNorm, [3, 3, 3], 4, false),
        (LayerSpec::Relu, [2, 4, 4], 2, true),
        (LayerSpec::MaxPool { pool_h: 2, pool_w: 2 }, [2, 4, 6], 2, true),
        (LayerSpec::MaxPool { pool_h: 1, pool_w: 4 }, [2, 1, 12], 2, true),
        (LayerSpec::GlobalAvgPool, [3, 4, 4], 2, true),
        (LayerSpec::Dense { out_features: 5 }, [2, 3, 3], 3, true),
    ];
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(40 + seed);
        for (spec, shape, batch, train) in cases {
            let mut layer = Layer::new(spec, shape, &mut rng).unwrap();
            if spec == LayerSpec::BatchNorm {
                // move away from the identity so every parameter matters
                for v in layer.params.iter_mut().flatten() {
                    *v += rng.gen_range(-0.5..0.5);
                }
                for v in &mut layer.state[0] {
                    *v = rng.gen_range(-0.3..0.3);
                }
                for v in &mut layer.state[1] {
                    *v = rng.gen_range(0.5..2.0);
                }
            }
            let n = batch * shape.iter().product::<usize>();
            let x = Tensor::new(
                vec![batch, shape[0], shape[1], shape[2]],
                (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let err = layer_fd_error(&layer, &x, train, &mut rng);
            if err > worst {
                worst = err;
                worst_at = format!("{spec} (train={train}, seed {seed})");
            }
        }
        let err = network_fd_error(seed);
        if err > worst {
            worst = err;
            worst_at = format!("composed net (seed {seed})");
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        4,
        worst < 1e-4 && secs < 60.0,
        &format!("max relative error {worst:.2e} at {worst_at}; 3 seeds, {secs:.1} s"),
    );
}

/// Desk-scale runner shared by criteria 5-7 so each network is trained once.
fn desk_runner() -> &'static Mutex<Runner> {
    static RUNNER: OnceLock<Mutex<Runner>> = OnceLock::new();
    RUNNER.get_or_init(|| {
        let mut cfg = ExperimentConfig::desk(0);
        cfg.indices = vec![0];
        Mutex::new(Runner::new(cfg).unwrap())
    })
}

fn desk_accuracies(train_i: usize, test_i: usize, q: Quadrant) -> [f64; 3] {
    let mut runner = desk_runner().lock().unwrap_or_else(|e| e.into_inner());
    Classifier::ALL.map(|c| runner.accuracy(train_i, test_i, q, c).unwrap())
}

#[test]
fn criterion_5_desk_control_parameters() {
    let start = Instant::now();
    let [ts, dcr, tssc] = desk_accuracies(0, 0, Quadrant::Dp);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        5,
        tssc >= 0.90 && tssc >= dcr && tssc >= ts && secs <= 1800.0,
        &format!("DP_0 accuracy TSSC {tssc:.4}, DCR {dcr:.4}, TS {ts:.4}; {secs:.0} s"),
    );
}

#[test]
fn criterion_6_desk_segmentation() {
    let start = Instant::now();
    let [ts, _, tssc] = desk_accuracies(0, 0, Quadrant::NsSp);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        6,
        tssc - ts >= 0.15 && tssc >= 0.85 && secs <= 2700.0,
        &format!("NS^SP_0 accuracy TSSC {tssc:.4}, TS {ts:.4}, gap {:.4}; {secs:.0} s", tssc - ts),
    );
}

#[test]
fn criterion_7_initial_condition_robustness() {
    let start = Instant::now();
    let [ts1, _, tssc1] = desk_accuracies(0, 1, Quadrant::Base);
    let [ts5, _, tssc5] = desk_accuracies(0, 5, Quadrant::Base);
    let secs = start.elapsed().as_secs_f64();
    let tssc_drop = tssc1 - tssc5;
    let ts_drop = ts1 - ts5;
    verdict(
        7,
        (tssc5 - tssc1).abs() <= 0.05 && ts_drop > tssc_drop && secs <= 5400.0,
        &format!(
            "BASE_0-trained on BASE_1/BASE_5: TSSC {tssc1:.4} -> {tssc5:.4}, TS {ts1:.4} -> {ts5:.4}; {secs:.0} s"
        ),
    );
}

#[test]
fn criterion_8_forbidden_band() {
    let spec = MapSpec::new(MapId::Logistic);
    let ts = iterate_map(&spec, &[4.0], &spec.base_ic, 1000).unwrap();
    let points = triad_sequence(&normalize_values(&ts.values)).unwrap();
    let frac = forbidden_band_fraction(&points, 0.05).unwrap();
    verdict(8, frac < 0.01, &format!("fraction within 0.05 rad of +-pi/2: {frac:.5}"));
}

#[test]
fn criterion_9_round_trip_and_determinism() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let specs = MapSpec::all();
    let mut round_trip = true;
    let mut identical = true;
    for i in 0..=5 {
        let cfg = DatasetConfig::desk(i, 0);
        let a = build_dataset(&cfg, &specs).unwrap();
        let b = build_dataset(&cfg, &specs).unwrap();
        let bytes = encode_dataset(&a);
        identical &= bytes == encode_dataset(&b);

        let path = dir.path().join(format!("d{i}.tssd"));
        write_dataset(&a, &path).unwrap();
        identical &= std::fs::read(&path).unwrap() == bytes;
        let back = read_dataset(&path).unwrap();
        round_trip &= encode_dataset(&back) == bytes && decode_dataset(&bytes).unwrap() == a;
        round_trip &= back
            .pooled(Quadrant::NsDp)
            .iter()
            .zip(a.pooled(Quadrant::NsDp))
            .all(|(x, y)| x.series.values.iter().zip(&y.series.values).all(|(u, v)| u.to_bits() == v.to_bits()));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        9,
        round_trip && identical && secs < 60.0,
        &format!("write/read bit-identical: {round_trip}; repeated D0..D5 builds identical: {identical}; {secs:.1} s"),
    );
}
