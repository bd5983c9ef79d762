//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use wxforecast::data::{
    synth_weather_with, window, write_csv_path, MinMaxScaler, Series, SynthOptions, YearSplit,
};
use wxforecast::eval::{self, evaluate, Persistence, Space};
use wxforecast::nn::{
    lstm_forward_from, split_sequence, ArchSpec, LstmVariant, ModelKind, ModelParams, Network,
};
use wxforecast::pipeline::{self, ModelSettings};
use wxforecast::rng::Xoshiro256pp;
use wxforecast::select::{grid_search, CvOptions, Grid};
use wxforecast::train::{fit, squared_loss, TrainConfig};
use wxforecast::{Exec, Matrix};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> Result<(), String> {
    ensure(
        elapsed <= Duration::from_secs(limit_secs),
        format!("took {elapsed:.2?}, limit {limit_secs} s"),
    )
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let suites = [
        ("mlp", ModelKind::Mlp, LstmVariant::PaperExact, 11),
        ("rnn", ModelKind::Rnn, LstmVariant::PaperExact, 12),
        (
            "lstm/paper-exact",
            ModelKind::Lstm,
            LstmVariant::PaperExact,
            13,
        ),
        ("lstm/standard", ModelKind::Lstm, LstmVariant::Standard, 14),
    ];
    let mut parts = Vec::new();
    for (name, kind, variant, seed) in suites {
        let r = common::gradient_suite(kind, variant, 20, seed);
        ensure(
            r.max_rel_err < 1e-4,
            format!("{name}: max relative error {:.3e}", r.max_rel_err),
        )?;
        parts.push(format!(
            "{name} {:.1e} over {} partials",
            r.max_rel_err, r.partials
        ));
    }
    within(start.elapsed(), 30)?;
    Ok(parts.join("; "))
}

fn at(year: i32, month: u32, day: u32) -> chrono::NaiveDateTime {
    NaiveDate::from_ymd_opt(year, month, day)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap()
}

fn synth_block(start: chrono::NaiveDateTime, records: usize, seed: u64) -> Series {
    synth_weather_with(&SynthOptions {
        start,
        records,
        seed,
        noise: 1.0,
        round: true,
    })
    .unwrap()
}

fn count_fidelity() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let full = synth_block(at(2021, 6, 1), 6769, 1)
        .concat(synth_block(at(2022, 1, 1), 30816, 2))
        .map_err(|e| e.to_string())?;
    let raw = dir.path().join("station.csv");
    let (train_csv, test_csv) = (dir.path().join("train.csv"), dir.path().join("test.csv"));
    write_csv_path(&full, &raw).map_err(|e| e.to_string())?;
    let summary = pipeline::prep(&raw, &train_csv, &test_csv, true, &YearSplit::default())
        .map_err(|e| e.to_string())?;
    let train = pipeline::load_windows(&train_csv, true).map_err(|e| e.to_string())?;
    let test = pipeline::load_windows(&test_csv, true).map_err(|e| e.to_string())?;
    ensure(
        (summary.train_records, summary.test_records) == (30816, 6769),
        format!(
            "records {} / {}",
            summary.train_records, summary.test_records
        ),
    )?;
    ensure(
        (train.len(), test.len()) == (30813, 6766),
        format!("pairs {} / {}", train.len(), test.len()),
    )?;
    ensure(train.x.cols() == 21 && train.y.cols() == 7, "feature width")?;
    Ok("30813 train / 6766 test pairs, 21 features, 7 labels".into())
}

fn scaler_contract() -> Outcome {
    let series = synth_block(at(2022, 4, 1), 3 * 144, 5);
    let (tr, te) = series.records().split_at(2 * 144);
    let train = window(&Series::new(tr.to_vec()).unwrap(), 3).unwrap();
    let test = window(&Series::new(te.to_vec()).unwrap(), 3).unwrap();
    let scaler = MinMaxScaler::fit(&train).unwrap();

    let mut worst = 0.0f64;
    for set in [&train, &test] {
        let back = scaler
            .inverse_transform(&scaler.transform(set).unwrap().y)
            .unwrap();
        for (a, b) in back.data().iter().zip(set.y.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst <= 1e-12, format!("round-trip error {worst:e}"))?;

    let scaled = scaler.transform(&train).unwrap();
    let c = scaled.num_channels();
    for ch in 0..c {
        if scaler.max[ch] == scaler.min[ch] {
            continue;
        }
        let vals: Vec<f64> = (0..scaled.x.cols())
            .filter(|k| k % c == ch)
            .flat_map(|k| scaled.x.column(k))
            .chain(scaled.y.column(ch))
            .collect();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        ensure(
            lo == 0.0 && hi == 1.0,
            format!("channel {ch} spans [{lo}, {hi}]"),
        )?;
    }

    // Wildly perturbed test data must not move anything fitted on train.
    let mut perturbed = test.clone();
    for v in perturbed
        .x
        .data_mut()
        .iter_mut()
        .chain(perturbed.y.data_mut())
    {
        *v = *v * 10.0 + 500.0;
    }
    let settings = ModelSettings {
        kind: ModelKind::Mlp,
        hidden: 8,
        lstm_variant: LstmVariant::PaperExact,
    };
    let cfg = TrainConfig {
        learning_rate: 0.1,
        batch_size: 32,
        epochs: 2,
        seed: 3,
        ..TrainConfig::default()
    };
    let cmp = |t: &wxforecast::data::WindowedSet| {
        pipeline::compare(
            &train,
            t,
            &[settings],
            &cfg,
            Space::Normalized,
            Exec::Sequential,
        )
        .unwrap()
    };
    let (a, b) = (cmp(&test), cmp(&perturbed));
    ensure(
        a.models["mlp"].scaler == scaler,
        "model scaler differs from train fit",
    )?;
    ensure(
        a.models == b.models,
        "perturbing the test set changed the fitted model",
    )?;
    ensure(
        scaler
            .transform(&perturbed)
            .unwrap()
            .y
            .data()
            .iter()
            .any(|v| *v > 1.0),
        "test data was rescaled to its own range",
    )?;
    Ok(format!(
        "round trip {worst:.1e}, extrema exact, test-independent"
    ))
}

fn overfit_capacity() -> Outcome {
    let start = Instant::now();
    let mut rng = Xoshiro256pp::seed_from_u64(64);
    let x = Matrix::from_vec(64, 4, (0..256).map(|_| rng.next_f64()).collect()).unwrap();
    let a = Matrix::from_rows(&[[0.5, -0.2], [0.3, 0.4], [-0.1, 0.2], [0.2, 0.1]]).unwrap();
    let y = x.matmul(&a).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.1,
        batch_size: 64,
        epochs: 2000,
        seed: 1,
        shuffle: false,
        early_stop_patience: None,
    };
    let samples = wxforecast::train::Samples::new(&x, &y).unwrap();
    let (net, logs) =
        fit(ArchSpec::mlp(4, 32, 2), &cfg, samples, None).map_err(|e| e.to_string())?;
    let first = logs.iter().position(|l| l.train_loss < 1e-3);
    let final_loss = squared_loss(&y, &net.predict(&x).unwrap()).unwrap();
    within(start.elapsed(), 60)?;
    match first {
        Some(e) => Ok(format!(
            "loss < 1e-3 at epoch {}, final {final_loss:.2e}",
            e + 1
        )),
        None => Err(format!("final loss {final_loss:.3e} after 2000 epochs")),
    }
}

fn forecast_skill() -> Outcome {
    let start = Instant::now();
    let mut opts = SynthOptions::days(17, 11);
    opts.noise = 0.3;
    let series = synth_weather_with(&opts).unwrap();
    let (tr, te) = series.records().split_at(14 * 144);
    let train = window(&Series::new(tr.to_vec()).unwrap(), 3).unwrap();
    let test = window(&Series::new(te.to_vec()).unwrap(), 3).unwrap();
    let scaler = MinMaxScaler::fit(&train).unwrap();
    let scaled = scaler.transform(&train).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        batch_size: 32,
        epochs: 120,
        seed: 3,
        shuffle: true,
        early_stop_patience: None,
    };
    let arch = ArchSpec::for_windows(ModelKind::Mlp, 7, 3, 64, LstmVariant::PaperExact);
    let (net, _) = fit(arch, &cfg, scaled.samples(), None).map_err(|e| e.to_string())?;
    let model = evaluate(&net, &scaler, &test, Space::Normalized).unwrap();
    let baseline = evaluate(
        &Persistence {
            window: 3,
            channels: 7,
        },
        &scaler,
        &test,
        Space::Normalized,
    )
    .unwrap();
    ensure(
        model.mse < baseline.mse,
        format!(
            "mlp mse {:.4e} vs persistence {:.4e}",
            model.mse, baseline.mse
        ),
    )?;
    let mut r2s = Vec::new();
    for var in ["temperature", "humidity", "pressure"] {
        let r2 = model.per_variable[var].r2;
        ensure(r2.is_some_and(|v| v > 0.9), format!("{var} R² {r2:?}"))?;
        r2s.push(format!("{var} {:.4}", r2.unwrap()));
    }
    within(start.elapsed(), 120)?;
    Ok(format!(
        "mse {:.3e} < persistence {:.3e}; R² {}",
        model.mse,
        baseline.mse,
        r2s.join(", ")
    ))
}

fn model_selection() -> Outcome {
    let start = Instant::now();
    let series = synth_block(at(2022, 4, 1), 3 * 144, 9);
    let train = window(&series, 3).unwrap();
    let grid = Grid {
        learning_rates: vec![1e-9, 0.1],
        hidden_sizes: vec![16],
    };
    let opts = CvOptions {
        k: 5,
        epochs: 10,
        batch_size: 32,
        seed: 4,
        ..CvOptions::default()
    };
    let arch = ArchSpec::for_windows(ModelKind::Mlp, 7, 3, 16, LstmVariant::PaperExact);
    let cv = grid_search(arch, &grid, &train, &opts, Exec::default()).map_err(|e| e.to_string())?;
    ensure(
        cv.chosen.learning_rate == 0.1,
        format!("chose η = {}", cv.chosen.learning_rate),
    )?;
    let best = cv
        .pairs
        .iter()
        .map(|p| p.mean_loss.unwrap_or(f64::INFINITY))
        .fold(f64::INFINITY, f64::min);
    ensure(
        cv.chosen.mean_loss == Some(best),
        "chosen pair is not the minimum",
    )?;
    ensure(
        cv.pairs.iter().all(|p| p.fold_losses.len() == 5),
        "fold count",
    )?;
    within(start.elapsed(), 120)?;
    let loss = |eta: f64| {
        cv.pairs
            .iter()
            .find(|p| p.learning_rate == eta)
            .unwrap()
            .mean_loss
            .unwrap()
    };
    Ok(format!(
        "η=0.1 chosen (mean loss {:.3e} vs {:.3e})",
        loss(0.1),
        loss(1e-9)
    ))
}

fn metric_oracles() -> Outcome {
    use common::metrics as m;
    let mut rng = Xoshiro256pp::seed_from_u64(77);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    for inst in 0..100 {
        let (n, c) = (2 + rng.below(40), 1 + rng.below(7));
        let y = common::random_matrix(&mut rng, n, c, 1.0);
        let h = common::random_matrix(&mut rng, n, c, 1.0);
        let (yv, hv) = (y.data(), h.data());
        ensure(
            close(eval::mse(&y, &h).unwrap(), m::mse(yv, hv)),
            format!("mse #{inst}"),
        )?;
        ensure(
            close(eval::mae(&y, &h).unwrap(), m::mae(yv, hv)),
            format!("mae #{inst}"),
        )?;
        ensure(
            close(eval::rmse(&y, &h).unwrap(), m::mse(yv, hv).sqrt()),
            format!("rmse #{inst}"),
        )?;
        for col in 0..c {
            let (a, b) = (y.column(col), h.column(col));
            let rho = eval::pearson(&a, &b).ok_or("pearson undefined")?;
            ensure(close(rho, m::pearson(&a, &b)), format!("pearson #{inst}"))?;
            let r2 = eval::r_squared(&a, &b).ok_or("r² undefined")?;
            ensure(close(r2, m::r_squared(&a, &b)), format!("r² #{inst}"))?;
        }
    }
    // ȳ = 3, Σ(y−ȳ)² = 14, Σ(y−ŷ)² = 25+1+0+36 = 62, so R² = −24/7.
    let r2 = eval::r_squared(&[1.0, 2.0, 3.0, 6.0], &[6.0, 3.0, 3.0, 0.0]).unwrap();
    ensure(close(r2, -24.0 / 7.0), format!("4-point R² {r2}"))?;
    Ok(format!("100 instances agree; 4-point R² = {r2:.6}"))
}

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

fn determinism() -> Outcome {
    let start = Instant::now();
    let series = synth_block(at(2022, 4, 1), 5 * 144, 21);
    let (tr, te) = series.records().split_at(4 * 144);
    let train = window(&Series::new(tr.to_vec()).unwrap(), 3).unwrap();
    let test = window(&Series::new(te.to_vec()).unwrap(), 3).unwrap();
    let settings: Vec<ModelSettings> = ModelKind::ALL
        .iter()
        .map(|&kind| ModelSettings {
            kind,
            hidden: 16,
            lstm_variant: LstmVariant::PaperExact,
        })
        .collect();
    let cfg = TrainConfig {
        learning_rate: 0.1,
        batch_size: 32,
        epochs: 5,
        seed: 2024,
        ..TrainConfig::default()
    };
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |name: &str, exec: Exec| {
        let dir = root.path().join(name);
        pipeline::compare(&train, &test, &settings, &cfg, Space::Normalized, exec)
            .unwrap()
            .write(&dir)
            .unwrap();
        files_in(&dir)
    };
    let mut runs = vec![("sequential", run("seq", Exec::Sequential))];
    #[cfg(feature = "parallel")]
    for threads in [1, 4] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let files = pool.install(|| run(&format!("par{threads}"), Exec::Parallel));
        runs.push((
            if threads == 1 {
                "1 thread"
            } else {
                "4 threads"
            },
            files,
        ));
    }
    runs.push(("repeat", run("again", Exec::Sequential)));
    let reference = &runs[0].1;
    ensure(
        reference.len() >= 8,
        format!("only {} artifacts", reference.len()),
    )?;
    for (name, files) in &runs[1..] {
        ensure(files == reference, format!("{name} artifacts differ"))?;
    }
    within(start.elapsed(), 180)?;
    let labels: Vec<&str> = runs.iter().map(|r| r.0).collect();
    Ok(format!(
        "{} artifacts identical across {}",
        reference.len(),
        labels.join(", ")
    ))
}

fn lstm_variants() -> Outcome {
    let mut rng = Xoshiro256pp::seed_from_u64(99);
    let (d, h, o, t, n) = (4, 5, 3, 3, 6);
    let standard_arch = ArchSpec::lstm(d, h, o, t, LstmVariant::Standard);
    let mut params = ModelParams::zeros(&standard_arch);
    for (_, m) in params.named_tensors_mut() {
        *m = common::random_matrix(&mut rng, m.rows(), m.cols(), 0.5);
    }
    let ModelParams::Lstm(standard) = &params else {
        unreachable!()
    };
    let mut paper = standard.clone();
    paper.candidate = None;
    let paper_net = Network::new(
        ArchSpec::lstm(d, h, o, t, LstmVariant::PaperExact),
        ModelParams::Lstm(paper.clone()),
    )
    .unwrap();
    let standard_net = Network::new(standard_arch, params.clone()).unwrap();

    let x = common::random_matrix(&mut rng, n, d * t, 1.0);
    let gap = |a: &Matrix, b: &Matrix| {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max)
    };
    let zero_gap = gap(
        &paper_net.predict(&x).unwrap(),
        &standard_net.predict(&x).unwrap(),
    );
    let xs = split_sequence(&x, t).unwrap();
    let h0 = common::random_matrix(&mut rng, n, h, 0.5);
    let c0 = common::random_matrix(&mut rng, n, h, 0.5);
    let (yp, _) = lstm_forward_from(&paper, &xs, h0.clone(), c0.clone()).unwrap();
    let (ys, _) = lstm_forward_from(standard, &xs, h0, c0).unwrap();
    let state_gap = gap(&yp, &ys);
    ensure(
        zero_gap > 1e-6 && state_gap > 1e-6,
        format!("gaps {zero_gap:e}, {state_gap:e}"),
    )?;
    for (variant, seed) in [(LstmVariant::PaperExact, 31), (LstmVariant::Standard, 32)] {
        let r = common::gradient_suite(ModelKind::Lstm, variant, 20, seed);
        ensure(
            r.max_rel_err < 1e-4,
            format!("{variant:?} gradient error {:e}", r.max_rel_err),
        )?;
    }
    Ok(format!("max output gap {zero_gap:.3} (zero state), {state_gap:.3} (random state); both gradient-checked"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradient oracle", gradient_oracle),
        ("pipeline count fidelity", count_fidelity),
        ("scaler contract", scaler_contract),
        ("overfit capacity", overfit_capacity),
        ("forecast skill", forecast_skill),
        ("model selection", model_selection),
        ("metric oracles", metric_oracles),
        ("determinism", determinism),
        ("lstm variant distinction", lstm_variants),
    ];
    // Answer `--list` so test discovery sees one entry per criterion.
    if std::env::args().any(|a| a == "--list") {
        for (i, (name, _)) in criteria.iter().enumerate() {
            println!("criterion_{}_{}: test", i + 1, name.replace(' ', "_"));
        }
        return;
    }
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}  PASS  {name}: {detail} [{secs:.2}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}  FAIL  {name}: {why} [{secs:.2}s]", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
