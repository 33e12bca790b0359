//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use popgrid::dataset::{split_dataset, DatasetManifest, Split};
use popgrid::estimator::{
    baseline_bandstat, baseline_mean, log_cosh_loss, loss_gradient, predict_table, train,
    ForwardMode, LogCosh, ModelConfig, Network, TrainConfig,
};
use popgrid::eval::{bias_fit, coe, mioa, r_squared, student_t_p, MetricsReport, RSquaredDefinition};
use popgrid::patch::{
    assemble_neighborhood, extract_patch, info_proportion, EdgePolicy, NeighborSpec, PatchTensor,
    StackPatches,
};
use popgrid::raster::{combine_ambient, BandStack, GeoGrid, GridHeader};
use popgrid::synth::{generate_scene, SceneSpec, CELL_SIZE_ARCSEC};
use popgrid::table::PredictionRow;
use popgrid::Xoshiro256StarStar;
use popgrid_cli::manifest::{hash_file, RunManifest, MANIFEST_NAME};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_vec(rng: &mut Xoshiro256StarStar, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.uniform(0.0, 6.0)).collect()
}

// Naive reference formulas, written out directly from their definitions.

fn naive_mean(v: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in v {
        s += x;
    }
    s / v.len() as f64
}

fn naive_r2(t: &[f64], p: &[f64]) -> f64 {
    let (mt, mp) = (naive_mean(t), naive_mean(p));
    let mut num = 0.0;
    let mut st = 0.0;
    let mut sp = 0.0;
    for i in 0..t.len() {
        num += (t[i] - mt) * (p[i] - mp);
        st += (t[i] - mt).powi(2);
        sp += (p[i] - mp).powi(2);
    }
    let r = num / (st.sqrt() * sp.sqrt());
    r * r
}

fn naive_coe(t: &[f64], p: &[f64]) -> f64 {
    let mt = naive_mean(t);
    let mut sse = 0.0;
    let mut sst = 0.0;
    for i in 0..t.len() {
        sse += (t[i] - p[i]).powi(2);
        sst += (t[i] - mt).powi(2);
    }
    1.0 - sse / sst
}

fn naive_mioa(t: &[f64], p: &[f64]) -> f64 {
    let mt = naive_mean(t);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..t.len() {
        num += (t[i] - p[i]).abs();
        den += (p[i] - mt).abs() + (t[i] - mt).abs();
    }
    1.0 - num / den
}

fn metric_oracle() -> Outcome {
    let mut rng = Xoshiro256StarStar::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let t = random_vec(&mut rng, 100);
        let p = random_vec(&mut rng, 100);
        let pairs = [
            (r_squared(&t, &p).map_err(|e| e.to_string())?, naive_r2(&t, &p)),
            (coe(&t, &p).map_err(|e| e.to_string())?, naive_coe(&t, &p)),
            (mioa(&t, &p).map_err(|e| e.to_string())?, naive_mioa(&t, &p)),
        ];
        for (got, want) in pairs {
            worst = worst.max((got - want).abs());
        }
    }
    ensure(worst <= 1e-10, || format!("max abs difference {worst:e}"))?;
    Ok(format!("max abs difference {worst:.1e} over 1000 vector pairs"))
}

fn metric_ordering() -> Outcome {
    let mut rng = Xoshiro256StarStar::seed_from_u64(202);
    let mut checked = 0usize;
    for i in 0..100_000 {
        let len = 3 + (i % 30);
        let t = random_vec(&mut rng, len);
        // Mix unrelated, correlated, biased and scaled predictions.
        let p: Vec<f64> = match i % 4 {
            0 => random_vec(&mut rng, len),
            1 => t.iter().map(|v| v + rng.uniform(-0.5, 0.5)).collect(),
            2 => t.iter().map(|v| v + 1.0 + rng.uniform(-0.2, 0.2)).collect(),
            _ => t.iter().map(|v| 0.3 * v + rng.uniform(-0.1, 0.1)).collect(),
        };
        let report = MetricsReport::compute(&t, &p, RSquaredDefinition::SquaredPearson)
            .map_err(|e| e.to_string())?;
        if let (Some(r2), Some(c)) = (report.r_squared, report.coe) {
            ensure(c <= r2 + 1e-12, || format!("vector {i}: CoE {c} > R² {r2}"))?;
            checked += 1;
        }
    }
    ensure(checked > 99_000, || format!("only {checked} vectors had both metrics"))?;
    Ok(format!("CoE <= R2 on {checked} vectors"))
}

fn loss_and_gradient() -> Outcome {
    let mut worst_loss: f64 = 0.0;
    let mut d: f64 = -15.0;
    while d <= 15.0 {
        let got = log_cosh_loss(&[d], &[0.0]).map_err(|e| e.to_string())?;
        worst_loss = worst_loss.max((got - d.cosh().log10()).abs());
        d += 0.01;
    }
    ensure(worst_loss <= 1e-10, || format!("loss differs by {worst_loss:e}"))?;

    let far = log_cosh_loss(&[50.0], &[0.0]).map_err(|e| e.to_string())?;
    let asym = (50.0 - std::f64::consts::LN_2) / std::f64::consts::LN_10;
    ensure((far - asym).abs() <= 1e-12, || {
        format!("asymptotic branch off by {:e}", (far - asym).abs())
    })?;

    let h = 1e-5;
    let mut worst_grad: f64 = 0.0;
    for k in 0..=400 {
        let d = -10.0 + 0.05 * k as f64;
        let g = loss_gradient(&[d], &[0.0]).map_err(|e| e.to_string())?[0];
        let up = log_cosh_loss(&[d + h], &[0.0]).unwrap();
        let down = log_cosh_loss(&[d - h], &[0.0]).unwrap();
        let fd = (up - down) / (2.0 * h);
        let scale = g.abs().max(fd.abs());
        let err = if scale < 1e-9 {
            (g - fd).abs()
        } else {
            (g - fd).abs() / scale
        };
        worst_grad = worst_grad.max(err);
    }
    ensure(worst_grad <= 1e-7, || format!("gradient relative error {worst_grad:e}"))?;
    Ok(format!(
        "loss {worst_loss:.1e}, asymptote {:.1e}, gradient {worst_grad:.1e}",
        (far - asym).abs()
    ))
}

fn model_gradient() -> Outcome {
    let mut rng = Xoshiro256StarStar::seed_from_u64(404);
    let cfg = ModelConfig {
        input_size: 8,
        conv_channels: vec![4],
        dropout: 0.5,
    };
    let mut net = Network::<f64>::new(cfg, &mut rng).map_err(|e| e.to_string())?;
    for slot in net.params().slots().to_vec() {
        if slot.name.ends_with(".bias") {
            for v in net.params_mut().get_mut(&slot.name) {
                *v = rng.uniform(-0.1, 0.1);
            }
        }
    }
    let batch: Vec<PatchTensor<f64>> = (0..3)
        .map(|i| {
            let v = (0..4 * 64).map(|_| rng.uniform(0.0, 1.0)).collect();
            PatchTensor::new(8, 8, v, (i, 0), 1).unwrap()
        })
        .collect();
    let truth: Vec<f64> = (0..3).map(|_| rng.uniform(0.0, 4.0)).collect();
    let loss = LogCosh::default();
    let eval = |net: &Network<f64>| {
        let pass = net.forward(&batch, ForwardMode::Inference).unwrap();
        loss.loss(&pass.outputs, &truth).unwrap()
    };
    let pass = net
        .forward(&batch, ForwardMode::TrainNoDropout)
        .map_err(|e| e.to_string())?;
    let analytic = net
        .backward(&batch, &pass, &truth, &loss)
        .map_err(|e| e.to_string())?;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..analytic.len() {
        let orig = net.params().values[i];
        net.params_mut().values[i] = orig + h;
        let up = eval(&net);
        net.params_mut().values[i] = orig - h;
        let down = eval(&net);
        net.params_mut().values[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(fd.abs());
        let err = if scale < 1e-7 {
            (analytic[i] - fd).abs()
        } else {
            (analytic[i] - fd).abs() / scale
        };
        worst = worst.max(err);
    }
    ensure(worst <= 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:.1e} over {} parameters", analytic.len()))
}

fn random_count_grid(rng: &mut Xoshiro256StarStar, rows: usize, cols: usize) -> GeoGrid<f64> {
    let header = GridHeader::new(rows, cols, 30.0).unwrap().with_nodata(-9999.0);
    let values = (0..rows * cols)
        .map(|_| match rng.bounded(10) {
            0 => -9999.0,
            1 | 2 => rng.uniform(0.0, 1.5).floor(),
            _ => rng.bounded(5000) as f64,
        })
        .collect();
    GeoGrid::new(header, values).unwrap()
}

fn labeled_stack(rows: usize, cols: usize, ppc: usize) -> BandStack {
    let header = GridHeader::new(rows * ppc, cols * ppc, 30.0 / ppc as f64).unwrap();
    let bands = std::array::from_fn(|b| {
        (0..rows * ppc * cols * ppc)
            .map(|i| {
                let (y, x) = (i / (cols * ppc), i % (cols * ppc));
                (100 * b + (y / ppc) * cols + x / ppc) as f32 + 1.0
            })
            .collect()
    });
    BandStack::new(header, bands).unwrap()
}

fn ambient_and_neighborhoods() -> Outcome {
    let mut rng = Xoshiro256StarStar::seed_from_u64(505);
    for k in 0..100 {
        let (rows, cols) = (1 + rng.bounded(12) as usize, 1 + rng.bounded(12) as usize);
        let day = random_count_grid(&mut rng, rows, cols);
        let night = random_count_grid(&mut rng, rows, cols);
        let got = combine_ambient(&day, &night).map_err(|e| e.to_string())?;
        for i in 0..rows * cols {
            let d = if day.values()[i] == -9999.0 { 0.0 } else { day.values()[i] };
            let n = if night.values()[i] == -9999.0 { 0.0 } else { night.values()[i] };
            let mean = (d + n) / 2.0;
            let want = if mean >= 1.0 { mean } else { 0.0 };
            ensure(got.values()[i] == want, || {
                format!("pair {k} cell {i}: {} vs {want}", got.values()[i])
            })?;
        }
    }

    let (rows, cols, ppc) = (5, 6, 4);
    let stack = labeled_stack(rows, cols, ppc);
    let one = NeighborSpec::new(1, EdgePolicy::ZeroPad).unwrap();
    for r in 0..rows {
        for c in 0..cols {
            let a = assemble_neighborhood::<f64>(&stack, (r, c), &one, 30.0).map_err(|e| e.to_string())?;
            let b = extract_patch::<f64>(&stack, (r, c), 30.0).map_err(|e| e.to_string())?;
            ensure(a.values() == b.values(), || format!("n=1 differs at ({r},{c})"))?;
        }
    }

    let three = NeighborSpec::new(3, EdgePolicy::ZeroPad).unwrap();
    let t = assemble_neighborhood::<f64>(&stack, (2, 3), &three, 30.0).map_err(|e| e.to_string())?;
    for b in 0..4 {
        for y in 0..3 * ppc {
            for x in 0..3 * ppc {
                let (br, bc) = (2 + y / ppc - 1, 3 + x / ppc - 1);
                let want = (100 * b + br * cols + bc) as f64 + 1.0;
                ensure(t.at(b, y, x) == want, || format!("block layout wrong at band {b} ({y},{x})"))?;
            }
        }
    }

    let pct = |n| 100.0 * info_proportion(n).unwrap();
    for (n, want) in [(1, 100.0), (3, 11.11), (11, 0.83)] {
        ensure((pct(n) - want).abs() <= 0.01, || format!("info proportion n={n}: {}%", pct(n)))?;
    }
    Ok(format!(
        "100 ambient pairs exact; info proportion {:.2}%, {:.2}%, {:.2}%",
        pct(1),
        pct(3),
        pct(11)
    ))
}

fn split_fidelity() -> Outcome {
    let cells: Vec<(usize, usize)> = (0..150).flat_map(|r| (0..190).map(move |c| (r, c))).collect();
    let splits = split_dataset(&cells, 42).map_err(|e| e.to_string())?;
    let count = |s| splits.iter().filter(|&&x| x == s).count();
    let counts = (count(Split::Train), count(Split::Valid), count(Split::Test));
    ensure(counts == (17_100, 5_700, 5_700), || format!("counts {counts:?}"))?;

    let mut rng = Xoshiro256StarStar::seed_from_u64(606);
    let grid = random_count_grid(&mut rng, 150, 190);
    let grid = combine_ambient(&grid, &grid).unwrap();
    let spec = NeighborSpec::new(1, EdgePolicy::ZeroPad).unwrap();
    let a = DatasetManifest::build(&grid, &spec, 42).map_err(|e| e.to_string())?;
    let b = DatasetManifest::build(&grid, &spec, 42).map_err(|e| e.to_string())?;
    ensure(a.samples.len() == 28_500, || format!("{} samples", a.samples.len()))?;
    ensure(a.to_json().unwrap() == b.to_json().unwrap(), || "manifests differ".into())?;
    Ok(format!("{counts:?}, manifests identical"))
}

struct Trained {
    rows: Vec<PredictionRow>,
    manifest: DatasetManifest,
    steps: usize,
    scene: popgrid::synth::Scene,
    baseline_r2: (Option<f64>, Option<f64>),
}

/// Trains the reference net on a 48×48 scene with nbr(1) at input 64 and
/// predicts every cell.
fn train_scene(confound_fraction: f64) -> Result<Trained, String> {
    let spec = SceneSpec {
        confound_fraction,
        confound_multiplier: 5.0,
        ..SceneSpec::default()
    };
    let scene = generate_scene(&spec).map_err(|e| e.to_string())?;
    let ambient = combine_ambient(&scene.day, &scene.night).map_err(|e| e.to_string())?;
    let nbr = NeighborSpec::new(1, EdgePolicy::ZeroPad).unwrap();
    let manifest = DatasetManifest::build(&ambient, &nbr, 7).map_err(|e| e.to_string())?;
    let provider =
        StackPatches::new(&scene.stack, nbr, CELL_SIZE_ARCSEC, 64).map_err(|e| e.to_string())?;
    let model = ModelConfig {
        input_size: 64,
        conv_channels: vec![8, 16],
        dropout: 0.5,
    };
    let net = Network::<f64>::new(model, &mut Xoshiro256StarStar::seed_from_u64(7))
        .map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        max_steps: 600,
        seed: 7,
        ..TrainConfig::default()
    };
    let out = train(net, &manifest, &provider, &cfg).map_err(|e| e.to_string())?;
    let rows = predict_table(&out.network, &manifest, &provider).map_err(|e| e.to_string())?;
    let test_r2 = |rows: &[PredictionRow]| {
        let (t, p): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter(|r| r.split == Split::Test)
            .map(|r| (r.target_lg, r.pred_lg))
            .unzip();
        r_squared(&t, &p).ok()
    };
    let mean = baseline_mean(&manifest).map_err(|e| e.to_string())?;
    let band = baseline_bandstat(&manifest, &provider).map_err(|e| e.to_string())?;
    Ok(Trained {
        baseline_r2: (test_r2(&mean), test_r2(&band.rows)),
        rows,
        manifest,
        steps: out.steps_run,
        scene,
    })
}

fn test_pairs(rows: &[PredictionRow]) -> (Vec<f64>, Vec<f64>) {
    rows.iter()
        .filter(|r| r.split == Split::Test)
        .map(|r| (r.target_lg, r.pred_lg))
        .unzip()
}

fn learnability() -> Outcome {
    let run = train_scene(0.0)?;
    let (t, p) = test_pairs(&run.rows);
    let r2 = r_squared(&t, &p).map_err(|e| e.to_string())?;
    // A constant predictor has no defined R²; it explains nothing.
    let mean_r2 = run.baseline_r2.0.unwrap_or(0.0);
    let band_r2 = run.baseline_r2.1.unwrap_or(0.0);
    let summary = format!(
        "test R2 {r2:.4} after {} steps (mean baseline {mean_r2:.4}, band-mean baseline {band_r2:.4})",
        run.steps
    );
    ensure(r2 >= 0.80 && r2 > mean_r2 && r2 > band_r2, || summary.clone())?;
    Ok(summary)
}

fn bias_direction() -> Outcome {
    let run = train_scene(0.15)?;
    let (t, p) = test_pairs(&run.rows);
    let bias = bias_fit(&t, &p).map_err(|e| e.to_string())?;
    let r = bias.pearson_r.unwrap_or(0.0);
    let pv = bias.p_value.unwrap_or(1.0);
    let truth = &run.scene.truth;
    let confounded: Vec<f64> = run
        .rows
        .iter()
        .filter(|x| truth.is_confounded(x.row, x.col))
        .map(|x| x.pred_lg - x.target_lg)
        .collect();
    let mean_resid = confounded.iter().sum::<f64>() / confounded.len().max(1) as f64;
    let summary = format!(
        "beta {:.3}, r {r:.3}, p {pv:.2e}, mean residual {mean_resid:.3} over {} confounded cells ({} samples)",
        bias.beta,
        confounded.len(),
        run.manifest.samples.len()
    );
    ensure(
        bias.beta < 0.0 && r < 0.0 && pv < 1e-3 && !confounded.is_empty() && mean_resid < 0.0,
        || summary.clone(),
    )?;
    Ok(summary)
}

fn popgrid(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_popgrid"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.code() == Some(0), || {
        format!(
            "popgrid {} exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

/// Hashes of every file under `dir` except run manifests.
fn tree_hashes(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != MANIFEST_NAME {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, hash_file(&p).unwrap());
            }
        }
    }
    out
}

fn sweep_harness() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let scene = tmp.path().join("scene");
    popgrid(&["synth", "--out", scene.to_str().unwrap()])?;
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        popgrid(&[
            "sweep",
            "--scene",
            scene.to_str().unwrap(),
            "--n",
            "1,3,5",
            "--max-steps",
            "100",
            "--lr",
            "1e-3",
            "--out",
            out.to_str().unwrap(),
        ])?;
        runs.push(out);
    }
    let a = &runs[0];
    let text = std::fs::read_to_string(a.join("comparison.json")).map_err(|e| e.to_string())?;
    let cmp: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let rows = cmp["rows"].as_array().ok_or("comparison has no rows")?;
    let ns: Vec<u64> = rows.iter().filter_map(|r| r["n"].as_u64()).collect();
    ensure(ns == [1, 3, 5], || format!("comparison rows for n = {ns:?}"))?;
    for key in ["r_squared", "coe", "mioa", "alpha", "beta", "pearson_r", "p_value"] {
        ensure(rows.iter().all(|r| r.get(key).is_some()), || format!("column {key} missing"))?;
    }
    for n in [1, 3, 5] {
        for f in ["scatter_pred.svg", "scatter_resid.svg", "residual_heatmap.svg"] {
            let p = a.join(format!("n{n}")).join(f);
            let svg = std::fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
            ensure(svg.starts_with("<svg") || svg.starts_with("<?xml"), || {
                format!("{} is not SVG", p.display())
            })?;
        }
    }
    let (ha, hb) = (tree_hashes(a), tree_hashes(&runs[1]));
    ensure(ha == hb, || "re-run produced different files".into())?;
    let ma = RunManifest::read(&a.join(MANIFEST_NAME)).map_err(|e| e.to_string())?;
    let mb = RunManifest::read(&runs[1].join(MANIFEST_NAME)).map_err(|e| e.to_string())?;
    ensure(ma.output_hashes() == mb.output_hashes(), || "manifest hashes differ".into())?;
    let r2: Vec<String> = rows
        .iter()
        .map(|r| match r["r_squared"].as_f64() {
            Some(v) => format!("n{}={v:.3}", r["n"]),
            None => format!("n{}=null", r["n"]),
        })
        .collect();
    Ok(format!("{} files reproduced; test R2 {}", ha.len(), r2.join(" ")))
}

fn statistics() -> Outcome {
    let p1 = student_t_p(12.706, 1.0);
    let p2 = student_t_p(3.291, 1e6);
    ensure((p1 - 0.05).abs() <= 2e-3, || format!("t=12.706 dof=1: p={p1}"))?;
    ensure((p2 - 0.001).abs() <= 5e-5, || format!("t=3.291 dof=1e6: p={p2}"))?;
    let truth: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
    let pred: Vec<f64> = truth.iter().map(|t| t - 0.2 * t).collect();
    let fit = bias_fit(&truth, &pred).map_err(|e| e.to_string())?;
    ensure((fit.beta + 0.2).abs() <= 1e-9, || format!("beta {}", fit.beta))?;
    Ok(format!("p {p1:.5}, {p2:.6}; beta {:.12}", fit.beta))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("metric oracle equivalence", metric_oracle),
        ("metric ordering CoE <= R2", metric_ordering),
        ("log-cosh loss and gradient", loss_and_gradient),
        ("full-model gradient check", model_gradient),
        ("ambient combine and neighborhoods", ambient_and_neighborhoods),
        ("split fidelity", split_fidelity),
        ("learnability on a clean scene", learnability),
        ("bias direction under vertical confound", bias_direction),
        ("sweep harness", sweep_harness),
        ("statistical machinery", statistics),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail} [{secs:.1}s]", i + 1)
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
