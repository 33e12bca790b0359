use std::path::{Path, PathBuf};

use popgrid::dataset::{target_histogram, DatasetManifest, Split};
use popgrid::estimator::{
    baseline_bandstat, baseline_mean, predict_table, read_checkpoint, train, write_checkpoint,
    Network, TrainOutcome,
};
use popgrid::eval::{evaluate_all, write_scatter_csvs, Evaluation};
use popgrid::patch::{assemble_neighborhood, resize_bilinear, EdgePolicy, NeighborSpec, StackPatches};
use popgrid::raster::{
    combine_ambient, read_ascii_grid, read_bandstack, write_ascii_grid, write_bandstack, BandStack,
    GeoGrid, GridHeader,
};
use popgrid::synth::{generate_scene, scene_stats, NODATA};
use popgrid::table::{read_predictions, write_predictions, PredictionRow, HEADER};
use popgrid::Xoshiro256StarStar;
use serde_json::json;

use crate::config::{read_config, resolve, FileConfig, Overrides, Settings, SynthFile};
use crate::manifest::{RunManifest, MANIFEST_NAME};
use crate::render::{
    read_pairs, render_heatmap_svg, render_histogram_svg, render_scatter_svg, HeatValue, ScatterKind,
};
use crate::{stage, Cli, CliError, Command, CommonArgs, RenderArgs, RenderKind};

type Result<T> = std::result::Result<T, CliError>;

const ALL_SIZES: [usize; 6] = [1, 3, 5, 7, 9, 11];

fn overrides(c: &CommonArgs) -> Overrides {
    Overrides {
        seed: c.seed,
        n: c.n.clone(),
        edge_policy: c.edge_policy,
        input_size: c.input_size,
        loss_log_base: c.loss_log_base,
        out: c.out.clone(),
        max_steps: c.max_steps,
        batch_size: c.batch_size,
        lr: c.lr,
        cell_size: c.cell_size,
        r_squared: c.r_squared,
        ..Overrides::default()
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let file = match &cli.common.config {
        Some(p) => read_config(p)?,
        None => FileConfig::default(),
    };
    let input_size_given = cli.common.input_size.is_some() || file.input_size.is_some();
    let mut flags = overrides(&cli.common);
    let p = &mut flags.paths;
    match &cli.command {
        Command::Synth(a) => {
            flags.synth = SynthFile {
                rows: a.rows,
                cols: a.cols,
                pixels_per_cell: a.pixels_per_cell,
                correlation_length: a.correlation_length,
                pop_scale: a.pop_scale,
                confound_fraction: a.confound_fraction,
                confound_multiplier: a.confound_multiplier,
                pixel_noise_sd: a.pixel_noise_sd,
                day_night_jitter: a.day_night_jitter,
            }
        }
        Command::Ingest(a) => {
            p.imagery = a.imagery.clone();
            p.day = a.day.clone();
            p.night = a.night.clone();
        }
        Command::Patchify(a) => p.imagery = a.imagery.clone(),
        Command::Split(a) => p.ambient = a.ambient.clone(),
        Command::Train(a) => {
            p.imagery = a.imagery.clone();
            p.manifest = a.manifest.clone();
        }
        Command::Predict(a) => {
            p.imagery = a.imagery.clone();
            p.manifest = a.manifest.clone();
            p.checkpoint = a.checkpoint.clone();
        }
        Command::Evaluate(a) => p.predictions = a.predictions.clone(),
        Command::Sweep(a) => {
            let from_scene = |name: &str| a.scene.as_ref().map(|d| d.join(name));
            p.imagery = a.imagery.clone().or_else(|| from_scene("imagery.bgrd"));
            p.day = a.day.clone().or_else(|| from_scene("day.asc"));
            p.night = a.night.clone().or_else(|| from_scene("night.asc"));
        }
        Command::Render(_) => {}
    }
    let default_n: &[usize] = match cli.command {
        Command::Sweep(_) => &ALL_SIZES,
        _ => &[1],
    };
    let settings = resolve(file, flags, default_n)?;

    match cli.command {
        Command::Synth(_) => synth(&settings),
        Command::Ingest(_) => ingest(&settings),
        Command::Patchify(a) => patchify(&settings, &a.cells, input_size_given),
        Command::Split(_) => split(&settings),
        Command::Train(a) => train_stage(&settings, a.no_dropout),
        Command::Predict(_) => predict_stage(&settings),
        Command::Evaluate(a) => evaluate(&settings, &a.split),
        Command::Sweep(_) => sweep(&settings),
        Command::Render(a) => render(&settings, &a),
    }
}

fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir.to_path_buf())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text + "\n")
}

fn start_manifest(command: &str, s: &Settings) -> RunManifest {
    RunManifest::new(command, serde_json::to_value(s).expect("settings serialize"))
}

fn finish(
    mut m: RunManifest,
    name: &'static str,
    inputs: &[PathBuf],
    out: &Path,
    outputs: &[PathBuf],
) -> Result<()> {
    m.record(name, inputs, out, outputs).map_err(stage(name))?;
    m.write(&out.join(MANIFEST_NAME)).map_err(stage(name))
}

fn parse_split(s: &str) -> Result<Option<Split>> {
    if s == "all" {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| CliError::Usage(format!("unknown split {s:?} (train, valid, test, all)")))
}

/// Log10 display values of a count grid: nodata is `None`, counts below
/// one show as 0.
fn grid_log_values(grid: &GeoGrid<f64>) -> Vec<Option<f64>> {
    grid.values()
        .iter()
        .map(|&v| {
            if grid.is_nodata(v) {
                None
            } else if v >= 1.0 {
                Some(v.log10())
            } else {
                Some(0.0)
            }
        })
        .collect()
}

/// Lays a prediction table onto a `rows × cols` lattice.
fn table_values(rows: usize, cols: usize, table: &[PredictionRow], value: HeatValue) -> Vec<Option<f64>> {
    let mut out = vec![None; rows * cols];
    for r in table {
        if r.row < rows && r.col < cols {
            out[r.row * cols + r.col] = Some(match value {
                HeatValue::TruthLg => r.target_lg,
                HeatValue::PredLg => r.pred_lg,
                HeatValue::Residual => r.pred_lg - r.target_lg,
            });
        }
    }
    out
}

fn synth(s: &Settings) -> Result<()> {
    const S: &str = "synth";
    let out = ensure_dir(&s.out)?;
    let manifest = start_manifest(S, s);
    let scene = generate_scene(&s.scene).map_err(stage(S))?;
    for w in &scene.warnings {
        eprintln!("warning: {w}");
    }
    let files: Vec<PathBuf> = [
        "imagery.bgrd",
        "day.asc",
        "night.asc",
        "scene_truth.json",
        "scene_stats.json",
        "truth_heatmap.svg",
    ]
    .iter()
    .map(|f| out.join(f))
    .collect();
    write_bandstack(&scene.stack, &files[0]).map_err(stage(S))?;
    write_ascii_grid(&scene.day, &files[1]).map_err(stage(S))?;
    write_ascii_grid(&scene.night, &files[2]).map_err(stage(S))?;
    scene.truth.write(&files[3]).map_err(stage(S))?;
    let stats = scene_stats(&scene);
    write_json(&files[4], &stats).map_err(stage(S))?;
    let svg = render_heatmap_svg(
        s.scene.n_rows,
        s.scene.n_cols,
        &grid_log_values(&scene.ambient),
        HeatValue::TruthLg,
        "Ambient population (log10)",
    )
    .map_err(stage(S))?;
    std::fs::write(&files[5], svg).map_err(stage(S))?;
    finish(manifest, S, &[], &out, &files)?;
    println!(
        "synth: {}x{} cells, {:.1}% empty, {} confounded -> {}",
        s.scene.n_rows,
        s.scene.n_cols,
        100.0 * stats.zero_fraction,
        stats.confound_count,
        out.display()
    );
    Ok(())
}

fn load_ambient(s: &Settings, name: &'static str) -> Result<(BandStack, GeoGrid<f64>, Vec<PathBuf>)> {
    let imagery = s.require(&s.paths.imagery, "--imagery")?;
    let day = s.require(&s.paths.day, "--day")?;
    let night = s.require(&s.paths.night, "--night")?;
    let stack = read_bandstack(&imagery).map_err(stage(name))?;
    let d: GeoGrid<f64> = read_ascii_grid(&day).map_err(stage(name))?;
    let n: GeoGrid<f64> = read_ascii_grid(&night).map_err(stage(name))?;
    let ambient = combine_ambient(&d, &n).map_err(stage(name))?;
    stack.check_covers(ambient.header()).map_err(stage(name))?;
    Ok((stack, ambient, vec![imagery, day, night]))
}

fn ingest(s: &Settings) -> Result<()> {
    const S: &str = "ingest";
    let (_, ambient, inputs) = load_ambient(s, S)?;
    let out = ensure_dir(&s.out)?;
    let manifest = start_manifest(S, s);
    let files = vec![out.join("ambient.asc"), out.join("ambient_heatmap.svg")];
    write_ascii_grid(&ambient, &files[0]).map_err(stage(S))?;
    let h = ambient.header();
    let svg = render_heatmap_svg(
        h.n_rows,
        h.n_cols,
        &grid_log_values(&ambient),
        HeatValue::TruthLg,
        "Ambient population (log10)",
    )
    .map_err(stage(S))?;
    std::fs::write(&files[1], svg).map_err(stage(S))?;
    finish(manifest, S, &inputs, &out, &files)?;
    println!(
        "ingest: {}x{} cells, total ambient {} -> {}",
        h.n_rows,
        h.n_cols,
        ambient.total(),
        files[0].display()
    );
    Ok(())
}

fn parse_cell(s: &str) -> Result<(usize, usize)> {
    let bad = || CliError::Usage(format!("--cell expects row,col; got {s:?}"));
    let (r, c) = s.split_once(',').ok_or_else(bad)?;
    Ok((r.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?))
}

fn patchify(s: &Settings, cells: &[String], resize: bool) -> Result<()> {
    const S: &str = "patchify";
    let imagery = s.require(&s.paths.imagery, "--imagery")?;
    let spec = s.neighbor_spec()?;
    let stack = read_bandstack(&imagery).map_err(stage(S))?;
    let lattice = stack.cell_header(s.cell_size, NODATA).map_err(stage(S))?;
    let (rows, cols) = (lattice.n_rows, lattice.n_cols);
    let cells: Vec<(usize, usize)> = if cells.is_empty() {
        (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .filter(|&(r, c)| spec.edge_policy() != EdgePolicy::Skip || spec.fits(r, c, rows, cols))
            .collect()
    } else {
        cells.iter().map(|c| parse_cell(c)).collect::<Result<_>>()?
    };
    let out = ensure_dir(&s.out)?;
    let dir = ensure_dir(&out.join("patches"))?;
    let manifest = start_manifest(S, s);
    let half = spec.half() as f64;
    let deg = s.cell_size / 3600.0;
    let mut files = Vec::with_capacity(cells.len());
    for &(r, c) in &cells {
        let mut t = assemble_neighborhood::<f32>(&stack, (r, c), &spec, s.cell_size).map_err(stage(S))?;
        if resize && t.height() != s.input_size {
            t = resize_bilinear(&t, s.input_size).map_err(stage(S))?;
        }
        let side = t.height();
        let header = GridHeader::new(side, side, spec.n() as f64 * s.cell_size / side as f64)
            .map_err(stage(S))?
            .with_origin(
                lattice.origin_lat - (r as f64 - half) * deg,
                lattice.origin_lon + (c as f64 - half) * deg,
            )
            .with_nodata(NODATA);
        let bands = std::array::from_fn(|b| t.channel(b).to_vec());
        let patch = BandStack::new(header, bands).map_err(stage(S))?;
        let path = dir.join(format!("r{r}_c{c}.bgrd"));
        write_bandstack(&patch, &path).map_err(stage(S))?;
        files.push(path);
    }
    finish(manifest, S, &[imagery], &out, &files)?;
    println!("patchify: {} patches (n={}) -> {}", files.len(), spec.n(), dir.display());
    Ok(())
}

fn split(s: &Settings) -> Result<()> {
    const S: &str = "split";
    let ambient_path = s.require(&s.paths.ambient, "--ambient")?;
    let spec = s.neighbor_spec()?;
    let ambient: GeoGrid<f64> = read_ascii_grid(&ambient_path).map_err(stage(S))?;
    let dataset = DatasetManifest::build(&ambient, &spec, s.seed).map_err(stage(S))?;
    let out = ensure_dir(&s.out)?;
    let manifest = start_manifest(S, s);
    let files = vec![
        out.join("manifest.json"),
        out.join("target_histogram.json"),
        out.join("target_histogram.svg"),
    ];
    dataset.write(&files[0]).map_err(stage(S))?;
    let targets: Vec<f64> = dataset.samples.iter().map(|x| x.target_lg).collect();
    let hist = target_histogram(&targets, 0.25).map_err(stage(S))?;
    write_json(&files[1], &json!({ "bin_width": 0.25, "bins": hist })).map_err(stage(S))?;
    let svg = render_histogram_svg(&hist, 0.25, "Distribution of log10 targets", "log10 population")
        .map_err(stage(S))?;
    std::fs::write(&files[2], svg).map_err(stage(S))?;
    finish(manifest, S, &[ambient_path], &out, &files)?;
    let count = |x| dataset.split(x).count();
    println!(
        "split: {} train / {} valid / {} test -> {}",
        count(Split::Train),
        count(Split::Valid),
        count(Split::Test),
        files[0].display()
    );
    Ok(())
}

fn train_log(o: &TrainOutcome<f64>) -> serde_json::Value {
    json!({
        "steps_run": o.steps_run,
        "best_step": o.best_step,
        "stopped_early": o.stopped_early,
        "curve": o.curve.iter().map(|x| (x.step, x.loss)).collect::<Vec<_>>(),
        "validation": o.validation.iter().map(|x| (x.step, x.loss)).collect::<Vec<_>>(),
    })
}

/// Trains from `init_seed` and writes checkpoint and training log into
/// `dir`.
fn fit(
    s: &Settings,
    stack: &BandStack,
    dataset: &DatasetManifest,
    init_seed: u64,
    dropout: bool,
    dir: &Path,
    name: &'static str,
) -> Result<(Network<f64>, Vec<PathBuf>)> {
    let spec = dataset.neighbor_spec().map_err(stage(name))?;
    let provider = StackPatches::new(stack, spec, s.cell_size, s.input_size).map_err(stage(name))?;
    let net = Network::<f64>::new(s.model.clone(), &mut Xoshiro256StarStar::seed_from_u64(init_seed))
        .map_err(stage(name))?;
    let mut cfg = s.train.clone();
    cfg.seed = init_seed;
    cfg.dropout_enabled &= dropout;
    let outcome = train(net, dataset, &provider, &cfg).map_err(stage(name))?;
    let files = vec![dir.join("model.pgck"), dir.join("train_log.json")];
    write_checkpoint(&outcome.network, s.loss_log_base, &files[0]).map_err(stage(name))?;
    write_json(&files[1], &train_log(&outcome)).map_err(stage(name))?;
    println!(
        "{name}: n={} {} steps, best validation loss {:.5} at step {}",
        spec.n(),
        outcome.steps_run,
        outcome.best_validation().unwrap_or(f64::NAN),
        outcome.best_step
    );
    Ok((outcome.network, files))
}

fn train_stage(s: &Settings, no_dropout: bool) -> Result<()> {
    const S: &str = "train";
    let imagery = s.require(&s.paths.imagery, "--imagery")?;
    let manifest_path = s.require(&s.paths.manifest, "--manifest")?;
    let stack = read_bandstack(&imagery).map_err(stage(S))?;
    let dataset = DatasetManifest::read(&manifest_path).map_err(stage(S))?;
    let out = ensure_dir(&s.out)?;
    let manifest = start_manifest(S, s);
    let (_, mut files) = fit(s, &stack, &dataset, s.seed, !no_dropout, &out, S)?;

    let spec = dataset.neighbor_spec().map_err(stage(S))?;
    let provider = StackPatches::new(&stack, spec, s.cell_size, s.input_size).map_err(stage(S))?;
    let test = |rows: &[PredictionRow]| -> Result<serde_json::Value> {
        Ok(evaluate_all(rows, Some(Split::Test), s.r_squared)
            .map_err(stage(S))?
            .to_json())
    };
    let mean = baseline_mean(&dataset).map_err(stage(S))?;
    let band = baseline_bandstat(&dataset, &provider).map_err(stage(S))?;
    let report = json!({
        "mean": { "test": test(&mean)? },
        "bandstat": {
            "coefficients": band.coefficients,
            "ridge_used": band.ridge_used,
            "test": test(&band.rows)?,
        },
    });
    let path = out.join("baselines.json");
    write_json(&path, &report).map_err(stage(S))?;
    files.push(path);
    finish(manifest, S, &[imagery, manifest_path], &out, &files)
}

fn predict_stage(s: &Settings) -> Result<()> {
    const S: &str = "predict";
    let imagery = s.require(&s.paths.imagery, "--imagery")?;
    let manifest_path = s.require(&s.paths.manifest, "--manifest")?;
    let checkpoint = s.require(&s.paths.checkpoint, "--checkpoint")?;
    let stack = read_bandstack(&imagery).map_err(stage(S))?;
    let dataset = DatasetManifest::read(&manifest_path).map_err(stage(S))?;
    let (net, meta) = read_checkpoint::<f64>(&checkpoint).map_err(stage(S))?;
    let spec = dataset.neighbor_spec().map_err(stage(S))?;
    let provider =
        StackPatches::new(&stack, spec, s.cell_size, meta.model.input_size).map_err(stage(S))?;
    let rows = predict_table(&net, &dataset, &provider).map_err(stage(S))?;
    let out = ensure_dir(&s.out)?;
    let manifest = start_manifest(S, s);
    let path = out.join("predictions.csv");
    write_predictions(&rows, &path).map_err(stage(S))?;
    finish(manifest, S, &[imagery, manifest_path, checkpoint], &out, std::slice::from_ref(&path))?;
    println!("predict: {} cells -> {}", rows.len(), path.display());
    Ok(())
}

/// Writes `metrics.json` and both scatter CSVs for `ev` into `dir`.
fn write_evaluation(ev: &Evaluation, dir: &Path, name: &'static str) -> Result<Vec<PathBuf>> {
    let files = vec![
        dir.join("metrics.json"),
        dir.join("scatter_pred.csv"),
        dir.join("scatter_resid.csv"),
    ];
    write_json(&files[0], &ev.to_json()).map_err(stage(name))?;
    write_scatter_csvs(ev, &files[1], &files[2]).map_err(stage(name))?;
    Ok(files)
}

fn summary(ev: &Evaluation) -> String {
    let o = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    let b = ev.bias.as_ref();
    format!(
        "m={} R2={} CoE={} MIoA={:.4} beta={} r={} p={}",
        ev.metrics.m,
        o(ev.metrics.r_squared),
        o(ev.metrics.coe),
        ev.metrics.mioa,
        o(b.map(|b| b.beta)),
        o(b.and_then(|b| b.pearson_r)),
        b.and_then(|b| b.p_value).map_or("n/a".into(), |p| format!("{p:.3e}"))
    )
}

fn evaluate(s: &Settings, split_arg: &str) -> Result<()> {
    const S: &str = "evaluate";
    let path = s.require(&s.paths.predictions, "--predictions")?;
    let split = parse_split(split_arg)?;
    let rows = read_predictions(&path).map_err(stage(S))?;
    let ev = evaluate_all(&rows, split, s.r_squared).map_err(stage(S))?;
    let out = ensure_dir(&s.out)?;
    let manifest = start_manifest(S, s);
    let files = write_evaluation(&ev, &out, S)?;
    finish(manifest, S, &[path], &out, &files)?;
    println!("evaluate ({split_arg}): {}", summary(&ev));
    Ok(())
}

fn sweep(s: &Settings) -> Result<()> {
    const S: &str = "sweep";
    let specs: Vec<NeighborSpec> = s.neighbor_specs()?;
    let (stack, ambient, inputs) = load_ambient(s, S)?;
    let out = ensure_dir(&s.out)?;
    let mut manifest = start_manifest(S, s);
    let (rows, cols) = (ambient.n_rows(), ambient.n_cols());

    let mut table = Vec::with_capacity(specs.len());
    for spec in specs {
        let n = spec.n();
        let dir = ensure_dir(&out.join(format!("n{n}")))?;
        let dataset = DatasetManifest::build(&ambient, &spec, s.seed).map_err(stage(S))?;
        let mut files = vec![dir.join("manifest.json")];
        dataset.write(&files[0]).map_err(stage(S))?;

        let (net, fitted) = fit(s, &stack, &dataset, s.seed ^ n as u64, true, &dir, S)?;
        files.extend(fitted);
        let provider = StackPatches::new(&stack, spec, s.cell_size, s.input_size).map_err(stage(S))?;
        let preds = predict_table(&net, &dataset, &provider).map_err(stage(S))?;
        let pred_path = dir.join("predictions.csv");
        write_predictions(&preds, &pred_path).map_err(stage(S))?;
        files.push(pred_path);

        let ev = evaluate_all(&preds, Some(Split::Test), s.r_squared).map_err(stage(S))?;
        files.extend(write_evaluation(&ev, &dir, S)?);
        let pairs: Vec<(f64, f64)> = ev.truth.iter().copied().zip(ev.pred.iter().copied()).collect();
        let resid: Vec<(f64, f64)> = pairs.iter().map(|&(t, p)| (t, p - t)).collect();
        for (name, svg) in [
            ("scatter_pred.svg", render_scatter_svg(&pairs, ScatterKind::PredVsTruth)),
            ("scatter_resid.svg", render_scatter_svg(&resid, ScatterKind::ResidualVsTruth)),
            (
                "residual_heatmap.svg",
                render_heatmap_svg(
                    rows,
                    cols,
                    &table_values(rows, cols, &preds, HeatValue::Residual),
                    HeatValue::Residual,
                    &format!("Residual, n={n} (estimate - truth, log10)"),
                ),
            ),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, svg.map_err(stage(S))?).map_err(stage(S))?;
            files.push(path);
        }
        manifest
            .record(&format!("n{n}"), &[], &out, &files)
            .map_err(stage(S))?;
        println!("sweep: n={n} test {}", summary(&ev));

        let b = ev.bias.as_ref();
        table.push(json!({
            "n": n,
            "r_squared": ev.metrics.r_squared,
            "coe": ev.metrics.coe,
            "mioa": ev.metrics.mioa,
            "alpha": b.map(|b| b.alpha),
            "beta": b.map(|b| b.beta),
            "pearson_r": b.and_then(|b| b.pearson_r),
            "p_value": b.and_then(|b| b.p_value),
        }));
    }

    let files = vec![out.join("comparison.json"), out.join("truth_heatmap.svg")];
    let comparison = json!({
        "split": "test",
        "r_squared_definition": s.r_squared,
        "columns": ["n", "r_squared", "coe", "mioa", "alpha", "beta", "pearson_r", "p_value"],
        "rows": table,
    });
    write_json(&files[0], &comparison).map_err(stage(S))?;
    let svg = render_heatmap_svg(
        rows,
        cols,
        &grid_log_values(&ambient),
        HeatValue::TruthLg,
        "Ambient population (log10)",
    )
    .map_err(stage(S))?;
    std::fs::write(&files[1], svg).map_err(stage(S))?;
    finish(manifest, S, &inputs, &out, &files)?;
    println!("sweep: comparison -> {}", files[0].display());
    Ok(())
}

fn is_prediction_table(path: &Path) -> Result<bool> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("--input {}: {e}", path.display())))?;
    let first = text.lines().next().unwrap_or("");
    Ok(first.trim_end() == HEADER.join(","))
}

fn render(s: &Settings, a: &RenderArgs) -> Result<()> {
    const S: &str = "render";
    let input = s.require(&Some(a.input.clone()), "--input")?;
    let split = a.split.as_deref().map(parse_split).transpose()?.flatten();
    let svg = match a.kind {
        RenderKind::PredVsTruth | RenderKind::ResidualVsTruth => {
            let kind = if a.kind == RenderKind::PredVsTruth {
                ScatterKind::PredVsTruth
            } else {
                ScatterKind::ResidualVsTruth
            };
            let pairs = if is_prediction_table(&input)? {
                read_predictions(&input)
                    .map_err(stage(S))?
                    .iter()
                    .filter(|r| split.is_none_or(|x| r.split == x))
                    .map(|r| match kind {
                        ScatterKind::PredVsTruth => (r.target_lg, r.pred_lg),
                        ScatterKind::ResidualVsTruth => (r.target_lg, r.pred_lg - r.target_lg),
                    })
                    .collect()
            } else {
                let (found, pairs) = read_pairs(&input).map_err(stage(S))?;
                if found != kind {
                    return Err(CliError::Usage(format!(
                        "{} holds {:?} pairs, not {kind:?}",
                        input.display(),
                        found.header()
                    )));
                }
                pairs
            };
            render_scatter_svg(&pairs, kind).map_err(stage(S))?
        }
        RenderKind::Heatmap => {
            if is_prediction_table(&input)? {
                let table: Vec<PredictionRow> = read_predictions(&input)
                    .map_err(stage(S))?
                    .into_iter()
                    .filter(|r| split.is_none_or(|x| r.split == x))
                    .collect();
                let rows = table.iter().map(|r| r.row + 1).max().unwrap_or(0);
                let cols = table.iter().map(|r| r.col + 1).max().unwrap_or(0);
                let title = format!("{:?}", a.value);
                render_heatmap_svg(rows, cols, &table_values(rows, cols, &table, a.value), a.value, &title)
                    .map_err(stage(S))?
            } else {
                if a.value != HeatValue::TruthLg {
                    return Err(CliError::Usage(
                        "a count grid only has truth_lg values".to_string(),
                    ));
                }
                let grid: GeoGrid<f64> = read_ascii_grid(&input).map_err(stage(S))?;
                render_heatmap_svg(
                    grid.n_rows(),
                    grid.n_cols(),
                    &grid_log_values(&grid),
                    HeatValue::TruthLg,
                    "Population (log10)",
                )
                .map_err(stage(S))?
            }
        }
    };
    let target = if s.out.extension().is_some_and(|e| e == "svg") {
        s.out.clone()
    } else {
        ensure_dir(&s.out)?.join("render.svg")
    };
    if let Some(parent) = target.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    std::fs::write(&target, svg).map_err(stage(S))?;
    let mut manifest = start_manifest(S, s);
    let dir = target.parent().map(Path::to_path_buf).unwrap_or_default();
    manifest
        .record(S, &[input], &dir, std::slice::from_ref(&target))
        .map_err(stage(S))?;
    manifest
        .write(&target.with_extension("manifest.json"))
        .map_err(stage(S))?;
    println!("render: {}", target.display());
    Ok(())
}
