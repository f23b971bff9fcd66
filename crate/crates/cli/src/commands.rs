use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use lidargen::corruption::CorruptionKind;
use lidargen::harness::{
    eval_reconstruction, nn_match, noise_sweep, prepare, random_search, removal_sweep, train_gan, train_vae,
    write_curve_csv, EvalOptions, EvalReport, GanConfig, SearchSpace, VaeConfig,
};
use lidargen::models::{Checkpoint, Model, CHECKPOINT_MAGIC};
use lidargen::projection::{compute_stats, project, read_grids, unproject, write_grids, LGRD_MAGIC};
use lidargen::scan_io::{build_manifest, read_velodyne_bin, write_synthetic_dataset, Split, SynthDatasetSpec};
use lidargen::{GridConfig, GridScan, PointSet};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::args::*;
use crate::svg::{line_chart, Series};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Preprocess(a) => preprocess(cli, a),
        Command::TrainVae(a) => train_vae_cmd(cli, a),
        Command::TrainGan(a) => train_gan_cmd(cli, a),
        Command::Search(a) => search(cli, a),
        Command::EvalRecon(a) => eval_recon(cli, a),
        Command::Sample(a) => sample(cli, a),
        Command::MatchNn(a) => match_nn(cli, a),
        Command::Inspect(a) => inspect(a),
    }
}

fn existing(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::Usage(format!("{} does not exist", path.display())))
    }
}

fn load_grids(path: &Path) -> Result<Vec<GridScan>> {
    Ok(read_grids(existing(path)?)?)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Ok(Checkpoint::load(existing(path)?)?)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(lidargen::Error::from)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Creates the output directory and echoes the resolved flags into it.
fn output_dir(cli: &Cli, dir: &Path, args: &impl Serialize) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let config = json!({
        "command": cli.command.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cli.seed,
        "threads": cli.threads,
        "args": args,
    });
    write_json(&dir.join("run_config.json"), &config)
}

fn write_xyz(path: &Path, points: &PointSet) -> Result<()> {
    std::fs::write(path, points.to_xyz())?;
    Ok(())
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    if a.sequences == 0 || a.frames == 0 || a.rows == 0 || a.cols == 0 {
        return Err(CliError::Usage("sequences, frames, rows and cols must be positive".into()));
    }
    output_dir(cli, &a.output, a)?;
    let spec = SynthDatasetSpec { sequences: a.sequences, frames: a.frames, rows: a.rows, cols: a.cols, seed: cli.seed };
    let n = write_synthetic_dataset(&a.output, &spec)?;
    println!("wrote {n} scans to {}", a.output.display());
    Ok(())
}

fn preprocess(cli: &Cli, a: &PreprocessArgs) -> Result<()> {
    existing(&a.input)?;
    let test_fraction = 1.0 - a.train_fraction - a.val_fraction;
    if !(a.train_fraction >= 0.0 && a.val_fraction >= 0.0 && test_fraction >= -1e-12) {
        return Err(CliError::Usage("split fractions must be non-negative and sum to at most 1".into()));
    }
    let cfg = GridConfig {
        height: a.height,
        width: a.width,
        elevation_span: (a.elevation_min.to_radians(), a.elevation_max.to_radians()),
        row_assignment: a.row_assignment.into(),
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    output_dir(cli, &a.output, a)?;

    let manifest =
        build_manifest(&a.input, (a.train_fraction, a.val_fraction, test_fraction.max(0.0)), a.subsample, cli.seed)?;
    let mut train = Vec::new();
    for split in Split::ALL {
        let paths: Vec<PathBuf> = manifest.split(split).map(|e| a.input.join(&e.path)).collect();
        let grids = paths
            .par_iter()
            .map(|p| project(&read_velodyne_bin(p)?, &cfg))
            .collect::<lidargen::Result<Vec<_>>>()?;
        let name = match split {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        };
        write_grids(a.output.join(format!("{name}.lgrd")), &grids)?;
        println!("{name}: {} grids of {}x{}", grids.len(), a.height, a.width);
        if split == Split::Train {
            train = grids;
        }
    }
    let mut manifest = manifest;
    if !train.is_empty() {
        let stats = compute_stats(&train, a.clip_range)?;
        std::fs::write(a.output.join("stats.json"), stats.to_json()? + "\n")?;
        manifest.normalization_stats = Some("stats.json".into());
    }
    std::fs::write(a.output.join("manifest.json"), manifest.to_json()? + "\n")?;
    Ok(())
}

fn vae_config(cli: &Cli, m: &ModelArgs, o: &VaeObjectiveArgs) -> VaeConfig {
    VaeConfig {
        representation: m.representation.into(),
        base_channels: m.base_channels,
        beta1: m.beta1,
        beta2: m.beta2,
        clip_range: m.clip_range,
        beta: o.beta,
        masked: !o.unmasked,
        val_scans: o.val_scans,
        val_points: o.val_points,
        seed: cli.seed,
        ..Default::default()
    }
}

fn train_vae_cmd(cli: &Cli, a: &TrainVaeArgs) -> Result<()> {
    let train = load_grids(&a.train)?;
    let val = match &a.val {
        Some(p) => load_grids(p)?,
        None => Vec::new(),
    };
    let config = VaeConfig {
        latent_dim: a.latent_dim,
        lr: a.lr,
        batch_size: a.batch_size,
        max_steps: a.steps,
        val_every: a.val_every,
        ..vae_config(cli, &a.model, &a.objective)
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    output_dir(cli, &a.output, a)?;
    let run = train_vae(&config, &train, &val)?;
    run.best.save(a.output.join("checkpoint.lgck"))?;
    run.last.save(a.output.join("last.lgck"))?;
    write_curve_csv(create(&a.output.join("loss.csv"))?, &run.curve)?;
    write_curve_csv(create(&a.output.join("validation.csv"))?, &run.validation)?;
    match run.best_val_emd() {
        Some(emd) => println!("best validation EMD per point {emd:.4} at step {}", run.best.step),
        None => println!("trained {} steps", run.last.step),
    }
    Ok(())
}

fn train_gan_cmd(cli: &Cli, a: &TrainGanArgs) -> Result<()> {
    let train = load_grids(&a.train)?;
    let config = GanConfig {
        representation: a.model.representation.into(),
        latent_dim: a.latent_dim,
        base_channels: a.model.base_channels,
        lr: a.lr,
        beta1: a.model.beta1,
        beta2: a.model.beta2,
        batch_size: a.batch_size,
        objective: a.objective.into(),
        freeze_generator: a.freeze_generator,
        max_steps: a.steps,
        seed: cli.seed,
        clip_range: a.model.clip_range,
    };
    config.arch().validate().map_err(|e| CliError::Usage(e.to_string()))?;
    output_dir(cli, &a.output, a)?;
    let run = train_gan(&config, &train)?;
    run.checkpoint.save(a.output.join("checkpoint.lgck"))?;
    write_curve_csv(create(&a.output.join("loss.csv"))?, &run.curve)?;
    if let Some(last) = run.curve.last() {
        println!("step {}: d_loss {:.4} g_loss {:.4} score gap {:.3}", last.step, last.d_loss, last.g_loss, last.score_gap);
    }
    Ok(())
}

fn search(cli: &Cli, a: &SearchArgs) -> Result<()> {
    let train = load_grids(&a.train)?;
    let val = load_grids(&a.val)?;
    let space = SearchSpace {
        lr: a.lr.clone(),
        latent_dim: a.latent_dim.clone(),
        batch_size: a.batch_size.clone(),
        trials: a.trials,
        seed: cli.seed,
    };
    space.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let base = VaeConfig { val_every: 0, ..vae_config(cli, &a.model, &a.objective) };
    output_dir(cli, &a.output, a)?;
    let report = random_search(&space, &base, a.budget_steps, &train, &val)?;
    write_json(&a.output.join("search.json"), &report)?;
    #[derive(Serialize)]
    struct Row {
        trial: usize,
        lr: f64,
        latent_dim: usize,
        batch_size: usize,
        val_emd: f64,
    }
    let rows: Vec<Row> = report
        .trials
        .iter()
        .map(|t| Row {
            trial: t.index,
            lr: t.config.lr,
            latent_dim: t.config.latent_dim,
            batch_size: t.config.batch_size,
            val_emd: t.val_emd,
        })
        .collect();
    write_curve_csv(create(&a.output.join("trials.csv"))?, &rows)?;
    let best = report.best_trial();
    println!("best trial {}: {:?} validation EMD per point {:.4}", best.index, best.config, best.val_emd);
    Ok(())
}

fn labels(a: &EvalReconArgs) -> Result<Vec<String>> {
    if !a.label.is_empty() {
        if a.label.len() != a.checkpoint.len() {
            return Err(CliError::Usage(format!(
                "{} labels given for {} checkpoints",
                a.label.len(),
                a.checkpoint.len()
            )));
        }
        let mut seen = a.label.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != a.label.len() {
            return Err(CliError::Usage("labels must be distinct".into()));
        }
        return Ok(a.label.clone());
    }
    let mut out: Vec<String> = Vec::new();
    for p in &a.checkpoint {
        let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
        let stem = if stem == "checkpoint" || stem == "last" {
            p.parent().and_then(|d| d.file_name()).map(|d| format!("{}-{stem}", d.to_string_lossy())).unwrap_or(stem)
        } else {
            stem
        };
        let mut label = stem.clone();
        let mut k = 2;
        while out.contains(&label) {
            label = format!("{stem}-{k}");
            k += 1;
        }
        out.push(label);
    }
    Ok(out)
}

fn eval_recon(cli: &Cli, a: &EvalReconArgs) -> Result<()> {
    let labels = labels(a)?;
    for p in &a.checkpoint {
        existing(p)?;
    }
    let mut test = load_grids(&a.test)?;
    if a.limit > 0 {
        test.truncate(a.limit);
    }
    if a.n_max == 0 || a.batch_size == 0 || !(a.rel_tol > 0.0) {
        return Err(CliError::Usage("n-max and batch-size must be positive, rel-tol must be > 0".into()));
    }
    let mut sweep = Vec::new();
    for kind in a.sweep.kinds() {
        sweep.extend(match kind {
            CorruptionKind::Noise => noise_sweep(cli.seed),
            CorruptionKind::Removal => removal_sweep(cli.seed),
        });
    }
    let opts =
        EvalOptions { n_max: a.n_max, exact_max: a.exact_max, rel_tol: a.rel_tol, batch_size: a.batch_size, seed: cli.seed };
    output_dir(cli, &a.output, a)?;

    let mut reports: Vec<EvalReport> = Vec::new();
    for (path, label) in a.checkpoint.iter().zip(&labels) {
        let ck = load_checkpoint(path)?;
        let report = eval_reconstruction(&ck, &test, &sweep, &opts, label)?;
        report.write_csv(create(&a.output.join(format!("{label}.csv")))?)?;
        std::fs::write(a.output.join(format!("{label}.json")), report.to_json()? + "\n")?;
        for row in &report.rows {
            println!(
                "{label} ({}): {} {:.2} -> EMD per point {:.4}, Chamfer per point {:.4}",
                report.representation.name(),
                row.corruption.kind.name(),
                row.corruption.level,
                row.emd_mean,
                row.chamfer_mean
            );
        }
        reports.push(report);
    }

    for &kind in a.sweep.kinds() {
        let x_label = match kind {
            CorruptionKind::Noise => "noise sigma (standardized units)",
            CorruptionKind::Removal => "fraction of points removed",
        };
        for (metric, title) in [("emd", "EMD per point"), ("chamfer", "Chamfer per point")] {
            let series: Vec<Series> = reports
                .iter()
                .map(|r| Series {
                    name: format!("{} ({})", r.model_id, r.representation.name()),
                    points: r
                        .rows_of(kind)
                        .map(|row| (row.corruption.level, if metric == "emd" { row.emd_mean } else { row.chamfer_mean }))
                        .collect(),
                })
                .collect();
            let svg = line_chart(&format!("{title} under {}", kind.name()), x_label, title, &series);
            std::fs::write(a.output.join(format!("{metric}_{}.svg", kind.name())), svg)?;
        }
    }
    Ok(())
}

fn sample(cli: &Cli, a: &SampleArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    output_dir(cli, &a.output, a)?;
    let grids = match &ck.model {
        Model::Gan(gan) => gan.sample(a.num, cli.seed)?,
        Model::Vae(vae) => vae.sample(a.num, cli.seed)?,
    };
    for (i, g) in grids.iter().enumerate() {
        write_xyz(&a.output.join(format!("sample_{i:04}.xyz")), &unproject(g, Some(&ck.stats))?)?;
    }
    println!("wrote {} samples to {}", grids.len(), a.output.display());
    Ok(())
}

fn match_nn(cli: &Cli, a: &MatchNnArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let test = load_grids(&a.test)?;
    if a.k == 0 {
        return Err(CliError::Usage("k must be positive".into()));
    }
    output_dir(cli, &a.output, a)?;
    let normalized = prepare(&test, ck.arch().representation, &ck.stats)?;
    let (samples, matches) = nn_match(&ck, a.num, cli.seed, &normalized, a.k)?;

    #[derive(Serialize)]
    struct Row {
        sample: usize,
        rank: usize,
        test_index: usize,
        distance: f64,
    }
    let mut rows = Vec::new();
    for m in &matches {
        write_xyz(&a.output.join(format!("sample_{:04}.xyz", m.sample)), &unproject(&samples[m.sample], Some(&ck.stats))?)?;
        if let Some(nearest) = m.neighbors.first() {
            write_xyz(&a.output.join(format!("match_{:04}.xyz", m.sample)), &unproject(&test[nearest.index], None)?)?;
        }
        for (rank, n) in m.neighbors.iter().enumerate() {
            rows.push(Row { sample: m.sample, rank, test_index: n.index, distance: n.distance });
        }
    }
    write_curve_csv(create(&a.output.join("matches.csv"))?, &rows)?;
    println!("matched {} samples against {} test scans", matches.len(), test.len());
    Ok(())
}

fn summary(values: impl Iterator<Item = f64>) -> serde_json::Value {
    let (mut n, mut sum, mut sq, mut lo, mut hi) = (0usize, 0.0, 0.0, f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        n += 1;
        sum += v;
        sq += v * v;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if n == 0 {
        return json!({ "count": 0 });
    }
    let mean = sum / n as f64;
    json!({ "count": n, "mean": mean, "std": (sq / n as f64 - mean * mean).max(0.0).sqrt(), "min": lo, "max": hi })
}

fn inspect(a: &InspectArgs) -> Result<()> {
    let path = existing(&a.path)?;
    let value = if path.is_dir() {
        let m = build_manifest(path, (1.0, 0.0, 0.0), 1, 0)?;
        let mut sequences: Vec<&str> = m.entries.iter().map(|e| e.path.rsplit_once('/').map_or("", |p| p.0)).collect();
        sequences.dedup();
        json!({ "kind": "dataset", "scans": m.entries.len(), "sequences": sequences.len() })
    } else {
        let mut magic = [0u8; 4];
        let head = std::fs::read(path)?;
        let n = head.len().min(4);
        magic[..n].copy_from_slice(&head[..n]);
        if &magic == LGRD_MAGIC {
            inspect_grids(&read_grids(path)?)
        } else if &magic == CHECKPOINT_MAGIC {
            let ck = Checkpoint::load(path)?;
            let params: usize = ck.model.networks().iter().map(|(_, n)| n.num_params()).sum();
            json!({
                "kind": ck.model.kind(),
                "arch": ck.arch(),
                "step": ck.step,
                "parameters": params,
                "stats": ck.stats,
                "cartesian_stats": ck.cartesian_stats,
                "config": ck.config,
            })
        } else {
            let scan = read_velodyne_bin(path)?;
            let range = |p: &lidargen::ScanPoint| ((p.x as f64).powi(2) + (p.y as f64).powi(2) + (p.z as f64).powi(2)).sqrt();
            json!({
                "kind": "scan",
                "points": scan.len(),
                "range": summary(scan.points.iter().map(range)),
                "z": summary(scan.points.iter().map(|p| p.z as f64)),
                "intensity": summary(scan.points.iter().map(|p| p.intensity as f64)),
            })
        }
    };
    let text = serde_json::to_string_pretty(&value).map_err(lidargen::Error::from)?;
    // A closed pipe (`inspect ... | head`) is not an error.
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn inspect_grids(grids: &[GridScan]) -> serde_json::Value {
    let Some(first) = grids.first() else {
        return json!({ "kind": "grids", "count": 0 });
    };
    let c = first.num_channels();
    let channels: Vec<serde_json::Value> = (0..c)
        .map(|k| {
            summary(grids.iter().flat_map(|g| {
                (0..g.cells()).filter(|&i| g.mask[i]).map(move |i| g.cell(i)[k] as f64)
            }))
        })
        .collect();
    json!({
        "kind": "grids",
        "count": grids.len(),
        "height": first.height,
        "width": first.width,
        "representation": first.representation.name(),
        "normalized": first.normalized,
        "occupancy": summary(grids.iter().map(|g| g.occupied() as f64 / g.cells() as f64)),
        "channels": channels,
    })
}
