//! Acceptance suite: every criterion at its stated tolerance, one PASS/FAIL
//! line each. Pass name fragments as arguments to run a subset.

use std::panic::AssertUnwindSafe;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use lidargen::corruption::{add_noise, drop_points, CorruptionSpec};
use lidargen::harness::{eval_reconstruction, synthetic_grids, train_vae, EvalOptions, VaeConfig};
use lidargen::metrics::{chamfer, emd_exact, hungarian, CostMatrix};
use lidargen::models::{kl_divergence, ragan_losses, ArchSpec, Batch, Checkpoint, Gan, GanObjective, LatentCode, Model, Vae};
use lidargen::nn::{Grads, Sequential};
use lidargen::projection::{project, to_polar, unproject};
use lidargen::scan_io::{random_scene, synth_scan};
use lidargen::{seed, GridConfig, GridScan, NormStats, PointSet, Representation};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("emd-oracle", emd_oracle),
        ("hungarian-enumeration", hungarian_enumeration),
        ("chamfer-acceleration", chamfer_acceleration),
        ("projection-round-trip", projection_round_trip),
        ("projection-linearity", projection_linearity),
        ("gradient-checks", gradient_checks),
        ("corruption-statistics", corruption_statistics),
        ("desk-training", desk_training),
        ("end-to-end-determinism", end_to_end_determinism),
        ("ragan-anchor", ragan_anchor),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = std::panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| {
                let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
                outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
            });
        let secs = start.elapsed().as_secs_f64();
        println!("{} {name} ({secs:.1}s): {}", if result.pass { "PASS" } else { "FAIL" }, result.detail);
        if !result.pass {
            failed += 1;
        }
    }
    println!("\nacceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn random_points(rng: &mut impl Rng, n: usize, half: f64) -> PointSet {
    PointSet::new((0..n).map(|_| [0; 3].map(|_| rng.random_range(-half..half))).collect())
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Calls `f` on every permutation of `0..n` (Heap's algorithm).
fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize])) {
    let mut p: Vec<usize> = (0..n).collect();
    let mut c = vec![0; n];
    f(&p);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                p.swap(0, i);
            } else {
                p.swap(c[i], i);
            }
            f(&p);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

fn brute_force_assignment(n: usize, cost: impl Fn(usize, usize) -> f64) -> f64 {
    let mut best = f64::INFINITY;
    for_each_permutation(n, |p| {
        let c: f64 = p.iter().enumerate().map(|(i, &j)| cost(i, j)).sum();
        best = best.min(c);
    });
    best
}

fn emd_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = seed::rng(101);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(2..=7);
        let a = random_points(&mut rng, n, 10.0);
        let b = random_points(&mut rng, n, 10.0);
        let oracle = brute_force_assignment(n, |i, j| dist(a.points[i], b.points[j]));
        worst = worst.max((emd_exact(&a, &b).unwrap() - oracle).abs());
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-9 && elapsed < Duration::from_secs(10),
        format!("200 pairs, max |exact - enumeration| = {worst:.2e} (tol 1e-9), runtime {:.2}s (limit 10s)", elapsed.as_secs_f64()),
    )
}

fn hungarian_enumeration() -> Outcome {
    let mut rng = seed::rng(202);
    let mut mismatches = 0;
    let mut worst_real = 0.0f64;
    for trial in 0..200 {
        // Integer costs make sums exact; real costs are checked too.
        let rows: Vec<Vec<f64>> = if trial % 2 == 0 {
            (0..7).map(|_| (0..7).map(|_| rng.random_range(0..1000) as f64).collect()).collect()
        } else {
            (0..7).map(|_| (0..7).map(|_| rng.random_range(0.0..100.0)).collect()).collect()
        };
        let cost = CostMatrix::from_rows(&rows).unwrap();
        let solved = hungarian(&cost);
        let oracle = brute_force_assignment(7, |i, j| rows[i][j]);
        if trial % 2 == 0 {
            if solved.total_cost != oracle || !solved.is_bijection() {
                mismatches += 1;
            }
        } else {
            worst_real = worst_real.max((solved.total_cost - oracle).abs());
        }
    }
    outcome(
        mismatches == 0 && worst_real <= 1e-9,
        format!("100 integer matrices: {mismatches} inexact; 100 real matrices: max deviation {worst_real:.2e}"),
    )
}

fn naive_chamfer(a: &PointSet, b: &PointSet) -> f64 {
    let directed = |from: &PointSet, to: &PointSet| -> f64 {
        from.points
            .iter()
            .map(|p| to.points.iter().map(|q| dist(*p, *q).powi(2)).fold(f64::INFINITY, f64::min))
            .sum()
    };
    directed(a, b) + directed(b, a)
}

fn chamfer_acceleration() -> Outcome {
    let mut rng = seed::rng(303);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let a = random_points(&mut rng, 1000, 40.0);
        let b = random_points(&mut rng, 1000, 40.0);
        let fast = chamfer(&a, &b).unwrap();
        let slow = naive_chamfer(&a, &b);
        worst = worst.max((fast - slow).abs() / slow);
    }
    let a = random_points(&mut rng, 10_000, 40.0);
    let b = random_points(&mut rng, 10_000, 40.0);
    let t = Instant::now();
    let slow = naive_chamfer(&a, &b);
    let naive_time = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let fast = chamfer(&a, &b).unwrap();
    let tree_time = t.elapsed().as_secs_f64();
    let speedup = naive_time / tree_time;
    let agree = (fast - slow).abs() / slow;
    outcome(
        worst <= 1e-9 && agree <= 1e-9 && speedup >= 5.0,
        format!("100 pairs n=1000, max relative error {worst:.2e} (tol 1e-9); n=10000 speedup {speedup:.1}x (need 5x)"),
    )
}

/// A synthetic scan with every point rotated about the vertical axis by up
/// to ±0.49 of an azimuth bin, so points no longer sit at column centers.
fn synthetic_scan(i: usize) -> lidargen::RawScan {
    let mut scan = synth_scan(&random_scene(seed::derive(404, (i / 8) as u64), i % 8), 40, 256);
    let mut rng = seed::rng(seed::derive(405, i as u64));
    let bin = std::f64::consts::TAU / 256.0;
    for p in &mut scan.points {
        let (s, c) = (rng.random_range(-0.49..0.49) * bin).sin_cos();
        let (x, y) = (p.x as f64, p.y as f64);
        p.x = (c * x - s * y) as f32;
        p.y = (s * x + c * y) as f32;
    }
    scan
}

fn sorted(points: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])).then(a[2].total_cmp(&b[2])));
    p
}

fn projection_round_trip() -> Outcome {
    let cfg = GridConfig::default();
    let mut worst_cart = 0.0f64;
    let mut worst_polar_ratio = 0.0f64;
    let mut collisions = 0;
    for i in 0..100 {
        let scan = synthetic_scan(i);
        let original: Vec<[f64; 3]> = scan.points.iter().map(|p| [p.x as f64, p.y as f64, p.z as f64]).collect();
        let grid = project(&scan, &cfg).unwrap();
        if grid.occupied() != original.len() {
            collisions += 1;
            continue;
        }
        let cart = unproject(&grid, None).unwrap();
        for (p, q) in sorted(&original).iter().zip(sorted(&cart.points)) {
            worst_cart = worst_cart.max(dist(*p, q));
        }
        // Both unprojections list occupied cells in the same order, so the
        // Cartesian result pairs every Polar point with its source point.
        let polar = unproject(&to_polar(&grid).unwrap(), None).unwrap();
        for (p, q) in cart.points.iter().zip(&polar.points) {
            let d = p[0].hypot(p[1]);
            let bound = d * 2.0 * (std::f64::consts::PI / 256.0).sin();
            worst_polar_ratio = worst_polar_ratio.max(dist(*p, *q) / bound);
        }
    }
    outcome(
        collisions == 0 && worst_cart <= 1e-5 && worst_polar_ratio <= 1.0,
        format!(
            "100 scans, {collisions} with shared cells; Cartesian max error {worst_cart:.2e} m (tol 1e-5); Polar max error / azimuth bound = {worst_polar_ratio:.3}"
        ),
    )
}

fn projection_linearity() -> Outcome {
    let cfg = GridConfig::default();
    let scene = random_scene(505, 0);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut detail = Vec::new();
    for target in [10_000usize, 100_000, 1_000_000] {
        let scan = synth_scan(&scene, 64, target.div_ceil(64));
        let reps = (2_000_000 / target).clamp(3, 50);
        let mut best = f64::INFINITY;
        for _ in 0..reps {
            let t = Instant::now();
            std::hint::black_box(project(std::hint::black_box(&scan), &cfg).unwrap());
            best = best.min(t.elapsed().as_secs_f64());
        }
        xs.push((scan.len() as f64).ln());
        ys.push(best.ln());
        detail.push(format!("N={} {:.3}ms", scan.len(), best * 1e3));
    }
    let mx = xs.iter().sum::<f64>() / 3.0;
    let my = ys.iter().sum::<f64>() / 3.0;
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    outcome((0.8..=1.3).contains(&slope), format!("log-log slope {slope:.3} (need [0.8, 1.3]); {}", detail.join(", ")))
}

const FD_STEP: f64 = 1e-6;

fn random_normalized_grids(arch: &ArchSpec, n: usize, seed_value: u64) -> Vec<GridScan> {
    let mut rng = seed::rng(seed_value);
    (0..n)
        .map(|_| {
            let mut g = GridScan::empty(arch.representation, arch.height, arch.width);
            g.normalized = true;
            for cell in 0..g.cells() {
                if rng.random_bool(0.75) {
                    g.mask[cell] = true;
                    for v in g.cell_mut(cell) {
                        *v = rng.random_range(-0.9..0.9);
                    }
                }
            }
            g
        })
        .collect()
}

/// Largest relative error between `grads` and central differences of `loss`
/// over every parameter of the network selected by `pick`. Also returns the
/// number of parameters, how many had both gradients below 1e-7 (compared
/// absolutely instead) and how many of those were not analytically zero.
fn worst_gradient_error<M: Clone>(
    model: &M,
    pick: impl Fn(&mut M) -> &mut Sequential<f64>,
    grads: &Grads<f64>,
    loss: impl Fn(&M) -> f64,
) -> (f64, usize, usize, usize) {
    let mut probe = model.clone();
    let sizes: Vec<Vec<usize>> =
        pick(&mut probe).layers.iter().map(|l| l.params.iter().map(|t| t.len()).collect()).collect();
    let (mut worst, mut count, mut skipped, mut nonzero_tiny) = (0.0f64, 0, 0, 0);
    for (li, layer) in sizes.iter().enumerate() {
        for (pi, &len) in layer.iter().enumerate() {
            for e in 0..len {
                let orig = pick(&mut probe).layers[li].params[pi].data[e];
                pick(&mut probe).layers[li].params[pi].data[e] = orig + FD_STEP;
                let up = loss(&probe);
                pick(&mut probe).layers[li].params[pi].data[e] = orig - FD_STEP;
                let down = loss(&probe);
                pick(&mut probe).layers[li].params[pi].data[e] = orig;
                let numeric = (up - down) / (2.0 * FD_STEP);
                let analytic = grads.layers[li][pi].data[e];
                let scale = numeric.abs().max(analytic.abs());
                count += 1;
                // Gradients at round-off level carry no relative information.
                if scale < 1e-7 {
                    if analytic != 0.0 {
                        nonzero_tiny += 1;
                    }
                    skipped += 1;
                    continue;
                }
                worst = worst.max((numeric - analytic).abs() / scale);
            }
        }
    }
    (worst, count, skipped, nonzero_tiny)
}

fn gradient_checks() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    let mut record = |what: String, (err, n, tiny, nonzero): (f64, usize, usize, usize)| {
        pass &= err < 1e-3;
        lines.push(format!("{what} {err:.1e} over {n} params ({tiny} with |grad| < 1e-7, {nonzero} of them analytically nonzero)"));
    };
    for (rep, masked) in [(Representation::Polar, true), (Representation::Cartesian, false)] {
        let arch = ArchSpec::miniature(rep);
        let vae = Vae::<f64>::init(arch.clone(), 21).unwrap();
        let grids = random_normalized_grids(&arch, 3, 5);
        let batch = Batch::<f64>::from_grids(&grids.iter().collect::<Vec<_>>()).unwrap();
        let seeds = [4, 5, 6];
        let step = vae.elbo(&batch, &seeds, 1.0, masked, true).unwrap();
        let loss = |m: &Vae<f64>| m.elbo(&batch, &seeds, 1.0, masked, true).unwrap().parts.loss;
        record(format!("ELBO {} encoder", rep.name()), worst_gradient_error(&vae, |m| &mut m.encoder, &step.encoder_grads, loss));
        record(format!("ELBO {} decoder", rep.name()), worst_gradient_error(&vae, |m| &mut m.decoder, &step.decoder_grads, loss));
    }

    let arch = ArchSpec::miniature(Representation::Polar);
    let gan = Gan::<f64>::init(arch.clone(), 8).unwrap();
    let grids = random_normalized_grids(&arch, 4, 9);
    let real = Batch::<f64>::from_grids(&grids.iter().collect::<Vec<_>>()).unwrap().x;
    let z = gan.latents(4, 3);
    let d = gan.discriminator_step(&real, &z, GanObjective::Relativistic).unwrap();
    record(
        "RaGAN discriminator".into(),
        worst_gradient_error(&gan, |g| &mut g.discriminator, &d.grads, |g| {
            g.discriminator_step(&real, &z, GanObjective::Relativistic).unwrap().d_loss
        }),
    );
    let g = gan.generator_step(&real, &z, GanObjective::Relativistic).unwrap();
    record(
        "RaGAN generator".into(),
        worst_gradient_error(&gan, |g| &mut g.generator, &g.grads, |g| {
            g.generator_step(&real, &z, GanObjective::Relativistic).unwrap().g_loss
        }),
    );

    // KL closed form against a Monte Carlo estimate of E_q[log q(z) - log p(z)].
    let mut rng = seed::rng(606);
    let mut worst_kl = 0.0f64;
    for _ in 0..50 {
        let dim = 16;
        let code = LatentCode {
            mu: (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect(),
            log_var: (0..dim).map(|_| rng.random_range(-1.5..1.0)).collect(),
        };
        let samples = 100_000;
        let mut total = 0.0;
        for _ in 0..samples {
            let mut log_ratio = 0.0;
            for k in 0..dim {
                let e: f64 = StandardNormal.sample(&mut rng);
                let zk = code.mu[k] + (0.5 * code.log_var[k]).exp() * e;
                // log q - log p; the 2π terms cancel.
                log_ratio += -0.5 * code.log_var[k] - 0.5 * e * e + 0.5 * zk * zk;
            }
            total += log_ratio;
        }
        let mc = total / samples as f64;
        let exact = kl_divergence(&code);
        worst_kl = worst_kl.max((mc - exact).abs() / exact);
    }
    pass &= worst_kl <= 0.01;
    lines.push(format!("KL vs Monte Carlo worst relative error {:.3}% on 50 codes", worst_kl * 100.0));
    outcome(pass, format!("tolerance 1e-3: {}", lines.join("; ")))
}

fn corruption_statistics() -> Outcome {
    let mut rng = seed::rng(707);
    let mut grid = GridScan::empty(Representation::Cartesian, 40, 2500);
    for cell in 0..grid.cells() {
        grid.mask[cell] = true;
        for v in grid.cell_mut(cell) {
            *v = rng.random_range(-20.0..20.0);
        }
    }
    let stats = NormStats { mean: vec![1.0, -3.0, -1.0], std: vec![10.0, 8.0, 0.5], clip_range: 80.0 };
    let mut pass = true;
    let mut worst_noise = 0.0f64;
    for (i, sigma) in [0.1, 0.4, 0.8, 1.0].into_iter().enumerate() {
        let noisy = add_noise(&grid, &stats, sigma, 10 + i as u64).unwrap();
        for k in 0..3 {
            let r: Vec<f64> = (0..grid.cells())
                .map(|c| (noisy.cell(c)[k] as f64 - grid.cell(c)[k] as f64) / stats.std[k])
                .collect();
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            let std = (r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r.len() - 1) as f64).sqrt();
            worst_noise = worst_noise.max((std / sigma - 1.0).abs());
        }
    }
    pass &= worst_noise <= 0.02;
    let mut removal = Vec::new();
    for (i, p) in [0.1, 0.5, 0.9].into_iter().enumerate() {
        let n = grid.occupied() as f64;
        let removed = n - drop_points(&grid, p, 20 + i as u64).unwrap().occupied() as f64;
        let z = (removed - n * p) / (n * p * (1.0 - p)).sqrt();
        pass &= z.abs() <= 3.0;
        removal.push(format!("p={p}: {z:+.2} sd"));
    }
    outcome(
        pass,
        format!(
            "noise std worst deviation {:.2}% over 1e5 cells (tol 2%); removal counts {}",
            worst_noise * 100.0,
            removal.join(", ")
        ),
    )
}

fn desk_training() -> Outcome {
    let cfg = GridConfig::default();
    let train = synthetic_grids(512, 8, 1001, &cfg).unwrap();
    let val = synthetic_grids(16, 8, 1002, &cfg).unwrap();
    let test = synthetic_grids(32, 8, 1003, &cfg).unwrap();
    let config = VaeConfig {
        representation: Representation::Polar,
        latent_dim: 32,
        base_channels: 8,
        lr: 1e-3,
        batch_size: 16,
        beta: 5e-5,
        max_steps: 2000,
        val_every: 500,
        val_scans: 8,
        val_points: 256,
        seed: 7,
        ..Default::default()
    };
    let start = Instant::now();
    let run = train_vae(&config, &train, &val).unwrap();
    let train_time = start.elapsed();

    let random = Checkpoint::new(
        Model::Vae(Vae::init(config.arch(), 99).unwrap()),
        run.best.stats.clone(),
        run.best.cartesian_stats.clone(),
    );
    let sweep = [CorruptionSpec::noise(0.0, 5), CorruptionSpec::noise(0.8, 5)];
    let opts = EvalOptions::default();
    let trained = eval_reconstruction(&run.best, &test, &sweep, &opts, "trained").unwrap();
    let untrained = eval_reconstruction(&random, &test, &sweep[..1], &opts, "random").unwrap();
    let clean = trained.rows[0].emd_mean;
    let noisy = trained.rows[1].emd_mean;
    let baseline = untrained.rows[0].emd_mean;
    let ratio = clean / baseline;
    outcome(
        ratio < 0.25 && clean <= noisy && train_time < Duration::from_secs(30 * 60),
        format!(
            "Polar VAE, 512 scans, {} steps in {:.0}s: clean EMD/pt {clean:.3}, sigma=0.8 {noisy:.3}, untrained {baseline:.3}, ratio {ratio:.3} (need < 0.25, clean <= noisy)",
            config.max_steps,
            train_time.as_secs_f64()
        ),
    )
}

fn run_cli(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_lidargen"))
        .args(args)
        .current_dir(dir)
        .env_remove("LIDARGEN_DATA_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn end_to_end_determinism() -> Outcome {
    let pipeline = |dir: &Path| {
        run_cli(dir, &["synth", "--output", "data", "--sequences", "8", "--frames", "8", "--seed", "11"]);
        run_cli(dir, &["preprocess", "--input", "data", "--output", "prep", "--train-fraction", "0.75", "--val-fraction", "0.125", "--seed", "11"]);
        run_cli(dir, &[
            "train-vae", "--train", "prep/train.lgrd", "--val", "prep/val.lgrd", "--output", "vae", "--steps", "500",
            "--base-channels", "4", "--batch-size", "8", "--latent-dim", "16", "--lr", "1e-3", "--beta", "5e-5",
            "--val-every", "250", "--val-scans", "4", "--val-points", "256", "--seed", "11",
        ]);
        run_cli(dir, &[
            "eval-recon", "--checkpoint", "vae/checkpoint.lgck", "--label", "vae", "--test", "prep/test.lgrd",
            "--output", "eval", "--sweep", "both", "--n-max", "256", "--seed", "11",
        ]);
        ["vae/loss.csv", "vae/validation.csv", "eval/vae.csv"].map(|f| std::fs::read(dir.join(f)).expect("output exists"))
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = pipeline(a.path());
    let second = pipeline(b.path());
    let same = first == second;
    let rows = String::from_utf8_lossy(&first[2]).lines().count() - 1;
    outcome(
        same && rows == 14,
        format!("preprocess -> train-vae (500 steps) -> eval-recon twice: CSVs byte-identical = {same}, {rows} sweep rows"),
    )
}

fn ragan_anchor() -> Outcome {
    let mut worst = 0.0f64;
    for score in [-40.0, -3.5, 0.0, 0.25, 7.0, 40.0] {
        for n in [1, 4, 32] {
            let s = vec![score; n];
            let (d, g) = ragan_losses(&s, &s).unwrap();
            let anchor = 2.0 * std::f64::consts::LN_2;
            worst = worst.max((d - anchor).abs()).max((g - anchor).abs());
        }
    }
    outcome(worst <= 1e-9, format!("max |loss - 2 ln 2| = {worst:.2e} over 18 equal-score batches (tol 1e-9)"))
}
