//! Acceptance gate. Every criterion prints one `PASS` or `FAIL` line with the
//! measured value next to its pinned tolerance, then asserts.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use sphereflow::eval::{
    density_heatmap, estimate_kl, make_random_joint, render_svg, run_ablation, sample_dataset, simplex_coords,
    smiley_tv, AblationRow, AblationSettings, AblationTable, Arm, SmileyMixture, ToyDistribution,
    DEFAULT_KL_SMOOTHING,
};
use sphereflow::field::CfmBatch;
use sphereflow::geometry::{
    fisher_rao_inner, geodesic_interpolant, inverse_sphere_map, product_geodesic_interpolant,
    product_target_field, pullback, pushforward, sample_product_prior, sample_uniform_prior, simplex_exp,
    simplex_log, simplex_tangent_project, sphere_distance, sphere_exp, sphere_log, target_field,
};
use sphereflow::rng::{stream, Purpose, Rng};
use sphereflow::sampler::{generate, integrate_field};
use sphereflow::transport::{sinkhorn, Regularization};
use sphereflow::trainer::{fit, TrainState};
use sphereflow::{Chart, FieldModel, ModelSpec, SamplerConfig, SimplexPoint, SinkhornConfig, SpherePoint, TrainConfig};

/// Writes past the test harness's output capture, so every line shows up in a
/// plain `cargo test` run and not only for failing tests.
fn emit(line: &str) {
    use std::io::Write as _;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn report(name: &str, pass: bool, detail: String) {
    emit(&format!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" }));
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// A Dirichlet(1, ..., 1) point of the open simplex.
fn simplex_point(d: usize, rng: &mut Rng) -> SimplexPoint {
    let e: Vec<f64> = (0..=d).map(|_| rng.sample::<f64, _>(rand_distr::Exp1)).collect();
    let total: f64 = e.iter().sum();
    SimplexPoint::new(e.iter().map(|v| v / total).collect()).unwrap()
}

fn gaussian(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()
}

const GEOMETRY_ROUNDTRIP_TOL: f64 = 1e-7;
const GEOMETRY_ENDPOINT_TOL: f64 = 1e-9;
const GEOMETRY_SPEED_TOL: f64 = 1e-4;
const GEOMETRY_CHART_TOL: f64 = 1e-7;
const GEOMETRY_BUDGET: Duration = Duration::from_secs(10);

#[test]
fn geometry_suite() {
    let start = Instant::now();
    let (mut roundtrip, mut endpoint, mut speed, mut chart) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for d in [2usize, 5, 20] {
        let mut rng = stream(d as u64, Purpose::Prior);
        for _ in 0..1000 {
            let x = sample_uniform_prior(d, &mut rng).unwrap();
            let y = sample_uniform_prior(d, &mut rng).unwrap();

            // exp(log) and log(exp) on the sphere; a shortened log stays inside the orthant.
            let v = sphere_log(&x, &y).unwrap();
            roundtrip = roundtrip.max(max_abs_diff(sphere_exp(&x, &v).unwrap().coords(), y.coords()));
            let short = v.scaled(rng.random_range(0.0..1.0));
            let back = sphere_log(&x, &sphere_exp(&x, &short).unwrap()).unwrap();
            roundtrip = roundtrip.max(max_abs_diff(back.components(), short.components()));

            // The same on the simplex chart.
            let (p, q) = (inverse_sphere_map(&x), inverse_sphere_map(&y));
            let u = simplex_log(&p, &q).unwrap();
            roundtrip = roundtrip.max(max_abs_diff(simplex_exp(&p, &u).unwrap().coords(), q.coords()));

            // Geodesic endpoints.
            let g0 = geodesic_interpolant(&x, &y, 0.0).unwrap();
            let g1 = geodesic_interpolant(&x, &y, 1.0).unwrap();
            endpoint = endpoint.max(max_abs_diff(g0.coords(), x.coords())).max(max_abs_diff(g1.coords(), y.coords()));

            // Constant speed: central differences of the interpolant have norm d(x, y).
            let dist = sphere_distance(&x, &y);
            let h = 1e-5;
            for t in [0.1, 0.5, 0.9] {
                let a = geodesic_interpolant(&x, &y, t + h).unwrap();
                let b = geodesic_interpolant(&x, &y, t - h).unwrap();
                let fd: Vec<f64> = a.coords().iter().zip(b.coords()).map(|(a, b)| (a - b) / (2.0 * h)).collect();
                speed = speed.max((norm(&fd) - dist).abs() / dist.max(1e-3));
            }

            // Simplex-chart exp/log agree with the sphere chart through the sphere map.
            let via_sphere = inverse_sphere_map(&sphere_exp(&x, &pushforward(&p, &u).unwrap()).unwrap());
            chart = chart.max(max_abs_diff(simplex_exp(&p, &u).unwrap().coords(), via_sphere.coords()));
            let log_via_sphere = pullback(&x, &sphere_log(&x, &y).unwrap()).unwrap();
            chart = chart.max(max_abs_diff(u.components(), log_via_sphere.components()));
        }
    }
    let elapsed = start.elapsed();
    let pass = roundtrip <= GEOMETRY_ROUNDTRIP_TOL
        && endpoint <= GEOMETRY_ENDPOINT_TOL
        && speed <= GEOMETRY_SPEED_TOL
        && chart <= GEOMETRY_CHART_TOL
        && elapsed < GEOMETRY_BUDGET;
    report(
        "geometry suite",
        pass,
        format!(
            "roundtrip {roundtrip:.1e} (<= {GEOMETRY_ROUNDTRIP_TOL:.0e}), endpoints {endpoint:.1e} (<= {GEOMETRY_ENDPOINT_TOL:.0e}), \
             speed {speed:.1e} (<= {GEOMETRY_SPEED_TOL:.0e}), charts {chart:.1e} (<= {GEOMETRY_CHART_TOL:.0e}), \
             {:.2}s (< {}s)",
            elapsed.as_secs_f64(),
            GEOMETRY_BUDGET.as_secs()
        ),
    );
    assert!(pass);
}

const ISOMETRY_TOL: f64 = 1e-9;
const ISOMETRY_BUDGET: Duration = Duration::from_secs(5);

#[test]
fn isometry() {
    let start = Instant::now();
    let mut rng = stream(7, Purpose::Prior);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let d = [2, 5, 20][i % 3];
        let p = simplex_point(d, &mut rng);
        let u = simplex_tangent_project(&p, &gaussian(d + 1, &mut rng)).unwrap();
        let v = simplex_tangent_project(&p, &gaussian(d + 1, &mut rng)).unwrap();
        let fr = fisher_rao_inner(&p, &u, &v).unwrap();
        // Pushforwards computed element-wise here, independently of the library.
        let du: Vec<f64> = u.components().iter().zip(p.coords()).map(|(a, pi)| a / (2.0 * pi.sqrt())).collect();
        let dv: Vec<f64> = v.components().iter().zip(p.coords()).map(|(a, pi)| a / (2.0 * pi.sqrt())).collect();
        let euclid: f64 = 4.0 * du.iter().zip(&dv).map(|(a, b)| a * b).sum::<f64>();
        worst = worst.max((fr - euclid).abs() / fr.abs());
    }
    let elapsed = start.elapsed();
    let pass = worst <= ISOMETRY_TOL && elapsed < ISOMETRY_BUDGET;
    report(
        "isometry",
        pass,
        format!(
            "max relative error {worst:.1e} (<= {ISOMETRY_TOL:.0e}), {:.2}s (< {}s)",
            elapsed.as_secs_f64(),
            ISOMETRY_BUDGET.as_secs()
        ),
    );
    assert!(pass);
}

const TARGET_FIELD_TOL: f64 = 1e-4;

#[test]
fn target_field_matches_interpolant_derivative() {
    let mut rng = stream(8, Purpose::Prior);
    let mut worst = 0.0f64;
    let h = 1e-6;
    for i in 0..1000 {
        let d = [2, 5, 20][i % 3];
        let x0 = sample_uniform_prior(d, &mut rng).unwrap();
        let x1 = sample_uniform_prior(d, &mut rng).unwrap();
        let t = rng.random_range(0.05..0.9);
        let xt = geodesic_interpolant(&x0, &x1, t).unwrap();
        let u = target_field(&xt, &x1, t).unwrap();
        let a = geodesic_interpolant(&x0, &x1, t + h).unwrap();
        let b = geodesic_interpolant(&x0, &x1, t - h).unwrap();
        let fd: Vec<f64> = a.coords().iter().zip(b.coords()).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        worst = worst.max(max_abs_diff(u.components(), &fd) / norm(&fd));
    }
    let pass = worst <= TARGET_FIELD_TOL;
    report("target field", pass, format!("max relative error {worst:.1e} (<= {TARGET_FIELD_TOL:.0e})"));
    assert!(pass);
}

const SINKHORN_MARGINAL_TOL: f64 = 1e-6;
const SINKHORN_COST_RATIO: f64 = 1.01;

/// Cheapest assignment with mass `1/n` per pair, by trying every permutation.
fn brute_force_assignment(cost: &Array2<f64>) -> f64 {
    fn search(cost: &Array2<f64>, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        let n = cost.nrows();
        if row == n {
            *best = best.min(acc);
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                search(cost, row + 1, used, acc + cost[[row, j]], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    search(cost, 0, &mut vec![false; cost.nrows()], 0.0, &mut best);
    best / cost.nrows() as f64
}

#[test]
fn sinkhorn_small_instances() {
    let cfg = SinkhornConfig { epsilon: Regularization::Absolute(1e-3), max_iters: 100_000, tolerance: 1e-6 };
    let mut rng = stream(9, Purpose::Pairing);
    let (mut violation, mut ratio, mut unconverged) = (0.0f64, 0.0f64, 0);
    for n in 1..=5 {
        for _ in 0..20 {
            let cost = Array2::from_shape_fn((n, n), |_| rng.random::<f64>());
            let coupling = sinkhorn(cost.view(), &cfg).unwrap();
            if !coupling.converged() {
                unconverged += 1;
            }
            violation = violation.max(coupling.marginal_error());
            let opt = brute_force_assignment(&cost);
            ratio = ratio.max(coupling.cost_value() / opt);
        }
    }
    let pass = unconverged == 0 && violation <= SINKHORN_MARGINAL_TOL && ratio <= SINKHORN_COST_RATIO;
    report(
        "sinkhorn",
        pass,
        format!(
            "100 instances, {unconverged} unconverged, marginal violation {violation:.1e} (<= {SINKHORN_MARGINAL_TOL:.0e}), \
             cost / optimum {ratio:.5} (<= {SINKHORN_COST_RATIO})"
        ),
    );
    assert!(pass);
}

const GRADIENT_TOL: f64 = 1e-4;
const GRADIENT_PROBES: usize = 64;
const GRADIENT_BUDGET: Duration = Duration::from_secs(30);

#[test]
fn gradient_check() {
    let start = Instant::now();
    let spec = ModelSpec { hidden: 16, depth: 2, time_embed_dim: 8, ..ModelSpec::new(3, 3) };
    let mut rng = stream(10, Purpose::Init);
    let params: Vec<f64> = (0..spec.parameter_count()).map(|_| rng.random_range(-0.5..0.5)).collect();
    let mut model = FieldModel::from_params(spec, params).unwrap();

    let mut samples = Vec::new();
    for _ in 0..16 {
        let x0 = sample_product_prior(3, 3, &mut rng).unwrap();
        let x1 = sample_product_prior(3, 3, &mut rng).unwrap();
        let t = rng.random_range(0.0..0.95);
        let xt = product_geodesic_interpolant(&x0, &x1, t).unwrap();
        let u = product_target_field(&xt, &x1, t, 1e-3).unwrap();
        samples.push((t, xt, u));
    }
    let batch = CfmBatch::from_points(&samples).unwrap();
    let (_, grads) = model.backward(&batch).unwrap();

    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..GRADIENT_PROBES {
        let i = rng.random_range(0..spec.parameter_count());
        let orig = model.params()[i];
        model.params_mut()[i] = orig + h;
        let plus = model.cfm_loss(&batch).unwrap();
        model.params_mut()[i] = orig - h;
        let minus = model.cfm_loss(&batch).unwrap();
        model.params_mut()[i] = orig;
        let fd = (plus - minus) / (2.0 * h);
        let g = grads.values[i];
        worst = worst.max((g - fd).abs() / fd.abs().max(g.abs()).max(1e-8));
    }
    let elapsed = start.elapsed();
    let pass = worst <= GRADIENT_TOL && elapsed < GRADIENT_BUDGET;
    report(
        "gradient check",
        pass,
        format!(
            "{GRADIENT_PROBES} parameters, max relative error {worst:.1e} (<= {GRADIENT_TOL:.0e}), {:.2}s (< {}s)",
            elapsed.as_secs_f64(),
            GRADIENT_BUDGET.as_secs()
        ),
    );
    assert!(pass);
}

const SAMPLER_ENDPOINT_TOL: f64 = 1e-3;
const UNIFORM_SIGMAS: f64 = 3.0;

#[test]
fn sampler_consistency() {
    // The exact conditional field of fixed pairs, integrated from x0, lands on x1.
    let mut rng = stream(11, Purpose::Prior);
    let (rows, k, d) = (32, 2, 3);
    let w = d + 1;
    let flat = |rng: &mut Rng| -> Vec<f64> { (0..rows).flat_map(|_| sample_product_prior(k, d, rng).unwrap().flatten()).collect() };
    let start = Array2::from_shape_vec((rows, k * w), flat(&mut rng)).unwrap();
    let end = Array2::from_shape_vec((rows, k * w), flat(&mut rng)).unwrap();
    let field = |t: f64, x: ArrayView2<f64>| {
        let mut u = Array2::zeros(x.dim());
        for r in 0..x.nrows() {
            for pos in 0..k {
                let s = pos * w..(pos + 1) * w;
                let xt = SpherePoint::project(x.row(r).as_slice().unwrap()[s.clone()].to_vec())?;
                let x1 = SpherePoint::new(end.row(r).as_slice().unwrap()[s.clone()].to_vec())?;
                let v = target_field(&xt, &x1, t)?;
                u.row_mut(r).as_slice_mut().unwrap()[s].copy_from_slice(v.components());
            }
        }
        Ok(u)
    };
    let mut x = start.clone();
    integrate_field(&field, w, &mut x, &SamplerConfig { steps: 100, ..SamplerConfig::default() }).unwrap();
    let endpoint_err = max_abs_diff(x.as_slice().unwrap(), end.as_slice().unwrap());

    // An untrained model has a zero field, so decoding the prior must be uniform.
    let n = 100_000;
    let model = FieldModel::init(ModelSpec { hidden: 16, depth: 1, time_embed_dim: 8, ..ModelSpec::new(1, 2) }, 12).unwrap();
    let samples = generate(&model, n, &SamplerConfig { seed: 12, ..SamplerConfig::default() }).unwrap();
    let mut counts = [0usize; 3];
    for &c in &samples.indices {
        counts[c as usize] += 1;
    }
    let sigma = (n as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
    let worst_sigmas = counts.iter().map(|&c| (c as f64 - n as f64 / 3.0).abs() / sigma).fold(0.0, f64::max);

    let pass = endpoint_err <= SAMPLER_ENDPOINT_TOL && worst_sigmas <= UNIFORM_SIGMAS;
    report(
        "sampler consistency",
        pass,
        format!(
            "endpoint error {endpoint_err:.1e} at N=100 (<= {SAMPLER_ENDPOINT_TOL:.0e}), untrained class counts {counts:?} \
             deviate at most {worst_sigmas:.2} sigma (<= {UNIFORM_SIGMAS})"
        ),
    );
    assert!(pass);
}

const TOY_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const TOY_CLASSES: usize = 4;
const TOY_LENGTH: usize = 4;
const TOY_TRAIN_POINTS: usize = 100_000;
const TOY_STEPS: u64 = 20_000;
const TOY_EVAL_SAMPLES: usize = 512_000;
const TOY_FLOOR_FACTOR: f64 = 5.0;
const TOY_UNTRAINED_FACTOR: f64 = 0.1;
const TOY_BUDGET_4_CORES: Duration = Duration::from_secs(20 * 60);
const SPHERE_OT: Arm = Arm { chart: Chart::Sphere, ot: true };

struct ToySeed {
    seed: u64,
    table: AblationTable,
    untrained_kl: f64,
}

struct ToyRuns {
    seeds: Vec<ToySeed>,
    /// Wall time of the whole grid, all arms included.
    elapsed: Duration,
}

fn toy_settings(seed: u64) -> AblationSettings {
    AblationSettings {
        base: TrainConfig {
            steps: TOY_STEPS,
            batch_size: 64,
            hidden: 128,
            depth: 3,
            time_embed_dim: 16,
            eval_interval: 0,
            ..TrainConfig::default()
        },
        sampler: SamplerConfig { steps: 20, ..SamplerConfig::default() },
        eval_samples: TOY_EVAL_SAMPLES,
        smoothing: DEFAULT_KL_SMOOTHING,
        arms: Arm::grid(),
        seeds: vec![seed],
    }
}

/// Every arm of the chart × OT grid on each seed's own table and dataset.
/// The toy criterion reads the sphere-OT rows; the ablation reads all of them.
fn toy_runs() -> &'static ToyRuns {
    static RUNS: OnceLock<ToyRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let seeds = TOY_SEEDS
            .iter()
            .map(|&seed| {
                let truth = make_random_joint(TOY_CLASSES, TOY_LENGTH, seed).unwrap();
                let data = sample_dataset(&ToyDistribution::RandomJoint(truth.clone()), TOY_TRAIN_POINTS, seed).unwrap();
                let settings = toy_settings(seed);
                let table = run_ablation(&truth, &data, &settings, &|row| emit(&format!("ablation row {}", row.to_csv()))).unwrap();
                let init = TrainState::new(settings.run_config(SPHERE_OT, seed), TOY_LENGTH, TOY_CLASSES - 1).unwrap();
                let untrained = generate(init.model(), TOY_EVAL_SAMPLES, &settings.run_sampler(seed)).unwrap();
                let untrained_kl = estimate_kl(&truth, &untrained.indices, DEFAULT_KL_SMOOTHING).unwrap();
                ToySeed { seed, table, untrained_kl }
            })
            .collect();
        ToyRuns { seeds, elapsed: start.elapsed() }
    })
}

fn row(table: &AblationTable, arm: Arm) -> &AblationRow {
    table.rows.iter().find(|r| r.arm == arm).unwrap()
}

#[test]
fn toy_pipeline() {
    let runs = toy_runs();
    let mut all = true;
    for s in &runs.seeds {
        let r = row(&s.table, SPHERE_OT);
        assert!(r.error.is_none(), "seed {} failed: {:?}", s.seed, r.error);
        let floor_ok = r.kl <= TOY_FLOOR_FACTOR * r.floor_kl;
        let untrained_ok = r.kl <= TOY_UNTRAINED_FACTOR * s.untrained_kl;
        report(
            &format!("toy seed {} vs floor", s.seed),
            floor_ok,
            format!("kl {:.5} <= {TOY_FLOOR_FACTOR} x floor {:.5} (ratio {:.1})", r.kl, r.floor_kl, r.kl / r.floor_kl),
        );
        report(
            &format!("toy seed {} vs untrained", s.seed),
            untrained_ok,
            format!(
                "kl {:.5} <= {TOY_UNTRAINED_FACTOR} x untrained {:.5} (ratio {:.3})",
                r.kl,
                s.untrained_kl,
                r.kl / s.untrained_kl
            ),
        );
        all &= floor_ok && untrained_ok;
    }
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    emit(&format!(
        "INFO toy runtime: {:.0} s for {} seeds x {} arms on {cores} core(s); sphere-ot target {} s on 4 cores",
        runs.elapsed.as_secs_f64(),
        TOY_SEEDS.len(),
        Arm::grid().len(),
        TOY_BUDGET_4_CORES.as_secs()
    ));
    report("toy pipeline", all, format!("{} seeds, K={TOY_CLASSES}, k={TOY_LENGTH}", TOY_SEEDS.len()));
    assert!(all);
}

#[test]
fn ablation_trend() {
    let runs = toy_runs();
    let table = AblationTable { rows: runs.seeds.iter().flat_map(|s| s.table.rows.clone()).collect() };
    emit(table.to_csv().trim_end());
    let summaries = table.summaries();
    let summary = |arm: Arm| summaries.iter().find(|s| s.arm == arm).unwrap().clone();
    let mut enforced = true;
    for chart in [Chart::Sphere, Chart::Simplex] {
        let ot = summary(Arm { chart, ot: true });
        let plain = summary(Arm { chart, ot: false });
        assert_eq!(ot.failed + plain.failed, 0, "{chart} runs failed");
        let margin = plain.mean_kl - ot.mean_kl;
        let se = ot.std_error.hypot(plain.std_error);
        let pass = margin >= 0.0;
        let detail = format!(
            "mean kl ot {:.5} ± {:.5} <= no-ot {:.5} ± {:.5} (margin {:.5}, se {:.5})",
            ot.mean_kl, ot.std_error, plain.mean_kl, plain.std_error, margin, se
        );
        // A sphere-chart shortfall within one standard error is reported only.
        let tolerated = chart == Chart::Sphere && -margin <= se;
        report(&format!("ablation {chart}"), pass, if !pass && tolerated { format!("{detail}; within one se, not enforced") } else { detail });
        enforced &= pass || tolerated;
    }
    assert!(enforced);
}

const SMILEY_SEED: u64 = 7;
const SMILEY_TRAIN_POINTS: usize = 100_000;
const SMILEY_STEPS: u64 = 5_000;
const SMILEY_EVAL_SAMPLES: usize = 100_000;
const SMILEY_TV_FACTOR: f64 = 0.5;

#[test]
fn smiley_experiment() {
    let mixture = SmileyMixture::default();
    let data = sample_dataset(&ToyDistribution::Smiley(mixture.clone()), SMILEY_TRAIN_POINTS, SMILEY_SEED).unwrap();
    // The reference sample comes from a stream the dataset never touches.
    let target = mixture.sample(SMILEY_EVAL_SAMPLES, &mut stream(SMILEY_SEED, Purpose::Floor));
    let cfg = TrainConfig {
        steps: SMILEY_STEPS,
        batch_size: 64,
        hidden: 64,
        depth: 2,
        time_embed_dim: 16,
        eval_interval: 0,
        seed: SMILEY_SEED,
        ..TrainConfig::default()
    };
    let sampler = SamplerConfig { steps: 20, seed: SMILEY_SEED, ..SamplerConfig::default() };

    let init = TrainState::new(cfg.clone(), 1, 2).unwrap();
    let untrained = simplex_coords(&generate(init.model(), SMILEY_EVAL_SAMPLES, &sampler).unwrap());
    let out = fit(&cfg, &data, None).unwrap();
    let trained = simplex_coords(&generate(&out.final_checkpoint.model, SMILEY_EVAL_SAMPLES, &sampler).unwrap());
    let untrained_tv = smiley_tv(&untrained, &target).unwrap();
    let tv = smiley_tv(&trained, &target).unwrap();

    let dir = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("smiley");
    std::fs::create_dir_all(&dir).unwrap();
    for (name, points) in [("target", &target), ("generated", &trained), ("untrained", &untrained)] {
        let svg = render_svg(&density_heatmap(points, 32, 0.03).unwrap(), &format!("{name} density"));
        let path = dir.join(format!("{name}.svg"));
        std::fs::write(&path, svg).unwrap();
        emit(&format!("INFO smiley heatmap: {}", path.display()));
    }

    let pass = tv <= SMILEY_TV_FACTOR * untrained_tv;
    report(
        "smiley",
        pass,
        format!("tv {tv:.4} <= {SMILEY_TV_FACTOR} x untrained {untrained_tv:.4} (ratio {:.3})", tv / untrained_tv),
    );
    assert!(pass);
}
