use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use serde_json::json;
use sphereflow::eval::{
    density_heatmap, make_random_joint, render_svg, run_ablation, sample_dataset, simplex_coords, smiley_tv,
    AblationRow, AblationSettings, Arm, JointTable, DEFAULT_KL_SMOOTHING, MetricsRecord, SmileyMixture, ToyDistribution,
};
use sphereflow::rng::{stream, Purpose};
use sphereflow::sampler::{generate, SamplingEvaluator, Samples};
use sphereflow::trainer::{fit_from, Evaluator, MetricsRow, TrainState};
use sphereflow::{Checkpoint, Chart, Dataset};

use crate::config::{Kind, RunConfig};
use crate::files::{read_sequences, read_truth, truth_path, write_file, write_sequences, write_truth, SequenceFile};
use crate::CliError;

/// Fraction of the data held out for evaluation when no truth sidecar exists.
const HELDOUT_FRACTION: f64 = 0.1;

fn out_path(cfg: &RunConfig, given: Option<PathBuf>, default: &str) -> Result<PathBuf, CliError> {
    let path = given.unwrap_or_else(|| cfg.out_dir.join(default));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Usage(format!("cannot create directory {}: {e}", parent.display())))?;
    }
    Ok(path)
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

pub fn make_data(cfg: &RunConfig, out: Option<PathBuf>) -> Result<(), CliError> {
    let path = out_path(cfg, out, "data.csv")?;
    let dist = match cfg.kind {
        Kind::RandomJoint => ToyDistribution::RandomJoint(make_random_joint(cfg.classes, cfg.length, cfg.seed())?),
        Kind::Smiley => ToyDistribution::Smiley(SmileyMixture::default()),
    };
    let data = sample_dataset(&dist, cfg.n, cfg.seed())?;
    let header = format!(
        "{} kind={} classes={} length={} rows={} seed={}",
        cfg.header("make-data"),
        cfg.kind,
        cfg.classes,
        cfg.length,
        cfg.n,
        cfg.seed()
    );
    match &data {
        Dataset::Categorical { length, indices, .. } => write_sequences(&path, &header, *length, indices, "", 0, &[])?,
        Dataset::Continuous { coords, classes, .. } => write_sequences(&path, &header, 0, &[], "p", *classes, coords)?,
    }
    write_truth(&truth_path(&path), &cfg.header("make-data"), &dist)?;
    println!("wrote {} rows to {}", data.len(), path.display());
    Ok(())
}

fn load_dataset(path: &Path) -> Result<(Dataset, Kind), CliError> {
    let f = read_sequences(path)?;
    let kind: Kind = f
        .meta
        .get("kind")
        .ok_or_else(|| CliError::Usage(format!("{}: header lacks kind", path.display())))?
        .parse()
        .map_err(CliError::Usage)?;
    let data = match kind {
        Kind::RandomJoint => Dataset::categorical(f.length, f.meta_usize("classes", path)?, f.indices)?,
        Kind::Smiley => Dataset::continuous(1, f.coord_width, f.coords)?,
    };
    Ok((data, kind))
}

/// Splits off a held-out slice, returning `(train, heldout)`.
fn split_heldout(data: &Dataset, seed: u64) -> Result<(Dataset, Dataset), CliError> {
    let n = data.len();
    let held = ((n as f64 * HELDOUT_FRACTION).round() as usize).max(1);
    if held >= n {
        return Err(CliError::Usage("dataset too small to hold out an evaluation slice".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, Purpose::Heldout));
    let (h, t) = order.split_at(held);
    let pick = |rows: &[usize]| -> Result<Dataset, CliError> {
        Ok(match data {
            Dataset::Categorical { length, classes, indices } => Dataset::categorical(
                *length,
                *classes,
                rows.iter().flat_map(|&r| indices[r * length..(r + 1) * length].iter().copied()).collect(),
            )?,
            Dataset::Continuous { length, classes, coords } => {
                let w = length * classes;
                Dataset::continuous(*length, *classes, rows.iter().flat_map(|&r| coords[r * w..(r + 1) * w].iter().copied()).collect())?
            }
        })
    };
    Ok((pick(t)?, pick(h)?))
}

/// Empirical table of categorical data with the default additive count, so
/// every cell is positive.
fn empirical_table(data: &Dataset) -> Result<JointTable, CliError> {
    let Dataset::Categorical { length, classes, indices } = data else {
        return Err(CliError::Usage("empirical table needs categorical data".into()));
    };
    let cells = classes.pow(*length as u32);
    let mut probs = vec![DEFAULT_KL_SMOOTHING; cells];
    for seq in indices.chunks(*length) {
        probs[seq.iter().fold(0, |a, &x| a * classes + x as usize)] += 1.0;
    }
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(JointTable::new(*classes, *length, probs)?)
}

/// Simplex points of samples from the smiley target, for TV comparisons.
fn smiley_reference(m: &SmileyMixture, n: usize, seed: u64, purpose: Purpose) -> Vec<f64> {
    m.sample(n, &mut stream(seed, purpose))
}

type Score = Box<dyn Fn(&Samples) -> sphereflow::Result<f64> + Sync>;

fn scorer(cfg: &RunConfig, target: EvalTarget) -> Score {
    let smoothing = cfg.kl_smoothing;
    match target {
        EvalTarget::Table(t) => Box::new(move |s: &Samples| sphereflow::eval::estimate_kl(&t, &s.indices, smoothing)),
        EvalTarget::Points(p) => Box::new(move |s: &Samples| smiley_tv(&simplex_coords(s), &p)),
    }
}

enum EvalTarget {
    Table(JointTable),
    Points(Vec<f64>),
}

pub struct TrainArgs {
    pub data: Option<PathBuf>,
    pub resume: Option<PathBuf>,
}

pub fn train(cfg: &RunConfig, args: TrainArgs) -> Result<(), CliError> {
    let data_path = args.data.unwrap_or_else(|| cfg.out_dir.join("data.csv"));
    let (data, kind) = load_dataset(&data_path)?;
    let sidecar = truth_path(&data_path);
    let (train_data, target) = if sidecar.exists() {
        let target = match read_truth(&sidecar)? {
            ToyDistribution::RandomJoint(t) => EvalTarget::Table(t),
            ToyDistribution::Smiley(m) => EvalTarget::Points(smiley_reference(&m, cfg.eval_samples, cfg.seed(), Purpose::Floor)),
        };
        (data, target)
    } else {
        let (train, held) = split_heldout(&data, cfg.seed())?;
        let target = match kind {
            Kind::RandomJoint => EvalTarget::Table(empirical_table(&held)?),
            Kind::Smiley => match held {
                Dataset::Continuous { coords, .. } => EvalTarget::Points(coords),
                Dataset::Categorical { .. } => unreachable!("smiley data is continuous"),
            },
        };
        eprintln!("no truth sidecar; evaluating against {} held-out rows", data.len() - train.len());
        (train, target)
    };

    let state = match &args.resume {
        Some(p) => {
            let ckpt = Checkpoint::load(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            let mut s = TrainState::from_checkpoint(ckpt)?;
            s.set_steps(cfg.train.steps);
            s
        }
        None => TrainState::new(cfg.train.clone(), train_data.length(), train_data.dim())?,
    };

    let metrics_path = out_path(cfg, None, "metrics.csv")?;
    let appending = args.resume.is_some() && metrics_path.exists();
    let file = OpenOptions::new()
        .create(true)
        .append(appending)
        .write(true)
        .truncate(!appending)
        .open(&metrics_path)
        .map_err(|e| io_err(&metrics_path, e))?;
    let mut metrics = BufWriter::new(file);
    if !appending {
        writeln!(metrics, "# {}\n{}", cfg.header("train"), MetricsRow::CSV_HEADER).map_err(|e| io_err(&metrics_path, e))?;
    }

    let evaluator = SamplingEvaluator { samples: cfg.eval_samples, sampler: cfg.sampler.clone(), score: scorer(cfg, target) };
    let mut write_err = None;
    let mut observer = |row: &MetricsRow| {
        if let Err(e) = writeln!(metrics, "{}", row.to_csv()).and_then(|_| metrics.flush()) {
            write_err.get_or_insert(e);
        }
    };
    let result = fit_from(state, &train_data, Some(&evaluator as &dyn Evaluator), &mut observer);
    if let Some(e) = write_err {
        return Err(io_err(&metrics_path, e));
    }
    let out = result?;
    let header = cfg.header("train");
    let final_path = out_path(cfg, None, "final.ckpt")?;
    out.final_checkpoint.save(&final_path, &header).map_err(|e| CliError::Usage(format!("{}: {e}", final_path.display())))?;
    let best_path = out_path(cfg, None, "best.ckpt")?;
    out.best_checkpoint.save(&best_path, &header).map_err(|e| CliError::Usage(format!("{}: {e}", best_path.display())))?;
    let metric = if kind == Kind::Smiley { "tv" } else { "kl" };
    match out.final_checkpoint.eval_kl {
        Some(v) => println!("step {} final eval {metric}={v}", out.final_checkpoint.step),
        None => println!("step {} (no evaluation)", out.final_checkpoint.step),
    }
    Ok(())
}

pub struct SampleArgs {
    pub checkpoint: Option<PathBuf>,
    pub n: Option<usize>,
    pub keep_continuous: bool,
    pub classes: Option<usize>,
    pub length: Option<usize>,
    pub out: Option<PathBuf>,
}

pub fn sample(cfg: &RunConfig, args: SampleArgs) -> Result<(), CliError> {
    let ckpt_path = args.checkpoint.unwrap_or_else(|| cfg.out_dir.join("final.ckpt"));
    let ckpt = Checkpoint::load(&ckpt_path).map_err(|e| CliError::Usage(format!("{}: {e}", ckpt_path.display())))?;
    let spec = *ckpt.model.spec();
    if args.classes.is_some_and(|k| k != spec.dim + 1) || args.length.is_some_and(|k| k != spec.length) {
        return Err(CliError::Usage(format!(
            "checkpoint has K={} k={}, flags ask for K={} k={}",
            spec.dim + 1,
            spec.length,
            args.classes.map_or("-".into(), |v| v.to_string()),
            args.length.map_or("-".into(), |v| v.to_string())
        )));
    }
    let n = args.n.unwrap_or(cfg.eval_samples);
    let samples = generate(&ckpt.model, n, &cfg.sampler)?;
    let path = out_path(cfg, args.out, "samples.csv")?;
    let header = format!(
        "{} classes={} length={} rows={n} seed={} scheme={} sampler_steps={} schedule={} decode={} orthant_exits={}",
        cfg.header("sample"),
        spec.dim + 1,
        spec.length,
        cfg.sampler.seed,
        cfg.sampler.scheme,
        cfg.sampler.steps,
        cfg.sampler.schedule,
        cfg.sampler.decode,
        samples.orthant_exits
    );
    let coords: &[f64] = if args.keep_continuous { samples.points.as_slice().expect("standard layout") } else { &[] };
    let width = if args.keep_continuous { samples.points.ncols() } else { 0 };
    write_sequences(&path, &header, spec.length, &samples.indices, "s", width, coords)?;
    println!("wrote {n} samples to {}", path.display());
    Ok(())
}

pub struct EvalArgs {
    pub samples: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

fn smiley_points(f: &SequenceFile, path: &Path) -> Result<Vec<f64>, CliError> {
    if f.coord_width == 0 {
        return Err(CliError::Usage(format!(
            "{}: smiley evaluation needs continuous coordinates; sample with --keep-continuous",
            path.display()
        )));
    }
    if f.coord_width != 3 {
        return Err(CliError::Usage(format!("{}: expected 3 coordinates per row, found {}", path.display(), f.coord_width)));
    }
    // Sphere coordinates square to simplex points; dataset files already hold simplex points.
    let sphere = f.meta.get("command").is_some_and(|c| c == "sample");
    Ok(if sphere { f.coords.iter().map(|s| s * s).collect() } else { f.coords.clone() })
}

pub fn eval(cfg: &RunConfig, args: EvalArgs) -> Result<(), CliError> {
    let samples_path = args.samples.unwrap_or_else(|| cfg.out_dir.join("samples.csv"));
    let truth_file = args.truth.unwrap_or_else(|| truth_path(&cfg.out_dir.join("data.csv")));
    let f = read_sequences(&samples_path)?;
    let truth = read_truth(&truth_file)?;
    let hash = cfg.hash();
    let mut lines = vec![json!({ "header": cfg.header("eval"), "format_version": crate::config::FORMAT_VERSION, "config_hash": hash })];
    match &truth {
        ToyDistribution::RandomJoint(t) => {
            if f.length != t.length() {
                return Err(CliError::Usage(format!("samples have k={}, truth has k={}", f.length, t.length())));
            }
            if let Some(bad) = f.indices.iter().find(|&&x| x as usize >= t.classes()) {
                return Err(CliError::Usage(format!("sample category {bad} out of range for K={}", t.classes())));
            }
            let rec = MetricsRecord::evaluate(t, &f.indices, cfg.kl_smoothing, cfg.seed(), &hash)?;
            lines.push(json!({
                "kl": if rec.kl.is_finite() { json!(rec.kl) } else { json!(null) },
                "kl_infinite": rec.kl_is_infinite(),
                "floor_kl": rec.floor_kl,
                "sample_count": rec.sample_count,
                "seed": rec.seed,
                "config_hash": rec.config_hash,
                "frequencies": rec.frequencies,
            }));
        }
        ToyDistribution::Smiley(m) => {
            let points = smiley_points(&f, &samples_path)?;
            let n = points.len() / 3;
            let target = smiley_reference(m, n, cfg.seed(), Purpose::Floor);
            let floor = smiley_reference(m, n, cfg.seed(), Purpose::Heldout);
            let freqs = sphereflow::eval::class_frequencies(&argmax_rows(&points), 1, 3);
            lines.push(json!({
                "tv": smiley_tv(&points, &target)?,
                "floor_tv": smiley_tv(&floor, &target)?,
                "sample_count": n,
                "seed": cfg.seed(),
                "config_hash": hash,
                "frequencies": freqs,
            }));
            for (name, pts) in [("target", &target), ("generated", &points)] {
                let grid = density_heatmap(pts, cfg.heatmap_resolution, cfg.heatmap_bandwidth)?;
                let svg = format!("<!-- {} -->\n{}", cfg.header("eval"), render_svg(&grid, &format!("{name} density")));
                let path = out_path(cfg, None, &format!("{name}.svg"))?;
                write_file(&path, svg.as_bytes())?;
            }
        }
    }
    let mut text = String::new();
    for l in &lines {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    write_file(&out_path(cfg, None, "eval.jsonl")?, text.as_bytes())?;
    print!("{}", lines.iter().skip(1).map(|l| format!("{l}\n")).collect::<String>());
    Ok(())
}

fn argmax_rows(points: &[f64]) -> Vec<u32> {
    points
        .chunks(3)
        .map(|p| (0..3).max_by(|&a, &b| p[a].total_cmp(&p[b])).expect("three coordinates") as u32)
        .collect()
}

pub struct AblateArgs {
    pub data: Option<PathBuf>,
    pub charts: Vec<Chart>,
    pub ot: Vec<bool>,
    pub seeds: u64,
}

pub fn ablate(cfg: &RunConfig, args: AblateArgs) -> Result<(), CliError> {
    if args.seeds == 0 || args.charts.is_empty() || args.ot.is_empty() {
        return Err(CliError::Usage("ablation needs at least one chart, one OT setting and one seed".into()));
    }
    let data_path = args.data.unwrap_or_else(|| cfg.out_dir.join("data.csv"));
    let (data, _) = load_dataset(&data_path)?;
    let ToyDistribution::RandomJoint(truth) = read_truth(&truth_path(&data_path))? else {
        return Err(CliError::Usage("ablation needs a random_joint dataset with a truth sidecar".into()));
    };
    let arms: Vec<Arm> = args.charts.iter().flat_map(|&chart| args.ot.iter().map(move |&ot| Arm { chart, ot })).collect();
    let settings = AblationSettings {
        base: cfg.train.clone(),
        sampler: cfg.sampler.clone(),
        eval_samples: cfg.eval_samples,
        smoothing: cfg.kl_smoothing,
        arms,
        seeds: (0..args.seeds).map(|i| cfg.seed() + i).collect(),
    };

    let path = out_path(cfg, None, "ablation.csv")?;
    let fresh = !path.exists();
    let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| io_err(&path, e))?;
    if fresh {
        writeln!(file, "# {}\n{}", cfg.header("ablate"), AblationRow::CSV_HEADER).map_err(|e| io_err(&path, e))?;
    }
    let file = Mutex::new(file);
    let write_err = Mutex::new(None);
    let table = run_ablation(&truth, &data, &settings, &|row: &AblationRow| {
        let mut f = file.lock().unwrap_or_else(|p| p.into_inner());
        if let Err(e) = writeln!(f, "{}", row.to_csv()).and_then(|_| f.flush()) {
            write_err.lock().unwrap_or_else(|p| p.into_inner()).get_or_insert(e);
        }
        match &row.error {
            Some(e) => eprintln!("{} seed {}: failed: {e}", row.arm, row.seed),
            None => eprintln!("{} seed {}: kl={} floor={}", row.arm, row.seed, row.kl, row.floor_kl),
        }
    })?;
    if let Some(e) = write_err.into_inner().unwrap_or_else(|p| p.into_inner()) {
        return Err(io_err(&path, e));
    }
    for s in table.summaries() {
        println!(
            "{}: runs={} failed={} min_kl={} mean_kl={} se={}",
            s.arm, s.runs, s.failed, s.min_kl, s.mean_kl, s.std_error
        );
    }
    match table.winner() {
        Some(w) => println!("winner: {} mean_kl={}", w.arm, w.mean_kl),
        None => println!("winner: none (every run failed)"),
    }
    let failed: Vec<&AblationRow> = table.rows.iter().filter(|r| r.error.is_some()).collect();
    if let Some(first) = failed.first() {
        return Err(CliError::Numerical(format!(
            "{} of {} runs failed; first: {} seed {}: {}",
            failed.len(),
            table.rows.len(),
            first.arm,
            first.seed,
            first.error.as_deref().unwrap_or("")
        )));
    }
    Ok(())
}
