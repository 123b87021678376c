//! The subcommands. Each returns after writing its files under the configured
//! output directory and printing a short report.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::Context;
use nlkg_core::classifier::{audit_pairs, classify, sign_independence_audit, ClassifyOptions, Verdict, VerdictSet};
use nlkg_core::data::InitialData;
use nlkg_core::evolution::{evolve, DiagnosticsSeries, RunRecord};
use nlkg_core::functionals::{ScalingPair, StateIntegrals};
use nlkg_core::grid::sample_with_velocity;
use nlkg_core::ground_state::{minimax_check, shoot, GroundStateResult};
use nlkg_core::nonlinearity::{assumption_audit, blowup_exponent_audit, log_samples};
use nlkg_core::{LabError, NonlinearityModel, RadialGrid, RadialState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

const GROUND_STATE_DIR: &str = "ground_state";
const PLOT_ROWS: usize = 2000;

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    // write-then-rename keeps a killed run from leaving a truncated file behind
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn ground_state_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir().join(GROUND_STATE_DIR)
}

/// Loads the stored ground state, if any, and checks it matches the model.
fn stored_ground_state(cfg: &ExperimentConfig, model: &NonlinearityModel) -> anyhow::Result<Option<GroundStateResult>> {
    let dir = ground_state_dir(cfg);
    if !dir.join("ground_state.json").exists() {
        return Ok(None);
    }
    let gs = GroundStateResult::load(&dir)?;
    if gs.model.kind != model.kind || gs.model.dim != model.dim || gs.c != model.mass_shift {
        return Err(LabError::Config(format!(
            "the ground state in {} was computed for a different model; run `groundstate` again",
            dir.display()
        ))
        .into());
    }
    Ok(Some(gs))
}

/// Everything a run needs besides the evolution settings.
pub struct Setup {
    pub model: NonlinearityModel,
    pub grid: Arc<RadialGrid>,
    pub ground_state: Option<GroundStateResult>,
    pub threshold: f64,
    pub pairs: Vec<ScalingPair>,
    pub opts: ClassifyOptions,
}

pub fn setup(cfg: &ExperimentConfig) -> anyhow::Result<Setup> {
    let (model, _) = cfg.build_model()?;
    let ground_state = stored_ground_state(cfg, &model)?;
    let threshold = match (cfg.classify.threshold, &ground_state) {
        (Some(m), _) => m,
        (None, Some(gs)) => gs.m,
        (None, None) => {
            return Err(LabError::Config(format!(
                "no threshold: set classify.threshold or run `groundstate` first (expected {})",
                ground_state_dir(cfg).display()
            ))
            .into())
        }
    };
    let grid = Arc::new(RadialGrid::new(cfg.dim(), cfg.grid.n, cfg.grid.r_max, cfg.grid.staggered)?);
    let pairs = audit_pairs(cfg.dim(), cfg.classify.extra_pairs, cfg.seed);
    let opts = ClassifyOptions {
        mass: cfg.classify.mass,
        sign_tol: cfg.classify.sign_tol,
        energy_tol: cfg.classify.energy_tol,
    };
    Ok(Setup {
        model,
        grid,
        ground_state,
        threshold,
        pairs,
        opts,
    })
}

fn build_state(cfg: &ExperimentConfig, s: &Setup) -> anyhow::Result<RadialState> {
    if matches!(cfg.data, InitialData::GroundState { .. }) && s.ground_state.is_none() {
        return Err(LabError::Config("ground-state data needs a stored ground state; run `groundstate` first".into()).into());
    }
    Ok(cfg.data.build(s.grid.clone(), s.ground_state.as_ref())?)
}

pub fn groundstate(cfg: &ExperimentConfig) -> anyhow::Result<GroundStateResult> {
    let (model, tm) = cfg.build_model()?;
    let spec = cfg.ground_state;
    let grid = Arc::new(RadialGrid::new(cfg.dim(), spec.n, spec.r_max, false)?);
    let start = Instant::now();
    let gs = shoot(&model, model.mass_shift, grid, spec.bracket)?;
    let dir = ground_state_dir(cfg);
    gs.save(&dir)?;
    if let Some(rep) = &tm {
        write_json(&dir.join("mass_shift.json"), rep)?;
        println!("c          = {:.10} (Trudinger-Moser ratio, spread {:.2e})", rep.value, rep.spread);
    }
    println!("m          = {:.10}", gs.m);
    println!("c          = {}", gs.c);
    println!("Q(0)       = {:.10}", gs.q.u[0]);
    println!("‖∇Q‖²/d    = {:.10}", gs.integrals.kinetic / cfg.dim() as f64);
    println!("residual   = {:.3e}", gs.residual_linf);
    println!("max |K|/‖Q‖² = {:.3e}", gs.worst_closure());
    for note in &gs.notes {
        println!("note: {note}");
    }
    println!("wrote {} ({:.2?})", dir.display(), start.elapsed());
    Ok(gs)
}

pub fn classify_cmd(cfg: &ExperimentConfig) -> anyhow::Result<Verdict> {
    let s = setup(cfg)?;
    let state = build_state(cfg, &s)?;
    let verdict = classify(&state, &s.model, s.threshold, &s.pairs, s.opts)?;
    println!("verdict        {}", verdict.set.as_str());
    println!("energy margin  {:+.6e} (m = {:.10}, mass {})", verdict.energy_margin, s.threshold, verdict.mass_used);
    for (pair, k) in &verdict.k_values {
        println!("  {pair:<48} {k:+.6e}");
    }
    let dir = cfg.output_dir();
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("classification.json"), &verdict)?;
    Ok(verdict)
}

fn write_run(dir: &Path, record: &RunRecord, series: &DiagnosticsSeries) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    series.write_csv(&dir.join("series.csv"))?;
    series.write_plot_csv(&dir.join("plot.csv"), PLOT_ROWS)?;
    write_json(&dir.join("record.json"), record)
}

fn run_one(cfg: &ExperimentConfig, s: &Setup, state: &RadialState, verdict: Verdict) -> anyhow::Result<(RunRecord, DiagnosticsSeries)> {
    let mut ecfg = cfg.evolve.clone();
    ecfg.threshold = Some(s.threshold);
    let (mut record, series) = evolve(state, &s.model, &ecfg, Some(verdict))?;
    record.config_hash = Some(cfg.hash());
    record.seed = Some(cfg.seed);
    Ok((record, series))
}

pub fn evolve_cmd(cfg: &ExperimentConfig) -> anyhow::Result<RunRecord> {
    let s = setup(cfg)?;
    let state = build_state(cfg, &s)?;
    let verdict = classify(&state, &s.model, s.threshold, &s.pairs, s.opts)?;
    println!("class      {} (E - m = {:+.6e})", verdict.set.as_str(), -verdict.energy_margin);
    let start = Instant::now();
    let (record, series) = run_one(cfg, &s, &state, verdict)?;
    let dir = cfg.output_dir().join("evolve");
    write_run(&dir, &record, &series)?;
    println!("verdict    {}", record.verdict.as_str());
    if let Some(det) = &record.detector {
        println!("detector   {det} at t = {:.6}", record.detection_time.unwrap_or(f64::NAN));
    }
    println!("steps      {} to t = {:.6}, energy drift {:.3e}", record.steps, record.final_time, record.energy_drift);
    if record.near_threshold {
        println!("note: |E - m| is within the near-threshold band; the verdict is not certified");
    }
    println!("wrote {} ({:.2?})", dir.display(), start.elapsed());
    Ok(record)
}

/// One row of the sweep summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub index: usize,
    pub parameter: f64,
    pub config_hash: String,
    pub energy: Option<f64>,
    pub k2: Option<f64>,
    pub set: Option<String>,
    pub verdict: Option<String>,
    pub detector: Option<String>,
    pub detection_time: Option<f64>,
    pub error: Option<String>,
}

impl SweepPoint {
    fn k2_sign(&self) -> &'static str {
        match self.k2 {
            Some(k) if k > 0.0 => "+",
            Some(k) if k < 0.0 => "-",
            Some(_) => "0",
            None => "",
        }
    }
}

fn sweep_point(cfg: &ExperimentConfig, s: &Setup, index: usize, parameter: f64, dir: &Path) -> SweepPoint {
    let mut point = SweepPoint {
        index,
        parameter,
        config_hash: String::new(),
        energy: None,
        k2: None,
        set: None,
        verdict: None,
        detector: None,
        detection_time: None,
        error: None,
    };
    let result = (|| -> anyhow::Result<()> {
        let pcfg = cfg.with_data_parameter(&cfg.sweep.as_ref().expect("sweep").parameter, parameter)?;
        point.config_hash = pcfg.hash();
        let state = build_state(&pcfg, s)?;
        let integrals = StateIntegrals::compute(&state, &s.model)?;
        point.energy = Some(integrals.energy(s.opts.mass));
        point.k2 = Some(integrals.k2());
        let verdict = classify(&state, &s.model, s.threshold, &s.pairs, s.opts)?;
        point.set = Some(verdict.set.as_str().to_string());
        if !matches!(verdict.set, VerdictSet::KPlus | VerdictSet::KMinus) {
            // the classifier gate: nothing is certified off K⁺ ∪ K⁻
            point.verdict = Some("not_run".into());
            fs::create_dir_all(dir)?;
            return write_json(&dir.join("classification.json"), &verdict);
        }
        let (record, series) = run_one(&pcfg, s, &state, verdict)?;
        point.verdict = Some(record.verdict.as_str().to_string());
        point.detector = record.detector.clone();
        point.detection_time = record.detection_time;
        write_run(dir, &record, &series)
    })();
    if let Err(e) = result {
        point.error = Some(format!("{e:#}"));
    }
    point
}

pub fn sweep_cmd(cfg: &ExperimentConfig) -> anyhow::Result<Vec<SweepPoint>> {
    let sweep = cfg
        .sweep
        .clone()
        .ok_or_else(|| LabError::Config("the configuration has no [sweep] table".into()))?;
    let s = setup(cfg)?;
    let root = cfg.output_dir().join("sweep").join(cfg.hash());
    fs::create_dir_all(&root)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(sweep.workers).build()?;
    let start = Instant::now();
    let mut points: Vec<SweepPoint> = pool.install(|| {
        sweep
            .values
            .par_iter()
            .enumerate()
            .map(|(index, &value)| {
                let dir = root.join(format!("point-{index:04}"));
                let done = dir.join("point.json");
                if let Some(prev) = fs::read_to_string(&done)
                    .ok()
                    .and_then(|t| serde_json::from_str::<SweepPoint>(&t).ok())
                    .filter(|p| p.parameter == value && p.error.is_none())
                {
                    return prev;
                }
                let point = sweep_point(cfg, &s, index, value, &dir);
                if fs::create_dir_all(&dir).is_ok() {
                    if let Err(e) = write_json(&done, &point) {
                        eprintln!("warning: could not record point {index}: {e:#}");
                    }
                }
                point
            })
            .collect()
    });
    points.sort_by(|a, b| a.parameter.total_cmp(&b.parameter).then(a.index.cmp(&b.index)));
    let summary = root.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary)?;
    w.write_record([
        &sweep.parameter as &str,
        "energy",
        "k2",
        "k2_sign",
        "set",
        "verdict",
        "detector",
        "detection_time",
        "error",
    ])?;
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.10e}"));
    for p in &points {
        w.write_record([
            format!("{}", p.parameter),
            opt(p.energy),
            opt(p.k2),
            p.k2_sign().to_string(),
            p.set.clone().unwrap_or_default(),
            p.verdict.clone().unwrap_or_default(),
            p.detector.clone().unwrap_or_default(),
            opt(p.detection_time),
            p.error.clone().unwrap_or_default(),
        ])?;
        println!(
            "{:>10} {:>16} K₂{} {:<20} {}",
            p.parameter,
            p.set.as_deref().unwrap_or("-"),
            p.k2_sign(),
            p.verdict.as_deref().unwrap_or("-"),
            p.error.as_deref().unwrap_or("")
        );
    }
    w.flush()?;
    println!("wrote {} ({:.2?})", summary.display(), start.elapsed());
    Ok(points)
}

#[derive(Debug, Clone, Serialize)]
struct AuditCheck {
    name: String,
    passed: bool,
    detail: String,
}

pub fn audit_cmd(cfg: &ExperimentConfig) -> anyhow::Result<bool> {
    let (model, _) = cfg.build_model()?;
    let mut checks = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        println!("[{}] {name}: {detail}", if passed { "PASS" } else { "FAIL" });
        checks.push(AuditCheck {
            name: name.into(),
            passed,
            detail,
        });
    };
    let hi = if model.is_exponential() { model.u_cap / 3.0 } else { 1e3 };
    let samples = log_samples(1e-4, hi, 400);
    let report = assumption_audit(&model, &samples);
    if report.applicable {
        for c in &report.conditions {
            push(&format!("assumption {}", c.name), c.passed, c.detail.clone());
        }
    }
    let eps = cfg.evolve.epsilon();
    push(
        "payne-sattinger exponent",
        blowup_exponent_audit(&model, eps, &samples),
        format!("(D - 4/(2-ε))f ≥ 0 and (D-2)²f ≥ 0 with ε = {eps}"),
    );
    let gs = stored_ground_state(cfg, &model)?;
    let threshold = cfg.classify.threshold.or(gs.as_ref().map(|g| g.m));
    if let Some(gs) = &gs {
        let worst = gs.worst_closure();
        push("ground-state closure", worst <= 1e-6, format!("max |K|/‖Q‖² = {worst:.3e}"));
        let rep = minimax_check(gs, &model, ScalingPair::amplitude(), 20, cfg.seed)?;
        push(
            "minimax",
            rep.holds(1e-8),
            format!("min J - m = {:+.3e} over {} samples", rep.min_margin, rep.values.len()),
        );
    }
    if let Some(m) = threshold {
        let grid = Arc::new(RadialGrid::new(cfg.dim(), cfg.grid.n, cfg.grid.r_max, cfg.grid.staggered)?);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut states = Vec::new();
        let mut tries = 0;
        while states.len() < 50 && tries < 5000 {
            tries += 1;
            let a: f64 = rng.gen_range(0.05..4.0);
            let w: f64 = rng.gen_range(0.2..3.0);
            let b: f64 = rng.gen_range(-1.0..1.0);
            let st = sample_with_velocity(grid.clone(), |r| a * (-(r / w).powi(2)).exp(), |r| b * (-(r / w).powi(2)).exp())?;
            match StateIntegrals::compute(&st, &model) {
                Ok(s) if s.energy(cfg.classify.mass) < m => states.push(st),
                _ => {}
            }
        }
        let opts = ClassifyOptions {
            mass: cfg.classify.mass,
            sign_tol: cfg.classify.sign_tol,
            energy_tol: cfg.classify.energy_tol,
        };
        let rep = sign_independence_audit(&states, &model, m, cfg.classify.extra_pairs, cfg.seed, opts)?;
        push(
            "sign independence",
            rep.disagreements.is_empty(),
            format!(
                "{} states: {} consistent, {} in the dead band, {} disagreements",
                states.len(),
                rep.consistent,
                rep.boundary.len(),
                rep.disagreements.len()
            ),
        );
    } else {
        println!("note: no threshold available; run `groundstate` to include the classifier audits");
    }
    let dir = cfg.output_dir();
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("audit.json"), &checks)?;
    Ok(checks.iter().all(|c| c.passed))
}
