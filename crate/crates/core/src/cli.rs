//! Command-line front end: argument parsing, command dispatch, artifacts
//! and run manifests.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::bvp::{
    continue_branch, linspace, measure_break, refine_fold, roots_at, shoot, start_grid, sweep, BifurcationDiagram,
    Branch, BreakReport, ContinuationParams, FoldPoint, SweepSpec, Tag, Window, DEDUP_TOL, NEWTON_MAX_ITER, NEWTON_TOL,
};
use crate::catastrophe::{
    d4_level_set, swallowtail_points, traced_swallowtails, D4Grid, D4Kind, D4Sample, SwallowtailPoint,
};
use crate::error::{Error, Result};
use crate::export::{fmt_f64, json_document, write_all, Exportable, Format, Plot, Series, Table};
use crate::georattle::{conjugate_locus, CorankTwoPoint, RayGrid, DET_TOL};
use crate::integrate::{Discretized, FlowSpec, Method, PhaseMap};
use crate::jets::Scalar;
use crate::linalg::mat_vec;
use crate::scenario::{scenario_bvp, Command, RunConfig};
use crate::singular::{
    cusp_ridges, level_bifurcation_set, locate_umbilic, ridge_degree, umbilic_seed, AClass, ClassHint, GridBox,
    ShootingFamily, CORANK_TOL, UMBILIC_TOL,
};
use crate::systems::{catalog_build, cyclic_transform_matrix, hypersurface_catalog, CatalogEntry, ExplicitSymplecticMap, HamiltonianSystem, SeparatedBvp};

/// Environment variable holding the worker count for parallel sections.
pub const WORKERS_ENV: &str = "HAMSHOOT_WORKERS";

/// Either a discretised catalog flow or an explicit map.
#[derive(Clone, Debug)]
pub enum AnyMap {
    Flow(Discretized<HamiltonianSystem>),
    Explicit(ExplicitSymplecticMap),
}

impl PhaseMap for AnyMap {
    fn half_dim(&self) -> usize {
        match self {
            AnyMap::Flow(m) => m.half_dim(),
            AnyMap::Explicit(m) => PhaseMap::half_dim(m),
        }
    }

    fn apply<S: Scalar>(&self, z: &[S], mu: &[S]) -> Result<Vec<S>> {
        match self {
            AnyMap::Flow(m) => m.apply(z, mu),
            AnyMap::Explicit(m) => PhaseMap::apply(m, z, mu),
        }
    }

    fn describe(&self) -> String {
        match self {
            AnyMap::Flow(m) => m.describe(),
            AnyMap::Explicit(m) => m.describe(),
        }
    }
}

/// A catalog scenario ready for shooting.
#[derive(Clone, Debug)]
pub struct Problem {
    pub map: AnyMap,
    pub bvp: SeparatedBvp,
    /// Default parameter vector of the catalog entry.
    pub mu: Vec<f64>,
}

/// Build the map and boundary problem of a resolved flow config with the
/// given step count.
pub fn build_problem(cfg: &RunConfig, steps: usize) -> Result<Problem> {
    let name = cfg.scenario_name();
    let mut bvp = scenario_bvp(name, &cfg.params)?;
    if let Some(t) = cfg.tau {
        bvp.tau = t;
    }
    let method = cfg.method.unwrap_or(Method::Sv);
    let (map, mu) = match catalog_build(name, &cfg.params)? {
        CatalogEntry::System(s) => {
            let mu = s.mu.clone();
            (AnyMap::Flow(Discretized::new(s, FlowSpec::new(method, steps, bvp.tau))), mu)
        }
        CatalogEntry::Map(m) => {
            let mu = m.mu.clone();
            (AnyMap::Explicit(m), mu)
        }
    };
    Ok(Problem { map, bvp, mu })
}

/// What a run produced.
#[derive(Clone, Debug, Serialize)]
pub struct RunOutcome {
    pub command: Command,
    pub out_dir: PathBuf,
    /// Written files, relative to `out_dir`.
    pub files: Vec<String>,
    /// Command-specific report, also written as `report.json`.
    pub summary: serde_json::Value,
}

#[derive(Serialize)]
struct Manifest<'a> {
    package: &'static str,
    version: &'static str,
    schema_version: u32,
    command: &'static str,
    config: &'a RunConfig,
    tolerances: BTreeMap<&'static str, f64>,
    outputs: &'a [String],
}

fn tolerances() -> BTreeMap<&'static str, f64> {
    BTreeMap::from([
        ("newton_tol", NEWTON_TOL),
        ("newton_max_iter", NEWTON_MAX_ITER as f64),
        ("dedup_tol", DEDUP_TOL),
        ("cluster_tol", crate::bvp::CLUSTER_TOL),
        ("implicit_sv_tol", crate::integrate::NEWTON_TOL),
        ("corank_tol", CORANK_TOL),
        ("umbilic_tol", UMBILIC_TOL),
        ("conjugate_det_tol", DET_TOL),
        ("rattle_lambda_tol", crate::georattle::LAMBDA_TOL),
    ])
}

/// Worker count from the environment, if set.
pub fn workers_from_env() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| Error::InvalidInput(format!("{WORKERS_ENV} must be a positive integer, got '{v}'"))),
        Err(_) => Ok(None),
    }
}

/// Size the global thread pool from the environment.  Later calls are
/// no-ops once the pool exists.
pub fn init_workers() -> Result<()> {
    if let Some(n) = workers_from_env()? {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

struct Sink {
    dir: PathBuf,
    formats: Vec<Format>,
    files: Vec<String>,
}

impl Sink {
    fn export<E: Exportable>(&mut self, value: &E, stem: &str) -> Result<()> {
        for p in write_all(value, &self.dir, stem, &self.formats)? {
            self.files.push(rel(&self.dir, &p));
        }
        Ok(())
    }

    fn json<T: Serialize + ?Sized>(&mut self, value: &T, schema: &str, name: &str) -> Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        let path = self.dir.join(name);
        std::fs::write(&path, json_document(schema, value)?)?;
        self.files.push(rel(&self.dir, &path));
        Ok(())
    }
}

fn rel(dir: &Path, p: &Path) -> String {
    p.strip_prefix(dir).unwrap_or(p).display().to_string()
}

/// Execute a config: resolve defaults, compute, write artifacts, a report
/// and a manifest.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    let cfg = config.resolve()?;
    let dir = cfg.out_dir.clone().unwrap_or_default();
    let mut sink = Sink {
        dir: dir.clone(),
        formats: cfg.formats.clone(),
        files: Vec::new(),
    };
    let summary = match cfg.command {
        Command::BratuFold => bratu_fold(&cfg, &mut sink)?,
        Command::Sweep => run_sweep(&cfg, &mut sink)?,
        Command::Continue => run_continue(&cfg, &mut sink)?,
        Command::LocateUmbilic => run_locate_umbilic(&cfg, &mut sink)?,
        Command::LevelSet => run_level_set(&cfg, &mut sink)?,
        Command::ConjugateLocus => run_conjugate_locus(&cfg, &mut sink)?,
        Command::Pitchfork => run_pitchfork(&cfg, &mut sink)?,
        Command::CatastropheD4 => run_catastrophe_d4(&cfg, &mut sink)?,
        Command::Swallowtail => run_swallowtail(&cfg, &mut sink)?,
    };
    sink.json(&summary, &format!("hamshoot/report/{}", cfg.command.name()), "report.json")?;
    let mut outputs = sink.files.clone();
    outputs.push("manifest.json".into());
    let manifest = Manifest {
        package: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        schema_version: crate::export::SCHEMA_VERSION,
        command: cfg.command.name(),
        config: &cfg,
        tolerances: tolerances(),
        outputs: &outputs,
    };
    sink.json(&manifest, "hamshoot/manifest", "manifest.json")?;
    Ok(RunOutcome {
        command: cfg.command,
        out_dir: dir,
        files: sink.files,
        summary,
    })
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| Error::Parse(e.to_string()))
}

fn steps_of(cfg: &RunConfig) -> usize {
    cfg.steps.unwrap_or(1)
}

fn ybox(cfg: &RunConfig) -> Vec<(f64, f64)> {
    cfg.y_box.clone().unwrap_or_default()
}

fn fold_points<M: PhaseMap>(map: &M, bvp: &SeparatedBvp, branch: &Branch, k: usize) -> Vec<FoldPoint> {
    branch
        .points
        .iter()
        .filter(|p| p.tag == Tag::Fold)
        .filter_map(|p| refine_fold(map, bvp, &p.mu, &p.y, k).ok())
        .collect()
}

#[derive(Serialize)]
struct FoldReport {
    fold: FoldPoint,
    class: Option<AClass>,
}

fn classify_folds<M: PhaseMap>(map: &M, bvp: &SeparatedBvp, folds: Vec<FoldPoint>, k: usize) -> Vec<FoldReport> {
    folds
        .into_iter()
        .map(|f| {
            let fam = ShootingFamily::new(map, bvp.clone(), f.mu.clone()).with_free_mu(k);
            let mut w = vec![f.mu[k]];
            w.extend(&f.y);
            FoldReport {
                class: fam.classify(&w).ok(),
                fold: f,
            }
        })
        .collect()
}

fn bratu_fold(cfg: &RunConfig, sink: &mut Sink) -> Result<serde_json::Value> {
    let pb = build_problem(cfg, steps_of(cfg))?;
    let mu = pb.mu.clone();
    let starts = start_grid(&ybox(cfg), cfg.starts_per_axis.unwrap_or(60));
    let roots = roots_at(&pb.map, &pb.bvp, &mu, &starts, &None);
    let small = roots
        .iter()
        .min_by(|a, b| a[0].abs().total_cmp(&b[0].abs()))
        .ok_or_else(|| Error::NoConvergence(format!("no Bratu solution at C = {}", mu[0])))?;
    let seed = shoot(&pb.map, &pb.bvp, &mu, small)?;
    let (lo, hi) = cfg.mu_range.unwrap_or((0.05, 4.0));
    let params = ContinuationParams {
        ds: cfg.ds.unwrap_or(1e-2),
        max_steps: cfg.max_steps.unwrap_or(20_000),
        mu_bounds: (lo, hi),
        y_bounds: cfg.y_box.clone(),
        ..ContinuationParams::default()
    };
    let branch = continue_branch(&pb.map, &pb.bvp, &seed, &params)?;
    let folds = classify_folds(&pb.map, &pb.bvp, fold_points(&pb.map, &pb.bvp, &branch, 0), 0);
    let diagram = BifurcationDiagram {
        branches: vec![branch],
        method: pb.map.describe(),
        empty_cells: vec![],
    };
    sink.export(&diagram, "diagram")?;
    let first = folds
        .first()
        .ok_or_else(|| Error::NoConvergence("continuation passed no fold".into()))?;
    Ok(serde_json::json!({
        "method": pb.map.describe(),
        "fold_c": first.fold.mu[0],
        "fold_p0": first.fold.y[0],
        "folds": to_value(&folds)?,
        "branch_points": diagram.branches[0].points.len(),
        "termination": diagram.branches[0].termination,
    }))
}

fn sweep_spec(cfg: &RunConfig, pb: &Problem) -> SweepSpec {
    let (lo, hi) = cfg.mu_range.unwrap_or((0.0, 0.0));
    SweepSpec {
        base_mu: pb.mu.clone(),
        mu_index: cfg.mu_index.unwrap_or(0),
        mu_grid: linspace(lo, hi, cfg.mu_points.unwrap_or(1)),
        starts: start_grid(&ybox(cfg), cfg.starts_per_axis.unwrap_or(1)),
        bounds: cfg.y_box.clone(),
    }
}

fn check_mu_index(cfg: &RunConfig, pb: &Problem) -> Result<usize> {
    let k = cfg.mu_index.unwrap_or(0);
    if k >= pb.mu.len() {
        return Err(Error::InvalidInput(format!(
            "scenario '{}' has {} parameters, cannot vary index {k}",
            cfg.scenario_name(),
            pb.mu.len()
        )));
    }
    if ybox(cfg).len() != pb.map.half_dim() {
        return Err(Error::InvalidInput(format!(
            "y_box has {} sides, the problem has {} unknowns",
            ybox(cfg).len(),
            pb.map.half_dim()
        )));
    }
    Ok(k)
}

fn run_sweep(cfg: &RunConfig, sink: &mut Sink) -> Result<serde_json::Value> {
    let pb = build_problem(cfg, steps_of(cfg))?;
    check_mu_index(cfg, &pb)?;
    let diagram = sweep(&pb.map, &pb.bvp, &sweep_spec(cfg, &pb))?;
    let worst = diagram.verify(&pb.map, &pb.bvp)?;
    sink.export(&diagram, "diagram")?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for p in diagram.points() {
        *counts.entry(fmt_f64(p.mu[cfg.mu_index.unwrap_or(0)])).or_default() += 1;
    }
    Ok(serde_json::json!({
        "method": diagram.method,
        "branches": diagram.branches.len(),
        "points": diagram.points().count(),
        "max_roots": counts.values().copied().max().unwrap_or(0),
        "empty_cells": diagram.empty_cells.len(),
        "worst_residual": worst,
    }))
}

fn run_continue(cfg: &RunConfig, sink: &mut Sink) -> Result<serde_json::Value> {
    let pb = build_problem(cfg, steps_of(cfg))?;
    let k = check_mu_index(cfg, &pb)?;
    let (lo, hi) = cfg.mu_range.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    let mu = cfg.seed_mu.clone().unwrap_or_else(|| {
        let mut m = pb.mu.clone();
        m[k] = lo;
        m
    });
    if mu.len() != pb.mu.len() {
        return Err(Error::InvalidInput(format!("seed_mu needs {} entries", pb.mu.len())));
    }
    let guess = match &cfg.seed_y {
        Some(y) => y.clone(),
        None => roots_at(&pb.map, &pb.bvp, &mu, &start_grid(&ybox(cfg), cfg.starts_per_axis.unwrap_or(1)), &cfg.y_box)
            .into_iter()
            .next()
            .ok_or_else(|| Error::NoConvergence(format!("no root at the seed parameter {mu:?}")))?,
    };
    let seed = shoot(&pb.map, &pb.bvp, &mu, &guess)?;
    let params = ContinuationParams {
        mu_index: k,
        ds: cfg.ds.unwrap_or(1e-2),
        max_steps: cfg.max_steps.unwrap_or(20_000),
        direction: cfg.direction.unwrap_or(1.0),
        mu_bounds: (lo, hi),
        y_bounds: cfg.y_box.clone(),
        ..ContinuationParams::default()
    };
    let branch = continue_branch(&pb.map, &pb.bvp, &seed, &params)?;
    let folds = classify_folds(&pb.map, &pb.bvp, fold_points(&pb.map, &pb.bvp, &branch, k), k);
    let diagram = BifurcationDiagram {
        branches: vec![branch],
        method: pb.map.describe(),
        empty_cells: vec![],
    };
    let worst = diagram.verify(&pb.map, &pb.bvp)?;
    sink.export(&diagram, "branch")?;
    Ok(serde_json::json!({
        "method": diagram.method,
        "seed": to_value(&seed)?,
        "points": diagram.branches[0].points.len(),
        "termination": diagram.branches[0].termination,
        "folds": to_value(&folds)?,
        "worst_residual": worst,
    }))
}

#[derive(Clone, Debug, Serialize)]
pub struct UmbilicReport {
    pub seed: Vec<f64>,
    pub w: Vec<f64>,
    pub params: Vec<f64>,
    pub y: Vec<f64>,
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
    pub history: Vec<f64>,
    pub corank: usize,
    pub singular_values: Vec<f64>,
    pub class_hint: ClassHint,
}

fn umbilic_family<'a>(cfg: &RunConfig, pb: &'a Problem) -> Result<ShootingFamily<'a, AnyMap>> {
    match cfg.scenario_name() {
        "henon_heiles" | "henon_heiles_perturbed" => Ok(ShootingFamily::henon_heiles(&pb.map, pb.bvp.tau)),
        "example5_fold" => Ok(ShootingFamily::new(&pb.map, pb.bvp.clone(), pb.mu.clone()).with_free_mu(0)),
        other => Err(Error::InvalidInput(format!("no singularity family for scenario '{other}'"))),
    }
}

fn find_umbilic(cfg: &RunConfig, fam: &ShootingFamily<AnyMap>) -> Result<UmbilicReport> {
    let seed = match &cfg.seed {
        Some(s) => s.clone(),
        None => {
            let b = cfg.seed_box.clone().unwrap_or_default();
            let n = cfg.seed_points.unwrap_or(16);
            let grid = GridBox::new(b.iter().map(|x| x.0).collect(), b.iter().map(|x| x.1).collect(), vec![n; b.len()])?;
            umbilic_seed(fam, &grid)?
        }
    };
    let u = locate_umbilic(fam, &seed)?;
    Ok(UmbilicReport {
        seed,
        w: u.w,
        params: u.point.params,
        y: u.point.y,
        residual: u.residual,
        converged: u.converged,
        iterations: u.iterations,
        history: u.history,
        corank: u.point.corank,
        singular_values: u.point.singular_values,
        class_hint: u.point.class_hint,
    })
}

fn run_locate_umbilic(cfg: &RunConfig, sink: &mut Sink) -> Result<serde_json::Value> {
    let pb = build_problem(cfg, steps_of(cfg))?;
    let fam = umbilic_family(cfg, &pb)?;
    let rep = find_umbilic(cfg, &fam)?;
    sink.json(&rep, "hamshoot/umbilic", "umbilic.json")?;
    let mut v = to_value(&rep)?;
    v["method"] = pb.map.describe().into();
    Ok(v)
}

fn run_level_set(cfg: &RunConfig, sink: &mut Sink) -> Result<serde_json::Value> {
    let pb = build_problem(cfg, steps_of(cfg))?;
    let fam = umbilic_family(cfg, &pb)?;
    let (centre, umbilic) = match &cfg.centre {
        Some(c) => (c.clone(), None),
        None if fam.dim() == 3 => {
            let u = find_umbilic(cfg, &fam)?;
            (u.w.clone(), Some(u))
        }
        None => (vec![0.0; fam.dim()], None),
    };
    let grid = GridBox::around(&centre, cfg.half_width.unwrap_or(0.5), cfg.grid_points.unwrap_or(81))?;
    let set = level_bifurcation_set(&fam, &grid)?;
    sink.export(&set, "level_set")?;
    let max_corank = set.vertices.iter().map(|v| v.corank).max().unwrap_or(0);
    let mut v = serde_json::json!({
        "method": pb.map.describe(),
        "centre": centre,
        "umbilic": to_value(&umbilic)?,
        "vertices": set.vertices.len(),
        "segments": set.segments.len(),
        "triangles": set.triangles.len(),
        "max_corank": max_corank,
        "note": set.note,
    });
    if grid.dim() == 3 && !set.is_empty() {
        let ridges = cusp_ridges(&set)?;
        let cell = grid.cell_diameter();
        let radius = cfg.hub_cells.unwrap_or(4.0) * cell;
        let degree = ridge_degree(&ridges, [centre[0], centre[1], centre[2]], radius, cell);
        sink.json(&ridges, "hamshoot/cusp_ridges", "ridges.json")?;
        v["ridge_segments"] = ridges.segments.len().into();
        v["hub_radius"] = radius.into();
        v["ridge_degree"] = to_value(&degree)?;
    }
    Ok(v)
}

fn run_conjugate_locus(cfg: &RunConfig, sink: &mut Sink) -> Result<serde_json::Value> {
    let name = cfg.surface.clone().unwrap_or_default();
    let surface = hypersurface_catalog(&name)?;
    let q = cfg
        .q_star
        .clone()
        .ok_or_else(|| Error::MissingParameter("q_star".into()))?;
    let rays = cfg.rays.clone().unwrap_or(RayGrid::Circle { count: 200 });
    let locus = conjugate_locus(&surface, &q, &rays, cfg.h.unwrap_or(crate::georattle::DEFAULT_H), cfg.max_arc)?;
    sink.export(&locus, "locus")?;
    let arcs: Vec<f64> = locus.rays.iter().filter_map(|r| r.arc).collect();
    Ok(serde_json::json!({
        "surface": name,
        "rays": locus.rays.len(),
        "rays_with_conjugate_point": arcs.len(),
        "min_arc": arcs.iter().copied().fold(f64::INFINITY, f64::min),
        "max_arc": arcs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        "cusps": locus.cusp_points.len(),
        "umbilic": to_value::<Option<CorankTwoPoint>>(&locus.umbilic)?,
        "ridge_degree": locus.ridges.as_ref().map(|r| r.degree),
    }))
}

#[derive(Clone, Debug, Serialize)]
pub struct BreakRun {
    pub steps: usize,
    pub method: String,
    pub report: BreakReport,
}

/// Window of a resolved `pitchfork` config.  For `linear_transformed` the
/// box is read in the untransformed momenta and mapped through `A⁻ᵀ`; the
/// gap is then measured after pulling momenta back with `Aᵀ`.
pub fn pitchfork_window(cfg: &RunConfig) -> Result<(Window, Option<DMatrix<f64>>)> {
    let mut w = Window {
        mu_index: cfg.mu_index.unwrap_or(0),
        base_mu: vec![0.0],
        mu_range: cfg.mu_range.unwrap_or((0.0, 0.0)),
        mu_points: cfg.mu_points.unwrap_or(1),
        y_box: ybox(cfg),
        starts_per_axis: cfg.starts_per_axis.unwrap_or(1),
    };
    if cfg.scenario_name() != "linear_transformed" {
        return Ok((w, None));
    }
    let a = cyclic_transform_matrix();
    let ainvt = a
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("transform matrix".into()))?
        .transpose();
    let corners: Vec<Vec<f64>> = start_grid(&w.y_box, 2).iter().map(|c| mat_vec(&ainvt, c)).collect();
    w.y_box = (0..w.y_box.len())
        .map(|i| {
            corners.iter().map(|c| c[i]).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
        })
        .collect();
    Ok((w, Some(a.transpose())))
}

/// Sweep the pitchfork window at `steps` and measure the break.
pub fn break_at(cfg: &RunConfig, steps: usize) -> Result<(BifurcationDiagram, BreakRun)> {
    let mut pb = build_problem(cfg, steps)?;
    let (mut w, metric) = pitchfork_window(cfg)?;
    w.base_mu = pb.mu.clone();
    if let AnyMap::Flow(f) = &mut pb.map {
        f.spec = FlowSpec::new(f.spec.method, steps, pb.bvp.tau);
    }
    let (d, report) = measure_break(&pb.map, &pb.bvp, &w, metric.as_ref())?;
    Ok((
        d,
        BreakRun {
            steps,
            method: pb.map.describe(),
            report,
        },
    ))
}

fn run_pitchfork(cfg: &RunConfig, sink: &mut Sink) -> Result<serde_json::Value> {
    let (d, main) = break_at(cfg, steps_of(cfg))?;
    sink.export(&d, "diagram")?;
    let mut runs = vec![main];
    if let Some(n) = cfg.compare_steps {
        let (d2, other) = break_at(cfg, n)?;
        sink.export(&d2, &format!("diagram_n{n}"))?;
        runs.push(other);
    }
    runs.sort_by_key(|r| r.steps);
    let ratio = (runs.len() == 2).then(|| runs[0].report.gap / runs[1].report.gap);
    Ok(serde_json::json!({
        "scenario": cfg.scenario_name(),
        "runs": to_value(&runs)?,
        "ratio": ratio,
    }))
}

fn run_catastrophe_d4(cfg: &RunConfig, sink: &mut Sink) -> Result<serde_json::Value> {
    let kind = cfg.kind.unwrap_or(D4Kind::Plus);
    let mu4 = cfg.mu4.unwrap_or(0.0);
    let set = d4_level_set(kind, mu4, &cfg.d4_grid.clone().unwrap_or_default())?;
    sink.export(&set, "level_set")?;
    Ok(serde_json::json!({
        "kind": kind,
        "mu4": mu4,
        "samples": set.samples().count(),
        "cusps": set.cusps().count(),
        "most_degenerate": to_value::<Option<&D4Sample>>(&set.most_degenerate())?,
    }))
}

/// Traced swallowtail points next to the closed forms.
#[derive(Clone, Debug, Serialize)]
pub struct SwallowtailComparison {
    pub mu4: f64,
    pub traced: Vec<SwallowtailPoint>,
    pub closed_form: Vec<SwallowtailPoint>,
    /// Largest coordinate difference between matched points.
    pub max_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SwallowtailReport(pub Vec<SwallowtailComparison>);

/// Match each closed-form point to the nearest traced one.
pub fn compare_swallowtails(mu4: f64, grid: &D4Grid) -> Result<SwallowtailComparison> {
    let traced = traced_swallowtails(mu4, grid)?;
    let closed = swallowtail_points(mu4);
    let dist = |a: &SwallowtailPoint, b: &SwallowtailPoint| {
        (a.x - b.x).abs().max((a.y - b.y).abs()).max((a.mu3 - b.mu3).abs())
    };
    let max_error = if traced.len() == closed.len() {
        closed
            .iter()
            .map(|c| traced.iter().map(|t| dist(c, t)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    Ok(SwallowtailComparison {
        mu4,
        traced,
        closed_form: closed,
        max_error,
    })
}

impl Exportable for SwallowtailReport {
    fn schema(&self) -> &'static str {
        "hamshoot/swallowtails"
    }

    fn table(&self) -> Table {
        let mut t = Table::new(["mu4", "source", "x", "y", "mu3"]);
        for c in &self.0 {
            for (src, pts) in [("traced", &c.traced), ("closed_form", &c.closed_form)] {
                for p in pts {
                    t.push(vec![fmt_f64(c.mu4), src.into(), fmt_f64(p.x), fmt_f64(p.y), fmt_f64(p.mu3)]);
                }
            }
        }
        t
    }

    fn plot(&self) -> Plot {
        let pts = |f: fn(&SwallowtailComparison) -> &Vec<SwallowtailPoint>| {
            self.0.iter().flat_map(|c| f(c).iter().map(|p| [p.mu3, p.y])).collect()
        };
        Plot::new("swallowtail points", "mu3", "y")
            .with(Series::Points {
                label: "traced".into(),
                points: pts(|c| &c.traced),
            })
            .with(Series::Points {
                label: "closed form".into(),
                points: pts(|c| &c.closed_form),
            })
    }
}

fn run_swallowtail(cfg: &RunConfig, sink: &mut Sink) -> Result<serde_json::Value> {
    let grid = cfg.d4_grid.clone().unwrap_or_default();
    let report = SwallowtailReport(
        cfg.mu4_values
            .clone()
            .unwrap_or_default()
            .into_iter()
            .map(|m| compare_swallowtails(m, &grid))
            .collect::<Result<_>>()?,
    );
    sink.export(&report, "swallowtails")?;
    to_value(&report)
}

// ---------------------------------------------------------------- parsing

#[derive(Debug, Parser)]
#[command(name = "hamshoot", version, about = "Shooting, bifurcations and conjugate loci of Hamiltonian boundary value problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Locate the Bratu fold by continuation.
    BratuFold(Opts),
    /// Multistart sweep over a parameter grid.
    Sweep(Opts),
    /// Pseudo-arclength continuation from a seed.
    Continue(Opts),
    /// Gauss–Newton search for a corank-two point.
    LocateUmbilic(Opts),
    /// Level bifurcation set and cusp ridges around a point.
    LevelSet(Opts),
    /// Conjugate locus on a catalog hypersurface.
    ConjugateLocus(Opts),
    /// Break magnitude of a numerical pitchfork.
    Pitchfork(Opts),
    /// Level set of a perturbed D4 unfolding.
    CatastropheD4(Opts),
    /// Traced and closed-form swallowtail points.
    Swallowtail(Opts),
    /// Run a TOML scenario or rerun a manifest.
    Run {
        path: PathBuf,
        #[command(flatten)]
        opts: Opts,
    },
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let v: Vec<&str> = s.split(',').collect();
    if v.len() != 2 {
        return Err(format!("expected LO,HI, got '{s}'"));
    }
    let p = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("'{x}': {e}"));
    Ok((p(v[0])?, p(v[1])?))
}

fn parse_box(s: &str) -> std::result::Result<Vec<(f64, f64)>, String> {
    s.split(';').map(|side| parse_range(side)).collect()
}

fn parse_param(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got '{s}'"))?;
    Ok((k.trim().into(), v.trim().parse().map_err(|e| format!("'{v}': {e}"))?))
}

fn parse_rays(s: &str) -> std::result::Result<RayGrid, String> {
    let n = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("'{x}': {e}"));
    match s.split_once(':') {
        Some(("circle", c)) => Ok(RayGrid::Circle { count: n(c)? }),
        Some(("sphere", tp)) => {
            let (t, p) = tp.split_once('x').ok_or("expected sphere:THETAxPHI")?;
            Ok(RayGrid::Sphere {
                n_theta: n(t)?,
                n_phi: n(p)?,
            })
        }
        _ => Err(format!("expected circle:N or sphere:TxP, got '{s}'")),
    }
}

/// Flags shared by every subcommand; each command reads the ones it needs.
#[derive(Debug, Default, Args)]
pub struct Opts {
    /// TOML scenario file supplying defaults for the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Catalog scenario name.
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Catalog parameter override, KEY=VALUE (repeatable).
    #[arg(long = "param", value_parser = parse_param, allow_hyphen_values = true)]
    pub params: Vec<(String, f64)>,
    #[arg(long)]
    pub mu_index: Option<usize>,
    /// Parameter range LO,HI.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    pub mu_range: Option<(f64, f64)>,
    #[arg(long)]
    pub mu_points: Option<usize>,
    /// Box of unknowns, LO,HI;LO,HI;...
    #[arg(long, allow_hyphen_values = true)]
    pub y_box: Option<String>,
    #[arg(long)]
    pub starts: Option<usize>,
    #[arg(long)]
    pub compare_steps: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub seed_mu: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub seed_y: Option<Vec<f64>>,
    #[arg(long)]
    pub ds: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub direction: Option<f64>,
    /// Gauss–Newton seed.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub seed: Option<Vec<f64>>,
    #[arg(long, allow_hyphen_values = true)]
    pub seed_box: Option<String>,
    #[arg(long)]
    pub seed_points: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub centre: Option<Vec<f64>>,
    #[arg(long)]
    pub half_width: Option<f64>,
    /// Level-set nodes per axis.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub hub_cells: Option<f64>,
    #[arg(long)]
    pub surface: Option<String>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub q_star: Option<Vec<f64>>,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub max_arc: Option<f64>,
    /// Ray grid, circle:N or sphere:TxP.
    #[arg(long, value_parser = parse_rays)]
    pub rays: Option<RayGrid>,
    #[arg(long, value_enum)]
    pub kind: Option<D4Kind>,
    #[arg(long, allow_hyphen_values = true)]
    pub mu4: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub mu4_values: Option<Vec<f64>>,
    #[arg(long)]
    pub d4_slices: Option<usize>,
    #[arg(long)]
    pub d4_samples: Option<usize>,
    /// Output formats (repeatable or comma separated).
    #[arg(long = "format", value_enum, value_delimiter = ',')]
    pub formats: Vec<Format>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Opts {
    /// Layer: command defaults, then the scenario file, then flags.
    pub fn to_config(&self, command: Option<Command>, base: Option<RunConfig>) -> Result<RunConfig> {
        let mut cfg = match (&self.config, base) {
            (_, Some(b)) => b,
            (Some(p), None) => RunConfig::from_path(p)?,
            (None, None) => RunConfig::new(command.unwrap_or(Command::Sweep)),
        };
        if let Some(c) = command {
            if self.config.is_some() && cfg.command != c {
                return Err(Error::InvalidInput(format!(
                    "scenario file is for '{}', not '{}'",
                    cfg.command.name(),
                    c.name()
                )));
            }
            cfg.command = c;
        }
        let mut f = RunConfig::new(cfg.command);
        f.scenario = self.scenario.clone();
        f.method = self.method;
        f.steps = self.steps;
        f.tau = self.tau;
        f.params = self.params.iter().cloned().collect();
        f.mu_index = self.mu_index;
        f.mu_range = self.mu_range;
        f.mu_points = self.mu_points;
        let boxed = |s: &Option<String>| s.as_deref().map(parse_box).transpose().map_err(Error::Parse);
        f.y_box = boxed(&self.y_box)?;
        f.starts_per_axis = self.starts;
        f.compare_steps = self.compare_steps;
        f.seed_mu = self.seed_mu.clone();
        f.seed_y = self.seed_y.clone();
        f.ds = self.ds;
        f.max_steps = self.max_steps;
        f.direction = self.direction;
        f.seed = self.seed.clone();
        f.seed_box = boxed(&self.seed_box)?;
        f.seed_points = self.seed_points;
        f.centre = self.centre.clone();
        f.half_width = self.half_width;
        f.grid_points = self.grid;
        f.hub_cells = self.hub_cells;
        f.surface = self.surface.clone();
        f.q_star = self.q_star.clone();
        f.h = self.h;
        f.max_arc = self.max_arc;
        f.rays = self.rays.clone();
        f.kind = self.kind;
        f.mu4 = self.mu4;
        f.mu4_values = self.mu4_values.clone();
        if self.d4_slices.is_some() || self.d4_samples.is_some() {
            let mut g = cfg.d4_grid.clone().unwrap_or_default();
            g.slices = self.d4_slices.unwrap_or(g.slices);
            g.samples = self.d4_samples.unwrap_or(g.samples);
            f.d4_grid = Some(g);
        }
        f.formats = self.formats.clone();
        f.out_dir = self.out.clone();
        cfg.overlay(&f);
        Ok(cfg)
    }
}

impl Sub {
    pub fn to_config(&self) -> Result<RunConfig> {
        let (cmd, opts) = match self {
            Sub::BratuFold(o) => (Command::BratuFold, o),
            Sub::Sweep(o) => (Command::Sweep, o),
            Sub::Continue(o) => (Command::Continue, o),
            Sub::LocateUmbilic(o) => (Command::LocateUmbilic, o),
            Sub::LevelSet(o) => (Command::LevelSet, o),
            Sub::ConjugateLocus(o) => (Command::ConjugateLocus, o),
            Sub::Pitchfork(o) => (Command::Pitchfork, o),
            Sub::CatastropheD4(o) => (Command::CatastropheD4, o),
            Sub::Swallowtail(o) => (Command::Swallowtail, o),
            Sub::Run { path, opts } => return opts.to_config(None, Some(RunConfig::from_path(path)?)),
        };
        opts.to_config(Some(cmd), None)
    }
}

/// Parse arguments, run, and print the report; on failure print error
/// JSON to stderr.  Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return 0;
            }
            let rep = Error::Parse(e.to_string().trim().to_string()).report();
            eprintln!("{}", serde_json::to_string(&rep).unwrap_or_default());
            return 2;
        }
    };
    let result = init_workers().and_then(|_| cli.command.to_config()).and_then(|c| run(&c));
    match result {
        Ok(out) => {
            println!("{}", serde_json::to_string_pretty(&out).unwrap_or_default());
            0
        }
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e.report()).unwrap_or_default());
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("hamshoot-cli-{name}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&d);
        d
    }

    #[test]
    fn flags_override_scenario_file() {
        let cli = Cli::try_parse_from([
            "hamshoot",
            "pitchfork",
            "--steps",
            "14",
            "--mu-range",
            "-6.5,-5.7",
            "--y-box",
            "-1,1",
            "--param",
            "mu=-1",
            "--format",
            "csv,json",
        ])
        .unwrap();
        let c = cli.command.to_config().unwrap();
        assert_eq!(c.command, Command::Pitchfork);
        assert_eq!(c.steps, Some(14));
        assert_eq!(c.mu_range, Some((-6.5, -5.7)));
        assert_eq!(c.y_box, Some(vec![(-1.0, 1.0)]));
        assert_eq!(c.params["mu"], -1.0);
        assert_eq!(c.formats, vec![Format::Csv, Format::Json]);
    }

    #[test]
    fn sweep_outputs_are_reproducible() {
        let dir = tmp("sweep");
        let mut c = RunConfig::new(Command::Sweep);
        c.out_dir = Some(dir.clone());
        let a = run(&c).unwrap();
        let bytes: Vec<Vec<u8>> = a.files.iter().map(|f| std::fs::read(dir.join(f)).unwrap()).collect();
        let b = run(&c).unwrap();
        assert_eq!(a.files, b.files);
        for (f, old) in b.files.iter().zip(&bytes) {
            assert_eq!(&std::fs::read(dir.join(f)).unwrap(), old, "{f} changed");
        }
        assert!(a.summary["worst_residual"].as_f64().unwrap() < 1e-10);
        let manifest = RunConfig::from_path(&dir.join("manifest.json")).unwrap();
        assert_eq!(manifest, c.resolve().unwrap());
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn failures_are_machine_readable() {
        let mut c = RunConfig::new(Command::Sweep);
        c.scenario = Some("henon_heiles".into());
        let err = run(&c).unwrap_err();
        assert_eq!(err.report().error, "invalid_input");
        assert_eq!(main_with_args(["hamshoot", "sweep", "--scenario", "nowhere"]), 1);
        assert_eq!(main_with_args(["hamshoot", "sweep", "--steps", "many"]), 2);
    }

    #[test]
    fn ray_grids_parse() {
        assert!(parse_rays("circle:12").is_ok());
        assert_eq!(
            parse_rays("sphere:3x4").unwrap(),
            RayGrid::Sphere { n_theta: 3, n_phi: 4 }
        );
        assert!(parse_rays("cube:3").is_err());
    }
}
