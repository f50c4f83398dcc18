//! Invariant suites run by `pwsm verify`, collected into a JSON report.

use clap::ValueEnum;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use pwsm::cycle::{cycle_stability, find_limit_cycle, LimitCycle};
use pwsm::integrate::integrate_with_events;
use pwsm::io::SystemSpec;
use pwsm::iprc::{crossing_fields, cycle_matrix_b, jump_matrix, saltation_matrix, PiecewiseIprc};
use pwsm::oracle::{direct_iprc, wrap_phase, OracleOptions, PhaseLookupTable};
use pwsm::system::{tangent_basis, TRANSVERSALITY_MARGIN};

use crate::config::{Loaded, Solved, StartArgs, Tolerances};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuiteName {
    /// Dimensions, ids and surface references.
    Structure,
    /// The limit cycle exists and closes.
    Cycle,
    /// M^T S = I on random crossings and on every crossing met.
    Duality,
    /// n.F has the right sign on both sides of every crossing met.
    Transversality,
    /// T F.z = 1 along the cycle.
    Normalization,
    /// z is continuous tangentially and F.z is continuous at crossings.
    Matching,
    /// Adjoint and variational multipliers are reciprocal.
    Floquet,
    /// JSON export and re-ingest reproduce the cycle.
    RoundTrip,
    /// The iPRC agrees with direct perturbation.
    Oracle,
}

#[derive(Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl Check {
    fn within(name: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            passed: residual <= tolerance,
            residual: Some(residual),
            tolerance: Some(tolerance),
            error: None,
            message: None,
        }
    }

    fn failed(name: impl Into<String>, e: &anyhow::Error) -> Self {
        Check {
            name: name.into(),
            passed: false,
            residual: None,
            tolerance: None,
            error: Some(crate::error_name(e).to_string()),
            message: Some(e.to_string()),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Suite {
    pub name: SuiteName,
    pub passed: bool,
    pub checks: Vec<Check>,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub source: String,
    pub passed: bool,
    pub suites: Vec<Suite>,
}

/// One crossing: one-sided fields, unit normal, and where it happened.
struct CrossingData {
    label: String,
    surface: usize,
    point: DVector<f64>,
    before: DVector<f64>,
    after: DVector<f64>,
    normal: DVector<f64>,
}

struct Context<'a> {
    loaded: &'a Loaded,
    start: &'a StartArgs,
    tol: &'a Tolerances,
    t_end: f64,
    solved: Option<anyhow::Result<Solved>>,
    iprc: Option<anyhow::Result<PiecewiseIprc>>,
}

impl Context<'_> {
    fn solved(&mut self) -> Result<&Solved, &anyhow::Error> {
        if self.solved.is_none() {
            self.solved = Some(self.loaded.find_cycle(self.start, self.tol));
        }
        self.solved.as_ref().unwrap().as_ref()
    }

    fn cycle(&mut self) -> Result<&LimitCycle, &anyhow::Error> {
        self.solved().map(|s| &s.cycle)
    }

    fn iprc(&mut self) -> anyhow::Result<(&LimitCycle, &PiecewiseIprc)> {
        let _ = self.solved();
        let solved = self.solved.as_ref().unwrap();
        if self.iprc.is_none() {
            self.iprc = Some(match solved {
                Ok(s) => self.loaded.iprc(&s.cycle, self.tol).map_err(anyhow::Error::from),
                Err(e) => Err(anyhow::Error::new(clone_error(e))),
            });
        }
        let cycle = solved.as_ref().map_err(|e| anyhow::Error::new(clone_error(e)))?;
        let iprc = self.iprc.as_ref().unwrap().as_ref().map_err(|e| anyhow::Error::new(clone_error(e)))?;
        Ok((&cycle.cycle, iprc))
    }

    /// Crossings of the cycle if it exists, else those of a trajectory from
    /// the start point.
    fn crossings(&mut self) -> anyhow::Result<Vec<CrossingData>> {
        let sys = &self.loaded.system;
        if let Ok(cycle) = self.cycle() {
            let cycle = cycle.clone();
            return Ok((0..cycle.segments.len())
                .map(|k| {
                    let (surface, point, _, _) = cycle.crossing_into(k);
                    let (before, after, normal) = crossing_fields(sys, &cycle, k);
                    CrossingData {
                        label: format!("cycle crossing into segment {}", k + 1),
                        surface,
                        point,
                        before,
                        after,
                        normal,
                    }
                })
                .collect());
        }
        let x0 = self.loaded.start_point(self.start)?;
        let traj = integrate_with_events(sys, &x0, (0.0, self.t_end), &self.tol.integrator())?;
        Ok(traj
            .events
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let s = sys.surface(e.surface);
                CrossingData {
                    label: format!("trajectory crossing {} (surface {}, t = {:.6})", i + 1, e.surface, e.t),
                    surface: e.surface,
                    point: e.point.clone(),
                    before: sys.one_sided_field(e.from, &e.point),
                    after: sys.one_sided_field(e.to, &s.post_point(&e.point)),
                    normal: s.unit_normal(&e.point),
                }
            })
            .collect())
    }
}

/// Library errors are not `Clone`; the name and message are what a report
/// needs.
fn clone_error(e: &anyhow::Error) -> ReportedError {
    ReportedError {
        name: crate::error_name(e),
        message: e.to_string(),
    }
}

#[derive(Debug)]
struct ReportedError {
    name: &'static str,
    message: String,
}

impl std::fmt::Display for ReportedError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for ReportedError {}

fn structure(ctx: &mut Context) -> Vec<Check> {
    match ctx.loaded.system.validate() {
        Ok(()) => vec![Check::within("system validates", 0.0, 0.0)],
        Err(e) => vec![Check::failed("system validates", &e.into())],
    }
}

fn cycle(ctx: &mut Context) -> Vec<Check> {
    let sys = &ctx.loaded.system;
    match ctx.solved() {
        Err(e) => vec![Check::failed("limit cycle found", e)],
        Ok(s) => {
            let c = &s.cycle;
            let first = &c.segments[0];
            let last = c.segments.last().unwrap();
            let closed = sys.surface(first.entry_surface).post_point(&last.exit());
            let scale = first.entry().amax().max(1.0);
            vec![
                Check::within("limit cycle found", 0.0, 0.0),
                Check::within("cycle closes on itself", (closed - first.entry()).amax() / scale, 1e-8),
            ]
        }
    }
}

fn random_crossing(rng: &mut ChaCha8Rng, n: usize) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let normal = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)).normalize();
    let mut field = || loop {
        let f = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        if normal.dot(&f) > 0.1 {
            return f;
        }
    };
    let (fm, fp) = (field(), field());
    (fm, fp, normal)
}

fn duality_residual(fm: &DVector<f64>, fp: &DVector<f64>, n: &DVector<f64>) -> pwsm::Result<f64> {
    let m = jump_matrix(fm, fp, n)?;
    let s = saltation_matrix(fm, fp, n)?;
    let d = fm.len();
    Ok((m.transpose() * s - DMatrix::identity(d, d)).amax())
}

fn duality(ctx: &mut Context) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let (fm, fp, n) = random_crossing(&mut rng, 2 + i % 5);
        worst = worst.max(duality_residual(&fm, &fp, &n).unwrap_or(f64::INFINITY));
    }
    let mut checks = vec![Check::within("M^T S = I on 1000 random crossings", worst, 1e-10)];
    match ctx.crossings() {
        Err(e) => checks.push(Check::failed("crossings", &e)),
        Ok(list) => {
            for c in list {
                checks.push(match duality_residual(&c.before, &c.after, &c.normal) {
                    Ok(r) => Check::within(format!("M^T S = I at {}", c.label), r, 1e-10),
                    Err(e) => Check::failed(format!("M^T S = I at {}", c.label), &e.into()),
                });
            }
        }
    }
    checks
}

fn transversality(ctx: &mut Context) -> Vec<Check> {
    let sys = ctx.loaded.system.clone();
    match ctx.crossings() {
        Err(e) => vec![Check::failed("crossings", &e)],
        Ok(list) => list
            .into_iter()
            .map(|c| {
                let name = format!("n.F > 0 on both sides at {}", c.label);
                match sys.check_transversality(c.surface, &c.point, TRANSVERSALITY_MARGIN) {
                    Ok(()) => {
                        let margin = c.normal.dot(&c.before).min(c.normal.dot(&c.after));
                        Check {
                            message: Some(format!("min n.F = {margin:e}")),
                            ..Check::within(name, 0.0, 0.0)
                        }
                    }
                    Err(e) => Check::failed(name, &e.into()),
                }
            })
            .collect(),
    }
}

fn normalization(ctx: &mut Context) -> Vec<Check> {
    let sys = ctx.loaded.system.clone();
    let (cycle, iprc) = match ctx.iprc() {
        Ok(v) => v,
        Err(e) => return vec![Check::failed("iPRC computed", &e)],
    };
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let t = (i as f64 + 0.5) / 1000.0 * cycle.period;
        let (k, _) = cycle.segment_at(t);
        let f = sys.one_sided_field(cycle.segments[k].region, &cycle.state_at(&sys, t));
        worst = worst.max((f.dot(&iprc.evaluate_time(t)) * cycle.period - 1.0).abs());
    }
    vec![Check::within("T F.z = 1 at 1000 phases", worst, 1e-8)]
}

fn matching(ctx: &mut Context) -> Vec<Check> {
    let sys = ctx.loaded.system.clone();
    let (cycle, iprc) = match ctx.iprc() {
        Ok(v) => v,
        Err(e) => return vec![Check::failed("iPRC computed", &e)],
    };
    let kk = cycle.segments.len();
    (0..kk)
        .map(|k| {
            let (fm, fp, normal) = crossing_fields(&sys, cycle, k);
            let before = iprc.segment_end((k + kk - 1) % kk);
            let after = &iprc.segments[k].z0;
            let scale = before.amax().max(after.amax());
            let mut r = (fp.dot(after) - fm.dot(&before)).abs() / fp.dot(after).abs().max(1e-300);
            for w in tangent_basis(&normal) {
                r = r.max((w.dot(after) - w.dot(&before)).abs() / scale);
            }
            Check::within(format!("tangential and F.z matching into segment {}", k + 1), r, 1e-8)
        })
        .collect()
}

fn floquet(ctx: &mut Context) -> Vec<Check> {
    let sys = ctx.loaded.system.clone();
    let cycle = match ctx.cycle() {
        Ok(c) => c,
        Err(e) => return vec![Check::failed("limit cycle found", e)],
    };
    let pair = cycle_stability(&sys, cycle).and_then(|st| Ok((st, cycle_matrix_b(&sys, cycle)?.spectrum())));
    match pair {
        Err(e) => vec![Check::failed("multipliers computed", &e.into())],
        Ok((st, adjoint)) => {
            let worst = st
                .multipliers
                .iter()
                .map(|mu| adjoint.iter().map(|lam| (lam * mu - 1.0).norm()).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max);
            vec![Check::within("|lambda mu - 1| for every multiplier", worst, 1e-6)]
        }
    }
}

fn round_trip(ctx: &mut Context) -> Vec<Check> {
    let sys = ctx.loaded.system.clone();
    let rebuilt = SystemSpec::from_system(&sys)
        .map_err(anyhow::Error::from)
        .and_then(|spec| Ok(serde_json::to_string(&spec)?))
        .and_then(|text| Ok(serde_json::from_str::<SystemSpec>(&text)?.build()?));
    let rebuilt = match rebuilt {
        Ok(s) => s,
        Err(e) => return vec![Check::failed("system JSON round trip", &e)],
    };
    let solved = match ctx.solved() {
        Ok(s) => s,
        Err(e) => return vec![Check::failed("limit cycle found", e)],
    };
    match find_limit_cycle(&rebuilt, &solved.section, &solved.guess, &solved.options) {
        Err(e) => vec![Check::failed("cycle of the re-ingested system", &e.into())],
        Ok(c) => {
            let mut r = (c.period - solved.cycle.period).abs() / solved.cycle.period;
            if c.segments.len() != solved.cycle.segments.len() {
                r = f64::INFINITY;
            } else {
                for (a, b) in c.segments.iter().zip(&solved.cycle.segments) {
                    r = r.max((a.entry() - b.entry()).amax() / b.entry().amax().max(1.0));
                }
            }
            vec![Check::within("re-ingested system has the same cycle", r, 1e-10)]
        }
    }
}

fn oracle(ctx: &mut Context) -> Vec<Check> {
    let sys = ctx.loaded.system.clone();
    let integrator = ctx.tol.integrator();
    let (cycle, iprc) = match ctx.iprc() {
        Ok(v) => v,
        Err(e) => return vec![Check::failed("iPRC computed", &e)],
    };
    let n = sys.dim;
    let table = PhaseLookupTable::new(&sys, cycle, PhaseLookupTable::DEFAULT_ROWS);
    let opts = OracleOptions {
        integrator,
        ..OracleOptions::default()
    };
    let breaks: Vec<f64> = cycle.breakpoints().iter().map(|b| b / cycle.period).collect();
    let phases: Vec<f64> = (0..16)
        .map(|i| (i as f64 + 0.5) / 16.0)
        .filter(|th| breaks.iter().all(|b| wrap_phase(th - b).abs() > 0.02))
        .collect();
    let jobs: Vec<(f64, usize)> = phases.iter().flat_map(|&th| (0..n).map(move |d| (th, d))).collect();
    let eps = 1e-4;
    let results = pwsm::par::map_indexed(jobs.len(), |i| {
        let (th, d) = jobs[i];
        let dir = DVector::from_fn(n, |j, _| if j == d { 1.0 } else { 0.0 });
        direct_iprc(&sys, cycle, &table, th, &dir, eps, &opts).map(|o| (o - iprc.evaluate(th)[d]).abs())
    });
    let scale = (0..2000)
        .map(|i| iprc.evaluate((i as f64 + 0.5) / 2000.0).amax())
        .fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    for r in results {
        match r {
            Ok(e) => worst = worst.max(e / scale),
            Err(e) => return vec![Check::failed("direct perturbation", &e.into())],
        }
    }
    vec![Check::within(
        format!("oracle (eps = 1e-4) vs iPRC at {} phases, relative to max |z|", phases.len()),
        worst,
        0.03,
    )]
}

/// Runs the selected suites (all when `only` is empty).
pub fn run(loaded: &Loaded, start: &StartArgs, tol: &Tolerances, t_end: f64, only: &[SuiteName]) -> Report {
    let mut ctx = Context {
        loaded,
        start,
        tol,
        t_end,
        solved: None,
        iprc: None,
    };
    let mut suites = Vec::new();
    for name in SuiteName::value_variants() {
        if !only.is_empty() && !only.contains(name) {
            continue;
        }
        let checks = match name {
            SuiteName::Structure => structure(&mut ctx),
            SuiteName::Cycle => cycle(&mut ctx),
            SuiteName::Duality => duality(&mut ctx),
            SuiteName::Transversality => transversality(&mut ctx),
            SuiteName::Normalization => normalization(&mut ctx),
            SuiteName::Matching => matching(&mut ctx),
            SuiteName::Floquet => floquet(&mut ctx),
            SuiteName::RoundTrip => round_trip(&mut ctx),
            SuiteName::Oracle => oracle(&mut ctx),
        };
        suites.push(Suite {
            name: *name,
            passed: checks.iter().all(|c| c.passed),
            checks,
        });
    }
    Report {
        source: loaded.label.clone(),
        passed: suites.iter().all(|s| s.passed),
        suites,
    }
}

pub(crate) fn reported_name(e: &(dyn std::error::Error + 'static)) -> Option<&'static str> {
    e.downcast_ref::<ReportedError>().map(|r| r.name)
}
