//! Shared command-line options and the model/system loading they drive.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use nalgebra::DVector;

use pwsm::cycle::{find_limit_cycle, CycleOptions, LimitCycle, PoincareSection};
use pwsm::integrate::{integrate_with_events, IntegratorOptions};
use pwsm::iprc::{iprc_affine, iprc_general, IprcOptions, PiecewiseIprc};
use pwsm::system::PiecewiseSystem;
use pwsm::zoo::{build_model, Model};
use pwsm::Error;

pub fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be positive, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

pub fn count(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

pub fn parse_list(s: &str) -> anyhow::Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().with_context(|| format!("bad number {t:?} in {s:?}")))
        .collect()
}

/// Where the vector field comes from, plus parameter overrides for a
/// built-in model.
#[derive(Args, Debug, Clone)]
pub struct SourceArgs {
    /// Built-in model: 1d, glass, iris, aplysia, morrison-curto or octagon.
    #[arg(long, conflicts_with = "system", required_unless_present = "system")]
    pub model: Option<String>,
    /// Piecewise-affine system as JSON (the format written by export-system).
    #[arg(long)]
    pub system: Option<PathBuf>,
    /// 1d: slope parameter.
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    /// iris, aplysia: shift parameter.
    #[arg(long, allow_hyphen_values = true)]
    pub a: Option<f64>,
    /// aplysia: saddle rate.
    #[arg(long, allow_hyphen_values = true)]
    pub rho: Option<f64>,
    /// morrison-curto: inhibition offset.
    #[arg(long, allow_hyphen_values = true)]
    pub delta: Option<f64>,
    /// morrison-curto: weight asymmetry.
    #[arg(long, allow_hyphen_values = true)]
    pub eps: Option<f64>,
    /// morrison-curto: drive.
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<f64>,
    /// iris: the four rates, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    pub l: Option<String>,
    /// glass: targets a1,b1,a2,b2,a3,b3,a4,b4.
    #[arg(long, allow_hyphen_values = true)]
    pub targets: Option<String>,
    /// Further overrides as key=value pairs, comma separated. The list keys
    /// `targets` and `l` take several comma-separated values.
    #[arg(long, allow_hyphen_values = true)]
    pub params: Option<String>,
}

/// Splits `k=v,k=v1,v2,...` into key/value lists.
fn parse_params(s: &str) -> anyhow::Result<Vec<(String, Vec<f64>)>> {
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    for token in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let (key, value) = match token.split_once('=') {
            Some((k, v)) => (Some(k.trim()), v),
            None => (None, token),
        };
        let value: f64 = value.trim().parse().with_context(|| format!("bad value in --params: {token:?}"))?;
        match key {
            Some(k) => out.push((k.to_string(), vec![value])),
            None => match out.last_mut() {
                Some((_, vals)) => vals.push(value),
                None => bail!("--params must start with key=value"),
            },
        }
    }
    Ok(out)
}

/// Expands the list keys into the model's scalar parameter names.
fn expand(key: &str, values: &[f64]) -> anyhow::Result<Vec<(String, f64)>> {
    let names: Vec<String> = match key {
        "targets" => (1..=4).flat_map(|i| [format!("a{i}"), format!("b{i}")]).collect(),
        "l" => (1..=4).map(|i| format!("l{i}")).collect(),
        _ if values.len() == 1 => return Ok(vec![(key.to_string(), values[0])]),
        _ => bail!("parameter {key} takes a single value"),
    };
    if values.len() != names.len() {
        bail!("{key} needs {} values, got {}", names.len(), values.len());
    }
    Ok(names.into_iter().zip(values.iter().copied()).collect())
}

impl SourceArgs {
    pub fn overrides(&self) -> anyhow::Result<Vec<(String, f64)>> {
        let mut out = Vec::new();
        if let Some(p) = &self.params {
            for (k, v) in parse_params(p)? {
                out.extend(expand(&k, &v)?);
            }
        }
        let scalars = [
            ("alpha", self.alpha),
            ("a", self.a),
            ("rho", self.rho),
            ("delta", self.delta),
            ("eps", self.eps),
            ("theta", self.theta),
        ];
        for (k, v) in scalars {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        }
        if let Some(l) = &self.l {
            out.extend(expand("l", &parse_list(l)?)?);
        }
        if let Some(t) = &self.targets {
            out.extend(expand("targets", &parse_list(t)?)?);
        }
        Ok(out)
    }

    pub fn load(&self) -> anyhow::Result<Loaded> {
        match (&self.model, &self.system) {
            (Some(name), _) => {
                let model = build_model(name, &self.overrides()?)?;
                Ok(Loaded {
                    label: name.clone(),
                    system: model.system.clone(),
                    model: Some(model),
                })
            }
            (None, Some(path)) => {
                if !self.overrides()?.is_empty() {
                    bail!("model parameters cannot be combined with --system");
                }
                Ok(Loaded {
                    label: path.display().to_string(),
                    system: pwsm::io::read_system(path)
                        .with_context(|| format!("reading {}", path.display()))?,
                    model: None,
                })
            }
            (None, None) => bail!("one of --model or --system is required"),
        }
    }
}

/// Integrator and solver tolerances. All must be positive.
#[derive(Args, Debug, Clone, Default)]
pub struct Tolerances {
    /// Integrator relative tolerance.
    #[arg(long, value_parser = positive, allow_hyphen_values = true)]
    pub rtol: Option<f64>,
    /// Integrator absolute tolerance.
    #[arg(long, value_parser = positive, allow_hyphen_values = true)]
    pub atol: Option<f64>,
    /// Event-location tolerance.
    #[arg(long, value_parser = positive, allow_hyphen_values = true)]
    pub event_tol: Option<f64>,
    /// Newton residual for the cycle search.
    #[arg(long, value_parser = positive, allow_hyphen_values = true)]
    pub cycle_tol: Option<f64>,
    /// Largest accepted distance of the unit eigenvalue of B from 1.
    #[arg(long, value_parser = positive, allow_hyphen_values = true)]
    pub unit_tol: Option<f64>,
}

impl Tolerances {
    pub fn integrator(&self) -> IntegratorOptions {
        let mut o = IntegratorOptions::default();
        if let Some(v) = self.rtol {
            o.rtol = v;
        }
        if let Some(v) = self.atol {
            o.atol = v;
        }
        if let Some(v) = self.event_tol {
            o.event_tol = v;
        }
        o
    }

    pub fn cycle(&self, base: CycleOptions) -> CycleOptions {
        CycleOptions {
            tol: self.cycle_tol.unwrap_or(base.tol),
            integrator: self.integrator(),
            ..base
        }
    }

    pub fn iprc(&self) -> IprcOptions {
        let mut o = IprcOptions::default();
        if let Some(v) = self.unit_tol {
            o.unit_tol = v;
        }
        o
    }
}

/// Options for locating the cycle of a system without a built-in section.
#[derive(Args, Debug, Clone)]
pub struct StartArgs {
    /// Initial state, comma separated. Required with --system; for a model
    /// it replaces the built-in initial guess.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    /// With --system: transient integrated from x0 before the last crossing
    /// is taken as the Poincaré section.
    #[arg(long, default_value_t = 100.0, value_parser = positive, allow_hyphen_values = true)]
    pub transient: f64,
}

impl StartArgs {
    pub fn x0(&self, dim: usize) -> anyhow::Result<Option<DVector<f64>>> {
        let Some(s) = &self.x0 else { return Ok(None) };
        let v = parse_list(s)?;
        if v.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: v.len() }.into());
        }
        Ok(Some(DVector::from_vec(v)))
    }
}

pub struct Loaded {
    /// Model name or system path, for reports.
    pub label: String,
    pub model: Option<Model>,
    pub system: PiecewiseSystem,
}

/// A located cycle with the section and guess it was found from.
pub struct Solved {
    pub cycle: LimitCycle,
    pub section: PoincareSection,
    pub guess: DVector<f64>,
    pub options: CycleOptions,
}

impl Loaded {
    /// A point to start simulations from: `x0` if given, else the model's
    /// initial guess on its section.
    pub fn start_point(&self, start: &StartArgs) -> anyhow::Result<DVector<f64>> {
        if let Some(x) = start.x0(self.system.dim)? {
            return Ok(x);
        }
        match &self.model {
            Some(m) => Ok(m.section.embed(&self.system, &m.guess)),
            None => bail!("--x0 is required with --system"),
        }
    }

    /// Section, initial section coordinates and cycle options.
    pub fn cycle_setup(&self, start: &StartArgs, tol: &Tolerances) -> anyhow::Result<(PoincareSection, DVector<f64>, CycleOptions)> {
        if let Some(m) = &self.model {
            let guess = match start.x0(self.system.dim)? {
                Some(x) => m.section.coords(&x),
                None => m.guess.clone(),
            };
            return Ok((m.section.clone(), guess, tol.cycle(m.cycle_options())));
        }
        let x0 = self.start_point(start)?;
        let opts = tol.cycle(CycleOptions::default());
        let traj = integrate_with_events(&self.system, &x0, (0.0, start.transient), &opts.integrator)?;
        let Some(last) = traj.events.last() else {
            return Err(Error::NoReturn { horizon: start.transient }.into());
        };
        let section = PoincareSection::new(&self.system, last.surface, last.point.clone());
        let guess = DVector::zeros(section.dim());
        Ok((section, guess, opts))
    }

    pub fn find_cycle(&self, start: &StartArgs, tol: &Tolerances) -> anyhow::Result<Solved> {
        let (section, guess, options) = self.cycle_setup(start, tol)?;
        let cycle = find_limit_cycle(&self.system, &section, &guess, &options)?;
        Ok(Solved {
            cycle,
            section,
            guess,
            options,
        })
    }

    pub fn iprc(&self, cycle: &LimitCycle, tol: &Tolerances) -> pwsm::Result<PiecewiseIprc> {
        if self.system.is_affine() {
            iprc_affine(&self.system, cycle, &tol.iprc())
        } else {
            iprc_general(&self.system, cycle, &tol.iprc())
        }
    }
}

/// Creates `dir` and returns the path of `name` inside it.
pub fn output_path(dir: &Path, name: &str) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir.join(name))
}
