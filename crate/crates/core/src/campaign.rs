//! Campaign configs and their dispatch onto the simulation modules.
//!
//! A config is one JSON object with a `kind` discriminator, a `seed`, an
//! optional `workers` count and `output` directory, and the kind-specific
//! parameters. Unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::branching::{simulate_bbm, Caps, Initial, StatisticSeries};
use crate::cumulant_pde::{csp_check, default_radii, solve_cumulant, solve_linear, CspOptions, CspVerdict, InitialData, PdeProblem, SolveStatus};
use crate::error::{Error, Result};
use crate::growth::{
    growth_fit, local_growth_experiment, pgpe_estimate, spread_check, survived, ExperimentSettings, GrowthLaw, PdeSettings, GROWTH_THRESHOLD,
};
use crate::io::{f, output_root, sha256_hex, write_outputs, RunManifest, Table};
use crate::model::{Coefficient, Domain, ModelSpec};
use crate::rng::{par_replicates, StreamKey};
use crate::schroedinger::{fit_schilder_constant, fk_estimate, tail_probability, SplittingPlan, TailMethod};
use crate::superprocess::{coupling_check, simulate_superprocess, CheckSettings, CouplingRule, InitialMeasure, SuperLevel};

fn default_window() -> Domain {
    Domain::Interval { lo: -1.0, hi: 1.0 }
}
fn default_weight_cap() -> f64 {
    1e300
}
fn default_threshold() -> f64 {
    GROWTH_THRESHOLD
}
fn default_permutations() -> usize {
    999
}
fn default_radii_vec() -> Vec<f64> {
    default_radii()
}
fn default_dx() -> f64 {
    0.05
}
fn default_pde_dt() -> f64 {
    0.005
}
fn default_tol() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FkParams {
    pub model: ModelSpec,
    pub g: Coefficient,
    pub x: Vec<f64>,
    pub t: Vec<f64>,
    pub dt: f64,
    pub reps: usize,
    #[serde(default = "default_weight_cap")]
    pub weight_cap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailParams {
    pub ell: f64,
    pub ks: Vec<f64>,
    pub reps: usize,
    pub method: TailMethod,
    #[serde(default)]
    pub plan: SplittingPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BbmParams {
    pub model: ModelSpec,
    pub init: Initial,
    pub horizon: f64,
    pub dt: f64,
    pub record_dt: f64,
    pub reps: usize,
    #[serde(default)]
    pub caps: Caps,
    #[serde(default = "default_window")]
    pub window: Domain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmParams {
    pub model: ModelSpec,
    pub initial: InitialMeasure,
    pub n: u32,
    pub horizon: f64,
    pub dt: f64,
    pub record_dt: f64,
    pub reps: usize,
    #[serde(default)]
    pub caps: Caps,
    #[serde(default = "default_window")]
    pub window: Domain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoupleParams {
    pub model: ModelSpec,
    pub x: Vec<f64>,
    pub rule: CouplingRule,
    pub n: u32,
    pub reps: usize,
    pub dt: f64,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Equation {
    Cumulant,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeParams {
    pub model: ModelSpec,
    pub initial: InitialData,
    pub equation: Equation,
    pub times: Vec<f64>,
    #[serde(default)]
    pub boundary: f64,
    #[serde(default = "default_dx")]
    pub dx: f64,
    #[serde(default = "default_pde_dt")]
    pub dt: f64,
    #[serde(default = "default_radii_vec")]
    pub radii: Vec<f64>,
    #[serde(default)]
    pub window: Option<(f64, f64)>,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CspParams {
    pub model: ModelSpec,
    pub t: f64,
    #[serde(default)]
    pub options: CspOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgpeParams {
    pub model: ModelSpec,
    pub p: f64,
    pub g: Coefficient,
    pub window: (f64, f64),
    pub lambda_grid: Vec<f64>,
    pub s_max: f64,
    pub ds: f64,
    #[serde(default)]
    pub pde: PdeSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthParams {
    pub model: ModelSpec,
    pub init: Initial,
    pub horizon: f64,
    pub dt: f64,
    pub record_dt: f64,
    pub reps: usize,
    #[serde(default)]
    pub caps: Caps,
    pub law: GrowthLaw,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpreadParams {
    pub model: ModelSpec,
    pub x0: Vec<f64>,
    pub t_min: f64,
    pub eps_grid: Vec<f64>,
    pub settings: ExperimentSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalGrowthParams {
    pub model: ModelSpec,
    pub x0: Vec<f64>,
    pub window: Domain,
    pub probes: Vec<f64>,
    pub settings: ExperimentSettings,
}

/// Kind-specific parameters, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Params {
    Fk(FkParams),
    Tail(TailParams),
    Bbm(BbmParams),
    Sbm(SbmParams),
    Couple(CoupleParams),
    Pde(PdeParams),
    Csp(CspParams),
    Pgpe(PgpeParams),
    Growth(GrowthParams),
    Spread(SpreadParams),
    LocalGrowth(LocalGrowthParams),
}

pub const KINDS: [&str; 11] = ["fk", "tail", "bbm", "sbm", "couple", "pde", "csp", "pgpe", "growth", "spread", "local-growth"];

impl Params {
    pub fn kind(&self) -> &'static str {
        match self {
            Params::Fk(_) => "fk",
            Params::Tail(_) => "tail",
            Params::Bbm(_) => "bbm",
            Params::Sbm(_) => "sbm",
            Params::Couple(_) => "couple",
            Params::Pde(_) => "pde",
            Params::Csp(_) => "csp",
            Params::Pgpe(_) => "pgpe",
            Params::Growth(_) => "growth",
            Params::Spread(_) => "spread",
            Params::LocalGrowth(_) => "local-growth",
        }
    }

    fn model(&self) -> Option<&ModelSpec> {
        match self {
            Params::Fk(p) => Some(&p.model),
            Params::Tail(_) => None,
            Params::Bbm(p) => Some(&p.model),
            Params::Sbm(p) => Some(&p.model),
            Params::Couple(p) => Some(&p.model),
            Params::Pde(p) => Some(&p.model),
            Params::Csp(p) => Some(&p.model),
            Params::Pgpe(p) => Some(&p.model),
            Params::Growth(p) => Some(&p.model),
            Params::Spread(p) => Some(&p.model),
            Params::LocalGrowth(p) => Some(&p.model),
        }
    }

    fn caps(&self) -> Option<Caps> {
        match self {
            Params::Bbm(p) => Some(p.caps),
            Params::Sbm(p) => Some(p.caps),
            Params::Growth(p) => Some(p.caps),
            Params::Spread(p) => Some(Caps {
                max_particles: p.settings.max_particles,
                max_wall: None,
            }),
            Params::LocalGrowth(p) => Some(Caps {
                max_particles: p.settings.max_particles,
                max_wall: None,
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub seed: u64,
    /// Worker threads; never affects outputs.
    pub workers: Option<usize>,
    /// Output directory relative to the output root.
    pub output: Option<String>,
    pub params: Params,
}

fn config_error(key: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        reason: reason.into(),
    }
}

/// Pull the backticked field name out of a serde message, if present.
fn offending_key(msg: &str) -> Option<&str> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(&msg[start..start + len])
}

impl CampaignConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| config_error("<document>", e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let Value::Object(mut obj) = value else {
            return Err(config_error("<document>", "expected a JSON object"));
        };
        let kind = obj
            .get("kind")
            .and_then(Value::as_str)
            .ok_or_else(|| config_error("kind", format!("missing or not a string; one of {}", KINDS.join(", "))))?
            .to_string();
        if !KINDS.contains(&kind.as_str()) {
            return Err(config_error("kind", format!("unknown kind `{kind}`; one of {}", KINDS.join(", "))));
        }
        let seed = match obj.remove("seed") {
            Some(v) => v.as_u64().ok_or_else(|| config_error("seed", "must be a nonnegative integer"))?,
            None => return Err(config_error("seed", "missing")),
        };
        let workers = match obj.remove("workers") {
            None | Some(Value::Null) => None,
            Some(v) => Some(
                v.as_u64()
                    .filter(|&w| w > 0)
                    .ok_or_else(|| config_error("workers", "must be a positive integer"))? as usize,
            ),
        };
        let output = match obj.remove("output") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s),
            Some(_) => return Err(config_error("output", "must be a string")),
        };
        let params: Params = serde_json::from_value(Value::Object(obj)).map_err(|e| {
            let msg = e.to_string();
            config_error(offending_key(&msg).unwrap_or(&kind).to_string(), msg)
        })?;
        let cfg = Self {
            seed,
            workers,
            output,
            params,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_value(&self) -> Value {
        let mut v = serde_json::to_value(&self.params).expect("params serialize");
        let obj = v.as_object_mut().expect("tagged object");
        obj.insert("seed".into(), json!(self.seed));
        if let Some(w) = self.workers {
            obj.insert("workers".into(), json!(w));
        }
        if let Some(o) = &self.output {
            obj.insert("output".into(), json!(o));
        }
        v
    }

    /// Content hash of the config without `workers` and `output`, which do
    /// not influence results.
    pub fn digest(&self) -> String {
        let mut v = self.to_value();
        if let Some(o) = v.as_object_mut() {
            o.remove("workers");
            o.remove("output");
        }
        // serde_json maps are ordered by key, so this is canonical
        sha256_hex(v.to_string().as_bytes())
    }

    fn validate(&self) -> Result<()> {
        if let Some(m) = self.params.model() {
            m.validate().map_err(|e| match e {
                Error::Parameter { name, reason } => config_error(format!("model.{name}"), reason),
                other => config_error("model", other.to_string()),
            })?;
        }
        let pos = |key: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(config_error(key, "must be positive"))
            }
        };
        let reps = |r: usize| if r == 0 { Err(config_error("reps", "must be at least 1")) } else { Ok(()) };
        match &self.params {
            Params::Fk(p) => {
                pos("dt", p.dt)?;
                reps(p.reps)?;
                if p.x.len() != p.model.dim {
                    return Err(config_error("x", "length must equal model.dim"));
                }
            }
            Params::Tail(p) => {
                pos("ell", p.ell)?;
                reps(p.reps)?;
            }
            Params::Bbm(p) => {
                pos("horizon", p.horizon)?;
                pos("dt", p.dt)?;
                pos("record_dt", p.record_dt)?;
                reps(p.reps)?;
            }
            Params::Sbm(p) => {
                pos("horizon", p.horizon)?;
                pos("dt", p.dt)?;
                pos("record_dt", p.record_dt)?;
                reps(p.reps)?;
                if p.n == 0 {
                    return Err(config_error("n", "must be a positive integer"));
                }
            }
            Params::Couple(p) => {
                pos("dt", p.dt)?;
                reps(p.reps)?;
                if p.n == 0 {
                    return Err(config_error("n", "must be a positive integer"));
                }
            }
            Params::Pde(p) => {
                pos("dx", p.dx)?;
                pos("dt", p.dt)?;
                if p.times.is_empty() {
                    return Err(config_error("times", "must be nonempty"));
                }
            }
            Params::Csp(p) => pos("t", p.t)?,
            Params::Pgpe(p) => {
                pos("s_max", p.s_max)?;
                pos("ds", p.ds)?;
            }
            Params::Growth(p) => {
                pos("horizon", p.horizon)?;
                pos("dt", p.dt)?;
                pos("record_dt", p.record_dt)?;
                reps(p.reps)?;
            }
            Params::Spread(p) => reps(p.settings.reps)?,
            Params::LocalGrowth(p) => reps(p.settings.reps)?,
        }
        Ok(())
    }
}

/// Template config for `describe`.
pub fn template(kind: &str) -> Result<Value> {
    let bm = |beta: Coefficient| ModelSpec::brownian(1, beta, Coefficient::constant(1.0));
    let bump = Coefficient::bump(0.0, 1.0, 1.0);
    let settings = ExperimentSettings {
        process: crate::growth::ProcessKind::Super { n: 10 },
        horizon: 4.0,
        dt: 0.01,
        record_dt: 0.05,
        max_particles: 1_000_000,
        reps: 200,
    };
    let params = match kind {
        "fk" => Params::Fk(FkParams {
            model: bm(Coefficient::constant(0.0)),
            g: Coefficient::constant(1.0),
            x: vec![0.0],
            t: vec![1.0],
            dt: 1e-3,
            reps: 10_000,
            weight_cap: default_weight_cap(),
        }),
        "tail" => Params::Tail(TailParams {
            ell: 1.0,
            ks: vec![2.0, 3.0, 4.0],
            reps: 10_000,
            method: TailMethod::Splitting,
            plan: SplittingPlan::default(),
        }),
        "bbm" => Params::Bbm(BbmParams {
            model: bm(Coefficient::power(1.0, 1.0, 1.0)),
            init: Initial::poisson_origin(1),
            horizon: 3.0,
            dt: 0.01,
            record_dt: 0.05,
            reps: 50,
            caps: Caps::default(),
            window: default_window(),
        }),
        "sbm" => Params::Sbm(SbmParams {
            model: bm(Coefficient::constant(1.0)),
            initial: InitialMeasure::delta(vec![0.0]),
            n: 100,
            horizon: 1.0,
            dt: 0.01,
            record_dt: 0.1,
            reps: 100,
            caps: Caps::default(),
            window: default_window(),
        }),
        "couple" => Params::Couple(CoupleParams {
            model: bm(Coefficient::constant(1.0)),
            x: vec![0.0],
            rule: CouplingRule::FixedTime { t: 1.0 },
            n: 100,
            reps: 10_000,
            dt: 0.01,
            permutations: default_permutations(),
        }),
        "pde" => Params::Pde(PdeParams {
            model: bm(Coefficient::constant(1.0)),
            initial: InitialData::Function { g: bump },
            equation: Equation::Cumulant,
            times: vec![0.5, 1.0],
            boundary: 0.0,
            dx: default_dx(),
            dt: default_pde_dt(),
            radii: default_radii(),
            window: None,
            tol: default_tol(),
        }),
        "csp" => Params::Csp(CspParams {
            model: bm(Coefficient::constant(1.0)),
            t: 1.0,
            options: CspOptions::default(),
        }),
        "pgpe" => Params::Pgpe(PgpeParams {
            model: bm(Coefficient::power(0.0, 1.0, 1.0)),
            p: 3.0,
            g: bump,
            window: (-1.0, 1.0),
            lambda_grid: (1..=10).map(|i| i as f64 * 0.05).collect(),
            s_max: 4.0,
            ds: 0.05,
            pde: PdeSettings::default(),
        }),
        "growth" => Params::Growth(GrowthParams {
            model: bm(Coefficient::power(1.0, 1.0, 1.0)),
            init: Initial::poisson_origin(1),
            horizon: 6.0,
            dt: 0.01,
            record_dt: 0.02,
            reps: 40,
            caps: Caps::default(),
            law: GrowthLaw::PowerExp { q_fixed: None },
            threshold: GROWTH_THRESHOLD,
        }),
        "spread" => Params::Spread(SpreadParams {
            model: ModelSpec::brownian(1, Coefficient::power(1.0, 1.0, 2.0), Coefficient::power(1.0, 1.0, 2.0)),
            x0: vec![0.0],
            t_min: 1.0,
            eps_grid: vec![0.0, 0.25, 0.5, 1.0],
            settings,
        }),
        "local-growth" => Params::LocalGrowth(LocalGrowthParams {
            model: ModelSpec::brownian(1, Coefficient::power(1.0, 1.0, 1.0), Coefficient::power(1.0, 1.0, 1.0)),
            x0: vec![0.0],
            window: default_window(),
            probes: vec![3.0],
            settings,
        }),
        other => return Err(config_error("kind", format!("unknown kind `{other}`; one of {}", KINDS.join(", ")))),
    };
    Ok(CampaignConfig {
        seed: 1,
        workers: None,
        output: None,
        params,
    }
    .to_value())
}

/// In-memory result of a campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub tables: Vec<Table>,
    pub summary: Value,
    /// Scientific outcome flagged inconclusive (exit status 3).
    pub inconclusive: bool,
    pub caps_hit: Option<String>,
}

fn record_grid(horizon: f64, record_dt: f64) -> Vec<f64> {
    let k = (horizon / record_dt).round().max(1.0) as usize;
    (0..=k).map(|j| horizon * j as f64 / k as f64).collect()
}

fn series_table(name: &str, series: &[StatisticSeries]) -> Table {
    let mut t = Table::new(name, &["t", "replicate", "total_mass", "rightmost", "radius", "local_mass"]);
    for (i, s) in series.iter().enumerate() {
        for r in &s.records {
            t.push(vec![f(r.t), i.to_string(), f(r.total_mass), f(r.rightmost), f(r.radius), f(r.local_mass)]);
        }
    }
    t
}

fn caps_summary(series: &[StatisticSeries]) -> String {
    let hit = series.iter().filter(|s| s.caps_hit).count();
    format!("{hit} of {} replicates hit caps", series.len())
}

/// Run a campaign on the current rayon pool.
pub fn execute(cfg: &CampaignConfig) -> Result<RunOutcome> {
    let key = StreamKey::new(cfg.seed).tagged(cfg.params.kind(), 0);
    let mut tables = Vec::new();
    let mut inconclusive = false;
    let mut caps_hit = None;
    let summary = match &cfg.params {
        Params::Fk(p) => {
            let mut t = Table::new("fk", &["t", "mean", "stderr", "truncation_fraction"]);
            let mut rows = Vec::new();
            for (i, &time) in p.t.iter().enumerate() {
                let e = fk_estimate(&p.model, &p.g, &p.x, time, p.dt, p.reps, p.weight_cap, key.child(i as u64))?;
                inconclusive |= e.divergence_suspected;
                t.push(vec![f(time), f(e.mean), f(e.stderr), f(e.truncation_fraction)]);
                rows.push(json!({"t": time, "estimate": e}));
            }
            tables.push(t);
            json!({ "estimates": rows })
        }
        Params::Tail(p) => {
            let mut t = Table::new("tail", &["k", "prob", "log_prob", "stderr"]);
            let mut est = Vec::new();
            for (i, &k) in p.ks.iter().enumerate() {
                let e = tail_probability(p.ell, k, p.reps, p.method, p.plan, key.tagged("K", i as u64))?;
                t.push(vec![f(k), f(e.prob), f(e.log_prob), f(e.stderr)]);
                est.push(e);
            }
            tables.push(t);
            let fit = if est.len() >= 3 && est.iter().all(|e| e.prob > 0.0) {
                let pts: Vec<(f64, f64)> = est.iter().map(|e| (e.k, e.log_prob)).collect();
                let se: Vec<f64> = est.iter().map(|e| e.stderr / e.prob).collect();
                Some(fit_schilder_constant(p.ell, &pts, &se)?)
            } else {
                inconclusive |= est.iter().any(|e| e.underflow);
                None
            };
            json!({ "estimates": est, "schilder_fit": fit })
        }
        Params::Bbm(p) => {
            let record = record_grid(p.horizon, p.record_dt);
            let series = par_replicates(key, p.reps, |_, rng| {
                simulate_bbm(&p.model, &p.init, p.horizon, p.dt, p.caps, &record, &p.window, rng).map(|r| r.0)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            tables.push(series_table("bbm", &series));
            caps_hit = Some(caps_summary(&series));
            let surv = series.iter().filter(|s| survived(s)).count();
            json!({ "replicates": p.reps, "surviving": surv, "caps_hit": caps_hit })
        }
        Params::Sbm(p) => {
            let level = SuperLevel::new(p.n)?;
            let record = record_grid(p.horizon, p.record_dt);
            let runs = par_replicates(key, p.reps, |_, rng| {
                simulate_superprocess(&p.model, &p.initial, level, p.horizon, p.dt, p.caps, &record, &p.window, None, rng)
                    .map(|r| (r.series, r.clip_events, r.extinction_time))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let series: Vec<StatisticSeries> = runs.iter().map(|r| r.0.clone()).collect();
            tables.push(series_table("sbm", &series));
            let clips: u64 = runs.iter().map(|r| r.1).sum();
            let extinct = runs.iter().filter(|r| r.2.is_some()).count();
            caps_hit = Some(caps_summary(&series));
            json!({
                "replicates": p.reps,
                "extinct_fraction": extinct as f64 / p.reps as f64,
                "clip_events": clips,
                "valid": clips == 0,
                "caps_hit": caps_hit,
            })
        }
        Params::Couple(p) => {
            let settings = CheckSettings {
                level: SuperLevel::new(p.n)?,
                reps: p.reps,
                dt: p.dt,
                permutations: p.permutations,
            };
            let r = coupling_check(&p.model, &p.x, p.rule, settings, key)?;
            let mut t = Table::new("couple", &["bin", "direct", "poissonized"]);
            for ((b, a), c) in r.bins.iter().zip(&r.counts_direct).zip(&r.counts_poissonized) {
                t.push(vec![b.to_string(), a.to_string(), c.to_string()]);
            }
            tables.push(t);
            inconclusive |= r.inconclusive;
            json!({ "report": r })
        }
        Params::Pde(p) => {
            let mut problem = PdeProblem::new(p.model.clone(), p.initial.clone());
            problem.boundary = p.boundary;
            problem.dx = p.dx;
            problem.dt = p.dt;
            problem.radii = p.radii.clone();
            problem.tol = p.tol;
            if let Some((lo, hi)) = p.window {
                problem = problem.with_window(lo, hi);
            }
            let mut t = Table::new("pde", &["t", "x", "u"]);
            let mut statuses = Vec::new();
            for &time in &p.times {
                let sol = match p.equation {
                    Equation::Cumulant => solve_cumulant(&problem, time)?,
                    Equation::Linear => solve_linear(&problem, time)?,
                };
                inconclusive |= sol.status != SolveStatus::Converged;
                let w = sol.solution.restrict(problem.window.0, problem.window.1)?;
                for (x, u) in w.grid.points().into_iter().zip(&w.values) {
                    t.push(vec![f(time), f(x), f(*u)]);
                }
                statuses.push(json!({"t": time, "status": sol.status, "exhaustion": sol.history}));
            }
            tables.push(t);
            json!({ "solves": statuses })
        }
        Params::Csp(p) => {
            let r = csp_check(&p.model, p.t, &p.options)?;
            let mut t = Table::new("csp", &["radius", "boundary", "window_max"]);
            for row in &r.rows {
                t.push(vec![f(row.radius), f(row.boundary), f(row.window_max)]);
            }
            tables.push(t);
            inconclusive |= r.verdict == CspVerdict::Inconclusive;
            json!({ "verdict": r.verdict })
        }
        Params::Pgpe(p) => {
            let e = pgpe_estimate(&p.model, p.p, &p.g, p.window, &p.lambda_grid, p.s_max, p.ds, &p.pde)?;
            let mut t = Table::new("pgpe", &["lambda", "finite", "log_integral", "tail_slope"]);
            for r in &e.rows {
                let fin = (r.verdict == crate::growth::Verdict::Finite) as u8;
                t.push(vec![f(r.lambda), fin.to_string(), f(r.log_integral), f(r.tail_slope)]);
            }
            tables.push(t);
            json!({
                "p": e.p,
                "bracket": e.bracket,
                "growth_coefficient": e.growth_coefficient,
                "s_max": e.s_max,
                "truncated": e.truncated,
            })
        }
        Params::Growth(p) => {
            let record = record_grid(p.horizon, p.record_dt);
            let series = crate::growth::growth_runs(&p.model, &p.init, p.horizon, p.dt, p.caps, &record, p.reps, key)?;
            tables.push(series_table("growth_records", &series));
            caps_hit = Some(caps_summary(&series));
            let surv = series.iter().filter(|s| survived(s)).count();
            match growth_fit(&series, p.law, p.threshold) {
                Ok(fit) => json!({ "fit": fit, "surviving": surv, "caps_hit": caps_hit }),
                Err(Error::InsufficientData(why)) => {
                    inconclusive = true;
                    json!({ "fit": null, "reason": why, "surviving": surv, "caps_hit": caps_hit })
                }
                Err(e) => return Err(e),
            }
        }
        Params::Spread(p) => {
            let r = spread_check(&p.model, &p.x0, p.t_min, &p.eps_grid, &p.settings, key)?;
            let mut t = Table::new("spread", &["replicate", "max_log_m_over_t"]);
            for (i, m) in r.maxima.iter().enumerate() {
                t.push(vec![i.to_string(), f(*m)]);
            }
            tables.push(t);
            let mut e = Table::new("spread_exceedance", &["eps", "fraction"]);
            for (eps, fr) in &r.exceedance {
                e.push(vec![f(*eps), f(*fr)]);
            }
            tables.push(e);
            json!({
                "p99": r.p99,
                "surviving": r.surviving,
                "caps_hit_fraction": r.caps_hit_fraction,
                "mean_window_end": r.mean_window_end,
            })
        }
        Params::LocalGrowth(p) => {
            let rows = local_growth_experiment(&p.model, &p.x0, &p.window, &p.probes, &p.settings, key)?;
            let mut t = Table::new("local_growth", &["lambda", "fraction", "surviving", "reps"]);
            for r in &rows {
                t.push(vec![f(r.lambda), f(r.fraction), r.surviving.to_string(), r.reps.to_string()]);
            }
            tables.push(t);
            json!({ "rows": rows })
        }
    };
    Ok(RunOutcome {
        tables,
        summary,
        inconclusive,
        caps_hit,
    })
}

/// Run inside a pool of the configured size (or the global pool).
pub fn execute_with_workers(cfg: &CampaignConfig) -> Result<RunOutcome> {
    match cfg.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| config_error("workers", e.to_string()))?
            .install(|| execute(cfg)),
        None => execute(cfg),
    }
}

/// Exit status of a finished run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    Internal = 1,
    Validation = 2,
    Inconclusive = 3,
}

impl ExitStatus {
    pub fn for_error(e: &Error) -> Self {
        match e {
            Error::Config { .. } | Error::Parameter { .. } | Error::Domain { .. } | Error::Model(_) | Error::Json(_) => {
                ExitStatus::Validation
            }
            Error::InsufficientData(_) | Error::Underflow { .. } => ExitStatus::Inconclusive,
            Error::InconsistentGrid(_) | Error::Io(_) => ExitStatus::Internal,
        }
    }
}

/// Execute and persist a campaign; returns the output directory and status.
pub fn run(cfg: &CampaignConfig, root: &Path) -> Result<(PathBuf, ExitStatus, RunManifest)> {
    let digest = cfg.digest();
    let dir = root.join(cfg.output.clone().unwrap_or_else(|| format!("{}-{}", cfg.params.kind(), &digest[..12])));
    let start = Instant::now();
    let outcome = execute_with_workers(cfg)?;
    let manifest = RunManifest {
        config_digest: digest.clone(),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").into(),
        kind: cfg.params.kind().into(),
        caps: cfg.params.caps(),
        files: Vec::new(),
        wall_time_s: start.elapsed().as_secs_f64(),
        caps_hit: outcome.caps_hit.clone(),
    };
    let mut summary = outcome.summary.clone();
    if let Some(o) = summary.as_object_mut() {
        o.insert("manifest_digest".into(), json!(digest));
        o.insert("inconclusive".into(), json!(outcome.inconclusive));
    }
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.json"), serde_json::to_vec_pretty(&cfg.to_value())?)?;
    let manifest = write_outputs(&dir, &digest, &outcome.tables, &summary, manifest)?;
    let status = if outcome.inconclusive { ExitStatus::Inconclusive } else { ExitStatus::Success };
    Ok((dir, status, manifest))
}

/// Parse, run and persist a config file under the output root.
pub fn run_file(path: &Path) -> Result<(PathBuf, ExitStatus, RunManifest)> {
    let text = std::fs::read_to_string(path)?;
    let cfg = CampaignConfig::parse(&text)?;
    run(&cfg, &output_root())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_template_round_trips() {
        for kind in KINDS {
            let v = template(kind).unwrap();
            let cfg = CampaignConfig::from_value(v.clone()).unwrap();
            assert_eq!(cfg.to_value(), v, "{kind}");
            assert_eq!(cfg.params.kind(), kind);
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_name() {
        let mut v = template("fk").unwrap();
        v["bogus"] = json!(1);
        match CampaignConfig::from_value(v) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "bogus"),
            other => panic!("{other:?}"),
        }
        let mut v = template("pde").unwrap();
        v["model"]["beta"]["extra"] = json!(0);
        assert!(matches!(CampaignConfig::from_value(v), Err(Error::Config { .. })));
    }

    #[test]
    fn nonpositive_alpha_points_at_the_key() {
        let mut v = template("sbm").unwrap();
        v["model"]["alpha"] = json!({"type": "constant", "c": 0.0});
        match CampaignConfig::from_value(v) {
            Err(e @ Error::Config { .. }) => {
                assert_eq!(ExitStatus::for_error(&e), ExitStatus::Validation);
                assert!(e.to_string().contains("model.alpha"), "{e}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn digest_ignores_workers_and_output() {
        let mut v = template("fk").unwrap();
        let a = CampaignConfig::from_value(v.clone()).unwrap().digest();
        v["workers"] = json!(4);
        v["output"] = json!("elsewhere");
        assert_eq!(CampaignConfig::from_value(v.clone()).unwrap().digest(), a);
        v["seed"] = json!(2);
        assert_ne!(CampaignConfig::from_value(v).unwrap().digest(), a);
    }

    #[test]
    fn minimal_fk_run_has_unit_mean() {
        let mut v = template("fk").unwrap();
        v["reps"] = json!(200);
        v["dt"] = json!(0.05);
        let cfg = CampaignConfig::from_value(v).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (out, status, manifest) = run(&cfg, dir.path()).unwrap();
        assert_eq!(status, ExitStatus::Success);
        let summary: Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["estimates"][0]["estimate"]["mean"], json!(1.0));
        let csv = std::fs::read_to_string(out.join("fk.csv")).unwrap();
        assert!(csv.starts_with("t,mean,stderr,truncation_fraction\n"));
        assert!(csv.ends_with(&format!("# manifest-digest: {}\n", manifest.config_digest)));
        assert!(out.join("fk.dat").exists() && out.join("plot.gp").exists());
    }
}
