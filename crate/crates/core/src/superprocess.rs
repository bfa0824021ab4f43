//! Level-`n` particle approximation of the superdiffusion `X` and the
//! Poissonization bridge to the branching diffusion.
//!
//! At level `n` every particle carries mass `1/n`. Branching events occur at
//! rate `2nα(x)`; at an event the particle is replaced by two copies with
//! probability `½ + β(x)/(4nα(x))` and by none otherwise. The net growth rate is
//! `β` and the quadratic coefficient of the limiting branching mechanism is `α`.

use rand::distributions::WeightedIndex;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::branching::{aggregate, simulate_bbm, Caps, Initial, ParticlePopulation, Record, StatisticSeries};
use crate::error::{ensure, param, Error, Result};
use crate::model::{Coefficient, Domain, ModelSpec};
use crate::particles::{rates, Branching, Engine};
use crate::rng::{par_replicates, StreamKey};
use crate::stats::{chi_square_permutation, ks_two_sample, mean_stderr, KsResult};

/// Approximation level; particle mass is `1/n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuperLevel {
    pub n: u32,
}

impl SuperLevel {
    pub fn new(n: u32) -> Result<Self> {
        ensure(n > 0, "n", "level must be a positive integer")?;
        Ok(Self { n })
    }

    pub fn mass(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn event_rate(&self, model: &ModelSpec, x: &[f64]) -> f64 {
        2.0 * self.n as f64 * model.alpha.eval(x)
    }

    /// Unclipped split probability.
    pub fn split_prob(&self, model: &ModelSpec, x: &[f64]) -> f64 {
        0.5 + model.beta.eval(x) / (4.0 * self.n as f64 * model.alpha.eval(x))
    }

    fn branching(&self) -> Branching {
        Branching::Super { n: self.n as f64 }
    }
}

/// Atom masses of a snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AtomMass {
    /// Every atom carries the same mass.
    Uniform(f64),
    PerAtom(Vec<f64>),
}

/// A finite atomic measure at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSnapshot {
    pub dim: usize,
    pub time: f64,
    /// Flat coordinates, `dim` per atom.
    pub positions: Vec<f64>,
    pub masses: AtomMass,
}

impl MeasureSnapshot {
    pub fn uniform(dim: usize, time: f64, positions: Vec<f64>, mass: f64) -> Self {
        Self {
            dim,
            time,
            positions,
            masses: AtomMass::Uniform(mass),
        }
    }

    /// Atoms given as `(position, mass)` pairs.
    pub fn from_atoms(dim: usize, time: f64, atoms: &[(Vec<f64>, f64)]) -> Result<Self> {
        let mut positions = Vec::with_capacity(atoms.len() * dim);
        let mut masses = Vec::with_capacity(atoms.len());
        for (x, m) in atoms {
            ensure(x.len() == dim, "atoms", "position dimension mismatch")?;
            ensure(*m >= 0.0 && m.is_finite(), "atoms", "mass must be finite and nonnegative")?;
            positions.extend_from_slice(x);
            masses.push(*m);
        }
        Ok(Self {
            dim,
            time,
            positions,
            masses: AtomMass::PerAtom(masses),
        })
    }

    pub fn atom_count(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn mass_of(&self, i: usize) -> f64 {
        match &self.masses {
            AtomMass::Uniform(m) => *m,
            AtomMass::PerAtom(v) => v[i],
        }
    }

    pub fn total_mass(&self) -> f64 {
        match &self.masses {
            AtomMass::Uniform(m) => self.atom_count() as f64 * m,
            AtomMass::PerAtom(v) => crate::stats::pairwise_sum(v),
        }
    }

    /// `⟨g, X⟩`.
    pub fn integrate(&self, g: &Coefficient) -> f64 {
        let vals: Vec<f64> = self
            .positions
            .chunks(self.dim)
            .enumerate()
            .map(|(i, p)| g.eval(p) * self.mass_of(i))
            .collect();
        crate::stats::pairwise_sum(&vals)
    }
}

/// Initial measure: atoms `(x, m)`, each realized at level `n` as `round(m·n)`
/// particles of mass `1/n` at `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialMeasure {
    pub atoms: Vec<InitialAtom>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialAtom {
    pub x: Vec<f64>,
    #[serde(default = "one")]
    pub mass: f64,
}

fn one() -> f64 {
    1.0
}

impl InitialMeasure {
    /// `δ_x`.
    pub fn delta(x: Vec<f64>) -> Self {
        Self {
            atoms: vec![InitialAtom { x, mass: 1.0 }],
        }
    }

    /// `k` atoms of mass `1/n` at `x`.
    pub fn k_atoms(k: u32, x: Vec<f64>, level: SuperLevel) -> Self {
        Self {
            atoms: vec![InitialAtom {
                x,
                mass: k as f64 / level.n as f64,
            }],
        }
    }

    pub fn zero() -> Self {
        Self { atoms: Vec::new() }
    }

    pub fn sum(&self, other: &Self) -> Self {
        Self {
            atoms: self.atoms.iter().chain(&other.atoms).cloned().collect(),
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    pub fn realize(&self, dim: usize, level: SuperLevel) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for a in &self.atoms {
            ensure(a.x.len() == dim, "initial", "atom dimension mismatch")?;
            ensure(a.mass >= 0.0 && a.mass.is_finite(), "initial", "atom mass must be finite and nonnegative")?;
            let k = (a.mass * level.n as f64).round() as usize;
            for _ in 0..k {
                out.extend_from_slice(&a.x);
            }
        }
        Ok(out)
    }
}

/// Optional rule that ends a run early; evaluated at step boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StopRule {
    /// First step boundary with `|X| ≥ c`.
    MassAtLeast { c: f64 },
    /// Stop immediately.
    AtTime0,
}

impl StopRule {
    fn fires(&self, mass: f64) -> bool {
        match *self {
            StopRule::MassAtLeast { c } => mass >= c,
            StopRule::AtTime0 => true,
        }
    }
}

/// Output of one superprocess replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperRun {
    pub snapshots: Vec<MeasureSnapshot>,
    pub series: StatisticSeries,
    pub clip_events: u64,
    /// `false` when any split probability had to be clipped.
    pub valid: bool,
    pub extinction_time: Option<f64>,
    /// State when the stop rule fired, or at the horizon if it never did.
    pub final_snapshot: MeasureSnapshot,
    pub stopped: bool,
}

/// Simulate the level-`n` approximation from `μ0` up to `horizon`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_superprocess<R: Rng + ?Sized>(
    model: &ModelSpec,
    mu0: &InitialMeasure,
    level: SuperLevel,
    horizon: f64,
    dt: f64,
    caps: Caps,
    record_times: &[f64],
    window: &Domain,
    stop: Option<StopRule>,
    rng: &mut R,
) -> Result<SuperRun> {
    model.validate()?;
    ensure(level.n > 0, "n", "level must be positive")?;
    ensure(horizon >= 0.0, "horizon", "must be nonnegative")?;
    ensure(dt > 0.0, "dt", "must be positive")?;
    ensure(
        record_times.windows(2).all(|w| w[0] < w[1]),
        "record_times",
        "must be strictly increasing",
    )?;
    let mass = level.mass();
    let positions = mu0.realize(model.dim, level)?;
    let mut engine = Engine::new(model, level.branching(), positions, rng.gen())?;
    // clipping over the initial support
    let mut clip_events = 0u64;
    for p in engine.positions.chunks(engine.dim) {
        clip_events += rates(model, level.branching(), p)?.2 as u64;
    }
    let snap = |e: &Engine<'_>, t: f64| MeasureSnapshot::uniform(e.dim, t, e.positions.clone(), mass);
    let rec = |e: &Engine<'_>, t: f64| {
        let (m, r, rho, local) = aggregate(e.dim, &e.positions, mass, window);
        Record {
            t,
            total_mass: m,
            rightmost: r,
            radius: rho,
            local_mass: local,
        }
    };
    let mut snapshots = Vec::new();
    let mut records = Vec::new();
    let mut next_record = 0usize;
    let mut caps_hit = false;
    let mut cap_time = None;
    let mut extinction_time = None;
    let mut stopped = false;
    let start = caps.max_wall.map(|_| std::time::Instant::now());
    loop {
        while next_record < record_times.len() && record_times[next_record] <= engine.time + 1e-12 {
            let t = record_times[next_record];
            if t <= horizon + 1e-12 {
                snapshots.push(snap(&engine, t));
                records.push(rec(&engine, t));
            }
            next_record += 1;
        }
        if let Some(rule) = stop {
            if rule.fires(engine.count() as f64 * mass) {
                stopped = true;
                break;
            }
        }
        if engine.time >= horizon - 1e-12 {
            break;
        }
        if engine.count() == 0 {
            // extinction is absorbing
            extinction_time.get_or_insert(engine.time);
            while next_record < record_times.len() && record_times[next_record] <= horizon + 1e-12 {
                let t = record_times[next_record];
                snapshots.push(snap(&engine, t));
                records.push(rec(&engine, t));
                next_record += 1;
            }
            break;
        }
        let until = record_times.get(next_record).copied().unwrap_or(horizon).min(horizon);
        let h = engine.adaptive_step(dt, until);
        engine.step(h)?;
        if engine.count() == 0 {
            extinction_time.get_or_insert(engine.time);
        }
        if engine.count() > caps.max_particles {
            caps_hit = true;
            cap_time = Some(engine.time);
            break;
        }
        if let (Some(s), Some(w)) = (start, caps.max_wall) {
            if s.elapsed().as_secs_f64() > w {
                caps_hit = true;
                cap_time = Some(engine.time);
                break;
            }
        }
    }
    clip_events += engine.clip_events;
    let final_snapshot = snap(&engine, engine.time);
    Ok(SuperRun {
        snapshots,
        series: StatisticSeries {
            records,
            caps_hit,
            cap_time,
        },
        clip_events,
        valid: clip_events == 0,
        extinction_time,
        final_snapshot,
        stopped,
    })
}

/// Sample a Poisson point process with intensity measure `snapshot`.
pub fn poissonize<R: Rng + ?Sized>(snapshot: &MeasureSnapshot, rng: &mut R) -> Result<ParticlePopulation> {
    let total = snapshot.total_mass();
    ensure(total.is_finite() && total < 1e12, "snapshot", "total mass too large to poissonize")?;
    let dim = snapshot.dim;
    if total <= 0.0 {
        return Ok(ParticlePopulation::empty(dim, snapshot.time));
    }
    let count = Poisson::new(total).map_err(|e| param("snapshot", e.to_string()))?.sample(rng) as usize;
    let atoms = snapshot.atom_count();
    let mut out = Vec::with_capacity(count * dim);
    match &snapshot.masses {
        AtomMass::Uniform(_) => {
            for _ in 0..count {
                let i = rng.gen_range(0..atoms);
                out.extend_from_slice(&snapshot.positions[i * dim..(i + 1) * dim]);
            }
        }
        AtomMass::PerAtom(m) => {
            let w = WeightedIndex::new(m).map_err(|e| param("snapshot", e.to_string()))?;
            for _ in 0..count {
                let i = w.sample(rng);
                out.extend_from_slice(&snapshot.positions[i * dim..(i + 1) * dim]);
            }
        }
    }
    Ok(ParticlePopulation::from_points(dim, out, snapshot.time))
}

/// `ln P(Y = j)` for `Y ~ Poisson(λ)`.
fn poisson_log_pmf(lambda: f64, j: u64) -> f64 {
    let mut lf = 0.0;
    for i in 2..=j {
        lf += (i as f64).ln();
    }
    -lambda + j as f64 * lambda.ln() - lf
}

/// `P(Y ≤ y)` by direct summation.
pub fn poisson_cdf(lambda: f64, y: f64) -> f64 {
    if y < 0.0 {
        return 0.0;
    }
    let top = y.floor() as u64;
    let terms: Vec<f64> = (0..=top).map(|j| poisson_log_pmf(lambda, j).exp()).collect();
    crate::stats::pairwise_sum(&terms).min(1.0)
}

/// `P(Y ≥ y)` by direct summation of the upper terms.
pub fn poisson_upper_tail(lambda: f64, y: f64) -> f64 {
    let start = y.max(0.0).ceil() as u64;
    let mut terms = Vec::new();
    let mut j = start;
    loop {
        let t = poisson_log_pmf(lambda, j).exp();
        terms.push(t);
        if j as f64 > lambda && t < 1e-300_f64.max(1e-20 * terms[0]) {
            break;
        }
        j += 1;
    }
    crate::stats::pairwise_sum(&terms).min(1.0)
}

/// `C_k^λ` with `C_k = (e/k)^k / e`, bounding `P(Y ≤ kλ)` for `k < 1` and
/// `P(Y ≥ kλ)` for `k > 1`.
pub fn poisson_tail_bound(lambda: f64, k: f64) -> Result<f64> {
    ensure(lambda > 0.0 && lambda.is_finite(), "lambda", "must be positive")?;
    ensure(k > 0.0 && k.is_finite(), "k", "must be positive")?;
    Ok((lambda * (k - k * k.ln() - 1.0)).exp())
}

/// The exact probability that [`poisson_tail_bound`] bounds.
pub fn poisson_tail_exact(lambda: f64, k: f64) -> f64 {
    if k < 1.0 {
        poisson_cdf(lambda, k * lambda)
    } else {
        poisson_upper_tail(lambda, k * lambda)
    }
}

/// Time (or rule) at which the two arms of a coupling check are compared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CouplingRule {
    FixedTime { t: f64 },
    /// First step boundary with `|X| ≥ c`, cut off at `horizon`.
    FirstMassAtLeast { c: f64, horizon: f64 },
    AtTime0,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub statistic: f64,
    pub p_value: f64,
    pub bins: Vec<u64>,
    pub counts_direct: Vec<u64>,
    pub counts_poissonized: Vec<u64>,
    pub mean_direct: f64,
    pub mean_poissonized: f64,
    pub censored_fraction: f64,
    pub inconclusive: bool,
    pub clip_events: u64,
}

/// Settings shared by the coupling and branching-property checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckSettings {
    pub level: SuperLevel,
    pub reps: usize,
    pub dt: f64,
    pub permutations: usize,
}

impl Default for CheckSettings {
    fn default() -> Self {
        Self {
            level: SuperLevel { n: 100 },
            reps: 10_000,
            dt: 0.01,
            permutations: 999,
        }
    }
}

/// Censored fraction above which a stopping-rule comparison is inconclusive.
pub const CENSOR_LIMIT: f64 = 0.05;

/// Compare the count law of the branching diffusion `Z` with that of a
/// Poisson sample from an independent superprocess `X` (both started from
/// `δ_x`), at a fixed time or at a stopping time of `X`.
///
/// Under a stopping rule the direct arm needs `Z` jointly with `X`. For
/// constant `β = α` the level-`n` system splits exactly into a prolific part
/// (particles with an infinite line of descent, a pure-birth process at rate
/// `β`) and non-prolific bushes; the prolific count plays `Z` and the whole
/// system plays `nX`. Other models are rejected for stopping rules.
pub fn coupling_check(
    model: &ModelSpec,
    x: &[f64],
    rule: CouplingRule,
    settings: CheckSettings,
    key: StreamKey,
) -> Result<CouplingReport> {
    model.validate()?;
    if model.alpha != model.beta {
        return Err(Error::Model("coupling requires alpha = beta".into()));
    }
    ensure(settings.reps > 0, "reps", "must be positive")?;
    let level = settings.level;
    let window = Domain::WholeSpace;
    let caps = Caps::default();
    let delta = InitialMeasure::delta(x.to_vec());
    let direct_key = key.tagged("direct", 0);
    let pois_key = key.tagged("poissonized", 0);
    let mut censored = 0usize;
    let mut clip_events = 0u64;
    let (direct, poissonized): (Vec<u64>, Vec<u64>) = match rule {
        CouplingRule::FixedTime { t } => {
            ensure(t > 0.0, "t", "must be positive")?;
            let init = Initial::PoissonAt { x: x.to_vec() };
            let a = par_replicates(direct_key, settings.reps, |_, rng| {
                simulate_bbm(model, &init, t, settings.dt, caps, &[t], &window, rng).map(|(s, _)| s.records[0].total_mass as u64)
            });
            let b = par_replicates(pois_key, settings.reps, |_, rng| -> Result<(u64, u64)> {
                let run = simulate_superprocess(model, &delta, level, t, settings.dt, caps, &[], &window, None, rng)?;
                Ok((poissonize(&run.final_snapshot, rng)?.len() as u64, run.clip_events))
            });
            let a = a.into_iter().collect::<Result<Vec<_>>>()?;
            let b = b.into_iter().collect::<Result<Vec<_>>>()?;
            clip_events = b.iter().map(|v| v.1).sum();
            (a, b.into_iter().map(|v| v.0).collect())
        }
        CouplingRule::AtTime0 => {
            let init = Initial::PoissonAt { x: x.to_vec() };
            let a = par_replicates(direct_key, settings.reps, |_, rng| (init.sample(rng).len() / model.dim) as u64);
            let snap = MeasureSnapshot::uniform(model.dim, 0.0, delta.realize(model.dim, level)?, level.mass());
            let b = par_replicates(pois_key, settings.reps, |_, rng| poissonize(&snap, rng).map(|p| p.len() as u64));
            (a, b.into_iter().collect::<Result<Vec<_>>>()?)
        }
        CouplingRule::FirstMassAtLeast { c, horizon } => {
            ensure(c > 0.0, "c", "must be positive")?;
            ensure(horizon > 0.0, "horizon", "must be positive")?;
            let beta = match model.beta {
                Coefficient::Constant { c } if c > 0.0 => c,
                _ => return Err(Error::Model("stopping-rule coupling needs a positive constant beta".into())),
            };
            let alpha = beta;
            let h = settings.dt.min(0.1 / beta);
            let a = par_replicates(direct_key, settings.reps, |_, rng| skeleton_chain(level.n, beta, alpha, c, horizon, h, rng));
            let b = par_replicates(pois_key, settings.reps, |_, rng| -> Result<(u64, bool, u64)> {
                let run = simulate_superprocess(
                    model,
                    &delta,
                    level,
                    horizon,
                    h,
                    caps,
                    &[],
                    &window,
                    Some(StopRule::MassAtLeast { c }),
                    rng,
                )?;
                let cens = !run.stopped && run.final_snapshot.atom_count() > 0;
                Ok((poissonize(&run.final_snapshot, rng)?.len() as u64, cens, run.clip_events))
            });
            let a = a.into_iter().collect::<Result<Vec<_>>>()?;
            let b = b.into_iter().collect::<Result<Vec<_>>>()?;
            censored = a.iter().filter(|v| v.1).count() + b.iter().filter(|v| v.1).count();
            clip_events = b.iter().map(|v| v.2).sum();
            (a.into_iter().map(|v| v.0).collect(), b.into_iter().map(|v| v.0).collect())
        }
    };
    let chi = chi_square_permutation(&direct, &poissonized, settings.permutations, key.tagged("permutation", 0));
    let censored_fraction = censored as f64 / (2 * settings.reps) as f64;
    let mean = |v: &[u64]| v.iter().sum::<u64>() as f64 / v.len() as f64;
    Ok(CouplingReport {
        statistic: chi.statistic,
        p_value: chi.p_value,
        bins: chi.bins,
        mean_direct: mean(&direct),
        mean_poissonized: mean(&poissonized),
        counts_direct: chi.counts_a,
        counts_poissonized: chi.counts_b,
        censored_fraction,
        inconclusive: censored_fraction > CENSOR_LIMIT,
        clip_events,
    })
}

/// Count chain of the prolific/non-prolific split of the level-`n` system with
/// constant rates, checked for `|X| ≥ c` on the grid `k·h`.
/// Returns `(prolific count at stop, censored, 0)`.
fn skeleton_chain<R: Rng + ?Sized>(n: u32, beta: f64, alpha: f64, c: f64, horizon: f64, h: f64, rng: &mut R) -> Result<(u64, bool, u64)> {
    let nf = n as f64;
    let b = nf * alpha + beta / 2.0;
    let d = nf * alpha - beta / 2.0;
    ensure(d >= 0.0, "n", "level too small for beta/alpha")?;
    let q = d / b;
    let p0 = Binomial::new(n as u64, 1.0 - q).map_err(|e| param("n", e.to_string()))?.sample(rng);
    let (mut p, mut m) = (p0, n as u64 - p0);
    let rate_p = beta + 2.0 * d;
    let rate_n = b + d;
    let exp1 = Exp::new(1.0).expect("unit rate");
    let mut t = 0.0;
    let mut k = 0u64;
    let mut next_event = f64::INFINITY;
    let mut fresh = true;
    loop {
        let grid = k as f64 * h;
        if (p + m) as f64 / nf >= c || p + m == 0 {
            return Ok((p, false, 0));
        }
        if grid >= horizon - 1e-12 {
            return Ok((p, true, 0));
        }
        let next_grid = ((k + 1) as f64 * h).min(horizon);
        // advance events up to the next grid point
        loop {
            if fresh {
                let r = p as f64 * rate_p + m as f64 * rate_n;
                next_event = t + exp1.sample(rng) / r;
                fresh = false;
            }
            if next_event > next_grid {
                break;
            }
            t = next_event;
            fresh = true;
            let r = p as f64 * rate_p + m as f64 * rate_n;
            let u: f64 = rng.gen::<f64>() * r;
            let pb = p as f64 * beta;
            let pn = p as f64 * 2.0 * d;
            let nb = m as f64 * d;
            if u < pb {
                p += 1;
            } else if u < pb + pn + nb {
                // a prolific particle shedding a mortal one, or a mortal birth
                m += 1;
            } else {
                m -= 1;
            }
        }
        k += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingPropertyReport {
    pub ks: KsResult,
    pub mean_joint: f64,
    pub mean_sum: f64,
    pub reps: usize,
}

/// Compare the law of `⟨g, X_t⟩` under `P_{μ+ν}` with that of independent sums
/// `⟨g, X_t⟩ + ⟨g, X'_t⟩` under `P_μ ⊗ P_ν` (two-sample KS).
pub fn branching_property_check(
    model: &ModelSpec,
    mu: &InitialMeasure,
    nu: &InitialMeasure,
    g: &Coefficient,
    t: f64,
    settings: CheckSettings,
    key: StreamKey,
) -> Result<BranchingPropertyReport> {
    let window = Domain::WholeSpace;
    let caps = Caps::default();
    let level = settings.level;
    let run = |m: &InitialMeasure, rng: &mut crate::rng::Stream| -> Result<f64> {
        if t == 0.0 {
            let pos = m.realize(model.dim, level)?;
            return Ok(MeasureSnapshot::uniform(model.dim, 0.0, pos, level.mass()).integrate(g));
        }
        let r = simulate_superprocess(model, m, level, t, settings.dt, caps, &[], &window, None, rng)?;
        Ok(r.final_snapshot.integrate(g))
    };
    let both = mu.sum(nu);
    let joint = par_replicates(key.tagged("joint", 0), settings.reps, |_, rng| run(&both, rng));
    let split = par_replicates(key.tagged("split", 0), settings.reps, |_, rng| -> Result<f64> {
        Ok(run(mu, rng)? + run(nu, rng)?)
    });
    let joint = joint.into_iter().collect::<Result<Vec<_>>>()?;
    let split = split.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(BranchingPropertyReport {
        ks: ks_two_sample(&joint, &split),
        mean_joint: mean_stderr(&joint).0,
        mean_sum: mean_stderr(&split).0,
        reps: settings.reps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtinctionReport {
    pub extinct_fraction: f64,
    pub extinct_fraction_half: f64,
    pub survival_fraction: f64,
    pub stderr: f64,
    /// Runs stopped by the mass cap (counted as surviving).
    pub capped_fraction: f64,
    pub invalid_runs: usize,
    pub reps: usize,
}

/// Extinction by `horizon` (and by `horizon/2`) from `δ_x`. Runs whose mass
/// reaches `cap_mass` are counted as surviving; from mass `m` the extinction
/// probability is at most `e^{−m·inf w}`, negligible for large caps.
pub fn extinction_statistics(
    model: &ModelSpec,
    x: &[f64],
    horizon: f64,
    cap_mass: f64,
    settings: CheckSettings,
    key: StreamKey,
) -> Result<ExtinctionReport> {
    ensure(cap_mass > 1.0, "cap_mass", "must exceed the initial mass")?;
    let level = settings.level;
    let delta = InitialMeasure::delta(x.to_vec());
    let caps = Caps {
        max_particles: (cap_mass * level.n as f64) as usize,
        max_wall: None,
    };
    let half = horizon / 2.0;
    let out = par_replicates(key, settings.reps, |_, rng| -> Result<(bool, bool, bool, bool)> {
        let r = simulate_superprocess(model, &delta, level, horizon, settings.dt, caps, &[], &Domain::WholeSpace, None, rng)?;
        let ext = r.extinction_time.is_some_and(|t| t <= horizon + 1e-12);
        let ext_half = r.extinction_time.is_some_and(|t| t <= half + 1e-12);
        Ok((ext, ext_half, r.series.caps_hit, r.valid))
    });
    let out = out.into_iter().collect::<Result<Vec<_>>>()?;
    let n = out.len() as f64;
    let ext = out.iter().filter(|v| v.0).count() as f64 / n;
    Ok(ExtinctionReport {
        extinct_fraction: ext,
        extinct_fraction_half: out.iter().filter(|v| v.1).count() as f64 / n,
        survival_fraction: 1.0 - ext,
        stderr: (ext * (1.0 - ext) / n).sqrt(),
        capped_fraction: out.iter().filter(|v| v.2).count() as f64 / n,
        invalid_runs: out.iter().filter(|v| !v.3).count(),
        reps: out.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::mean_stderr;

    fn flat(beta: f64, alpha: f64) -> ModelSpec {
        ModelSpec::brownian(1, Coefficient::constant(beta), Coefficient::constant(alpha))
    }

    fn run_mass(model: &ModelSpec, level: u32, t: f64, reps: usize, seed: u64) -> Vec<f64> {
        let delta = InitialMeasure::delta(vec![0.0]);
        par_replicates(StreamKey::new(seed), reps, |_, rng| {
            let r = simulate_superprocess(
                model,
                &delta,
                SuperLevel { n: level },
                t,
                0.01,
                Caps::default(),
                &[t],
                &Domain::WholeSpace,
                None,
                rng,
            )
            .unwrap();
            assert!(r.valid);
            r.snapshots[0].total_mass()
        })
    }

    #[test]
    fn critical_mass_is_martingale() {
        let v = run_mass(&flat(0.0, 1.0), 50, 1.0, 4000, 1);
        let (m, se) = mean_stderr(&v);
        assert!((m - 1.0).abs() < 3.0 * se, "m={m} se={se}");
    }

    #[test]
    fn first_moment_is_exponential() {
        // E|X_t| = e^{βt} from the linear expectation ODE.
        let v = run_mass(&flat(1.0, 1.0), 100, 2.0, 10_000, 2);
        let (m, se) = mean_stderr(&v);
        assert!((m - 2f64.exp()).abs() < 3.0 * se, "m={m} se={se}");
    }

    #[test]
    fn snapshot_mass_is_count_over_n() {
        let s = MeasureSnapshot::uniform(1, 0.0, vec![0.0; 37], 1.0 / 100.0);
        assert_eq!(s.total_mass(), 37.0 / 100.0);
    }

    #[test]
    fn clipping_marks_run_invalid() {
        let m = flat(10.0, 1.0);
        let mut rng = StreamKey::new(3).rng();
        let r = simulate_superprocess(
            &m,
            &InitialMeasure::delta(vec![0.0]),
            SuperLevel { n: 2 },
            0.1,
            0.01,
            Caps::default(),
            &[],
            &Domain::WholeSpace,
            None,
            &mut rng,
        )
        .unwrap();
        assert!(!r.valid && r.clip_events > 0);
    }

    #[test]
    fn poissonize_empty_and_single_atom() {
        let mut rng = StreamKey::new(4).rng();
        let empty = MeasureSnapshot::uniform(1, 0.0, vec![], 0.01);
        assert!(poissonize(&empty, &mut rng).unwrap().is_empty());
        let one = MeasureSnapshot::from_atoms(1, 0.0, &[(vec![0.0], 1.0)]).unwrap();
        let zeros = par_replicates(StreamKey::new(5), 100_000, |_, rng| poissonize(&one, rng).unwrap().is_empty() as u64)
            .iter()
            .sum::<u64>() as f64
            / 1e5;
        let p = (-1f64).exp();
        assert!((zeros - p).abs() < 3.0 * (p * (1.0 - p) / 1e5).sqrt());
    }

    #[test]
    fn poissonize_thins_by_mass() {
        // E[count at x=1] = 1 for atoms (0, 2), (1, 1).
        let s = MeasureSnapshot::from_atoms(1, 0.0, &[(vec![0.0], 2.0), (vec![1.0], 1.0)]).unwrap();
        let v: Vec<f64> = par_replicates(StreamKey::new(6), 50_000, |_, rng| {
            poissonize(&s, rng).unwrap().positions.iter().filter(|&&x| x == 1.0).count() as f64
        });
        let (m, se) = mean_stderr(&v);
        assert!((m - 1.0).abs() < 3.0 * se);
    }

    #[test]
    fn poisson_bound_examples() {
        assert!((poisson_tail_bound(3.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        let b = poisson_tail_bound(10.0, 0.5).unwrap();
        assert!((b - (2.0 / std::f64::consts::E).powi(5)).abs() < 1e-12);
        assert!((b - 0.2157).abs() < 1e-4);
        let exact = poisson_cdf(10.0, 5.0);
        assert!((exact - 0.067_085_962_879_031_86).abs() < 1e-12);
        assert!(exact <= b);
        assert!(poisson_tail_bound(0.0, 0.5).is_err());
    }

    #[test]
    fn tail_sums_are_complementary() {
        for &l in &[0.5, 3.0, 20.0] {
            for y in 0..40 {
                let s = poisson_cdf(l, y as f64) + poisson_upper_tail(l, y as f64 + 1.0);
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coupling_at_time_zero_matches() {
        let m = flat(1.0, 1.0);
        let s = CheckSettings {
            reps: 20_000,
            ..Default::default()
        };
        let r = coupling_check(&m, &[0.0], CouplingRule::AtTime0, s, StreamKey::new(7)).unwrap();
        // bin masses agree within 3σ
        for (a, b) in r.counts_direct.iter().zip(&r.counts_poissonized) {
            let (pa, pb) = (*a as f64 / 2e4, *b as f64 / 2e4);
            let p = (pa + pb) / 2.0;
            assert!((pa - pb).abs() < 3.0 * (2.0 * p * (1.0 - p) / 2e4).sqrt(), "{pa} vs {pb}");
        }
    }

    #[test]
    fn coupling_requires_alpha_equal_beta() {
        let m = flat(1.0, 2.0);
        assert!(coupling_check(&m, &[0.0], CouplingRule::AtTime0, CheckSettings::default(), StreamKey::new(8)).is_err());
    }

    #[test]
    fn skeleton_chain_is_yule_in_count() {
        // With c unreachable the prolific count at H is Yule(β) from ≈ Poisson(1):
        // E Z_H = e^{βH}·n/(n+½).
        let v: Vec<f64> = par_replicates(StreamKey::new(9), 20_000, |_, rng| {
            skeleton_chain(50, 1.0, 1.0, 1e9, 1.0, 0.01, rng).unwrap().0 as f64
        });
        let (m, se) = mean_stderr(&v);
        let exact = 1f64.exp() * 50.0 / 50.5;
        assert!((m - exact).abs() < 3.0 * se, "m={m} exact={exact}");
    }

    #[test]
    fn branching_property_degenerate_cases() {
        let m = flat(1.0, 1.0);
        let mu = InitialMeasure::delta(vec![0.0]);
        let nu = InitialMeasure::delta(vec![0.5]);
        let s = CheckSettings {
            reps: 10,
            ..Default::default()
        };
        let r = branching_property_check(&m, &mu, &nu, &Coefficient::constant(1.0), 0.0, s, StreamKey::new(10)).unwrap();
        assert_eq!(r.mean_joint, r.mean_sum);
        assert_eq!(r.ks.statistic, 0.0);
    }
}
