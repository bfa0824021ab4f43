//! Growth-law fits, the p-generalized principal eigenvalue, supermartingale
//! families and the local-growth / spread experiments.

use serde::{Deserialize, Serialize};

use crate::branching::{simulate_bbm, Caps, Initial, StatisticSeries};
use crate::cumulant_pde::{linear_trajectory, solve_linear, GridFunction, InitialData, PdeProblem, SolveStatus};
use crate::error::{ensure, Error, Result};
use crate::model::{Coefficient, Domain, ModelSpec};
use crate::rng::{par_replicates, StreamKey};
use crate::stats::{least_squares, mean_stderr, quantile};
use crate::superprocess::{simulate_superprocess, InitialMeasure, SuperLevel};

/// Records with mass at or below this are ignored by [`growth_fit`].
pub const GROWTH_THRESHOLD: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GrowthLaw {
    /// `log m(t) = K t^q`, with `q` fitted unless fixed.
    PowerExp { q_fixed: Option<f64> },
    /// `log log m(t) = a + r t`.
    DoubleExp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub law: GrowthLaw,
    pub k: Option<f64>,
    pub q: Option<f64>,
    pub r: Option<f64>,
    pub intercept: Option<f64>,
    pub residual: f64,
    pub window: (f64, f64),
    pub points: usize,
    pub series_used: usize,
}

/// True when the replicate is alive at its last record or stopped at a cap.
pub fn survived(s: &StatisticSeries) -> bool {
    s.caps_hit || s.records.last().is_some_and(|r| r.total_mass > 0.0)
}

/// Least-squares growth law over all pre-cap records with `m > threshold`,
/// with per-replicate offsets (see [`power_k`], [`within_slope`]).
pub fn growth_fit(series: &[StatisticSeries], law: GrowthLaw, threshold: f64) -> Result<GrowthFit> {
    let mut t = Vec::new();
    let mut m = Vec::new();
    let mut groups = Vec::new();
    for s in series {
        let before = t.len();
        for r in &s.records {
            if r.total_mass > threshold && r.total_mass.is_finite() {
                t.push(r.t);
                m.push(r.total_mass);
            }
        }
        if t.len() > before {
            groups.push(before..t.len());
        }
    }
    let used = groups.len();
    if t.len() < 5 {
        let capped = series.iter().filter(|s| s.caps_hit).count();
        return Err(Error::InsufficientData(format!(
            "{} usable records (need 5); caps hit in {} of {} series",
            t.len(),
            capped,
            series.len()
        )));
    }
    let window = (
        t.iter().copied().fold(f64::INFINITY, f64::min),
        t.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    let y: Vec<f64> = m.iter().map(|v| v.ln()).collect();
    let fit = match law {
        GrowthLaw::PowerExp { q_fixed } => {
            ensure(window.0 > 0.0, "records", "power-exp fit needs t > 0")?;
            let (a, k, q, res) = match q_fixed {
                Some(q) => {
                    let (a, k, res) = power_k(&t, &y, &groups, q);
                    (a, k, q, res)
                }
                None => fit_power(&t, &y, &groups)?,
            };
            GrowthFit {
                law,
                k: Some(k),
                q: Some(q),
                r: None,
                intercept: Some(a),
                residual: res,
                window,
                points: t.len(),
                series_used: used,
            }
        }
        GrowthLaw::DoubleExp => {
            let ll: Vec<f64> = y.iter().map(|v| v.ln()).collect();
            let (a, r, res) = within_slope(&t, &ll, &groups).ok_or_else(|| Error::InsufficientData("degenerate time window".into()))?;
            GrowthFit {
                law,
                k: None,
                q: None,
                r: Some(r),
                intercept: Some(a),
                residual: res,
                window,
                points: t.len(),
                series_used: used,
            }
        }
    };
    Ok(fit)
}

/// Common slope with one intercept per replicate: a random start-up delay
/// shifts `log log m` by a constant, so only within-replicate variation in
/// `t` identifies the rate. Returns (mean intercept, slope, residual norm).
fn within_slope(t: &[f64], y: &[f64], groups: &[std::ops::Range<usize>]) -> Option<(f64, f64, f64)> {
    let mut means = Vec::with_capacity(groups.len());
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for g in groups {
        let n = g.len() as f64;
        let mt = t[g.clone()].iter().sum::<f64>() / n;
        let my = y[g.clone()].iter().sum::<f64>() / n;
        for i in g.clone() {
            sxx += (t[i] - mt).powi(2);
            sxy += (t[i] - mt) * (y[i] - my);
        }
        means.push((mt, my));
    }
    if sxx <= 0.0 {
        return None;
    }
    let r = sxy / sxx;
    let mut res = 0.0;
    for (g, (mt, my)) in groups.iter().zip(&means) {
        for i in g.clone() {
            res += (y[i] - my - r * (t[i] - mt)).powi(2);
        }
    }
    let a = means.iter().map(|(mt, my)| my - r * mt).sum::<f64>() / means.len() as f64;
    Some((a, r, res.sqrt()))
}

/// Per-replicate `(a_i, K_i)` minimizing `Σ (y − a_i − K_i t^q)²` for a
/// shared exponent `q`; returns (mean a, mean K, residual norm). Only the
/// curvature within each replicate identifies `q`, so random start-up delays
/// and rescaling the masses leave it unchanged.
fn power_k(t: &[f64], y: &[f64], groups: &[std::ops::Range<usize>], q: f64) -> (f64, f64, f64) {
    let (mut sa, mut sk, mut rss) = (0.0, 0.0, 0.0);
    for g in groups {
        let (t, y) = (&t[g.clone()], &y[g.clone()]);
        let tq: Vec<f64> = t.iter().map(|v| v.powf(q)).collect();
        let n = t.len() as f64;
        let (mx, my) = (tq.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let sxx: f64 = tq.iter().map(|a| (a - mx).powi(2)).sum();
        let sxy: f64 = tq.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let k = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        let a = my - k * mx;
        rss += tq.iter().zip(y).map(|(x, b)| (b - a - k * x).powi(2)).sum::<f64>();
        sa += a;
        sk += k;
    }
    let m = groups.len().max(1) as f64;
    (sa / m, sk / m, rss.sqrt())
}

/// Coarse scan of `q` followed by golden-section refinement.
fn fit_power(t: &[f64], y: &[f64], groups: &[std::ops::Range<usize>]) -> Result<(f64, f64, f64, f64)> {
    let f = |q: f64| power_k(t, y, groups, q).2;
    let grid: Vec<f64> = (1..=160).map(|i| 0.05 * i as f64).collect();
    let best = (0..grid.len())
        .min_by(|&i, &j| f(grid[i]).total_cmp(&f(grid[j])))
        .ok_or_else(|| Error::InsufficientData("empty q grid".into()))?;
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(grid.len() - 1)]);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-13 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    let q = 0.5 * (a + b);
    let (a0, k, res) = power_k(t, y, groups, q);
    Ok((a0, k, q, res))
}

/// Independent branching-diffusion replicates for growth fits.
#[allow(clippy::too_many_arguments)]
pub fn growth_runs(
    model: &ModelSpec,
    init: &Initial,
    horizon: f64,
    dt: f64,
    caps: Caps,
    record_times: &[f64],
    reps: usize,
    key: StreamKey,
) -> Result<Vec<StatisticSeries>> {
    let window = Domain::WholeSpace;
    par_replicates(key, reps, |_, rng| simulate_bbm(model, init, horizon, dt, caps, record_times, &window, rng).map(|r| r.0))
        .into_iter()
        .collect()
}

/// Numerical settings for the linear solves behind the eigenvalue machinery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeSettings {
    pub dx: f64,
    pub dt: f64,
    pub radii: Vec<f64>,
    pub tol: f64,
}

impl Default for PdeSettings {
    fn default() -> Self {
        Self {
            dx: 0.05,
            dt: 0.005,
            radii: crate::cumulant_pde::default_radii(),
            tol: 1e-8,
        }
    }
}

impl PdeSettings {
    fn problem(&self, model: &ModelSpec, initial: InitialData, window: (f64, f64)) -> PdeProblem {
        let mut p = PdeProblem::new(model.clone(), initial).with_window(window.0, window.1);
        p.dx = self.dx;
        p.dt = self.dt;
        p.radii = self.radii.clone();
        p.tol = self.tol;
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Finite,
    Divergent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgpeRow {
    pub lambda: f64,
    pub verdict: Verdict,
    /// `log ∫₀^{s_max} e^{−λs^p} ‖1_B T_s g‖_∞ ds` (trapezoid).
    pub log_integral: f64,
    /// Fitted slope of the integrand's log at `s_max`.
    pub tail_slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgpeEstimate {
    pub p: f64,
    pub rows: Vec<PgpeRow>,
    /// `(largest divergent λ, smallest finite λ)`; `None` ends are off-grid.
    pub bracket: (Option<f64>, Option<f64>),
    /// Estimated coefficient `ĉ` in `log ‖1_B T_s g‖_∞ ≈ a + ĉ s^p + b log s`.
    pub growth_coefficient: f64,
    pub s_max: f64,
    pub truncated: bool,
}

/// Estimate `λ_c^{(p)}` from the tail of `s ↦ ‖1_B T_s g‖_∞` on `[s_max/2, s_max]`:
/// the integrand `e^{−λs^p}‖1_B T_s g‖_∞` is eventually decreasing, and the
/// integral finite, exactly when `λ > ĉ`.
#[allow(clippy::too_many_arguments)]
pub fn pgpe_estimate(
    model: &ModelSpec,
    p: f64,
    g: &Coefficient,
    window: (f64, f64),
    lambda_grid: &[f64],
    s_max: f64,
    ds: f64,
    pde: &PdeSettings,
) -> Result<PgpeEstimate> {
    ensure(p >= 1.0, "p", "must be at least 1")?;
    ensure(s_max > 0.0 && ds > 0.0 && ds < s_max, "s_max", "need 0 < ds < s_max")?;
    ensure(!lambda_grid.is_empty(), "lambda_grid", "must be nonempty")?;
    ensure(lambda_grid.windows(2).all(|w| w[0] < w[1]), "lambda_grid", "must increase")?;
    let problem = pde.problem(model, InitialData::Function { g: g.clone() }, window);
    let mut smax = s_max;
    let mut truncated = false;
    let (times, slices) = loop {
        let n = (smax / ds).round().max(8.0) as usize;
        let times: Vec<f64> = (0..=n).map(|j| smax * j as f64 / n as f64).collect();
        let (status, slices) = linear_trajectory(&problem, &times)?;
        if status == SolveStatus::Converged {
            break (times, slices);
        }
        truncated = true;
        smax *= 0.75;
        if smax < 4.0 * ds {
            return Err(Error::InconsistentGrid("linear solve blows up before any usable horizon".into()));
        }
    };
    let f: Vec<f64> = slices.iter().map(|s| s.max_abs_on(window.0, window.1)).collect();
    ensure(f.iter().all(|v| *v > 0.0), "g", "T_s g vanishes on the window")?;
    let lf: Vec<f64> = f.iter().map(|v| v.ln()).collect();
    let tail: Vec<usize> = (0..times.len()).filter(|&j| times[j] >= 0.5 * smax).collect();
    let cols = vec![
        vec![1.0; tail.len()],
        tail.iter().map(|&j| times[j].powf(p)).collect(),
        tail.iter().map(|&j| times[j].ln()).collect(),
    ];
    let y: Vec<f64> = tail.iter().map(|&j| lf[j]).collect();
    let (coef, _) = least_squares(&cols, &y).ok_or_else(|| Error::InconsistentGrid("tail regression is singular".into()))?;
    let c_hat = coef[1];
    let mut rows = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let logs: Vec<f64> = times.iter().zip(&lf).map(|(s, l)| l - lambda * s.powf(p)).collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut acc = 0.0;
        for j in 1..times.len() {
            acc += 0.5 * ((logs[j - 1] - top).exp() + (logs[j] - top).exp()) * (times[j] - times[j - 1]);
        }
        let slope = (c_hat - lambda) * p * smax.powf(p - 1.0) + coef[2] / smax;
        rows.push(PgpeRow {
            lambda,
            verdict: if lambda > c_hat { Verdict::Finite } else { Verdict::Divergent },
            log_integral: top + acc.ln(),
            tail_slope: slope,
        });
    }
    let first_finite = rows.iter().position(|r| r.verdict == Verdict::Finite);
    if let Some(k) = first_finite {
        if rows[k..].iter().any(|r| r.verdict == Verdict::Divergent) {
            return Err(Error::InconsistentGrid("verdicts are not monotone in λ".into()));
        }
    }
    let bracket = match first_finite {
        Some(0) => (None, Some(rows[0].lambda)),
        Some(k) => (Some(rows[k - 1].lambda), Some(rows[k].lambda)),
        None => (rows.last().map(|r| r.lambda), None),
    };
    Ok(PgpeEstimate {
        p,
        rows,
        bracket,
        growth_coefficient: c_hat,
        s_max: smax,
        truncated,
    })
}

/// Explicit bound `λ_c^{(p)} ≤ e^{c₁ 2^ℓ}` for `β = |x|^ℓ`, with
/// `c₁ = ((2^ℓ + 1)/c)^{ℓ/(2−ℓ)}` and `c = c_ℓ/2`; returns `(p, bound)` with
/// `p = (2 + ℓ)/(2 − ℓ)`.
pub fn pgpe_upper_bound(ell: f64, c_ell: f64) -> Result<(f64, f64)> {
    if !(ell > 0.0 && ell < 2.0) {
        return Err(Error::Domain { point: vec![ell] });
    }
    ensure(c_ell > 0.0 && c_ell.is_finite(), "c_ell", "must be positive")?;
    let c = c_ell / 2.0;
    let two_l = 2f64.powf(ell);
    let c1 = ((two_l + 1.0) / c).powf(ell / (2.0 - ell));
    Ok(((2.0 + ell) / (2.0 - ell), (c1 * two_l).exp()))
}

/// `θ(t) = λ t^p + ε t`, weight `γ = e^{−θ}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Theta {
    pub lambda: f64,
    pub p: f64,
    #[serde(default)]
    pub eps: f64,
}

impl Theta {
    pub fn gamma(&self, t: f64) -> f64 {
        (-(self.lambda * t.powf(self.p) + self.eps * t)).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyMember {
    pub t: f64,
    pub f: GridFunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupermartingaleReport {
    pub family: Vec<FamilyMember>,
    /// `max (T_t f^{(−t−s)} − f^{(−s)})` over the window and checked pairs.
    pub max_violation: f64,
    /// `(t, s, x)` where the largest violation occurred.
    pub location: (f64, f64, f64),
    pub holds: bool,
    /// Quadrature approximation of `∫₀^{s_max} γ(s) ‖1_B T_s g‖_∞ ds`.
    pub integral: f64,
}

/// Tolerance on the numerical supermartingale inequality.
pub const FAMILY_TOL: f64 = 1e-6;

/// `f^{(−t)} = ∫₀^{s_max} γ(s + t) T_s g ds` by trapezoid quadrature, and a
/// check of `T_t f^{(−t−s)} ≤ f^{(−s)}` on the window for `t, s` in `t_grid`.
#[allow(clippy::too_many_arguments)]
pub fn supermartingale_family(
    model: &ModelSpec,
    g: &Coefficient,
    theta: Theta,
    t_grid: &[f64],
    window: (f64, f64),
    s_max: f64,
    ds: f64,
    pde: &PdeSettings,
) -> Result<SupermartingaleReport> {
    ensure(!t_grid.is_empty(), "t_grid", "must be nonempty")?;
    ensure(t_grid.iter().all(|&t| t >= 0.0), "t_grid", "must be nonnegative")?;
    ensure(s_max > 0.0 && ds > 0.0 && ds < s_max, "s_max", "need 0 < ds < s_max")?;
    let problem = pde.problem(model, InitialData::Function { g: g.clone() }, window);
    let n = (s_max / ds).round() as usize;
    let times: Vec<f64> = (0..=n).map(|j| s_max * j as f64 / n as f64).collect();
    let (status, slices) = linear_trajectory(&problem, &times)?;
    if status != SolveStatus::Converged {
        return Err(Error::Model("linear semigroup blows up before s_max".into()));
    }
    let grid = slices[0].grid;
    let member = |tau: f64| -> GridFunction {
        let mut v = vec![0.0; grid.nx];
        for j in 0..times.len() {
            let w = if j == 0 || j == times.len() - 1 { 0.5 } else { 1.0 } * (s_max / n as f64) * theta.gamma(times[j] + tau);
            for (a, b) in v.iter_mut().zip(&slices[j].values) {
                *a += w * b;
            }
        }
        GridFunction { grid, values: v }
    };
    let mut integral = 0.0;
    for j in 0..times.len() {
        let w = if j == 0 || j == times.len() - 1 { 0.5 } else { 1.0 } * (s_max / n as f64);
        integral += w * theta.gamma(times[j]) * slices[j].max_abs_on(window.0, window.1);
    }
    let family: Vec<FamilyMember> = t_grid.iter().map(|&t| FamilyMember { t, f: member(t) }).collect();
    let mut max_violation = f64::NEG_INFINITY;
    let mut location = (0.0, 0.0, 0.0);
    for &t in t_grid.iter().filter(|&&t| t > 0.0) {
        for &s in t_grid {
            let start = member(t + s);
            let target = member(s);
            let p = pde.problem(model, InitialData::Grid { f: start }, window);
            let evolved = solve_linear(&p, t)?;
            for i in target.window_indices(window.0, window.1) {
                let x = grid.x(i);
                let lhs = evolved.solution.eval(x).unwrap_or(0.0);
                let gap = lhs - target.values[i];
                if gap > max_violation {
                    max_violation = gap;
                    location = (t, s, x);
                }
            }
        }
    }
    Ok(SupermartingaleReport {
        family,
        max_violation,
        location,
        holds: max_violation <= FAMILY_TOL,
        integral,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanPoint {
    pub t: f64,
    pub mean: f64,
    pub stderr: f64,
}

/// Sample means of `N_t = ⟨f^{(−t)}, X_t⟩` across the family's times, and
/// whether they are nonincreasing within 3 pooled standard errors.
pub fn supermartingale_mc(
    model: &ModelSpec,
    family: &[FamilyMember],
    x0: &[f64],
    level: SuperLevel,
    reps: usize,
    dt: f64,
    key: StreamKey,
) -> Result<(Vec<MeanPoint>, bool)> {
    ensure(!family.is_empty(), "family", "must be nonempty")?;
    let times: Vec<f64> = family.iter().map(|m| m.t).collect();
    ensure(times.windows(2).all(|w| w[0] < w[1]), "family", "times must increase")?;
    let record: Vec<f64> = times.iter().copied().filter(|&t| t > 0.0).collect();
    let horizon = *times.last().unwrap();
    let mu = InitialMeasure::delta(x0.to_vec());
    let samples = par_replicates(key, reps, |_, rng| -> Result<Vec<f64>> {
        let run = simulate_superprocess(model, &mu, level, horizon, dt, Caps::default(), &record, &Domain::WholeSpace, None, rng)?;
        let mut out = Vec::with_capacity(family.len());
        let mut k = 0;
        for m in family {
            let pos: &[f64] = if m.t == 0.0 {
                x0
            } else {
                let s = &run.snapshots[k];
                k += 1;
                &s.positions
            };
            let mass = if m.t == 0.0 { 1.0 } else { level.mass() };
            let v: f64 = pos.iter().map(|&x| m.f.eval(x).unwrap_or(0.0)).sum::<f64>() * mass;
            out.push(v);
        }
        Ok(out)
    });
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    let points: Vec<MeanPoint> = (0..family.len())
        .map(|k| {
            let col: Vec<f64> = samples.iter().map(|s| s[k]).collect();
            let (mean, stderr) = mean_stderr(&col);
            MeanPoint { t: times[k], mean, stderr }
        })
        .collect();
    let ok = points
        .windows(2)
        .all(|w| w[1].mean <= w[0].mean + 3.0 * (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt());
    Ok((points, ok))
}

/// Which particle system an experiment runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProcessKind {
    /// Branching diffusion from `δ_x` (one particle).
    Branching,
    /// Level-`n` superprocess approximation from `δ_x`.
    Super { n: u32 },
}

/// Settings shared by the local-growth and spread experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSettings {
    pub process: ProcessKind,
    pub horizon: f64,
    pub dt: f64,
    pub record_dt: f64,
    pub max_particles: usize,
    pub reps: usize,
}

fn run_series(model: &ModelSpec, x0: &[f64], window: &Domain, s: &ExperimentSettings, key: StreamKey) -> Result<Vec<StatisticSeries>> {
    ensure(s.record_dt > 0.0 && s.horizon > 0.0, "record_dt", "need positive record spacing and horizon")?;
    let k = (s.horizon / s.record_dt).round() as usize;
    let record: Vec<f64> = (0..=k).map(|j| s.horizon * j as f64 / k as f64).collect();
    let caps = Caps {
        max_particles: s.max_particles,
        max_wall: None,
    };
    par_replicates(key, s.reps, |_, rng| match s.process {
        ProcessKind::Branching => {
            let init = Initial::CountAt { k: 1, x: x0.to_vec() };
            simulate_bbm(model, &init, s.horizon, s.dt, caps, &record, window, rng).map(|r| r.0)
        }
        ProcessKind::Super { n } => {
            let mu = InitialMeasure::delta(x0.to_vec());
            simulate_superprocess(model, &mu, SuperLevel::new(n)?, s.horizon, s.dt, caps, &record, window, None, rng).map(|r| r.series)
        }
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalGrowthRow {
    pub lambda: f64,
    /// Fraction of surviving replicates whose running max of `e^{−λt}X_t(B)`
    /// reaches 10× the baseline over `t ∈ [0.5, 1]`.
    pub fraction: f64,
    pub surviving: usize,
    pub reps: usize,
}

/// Demonstration of super-exponential local growth in a window `B`.
pub fn local_growth_experiment(
    model: &ModelSpec,
    x0: &[f64],
    window: &Domain,
    probes: &[f64],
    settings: &ExperimentSettings,
    key: StreamKey,
) -> Result<Vec<LocalGrowthRow>> {
    ensure(settings.horizon > 1.0, "horizon", "must exceed the baseline interval [0.5, 1]")?;
    let series = run_series(model, x0, window, settings, key)?;
    let unit = match settings.process {
        ProcessKind::Branching => 1.0,
        ProcessKind::Super { n } => 1.0 / n as f64,
    };
    let alive: Vec<&StatisticSeries> = series.iter().filter(|s| survived(s)).collect();
    Ok(probes
        .iter()
        .map(|&lambda| {
            let hits = alive
                .iter()
                .filter(|s| {
                    let scaled = |r: &crate::branching::Record| (-lambda * r.t).exp() * r.local_mass;
                    let base = s
                        .records
                        .iter()
                        .filter(|r| (0.5..=1.0 + 1e-12).contains(&r.t))
                        .map(scaled)
                        .fold(0.0, f64::max)
                        .max(unit * (-lambda).exp());
                    s.records.iter().filter(|r| r.t > 1.0).map(scaled).fold(0.0, f64::max) >= 10.0 * base
                })
                .count();
            LocalGrowthRow {
                lambda,
                fraction: if alive.is_empty() { 0.0 } else { hits as f64 / alive.len() as f64 },
                surviving: alive.len(),
                reps: series.len(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadReport {
    /// Per surviving replicate: `max (log M_t)/t` over records with `t ≥ t_min`, `M_t > 0`.
    pub maxima: Vec<f64>,
    pub p99: f64,
    /// `(ε, fraction of replicates with log M_t > (√2 + ε)t for some recorded t ≥ t_min)`.
    pub exceedance: Vec<(f64, f64)>,
    pub surviving: usize,
    pub caps_hit_fraction: f64,
    /// Latest time reached before caps, averaged over surviving replicates.
    pub mean_window_end: f64,
}

/// Distribution of `max_t (log M_t)/t` with `M_t` the rightmost position.
pub fn spread_check(
    model: &ModelSpec,
    x0: &[f64],
    t_min: f64,
    eps_grid: &[f64],
    settings: &ExperimentSettings,
    key: StreamKey,
) -> Result<SpreadReport> {
    if model.dim != 1 {
        return Err(Error::Model("spread check is one-dimensional".into()));
    }
    ensure(t_min > 0.0, "t_min", "must be positive")?;
    let series = run_series(model, x0, &Domain::WholeSpace, settings, key)?;
    let alive: Vec<&StatisticSeries> = series.iter().filter(|s| survived(s)).collect();
    let usable = |s: &StatisticSeries| -> Vec<(f64, f64)> {
        s.records
            .iter()
            .filter(|r| r.t >= t_min - 1e-12 && r.rightmost > 0.0 && r.total_mass > 0.0)
            .map(|r| (r.t, r.rightmost.ln()))
            .collect()
    };
    let mut maxima = Vec::new();
    let mut ends = Vec::new();
    for s in &alive {
        let u = usable(s);
        if let Some(m) = u.iter().map(|(t, l)| l / t).reduce(f64::max) {
            maxima.push(m);
        }
        ends.push(s.records.last().map_or(0.0, |r| r.t));
    }
    let exceedance = eps_grid
        .iter()
        .map(|&e| {
            let level = 2f64.sqrt() + e;
            let n = alive.iter().filter(|s| usable(s).iter().any(|(t, l)| *l > level * t)).count();
            (e, if alive.is_empty() { 0.0 } else { n as f64 / alive.len() as f64 })
        })
        .collect();
    Ok(SpreadReport {
        p99: quantile(&maxima, 0.99),
        maxima,
        exceedance,
        surviving: alive.len(),
        caps_hit_fraction: series.iter().filter(|s| s.caps_hit).count() as f64 / series.len().max(1) as f64,
        mean_window_end: if ends.is_empty() { 0.0 } else { ends.iter().sum::<f64>() / ends.len() as f64 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::branching::Record;

    fn synthetic(f: impl Fn(f64) -> f64, ts: &[f64]) -> StatisticSeries {
        StatisticSeries {
            records: ts
                .iter()
                .map(|&t| Record {
                    t,
                    total_mass: f(t),
                    rightmost: 0.0,
                    radius: 0.0,
                    local_mass: 0.0,
                })
                .collect(),
            caps_hit: false,
            cap_time: None,
        }
    }

    #[test]
    fn power_exp_fit_is_exact_on_synthetic_data() {
        let ts: Vec<f64> = (10..=30).map(|i| i as f64 * 0.1).collect();
        let s = synthetic(|t| (2.0 * t.powi(3)).exp(), &ts);
        let fit = growth_fit(std::slice::from_ref(&s), GrowthLaw::PowerExp { q_fixed: None }, GROWTH_THRESHOLD).unwrap();
        assert!((fit.q.unwrap() - 3.0).abs() < 1e-9 && (fit.k.unwrap() - 2.0).abs() < 1e-9);
        let fixed = growth_fit(&[s], GrowthLaw::PowerExp { q_fixed: Some(3.0) }, GROWTH_THRESHOLD).unwrap();
        assert!((fixed.k.unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn double_exp_fit_is_exact() {
        let ts: Vec<f64> = (0..20).map(|i| 1.0 + i as f64 * 0.05).collect();
        let s = synthetic(|t| (0.5 + 2.0 * t).exp().exp(), &ts);
        let fit = growth_fit(&[s], GrowthLaw::DoubleExp, GROWTH_THRESHOLD).unwrap();
        assert!((fit.r.unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn power_exp_fit_shares_exponent_across_replicates() {
        let ts: Vec<f64> = (10..=40).map(|i| i as f64 * 0.1).collect();
        let runs: Vec<_> = [(0.0, 1.0), (2.0, 0.5), (-1.0, 2.0)]
            .iter()
            .map(|&(a, k)| synthetic(move |t| (8.0 + a + k * t.powi(3)).exp(), &ts))
            .collect();
        let fit = growth_fit(&runs, GrowthLaw::PowerExp { q_fixed: None }, 1.0).unwrap();
        assert!((fit.q.unwrap() - 3.0).abs() < 1e-6, "{:?}", fit.q);
        assert!((fit.k.unwrap() - 3.5 / 3.0).abs() < 1e-5);
    }

    #[test]
    fn double_exp_fit_ignores_start_delays() {
        let ts: Vec<f64> = (0..20).map(|i| 1.0 + i as f64 * 0.05).collect();
        let runs: Vec<_> = [0.0, 0.3, 0.7].iter().map(|&d| synthetic(move |t| (2.0 * (t - d)).exp().exp(), &ts)).collect();
        let fit = growth_fit(&runs, GrowthLaw::DoubleExp, 1.0).unwrap();
        assert!((fit.r.unwrap() - 2.0).abs() < 1e-9 && fit.residual < 1e-9);
    }

    #[test]
    fn too_few_records_is_insufficient_data() {
        let s = synthetic(|t| t, &[1.0, 2.0, 3.0]);
        assert!(matches!(
            growth_fit(&[s], GrowthLaw::DoubleExp, GROWTH_THRESHOLD),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn power_fit_scale_equivariance_in_q() {
        let ts: Vec<f64> = (10..=30).map(|i| i as f64 * 0.1).collect();
        let a = synthetic(|t| (1.0 + t + 0.5 * t.powi(3)).exp(), &ts);
        let f1 = growth_fit(&[a], GrowthLaw::PowerExp { q_fixed: None }, 1.0).unwrap();
        let b = synthetic(|t| 10.0 * (1.0 + t + 0.5 * t.powi(3)).exp(), &ts);
        let f2 = growth_fit(&[b], GrowthLaw::PowerExp { q_fixed: None }, 1.0).unwrap();
        assert!((f1.q.unwrap() - f2.q.unwrap()).abs() < 1e-6);
        assert!((f1.k.unwrap() - f2.k.unwrap()).abs() < 1e-6);
        assert!((f2.intercept.unwrap() - f1.intercept.unwrap() - 10f64.ln()).abs() < 1e-4);
    }

    #[test]
    fn upper_bound_formula() {
        let (p, b) = pgpe_upper_bound(1.0, 3.0).unwrap();
        assert_eq!(p, 3.0);
        assert!((b - 4f64.exp()).abs() < 1e-9);
        let (_, small) = pgpe_upper_bound(1e-9, 3.0).unwrap();
        assert!((small - std::f64::consts::E).abs() < 1e-6);
        assert!(matches!(pgpe_upper_bound(2.0, 3.0), Err(Error::Domain { .. })));
        assert!(pgpe_upper_bound(1.0, 0.0).is_err());
    }

    fn coarse() -> PdeSettings {
        PdeSettings {
            dx: 0.1,
            dt: 0.01,
            ..Default::default()
        }
    }

    #[test]
    fn constant_rate_crossover() {
        let m = ModelSpec::brownian(1, Coefficient::constant(0.5), Coefficient::constant(1.0));
        let g = Coefficient::bump(0.0, 1.0, 1.0);
        // grid points avoid λ = 0.5 itself, where finiteness is decided by the polynomial factor
        let grid: Vec<f64> = (0..10).map(|i| 0.05 + i as f64 * 0.1).collect();
        let e = pgpe_estimate(&m, 1.0, &g, (-1.0, 1.0), &grid, 12.0, 0.1, &coarse()).unwrap();
        assert_eq!(e.bracket, (Some(0.45), Some(0.55)), "ĉ = {}", e.growth_coefficient);
        assert!((e.growth_coefficient - 0.5).abs() < 0.02);
        // p = 2 ≥ q = 1 with λ_c ≥ 0: upper end does not increase
        let e2 = pgpe_estimate(&m, 2.0, &g, (-1.0, 1.0), &grid, 12.0, 0.1, &coarse()).unwrap();
        assert!(e2.bracket.1.unwrap() <= e.bracket.1.unwrap() + 0.1);
    }

    #[test]
    fn zero_rate_bracket_straddles_zero() {
        let m = ModelSpec::brownian(1, Coefficient::constant(0.0), Coefficient::constant(1.0));
        let g = Coefficient::bump(0.0, 1.0, 1.0);
        let grid = [-0.2, -0.1, 0.0, 0.1, 0.2];
        for p in [1.0, 2.0, 3.0] {
            let e = pgpe_estimate(&m, p, &g, (-1.0, 1.0), &grid, 10.0, 0.1, &coarse()).unwrap();
            let (lo, hi) = e.bracket;
            assert!(lo.unwrap() <= 0.0 && hi.unwrap() >= 0.0, "p={p} {:?}", e.bracket);
        }
    }

    #[test]
    fn constant_rate_family_is_supermartingale() {
        let m = ModelSpec::brownian(1, Coefficient::constant(0.5), Coefficient::constant(1.0));
        let g = Coefficient::bump(0.0, 1.0, 1.0);
        let theta = Theta {
            lambda: 1.0,
            p: 1.0,
            eps: 0.0,
        };
        let r = supermartingale_family(&m, &g, theta, &[0.0, 0.5, 1.0], (-1.0, 1.0), 8.0, 0.05, &coarse()).unwrap();
        assert!(r.holds, "violation {}", r.max_violation);
        // f^{(−t)} = e^{−λt} f^{(0)} for exponential weights
        let f0 = &r.family[0].f;
        let f1 = &r.family[2].f;
        for i in f0.window_indices(-1.0, 1.0) {
            assert!((f1.values[i] - (-1f64).exp() * f0.values[i]).abs() < 1e-12);
        }
    }
}
