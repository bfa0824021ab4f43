//! Monte Carlo for the Dirichlet–Schrödinger semigroup
//! `T_t g(x) = E_x[exp(∫₀^t β(Y_s) ds) g(Y_t); t < τ_D]` and for the
//! large-deviation tails of `∫₀¹ |B_s|^ℓ ds`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, param, Error, Result};
use crate::model::{Coefficient, ModelSpec};
use crate::motion::{simulate_path, simulate_path1, Motion};
use crate::rng::{par_replicates, StreamKey};
use crate::stats::{mean_stderr, mean_var, pairwise_sum};

/// Monte Carlo estimate of `T_t g(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FkEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub reps: usize,
    /// Fraction of replicates whose weight `e^{∫β}` exceeded the cap.
    pub truncation_fraction: f64,
    /// Set when more than 1% of the weights were truncated.
    pub divergence_suspected: bool,
}

/// Threshold on the truncation fraction above which divergence is signalled.
pub const DIVERGENCE_FRACTION: f64 = 0.01;

/// Feynman–Kac estimate of `T_t g(x)` with exponential weights clipped at `weight_cap`.
#[allow(clippy::too_many_arguments)]
pub fn fk_estimate(
    model: &ModelSpec,
    g: &Coefficient,
    x: &[f64],
    t: f64,
    dt: f64,
    reps: usize,
    weight_cap: f64,
    key: StreamKey,
) -> Result<FkEstimate> {
    model.validate()?;
    ensure(t >= 0.0, "t", "must be nonnegative")?;
    ensure(reps >= 1, "reps", "must be at least 1")?;
    ensure(weight_cap > 0.0, "weight_cap", "must be positive")?;
    if !model.domain.contains(x) {
        return Err(Error::Domain { point: x.to_vec() });
    }
    let log_cap = weight_cap.ln();
    let one_d = model.dim == 1;
    let motion = Motion::new(model)?;
    let samples: Vec<Result<(f64, bool)>> = par_replicates(key, reps, |_, rng| {
        let (pos, alive, integral) = if one_d {
            let (p, a, i) = simulate_path1(&motion, x[0], t, dt, rng)?;
            (vec![p], a, i)
        } else {
            let p = simulate_path(model, x, t, dt, rng)?;
            (p.position, p.alive, p.beta_integral)
        };
        if !alive {
            return Ok((0.0, false));
        }
        let truncated = integral > log_cap;
        let w = if truncated { weight_cap } else { integral.exp() };
        Ok((w * g.eval(&pos), truncated))
    });
    let mut values = Vec::with_capacity(reps);
    let mut truncated = 0usize;
    for s in samples {
        let (v, tr) = s?;
        values.push(v);
        truncated += tr as usize;
    }
    let (mean, stderr) = mean_stderr(&values);
    let truncation_fraction = truncated as f64 / reps as f64;
    Ok(FkEstimate {
        mean,
        stderr,
        reps,
        truncation_fraction,
        divergence_suspected: truncation_fraction > DIVERGENCE_FRACTION,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum TailMethod {
    Naive,
    Splitting,
}

impl std::fmt::Display for TailMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TailMethod::Naive => "naive",
            TailMethod::Splitting => "splitting",
        })
    }
}

/// Level and clone schedule of the multilevel splitting estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplittingPlan {
    pub levels: usize,
    pub offspring_per_hit: usize,
    pub dt: f64,
}

impl Default for SplittingPlan {
    fn default() -> Self {
        Self {
            levels: 10,
            offspring_per_hit: 100,
            dt: 1e-3,
        }
    }
}

/// Estimate of `P(∫₀¹ |B_s|^ℓ ds ≥ K)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub k: f64,
    pub prob: f64,
    pub log_prob: f64,
    pub stderr: f64,
    pub method: TailMethod,
    pub reps: usize,
    /// No replicate reached the threshold; switch to splitting.
    pub underflow: bool,
}

/// Reflection-principle bound `(4/K)·exp(−K^{2/ℓ}/2)` on the tail.
pub fn reflection_bound(ell: f64, k: f64) -> f64 {
    4.0 / k * (-0.5 * k.powf(2.0 / ell)).exp()
}

#[derive(Debug, Clone, Copy)]
struct SplitState {
    step: u32,
    b: f64,
    integral: f64,
}

/// Advance a path until `reached` holds (checked on entry and after every
/// step) or time 1 is reached.
#[inline]
fn run_until<R: Rng + ?Sized>(
    mut s: SplitState,
    reached: impl Fn(&SplitState) -> bool,
    n_steps: u32,
    h: f64,
    ell: f64,
    rng: &mut R,
) -> Option<SplitState> {
    if reached(&s) {
        return Some(s);
    }
    let sh = h.sqrt();
    let f = |b: f64| if ell == 1.0 { b.abs() } else { b.abs().powf(ell) };
    let mut prev = f(s.b);
    while s.step < n_steps {
        let z: f64 = rng.sample(StandardNormal);
        s.b += sh * z;
        let next = f(s.b);
        s.integral += 0.5 * (prev + next) * h;
        prev = next;
        s.step += 1;
        if reached(&s) {
            return Some(s);
        }
    }
    None
}

/// Importance score for splitting: the running integral plus the value it
/// would gain if `|B|` stayed frozen for the remaining time. Equals the
/// integral at time 1, so the final event is nested in every level set.
#[inline]
fn projected(s: &SplitState, n_steps: u32, ell: f64) -> f64 {
    let rest = (n_steps - s.step) as f64 / n_steps as f64;
    s.integral + s.b.abs().powf(ell) * rest
}

/// Tail probability of the `|B|^ℓ` functional by naive Monte Carlo or multilevel splitting.
pub fn tail_probability(
    ell: f64,
    k: f64,
    reps: usize,
    method: TailMethod,
    plan: SplittingPlan,
    key: StreamKey,
) -> Result<TailEstimate> {
    ensure(ell > 0.0, "ell", "must be positive")?;
    ensure(k >= 0.0, "K", "must be nonnegative")?;
    ensure(reps >= 1, "reps", "must be at least 1")?;
    ensure(plan.dt > 0.0 && plan.dt <= 1.0, "dt", "must lie in (0, 1]")?;
    ensure(plan.levels >= 1, "levels", "must be at least 1")?;
    ensure(plan.offspring_per_hit >= 1, "offspring_per_hit", "must be at least 1")?;
    let done = |prob: f64, stderr: f64, underflow: bool| TailEstimate {
        k,
        prob,
        log_prob: if prob > 0.0 { prob.ln() } else { f64::NEG_INFINITY },
        stderr,
        method,
        reps,
        underflow,
    };
    if k == 0.0 {
        return Ok(done(1.0, 0.0, false));
    }
    let n_steps = (1.0 / plan.dt).round().max(1.0) as u32;
    let h = 1.0 / n_steps as f64;
    let origin = SplitState {
        step: 0,
        b: 0.0,
        integral: 0.0,
    };
    match method {
        TailMethod::Naive => {
            let hits: Vec<f64> = par_replicates(key, reps, |_, rng| {
                run_until(origin, |s| s.integral >= k, n_steps, h, ell, rng).is_some() as u8 as f64
            });
            let (p, var) = mean_var(&hits);
            let stderr = (var / reps as f64).sqrt();
            Ok(done(p, stderr, p == 0.0))
        }
        TailMethod::Splitting => {
            let mut starts = vec![origin; reps];
            let mut prob = 1.0;
            let mut rel_var = 0.0;
            for stage in 0..plan.levels {
                let level = k * (stage + 1) as f64 / plan.levels as f64;
                let stage_key = key.tagged("splitting-stage", stage as u64);
                let hits: Vec<SplitState> = par_replicates(stage_key, starts.len(), |i, rng| {
                    if stage + 1 == plan.levels {
                        run_until(starts[i], |s| s.integral >= k, n_steps, h, ell, rng)
                    } else {
                        run_until(starts[i], |s| projected(s, n_steps, ell) >= level, n_steps, h, ell, rng)
                    }
                })
                .into_iter()
                .flatten()
                .collect();
                let p = hits.len() as f64 / starts.len() as f64;
                if hits.is_empty() {
                    return Ok(done(0.0, 0.0, true));
                }
                prob *= p;
                rel_var += (1.0 - p) / (p * starts.len() as f64);
                if stage + 1 < plan.levels {
                    let next = (hits.len() * plan.offspring_per_hit).min(reps);
                    starts = (0..next).map(|c| hits[c % hits.len()]).collect();
                }
            }
            Ok(done(prob, prob * rel_var.sqrt(), false))
        }
    }
}

/// Fitted large-deviation constant `c_ℓ` with a confidence interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchilderFit {
    pub ell: f64,
    pub c: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub points: Vec<(f64, f64)>,
}

/// Least-squares slope of `−2 log P` against `K^{2/ℓ}` over `(K, log P)` pairs.
pub fn fit_schilder_constant(ell: f64, points: &[(f64, f64)], log_prob_stderr: &[f64]) -> Result<SchilderFit> {
    ensure(points.len() >= 3, "Ks", "need at least three thresholds")?;
    ensure(
        points.windows(2).all(|w| w[0].0 < w[1].0),
        "Ks",
        "thresholds must be increasing",
    )?;
    if let Some(&(k, _)) = points.iter().find(|(_, lp)| !lp.is_finite()) {
        return Err(Error::Underflow { threshold: k });
    }
    let x: Vec<f64> = points.iter().map(|(k, _)| k.powf(2.0 / ell)).collect();
    let y: Vec<f64> = points.iter().map(|(_, lp)| -2.0 * lp).collect();
    let (_, slope, _, se_fit) = crate::stats::linear_fit(&x, &y).ok_or_else(|| param("Ks", "degenerate fit"))?;
    // Monte Carlo error propagated through the linear slope weights.
    let mx = pairwise_sum(&x) / x.len() as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let var_mc: f64 = x
        .iter()
        .zip(log_prob_stderr.iter().chain(std::iter::repeat(&0.0)))
        .map(|(xi, s)| ((xi - mx) / sxx).powi(2) * 4.0 * s * s)
        .sum();
    let se_fit = if se_fit.is_finite() { se_fit } else { 0.0 };
    let half = 2.0 * (se_fit * se_fit + var_mc).sqrt();
    Ok(SchilderFit {
        ell,
        c: slope,
        ci_low: slope - half,
        ci_high: slope + half,
        points: points.to_vec(),
    })
}

/// Estimate the tails at each threshold by splitting and fit `c_ℓ`.
pub fn schilder_constant_fit(
    ell: f64,
    ks: &[f64],
    reps: usize,
    plan: SplittingPlan,
    key: StreamKey,
) -> Result<(SchilderFit, Vec<TailEstimate>)> {
    ensure(ks.len() >= 3, "Ks", "need at least three thresholds")?;
    let tails: Vec<TailEstimate> = ks
        .iter()
        .enumerate()
        .map(|(i, &k)| tail_probability(ell, k, reps, TailMethod::Splitting, plan, key.tagged("K", i as u64)))
        .collect::<Result<_>>()?;
    if let Some(t) = tails.iter().find(|t| t.underflow) {
        return Err(Error::Underflow { threshold: t.k });
    }
    let points: Vec<(f64, f64)> = tails.iter().map(|t| (t.k, t.log_prob)).collect();
    let se: Vec<f64> = tails.iter().map(|t| t.stderr / t.prob).collect();
    Ok((fit_schilder_constant(ell, &points, &se)?, tails))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Domain;

    fn bm(beta: Coefficient) -> ModelSpec {
        ModelSpec::brownian(1, beta, Coefficient::constant(1.0))
    }

    #[test]
    fn zero_potential_gives_one() {
        let e = fk_estimate(
            &bm(Coefficient::constant(0.0)),
            &Coefficient::constant(1.0),
            &[0.3],
            1.7,
            0.01,
            500,
            1e12,
            StreamKey::new(1),
        )
        .unwrap();
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.stderr, 0.0);
        assert_eq!(e.truncation_fraction, 0.0);
    }

    #[test]
    fn constant_potential_gives_exponential() {
        let e = fk_estimate(
            &bm(Coefficient::constant(0.7)),
            &Coefficient::constant(1.0),
            &[0.0],
            2.0,
            0.01,
            200,
            1e12,
            StreamKey::new(1),
        )
        .unwrap();
        assert!((e.mean - (1.4f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn linear_potential_two_sided_bound() {
        let e = fk_estimate(
            &bm(Coefficient::power(0.0, 1.0, 1.0)),
            &Coefficient::constant(1.0),
            &[0.0],
            1.0,
            0.01,
            20_000,
            1e12,
            StreamKey::new(2),
        )
        .unwrap();
        let (lo, hi) = ((1.0f64 / 6.0).exp(), 4.0 * 0.5f64.exp());
        assert!(e.mean + 3.0 * e.stderr >= lo && e.mean - 3.0 * e.stderr <= hi, "{e:?}");
    }

    #[test]
    fn monotone_in_beta_g_and_domain() {
        let key = StreamKey::new(77);
        let one = Coefficient::constant(1.0);
        let run = |m: &ModelSpec, g: &Coefficient| fk_estimate(m, g, &[0.0], 1.0, 0.01, 2000, 1e12, key).unwrap().mean;
        let b1 = bm(Coefficient::power(0.0, 1.0, 1.0));
        let b2 = bm(Coefficient::power(0.5, 1.0, 1.0));
        assert!(run(&b1, &one) <= run(&b2, &one));
        assert!(run(&b1, &Coefficient::bump(0.0, 1.0, 1.0)) <= run(&b1, &one));
        let small = b1.clone().with_domain(Domain::Interval { lo: -1.0, hi: 1.0 });
        let big = b1.clone().with_domain(Domain::Interval { lo: -2.0, hi: 2.0 });
        assert!(run(&small, &one) <= run(&big, &one));
        assert!(run(&big, &one) <= run(&b1, &one));
    }

    #[test]
    fn weight_cap_flags_divergence() {
        let m = bm(Coefficient::power(1.0, 1.0, 2.0));
        let e = fk_estimate(&m, &Coefficient::constant(1.0), &[0.0], 3.0, 0.01, 2000, 10.0, StreamKey::new(3)).unwrap();
        assert!(e.truncation_fraction > 0.01);
        assert!(e.divergence_suspected);
    }

    #[test]
    fn tail_at_zero_threshold_is_one() {
        let t = tail_probability(1.0, 0.0, 10, TailMethod::Naive, SplittingPlan::default(), StreamKey::new(1)).unwrap();
        assert_eq!(t.prob, 1.0);
        assert_eq!(t.log_prob, 0.0);
    }

    #[test]
    fn naive_underflow_flag() {
        let t = tail_probability(1.0, 4.0, 1000, TailMethod::Naive, SplittingPlan::default(), StreamKey::new(1)).unwrap();
        assert!(t.underflow);
        assert_eq!(t.prob, 0.0);
    }

    #[test]
    fn tail_respects_reflection_bound_and_methods_agree() {
        let plan = SplittingPlan {
            dt: 2e-3,
            ..SplittingPlan::default()
        };
        let bound = reflection_bound(1.0, 2.0);
        assert!((bound - 2.0 * (-2.0f64).exp()).abs() < 1e-15);
        let naive = tail_probability(1.0, 1.5, 40_000, TailMethod::Naive, plan, StreamKey::new(4)).unwrap();
        let split = tail_probability(1.0, 1.5, 20_000, TailMethod::Splitting, plan, StreamKey::new(5)).unwrap();
        let tol = 3.0 * (naive.stderr.powi(2) + split.stderr.powi(2)).sqrt();
        assert!((naive.prob - split.prob).abs() < tol, "{naive:?} {split:?}");
        let at2 = tail_probability(1.0, 2.0, 20_000, TailMethod::Splitting, plan, StreamKey::new(6)).unwrap();
        assert!(at2.prob <= bound);
    }

    #[test]
    fn naive_tail_monotone_in_threshold_under_common_numbers() {
        let plan = SplittingPlan::default();
        let ps: Vec<f64> = [0.2, 0.5, 0.8, 1.1]
            .iter()
            .map(|&k| tail_probability(1.0, k, 5000, TailMethod::Naive, plan, StreamKey::new(8)).unwrap().prob)
            .collect();
        assert!(ps.windows(2).all(|w| w[0] >= w[1]), "{ps:?}");
    }

    #[test]
    fn synthetic_schilder_fit_is_exact() {
        let pts: Vec<(f64, f64)> = [2.0, 3.0, 4.0].iter().map(|&k: &f64| (k, -1.5 * k * k)).collect();
        let fit = fit_schilder_constant(1.0, &pts, &[]).unwrap();
        assert!((fit.c - 3.0).abs() < 1e-12);
    }

    #[test]
    fn synthetic_reflection_data_gives_c_at_least_one() {
        let pts: Vec<(f64, f64)> = [2.0, 4.0, 8.0, 16.0]
            .iter()
            .map(|&k| (k, reflection_bound(2.0, k).ln()))
            .collect();
        let fit = fit_schilder_constant(2.0, &pts, &[]).unwrap();
        assert!(fit.c >= 1.0, "{fit:?}");
    }

    #[test]
    fn fit_refuses_underflow() {
        let pts = vec![(2.0, -6.0), (3.0, f64::NEG_INFINITY), (4.0, -24.0)];
        assert!(matches!(
            fit_schilder_constant(1.0, &pts, &[]),
            Err(Error::Underflow { threshold }) if threshold == 3.0
        ));
    }
}
