//! Branching diffusion `Z`: particles follow the motion and split in two at
//! rate `β(x)`, offspring placed at the parent's position.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::model::{Domain, ModelSpec};
use crate::particles::{Branching, Engine};

/// Initial condition of the branching diffusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Initial {
    /// A Poisson(1) number of particles at `x`.
    PoissonAt { x: Vec<f64> },
    /// Exactly `k` particles at `x`.
    CountAt { k: usize, x: Vec<f64> },
}

impl Initial {
    pub fn poisson_origin(dim: usize) -> Self {
        Initial::PoissonAt { x: vec![0.0; dim] }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let (k, x) = match self {
            Initial::PoissonAt { x } => {
                let k: f64 = Poisson::new(1.0).expect("valid rate").sample(rng);
                (k as usize, x)
            }
            Initial::CountAt { k, x } => (*k, x),
        };
        x.iter().copied().cycle().take(k * x.len()).collect()
    }
}

/// Resource caps for a single replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Caps {
    pub max_particles: usize,
    /// Optional wall-clock cap in seconds; results then depend on machine speed.
    #[serde(default)]
    pub max_wall: Option<f64>,
}

impl Default for Caps {
    fn default() -> Self {
        Self {
            max_particles: 10_000_000,
            max_wall: None,
        }
    }
}

/// A population of unit-mass particles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticlePopulation {
    pub dim: usize,
    /// Flat coordinates, `dim` per particle.
    pub positions: Vec<f64>,
    pub time: f64,
    pub births: u64,
    pub initial_count: u64,
}

impl ParticlePopulation {
    pub fn empty(dim: usize, time: f64) -> Self {
        Self {
            dim,
            positions: Vec::new(),
            time,
            births: 0,
            initial_count: 0,
        }
    }

    pub fn from_points(dim: usize, positions: Vec<f64>, time: f64) -> Self {
        let n = (positions.len() / dim) as u64;
        Self {
            dim,
            positions,
            time,
            births: 0,
            initial_count: n,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Aggregates of a population at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    pub total_mass: f64,
    /// Rightmost first coordinate, `−∞` for an empty population.
    pub rightmost: f64,
    /// Radius of the smallest centered ball containing the support.
    pub radius: f64,
    pub local_mass: f64,
}

/// Time-indexed records from one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticSeries {
    pub records: Vec<Record>,
    pub caps_hit: bool,
    /// Time at which the cap was exceeded, if it was.
    pub cap_time: Option<f64>,
}

/// `(|Z|, M, ρ, Z(B))` for unit masses.
pub fn population_statistics(pop: &ParticlePopulation, window: &Domain) -> (f64, f64, f64, f64) {
    aggregate(pop.dim, &pop.positions, 1.0, window)
}

pub(crate) fn aggregate(dim: usize, positions: &[f64], mass: f64, window: &Domain) -> (f64, f64, f64, f64) {
    if positions.is_empty() {
        return (0.0, f64::NEG_INFINITY, 0.0, 0.0);
    }
    let mut right = f64::NEG_INFINITY;
    let mut radius2: f64 = 0.0;
    let mut local = 0usize;
    for p in positions.chunks(dim) {
        right = right.max(p[0]);
        radius2 = radius2.max(p.iter().map(|v| v * v).sum());
        local += window.contains(p) as usize;
    }
    let n = positions.len() / dim;
    (n as f64 * mass, right, radius2.sqrt(), local as f64 * mass)
}

/// Simulate the branching diffusion to `horizon`, recording statistics at `record_times`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_bbm<R: Rng + ?Sized>(
    model: &ModelSpec,
    init: &Initial,
    horizon: f64,
    dt: f64,
    caps: Caps,
    record_times: &[f64],
    window: &Domain,
    rng: &mut R,
) -> Result<(StatisticSeries, ParticlePopulation)> {
    model.validate()?;
    ensure(horizon > 0.0, "horizon", "must be positive")?;
    ensure(dt > 0.0, "dt", "must be positive")?;
    ensure(
        record_times.windows(2).all(|w| w[0] < w[1]),
        "record_times",
        "must be strictly increasing",
    )?;
    let start = caps.max_wall.map(|_| std::time::Instant::now());
    let positions = init.sample(rng);
    let mut engine = Engine::new(model, Branching::Dyadic, positions, rng.gen())?;
    let mut records = Vec::with_capacity(record_times.len());
    let mut next_record = 0usize;
    let mut caps_hit = false;
    let mut cap_time = None;
    let record = |engine: &Engine<'_>| {
        let (m, r, rho, local) = aggregate(engine.dim, &engine.positions, 1.0, window);
        Record {
            t: engine.time,
            total_mass: m,
            rightmost: r,
            radius: rho,
            local_mass: local,
        }
    };
    loop {
        while next_record < record_times.len() && record_times[next_record] <= engine.time + 1e-12 {
            if record_times[next_record] <= horizon + 1e-12 {
                let mut r = record(&engine);
                r.t = record_times[next_record];
                records.push(r);
            }
            next_record += 1;
        }
        if engine.time >= horizon - 1e-12 {
            break;
        }
        let until = record_times
            .get(next_record)
            .copied()
            .unwrap_or(horizon)
            .min(horizon);
        let h = engine.adaptive_step(dt, until);
        engine.step(h)?;
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
    let pop = ParticlePopulation {
        dim: engine.dim,
        time: engine.time,
        births: engine.gained,
        initial_count: engine.initial_count,
        positions: std::mem::take(&mut engine.positions),
    };
    Ok((
        StatisticSeries {
            records,
            caps_hit,
            cap_time,
        },
        pop,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Coefficient;
    use crate::rng::{par_replicates, StreamKey};
    use crate::stats::mean_stderr;

    fn bm(beta: Coefficient) -> ModelSpec {
        ModelSpec::brownian(1, beta, Coefficient::constant(1.0))
    }

    fn window() -> Domain {
        Domain::Interval { lo: -1.0, hi: 1.0 }
    }

    #[test]
    fn no_branching_keeps_count() {
        let m = bm(Coefficient::constant(0.0));
        let mut rng = StreamKey::new(1).rng();
        let init = Initial::CountAt { k: 5, x: vec![0.0] };
        let (s, pop) = simulate_bbm(&m, &init, 2.0, 0.05, Caps::default(), &[0.5, 1.0, 2.0], &window(), &mut rng).unwrap();
        assert!(s.records.iter().all(|r| r.total_mass == 5.0));
        assert_eq!(pop.len(), 5);
        assert_eq!(pop.births, 0);
        assert_eq!(s.records.len(), 3);
    }

    #[test]
    fn statistics_definitions() {
        let pop = ParticlePopulation::from_points(1, vec![3.0], 0.0);
        assert_eq!(
            population_statistics(&pop, &Domain::Interval { lo: 2.0, hi: 4.0 }),
            (1.0, 3.0, 3.0, 1.0)
        );
        let pop = ParticlePopulation::from_points(1, vec![-2.0, 5.0], 0.0);
        let (_, m, rho, _) = population_statistics(&pop, &window());
        assert_eq!((m, rho), (5.0, 5.0));
        let empty = ParticlePopulation::empty(1, 0.0);
        assert_eq!(population_statistics(&empty, &window()), (0.0, f64::NEG_INFINITY, 0.0, 0.0));
    }

    #[test]
    fn yule_mean_growth() {
        // Oracle: linear expectation ODE m' = 2m, E|Z_t| = e^{2t}.
        let m = bm(Coefficient::constant(2.0));
        let init = Initial::CountAt { k: 1, x: vec![0.0] };
        let counts: Vec<f64> = par_replicates(StreamKey::new(2), 10_000, |_, rng| {
            let (s, _) = simulate_bbm(&m, &init, 2.0, 0.05, Caps::default(), &[2.0], &window(), rng).unwrap();
            s.records[0].total_mass
        });
        let (mean, se) = mean_stderr(&counts);
        assert!((mean - 4f64.exp()).abs() < 3.0 * se, "mean={mean} se={se}");
    }

    #[test]
    fn population_accounting() {
        let m = bm(Coefficient::power(1.0, 1.0, 1.0));
        let init = Initial::CountAt { k: 3, x: vec![0.0] };
        let mut rng = StreamKey::new(3).rng();
        let (_, pop) = simulate_bbm(&m, &init, 1.5, 0.01, Caps::default(), &[], &window(), &mut rng).unwrap();
        assert_eq!(pop.len() as u64, pop.initial_count + pop.births);
    }

    #[test]
    fn poisson_start_empty_probability() {
        // Exact binomial check of P(empty) = e^{-1} over 1e5 replicates (3σ).
        let init = Initial::poisson_origin(1);
        let empties: usize = par_replicates(StreamKey::new(4), 100_000, |_, rng| init.sample(rng).is_empty() as usize)
            .into_iter()
            .sum();
        let p = (-1f64).exp();
        let sd = (p * (1.0 - p) / 1e5).sqrt();
        assert!((empties as f64 / 1e5 - p).abs() < 3.0 * sd);
    }

    #[test]
    fn coupling_monotone_in_beta() {
        // Common random numbers: raising β pointwise never lowers the count.
        for seed in 0..20 {
            let init = Initial::CountAt { k: 1, x: vec![0.0] };
            let times = [0.5, 1.0];
            let run = |b: f64| {
                let m = bm(Coefficient::constant(b));
                let mut rng = StreamKey::new(seed).rng();
                simulate_bbm(&m, &init, 1.0, 0.01, Caps::default(), &times, &window(), &mut rng).unwrap().0
            };
            let lo = run(1.0);
            let hi = run(1.5);
            for (a, b) in lo.records.iter().zip(&hi.records) {
                assert!(b.total_mass >= a.total_mass, "seed {seed}");
            }
        }
    }

    #[test]
    fn cap_is_reported() {
        let m = bm(Coefficient::constant(3.0));
        let init = Initial::CountAt { k: 1, x: vec![0.0] };
        let mut rng = StreamKey::new(5).rng();
        let caps = Caps {
            max_particles: 500,
            max_wall: None,
        };
        let times: Vec<f64> = (1..=50).map(|i| i as f64 * 0.1).collect();
        let (s, _) = simulate_bbm(&m, &init, 5.0, 0.01, caps, &times, &window(), &mut rng).unwrap();
        assert!(s.caps_hit);
        assert!(s.records.len() < times.len());
        assert!(s.records.windows(2).all(|w| w[0].t < w[1].t));
    }
}
