//! Shared particle engine for the branching diffusion and the superprocess
//! approximation.
//!
//! Within a step of length `h` every particle keeps the rates of its starting
//! position and runs a linear birth–death process (birth rate `λ`, death rate
//! `μ`) for time `h`; the offspring count is sampled from the closed-form law
//! of that process. Each surviving copy then moves with its own increment.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::motion::Motion;
use crate::rng::{mix64, CounterRng};

/// Population size at time `h` of a linear birth–death process started from
/// one individual, driven by two uniforms `u`, `w` in `[0, 1)`.
///
/// `P(N = 0) = a`, `P(N = k) = (1 − a)(1 − b) b^{k−1}` for `k ≥ 1`, with
/// `φ = (e^{(λ−μ)h} − 1)/(λ − μ)`, `a = μφ/(1 + λφ)`, `b = λφ/(1 + λφ)`.
/// For fixed uniforms the count is nondecreasing in the birth rate when `μ = 0`.
#[inline]
pub fn birth_death_count_from(birth: f64, death: f64, h: f64, u: f64, w: f64) -> u64 {
    let delta = birth - death;
    let phi = if delta == 0.0 {
        h
    } else {
        (delta * h).exp_m1() / delta
    };
    let denom = 1.0 + birth * phi;
    let a = death * phi / denom;
    let b = birth * phi / denom;
    if u < a {
        return 0;
    }
    // conditional on survival: geometric on {1, 2, ...} with ratio b
    let v = (u - a) / (1.0 - a);
    if b <= 0.0 || v >= b {
        return 1;
    }
    2 + ((1.0 - w).ln() / b.ln()).floor().max(0.0) as u64
}

#[inline]
pub fn birth_death_count<R: Rng + ?Sized>(birth: f64, death: f64, h: f64, rng: &mut R) -> u64 {
    let u: f64 = rng.gen();
    let w: f64 = rng.gen();
    birth_death_count_from(birth, death, h, u, w)
}

/// How per-particle rates derive from the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Branching {
    /// Binary splitting at rate β(x), no deaths.
    Dyadic,
    /// Level-`n` approximation: events at rate `2nα(x)`, two offspring with
    /// probability `½ + β(x)/(4nα(x))`, none otherwise.
    Super { n: f64 },
}

/// Birth/death rates at a point; returns `(birth, death, clipped)`.
#[inline]
pub fn rates(model: &ModelSpec, branching: Branching, x: &[f64]) -> Result<(f64, f64, bool)> {
    let beta = model.beta.eval(x);
    if !beta.is_finite() {
        return Err(Error::Model(format!("non-finite beta at {x:?}")));
    }
    match branching {
        Branching::Dyadic => {
            if beta < 0.0 {
                return Err(Error::Model(format!("negative branching rate at {x:?}")));
            }
            Ok((beta, 0.0, false))
        }
        Branching::Super { n } => {
            let alpha = model.alpha.eval(x);
            if !(alpha > 0.0) || !alpha.is_finite() {
                return Err(Error::Model(format!("alpha must be finite and > 0 at {x:?}")));
            }
            let total = 2.0 * n * alpha;
            let split = 0.5 + beta / (4.0 * n * alpha);
            let clipped = !(0.0..=1.0).contains(&split);
            let split = split.clamp(0.0, 1.0);
            Ok((total * split, total * (1.0 - split), clipped))
        }
    }
}

/// A population of point particles stored as a flat coordinate array.
///
/// Randomness is drawn per particle from a stream keyed by
/// `(replicate seed, particle id, step index)`, so the outcome of a step does
/// not depend on the order in which particles are processed. The first copy
/// of a particle keeps its id; further copies get fresh ids derived from it.
#[derive(Debug, Clone)]
pub struct Engine<'a> {
    motion: Motion<'a>,
    model: &'a ModelSpec,
    branching: Branching,
    seed: u64,
    steps: u64,
    pub dim: usize,
    pub positions: Vec<f64>,
    pub ids: Vec<u64>,
    pub time: f64,
    /// Copies gained (offspring beyond the first) over the run.
    pub gained: u64,
    /// Particles lost to zero-offspring events or killing.
    pub lost: u64,
    pub clip_events: u64,
    pub initial_count: u64,
    scratch: Vec<f64>,
    next: Vec<f64>,
    next_ids: Vec<u64>,
}

impl<'a> Engine<'a> {
    pub fn new(model: &'a ModelSpec, branching: Branching, positions: Vec<f64>, seed: u64) -> Result<Self> {
        let dim = model.dim;
        if !positions.len().is_multiple_of(dim) {
            return Err(Error::Model("position array is not a multiple of dim".into()));
        }
        for p in positions.chunks(dim) {
            if !model.domain.contains(p) {
                return Err(Error::Domain { point: p.to_vec() });
            }
        }
        let initial_count = (positions.len() / dim) as u64;
        Ok(Self {
            motion: Motion::new(model)?,
            model,
            branching,
            seed,
            steps: 0,
            dim,
            ids: (0..initial_count).collect(),
            positions,
            time: 0.0,
            gained: 0,
            lost: 0,
            clip_events: 0,
            initial_count,
            scratch: vec![0.0; 2 * dim],
            next: Vec::new(),
            next_ids: Vec::new(),
        })
    }

    pub fn count(&self) -> usize {
        self.ids.len()
    }

    /// Largest positive β over the current particles.
    pub fn max_beta(&self) -> f64 {
        let b = &self.model.beta;
        let m = if self.dim == 1 {
            self.positions.iter().map(|&x| b.eval1(x)).fold(0.0, f64::max)
        } else {
            self.positions.chunks(self.dim).map(|x| b.eval(x)).fold(0.0, f64::max)
        };
        m.max(0.0)
    }

    /// Step size obeying `h·max β ≤ 0.1`, capped by `dt` and the time to `until`.
    pub fn adaptive_step(&self, dt: f64, until: f64) -> f64 {
        let mb = self.max_beta();
        let mut h = dt.min(until - self.time);
        if mb > 0.0 {
            h = h.min(0.1 / mb);
        }
        h
    }

    /// Advance all particles by `h`.
    pub fn step(&mut self, h: f64) -> Result<()> {
        let dim = self.dim;
        let mut next = std::mem::take(&mut self.next);
        let mut next_ids = std::mem::take(&mut self.next_ids);
        next.clear();
        next_ids.clear();
        next.reserve(self.positions.len() + self.positions.len() / 8);
        next_ids.reserve(self.ids.len() + self.ids.len() / 8);
        let mut gained = 0u64;
        let mut lost = 0u64;
        let mut clips = 0u64;
        let domain = &self.model.domain;
        let whole = domain.is_whole_space();
        let step_index = self.steps;
        let mut buf = vec![0.0; dim];
        for (i, &id) in self.ids.iter().enumerate() {
            let p = &self.positions[i * dim..(i + 1) * dim];
            let mut rng = CounterRng::new(self.seed, id, step_index);
            let (b, d, clipped) = rates(self.model, self.branching, p)?;
            clips += clipped as u64;
            let k = birth_death_count(b, d, h, &mut rng);
            if k == 0 {
                lost += 1;
                continue;
            }
            gained += k - 1;
            for j in 0..k {
                let child = if j == 0 { id } else { mix64(id ^ mix64(step_index.wrapping_mul(0x1_0000_0001) ^ j)) };
                let inside = if dim == 1 {
                    let y = self.motion.step1(p[0], h, &mut rng);
                    buf[0] = y;
                    whole || domain.contains1(y)
                } else {
                    buf.copy_from_slice(p);
                    self.motion.step(&mut buf, h, &mut rng, &mut self.scratch);
                    whole || domain.contains(&buf)
                };
                if inside {
                    next.extend_from_slice(&buf);
                    next_ids.push(child);
                } else {
                    lost += 1;
                }
            }
        }
        self.next = std::mem::replace(&mut self.positions, next);
        self.next_ids = std::mem::replace(&mut self.ids, next_ids);
        self.gained += gained;
        self.lost += lost;
        self.clip_events += clips;
        self.time += h;
        self.steps += 1;
        Ok(())
    }
}
