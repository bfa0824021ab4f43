//! One-dimensional finite-difference engine for the cumulant equation
//! `u̇ = Lu + βu − αu²`, its linear part, steady states, the compact-support
//! criterion and the nonlinear h-transform of coefficients.
//!
//! Time stepping is Strang splitting: the pointwise reaction `βu − αu²` is
//! advanced by its exact flow, diffusion by Crank–Nicolson with
//! `D·dt/dx² ≤ 1`, which keeps the step monotone (a discrete maximum
//! principle). Whole-line solutions are built by domain exhaustion on nested,
//! node-aligned grids with zero Dirichlet data.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::model::{Coefficient, ModelSpec};

/// Uniform grid on `[x_lo, x_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub x_lo: f64,
    pub x_hi: f64,
    pub nx: usize,
}

impl Grid1D {
    pub fn new(x_lo: f64, x_hi: f64, nx: usize) -> Result<Self> {
        ensure(nx >= 3, "nx", "need at least 3 points")?;
        ensure(x_hi > x_lo && (x_hi - x_lo).is_finite(), "grid", "need x_lo < x_hi")?;
        Ok(Self { x_lo, x_hi, nx })
    }

    /// `[−R, R]` with spacing `dx`; `R` is rounded to a multiple of `dx` so that
    /// grids of different radii share nodes.
    pub fn symmetric(radius: f64, dx: f64) -> Result<Self> {
        ensure(dx > 0.0, "dx", "must be positive")?;
        let half = (radius / dx).round() as usize;
        ensure(half >= 1, "radius", "must exceed dx")?;
        Self::new(-(half as f64) * dx, half as f64 * dx, 2 * half + 1)
    }

    pub fn dx(&self) -> f64 {
        (self.x_hi - self.x_lo) / (self.nx - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_lo + i as f64 * self.dx()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x(i)).collect()
    }
}

/// Values of a scalar function on a [`Grid1D`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub grid: Grid1D,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.nx {
            return Err(Error::InconsistentGrid(format!("{} values for {} nodes", values.len(), grid.nx)));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.points().into_iter().map(f).collect();
        Self { grid, values }
    }

    /// Linear interpolation; `None` outside the grid.
    pub fn eval(&self, x: f64) -> Option<f64> {
        let g = &self.grid;
        if !(g.x_lo..=g.x_hi).contains(&x) {
            return None;
        }
        let s = (x - g.x_lo) / g.dx();
        let i = (s.floor() as usize).min(g.nx - 2);
        let w = s - i as f64;
        Some(self.values[i] * (1.0 - w) + self.values[i + 1] * w)
    }

    /// Node indices with `lo ≤ x ≤ hi`.
    pub fn window_indices(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let g = &self.grid;
        let dx = g.dx();
        let a = ((lo - g.x_lo) / dx - 1e-9).ceil().max(0.0) as usize;
        let b = (((hi - g.x_lo) / dx + 1e-9).floor() as usize + 1).min(g.nx);
        a..b.max(a)
    }

    pub fn max_abs_on(&self, lo: f64, hi: f64) -> f64 {
        self.values[self.window_indices(lo, hi)].iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn restrict(&self, lo: f64, hi: f64) -> Result<Self> {
        let r = self.window_indices(lo, hi);
        let g = Grid1D::new(self.grid.x(r.start), self.grid.x(r.end - 1), r.len())?;
        Ok(Self {
            grid: g,
            values: self.values[r].to_vec(),
        })
    }
}

/// Initial or terminal data: a catalog function or a grid function (linear
/// interpolation, zero outside its grid).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialData {
    Function { g: Coefficient },
    Grid { f: GridFunction },
}

impl InitialData {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            InitialData::Function { g } => g.eval1(x),
            InitialData::Grid { f } => f.eval(x).unwrap_or(0.0),
        }
    }

    fn support(&self) -> Option<(f64, f64)> {
        match self {
            InitialData::Function { g } => g.compact_support(),
            InitialData::Grid { f } => {
                let nz: Vec<usize> = (0..f.grid.nx).filter(|&i| f.values[i] != 0.0).collect();
                Some(match (nz.first(), nz.last()) {
                    (Some(&a), Some(&b)) => (f.grid.x(a.saturating_sub(1)), f.grid.x((b + 1).min(f.grid.nx - 1))),
                    _ => (0.0, 0.0),
                })
            }
        }
    }
}

/// A cumulant-equation problem on the line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeProblem {
    pub model: ModelSpec,
    pub initial: InitialData,
    /// Dirichlet value on `±R`.
    pub boundary: f64,
    /// Exhaustion radii, increasing.
    pub radii: Vec<f64>,
    pub dx: f64,
    /// Upper bound on the time step; the monotone limit `D·dt/dx² ≤ 1` also applies.
    pub dt: f64,
    /// Reporting window on which convergence in `R` is judged.
    pub window: (f64, f64),
    pub tol: f64,
}

/// Exhaustion radii `5·2^k` up to 320.
pub fn default_radii() -> Vec<f64> {
    (0..=6).map(|k| 5.0 * 2f64.powi(k)).collect()
}

impl PdeProblem {
    pub fn new(model: ModelSpec, initial: InitialData) -> Self {
        let window = match initial.support() {
            Some((a, b)) => {
                let c = 0.5 * (a + b);
                let r = 0.5 * (b - a);
                (c - 4.0 * r, c + 4.0 * r)
            }
            None => (-1.0, 1.0),
        };
        Self {
            model,
            initial,
            boundary: 0.0,
            radii: default_radii(),
            dx: 0.05,
            dt: 0.005,
            window,
            tol: 1e-8,
        }
    }

    pub fn with_window(mut self, lo: f64, hi: f64) -> Self {
        self.window = (lo, hi);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.model.dim != 1 {
            return Err(Error::Model("the PDE engine is one-dimensional".into()));
        }
        self.model.validate()?;
        ensure(self.dx > 0.0 && self.dt > 0.0, "dx", "dx and dt must be positive")?;
        ensure(self.boundary >= 0.0, "boundary", "must be nonnegative")?;
        ensure(self.window.0 <= self.window.1, "window", "need lo ≤ hi")?;
        ensure(!self.radii.is_empty(), "radii", "need at least one radius")?;
        ensure(self.radii.windows(2).all(|w| w[0] < w[1]), "radii", "must increase")?;
        Ok(())
    }
}

/// Outcome of an exhaustion solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    /// Values still changing (or non-finite) at the largest radius; the last
    /// iterate is returned.
    BlowUpSuspected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExhaustionStep {
    pub radius: f64,
    /// Relative max-change on the window against the previous radius.
    pub change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeSolution {
    pub status: SolveStatus,
    pub solution: GridFunction,
    pub history: Vec<ExhaustionStep>,
}

/// Tridiagonal solve (Thomas algorithm); `a` sub-, `b` main, `c` super-diagonal.
pub fn solve_tridiagonal(a: &[f64], b: &[f64], c: &[f64], d: &mut [f64], work: &mut Vec<f64>) {
    let n = b.len();
    work.clear();
    work.resize(n, 0.0);
    let mut beta = b[0];
    d[0] /= beta;
    for i in 1..n {
        work[i] = c[i - 1] / beta;
        beta = b[i] - a[i] * work[i];
        d[i] = (d[i] - a[i] * d[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        d[i] -= work[i + 1] * d[i + 1];
    }
}

/// Discrete generator `L` on interior nodes: `(Au)_i = l_i u_{i−1} + c_i u_i + r_i u_{i+1}`.
struct Operator {
    l: Vec<f64>,
    c: Vec<f64>,
    r: Vec<f64>,
}

impl Operator {
    fn new(model: &ModelSpec, x: &[f64], dx: f64) -> Self {
        let d = 0.5 * model.diffusion.scalar1();
        let k = d / (dx * dx);
        let n = x.len();
        let (mut l, mut c, mut r) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            let b = model.drift.eval1(x[i]);
            if b.abs() * dx <= 2.0 * d {
                l[i] = k - b / (2.0 * dx);
                c[i] = -2.0 * k;
                r[i] = k + b / (2.0 * dx);
            } else if b > 0.0 {
                l[i] = k;
                c[i] = -2.0 * k - b / dx;
                r[i] = k + b / dx;
            } else {
                l[i] = k - b / dx;
                c[i] = -2.0 * k + b / dx;
                r[i] = k;
            }
        }
        Self { l, c, r }
    }

    /// Largest time step keeping the explicit half of Crank–Nicolson monotone.
    fn monotone_dt(&self) -> f64 {
        let m = self.c.iter().fold(0.0f64, |m, v| m.max(-v));
        if m > 0.0 {
            2.0 / m
        } else {
            f64::INFINITY
        }
    }
}

/// Exact flow of `u̇ = βu − αu²` over `τ`, stored as `u ↦ p·u/(q + r·u)`.
#[derive(Clone, Copy)]
struct Flow {
    p: f64,
    q: f64,
    r: f64,
}

impl Flow {
    fn new(beta: f64, alpha: f64, tau: f64) -> Self {
        if beta > 0.0 {
            let e = (-beta * tau).exp();
            Self {
                p: 1.0,
                q: e,
                r: alpha * (-(-beta * tau).exp_m1()) / beta,
            }
        } else {
            let phi = if beta == 0.0 { tau } else { (beta * tau).exp_m1() / beta };
            Self {
                p: (beta * tau).exp(),
                q: 1.0,
                r: alpha * phi,
            }
        }
    }

    #[inline]
    fn apply(&self, u: f64) -> f64 {
        if u == 0.0 {
            return 0.0;
        }
        self.p * u / (self.q + self.r * u)
    }
}

/// Fixed-domain solver on `[−R, R]`.
struct DomainSolver {
    grid: Grid1D,
    op: Operator,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    boundary: f64,
}

impl DomainSolver {
    fn new(model: &ModelSpec, radius: f64, dx: f64, boundary: f64, linear: bool) -> Result<Self> {
        let grid = Grid1D::symmetric(radius, dx)?;
        let x = grid.points();
        let op = Operator::new(model, &x, grid.dx());
        let beta: Vec<f64> = x.iter().map(|&v| model.beta.eval1(v)).collect();
        let alpha: Vec<f64> = if linear {
            vec![0.0; x.len()]
        } else {
            x.iter().map(|&v| model.alpha.eval1(v)).collect()
        };
        Ok(Self {
            grid,
            op,
            beta,
            alpha,
            boundary,
        })
    }

    fn initial(&self, data: &InitialData) -> Vec<f64> {
        let mut u: Vec<f64> = self.grid.points().iter().map(|&x| data.eval(x)).collect();
        let n = u.len();
        u[0] = self.boundary;
        u[n - 1] = self.boundary;
        u
    }

    /// Step count and size for each interval between consecutive record times.
    fn schedule(&self, dt_max: f64, times: &[f64]) -> Vec<(usize, f64)> {
        let dt = dt_max.min(self.op.monotone_dt());
        let mut prev = 0.0;
        times
            .iter()
            .map(|&t| {
                let len = t - prev;
                prev = t;
                if len <= 0.0 {
                    (0, 0.0)
                } else {
                    let k = (len / dt).ceil().max(1.0) as usize;
                    (k, len / k as f64)
                }
            })
            .collect()
    }

    /// Evolve `u` and return copies at each record time.
    fn run(&self, mut u: Vec<f64>, dt_max: f64, times: &[f64], mut observe: impl FnMut(&[f64])) -> Vec<Vec<f64>> {
        let n = u.len();
        let m = n - 2;
        let (mut a, mut b, mut c) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        let mut rhs = vec![0.0; m];
        let mut work = Vec::new();
        let mut out = Vec::with_capacity(times.len());
        let mut flows: Vec<Flow> = Vec::new();
        let mut flow_h = f64::NAN;
        for (steps, h) in self.schedule(dt_max, times) {
            if steps > 0 {
                if h != flow_h {
                    flows = (0..n).map(|i| Flow::new(self.beta[i], self.alpha[i], 0.5 * h)).collect();
                    flow_h = h;
                    for j in 0..m {
                        let i = j + 1;
                        a[j] = -0.5 * h * self.op.l[i];
                        b[j] = 1.0 - 0.5 * h * self.op.c[i];
                        c[j] = -0.5 * h * self.op.r[i];
                    }
                }
                for _ in 0..steps {
                    for i in 1..n - 1 {
                        u[i] = flows[i].apply(u[i]);
                    }
                    for j in 0..m {
                        let i = j + 1;
                        let op = &self.op;
                        rhs[j] = u[i] + 0.5 * h * (op.l[i] * u[i - 1] + op.c[i] * u[i] + op.r[i] * u[i + 1]);
                    }
                    // boundary contributions from the new time level
                    rhs[0] += 0.5 * h * self.op.l[1] * self.boundary;
                    rhs[m - 1] += 0.5 * h * self.op.r[n - 2] * self.boundary;
                    solve_tridiagonal(&a, &b, &c, &mut rhs, &mut work);
                    u[1..n - 1].copy_from_slice(&rhs);
                    for i in 1..n - 1 {
                        u[i] = flows[i].apply(u[i]);
                    }
                    observe(&u);
                }
            }
            out.push(u.clone());
        }
        out
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    ensure(!times.is_empty(), "times", "need at least one time")?;
    ensure(times[0] >= 0.0, "times", "must be nonnegative")?;
    ensure(times.windows(2).all(|w| w[0] < w[1]), "times", "must increase")
}

/// Domain exhaustion: returns the record-time slices on the final domain.
fn exhaust(problem: &PdeProblem, linear: bool, times: &[f64]) -> Result<(SolveStatus, Grid1D, Vec<Vec<f64>>, Vec<ExhaustionStep>)> {
    problem.validate()?;
    check_times(times)?;
    let (lo, hi) = problem.window;
    let reach = lo.abs().max(hi.abs()) + 2.0 * problem.dx;
    let radii: Vec<f64> = problem.radii.iter().copied().filter(|&r| r > reach).collect();
    if radii.is_empty() {
        return Err(Error::InconsistentGrid("no exhaustion radius contains the window".into()));
    }
    let mut prev: Option<(Grid1D, Vec<Vec<f64>>)> = None;
    let mut history = Vec::new();
    for &radius in &radii {
        let solver = DomainSolver::new(&problem.model, radius, problem.dx, problem.boundary, linear)?;
        let slices = solver.run(solver.initial(&problem.initial), problem.dt, times, |_| {});
        let finite = slices.iter().all(|s| s.iter().all(|v| v.is_finite() && v.abs() < 1e300));
        if !finite {
            history.push(ExhaustionStep {
                radius,
                change: f64::INFINITY,
            });
            let (grid, last) = prev.unwrap_or((solver.grid, slices));
            return Ok((SolveStatus::BlowUpSuspected, grid, last, history));
        }
        let mut change = f64::INFINITY;
        if let Some((pg, ps)) = &prev {
            let offset = ((pg.x_lo - solver.grid.x_lo) / problem.dx).round() as usize;
            let gf = GridFunction {
                grid: *pg,
                values: vec![0.0; pg.nx],
            };
            let win = gf.window_indices(lo, hi);
            change = 0.0;
            for (old, new) in ps.iter().zip(&slices) {
                for i in 0..pg.nx {
                    let (o, v) = (old[i], new[i + offset]);
                    let scale = v.abs().max(1.0);
                    if problem.boundary == 0.0 && v < o - 1e-10 * scale {
                        return Err(Error::InconsistentGrid(format!(
                            "exhaustion not monotone at x = {}: {} < {}",
                            pg.x(i),
                            v,
                            o
                        )));
                    }
                    if win.contains(&i) {
                        change = change.max((v - o).abs() / scale);
                    }
                }
            }
        }
        history.push(ExhaustionStep { radius, change });
        let done = change < problem.tol;
        prev = Some((solver.grid, slices));
        if done {
            let (g, s) = prev.unwrap();
            return Ok((SolveStatus::Converged, g, s, history));
        }
    }
    let (g, s) = prev.unwrap();
    Ok((SolveStatus::BlowUpSuspected, g, s, history))
}

/// `S_t g`: minimal nonnegative solution of the cumulant equation at time `t`.
pub fn solve_cumulant(problem: &PdeProblem, t: f64) -> Result<PdeSolution> {
    solve_impl(problem, t, false)
}

/// `T_t g`: the linear equation `u̇ = (L + β)u`.
pub fn solve_linear(problem: &PdeProblem, t: f64) -> Result<PdeSolution> {
    solve_impl(problem, t, true)
}

fn solve_impl(problem: &PdeProblem, t: f64, linear: bool) -> Result<PdeSolution> {
    ensure(t >= 0.0, "t", "must be nonnegative")?;
    let (status, grid, mut slices, history) = exhaust(problem, linear, &[t])?;
    Ok(PdeSolution {
        status,
        solution: GridFunction {
            grid,
            values: slices.pop().expect("one slice"),
        },
        history,
    })
}

/// `T_s g` at each of the increasing times `s`, by one exhaustion over the
/// whole trajectory.
pub fn linear_trajectory(problem: &PdeProblem, times: &[f64]) -> Result<(SolveStatus, Vec<GridFunction>)> {
    let (status, grid, slices, _) = exhaust(problem, true, times)?;
    Ok((status, slices.into_iter().map(|values| GridFunction { grid, values }).collect()))
}

/// `H(·, r)` for `r` on a uniform grid of `[0, t]`, solving `−∂_r H = LH + βH`
/// with `H(·, t) = h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSlab {
    pub status: SolveStatus,
    pub r: Vec<f64>,
    pub slices: Vec<GridFunction>,
}

impl TimeSlab {
    pub fn at(&self, r_index: usize, x: f64) -> Option<f64> {
        self.slices.get(r_index)?.eval(x)
    }
}

pub fn solve_backward(problem: &PdeProblem, t: f64, intervals: usize) -> Result<TimeSlab> {
    ensure(t > 0.0, "t", "must be positive")?;
    ensure(intervals >= 1, "intervals", "must be positive")?;
    let (lo, hi) = problem.window;
    let probe = GridFunction::from_fn(Grid1D::new(lo.min(hi - 1e-9), hi.max(lo + 1e-9), 3)?, |x| problem.initial.eval(x));
    if probe.values.iter().any(|&v| !(v > 0.0)) {
        return Err(param_err("h must be positive on the window"));
    }
    // elapsed times s_j = t·j/m; H(·, t − s_j)
    let times: Vec<f64> = (0..=intervals).map(|j| t * j as f64 / intervals as f64).collect();
    let (status, grid, slices, _) = exhaust(problem, true, &times)?;
    let mut r = Vec::with_capacity(times.len());
    let mut out = Vec::with_capacity(times.len());
    for (s, v) in times.iter().zip(slices).rev() {
        r.push(t - s);
        out.push(GridFunction { grid, values: v });
    }
    Ok(TimeSlab { status, r, slices: out })
}

fn param_err(reason: &str) -> Error {
    Error::Parameter {
        name: "h",
        reason: reason.into(),
    }
}

/// `H`, `∂_s H`, `∂_x H`, `∂_xx H` at grid points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HDerivatives {
    pub h: Vec<f64>,
    pub h_s: Vec<f64>,
    pub h_x: Vec<f64>,
    pub h_xx: Vec<f64>,
}

/// Closed-form transforming functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum HClosed {
    Constant { c: f64 },
    /// `e^{−λs}`.
    ExpTime { lambda: f64 },
    /// `cosh(kx)`.
    Cosh { k: f64 },
    /// `e^{kx}`.
    ExpSpace { k: f64 },
}

impl HDerivatives {
    pub fn closed(h: HClosed, grid: &Grid1D, s: f64) -> Self {
        let n = grid.nx;
        let x = grid.points();
        let mut d = Self {
            h: vec![0.0; n],
            h_s: vec![0.0; n],
            h_x: vec![0.0; n],
            h_xx: vec![0.0; n],
        };
        for i in 0..n {
            let (v, vs, vx, vxx) = match h {
                HClosed::Constant { c } => (c, 0.0, 0.0, 0.0),
                HClosed::ExpTime { lambda } => {
                    let e = (-lambda * s).exp();
                    (e, -lambda * e, 0.0, 0.0)
                }
                HClosed::Cosh { k } => {
                    let (c, sh) = ((k * x[i]).cosh(), (k * x[i]).sinh());
                    (c, 0.0, k * sh, k * k * c)
                }
                HClosed::ExpSpace { k } => {
                    let e = (k * x[i]).exp();
                    (e, 0.0, k * e, k * k * e)
                }
            };
            d.h[i] = v;
            d.h_s[i] = vs;
            d.h_x[i] = vx;
            d.h_xx[i] = vxx;
        }
        d
    }

    /// Centered differences in `x` (one-sided at the ends); `h_s` supplied by
    /// the caller or taken as zero.
    pub fn from_grid(f: &GridFunction, h_s: Option<&[f64]>) -> Result<Self> {
        let n = f.grid.nx;
        let dx = f.grid.dx();
        let v = &f.values;
        let mut h_x = vec![0.0; n];
        let mut h_xx = vec![0.0; n];
        for i in 1..n - 1 {
            h_x[i] = (v[i + 1] - v[i - 1]) / (2.0 * dx);
            h_xx[i] = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (dx * dx);
        }
        h_x[0] = (v[1] - v[0]) / dx;
        h_x[n - 1] = (v[n - 1] - v[n - 2]) / dx;
        h_xx[0] = h_xx[1];
        h_xx[n - 1] = h_xx[n - 2];
        let h_s = match h_s {
            Some(s) if s.len() == n => s.to_vec(),
            Some(_) => return Err(Error::InconsistentGrid("time derivative length mismatch".into())),
            None => vec![0.0; n],
        };
        Ok(Self {
            h: v.clone(),
            h_s,
            h_x,
            h_xx,
        })
    }

    /// Derivatives of `1/H` by the quotient rule.
    pub fn reciprocal(&self) -> Self {
        let n = self.h.len();
        let mut d = Self {
            h: vec![0.0; n],
            h_s: vec![0.0; n],
            h_x: vec![0.0; n],
            h_xx: vec![0.0; n],
        };
        for i in 0..n {
            let h = self.h[i];
            let h2 = h * h;
            d.h[i] = 1.0 / h;
            d.h_s[i] = -self.h_s[i] / h2;
            d.h_x[i] = -self.h_x[i] / h2;
            d.h_xx[i] = -self.h_xx[i] / h2 + 2.0 * self.h_x[i] * self.h_x[i] / (h2 * h);
        }
        d
    }
}

/// Coefficients `(b, β, α)` sampled on a grid, with diffusion `a = σ²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientGrid {
    pub grid: Grid1D,
    pub sigma2: f64,
    pub drift: Vec<f64>,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl CoefficientGrid {
    pub fn from_model(model: &ModelSpec, grid: Grid1D) -> Result<Self> {
        if model.dim != 1 {
            return Err(Error::Model("coefficient grids are one-dimensional".into()));
        }
        let x = grid.points();
        Ok(Self {
            grid,
            sigma2: model.diffusion.scalar1(),
            drift: x.iter().map(|&v| model.drift.eval1(v)).collect(),
            beta: x.iter().map(|&v| model.beta.eval1(v)).collect(),
            alpha: x.iter().map(|&v| model.alpha.eval1(v)).collect(),
        })
    }
}

/// Nonlinear h-transform: `b += a H_x/H`, `β += (H_s + ½a H_xx + b H_x)/H`,
/// `α ↦ αH`, with `L = ½a∂² + b∂` the generator before the transform.
pub fn h_transform(coeffs: &CoefficientGrid, h: &HDerivatives) -> Result<CoefficientGrid> {
    let n = coeffs.grid.nx;
    if h.h.len() != n {
        return Err(Error::InconsistentGrid("H and coefficient grids differ".into()));
    }
    let a = coeffs.sigma2;
    let mut out = coeffs.clone();
    for i in 0..n {
        let hv = h.h[i];
        if !(hv > 0.0) {
            return Err(Error::Domain {
                point: vec![coeffs.grid.x(i)],
            });
        }
        let b = coeffs.drift[i];
        out.drift[i] = b + a * h.h_x[i] / hv;
        out.beta[i] = coeffs.beta[i] + (h.h_s[i] + 0.5 * a * h.h_xx[i] + b * h.h_x[i]) / hv;
        out.alpha[i] = coeffs.alpha[i] * hv;
    }
    Ok(out)
}

/// Pseudo-time continuation settings for steady states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteadyOptions {
    pub radius: f64,
    pub dx: f64,
    /// Stop once `‖Lw + βw − αw²‖∞` falls below this.
    pub tol: f64,
    pub max_steps: usize,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        Self {
            radius: 20.0,
            dx: 0.05,
            tol: 1e-8,
            max_steps: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub w: GridFunction,
    pub converged: bool,
    pub residual: f64,
    pub steps: usize,
}

/// Extinction function `w` on `(−R, R)` with zero boundary data: the long-time
/// limit of the cumulant flow started from a constant above `sup β⁺/α`,
/// advanced by implicit Euler in pseudo-time with Newton iterations and a
/// growing step.
pub fn steady_state_w(model: &ModelSpec, opts: SteadyOptions) -> Result<SteadyState> {
    if model.dim != 1 {
        return Err(Error::Model("the PDE engine is one-dimensional".into()));
    }
    model.validate()?;
    let solver = DomainSolver::new(model, opts.radius, opts.dx, 0.0, false)?;
    let n = solver.grid.nx;
    let m = n - 2;
    let op = &solver.op;
    let ratio = (0..n)
        .map(|i| solver.beta[i].max(0.0) / solver.alpha[i])
        .fold(0.0f64, f64::max);
    let mut w = vec![2.0 * ratio + 1.0; n];
    w[0] = 0.0;
    w[n - 1] = 0.0;
    let residual = |w: &[f64], out: &mut [f64]| {
        for j in 0..m {
            let i = j + 1;
            out[j] = op.l[i] * w[i - 1] + op.c[i] * w[i] + op.r[i] * w[i + 1] + solver.beta[i] * w[i]
                - solver.alpha[i] * w[i] * w[i];
        }
    };
    let norm = |v: &[f64]| v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let mut f = vec![0.0; m];
    let (mut a, mut b, mut c, mut d) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let mut work = Vec::new();
    let mut tau = 1e-3;
    let mut steps = 0;
    residual(&w, &mut f);
    let mut res = norm(&f);
    while res >= opts.tol && steps < opts.max_steps {
        steps += 1;
        let prev = w.clone();
        let mut trial = w.clone();
        let mut ok = false;
        for _ in 0..50 {
            residual(&trial, &mut f);
            for j in 0..m {
                let i = j + 1;
                d[j] = -(trial[i] - prev[i] - tau * f[j]);
                a[j] = -tau * op.l[i];
                c[j] = -tau * op.r[i];
                b[j] = 1.0 - tau * (op.c[i] + solver.beta[i] - 2.0 * solver.alpha[i] * trial[i]);
            }
            solve_tridiagonal(&a, &b, &c, &mut d, &mut work);
            let scale = norm(&trial).max(1.0);
            for j in 0..m {
                trial[j + 1] += d[j];
            }
            if !d.iter().all(|v| v.is_finite()) {
                break;
            }
            if norm(&d) < 1e-13 * scale {
                ok = true;
                break;
            }
        }
        if ok && trial.iter().all(|&v| v >= -1e-12) {
            for v in trial.iter_mut() {
                *v = v.max(0.0);
            }
            w = trial;
            tau = (tau * 2.0).min(1e6);
        } else {
            tau *= 0.25;
            if tau < 1e-12 {
                break;
            }
        }
        residual(&w, &mut f);
        res = norm(&f);
    }
    if res < opts.tol {
        // polish with Newton on the steady equation itself
        let mut trial = w.clone();
        for _ in 0..20 {
            residual(&trial, &mut f);
            for j in 0..m {
                let i = j + 1;
                d[j] = -f[j];
                a[j] = op.l[i];
                c[j] = op.r[i];
                b[j] = op.c[i] + solver.beta[i] - 2.0 * solver.alpha[i] * trial[i];
            }
            solve_tridiagonal(&a, &b, &c, &mut d, &mut work);
            for j in 0..m {
                trial[j + 1] += d[j];
            }
            if norm(&d) < 1e-15 * norm(&trial).max(1.0) {
                break;
            }
        }
        residual(&trial, &mut f);
        let polished = norm(&f);
        if polished <= res && trial.iter().all(|&v| v >= -1e-12) {
            w = trial.into_iter().map(|v| v.max(0.0)).collect();
            res = polished;
        }
    }
    Ok(SteadyState {
        w: GridFunction {
            grid: solver.grid,
            values: w,
        },
        converged: res < opts.tol,
        residual: res,
        steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CspVerdict {
    Holds,
    Fails,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CspRow {
    pub radius: f64,
    pub boundary: f64,
    pub window_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CspReport {
    pub verdict: CspVerdict,
    pub rows: Vec<CspRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CspOptions {
    /// Reporting window `[−w, w]`.
    pub window: f64,
    pub radii: Vec<f64>,
    pub boundary_values: Vec<f64>,
    pub dx: f64,
    pub dt: f64,
    pub threshold: f64,
}

impl Default for CspOptions {
    fn default() -> Self {
        Self {
            window: 1.0,
            radii: vec![2.0, 3.0, 5.0, 9.0, 17.0, 33.0],
            boundary_values: vec![10.0, 1e2, 1e3, 1e4],
            dx: 0.05,
            dt: 0.005,
            threshold: 1e-6,
        }
    }
}

/// Compact-support check: solutions with zero initial data and boundary value
/// `M` on `(−R, R)` approximate the maximal solution as `M` grows; the verdict
/// `holds` when their window maximum falls below the threshold as `R` grows.
pub fn csp_check(model: &ModelSpec, t: f64, opts: &CspOptions) -> Result<CspReport> {
    if model.dim != 1 {
        return Err(Error::Model("the PDE engine is one-dimensional".into()));
    }
    model.validate()?;
    ensure(t > 0.0, "t", "must be positive")?;
    ensure(!opts.radii.is_empty() && !opts.boundary_values.is_empty(), "radii", "need radii and boundary values")?;
    let zero = InitialData::Function {
        g: Coefficient::constant(0.0),
    };
    let mut rows = Vec::new();
    let mut per_radius = Vec::new();
    for &radius in &opts.radii {
        ensure(radius > opts.window, "radii", "must exceed the window")?;
        let mut best: f64 = 0.0;
        for &mval in &opts.boundary_values {
            let solver = DomainSolver::new(model, radius, opts.dx, mval, false)?;
            let u = solver.run(solver.initial(&zero), opts.dt, &[t], |_| {}).pop().expect("one slice");
            let gf = GridFunction { grid: solver.grid, values: u };
            let v = gf.max_abs_on(-opts.window, opts.window);
            best = best.max(if v.is_finite() { v } else { f64::INFINITY });
            rows.push(CspRow {
                radius,
                boundary: mval,
                window_max: v,
            });
        }
        per_radius.push(best);
    }
    let last = *per_radius.last().unwrap();
    let nonincreasing = per_radius.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-14);
    let verdict = if last < opts.threshold && nonincreasing {
        CspVerdict::Holds
    } else if per_radius.len() >= 2 && last >= opts.threshold {
        let prev = per_radius[per_radius.len() - 2];
        if (last - prev).abs() <= 1e-3 * last {
            CspVerdict::Fails
        } else {
            CspVerdict::Inconclusive
        }
    } else {
        CspVerdict::Inconclusive
    };
    Ok(CspReport { verdict, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderReport {
    pub ordered: bool,
    /// `min (v1 − v2)` over all nodes and steps.
    pub min_gap: f64,
}

/// Run the same problem from two initial data on `(−R, R)` and report whether
/// the first solution stays above the second at every node and step.
pub fn maximum_principle_check(problem: &PdeProblem, g1: &InitialData, g2: &InitialData, t: f64, radius: f64) -> Result<OrderReport> {
    problem.validate()?;
    ensure(t > 0.0, "t", "must be positive")?;
    let solver = DomainSolver::new(&problem.model, radius, problem.dx, problem.boundary, false)?;
    let mut traj1 = Vec::new();
    let u1 = solver.initial(g1);
    let u2 = solver.initial(g2);
    let mut min_gap = u1.iter().zip(&u2).map(|(a, b)| a - b).fold(f64::INFINITY, f64::min);
    solver.run(u1, problem.dt, &[t], |u| traj1.push(u.to_vec()));
    let mut k = 0;
    solver.run(u2, problem.dt, &[t], |u| {
        let gap = traj1[k].iter().zip(u).map(|(a, b)| a - b).fold(f64::INFINITY, f64::min);
        min_gap = min_gap.min(gap);
        k += 1;
    });
    Ok(OrderReport {
        ordered: min_gap >= -1e-10,
        min_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bm(beta: Coefficient, alpha: Coefficient) -> ModelSpec {
        ModelSpec::brownian(1, beta, alpha)
    }

    fn constant(c: f64) -> InitialData {
        InitialData::Function {
            g: Coefficient::constant(c),
        }
    }

    #[test]
    fn zero_data_stays_zero() {
        let p = PdeProblem::new(bm(Coefficient::constant(1.0), Coefficient::constant(1.0)), constant(0.0));
        let s = solve_cumulant(&p, 1.0).unwrap();
        assert!(s.solution.values.iter().all(|&v| v == 0.0));
        assert_eq!(s.status, SolveStatus::Converged);
    }

    #[test]
    fn logistic_fixed_point_and_closed_form() {
        let m = bm(Coefficient::constant(1.0), Coefficient::constant(1.0));
        let p = PdeProblem::new(m.clone(), constant(1.0)).with_window(-5.0, 5.0);
        let s = solve_cumulant(&p, 1.0).unwrap();
        assert_eq!(s.status, SolveStatus::Converged);
        assert!(s.solution.max_abs_on(-5.0, 5.0) <= 1.0 + 1e-12);
        assert!((s.solution.eval(0.0).unwrap() - 1.0).abs() < 1e-10);
        // u(t) = c e^t/(1 + c(e^t − 1)) with c = ½, t = ln 2 → 2/3
        let p = PdeProblem::new(m, constant(0.5)).with_window(-5.0, 5.0);
        let s = solve_cumulant(&p, 2f64.ln()).unwrap();
        for x in [-5.0, 0.0, 2.5, 5.0] {
            assert!((s.solution.eval(x).unwrap() - 2.0 / 3.0).abs() < 1e-4);
        }
    }

    #[test]
    fn heat_kernel_and_constant_potential() {
        // Gaussian data of variance s² evolves to variance s² + t (σ² = 1).
        let g = Coefficient::Gaussian {
            center: 0.0,
            width: 0.3,
            height: 1.0,
        };
        let exact = |t: f64| 0.3 / (0.09 + t).sqrt();
        for lambda in [0.0, 0.7] {
            let p = PdeProblem::new(bm(Coefficient::constant(lambda), Coefficient::constant(1.0)), InitialData::Function { g: g.clone() });
            let s = solve_linear(&p, 1.0).unwrap();
            let v = s.solution.eval(0.0).unwrap();
            assert!((v - lambda.exp() * exact(1.0)).abs() < 1e-3, "λ={lambda} v={v}");
        }
    }

    #[test]
    fn linear_potential_bracket() {
        let p = PdeProblem::new(bm(Coefficient::power(0.0, 1.0, 1.0), Coefficient::constant(1.0)), constant(1.0));
        let s = solve_linear(&p, 1.0).unwrap();
        assert_eq!(s.status, SolveStatus::Converged);
        let v = s.solution.eval(0.0).unwrap();
        assert!((1.181..=6.595).contains(&v), "v={v}");
    }

    #[test]
    fn quadratic_potential_blows_up() {
        let p = PdeProblem::new(bm(Coefficient::power(0.0, 1.0, 2.0), Coefficient::constant(1.0)), constant(1.0));
        let s = solve_linear(&p, 2.0).unwrap();
        assert_eq!(s.status, SolveStatus::BlowUpSuspected);
    }

    #[test]
    fn backward_slab_constant_potential() {
        let p = PdeProblem::new(bm(Coefficient::constant(0.8), Coefficient::constant(1.0)), constant(1.0));
        let slab = solve_backward(&p, 1.0, 4).unwrap();
        assert_eq!(slab.r.len(), 5);
        assert_eq!(slab.r[4], 1.0);
        assert!(slab.slices[4].values[1..slab.slices[4].values.len() - 1].iter().all(|&v| v == 1.0));
        for (k, &r) in slab.r.iter().enumerate() {
            let v = slab.at(k, 0.0).unwrap();
            assert!((v - (0.8 * (1.0 - r)).exp()).abs() < 1e-3);
        }
    }

    #[test]
    fn h_transform_identities() {
        let m = bm(Coefficient::constant(0.6), Coefficient::constant(2.0));
        let grid = Grid1D::symmetric(3.0, 0.1).unwrap();
        let c = CoefficientGrid::from_model(&m, grid).unwrap();
        let same = h_transform(&c, &HDerivatives::closed(HClosed::Constant { c: 1.0 }, &grid, 0.0)).unwrap();
        assert_eq!(same, c);
        let s = 0.7;
        let e = h_transform(&c, &HDerivatives::closed(HClosed::ExpTime { lambda: 0.6 }, &grid, s)).unwrap();
        assert!(e.beta.iter().all(|b| b.abs() < 1e-12));
        assert!(e.alpha.iter().all(|a| (a - 2.0 * (-0.6 * s).exp()).abs() < 1e-12));
        let zero = bm(Coefficient::constant(0.0), Coefficient::constant(1.0));
        let c0 = CoefficientGrid::from_model(&zero, grid).unwrap();
        let ch = h_transform(&c0, &HDerivatives::closed(HClosed::Cosh { k: 1.0 }, &grid, 0.0)).unwrap();
        for (i, x) in grid.points().into_iter().enumerate() {
            assert!((ch.beta[i] - 0.5).abs() < 1e-12);
            assert!((ch.drift[i] - x.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn h_transform_round_trip_and_positivity() {
        let m = bm(Coefficient::power(1.0, 1.0, 1.0), Coefficient::constant(1.0));
        let grid = Grid1D::symmetric(2.0, 0.05).unwrap();
        let c = CoefficientGrid::from_model(&m, grid).unwrap();
        let h = HDerivatives::closed(HClosed::ExpSpace { k: 0.7 }, &grid, 0.0);
        let there = h_transform(&c, &h).unwrap();
        let back = h_transform(&there, &h.reciprocal()).unwrap();
        for i in 0..grid.nx {
            assert!((back.beta[i] - c.beta[i]).abs() < 1e-8);
            assert!((back.drift[i] - c.drift[i]).abs() < 1e-8);
            assert!((back.alpha[i] - c.alpha[i]).abs() < 1e-8);
        }
        let bad = HDerivatives::closed(HClosed::Constant { c: 0.0 }, &grid, 0.0);
        assert!(matches!(h_transform(&c, &bad), Err(Error::Domain { .. })));
    }

    #[test]
    fn steady_states() {
        let w = steady_state_w(&bm(Coefficient::constant(1.0), Coefficient::constant(1.0)), SteadyOptions::default()).unwrap();
        assert!(w.converged);
        assert!((w.w.max_abs_on(-10.0, 10.0) - 1.0).abs() < 1e-4);
        assert!(w.w.values[w.w.window_indices(-10.0, 10.0)].iter().all(|v| (v - 1.0).abs() < 1e-4));
        let z = steady_state_w(&bm(Coefficient::constant(0.0), Coefficient::constant(1.0)), SteadyOptions::default()).unwrap();
        assert!(z.converged);
        assert!(z.w.values.iter().all(|v| v.abs() < 1e-6));
        let v = steady_state_w(
            &bm(Coefficient::power(1.0, 1.0, 1.0), Coefficient::power(1.0, 1.0, 1.0)),
            SteadyOptions::default(),
        )
        .unwrap();
        let w0 = v.w.eval(0.0).unwrap();
        assert!(v.converged && w0 > 0.0 && w0 <= 1.0 + 1e-9, "w0={w0}");
    }

    #[test]
    fn ordered_data_stay_ordered() {
        let p = PdeProblem::new(bm(Coefficient::constant(1.0), Coefficient::constant(1.0)), constant(0.0));
        let g2 = InitialData::Function {
            g: Coefficient::bump(0.0, 1.0, 0.5),
        };
        let g1 = InitialData::Function {
            g: Coefficient::bump(0.0, 1.0, 1.0),
        };
        assert!(maximum_principle_check(&p, &g1, &g2, 1.0, 5.0).unwrap().ordered);
        assert!(maximum_principle_check(&p, &g1, &g1, 1.0, 5.0).unwrap().min_gap == 0.0);
    }

    #[test]
    fn larger_alpha_lowers_solution() {
        let g = InitialData::Function {
            g: Coefficient::bump(0.0, 1.0, 2.0),
        };
        let a = solve_cumulant(&PdeProblem::new(bm(Coefficient::constant(1.0), Coefficient::constant(1.0)), g.clone()), 1.0).unwrap();
        let b = solve_cumulant(&PdeProblem::new(bm(Coefficient::constant(1.0), Coefficient::constant(2.0)), g), 1.0).unwrap();
        for x in [-2.0, -0.5, 0.0, 1.0] {
            assert!(b.solution.eval(x).unwrap() <= a.solution.eval(x).unwrap() + 1e-12);
        }
    }

    #[test]
    fn csp_holds_for_bounded_rate() {
        let r = csp_check(&bm(Coefficient::constant(1.0), Coefficient::constant(1.0)), 1.0, &CspOptions::default()).unwrap();
        assert_eq!(r.verdict, CspVerdict::Holds, "{:?}", r.rows);
    }

    #[test]
    fn thomas_solves_known_system() {
        let (a, b, c) = (vec![0.0, 1.0, 1.0], vec![4.0, 4.0, 4.0], vec![1.0, 1.0, 0.0]);
        let mut d = vec![5.0, 6.0, 5.0];
        solve_tridiagonal(&a, &b, &c, &mut d, &mut Vec::new());
        for v in d {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }
}
