//! The pack cooling environment.
//!
//! State is the pack temperature `u` and fluid temperature `w` on the shared
//! grid. Each step maps an action `a ∈ [-1, 1]` to a transport speed
//! `σ = (a+1)/2`, advances the coupled system by one implicit step and
//! rewards `-dx·‖u_next‖²`.
//!
//! # Time stepping
//!
//! One step solves the nonlinear system
//!
//! ```text
//! A⁺ z' − ½ h(z') = A z + ½ h(z),      z = (u, w)
//! ```
//!
//! where `h` is the heat generation `exp(0.1 u)` on the `u` rows and zero on
//! the `w` rows. Rows are scaled by `1/dt`:
//!
//! * `u` rows are Crank–Nicolson in diffusion and coupling `(w − u)/R`;
//! * `w` rows follow the characteristic back to its foot `x_k − σ·dt`, which
//!   lies in `[x_{k−1}, x_k]` because `σ·dt ≤ dx`. The upstream values are
//!   interpolated linearly (with the inflow temperature at `x = 0`) and the
//!   coupling `(u − w)/R` is averaged between the foot at `t` and the node at
//!   `t + dt`.
//!
//! The system is solved with a fixed number of Newton iterations starting from
//! `z(t)`. The Jacobian `A⁺ − ½ diag(h′(z))` couples `u` and `w` only through
//! diagonal blocks, so the `w` unknowns are eliminated and the remaining
//! tridiagonal system is solved directly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{fourier_initial_u, laplacian_matrix, GridState, SpatialGrid, Tridiagonal};

/// Orientation of the diffusion term in the pack equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiffusionMode {
    /// `u_t = +D u_xx + …`, the well-posed heat equation.
    Stabilizing,
    /// `u_t = −D u_xx + …`, the ill-posed backward heat equation.
    Backward,
}

impl DiffusionMode {
    /// Coefficient multiplying `D·u_xx` in `u_t`.
    pub fn sign(self) -> f64 {
        match self {
            DiffusionMode::Stabilizing => 1.0,
            DiffusionMode::Backward => -1.0,
        }
    }
}

/// Internal heat generation `h(u)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeatSource {
    /// `h(u) = exp(0.1 u)`
    Exponential,
    /// `h ≡ 0`, used to isolate transport and diffusion.
    Off,
}

impl HeatSource {
    pub fn value(self, u: f64) -> f64 {
        match self {
            HeatSource::Exponential => (0.1 * u).exp(),
            HeatSource::Off => 0.0,
        }
    }

    pub fn derivative(self, u: f64) -> f64 {
        match self {
            HeatSource::Exponential => 0.1 * (0.1 * u).exp(),
            HeatSource::Off => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub n_x: usize,
    pub dt: f64,
    pub diffusivity: f64,
    /// Heat resistance `R`; `f64::INFINITY` switches the coupling off.
    pub resistance: f64,
    /// Fluid temperature entering at `x = 0`.
    pub inflow_temp: f64,
    pub n_fourier: usize,
    pub coeff_low: f64,
    pub coeff_high: f64,
    pub horizon_time: f64,
    pub newton_iters: usize,
    pub diffusion_mode: DiffusionMode,
    pub heat_source: HeatSource,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_x: 100,
            dt: 0.01,
            diffusivity: 0.01,
            resistance: 2.0,
            inflow_temp: -5.0,
            n_fourier: 9,
            coeff_low: -2.0,
            coeff_high: 2.0,
            horizon_time: 10.0,
            newton_iters: 10,
            diffusion_mode: DiffusionMode::Stabilizing,
            heat_source: HeatSource::Exponential,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn dx(&self) -> f64 {
        1.0 / self.n_x as f64
    }

    pub fn grid(&self) -> Result<SpatialGrid> {
        SpatialGrid::new(self.n_x)
    }

    /// `1/R`, zero when the coupling is switched off.
    pub fn inv_resistance(&self) -> f64 {
        if self.resistance.is_infinite() {
            0.0
        } else {
            1.0 / self.resistance
        }
    }

    pub fn steps_per_episode(&self) -> usize {
        (self.horizon_time / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_x < 2 {
            return bad(format!("n_x must be at least 2, got {}", self.n_x));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.dx() < self.dt * (1.0 - 1e-12) {
            return bad(format!(
                "dx = {} must be >= dt = {} for the characteristic step",
                self.dx(),
                self.dt
            ));
        }
        if !self.diffusivity.is_finite() {
            return bad("diffusivity must be finite".into());
        }
        if !(self.resistance > 0.0) {
            return bad(format!("resistance must be positive, got {}", self.resistance));
        }
        if !self.inflow_temp.is_finite() {
            return bad("inflow_temp must be finite".into());
        }
        if self.n_fourier > self.n_x {
            return bad(format!(
                "n_fourier = {} exceeds n_x = {}",
                self.n_fourier, self.n_x
            ));
        }
        if !(self.coeff_low <= self.coeff_high) {
            return bad("coeff_low must not exceed coeff_high".into());
        }
        let ratio = self.horizon_time / self.dt;
        if !(self.horizon_time > 0.0) || ratio.round() < 1.0 || (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return bad(format!(
                "horizon_time / dt = {ratio} must be a positive integer"
            ));
        }
        if self.newton_iters == 0 {
            return bad("newton_iters must be positive".into());
        }
        Ok(())
    }
}

/// Transport speed for an action; values outside `[-1, 1]` are clamped.
pub fn map_action(a: f64) -> f64 {
    (a.clamp(-1.0, 1.0) + 1.0) / 2.0
}

/// `-dx · Σ u²` of the post-step pack temperature.
pub fn reward(u_next: &[f64], dx: f64) -> f64 {
    -dx * u_next.iter().map(|v| v * v).sum::<f64>()
}

/// Old-time quantities and operators shared by the residual and the Newton loop.
struct StepSystem<'a> {
    cfg: &'a EnvConfig,
    lap: Tridiagonal,
    rhs_u: Vec<f64>,
    rhs_w: Vec<f64>,
    diff: f64,
    inv_r: f64,
    inv_dt: f64,
}

impl<'a> StepSystem<'a> {
    fn new(state: &GridState, sigma: f64, cfg: &'a EnvConfig) -> Result<Self> {
        let n = cfg.n_x;
        if state.n_x() != n {
            return Err(Error::invalid(format!(
                "state has {} nodes, config expects {n}",
                state.n_x()
            )));
        }
        if !(0.0..=1.0).contains(&sigma) {
            return Err(Error::invalid(format!("sigma must lie in [0, 1], got {sigma}")));
        }
        let dx = cfg.dx();
        let dt = cfg.dt;
        let theta = sigma * dt / dx;
        if theta > 1.0 + 1e-12 {
            return Err(Error::invalid(format!(
                "sigma·dt = {} exceeds dx = {dx}",
                sigma * dt
            )));
        }
        let theta = theta.min(1.0);
        let lap = laplacian_matrix(n, dx)?;
        let diff = cfg.diffusion_mode.sign() * cfg.diffusivity;
        let inv_r = cfg.inv_resistance();
        let inv_dt = 1.0 / dt;
        let heat = cfg.heat_source;

        let (u, w) = (&state.u, &state.w);
        let lap_u = lap.apply(u);
        let rhs_u = (0..n)
            .map(|k| {
                u[k] * inv_dt + 0.5 * (diff * lap_u[k] + inv_r * (w[k] - u[k]) + heat.value(u[k]))
            })
            .collect();

        // Upstream values at x = 0: the inflow temperature and the ghost
        // value of the zero-flux closure.
        let u_left = (4.0 * u[0] - u[1]) / 3.0;
        let rhs_w = (0..n)
            .map(|k| {
                let (w_up, u_up) = if k == 0 {
                    (cfg.inflow_temp, u_left)
                } else {
                    (w[k - 1], u[k - 1])
                };
                let w_foot = (1.0 - theta) * w[k] + theta * w_up;
                let u_foot = (1.0 - theta) * u[k] + theta * u_up;
                w_foot * inv_dt + 0.5 * inv_r * (u_foot - w_foot)
            })
            .collect();

        Ok(Self {
            cfg,
            lap,
            rhs_u,
            rhs_w,
            diff,
            inv_r,
            inv_dt,
        })
    }

    /// `F(z') = A⁺z' − ½h(z') − (Az + ½h(z))`, returned as (`u` rows, `w` rows).
    fn residual(&self, u: &[f64], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = u.len();
        let heat = self.cfg.heat_source;
        let lap_u = self.lap.apply(u);
        let f_u = (0..n)
            .map(|k| {
                u[k] * self.inv_dt
                    - 0.5 * (self.diff * lap_u[k] + self.inv_r * (w[k] - u[k]) + heat.value(u[k]))
                    - self.rhs_u[k]
            })
            .collect();
        let f_w = (0..n)
            .map(|k| w[k] * self.inv_dt - 0.5 * self.inv_r * (u[k] - w[k]) - self.rhs_w[k])
            .collect();
        (f_u, f_w)
    }

    fn newton_update(&self, u: &mut [f64], w: &mut [f64]) -> Result<()> {
        let n = u.len();
        let (f_u, f_w) = self.residual(u, w);
        let c = 0.5 * self.inv_r;
        let d_w = self.inv_dt + c;
        let heat = self.cfg.heat_source;
        // Schur complement of the diagonal w-block.
        let jac = Tridiagonal {
            lower: self.lap.lower.iter().map(|l| -0.5 * self.diff * l).collect(),
            upper: self.lap.upper.iter().map(|l| -0.5 * self.diff * l).collect(),
            diag: (0..n)
                .map(|k| {
                    self.inv_dt - 0.5 * self.diff * self.lap.diag[k] + c
                        - 0.5 * heat.derivative(u[k])
                        - c * c / d_w
                })
                .collect(),
        };
        let rhs: Vec<f64> = (0..n).map(|k| -f_u[k] - c * f_w[k] / d_w).collect();
        let du = jac.solve(&rhs)?;
        for k in 0..n {
            u[k] += du[k];
            w[k] += (-f_w[k] + c * du[k]) / d_w;
        }
        Ok(())
    }
}

/// Advances `state` by one time step at transport speed `sigma`.
pub fn solver_step(state: &GridState, sigma: f64, cfg: &EnvConfig) -> Result<GridState> {
    let system = StepSystem::new(state, sigma, cfg)?;
    let mut u = state.u.clone();
    let mut w = state.w.clone();
    for _ in 0..cfg.newton_iters {
        system.newton_update(&mut u, &mut w)?;
    }
    let next = GridState {
        u,
        w,
        t: state.t + cfg.dt,
    };
    if !next.is_finite() {
        return Err(Error::NumericalBlowup {
            step: (next.t / cfg.dt).round() as usize,
            detail: format!("non-finite temperature after step at sigma = {sigma}"),
        });
    }
    Ok(next)
}

/// Sup-norm of the step residual `F(next)` for the step `prev → next`.
pub fn step_residual(prev: &GridState, next: &GridState, sigma: f64, cfg: &EnvConfig) -> Result<f64> {
    let system = StepSystem::new(prev, sigma, cfg)?;
    let (f_u, f_w) = system.residual(&next.u, &next.w);
    Ok(f_u.iter().chain(&f_w).fold(0.0, |m, v| m.max(v.abs())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub sigma: f64,
}

/// Per-step history of one episode, used for rendering.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryBuffer {
    pub times: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub u_history: Vec<Vec<f64>>,
    pub w_history: Vec<Vec<f64>>,
}

impl TrajectoryBuffer {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn clear(&mut self) {
        self.times.clear();
        self.sigmas.clear();
        self.u_history.clear();
        self.w_history.clear();
    }

    fn push(&mut self, state: &GridState, sigma: f64) {
        self.times.push(state.t);
        self.sigmas.push(sigma);
        self.u_history.push(state.u.clone());
        self.w_history.push(state.w.clone());
    }
}

pub struct PackCoolingEnv {
    config: EnvConfig,
    grid: SpatialGrid,
    state: GridState,
    rng: ChaCha8Rng,
    steps: usize,
    active: bool,
    record: bool,
    trajectory: TrajectoryBuffer,
}

impl PackCoolingEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.grid()?;
        let n = config.n_x;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            state: GridState {
                u: vec![0.0; n],
                w: vec![config.inflow_temp; n],
                t: 0.0,
            },
            grid,
            config,
            steps: 0,
            active: false,
            record: true,
            trajectory: TrajectoryBuffer::default(),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn state(&self) -> &GridState {
        &self.state
    }

    pub fn trajectory(&self) -> &TrajectoryBuffer {
        &self.trajectory
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    /// Turns trajectory recording on or off (training runs skip it).
    pub fn set_recording(&mut self, record: bool) {
        self.record = record;
        if !record {
            self.trajectory.clear();
        }
    }

    /// Starts an episode from a fresh cosine-series pack temperature drawn
    /// from the environment's random stream.
    pub fn reset(&mut self) -> Vec<f64> {
        let (lo, hi) = (self.config.coeff_low, self.config.coeff_high);
        let coeffs: Vec<f64> = (0..=self.config.n_fourier)
            .map(|_| self.rng.gen_range(lo..=hi))
            .collect();
        let u = fourier_initial_u(&coeffs, &self.grid);
        let w = vec![self.config.inflow_temp; self.config.n_x];
        self.start(GridState { u, w, t: 0.0 })
    }

    /// Reseeds the random stream, then resets.
    pub fn reset_with_seed(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.reset()
    }

    /// Starts an episode from a given state.
    pub fn reset_to(&mut self, state: GridState) -> Result<Vec<f64>> {
        if state.n_x() != self.config.n_x || !state.is_finite() {
            return Err(Error::invalid("reset state must be finite with n_x nodes"));
        }
        Ok(self.start(GridState { t: 0.0, ..state }))
    }

    fn start(&mut self, state: GridState) -> Vec<f64> {
        self.state = state;
        self.steps = 0;
        self.active = true;
        self.trajectory.clear();
        self.state.observation()
    }

    pub fn step(&mut self, action: f64) -> Result<StepResult> {
        if !self.active {
            return Err(Error::InvalidState(
                "step called before reset or after the episode finished".into(),
            ));
        }
        if !action.is_finite() {
            return Err(Error::invalid(format!("action must be finite, got {action}")));
        }
        let sigma = map_action(action);
        let next = solver_step(&self.state, sigma, &self.config).map_err(|e| match e {
            Error::NumericalBlowup { detail, .. } => Error::NumericalBlowup {
                step: self.steps + 1,
                detail,
            },
            other => other,
        })?;
        self.steps += 1;
        let reward = reward(&next.u, self.grid.dx());
        self.state = next;
        let done = self.steps >= self.config.steps_per_episode();
        if done {
            self.active = false;
        }
        if self.record {
            self.trajectory.push(&self.state, sigma);
        }
        Ok(StepResult {
            observation: self.state.observation(),
            reward,
            done,
            sigma,
        })
    }
}
