//! HJB residual, the three critic losses and the bang-bang controller.
//!
//! For a transition `(U_t, W_t, U_{t+1})` the residual is
//!
//! ```text
//! r = (γ-1)V − ‖U_{t+1}‖²dx + ∇_U V·U̇ dt + (1/R)∇_W V·(U−W) dt + max(0, −∇_W V·BW)
//! ```
//!
//! with `U̇` taken from the known model and `BW` the discrete `w_x`. Both
//! gradient terms are directional derivatives of `V` along fixed vectors, so
//! the training path ([`HjbSample`], [`hjb_loss_grad`]) evaluates them with the
//! network's tangent kernel. The graph versions ([`hjb_residual`], [`mse_f`],
//! [`mse_u`], [`mse_n`]) build the same quantities by double backward.

use crate::autodiff::{Graph, NodeRef};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::grid::{gradient_w, laplacian_u, GridState};
use crate::nn::{value_forward, value_input_grads, MlpParams};

/// Model right-hand side `±D u_xx + h(u) + (w−u)/R`.
pub fn u_dot_model(state: &GridState, cfg: &EnvConfig) -> Result<Vec<f64>> {
    if state.n_x() != cfg.n_x {
        return Err(Error::invalid(format!(
            "state has {} nodes, config expects {}",
            state.n_x(),
            cfg.n_x
        )));
    }
    let diff = cfg.diffusion_mode.sign() * cfg.diffusivity;
    let inv_r = cfg.inv_resistance();
    let lap = laplacian_u(&state.u, cfg.dx())?;
    Ok(state
        .u
        .iter()
        .zip(&state.w)
        .zip(&lap)
        .map(|((&u, &w), &l)| diff * l + cfg.heat_source.value(u) + inv_r * (w - u))
        .collect())
}

/// The point `(U, W) = (0, −R)` at which the boundary losses are taken.
pub fn critical_point(cfg: &EnvConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    if !cfg.resistance.is_finite() {
        return Err(Error::invalid("boundary losses need a finite resistance"));
    }
    Ok((vec![0.0; cfg.n_x], vec![-cfg.resistance; cfg.n_x]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HjbTransition {
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub u_next: Vec<f64>,
}

/// Transitions plus the constants the residual needs.
#[derive(Debug, Clone)]
pub struct HjbBatch {
    transitions: Vec<HjbTransition>,
    gamma: f64,
    env: EnvConfig,
}

impl HjbBatch {
    pub fn new(transitions: Vec<HjbTransition>, gamma: f64, env: EnvConfig) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::invalid("HJB batch must not be empty"));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::invalid(format!("gamma must lie in (0, 1], got {gamma}")));
        }
        let n = env.n_x;
        if transitions
            .iter()
            .any(|t| t.u.len() != n || t.w.len() != n || t.u_next.len() != n)
        {
            return Err(Error::invalid(format!("every transition vector must have length {n}")));
        }
        Ok(Self {
            transitions,
            gamma,
            env,
        })
    }

    pub fn transitions(&self) -> &[HjbTransition] {
        &self.transitions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn env(&self) -> &EnvConfig {
        &self.env
    }

    pub fn dt(&self) -> f64 {
        self.env.dt
    }

    pub fn dx(&self) -> f64 {
        self.env.dx()
    }
}

/// Directions and constants of one residual, independent of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct HjbSample {
    /// `[U; W]`
    pub x: Vec<f64>,
    /// `[U̇ dt; (U−W) dt / R]`
    pub drift: Vec<f64>,
    /// `[0; BW]`
    pub transport: Vec<f64>,
    /// `‖U_{t+1}‖² dx`
    pub cost: f64,
}

impl HjbSample {
    pub fn new(tr: &HjbTransition, cfg: &EnvConfig) -> Result<Self> {
        let n = cfg.n_x;
        if tr.u.len() != n || tr.w.len() != n || tr.u_next.len() != n {
            return Err(Error::invalid(format!("every transition vector must have length {n}")));
        }
        let dt = cfg.dt;
        let dx = cfg.dx();
        let inv_r = cfg.inv_resistance();
        let state = GridState::new(tr.u.clone(), tr.w.clone(), 0.0)?;
        let u_dot = u_dot_model(&state, cfg)?;
        let bw = gradient_w(&tr.w, cfg.inflow_temp, dx)?;

        let mut x = Vec::with_capacity(2 * n);
        x.extend_from_slice(&tr.u);
        x.extend_from_slice(&tr.w);
        let mut drift: Vec<f64> = u_dot.iter().map(|v| v * dt).collect();
        drift.extend(tr.u.iter().zip(&tr.w).map(|(u, w)| inv_r * (u - w) * dt));
        let mut transport = vec![0.0; n];
        transport.extend_from_slice(&bw);
        let cost = dx * tr.u_next.iter().map(|v| v * v).sum::<f64>();
        Ok(Self {
            x,
            drift,
            transport,
            cost,
        })
    }
}

/// Residual of one transition as a graph node.
pub fn hjb_residual(
    g: &mut Graph,
    net: &MlpParams,
    params: &[NodeRef],
    tr: &HjbTransition,
    batch: &HjbBatch,
) -> Result<NodeRef> {
    let cfg = batch.env();
    let sample = HjbSample::new(tr, cfg)?;
    let n = cfg.n_x;
    let grads = value_input_grads(g, net, params, &tr.u, &tr.w)?;
    let grad: Vec<NodeRef> = grads.g_u.iter().chain(&grads.g_w).copied().collect();

    let decay = g.scale(grads.value, batch.gamma() - 1.0);
    let drift = g.dot_const(&grad, &sample.drift);
    let q = g.dot_const(&grads.g_w, &sample.transport[n..]);
    let neg_q = g.neg(q);
    let control = g.relu(neg_q);
    let cost = g.lift(-sample.cost);
    Ok(g.sum(&[decay, cost, drift, control]))
}

/// `(1/T) Σ r_t² dt`
pub fn mse_f(g: &mut Graph, net: &MlpParams, params: &[NodeRef], batch: &HjbBatch) -> Result<NodeRef> {
    let mut squares = Vec::with_capacity(batch.transitions().len());
    for tr in batch.transitions() {
        let r = hjb_residual(g, net, params, tr, batch)?;
        squares.push(g.square(r));
    }
    let total = g.sum(&squares);
    Ok(g.scale(total, batch.dt() / squares.len() as f64))
}

/// `V(0, −R)²`
pub fn mse_u(g: &mut Graph, net: &MlpParams, params: &[NodeRef], cfg: &EnvConfig) -> Result<NodeRef> {
    let (u, w) = critical_point(cfg)?;
    let eval = value_forward(g, net, params, &u, &w)?;
    Ok(g.square(eval.value))
}

/// `‖∇V(0, −R)‖²`
pub fn mse_n(g: &mut Graph, net: &MlpParams, params: &[NodeRef], cfg: &EnvConfig) -> Result<NodeRef> {
    let (u, w) = critical_point(cfg)?;
    let grads = value_input_grads(g, net, params, &u, &w)?;
    let all: Vec<NodeRef> = grads.g_u.iter().chain(&grads.g_w).copied().collect();
    Ok(g.dot(&all, &all))
}

/// `∇_W V · BW` at a state.
pub fn controller_q(net: &MlpParams, state: &GridState, cfg: &EnvConfig) -> Result<f64> {
    let n = cfg.n_x;
    if state.n_x() != n {
        return Err(Error::invalid(format!(
            "state has {} nodes, config expects {n}",
            state.n_x()
        )));
    }
    let bw = gradient_w(&state.w, cfg.inflow_temp, cfg.dx())?;
    let mut dir = vec![0.0; n];
    dir.extend_from_slice(&bw);
    let trace = net.trace(&state.observation(), &[&dir])?;
    Ok(trace.directional(0))
}

/// `+1` (full flow) when `∇_W V · BW < 0`, otherwise `−1` (no flow).
pub fn optimal_action(net: &MlpParams, state: &GridState, cfg: &EnvConfig) -> Result<f64> {
    let q = controller_q(net, state, cfg)?;
    Ok(if q < 0.0 { 1.0 } else { -1.0 })
}

/// Values of the three critic losses.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HjbLoss {
    pub mse_f: f64,
    pub mse_u: f64,
    pub mse_n: f64,
}

impl HjbLoss {
    pub fn total(&self) -> f64 {
        self.mse_f + self.mse_u + self.mse_n
    }
}

/// `J = mse_f(samples) + mse_u + mse_n`; its parameter gradient is added to `grad`.
///
/// The boundary terms use `‖∇V‖² = ∇V·v` with `v = ∇V` frozen, whose
/// parameter gradient is half the gradient of `‖∇V‖²`.
pub fn hjb_loss_grad(
    net: &MlpParams,
    samples: &[&HjbSample],
    gamma: f64,
    dt: f64,
    boundary: &[f64],
    grad: &mut [f64],
) -> Result<HjbLoss> {
    if samples.is_empty() {
        return Err(Error::invalid("HJB loss needs at least one sample"));
    }
    let scale = 2.0 * dt / samples.len() as f64;
    let mut mse_f = 0.0;
    for s in samples {
        let trace = net.trace(&s.x, &[&s.drift, &s.transport])?;
        let q = trace.directional(1);
        let r = (gamma - 1.0) * trace.output() - s.cost + trace.directional(0) + (-q).max(0.0);
        mse_f += r * r;
        let rb = scale * r;
        let q_bar = if q < 0.0 { -rb } else { 0.0 };
        net.backprop(&trace, rb * (gamma - 1.0), &[rb, q_bar], grad);
    }
    mse_f *= dt / samples.len() as f64;

    let base = net.trace(boundary, &[])?;
    let v = base.output();
    let mut scratch = vec![0.0; net.num_params()];
    let input_grad = net.backprop(&base, 1.0, &[], &mut scratch);
    let trace = net.trace(boundary, &[&input_grad])?;
    let mse_n = trace.directional(0);
    net.backprop(&trace, 2.0 * v, &[2.0], grad);
    Ok(HjbLoss {
        mse_f,
        mse_u: v * v,
        mse_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{map_action, solver_step, HeatSource};
    use crate::grid::SpatialGrid;
    use crate::nn::Activation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cfg(n: usize) -> EnvConfig {
        EnvConfig {
            n_x: n,
            dt: 1.0 / n as f64,
            horizon_time: 1.0,
            n_fourier: n.min(3),
            ..EnvConfig::default()
        }
    }

    fn random_state(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> GridState {
        let u = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        let w = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        GridState::new(u, w, 0.0).unwrap()
    }

    fn random_transition(rng: &mut ChaCha8Rng, n: usize) -> HjbTransition {
        let s = random_state(rng, n, 3.0);
        HjbTransition {
            u: s.u,
            w: s.w,
            u_next: (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        }
    }

    fn zero_net(n: usize) -> MlpParams {
        MlpParams::zeros(&[2 * n, 4, 1], Activation::Identity).unwrap()
    }

    fn linear_net(coeffs: &[f64]) -> MlpParams {
        let mut data = coeffs.to_vec();
        data.push(0.0);
        MlpParams::from_parts(&[coeffs.len(), 1], Activation::Identity, data).unwrap()
    }

    #[test]
    fn u_dot_examples() {
        let cfg = EnvConfig::default();
        let n = cfg.n_x;
        let s = GridState::new(vec![0.0; n], vec![-2.0; n], 0.0).unwrap();
        assert!(u_dot_model(&s, &cfg).unwrap().iter().all(|v| *v == 0.0));
        let s = GridState::new(vec![0.0; n], vec![0.0; n], 0.0).unwrap();
        assert!(u_dot_model(&s, &cfg).unwrap().iter().all(|v| *v == 1.0));
        let (u, w) = critical_point(&cfg).unwrap();
        let s = GridState::new(u, w, 0.0).unwrap();
        assert!(u_dot_model(&s, &cfg).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn u_dot_is_consistent_with_the_stepper() {
        let cfg = EnvConfig {
            n_x: 20,
            n_fourier: 3,
            ..EnvConfig::default()
        };
        let grid = SpatialGrid::new(cfg.n_x).unwrap();
        let u: Vec<f64> = grid.nodes().iter().map(|x| (std::f64::consts::PI * x).cos()).collect();
        let w: Vec<f64> = grid.nodes().iter().map(|x| -1.0 + 0.5 * x).collect();
        let state = GridState::new(u, w, 0.0).unwrap();
        let model = u_dot_model(&state, &cfg).unwrap();
        let discrepancy = |dt: f64| {
            let c = EnvConfig { dt, ..cfg.clone() };
            let next = solver_step(&state, 0.5, &c).unwrap();
            next.u
                .iter()
                .zip(&state.u)
                .zip(&model)
                .map(|((a, b), m)| ((a - b) / dt - m).abs())
                .fold(0.0, f64::max)
        };
        let e1 = discrepancy(0.01);
        let e2 = discrepancy(0.005);
        let ratio = e1 / e2;
        assert!((1.7..=2.3).contains(&ratio), "{e1} {e2} {ratio}");
    }

    #[test]
    fn zero_value_residual_is_minus_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = small_cfg(6);
        let tr = random_transition(&mut rng, 6);
        let batch = HjbBatch::new(vec![tr.clone()], 0.99, cfg.clone()).unwrap();
        let net = zero_net(6);
        let mut g = Graph::new();
        let p = net.to_graph(&mut g);
        let r = hjb_residual(&mut g, &net, &p, &tr, &batch).unwrap();
        let expected = -cfg.dx() * tr.u_next.iter().map(|v| v * v).sum::<f64>();
        assert!((g.value(r) - expected).abs() < 1e-14);
    }

    #[test]
    fn control_term_vanishes_for_increasing_w() {
        let cfg = EnvConfig {
            inflow_temp: -10.0,
            ..small_cfg(5)
        };
        let mut coeffs = vec![0.0; 5];
        coeffs.extend([1.0; 5]);
        let net = linear_net(&coeffs);
        let tr = HjbTransition {
            u: vec![0.0; 5],
            w: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            u_next: vec![0.0; 5],
        };
        let sample = HjbSample::new(&tr, &cfg).unwrap();
        let trace = net.trace(&sample.x, &[&sample.transport]).unwrap();
        assert!(trace.directional(0) > 0.0);
        let batch = HjbBatch::new(vec![tr.clone()], 0.99, cfg.clone()).unwrap();
        let mut g = Graph::new();
        let p = net.to_graph(&mut g);
        let r = hjb_residual(&mut g, &net, &p, &tr, &batch).unwrap();
        // remaining terms by hand: (γ-1)·Σw + Σ_k (u_k - w_k)dt/R
        let v: f64 = 15.0;
        let drift: f64 = tr.w.iter().map(|w| -w * cfg.dt / cfg.resistance).sum();
        assert!((g.value(r) - ((0.99 - 1.0) * v + drift)).abs() < 1e-12);
    }

    #[test]
    fn constant_value_with_unit_gamma_has_zero_residual() {
        let mut data = vec![0.0; 4 * 3 + 3 + 3 + 1];
        *data.last_mut().unwrap() = 2.5;
        let net = MlpParams::from_parts(&[4, 3, 1], Activation::Identity, data).unwrap();
        let cfg = small_cfg(2);
        let tr = HjbTransition {
            u: vec![1.0, -1.0],
            w: vec![0.5, 2.0],
            u_next: vec![0.0, 0.0],
        };
        let batch = HjbBatch::new(vec![tr.clone()], 1.0, cfg).unwrap();
        let mut g = Graph::new();
        let p = net.to_graph(&mut g);
        let r = hjb_residual(&mut g, &net, &p, &tr, &batch).unwrap();
        assert_eq!(g.value(r), 0.0);
    }

    #[test]
    fn mse_f_examples() {
        let cfg = EnvConfig::default();
        let tr = HjbTransition {
            u: vec![0.0; 100],
            w: vec![0.0; 100],
            u_next: vec![1.0; 100],
        };
        let net = zero_net(100);
        let one = HjbBatch::new(vec![tr.clone()], 0.99, cfg.clone()).unwrap();
        let three = HjbBatch::new(vec![tr.clone(); 3], 0.99, cfg).unwrap();
        let mut g = Graph::new();
        let p = net.to_graph(&mut g);
        let a = mse_f(&mut g, &net, &p, &one).unwrap();
        let b = mse_f(&mut g, &net, &p, &three).unwrap();
        assert!((g.value(a) - 0.01).abs() < 1e-15);
        assert!((g.value(b) - g.value(a)).abs() < 1e-15);
    }

    #[test]
    fn boundary_loss_examples() {
        let cfg = small_cfg(3);
        let net = zero_net(3);
        let mut g = Graph::new();
        let p = net.to_graph(&mut g);
        let u = mse_u(&mut g, &net, &p, &cfg).unwrap();
        let n = mse_n(&mut g, &net, &p, &cfg).unwrap();
        assert_eq!((g.value(u), g.value(n)), (0.0, 0.0));

        // V = 0.5 + u_1
        let mut data = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        data.push(0.5);
        let net = MlpParams::from_parts(&[6, 1], Activation::Identity, data).unwrap();
        let mut g = Graph::new();
        let p = net.to_graph(&mut g);
        let u = mse_u(&mut g, &net, &p, &cfg).unwrap();
        let n = mse_n(&mut g, &net, &p, &cfg).unwrap();
        assert_eq!((g.value(u), g.value(n)), (0.25, 1.0));
    }

    #[test]
    fn mse_n_matches_finite_difference_gradient() {
        let cfg = small_cfg(4);
        let (u, w) = critical_point(&cfg).unwrap();
        let x: Vec<f64> = u.iter().chain(&w).copied().collect();
        for seed in 0..10 {
            let net = MlpParams::init(&[8, 6, 6, 1], Activation::Identity, seed).unwrap();
            let mut g = Graph::new();
            let p = net.to_graph(&mut g);
            let n_node = mse_n(&mut g, &net, &p, &cfg).unwrap();
            let got = g.value(n_node);
            let h = 1e-5;
            let mut fd = 0.0;
            for i in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let d = (net.forward(&xp).unwrap() - net.forward(&xm).unwrap()) / (2.0 * h);
                fd += d * d;
            }
            assert!((got - fd).abs() < 1e-5 * fd.max(1e-12), "{got} vs {fd}");
        }
    }

    #[test]
    fn controller_examples() {
        let cfg = EnvConfig {
            inflow_temp: 0.0,
            ..small_cfg(5)
        };
        let grid = SpatialGrid::new(5).unwrap();
        let state = GridState::new(vec![0.0; 5], grid.nodes(), 0.0).unwrap();
        assert_eq!(optimal_action(&zero_net(5), &state, &cfg).unwrap(), -1.0);

        let mut coeffs = vec![0.0; 5];
        coeffs.extend([1.0; 5]);
        let q = controller_q(&linear_net(&coeffs), &state, &cfg).unwrap();
        assert!((q - 5.0).abs() < 1e-12);
        assert_eq!(optimal_action(&linear_net(&coeffs), &state, &cfg).unwrap(), -1.0);
        let neg: Vec<f64> = coeffs.iter().map(|c| -c).collect();
        assert_eq!(optimal_action(&linear_net(&neg), &state, &cfg).unwrap(), 1.0);
    }

    #[test]
    fn controller_attains_brute_force_supremum() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let cfg = small_cfg(6);
        for seed in 0..100 {
            let net = MlpParams::init(&[12, 8, 8, 1], Activation::Identity, seed).unwrap();
            let state = random_state(&mut rng, 6, 4.0);
            let q = controller_q(&net, &state, &cfg).unwrap();
            let mut best = (f64::NEG_INFINITY, 0.0);
            for k in 0..=100 {
                let sigma = k as f64 / 100.0;
                let val = -sigma * q;
                if val > best.0 {
                    best = (val, sigma);
                }
            }
            let a = optimal_action(&net, &state, &cfg).unwrap();
            assert_eq!(map_action(a), best.1);
        }
    }

    #[test]
    fn zero_value_losses_reduce_to_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = small_cfg(5);
        let net = zero_net(5);
        for _ in 0..10 {
            let trs: Vec<_> = (0..7).map(|_| random_transition(&mut rng, 5)).collect();
            let expected: f64 = trs
                .iter()
                .map(|t| {
                    let c = cfg.dx() * t.u_next.iter().map(|v| v * v).sum::<f64>();
                    c * c
                })
                .sum::<f64>()
                * cfg.dt
                / 7.0;
            let batch = HjbBatch::new(trs, 0.99, cfg.clone()).unwrap();
            let mut g = Graph::new();
            let p = net.to_graph(&mut g);
            let f = mse_f(&mut g, &net, &p, &batch).unwrap();
            assert!((g.value(f) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn fast_loss_matches_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for heat in [HeatSource::Exponential, HeatSource::Off] {
            let cfg = EnvConfig {
                heat_source: heat,
                ..small_cfg(4)
            };
            for seed in 0..5 {
                let net = MlpParams::init(&[8, 5, 5, 1], Activation::Identity, seed).unwrap();
                let trs: Vec<_> = (0..6).map(|_| random_transition(&mut rng, 4)).collect();
                let batch = HjbBatch::new(trs.clone(), 0.97, cfg.clone()).unwrap();

                let mut g = Graph::new();
                let p = net.to_graph(&mut g);
                let f = mse_f(&mut g, &net, &p, &batch).unwrap();
                let u = mse_u(&mut g, &net, &p, &cfg).unwrap();
                let n = mse_n(&mut g, &net, &p, &cfg).unwrap();
                let s = g.add(f, u);
                let j = g.add(s, n);
                let expected = g.gradient_values(j, &p).unwrap();

                let samples: Vec<_> = trs.iter().map(|t| HjbSample::new(t, &cfg).unwrap()).collect();
                let refs: Vec<_> = samples.iter().collect();
                let (cu, cw) = critical_point(&cfg).unwrap();
                let boundary: Vec<f64> = cu.into_iter().chain(cw).collect();
                let mut grad = vec![0.0; net.num_params()];
                let loss = hjb_loss_grad(&net, &refs, 0.97, cfg.dt, &boundary, &mut grad).unwrap();
                assert!((loss.mse_f - g.value(f)).abs() < 1e-12 * (1.0 + g.value(f)));
                assert!((loss.mse_u - g.value(u)).abs() < 1e-12);
                assert!((loss.mse_n - g.value(n)).abs() < 1e-12 * (1.0 + g.value(n)));
                for (a, b) in grad.iter().zip(&expected) {
                    assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn mse_f_parameter_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = small_cfg(3);
        let trs: Vec<_> = (0..4).map(|_| random_transition(&mut rng, 3)).collect();
        let batch = HjbBatch::new(trs, 0.99, cfg).unwrap();
        let net = MlpParams::init(&[6, 4, 4, 1], Activation::Identity, 2).unwrap();
        let eval = |data: Vec<f64>| {
            let n = MlpParams::from_parts(net.sizes(), Activation::Identity, data).unwrap();
            let mut g = Graph::new();
            let p: Vec<_> = n.data().iter().map(|&v| g.lift(v)).collect();
            let f = mse_f(&mut g, &n, &p, &batch).unwrap();
            g.value(f)
        };
        let mut g = Graph::new();
        let p = net.to_graph(&mut g);
        let f = mse_f(&mut g, &net, &p, &batch).unwrap();
        let grad = g.gradient_values(f, &p).unwrap();
        let h = 1e-6;
        let scale = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..net.num_params() {
            let mut plus = net.data().to_vec();
            let mut minus = net.data().to_vec();
            plus[i] += h;
            minus[i] -= h;
            let fd = (eval(plus) - eval(minus)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-3 * scale, "{i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn batch_validation() {
        let cfg = small_cfg(3);
        assert!(HjbBatch::new(vec![], 0.99, cfg.clone()).is_err());
        let tr = HjbTransition {
            u: vec![0.0; 2],
            w: vec![0.0; 3],
            u_next: vec![0.0; 3],
        };
        assert!(HjbBatch::new(vec![tr], 0.99, cfg.clone()).is_err());
        let cfg_inf = EnvConfig {
            resistance: f64::INFINITY,
            ..cfg
        };
        assert!(critical_point(&cfg_inf).is_err());
    }
}
