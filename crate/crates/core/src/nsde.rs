//! Deep-hedging objective driven by a Milstein-discretized price path.
//!
//! The price follows `dS = a(S) dt + sigma S dB` with `a(S) = mu` (additive,
//! the default) or `a(S) = mu S`. The hedging gain `G = int H(t, S) dS` is
//! integrated on the same grid, and the per-path loss is
//! `(max(S_1 - K, 0) - G - p0)^2`.
//!
//! With [`GainScheme::Milstein`] the pair `(S, G)` is stepped as one
//! scalar-noise system, which adds `0.5 sigma^2 S^2 dH/ds (dB^2 - dt)` to
//! each gain increment on top of `H (S_{n+1} - S_n)`. The spatial derivative
//! of the network is recorded on the tape as a forward tangent, so the
//! reverse pass only ever sees first-order primitives.

use crate::autodiff::{self, NodeId, Shape, Tape};
use crate::error::{Error, Result};
use crate::paths::{self, CoupledIncrements, SeedSpec};

pub const INPUTS: usize = 2;
pub const HIDDEN: usize = 32;

/// Offsets of each block inside the flat parameter vector.
pub mod layout {
    use super::{HIDDEN, INPUTS};

    pub const W1: usize = 0;
    pub const B1: usize = W1 + HIDDEN * INPUTS;
    pub const W2: usize = B1 + HIDDEN;
    pub const B2: usize = W2 + HIDDEN * HIDDEN;
    pub const W3: usize = B2 + HIDDEN;
    pub const B3: usize = W3 + HIDDEN;
    pub const P0: usize = B3 + 1;
    pub const LEN: usize = P0 + 1;
}

pub const PARAM_LEN: usize = layout::LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Drift {
    /// `mu dt`, exactly as the experiment's dynamics are written.
    Additive,
    /// `mu S dt`, geometric Brownian motion.
    Proportional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainScheme {
    /// Joint Milstein step for price and gain.
    Milstein,
    /// Plain left-point sum `sum H(t_n, S_n) (S_{n+1} - S_n)`.
    LeftPoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketParams {
    pub mu: f64,
    pub sigma: f64,
    pub strike: f64,
    pub s0: f64,
    pub drift: Drift,
    pub gain: GainScheme,
}

impl Default for MarketParams {
    fn default() -> Self {
        Self {
            mu: 1.0,
            sigma: 1.0,
            strike: 3.0,
            s0: 1.0,
            drift: Drift::Additive,
            gain: GainScheme::Milstein,
        }
    }
}

impl MarketParams {
    /// Frozen dynamics: `mu = sigma = 0`.
    pub fn frozen(self) -> Self {
        Self {
            mu: 0.0,
            sigma: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::domain("mu must be finite"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::domain("sigma must be finite and >= 0"));
        }
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return Err(Error::domain("strike must be > 0"));
        }
        if !(self.s0 > 0.0 && self.s0.is_finite()) {
            return Err(Error::domain("s0 must be > 0"));
        }
        Ok(())
    }

    #[inline]
    fn drift_at(&self, s: f64) -> f64 {
        match self.drift {
            Drift::Additive => self.mu,
            Drift::Proportional => self.mu * s,
        }
    }

    pub fn payoff(&self, s_final: f64) -> f64 {
        (s_final - self.strike).max(0.0)
    }
}

/// Flat vector of all network weights followed by the price `p0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        if values.len() != PARAM_LEN {
            return Err(Error::domain(format!(
                "parameter vector has length {}, expected {PARAM_LEN}",
                values.len()
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros() -> Self {
        Self(vec![0.0; PARAM_LEN])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn p0(&self) -> f64 {
        self.0[layout::P0]
    }

    /// `self -= alpha * grad`.
    pub fn sgd_update(&mut self, alpha: f64, grad: &[f64]) {
        for (x, g) in self.0.iter_mut().zip(grad) {
            *x -= alpha * g;
        }
    }
}

/// Feed-forward hedging strategy `H(t, s)`: 2 -> 32 -> 32 -> 1 with SiLU,
/// SiLU, sigmoid.
pub struct HedgeNet;

impl HedgeNet {
    /// Fan-in uniform initialization `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for
    /// every weight and bias; `p0` starts at zero.
    pub fn init(experiment_seed: u64) -> ParamVector {
        let stream = SeedSpec::new(paths::mix_seed(experiment_seed, 0x1417), 0, 0, 0);
        let mut values = vec![0.0; PARAM_LEN];
        let blocks = [
            (layout::W1, layout::B1, INPUTS),
            (layout::B1, layout::W2, INPUTS),
            (layout::W2, layout::B2, HIDDEN),
            (layout::B2, layout::W3, HIDDEN),
            (layout::W3, layout::B3, HIDDEN),
            (layout::B3, layout::P0, HIDDEN),
        ];
        for (start, end, fan_in) in blocks {
            let bound = (1.0 / fan_in as f64).sqrt();
            for (i, v) in values[start..end].iter_mut().enumerate() {
                let u = paths::uniform_from_counter(stream, (start + i) as u32);
                *v = bound * (2.0 * u - 1.0);
            }
        }
        ParamVector(values)
    }

    /// Tape-free evaluation of `H(t, s)`.
    pub fn hedge(x: &ParamVector, t: f64, s: f64) -> f64 {
        let p = x.as_slice();
        let mut h1 = [0.0; HIDDEN];
        for (i, h) in h1.iter_mut().enumerate() {
            let w = &p[layout::W1 + INPUTS * i..];
            *h = autodiff::silu(w[0] * t + w[1] * s + p[layout::B1 + i]);
        }
        let mut h2 = [0.0; HIDDEN];
        for (i, h) in h2.iter_mut().enumerate() {
            let row = &p[layout::W2 + HIDDEN * i..layout::W2 + HIDDEN * (i + 1)];
            let z: f64 = row.iter().zip(&h1).map(|(a, b)| a * b).sum();
            *h = autodiff::silu(z + p[layout::B2 + i]);
        }
        let z3: f64 = p[layout::W3..layout::B3]
            .iter()
            .zip(&h2)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + p[layout::B3];
        autodiff::sigmoid(z3)
    }
}

/// One Milstein step for drift `a(s)` and diffusion `sigma s`.
#[inline]
pub fn milstein_step(s: f64, dt: f64, db: f64, mp: &MarketParams) -> f64 {
    let sig = mp.sigma;
    s + mp.drift_at(s) * dt + sig * s * db + 0.5 * sig * sig * s * (db * db - dt)
}

/// Price path `S_0..S_n` on the uniform grid with the given increments.
pub fn simulate_path(mp: &MarketParams, increments: &[f64]) -> Vec<f64> {
    let dt = paths::HORIZON / increments.len() as f64;
    let mut path = Vec::with_capacity(increments.len() + 1);
    let mut s = mp.s0;
    path.push(s);
    for &db in increments {
        s = milstein_step(s, dt, db, mp);
        path.push(s);
    }
    path
}

/// A recorded loss: its value and the tape node holding it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSample {
    pub value: f64,
    pub node: NodeId,
}

struct NetNodes {
    w1: NodeId,
    b1: NodeId,
    w2: NodeId,
    b2: NodeId,
    w3: NodeId,
    b3: NodeId,
    p0: NodeId,
    ones: NodeId,
    /// `W1 e_s`, the input-space tangent of the first layer.
    w1_ds: NodeId,
}

fn register_net(tape: &mut Tape, p: &[f64]) -> Result<NetNodes> {
    let w1 = tape.param(p, layout::W1, Shape::matrix(HIDDEN, INPUTS))?;
    let b1 = tape.param(p, layout::B1, Shape::vector(HIDDEN))?;
    let w2 = tape.param(p, layout::W2, Shape::matrix(HIDDEN, HIDDEN))?;
    let b2 = tape.param(p, layout::B2, Shape::vector(HIDDEN))?;
    let w3 = tape.param(p, layout::W3, Shape::matrix(1, HIDDEN))?;
    let b3 = tape.param(p, layout::B3, Shape::SCALAR)?;
    let p0 = tape.param(p, layout::P0, Shape::SCALAR)?;
    let ones = tape.constant(&[1.0; HIDDEN], Shape::vector(HIDDEN))?;
    let e_s = tape.constant(&[0.0, 1.0], Shape::vector(INPUTS))?;
    let w1_ds = tape.matvec(w1, e_s)?;
    Ok(NetNodes {
        w1,
        b1,
        w2,
        b2,
        w3,
        b3,
        p0,
        ones,
        w1_ds,
    })
}

/// `silu'(z) = sigmoid(z) + silu(z) (1 - sigmoid(z))`, built from the
/// activation already on the tape.
fn silu_slope(tape: &mut Tape, z: NodeId, a: NodeId, ones: NodeId) -> Result<NodeId> {
    let s = tape.sigmoid(z)?;
    let one_minus = tape.sub(ones, s)?;
    let t = tape.mul(a, one_minus)?;
    tape.add(s, t)
}

/// Records `H(t, s)` and, when asked, `dH/ds`.
fn record_hedge(
    tape: &mut Tape,
    net: &NetNodes,
    t: f64,
    s: f64,
    with_slope: bool,
) -> Result<(NodeId, Option<NodeId>)> {
    let input = tape.constant(&[t, s], Shape::vector(INPUTS))?;
    let m1 = tape.matvec(net.w1, input)?;
    let z1 = tape.add(m1, net.b1)?;
    let a1 = tape.silu(z1)?;
    let m2 = tape.matvec(net.w2, a1)?;
    let z2 = tape.add(m2, net.b2)?;
    let a2 = tape.silu(z2)?;
    let m3 = tape.matvec(net.w3, a2)?;
    let z3 = tape.add(m3, net.b3)?;
    let h = tape.sigmoid(z3)?;
    if !with_slope {
        return Ok((h, None));
    }
    let d1 = silu_slope(tape, z1, a1, net.ones)?;
    let v1 = tape.mul(d1, net.w1_ds)?;
    let u2 = tape.matvec(net.w2, v1)?;
    let d2 = silu_slope(tape, z2, a2, net.ones)?;
    let v2 = tape.mul(d2, u2)?;
    let u3 = tape.matvec(net.w3, v2)?;
    let hh = tape.mul(h, h)?;
    let h_slope = tape.sub(h, hh)?;
    let hs = tape.mul(h_slope, u3)?;
    Ok((h, Some(hs)))
}

/// Reserve enough tape for `steps` hedging steps.
pub fn tape_for_steps(steps: usize) -> Tape {
    Tape::with_capacity(PARAM_LEN, 32 * steps + 32, 720 * steps + 2 * PARAM_LEN)
}

/// Records the level-`level` hedging loss for one increment path onto `tape`.
pub fn simulate_loss(
    x: &ParamVector,
    mp: &MarketParams,
    level: u32,
    increments: &[f64],
    tape: &mut Tape,
) -> Result<LossSample> {
    if level > paths::MAX_LEVEL || increments.len() != 1usize << level {
        return Err(Error::domain(format!(
            "level {level} needs {} increments, got {}",
            1u64 << level.min(paths::MAX_LEVEL),
            increments.len()
        )));
    }
    if tape.param_len() != PARAM_LEN {
        return Err(Error::domain("tape is not sized for the hedging parameters"));
    }
    let dt = paths::step_size(level);
    let path = simulate_path(mp, increments);
    let net = register_net(tape, x.as_slice())?;
    let milstein = mp.gain == GainScheme::Milstein;
    let half_var = 0.5 * mp.sigma * mp.sigma;

    let mut gain: Option<NodeId> = None;
    for (n, &db) in increments.iter().enumerate() {
        let t = n as f64 * dt;
        let s = path[n];
        let ds = path[n + 1] - s;
        let (h, hs) = record_hedge(tape, &net, t, s, milstein)?;
        let mut step = tape.scale(h, ds)?;
        if let Some(hs) = hs {
            let corr = tape.scale(hs, half_var * s * s * (db * db - dt))?;
            step = tape.add(step, corr)?;
        }
        gain = Some(match gain {
            None => step,
            Some(g) => tape.add(g, step)?,
        });
    }
    let gain = gain.expect("at least one step");
    let moneyness = tape.scalar(path[increments.len()] - mp.strike);
    let payoff = tape.pospart(moneyness)?;
    let hedged = tape.sub(payoff, gain)?;
    let resid = tape.sub(hedged, net.p0)?;
    let loss = tape.square(resid)?;
    Ok(LossSample {
        value: tape.scalar_value(loss),
        node: loss,
    })
}

/// Loss value and gradient of one level-`level` simulation.
pub fn loss_grad(
    x: &ParamVector,
    mp: &MarketParams,
    level: u32,
    increments: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let mut tape = tape_for_steps(increments.len());
    let sample = simulate_loss(x, mp, level, increments, &mut tape)?;
    let grad = tape.backward(sample.node)?;
    Ok((sample.value, grad))
}

/// Gradient of the level-`level` loss for freshly sampled increments.
pub fn level_grad(
    x: &ParamVector,
    mp: &MarketParams,
    level: u32,
    seed: SeedSpec,
) -> Result<(f64, Vec<f64>)> {
    let inc = paths::sample_increments(seed, level)?;
    loss_grad(x, mp, level, &inc.fine)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledGrad {
    /// Gradient of `fine_loss - coarse_loss`.
    pub gradient: Vec<f64>,
    pub fine_loss: f64,
    /// Zero at level 0.
    pub coarse_loss: f64,
}

impl CoupledGrad {
    pub fn difference(&self) -> f64 {
        self.fine_loss - self.coarse_loss
    }
}

/// Gradient of the coupled difference for an explicit increment pair.
pub fn coupled_grad_from_increments(
    x: &ParamVector,
    mp: &MarketParams,
    inc: &CoupledIncrements,
) -> Result<CoupledGrad> {
    let level = inc.level;
    let steps = inc.fine.len() + inc.coarse.len();
    let mut tape = tape_for_steps(steps);
    let fine = simulate_loss(x, mp, level, &inc.fine, &mut tape)?;
    if level == 0 {
        let gradient = tape.backward(fine.node)?;
        return Ok(CoupledGrad {
            gradient,
            fine_loss: fine.value,
            coarse_loss: 0.0,
        });
    }
    let coarse = simulate_loss(x, mp, level - 1, &inc.coarse, &mut tape)?;
    let diff = tape.sub(fine.node, coarse.node)?;
    let gradient = tape.backward(diff)?;
    Ok(CoupledGrad {
        gradient,
        fine_loss: fine.value,
        coarse_loss: coarse.value,
    })
}

/// Samples one coupled path at `level` and differentiates `F_l - F_{l-1}`.
pub fn coupled_grad(
    x: &ParamVector,
    mp: &MarketParams,
    level: u32,
    seed: SeedSpec,
) -> Result<CoupledGrad> {
    let inc = paths::sample_increments(seed, level)?;
    coupled_grad_from_increments(x, mp, &inc)
}
