//! Game play: delayed nonanticipative strategies resolved into control paths,
//! Euler-Maruyama paths, Monte Carlo payoffs under random strategies, and the
//! splitting construction for mixed strategies.
//!
//! Time runs on the grid `t_s = s·h`, `s = 0..K`, `K·h = T`. A strategy with
//! delay `m` steps chooses a control at every multiple of `m` and holds it for
//! the cell; the choice may use the state path up to the start of the cell and
//! the opponent's controls strictly before it. Controls are indices into the
//! model's control lists.

use crate::error::{GameError, Result};
use crate::hamiltonian::{max_min, min_max, trace_product};
use crate::model::{GameModel, Matrix};
use crate::solver::Solution;
use num::{BigInt, BigRational, One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use std::fmt;
use std::sync::Arc;

/// Which player a strategy belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Side {
    /// Player I, choosing `u`.
    First,
    /// Player II, choosing `v`.
    Second,
}

/// What a strategy may see when choosing the control for a cell.
#[derive(Clone, Debug)]
pub struct Observation<'a> {
    /// Index of the strategy's own delay cell.
    pub cell: usize,
    /// Simulation step at which the cell starts.
    pub step: usize,
    pub time: f64,
    /// States `x_0, …, x_step`.
    pub states: &'a [Vec<f64>],
    /// Opponent control indices on steps `0, …, step - 1`.
    pub opponent: &'a [usize],
}

impl Observation<'_> {
    pub fn current_state(&self) -> &[f64] {
        self.states
            .last()
            .expect("observation holds the initial state")
    }
}

pub type ResponseRule = Arc<dyn Fn(&Observation) -> usize + Send + Sync>;

/// Delayed nonanticipative pure strategy.
#[derive(Clone)]
pub struct PureStrategy {
    pub side: Side,
    pub delay_steps: usize,
    pub label: String,
    rule: ResponseRule,
}

impl fmt::Debug for PureStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PureStrategy")
            .field("side", &self.side)
            .field("delay_steps", &self.delay_steps)
            .field("label", &self.label)
            .finish()
    }
}

impl PureStrategy {
    pub fn new(
        side: Side,
        delay_steps: usize,
        label: impl Into<String>,
        rule: ResponseRule,
    ) -> Result<Self> {
        if delay_steps == 0 {
            return Err(GameError::invalid(
                "strategy delay must be at least one step",
            ));
        }
        Ok(PureStrategy {
            side,
            delay_steps,
            label: label.into(),
            rule,
        })
    }

    /// Always plays the control with index `k`.
    pub fn constant(side: Side, delay_steps: usize, k: usize) -> Result<Self> {
        Self::new(
            side,
            delay_steps,
            format!("constant[{k}]"),
            Arc::new(move |_| k),
        )
    }

    pub fn respond(&self, obs: &Observation) -> usize {
        (self.rule)(obs)
    }
}

/// Finite mixture of pure strategies with exact rational weights.
#[derive(Clone, Debug)]
pub struct RandomStrategy {
    atoms: Vec<PureStrategy>,
    weights: Vec<BigRational>,
}

impl RandomStrategy {
    pub fn new(atoms: Vec<PureStrategy>, weights: Vec<BigRational>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(GameError::invalid(
                "random strategy needs one weight per atom",
            ));
        }
        if weights.iter().any(|w| w.is_negative()) {
            return Err(GameError::invalid("weights must be nonnegative"));
        }
        let total: BigRational = weights.iter().cloned().sum();
        if !total.is_one() {
            return Err(GameError::invalid(format!("weights sum to {total}, not 1")));
        }
        let side = atoms[0].side;
        if atoms.iter().any(|a| a.side != side) {
            return Err(GameError::invalid("atoms belong to different players"));
        }
        Ok(RandomStrategy { atoms, weights })
    }

    pub fn pure(atom: PureStrategy) -> Self {
        RandomStrategy {
            atoms: vec![atom],
            weights: vec![BigRational::one()],
        }
    }

    pub fn atoms(&self) -> &[PureStrategy] {
        &self.atoms
    }

    pub fn weights(&self) -> &[BigRational] {
        &self.weights
    }

    pub fn weights_f64(&self) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.to_f64().unwrap_or(f64::NAN))
            .collect()
    }

    pub fn side(&self) -> Side {
        self.atoms[0].side
    }
}

/// Per-type random strategies `α̂ = (ᾱ_1, …, ᾱ_I)`, `β̂ = (β̄_1, …, β̄_J)`.
#[derive(Clone, Debug)]
pub struct StrategyProfile {
    pub alpha: Vec<RandomStrategy>,
    pub beta: Vec<RandomStrategy>,
}

impl StrategyProfile {
    pub fn new(
        model: &GameModel,
        alpha: Vec<RandomStrategy>,
        beta: Vec<RandomStrategy>,
    ) -> Result<Self> {
        if alpha.len() != model.i_count() || beta.len() != model.j_count() {
            return Err(GameError::invalid("profile needs one strategy per type"));
        }
        if alpha.iter().any(|a| a.side() != Side::First)
            || beta.iter().any(|b| b.side() != Side::Second)
        {
            return Err(GameError::invalid("profile sides are swapped"));
        }
        Ok(StrategyProfile { alpha, beta })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum NoiseKind {
    Gaussian,
    /// `±√h` increments with equal probability.
    Rademacher,
}

/// Brownian increments on the simulation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePath {
    pub seed: u64,
    pub h: f64,
    pub increments: Vec<Vec<f64>>,
}

impl NoisePath {
    /// Increments for sample `index` drawn from stream `index` of the seeded
    /// ChaCha8 generator, so every sample is reproducible on its own.
    pub fn sample(
        kind: NoiseKind,
        seed: u64,
        index: u64,
        steps: usize,
        dim: usize,
        h: f64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let sq = h.sqrt();
        let increments = (0..steps)
            .map(|_| {
                (0..dim)
                    .map(|_| match kind {
                        NoiseKind::Gaussian => sq * rng.sample::<f64, _>(StandardNormal),
                        NoiseKind::Rademacher => {
                            if rng.random::<bool>() {
                                sq
                            } else {
                                -sq
                            }
                        }
                    })
                    .collect()
            })
            .collect();
        NoisePath {
            seed,
            h,
            increments,
        }
    }

    /// Rademacher path from explicit signs (`true` is `+√h`).
    pub fn from_signs(signs: &[Vec<bool>], h: f64) -> Self {
        let sq = h.sqrt();
        let increments = signs
            .iter()
            .map(|s| s.iter().map(|&b| if b { sq } else { -sq }).collect())
            .collect();
        NoisePath {
            seed: 0,
            h,
            increments,
        }
    }

    /// Zero increments (deterministic dynamics).
    pub fn zero(steps: usize, dim: usize, h: f64) -> Self {
        NoisePath {
            seed: 0,
            h,
            increments: vec![vec![0.0; dim]; steps],
        }
    }

    pub fn steps(&self) -> usize {
        self.increments.len()
    }
}

/// Controls and states produced by [`resolve_controls`].
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub h: f64,
    pub u: Vec<usize>,
    pub v: Vec<usize>,
    pub x: Vec<Vec<f64>>,
}

/// `K = T/h` when it is an integer (to 1e-9 relative).
pub fn step_count(horizon: f64, h: f64) -> Result<usize> {
    if !(h.is_finite() && h > 0.0) {
        return Err(GameError::invalid("simulation step must be positive"));
    }
    let k = (horizon / h).round();
    if k < 1.0 || ((horizon / h) - k).abs() > 1e-9 * k.max(1.0) {
        return Err(GameError::invalid(format!(
            "T = {horizon} is not a multiple of h = {h}"
        )));
    }
    Ok(k as usize)
}

fn observation<'a>(
    delay: usize,
    step: usize,
    h: f64,
    states: &'a [Vec<f64>],
    opponent: &'a [usize],
) -> Observation<'a> {
    Observation {
        cell: step / delay,
        step,
        time: step as f64 * h,
        states: &states[..=step],
        opponent: &opponent[..step],
    }
}

/// Builds `(u, v, X)` cell by cell: each strategy answers at multiples of its
/// delay from the path observed so far, and `X` advances by Euler-Maruyama.
pub fn resolve_controls(
    model: &GameModel,
    alpha: &PureStrategy,
    beta: &PureStrategy,
    x0: &[f64],
    noise: &NoisePath,
) -> Result<Trajectory> {
    if alpha.side != Side::First || beta.side != Side::Second {
        return Err(GameError::invalid(
            "alpha must belong to player I and beta to player II",
        ));
    }
    let h = noise.h;
    let k = step_count(model.horizon(), h)?;
    if noise.steps() != k
        || noise
            .increments
            .iter()
            .any(|inc| inc.len() != model.noise_dim())
    {
        return Err(GameError::invalid(
            "noise path does not match the simulation grid",
        ));
    }
    if x0.len() != model.state_dim() {
        return Err(GameError::invalid("initial state has the wrong dimension"));
    }
    let n = model.state_dim();
    let mut x: Vec<Vec<f64>> = Vec::with_capacity(k + 1);
    x.push(x0.to_vec());
    let mut u = Vec::with_capacity(k);
    let mut v = Vec::with_capacity(k);
    let (mut cu, mut cv) = (0, 0);
    let mut b = vec![0.0; n];
    for s in 0..k {
        if s % alpha.delay_steps == 0 {
            cu = alpha.respond(&observation(alpha.delay_steps, s, h, &x, &v));
            if cu >= model.u_set().len() {
                return Err(GameError::invalid(format!(
                    "strategy {} returned control {cu} outside U",
                    alpha.label
                )));
            }
        }
        if s % beta.delay_steps == 0 {
            cv = beta.respond(&observation(beta.delay_steps, s, h, &x, &u));
            if cv >= model.v_set().len() {
                return Err(GameError::invalid(format!(
                    "strategy {} returned control {cv} outside V",
                    beta.label
                )));
            }
        }
        u.push(cu);
        v.push(cv);
        let t = s as f64 * h;
        let (uu, vv) = (model.u_set().get(cu), model.v_set().get(cv));
        model.drift_into(t, &x[s], uu, vv, &mut b);
        let sigma = model.diffusion(t, &x[s], uu, vv);
        let next: Vec<f64> = (0..n)
            .map(|r| {
                let noise_term: f64 = (0..sigma.cols)
                    .map(|c| sigma.get(r, c) * noise.increments[s][c])
                    .sum();
                x[s][r] + b[r] * h + noise_term
            })
            .collect();
        x.push(next);
    }
    Ok(Trajectory { h, u, v, x })
}

/// Re-evaluates both strategies on the final path at every decision step and
/// checks that they reproduce the resolved controls.
pub fn verify_fixed_point(alpha: &PureStrategy, beta: &PureStrategy, traj: &Trajectory) -> bool {
    (0..traj.u.len()).all(|s| {
        let cell_u = s - s % alpha.delay_steps;
        let cell_v = s - s % beta.delay_steps;
        alpha.respond(&observation(
            alpha.delay_steps,
            cell_u,
            traj.h,
            &traj.x,
            &traj.v,
        )) == traj.u[s]
            && beta.respond(&observation(
                beta.delay_steps,
                cell_v,
                traj.h,
                &traj.x,
                &traj.u,
            )) == traj.v[s]
    })
}

/// `h·Σ_s ℓ_ij(t_s, x_s, u_s, v_s) + g_ij(x_K)` along a resolved path.
pub fn path_payoff(model: &GameModel, i: usize, j: usize, traj: &Trajectory) -> f64 {
    let running = if model.has_running_cost() {
        let s: f64 = (0..traj.u.len())
            .map(|s| {
                model.running(
                    i,
                    j,
                    s as f64 * traj.h,
                    &traj.x[s],
                    model.u_set().get(traj.u[s]),
                    model.v_set().get(traj.v[s]),
                )
            })
            .sum();
        traj.h * s
    } else {
        0.0
    };
    running + model.terminal(i, j, traj.x.last().expect("trajectory has a final state"))
}

/// Monte Carlo setup shared by the payoff estimators.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimConfig {
    pub h: f64,
    pub x0: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    pub noise: NoiseKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub estimate: f64,
    pub stderr: f64,
}

/// Pairwise sum in index order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        2 => v[0] + v[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
        }
    }
}

/// Mean as `y_0 + Σ(y_m - y_0)/M` (pairwise, index order) and standard error
/// `sd/√M`. Constant samples give their value exactly with zero error.
pub fn estimate(samples: &[f64]) -> Estimate {
    let m = samples.len();
    if m == 0 {
        return Estimate {
            estimate: f64::NAN,
            stderr: f64::NAN,
        };
    }
    let pivot = samples[0];
    let dev: Vec<f64> = samples.iter().map(|y| y - pivot).collect();
    let mean_dev = pairwise_sum(&dev) / m as f64;
    let mean = pivot + mean_dev;
    let stderr = if m > 1 {
        let sq: Vec<f64> = dev
            .iter()
            .map(|d| (d - mean_dev) * (d - mean_dev))
            .collect();
        (pairwise_sum(&sq) / (m - 1) as f64).sqrt() / (m as f64).sqrt()
    } else {
        0.0
    };
    Estimate {
        estimate: mean,
        stderr,
    }
}

fn noise_for(model: &GameModel, cfg: &SimConfig, index: usize) -> Result<NoisePath> {
    let k = step_count(model.horizon(), cfg.h)?;
    Ok(NoisePath::sample(
        cfg.noise,
        cfg.seed,
        index as u64,
        k,
        model.noise_dim(),
        cfg.h,
    ))
}

/// Per-sample `Σ_{k,l} r^k s^l J_ij(α^k, β^l)` with one noise path shared by
/// all atom pairs.
fn sample_ij(
    model: &GameModel,
    i: usize,
    j: usize,
    a: &RandomStrategy,
    b: &RandomStrategy,
    x0: &[f64],
    noise: &NoisePath,
) -> Result<f64> {
    let (ra, rb) = (a.weights_f64(), b.weights_f64());
    let mut y = 0.0;
    for (ak, wa) in a.atoms().iter().zip(&ra) {
        for (bl, wb) in b.atoms().iter().zip(&rb) {
            if *wa == 0.0 || *wb == 0.0 {
                continue;
            }
            let traj = resolve_controls(model, ak, bl, x0, noise)?;
            y += wa * wb * path_payoff(model, i, j, &traj);
        }
    }
    Ok(y)
}

fn check_sim(model: &GameModel, cfg: &SimConfig) -> Result<()> {
    if cfg.samples == 0 {
        return Err(GameError::invalid("sample count must be at least 1"));
    }
    if cfg.x0.len() != model.state_dim() {
        return Err(GameError::invalid("initial state has the wrong dimension"));
    }
    step_count(model.horizon(), cfg.h).map(|_| ())
}

/// Monte Carlo estimate of `J_ij(0, x0, ᾱ, β̄)`.
pub fn payoff_ij(
    model: &GameModel,
    i: usize,
    j: usize,
    alpha: &RandomStrategy,
    beta: &RandomStrategy,
    cfg: &SimConfig,
) -> Result<Estimate> {
    check_sim(model, cfg)?;
    if i >= model.i_count() || j >= model.j_count() {
        return Err(GameError::invalid("type index out of range"));
    }
    let ys: Result<Vec<f64>> = (0..cfg.samples)
        .into_par_iter()
        .map(|m| {
            sample_ij(
                model,
                i,
                j,
                alpha,
                beta,
                &cfg.x0,
                &noise_for(model, cfg, m)?,
            )
        })
        .collect();
    Ok(estimate(&ys?))
}

/// Estimate of `J^{p,q}` together with the per-pair `J_ij` estimates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PayoffReport {
    pub estimate: f64,
    pub stderr: f64,
    pub per_type: Vec<Vec<Estimate>>,
}

/// Monte Carlo estimate of `J^{p,q} = Σ_ij p_i q_j J_ij`, with common random
/// numbers across all type pairs and atoms.
pub fn payoff_pq(
    model: &GameModel,
    p: &[f64],
    q: &[f64],
    profile: &StrategyProfile,
    cfg: &SimConfig,
) -> Result<PayoffReport> {
    check_sim(model, cfg)?;
    check_simplex(p, model.i_count(), "p")?;
    check_simplex(q, model.j_count(), "q")?;
    let (ni, nj) = (model.i_count(), model.j_count());
    let rows: Result<Vec<Vec<f64>>> = (0..cfg.samples)
        .into_par_iter()
        .map(|m| {
            let noise = noise_for(model, cfg, m)?;
            let mut row = Vec::with_capacity(ni * nj);
            for i in 0..ni {
                for j in 0..nj {
                    row.push(sample_ij(
                        model,
                        i,
                        j,
                        &profile.alpha[i],
                        &profile.beta[j],
                        &cfg.x0,
                        &noise,
                    )?);
                }
            }
            Ok(row)
        })
        .collect();
    let rows = rows?;
    let combined: Vec<f64> = rows
        .iter()
        .map(|r| {
            let mut s = 0.0;
            for i in 0..ni {
                for j in 0..nj {
                    s += p[i] * q[j] * r[i * nj + j];
                }
            }
            s
        })
        .collect();
    let total = estimate(&combined);
    let per_type = (0..ni)
        .map(|i| {
            (0..nj)
                .map(|j| estimate(&rows.iter().map(|r| r[i * nj + j]).collect::<Vec<_>>()))
                .collect()
        })
        .collect();
    Ok(PayoffReport {
        estimate: total.estimate,
        stderr: total.stderr,
        per_type,
    })
}

fn check_simplex(p: &[f64], k: usize, name: &str) -> Result<()> {
    if p.len() != k
        || p.iter().any(|v| !(v.is_finite() && *v >= 0.0))
        || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(GameError::invalid(format!(
            "{name} must be a probability vector of length {k}"
        )));
    }
    Ok(())
}

/// Parses `"0.25"`, `"1/3"` or `"1"` into an exact rational.
pub fn parse_rational(s: &str) -> Result<BigRational> {
    let s = s.trim();
    let bad = || GameError::invalid(format!("cannot parse {s:?} as a probability"));
    if let Some((a, b)) = s.split_once('/') {
        let num: BigInt = a.trim().parse().map_err(|_| bad())?;
        let den: BigInt = b.trim().parse().map_err(|_| bad())?;
        if den.is_zero() {
            return Err(bad());
        }
        return Ok(BigRational::new(num, den));
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() && frac.is_empty()
        || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit())
    {
        return Err(bad());
    }
    let digits: BigInt = format!("{int}{frac}").parse().map_err(|_| bad())?;
    let den = num::pow(BigInt::from(10), frac.len());
    let r = BigRational::new(digits, den);
    Ok(if neg { -r } else { r })
}

/// Parses a comma-separated probability vector with exact rational entries
/// that must sum to 1.
pub fn parse_simplex(s: &str) -> Result<Vec<BigRational>> {
    let v: Result<Vec<BigRational>> = s.split(',').map(parse_rational).collect();
    let v = v?;
    if v.iter().any(|x| x.is_negative()) || !v.iter().cloned().sum::<BigRational>().is_one() {
        return Err(GameError::invalid(format!(
            "{s:?} is not a probability vector"
        )));
    }
    Ok(v)
}

pub fn rationals_to_f64(v: &[BigRational]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect()
}

/// Splitting: per-type mixtures for `p^a = a p + (1-a) p'` whose payoff is
/// `a·J^{p,q}(α̂) + (1-a)·J^{p',q}(α̂')`. Type `i` plays the atoms of `α̂_i`
/// with weights `(a p_i / p^a_i) r^k` followed by those of `α̂'_i` with weights
/// `((1-a) p'_i / p^a_i) r'^k`. A type with `p^a_i = 0` gets the plain mixture
/// with weights `a` and `1 - a`.
pub fn split_mix(
    alpha: &[RandomStrategy],
    alpha2: &[RandomStrategy],
    a: &BigRational,
    p: &[BigRational],
    p2: &[BigRational],
) -> Result<(Vec<RandomStrategy>, Vec<BigRational>)> {
    let zero = BigRational::zero();
    let one = BigRational::one();
    if a < &zero || a > &one {
        return Err(GameError::invalid("mixing weight must lie in [0, 1]"));
    }
    if alpha.len() != alpha2.len() || alpha.len() != p.len() || p.len() != p2.len() {
        return Err(GameError::invalid("strategy and prior lengths differ"));
    }
    let b = &one - a;
    let mut out = Vec::with_capacity(p.len());
    let mut pa = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let pai = a * &p[i] + &b * &p2[i];
        let (c1, c2) = if pai.is_zero() {
            (a.clone(), b.clone())
        } else {
            (a * &p[i] / &pai, &b * &p2[i] / &pai)
        };
        let mut atoms = alpha[i].atoms().to_vec();
        atoms.extend(alpha2[i].atoms().iter().cloned());
        let mut weights: Vec<BigRational> = alpha[i].weights().iter().map(|r| &c1 * r).collect();
        weights.extend(alpha2[i].weights().iter().map(|r| &c2 * r));
        out.push(RandomStrategy::new(atoms, weights)?);
        pa.push(pai);
    }
    Ok((out, pa))
}

fn nearest_lattice(grid: &crate::simplex::SimplexGrid, p: &[f64]) -> usize {
    (0..grid.len())
        .min_by(|&a, &b| {
            let da: f64 = grid
                .point(a)
                .iter()
                .zip(p)
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            let db: f64 = grid
                .point(b)
                .iter()
                .zip(p)
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            da.total_cmp(&db)
        })
        .expect("lattice is nonempty")
}

/// Central (one-sided at the box faces) gradient and Hessian of a field slice
/// restricted to fixed belief indices, at state node `ix`.
fn local_jet(sol: &Solution, slice: usize, ix: usize, ip: usize, iq: usize) -> (Vec<f64>, Matrix) {
    let g = &sol.grids;
    let st = &g.state;
    let n = st.dim();
    let w = &sol.slices[slice].values;
    let at = |node: usize| w[g.index(node, ip, iq)];
    let m = st.multi_index(ix);
    let mut grad = vec![0.0; n];
    let mut hess = Matrix::zeros(n, n);
    for d in 0..n {
        let (s, h) = (st.stride(d), st.spacing()[d]);
        let last = st.counts()[d] - 1;
        if m[d] == 0 {
            grad[d] = (at(ix + s) - at(ix)) / h;
        } else if m[d] == last {
            grad[d] = (at(ix) - at(ix - s)) / h;
        } else {
            grad[d] = (at(ix + s) - at(ix - s)) / (2.0 * h);
            hess.set(d, d, (at(ix + s) - 2.0 * at(ix) + at(ix - s)) / (h * h));
        }
    }
    (grad, hess)
}

/// Heuristic Markov feedback from a solved stack with beliefs frozen at
/// `(p0, q0)`. Type `i` of player I plays the minimizing `u` of
/// `min_u max_v { <b, Dw> + ½Tr(σσᵀD²w) + Σ_j q0_j ℓ_ij }` with `w` the slice
/// `w(·, e_i, q0)`; type `j` of player II plays the maximizing `v` of
/// `max_v min_u { … + Σ_i p0_i ℓ_ij }` on `w(·, p0, e_j)`. Derivatives are
/// taken at the nearest state node on the nearest time slice.
pub fn feedback_from_field(
    model: &Arc<GameModel>,
    sol: &Arc<Solution>,
    p0: &[f64],
    q0: &[f64],
    delay_steps: usize,
) -> Result<(Vec<RandomStrategy>, Vec<RandomStrategy>)> {
    check_simplex(p0, model.i_count(), "p")?;
    check_simplex(q0, model.j_count(), "q")?;
    let g = &sol.grids;
    let iq0 = nearest_lattice(&g.q, q0);
    let ip0 = nearest_lattice(&g.p, p0);
    let mut alpha = Vec::new();
    for i in 0..model.i_count() {
        let ip = g.p.vertex_index(i);
        let (m, s, q) = (Arc::clone(model), Arc::clone(sol), q0.to_vec());
        let rule: ResponseRule = Arc::new(move |obs: &Observation| {
            let x = obs.current_state();
            let (integrand, _) = feedback_integrand(&m, &s, obs.time, x, ip, iq0);
            let nv = m.v_set().len();
            let run = |ku: usize, kv: usize| -> f64 {
                (0..q.len())
                    .map(|j| {
                        q[j] * m.running(i, j, obs.time, x, m.u_set().get(ku), m.v_set().get(kv))
                    })
                    .sum()
            };
            min_max(m.u_set().len(), nv, |ku, kv| {
                integrand(ku, kv) + run(ku, kv)
            })
            .1
        });
        alpha.push(RandomStrategy::pure(PureStrategy::new(
            Side::First,
            delay_steps,
            format!("feedback-I-{i}"),
            rule,
        )?));
    }
    let mut beta = Vec::new();
    for j in 0..model.j_count() {
        let iq = g.q.vertex_index(j);
        let (m, s, p) = (Arc::clone(model), Arc::clone(sol), p0.to_vec());
        let rule: ResponseRule = Arc::new(move |obs: &Observation| {
            let x = obs.current_state();
            let (integrand, _) = feedback_integrand(&m, &s, obs.time, x, ip0, iq);
            let run = |ku: usize, kv: usize| -> f64 {
                (0..p.len())
                    .map(|i| {
                        p[i] * m.running(i, j, obs.time, x, m.u_set().get(ku), m.v_set().get(kv))
                    })
                    .sum()
            };
            max_min(m.u_set().len(), m.v_set().len(), |ku, kv| {
                integrand(ku, kv) + run(ku, kv)
            })
            .1
        });
        beta.push(RandomStrategy::pure(PureStrategy::new(
            Side::Second,
            delay_steps,
            format!("feedback-II-{j}"),
            rule,
        )?));
    }
    Ok((alpha, beta))
}

type PairIntegrand<'a> = Box<dyn Fn(usize, usize) -> f64 + 'a>;

fn feedback_integrand<'a>(
    model: &'a GameModel,
    sol: &'a Solution,
    t: f64,
    x: &'a [f64],
    ip: usize,
    iq: usize,
) -> (PairIntegrand<'a>, usize) {
    let slice = sol
        .slices
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1.t - t).abs().total_cmp(&(b.1.t - t).abs()))
        .map(|(k, _)| k)
        .expect("solution has slices");
    let ix = sol.grids.state.nearest(x);
    let (grad, hess) = local_jet(sol, slice, ix, ip, iq);
    let f = move |ku: usize, kv: usize| {
        let (u, v) = (model.u_set().get(ku), model.v_set().get(kv));
        let b = model.drift(t, x, u, v);
        let first: f64 = b.iter().zip(&grad).map(|(a, c)| a * c).sum();
        first + 0.5 * trace_product(&hess, model.covariance(t, x, u, v))
    };
    (Box::new(f), slice)
}

/// Named pure strategies for quick experiments: `constant` plays the control
/// closest to zero; `sign` makes player I push the state toward the origin and
/// player II push it away.
pub fn preset_strategy(
    model: &GameModel,
    name: &str,
    side: Side,
    delay_steps: usize,
) -> Result<PureStrategy> {
    let set = match side {
        Side::First => model.u_set().clone(),
        Side::Second => model.v_set().clone(),
    };
    let n = set.dim();
    match name {
        "constant" => PureStrategy::constant(side, delay_steps, set.nearest(&vec![0.0; n])),
        "sign" => {
            let dir = if side == Side::First { -1.0 } else { 1.0 };
            let bound = set.bound();
            let rule: ResponseRule = Arc::new(move |obs: &Observation| {
                let target: Vec<f64> = obs
                    .current_state()
                    .iter()
                    .map(|x| dir * bound * x.signum())
                    .collect();
                set.nearest(&target)
            });
            PureStrategy::new(side, delay_steps, "sign", rule)
        }
        other => Err(GameError::invalid(format!(
            "unknown strategy preset {other:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{classical_solve, StateGrid};

    fn model(json: &str) -> GameModel {
        GameModel::from_json(json).unwrap()
    }

    fn drift_sum(sigma: f64) -> GameModel {
        model(&format!(
            r#"{{"preset":"drift-sum-1d","params":{{"sigma":{sigma}}},"I":1,"J":1,"T":1.0,"g":[[{{"type":"linear","coef":1.0}}]]}}"#
        ))
    }

    fn rat(a: i64, b: i64) -> BigRational {
        BigRational::new(a.into(), b.into())
    }

    #[test]
    fn constant_strategies_follow_euler() {
        let m = drift_sum(0.5);
        let a = PureStrategy::constant(Side::First, 2, 2).unwrap();
        let b = PureStrategy::constant(Side::Second, 3, 1).unwrap();
        let noise = NoisePath::sample(NoiseKind::Gaussian, 9, 0, 10, 1, 0.1);
        let tr = resolve_controls(&m, &a, &b, &[0.0], &noise).unwrap();
        assert!(tr.u.iter().all(|&k| k == 2) && tr.v.iter().all(|&k| k == 1));
        let mut x = 0.0;
        for s in 0..10 {
            x = x + (1.0 + 0.0) * 0.1 + 0.5 * noise.increments[s][0];
            assert_eq!(tr.x[s + 1][0], x);
        }
        assert!(verify_fixed_point(&a, &b, &tr));
    }

    #[test]
    fn two_cell_delay_recursion() {
        // b = u + v, σ = 0, α plays sign(-x) observed at the cell start, β ≡ 0
        let m = drift_sum(0.0);
        let rule: ResponseRule =
            Arc::new(|obs: &Observation| if obs.current_state()[0] > 0.0 { 0 } else { 2 });
        let a = PureStrategy::new(Side::First, 1, "sign", rule).unwrap();
        let b = PureStrategy::constant(Side::Second, 1, 1).unwrap();
        let noise = NoisePath::zero(2, 1, 0.5);
        let tr = resolve_controls(&m, &a, &b, &[1.0], &noise).unwrap();
        // cell 0 sees x = 1 → u = -1, x(0.5) = 0.5; cell 1 sees 0.5 → u = -1, x(1) = 0
        assert_eq!(tr.u, vec![0, 0]);
        assert_eq!(tr.x, vec![vec![1.0], vec![0.5], vec![0.0]]);
    }

    #[test]
    fn opponent_aware_strategy_replays() {
        let m = drift_sum(0.3);
        let a = PureStrategy::new(
            Side::First,
            2,
            "alternate",
            Arc::new(|obs: &Observation| (obs.cell + obs.states.len()) % 3),
        )
        .unwrap();
        let b = PureStrategy::new(
            Side::Second,
            3,
            "copy",
            Arc::new(|obs: &Observation| obs.opponent.last().copied().unwrap_or(1)),
        )
        .unwrap();
        let noise = NoisePath::sample(NoiseKind::Gaussian, 3, 5, 12, 1, 1.0 / 12.0);
        let tr = resolve_controls(&m, &a, &b, &[0.2], &noise).unwrap();
        assert!(verify_fixed_point(&a, &b, &tr));
        // truncating the path after a cell does not change earlier controls
        let short = NoisePath {
            increments: noise.increments[..6].to_vec(),
            ..noise.clone()
        };
        let m_short = GameModel::from_json(
            r#"{"preset":"drift-sum-1d","params":{"sigma":0.3},"I":1,"J":1,"T":0.5,"g":[[{"type":"linear","coef":1.0}]]}"#,
        )
        .unwrap();
        let tr2 = resolve_controls(&m_short, &a, &b, &[0.2], &short).unwrap();
        assert_eq!(&tr.u[..6], &tr2.u[..]);
        assert_eq!(&tr.v[..6], &tr2.v[..]);
    }

    #[test]
    fn mismatched_grid_is_rejected() {
        let m = drift_sum(0.3);
        let a = PureStrategy::constant(Side::First, 1, 0).unwrap();
        let b = PureStrategy::constant(Side::Second, 1, 0).unwrap();
        assert!(resolve_controls(&m, &a, &b, &[0.0], &NoisePath::zero(3, 1, 0.1)).is_err());
        assert!(resolve_controls(&m, &b, &a, &[0.0], &NoisePath::zero(10, 1, 0.1)).is_err());
    }

    #[test]
    fn constant_payoffs_are_exact() {
        let m = model(
            r#"{"preset":"drift-sum-1d","params":{"sigma":1.0},"I":1,"J":1,"T":1.0,
                "g":[[{"type":"const","value":0.3}]]}"#,
        );
        let a = RandomStrategy::pure(PureStrategy::constant(Side::First, 1, 0).unwrap());
        let b = RandomStrategy::pure(PureStrategy::constant(Side::Second, 1, 2).unwrap());
        let cfg = SimConfig {
            h: 0.1,
            x0: vec![0.0],
            samples: 37,
            seed: 1,
            noise: NoiseKind::Gaussian,
        };
        let e = payoff_ij(&m, 0, 0, &a, &b, &cfg).unwrap();
        assert_eq!(
            e,
            Estimate {
                estimate: 0.3,
                stderr: 0.0
            }
        );
        let m = model(
            r#"{"preset":"drift-sum-1d","params":{"sigma":1.0},"I":1,"J":1,"T":1.0,
                "g":[[{"type":"zero"}]],"l":[[{"type":"const","value":1.0}]]}"#,
        );
        let e = payoff_ij(&m, 0, 0, &a, &b, &cfg).unwrap();
        assert_eq!(
            e,
            Estimate {
                estimate: 1.0,
                stderr: 0.0
            }
        );
    }

    #[test]
    fn deterministic_feedback_matches_ode() {
        // σ = 0, b = u + v with α = sign feedback (delay 1), β ≡ 0.25 control
        let m = model(
            r#"{"preset":"drift-sum-1d","params":{"sigma":0.0,"u_values":[-1.0,1.0],"v_values":[0.25]},"I":1,"J":1,"T":1.0,
                "g":[[{"type":"linear","coef":1.0}]],"l":[[{"type":"separable","u_coef":0.5,"v_coef":0.0}]]}"#,
        );
        let a = RandomStrategy::pure(preset_strategy(&m, "sign", Side::First, 1).unwrap());
        let b = RandomStrategy::pure(PureStrategy::constant(Side::Second, 1, 0).unwrap());
        let cfg = SimConfig {
            h: 0.125,
            x0: vec![0.3],
            samples: 5,
            seed: 2,
            noise: NoiseKind::Gaussian,
        };
        let e = payoff_ij(&m, 0, 0, &a, &b, &cfg).unwrap();
        let (mut x, mut run) = (0.3f64, 0.0);
        for _ in 0..8 {
            let u = if x > 0.0 { -1.0 } else { 1.0 };
            run += 0.5 * u;
            x += (u + 0.25) * 0.125;
        }
        assert!((e.estimate - (0.125 * run + x)).abs() < 1e-12);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn payoff_pq_vertex_and_bilinearity() {
        let m = model(
            r#"{"preset":"drift-sum-1d","params":{"sigma":0.8},"I":2,"J":2,"T":1.0,
                "g":[[{"type":"linear","coef":1.0},{"type":"tanh","coef":2.0,"amplitude":1.0}],
                     [{"type":"const","value":0.5},{"type":"clamp","coef":1.0,"lo":-1.0,"hi":1.0}]]}"#,
        );
        let mk = |side, k| RandomStrategy::pure(PureStrategy::constant(side, 2, k).unwrap());
        let mixed = RandomStrategy::new(
            vec![
                PureStrategy::constant(Side::First, 2, 0).unwrap(),
                PureStrategy::constant(Side::First, 1, 2).unwrap(),
            ],
            vec![rat(1, 3), rat(2, 3)],
        )
        .unwrap();
        let prof = StrategyProfile::new(
            &m,
            vec![mixed.clone(), mk(Side::First, 1)],
            vec![mk(Side::Second, 0), mk(Side::Second, 2)],
        )
        .unwrap();
        let cfg = SimConfig {
            h: 0.1,
            x0: vec![0.1],
            samples: 200,
            seed: 4,
            noise: NoiseKind::Gaussian,
        };
        let vert = payoff_pq(&m, &[0.0, 1.0], &[1.0, 0.0], &prof, &cfg).unwrap();
        let direct = payoff_ij(&m, 1, 0, &prof.alpha[1], &prof.beta[0], &cfg).unwrap();
        assert!((vert.estimate - direct.estimate).abs() < 1e-12);
        let p = [0.2, 0.8];
        let p2 = [0.9, 0.1];
        let mid = [0.55, 0.45];
        let q = [0.3, 0.7];
        let a = payoff_pq(&m, &p, &q, &prof, &cfg).unwrap().estimate;
        let b = payoff_pq(&m, &p2, &q, &prof, &cfg).unwrap().estimate;
        let c = payoff_pq(&m, &mid, &q, &prof, &cfg).unwrap().estimate;
        assert!((c - 0.5 * (a + b)).abs() < 1e-12);
    }

    #[test]
    fn estimates_are_deterministic_and_thread_independent() {
        let m = drift_sum(1.0);
        let a = RandomStrategy::pure(preset_strategy(&m, "sign", Side::First, 2).unwrap());
        let b = RandomStrategy::pure(preset_strategy(&m, "sign", Side::Second, 1).unwrap());
        let cfg = SimConfig {
            h: 0.05,
            x0: vec![0.0],
            samples: 300,
            seed: 11,
            noise: NoiseKind::Gaussian,
        };
        let e1 = payoff_ij(&m, 0, 0, &a, &b, &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let e2 = pool.install(|| payoff_ij(&m, 0, 0, &a, &b, &cfg)).unwrap();
        assert_eq!(e1.estimate.to_bits(), e2.estimate.to_bits());
        assert_eq!(e1.stderr.to_bits(), e2.stderr.to_bits());
    }

    #[test]
    fn noise_moments() {
        let h = 0.01;
        let mut all = Vec::new();
        for idx in 0..200 {
            all.extend(
                NoisePath::sample(NoiseKind::Gaussian, 5, idx, 50, 1, h)
                    .increments
                    .into_iter()
                    .map(|v| v[0]),
            );
        }
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 4.0 * (h / n).sqrt());
        assert!((var / h - 1.0).abs() < 0.05);
        let r = NoisePath::sample(NoiseKind::Rademacher, 5, 0, 20, 2, h);
        assert!(r.increments.iter().flatten().all(|v| v.abs() == h.sqrt()));
    }

    #[test]
    fn split_mix_examples() {
        let a1 = RandomStrategy::pure(PureStrategy::constant(Side::First, 1, 0).unwrap());
        let a2 = RandomStrategy::pure(PureStrategy::constant(Side::First, 1, 1).unwrap());
        let alpha = vec![a1.clone(), a1.clone()];
        let alpha2 = vec![a2.clone(), a2.clone()];
        let p = vec![rat(1, 4), rat(3, 4)];
        let p2 = vec![rat(2, 3), rat(1, 3)];
        let (mix, pa) = split_mix(&alpha, &alpha2, &BigRational::one(), &p, &p2).unwrap();
        assert_eq!(pa, p);
        assert_eq!(mix[0].weights(), &[BigRational::one(), BigRational::zero()]);
        let (mix, _) = split_mix(&alpha, &alpha2, &rat(1, 3), &p, &p).unwrap();
        assert_eq!(mix[1].weights(), &[rat(1, 3), rat(2, 3)]);
        let (mix, pa) = split_mix(&alpha, &alpha2, &rat(2, 5), &p, &p2).unwrap();
        for (i, r) in mix.iter().enumerate() {
            assert!(r.weights().iter().cloned().sum::<BigRational>().is_one());
            assert_eq!(pa[i], rat(2, 5) * &p[i] + rat(3, 5) * &p2[i]);
        }
        let z = vec![BigRational::zero(), BigRational::one()];
        let (mix, pa) = split_mix(&alpha, &alpha2, &rat(1, 2), &z, &z).unwrap();
        assert!(pa[0].is_zero());
        assert_eq!(mix[0].weights(), &[rat(1, 2), rat(1, 2)]);
    }

    #[test]
    fn rational_parsing() {
        assert_eq!(parse_rational("0.25").unwrap(), rat(1, 4));
        assert_eq!(parse_rational("1/3").unwrap(), rat(1, 3));
        assert_eq!(parse_rational("1").unwrap(), rat(1, 1));
        assert!(parse_rational("x").is_err());
        assert!(parse_rational("1/0").is_err());
        assert_eq!(
            parse_simplex("1/3,2/3").unwrap(),
            vec![rat(1, 3), rat(2, 3)]
        );
        assert!(parse_simplex("0.5,0.6").is_err());
    }

    #[test]
    fn feedback_in_static_and_symmetric_games() {
        let m = Arc::new(model(
            r#"{"preset":"drift-sum-1d","params":{"sigma":0.5},"I":2,"J":1,"T":1.0,
                "g":[[{"type":"linear","coef":1.0}],[{"type":"linear","coef":1.0}]]}"#,
        ));
        let grids = crate::solver::ProductGrids::for_model(
            &m,
            StateGrid::uniform(1, -2.0, 2.0, 21).unwrap(),
            2,
            1,
        )
        .unwrap();
        let sol = Arc::new(crate::solver::solve(&m, &grids, 0.05, 0.0).unwrap());
        let (alpha, _) = feedback_from_field(&m, &sol, &[0.5, 0.5], &[1.0], 1).unwrap();
        let noise = NoisePath::sample(NoiseKind::Gaussian, 1, 0, 20, 1, 0.05);
        let b = PureStrategy::constant(Side::Second, 1, 1).unwrap();
        let t0 = resolve_controls(&m, &alpha[0].atoms()[0], &b, &[0.3], &noise).unwrap();
        let t1 = resolve_controls(&m, &alpha[1].atoms()[0], &b, &[0.3], &noise).unwrap();
        assert_eq!(t0.u, t1.u);

        let st = model(
            r#"{"preset":"static","params":{},"I":1,"J":1,"T":1.0,"g":[[{"type":"linear","coef":2.0}]]}"#,
        );
        let st = Arc::new(st);
        let sol = Arc::new(
            classical_solve(
                &st,
                &StateGrid::uniform(1, -1.0, 1.0, 5).unwrap(),
                0.25,
                0.0,
            )
            .unwrap(),
        );
        let (a, b) = feedback_from_field(&st, &sol, &[1.0], &[1.0], 1).unwrap();
        let cfg = SimConfig {
            h: 0.25,
            x0: vec![0.5],
            samples: 3,
            seed: 0,
            noise: NoiseKind::Gaussian,
        };
        assert_eq!(
            payoff_ij(&st, 0, 0, &a[0], &b[0], &cfg).unwrap().estimate,
            1.0
        );
    }
}
