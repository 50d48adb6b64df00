//! Exact brute-force computations on small discrete games driven by
//! Rademacher noise: exact payoff expectations, classical backward induction
//! and the one-sided information recursion with `vex_p` at every stage.

use crate::error::{GameError, Result};
use crate::hamiltonian::min_max;
use crate::model::GameModel;
use crate::simplex::SimplexGrid;
use crate::simulator::{
    pairwise_sum, path_payoff, resolve_controls, step_count, NoisePath, PureStrategy,
    RandomStrategy, StrategyProfile,
};
use crate::transform::vex_p;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;

pub const MAX_TREE_STEPS: usize = 6;
pub const MAX_TREE_PATHS: f64 = 1e7;

/// A model on the grid `t_k = k·h`, `k = 0..K`, with `±√h` noise per step and
/// component, started from `x0`.
#[derive(Clone, Debug)]
pub struct TreeGame<'a> {
    pub model: &'a GameModel,
    pub h: f64,
    pub steps: usize,
    pub x0: Vec<f64>,
}

impl<'a> TreeGame<'a> {
    pub fn new(model: &'a GameModel, h: f64, x0: &[f64]) -> Result<Self> {
        let steps = step_count(model.horizon(), h)?;
        if steps > MAX_TREE_STEPS {
            return Err(GameError::Size(format!(
                "tree games allow at most {MAX_TREE_STEPS} steps, got {steps}"
            )));
        }
        if x0.len() != model.state_dim() {
            return Err(GameError::invalid("initial state has the wrong dimension"));
        }
        Ok(TreeGame {
            model,
            h,
            steps,
            x0: x0.to_vec(),
        })
    }

    fn noise_paths(&self) -> Result<usize> {
        let count = 2f64.powi((self.model.noise_dim() * self.steps) as i32);
        if count > MAX_TREE_PATHS {
            return Err(GameError::Size(format!(
                "{count} noise paths exceed the cap of {MAX_TREE_PATHS}"
            )));
        }
        Ok(count as usize)
    }

    fn check_full_tree(&self) -> Result<()> {
        let m = self.model;
        let branch = (m.u_set().len() * m.v_set().len()) as f64 * 2f64.powi(m.noise_dim() as i32);
        let leaves = branch.powi(self.steps as i32);
        if leaves > MAX_TREE_PATHS {
            return Err(GameError::Size(format!(
                "{leaves} tree leaves exceed the cap of {MAX_TREE_PATHS}"
            )));
        }
        if !m.decoupled() {
            return Err(GameError::Unsupported(
                "backward induction needs a decoupled model so that the stage order is irrelevant"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Sign vector number `m` for one step: bit `c` set means `+√h` on
    /// component `c`.
    fn successors(&self, k: usize, x: &[f64], u: &[f64], v: &[f64]) -> Vec<Vec<f64>> {
        let m = self.model;
        let t = k as f64 * self.h;
        let b = m.drift(t, x, u, v);
        let sigma = m.diffusion(t, x, u, v);
        let d = m.noise_dim();
        let sq = self.h.sqrt();
        (0..1usize << d)
            .map(|bits| {
                (0..x.len())
                    .map(|r| {
                        let noise: f64 = (0..d)
                            .map(|c| sigma.get(r, c) * if bits >> c & 1 == 1 { sq } else { -sq })
                            .sum();
                        x[r] + b[r] * self.h + noise
                    })
                    .collect()
            })
            .collect()
    }
}

fn signs_for(index: usize, steps: usize, dim: usize) -> Vec<Vec<bool>> {
    (0..steps)
        .map(|s| (0..dim).map(|c| index >> (s * dim + c) & 1 == 1).collect())
        .collect()
}

/// `E[h·Σℓ_ij + g_ij(X_K)]` by enumerating all `2^{dK}` sign paths, summed
/// pairwise in path-index order.
pub fn exact_payoff_tree(
    tree: &TreeGame,
    i: usize,
    j: usize,
    alpha: &PureStrategy,
    beta: &PureStrategy,
) -> Result<f64> {
    let count = tree.noise_paths()?;
    if i >= tree.model.i_count() || j >= tree.model.j_count() {
        return Err(GameError::invalid("type index out of range"));
    }
    let d = tree.model.noise_dim();
    let values: Result<Vec<f64>> = (0..count)
        .into_par_iter()
        .map(|m| {
            let noise = NoisePath::from_signs(&signs_for(m, tree.steps, d), tree.h);
            let traj = resolve_controls(tree.model, alpha, beta, &tree.x0, &noise)?;
            Ok(path_payoff(tree.model, i, j, &traj))
        })
        .collect();
    Ok(pairwise_sum(&values?) / count as f64)
}

/// `Σ_{k,l} r^k s^l` times the exact atom-pair payoffs.
pub fn exact_payoff_random(
    tree: &TreeGame,
    i: usize,
    j: usize,
    alpha: &RandomStrategy,
    beta: &RandomStrategy,
) -> Result<f64> {
    let (ra, rb) = (alpha.weights_f64(), beta.weights_f64());
    let mut total = 0.0;
    for (a, wa) in alpha.atoms().iter().zip(&ra) {
        for (b, wb) in beta.atoms().iter().zip(&rb) {
            if *wa != 0.0 && *wb != 0.0 {
                total += wa * wb * exact_payoff_tree(tree, i, j, a, b)?;
            }
        }
    }
    Ok(total)
}

/// Exact `J^{p,q} = Σ_ij p_i q_j J_ij` for a strategy profile.
pub fn exact_payoff_pq(
    tree: &TreeGame,
    p: &[f64],
    q: &[f64],
    profile: &StrategyProfile,
) -> Result<f64> {
    if p.len() != tree.model.i_count() || q.len() != tree.model.j_count() {
        return Err(GameError::invalid("prior lengths do not match the model"));
    }
    let mut total = 0.0;
    for (i, pi) in p.iter().enumerate() {
        for (j, qj) in q.iter().enumerate() {
            if *pi != 0.0 && *qj != 0.0 {
                total +=
                    pi * qj * exact_payoff_random(tree, i, j, &profile.alpha[i], &profile.beta[j])?;
            }
        }
    }
    Ok(total)
}

fn key(k: usize, x: &[f64]) -> (usize, Vec<u64>) {
    (k, x.iter().map(|v| v.to_bits()).collect())
}

/// Classical value at `(0, x0)` for the pair `(g_ij, ℓ_ij)`:
/// `V_k(x) = min_u max_v [h·ℓ_ij + E V_{k+1}(x + b h + σ√h ε)]`, `V_K = g_ij`.
pub fn classical_backward(tree: &TreeGame, i: usize, j: usize) -> Result<f64> {
    tree.check_full_tree()?;
    if i >= tree.model.i_count() || j >= tree.model.j_count() {
        return Err(GameError::invalid("type index out of range"));
    }
    let mut memo = HashMap::new();
    Ok(classical_node(tree, i, j, 0, &tree.x0, &mut memo))
}

fn classical_node(
    tree: &TreeGame,
    i: usize,
    j: usize,
    k: usize,
    x: &[f64],
    memo: &mut HashMap<(usize, Vec<u64>), f64>,
) -> f64 {
    let m = tree.model;
    if k == tree.steps {
        return m.terminal(i, j, x);
    }
    if let Some(v) = memo.get(&key(k, x)) {
        return *v;
    }
    let t = k as f64 * tree.h;
    let (nu, nv) = (m.u_set().len(), m.v_set().len());
    let mut table = vec![0.0; nu * nv];
    for ku in 0..nu {
        for kv in 0..nv {
            let (u, v) = (m.u_set().get(ku), m.v_set().get(kv));
            let next = tree.successors(k, x, u, v);
            let ev = next
                .iter()
                .map(|y| classical_node(tree, i, j, k + 1, y, memo))
                .sum::<f64>()
                / next.len() as f64;
            table[ku * nv + kv] = tree.h * m.running(i, j, t, x, u, v) + ev;
        }
    }
    let value = min_max(nu, nv, |ku, kv| table[ku * nv + kv]).0;
    memo.insert(key(k, x), value);
    value
}

/// Value table of the one-sided recursion at `(0, x0)`.
#[derive(Clone, Debug, Serialize)]
pub struct OneSidedValue {
    pub resolution: usize,
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    /// Largest discrete convexity violation over every computed stage table.
    pub max_convexity_violation: f64,
}

/// `V_k(x, ·) = vex_p[ min_u max_v ( h Σ_i p_i ℓ_i + E V_{k+1}(x', ·) ) ]`
/// with `V_K(x, p) = Σ_i p_i g_i(x)`, on the lattice of resolution `n`.
/// Only player I may be informed (`J = 1`).
pub fn one_sided_recursion(tree: &TreeGame, n: usize) -> Result<OneSidedValue> {
    if tree.model.j_count() != 1 {
        return Err(GameError::Unsupported(
            "the exact recursion covers one-sided information (J = 1) only".into(),
        ));
    }
    tree.check_full_tree()?;
    let grid = SimplexGrid::new(tree.model.i_count(), n)?;
    let mut memo = HashMap::new();
    let mut violation = 0.0f64;
    let values = one_sided_node(tree, &grid, 0, &tree.x0, &mut memo, &mut violation);
    Ok(OneSidedValue {
        resolution: n,
        points: (0..grid.len()).map(|k| grid.point(k).to_vec()).collect(),
        values,
        max_convexity_violation: violation,
    })
}

fn one_sided_node(
    tree: &TreeGame,
    grid: &SimplexGrid,
    k: usize,
    x: &[f64],
    memo: &mut HashMap<(usize, Vec<u64>), Vec<f64>>,
    violation: &mut f64,
) -> Vec<f64> {
    let m = tree.model;
    let ni = m.i_count();
    if k == tree.steps {
        return (0..grid.len())
            .map(|a| {
                let p = grid.point(a);
                (0..ni).map(|i| p[i] * m.terminal(i, 0, x)).sum()
            })
            .collect();
    }
    if let Some(v) = memo.get(&key(k, x)) {
        return v.clone();
    }
    let t = k as f64 * tree.h;
    let (nu, nv) = (m.u_set().len(), m.v_set().len());
    // per (u, v): running cost per type and expected continuation table
    let mut running = Vec::with_capacity(nu * nv);
    let mut cont = Vec::with_capacity(nu * nv);
    for ku in 0..nu {
        for kv in 0..nv {
            let (u, v) = (m.u_set().get(ku), m.v_set().get(kv));
            running.push(
                (0..ni)
                    .map(|i| m.running(i, 0, t, x, u, v))
                    .collect::<Vec<f64>>(),
            );
            let next = tree.successors(k, x, u, v);
            let tables: Vec<Vec<f64>> = next
                .iter()
                .map(|y| one_sided_node(tree, grid, k + 1, y, memo, violation))
                .collect();
            let ev: Vec<f64> = (0..grid.len())
                .map(|a| tables.iter().map(|tb| tb[a]).sum::<f64>() / tables.len() as f64)
                .collect();
            cont.push(ev);
        }
    }
    let stage: Vec<f64> = (0..grid.len())
        .map(|a| {
            let p = grid.point(a);
            min_max(nu, nv, |ku, kv| {
                let c = ku * nv + kv;
                tree.h * (0..ni).map(|i| p[i] * running[c][i]).sum::<f64>() + cont[c][a]
            })
            .0
        })
        .collect();
    let value = vex_p(grid, &stage);
    *violation = violation.max(grid.discrete_convexity_violation(&value));
    memo.insert(key(k, x), value.clone());
    value
}
