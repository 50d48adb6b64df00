//! Sampled tests of the dual sub/supersolution inequalities on a solved
//! stack of value slices.
//!
//! For a probe `(t, x, p̂, q̄)` the convex conjugate `w*(·, ·, p̂, q̄)` is
//! tabulated over the `(t, x)` grid, its jet `(ξ_t, ξ_x, X)` is taken by
//! central differences, and
//! `ξ_t - H(t, x, -ξ_x, -X, p, q̄)` is evaluated for every maximizer `p` of
//! the conjugate. Supersolutions keep this nonnegative; the mirrored test on
//! the concave conjugate `w♯` keeps it nonpositive for subsolutions. `H` is
//! [`value_hamiltonian`].

use crate::error::{GameError, Result};
use crate::hamiltonian::{value_hamiltonian, HamiltonianQuery};
use crate::model::{GameModel, Matrix};
use crate::solver::{ProductGrids, Solution};
use crate::transform::{concave_conjugate_q, conjugate_p, facet_slopes, upper_facet_slopes};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;

/// Default probe budget per side.
pub const MAX_PROBES: usize = 10_000;

/// Finite-difference first/second derivatives of a tabulated function.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteJet {
    pub t_index: usize,
    pub x_index: usize,
    pub xi_t: f64,
    pub xi_x: Vec<f64>,
    pub hess: Matrix,
}

/// One sampled point: time slice, state node, dual vector, and the grid
/// index of the fixed belief of the other player (`q̄` for supersolution
/// probes, `p̄` for subsolution probes).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Probe {
    pub t_index: usize,
    pub x_index: usize,
    pub dual: Vec<f64>,
    pub fixed: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ProbeSet {
    pub supersolution: Vec<Probe>,
    pub subsolution: Vec<Probe>,
}

/// Central-difference jet of `table[k][ix]` (slice `k`, state node `ix`).
/// Needs an interior time index and an interior state node.
pub fn jet(
    grids: &ProductGrids,
    times: &[f64],
    table: &[Vec<f64>],
    k: usize,
    ix: usize,
) -> Result<DiscreteJet> {
    let state = &grids.state;
    let n = state.dim();
    if k == 0 || k + 1 >= times.len() {
        return Err(GameError::invalid(
            "jet needs neighbouring time slices on both sides",
        ));
    }
    let m = state.multi_index(ix);
    if (0..n).any(|d| m[d] == 0 || m[d] + 1 == state.counts()[d]) {
        return Err(GameError::invalid("jet needs an interior state node"));
    }
    let xi_t = (table[k - 1][ix] - table[k + 1][ix]) / (times[k - 1] - times[k + 1]);
    let w0 = table[k][ix];
    let row = &table[k];
    let mut xi_x = vec![0.0; n];
    let mut hess = Matrix::zeros(n, n);
    for (d, xd) in xi_x.iter_mut().enumerate() {
        let (s, h) = (state.stride(d), state.spacing()[d]);
        *xd = (row[ix + s] - row[ix - s]) / (2.0 * h);
        hess.set(d, d, (row[ix + s] - 2.0 * w0 + row[ix - s]) / (h * h));
    }
    if n == 2 {
        let (s0, s1) = (state.stride(0), state.stride(1));
        let h = 4.0 * state.spacing()[0] * state.spacing()[1];
        let mixed =
            (row[ix + s0 + s1] - row[ix + s0 - s1] - row[ix - s0 + s1] + row[ix - s0 - s1]) / h;
        hess.set(0, 1, mixed);
        hess.set(1, 0, mixed);
    }
    Ok(DiscreteJet {
        t_index: k,
        x_index: ix,
        xi_t,
        xi_x,
        hess,
    })
}

fn times(sol: &Solution) -> Vec<f64> {
    sol.slices.iter().map(|s| s.t).collect()
}

fn check_stack(sol: &Solution) -> Result<()> {
    if sol.slices.len() < 3 {
        return Err(GameError::invalid(
            "dual check needs at least 3 time slices",
        ));
    }
    Ok(())
}

/// Conjugate table over `(t, x)` plus the extremizer indices at each entry.
struct ConjugateTable {
    values: Vec<Vec<f64>>,
    extremizers: Vec<Vec<Vec<usize>>>,
}

fn convex_table(sol: &Solution, p_hat: &[f64], iq: usize) -> ConjugateTable {
    let g = &sol.grids;
    let (np, nq) = (g.p.len(), g.q.len());
    let mut values = Vec::with_capacity(sol.slices.len());
    let mut extremizers = Vec::with_capacity(sol.slices.len());
    for slice in &sol.slices {
        let mut vrow = Vec::with_capacity(g.state.len());
        let mut erow = Vec::with_capacity(g.state.len());
        for ix in 0..g.state.len() {
            let base = ix * np * nq;
            let w: Vec<f64> = (0..np)
                .map(|ip| slice.values[base + ip * nq + iq])
                .collect();
            let (val, set) = conjugate_p(&g.p, &w, p_hat);
            vrow.push(val);
            erow.push(set.indices);
        }
        values.push(vrow);
        extremizers.push(erow);
    }
    ConjugateTable {
        values,
        extremizers,
    }
}

fn concave_table(sol: &Solution, q_hat: &[f64], ip: usize) -> ConjugateTable {
    let g = &sol.grids;
    let (np, nq) = (g.p.len(), g.q.len());
    let mut values = Vec::with_capacity(sol.slices.len());
    let mut extremizers = Vec::with_capacity(sol.slices.len());
    for slice in &sol.slices {
        let mut vrow = Vec::with_capacity(g.state.len());
        let mut erow = Vec::with_capacity(g.state.len());
        for ix in 0..g.state.len() {
            let base = ix * np * nq + ip * nq;
            let (val, set) = concave_conjugate_q(&g.q, &slice.values[base..base + nq], q_hat);
            vrow.push(val);
            erow.push(set.indices);
        }
        values.push(vrow);
        extremizers.push(erow);
    }
    ConjugateTable {
        values,
        extremizers,
    }
}

fn primal_table(sol: &Solution, ip: usize, iq: usize) -> Vec<Vec<f64>> {
    let g = &sol.grids;
    sol.slices
        .iter()
        .map(|s| {
            (0..g.state.len())
                .map(|ix| s.values[g.index(ix, ip, iq)])
                .collect()
        })
        .collect()
}

fn hamiltonian_at(
    model: &GameModel,
    sol: &Solution,
    jet: &DiscreteJet,
    sign: f64,
    p: &[f64],
    q: &[f64],
) -> f64 {
    let t = sol.slices[jet.t_index].t;
    let x = sol.grids.state.coord(jet.x_index);
    let xi: Vec<f64> = jet.xi_x.iter().map(|v| sign * v).collect();
    let mut a = jet.hess.clone();
    a.data.iter_mut().for_each(|v| *v *= sign);
    value_hamiltonian(
        model,
        &HamiltonianQuery::new(t, x, xi, a, p.to_vec(), q.to_vec()),
    )
}

type GroupKey = (Vec<u64>, usize);

fn group(probes: &[Probe]) -> BTreeMap<GroupKey, Vec<&Probe>> {
    let mut map: BTreeMap<GroupKey, Vec<&Probe>> = BTreeMap::new();
    for pr in probes {
        let key = (pr.dual.iter().map(|v| v.to_bits()).collect(), pr.fixed);
        map.entry(key).or_default().push(pr);
    }
    map
}

/// Per-probe outcome on one side, with the primal residual of the
/// primal characterization for each extremizer.
#[derive(Clone, Debug)]
struct ProbeOutcome {
    dual: Vec<f64>,
    primal: Vec<f64>,
}

fn evaluate_super(
    model: &GameModel,
    sol: &Solution,
    probes: &[Probe],
    primal: bool,
) -> Result<Vec<ProbeOutcome>> {
    check_stack(sol)?;
    let ts = times(sol);
    let groups: Vec<(GroupKey, Vec<&Probe>)> = group(probes).into_iter().collect();
    let results: Result<Vec<Vec<ProbeOutcome>>> = groups
        .par_iter()
        .map(|(_, members)| {
            let (p_hat, iq) = (&members[0].dual, members[0].fixed);
            let table = convex_table(sol, p_hat, iq);
            let q = sol.grids.q.point(iq);
            let mut out = Vec::with_capacity(members.len());
            let mut primal_cache: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
            for pr in members {
                let j = jet(&sol.grids, &ts, &table.values, pr.t_index, pr.x_index)?;
                let mut o = ProbeOutcome {
                    dual: Vec::new(),
                    primal: Vec::new(),
                };
                for &ip in &table.extremizers[pr.t_index][pr.x_index] {
                    let p = sol.grids.p.point(ip);
                    o.dual
                        .push(j.xi_t - hamiltonian_at(model, sol, &j, -1.0, p, q));
                    if primal {
                        let tab = primal_cache
                            .entry(ip)
                            .or_insert_with(|| primal_table(sol, ip, iq));
                        let pj = jet(&sol.grids, &ts, tab, pr.t_index, pr.x_index)?;
                        o.primal
                            .push(-(pj.xi_t + hamiltonian_at(model, sol, &pj, 1.0, p, q)));
                    }
                }
                out.push(o);
            }
            Ok(out)
        })
        .collect();
    Ok(results?.into_iter().flatten().collect())
}

fn evaluate_sub(
    model: &GameModel,
    sol: &Solution,
    probes: &[Probe],
    primal: bool,
) -> Result<Vec<ProbeOutcome>> {
    check_stack(sol)?;
    let ts = times(sol);
    let groups: Vec<(GroupKey, Vec<&Probe>)> = group(probes).into_iter().collect();
    let results: Result<Vec<Vec<ProbeOutcome>>> = groups
        .par_iter()
        .map(|(_, members)| {
            let (q_hat, ip) = (&members[0].dual, members[0].fixed);
            let table = concave_table(sol, q_hat, ip);
            let p = sol.grids.p.point(ip);
            let mut out = Vec::with_capacity(members.len());
            let mut primal_cache: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
            for pr in members {
                let j = jet(&sol.grids, &ts, &table.values, pr.t_index, pr.x_index)?;
                let mut o = ProbeOutcome {
                    dual: Vec::new(),
                    primal: Vec::new(),
                };
                for &iq in &table.extremizers[pr.t_index][pr.x_index] {
                    let q = sol.grids.q.point(iq);
                    o.dual
                        .push(j.xi_t - hamiltonian_at(model, sol, &j, -1.0, p, q));
                    if primal {
                        let tab = primal_cache
                            .entry(iq)
                            .or_insert_with(|| primal_table(sol, ip, iq));
                        let pj = jet(&sol.grids, &ts, tab, pr.t_index, pr.x_index)?;
                        o.primal
                            .push(-(pj.xi_t + hamiltonian_at(model, sol, &pj, 1.0, p, q)));
                    }
                }
                out.push(o);
            }
            Ok(out)
        })
        .collect();
    Ok(results?.into_iter().flatten().collect())
}

/// Most negative `ξ_t - H(t, x, -ξ_x, -X, p, q̄)` over the probes and the
/// maximizers `p` of `w*`; `+∞` for an empty probe list.
pub fn supersolution_residual(model: &GameModel, sol: &Solution, probes: &[Probe]) -> Result<f64> {
    Ok(evaluate_super(model, sol, probes, false)?
        .iter()
        .flat_map(|o| o.dual.iter().copied())
        .fold(f64::INFINITY, f64::min))
}

/// Most positive `ξ_t - H(t, x, -ξ_x, -X, p̄, q)` over the probes and the
/// minimizers `q` of `w♯`; `-∞` for an empty probe list.
pub fn subsolution_residual(model: &GameModel, sol: &Solution, probes: &[Probe]) -> Result<f64> {
    Ok(evaluate_sub(model, sol, probes, false)?
        .iter()
        .flat_map(|o| o.dual.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Agreement between the conjugate-side tests and the primal-side tests of
/// the equivalent characterization, at the extremizers of every probe.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrosscheckReport {
    pub tolerance: f64,
    pub comparisons: usize,
    pub disagreements: usize,
    pub min_dual_super: f64,
    pub min_primal_super: f64,
    pub max_dual_sub: f64,
    pub max_primal_sub: f64,
}

/// Compares pass/fail of the conjugate-side residual with the primal test
/// `-(φ_t + H(t, x, Dφ, D²φ, p̄, q̄))` (sign-mirrored for subsolutions), where
/// `φ` is the local quadratic fit of `w(·, ·, p̄, q̄)` at the probe.
pub fn caracterization_crosscheck(
    model: &GameModel,
    sol: &Solution,
    probes: &ProbeSet,
    tol: f64,
) -> Result<CrosscheckReport> {
    let sup = evaluate_super(model, sol, &probes.supersolution, true)?;
    let sub = evaluate_sub(model, sol, &probes.subsolution, true)?;
    let mut rep = CrosscheckReport {
        tolerance: tol,
        comparisons: 0,
        disagreements: 0,
        min_dual_super: f64::INFINITY,
        min_primal_super: f64::INFINITY,
        max_dual_sub: f64::NEG_INFINITY,
        max_primal_sub: f64::NEG_INFINITY,
    };
    for o in &sup {
        for (d, p) in o.dual.iter().zip(&o.primal) {
            rep.comparisons += 1;
            rep.min_dual_super = rep.min_dual_super.min(*d);
            rep.min_primal_super = rep.min_primal_super.min(*p);
            if (*d >= -tol) != (*p >= -tol) {
                rep.disagreements += 1;
            }
        }
    }
    for o in &sub {
        for (d, p) in o.dual.iter().zip(&o.primal) {
            rep.comparisons += 1;
            rep.max_dual_sub = rep.max_dual_sub.max(*d);
            rep.max_primal_sub = rep.max_primal_sub.max(*p);
            if (*d <= tol) != (*p <= tol) {
                rep.disagreements += 1;
            }
        }
    }
    Ok(rep)
}

fn dedupe(mut v: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    for s in v.drain(..) {
        if !out
            .iter()
            .any(|o| o.iter().zip(&s).all(|(a, b)| (a - b).abs() <= 1e-12))
        {
            out.push(s);
        }
    }
    out
}

/// Interior `(t, x)` node pairs.
fn interior_nodes(sol: &Solution) -> Vec<(usize, usize)> {
    let st = &sol.grids.state;
    let interior: Vec<usize> = (0..st.len())
        .filter(|&ix| {
            let m = st.multi_index(ix);
            (0..st.dim()).all(|d| m[d] > 0 && m[d] + 1 < st.counts()[d])
        })
        .collect();
    (1..sol.slices.len().saturating_sub(1))
        .flat_map(|k| interior.iter().map(move |&ix| (k, ix)))
        .collect()
}

fn stratify(mut probes: Vec<Probe>, cap: usize) -> Vec<Probe> {
    if probes.len() <= cap {
        return probes;
    }
    let stride = probes.len().div_ceil(cap);
    probes.drain(..).step_by(stride).collect()
}

/// Facet slopes of the `p` (resp. `q`) slices at the middle slice and state
/// node, times every fixed belief node, times every interior `(t, x)` node,
/// subsampled with a uniform stride down to `cap` probes per side.
pub fn default_probes(sol: &Solution, cap: usize) -> ProbeSet {
    let g = &sol.grids;
    let (np, nq) = (g.p.len(), g.q.len());
    let mid = &sol.slices[sol.slices.len() / 2];
    let ix_mid = g.state.len() / 2;
    let nodes = interior_nodes(sol);
    let mut sup = Vec::new();
    for iq in 0..nq {
        let slice: Vec<f64> = (0..np)
            .map(|ip| mid.values[g.index(ix_mid, ip, iq)])
            .collect();
        let slopes = if np == 1 {
            vec![vec![0.0]]
        } else {
            dedupe(facet_slopes(&g.p, &slice))
        };
        for s in &slopes {
            for &(k, ix) in &nodes {
                sup.push(Probe {
                    t_index: k,
                    x_index: ix,
                    dual: s.clone(),
                    fixed: iq,
                });
            }
        }
    }
    let mut sub = Vec::new();
    for ip in 0..np {
        let base = g.index(ix_mid, ip, 0);
        let slice = &mid.values[base..base + nq];
        let slopes = if nq == 1 {
            vec![vec![0.0]]
        } else {
            dedupe(upper_facet_slopes(&g.q, slice))
        };
        for s in &slopes {
            for &(k, ix) in &nodes {
                sub.push(Probe {
                    t_index: k,
                    x_index: ix,
                    dual: s.clone(),
                    fixed: ip,
                });
            }
        }
    }
    ProbeSet {
        supersolution: stratify(sup, cap),
        subsolution: stratify(sub, cap),
    }
}

/// `max(1e-8, 10·(Δx + Δt)·L)` with `Δx` the largest spacing.
pub fn default_tolerance(model: &GameModel, sol: &Solution) -> f64 {
    let dx = sol
        .grids
        .state
        .spacing()
        .iter()
        .copied()
        .fold(0.0, f64::max);
    let dt = sol.diagnostics.dt;
    (10.0 * (dx + dt) * model.lipschitz_bound()).max(1e-8)
}

/// Everything the `check` subcommand reports.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DualCheckReport {
    pub supersolution_residual: f64,
    pub subsolution_residual: f64,
    pub crosscheck_disagreements: usize,
    pub tolerance: f64,
    pub supersolution_probes: usize,
    pub subsolution_probes: usize,
    pub crosscheck: CrosscheckReport,
}

impl DualCheckReport {
    pub fn passed(&self) -> bool {
        self.supersolution_residual >= -self.tolerance
            && self.subsolution_residual <= self.tolerance
            && self.crosscheck_disagreements == 0
    }
}

/// Runs both residuals and the crosscheck on the default probe set.
pub fn run_dualcheck(
    model: &GameModel,
    sol: &Solution,
    tol: Option<f64>,
) -> Result<DualCheckReport> {
    let probes = default_probes(sol, MAX_PROBES);
    let tol = tol.unwrap_or_else(|| default_tolerance(model, sol));
    let cross = caracterization_crosscheck(model, sol, &probes, tol)?;
    Ok(DualCheckReport {
        supersolution_residual: cross.min_dual_super,
        subsolution_residual: cross.max_dual_sub,
        crosscheck_disagreements: cross.disagreements,
        tolerance: tol,
        supersolution_probes: probes.supersolution.len(),
        subsolution_probes: probes.subsolution.len(),
        crosscheck: cross,
    })
}
