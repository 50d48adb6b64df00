//! Explicit monotone finite-difference scheme for the backward value equation
//! on the `(x, p, q)` product grid, with the convexify-in-`p` /
//! concavify-in-`q` projection after every step.
//!
//! One step from `t + Δt` to `t` reads `w(t) = w(t + Δt) + Δt · H_num`, where
//! `H_num` is the minimax over control pairs of
//! `<b, Dw> + ½ Tr(σσᵀ D²w) + Σ ℓ_ij p_i q_j` plus Lax-Friedrichs dissipation
//! `Σ_d θ_d (w₊ - 2w + w₋) / (2Δx_d)` with `θ_d` the declared drift bound.
//! Mixed second derivatives use the seven-point stencil matching the sign of
//! the off-diagonal diffusion entry. On a boundary face the drift uses the
//! inward one-sided difference restricted to inflow, and the normal second
//! difference and dissipation vanish (linear extrapolation of the ghost
//! node). Under the CFL bound every node update is a nondecreasing function of
//! the previous slice.

use crate::error::{GameError, Result};
use crate::hamiltonian::{certify_isaacs, min_max, IsaacsReport};
use crate::model::GameModel;
use crate::simplex::SimplexGrid;
use crate::transform::{cav_q, vex_p};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Convexity/concavity tolerance after projection.
pub const PROJECTION_TOL: f64 = 1e-10;
/// Isaacs gap accepted by [`solve`].
pub const ISAACS_TOL: f64 = 1e-10;
/// CFL safety factor.
pub const C_CFL: f64 = 0.5;
const MAX_ALTERNATIONS: usize = 100;
const ISAACS_SAMPLES: usize = 1000;
const ISAACS_SEED: u64 = 0x1ab5;

/// Uniform tensor grid on a box.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StateGrid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    counts: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    boundary: &'static str,
}

impl StateGrid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        let dim = lo.len();
        if dim == 0 || hi.len() != dim || counts.len() != dim {
            return Err(GameError::invalid(
                "state grid bounds and counts must share one positive dimension",
            ));
        }
        if counts.iter().any(|&c| c < 3) {
            return Err(GameError::invalid(
                "state grid needs at least 3 nodes per dimension",
            ));
        }
        if lo
            .iter()
            .zip(&hi)
            .any(|(a, b)| !(a.is_finite() && b.is_finite() && a < b))
        {
            return Err(GameError::invalid(
                "state grid bounds must be finite with lo < hi",
            ));
        }
        let spacing = (0..dim)
            .map(|d| (hi[d] - lo[d]) / (counts[d] - 1) as f64)
            .collect();
        let mut strides = vec![1; dim];
        for d in (0..dim.saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * counts[d + 1];
        }
        Ok(StateGrid {
            lo,
            hi,
            counts,
            spacing,
            strides,
            boundary: "one-sided-inflow",
        })
    }

    /// `n` nodes per dimension on `[lo, hi]^dim`.
    pub fn uniform(dim: usize, lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim], vec![n; dim])
    }

    /// Spacing as close to `dx` as possible with `hi` hit exactly.
    pub fn with_spacing(dim: usize, lo: f64, hi: f64, dx: f64) -> Result<Self> {
        if !(dx.is_finite() && dx > 0.0) {
            return Err(GameError::invalid("dx must be positive"));
        }
        let cells = ((hi - lo) / dx).round().max(2.0) as usize;
        Self::uniform(dim, lo, hi, cells + 1)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn boundary_policy(&self) -> &str {
        self.boundary
    }

    pub fn stride(&self, d: usize) -> usize {
        self.strides[d]
    }

    pub fn multi_index(&self, idx: usize) -> Vec<usize> {
        (0..self.dim())
            .map(|d| (idx / self.strides[d]) % self.counts[d])
            .collect()
    }

    pub fn coord(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .iter()
            .enumerate()
            .map(|(d, &k)| self.lo[d] + k as f64 * self.spacing[d])
            .collect()
    }

    /// Distance from the node to the nearest face of the box.
    pub fn distance_to_boundary(&self, idx: usize) -> f64 {
        let m = self.multi_index(idx);
        (0..self.dim())
            .map(|d| (m[d].min(self.counts[d] - 1 - m[d])) as f64 * self.spacing[d])
            .fold(f64::INFINITY, f64::min)
    }

    /// Nodes at distance at least `margin` from the boundary.
    pub fn core_indices(&self, margin: f64) -> Vec<usize> {
        (0..self.len())
            .filter(|&k| self.distance_to_boundary(k) >= margin - 1e-12)
            .collect()
    }

    /// Nearest node to `x` (clamped to the box).
    pub fn nearest(&self, x: &[f64]) -> usize {
        (0..self.dim())
            .map(|d| {
                let k = ((x[d] - self.lo[d]) / self.spacing[d]).round();
                k.clamp(0.0, (self.counts[d] - 1) as f64) as usize * self.strides[d]
            })
            .sum()
    }
}

/// State grid times the two belief lattices. Values are stored with `q`
/// fastest, then `p`, then the state node.
#[derive(Clone, Debug)]
pub struct ProductGrids {
    pub state: StateGrid,
    pub p: SimplexGrid,
    pub q: SimplexGrid,
}

impl ProductGrids {
    pub fn new(state: StateGrid, p: SimplexGrid, q: SimplexGrid) -> Self {
        ProductGrids { state, p, q }
    }

    /// Grids for `model` with simplex resolutions `np`, `nq`.
    pub fn for_model(model: &GameModel, state: StateGrid, np: usize, nq: usize) -> Result<Self> {
        if state.dim() != model.state_dim() {
            return Err(GameError::invalid(
                "state grid dimension does not match the model",
            ));
        }
        let np = if model.i_count() == 1 { 1 } else { np };
        let nq = if model.j_count() == 1 { 1 } else { nq };
        Ok(ProductGrids {
            state,
            p: SimplexGrid::new(model.i_count(), np)?,
            q: SimplexGrid::new(model.j_count(), nq)?,
        })
    }

    pub fn len(&self) -> usize {
        self.state.len() * self.block_len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of `(p, q)` nodes per state node.
    pub fn block_len(&self) -> usize {
        self.p.len() * self.q.len()
    }

    #[inline]
    pub fn index(&self, ix: usize, ip: usize, iq: usize) -> usize {
        (ix * self.p.len() + ip) * self.q.len() + iq
    }

    fn check(&self, model: &GameModel) -> Result<()> {
        if self.state.dim() != model.state_dim()
            || self.p.dim() != model.i_count()
            || self.q.dim() != model.j_count()
        {
            return Err(GameError::invalid(
                "grids do not match the model dimensions",
            ));
        }
        Ok(())
    }
}

/// One time slice of the value on the product grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueField {
    pub t: f64,
    pub values: Vec<f64>,
    /// Largest discrete convexity violation in `p` over `(x, q)` slices.
    pub convexity_violation: f64,
    /// Largest discrete concavity violation in `q` over `(x, p)` slices.
    pub concavity_violation: f64,
    /// Commutation residual of the envelopes, when projected.
    pub projection_residual: Option<f64>,
}

impl ValueField {
    pub fn get(&self, grids: &ProductGrids, ix: usize, ip: usize, iq: usize) -> f64 {
        self.values[grids.index(ix, ip, iq)]
    }

    /// Wraps raw values and computes their convexity certificates.
    pub fn with_certificates(
        t: f64,
        values: Vec<f64>,
        grids: &ProductGrids,
        residual: Option<f64>,
    ) -> Self {
        let (conv, conc) = certificates(grids, &values);
        ValueField {
            t,
            values,
            convexity_violation: conv,
            concavity_violation: conc,
            projection_residual: residual,
        }
    }
}

fn p_slice(grids: &ProductGrids, block: &[f64], iq: usize) -> Vec<f64> {
    (0..grids.p.len())
        .map(|ip| block[ip * grids.q.len() + iq])
        .collect()
}

fn block_certificates(grids: &ProductGrids, block: &[f64]) -> (f64, f64) {
    let nq = grids.q.len();
    let conv = (0..nq)
        .map(|iq| {
            grids
                .p
                .discrete_convexity_violation(&p_slice(grids, block, iq))
        })
        .fold(0.0, f64::max);
    let conc = block
        .chunks(nq)
        .map(|s| grids.q.discrete_concavity_violation(s))
        .fold(0.0, f64::max);
    (conv, conc)
}

/// Largest convexity violation in `p` and concavity violation in `q`.
pub fn certificates(grids: &ProductGrids, values: &[f64]) -> (f64, f64) {
    values
        .par_chunks(grids.block_len())
        .map(|b| block_certificates(grids, b))
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)))
}

/// `w(T, x, p, q) = Σ_ij p_i q_j g_ij(x)` at every node.
pub fn terminal_field(model: &GameModel, grids: &ProductGrids) -> ValueField {
    let (ni, nj) = (model.i_count(), model.j_count());
    let mut values = vec![0.0; grids.len()];
    values
        .par_chunks_mut(grids.block_len())
        .enumerate()
        .for_each(|(ix, block)| {
            let x = grids.state.coord(ix);
            let g: Vec<f64> = (0..ni)
                .flat_map(|i| (0..nj).map(move |j| (i, j)))
                .map(|(i, j)| model.terminal(i, j, &x))
                .collect();
            for (ip, p) in grids.p.points().iter().enumerate() {
                for (iq, q) in grids.q.points().iter().enumerate() {
                    let mut s = 0.0;
                    for i in 0..ni {
                        for j in 0..nj {
                            s += p[i] * q[j] * g[i * nj + j];
                        }
                    }
                    block[ip * grids.q.len() + iq] = s;
                }
            }
        });
    ValueField::with_certificates(model.horizon(), values, grids, None)
}

/// Largest stable step: `Δt ≤ c_cfl · min(Δx²/(n σ_max²), 1/Σ_d(θ_d/Δx_d))`.
pub fn cfl_limit(model: &GameModel, state: &StateGrid) -> f64 {
    let n = state.dim() as f64;
    let dx_min = state
        .spacing()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let s2 = model.diffusion_bound().powi(2);
    let diff = if s2 > 0.0 {
        dx_min * dx_min / (n * s2)
    } else {
        f64::INFINITY
    };
    let adv_rate: f64 = model
        .drift_bound()
        .iter()
        .zip(state.spacing())
        .map(|(b, dx)| b / dx)
        .sum();
    let adv = if adv_rate > 0.0 {
        1.0 / adv_rate
    } else {
        f64::INFINITY
    };
    C_CFL * diff.min(adv)
}

fn check_cfl(model: &GameModel, state: &StateGrid, dt: f64) -> Result<f64> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(GameError::config("time step must be positive"));
    }
    let limit = cfl_limit(model, state);
    if dt > limit * (1.0 + 1e-12) {
        return Err(GameError::Cfl {
            dt,
            limit,
            cfl: dt / limit * C_CFL,
        });
    }
    Ok(dt / limit * C_CFL)
}

/// Per-state-node coefficient table over all control pairs `k = ku·|V| + kv`.
struct PairTable {
    ij: usize,
    drift: Vec<f64>,
    cov: Vec<f64>,
    run: Vec<f64>,
}

impl PairTable {
    fn build(model: &GameModel, t: f64, x: &[f64]) -> Self {
        let n = model.state_dim();
        let (ni, nj) = (model.i_count(), model.j_count());
        let pairs = model.u_set().len() * model.v_set().len();
        let has_run = model.has_running_cost();
        let mut tab = PairTable {
            ij: ni * nj,
            drift: vec![0.0; pairs * n],
            cov: vec![0.0; pairs * n * n],
            run: vec![0.0; if has_run { pairs * ni * nj } else { 0 }],
        };
        let mut k = 0;
        for u in model.u_set().values() {
            for v in model.v_set().values() {
                model.drift_into(t, x, u, v, &mut tab.drift[k * n..(k + 1) * n]);
                tab.cov[k * n * n..(k + 1) * n * n]
                    .copy_from_slice(&model.covariance(t, x, u, v).data);
                if has_run {
                    for i in 0..ni {
                        for j in 0..nj {
                            tab.run[k * ni * nj + i * nj + j] = model.running(i, j, t, x, u, v);
                        }
                    }
                }
                k += 1;
            }
        }
        tab
    }
}

/// Monotonicity of the seven-point mixed stencil needs a weakly diagonally
/// dominant diffusion relative to the grid.
fn check_mixed_stencil(model: &GameModel, state: &StateGrid) -> Result<()> {
    if state.dim() != 2 {
        return Ok(());
    }
    let (h1, h2) = (state.spacing()[0], state.spacing()[1]);
    let x = vec![0.0; 2];
    for u in model.u_set().values() {
        for v in model.v_set().values() {
            let a = model.covariance(0.0, &x, u, v);
            let off = a.get(0, 1).abs() / (h1 * h2);
            let tol = 1e-12 * (1.0 + a.get(0, 0).abs() + a.get(1, 1).abs()) / (h1 * h2);
            if a.get(0, 0) / (h1 * h1) + tol < off || a.get(1, 1) / (h2 * h2) + tol < off {
                return Err(GameError::config("diffusion is not diagonally dominant on this grid; mixed stencil would not be monotone"));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum Side {
    Interior,
    Low,
    High,
}

/// Fills one state node's `(p, q)` block of the updated slice and returns the
/// largest absolute update.
#[allow(clippy::too_many_arguments)]
fn step_block(
    model: &GameModel,
    grids: &ProductGrids,
    w: &[f64],
    ix: usize,
    t: f64,
    dt: f64,
    out: &mut [f64],
) -> f64 {
    let state = &grids.state;
    let n = state.dim();
    let x = state.coord(ix);
    let m = state.multi_index(ix);
    let tab = PairTable::build(model, t, &x);
    let blen = grids.block_len();
    let nq = grids.q.len();
    let (nu, nv) = (model.u_set().len(), model.v_set().len());
    let theta = model.drift_bound();
    let sides: Vec<Side> = (0..n)
        .map(|d| {
            if m[d] == 0 {
                Side::Low
            } else if m[d] == state.counts()[d] - 1 {
                Side::High
            } else {
                Side::Interior
            }
        })
        .collect();
    let interior_all = sides.iter().all(|s| matches!(s, Side::Interior));
    let base = ix * blen;
    let at = |node: usize, off: usize| w[node * blen + off];

    let mut grad = vec![0.0; n];
    let mut second = vec![0.0; n];
    let mut pqw = vec![0.0; tab.ij];
    let mut max_update = 0.0f64;
    for (ip, p) in grids.p.points().iter().enumerate() {
        for (iq, q) in grids.q.points().iter().enumerate() {
            let off = ip * nq + iq;
            let w0 = w[base + off];
            let mut dissipation = 0.0;
            for d in 0..n {
                let h = state.spacing()[d];
                let s = state.stride(d);
                match sides[d] {
                    Side::Interior => {
                        let (wp, wm) = (at(ix + s, off), at(ix - s, off));
                        grad[d] = (wp - wm) / (2.0 * h);
                        let lap = wp - 2.0 * w0 + wm;
                        second[d] = lap / (h * h);
                        dissipation += theta[d] * lap / (2.0 * h);
                    }
                    Side::Low => {
                        grad[d] = (at(ix + s, off) - w0) / h;
                        second[d] = 0.0;
                    }
                    Side::High => {
                        grad[d] = (w0 - at(ix - s, off)) / h;
                        second[d] = 0.0;
                    }
                }
            }
            let (mixed_pos, mixed_neg) = if n == 2 && interior_all {
                let (s0, s1) = (state.stride(0), state.stride(1));
                let h = 2.0 * state.spacing()[0] * state.spacing()[1];
                let e = |node: usize| at(node, off);
                let pos = (e(ix + s0 + s1) - e(ix + s0) - e(ix + s1) + 2.0 * w0
                    - e(ix - s0)
                    - e(ix - s1)
                    + e(ix - s0 - s1))
                    / h;
                let neg = -(e(ix + s0 - s1) - e(ix + s0) - e(ix - s1) + 2.0 * w0
                    - e(ix - s0)
                    - e(ix + s1)
                    + e(ix - s0 + s1))
                    / h;
                (pos, neg)
            } else {
                (0.0, 0.0)
            };
            if !tab.run.is_empty() {
                let nj = q.len();
                for (i, pi) in p.iter().enumerate() {
                    for (j, qj) in q.iter().enumerate() {
                        pqw[i * nj + j] = pi * qj;
                    }
                }
            }
            let integrand = |ku: usize, kv: usize| {
                let k = ku * nv + kv;
                let b = &tab.drift[k * n..(k + 1) * n];
                let a = &tab.cov[k * n * n..(k + 1) * n * n];
                let mut val = 0.0;
                for d in 0..n {
                    let bd = match sides[d] {
                        Side::Interior => b[d],
                        Side::Low => b[d].max(0.0),
                        Side::High => b[d].min(0.0),
                    };
                    val += bd * grad[d] + 0.5 * a[d * n + d] * second[d];
                }
                if n == 2 {
                    let a01 = a[1];
                    val += a01 * if a01 >= 0.0 { mixed_pos } else { mixed_neg };
                }
                if !tab.run.is_empty() {
                    let r = &tab.run[k * tab.ij..(k + 1) * tab.ij];
                    let mut s = 0.0;
                    for (wgt, l) in pqw.iter().zip(r) {
                        s += wgt * l;
                    }
                    val += s;
                }
                val
            };
            let (h_val, _) = min_max(nu, nv, integrand);
            let upd = dt * (h_val + dissipation);
            out[off] = w0 + upd;
            max_update = max_update.max(upd.abs());
        }
    }
    max_update
}

fn first_non_finite(values: &[f64], t: f64) -> Result<()> {
    if let Some((k, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(GameError::NonFinite {
            value: *v,
            location: format!("node {k} at t = {t}"),
        });
    }
    Ok(())
}

/// One explicit backward step from `w_next` (at `w_next.t`) to `w_next.t - dt`.
/// The result is not projected.
pub fn hjb_step(
    model: &GameModel,
    grids: &ProductGrids,
    w_next: &ValueField,
    dt: f64,
) -> Result<ValueField> {
    grids.check(model)?;
    check_cfl(model, &grids.state, dt)?;
    check_mixed_stencil(model, &grids.state)?;
    let (field, _) = raw_step(model, grids, w_next, dt, w_next.t - dt);
    first_non_finite(&field.values, field.t)?;
    Ok(field)
}

fn raw_step(
    model: &GameModel,
    grids: &ProductGrids,
    w_next: &ValueField,
    dt: f64,
    t: f64,
) -> (ValueField, f64) {
    let mut out = vec![0.0; grids.len()];
    let max_update = out
        .par_chunks_mut(grids.block_len())
        .enumerate()
        .map(|(ix, block)| step_block(model, grids, &w_next.values, ix, t, dt, block))
        .reduce(|| 0.0, f64::max);
    (
        ValueField {
            t,
            values: out,
            convexity_violation: 0.0,
            concavity_violation: 0.0,
            projection_residual: None,
        },
        max_update,
    )
}

fn apply_vex(grids: &ProductGrids, block: &mut [f64]) {
    if grids.p.len() == 1 {
        return;
    }
    let nq = grids.q.len();
    for iq in 0..nq {
        let v = vex_p(&grids.p, &p_slice(grids, block, iq));
        for (ip, val) in v.into_iter().enumerate() {
            block[ip * nq + iq] = val;
        }
    }
}

fn apply_cav(grids: &ProductGrids, block: &mut [f64]) {
    if grids.q.len() == 1 {
        return;
    }
    for slice in block.chunks_mut(grids.q.len()) {
        let c = cav_q(&grids.q, slice);
        slice.copy_from_slice(&c);
    }
}

/// Alternates `vex_p` and `cav_q` on one state node's block until both
/// certificates hold; returns the number of alternations.
fn project_block(grids: &ProductGrids, block: &mut [f64]) -> usize {
    for it in 1..=MAX_ALTERNATIONS {
        apply_vex(grids, block);
        apply_cav(grids, block);
        let (conv, conc) = block_certificates(grids, block);
        if conv <= PROJECTION_TOL && conc <= PROJECTION_TOL {
            return it;
        }
    }
    MAX_ALTERNATIONS
}

fn commutation_residual(grids: &ProductGrids, block: &[f64]) -> f64 {
    let mut a = block.to_vec();
    apply_cav(grids, &mut a);
    apply_vex(grids, &mut a);
    let mut b = block.to_vec();
    apply_vex(grids, &mut b);
    apply_cav(grids, &mut b);
    a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Outcome of one projection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProjectionReport {
    pub residual: f64,
    pub alternations: usize,
}

const RESIDUAL_SAMPLES: usize = 16;

/// `vex_p` on every `(x, q)` slice, then `cav_q` on every `(x, p)` slice,
/// repeated until both certificates hold. The commutation residual
/// `|vex(cav w) - cav(vex w)|` is measured on evenly spaced state nodes.
pub fn dual_project(grids: &ProductGrids, w: &ValueField) -> (ValueField, ProjectionReport) {
    let blen = grids.block_len();
    let nx = grids.state.len();
    let stride = nx.div_ceil(RESIDUAL_SAMPLES).max(1);
    let residual = (0..nx)
        .into_par_iter()
        .step_by(stride)
        .map(|ix| commutation_residual(grids, &w.values[ix * blen..(ix + 1) * blen]))
        .reduce(|| 0.0, f64::max);
    let mut values = w.values.clone();
    let alternations = values
        .par_chunks_mut(blen)
        .map(|b| project_block(grids, b))
        .reduce(|| 0, usize::max);
    let field = ValueField::with_certificates(w.t, values, grids, Some(residual));
    (
        field,
        ProjectionReport {
            residual,
            alternations,
        },
    )
}

/// Diagnostics of one backward step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub t: f64,
    pub max_update: f64,
    pub projection_residual: f64,
    pub alternations: usize,
    pub convexity_violation: f64,
    pub concavity_violation: f64,
}

/// Summary of a full solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub isaacs_gap: f64,
    pub isaacs_queries: usize,
    pub dt: f64,
    /// CFL bound on the step; `None` when the scheme has no explicit terms.
    pub dt_limit: Option<f64>,
    pub cfl_number: f64,
    pub steps: usize,
    pub max_projection_residual: f64,
    pub max_alternations: usize,
    pub max_convexity_violation: f64,
    pub max_concavity_violation: f64,
    pub per_step: Vec<StepDiagnostics>,
}

/// All time slices, ordered from `T` down to `t₀`.
#[derive(Clone, Debug)]
pub struct Solution {
    pub grids: ProductGrids,
    pub slices: Vec<ValueField>,
    pub diagnostics: SolveDiagnostics,
}

impl Solution {
    /// Slice whose time is closest to `t`.
    pub fn nearest_slice(&self, t: f64) -> &ValueField {
        self.slices
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
            .expect("solution has at least the terminal slice")
    }

    pub fn initial(&self) -> &ValueField {
        self.slices
            .last()
            .expect("solution has at least the terminal slice")
    }
}

/// Number of steps and the uniform step actually used on `[t0, T]`.
pub fn time_steps(horizon: f64, t0: f64, dt: f64) -> Result<(usize, f64)> {
    if !(t0.is_finite() && t0 >= 0.0 && t0 < horizon) {
        return Err(GameError::config(format!("t0 must lie in [0, {horizon})")));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(GameError::config("time step must be positive"));
    }
    let steps = ((horizon - t0) / dt - 1e-9).ceil().max(1.0) as usize;
    Ok((steps, (horizon - t0) / steps as f64))
}

fn run(
    model: &GameModel,
    grids: &ProductGrids,
    dt: f64,
    t0: f64,
    project: bool,
) -> Result<Solution> {
    grids.check(model)?;
    let isaacs: IsaacsReport = certify_isaacs(model, ISAACS_SAMPLES, ISAACS_SEED, ISAACS_TOL)?;
    let (steps, dt) = time_steps(model.horizon(), t0, dt)?;
    let cfl_number = check_cfl(model, &grids.state, dt)?;
    check_mixed_stencil(model, &grids.state)?;
    let terminal = terminal_field(model, grids);
    first_non_finite(&terminal.values, terminal.t)?;
    let mut diag = SolveDiagnostics {
        isaacs_gap: isaacs.max_gap,
        isaacs_queries: isaacs.queries,
        dt,
        dt_limit: Some(cfl_limit(model, &grids.state)).filter(|l| l.is_finite()),
        cfl_number,
        steps,
        max_projection_residual: 0.0,
        max_alternations: 0,
        max_convexity_violation: terminal.convexity_violation,
        max_concavity_violation: terminal.concavity_violation,
        per_step: Vec::with_capacity(steps),
    };
    let mut slices = Vec::with_capacity(steps + 1);
    slices.push(terminal);
    for k in 1..=steps {
        let t = if k == steps {
            t0
        } else {
            model.horizon() - k as f64 * dt
        };
        let prev = slices.last().expect("terminal slice present");
        let (raw, max_update) = raw_step(model, grids, prev, dt, t);
        first_non_finite(&raw.values, t)?;
        let (field, report) = if project {
            dual_project(grids, &raw)
        } else {
            (
                ValueField::with_certificates(t, raw.values, grids, None),
                ProjectionReport {
                    residual: 0.0,
                    alternations: 0,
                },
            )
        };
        diag.max_projection_residual = diag.max_projection_residual.max(report.residual);
        diag.max_alternations = diag.max_alternations.max(report.alternations);
        diag.max_convexity_violation = diag.max_convexity_violation.max(field.convexity_violation);
        diag.max_concavity_violation = diag.max_concavity_violation.max(field.concavity_violation);
        diag.per_step.push(StepDiagnostics {
            t,
            max_update,
            projection_residual: report.residual,
            alternations: report.alternations,
            convexity_violation: field.convexity_violation,
            concavity_violation: field.concavity_violation,
        });
        slices.push(field);
    }
    Ok(Solution {
        grids: grids.clone(),
        slices,
        diagnostics: diag,
    })
}

/// Full solve from the terminal slice back to `t0`: Isaacs gate, CFL check,
/// then step and project. `dt` is shrunk so that `(T - t0)/dt` is an integer.
pub fn solve(model: &GameModel, grids: &ProductGrids, dt: f64, t0: f64) -> Result<Solution> {
    run(model, grids, dt, t0, true)
}

/// Same scheme for a single payoff pair (`I = J = 1`), without projection.
pub fn classical_solve(model: &GameModel, state: &StateGrid, dt: f64, t0: f64) -> Result<Solution> {
    if model.i_count() != 1 || model.j_count() != 1 {
        return Err(GameError::invalid(
            "classical_solve needs a model restricted to one type pair",
        ));
    }
    let grids = ProductGrids::for_model(model, state.clone(), 0, 0)?;
    run(model, &grids, dt, t0, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(json: &str) -> GameModel {
        GameModel::from_json(json).unwrap()
    }

    fn one_d(preset: &str, params: &str, g: &str, l: &str) -> GameModel {
        model(&format!(
            r#"{{"preset":"{preset}","params":{params},"I":1,"J":1,"T":1.0,"g":[[{g}]],"l":[[{l}]]}}"#
        ))
    }

    fn grids_1d(m: &GameModel, n: usize) -> ProductGrids {
        ProductGrids::for_model(m, StateGrid::uniform(1, -2.0, 2.0, n).unwrap(), 4, 4).unwrap()
    }

    #[test]
    fn state_grid_layout() {
        let g = StateGrid::new(vec![0.0, -1.0], vec![1.0, 1.0], vec![3, 5]).unwrap();
        assert_eq!(g.len(), 15);
        assert_eq!(g.multi_index(7), vec![1, 2]);
        assert_eq!(g.coord(7), vec![0.5, 0.0]);
        assert_eq!(g.nearest(&[0.49, 0.1]), 7);
        assert_eq!(g.distance_to_boundary(7), 0.5);
        assert!(StateGrid::uniform(1, 0.0, 1.0, 2).is_err());
        let s = StateGrid::with_spacing(1, -1.0, 1.0, 0.1).unwrap();
        assert_eq!(s.counts(), &[21]);
    }

    #[test]
    fn terminal_examples() {
        let m = one_d(
            "static",
            "{}",
            r#"{"type":"linear","coef":2.0,"offset":1.0}"#,
            r#"{"type":"zero"}"#,
        );
        let g = grids_1d(&m, 5);
        let f = terminal_field(&m, &g);
        for ix in 0..5 {
            assert_eq!(f.values[ix], 2.0 * g.state.coord(ix)[0] + 1.0);
        }
        let m2 = model(
            r#"{"preset":"static","params":{},"I":2,"J":2,"T":1.0,
                "g":[[{"type":"const","value":1.0},{"type":"zero"}],[{"type":"zero"},{"type":"const","value":1.0}]]}"#,
        );
        let g2 = ProductGrids::for_model(&m2, StateGrid::uniform(1, -1.0, 1.0, 3).unwrap(), 2, 2)
            .unwrap();
        let f2 = terminal_field(&m2, &g2);
        assert_eq!(f2.get(&g2, 1, 1, 1), 0.5);
        let m3 = model(
            r#"{"preset":"static","params":{},"I":2,"J":2,"T":1.0,
                "g":[[{"type":"const","value":0.3},{"type":"const","value":0.3}],[{"type":"const","value":0.3},{"type":"const","value":0.3}]]}"#,
        );
        let f3 = terminal_field(&m3, &g2);
        assert!(f3.values.iter().all(|v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn static_step_is_identity() {
        let m = model(
            r#"{"preset":"static","params":{},"I":2,"J":2,"T":1.0,
                "g":[[{"type":"linear","coef":1.0},{"type":"zero"}],[{"type":"tanh","coef":1.0,"amplitude":1.0},{"type":"const","value":-1.0}]]}"#,
        );
        let g = ProductGrids::for_model(&m, StateGrid::uniform(1, -1.0, 1.0, 9).unwrap(), 4, 4)
            .unwrap();
        let f = terminal_field(&m, &g);
        let next = hjb_step(&m, &g, &f, 0.1).unwrap();
        assert_eq!(next.values, f.values);
        let sol = solve(&m, &g, 0.25, 0.0).unwrap();
        assert!(sol.slices.iter().all(|s| s.values == f.values));
    }

    #[test]
    fn linear_data_is_preserved() {
        let m = one_d(
            "drift-sum-1d",
            r#"{"sigma":1.0}"#,
            r#"{"type":"linear","coef":1.0}"#,
            r#"{"type":"zero"}"#,
        );
        let g = grids_1d(&m, 41);
        let f = terminal_field(&m, &g);
        let dt = 0.5 * cfl_limit(&m, &g.state);
        let next = hjb_step(&m, &g, &f, dt).unwrap();
        for (a, b) in next.values.iter().zip(&f.values) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn pure_running_cost_accumulates_time() {
        let m = model(
            r#"{"preset":"static","params":{},"I":2,"J":1,"T":1.0,
                "g":[[{"type":"zero"}],[{"type":"zero"}]],
                "l":[[{"type":"const","value":1.0}],[{"type":"const","value":1.0}]]}"#,
        );
        let g = ProductGrids::for_model(&m, StateGrid::uniform(1, -1.0, 1.0, 5).unwrap(), 4, 0)
            .unwrap();
        let sol = solve(&m, &g, 0.1, 0.0).unwrap();
        for (k, s) in sol.slices.iter().enumerate() {
            assert!(s.values.iter().all(|v| (v - k as f64 * 0.1).abs() < 1e-12));
        }
        let c = one_d(
            "static",
            "{}",
            r#"{"type":"zero"}"#,
            r#"{"type":"const","value":1.0}"#,
        );
        let sol =
            classical_solve(&c, &StateGrid::uniform(1, -1.0, 1.0, 5).unwrap(), 0.1, 0.0).unwrap();
        assert!(sol.initial().values.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn cfl_and_isaacs_refusals() {
        let m = one_d(
            "drift-sum-1d",
            r#"{"sigma":1.0}"#,
            r#"{"type":"zero"}"#,
            r#"{"type":"zero"}"#,
        );
        let g = grids_1d(&m, 41);
        let limit = cfl_limit(&m, &g.state);
        assert!(matches!(
            solve(&m, &g, 1.5 * limit, 0.0),
            Err(GameError::Cfl { .. })
        ));
        let c = one_d(
            "coupled-1d",
            "{}",
            r#"{"type":"zero"}"#,
            r#"{"type":"zero"}"#,
        );
        assert!(matches!(
            solve(&c, &grids_1d(&c, 11), 0.01, 0.0),
            Err(GameError::IsaacsGap { .. })
        ));
    }

    #[test]
    fn projection_examples() {
        let m = model(
            r#"{"preset":"static","params":{},"I":2,"J":2,"T":1.0,
                "g":[[{"type":"zero"},{"type":"zero"}],[{"type":"zero"},{"type":"zero"}]]}"#,
        );
        let g = ProductGrids::for_model(&m, StateGrid::uniform(1, -1.0, 1.0, 3).unwrap(), 4, 4)
            .unwrap();
        let mut values = vec![0.0; g.len()];
        for ix in 0..3 {
            for (ip, p) in g.p.points().iter().enumerate() {
                for iq in 0..g.q.len() {
                    values[g.index(ix, ip, iq)] = p[0].min(p[1]);
                }
            }
        }
        let w = ValueField {
            t: 0.0,
            values,
            convexity_violation: 0.0,
            concavity_violation: 0.0,
            projection_residual: None,
        };
        let (out, rep) = dual_project(&g, &w);
        assert!(out.values.iter().all(|v| *v == 0.0));
        assert_eq!(rep.residual, 0.0);
        // bilinear field is a fixed point
        let mut values = vec![0.0; g.len()];
        for ix in 0..3 {
            for (ip, p) in g.p.points().iter().enumerate() {
                for (iq, q) in g.q.points().iter().enumerate() {
                    values[g.index(ix, ip, iq)] =
                        2.0 * p[0] * q[0] - p[1] * q[0] + 0.5 * p[1] * q[1];
                }
            }
        }
        let w = ValueField {
            t: 0.0,
            values: values.clone(),
            convexity_violation: 0.0,
            concavity_violation: 0.0,
            projection_residual: None,
        };
        let (out, rep) = dual_project(&g, &w);
        assert_eq!(out.values, values);
        assert_eq!(rep.residual, 0.0);
    }

    #[test]
    fn mixed_stencil_is_exact_on_quadratics() {
        let m = model(
            r#"{"preset":"drift-sum-2d","params":{"sigma":1.0,"rho":0.5},"I":1,"J":1,"T":1.0,
                "g":[[{"type":"zero"}]]}"#,
        );
        let state = StateGrid::uniform(2, -1.0, 1.0, 9).unwrap();
        let g = ProductGrids::for_model(&m, state.clone(), 0, 0).unwrap();
        // w = x y has Tr(σσᵀ D²w)/2 = rho
        let values: Vec<f64> = (0..state.len())
            .map(|k| {
                let x = state.coord(k);
                x[0] * x[1]
            })
            .collect();
        let w = ValueField {
            t: 1.0,
            values: values.clone(),
            convexity_violation: 0.0,
            concavity_violation: 0.0,
            projection_residual: None,
        };
        let dt = 0.01;
        let next = hjb_step(&m, &g, &w, dt).unwrap();
        let center = state.nearest(&[0.0, 0.0]);
        // drift minimax vanishes at x = 0 since Dw = 0
        assert!((next.values[center] - (values[center] + dt * 0.5)).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn step_is_monotone(
            base in prop::collection::vec(-1.0f64..1.0, 9 * 9),
            bump in prop::collection::vec(0.0f64..0.5, 9 * 9),
            rho in -1.0f64..1.0,
        ) {
            let m = model(&format!(
                r#"{{"preset":"drift-sum-2d","params":{{"sigma":0.7,"rho":{rho},"u_values":[-1.0,0.5],"v_values":[-0.25,1.0]}},"I":1,"J":1,"T":1.0,
                    "g":[[{{"type":"zero"}}]],"l":[[{{"type":"separable","u_coef":1.0,"v_coef":-2.0}}]]}}"#
            ));
            let state = StateGrid::uniform(2, -1.0, 1.0, 9).unwrap();
            let g = ProductGrids::for_model(&m, state, 0, 0).unwrap();
            let dt = cfl_limit(&m, &g.state);
            let lo = ValueField { t: 1.0, values: base.clone(), convexity_violation: 0.0, concavity_violation: 0.0, projection_residual: None };
            let hi_vals: Vec<f64> = base.iter().zip(&bump).map(|(a, b)| a + b).collect();
            let hi = ValueField { values: hi_vals, ..lo.clone() };
            let a = hjb_step(&m, &g, &lo, dt).unwrap();
            let b = hjb_step(&m, &g, &hi, dt).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!(x <= y);
            }
        }
    }
}
