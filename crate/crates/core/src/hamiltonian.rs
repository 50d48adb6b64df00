//! Isaacs Hamiltonians over finite control sets.
//!
//! The integrand is `<b, ξ> + ½ Tr(A σσᵀ) - Σ_ij ℓ_ij p_i q_j`; every inf/sup
//! is an exhaustive scan over the control lists. [`value_hamiltonian`] is the
//! operator driving the backward value equation `w_t + H = 0` for a payoff
//! `E[∫ ℓ + g]` minimized by player I. The dual operators [`ham_dual_minus`]
//! and [`ham_dual_plus`] act on conjugates and swap the players' roles.

use crate::error::{GameError, Result};
use crate::model::{GameModel, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

/// Arguments of a Hamiltonian evaluation. `a` is symmetrized on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianQuery {
    pub t: f64,
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub a: Matrix,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl HamiltonianQuery {
    pub fn new(t: f64, x: Vec<f64>, xi: Vec<f64>, a: Matrix, p: Vec<f64>, q: Vec<f64>) -> Self {
        let a = a.symmetrized();
        HamiltonianQuery { t, x, xi, a, p, q }
    }

    /// First-order query with `A = 0`.
    pub fn first_order(t: f64, x: Vec<f64>, xi: Vec<f64>, p: Vec<f64>, q: Vec<f64>) -> Self {
        let n = xi.len();
        HamiltonianQuery {
            t,
            x,
            xi,
            a: Matrix::zeros(n, n),
            p,
            q,
        }
    }

    /// The query at `(-ξ, -A)`.
    pub fn negated(&self) -> Self {
        let mut out = self.clone();
        out.xi.iter_mut().for_each(|v| *v = -*v);
        out.a.data.iter_mut().for_each(|v| *v = -*v);
        out
    }

    fn check(&self, model: &GameModel) {
        let n = model.state_dim();
        assert_eq!(self.xi.len(), n, "gradient has wrong dimension");
        assert_eq!(self.x.len(), n, "state has wrong dimension");
        assert_eq!((self.a.rows, self.a.cols), (n, n), "matrix has wrong shape");
        assert_eq!(self.p.len(), model.i_count(), "p has wrong dimension");
        assert_eq!(self.q.len(), model.j_count(), "q has wrong dimension");
    }
}

/// `Tr(A S)` for symmetric `A`, `S`.
#[inline]
pub fn trace_product(a: &Matrix, s: &Matrix) -> f64 {
    a.data.iter().zip(&s.data).map(|(x, y)| x * y).sum()
}

/// Integrand at control indices `(ku, kv)`; `running_sign` multiplies the
/// mixed running cost `Σ ℓ_ij p_i q_j`.
pub fn integrand(
    model: &GameModel,
    query: &HamiltonianQuery,
    ku: usize,
    kv: usize,
    running_sign: f64,
) -> f64 {
    let u = model.u_set().get(ku);
    let v = model.v_set().get(kv);
    let b = model.drift(query.t, &query.x, u, v);
    let drift: f64 = b.iter().zip(&query.xi).map(|(bk, xk)| bk * xk).sum();
    let diff = 0.5 * trace_product(&query.a, model.covariance(query.t, &query.x, u, v));
    let run = if model.has_running_cost() {
        running_sign * model.running_mix(&query.p, &query.q, query.t, &query.x, u, v)
    } else {
        0.0
    };
    drift + diff + run
}

/// `min_u max_v f(u, v)` with the first minimizing `u` index.
pub fn min_max(nu: usize, nv: usize, mut f: impl FnMut(usize, usize) -> f64) -> (f64, usize) {
    let mut best = f64::INFINITY;
    let mut arg = 0;
    for ku in 0..nu {
        let mut inner = f64::NEG_INFINITY;
        for kv in 0..nv {
            inner = inner.max(f(ku, kv));
            if inner >= best {
                break;
            }
        }
        if inner < best {
            best = inner;
            arg = ku;
        }
    }
    (best, arg)
}

/// `max_v min_u f(u, v)` with the first maximizing `v` index.
pub fn max_min(nu: usize, nv: usize, mut f: impl FnMut(usize, usize) -> f64) -> (f64, usize) {
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    for kv in 0..nv {
        let mut inner = f64::INFINITY;
        for ku in 0..nu {
            inner = inner.min(f(ku, kv));
            if inner <= best {
                break;
            }
        }
        if inner > best {
            best = inner;
            arg = kv;
        }
    }
    (best, arg)
}

fn scan(model: &GameModel, query: &HamiltonianQuery, sign: f64, inf_sup: bool) -> f64 {
    query.check(model);
    let (nu, nv) = (model.u_set().len(), model.v_set().len());
    let f = |ku, kv| integrand(model, query, ku, kv, sign);
    if inf_sup {
        min_max(nu, nv, f).0
    } else {
        max_min(nu, nv, f).0
    }
}

/// `inf_u sup_v { <b,ξ> + ½Tr(Aσσᵀ) - Σ ℓ_ij p_i q_j }`.
pub fn ham_inf_sup(model: &GameModel, query: &HamiltonianQuery) -> f64 {
    scan(model, query, -1.0, true)
}

/// `sup_v inf_u { <b,ξ> + ½Tr(Aσσᵀ) - Σ ℓ_ij p_i q_j }`.
pub fn ham_sup_inf(model: &GameModel, query: &HamiltonianQuery) -> f64 {
    scan(model, query, -1.0, false)
}

/// `ham_inf_sup - ham_sup_inf`, nonnegative by weak duality.
pub fn isaacs_gap(model: &GameModel, query: &HamiltonianQuery) -> f64 {
    ham_inf_sup(model, query) - ham_sup_inf(model, query)
}

/// `-ham_sup_inf(-ξ, -A) = inf_v sup_u { <b,ξ> + ½Tr(Aσσᵀ) + Σ ℓ_ij p_i q_j }`.
pub fn ham_dual_minus(model: &GameModel, query: &HamiltonianQuery) -> f64 {
    -ham_sup_inf(model, &query.negated())
}

/// `-ham_inf_sup(-ξ, -A) = sup_u inf_v { <b,ξ> + ½Tr(Aσσᵀ) + Σ ℓ_ij p_i q_j }`.
pub fn ham_dual_plus(model: &GameModel, query: &HamiltonianQuery) -> f64 {
    -ham_inf_sup(model, &query.negated())
}

/// `inf_u sup_v { <b,ξ> + ½Tr(Aσσᵀ) + Σ ℓ_ij p_i q_j }`.
pub fn value_hamiltonian(model: &GameModel, query: &HamiltonianQuery) -> f64 {
    scan(model, query, 1.0, true)
}

/// Minimax gap of the value Hamiltonian's integrand.
pub fn value_isaacs_gap(model: &GameModel, query: &HamiltonianQuery) -> f64 {
    scan(model, query, 1.0, true) - scan(model, query, 1.0, false)
}

/// Largest gap found by [`isaacs_certificate`] and where it occurred.
#[derive(Clone, Debug, PartialEq)]
pub struct IsaacsReport {
    pub max_gap: f64,
    pub queries: usize,
    pub worst: String,
}

/// Uniform sample from `Δ(k)`.
pub fn random_simplex_point<R: Rng>(k: usize, rng: &mut R) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn describe(query: &HamiltonianQuery) -> String {
    let a_zero = query.a.data.iter().all(|v| *v == 0.0);
    let xi = query
        .xi
        .iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(", ");
    if a_zero {
        format!("xi = [{xi}], A = 0")
    } else {
        format!("xi = [{xi}], t = {}, random A", query.t)
    }
}

/// Gate sample: the canonical first-order queries `ξ = ±e_d` at `x = 0`, uniform `(p, q)` come
/// first, followed by `random` queries drawn from a seeded stream.
fn gate_queries(model: &GameModel, random: usize, seed: u64) -> Vec<HamiltonianQuery> {
    let n = model.state_dim();
    let (ni, nj) = (model.i_count(), model.j_count());
    let uniform_p = vec![1.0 / ni as f64; ni];
    let uniform_q = vec![1.0 / nj as f64; nj];
    let mut queries = Vec::with_capacity(2 * n + random);
    for sign in [1.0, -1.0] {
        for d in 0..n {
            let mut xi = vec![0.0; n];
            xi[d] = sign;
            queries.push(HamiltonianQuery::first_order(
                0.0,
                vec![0.0; n],
                xi,
                uniform_p.clone(),
                uniform_q.clone(),
            ));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dom = model.domain();
    for _ in 0..random {
        let t = rng.random_range(0.0..=model.horizon());
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-dom..=dom)).collect();
        let xi: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..=2.0)).collect();
        let mut a = Matrix::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                a.set(r, c, rng.random_range(-1.0..=1.0));
            }
        }
        let p = random_simplex_point(ni, &mut rng);
        let q = random_simplex_point(nj, &mut rng);
        queries.push(HamiltonianQuery::new(t, x, xi, a, p, q));
    }
    queries
}

/// Largest sampled gap, over both the primal and value integrands, on the
/// queries used by [`certify_isaacs`].
pub fn isaacs_certificate(model: &GameModel, random: usize, seed: u64) -> IsaacsReport {
    let queries = gate_queries(model, random, seed);
    let mut report = IsaacsReport {
        max_gap: 0.0,
        queries: queries.len(),
        worst: String::new(),
    };
    for query in &queries {
        let gap = isaacs_gap(model, query).max(value_isaacs_gap(model, query));
        if gap > report.max_gap || report.worst.is_empty() {
            report.max_gap = report.max_gap.max(gap);
            report.worst = describe(query);
        }
    }
    report
}

/// Refuses models whose sampled Isaacs gap exceeds `tol`, reporting the first
/// offending query in sampling order.
pub fn certify_isaacs(
    model: &GameModel,
    random: usize,
    seed: u64,
    tol: f64,
) -> Result<IsaacsReport> {
    let queries = gate_queries(model, random, seed);
    let mut report = IsaacsReport {
        max_gap: 0.0,
        queries: queries.len(),
        worst: String::new(),
    };
    for query in &queries {
        let gap = isaacs_gap(model, query).max(value_isaacs_gap(model, query));
        if gap > tol {
            return Err(GameError::IsaacsGap {
                gap,
                tol,
                context: describe(query),
            });
        }
        if gap > report.max_gap || report.worst.is_empty() {
            report.max_gap = report.max_gap.max(gap);
            report.worst = describe(query);
        }
    }
    Ok(report)
}
