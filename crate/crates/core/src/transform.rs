//! Discrete Fenchel conjugates over simplex lattices, convex/concave
//! envelopes and sub/superdifferential extraction.
//!
//! Conjugates are exact maxima over lattice nodes:
//! `w*(p̂) = max_p <p̂, p> - w(p)` and `w♯(q̂) = min_q <q̂, q> - w(q)`.
//! Envelopes are computed geometrically from the lower (upper) hull of the
//! samples `(p, w(p))`, independently of any probe set; [`biconjugate_p`]
//! gives the second, dual route to the same envelope.

use crate::error::{GameError, Result};
use crate::simplex::SimplexGrid;

/// Absolute tolerance for membership in argmax/argmin sets.
pub const TIE_TOL: f64 = 1e-12;

/// Relative tolerance used when testing hull minorants and snapping envelope
/// values back onto the data.
const HULL_TOL: f64 = 1e-12;

/// Maximizers (or minimizers) of a conjugate at one dual anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct SubdifferentialSet {
    pub anchor: Vec<f64>,
    pub indices: Vec<usize>,
    pub points: Vec<Vec<f64>>,
}

impl SubdifferentialSet {
    /// Checks `w*(p̂) + <p, p̂' - p̂> <= w*(p̂') + tol` for every member `p`
    /// and every `(p̂', w*(p̂'))` in `probes`.
    pub fn satisfies_sub_inequality(
        &self,
        value: f64,
        probes: &[(Vec<f64>, f64)],
        tol: f64,
    ) -> bool {
        self.points.iter().all(|p| {
            probes
                .iter()
                .all(|(ph, val)| value + dot_diff(p, ph, &self.anchor) <= val + tol)
        })
    }

    /// Checks `w♯(q̂) + <q, q̂' - q̂> >= w♯(q̂') - tol`.
    pub fn satisfies_super_inequality(
        &self,
        value: f64,
        probes: &[(Vec<f64>, f64)],
        tol: f64,
    ) -> bool {
        self.points.iter().all(|q| {
            probes
                .iter()
                .all(|(qh, val)| value + dot_diff(q, qh, &self.anchor) >= val - tol)
        })
    }
}

fn dot_diff(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    p.iter()
        .zip(a.iter().zip(b))
        .map(|(pi, (ai, bi))| pi * (ai - bi))
        .sum()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `w*(p̂) = max_{p ∈ grid} <p̂, p> - w(p)` with all maximizers within [`TIE_TOL`].
pub fn conjugate_p(grid: &SimplexGrid, w: &[f64], p_hat: &[f64]) -> (f64, SubdifferentialSet) {
    assert_eq!(w.len(), grid.len(), "field length does not match grid");
    assert_eq!(p_hat.len(), grid.dim(), "dual vector has wrong dimension");
    let vals: Vec<f64> = grid
        .points()
        .iter()
        .zip(w)
        .map(|(p, wp)| dot(p_hat, p) - wp)
        .collect();
    let best = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let indices: Vec<usize> = (0..vals.len())
        .filter(|&k| best - vals[k] <= TIE_TOL)
        .collect();
    let points = indices.iter().map(|&k| grid.point(k).to_vec()).collect();
    (
        best,
        SubdifferentialSet {
            anchor: p_hat.to_vec(),
            indices,
            points,
        },
    )
}

/// `w♯(q̂) = min_{q ∈ grid} <q̂, q> - w(q)` with all minimizers within [`TIE_TOL`].
pub fn concave_conjugate_q(
    grid: &SimplexGrid,
    w: &[f64],
    q_hat: &[f64],
) -> (f64, SubdifferentialSet) {
    assert_eq!(w.len(), grid.len(), "field length does not match grid");
    assert_eq!(q_hat.len(), grid.dim(), "dual vector has wrong dimension");
    let vals: Vec<f64> = grid
        .points()
        .iter()
        .zip(w)
        .map(|(q, wq)| dot(q_hat, q) - wq)
        .collect();
    let best = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let indices: Vec<usize> = (0..vals.len())
        .filter(|&k| vals[k] - best <= TIE_TOL)
        .collect();
    let points = indices.iter().map(|&k| grid.point(k).to_vec()).collect();
    (
        best,
        SubdifferentialSet {
            anchor: q_hat.to_vec(),
            indices,
            points,
        },
    )
}

/// Tabulated conjugate over a finite probe set.
#[derive(Clone, Debug)]
pub struct DualField<'a> {
    grid: &'a SimplexGrid,
    probes: Vec<Vec<f64>>,
    values: Vec<f64>,
    extremizers: Vec<SubdifferentialSet>,
    concave: bool,
}

impl<'a> DualField<'a> {
    /// Convex conjugate `w*` at every probe.
    pub fn convex(grid: &'a SimplexGrid, w: &[f64], probes: &[Vec<f64>]) -> Self {
        let (values, extremizers) = probes.iter().map(|ph| conjugate_p(grid, w, ph)).unzip();
        DualField {
            grid,
            probes: probes.to_vec(),
            values,
            extremizers,
            concave: false,
        }
    }

    /// Concave conjugate `w♯` at every probe.
    pub fn concave(grid: &'a SimplexGrid, w: &[f64], probes: &[Vec<f64>]) -> Self {
        let (values, extremizers) = probes
            .iter()
            .map(|qh| concave_conjugate_q(grid, w, qh))
            .unzip();
        DualField {
            grid,
            probes: probes.to_vec(),
            values,
            extremizers,
            concave: true,
        }
    }

    pub fn grid(&self) -> &SimplexGrid {
        self.grid
    }

    pub fn probes(&self) -> &[Vec<f64>] {
        &self.probes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn extremizers(&self) -> &[SubdifferentialSet] {
        &self.extremizers
    }

    /// Largest violation of the defining inequality `w*(p̂) >= <p̂, p> - w(p)`
    /// (reversed for `w♯`) together with the largest gap between the
    /// conjugate and the objective on the recorded extremizers.
    pub fn fenchel_violation(&self, w: &[f64]) -> (f64, f64) {
        let mut ineq = f64::NEG_INFINITY;
        let mut eq = 0.0f64;
        for (k, ph) in self.probes.iter().enumerate() {
            for (idx, p) in self.grid.points().iter().enumerate() {
                let obj = dot(ph, p) - w[idx];
                let slack = if self.concave {
                    self.values[k] - obj
                } else {
                    obj - self.values[k]
                };
                ineq = ineq.max(slack);
            }
            for &idx in &self.extremizers[k].indices {
                let obj = dot(ph, self.grid.point(idx)) - w[idx];
                eq = eq.max((obj - self.values[k]).abs());
            }
        }
        (ineq, eq)
    }

    /// Checks every recorded extremizer against the sub- (or super-)
    /// differential inequality over the whole probe set.
    pub fn subdifferentials_consistent(&self, tol: f64) -> bool {
        let table: Vec<(Vec<f64>, f64)> = self
            .probes
            .iter()
            .cloned()
            .zip(self.values.iter().copied())
            .collect();
        self.extremizers
            .iter()
            .zip(&self.values)
            .all(|(set, &val)| {
                if self.concave {
                    set.satisfies_super_inequality(val, &table, tol)
                } else {
                    set.satisfies_sub_inequality(val, &table, tol)
                }
            })
    }
}

/// Affine minorant `h(p) = <slope, p>` supporting the lower hull.
#[derive(Clone, Debug, PartialEq)]
pub struct HullFacet {
    pub slope: Vec<f64>,
}

/// Lower convex hull of `{(p, w(p))}` over the lattice.
#[derive(Clone, Debug)]
pub struct LowerHull {
    pub facets: Vec<HullFacet>,
    pub envelope: Vec<f64>,
}

fn scale_of(w: &[f64]) -> f64 {
    1.0 + w.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Envelope from the supporting facets, snapped onto `w` where the two agree
/// to within tolerance (this makes the envelope exactly idempotent).
fn envelope_from_facets(grid: &SimplexGrid, w: &[f64], facets: &[HullFacet]) -> Vec<f64> {
    let tol = HULL_TOL * scale_of(w);
    grid.points()
        .iter()
        .zip(w)
        .map(|(p, &wp)| {
            let h = facets
                .iter()
                .map(|f| dot(&f.slope, p))
                .fold(f64::NEG_INFINITY, f64::max);
            if wp - h <= tol {
                wp
            } else {
                h
            }
        })
        .collect()
}

/// Monotone-chain lower hull for `Δ(2)`; lattice order is ascending in `p_1`.
fn lower_hull_1d(grid: &SimplexGrid, w: &[f64]) -> Vec<HullFacet> {
    let xs: Vec<f64> = (0..grid.len())
        .map(|k| grid.numerators(k)[0] as f64)
        .collect();
    let mut hull: Vec<usize> = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (xs[b] - xs[a]) * (w[k] - w[a]) - (w[b] - w[a]) * (xs[k] - xs[a]);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(k);
    }
    let n = grid.resolution() as f64;
    hull.windows(2)
        .map(|pair| {
            let (a, b) = (pair[0], pair[1]);
            // slope in p_1 units
            let slope = (w[b] - w[a]) / ((xs[b] - xs[a]) / n);
            let intercept = w[a] - slope * xs[a] / n;
            HullFacet {
                slope: vec![slope + intercept, intercept],
            }
        })
        .collect()
}

/// Solves the square system `m x = rhs` by Gaussian elimination with partial
/// pivoting; `None` when singular.
fn solve_linear(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let n = rhs.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        let (top, rest) = m.split_at_mut(col + 1);
        let pivot_row = &top[col];
        for (r, row) in rest.iter_mut().enumerate() {
            let f = row[col] / pivot_row[col];
            if f != 0.0 {
                for (x, p) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                    *x -= f * p;
                }
                rhs[col + 1 + r] -= f * rhs[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = ((r + 1)..n).map(|c| m[r][c] * x[c]).sum();
        x[r] = (rhs[r] - s) / m[r][r];
    }
    Some(x)
}

fn next_subset(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in (i + 1)..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Lower hull for `Δ(I)`, `I >= 3`: every affinely independent `(I)`-subset of
/// lattice nodes spans a candidate hyperplane, kept when it minorizes all
/// samples. Exhaustive, so exact on the lattice for any degeneracy.
fn lower_hull_general(grid: &SimplexGrid, w: &[f64]) -> Vec<HullFacet> {
    let dim = grid.dim();
    let d = dim - 1;
    let n = grid.len();
    let res = grid.resolution() as f64;
    let tol = HULL_TOL * scale_of(w);
    let ys: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            grid.numerators(k)[..d]
                .iter()
                .map(|&v| v as f64 / res)
                .collect()
        })
        .collect();
    let mut facets: Vec<HullFacet> = Vec::new();
    if n < d + 1 {
        return facets;
    }
    let mut subset: Vec<usize> = (0..=d).collect();
    loop {
        let m: Vec<Vec<f64>> = subset
            .iter()
            .map(|&k| {
                let mut row = ys[k].clone();
                row.push(1.0);
                row
            })
            .collect();
        let rhs: Vec<f64> = subset.iter().map(|&k| w[k]).collect();
        if let Some(coef) = solve_linear(m, rhs) {
            let minorant = (0..n).all(|k| {
                let h: f64 = dot(&coef[..d], &ys[k]) + coef[d];
                w[k] - h >= -tol
            });
            if minorant {
                let c = coef[d];
                let mut slope: Vec<f64> = coef[..d].iter().map(|a| a + c).collect();
                slope.push(c);
                let dup = facets.iter().any(|f| {
                    f.slope
                        .iter()
                        .zip(&slope)
                        .all(|(a, b)| (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs())))
                });
                if !dup {
                    facets.push(HullFacet { slope });
                }
            }
        }
        if !next_subset(&mut subset, n) {
            break;
        }
    }
    facets
}

/// Lower convex hull of the samples and the resulting envelope at every node.
pub fn lower_hull(grid: &SimplexGrid, w: &[f64]) -> LowerHull {
    assert_eq!(w.len(), grid.len(), "field length does not match grid");
    let facets = match grid.dim() {
        1 => vec![HullFacet { slope: vec![w[0]] }],
        2 => lower_hull_1d(grid, w),
        _ => lower_hull_general(grid, w),
    };
    let envelope = envelope_from_facets(grid, w, &facets);
    LowerHull { facets, envelope }
}

/// Lower convex envelope `vex_p(w)` on the lattice.
pub fn vex_p(grid: &SimplexGrid, w: &[f64]) -> Vec<f64> {
    match grid.dim() {
        1 => w.to_vec(),
        _ => lower_hull(grid, w).envelope,
    }
}

/// Upper concave envelope `cav_q(w) = -vex(-w)`.
pub fn cav_q(grid: &SimplexGrid, w: &[f64]) -> Vec<f64> {
    let neg: Vec<f64> = w.iter().map(|v| -v).collect();
    vex_p(grid, &neg).into_iter().map(|v| -v).collect()
}

/// Supporting slopes `p̂` of the lower hull facets.
pub fn facet_slopes(grid: &SimplexGrid, w: &[f64]) -> Vec<Vec<f64>> {
    lower_hull(grid, w)
        .facets
        .into_iter()
        .map(|f| f.slope)
        .collect()
}

/// Supporting slopes `q̂` of the upper hull facets (for `w♯` probes).
pub fn upper_facet_slopes(grid: &SimplexGrid, w: &[f64]) -> Vec<Vec<f64>> {
    let neg: Vec<f64> = w.iter().map(|v| -v).collect();
    facet_slopes(grid, &neg)
        .into_iter()
        .map(|s| s.into_iter().map(|v| -v).collect())
        .collect()
}

/// Facet slopes plus the coordinate-difference directions `e_i - e_j`.
pub fn default_probes(grid: &SimplexGrid, w: &[f64]) -> Vec<Vec<f64>> {
    let mut probes = facet_slopes(grid, w);
    let dim = grid.dim();
    for i in 0..dim {
        for j in 0..dim {
            if i != j {
                let mut e = vec![0.0; dim];
                e[i] = 1.0;
                e[j] = -1.0;
                probes.push(e);
            }
        }
    }
    probes
}

/// `p ↦ max_{p̂ ∈ probes} <p̂, p> - w*(p̂)`; never exceeds `vex_p(w)` and
/// matches it when the probes include every facet slope. Values within the
/// hull tolerance of `w` are snapped onto `w`, as for the envelope.
pub fn biconjugate_p(grid: &SimplexGrid, w: &[f64], probes: &[Vec<f64>]) -> Result<Vec<f64>> {
    if probes.is_empty() {
        return Err(GameError::invalid(
            "biconjugate needs a non-empty probe set",
        ));
    }
    let tol = HULL_TOL * scale_of(w);
    let conj: Vec<f64> = probes.iter().map(|ph| conjugate_p(grid, w, ph).0).collect();
    Ok(grid
        .points()
        .iter()
        .zip(w)
        .map(|(p, &wp)| {
            let h = probes
                .iter()
                .zip(&conj)
                .map(|(ph, c)| dot(ph, p) - c)
                .fold(f64::NEG_INFINITY, f64::max);
            if wp - h <= tol {
                wp
            } else {
                h
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tent(grid: &SimplexGrid) -> Vec<f64> {
        grid.points().iter().map(|p| p[0].min(p[1])).collect()
    }

    #[test]
    fn conjugate_of_zero_is_max_coordinate() {
        let g = SimplexGrid::new(2, 4).unwrap();
        let (v, arg) = conjugate_p(&g, &vec![0.0; g.len()], &[3.0, 1.0]);
        assert_eq!(v, 3.0);
        assert_eq!(arg.points, vec![vec![1.0, 0.0]]);
    }

    #[test]
    fn conjugate_of_linear() {
        let g = SimplexGrid::new(2, 4).unwrap();
        let w: Vec<f64> = g.points().iter().map(|p| p[0] + 2.0 * p[1]).collect();
        let (v, arg) = conjugate_p(&g, &w, &[0.0, 0.0]);
        assert_eq!(v, -1.0);
        assert_eq!(arg.points, vec![vec![1.0, 0.0]]);
    }

    #[test]
    fn conjugate_matches_scan_on_five_nodes() {
        let g = SimplexGrid::new(2, 4).unwrap();
        let w = [0.31, -0.2, 0.05, 0.4, -0.11];
        let (v, arg) = conjugate_p(&g, &w, &[0.7, -0.2]);
        // nodes p_1 = 0, 1/4, 1/2, 3/4, 1
        let scan = [
            -0.2 - 0.31,
            0.7 * 0.25 - 0.2 * 0.75 + 0.2,
            0.35 - 0.1 - 0.05,
            0.7 * 0.75 - 0.2 * 0.25 - 0.4,
            0.7 + 0.11,
        ];
        let best = scan.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!((v - best).abs() < 1e-15);
        assert_eq!(arg.indices, vec![4]);
    }

    #[test]
    fn concave_conjugate_examples() {
        let g = SimplexGrid::new(2, 3).unwrap();
        let (v, arg) = concave_conjugate_q(&g, &vec![0.0; g.len()], &[3.0, 1.0]);
        assert_eq!(v, 1.0);
        assert_eq!(arg.points, vec![vec![0.0, 1.0]]);
        let c = [0.5, -1.5];
        let w: Vec<f64> = g
            .points()
            .iter()
            .map(|q| c[0] * q[0] + c[1] * q[1])
            .collect();
        let (v, _) = concave_conjugate_q(&g, &w, &[2.0, 1.0]);
        assert!((v - (2.0f64 - 0.5).min(1.0 + 1.5)).abs() < 1e-15);
    }

    #[test]
    fn concave_conjugate_matches_scan_on_delta3() {
        let g = SimplexGrid::new(3, 3).unwrap();
        let w: Vec<f64> = (0..g.len())
            .map(|k| ((k * 37 % 11) as f64) / 7.0 - 0.6)
            .collect();
        let qh = [0.3, -1.1, 0.45];
        let (v, arg) = concave_conjugate_q(&g, &w, &qh);
        let mut best = f64::INFINITY;
        let mut who = Vec::new();
        for (k, q) in g.points().iter().enumerate() {
            let val = qh[0] * q[0] + qh[1] * q[1] + qh[2] * q[2] - w[k];
            if val < best - 1e-12 {
                best = val;
                who = vec![k];
            } else if (val - best).abs() <= 1e-12 {
                who.push(k);
            }
        }
        assert!((v - best).abs() < 1e-15);
        assert_eq!(arg.indices, who);
    }

    #[test]
    fn tent_envelopes() {
        for n in [2, 3, 6] {
            let g = SimplexGrid::new(2, n).unwrap();
            let w = tent(&g);
            assert!(vex_p(&g, &w).iter().all(|v| *v == 0.0));
            assert_eq!(cav_q(&g, &w), w);
        }
    }

    #[test]
    fn planar_hull_of_five_points() {
        let g = SimplexGrid::new(2, 4).unwrap();
        // lattice order is ascending in p_1
        let w = [1.0, 0.2, 0.6, 0.1, 1.0];
        let v = vex_p(&g, &w);
        // chord (1/4, 0.2)-(3/4, 0.1) at p_1 = 1/2
        let expect = [1.0, 0.2, 0.15, 0.1, 1.0];
        for (a, b) in v.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{v:?}");
        }
        let neg: Vec<f64> = w.iter().map(|x| -x).collect();
        let c = cav_q(&g, &neg);
        for (a, b) in c.iter().zip(expect) {
            assert!((a + b).abs() < 1e-15);
        }
    }

    #[test]
    fn convex_quadratic_unchanged() {
        let g = SimplexGrid::new(3, 5).unwrap();
        let w: Vec<f64> = g
            .points()
            .iter()
            .map(|p| (p[0] - 0.2).powi(2) + 2.0 * p[1] * p[1] - p[2])
            .collect();
        assert_eq!(vex_p(&g, &w), w);
        assert_eq!(
            cav_q(&g, &w.iter().map(|v| -v).collect::<Vec<_>>()),
            w.iter().map(|v| -v).collect::<Vec<_>>()
        );
    }

    #[test]
    fn linear_is_its_own_biconjugate() {
        let g = SimplexGrid::new(3, 4).unwrap();
        let w: Vec<f64> = g
            .points()
            .iter()
            .map(|p| 0.5 * p[0] - p[1] + 0.25 * p[2])
            .collect();
        let b = biconjugate_p(&g, &w, &default_probes(&g, &w)).unwrap();
        for (a, c) in b.iter().zip(&w) {
            assert!((a - c).abs() < 1e-12);
        }
        assert!(biconjugate_p(&g, &w, &[]).is_err());
    }

    #[test]
    fn tent_biconjugate_is_zero() {
        let g = SimplexGrid::new(2, 4).unwrap();
        let w = tent(&g);
        let b = biconjugate_p(&g, &w, &[vec![0.0, 0.0], vec![1.0, -1.0]]).unwrap();
        assert!(b.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn dual_field_invariants() {
        let g = SimplexGrid::new(3, 4).unwrap();
        let w: Vec<f64> = (0..g.len()).map(|k| ((k * 17 % 13) as f64) / 5.0).collect();
        let probes = default_probes(&g, &w);
        let df = DualField::convex(&g, &w, &probes);
        let (ineq, eq) = df.fenchel_violation(&w);
        assert!(ineq <= 0.0 && eq <= TIE_TOL);
        assert!(df.subdifferentials_consistent(TIE_TOL));
        let dq = DualField::concave(&g, &w, &upper_facet_slopes(&g, &w));
        let (ineq, _) = dq.fenchel_violation(&w);
        assert!(ineq <= 0.0);
        assert!(dq.subdifferentials_consistent(TIE_TOL));
    }

    fn field(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-2.0f64..2.0, len)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn envelope_sandwich_and_idempotence(w in field(15)) {
            let g = SimplexGrid::new(3, 4).unwrap();
            let v = vex_p(&g, &w);
            let c = cav_q(&g, &w);
            for k in 0..g.len() {
                prop_assert!(v[k] <= w[k]);
                prop_assert!(c[k] >= w[k]);
            }
            prop_assert_eq!(&vex_p(&g, &v), &v);
            prop_assert_eq!(&cav_q(&g, &c), &c);
            for i in 0..3 {
                let e = g.vertex_index(i);
                prop_assert_eq!(v[e], w[e]);
                prop_assert_eq!(c[e], w[e]);
            }
            prop_assert!(g.discrete_convexity_violation(&v) <= 1e-12);
        }

        #[test]
        fn biconjugate_with_facet_probes_matches_hull(w in field(15)) {
            let g = SimplexGrid::new(3, 4).unwrap();
            let v = vex_p(&g, &w);
            let b = biconjugate_p(&g, &w, &default_probes(&g, &w)).unwrap();
            for k in 0..g.len() {
                prop_assert!((v[k] - b[k]).abs() <= 1e-9, "node {}: {} vs {}", k, v[k], b[k]);
            }
        }

        #[test]
        fn vex_fixed_point_iff_convex_on_delta2(w in field(9)) {
            let g = SimplexGrid::new(2, 8).unwrap();
            let v = vex_p(&g, &w);
            prop_assert_eq!(v == w, g.discrete_convexity_violation(&w) <= 0.0);
        }

        #[test]
        fn order_reversal(w in field(10), bump in prop::collection::vec(0.0f64..1.0, 10), ph in prop::collection::vec(-3.0f64..3.0, 4)) {
            let g = SimplexGrid::new(4, 1).unwrap();
            let g2 = SimplexGrid::new(2, 9).unwrap();
            let wp: Vec<f64> = w.iter().zip(&bump).map(|(a, b)| a + b).collect();
            prop_assert!(conjugate_p(&g2, &w, &ph[..2]).0 >= conjugate_p(&g2, &wp, &ph[..2]).0);
            prop_assert!(conjugate_p(&g, &w[..4], &ph).0 >= conjugate_p(&g, &wp[..4], &ph).0);
        }

        #[test]
        fn argmax_satisfies_subgradient_inequality(w in field(15), probes in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 1..8)) {
            let g = SimplexGrid::new(3, 4).unwrap();
            let df = DualField::convex(&g, &w, &probes);
            prop_assert!(df.subdifferentials_consistent(TIE_TOL));
        }

        #[test]
        fn conjugate_convex_along_aligned_probes(w in field(9), a in prop::collection::vec(-3.0f64..3.0, 2), b in prop::collection::vec(-3.0f64..3.0, 2)) {
            let g = SimplexGrid::new(2, 8).unwrap();
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let (fa, fb, fm) = (conjugate_p(&g, &w, &a).0, conjugate_p(&g, &w, &b).0, conjugate_p(&g, &w, &mid).0);
            prop_assert!(fm <= 0.5 * (fa + fb) + 1e-12);
        }
    }
}
