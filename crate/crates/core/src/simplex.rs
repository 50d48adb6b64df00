//! Uniform barycentric lattices on the probability simplex `Δ(I)`.

use crate::error::{GameError, Result};
use std::collections::HashMap;

/// The lattice `{k / N : k ∈ ℕ^I, Σ k = N}` in lexicographic order of `k`.
///
/// Points are stored as integer numerators so that membership in the simplex
/// is exact; floating coordinates are derived once at construction.
#[derive(Clone, Debug)]
pub struct SimplexGrid {
    dim: usize,
    resolution: usize,
    numerators: Vec<Vec<u32>>,
    coords: Vec<Vec<f64>>,
    index: HashMap<Vec<u32>, usize>,
    vertices: Vec<usize>,
    segments: Vec<[usize; 3]>,
    midpoint_triples: Vec<[usize; 3]>,
}

fn compositions(parts: usize, total: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if parts == 1 {
        prefix.push(total);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for k in 0..=total {
        prefix.push(k);
        compositions(parts - 1, total - k, prefix, out);
        prefix.pop();
    }
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

impl SimplexGrid {
    pub fn new(dim: usize, resolution: usize) -> Result<Self> {
        if dim == 0 || resolution == 0 {
            return Err(GameError::invalid(format!(
                "simplex grid needs I >= 1 and N >= 1 (got I={dim}, N={resolution})"
            )));
        }
        let mut numerators = Vec::new();
        compositions(
            dim,
            resolution as u32,
            &mut Vec::with_capacity(dim),
            &mut numerators,
        );
        let n = resolution as f64;
        let coords: Vec<Vec<f64>> = numerators
            .iter()
            .map(|k| k.iter().map(|&ki| ki as f64 / n).collect())
            .collect();
        let index: HashMap<Vec<u32>, usize> = numerators
            .iter()
            .enumerate()
            .map(|(idx, k)| (k.clone(), idx))
            .collect();
        let vertices = (0..dim)
            .map(|i| {
                let mut k = vec![0u32; dim];
                k[i] = resolution as u32;
                index[&k]
            })
            .collect();

        let mut segments = Vec::new();
        for (m, k) in numerators.iter().enumerate() {
            for i in 0..dim {
                for j in (i + 1)..dim {
                    if k[i] == 0 || k[j] == 0 {
                        continue;
                    }
                    let mut plus = k.clone();
                    plus[i] += 1;
                    plus[j] -= 1;
                    let mut minus = k.clone();
                    minus[i] -= 1;
                    minus[j] += 1;
                    segments.push([index[&minus], m, index[&plus]]);
                }
            }
        }

        let mut midpoint_triples = Vec::new();
        let mut mid = vec![0u32; dim];
        for a in 0..numerators.len() {
            for b in (a + 1)..numerators.len() {
                let (ka, kb) = (&numerators[a], &numerators[b]);
                if ka.iter().zip(kb).any(|(x, y)| (x + y) % 2 != 0) {
                    continue;
                }
                for (slot, (x, y)) in mid.iter_mut().zip(ka.iter().zip(kb)) {
                    *slot = (x + y) / 2;
                }
                midpoint_triples.push([a, index[&mid], b]);
            }
        }

        Ok(SimplexGrid {
            dim,
            resolution,
            numerators,
            coords,
            index,
            vertices,
            segments,
            midpoint_triples,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, idx: usize) -> &[f64] {
        &self.coords[idx]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.coords
    }

    pub fn numerators(&self, idx: usize) -> &[u32] {
        &self.numerators[idx]
    }

    /// Grid index of the unit vector `e_i`.
    pub fn vertex_index(&self, i: usize) -> usize {
        self.vertices[i]
    }

    pub fn is_vertex(&self, idx: usize) -> bool {
        self.vertices.contains(&idx)
    }

    /// Unit-step triples `(p - h, p, p + h)` with `h = (e_i - e_j) / N`.
    pub fn segments(&self) -> &[[usize; 3]] {
        &self.segments
    }

    /// Every `(a, m, b)` with `a < b` and `m` the lattice midpoint of `a` and `b`.
    pub fn midpoint_triples(&self) -> &[[usize; 3]] {
        &self.midpoint_triples
    }

    pub fn index_of_numerators(&self, k: &[u32]) -> Option<usize> {
        self.index.get(k).copied()
    }

    /// Locates a floating point `p` on the lattice (coordinates within 1e-9 of `k/N`).
    pub fn locate(&self, p: &[f64]) -> Option<usize> {
        if p.len() != self.dim {
            return None;
        }
        let n = self.resolution as f64;
        let mut k = Vec::with_capacity(self.dim);
        for &pi in p {
            let scaled = pi * n;
            let r = scaled.round();
            if (scaled - r).abs() > 1e-9 * n.max(1.0) || r < 0.0 {
                return None;
            }
            k.push(r as u32);
        }
        self.index_of_numerators(&k)
    }

    /// `max (w(m) - (w(a) + w(b)) / 2)` over lattice midpoint triples; a value
    /// `<= 0` certifies midpoint convexity. Returns 0 when the lattice has no
    /// triples.
    pub fn discrete_convexity_violation(&self, w: &[f64]) -> f64 {
        assert_eq!(w.len(), self.len(), "field length does not match grid");
        self.midpoint_triples
            .iter()
            .map(|&[a, m, b]| w[m] - 0.5 * (w[a] + w[b]))
            .fold(
                if self.midpoint_triples.is_empty() {
                    0.0
                } else {
                    f64::NEG_INFINITY
                },
                f64::max,
            )
    }

    /// Same test for concavity: `max ((w(a) + w(b)) / 2 - w(m))`.
    pub fn discrete_concavity_violation(&self, w: &[f64]) -> f64 {
        assert_eq!(w.len(), self.len(), "field length does not match grid");
        self.midpoint_triples
            .iter()
            .map(|&[a, m, b]| 0.5 * (w[a] + w[b]) - w[m])
            .fold(
                if self.midpoint_triples.is_empty() {
                    0.0
                } else {
                    f64::NEG_INFINITY
                },
                f64::max,
            )
    }

    /// CSV dump, header `p_1,...,p_I`.
    pub fn to_csv(&self) -> String {
        let mut out = (1..=self.dim)
            .map(|i| format!("p_{i}"))
            .collect::<Vec<_>>()
            .join(",");
        out.push('\n');
        for p in &self.coords {
            out.push_str(
                &p.iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            );
            out.push('\n');
        }
        out
    }

    /// Recovers `N` from the number of points of a lattice on `Δ(dim)`.
    pub fn resolution_for_count(dim: usize, count: usize) -> Option<usize> {
        if dim == 1 {
            return None;
        }
        (1..=4096).find(|&n| binomial(n + dim - 1, dim - 1) == count)
    }
}
