//! Discrete geometry of `D ∩ εZ^d`.
//!
//! Vertices are stored in row-major lexicographic order of their integer
//! coordinates (the first coordinate is the most significant). Every
//! unordered nearest-neighbour pair is stored once as a canonical [`Edge`]
//! pointing in the positive direction of its axis; the reverse orientation is
//! expressed with [`DirectedEdge::reversed`].

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack used when snapping box corners onto the lattice.
const SNAP_TOL: f64 = 1e-9;

/// Serializable description of a rectangular domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainDescriptor {
    pub d: usize,
    pub eps: f64,
    pub box_lo: Vec<f64>,
    pub box_hi: Vec<f64>,
}

impl DomainDescriptor {
    pub fn build(&self) -> Result<LatticeDomain> {
        build_rect_domain(self.d, self.eps, &self.box_lo, &self.box_hi)
    }
}

/// Canonical nearest-neighbour edge, `head = tail + ε e_axis`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
    pub axis: usize,
}

/// A canonical edge traversed in one of its two orientations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DirectedEdge {
    pub edge: usize,
    pub reversed: bool,
}

impl DirectedEdge {
    pub fn forward(edge: usize) -> Self {
        Self { edge, reversed: false }
    }

    pub fn backward(edge: usize) -> Self {
        Self { edge, reversed: true }
    }

    pub fn reverse(self) -> Self {
        Self { edge: self.edge, reversed: !self.reversed }
    }

    /// `+1` for the canonical orientation, `-1` otherwise.
    pub fn sign(self) -> f64 {
        if self.reversed {
            -1.0
        } else {
            1.0
        }
    }
}

/// Oriented unit square in the `(axes.0, axes.1)` plane, counterclockwise
/// from its lexicographically minimal corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Plaquette {
    pub axes: (usize, usize),
    pub anchor: usize,
    pub edges: [DirectedEdge; 4],
}

/// Edge incident to a vertex, seen from that vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Incident {
    pub neighbor: usize,
    pub edge: usize,
    /// True when the vertex is the tail of the canonical edge.
    pub outward: bool,
}

impl Incident {
    /// The edge oriented away from the vertex.
    pub fn leaving(&self) -> DirectedEdge {
        DirectedEdge { edge: self.edge, reversed: !self.outward }
    }
}

#[derive(Debug, Clone)]
pub struct LatticeDomain {
    dim: usize,
    spacing: f64,
    coords: Vec<i64>,
    lookup: HashMap<Vec<i64>, usize>,
    boundary: Vec<bool>,
    interior: Vec<usize>,
    edges: Vec<Edge>,
    plaquettes: Vec<Plaquette>,
    incidence: Vec<Vec<Incident>>,
    descriptor: Option<DomainDescriptor>,
}

/// Builds `[a_1,b_1] × … × [a_d,b_d] ∩ εZ^d`.
pub fn build_rect_domain(d: usize, eps: f64, lo: &[f64], hi: &[f64]) -> Result<LatticeDomain> {
    if d < 2 {
        return Err(Error::Dimension(d));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidDomain(format!("spacing must be positive, got {eps}")));
    }
    if lo.len() != d || hi.len() != d {
        return Err(Error::InvalidDomain(format!(
            "corners must have {d} coordinates, got {} and {}",
            lo.len(),
            hi.len()
        )));
    }
    let mut ranges = Vec::with_capacity(d);
    for (a, b) in lo.iter().zip(hi) {
        if !(a < b) {
            return Err(Error::InvalidDomain(format!("empty box side [{a}, {b}]")));
        }
        let first = (a / eps - SNAP_TOL).ceil() as i64;
        let last = (b / eps + SNAP_TOL).floor() as i64;
        if first > last {
            return Err(Error::InvalidDomain(format!("no lattice point in [{a}, {b}] at spacing {eps}")));
        }
        ranges.push(first..=last);
    }

    let mut points: Vec<Vec<i64>> = vec![Vec::new()];
    for r in &ranges {
        points = points
            .into_iter()
            .flat_map(|p| {
                r.clone().map(move |k| {
                    let mut q = p.clone();
                    q.push(k);
                    q
                })
            })
            .collect();
    }
    let mut dom = LatticeDomain::from_points(d, eps, points)?;
    dom.descriptor = Some(DomainDescriptor { d, eps, box_lo: lo.to_vec(), box_hi: hi.to_vec() });
    Ok(dom)
}

impl LatticeDomain {
    /// Domain made of the given integer lattice points (duplicates ignored).
    pub fn from_points(dim: usize, spacing: f64, mut points: Vec<Vec<i64>>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Dimension(dim));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::InvalidDomain(format!("spacing must be positive, got {spacing}")));
        }
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidDomain("point of wrong dimension".into()));
        }
        points.sort();
        points.dedup();
        if points.is_empty() {
            return Err(Error::InvalidDomain("no lattice point in the domain".into()));
        }

        let lookup: HashMap<Vec<i64>, usize> = points.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
        let n = points.len();

        let mut boundary = vec![false; n];
        let mut edges = Vec::new();
        let mut incidence = vec![Vec::new(); n];
        let mut probe = vec![0i64; dim];
        for (v, p) in points.iter().enumerate() {
            probe.copy_from_slice(p);
            for axis in 0..dim {
                for step in [-1i64, 1] {
                    probe[axis] = p[axis] + step;
                    match lookup.get(&probe) {
                        None => boundary[v] = true,
                        Some(&w) if step == 1 => {
                            let e = edges.len();
                            edges.push(Edge { tail: v, head: w, axis });
                            incidence[v].push(Incident { neighbor: w, edge: e, outward: true });
                            incidence[w].push(Incident { neighbor: v, edge: e, outward: false });
                        }
                        Some(_) => {}
                    }
                    probe[axis] = p[axis];
                }
            }
        }
        let interior = (0..n).filter(|&v| !boundary[v]).collect();

        let mut dom = Self {
            dim,
            spacing,
            coords: points.concat(),
            lookup,
            boundary,
            interior,
            edges,
            plaquettes: Vec::new(),
            incidence,
            descriptor: None,
        };
        dom.plaquettes = dom.enumerate_plaquettes();
        Ok(dom)
    }

    /// Lattice points of the bounding box whose physical position satisfies
    /// `inside`.
    pub fn from_predicate<F>(dim: usize, spacing: f64, lo: &[f64], hi: &[f64], inside: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> bool,
    {
        let bbox = build_rect_domain(dim, spacing, lo, hi)?;
        let points =
            (0..bbox.num_vertices()).filter(|&v| inside(&bbox.position(v))).map(|v| bbox.coords(v).to_vec()).collect();
        Self::from_points(dim, spacing, points)
    }

    fn enumerate_plaquettes(&self) -> Vec<Plaquette> {
        let mut out = Vec::new();
        for a in 0..self.dim {
            for b in (a + 1)..self.dim {
                for x in 0..self.num_vertices() {
                    let (Some(xa), Some(xb)) = (self.shift(x, a, 1), self.shift(x, b, 1)) else {
                        continue;
                    };
                    let Some(xab) = self.shift(xa, b, 1) else { continue };
                    let e1 = self.forward_edge(x, a);
                    let e2 = self.forward_edge(xa, b);
                    let e3 = self.forward_edge(xb, a);
                    let e4 = self.forward_edge(x, b);
                    debug_assert_eq!(self.edges[e3].head, xab);
                    out.push(Plaquette {
                        axes: (a, b),
                        anchor: x,
                        edges: [
                            DirectedEdge::forward(e1),
                            DirectedEdge::forward(e2),
                            DirectedEdge::backward(e3),
                            DirectedEdge::backward(e4),
                        ],
                    });
                }
            }
        }
        out
    }

    fn forward_edge(&self, v: usize, axis: usize) -> usize {
        self.incidence[v]
            .iter()
            .find(|inc| inc.outward && self.edges[inc.edge].axis == axis)
            .map(|inc| inc.edge)
            .expect("neighbour present but edge missing")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn descriptor(&self) -> Option<&DomainDescriptor> {
        self.descriptor.as_ref()
    }

    pub fn num_vertices(&self) -> usize {
        self.boundary.len()
    }

    /// Number of canonical (undirected) edges.
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_directed_edges(&self) -> usize {
        2 * self.edges.len()
    }

    pub fn num_plaquettes(&self) -> usize {
        self.plaquettes.len()
    }

    pub fn coords(&self, v: usize) -> &[i64] {
        &self.coords[v * self.dim..(v + 1) * self.dim]
    }

    pub fn position(&self, v: usize) -> Vec<f64> {
        self.coords(v).iter().map(|&k| k as f64 * self.spacing).collect()
    }

    pub fn index_of(&self, coords: &[i64]) -> Option<usize> {
        self.lookup.get(coords).copied()
    }

    /// Neighbour of `v` at `v + step·e_axis`, if it belongs to the domain.
    pub fn shift(&self, v: usize, axis: usize, step: i64) -> Option<usize> {
        let mut c = self.coords(v).to_vec();
        c[axis] += step;
        self.index_of(&c)
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn boundary_vertices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_vertices()).filter(|&v| self.boundary[v])
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> Edge {
        self.edges[e]
    }

    /// Both orientations of every canonical edge.
    pub fn directed_edges(&self) -> impl Iterator<Item = DirectedEdge> + '_ {
        (0..self.edges.len()).flat_map(|e| [DirectedEdge::forward(e), DirectedEdge::backward(e)])
    }

    pub fn tail(&self, de: DirectedEdge) -> usize {
        let e = self.edges[de.edge];
        if de.reversed {
            e.head
        } else {
            e.tail
        }
    }

    pub fn head(&self, de: DirectedEdge) -> usize {
        let e = self.edges[de.edge];
        if de.reversed {
            e.tail
        } else {
            e.head
        }
    }

    pub fn plaquettes(&self) -> &[Plaquette] {
        &self.plaquettes
    }

    /// Corners of a plaquette in traversal order.
    pub fn plaquette_vertices(&self, p: &Plaquette) -> [usize; 4] {
        p.edges.map(|de| self.tail(de))
    }

    pub fn incident(&self, v: usize) -> &[Incident] {
        &self.incidence[v]
    }

    /// The directed edge `(u, v)`, if `u` and `v` are nearest neighbours.
    pub fn edge_between(&self, u: usize, v: usize) -> Option<DirectedEdge> {
        self.incidence[u].iter().find(|inc| inc.neighbor == v).map(Incident::leaving)
    }

    /// Number of connected components of the nearest-neighbour graph.
    pub fn num_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.num_vertices()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut components = self.num_vertices();
        for e in &self.edges {
            let (a, b) = (find(&mut parent, e.tail), find(&mut parent, e.head));
            if a != b {
                parent[a] = b;
                components -= 1;
            }
        }
        components
    }

    /// Dimension of the cycle space, `|E| - |V| + #components`.
    pub fn cycle_rank(&self) -> usize {
        self.num_edges() + self.num_components() - self.num_vertices()
    }

    /// Rank of the plaquette-boundary incidence matrix.
    pub fn plaquette_rank(&self) -> usize {
        let rows = self.plaquettes.iter().map(|p| {
            let mut row: Vec<(usize, u64)> =
                p.edges.iter().map(|de| (de.edge, if de.reversed { MODULUS - 1 } else { 1 })).collect();
            row.sort_unstable_by_key(|&(c, _)| c);
            row
        });
        sparse_rank_mod_p(rows)
    }

    /// Whether every cycle of the edge graph is a combination of plaquette
    /// boundaries.
    pub fn check_simply_connected(&self) -> bool {
        self.plaquette_rank() == self.cycle_rank()
    }

    /// Directed edges tracing a closed vertex cycle `v_0, v_1, …, v_k = v_0`.
    pub fn loop_edges(&self, cycle: &[usize]) -> Result<Vec<DirectedEdge>> {
        let (Some(&start), Some(&end)) = (cycle.first(), cycle.last()) else {
            return Err(Error::Precondition("empty vertex cycle".into()));
        };
        if cycle.len() < 2 || start != end {
            return Err(Error::OpenCycle { start, end });
        }
        cycle.windows(2).map(|w| self.edge_between(w[0], w[1]).ok_or(Error::NotAdjacent(w[0], w[1]))).collect()
    }
}

/// Mersenne prime 2^61 - 1; ranks over GF(p) agree with rational ranks
/// unless p divides a nonzero minor.
const MODULUS: u64 = (1 << 61) - 1;

fn mul_mod(a: u64, b: u64) -> u64 {
    ((a as u128 * b as u128) % MODULUS as u128) as u64
}

fn pow_mod(mut base: u64, mut exp: u64) -> u64 {
    let mut acc = 1;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base);
        }
        base = mul_mod(base, base);
        exp >>= 1;
    }
    acc
}

fn inv_mod(a: u64) -> u64 {
    pow_mod(a, MODULUS - 2)
}

/// Row-reduces sparse rows (sorted by column) and returns the rank.
fn sparse_rank_mod_p(rows: impl Iterator<Item = Vec<(usize, u64)>>) -> usize {
    let mut pivots: HashMap<usize, Vec<(usize, u64)>> = HashMap::new();
    for mut row in rows {
        loop {
            let Some(&(lead, coef)) = row.first() else { break };
            match pivots.get(&lead) {
                Some(pivot) => {
                    // row -= coef * pivot (pivot has unit leading coefficient)
                    let mut merged = Vec::with_capacity(row.len() + pivot.len());
                    let (mut i, mut j) = (0, 0);
                    while i < row.len() || j < pivot.len() {
                        let take_row = j >= pivot.len() || (i < row.len() && row[i].0 < pivot[j].0);
                        let take_piv = i >= row.len() || (j < pivot.len() && pivot[j].0 < row[i].0);
                        if take_row {
                            merged.push(row[i]);
                            i += 1;
                        } else if take_piv {
                            let v = (MODULUS - mul_mod(coef, pivot[j].1)) % MODULUS;
                            merged.push((pivot[j].0, v));
                            j += 1;
                        } else {
                            let v = (row[i].1 + MODULUS - mul_mod(coef, pivot[j].1)) % MODULUS;
                            if v != 0 {
                                merged.push((row[i].0, v));
                            }
                            i += 1;
                            j += 1;
                        }
                    }
                    row = merged;
                }
                None => {
                    let inv = inv_mod(coef);
                    for entry in &mut row {
                        entry.1 = mul_mod(entry.1, inv);
                    }
                    pivots.insert(lead, row);
                    break;
                }
            }
        }
    }
    pivots.len()
}
