//! Betti numbers over Z/2 and Euler characteristics.
//!
//! The production path reduces coboundary matrices dimension by dimension with
//! the clearing optimization: the pivots found in dimension k are exactly the
//! (k+1)-simplices whose columns would reduce to zero, so they are skipped.
//! Dimension 0 is handled by union-find. `BoundaryMatrix` is a direct,
//! unoptimized reduction kept as an independent check.

use thiserror::Error;

use crate::cech::{build_cech, CechError, SimplicialComplex};
use crate::sampling::PointCloud;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HomologyError {
    #[error("beta_{requested} needs simplices of dimension {needed}, complex only built to {built}")]
    InsufficientDimension { requested: usize, needed: usize, built: usize },
}

/// Filtration key of a simplex: its value, then its index. Values are
/// nonnegative, so their bit patterns order like the numbers.
type Key = (u64, u32);

const NO_KEY: Key = (u64::MAX, u32::MAX);

#[inline]
fn key(c: &SimplicialComplex, k: usize, i: usize) -> Key {
    (c.value(k, i).to_bits(), i as u32)
}

/// k-simplex indices in increasing filtration order.
fn filtration_order(c: &SimplicialComplex, k: usize) -> Vec<u32> {
    let mut keyed: Vec<Key> = (0..c.count(k)).map(|i| key(c, k, i)).collect();
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, i)| i).collect()
}

struct DisjointSets {
    parent: Vec<u32>,
}

impl DisjointSets {
    fn new(n: usize) -> DisjointSets {
        DisjointSets { parent: (0..n as u32).collect() }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let up = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = up;
            x = up;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi as usize] = lo;
        true
    }
}

/// Number of connected components of the 1-skeleton.
pub fn connected_components(c: &SimplicialComplex) -> usize {
    let mut sets = DisjointSets::new(c.n_vertices());
    let mut comps = c.n_vertices();
    if c.max_dim() >= 1 {
        for e in c.iter(1) {
            if sets.union(e[0], e[1]) {
                comps -= 1;
            }
        }
    }
    comps
}

/// Coboundary columns from k- to (k+1)-simplices, generated on demand from
/// common neighbors of the vertices.
struct Coboundary<'a> {
    c: &'a SimplicialComplex,
    k: usize,
    adj: Vec<Vec<u32>>,
}

impl<'a> Coboundary<'a> {
    fn new(c: &'a SimplicialComplex, k: usize) -> Coboundary<'a> {
        let mut adj = vec![Vec::new(); c.n_vertices()];
        for e in c.iter(1) {
            adj[e[0] as usize].push(e[1]);
            adj[e[1] as usize].push(e[0]);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        Coboundary { c, k, adj }
    }

    fn column(&self, sigma: usize, out: &mut Vec<Key>) {
        out.clear();
        let s = self.c.simplex(self.k, sigma);
        let mut common = self.adj[s[0] as usize].clone();
        for &v in &s[1..] {
            let list = &self.adj[v as usize];
            common.retain(|w| list.binary_search(w).is_ok());
        }
        let mut up = Vec::with_capacity(self.k + 2);
        for w in common {
            up.clear();
            up.extend_from_slice(s);
            let at = up.partition_point(|&v| v < w);
            up.insert(at, w);
            if let Some(t) = self.c.find(&up) {
                out.push(key(self.c, self.k + 1, t));
            }
        }
        out.sort_unstable();
    }
}

/// Smallest cofacet key of every k-simplex, in one pass over the (k+1)-simplices.
///
/// The pass walks the prefix tree, so each facet lookup starts from the
/// ancestor it shares with the current simplex.
fn min_cofacets(c: &SimplicialComplex, k: usize) -> Vec<Key> {
    let mut best = vec![NO_KEY; c.count(k)];
    if c.count(k + 1) == 0 {
        return best;
    }
    let mut anc = vec![0usize; k + 2];
    for v in 0..c.n_vertices() {
        anc[0] = v;
        cofacet_walk(c, 1, k + 1, &mut anc, &mut best);
    }
    best
}

fn cofacet_walk(c: &SimplicialComplex, level: usize, top: usize, anc: &mut [usize], best: &mut [Key]) {
    for t in c.child_range(level, anc[level - 1]) {
        anc[level] = t;
        if level < top {
            cofacet_walk(c, level + 1, top, anc, best);
            continue;
        }
        let kt = key(c, top, t);
        let s = c.simplex(top, t);
        for skip in 0..=top {
            let f = if skip == top {
                Some(anc[top - 1])
            } else if skip == 0 {
                c.descend(0, s[1] as usize, &s[2..])
            } else {
                c.descend(skip - 1, anc[skip - 1], &s[skip + 1..])
            };
            let f = f.expect("complex is not closed under faces");
            if kt < best[f] {
                best[f] = kt;
            }
        }
    }
}

fn symmetric_difference(a: &[Key], b: &[Key], out: &mut Vec<Key>) {
    out.clear();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
}

const NONE: u32 = u32::MAX;

/// Reduces the coboundary matrix from k- to (k+1)-simplices with pivots at
/// the smallest key. Returns the number of non-cleared columns that vanish
/// (that is, β_k) and the cleared set for the next dimension, indexed by (k+1)-simplex.
///
/// Most columns are paired without any arithmetic: when the smallest cofacet
/// is not yet a pivot it becomes one directly. Full columns are generated
/// only when a reduction is needed.
fn reduce_coboundary(c: &SimplicialComplex, k: usize, cleared: &[bool]) -> (usize, Vec<bool>) {
    let best = min_cofacets(c, k);
    let cob = Coboundary::new(c, k);
    let n_up = c.count(k + 1);

    // pivot (k+1)-simplex -> (owning column, slot in `stored` or NONE)
    let mut owner: Vec<(u32, u32)> = vec![(NONE, NONE); n_up];
    let mut stored: Vec<Vec<Key>> = Vec::new();
    let mut next_cleared = vec![false; n_up];
    let mut zeros = 0;
    let mut work = Vec::new();
    let mut scratch = Vec::new();

    // The pivot set does not depend on the column order. Storage order keeps
    // consecutive columns spatially close, which cuts fill-in a lot compared
    // with walking down the filtration.
    for sigma in 0..c.count(k) {
        if cleared[sigma] {
            continue;
        }
        let p = best[sigma];
        if p == NO_KEY {
            zeros += 1;
            continue;
        }
        if owner[p.1 as usize].0 == NONE {
            owner[p.1 as usize] = (sigma as u32, NONE);
            next_cleared[p.1 as usize] = true;
            continue;
        }
        cob.column(sigma, &mut work);
        loop {
            let Some(&p) = work.first() else {
                zeros += 1;
                break;
            };
            let (other, slot) = owner[p.1 as usize];
            if other == NONE {
                owner[p.1 as usize] = (sigma as u32, stored.len() as u32);
                stored.push(std::mem::take(&mut work));
                next_cleared[p.1 as usize] = true;
                break;
            }
            let slot = if slot == NONE {
                // an unreduced column: materialize it once
                let mut col = Vec::new();
                cob.column(other as usize, &mut col);
                stored.push(col);
                let slot = (stored.len() - 1) as u32;
                owner[p.1 as usize].1 = slot;
                slot
            } else {
                slot
            };
            symmetric_difference(&work, &stored[slot as usize], &mut scratch);
            std::mem::swap(&mut work, &mut scratch);
        }
    }
    (zeros, next_cleared)
}

/// β_0..=β_max_k of the complex over Z/2.
pub fn betti_numbers(c: &SimplicialComplex, max_k: usize) -> Result<Vec<usize>, HomologyError> {
    if max_k >= c.max_dim() {
        return Err(HomologyError::InsufficientDimension {
            requested: max_k,
            needed: max_k + 1,
            built: c.max_dim(),
        });
    }
    let mut betti = Vec::with_capacity(max_k + 1);
    // dimension 0: Kruskal over edges in filtration order; merging edges are
    // exactly the pivots of the vertex coboundary reduction
    let edge_order = filtration_order(c, 1);
    let mut sets = DisjointSets::new(c.n_vertices());
    let mut cleared = vec![false; c.count(1)];
    let mut comps = c.n_vertices();
    for &e in &edge_order {
        let s = c.simplex(1, e as usize);
        if sets.union(s[0], s[1]) {
            cleared[e as usize] = true;
            comps -= 1;
        }
    }
    betti.push(comps);
    for k in 1..=max_k {
        let (b, next) = reduce_coboundary(c, k, &cleared);
        betti.push(b);
        cleared = next;
    }
    Ok(betti)
}

/// Alternating sum of face counts.
pub fn euler_characteristic(c: &SimplicialComplex) -> i64 {
    c.face_counts()
        .iter()
        .enumerate()
        .map(|(k, &f)| if k % 2 == 0 { f as i64 } else { -(f as i64) })
        .sum()
}

/// Whether the Čech complex of `points` at radius `eps` has β_k = 1, where
/// `points` has k+2 entries.
pub fn is_nontrivial_k_cycle(points: &[Vec<f64>], eps: f64) -> Result<bool, CechError> {
    assert!(points.len() >= 3, "need k+2 points with k >= 1");
    let k = points.len() - 2;
    let cloud = PointCloud::euclidean(points);
    let c = build_cech(&cloud, eps, k + 1)?;
    let betti = betti_numbers(&c, k).expect("built to k+1");
    Ok(betti[k] == 1)
}

/// Mod-2 boundary map from k-simplices to (k-1)-simplices, one sparse column
/// (sorted row indices) per k-simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMatrix {
    pub k: usize,
    pub n_rows: usize,
    pub columns: Vec<Vec<u32>>,
}

impl BoundaryMatrix {
    pub fn new(c: &SimplicialComplex, k: usize) -> BoundaryMatrix {
        assert!(k >= 1 && k <= c.max_dim());
        let mut columns = Vec::with_capacity(c.count(k));
        let mut face = Vec::with_capacity(k);
        for s in c.iter(k) {
            let mut col = Vec::with_capacity(k + 1);
            for skip in 0..=k {
                face.clear();
                face.extend(s.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, &v)| v));
                col.push(c.find(&face).expect("complex is not closed under faces") as u32);
            }
            col.sort_unstable();
            columns.push(col);
        }
        BoundaryMatrix { k, n_rows: c.count(k - 1), columns }
    }

    /// Rank over Z/2 by left-to-right column reduction on dense bit rows.
    pub fn rank(&self) -> usize {
        let words = self.n_rows.div_ceil(64).max(1);
        let mut by_low: std::collections::HashMap<usize, Vec<u64>> = Default::default();
        let mut rank = 0;
        for col in &self.columns {
            let mut bits = vec![0u64; words];
            for &r in col {
                bits[r as usize / 64] ^= 1 << (r % 64);
            }
            loop {
                let low = (0..words).rev().find(|&w| bits[w] != 0).map(|w| w * 64 + 63 - bits[w].leading_zeros() as usize);
                let Some(low) = low else { break };
                match by_low.get(&low) {
                    Some(other) => {
                        for (a, b) in bits.iter_mut().zip(other) {
                            *a ^= b;
                        }
                    }
                    None => {
                        by_low.insert(low, bits);
                        rank += 1;
                        break;
                    }
                }
            }
        }
        rank
    }

    /// Whether `self ∘ upper` vanishes, where `upper` maps (k+1)- to k-chains.
    pub fn composes_to_zero(&self, upper: &BoundaryMatrix) -> bool {
        assert_eq!(upper.k, self.k + 1);
        upper.columns.iter().all(|col| {
            let mut counts: std::collections::BTreeMap<u32, u32> = Default::default();
            for &f in col {
                for &g in &self.columns[f as usize] {
                    *counts.entry(g).or_default() += 1;
                }
            }
            counts.values().all(|c| c % 2 == 0)
        })
    }
}

/// Betti numbers from the ranks of plain boundary matrices.
pub fn betti_numbers_naive(c: &SimplicialComplex, max_k: usize) -> Result<Vec<usize>, HomologyError> {
    if max_k >= c.max_dim() {
        return Err(HomologyError::InsufficientDimension {
            requested: max_k,
            needed: max_k + 1,
            built: c.max_dim(),
        });
    }
    let ranks: Vec<usize> = (0..=max_k + 1).map(|k| if k == 0 { 0 } else { BoundaryMatrix::new(c, k).rank() }).collect();
    Ok((0..=max_k).map(|k| c.count(k) - ranks[k] - ranks[k + 1]).collect())
}
