//! Resistance networks on `V^n`: conductance `H / (l(i) R_i)` on the edge of
//! cell `i`, cell mass `l(i)²` lumped half onto each endpoint.

use std::collections::HashMap;
use std::io::Write;

use crate::cascade::{
    pow3, truncated_perturbation, Address, CascadeTree, PerturbationTable, HEIGHT_SCALE,
    MAX_ADDRESS_LEN,
};
use crate::dendrite::DendriteGraph;
use crate::error::{Error, Result};
use crate::format::fmt17;
use crate::scalar::{Coord, Real};

/// Mass lumping rule recorded in outputs.
pub const LUMPING: &str = "half";

/// Weighted tree with vertex masses. When built from a cascade, edge `a` is
/// the cell with base-3 index `a` at `level`, and ids follow [`DendriteGraph`].
#[derive(Clone, Debug, PartialEq)]
pub struct ResistanceNetwork<T> {
    level: Option<usize>,
    vertex_count: usize,
    edges: Vec<(usize, usize)>,
    conductance: Vec<T>,
    cell_mass: Vec<T>,
    vertex_mass: Vec<T>,
    blocks: Option<BlockIndex>,
}

/// Where the cells below a shallow address sit in a cut-set network.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Block {
    ends: (usize, usize),
    first_edge: usize,
    end_edge: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
struct BlockIndex {
    blocks: HashMap<Address, Block>,
}

impl<T: Real> ResistanceNetwork<T> {
    /// Network from a dendrite graph, a cascade of the same depth and a
    /// perturbation table covering its leaf level.
    pub fn assemble<C: Coord>(
        graph: &DendriteGraph<C>,
        cascade: &CascadeTree,
        table: &PerturbationTable,
    ) -> Result<Self> {
        let n = graph.level();
        if cascade.depth() != n {
            return Err(Error::invalid(format!(
                "graph level {n} differs from cascade depth {}",
                cascade.depth()
            )));
        }
        if table.depth() < n {
            return Err(Error::IncompleteCascade(format!(
                "perturbations cover depth {} < {n}",
                table.depth()
            )));
        }
        let lengths = cascade.level_lengths(n);
        let rs = table.level(n);
        let conductance = lengths
            .iter()
            .zip(rs)
            .map(|(&l, &r)| T::of(HEIGHT_SCALE / (l * r)))
            .collect();
        let cell_mass = lengths.iter().map(|&l| T::of(l * l)).collect();
        Ok(ResistanceNetwork::from_cells(
            Some(n),
            graph.vertex_count(),
            graph.edges().to_vec(),
            conductance,
            cell_mass,
        ))
    }

    /// General constructor: each edge carries a mass split equally onto its endpoints.
    pub fn from_cells(
        level: Option<usize>,
        vertex_count: usize,
        edges: Vec<(usize, usize)>,
        conductance: Vec<T>,
        cell_mass: Vec<T>,
    ) -> Self {
        assert_eq!(edges.len(), conductance.len());
        assert_eq!(edges.len(), cell_mass.len());
        let mut vertex_mass = vec![T::zero(); vertex_count];
        let half = T::of(0.5);
        for (&(a, b), &m) in edges.iter().zip(&cell_mass) {
            vertex_mass[a] += half * m;
            vertex_mass[b] += half * m;
        }
        ResistanceNetwork {
            level,
            vertex_count,
            edges,
            conductance,
            cell_mass,
            vertex_mass,
            blocks: None,
        }
    }

    /// Tree given by parent links (vertex 0 the root, `parent[v] < v` not
    /// required), conductance `1 / length` and explicit vertex masses.
    pub fn from_tree(parent: &[Option<usize>], length: &[f64], mass: &[f64]) -> Result<Self> {
        let nv = parent.len();
        let mut edges = Vec::with_capacity(nv.saturating_sub(1));
        let mut conductance = Vec::with_capacity(nv.saturating_sub(1));
        for v in 0..nv {
            if let Some(p) = parent[v] {
                if !(length[v] > 0.0) {
                    return Err(Error::invalid(format!("edge into {v} has length {}", length[v])));
                }
                edges.push((p, v));
                conductance.push(T::of(1.0 / length[v]));
            }
        }
        let ne = edges.len();
        Ok(ResistanceNetwork {
            level: None,
            vertex_count: nv,
            edges,
            conductance,
            cell_mass: vec![T::zero(); ne],
            vertex_mass: mass.iter().map(|&m| T::of(m)).collect(),
            blocks: None,
        })
    }

    pub fn level(&self) -> Option<usize> {
        self.level
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn conductances(&self) -> &[T] {
        &self.conductance
    }

    pub fn resistance(&self, a: usize) -> T {
        self.conductance[a].recip()
    }

    pub fn cell_masses(&self) -> &[T] {
        &self.cell_mass
    }

    pub fn vertex_masses(&self) -> &[T] {
        &self.vertex_mass
    }

    pub fn total_mass(&self) -> T {
        self.vertex_mass.iter().copied().sum()
    }

    /// Multiply every conductance by `a`.
    pub fn scale_conductances(&mut self, a: T) {
        for c in &mut self.conductance {
            *c *= a;
        }
    }

    /// Multiply every mass by `a`.
    pub fn scale_masses(&mut self, a: T) {
        for m in self.cell_mass.iter_mut().chain(self.vertex_mass.iter_mut()) {
            *m *= a;
        }
    }

    /// Eliminate the vertices of the finest level: tips drop out and
    /// midpoints combine `k1`, `k2` in series. Cell masses of the three
    /// children merge into their parent.
    pub fn trace_to_coarser(&self) -> Result<Self> {
        let n = match self.level {
            Some(n) if n >= 1 => n,
            _ => return Err(Error::invalid("trace needs a cell network of level >= 1")),
        };
        let coarse = pow3(n - 1) as usize;
        let mut edges = Vec::with_capacity(coarse);
        let mut conductance = Vec::with_capacity(coarse);
        let mut cell_mass = Vec::with_capacity(coarse);
        for a in 0..coarse {
            let (k1, k2, k3) = (3 * a, 3 * a + 1, 3 * a + 2);
            edges.push((self.edges[k1].1, self.edges[k2].1));
            let r = self.conductance[k1].recip() + self.conductance[k2].recip();
            conductance.push(r.recip());
            cell_mass.push(self.cell_mass[k1] + self.cell_mass[k2] + self.cell_mass[k3]);
        }
        Ok(ResistanceNetwork::from_cells(
            Some(n - 1),
            coarse + 1,
            edges,
            conductance,
            cell_mass,
        ))
    }

    /// Adjacency lists `(neighbour, edge)`.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.vertex_count];
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            adj[a].push((b, e));
            adj[b].push((a, e));
        }
        adj
    }

    /// Resistance distance from `x` to every vertex (sum of edge resistances).
    pub fn distances_from(&self, x: usize) -> Vec<T> {
        let adj = self.adjacency();
        let mut dist = vec![T::nan(); self.vertex_count];
        dist[x] = T::zero();
        let mut stack = vec![x];
        while let Some(v) = stack.pop() {
            for &(w, e) in &adj[v] {
                if dist[w].is_nan() {
                    dist[w] = dist[v] + self.conductance[e].recip();
                    stack.push(w);
                }
            }
        }
        dist
    }

    /// Effective resistance between two vertices: the path sum on a tree.
    pub fn effective_resistance(&self, x: usize, y: usize) -> Result<T> {
        if x >= self.vertex_count || y >= self.vertex_count {
            return Err(Error::invalid("vertex out of range"));
        }
        if x == y {
            return Ok(T::zero());
        }
        Ok(self.distances_from(x)[y])
    }

    /// Largest effective resistance, by two eccentricity sweeps.
    pub fn diameter(&self) -> T {
        let far = |d: &[T]| {
            d.iter()
                .enumerate()
                .fold((0, T::zero()), |acc, (v, &x)| if x > acc.1 { (v, x) } else { acc })
        };
        let (a, _) = far(&self.distances_from(0));
        far(&self.distances_from(a)).1
    }

    /// Resistance diameters of every cell of every level `k <= n`, indexed
    /// `[k][cell index]`, by merging child cells bottom-up.
    pub fn cell_diameters(&self) -> Result<Vec<Vec<T>>> {
        let n = self.level.ok_or_else(|| Error::invalid("not a cell network"))?;
        // (diameter, eccentricity of head, eccentricity of tail, head-tail resistance)
        let mut cur: Vec<[T; 4]> = self
            .conductance
            .iter()
            .map(|c| {
                let r = c.recip();
                [r, r, r, r]
            })
            .collect();
        let mut out = vec![Vec::new(); n + 1];
        out[n] = cur.iter().map(|s| s[0]).collect();
        for k in (0..n).rev() {
            let next: Vec<[T; 4]> = cur
                .chunks_exact(3)
                .map(|ch| {
                    let [d1, h1, t1, r1] = ch[0];
                    let [d2, h2, t2, r2] = ch[1];
                    let [d3, h3, _, _] = ch[2];
                    let mut e = [h1, h2, h3];
                    e.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    let diam = d1.max(d2).max(d3).max(e[0] + e[1]);
                    let ecc_head = t1.max(r1 + h2.max(h3));
                    let ecc_tail = t2.max(r2 + h1.max(h3));
                    [diam, ecc_head, ecc_tail, r1 + r2]
                })
                .collect();
            out[k] = next.iter().map(|s| s[0]).collect();
            cur = next;
        }
        Ok(out)
    }

    /// The block of cell `cell`, renumbered as a fresh network of level
    /// `n - |cell|`, with conductances multiplied by `scale` and masses divided
    /// by `scale²` (use `scale = l(cell)` to obtain the rescaled copy).
    pub fn cell_network(&self, cell: Address, scale: T) -> Result<Self> {
        let Some(n) = self.level else {
            return self.block_network(cell, scale);
        };
        if cell.len() > n {
            return Err(Error::invalid("cell deeper than the network"));
        }
        let sub = n - cell.len();
        let count = pow3(sub) as usize;
        let first = cell.index() as usize * count;
        let fresh = fresh_topology(sub);
        let s2 = scale * scale;
        let conductance = (0..count).map(|b| self.conductance[first + b] * scale).collect();
        let cell_mass = (0..count).map(|b| self.cell_mass[first + b] / s2).collect();
        Ok(ResistanceNetwork::from_cells(
            Some(sub),
            count + 1,
            fresh,
            conductance,
            cell_mass,
        ))
    }

    /// Cut-set networks: the cells below `cell`, renumbered with the ends of
    /// `cell` as vertices 0 and 1.
    fn block_network(&self, cell: Address, scale: T) -> Result<Self> {
        let index = self
            .blocks
            .as_ref()
            .ok_or_else(|| Error::invalid("not a cell network"))?;
        let b = index
            .blocks
            .get(&cell)
            .ok_or_else(|| Error::invalid(format!("cell {cell} is not indexed")))?;
        let mut ids: HashMap<usize, usize> = HashMap::new();
        ids.insert(b.ends.0, 0);
        ids.insert(b.ends.1, 1);
        let range = b.first_edge..b.end_edge;
        let mut edges = Vec::with_capacity(range.len());
        for &(x, y) in &self.edges[range.clone()] {
            let mut id = |v: usize| {
                let next = ids.len();
                *ids.entry(v).or_insert(next)
            };
            let e = (id(x), id(y));
            edges.push(e);
        }
        let s2 = scale * scale;
        let mut sub = ResistanceNetwork::from_cells(
            None,
            ids.len(),
            edges,
            self.conductance[range.clone()].iter().map(|&c| c * scale).collect(),
            self.cell_mass[range].iter().map(|&m| m / s2).collect(),
        );
        // keep the index of descendants, in the new numbering
        let blocks = index
            .blocks
            .iter()
            .filter(|(a, _)| cell.is_prefix_of(**a))
            .map(|(a, blk)| {
                let k = a.len() - cell.len();
                let shifted = Address::from_index(k, a.index() - cell.index() * pow3(k));
                let block = Block {
                    ends: (ids[&blk.ends.0], ids[&blk.ends.1]),
                    first_edge: blk.first_edge - b.first_edge,
                    end_edge: blk.end_edge - b.first_edge,
                };
                (shifted, block)
            })
            .collect();
        sub.blocks = Some(BlockIndex { blocks });
        Ok(sub)
    }

    /// Number of cells (edges).
    pub fn cell_count(&self) -> usize {
        self.edges.len()
    }

    /// `cell,conductance,head_mass,tail_mass`; the cell column holds the edge
    /// index for networks without cell structure.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "cell,conductance,head_mass,tail_mass")?;
        for (a, &(h, t)) in self.edges.iter().enumerate() {
            let name = match self.level {
                Some(n) => Address::from_index(n, a as u64).to_string(),
                None => a.to_string(),
            };
            writeln!(
                out,
                "{name},{},{},{}",
                fmt17(self.conductance[a].as_f64()),
                fmt17(self.vertex_mass[h].as_f64()),
                fmt17(self.vertex_mass[t].as_f64())
            )?;
        }
        Ok(())
    }

    /// Stiffness matrix in coordinate format, one `row col value` triple per line.
    pub fn write_stiffness_coo<W: Write>(&self, mut out: W) -> Result<()> {
        let mut diag = vec![T::zero(); self.vertex_count];
        for (&(a, b), &c) in self.edges.iter().zip(&self.conductance) {
            diag[a] += c;
            diag[b] += c;
        }
        for (v, d) in diag.iter().enumerate() {
            writeln!(out, "{v} {v} {}", fmt17(d.as_f64()))?;
        }
        for (&(a, b), &c) in self.edges.iter().zip(&self.conductance) {
            writeln!(out, "{a} {b} {}", fmt17(-c.as_f64()))?;
            writeln!(out, "{b} {a} {}", fmt17(-c.as_f64()))?;
        }
        Ok(())
    }

    /// Diagonal mass matrix in coordinate format.
    pub fn write_mass_coo<W: Write>(&self, mut out: W) -> Result<()> {
        for (v, m) in self.vertex_mass.iter().enumerate() {
            writeln!(out, "{v} {v} {}", fmt17(m.as_f64()))?;
        }
        Ok(())
    }
}

/// Edge list of the level-`n` dendrite graph without coordinates.
pub fn fresh_topology(n: usize) -> Vec<(usize, usize)> {
    let mut edges = vec![(0usize, 1usize)];
    let mut next = 2usize;
    for _ in 0..n {
        let mut out = Vec::with_capacity(3 * edges.len());
        for &(b0, b1) in &edges {
            let (m, s) = (next, next + 1);
            next += 2;
            out.push((m, b0));
            out.push((m, b1));
            out.push((m, s));
        }
        edges = out;
    }
    edges
}

/// Assemble directly from the cascade without building coordinates.
pub fn assemble_network<T: Real>(
    cascade: &CascadeTree,
    table: &PerturbationTable,
) -> Result<ResistanceNetwork<T>> {
    let n = cascade.depth();
    if table.depth() < n {
        return Err(Error::IncompleteCascade(format!(
            "perturbations cover depth {} < {n}",
            table.depth()
        )));
    }
    let lengths = cascade.level_lengths(n);
    let rs = table.level(n);
    let conductance = lengths
        .iter()
        .zip(rs)
        .map(|(&l, &r)| T::of(HEIGHT_SCALE / (l * r)))
        .collect();
    let cell_mass = lengths.iter().map(|&l| T::of(l * l)).collect();
    Ok(ResistanceNetwork::from_cells(
        Some(n),
        pow3(n) as usize + 1,
        fresh_topology(n),
        conductance,
        cell_mass,
    ))
}

/// Cut level whose network has on average as many vertices as level `n`
/// (`3^n + 1`): `t = (3/2)(n - 1) ln 3`, every cut cell having
/// `l(i) <= 3^{-(n-1)/2}`. Depth 1 refines the root only; depth 0 keeps it whole.
pub fn cut_level_for_depth(n: usize) -> f64 {
    match n {
        0 => 0.0,
        1 => f64::MIN_POSITIVE,
        _ => 1.5 * (n - 1) as f64 * 3f64.ln(),
    }
}

struct CutWalk<'a, T> {
    cascade: &'a CascadeTree,
    t: f64,
    m: usize,
    index_depth: usize,
    budget: u128,
    next: usize,
    edges: Vec<(usize, usize)>,
    conductance: Vec<T>,
    cell_mass: Vec<T>,
    blocks: HashMap<Address, Block>,
}

impl<T: Real> CutWalk<'_, T> {
    fn visit(&mut self, addr: Address, l: f64, ends: (usize, usize)) -> Result<()> {
        let first_edge = self.edges.len();
        let cut = -3.0 * l.ln() >= self.t * (1.0 - 1e-12) || addr.len() + self.m >= MAX_ADDRESS_LEN;
        if cut {
            if self.edges.len() as u128 >= self.budget {
                return Err(Error::Capacity {
                    what: "cut-set network".into(),
                    needed: self.edges.len() as u128 + 1,
                    budget: self.budget,
                });
            }
            let r = truncated_perturbation(self.cascade, addr, self.m);
            self.edges.push(ends);
            self.conductance.push(T::of(HEIGHT_SCALE / (l * r)));
            self.cell_mass.push(T::of(l * l));
        } else {
            let (mid, tip) = (self.next, self.next + 1);
            self.next += 2;
            let triple = self.cascade.triple(addr);
            let child_ends = [(mid, ends.0), (mid, ends.1), (mid, tip)];
            for j in 1..=3u8 {
                self.visit(addr.child(j), l * triple.weight(j), child_ends[j as usize - 1])?;
            }
        }
        if addr.len() <= self.index_depth {
            let block = Block {
                ends,
                first_edge,
                end_edge: self.edges.len(),
            };
            self.blocks.insert(addr, block);
        }
        Ok(())
    }
}

/// Network on the cut set `Λ_t = {i : -3 ln l(i) >= t > -3 ln l(parent)}`,
/// each cut cell carrying `R_i^{(m)}`. Edges follow lexicographic address
/// order; cells of length `<= index_depth` can be extracted with
/// [`ResistanceNetwork::cell_network`]. Branches are cut at length
/// `MAX_ADDRESS_LEN - m` regardless of `t`.
pub fn assemble_cut_set<T: Real>(
    cascade: &CascadeTree,
    t: f64,
    m: usize,
    index_depth: usize,
    budget: u128,
) -> Result<ResistanceNetwork<T>> {
    if !(t >= 0.0) {
        return Err(Error::invalid("cut level must be >= 0"));
    }
    if m >= MAX_ADDRESS_LEN {
        return Err(Error::invalid("truncation depth too large"));
    }
    let mut walk = CutWalk {
        cascade,
        t,
        m,
        index_depth,
        budget,
        next: 2,
        edges: Vec::new(),
        conductance: Vec::new(),
        cell_mass: Vec::new(),
        blocks: HashMap::new(),
    };
    walk.visit(Address::ROOT, 1.0, (0, 1))?;
    let mut net = ResistanceNetwork::from_cells(
        None,
        walk.next,
        walk.edges,
        walk.conductance,
        walk.cell_mass,
    );
    net.blocks = Some(BlockIndex {
        blocks: walk.blocks,
    });
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::{perturbations, sample_cascade};
    use crate::dendrite::ContractionSystem;
    use approx::assert_relative_eq;

    fn cut_network(n: usize, seed: u64) -> (CascadeTree, ResistanceNetwork<f64>) {
        let c = sample_cascade(n.saturating_sub(1), seed, 1 << 24).unwrap();
        let net = assemble_cut_set(&c, cut_level_for_depth(n), 3, 2, 1 << 24).unwrap();
        (c, net)
    }

    #[test]
    fn cut_set_network_matches_cut_set() {
        let c = sample_cascade(14, 21, 1 << 26).unwrap();
        for t in [0.5, 2.0, 6.0] {
            let net: ResistanceNetwork<f64> = assemble_cut_set(&c, t, 2, 1, 1 << 24).unwrap();
            let cut = crate::cascade::cut_set(&c, t).unwrap();
            assert_eq!(net.cell_count(), cut.len());
            assert_eq!(net.vertex_count(), net.cell_count() + 1);
            assert_relative_eq!(net.total_mass(), 1.0, epsilon = 1e-12);
            let eps = (-t / 3.0).exp();
            let mut masses: Vec<f64> = cut.iter().map(|&a| c.l(a) * c.l(a)).collect();
            let mut got = net.cell_masses().to_vec();
            masses.sort_by(f64::total_cmp);
            got.sort_by(f64::total_cmp);
            assert_eq!(masses, got);
            assert!(got.iter().all(|&m| m.sqrt() <= eps * (1.0 + 1e-9)));
        }
    }

    #[test]
    fn cut_set_depth_mapping() {
        assert_eq!(cut_network(0, 1).1.vertex_count(), 2);
        assert_eq!(cut_network(1, 1).1.vertex_count(), 4);
        // sizes average 3^n + 1
        let mean = (0..200).map(|s| cut_network(3, s).1.vertex_count() as f64).sum::<f64>() / 200.0;
        assert!((mean - 28.0).abs() < 1.5, "{mean}");
    }

    #[test]
    fn uniform_cut_set_is_a_level() {
        let c = CascadeTree::uniform(0);
        let t = 1.5 * 4.0 * 3f64.ln() * (1.0 - 1e-9);
        let cut: ResistanceNetwork<f64> = assemble_cut_set(&c, t, 0, 0, 1 << 20).unwrap();
        let level: ResistanceNetwork<f64> =
            assemble_network(&CascadeTree::uniform(4), &perturbations(&CascadeTree::uniform(4), 0)).unwrap();
        assert_eq!(cut.vertex_count(), level.vertex_count());
        for (a, b) in cut.conductances().iter().zip(level.conductances()) {
            assert_relative_eq!(*a, *b, max_relative = 1e-12);
        }
        let mut da = cut.distances_from(0);
        let mut db = level.distances_from(0);
        da.sort_by(f64::total_cmp);
        db.sort_by(f64::total_cmp);
        for (a, b) in da.iter().zip(&db) {
            assert_relative_eq!(*a, *b, max_relative = 1e-12);
        }
    }

    #[test]
    fn cut_set_blocks() {
        let (c, net) = cut_network(6, 3);
        let whole = net.cell_network(Address::ROOT, 1.0).unwrap();
        assert_eq!(whole.vertex_count(), net.vertex_count());
        assert_eq!(whole.conductances(), net.conductances());
        let mut cells = 0;
        let mut mass = 0.0;
        for j in 1..=3u8 {
            let a = Address::ROOT.child(j);
            let w = c.w(a);
            let b = net.cell_network(a, w).unwrap();
            cells += b.cell_count();
            mass += b.total_mass() * w * w;
            // rescaled block has unit mass and its ends are 0 and 1
            assert_relative_eq!(b.total_mass(), 1.0, epsilon = 1e-9);
            let grand = b.cell_network(Address::ROOT.child(2), 1.0).unwrap();
            let direct = net.cell_network(a.child(2), w).unwrap();
            assert_eq!(grand.vertex_count(), direct.vertex_count());
        }
        assert_eq!(cells, net.cell_count());
        assert_relative_eq!(mass, 1.0, epsilon = 1e-12);
        assert!(net.cell_network(Address::new(&[1, 1, 1]).unwrap(), 1.0).is_err());
    }

    fn graph(n: usize) -> DendriteGraph<f64> {
        DendriteGraph::build(ContractionSystem::new(0.25).unwrap(), n)
    }

    #[test]
    fn level_zero_network() {
        let c = sample_cascade(0, 4, 1 << 20).unwrap();
        let t = perturbations(&c, 10);
        let net: ResistanceNetwork<f64> = ResistanceNetwork::assemble(&graph(0), &c, &t).unwrap();
        let r = t.value(Address::ROOT);
        assert_relative_eq!(net.conductances()[0], HEIGHT_SCALE / r, max_relative = 1e-15);
        assert_eq!(net.vertex_masses(), &[0.5, 0.5]);
        assert_relative_eq!(net.effective_resistance(0, 1).unwrap(), r / HEIGHT_SCALE, max_relative = 1e-15);
        assert_relative_eq!(net.diameter(), r / HEIGHT_SCALE, max_relative = 1e-15);
    }

    #[test]
    fn missing_perturbations_are_reported() {
        let c = sample_cascade(3, 4, 1 << 20).unwrap();
        let t = perturbations(&c.truncated(2), 4);
        let r: Result<ResistanceNetwork<f64>> = ResistanceNetwork::assemble(&graph(3), &c, &t);
        assert!(matches!(r, Err(Error::IncompleteCascade(_))));
    }

    #[test]
    fn uniform_cascade_resistances() {
        let n = 3;
        let c = CascadeTree::uniform(n);
        let t = perturbations(&c, 0);
        let net: ResistanceNetwork<f64> = ResistanceNetwork::assemble(&graph(n), &c, &t).unwrap();
        for a in 0..net.edges().len() {
            assert_relative_eq!(net.resistance(a), 3f64.powf(-1.5) / HEIGHT_SCALE, max_relative = 1e-14);
        }
        assert_relative_eq!(net.total_mass(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn direct_assembly_matches_graph_assembly() {
        let c = sample_cascade(4, 2, 1 << 20).unwrap();
        let t = PerturbationTable::anchored(&c, 3);
        let a: ResistanceNetwork<f64> = ResistanceNetwork::assemble(&graph(4), &c, &t).unwrap();
        let b: ResistanceNetwork<f64> = assemble_network(&c, &t).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trace_is_compatible_with_coarse_assembly() {
        let c = sample_cascade(5, 7, 1 << 20).unwrap();
        let t = PerturbationTable::anchored(&c, 4);
        let fine: ResistanceNetwork<f64> = assemble_network(&c, &t).unwrap();
        let traced = fine.trace_to_coarser().unwrap();
        let coarse: ResistanceNetwork<f64> = assemble_network(&c.truncated(4), &t).unwrap();
        assert_eq!(traced.edges(), coarse.edges());
        for (x, y) in traced.conductances().iter().zip(coarse.conductances()) {
            assert_relative_eq!(*x, *y, max_relative = 1e-12);
        }
        for (x, y) in traced.vertex_masses().iter().zip(coarse.vertex_masses()) {
            assert_relative_eq!(*x, *y, max_relative = 1e-12);
        }
        // boundary resistance is unchanged by the trace
        assert_relative_eq!(
            fine.effective_resistance(0, 1).unwrap(),
            traced.effective_resistance(0, 1).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn effective_resistance_is_additive_on_paths() {
        let c = sample_cascade(4, 3, 1 << 20).unwrap();
        let net: ResistanceNetwork<f64> = assemble_network(&c, &perturbations(&c, 5)).unwrap();
        // the midpoint of the root cell (vertex 2) separates 0 and 1
        let r01 = net.effective_resistance(0, 1).unwrap();
        let r02 = net.effective_resistance(0, 2).unwrap();
        let r21 = net.effective_resistance(2, 1).unwrap();
        assert_relative_eq!(r01, r02 + r21, max_relative = 1e-13);
        assert_eq!(net.effective_resistance(5, 5).unwrap(), 0.0);
    }

    #[test]
    fn cell_diameters_match_brute_force() {
        let c = sample_cascade(4, 13, 1 << 20).unwrap();
        let net: ResistanceNetwork<f64> = assemble_network(&c, &perturbations(&c, 3)).unwrap();
        let dp = net.cell_diameters().unwrap();
        assert_relative_eq!(dp[0][0], net.diameter(), max_relative = 1e-12);
        for k in 1..=2 {
            for a in 0..pow3(k) {
                let sub = net.cell_network(Address::from_index(k, a), 1.0).unwrap();
                assert_relative_eq!(dp[k][a as usize], sub.diameter(), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn rescaled_cell_is_fresh_network_of_subtree() {
        let c = sample_cascade(5, 21, 1 << 20).unwrap();
        let t = PerturbationTable::anchored(&c, 3);
        let net: ResistanceNetwork<f64> = assemble_network(&c, &t).unwrap();
        for j in 1..=3u8 {
            let cell = Address::ROOT.child(j);
            let block = net.cell_network(cell, c.l(cell)).unwrap();
            let fresh: ResistanceNetwork<f64> =
                assemble_network(&c.subtree(cell), &t.subtree(cell)).unwrap();
            assert_eq!(block.edges(), fresh.edges());
            for (x, y) in block.conductances().iter().zip(fresh.conductances()) {
                assert_relative_eq!(*x, *y, max_relative = 1e-12);
            }
            for (x, y) in block.vertex_masses().iter().zip(fresh.vertex_masses()) {
                assert_relative_eq!(*x, *y, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn exports_have_expected_shape() {
        let c = sample_cascade(1, 1, 1 << 20).unwrap();
        let net: ResistanceNetwork<f32> = assemble_network(&c, &perturbations(&c, 2)).unwrap();
        let mut csv = Vec::new();
        net.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 4);
        let mut coo = Vec::new();
        net.write_stiffness_coo(&mut coo).unwrap();
        assert_eq!(String::from_utf8(coo).unwrap().lines().count(), 4 + 6);
    }
}
