//! The deterministic self-similar dendrite in the plane: three contractions,
//! the nested vertex sets `V^n`, and the combinatorial graph on them.

use std::io::Write;

use num_traits::ToPrimitive;

use crate::cascade::{pow3, Address};
use crate::error::{Error, Result};
use crate::format::fmt17;
use crate::scalar::Coord;

pub type Point<T> = (T, T);

/// `F₁(x,y) = ((1-x)/2, y/2)`, `F₂(x,y) = ((1+x)/2, -y/2)`, `F₃(x,y) = (1/2 + cy, cx)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContractionSystem<T> {
    c: T,
}

impl<T: Coord> ContractionSystem<T> {
    pub fn new(c: T) -> Result<Self> {
        if !(c > T::zero() && c < T::half()) {
            return Err(Error::invalid(format!("c = {c:?} not in (0, 1/2)")));
        }
        Ok(ContractionSystem { c })
    }

    pub fn c(&self) -> &T {
        &self.c
    }

    pub fn apply(&self, j: u8, p: &Point<T>) -> Point<T> {
        let (x, y) = p.clone();
        let h = T::half();
        match j {
            1 => ((T::one() - x) * h.clone(), y * h),
            2 => ((T::one() + x) * h.clone(), -(y * h)),
            3 => (h + self.c.clone() * y, self.c.clone() * x),
            _ => panic!("map index {j} not in 1..=3"),
        }
    }

    /// `F_{i₁} ∘ ⋯ ∘ F_{iₙ}(p)`.
    pub fn apply_word(&self, word: Address, p: &Point<T>) -> Point<T> {
        let mut q = p.clone();
        for k in (0..word.len()).rev() {
            q = self.apply(word.letter(k), &q);
        }
        q
    }

    /// `F_{word|depth}((0, 0))`, the depth-`depth` approximation of the projection of `word`.
    pub fn project(&self, word: Address, depth: usize) -> Result<Point<T>> {
        if word.len() < depth {
            return Err(Error::invalid("word shorter than projection depth"));
        }
        Ok(self.apply_word(word.truncate(depth), &(T::zero(), T::zero())))
    }
}

/// How a vertex of `V^n` arose.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VertexLabel {
    /// `(0, 0)` or `(1, 0)`.
    Boundary(u8),
    /// `F_k(1/2, 0)`, shared by the three children of cell `k`.
    Midpoint(Address),
    /// `F_k(1/2, c)`, the free end of child `k3`.
    Tip(Address),
}

/// The tree on `V^n`: vertex `0` is `(0,0)`, vertex `1` is `(1,0)`, and edge
/// `a` joins `F_i(0,0)` to `F_i(1,0)` for the cell `i` with base-3 index `a`.
/// Vertex ids are stable under refinement.
#[derive(Clone, Debug)]
pub struct DendriteGraph<T> {
    level: usize,
    system: ContractionSystem<T>,
    coords: Vec<Point<T>>,
    labels: Vec<VertexLabel>,
    edges: Vec<(usize, usize)>,
}

impl<T: Coord> DendriteGraph<T> {
    pub fn level0(system: ContractionSystem<T>) -> Self {
        DendriteGraph {
            level: 0,
            system,
            coords: vec![(T::zero(), T::zero()), (T::one(), T::zero())],
            labels: vec![VertexLabel::Boundary(0), VertexLabel::Boundary(1)],
            edges: vec![(0, 1)],
        }
    }

    pub fn build(system: ContractionSystem<T>, level: usize) -> Self {
        let mut g = DendriteGraph::level0(system);
        for _ in 0..level {
            g = g.refine();
        }
        g
    }

    /// Replace every edge by a `Y`: midpoint `m_k`, tip `s_k`, and edges
    /// `k1 = (m_k, b₀)`, `k2 = (m_k, b₁)`, `k3 = (m_k, s_k)`.
    pub fn refine(&self) -> Self {
        let n = self.edges.len();
        let mut coords = self.coords.clone();
        let mut labels = self.labels.clone();
        coords.reserve(2 * n);
        labels.reserve(2 * n);
        let mut edges = Vec::with_capacity(3 * n);
        let c = self.system.c.clone();
        let preserving = self.level % 2 == 0;
        for (a, &(b0, b1)) in self.edges.iter().enumerate() {
            let cell = Address::from_index(self.level, a as u64);
            let (x0, y0) = coords[b0].clone();
            let (x1, y1) = coords[b1].clone();
            let (ex, ey) = (x1 - x0.clone(), y1 - y0.clone());
            let h = T::half();
            let m = (x0 + ex.clone() * h.clone(), y0 + ey.clone() * h);
            // image of the unit normal (0,1) under the linear part of F_cell
            let (nx, ny) = if preserving { (-ey, ex) } else { (ey, -ex) };
            let s = (m.0.clone() + c.clone() * nx, m.1.clone() + c.clone() * ny);
            let mi = coords.len();
            coords.push(m);
            labels.push(VertexLabel::Midpoint(cell));
            let si = coords.len();
            coords.push(s);
            labels.push(VertexLabel::Tip(cell));
            edges.push((mi, b0));
            edges.push((mi, b1));
            edges.push((mi, si));
        }
        DendriteGraph {
            level: self.level + 1,
            system: self.system.clone(),
            coords,
            labels,
            edges,
        }
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn system(&self) -> &ContractionSystem<T> {
        &self.system
    }

    pub fn vertex_count(&self) -> usize {
        self.coords.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// `(F_i(0,0), F_i(1,0))` for the cell with base-3 index `a`.
    #[inline]
    pub fn edge(&self, a: usize) -> (usize, usize) {
        self.edges[a]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn coords(&self, v: usize) -> &Point<T> {
        &self.coords[v]
    }

    pub fn label(&self, v: usize) -> VertexLabel {
        self.labels[v]
    }

    pub fn boundary(&self) -> [usize; 2] {
        [0, 1]
    }

    /// Vertices created at level `k` (midpoints and tips of level-`(k-1)` cells).
    pub fn vertices_of_level(&self, k: usize) -> std::ops::Range<usize> {
        if k == 0 {
            0..2
        } else {
            let start = 2 + 2 * ((pow3(k - 1) - 1) / 2) as usize;
            start..start + 2 * pow3(k - 1) as usize
        }
    }

    /// Vertex id of `F_i(0,0)` (`end = 0`) or `F_i(1,0)` (`end = 1`).
    pub fn cell_end(&self, cell: Address, end: u8) -> usize {
        assert_eq!(cell.len(), self.level);
        let e = self.edges[cell.index() as usize];
        if end == 0 {
            e.0
        } else {
            e.1
        }
    }

    /// Is the graph a tree (`V = E + 1` and connected)?
    pub fn is_tree(&self) -> bool {
        let nv = self.vertex_count();
        if nv != self.edge_count() + 1 {
            return false;
        }
        let mut adj = vec![Vec::new(); nv];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; nv];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == nv
    }
}

impl<T: Coord + ToPrimitive> DendriteGraph<T> {
    /// `cell,head,tail,head_x,head_y,tail_x,tail_y`.
    pub fn write_edge_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "cell,head,tail,head_x,head_y,tail_x,tail_y")?;
        let f = |x: &T| fmt17(x.to_f64().unwrap_or(f64::NAN));
        for (a, &(h, t)) in self.edges.iter().enumerate() {
            let cell = Address::from_index(self.level, a as u64);
            let (hx, hy) = &self.coords[h];
            let (tx, ty) = &self.coords[t];
            writeln!(
                out,
                "{cell},{h},{t},{},{},{},{}",
                f(hx),
                f(hy),
                f(tx),
                f(ty)
            )?;
        }
        Ok(())
    }
}
