//! Eigenvalue counting for `L f = λ M f` on tree networks.
//!
//! `N(λ)` is the number of non-positive pivots of `L - λ(1+ε)M` (Sylvester's
//! law of inertia), `ε = 1e-12`; for `λ <= 0` it is read off the nullity. Eliminating vertices
//! leaves-first produces no fill, so each count is one linear pass.

use std::io::Write;

use crate::cascade::{Address, CascadeTree};
use crate::error::{Error, Result};
use crate::format::fmt17;
use crate::forms::ResistanceNetwork;
use crate::oracle;
use crate::scalar::Real;

const NONE: u32 = u32::MAX;

/// Boundary condition on the vertex set of a network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Boundary {
    Neumann,
    /// Values forced to zero on the listed vertices.
    Dirichlet(Vec<usize>),
}

impl Boundary {
    /// Dirichlet condition on `V⁰ = {0, 1}`.
    pub fn dirichlet() -> Self {
        Boundary::Dirichlet(vec![0, 1])
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Boundary::Neumann => "neumann",
            Boundary::Dirichlet(_) => "dirichlet",
        }
    }

    fn removed(&self) -> &[usize] {
        match self {
            Boundary::Neumann => &[],
            Boundary::Dirichlet(v) => v,
        }
    }
}

/// Stiffness and mass of a tree network, stored in a leaves-first
/// elimination order (every vertex precedes its parent).
#[derive(Clone, Debug)]
pub struct Pencil<T> {
    diag: Vec<T>,
    mass: Vec<T>,
    parent: Vec<u32>,
    coupling2: Vec<T>,
    nullity: usize,
    scale: T,
    nudge: T,
    boundary: Boundary,
}

impl<T: Real> Pencil<T> {
    pub fn new(net: &ResistanceNetwork<T>, boundary: Boundary) -> Result<Self> {
        let nv = net.vertex_count();
        let mut removed = vec![false; nv];
        for &v in boundary.removed() {
            if v >= nv {
                return Err(Error::invalid(format!("boundary vertex {v} out of range")));
            }
            removed[v] = true;
        }
        if let Some(m) = net.vertex_masses().iter().find(|m| !(**m >= T::zero())) {
            return Err(Error::invalid(format!("negative vertex mass {m}")));
        }
        let adj = net.adjacency();
        let cond = net.conductances();
        let dim = removed.iter().filter(|r| !**r).count();

        // breadth-first forest over the free vertices
        let mut bfs = Vec::with_capacity(dim);
        let mut bfs_parent: Vec<(usize, usize)> = Vec::with_capacity(dim);
        let mut seen = removed.clone();
        let mut nullity = 0;
        for root in 0..nv {
            if seen[root] {
                continue;
            }
            seen[root] = true;
            let start = bfs.len();
            bfs.push(root);
            bfs_parent.push((usize::MAX, usize::MAX));
            let mut head = start;
            let mut grounded = false;
            while head < bfs.len() {
                let v = bfs[head];
                head += 1;
                for &(w, e) in &adj[v] {
                    grounded |= removed[w];
                    if !seen[w] {
                        seen[w] = true;
                        bfs.push(w);
                        bfs_parent.push((v, e));
                    }
                }
            }
            if !grounded {
                nullity += 1;
            }
        }
        let mut pos = vec![usize::MAX; nv];
        for (i, &v) in bfs.iter().enumerate() {
            pos[v] = dim - 1 - i;
        }
        let mut diag = vec![T::zero(); dim];
        let mut mass = vec![T::zero(); dim];
        let mut parent = vec![NONE; dim];
        let mut coupling2 = vec![T::zero(); dim];
        for (i, &v) in bfs.iter().enumerate() {
            let p = dim - 1 - i;
            diag[p] = adj[v].iter().map(|&(_, e)| cond[e]).sum();
            mass[p] = net.vertex_masses()[v];
            let (pv, e) = bfs_parent[i];
            if pv != usize::MAX {
                parent[p] = pos[pv] as u32;
                coupling2[p] = cond[e] * cond[e];
            }
        }
        let sd: T = diag.iter().copied().sum();
        let sm: T = mass.iter().copied().sum();
        let scale = if sm > T::zero() && sd > T::zero() { sd / sm } else { T::one() };
        let nudge = T::of(1e-12).max(T::of(16.0) * T::epsilon());
        Ok(Pencil {
            diag,
            mass,
            parent,
            coupling2,
            nullity,
            scale,
            nudge,
            boundary,
        })
    }

    /// Number of free vertices.
    pub fn dimension(&self) -> usize {
        self.diag.len()
    }

    pub fn boundary(&self) -> &Boundary {
        &self.boundary
    }

    /// Multiplicity of the eigenvalue 0.
    pub fn nullity(&self) -> usize {
        self.nullity
    }

    /// `Σ diag(L) / Σ M`.
    pub fn scale(&self) -> T {
        self.scale
    }

    /// Multiply every mass by `a`.
    pub fn scale_masses(&mut self, a: T) {
        for m in &mut self.mass {
            *m *= a;
        }
        self.scale /= a;
    }

    /// Number of non-positive pivots of `L - σM`: the eigenvalues below `σ`,
    /// plus those equal to it when the arithmetic lands exactly on zero.
    pub fn count_shift(&self, sigma: T) -> usize {
        let mut d: Vec<T> = self
            .diag
            .iter()
            .zip(&self.mass)
            .map(|(&a, &m)| a - sigma * m)
            .collect();
        let tiny = T::min_positive_value();
        let mut negative = 0;
        for p in 0..d.len() {
            let mut piv = d[p];
            if piv == T::zero() {
                piv = -tiny;
            }
            if piv < T::zero() {
                negative += 1;
            }
            let q = self.parent[p];
            if q != NONE {
                d[q as usize] -= self.coupling2[p] / piv;
            }
        }
        negative
    }

    /// `N(λ)`: eigenvalues `<= λ` with multiplicity.
    pub fn count_below(&self, lambda: T) -> usize {
        if lambda < T::zero() {
            0
        } else if lambda == T::zero() {
            self.nullity
        } else {
            self.count_shift(lambda * (T::one() + self.nudge))
        }
    }

    /// Counting curve on a grid.
    pub fn counting_curve(&self, lambdas: &[f64]) -> CountingCurve {
        CountingCurve {
            lambdas: lambdas.to_vec(),
            counts: lambdas.iter().map(|&l| self.count_below(T::of(l)) as u64).collect(),
            boundary: self.boundary.tag().to_string(),
        }
    }
}

/// Dense eigenvalues of a small network, for cross-checks.
pub fn dense_eigenvalues<T: Real>(net: &ResistanceNetwork<T>, boundary: &Boundary) -> Result<Vec<T>> {
    let edges: Vec<(usize, usize, T)> = net
        .edges()
        .iter()
        .zip(net.conductances())
        .map(|(&(a, b), &c)| (a, b, c))
        .collect();
    oracle::pencil_eigenvalues(net.vertex_count(), &edges, net.vertex_masses(), boundary.removed())
}

/// `N(λ)` sampled on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CountingCurve {
    pub lambdas: Vec<f64>,
    pub counts: Vec<u64>,
    pub boundary: String,
}

impl CountingCurve {
    pub fn is_monotone(&self) -> bool {
        self.counts.windows(2).all(|w| w[0] <= w[1])
    }

    /// `lambda,count,boundary` rows.
    pub fn write_csv<W: Write>(&self, mut out: W, header: bool) -> Result<()> {
        if header {
            writeln!(out, "lambda,count,boundary")?;
        }
        for (l, c) in self.lambdas.iter().zip(&self.counts) {
            writeln!(out, "{},{c},{}", fmt17(*l), self.boundary)?;
        }
        Ok(())
    }
}

/// `points` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && points >= 2) {
        return Err(Error::invalid("log grid needs 0 < lo < hi and at least 2 points"));
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..points)
        .map(|k| {
            if k + 1 == points {
                hi
            } else {
                (a + (b - a) * k as f64 / (points - 1) as f64).exp()
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Smallest Dirichlet eigenvalue
// ---------------------------------------------------------------------------

/// Smallest Dirichlet eigenvalue and the resistance diameter it is compared with.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirichletFloor {
    pub lambda: f64,
    pub diameter: f64,
}

impl DirichletFloor {
    /// `λ₁ · diam >= 1`.
    pub fn bound_holds(&self) -> bool {
        self.lambda * self.diameter >= 1.0
    }
}

/// First eigenvalue of a pencil to relative accuracy `rtol`; `None` when the
/// pencil has no degrees of freedom.
pub fn smallest_eigenvalue<T: Real>(pencil: &Pencil<T>, rtol: f64) -> Option<f64> {
    if pencil.dimension() == 0 {
        return None;
    }
    let count = |x: f64| pencil.count_below(T::of(x));
    if pencil.nullity() >= 1 {
        return Some(0.0);
    }
    let mut hi = pencil.scale().as_f64().max(f64::MIN_POSITIVE);
    while count(hi) == 0 {
        hi *= 2.0;
    }
    let mut lo = hi;
    while lo > f64::MIN_POSITIVE && count(lo) >= 1 {
        lo *= 0.5;
    }
    while hi - lo > rtol * hi {
        let mid = (lo * hi).sqrt();
        if count(mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Smallest Dirichlet eigenvalue on `V⁰` of a network, with its diameter.
pub fn dirichlet_floor<T: Real>(net: &ResistanceNetwork<T>) -> Result<DirichletFloor> {
    let pencil = Pencil::new(net, Boundary::dirichlet())?;
    let lambda = smallest_eigenvalue(&pencil, 1e-12)
        .ok_or_else(|| Error::invalid("Dirichlet problem has no free vertices"))?;
    Ok(DirichletFloor {
        lambda,
        diameter: net.diameter().as_f64(),
    })
}

// ---------------------------------------------------------------------------
// Bracketing against first-generation cells
// ---------------------------------------------------------------------------

/// The four counts of the bracketing chains at one `λ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BracketingReport {
    pub sum_cells_dirichlet: usize,
    pub dirichlet: usize,
    pub neumann: usize,
    pub sum_cells_neumann: usize,
}

impl BracketingReport {
    /// `Σ N_i^D(λw(i)³) <= N^D(λ) <= N^N(λ) <= Σ N_i^N(λw(i)³)`.
    pub fn chain_holds(&self) -> bool {
        self.sum_cells_dirichlet <= self.dirichlet
            && self.dirichlet <= self.neumann
            && self.neumann <= self.sum_cells_neumann
    }

    /// `N^D(λ) <= N^N(λ) <= N^D(λ) + 2`.
    pub fn gap_holds(&self) -> bool {
        self.dirichlet <= self.neumann && self.neumann <= self.dirichlet + 2
    }
}

/// Pencils for the whole network and for its three rescaled first-generation cells.
pub struct Bracketing<T> {
    dirichlet: Pencil<T>,
    neumann: Pencil<T>,
    cells_dirichlet: Vec<Pencil<T>>,
    cells_neumann: Vec<Pencil<T>>,
    w3: [f64; 3],
}

impl<T: Real> Bracketing<T> {
    pub fn new(net: &ResistanceNetwork<T>, cascade: &CascadeTree) -> Result<Self> {
        if net.level() == Some(0) || net.cell_count() < 3 {
            return Err(Error::invalid("bracketing needs a refined cell network"));
        }
        let mut cells_dirichlet = Vec::with_capacity(3);
        let mut cells_neumann = Vec::with_capacity(3);
        let mut w3 = [0.0; 3];
        for j in 1..=3u8 {
            let cell = Address::ROOT.child(j);
            let w = cascade.w(cell);
            w3[j as usize - 1] = w * w * w;
            let sub = net.cell_network(cell, T::of(w))?;
            cells_dirichlet.push(Pencil::new(&sub, Boundary::dirichlet())?);
            cells_neumann.push(Pencil::new(&sub, Boundary::Neumann)?);
        }
        Ok(Bracketing {
            dirichlet: Pencil::new(net, Boundary::dirichlet())?,
            neumann: Pencil::new(net, Boundary::Neumann)?,
            cells_dirichlet,
            cells_neumann,
            w3,
        })
    }

    pub fn check(&self, lambda: f64) -> BracketingReport {
        let sub = |ps: &[Pencil<T>]| -> usize {
            ps.iter()
                .zip(self.w3)
                .map(|(p, w3)| p.count_below(T::of(lambda * w3)))
                .sum()
        };
        BracketingReport {
            sum_cells_dirichlet: sub(&self.cells_dirichlet),
            dirichlet: self.dirichlet.count_below(T::of(lambda)),
            neumann: self.neumann.count_below(T::of(lambda)),
            sum_cells_neumann: sub(&self.cells_neumann),
        }
    }
}

/// One-shot bracketing check at `λ`.
pub fn bracketing_check<T: Real>(
    net: &ResistanceNetwork<T>,
    cascade: &CascadeTree,
    lambda: f64,
) -> Result<BracketingReport> {
    Ok(Bracketing::new(net, cascade)?.check(lambda))
}

// ---------------------------------------------------------------------------
// Eigenvalue extraction and heat traces
// ---------------------------------------------------------------------------

/// Interval `(lo, hi]` holding `multiplicity` eigenvalues.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenInterval {
    pub lo: f64,
    pub hi: f64,
    pub multiplicity: usize,
}

impl EigenInterval {
    pub fn estimate(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }
}

/// Bisection stops once `hi - lo <= max(abs, rel · |hi|)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub fn absolute(abs: f64) -> Self {
        Tolerance { abs, rel: 0.0 }
    }

    pub fn relative(rel: f64, abs: f64) -> Self {
        Tolerance { abs, rel }
    }
}

/// All eigenvalues up to a cutoff, bracketed.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenList {
    pub intervals: Vec<EigenInterval>,
    pub cutoff: f64,
    pub count_at_cutoff: usize,
    pub dimension: usize,
}

impl EigenList {
    /// Midpoint estimates repeated by multiplicity, ascending.
    pub fn values(&self) -> Vec<f64> {
        self.intervals
            .iter()
            .flat_map(|iv| std::iter::repeat_n(iv.estimate(), iv.multiplicity))
            .collect()
    }

    /// `value,tolerance,multiplicity` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "value,tolerance,multiplicity")?;
        for iv in &self.intervals {
            writeln!(
                out,
                "{},{},{}",
                fmt17(iv.estimate()),
                fmt17(iv.half_width()),
                iv.multiplicity
            )?;
        }
        Ok(())
    }
}

/// Every eigenvalue `<= cutoff` to tolerance `tol`, by bisection on counts.
/// Fails when more than `cap` eigenvalues lie below the cutoff.
pub fn eigenvalues_up_to<T: Real>(
    pencil: &Pencil<T>,
    cutoff: f64,
    tol: Tolerance,
    cap: usize,
) -> Result<EigenList> {
    if !(cutoff > 0.0) || !(tol.abs > 0.0 || tol.rel > 0.0) {
        return Err(Error::invalid("cutoff and tolerance must be positive"));
    }
    let count = |x: f64| pencil.count_below(T::of(x));
    let total = count(cutoff);
    if total > cap {
        return Err(Error::EigenBudget { count: total, cap });
    }
    let c0 = pencil.nullity();
    let mut intervals = Vec::new();
    if c0 > 0 {
        intervals.push(EigenInterval {
            lo: 0.0,
            hi: 0.0,
            multiplicity: c0,
        });
    }
    // depth-first, left intervals first, so output is ascending
    let mut stack = vec![(0.0, c0, cutoff, total)];
    while let Some((lo, clo, hi, chi)) = stack.pop() {
        if chi == clo {
            continue;
        }
        let width = hi - lo;
        if width <= tol.abs.max(tol.rel * hi.abs()) {
            intervals.push(EigenInterval {
                lo,
                hi,
                multiplicity: chi - clo,
            });
            continue;
        }
        let mid = if lo > 0.0 && hi / lo > 4.0 {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        if !(mid > lo && mid < hi) {
            intervals.push(EigenInterval {
                lo,
                hi,
                multiplicity: chi - clo,
            });
            continue;
        }
        let cmid = count(mid);
        stack.push((mid, cmid, hi, chi));
        stack.push((lo, clo, mid, cmid));
    }
    Ok(EigenList {
        intervals,
        cutoff,
        count_at_cutoff: total,
        dimension: pencil.dimension(),
    })
}

/// `Σ_k e^{-λ_k t}` with certified bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeatTrace {
    pub t: f64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    /// `(dimension - N(cutoff)) · e^{-cutoff · t}`.
    pub remainder: f64,
}

/// Heat trace from a bracketed eigenvalue list. Fails when the truncation
/// remainder exceeds `accuracy`.
pub fn heat_trace(eigs: &EigenList, t: f64, accuracy: Option<f64>) -> Result<HeatTrace> {
    if !(t > 0.0) {
        return Err(Error::invalid("heat trace needs t > 0"));
    }
    let remainder = (eigs.dimension - eigs.count_at_cutoff) as f64 * (-eigs.cutoff * t).exp();
    if let Some(acc) = accuracy {
        if remainder > acc {
            return Err(Error::Truncation {
                bound: remainder,
                accuracy: acc,
            });
        }
    }
    let (mut est, mut lower, mut upper) = (0.0, 0.0, 0.0);
    for iv in &eigs.intervals {
        let m = iv.multiplicity as f64;
        est += m * (-iv.estimate() * t).exp();
        lower += m * (-iv.hi * t).exp();
        upper += m * (-iv.lo * t).exp();
    }
    Ok(HeatTrace {
        t,
        estimate: est + 0.5 * remainder,
        lower,
        upper: upper + remainder,
        remainder,
    })
}

// ---------------------------------------------------------------------------
// η and the renewal decomposition
// ---------------------------------------------------------------------------

/// Dirichlet pencils of the rescaled cells `i` with `|i| <= levels`, for
/// `η_i(t) = N_i^D(e^t) - Σ_j N_{ij}^D(e^t w(ij)³)`.
pub struct EtaHierarchy<T> {
    levels: usize,
    pencils: Vec<Vec<Pencil<T>>>,
    w3: Vec<Vec<f64>>,
}

impl<T: Real> EtaHierarchy<T> {
    /// Cells down to `levels` below the root. Every cell of length `< levels`
    /// must be refined in `net`, and cells of length `<= levels` extractable.
    pub fn new(net: &ResistanceNetwork<T>, cascade: &CascadeTree, levels: usize) -> Result<Self> {
        if let Some(n) = net.level() {
            if levels >= n.max(1) {
                return Err(Error::invalid(format!("η hierarchy of {levels} levels needs depth > {levels}")));
            }
        }
        let mut pencils = Vec::with_capacity(levels + 1);
        let mut w3 = Vec::with_capacity(levels + 1);
        let mut lengths = vec![1.0];
        for k in 0..=levels {
            let count = crate::cascade::pow3(k) as usize;
            let mut row = Vec::with_capacity(count);
            let mut wrow = Vec::with_capacity(count);
            let mut next = Vec::with_capacity(3 * count);
            for a in 0..count {
                let cell = Address::from_index(k, a as u64);
                let sub = net.cell_network(cell, T::of(lengths[a]))?;
                if k < levels && sub.cell_count() < 3 {
                    return Err(Error::invalid(format!("cell {cell} is not refined")));
                }
                row.push(Pencil::new(&sub, Boundary::dirichlet())?);
                wrow.push(if k == 0 { 1.0 } else { cascade.w(cell).powi(3) });
                for j in 1..=3u8 {
                    next.push(lengths[a] * cascade.w(cell.child(j)));
                }
            }
            pencils.push(row);
            w3.push(wrow);
            lengths = next;
        }
        Ok(EtaHierarchy { levels, pencils, w3 })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// `N_i^D(λ)` for the rescaled cell `i`.
    pub fn count(&self, cell: Address, lambda: f64) -> usize {
        self.pencils[cell.len()][cell.index() as usize].count_below(T::of(lambda))
    }

    /// `w(i)³` (1 at the root).
    pub fn w3(&self, cell: Address) -> f64 {
        self.w3[cell.len()][cell.index() as usize]
    }

    /// `η_i` evaluated at `λ_i = e^t`: `N_i^D(λ_i) - Σ_j N_{ij}^D(λ_i w(ij)³)`.
    pub fn eta_at(&self, cell: Address, lambda: f64) -> i64 {
        assert!(cell.len() < self.levels.max(1));
        let mut v = self.count(cell, lambda) as i64;
        for j in 1..=3u8 {
            let c = cell.child(j);
            v -= self.count(c, lambda * self.w3(c)) as i64;
        }
        v
    }

    /// `η_i(t)`.
    pub fn eta(&self, cell: Address, t: f64) -> i64 {
        self.eta_at(cell, t.exp())
    }

    /// `Σ_{|i|<k} η_i(t + 3 ln l(i)) + Σ_{|i|=k} N_i^D(e^t l(i)³)`, with the
    /// arguments `λ_i = e^t l(i)³` propagated as products `λ_{ij} = λ_i w(ij)³`.
    pub fn telescoped(&self, t: f64, k: usize) -> i64 {
        assert!(k <= self.levels);
        let mut lam = vec![t.exp()];
        let mut total = 0i64;
        for level in 0..k {
            let mut next = Vec::with_capacity(lam.len() * 3);
            for (a, &li) in lam.iter().enumerate() {
                let cell = Address::from_index(level, a as u64);
                total += self.eta_at(cell, li);
                for j in 1..=3u8 {
                    next.push(li * self.w3(cell.child(j)));
                }
            }
            lam = next;
        }
        for (a, &li) in lam.iter().enumerate() {
            total += self.count(Address::from_index(k, a as u64), li) as i64;
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::{perturbations, sample_cascade, PerturbationTable, HEIGHT_SCALE};
    use crate::forms::assemble_network;

    fn network(depth: usize, seed: u64) -> (CascadeTree, ResistanceNetwork<f64>) {
        let c = sample_cascade(depth, seed, 1 << 24).unwrap();
        let t = PerturbationTable::anchored(&c, 4);
        let net = assemble_network(&c, &t).unwrap();
        (c, net)
    }

    #[test]
    fn level_zero_counts() {
        let c = sample_cascade(0, 5, 16).unwrap();
        let t = perturbations(&c, 8);
        let net: ResistanceNetwork<f64> = assemble_network(&c, &t).unwrap();
        let neu = Pencil::new(&net, Boundary::Neumann).unwrap();
        let jump = 4.0 * HEIGHT_SCALE / t.value(Address::ROOT);
        assert_eq!(neu.count_below(0.0), 1);
        assert_eq!(neu.count_below(-1.0), 0);
        assert_eq!(neu.count_below(jump * (1.0 - 1e-9)), 1);
        assert_eq!(neu.count_below(jump), 2);
        let dir = Pencil::new(&net, Boundary::dirichlet()).unwrap();
        assert_eq!(dir.dimension(), 0);
        for l in [-1.0, 0.0, 1e9] {
            assert_eq!(dir.count_below(l), 0);
        }
        let ev = eigenvalues_up_to(&neu, 2.0 * jump, Tolerance::absolute(1e-9), 10).unwrap();
        let v = ev.values();
        assert_eq!(v.len(), 2);
        assert!(v[0].abs() < 1e-9 && (v[1] - jump).abs() < 1e-9);
    }

    #[test]
    fn counts_match_dense_oracle() {
        for seed in 0..5 {
            let (_, net) = network(3, seed);
            for b in [Boundary::Neumann, Boundary::dirichlet()] {
                let dense = dense_eigenvalues(&net, &b).unwrap();
                let p = Pencil::new(&net, b).unwrap();
                for l in log_grid(0.1, 1e5, 20).unwrap() {
                    let want = dense.iter().filter(|&&e| e <= l).count();
                    assert_eq!(p.count_below(l), want);
                }
            }
        }
    }

    #[test]
    fn counts_are_monotone_and_homogeneous() {
        let (_, net) = network(5, 2);
        let p = Pencil::new(&net, Boundary::Neumann).unwrap();
        let curve = p.counting_curve(&log_grid(1e-2, 1e20, 100).unwrap());
        assert!(curve.is_monotone());
        assert_eq!(*curve.counts.last().unwrap() as usize, p.dimension());
        let mut scaled = net.clone();
        scaled.scale_conductances(3.0);
        let q = Pencil::new(&scaled, Boundary::Neumann).unwrap();
        for &l in &curve.lambdas {
            assert_eq!(q.count_below(3.0 * l), p.count_below(l));
        }
    }

    #[test]
    fn neumann_dirichlet_gap() {
        let (c, net) = network(5, 8);
        let b = Bracketing::new(&net, &c).unwrap();
        for l in log_grid(1.0, 1e6, 50).unwrap() {
            let r = b.check(l);
            assert!(r.chain_holds() && r.gap_holds(), "{l}: {r:?}");
        }
        let low = b.check(1e-6);
        assert_eq!((low.sum_cells_dirichlet, low.dirichlet, low.neumann), (0, 0, 1));
        assert!(low.sum_cells_neumann >= 1);
    }

    #[test]
    fn dirichlet_floor_bound_and_mass_scaling() {
        for seed in 0..10 {
            let (_, net) = network(4, seed);
            let f = dirichlet_floor(&net).unwrap();
            assert!(f.bound_holds(), "{f:?}");
        }
        let (_, net) = network(3, 1);
        let p = Pencil::new(&net, Boundary::dirichlet()).unwrap();
        let mut q = p.clone();
        q.scale_masses(4.0);
        let a = smallest_eigenvalue(&p, 1e-13).unwrap();
        let b = smallest_eigenvalue(&q, 1e-13).unwrap();
        assert!((a / b - 4.0).abs() < 1e-10);
    }

    #[test]
    fn uniform_level_one_floor_matches_dense() {
        let c = CascadeTree::uniform(1);
        let net: ResistanceNetwork<f64> = assemble_network(&c, &perturbations(&c, 0)).unwrap();
        let p = Pencil::new(&net, Boundary::dirichlet()).unwrap();
        let dense = dense_eigenvalues(&net, &Boundary::dirichlet()).unwrap();
        let got = smallest_eigenvalue(&p, 1e-14).unwrap();
        assert!((got - dense[0]).abs() < 1e-8 * dense[0]);
    }

    #[test]
    fn eigenvalue_list_matches_oracle() {
        let (_, net) = network(4, 6);
        let p = Pencil::new(&net, Boundary::Neumann).unwrap();
        let dense = dense_eigenvalues(&net, &Boundary::Neumann).unwrap();
        let top = dense.last().unwrap() * 1.01;
        let ev = eigenvalues_up_to(&p, top, Tolerance::relative(1e-10, 1e-12), 1000).unwrap();
        let v = ev.values();
        assert_eq!(v.len(), dense.len());
        let floor = 1e-10 * p.scale();
        for (a, b) in v.iter().zip(&dense) {
            assert!((a - b).abs() <= (1e-6 * b.abs()).max(floor), "{a} vs {b}");
        }
        assert!(v.windows(2).all(|w| w[0] <= w[1]));
        assert!(matches!(
            eigenvalues_up_to(&p, top, Tolerance::absolute(1e-6), 3),
            Err(Error::EigenBudget { .. })
        ));
    }

    #[test]
    fn heat_trace_limits() {
        let (_, net) = network(3, 4);
        for (b, limit) in [(Boundary::Neumann, 1.0), (Boundary::dirichlet(), 0.0)] {
            let p = Pencil::new(&net, b).unwrap();
            let dense = dense_eigenvalues(&net, p.boundary()).unwrap();
            let ev = eigenvalues_up_to(&p, dense.last().unwrap() * 2.0, Tolerance::relative(1e-9, 1e-12), 100).unwrap();
            let h = heat_trace(&ev, 1e3 / dense.iter().copied().fold(f64::INFINITY, |a, e| if e > 1e-9 { a.min(e) } else { a }), None).unwrap();
            assert!((h.estimate - limit).abs() < 1e-6);
            let t = 1e-3;
            let h = heat_trace(&ev, t, None).unwrap();
            let exact: f64 = dense.iter().map(|e| (-e * t).exp()).sum();
            assert!(h.lower <= exact + 1e-12 && exact <= h.upper + 1e-12);
            assert_eq!(h.remainder, 0.0);
        }
        let p = Pencil::new(&net, Boundary::Neumann).unwrap();
        let ev = eigenvalues_up_to(&p, 10.0, Tolerance::absolute(1e-6), 100).unwrap();
        assert!(matches!(heat_trace(&ev, 1e-6, Some(1e-3)), Err(Error::Truncation { .. })));
    }

    #[test]
    fn eta_is_bounded_and_telescopes() {
        let (c, net) = network(6, 12);
        let h = EtaHierarchy::new(&net, &c, 3).unwrap();
        let full = Pencil::new(&net, Boundary::dirichlet()).unwrap();
        let floor = smallest_eigenvalue(&full, 1e-10).unwrap();
        assert_eq!(h.eta(Address::ROOT, (0.5 * floor).ln()), 0);
        for k in 0..200 {
            let t = -2.0 + 0.1 * k as f64;
            let eta = h.eta(Address::ROOT, t);
            assert!((0..=6).contains(&eta), "η({t}) = {eta}");
            let n = full.count_below(t.exp()) as i64;
            for depth in 0..=3 {
                assert_eq!(h.telescoped(t, depth), n);
            }
        }
    }

    #[test]
    fn f32_counts_agree_with_f64_away_from_eigenvalues() {
        let c = sample_cascade(4, 3, 1 << 20).unwrap();
        let t = PerturbationTable::anchored(&c, 3);
        let a: ResistanceNetwork<f64> = assemble_network(&c, &t).unwrap();
        let b: ResistanceNetwork<f32> = assemble_network(&c, &t).unwrap();
        let pa = Pencil::new(&a, Boundary::Neumann).unwrap();
        let pb = Pencil::new(&b, Boundary::Neumann).unwrap();
        let dense = dense_eigenvalues(&a, &Boundary::Neumann).unwrap();
        for l in log_grid(1.0, 1e4, 15).unwrap() {
            let gap = dense.iter().map(|e| ((e - l) / l).abs()).fold(f64::INFINITY, f64::min);
            if gap > 1e-3 {
                assert_eq!(pa.count_below(l), pb.count_below(l as f32));
            }
        }
    }
}
