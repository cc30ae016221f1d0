//! Discretised normalised Brownian excursions, the tree pseudo-metric they
//! code, the three-way split at the branch point of the root and two marked
//! times, and reduced subtrees spanned by finitely many leaves.

use std::io::{BufRead, BufReader, Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::cascade::MassTriple;
use crate::error::{Error, Result};
use crate::format::fmt17;
use crate::rng;

/// Heights `f(k/N)`, `k = 0..=N`, with `f(0) = f(1) = 0` and `f > 0` inside.
#[derive(Clone, Debug, PartialEq)]
pub struct ExcursionPath {
    values: Vec<f64>,
}

impl ExcursionPath {
    /// Validating constructor.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let n = values.len().saturating_sub(1);
        if n < 2 {
            return Err(Error::invalid("an excursion needs at least 2 steps"));
        }
        if values[0] != 0.0 || values[n] != 0.0 {
            return Err(Error::invalid("excursion endpoints must be 0"));
        }
        if let Some(k) = (1..n).find(|&k| !(values[k] > 0.0 && values[k].is_finite())) {
            return Err(Error::invalid(format!(
                "excursion not positive at step {k}: {}",
                values[k]
            )));
        }
        Ok(ExcursionPath { values })
    }

    /// Zero the endpoints and lift the interior to the smallest positive normal float.
    pub fn clamped(mut values: Vec<f64>) -> Result<Self> {
        let n = values.len().saturating_sub(1);
        if n < 2 {
            return Err(Error::invalid("an excursion needs at least 2 steps"));
        }
        values[0] = 0.0;
        values[n] = 0.0;
        for v in &mut values[1..n] {
            if !(*v >= f64::MIN_POSITIVE) {
                *v = f64::MIN_POSITIVE;
            }
        }
        Ok(ExcursionPath { values })
    }

    /// Sample `g` at `k/N`, `k = 0..=N`, and clamp.
    pub fn from_fn(n: usize, g: impl Fn(f64) -> f64) -> Result<Self> {
        ExcursionPath::clamped((0..=n).map(|k| g(k as f64 / n as f64)).collect())
    }

    /// Grid resolution `N`.
    #[inline]
    pub fn n(&self) -> usize {
        self.values.len() - 1
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn at(&self, k: usize) -> f64 {
        self.values[k]
    }

    /// Linear interpolation at `t ∈ [0, 1]`.
    pub fn value_at(&self, t: f64) -> f64 {
        let n = self.n();
        let x = (t.clamp(0.0, 1.0)) * n as f64;
        let k = (x.floor() as usize).min(n - 1);
        let frac = x - k as f64;
        self.values[k] + frac * (self.values[k + 1] - self.values[k])
    }

    /// `max f`.
    pub fn sup(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// `∫₀¹ f`, trapezoid rule (exact for the piecewise-linear path).
    pub fn area(&self) -> f64 {
        let n = self.n();
        self.values[1..n].iter().sum::<f64>() / n as f64
    }

    /// `m_f(s, t)`: minimum over the grid indices between `s` and `t`.
    pub fn min_between(&self, s: usize, t: usize) -> f64 {
        let (a, b) = if s <= t { (s, t) } else { (t, s) };
        self.values[a..=b].iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// One height per line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for v in &self.values {
            writeln!(out, "{}", fmt17(*v))?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut values = Vec::new();
        for line in BufReader::new(input).lines() {
            let line = line?;
            let s = line.trim();
            if s.is_empty() {
                continue;
            }
            values.push(
                s.parse::<f64>()
                    .map_err(|e| Error::Format(format!("bad height {s:?}: {e}")))?,
            );
        }
        ExcursionPath::new(values)
    }

    /// Magic `CRTX`, u32 `N`, then `N + 1` little-endian f64.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(b"CRTX")?;
        let n = u32::try_from(self.n()).map_err(|_| Error::invalid("N exceeds u32"))?;
        out.write_all(&n.to_le_bytes())?;
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != b"CRTX" {
            return Err(Error::Format("bad excursion magic".into()));
        }
        let mut b4 = [0u8; 4];
        input.read_exact(&mut b4)?;
        let n = u32::from_le_bytes(b4) as usize;
        let mut values = Vec::with_capacity(n + 1);
        let mut b8 = [0u8; 8];
        for _ in 0..=n {
            input.read_exact(&mut b8)?;
            values.push(f64::from_le_bytes(b8));
        }
        ExcursionPath::new(values)
    }
}

/// Random walk with Gaussian steps of variance `1/N`, turned into a bridge by
/// subtracting `t·S_N`, then rotated cyclically at its first minimum.
pub fn sample_excursion(n_steps: usize, seed: u64) -> Result<ExcursionPath> {
    if n_steps < 2 {
        return Err(Error::invalid("n_steps must be at least 2"));
    }
    let mut r = rng::stream(seed, rng::tag::EXCURSION, n_steps as u64);
    let sd = (n_steps as f64).recip().sqrt();
    let mut walk = Vec::with_capacity(n_steps + 1);
    walk.push(0.0f64);
    let mut s = 0.0;
    for _ in 0..n_steps {
        let z: f64 = r.sample(StandardNormal);
        s += sd * z;
        walk.push(s);
    }
    let end = walk[n_steps];
    for (k, w) in walk.iter_mut().enumerate() {
        *w -= end * (k as f64 / n_steps as f64);
    }
    walk[n_steps] = 0.0;
    let mut kmin = 0;
    for k in 1..n_steps {
        if walk[k] < walk[kmin] {
            kmin = k;
        }
    }
    let base = walk[kmin];
    let values = (0..=n_steps)
        .map(|j| walk[(kmin + j) % n_steps] - base)
        .collect();
    ExcursionPath::clamped(values)
}

/// `d_f(s, t) = f(s) + f(t) - 2 m_f(s, t)` for grid indices.
pub fn excursion_distance(f: &ExcursionPath, s: usize, t: usize) -> Result<f64> {
    let n = f.n();
    if s > n || t > n {
        return Err(Error::invalid(format!("grid index out of range 0..={n}")));
    }
    Ok(f.at(s) + f.at(t) - 2.0 * f.min_between(s, t))
}

/// Branch point `H` of the root and two marked times, and the neighbouring
/// times `H₋ < min(u, v)`, `H₊ > max(u, v)` at the same level; all in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Markers {
    pub h: f64,
    pub h_minus: f64,
    pub h_plus: f64,
    /// Grid index of `H`.
    pub h_index: usize,
}

/// Locate `(H, H₋, H₊)`. `H` is the first grid argmin of `f` between `u` and
/// `v`; `H₋` and `H₊` are the linear-interpolation crossings of level `f(H)`.
pub fn split_markers(f: &ExcursionPath, u: usize, v: usize) -> Result<Markers> {
    let n = f.n();
    if u == v {
        return Err(Error::invalid("marked times must differ"));
    }
    if u == 0 || v == 0 || u >= n || v >= n {
        return Err(Error::invalid("marked times must lie strictly inside (0, 1)"));
    }
    let (a, b) = if u < v { (u, v) } else { (v, u) };
    let vals = f.values();
    let mut hi = a;
    for k in a + 1..=b {
        if vals[k] < vals[hi] {
            hi = k;
        }
    }
    let level = vals[hi];

    let mut k = a - 1;
    while vals[k] > level {
        k -= 1;
    }
    let h_minus = crossing(vals[k], vals[k + 1], level, k);

    let mut k = b + 1;
    while vals[k] > level {
        k += 1;
    }
    // decreasing crossing between k - 1 and k
    let h_plus = k as f64 - crossing_fraction(vals[k], vals[k - 1], level);

    let nf = n as f64;
    Ok(Markers {
        h: hi as f64 / nf,
        h_minus: h_minus / nf,
        h_plus: h_plus / nf,
        h_index: hi,
    })
}

/// Time in `[k, k+1]` where the segment from `lo_val <= level` rises through `level`.
fn crossing(lo_val: f64, hi_val: f64, level: f64, k: usize) -> f64 {
    k as f64 + crossing_fraction(lo_val, hi_val, level)
}

fn crossing_fraction(lo_val: f64, hi_val: f64, level: f64) -> f64 {
    let rise = hi_val - lo_val;
    if rise > 0.0 {
        ((level - lo_val) / rise).clamp(0.0, 1.0)
    } else {
        1.0
    }
}

/// Output of [`decompose`].
#[derive(Clone, Debug)]
pub struct SplitResult {
    pub pieces: [ExcursionPath; 3],
    pub uniforms: [f64; 3],
    pub masses: MassTriple,
    pub markers: Markers,
}

/// Split `f` at the branch point of the root, `u` and `v` into the root
/// piece, the piece holding `u` and the piece holding `v`, each rescaled to an
/// excursion on `[0, 1]` and resampled onto the same grid.
pub fn decompose(f: &ExcursionPath, u: usize, v: usize) -> Result<SplitResult> {
    let mk = split_markers(f, u, v)?;
    let n = f.n();
    let nf = n as f64;
    let outer = 1.0 + mk.h_minus - mk.h_plus;
    let left = mk.h - mk.h_minus;
    let right = mk.h_plus - mk.h;
    for (piece, d) in [(1, outer), (2, left), (3, right)] {
        if d * nf < 2.0 {
            return Err(Error::DegenerateSplit {
                piece,
                cells: d * nf,
            });
        }
    }
    let level = f.at(mk.h_index);
    let (ut, vt) = (u as f64 / nf, v as f64 / nf);

    let inner = |start: f64, delta: f64| -> Result<ExcursionPath> {
        let scale = delta.powf(-0.5);
        let mut vals: Vec<f64> = (0..=n)
            .map(|j| scale * (f.value_at(start + delta * j as f64 / nf) - level))
            .collect();
        vals[0] = 0.0;
        vals[n] = 0.0;
        ExcursionPath::clamped(vals)
    };
    let w_left = inner(mk.h_minus, left)?;
    let w_right = inner(mk.h, right)?;

    // concatenated outer piece, rescaled; the glue point sits at ũ₁
    let u1t = mk.h_minus / outer;
    let scale = outer.powf(-0.5);
    let glued = |t: f64| -> f64 {
        if t <= u1t {
            scale * f.value_at(t * outer)
        } else {
            scale * f.value_at(mk.h_plus + (t - u1t) * outer)
        }
    };
    let g: Vec<f64> = (0..=n).map(|j| glued(j as f64 / nf)).collect();
    let w_outer = ExcursionPath::clamped(reroot(&g, u1t))?;

    let (pieces, uniforms, masses) = if u < v {
        (
            [w_outer, w_left, w_right],
            [1.0 - u1t, (ut - mk.h_minus) / left, (vt - mk.h) / right],
            [outer, left, right],
        )
    } else {
        (
            [w_outer, w_right, w_left],
            [1.0 - u1t, (ut - mk.h) / right, (vt - mk.h_minus) / left],
            [outer, right, left],
        )
    };
    Ok(SplitResult {
        pieces,
        uniforms: uniforms.map(|x| x.clamp(0.0, 1.0)),
        masses: MassTriple(masses),
        markers: mk,
    })
}

/// Re-root the piecewise-linear path through `g` (grid `j/N`) at time `a`:
/// returns `g(a) + g(a+t) - 2 min_{[a, a+t]} g`, cyclically, at `t = j/N`.
fn reroot(g: &[f64], a: f64) -> Vec<f64> {
    let n = g.len() - 1;
    let nf = n as f64;
    let at = |t: f64| -> f64 {
        let x = t.clamp(0.0, 1.0) * nf;
        let k = (x.floor() as usize).min(n - 1);
        g[k] + (x - k as f64) * (g[k + 1] - g[k])
    };
    let ga = at(a);
    let a_idx = a * nf;
    // suffix minima of g over grid points in [k, a]
    let last_below = (a_idx.floor() as usize).min(n);
    let mut suffix = vec![f64::INFINITY; last_below + 2];
    for k in (0..=last_below).rev() {
        suffix[k] = suffix[k + 1].min(g[k]);
    }
    let mut out = Vec::with_capacity(n + 1);
    let mut run = ga;
    let mut next_grid = (a_idx.floor() as usize) + 1;
    for j in 0..=n {
        let t = j as f64 / nf;
        let val = if a + t <= 1.0 {
            let s = a + t;
            while next_grid <= n && (next_grid as f64) <= s * nf {
                run = run.min(g[next_grid]);
                next_grid += 1;
            }
            let gs = at(s);
            ga + gs - 2.0 * run.min(gs)
        } else {
            let s = a + t - 1.0;
            let first = (s * nf).ceil() as usize;
            let gs = at(s);
            let m = if first <= last_below {
                suffix[first].min(gs).min(ga)
            } else {
                gs.min(ga)
            };
            ga + gs - 2.0 * m
        };
        out.push(val);
    }
    out[0] = 0.0;
    out[n] = 0.0;
    out
}

/// Masses of the components at the branch point of the root, `u` and `v`:
/// `(root side, u side, v side)`, as fractions of the grid times `0..N`.
/// A time `s` lies on the `u` side iff `m_f(s, u) > m_f(u, v)`.
pub fn branch_component_masses(f: &ExcursionPath, u: usize, v: usize) -> Result<[f64; 3]> {
    let n = f.n();
    if u == v || u == 0 || v == 0 || u >= n || v >= n {
        return Err(Error::invalid("need distinct interior marked times"));
    }
    let hb = f.min_between(u, v);
    let mu = running_min_from(f, u);
    let mv = running_min_from(f, v);
    let mut counts = [0usize; 3];
    for s in 0..n {
        if mu[s] > hb {
            counts[1] += 1;
        } else if mv[s] > hb {
            counts[2] += 1;
        } else {
            counts[0] += 1;
        }
    }
    Ok(counts.map(|c| c as f64 / n as f64))
}

/// `m_f(s, c)` for every grid index `s`.
fn running_min_from(f: &ExcursionPath, c: usize) -> Vec<f64> {
    let vals = f.values();
    let mut out = vec![0.0; vals.len()];
    let mut m = vals[c];
    for s in c..vals.len() {
        m = m.min(vals[s]);
        out[s] = m;
    }
    let mut m = vals[c];
    for s in (0..=c).rev() {
        m = m.min(vals[s]);
        out[s] = m;
    }
    out
}

// ---------------------------------------------------------------------------
// Reduced trees
// ---------------------------------------------------------------------------

/// Rooted finite metric tree with vertex masses. Vertex 0 is the root.
#[derive(Clone, Debug)]
pub struct MetricTree {
    parent: Vec<Option<usize>>,
    /// Length of the edge to the parent (0 at the root).
    length: Vec<f64>,
    /// Distance to the root.
    height: Vec<f64>,
    mass: Vec<f64>,
    /// Vertex holding each requested leaf, in input order.
    leaves: Vec<usize>,
}

impl MetricTree {
    pub fn root(&self) -> usize {
        0
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub fn edge_length(&self, v: usize) -> f64 {
        self.length[v]
    }

    pub fn height(&self, v: usize) -> f64 {
        self.height[v]
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    /// Edges `(parent, child, length)`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (1..self.len()).map(move |v| (self.parent[v].unwrap(), v, self.length[v]))
    }

    pub fn total_length(&self) -> f64 {
        self.length.iter().sum()
    }

    /// Tree distance between two vertices.
    pub fn distance(&self, mut a: usize, mut b: usize) -> f64 {
        let mut d = 0.0;
        while a != b {
            // parents always have smaller ids
            if a > b {
                d += self.length[a];
                a = self.parent[a].unwrap();
            } else {
                d += self.length[b];
                b = self.parent[b].unwrap();
            }
        }
        d
    }
}

/// Reduced tree spanned by the root and `k` uniform grid times in `(0, 1)`.
pub fn reduced_tree(f: &ExcursionPath, k: usize, seed: u64) -> Result<MetricTree> {
    if k == 0 {
        return Err(Error::invalid("leaf count must be at least 1"));
    }
    reduced_tree_at(f, &sample_leaf_times(f, k, seed), None)
}

/// `k` grid times drawn uniformly from `1..N`, as used by [`reduced_tree`].
pub fn sample_leaf_times(f: &ExcursionPath, k: usize, seed: u64) -> Vec<usize> {
    let mut r = rng::stream(seed, rng::tag::LEAVES, k as u64);
    (0..k).map(|_| r.random_range(1..f.n())).collect()
}

/// Reduced tree spanned by the root and the given grid times. Edges longer
/// than `max_edge` are subdivided into equal parts. Each grid time `s ∈ 0..N`
/// gives mass `1/N` to the tree vertex nearest to it in `d_f`.
pub fn reduced_tree_at(
    f: &ExcursionPath,
    leaf_times: &[usize],
    max_edge: Option<f64>,
) -> Result<MetricTree> {
    let n = f.n();
    if leaf_times.is_empty() {
        return Err(Error::invalid("leaf count must be at least 1"));
    }
    if let Some(&bad) = leaf_times.iter().find(|&&t| t == 0 || t >= n) {
        return Err(Error::invalid(format!("leaf time {bad} not in 1..{n}")));
    }
    if let Some(me) = max_edge {
        if !(me > 0.0) {
            return Err(Error::invalid("max_edge must be positive"));
        }
    }
    let vals = f.values();
    let mut times: Vec<usize> = leaf_times.to_vec();
    times.sort_unstable();
    times.dedup();

    // skeleton by a monotone stack over leaves in time order
    let mut parent: Vec<Option<usize>> = vec![None];
    let mut height: Vec<f64> = vec![0.0];
    let mut leaf_vertex = vec![0usize; times.len()];
    let mut stack: Vec<usize> = vec![0];
    let mut prev = 0usize;
    for (i, &t) in times.iter().enumerate() {
        let m = f.min_between(prev, t);
        let mut popped: Option<usize> = None;
        while height[*stack.last().unwrap()] > m {
            popped = stack.pop();
        }
        let top = *stack.last().unwrap();
        let branch = if height[top] == m {
            top
        } else {
            let b = parent.len();
            parent.push(Some(top));
            height.push(m);
            if let Some(p) = popped {
                parent[p] = Some(b);
            }
            stack.push(b);
            b
        };
        let leaf = if vals[t] > m {
            let l = parent.len();
            parent.push(Some(branch));
            height.push(vals[t]);
            stack.push(l);
            l
        } else {
            branch
        };
        leaf_vertex[i] = leaf;
        prev = t;
    }

    // renumber so that parents precede children
    let nv = parent.len();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); nv];
    for v in 1..nv {
        children[parent[v].unwrap()].push(v);
    }
    let mut order = Vec::with_capacity(nv);
    let mut stack = vec![0usize];
    while let Some(v) = stack.pop() {
        order.push(v);
        for &c in children[v].iter().rev() {
            stack.push(c);
        }
    }
    let mut new_id = vec![0usize; nv];
    for (i, &v) in order.iter().enumerate() {
        new_id[v] = i;
    }
    let mut t_parent: Vec<Option<usize>> = vec![None; nv];
    let mut t_height = vec![0.0; nv];
    for &v in &order {
        t_parent[new_id[v]] = parent[v].map(|p| new_id[p]);
        t_height[new_id[v]] = height[v];
    }
    let leaf_vertex: Vec<usize> = leaf_vertex.iter().map(|&v| new_id[v]).collect();

    // optional subdivision: vertex ids remain parent-before-child
    let (parent, height, remap) = match max_edge {
        None => (t_parent, t_height, (0..nv).collect::<Vec<_>>()),
        Some(me) => subdivide(&t_parent, &t_height, me),
    };
    let leaf_vertex: Vec<usize> = leaf_vertex.iter().map(|&v| remap[v]).collect();
    let nv = parent.len();
    let length: Vec<f64> = (0..nv)
        .map(|v| parent[v].map_or(0.0, |p| height[v] - height[p]))
        .collect();

    // mass by nearest-vertex projection
    let mut counts = vec![0u64; nv];
    // sentinel root at time N closes the last gap
    let mut bounds: Vec<(usize, usize)> = times
        .iter()
        .zip(&leaf_vertex)
        .map(|(&t, &v)| (t, v))
        .collect();
    bounds.insert(0, (0, 0));
    bounds.push((n, 0));
    for w in bounds.windows(2) {
        let (tl, vl) = w[0];
        let (tr, vr) = w[1];
        // m(s, tl) increasing run from the left, m(s, tr) from the right
        let mut from_right = vec![0.0; tr - tl + 1];
        let mut m = vals[tr];
        for s in (tl..=tr).rev() {
            m = m.min(vals[s]);
            from_right[s - tl] = m;
        }
        let mut ml = vals[tl];
        for s in tl..tr {
            ml = ml.min(vals[s]);
            let mr = from_right[s - tl];
            let (h, leaf) = if ml >= mr { (ml, vl) } else { (mr, vr) };
            counts[nearest_on_path(&parent, &height, leaf, h)] += 1;
        }
    }
    let mass: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();

    let leaves = leaf_times
        .iter()
        .map(|t| leaf_vertex[times.binary_search(t).unwrap()])
        .collect();
    Ok(MetricTree {
        parent,
        length,
        height,
        mass,
        leaves,
    })
}

/// Vertex nearest to the point at height `h` on the path from the root to `leaf`.
fn nearest_on_path(parent: &[Option<usize>], height: &[f64], leaf: usize, h: f64) -> usize {
    let mut child = leaf;
    if height[child] <= h {
        return child;
    }
    while let Some(p) = parent[child] {
        if height[p] <= h {
            return if h - height[p] <= height[child] - h {
                p
            } else {
                child
            };
        }
        child = p;
    }
    child
}

fn subdivide(
    parent: &[Option<usize>],
    height: &[f64],
    max_edge: f64,
) -> (Vec<Option<usize>>, Vec<f64>, Vec<usize>) {
    let nv = parent.len();
    let mut out_parent = vec![None];
    let mut out_height = vec![height[0]];
    let mut remap = vec![0usize; nv];
    for v in 1..nv {
        let p = parent[v].unwrap();
        let len = height[v] - height[p];
        let pieces = (len / max_edge).ceil().max(1.0) as usize;
        let mut last = remap[p];
        for q in 1..pieces {
            out_parent.push(Some(last));
            out_height.push(height[p] + len * q as f64 / pieces as f64);
            last = out_height.len() - 1;
        }
        out_parent.push(Some(last));
        out_height.push(height[v]);
        remap[v] = out_height.len() - 1;
    }
    (out_parent, out_height, remap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Piecewise-linear path through (0,0),(0.2,1),(0.5,0.3),(0.8,1.2),(1,0).
    pub(crate) fn tent(n: usize) -> ExcursionPath {
        let knots = [(0.0, 0.0), (0.2, 1.0), (0.5, 0.3), (0.8, 1.2), (1.0, 0.0)];
        ExcursionPath::from_fn(n, |t| {
            let i = knots.iter().rposition(|&(x, _)| x <= t).unwrap().min(3);
            let (x0, y0) = knots[i];
            let (x1, y1) = knots[i + 1];
            y0 + (y1 - y0) * (t - x0) / (x1 - x0)
        })
        .unwrap()
    }

    #[test]
    fn two_step_excursion() {
        let f = sample_excursion(2, 9).unwrap();
        assert_eq!(f.at(0), 0.0);
        assert_eq!(f.at(2), 0.0);
        assert!(f.at(1) > 0.0);
        assert!(sample_excursion(1, 9).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        assert_eq!(sample_excursion(500, 4).unwrap(), sample_excursion(500, 4).unwrap());
        assert_ne!(sample_excursion(500, 4).unwrap(), sample_excursion(500, 5).unwrap());
    }

    #[test]
    fn tent_distance() {
        let f = tent(100);
        assert_abs_diff_eq!(excursion_distance(&f, 30, 70).unwrap(), 16.0 / 15.0, epsilon = 1e-12);
        assert_abs_diff_eq!(excursion_distance(&f, 0, 70).unwrap(), f.at(70), epsilon = 0.0);
        assert_eq!(excursion_distance(&f, 40, 40).unwrap(), 0.0);
        assert!(excursion_distance(&f, 0, 101).is_err());
    }

    #[test]
    fn tent_markers_and_masses() {
        let f = tent(100);
        let mk = split_markers(&f, 30, 70).unwrap();
        assert_abs_diff_eq!(mk.h, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(mk.h_minus, 0.06, epsilon = 1e-9);
        assert_abs_diff_eq!(mk.h_plus, 0.95, epsilon = 1e-9);
        let mk2 = split_markers(&f, 7, 94).unwrap();
        assert_abs_diff_eq!(mk2.h, 0.5, epsilon = 1e-12);
        // at u = 0.06, v = 0.95 the level 0.3 is hit at both ends and at 0.5;
        // the smallest-index rule picks the left end
        let tied = split_markers(&f, 6, 95).unwrap();
        assert!(tied.h_index == 6 || tied.h_index == 50);
        let sp = decompose(&f, 30, 70).unwrap();
        let [d1, d2, d3] = sp.masses.0;
        assert_abs_diff_eq!(d1, 0.11, epsilon = 1e-9);
        assert_abs_diff_eq!(d2, 0.44, epsilon = 1e-9);
        assert_abs_diff_eq!(d3, 0.45, epsilon = 1e-9);
        assert_abs_diff_eq!(d1 + d2 + d3, 1.0, epsilon = 1e-12);
        for p in &sp.pieces {
            assert_eq!(p.n(), 100);
            assert_eq!(p.at(0), 0.0);
            assert_eq!(p.at(100), 0.0);
        }
        assert_abs_diff_eq!(sp.uniforms[1], (0.3 - 0.06) / 0.44, epsilon = 1e-9);
        assert_abs_diff_eq!(sp.uniforms[2], 0.2 / 0.45, epsilon = 1e-9);
        assert_abs_diff_eq!(sp.uniforms[0], 1.0 - 0.06 / 0.11, epsilon = 1e-9);
    }

    #[test]
    fn mirrored_split_swaps_pieces() {
        let f = tent(100);
        let a = decompose(&f, 30, 70).unwrap();
        let b = decompose(&f, 70, 30).unwrap();
        assert_eq!(a.masses.0[1], b.masses.0[2]);
        assert_eq!(a.masses.0[2], b.masses.0[1]);
        assert_eq!(a.pieces[1], b.pieces[2]);
        assert_eq!(a.uniforms[1], b.uniforms[2]);
    }

    #[test]
    fn decreasing_stretch_puts_h_at_right_end() {
        let f = tent(100);
        let mk = split_markers(&f, 25, 45).unwrap();
        assert_eq!(mk.h_index, 45);
    }

    #[test]
    fn degenerate_split_is_reported() {
        let f = tent(100);
        // u, v straddle the global minimum closely: pieces 2 and 3 stay large,
        // but a tiny outer piece arises near the boundary
        let f2 = ExcursionPath::from_fn(100, |t| (t * (1.0 - t)).sqrt()).unwrap();
        assert!(matches!(decompose(&f2, 1, 99), Err(Error::DegenerateSplit { .. })));
        assert!(split_markers(&f, 40, 40).is_err());
        assert!(split_markers(&f, 0, 40).is_err());
    }

    #[test]
    fn outer_piece_is_rerooted_distance() {
        let f = sample_excursion(4096, 12).unwrap();
        let sp = decompose(&f, 1000, 3000).unwrap();
        let w1 = &sp.pieces[0];
        // the old root sits at U₁: its height equals d_f(0, H)·Δ₁^{-1/2}
        let expect = f.at(sp.markers.h_index) / sp.masses.0[0].sqrt();
        assert!((w1.value_at(sp.uniforms[0]) - expect).abs() < 0.05 * expect.max(0.1));
    }

    #[test]
    fn branch_masses_match_split() {
        let f = sample_excursion(1 << 14, 3).unwrap();
        let sp = decompose(&f, 5000, 11000).unwrap();
        let m = branch_component_masses(&f, 5000, 11000).unwrap();
        for j in 0..3 {
            assert!((m[j] - sp.masses.0[j]).abs() < 3.0 / f.n() as f64);
        }
    }

    #[test]
    fn one_leaf_tree_is_an_edge() {
        let f = tent(100);
        let t = reduced_tree_at(&f, &[30], None).unwrap();
        assert_eq!(t.len(), 2);
        assert_abs_diff_eq!(t.edge_length(1), f.at(30), epsilon = 1e-15);
        assert_abs_diff_eq!(t.masses().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn tent_y_tree() {
        let f = tent(100);
        let t = reduced_tree_at(&f, &[30, 70], None).unwrap();
        assert_eq!(t.len(), 4);
        let [a, b] = [t.leaves()[0], t.leaves()[1]];
        let branch = t.parent(a).unwrap();
        assert_eq!(t.parent(b), Some(branch));
        assert_abs_diff_eq!(t.height(branch), 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(t.distance(a, b), 16.0 / 15.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.masses().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn reduced_tree_reproduces_distances() {
        let f = sample_excursion(2000, 8).unwrap();
        let leaves = [17, 400, 401, 999, 1500, 1999, 400];
        let t = reduced_tree_at(&f, &leaves, None).unwrap();
        for (i, &a) in leaves.iter().enumerate() {
            for (j, &b) in leaves.iter().enumerate() {
                let d = excursion_distance(&f, a, b).unwrap();
                assert_abs_diff_eq!(t.distance(t.leaves()[i], t.leaves()[j]), d, epsilon = 1e-12);
            }
        }
        assert!(t.edges().all(|(_, _, l)| l > 0.0));
        let sub = reduced_tree_at(&f, &leaves, Some(0.01)).unwrap();
        assert!(sub.edges().all(|(_, _, l)| l <= 0.01 + 1e-12));
        assert_abs_diff_eq!(sub.total_length(), t.total_length(), epsilon = 1e-9);
        assert_abs_diff_eq!(sub.masses().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn csv_and_binary_roundtrip() {
        let f = sample_excursion(64, 1).unwrap();
        let mut csv = Vec::new();
        f.write_csv(&mut csv).unwrap();
        assert_eq!(ExcursionPath::read_csv(csv.as_slice()).unwrap(), f);
        let mut bin = Vec::new();
        f.write_binary(&mut bin).unwrap();
        assert_eq!(&bin[..4], b"CRTX");
        assert_eq!(bin.len(), 8 + 65 * 8);
        assert_eq!(ExcursionPath::read_binary(bin.as_slice()).unwrap(), f);
    }
}
