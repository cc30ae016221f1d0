//! Multiplicative cascade of Dirichlet(1/2, 1/2, 1/2) mass triples over the
//! ternary address tree.
//!
//! A triple is attached to every address `i`; it holds the masses
//! `(Δ_{i1}, Δ_{i2}, Δ_{i3})` of the three children. Length factors are
//! `w(i) = Δ_i^{1/2}` and `l(i) = w(i|1) ⋯ w(i)`. Each triple is drawn from its
//! own stream keyed by `(seed, address)`, so a cascade of any depth is a
//! prefix of one infinite, seed-determined cascade.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::ser::{SerializeMap, SerializeStruct};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::format::Sig17;
use crate::quadrature;
use crate::rng;

/// `√(8/π)`: the constant relating resistance perturbations to excursion heights.
pub const HEIGHT_SCALE: f64 = 1.595_769_121_605_730_7;

/// Longest address representable (3^40 < 2^64).
pub const MAX_ADDRESS_LEN: usize = 40;

/// Word over `{1, 2, 3}`, stored as its length and base-3 index
/// (first letter most significant, letter `d` contributing digit `d - 1`).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Address {
    len: u8,
    index: u64,
}

#[inline]
pub(crate) fn pow3(k: usize) -> u64 {
    3u64.pow(k as u32)
}

impl Address {
    pub const ROOT: Address = Address { len: 0, index: 0 };

    pub fn new(digits: &[u8]) -> Result<Self> {
        if digits.len() > MAX_ADDRESS_LEN {
            return Err(Error::invalid(format!(
                "address longer than {MAX_ADDRESS_LEN} letters"
            )));
        }
        let mut a = Address::ROOT;
        for &d in digits {
            if !(1..=3).contains(&d) {
                return Err(Error::invalid(format!("address letter {d} not in 1..=3")));
            }
            a = a.child(d);
        }
        Ok(a)
    }

    /// Address of length `len` with base-3 index `index`.
    pub fn from_index(len: usize, index: u64) -> Self {
        assert!(len <= MAX_ADDRESS_LEN && index < pow3(len));
        Address {
            len: len as u8,
            index,
        }
    }

    /// Word made of `prefix` followed by `period` repeated until length `len`.
    pub fn eventually_periodic(prefix: &[u8], period: &[u8], len: usize) -> Result<Self> {
        if period.is_empty() && prefix.len() < len {
            return Err(Error::invalid("empty period"));
        }
        let digits: Vec<u8> = prefix
            .iter()
            .copied()
            .chain(period.iter().copied().cycle())
            .take(len)
            .collect();
        Address::new(&digits)
    }

    #[inline]
    pub fn len(self) -> usize {
        self.len as usize
    }

    #[inline]
    pub fn is_root(self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn index(self) -> u64 {
        self.index
    }

    #[inline]
    pub fn child(self, j: u8) -> Address {
        debug_assert!((1..=3).contains(&j));
        assert!(self.len() < MAX_ADDRESS_LEN, "address overflow");
        Address {
            len: self.len + 1,
            index: self.index * 3 + (j as u64 - 1),
        }
    }

    pub fn parent(self) -> Option<Address> {
        (!self.is_root()).then(|| Address {
            len: self.len - 1,
            index: self.index / 3,
        })
    }

    /// Last letter, `None` at the root.
    pub fn last(self) -> Option<u8> {
        (!self.is_root()).then(|| (self.index % 3) as u8 + 1)
    }

    /// `i|m`.
    pub fn truncate(self, m: usize) -> Address {
        assert!(m <= self.len());
        Address {
            len: m as u8,
            index: self.index / pow3(self.len() - m),
        }
    }

    /// Letter at 0-based position `k`.
    pub fn letter(self, k: usize) -> u8 {
        assert!(k < self.len());
        ((self.index / pow3(self.len() - 1 - k)) % 3) as u8 + 1
    }

    pub fn letters(self) -> impl Iterator<Item = u8> {
        (0..self.len()).map(move |k| self.letter(k))
    }

    /// Concatenation `ij`.
    pub fn concat(self, other: Address) -> Address {
        assert!(self.len() + other.len() <= MAX_ADDRESS_LEN, "address overflow");
        Address {
            len: self.len + other.len,
            index: self.index * pow3(other.len()) + other.index,
        }
    }

    /// Left shift `σ(i)`: drop the first letter.
    pub fn shift(self) -> Address {
        assert!(!self.is_root());
        Address {
            len: self.len - 1,
            index: self.index % pow3(self.len() - 1),
        }
    }

    pub fn is_prefix_of(self, other: Address) -> bool {
        self.len <= other.len && other.truncate(self.len()) == self
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in self.letters() {
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_root() {
            write!(f, "Address(∅)")
        } else {
            write!(f, "Address({self})")
        }
    }
}

impl FromStr for Address {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits: Vec<u8> = s
            .bytes()
            .map(|b| b.wrapping_sub(b'0'))
            .collect();
        Address::new(&digits).map_err(|_| Error::Format(format!("bad address {s:?}")))
    }
}

/// Masses `(Δ1, Δ2, Δ3)` of the three children of an address.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MassTriple(pub [f64; 3]);

impl MassTriple {
    pub const UNIFORM: MassTriple = MassTriple([1.0 / 3.0; 3]);

    pub fn new(masses: [f64; 3]) -> Result<Self> {
        let sum: f64 = masses.iter().sum();
        if masses.iter().any(|&m| !(m > 0.0 && m < 1.0)) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("not a mass triple: {masses:?}")));
        }
        Ok(MassTriple(masses))
    }

    #[inline]
    pub fn mass(&self, j: u8) -> f64 {
        self.0[j as usize - 1]
    }

    /// `w(ij) = Δ_{ij}^{1/2}`.
    #[inline]
    pub fn weight(&self, j: u8) -> f64 {
        self.0[j as usize - 1].sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// One Dirichlet(1/2, 1/2, 1/2) triple: three Gamma(1/2, 1) variates
/// normalised by their sum. A Gamma(1/2, 1) variate is `Z²/2` for standard
/// normal `Z`; the factor 1/2 cancels in the normalisation.
pub fn sample_dirichlet_half<R: Rng + ?Sized>(rng: &mut R) -> MassTriple {
    loop {
        let g: [f64; 3] = std::array::from_fn(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z * z
        });
        let total = g[0] + g[1] + g[2];
        if g.iter().all(|&x| x > 0.0) && total.is_finite() {
            let m = [g[0] / total, g[1] / total, g[2] / total];
            if m.iter().all(|&x| x > 0.0 && x < 1.0) {
                return MassTriple(m);
            }
        }
    }
}

/// Where triples come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TripleSource {
    /// Independent Dirichlet(1/2,1/2,1/2) triples keyed by `(seed, address)`.
    Random { seed: u64 },
    /// Every triple equals (1/3, 1/3, 1/3); deterministic smoke-test cascade.
    Uniform,
}

impl TripleSource {
    /// Triple at an absolute address.
    #[inline]
    pub fn triple(&self, addr: Address) -> MassTriple {
        match *self {
            TripleSource::Random { seed } => {
                let mut r = rng::address_rng(seed, addr.len() as u32, addr.index());
                sample_dirichlet_half(&mut r)
            }
            TripleSource::Uniform => MassTriple::UNIFORM,
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match *self {
            TripleSource::Random { seed } => Some(seed),
            TripleSource::Uniform => None,
        }
    }
}

/// Ensure `3^depth × multiplicity` fits in `budget`.
pub fn check_budget(what: &str, depth: usize, multiplicity: u128, budget: u128) -> Result<()> {
    let needed = 3u128
        .checked_pow(depth as u32)
        .and_then(|c| c.checked_mul(multiplicity))
        .unwrap_or(u128::MAX);
    if depth > MAX_ADDRESS_LEN || needed > budget {
        return Err(Error::Capacity {
            what: what.to_string(),
            needed,
            budget,
        });
    }
    Ok(())
}

/// Triples for every address of length `< depth`, plus the derived length
/// factors `l(i)` for every address of length `<= depth`.
///
/// Addresses are relative to `origin`; a cascade obtained with
/// [`CascadeTree::subtree`] keeps drawing extension triples from the same
/// absolute addresses as its parent.
#[derive(Clone, Debug)]
pub struct CascadeTree {
    source: TripleSource,
    origin: Address,
    depth: usize,
    triples: Vec<Vec<MassTriple>>,
    lengths: Vec<Vec<f64>>,
}

/// Sample a cascade of the given depth; fails when `3^depth` exceeds `budget`.
pub fn sample_cascade(depth: usize, seed: u64, budget: u128) -> Result<CascadeTree> {
    check_budget("cascade", depth, 1, budget)?;
    Ok(CascadeTree::generate(
        TripleSource::Random { seed },
        Address::ROOT,
        depth,
    ))
}

impl CascadeTree {
    /// Cascade whose triples are all (1/3, 1/3, 1/3).
    pub fn uniform(depth: usize) -> Self {
        CascadeTree::generate(TripleSource::Uniform, Address::ROOT, depth)
    }

    fn generate(source: TripleSource, origin: Address, depth: usize) -> Self {
        let triples = (0..depth)
            .map(|k| {
                (0..pow3(k))
                    .map(|a| source.triple(origin.concat(Address::from_index(k, a))))
                    .collect()
            })
            .collect();
        CascadeTree::from_parts(source, origin, depth, triples)
    }

    fn from_parts(
        source: TripleSource,
        origin: Address,
        depth: usize,
        triples: Vec<Vec<MassTriple>>,
    ) -> Self {
        let mut lengths = Vec::with_capacity(depth + 1);
        lengths.push(vec![1.0]);
        for k in 0..depth {
            let prev: &Vec<f64> = &lengths[k];
            let next: Vec<f64> = triples[k]
                .iter()
                .zip(prev)
                .flat_map(|(t, &l)| (1..=3).map(move |j| l * t.weight(j)))
                .collect();
            lengths.push(next);
        }
        CascadeTree {
            source,
            origin,
            depth,
            triples,
            lengths,
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn source(&self) -> TripleSource {
        self.source
    }

    pub fn origin(&self) -> Address {
        self.origin
    }

    /// Triple of children masses at `addr`, drawing from the source beyond the stored depth.
    #[inline]
    pub fn triple(&self, addr: Address) -> MassTriple {
        if addr.len() < self.depth {
            self.triples[addr.len()][addr.index() as usize]
        } else {
            self.source.triple(self.origin.concat(addr))
        }
    }

    /// Stored triples of level `k < depth`, indexed by address index.
    pub fn level_triples(&self, k: usize) -> &[MassTriple] {
        &self.triples[k]
    }

    /// `w(addr)`; panics at the root.
    #[inline]
    pub fn w(&self, addr: Address) -> f64 {
        let parent = addr.parent().expect("w(∅) is undefined");
        self.triple(parent).weight(addr.last().unwrap())
    }

    /// `Δ_addr`; panics at the root.
    pub fn delta(&self, addr: Address) -> f64 {
        let parent = addr.parent().expect("Δ_∅ is undefined");
        self.triple(parent).mass(addr.last().unwrap())
    }

    /// `l(addr)` for `|addr| <= depth`.
    #[inline]
    pub fn l(&self, addr: Address) -> f64 {
        self.lengths[addr.len()][addr.index() as usize]
    }

    /// `l(i)` for every `i` of length `k`, indexed by address index.
    pub fn level_lengths(&self, k: usize) -> &[f64] {
        &self.lengths[k]
    }

    /// Cascade rooted at `addr`, with lengths renormalised so `l(∅) = 1` there.
    pub fn subtree(&self, addr: Address) -> CascadeTree {
        assert!(addr.len() <= self.depth);
        let depth = self.depth - addr.len();
        let triples = (0..depth)
            .map(|k| {
                let start = (addr.index() * pow3(k)) as usize;
                self.triples[addr.len() + k][start..start + pow3(k) as usize].to_vec()
            })
            .collect();
        CascadeTree::from_parts(self.source, self.origin.concat(addr), depth, triples)
    }

    /// The same cascade truncated at a smaller depth.
    pub fn truncated(&self, depth: usize) -> CascadeTree {
        assert!(depth <= self.depth);
        CascadeTree::from_parts(
            self.source,
            self.origin,
            depth,
            self.triples[..depth].to_vec(),
        )
    }

    /// `Σ_{|i| = k} l(i)^p`.
    pub fn level_moment(&self, k: usize, p: f64) -> f64 {
        self.lengths[k].iter().map(|l| l.powf(p)).sum()
    }

    // ---- serialization ----

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    pub fn read_json<R: Read>(input: R) -> Result<Self> {
        let doc: CascadeDoc = serde_json::from_reader(input)?;
        let source = match (doc.source.as_str(), doc.master_seed) {
            ("random", Some(seed)) => TripleSource::Random { seed },
            ("uniform", _) => TripleSource::Uniform,
            (s, _) => return Err(Error::Format(format!("unknown cascade source {s:?}"))),
        };
        let origin: Address = doc.origin.parse()?;
        let mut triples: Vec<Vec<Option<MassTriple>>> =
            (0..doc.depth).map(|k| vec![None; pow3(k) as usize]).collect();
        for (key, masses) in doc.triples {
            let a: Address = key.parse()?;
            if a.len() >= doc.depth {
                return Err(Error::Format(format!("address {key:?} beyond depth")));
            }
            triples[a.len()][a.index() as usize] = Some(MassTriple::new(masses)?);
        }
        let triples = triples
            .into_iter()
            .map(|lvl| {
                lvl.into_iter()
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| Error::IncompleteCascade("missing triples".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CascadeTree::from_parts(source, origin, doc.depth, triples))
    }

    /// Compact dump: magic `CRTC`, u8 source (0 random, 1 uniform), u64 seed,
    /// u32 depth, u8 origin length, u64 origin index, then every triple as three
    /// little-endian f64 in level order.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(b"CRTC")?;
        let (tag, seed) = match self.source {
            TripleSource::Random { seed } => (0u8, seed),
            TripleSource::Uniform => (1u8, 0),
        };
        out.write_all(&[tag])?;
        out.write_all(&seed.to_le_bytes())?;
        out.write_all(&(self.depth as u32).to_le_bytes())?;
        out.write_all(&[self.origin.len() as u8])?;
        out.write_all(&self.origin.index().to_le_bytes())?;
        for lvl in &self.triples {
            for t in lvl {
                for m in t.0 {
                    out.write_all(&m.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != b"CRTC" {
            return Err(Error::Format("bad cascade magic".into()));
        }
        let mut b1 = [0u8; 1];
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        input.read_exact(&mut b1)?;
        let tag = b1[0];
        input.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        input.read_exact(&mut b4)?;
        let depth = u32::from_le_bytes(b4) as usize;
        input.read_exact(&mut b1)?;
        let olen = b1[0] as usize;
        input.read_exact(&mut b8)?;
        let oidx = u64::from_le_bytes(b8);
        if depth + olen > MAX_ADDRESS_LEN || oidx >= pow3(olen) {
            return Err(Error::Format("cascade header out of range".into()));
        }
        let source = match tag {
            0 => TripleSource::Random { seed },
            1 => TripleSource::Uniform,
            t => return Err(Error::Format(format!("bad source tag {t}"))),
        };
        let mut triples = Vec::with_capacity(depth);
        for k in 0..depth {
            let mut lvl = Vec::with_capacity(pow3(k) as usize);
            for _ in 0..pow3(k) {
                let mut m = [0.0; 3];
                for x in &mut m {
                    input.read_exact(&mut b8)?;
                    *x = f64::from_le_bytes(b8);
                }
                lvl.push(MassTriple::new(m)?);
            }
            triples.push(lvl);
        }
        Ok(CascadeTree::from_parts(
            source,
            Address::from_index(olen, oidx),
            depth,
            triples,
        ))
    }
}

struct TripleMap<'a>(&'a [Vec<MassTriple>]);

impl Serialize for TripleMap<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let n: usize = self.0.iter().map(Vec::len).sum();
        let mut map = s.serialize_map(Some(n))?;
        for (k, lvl) in self.0.iter().enumerate() {
            for (a, t) in lvl.iter().enumerate() {
                let key = Address::from_index(k, a as u64).to_string();
                map.serialize_entry(&key, &t.0.map(Sig17))?;
            }
        }
        map.end()
    }
}

impl Serialize for CascadeTree {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("CascadeTree", 5)?;
        let (source, seed) = match self.source {
            TripleSource::Random { seed } => ("random", Some(seed)),
            TripleSource::Uniform => ("uniform", None),
        };
        st.serialize_field("master_seed", &seed)?;
        st.serialize_field("source", source)?;
        st.serialize_field("origin", &self.origin.to_string())?;
        st.serialize_field("depth", &self.depth)?;
        st.serialize_field("triples", &TripleMap(&self.triples))?;
        st.end()
    }
}

#[derive(Deserialize)]
struct CascadeDoc {
    master_seed: Option<u64>,
    source: String,
    #[serde(default)]
    origin: String,
    depth: usize,
    triples: BTreeMap<String, [f64; 3]>,
}

// ---------------------------------------------------------------------------
// Resistance perturbations
// ---------------------------------------------------------------------------

/// Truncated resistance perturbations `R_i^{(m)} = Σ_{j∈{1,2}^m} l(ij)/l(i)`
/// for every address of length `<= depth`, and heights `D_i = R_i / H`.
#[derive(Clone, Debug)]
pub struct PerturbationTable {
    trunc_depth: usize,
    anchored: bool,
    values: Vec<Vec<f64>>,
}

/// `R_addr^{(m)}` by the recursion `R^{(m)}_i = w(i1) R^{(m-1)}_{i1} + w(i2) R^{(m-1)}_{i2}`,
/// extending the cascade lazily along `{1,2}` descendants.
pub fn truncated_perturbation(cascade: &CascadeTree, addr: Address, m: usize) -> f64 {
    if m == 0 {
        return 1.0;
    }
    let t = cascade.triple(addr);
    t.weight(1) * truncated_perturbation(cascade, addr.child(1), m - 1)
        + t.weight(2) * truncated_perturbation(cascade, addr.child(2), m - 1)
}

/// Table with every address truncated at exactly `m` levels below itself.
pub fn perturbations(cascade: &CascadeTree, m: usize) -> PerturbationTable {
    let values = (0..=cascade.depth())
        .map(|k| {
            (0..pow3(k))
                .map(|a| truncated_perturbation(cascade, Address::from_index(k, a), m))
                .collect()
        })
        .collect();
    PerturbationTable {
        trunc_depth: m,
        anchored: false,
        values,
    }
}

impl PerturbationTable {
    /// Leaf-anchored table: addresses of length `depth` are truncated at `m`,
    /// shallower ones are obtained by the exact recursion, so the family is
    /// compatible across levels. An address of length `k` carries truncation
    /// `m + depth - k`.
    pub fn anchored(cascade: &CascadeTree, m: usize) -> Self {
        let n = cascade.depth();
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
        values[n] = (0..pow3(n))
            .map(|a| truncated_perturbation(cascade, Address::from_index(n, a), m))
            .collect();
        for k in (0..n).rev() {
            let below = &values[k + 1];
            values[k] = cascade.triples[k]
                .iter()
                .enumerate()
                .map(|(a, t)| t.weight(1) * below[3 * a] + t.weight(2) * below[3 * a + 1])
                .collect();
        }
        PerturbationTable {
            trunc_depth: m,
            anchored: true,
            values,
        }
    }

    pub fn trunc_depth(&self) -> usize {
        self.trunc_depth
    }

    pub fn is_anchored(&self) -> bool {
        self.anchored
    }

    pub fn depth(&self) -> usize {
        self.values.len() - 1
    }

    /// Truncation actually carried by addresses of length `k`.
    pub fn truncation_at(&self, k: usize) -> usize {
        if self.anchored {
            self.trunc_depth + self.depth() - k
        } else {
            self.trunc_depth
        }
    }

    #[inline]
    pub fn value(&self, addr: Address) -> f64 {
        self.values[addr.len()][addr.index() as usize]
    }

    pub fn level(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    /// `D_i = R_i / H`.
    pub fn height(&self, addr: Address) -> f64 {
        self.value(addr) / HEIGHT_SCALE
    }

    /// The table seen from the subtree at `addr` (values are scale free, so unchanged).
    pub fn subtree(&self, addr: Address) -> PerturbationTable {
        let values = (0..self.values.len() - addr.len())
            .map(|k| {
                let start = (addr.index() * pow3(k)) as usize;
                self.values[addr.len() + k][start..start + pow3(k) as usize].to_vec()
            })
            .collect();
        PerturbationTable {
            trunc_depth: self.trunc_depth,
            anchored: self.anchored,
            values,
        }
    }
}

/// One sample of `R_∅^{(m)}` from a single sequential stream (no cascade kept).
pub fn sample_root_perturbation<R: Rng + ?Sized>(m: usize, rng: &mut R) -> f64 {
    if m == 0 {
        return 1.0;
    }
    let t = sample_dirichlet_half(rng);
    let (w1, w2) = (t.weight(1), t.weight(2));
    w1 * sample_root_perturbation(m - 1, rng) + w2 * sample_root_perturbation(m - 1, rng)
}

/// Approximate samples of `R_∅^{(m)}` by iterating the distributional recursion
/// on a pool: generation `k` draws a fresh triple per member and two distinct
/// members of generation `k - 1`. Means are preserved exactly; pairwise
/// dependence between members is of order `m / pool`.
pub fn perturbation_pool(m: usize, pool: usize, seed: u64) -> Vec<f64> {
    assert!(pool >= 2);
    let mut r = rng::stream(seed, rng::tag::ROOT_PERTURBATION, m as u64);
    let mut cur = vec![1.0f64; pool];
    let mut next = vec![0.0f64; pool];
    for _ in 0..m {
        for x in next.iter_mut() {
            let t = sample_dirichlet_half(&mut r);
            let a = r.random_range(0..pool);
            let mut b = r.random_range(0..pool - 1);
            if b >= a {
                b += 1;
            }
            *x = t.weight(1) * cur[a] + t.weight(2) * cur[b];
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

// ---------------------------------------------------------------------------
// Cut sets and the branching population
// ---------------------------------------------------------------------------

/// `Λ_t = {i : -3 ln l(i) >= t > -3 ln l(i|(|i|-1))}`, in depth-first order.
pub fn cut_set(cascade: &CascadeTree, t: f64) -> Result<Vec<Address>> {
    if !(t > 0.0) {
        return Err(Error::invalid("cut level must be positive"));
    }
    let mut out = Vec::new();
    let mut stack = vec![Address::ROOT];
    while let Some(a) = stack.pop() {
        if -3.0 * cascade.l(a).ln() >= t {
            out.push(a);
        } else if a.len() == cascade.depth() {
            return Err(Error::Capacity {
                what: format!("cut set at t = {t}: branch {a} not crossed at depth"),
                needed: pow3(cascade.depth() + 1) as u128,
                budget: pow3(cascade.depth()) as u128,
            });
        } else {
            for j in (1..=3).rev() {
                stack.push(a.child(j));
            }
        }
    }
    Ok(out)
}

/// Node of the lazily explored population: an address while one fits, then a
/// hash chain seeded by the deepest address.
#[derive(Clone, Copy)]
enum PopNode {
    At(Address),
    Deep(u64),
}

impl PopNode {
    fn triple(self, source: &TripleSource) -> MassTriple {
        match (self, source) {
            (PopNode::At(a), _) => source.triple(a),
            (PopNode::Deep(_), TripleSource::Uniform) => MassTriple::UNIFORM,
            (PopNode::Deep(key), TripleSource::Random { seed }) => {
                sample_dirichlet_half(&mut rng::stream(*seed, rng::tag::POPULATION, key))
            }
        }
    }

    fn child(self, j: u8) -> PopNode {
        match self {
            PopNode::At(a) if a.len() < MAX_ADDRESS_LEN => PopNode::At(a.child(j)),
            PopNode::At(a) => PopNode::Deep(rng::derive(a.index(), rng::tag::POPULATION, j as u64)),
            PopNode::Deep(key) => PopNode::Deep(rng::derive(key, rng::tag::POPULATION, j as u64)),
        }
    }
}

/// `#{i ∈ Σ_* : -ln l(i) < t}` for each threshold, exploring the infinite
/// cascade of `source` lazily. Fails once more than `cap` addresses are visited.
/// Lineages deeper than [`MAX_ADDRESS_LEN`] draw their triples from a hash chain.
pub fn population_counts(source: TripleSource, thresholds: &[f64], cap: u64) -> Result<Vec<u64>> {
    let t_max = thresholds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut counts = vec![0u64; thresholds.len()];
    let mut visited = 0u64;
    let mut stack = vec![(PopNode::At(Address::ROOT), 0.0f64)];
    while let Some((a, s)) = stack.pop() {
        visited += 1;
        if visited > cap {
            return Err(Error::Capacity {
                what: "branching population".into(),
                needed: visited as u128,
                budget: cap as u128,
            });
        }
        for (c, &t) in counts.iter_mut().zip(thresholds) {
            if s < t {
                *c += 1;
            }
        }
        let tri = a.triple(&source);
        for j in 1..=3u8 {
            let sj = s - 0.5 * tri.mass(j).ln();
            if sj < t_max {
                stack.push((a.child(j), sj));
            }
        }
    }
    Ok(counts)
}

// ---------------------------------------------------------------------------
// The measure ν_γ
// ---------------------------------------------------------------------------

/// `γ = 2/3`.
pub const GAMMA: f64 = 2.0 / 3.0;

/// Total mass `∫ e^{-γt} ν(dt) = Σ_i E[w(i)^{3γ}]` and first moment
/// `∫ t ν_γ(dt) = Σ_i E[-(3/2) Δ_i ln Δ_i]`, by adaptive quadrature against the
/// Beta(1/2, 1) marginal density `x^{-1/2}/2`.
pub fn nu_gamma_moments() -> (f64, f64) {
    // x = s² turns the Beta(1/2,1) density into the uniform density on [0,1].
    let total = 3.0 * quadrature::adaptive_simpson(|s: f64| (s * s).powf(1.5 * GAMMA), 0.0, 1.0, 1e-13);
    let first = 3.0
        * quadrature::adaptive_simpson(
            |s: f64| {
                let x = s * s;
                if x == 0.0 {
                    0.0
                } else {
                    -1.5 * x * x.ln()
                }
            },
            0.0,
            1.0,
            1e-13,
        );
    (total, first)
}

/// `E[w(1)^p] = E[Δ^{p/2}]` under Beta(1/2, 1), by quadrature.
pub fn weight_moment(p: f64) -> f64 {
    quadrature::adaptive_simpson(|s: f64| s.powf(p), 0.0, 1.0, 1e-13)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    #[test]
    fn height_scale_constant() {
        assert_abs_diff_eq!(HEIGHT_SCALE, (8.0 / std::f64::consts::PI).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn address_arithmetic() {
        let a = Address::new(&[2, 1, 3]).unwrap();
        assert_eq!(a.to_string(), "213");
        assert_eq!(a.len(), 3);
        assert_eq!(a.truncate(1), Address::new(&[2]).unwrap());
        assert_eq!(a.shift().to_string(), "13");
        assert_eq!(a.last(), Some(3));
        assert_eq!(a.parent().unwrap().to_string(), "21");
        let b: Address = "12".parse().unwrap();
        assert_eq!(a.concat(b).to_string(), "21312");
        assert!(a.truncate(2).is_prefix_of(a));
        assert_eq!(Address::ROOT.to_string(), "");
        assert!("14".parse::<Address>().is_err());
        assert_eq!(
            Address::eventually_periodic(&[1, 1], &[2], 5).unwrap().to_string(),
            "11222"
        );
    }

    #[test]
    fn dirichlet_triples_sum_to_one() {
        let mut r = Xoshiro256PlusPlus::seed_from_u64(3);
        for _ in 0..1000 {
            let t = sample_dirichlet_half(&mut r);
            assert!((t.sum() - 1.0).abs() < 1e-12);
            assert!(t.0.iter().all(|&x| x > 0.0 && x < 1.0));
        }
    }

    #[test]
    fn empty_cascade_is_root_only() {
        let c = sample_cascade(0, 1, 1 << 20).unwrap();
        assert_eq!(c.depth(), 0);
        assert_eq!(c.l(Address::ROOT), 1.0);
        assert!(c.triples.is_empty());
    }

    #[test]
    fn level_mass_is_conserved() {
        let c = sample_cascade(8, 11, 1 << 20).unwrap();
        for k in 0..=8 {
            assert_abs_diff_eq!(c.level_moment(k, 2.0), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn cascades_are_nested_across_depths() {
        let small = sample_cascade(3, 5, 1 << 20).unwrap();
        let big = sample_cascade(6, 5, 1 << 20).unwrap();
        for k in 0..=3 {
            assert_eq!(small.level_lengths(k), big.level_lengths(k));
        }
        assert_eq!(big.truncated(3).level_lengths(3), small.level_lengths(3));
    }

    #[test]
    fn capacity_is_enforced() {
        assert!(matches!(sample_cascade(10, 1, 1000), Err(Error::Capacity { .. })));
    }

    #[test]
    fn subtree_renormalises_lengths() {
        let c = sample_cascade(5, 9, 1 << 20).unwrap();
        let a = Address::new(&[3, 1]).unwrap();
        let sub = c.subtree(a);
        assert_eq!(sub.depth(), 3);
        for k in 0..=3 {
            for b in 0..pow3(k) {
                let rel = Address::from_index(k, b);
                let direct = c.l(a.concat(rel)) / c.l(a);
                assert!((sub.l(rel) - direct).abs() < 1e-14 * direct.max(1e-300));
            }
        }
        // extension triples agree with the parent's
        let deep = Address::new(&[1, 2, 2, 1]).unwrap();
        assert_eq!(sub.triple(deep), c.triple(a.concat(deep)));
    }

    #[test]
    fn zero_truncation_is_one() {
        let c = sample_cascade(3, 2, 1 << 20).unwrap();
        let t = perturbations(&c, 0);
        for k in 0..=3 {
            assert!(t.level(k).iter().all(|&r| r == 1.0));
        }
    }

    #[test]
    fn truncated_recursion_is_bitwise_exact() {
        let c = sample_cascade(3, 21, 1 << 20).unwrap();
        let m = 5;
        let hi = perturbations(&c, m);
        let lo = perturbations(&c, m - 1);
        // lo at depth 3 does not include level-4 children; compute them directly
        for k in 0..=3 {
            for a in 0..pow3(k) {
                let addr = Address::from_index(k, a);
                let t = c.triple(addr);
                let child = |j| {
                    let ch = addr.child(j);
                    if ch.len() <= 3 {
                        lo.value(ch)
                    } else {
                        truncated_perturbation(&c, ch, m - 1)
                    }
                };
                let rhs = t.weight(1) * child(1) + t.weight(2) * child(2);
                assert_eq!(hi.value(addr).to_bits(), rhs.to_bits());
            }
        }
    }

    #[test]
    fn anchored_table_satisfies_recursion_and_truncation() {
        let c = sample_cascade(4, 8, 1 << 20).unwrap();
        let t = PerturbationTable::anchored(&c, 3);
        assert_eq!(t.truncation_at(4), 3);
        assert_eq!(t.truncation_at(0), 7);
        // R_∅ of the anchored table is R_∅^{(7)}
        let direct = truncated_perturbation(&c, Address::ROOT, 7);
        assert!((t.value(Address::ROOT) - direct).abs() < 1e-12);
        for k in 0..4 {
            for a in 0..pow3(k) {
                let addr = Address::from_index(k, a);
                let rhs = c.w(addr.child(1)) * t.value(addr.child(1))
                    + c.w(addr.child(2)) * t.value(addr.child(2));
                assert_eq!(t.value(addr).to_bits(), rhs.to_bits());
            }
        }
        assert!(t.level(2).iter().all(|&r| r > 0.0));
    }

    #[test]
    fn uniform_cascade_perturbations() {
        // w = 3^{-1/2} everywhere so R^{(m)} = (2/√3)^m
        let c = CascadeTree::uniform(2);
        let t = perturbations(&c, 4);
        let expect = (2.0 / 3f64.sqrt()).powi(4);
        assert!((t.value(Address::ROOT) - expect).abs() < 1e-12);
        assert!((t.height(Address::ROOT) - expect / HEIGHT_SCALE).abs() < 1e-12);
    }

    #[test]
    fn cut_set_partitions_mass() {
        let c = sample_cascade(12, 4, 1 << 22).unwrap();
        for t in [0.01, 1.0, 2.0, 3.0] {
            let cut = cut_set(&c, t).unwrap();
            let mass: f64 = cut.iter().map(|&a| c.l(a).powi(2)).sum();
            assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-9);
            // antichain: no element is a prefix of another
            for w in cut.windows(2) {
                assert!(!w[0].is_prefix_of(w[1]));
            }
        }
    }

    #[test]
    fn tiny_cut_level_gives_first_generation() {
        let c = sample_cascade(4, 4, 1 << 20).unwrap();
        let min_first = (1..=3u8)
            .map(|j| -3.0 * c.w(Address::ROOT.child(j)).ln())
            .fold(f64::INFINITY, f64::min);
        let cut = cut_set(&c, 0.5 * min_first).unwrap();
        let names: Vec<String> = cut.iter().map(|a| a.to_string()).collect();
        assert_eq!(names, ["1", "2", "3"]);
    }

    #[test]
    fn shallow_cascade_cut_reports_capacity() {
        let c = sample_cascade(2, 4, 1 << 20).unwrap();
        assert!(matches!(cut_set(&c, 50.0), Err(Error::Capacity { .. })));
        assert!(cut_set(&c, 0.0).is_err());
    }

    #[test]
    fn population_counts_are_monotone() {
        let counts =
            population_counts(TripleSource::Random { seed: 5 }, &[0.5, 1.0, 2.0], 1 << 20).unwrap();
        assert!(counts[0] >= 1 && counts[0] <= counts[1] && counts[1] <= counts[2]);
        assert!(population_counts(TripleSource::Random { seed: 5 }, &[8.0], 100).is_err());
    }

    #[test]
    fn population_survives_lineages_past_address_width() {
        let counts = (6100..6120)
            .map(|seed| population_counts(TripleSource::Random { seed }, &[6.0], 1 << 26).unwrap()[0])
            .collect::<Vec<_>>();
        assert!(counts.iter().all(|&c| c > 1000));
    }

    #[test]
    fn nu_gamma_is_a_probability_with_unit_mean() {
        let (mass, first) = nu_gamma_moments();
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(first, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(weight_moment(2.0), 1.0 / 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(weight_moment(3.0), 0.25, epsilon = 1e-9);
    }

    #[test]
    fn json_and_binary_roundtrip() {
        let c = sample_cascade(3, 77, 1 << 20).unwrap();
        let mut buf = Vec::new();
        c.write_json(&mut buf).unwrap();
        let back = CascadeTree::read_json(buf.as_slice()).unwrap();
        assert_eq!(back.level_lengths(3), c.level_lengths(3));
        assert_eq!(back.source(), c.source());

        let mut bin = Vec::new();
        c.subtree(Address::new(&[2]).unwrap()).write_binary(&mut bin).unwrap();
        let back = CascadeTree::read_binary(bin.as_slice()).unwrap();
        assert_eq!(back.origin().to_string(), "2");
        assert_eq!(back.level_triples(1), c.level_triples(2)[3..6].to_vec().as_slice());
    }

    #[test]
    fn json_of_empty_cascade_has_empty_map() {
        let c = sample_cascade(0, 3, 10).unwrap();
        let v: serde_json::Value = serde_json::to_value(&c).unwrap();
        assert_eq!(v["triples"].as_object().unwrap().len(), 0);
        assert_eq!(v["master_seed"], 3);
    }
}
