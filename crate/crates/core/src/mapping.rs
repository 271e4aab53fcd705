//! Oblivious two-choice hashing over a forest of small binary trees.
//!
//! The `n` buckets are the leaves of `T` identical trees with `L` leaves
//! each. A key hashes to two leaves; its bucket is the union of the two
//! leaf-to-root paths plus a client-side overflow node (the super root).
//! Storing places a key in the lowest node on either path that still has a
//! free slot.

use std::collections::HashMap;
use std::hash::Hash;

use hmac::{Hmac, Mac};
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::error::{param, Result};
use crate::rng;
use crate::scalar::Probability;

/// Default node capacity.
pub const DEFAULT_SLOTS: usize = 4;

/// Default exponent for the super-root capacity `ceil(log2(n)^x)`.
pub const DEFAULT_PHI_EXPONENT: f64 = 1.5;

/// Shape of the forest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestLayout {
    n: u64,
    leaves_per_tree: u64,
    trees: u64,
    levels: u32,
    slots: usize,
    phi: usize,
}

impl ForestLayout {
    /// A forest of `trees` trees with `leaves_per_tree` leaves each, for
    /// small or hand-built configurations.
    pub fn custom(leaves_per_tree: u64, trees: u64, slots: usize, phi: usize) -> Result<Self> {
        if !leaves_per_tree.is_power_of_two() {
            return Err(param(format!("{leaves_per_tree} leaves per tree is not a power of two")));
        }
        if trees == 0 || slots == 0 {
            return Err(param("forest needs at least one tree and one slot per node"));
        }
        Ok(ForestLayout {
            n: leaves_per_tree * trees,
            leaves_per_tree,
            trees,
            levels: leaves_per_tree.trailing_zeros() + 1,
            slots,
            phi,
        })
    }

    /// Requested capacity; the forest may have a few more leaves.
    pub fn n(&self) -> u64 {
        self.n
    }

    /// Actual leaf (bucket) count, `trees * leaves_per_tree >= n`.
    pub fn leaves(&self) -> u64 {
        self.trees * self.leaves_per_tree
    }

    pub fn leaves_per_tree(&self) -> u64 {
        self.leaves_per_tree
    }

    pub fn trees(&self) -> u64 {
        self.trees
    }

    /// Node levels per tree; heights run `0..levels`.
    pub fn levels(&self) -> u32 {
        self.levels
    }

    /// Slots per node.
    pub fn slots(&self) -> usize {
        self.slots
    }

    /// Super-root capacity.
    pub fn phi(&self) -> usize {
        self.phi
    }

    pub fn with_phi(mut self, phi: usize) -> Self {
        self.phi = phi;
        self
    }

    pub fn nodes_per_tree(&self) -> u64 {
        2 * self.leaves_per_tree - 1
    }

    pub fn node_count(&self) -> u64 {
        self.trees * self.nodes_per_tree()
    }

    /// Server slot count, `t * T * (2L - 1)`.
    pub fn slot_count(&self) -> u64 {
        self.node_count() * self.slots as u64
    }

    /// Slots on one leaf-to-root path.
    pub fn bucket_slots(&self) -> usize {
        self.slots * self.levels as usize
    }

    fn level_offset(&self, height: u32) -> u64 {
        (0..height).map(|h| self.leaves_per_tree >> h).sum()
    }

    /// Dense id in `[0, node_count)`.
    pub fn node_id(&self, addr: NodeAddr) -> u64 {
        addr.tree * self.nodes_per_tree() + self.level_offset(addr.height) + addr.index
    }

    pub fn node_addr(&self, id: u64) -> NodeAddr {
        let tree = id / self.nodes_per_tree();
        let mut rest = id % self.nodes_per_tree();
        let mut height = 0;
        while rest >= self.leaves_per_tree >> height {
            rest -= self.leaves_per_tree >> height;
            height += 1;
        }
        NodeAddr {
            tree,
            height,
            index: rest,
        }
    }

    /// Leaf-to-root path of leaf `leaf` in `[0, leaves)`.
    pub fn path(&self, leaf: u64) -> BucketPath {
        debug_assert!(leaf < self.leaves());
        let tree = leaf / self.leaves_per_tree;
        let idx = leaf % self.leaves_per_tree;
        BucketPath {
            nodes: (0..self.levels)
                .map(|h| NodeAddr {
                    tree,
                    height: h,
                    index: idx >> h,
                })
                .collect(),
        }
    }
}

/// Layout for `n` buckets: `L` is the smallest power of two at least
/// `log2(n)`, and the super root holds `ceil(log2(n)^phi_exponent)` keys.
pub fn layout_for(n: u64, slots: usize, phi_exponent: f64) -> Result<ForestLayout> {
    if n < 16 {
        return Err(param(format!("forest needs n >= 16, got {n}")));
    }
    if slots == 0 {
        return Err(param("node capacity must be at least 1"));
    }
    if !(phi_exponent > 0.0 && phi_exponent.is_finite()) {
        return Err(param(format!("phi exponent {phi_exponent} must be positive")));
    }
    let lg = (n as f64).log2();
    let leaves_per_tree = (snap_ceil(lg) as u64).next_power_of_two();
    let trees = n.div_ceil(leaves_per_tree);
    let levels = leaves_per_tree.trailing_zeros() + 1;
    let phi = snap_ceil(lg.powf(phi_exponent)) as usize;
    Ok(ForestLayout {
        n,
        leaves_per_tree,
        trees,
        levels,
        slots,
        phi,
    })
}

// Ceiling that ignores floating-point noise just above an integer.
fn snap_ceil(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeAddr {
    pub tree: u64,
    pub height: u32,
    pub index: u64,
}

/// Nodes from a leaf (height 0) up to its tree root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BucketPath {
    pub nodes: Vec<NodeAddr>,
}

type HmacSha256 = Hmac<Sha256>;

/// Keyed hash pair mapping keys to two leaves, plus a key-tag function for
/// slot labels.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingFn {
    #[serde(with = "hex")]
    key1: [u8; 32],
    #[serde(with = "hex")]
    key2: [u8; 32],
}

impl std::fmt::Debug for MappingFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("MappingFn(..)")
    }
}

impl MappingFn {
    pub fn new(key1: [u8; 32], key2: [u8; 32]) -> Self {
        MappingFn { key1, key2 }
    }

    pub fn generate<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut k1 = [0u8; 32];
        let mut k2 = [0u8; 32];
        rng.fill_bytes(&mut k1);
        rng.fill_bytes(&mut k2);
        MappingFn::new(k1, k2)
    }

    fn prf(key: &[u8; 32], domain: u8, u: &[u8]) -> [u8; 32] {
        let mut mac = HmacSha256::new_from_slice(key).expect("hmac accepts any key length");
        mac.update(&[domain]);
        mac.update(u);
        mac.finalize().into_bytes().into()
    }

    /// The two leaves of `u`, each in `[0, leaves)`. They may coincide.
    pub fn map_key(&self, u: &[u8], leaves: u64) -> (u64, u64) {
        let pick = |key: &[u8; 32]| {
            let h = Self::prf(key, 0, u);
            u64::from_be_bytes(h[..8].try_into().unwrap()) % leaves
        };
        (pick(&self.key1), pick(&self.key2))
    }

    /// 128-bit slot label for `u`. Never all zero, which marks an empty slot.
    pub fn key_tag(&self, u: &[u8]) -> [u8; 16] {
        let h = Self::prf(&self.key1, 1, u);
        let mut tag: [u8; 16] = h[..16].try_into().unwrap();
        tag[15] |= 1;
        tag
    }
}

/// Where the storing rule put (or would put) a key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Placement {
    Node { addr: NodeAddr, slot: usize },
    SuperRoot,
    Full,
}

/// The storing rule: the lowest height with room on either path, the lower
/// leaf first on ties; otherwise the super root if it has room.
/// `occupied(node)` reports how many slots of a node are in use.
pub fn choose_placement(
    layout: &ForestLayout,
    leaf_a: u64,
    leaf_b: u64,
    mut occupied: impl FnMut(NodeAddr) -> usize,
    super_root_load: usize,
) -> Placement {
    let (lo, hi) = (leaf_a.min(leaf_b), leaf_a.max(leaf_b));
    let (plo, phi) = (layout.path(lo), layout.path(hi));
    for h in 0..layout.levels as usize {
        for node in [plo.nodes[h], phi.nodes[h]] {
            let used = occupied(node);
            if used < layout.slots {
                return Placement::Node {
                    addr: node,
                    slot: used,
                };
            }
        }
    }
    if super_root_load < layout.phi {
        Placement::SuperRoot
    } else {
        Placement::Full
    }
}

/// Result of a forest lookup.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lookup {
    pub location: Option<Placement>,
    pub nodes_touched: usize,
}

/// An in-memory forest with a bounded super root. Used for simulation; the
/// key-value store keeps node contents on the server instead.
#[derive(Clone, Debug)]
pub struct Forest<K, V> {
    layout: ForestLayout,
    nodes: Vec<Vec<(K, V)>>,
    super_root: HashMap<K, V>,
    stored: usize,
}

impl<K: Eq + Hash + Clone, V> Forest<K, V> {
    pub fn new(layout: ForestLayout) -> Self {
        Forest {
            layout,
            nodes: (0..layout.node_count()).map(|_| Vec::new()).collect(),
            super_root: HashMap::new(),
            stored: 0,
        }
    }

    pub fn layout(&self) -> &ForestLayout {
        &self.layout
    }

    /// Inserts `key` (with leaves `a`, `b`) or overwrites its value in place.
    pub fn store(&mut self, key: K, leaves: (u64, u64), value: V) -> Placement {
        if let Some(loc) = self.lookup(&key, leaves).location {
            match loc {
                Placement::Node { addr, slot } => {
                    let id = self.layout.node_id(addr) as usize;
                    self.nodes[id][slot].1 = value;
                }
                Placement::SuperRoot => {
                    self.super_root.insert(key, value);
                }
                Placement::Full => unreachable!(),
            }
            return loc;
        }
        let layout = self.layout;
        let nodes = &self.nodes;
        let placement = choose_placement(
            &layout,
            leaves.0,
            leaves.1,
            |a| nodes[layout.node_id(a) as usize].len(),
            self.super_root.len(),
        );
        match placement {
            Placement::Node { addr, .. } => {
                self.nodes[layout.node_id(addr) as usize].push((key, value));
                self.stored += 1;
            }
            Placement::SuperRoot => {
                self.super_root.insert(key, value);
                self.stored += 1;
            }
            Placement::Full => {}
        }
        placement
    }

    /// Scans both paths and the super root in full.
    pub fn lookup(&self, key: &K, leaves: (u64, u64)) -> Lookup {
        let mut found = None;
        let mut touched = 0;
        for leaf in [leaves.0, leaves.1] {
            for addr in self.layout.path(leaf).nodes {
                touched += 1;
                let node = &self.nodes[self.layout.node_id(addr) as usize];
                if let Some(slot) = node.iter().position(|(k, _)| k == key) {
                    found.get_or_insert(Placement::Node { addr, slot });
                }
            }
        }
        if found.is_none() && self.super_root.contains_key(key) {
            found = Some(Placement::SuperRoot);
        }
        Lookup {
            location: found,
            nodes_touched: touched,
        }
    }

    pub fn get(&self, key: &K, leaves: (u64, u64)) -> Option<&V> {
        match self.lookup(key, leaves).location? {
            Placement::Node { addr, slot } => {
                Some(&self.nodes[self.layout.node_id(addr) as usize][slot].1)
            }
            Placement::SuperRoot => self.super_root.get(key),
            Placement::Full => None,
        }
    }

    /// Per height, the number of nodes with every slot occupied.
    pub fn level_fill_histogram(&self) -> Vec<u64> {
        let mut hist = vec![0; self.layout.levels as usize];
        for (id, node) in self.nodes.iter().enumerate() {
            if node.len() == self.layout.slots {
                hist[self.layout.node_addr(id as u64).height as usize] += 1;
            }
        }
        hist
    }

    pub fn super_root_load(&self) -> usize {
        self.super_root.len()
    }

    /// Highest height holding a key, `None` for an empty forest.
    pub fn max_height_used(&self) -> Option<u32> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| !n.is_empty())
            .map(|(id, _)| self.layout.node_addr(id as u64).height)
            .max()
    }

    pub fn occupied_slots(&self) -> usize {
        self.nodes.iter().map(Vec::len).sum()
    }

    /// Keys successfully stored (forest plus super root).
    pub fn stored(&self) -> usize {
        self.stored
    }
}

/// The exact factor `rho_i = (2/3)^(2^(i+2)) * (1/2)^(2(i+2))`, so that the
/// level bound is `beta_i = (n/e) * rho_i`.
pub fn beta_factor<P: Probability>(i: u32) -> P {
    let two_thirds = pow(P::from_ratio(2, 3), 1u64 << (i + 2));
    let quarter = pow(P::from_ratio(1, 4), u64::from(i) + 2);
    two_thirds * quarter
}

fn pow<P: Probability>(mut base: P, mut exp: u64) -> P {
    let mut acc = P::one();
    while exp > 0 {
        if exp & 1 == 1 {
            acc *= base.clone();
        }
        base = base.clone() * base;
        exp >>= 1;
    }
    acc
}

/// The same factor via `rho_0 = 1/81`, `rho_(i+1) = rho_i^2 * 4^(i+1)`.
pub fn beta_factor_recurrence<P: Probability>(i: u32) -> P {
    let mut rho = P::from_ratio(1, 81);
    for j in 0..i {
        let scale = P::from_u64(1u64 << (2 * (j + 1)));
        rho = rho.clone() * rho * scale;
    }
    rho
}

/// `ln(beta_i)` for `n` keys, usable where `beta_i` itself underflows.
pub fn ln_beta(i: u32, n: u64) -> f64 {
    let e = (i + 2) as f64;
    (n as f64).ln() - 1.0 + 2f64.powf(e) * (2.0f64 / 3.0).ln() - 2.0 * e * std::f64::consts::LN_2
}

/// `beta_i = (n/e) (2/3)^(2^(i+2)) (1/2)^(2(i+2))`; `0.0` once it underflows.
pub fn beta(i: u32, n: u64) -> f64 {
    ln_beta(i, n).exp()
}

/// `beta_i` through `beta_(i+1) = (e/n) beta_i^2 2^(2(i+1))` from
/// `beta_0 = n / (81 e)`.
pub fn beta_recurrence(i: u32, n: u64) -> f64 {
    let nf = n as f64;
    let mut b = nf / (81.0 * std::f64::consts::E);
    for j in 0..i {
        b = std::f64::consts::E / nf * b * b * 4f64.powi(j as i32 + 1);
    }
    b
}

/// Largest level whose bound still reaches the super-root capacity.
pub fn i_star(n: u64, phi: usize) -> Option<u32> {
    let target = (phi as f64).ln();
    (0..64).take_while(|&i| ln_beta(i, n) >= target).last()
}

/// Maximum bin load after throwing `n` balls into `n` bins, each ball going
/// to the lighter of two uniform choices.
pub fn two_choice_max_load<R: Rng + ?Sized>(n: u64, rng: &mut R) -> u32 {
    let mut bins = vec![0u32; n as usize];
    for _ in 0..n {
        let a = rng.gen_range(0..n as usize);
        let b = rng.gen_range(0..n as usize);
        let dst = if bins[b] < bins[a] { b } else { a };
        bins[dst] += 1;
    }
    bins.into_iter().max().unwrap_or(0)
}

/// One trial of inserting `n` keys with uniformly random leaf pairs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SimRow {
    pub trial: u64,
    pub super_root_load: usize,
    pub max_height_used: Option<u32>,
    pub failures: u64,
    pub fill_histogram: Vec<u64>,
}

impl SimRow {
    pub fn csv_header(levels: u32) -> String {
        let mut h = String::from("trial,super_root_load,max_height_used");
        for i in 0..levels {
            h.push_str(&format!(",H_{i}"));
        }
        h
    }

    pub fn csv_line(&self) -> String {
        let mut line = format!(
            "{},{},{}",
            self.trial,
            self.super_root_load,
            self.max_height_used.map_or(-1, i64::from)
        );
        for h in &self.fill_histogram {
            line.push_str(&format!(",{h}"));
        }
        line
    }
}

/// Runs `trials` independent fills of the forest with `layout.n()` keys,
/// in parallel, reproducibly from `seed`.
pub fn simulate(layout: &ForestLayout, trials: u64, seed: u64) -> Vec<SimRow> {
    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = rng::stream(seed, trial);
            let mut forest: Forest<u64, ()> = Forest::new(*layout);
            let leaves = layout.leaves();
            let mut failures = 0;
            for key in 0..layout.n() {
                let pair = (rng.gen_range(0..leaves), rng.gen_range(0..leaves));
                if forest.store(key, pair, ()) == Placement::Full {
                    failures += 1;
                }
            }
            SimRow {
                trial,
                super_root_load: forest.super_root_load(),
                max_height_used: forest.max_height_used(),
                failures,
                fill_histogram: forest.level_fill_histogram(),
            }
        })
        .collect()
}
