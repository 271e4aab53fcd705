//! Differentially private key-value store.
//!
//! Buckets are the leaf-to-root paths of the mapping forest. Each key lives
//! in one of its two buckets or in the client-side super root. Buckets are
//! accessed through a bucket-granular DP-RAM: the stash holds whole buckets,
//! and because buckets share ancestor nodes, the newest copy of any node held
//! by a stashed bucket is kept in a per-node freshness map that every read
//! consults first.
//!
//! Server layout: one cell per slot, `tag (16 bytes) || value`, at address
//! `node_id * t + slot + 1`. An all-zero tag marks an empty slot.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::blockstore::{ciphertext_len, Block, BlockStore, Cipher};
use crate::dpram::{RamParams, RamStreams, RamTrace};
use crate::error::{param, Error, Result};
use crate::mapping::{
    choose_placement, layout_for, ForestLayout, MappingFn, Placement, DEFAULT_PHI_EXPONENT,
    DEFAULT_SLOTS,
};
use crate::rng::{self, StreamRng};

/// Buckets per key.
pub const CHOICES: u64 = 2;

/// Bytes of the slot label preceding each value.
pub const TAG_LEN: usize = 16;

/// Slot label derived from a key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Tag(#[serde(with = "hex")] pub [u8; TAG_LEN]);

impl std::fmt::Debug for Tag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tag({})", hex::encode(&self.0[..4]))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub tag: Tag,
    pub value: Block,
}

/// Plaintext contents of one forest node: exactly `t` slots.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeContents(pub Vec<Option<Slot>>);

impl NodeContents {
    pub fn empty(slots: usize) -> Self {
        NodeContents(vec![None; slots])
    }

    pub fn occupied(&self) -> usize {
        self.0.iter().filter(|s| s.is_some()).count()
    }

    fn find(&self, tag: &Tag) -> Option<usize> {
        self.0
            .iter()
            .position(|s| s.as_ref().is_some_and(|s| s.tag == *tag))
    }
}

/// Store configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KvsParams {
    layout: ForestLayout,
    stash_num: u64,
    stash_den: u64,
    value_size: usize,
    uniform_shape: bool,
}

impl KvsParams {
    /// Default forest for `n` keys with bucket stash probability `C/b`,
    /// `C = ceil(log2(b)^2)`.
    pub fn new(n: u64, value_size: usize) -> Result<Self> {
        Self::with_layout(layout_for(n, DEFAULT_SLOTS, DEFAULT_PHI_EXPONENT)?, value_size)
    }

    pub fn with_layout(layout: ForestLayout, value_size: usize) -> Result<Self> {
        if value_size == 0 {
            return Err(param("value size must be positive"));
        }
        let b = layout.leaves();
        Ok(KvsParams {
            layout,
            stash_num: RamParams::default_threshold(b),
            stash_den: b,
            value_size,
            uniform_shape: false,
        })
    }

    pub fn with_probability(mut self, num: u64, den: u64) -> Result<Self> {
        if num == 0 || den == 0 || num > den {
            return Err(param(format!("stash probability {num}/{den} outside (0, 1]")));
        }
        self.stash_num = num;
        self.stash_den = den;
        Ok(self)
    }

    /// Make gets issue two fake updates so they look like puts.
    pub fn with_uniform_shape(mut self, on: bool) -> Self {
        self.uniform_shape = on;
        self
    }

    pub fn layout(&self) -> &ForestLayout {
        &self.layout
    }

    pub fn buckets(&self) -> u64 {
        self.layout.leaves()
    }

    pub fn value_size(&self) -> usize {
        self.value_size
    }

    pub fn uniform_shape(&self) -> bool {
        self.uniform_shape
    }

    pub fn stash_ratio(&self) -> (u64, u64) {
        (self.stash_num, self.stash_den)
    }

    /// The bucket-level DP-RAM these parameters induce.
    pub fn ram_params(&self) -> Result<RamParams> {
        RamParams::with_probability(self.buckets(), self.stash_num, self.stash_den, self.value_size)
    }

    /// Plaintext bytes per server cell.
    pub fn slot_len(&self) -> usize {
        TAG_LEN + self.value_size
    }

    pub fn cell_len(&self) -> usize {
        ciphertext_len(self.slot_len())
    }

    pub fn cells(&self) -> u64 {
        self.layout.slot_count()
    }

    /// Cells per bucket.
    pub fn bucket_blocks(&self) -> u64 {
        self.layout.bucket_slots() as u64
    }

    /// Bucket queries issued by a get.
    pub fn queries_per_get(&self) -> u64 {
        if self.uniform_shape {
            2 * CHOICES
        } else {
            CHOICES
        }
    }

    /// Bucket queries issued by a put.
    pub fn queries_per_put(&self) -> u64 {
        2 * CHOICES
    }

    /// Server cell touches per get (each bucket query touches its bucket
    /// three times).
    pub fn blocks_per_get(&self) -> u64 {
        self.queries_per_get() * 3 * self.bucket_blocks()
    }

    pub fn blocks_per_put(&self) -> u64 {
        self.queries_per_put() * 3 * self.bucket_blocks()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct FreshNode {
    contents: NodeContents,
    refs: u32,
}

/// Client memory that must persist between sessions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KvsClientState {
    params: KvsParams,
    mapping: MappingFn,
    stashed: BTreeSet<u64>,
    fresh: BTreeMap<u64, FreshNode>,
    super_root: BTreeMap<Tag, Block>,
    #[serde(default)]
    counters: KvsCounters,
}

impl KvsClientState {
    pub fn params(&self) -> &KvsParams {
        &self.params
    }

    pub fn stats(&self) -> KvsStats {
        KvsStats {
            stashed_buckets: self.stashed.len(),
            fresh_nodes: self.fresh.len(),
            super_root_load: self.super_root.len(),
            counters: self.counters,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KvsCounters {
    pub gets: u64,
    pub puts: u64,
    pub bucket_queries: u64,
}

/// Snapshot of client-side resource use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct KvsStats {
    pub stashed_buckets: usize,
    pub fresh_nodes: usize,
    pub super_root_load: usize,
    pub counters: KvsCounters,
}

/// Randomness for the bucket DP-RAM plus the padding draws.
pub struct KvsStreams {
    pub ram: RamStreams,
    pub padding: StreamRng,
}

impl KvsStreams {
    pub fn seeded(seed: u64) -> Self {
        KvsStreams {
            ram: RamStreams::seeded(seed),
            padding: rng::stream(seed, 5),
        }
    }

    pub fn from_entropy() -> Self {
        KvsStreams {
            ram: RamStreams::from_entropy(),
            padding: rng::from_entropy(),
        }
    }
}

type Mutation<'a> = &'a mut dyn FnMut(&mut [NodeContents]);

/// A key-value store client bound to its server array.
pub struct DpKvs<S, C> {
    store: S,
    cipher: C,
    state: KvsClientState,
    streams: KvsStreams,
    trace_log: Option<Vec<RamTrace>>,
}

impl<S: BlockStore, C: Cipher> DpKvs<S, C> {
    /// Fills the server with encrypted empty slots and draws the initial
    /// bucket stash.
    pub fn setup(
        params: KvsParams,
        mut store: S,
        cipher: C,
        mapping: MappingFn,
        mut streams: KvsStreams,
    ) -> Result<Self> {
        check_geometry(&store, &params)?;
        let empty = Block::zeroed(params.slot_len());
        for addr in 1..=params.cells() {
            store.upload(addr, &cipher.encrypt(&empty, &mut streams.ram.encryption))?;
        }
        let layout = params.layout;
        let mut stashed = BTreeSet::new();
        let mut fresh: BTreeMap<u64, FreshNode> = BTreeMap::new();
        for bucket in 0..params.buckets() {
            if streams.ram.membership.gen_range(1..=params.stash_den) <= params.stash_num {
                stashed.insert(bucket);
                for addr in layout.path(bucket).nodes {
                    fresh
                        .entry(layout.node_id(addr))
                        .or_insert_with(|| FreshNode {
                            contents: NodeContents::empty(layout.slots()),
                            refs: 0,
                        })
                        .refs += 1;
                }
            }
        }
        Ok(DpKvs {
            store,
            cipher,
            state: KvsClientState {
                params,
                mapping,
                stashed,
                fresh,
                super_root: BTreeMap::new(),
                counters: KvsCounters::default(),
            },
            streams,
            trace_log: None,
        })
    }

    pub fn resume(state: KvsClientState, store: S, cipher: C, streams: KvsStreams) -> Result<Self> {
        check_geometry(&store, &state.params)?;
        Ok(DpKvs {
            store,
            cipher,
            state,
            streams,
            trace_log: None,
        })
    }

    pub fn params(&self) -> &KvsParams {
        &self.state.params
    }

    pub fn state(&self) -> &KvsClientState {
        &self.state
    }

    pub fn store(&self) -> &S {
        &self.store
    }

    pub fn into_parts(self) -> (KvsClientState, S) {
        (self.state, self.store)
    }

    pub fn stats(&self) -> KvsStats {
        self.state.stats()
    }

    /// Record the `(d, o)` bucket pair of every bucket query.
    pub fn set_trace_log(&mut self, on: bool) {
        self.trace_log = on.then(Vec::new);
    }

    pub fn take_traces(&mut self) -> Vec<RamTrace> {
        self.trace_log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// The two buckets for `key`, ascending, padded with a random bucket when
    /// both choices coincide. Also returns the real choices.
    fn buckets_for(&mut self, key: &[u8]) -> ([u64; 2], (u64, u64)) {
        let b = self.state.params.buckets();
        let (x, y) = self.state.mapping.map_key(key, b);
        let other = if x == y && b > 1 {
            let r = self.streams.padding.gen_range(0..b - 1);
            if r >= x {
                r + 1
            } else {
                r
            }
        } else {
            y
        };
        ([x.min(other), x.max(other)], (x, y))
    }

    /// Looks up `key`; `None` if it was never stored.
    pub fn get(&mut self, key: &[u8]) -> Result<Option<Block>> {
        let tag = Tag(self.state.mapping.key_tag(key));
        let (buckets, _) = self.buckets_for(key);
        let mut found = None;
        for bucket in buckets {
            let (contents, _) = self.bucket_read(bucket)?;
            if found.is_none() {
                found = contents
                    .iter()
                    .find_map(|node| node.find(&tag).map(|s| node.0[s].clone().unwrap().value));
            }
        }
        if self.state.params.uniform_shape {
            for bucket in buckets {
                self.bucket_update(bucket, &mut |_| {})?;
            }
        }
        self.state.counters.gets += 1;
        Ok(found.or_else(|| self.state.super_root.get(&tag).cloned()))
    }

    /// Inserts or overwrites `key`.
    pub fn put(&mut self, key: &[u8], value: Block) -> Result<()> {
        let params = self.state.params;
        if value.len() != params.value_size {
            return Err(param(format!(
                "value of {} bytes, value size is {}",
                value.len(),
                params.value_size
            )));
        }
        let layout = params.layout;
        let tag = Tag(self.state.mapping.key_tag(key));
        let (buckets, (leaf_a, leaf_b)) = self.buckets_for(key);

        let mut seen: BTreeMap<u64, NodeContents> = BTreeMap::new();
        for bucket in buckets {
            let (contents, _) = self.bucket_read(bucket)?;
            for (addr, node) in layout.path(bucket).nodes.into_iter().zip(contents) {
                seen.insert(layout.node_id(addr), node);
            }
        }

        // Node that receives the value, if any.
        let mut target = seen
            .iter()
            .find(|(_, node)| node.find(&tag).is_some())
            .map(|(&id, _)| id);
        let mut failure = None;
        if target.is_none() {
            if self.state.super_root.contains_key(&tag) {
                self.state.super_root.insert(tag, value.clone());
            } else {
                let placement = choose_placement(
                    &layout,
                    leaf_a,
                    leaf_b,
                    |addr| seen[&layout.node_id(addr)].occupied(),
                    self.state.super_root.len(),
                );
                match placement {
                    Placement::Node { addr, .. } => target = Some(layout.node_id(addr)),
                    Placement::SuperRoot => {
                        self.state.super_root.insert(tag, value.clone());
                    }
                    Placement::Full => {
                        failure = Some(Error::Capacity {
                            load: self.state.super_root.len(),
                            capacity: layout.phi(),
                        })
                    }
                }
            }
        }

        let mut pending = target.map(|id| (id, value));
        for bucket in buckets {
            let path: Vec<u64> = layout
                .path(bucket)
                .nodes
                .into_iter()
                .map(|a| layout.node_id(a))
                .collect();
            let real = pending
                .as_ref()
                .and_then(|(id, _)| path.iter().position(|p| p == id));
            match real {
                Some(pos) => {
                    let (_, v) = pending.take().unwrap();
                    let mut v = Some(v);
                    self.bucket_update(bucket, &mut |nodes| {
                        write_slot(&mut nodes[pos], tag, v.take().unwrap())
                    })?;
                }
                None => {
                    self.bucket_update(bucket, &mut |_| {})?;
                }
            }
        }
        debug_assert!(pending.is_none());
        self.state.counters.puts += 1;
        match failure {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// One bucket DP-RAM read.
    pub fn bucket_read(&mut self, bucket: u64) -> Result<(Vec<NodeContents>, RamTrace)> {
        self.bucket_query(bucket, None)
    }

    /// One bucket DP-RAM update applying `mutate` to the bucket's nodes
    /// (leaf first).
    pub fn bucket_update(
        &mut self,
        bucket: u64,
        mutate: Mutation<'_>,
    ) -> Result<(Vec<NodeContents>, RamTrace)> {
        self.bucket_query(bucket, Some(mutate))
    }

    fn bucket_query(
        &mut self,
        bucket: u64,
        mutate: Option<Mutation<'_>>,
    ) -> Result<(Vec<NodeContents>, RamTrace)> {
        let params = self.state.params;
        let layout = params.layout;
        let b = params.buckets();
        if bucket >= b {
            return Err(param(format!("bucket {bucket} outside [0, {b})")));
        }
        let ids: Vec<u64> = layout
            .path(bucket)
            .nodes
            .into_iter()
            .map(|a| layout.node_id(a))
            .collect();

        // Download phase.
        let was_stashed = self.state.stashed.remove(&bucket);
        let (d, mut contents) = if was_stashed {
            let d = self.streams.ram.download.gen_range(0..b);
            for id in self.path_ids(d) {
                for slot in 0..layout.slots() {
                    self.store.download(self.cell(id, slot))?;
                }
            }
            let contents = ids
                .iter()
                .map(|id| self.state.fresh[id].contents.clone())
                .collect();
            (d, contents)
        } else {
            let mut contents = Vec::with_capacity(ids.len());
            for &id in &ids {
                let server = self.fetch_node(id)?;
                contents.push(match self.state.fresh.get(&id) {
                    Some(f) => f.contents.clone(),
                    None => server,
                });
            }
            (bucket, contents)
        };
        if let Some(m) = mutate {
            m(&mut contents);
        }

        // Overwrite phase.
        let restash = self.streams.ram.coin.gen_range(1..=params.stash_den) <= params.stash_num;
        let o = if restash {
            let o = self.streams.ram.overwrite.gen_range(0..b);
            for id in self.path_ids(o) {
                for slot in 0..layout.slots() {
                    let addr = self.cell(id, slot);
                    let plain = self.cipher.decrypt(&self.store.download(addr)?)?;
                    let ct = self.cipher.encrypt(&plain, &mut self.streams.ram.encryption);
                    self.store.upload(addr, &ct)?;
                }
            }
            self.state.stashed.insert(bucket);
            for (&id, node) in ids.iter().zip(&contents) {
                let entry = self.state.fresh.entry(id).or_insert_with(|| FreshNode {
                    contents: node.clone(),
                    refs: 0,
                });
                entry.contents = node.clone();
                if !was_stashed {
                    entry.refs += 1;
                }
            }
            o
        } else {
            for (&id, node) in ids.iter().zip(&contents) {
                for (slot, entry) in node.0.iter().enumerate() {
                    let addr = self.cell(id, slot);
                    self.store.download(addr)?;
                    let plain = encode_slot(entry.as_ref(), params.value_size);
                    let ct = self.cipher.encrypt(&plain, &mut self.streams.ram.encryption);
                    self.store.upload(addr, &ct)?;
                }
                if let Some(f) = self.state.fresh.get_mut(&id) {
                    f.contents = node.clone();
                }
            }
            if was_stashed {
                for id in &ids {
                    let f = self.state.fresh.get_mut(id).expect("stashed bucket node is fresh");
                    f.refs -= 1;
                    if f.refs == 0 {
                        self.state.fresh.remove(id);
                    }
                }
            }
            bucket
        };

        self.state.counters.bucket_queries += 1;
        let trace = RamTrace { d, o };
        if let Some(log) = &mut self.trace_log {
            log.push(trace);
        }
        Ok((contents, trace))
    }

    fn path_ids(&self, bucket: u64) -> Vec<u64> {
        let layout = &self.state.params.layout;
        layout
            .path(bucket)
            .nodes
            .into_iter()
            .map(|a| layout.node_id(a))
            .collect()
    }

    fn cell(&self, node_id: u64, slot: usize) -> u64 {
        node_id * self.state.params.layout.slots() as u64 + slot as u64 + 1
    }

    fn fetch_node(&mut self, id: u64) -> Result<NodeContents> {
        let params = self.state.params;
        let mut node = Vec::with_capacity(params.layout.slots());
        for slot in 0..params.layout.slots() {
            let plain = self.cipher.decrypt(&self.store.download(self.cell(id, slot))?)?;
            node.push(decode_slot(&plain, params.value_size)?);
        }
        Ok(NodeContents(node))
    }
}

fn write_slot(node: &mut NodeContents, tag: Tag, value: Block) {
    let idx = node
        .find(&tag)
        .or_else(|| node.0.iter().position(Option::is_none))
        .expect("placement chose a node with a free slot");
    node.0[idx] = Some(Slot { tag, value });
}

fn encode_slot(slot: Option<&Slot>, value_size: usize) -> Block {
    let mut out = vec![0u8; TAG_LEN + value_size];
    if let Some(s) = slot {
        out[..TAG_LEN].copy_from_slice(&s.tag.0);
        out[TAG_LEN..].copy_from_slice(s.value.as_bytes());
    }
    Block(out)
}

fn decode_slot(plain: &Block, value_size: usize) -> Result<Option<Slot>> {
    let bytes = plain.as_bytes();
    if bytes.len() != TAG_LEN + value_size {
        return Err(Error::Size(format!(
            "slot of {} bytes, expected {}",
            bytes.len(),
            TAG_LEN + value_size
        )));
    }
    let tag: [u8; TAG_LEN] = bytes[..TAG_LEN].try_into().unwrap();
    if tag == [0; TAG_LEN] {
        return Ok(None);
    }
    Ok(Some(Slot {
        tag: Tag(tag),
        value: Block(bytes[TAG_LEN..].to_vec()),
    }))
}

fn check_geometry<S: BlockStore>(store: &S, params: &KvsParams) -> Result<()> {
    if store.cells() != params.cells() || store.cell_len() != params.cell_len() {
        return Err(param(format!(
            "store is {} cells of {} bytes, expected {} of {}",
            store.cells(),
            store.cell_len(),
            params.cells(),
            params.cell_len()
        )));
    }
    Ok(())
}
