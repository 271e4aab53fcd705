//! Errorless DP-RAM: an encrypted array on the server and a probabilistic
//! plaintext stash on the client.
//!
//! Every query makes exactly three cell accesses:
//!
//! 1. **Download phase.** If the block is stashed it is taken out of the
//!    stash and a uniformly random cell `d` is downloaded as cover; otherwise
//!    `d` is the block's own cell and its ciphertext is decrypted.
//! 2. A write replaces the value in hand.
//! 3. **Overwrite phase.** With probability `p` the value goes (back) into the
//!    stash and a uniformly random cell `o` is downloaded, re-encrypted and
//!    uploaded. Otherwise `o` is the block's own cell, which is downloaded,
//!    discarded, and overwritten with a fresh encryption of the value.
//!
//! `p` is realized exactly as a rational `num/den` by drawing `r` uniformly
//! from `[den]` and stashing iff `r <= num`.

use std::collections::HashMap;

use log::warn;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::blockstore::{ciphertext_len, Block, BlockStore, Cipher};
use crate::error::{param, Error, Result};
use crate::rng::{self, StreamRng};
use crate::scalar::Probability;

/// DP-RAM deployment parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RamParams {
    n: u64,
    stash_num: u64,
    stash_den: u64,
    block_size: usize,
}

impl RamParams {
    /// Stash threshold `c`, giving `p = c/n`.
    pub fn new(n: u64, c: u64, block_size: usize) -> Result<Self> {
        if n == 0 {
            return Err(param("n must be at least 1"));
        }
        if c == 0 {
            return Err(param("stash threshold C must be at least 1"));
        }
        if c > n {
            return Err(param(format!("stash threshold C={c} exceeds n={n}")));
        }
        let recommended = Self::default_threshold(n);
        if c < recommended {
            warn!("stash threshold C={c} is below the recommended {recommended} for n={n}");
        }
        Self::with_probability(n, c, n, block_size)
    }

    /// Arbitrary rational stash probability `num/den`.
    pub fn with_probability(n: u64, num: u64, den: u64, block_size: usize) -> Result<Self> {
        if n == 0 {
            return Err(param("n must be at least 1"));
        }
        if num == 0 || den == 0 || num > den {
            return Err(param(format!("stash probability {num}/{den} outside (0, 1]")));
        }
        if block_size == 0 {
            return Err(param("block size must be positive"));
        }
        Ok(RamParams {
            n,
            stash_num: num,
            stash_den: den,
            block_size,
        })
    }

    /// `ceil(log2(n)^2)`, clamped to `[1, n]`.
    pub fn default_threshold(n: u64) -> u64 {
        let lg = (n.max(1) as f64).log2();
        ((lg * lg).ceil() as u64).clamp(1, n.max(1))
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// `(num, den)` with `p = num/den`.
    pub fn stash_ratio(&self) -> (u64, u64) {
        (self.stash_num, self.stash_den)
    }

    pub fn p<P: Probability>(&self) -> P {
        P::from_ratio(self.stash_num, self.stash_den)
    }

    /// Expected stash size, `p·n`.
    pub fn expected_stash(&self) -> f64 {
        self.n as f64 * self.stash_num as f64 / self.stash_den as f64
    }

    fn coin<R: Rng + ?Sized>(&self, rng: &mut R) -> bool {
        rng.gen_range(1..=self.stash_den) <= self.stash_num
    }
}

/// The four randomness consumers of the scheme, plus ciphertext nonces.
/// Seeding them separately lets tests steer one decision without perturbing
/// the others.
pub struct RamStreams {
    /// Setup-time stash membership draws.
    pub membership: StreamRng,
    /// Cover index `d` on a stash hit.
    pub download: StreamRng,
    /// The overwrite-phase draw `r`.
    pub coin: StreamRng,
    /// Cover index `o` when the block is stashed.
    pub overwrite: StreamRng,
    pub encryption: StreamRng,
}

impl RamStreams {
    pub fn seeded(seed: u64) -> Self {
        RamStreams {
            membership: rng::stream(seed, 0),
            download: rng::stream(seed, 1),
            coin: rng::stream(seed, 2),
            overwrite: rng::stream(seed, 3),
            encryption: rng::stream(seed, 4),
        }
    }

    pub fn from_entropy() -> Self {
        RamStreams {
            membership: rng::from_entropy(),
            download: rng::from_entropy(),
            coin: rng::from_entropy(),
            overwrite: rng::from_entropy(),
            encryption: rng::from_entropy(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    Read,
    Write,
}

impl std::fmt::Display for OpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OpKind::Read => "read",
            OpKind::Write => "write",
        })
    }
}

/// One logical query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RamQuery {
    pub index: u64,
    pub new_block: Option<Block>,
}

impl RamQuery {
    pub fn read(index: u64) -> Self {
        RamQuery {
            index,
            new_block: None,
        }
    }

    pub fn write(index: u64, block: Block) -> Self {
        RamQuery {
            index,
            new_block: Some(block),
        }
    }

    pub fn op(&self) -> OpKind {
        if self.new_block.is_some() {
            OpKind::Write
        } else {
            OpKind::Read
        }
    }
}

/// Server-visible indices of one query: the download-phase cell and the
/// overwrite-phase cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RamTrace {
    pub d: u64,
    pub o: u64,
}

/// A row of the optional audit log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub index: u64,
    pub op: OpKind,
    pub trace: RamTrace,
}

impl AuditRecord {
    pub const CSV_HEADER: &'static str = "seq,query_index,op,d,o";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.seq, self.index, self.op, self.trace.d, self.trace.o
        )
    }
}

/// Client-resident state: parameters and the plaintext stash. Serializable
/// so a client can persist it between sessions; keys and randomness are
/// supplied separately.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClientState {
    params: RamParams,
    stash: HashMap<u64, Block>,
    #[serde(default)]
    readonly: bool,
    #[serde(default)]
    audit: Option<Vec<AuditRecord>>,
    #[serde(default)]
    queries: u64,
}

impl ClientState {
    pub fn params(&self) -> &RamParams {
        &self.params
    }

    pub fn stash_size(&self) -> usize {
        self.stash.len()
    }

    pub fn is_stashed(&self, index: u64) -> bool {
        self.stash.contains_key(&index)
    }

    pub fn queries(&self) -> u64 {
        self.queries
    }

    pub fn audit_log(&self) -> Option<&[AuditRecord]> {
        self.audit.as_deref()
    }
}

/// A DP-RAM client bound to its server array.
pub struct DpRam<S, C> {
    store: S,
    cipher: C,
    state: ClientState,
    streams: RamStreams,
}

impl<S: BlockStore, C: Cipher> DpRam<S, C> {
    /// Uploads a fresh encryption of every block and stashes each one
    /// independently with probability `p`.
    pub fn setup(
        blocks: Vec<Block>,
        params: RamParams,
        store: S,
        cipher: C,
        mut streams: RamStreams,
    ) -> Result<Self> {
        let mut membership = std::mem::replace(&mut streams.membership, rng::stream(0, 0));
        let out = Self::setup_with_membership(blocks, params, store, cipher, streams, |_| {
            params.coin(&mut membership)
        });
        out.map(|mut ram| {
            ram.streams.membership = membership;
            ram
        })
    }

    /// Setup with caller-chosen stash membership. Intended for tests and the
    /// auditor's point-mass initial laws.
    pub fn setup_with_membership(
        blocks: Vec<Block>,
        params: RamParams,
        mut store: S,
        cipher: C,
        mut streams: RamStreams,
        mut stashed: impl FnMut(u64) -> bool,
    ) -> Result<Self> {
        if blocks.len() as u64 != params.n {
            return Err(param(format!(
                "{} blocks supplied for n={}",
                blocks.len(),
                params.n
            )));
        }
        if let Some(b) = blocks.iter().find(|b| b.len() != params.block_size) {
            return Err(param(format!(
                "block of {} bytes, block size is {}",
                b.len(),
                params.block_size
            )));
        }
        check_geometry(&store, &params)?;
        let mut stash = HashMap::new();
        for (i, b) in (1..=params.n).zip(blocks) {
            store.upload(i, &cipher.encrypt(&b, &mut streams.encryption))?;
            if stashed(i) {
                stash.insert(i, b);
            }
        }
        Ok(DpRam {
            store,
            cipher,
            state: ClientState {
                params,
                stash,
                readonly: false,
                audit: None,
                queries: 0,
            },
            streams,
        })
    }

    /// Reattaches persisted client state to its server array.
    pub fn resume(state: ClientState, store: S, cipher: C, streams: RamStreams) -> Result<Self> {
        check_geometry(&store, &state.params)?;
        Ok(DpRam {
            store,
            cipher,
            state,
            streams,
        })
    }

    /// Refuse writes from now on.
    pub fn set_readonly(&mut self, readonly: bool) {
        self.state.readonly = readonly;
    }

    /// Start (or stop) recording an audit log of traces.
    pub fn set_audit(&mut self, enabled: bool) {
        if enabled {
            self.state.audit.get_or_insert_with(Vec::new);
        } else {
            self.state.audit = None;
        }
    }

    pub fn params(&self) -> &RamParams {
        &self.state.params
    }

    pub fn state(&self) -> &ClientState {
        &self.state
    }

    pub fn stash_size(&self) -> usize {
        self.state.stash.len()
    }

    pub fn store(&self) -> &S {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut S {
        &mut self.store
    }

    pub fn into_parts(self) -> (ClientState, S) {
        (self.state, self.store)
    }

    pub fn read(&mut self, index: u64) -> Result<(Block, RamTrace)> {
        self.query(&RamQuery::read(index))
    }

    pub fn write(&mut self, index: u64, block: Block) -> Result<(Block, RamTrace)> {
        self.query(&RamQuery::write(index, block))
    }

    /// Runs one query and returns the block's current value together with
    /// the trace the server observed.
    pub fn query(&mut self, q: &RamQuery) -> Result<(Block, RamTrace)> {
        let params = self.state.params;
        let i = q.index;
        if i == 0 || i > params.n {
            return Err(param(format!("index {i} outside [1, {}]", params.n)));
        }
        if let Some(b) = &q.new_block {
            if self.state.readonly {
                return Err(Error::ReadOnly);
            }
            if b.len() != params.block_size {
                return Err(param(format!(
                    "block of {} bytes, block size is {}",
                    b.len(),
                    params.block_size
                )));
            }
        }

        // Download phase.
        let (d, mut value) = match self.state.stash.remove(&i) {
            Some(b) => {
                let d = self.streams.download.gen_range(1..=params.n);
                self.store.download(d)?;
                (d, b)
            }
            None => {
                let ct = self.store.download(i)?;
                (i, self.cipher.decrypt(&ct)?)
            }
        };
        if let Some(b) = &q.new_block {
            value = b.clone();
        }

        // Overwrite phase.
        let o = if params.coin(&mut self.streams.coin) {
            self.state.stash.insert(i, value.clone());
            let o = self.streams.overwrite.gen_range(1..=params.n);
            let ct = self.store.download(o)?;
            let plain = self.cipher.decrypt(&ct)?;
            let fresh = self.cipher.encrypt(&plain, &mut self.streams.encryption);
            self.store.upload(o, &fresh)?;
            o
        } else {
            self.store.download(i)?;
            let fresh = self.cipher.encrypt(&value, &mut self.streams.encryption);
            self.store.upload(i, &fresh)?;
            i
        };

        let trace = RamTrace { d, o };
        self.state.queries += 1;
        if let Some(log) = &mut self.state.audit {
            log.push(AuditRecord {
                seq: self.state.queries,
                index: i,
                op: q.op(),
                trace,
            });
        }
        Ok((value, trace))
    }

    /// Test hook: takes `index` out of the stash, writing its current value
    /// back to the server out of band. No-op if not stashed.
    pub fn force_unstashed(&mut self, index: u64) -> Result<()> {
        if let Some(b) = self.state.stash.remove(&index) {
            let ct = self.cipher.encrypt(&b, &mut self.streams.encryption);
            self.store.upload(index, &ct)?;
        }
        Ok(())
    }

    /// Randomness used for ciphertext nonces; exposed so callers wrapping
    /// the store can encrypt consistently.
    pub fn encryption_rng(&mut self) -> &mut dyn RngCore {
        &mut self.streams.encryption
    }
}

fn check_geometry<S: BlockStore>(store: &S, params: &RamParams) -> Result<()> {
    if store.cells() != params.n {
        return Err(param(format!(
            "store has {} cells, n={}",
            store.cells(),
            params.n
        )));
    }
    if store.cell_len() != ciphertext_len(params.block_size) {
        return Err(param(format!(
            "store cells are {} bytes, expected {}",
            store.cell_len(),
            ciphertext_len(params.block_size)
        )));
    }
    Ok(())
}

/// `Pr[o_j = o]` for a query of `q`: `(1 - p) + p/n` when `o == q`, else
/// `p/n`. Independent of all history.
pub fn overwrite_marginal<P: Probability>(params: &RamParams, q: u64, o: u64) -> P {
    let p: P = params.p();
    let spread = p.clone() * P::from_ratio(1, params.n);
    if o == q {
        p.complement() + spread
    } else {
        spread
    }
}

/// What the transcript says about the previous query to the same block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PrevCase {
    /// First access to the block; its stash membership is the setup law.
    First,
    /// The previous query to the block had overwrite index equal to the block.
    OverwroteSelf,
    /// The previous query to the block overwrote this other index, so the
    /// block is certainly stashed.
    OverwroteOther(u64),
}

fn check_case(params: &RamParams, case: PrevCase, q: u64, d: u64) -> Result<()> {
    let n = params.n;
    if q == 0 || q > n || d == 0 || d > n {
        return Err(param("index outside [n]"));
    }
    if let PrevCase::OverwroteOther(o) = case {
        if o == q {
            return Err(param("OverwroteOther must name an index other than q"));
        }
        if o == 0 || o > n {
            return Err(param("previous overwrite index outside [n]"));
        }
    }
    Ok(())
}

/// Joint probability of the download index `d` at a query of `q` and the
/// previous overwrite index encoded by `case` (the setup law for
/// [`PrevCase::First`]).
pub fn download_joint<P: Probability>(
    params: &RamParams,
    case: PrevCase,
    q: u64,
    d: u64,
) -> Result<P> {
    check_case(params, case, q, d)?;
    let p: P = params.p();
    let inv_n = P::from_ratio(1, params.n);
    let spread = p.clone() * inv_n.clone();
    Ok(match case {
        PrevCase::First => {
            if d == q {
                p.complement() + spread
            } else {
                spread
            }
        }
        // Either not restashed (o = q, then d = q surely) or restashed with
        // o = q by chance and d drawn uniformly.
        PrevCase::OverwroteSelf => {
            let stashed_both = spread * inv_n;
            if d == q {
                p.complement() + stashed_both
            } else {
                stashed_both
            }
        }
        PrevCase::OverwroteOther(_) => spread * inv_n,
    })
}

/// `Pr[d_j = d | previous overwrite]` for a query of `q`; the conditional
/// form of [`download_joint`].
pub fn download_conditional<P: Probability>(
    params: &RamParams,
    case: PrevCase,
    q: u64,
    d: u64,
) -> Result<P> {
    let joint = download_joint::<P>(params, case, q, d)?;
    let prev = match case {
        PrevCase::First => P::one(),
        PrevCase::OverwroteSelf => overwrite_marginal(params, q, q),
        PrevCase::OverwroteOther(o) => overwrite_marginal(params, q, o),
    };
    debug_assert!(!prev.is_zero());
    Ok(joint / prev)
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use num_traits::One;
    use proptest::prelude::*;

    use super::*;
    use crate::blockstore::{
        AeadCipher, CipherKey, CountingStore, MemoryStore, TransparentCipher,
    };
    use crate::Exact;

    const BS: usize = 16;

    fn blocks(n: u64) -> Vec<Block> {
        (1..=n)
            .map(|i| {
                let mut b = vec![0; BS];
                b[..8].copy_from_slice(&i.to_be_bytes());
                Block(b)
            })
            .collect()
    }

    fn ram(
        n: u64,
        c: u64,
        seed: u64,
    ) -> DpRam<CountingStore<MemoryStore>, TransparentCipher> {
        let params = RamParams::new(n, c, BS).unwrap();
        let store = CountingStore::new(MemoryStore::new(n, ciphertext_len(BS)));
        DpRam::setup(blocks(n), params, store, TransparentCipher, RamStreams::seeded(seed)).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(RamParams::new(10, 0, BS).is_err());
        assert!(RamParams::new(10, 11, BS).is_err());
        assert!(RamParams::new(0, 1, BS).is_err());
        assert!(RamParams::with_probability(4, 3, 2, BS).is_err());
        assert_eq!(RamParams::default_threshold(1 << 16), 256);
        assert_eq!(RamParams::default_threshold(1024), 100);
        assert_eq!(RamParams::default_threshold(2), 1);
    }

    #[test]
    fn setup_rejects_mismatched_input() {
        let params = RamParams::new(4, 2, BS).unwrap();
        let mk = || MemoryStore::new(4, ciphertext_len(BS));
        assert!(DpRam::setup(blocks(3), params, mk(), TransparentCipher, RamStreams::seeded(0)).is_err());
        let mut bad = blocks(4);
        bad[2] = Block(vec![0; BS + 1]);
        assert!(DpRam::setup(bad, params, mk(), TransparentCipher, RamStreams::seeded(0)).is_err());
        let wrong_store = MemoryStore::new(5, ciphertext_len(BS));
        assert!(DpRam::setup(blocks(4), params, wrong_store, TransparentCipher, RamStreams::seeded(0)).is_err());
    }

    #[test]
    fn full_threshold_stashes_everything() {
        let r = ram(12, 12, 1);
        assert_eq!(r.stash_size(), 12);
    }

    #[test]
    fn read_after_write() {
        let mut r = ram(16, 4, 2);
        let newb = Block(vec![0xEE; BS]);
        r.write(5, newb.clone()).unwrap();
        for _ in 0..20 {
            assert_eq!(r.read(5).unwrap().0, newb);
        }
        assert_eq!(r.read(6).unwrap().0, blocks(16)[5]);
    }

    #[test]
    fn unstashed_block_downloads_its_own_cell() {
        let mut r = ram(32, 8, 3);
        for i in 1..=32 {
            r.force_unstashed(i).unwrap();
            assert_eq!(r.read(i).unwrap().1.d, i);
        }
    }

    #[test]
    fn every_query_touches_three_cells() {
        let mut r = ram(64, 8, 4);
        for j in 0..500u64 {
            let before = (r.store().downloads(), r.store().uploads());
            let _ = r.read(j % 64 + 1).unwrap();
            assert_eq!(r.store().downloads() - before.0, 2);
            assert_eq!(r.store().uploads() - before.1, 1);
        }
    }

    #[test]
    fn stash_size_moves_by_at_most_one() {
        let mut r = ram(64, 16, 5);
        let mut prev = r.stash_size() as i64;
        for j in 0..2000u64 {
            r.read(j * 7 % 64 + 1).unwrap();
            let now = r.stash_size() as i64;
            assert!((now - prev).abs() <= 1);
            prev = now;
        }
    }

    #[test]
    fn readonly_refuses_writes() {
        let mut r = ram(8, 2, 6);
        r.set_readonly(true);
        assert!(matches!(r.write(1, Block(vec![1; BS])), Err(Error::ReadOnly)));
        assert!(r.read(1).is_ok());
    }

    #[test]
    fn rejects_bad_queries() {
        let mut r = ram(8, 2, 7);
        assert!(r.read(0).is_err());
        assert!(r.read(9).is_err());
        assert!(r.write(1, Block(vec![0; 3])).is_err());
    }

    #[test]
    fn wrong_key_surfaces_integrity_error() {
        let params = RamParams::new(4, 1, BS).unwrap();
        let store = MemoryStore::new(4, ciphertext_len(BS));
        let ram = DpRam::setup_with_membership(
            blocks(4),
            params,
            store,
            AeadCipher::new(&CipherKey::generate()),
            RamStreams::seeded(8),
            |_| false,
        )
        .unwrap();
        let (state, store) = ram.into_parts();
        let mut other = DpRam::resume(
            state,
            store,
            AeadCipher::new(&CipherKey::generate()),
            RamStreams::seeded(9),
        )
        .unwrap();
        assert!(matches!(other.read(1), Err(Error::Integrity)));
    }

    #[test]
    fn audit_log_rows() {
        let mut r = ram(8, 2, 10);
        r.set_audit(true);
        let (_, t1) = r.read(3).unwrap();
        let (_, t2) = r.write(4, Block(vec![9; BS])).unwrap();
        let log = r.state().audit_log().unwrap();
        assert_eq!(log.len(), 2);
        assert_eq!(log[0].csv_line(), format!("1,3,read,{},{}", t1.d, t1.o));
        assert_eq!(log[1].csv_line(), format!("2,4,write,{},{}", t2.d, t2.o));
    }

    #[test]
    fn state_round_trips_through_json() {
        let mut r = ram(8, 4, 11);
        r.write(2, Block(vec![5; BS])).unwrap();
        let (state, store) = r.into_parts();
        let json = serde_json::to_string(&state).unwrap();
        let state: ClientState = serde_json::from_str(&json).unwrap();
        let mut r = DpRam::resume(state, store, TransparentCipher, RamStreams::seeded(12)).unwrap();
        assert_eq!(r.read(2).unwrap().0, Block(vec![5; BS]));
    }

    #[test]
    fn marginal_examples() {
        let p = RamParams::with_probability(4, 1, 2, BS).unwrap();
        assert_eq!(overwrite_marginal::<Exact>(&p, 2, 2), Exact::from_ratio(5, 8));
        assert_eq!(overwrite_marginal::<Exact>(&p, 2, 3), Exact::from_ratio(1, 8));
        let f = download_conditional::<Exact>(&p, PrevCase::First, 1, 1).unwrap();
        assert_eq!(f, Exact::from_ratio(5, 8));
        let f = download_conditional::<Exact>(&p, PrevCase::First, 1, 2).unwrap();
        assert_eq!(f, Exact::from_ratio(1, 8));
        let f = download_conditional::<Exact>(&p, PrevCase::OverwroteOther(3), 1, 2).unwrap();
        assert_eq!(f, Exact::from_ratio(1, 4));
    }

    #[test]
    fn download_cases_normalize() {
        for (n, num, den) in [(3, 1, 3), (4, 1, 2), (5, 2, 5), (7, 7, 7)] {
            let p = RamParams::with_probability(n, num, den, BS).unwrap();
            for q in 1..=n {
                let mut cases = vec![PrevCase::First, PrevCase::OverwroteSelf];
                cases.extend((1..=n).filter(|&o| o != q).map(PrevCase::OverwroteOther));
                for case in cases {
                    let total: Exact = (1..=n)
                        .map(|d| download_conditional::<Exact>(&p, case, q, d).unwrap())
                        .sum();
                    assert_eq!(total, Exact::one(), "n={n} case={case:?}");
                }
                let total: Exact = (1..=n).map(|o| overwrite_marginal::<Exact>(&p, q, o)).sum();
                assert_eq!(total, Exact::one());
            }
        }
    }

    #[test]
    fn inconsistent_cases_are_rejected() {
        let p = RamParams::with_probability(4, 1, 2, BS).unwrap();
        assert!(download_conditional::<f64>(&p, PrevCase::OverwroteOther(2), 2, 1).is_err());
        assert!(download_conditional::<f64>(&p, PrevCase::OverwroteOther(9), 2, 1).is_err());
        assert!(download_conditional::<f64>(&p, PrevCase::First, 0, 1).is_err());
    }

    #[test]
    fn first_query_overwrite_frequency() {
        // n = 4, p = 1/2, block never stashed: Pr[o == i] = 1/2 + 1/8.
        let params = RamParams::with_probability(4, 1, 2, BS).unwrap();
        let trials = 40_000;
        let mut hits = 0;
        for s in 0..trials {
            let store = MemoryStore::new(4, ciphertext_len(BS));
            let mut r = DpRam::setup_with_membership(
                blocks(4),
                params,
                store,
                TransparentCipher,
                RamStreams::seeded(s),
                |_| false,
            )
            .unwrap();
            hits += (r.read(2).unwrap().1.o == 2) as u32;
        }
        let freq = hits as f64 / trials as f64;
        let sigma = (0.625f64 * 0.375 / trials as f64).sqrt();
        assert!((freq - 0.625).abs() < 4.0 * sigma, "freq={freq}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn behaves_like_a_map(seed in any::<u64>(), ops in prop::collection::vec((1u64..=20, any::<bool>(), any::<u8>()), 1..300)) {
            let mut r = ram(20, 5, seed);
            let mut reference: HashMap<u64, Block> = (1..=20).zip(blocks(20)).collect();
            for (i, is_write, byte) in ops {
                if is_write {
                    let b = Block(vec![byte; BS]);
                    r.write(i, b.clone()).unwrap();
                    reference.insert(i, b);
                } else {
                    prop_assert_eq!(&r.read(i).unwrap().0, &reference[&i]);
                }
            }
        }
    }
}
