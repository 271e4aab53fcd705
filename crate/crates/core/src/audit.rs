//! Measuring the privacy the schemes actually deliver.
//!
//! * Exact transcript distributions for small DP-RAM instances, computed by
//!   a forward pass over stash-membership states in rational arithmetic.
//! * Per-position conditional factors and the bounds they must satisfy.
//! * `(epsilon, delta)` reports for any pair of distributions.
//! * Monte Carlo estimates from the real implementations.
//! * The fetch-the-target-plus-noise strawman, whose delta stays near one.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Debug;

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::Serialize;

use crate::blockstore::{ciphertext_len, Block, MemoryStore, TransparentCipher};
use crate::dpir::{self, DpIrParams, IrTranscript};
use crate::dpram::{
    download_conditional, overwrite_marginal, DpRam, PrevCase, RamParams, RamStreams, RamTrace,
};
use crate::error::{param, Error, Result};
use crate::rng::{self, StreamRng};
use crate::scalar::{binomial, ln_ratio, Probability};

/// DP-RAM transcript: the `(d, o)` pair of every query, in order.
pub type RamTranscript = Vec<RamTrace>;

/// Largest number of transcripts the exact enumerator will produce.
pub const MAX_ENUMERATION: u64 = 10_000_000;

/// Measured `epsilon` for `n = 3`, `p = 1/2`, `(1, 2, 1)` against
/// `(1, 3, 1)`: the largest transcript probability ratio is exactly 16.
pub const REFERENCE_RAM_EPSILON: f64 = 2.772_588_722_239_781;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Exact,
    Estimated { trials: u64 },
}

/// A probability distribution over transcripts.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceDistribution<T: Ord, P> {
    probs: BTreeMap<T, P>,
    provenance: Provenance,
}

impl<T: Ord + Clone, P: Probability> TraceDistribution<T, P> {
    /// Exact distribution; zero entries are dropped.
    pub fn exact(probs: BTreeMap<T, P>) -> Self {
        TraceDistribution {
            probs: probs.into_iter().filter(|(_, p)| !p.is_zero()).collect(),
            provenance: Provenance::Exact,
        }
    }

    /// Frequencies from `trials` samples.
    pub fn estimated(counts: BTreeMap<T, u64>, trials: u64) -> Self {
        TraceDistribution {
            probs: counts
                .into_iter()
                .map(|(t, c)| (t, P::from_ratio(c, trials)))
                .collect(),
            provenance: Provenance::Estimated { trials },
        }
    }

    pub fn prob(&self, t: &T) -> P {
        self.probs.get(t).cloned().unwrap_or_else(P::zero)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&T, &P)> {
        self.probs.iter()
    }

    pub fn support_len(&self) -> usize {
        self.probs.len()
    }

    pub fn total_mass(&self) -> P {
        let mut acc = P::zero();
        for p in self.probs.values() {
            acc += p.clone();
        }
        acc
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn is_exact(&self) -> bool {
        self.provenance == Provenance::Exact
    }

    pub fn trials(&self) -> Option<u64> {
        match self.provenance {
            Provenance::Estimated { trials } => Some(trials),
            Provenance::Exact => None,
        }
    }

    /// Pushes the distribution through `f`.
    pub fn marginal<K: Ord>(&self, f: impl Fn(&T) -> K) -> BTreeMap<K, P> {
        let mut out: BTreeMap<K, P> = BTreeMap::new();
        for (t, p) in &self.probs {
            *out.entry(f(t)).or_insert_with(P::zero) += p.clone();
        }
        out
    }

    pub fn to_f64(&self) -> TraceDistribution<T, f64> {
        TraceDistribution {
            probs: self.probs.iter().map(|(t, p)| (t.clone(), p.to_f64())).collect(),
            provenance: self.provenance,
        }
    }
}

/// Stash membership at setup, for the blocks the query sequence touches.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InitialStash {
    /// Each block independently with the stash probability, as setup does.
    Bernoulli,
    /// Exactly these blocks.
    Fixed(BTreeSet<u64>),
}

/// Exact distribution of the transcript of `queries` (block indices; reads
/// and writes look alike).
pub fn enumerate_ram<P: Probability>(
    params: &RamParams,
    queries: &[u64],
    law: &InitialStash,
) -> Result<TraceDistribution<RamTranscript, P>> {
    let n = params.n();
    let too_big = (n * n)
        .checked_pow(queries.len() as u32)
        .is_none_or(|s| s > MAX_ENUMERATION);
    if n > 6 || queries.len() > 5 || too_big {
        return Err(Error::Size(format!(
            "exact enumeration limited to n <= 6, |Q| <= 5 and (n^2)^|Q| <= {MAX_ENUMERATION}; got n={n}, |Q|={}",
            queries.len()
        )));
    }
    if let Some(q) = queries.iter().find(|&&q| q == 0 || q > n) {
        return Err(param(format!("query index {q} outside [1, {n}]")));
    }

    // Only blocks that are queried can influence the transcript.
    let blocks: Vec<u64> = queries.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let bit = |q: u64| 1u32 << blocks.binary_search(&q).unwrap();
    let p: P = params.p();
    let keep = p.complement();
    let inv_n = P::from_ratio(1, n);
    let spread = p.clone() * inv_n.clone();

    let mut states: BTreeMap<(u32, RamTranscript), P> = BTreeMap::new();
    for mask in 0..1u32 << blocks.len() {
        let mut w = P::one();
        for (b, &blk) in blocks.iter().enumerate() {
            let stashed = mask >> b & 1 == 1;
            w *= match law {
                InitialStash::Bernoulli if stashed => p.clone(),
                InitialStash::Bernoulli => keep.clone(),
                InitialStash::Fixed(set) if set.contains(&blk) == stashed => P::one(),
                InitialStash::Fixed(_) => P::zero(),
            };
        }
        if !w.is_zero() {
            states.insert((mask, Vec::new()), w);
        }
    }

    for &q in queries {
        let b = bit(q);
        let mut next: BTreeMap<(u32, RamTranscript), P> = BTreeMap::new();
        let mut add = |mask: u32, t: &RamTranscript, tr: RamTrace, w: P| {
            if w.is_zero() {
                return;
            }
            let mut t = t.clone();
            t.push(tr);
            *next.entry((mask, t)).or_insert_with(P::zero) += w;
        };
        for ((mask, t), w) in &states {
            let downloads: Vec<(u64, P)> = if mask & b != 0 {
                (1..=n).map(|d| (d, w.clone() * inv_n.clone())).collect()
            } else {
                vec![(q, w.clone())]
            };
            for (d, wd) in downloads {
                for o in 1..=n {
                    add(mask | b, t, RamTrace { d, o }, wd.clone() * spread.clone());
                }
                add(mask & !b, t, RamTrace { d, o: q }, wd * keep.clone());
            }
        }
        states = next;
    }

    let mut out: BTreeMap<RamTranscript, P> = BTreeMap::new();
    for ((_, t), w) in states {
        *out.entry(t).or_insert_with(P::zero) += w;
    }
    Ok(TraceDistribution::exact(out))
}

/// Every `K`-subset transcript of a DP-IR query with its exact probability.
pub fn enumerate_ir<P: Probability>(
    params: &DpIrParams,
    queried: u64,
) -> Result<TraceDistribution<IrTranscript, P>> {
    let total = binomial::<f64>(params.n(), params.k());
    if total > MAX_ENUMERATION as f64 {
        return Err(Error::Size(format!("{total} transcripts exceed the enumeration limit")));
    }
    let mut out = BTreeMap::new();
    for t in dpir::all_transcripts(params) {
        let p = dpir::transcript_prob::<P>(params, queried, &t)?;
        out.insert(t, p);
    }
    Ok(TraceDistribution::exact(out))
}

/// Two query sequences differing in exactly one position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AdjacentPair {
    q: Vec<u64>,
    q2: Vec<u64>,
    k: usize,
}

impl AdjacentPair {
    pub fn new(q: Vec<u64>, q2: Vec<u64>) -> Result<Self> {
        if q.len() != q2.len() {
            return Err(param("adjacent sequences must have equal length"));
        }
        let diff: Vec<usize> = (0..q.len()).filter(|&j| q[j] != q2[j]).collect();
        match diff[..] {
            [k] => Ok(AdjacentPair { q, q2, k }),
            _ => Err(param(format!(
                "sequences differ in {} positions, expected 1",
                diff.len()
            ))),
        }
    }

    pub fn q(&self) -> &[u64] {
        &self.q
    }

    pub fn q2(&self) -> &[u64] {
        &self.q2
    }

    /// The differing position (0-based).
    pub fn k(&self) -> usize {
        self.k
    }

    /// `k` and the next positions after `k` touching the block queried at
    /// `k` in either sequence: the only positions whose factors may differ.
    pub fn critical_positions(&self) -> BTreeSet<usize> {
        let mut s = BTreeSet::from([self.k]);
        s.extend(next_same(&self.q, self.k));
        s.extend(next_same(&self.q2, self.k));
        s
    }
}

/// Previous position querying the same block as position `j`.
pub fn prev_same(q: &[u64], j: usize) -> Option<usize> {
    (0..j).rev().find(|&m| q[m] == q[j])
}

/// Next position querying the same block as position `j`.
pub fn next_same(q: &[u64], j: usize) -> Option<usize> {
    (j + 1..q.len()).find(|&m| q[m] == q[j])
}

/// Per-position conditional probabilities of one transcript under both
/// sequences of a pair. `None` where the conditioning prefix has zero mass.
#[derive(Clone, Debug)]
pub struct FactorRow<P> {
    pub transcript: RamTranscript,
    pub download: [Vec<Option<P>>; 2],
    pub overwrite: [Vec<Option<P>>; 2],
}

fn ratio<P: Probability>(a: &Option<P>, b: &Option<P>) -> Option<P> {
    match (a, b) {
        (Some(a), Some(b)) if !b.is_zero() => Some(a.clone() / b.clone()),
        _ => None,
    }
}

impl<P: Probability> FactorRow<P> {
    /// Download-factor ratio at position `j`; `None` when undefined.
    pub fn download_ratio(&self, j: usize) -> Option<P> {
        ratio(&self.download[0][j], &self.download[1][j])
    }

    pub fn overwrite_ratio(&self, j: usize) -> Option<P> {
        ratio(&self.overwrite[0][j], &self.overwrite[1][j])
    }
}

#[derive(Clone, Debug)]
pub struct FactorTable<P> {
    pub pair: AdjacentPair,
    pub rows: Vec<FactorRow<P>>,
}

impl<P: Probability> FactorTable<P> {
    /// Positions where some transcript has a factor ratio other than 1.
    pub fn differing_positions(&self) -> BTreeSet<usize> {
        let one = P::one();
        let mut out = BTreeSet::new();
        for row in &self.rows {
            for j in 0..self.pair.q.len() {
                let same = |r: Option<P>| r.is_some_and(|r| r == one);
                if !same(row.download_ratio(j)) || !same(row.overwrite_ratio(j)) {
                    out.insert(j);
                }
            }
        }
        out
    }
}

fn flatten(t: &RamTranscript) -> Vec<u64> {
    t.iter().flat_map(|tr| [tr.d, tr.o]).collect()
}

fn prefix_masses<P: Probability>(
    dist: &TraceDistribution<RamTranscript, P>,
) -> HashMap<Vec<u64>, P> {
    let mut masses: HashMap<Vec<u64>, P> = HashMap::new();
    for (t, w) in dist.iter() {
        let flat = flatten(t);
        for len in 0..=flat.len() {
            *masses.entry(flat[..len].to_vec()).or_insert_with(P::zero) += w.clone();
        }
    }
    masses
}

// Conditional probability of each element of `flat` given everything before.
fn conditionals<P: Probability>(masses: &HashMap<Vec<u64>, P>, flat: &[u64]) -> Vec<Option<P>> {
    let mut out = Vec::with_capacity(flat.len());
    let mut prev = masses.get(&flat[..0]).cloned();
    for len in 1..=flat.len() {
        let cur = masses.get(&flat[..len]).cloned();
        out.push(match (&cur, &prev) {
            (Some(c), Some(p)) if !p.is_zero() => Some(c.clone() / p.clone()),
            (None, Some(p)) if !p.is_zero() => Some(P::zero()),
            _ => None,
        });
        prev = cur;
    }
    out
}

/// Conditional download and overwrite factors of every transcript in
/// either support, under both sequences. Requires exact distributions.
pub fn factor_table<P: Probability>(
    dist_q: &TraceDistribution<RamTranscript, P>,
    dist_q2: &TraceDistribution<RamTranscript, P>,
    pair: &AdjacentPair,
) -> Result<FactorTable<P>> {
    if !dist_q.is_exact() || !dist_q2.is_exact() {
        return Err(param("factor analysis needs exact distributions"));
    }
    let masses = [prefix_masses(dist_q), prefix_masses(dist_q2)];
    let support: BTreeSet<&RamTranscript> = dist_q.iter().chain(dist_q2.iter()).map(|(t, _)| t).collect();
    let mut rows = Vec::with_capacity(support.len());
    for t in support {
        if t.len() != pair.q.len() {
            return Err(param("transcript length differs from the query sequence"));
        }
        let flat = flatten(t);
        let split = |c: Vec<Option<P>>| {
            let mut dl = Vec::with_capacity(t.len());
            let mut ow = Vec::with_capacity(t.len());
            for (i, x) in c.into_iter().enumerate() {
                if i % 2 == 0 {
                    dl.push(x)
                } else {
                    ow.push(x)
                }
            }
            (dl, ow)
        };
        let (d0, o0) = split(conditionals(&masses[0], &flat));
        let (d1, o1) = split(conditionals(&masses[1], &flat));
        rows.push(FactorRow {
            transcript: t.clone(),
            download: [d0, d1],
            overwrite: [o0, o1],
        });
    }
    Ok(FactorTable {
        pair: pair.clone(),
        rows,
    })
}

/// Outcome of checking a factor table against the per-position bounds.
#[derive(Clone, Debug, Default, Serialize)]
pub struct LemmaReport {
    pub transcripts: usize,
    /// Largest download-factor ratio seen in either direction.
    pub max_download_ratio: f64,
    /// Largest overwrite-factor ratio seen in either direction.
    pub max_overwrite_ratio: f64,
    pub download_bound: f64,
    pub overwrite_bound: f64,
    pub violation_count: usize,
    /// The first few violations, for diagnosis.
    pub violations: Vec<String>,
}

impl LemmaReport {
    pub fn passed(&self) -> bool {
        self.violation_count == 0
    }

    fn flag(&mut self, msg: String) {
        self.violation_count += 1;
        if self.violations.len() < 20 {
            self.violations.push(msg);
        }
    }
}

fn same<P: Probability>(a: &P, b: &P) -> bool {
    if P::is_exact() {
        a == b
    } else {
        (a.to_f64() - b.to_f64()).abs() <= 1e-9 * a.to_f64().abs().max(b.to_f64().abs())
    }
}

/// Checks every row of `table`:
/// * off the critical positions both factor ratios are exactly 1,
/// * download ratios are at most `n^2/p` and overwrite ratios at most `n/p`,
///   in both directions,
/// * each overwrite factor equals [`overwrite_marginal`] (no dependence on
///   history),
/// * each download factor equals [`download_conditional`] given the
///   overwrite index of the previous query to the same block.
pub fn check_lemmas<P: Probability>(params: &RamParams, table: &FactorTable<P>) -> LemmaReport {
    let n = params.n();
    let p: P = params.p();
    let dl_bound = P::from_u64(n * n) / p.clone();
    let ow_bound = P::from_u64(n) / p;
    let critical = table.pair.critical_positions();
    let seqs = [&table.pair.q, &table.pair.q2];
    let mut rep = LemmaReport {
        transcripts: table.rows.len(),
        download_bound: dl_bound.to_f64(),
        overwrite_bound: ow_bound.to_f64(),
        ..LemmaReport::default()
    };
    let one = P::one();

    for row in &table.rows {
        let t = &row.transcript;
        for j in 0..t.len() {
            let ratios = [
                ("download", row.download_ratio(j), ratio(&row.download[1][j], &row.download[0][j]), &dl_bound),
                ("overwrite", row.overwrite_ratio(j), ratio(&row.overwrite[1][j], &row.overwrite[0][j]), &ow_bound),
            ];
            for (kind, fwd, back, bound) in ratios {
                let (Some(fwd), Some(back)) = (fwd, back) else {
                    rep.flag(format!("{kind} factor undefined or zero at position {j} of {t:?}"));
                    continue;
                };
                let worst = if fwd >= back { fwd.clone() } else { back };
                let worst_f = worst.to_f64();
                match kind {
                    "download" => rep.max_download_ratio = rep.max_download_ratio.max(worst_f),
                    _ => rep.max_overwrite_ratio = rep.max_overwrite_ratio.max(worst_f),
                }
                if worst > *bound {
                    rep.flag(format!("{kind} ratio {worst_f} exceeds {} at position {j} of {t:?}", bound.to_f64()));
                }
                if !critical.contains(&j) && !same(&fwd, &one) {
                    rep.flag(format!("{kind} ratio {} != 1 off the critical positions, position {j} of {t:?}", fwd.to_f64()));
                }
            }

            for (side, seq) in seqs.iter().enumerate() {
                let q = seq[j];
                let expect_o: P = overwrite_marginal(params, q, t[j].o);
                if !row.overwrite[side][j].as_ref().is_some_and(|c| same(c, &expect_o)) {
                    rep.flag(format!("overwrite factor at position {j} of {t:?} differs from the marginal"));
                }
                let case = match prev_same(seq, j) {
                    None => PrevCase::First,
                    Some(m) if t[m].o == q => PrevCase::OverwroteSelf,
                    Some(m) => PrevCase::OverwroteOther(t[m].o),
                };
                match download_conditional::<P>(params, case, q, t[j].d) {
                    Ok(expect_d) if row.download[side][j].as_ref().is_some_and(|c| same(c, &expect_d)) => {}
                    _ => rep.flag(format!("download factor at position {j} of {t:?} differs from the closed form")),
                }
            }
        }
    }
    rep
}

/// `3 ln(n^3 / p^2)`: the composite bound from three differing positions.
pub fn ram_epsilon_bound(n: u64, p: f64) -> f64 {
    3.0 * ((n as f64).powi(3) / (p * p)).ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DeltaPoint {
    pub epsilon: f64,
    pub delta: f64,
}

/// Privacy loss between two transcript distributions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DpReport {
    /// `max |ln(P(T)/Q(T))|` over both supports; infinite when a transcript
    /// is possible under only one side.
    pub epsilon_hat: f64,
    pub delta_at: Vec<DeltaPoint>,
    pub exact: bool,
    /// Analytic bound to compare `epsilon_hat` against, when one applies.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_bound: Option<f64>,
}

impl DpReport {
    pub fn delta(&self, epsilon: f64) -> Option<f64> {
        self.delta_at.iter().find(|d| d.epsilon == epsilon).map(|d| d.delta)
    }
}

/// Largest probability ratio between the two distributions in either
/// direction; `None` if some transcript has mass on one side only.
pub fn max_ratio<T: Ord + Clone, P: Probability>(
    a: &TraceDistribution<T, P>,
    b: &TraceDistribution<T, P>,
) -> Option<P> {
    let mut best = P::one();
    let keys: BTreeSet<&T> = a.iter().chain(b.iter()).map(|(t, _)| t).collect();
    for t in keys {
        let (pa, pb) = (a.prob(t), b.prob(t));
        if pa.is_zero() || pb.is_zero() {
            return None;
        }
        let r = if pa >= pb { pa / pb } else { pb / pa };
        if r > best {
            best = r;
        }
    }
    Some(best)
}

fn one_sided_delta<'a, T: Ord + 'a, P: Probability>(
    keys: impl Iterator<Item = &'a T>,
    a: &BTreeMap<T, P>,
    b: &BTreeMap<T, P>,
    scale: &P,
) -> P {
    let mut acc = P::zero();
    for t in keys {
        let pa = a.get(t).cloned().unwrap_or_else(P::zero);
        let pb = b.get(t).cloned().unwrap_or_else(P::zero);
        let gap = pa - scale.clone() * pb;
        if gap > P::zero() {
            acc += gap;
        }
    }
    acc
}

/// Smallest `delta` for which the pair is `(epsilon, delta)`-close in both
/// directions: `max` over directions of `sum_T max(0, P(T) - e^eps Q(T))`.
/// Zero for infinite `epsilon`.
pub fn delta_at<T: Ord + Clone, P: Probability>(
    a: &TraceDistribution<T, P>,
    b: &TraceDistribution<T, P>,
    epsilon: f64,
) -> P {
    let Some(scale) = P::from_f64(epsilon.exp()) else {
        return P::zero();
    };
    let keys: BTreeSet<&T> = a.iter().chain(b.iter()).map(|(t, _)| t).collect();
    let fwd = one_sided_delta(keys.iter().copied(), &a.probs, &b.probs, &scale);
    let back = one_sided_delta(keys.iter().copied(), &b.probs, &a.probs, &scale);
    if fwd >= back {
        fwd
    } else {
        back
    }
}

pub fn epsilon_hat<T: Ord + Clone, P: Probability>(
    a: &TraceDistribution<T, P>,
    b: &TraceDistribution<T, P>,
) -> f64 {
    let keys: BTreeSet<&T> = a.iter().chain(b.iter()).map(|(t, _)| t).collect();
    keys.into_iter()
        .map(|t| ln_ratio(&a.prob(t), &b.prob(t)).abs())
        .fold(0.0, f64::max)
}

pub fn dp_report<T: Ord + Clone, P: Probability>(
    a: &TraceDistribution<T, P>,
    b: &TraceDistribution<T, P>,
    eps_grid: &[f64],
) -> DpReport {
    DpReport {
        epsilon_hat: epsilon_hat(a, b),
        delta_at: eps_grid
            .iter()
            .map(|&epsilon| DeltaPoint {
                epsilon,
                delta: delta_at(a, b, epsilon).to_f64(),
            })
            .collect(),
        exact: a.is_exact() && b.is_exact(),
        epsilon_bound: None,
    }
}

/// Full audit of one adjacent DP-RAM pair under the setup stash law.
#[derive(Clone, Debug, Serialize)]
pub struct RamAudit {
    pub n: u64,
    pub p: f64,
    pub pair: AdjacentPair,
    pub critical_positions: BTreeSet<usize>,
    pub report: DpReport,
    pub lemmas: LemmaReport,
}

pub fn audit_ram<P: Probability>(
    params: &RamParams,
    pair: &AdjacentPair,
    eps_grid: &[f64],
) -> Result<RamAudit> {
    let a = enumerate_ram::<P>(params, pair.q(), &InitialStash::Bernoulli)?;
    let b = enumerate_ram::<P>(params, pair.q2(), &InitialStash::Bernoulli)?;
    let table = factor_table(&a, &b, pair)?;
    let lemmas = check_lemmas(params, &table);
    let p = params.p::<f64>();
    let mut report = dp_report(&a, &b, eps_grid);
    report.epsilon_bound = Some(ram_epsilon_bound(params.n(), p));
    Ok(RamAudit {
        n: params.n(),
        p,
        pair: pair.clone(),
        critical_positions: pair.critical_positions(),
        report,
        lemmas,
    })
}

/// The strawman: the target always, every other block independently with
/// probability `1/n`. Returns the sorted download set.
pub fn strawman_query<R: Rng + ?Sized>(n: u64, i: u64, rng: &mut R) -> Vec<u64> {
    (1..=n).filter(|&j| j == i || rng.gen_range(0..n) == 0).collect()
}

/// `Pr[c ∈ strawman(a)]`.
pub fn strawman_membership<P: Probability>(n: u64, a: u64, c: u64) -> P {
    if a == c {
        P::one()
    } else {
        P::from_ratio(1, n)
    }
}

/// Exact strawman distribution by listing every subset; small `n` only.
pub fn strawman_distribution<P: Probability>(
    n: u64,
    i: u64,
) -> Result<TraceDistribution<Vec<u64>, P>> {
    if n == 0 || n > 20 || i == 0 || i > n {
        return Err(param("strawman enumeration needs 1 <= i <= n <= 20"));
    }
    let hit = P::from_ratio(1, n);
    let miss = hit.complement();
    let mut out = BTreeMap::new();
    for mask in 0u64..1 << n {
        let set: Vec<u64> = (1..=n).filter(|&j| mask >> (j - 1) & 1 == 1).collect();
        if !set.contains(&i) {
            continue;
        }
        let mut w = P::one();
        for j in (1..=n).filter(|&j| j != i) {
            w *= if set.contains(&j) { hit.clone() } else { miss.clone() };
        }
        out.insert(set, w);
    }
    Ok(TraceDistribution::exact(out))
}

/// Exact optimal `delta` at `epsilon` between strawman queries for two
/// distinct blocks. Sets are grouped by which of the two blocks they
/// contain and how many others, so the sum has `O(n)` terms.
pub fn strawman_delta<P: Probability>(n: u64, epsilon: f64) -> Result<P> {
    if n < 2 {
        return Err(param("strawman comparison needs n >= 2"));
    }
    let Some(scale) = P::from_f64(epsilon.exp()) else {
        return Ok(P::zero());
    };
    let hit = P::from_ratio(1, n);
    let miss = hit.complement();
    let powers = |b: &P| {
        let mut v = vec![P::one()];
        for _ in 1..n {
            let next = v.last().unwrap().clone() * b.clone();
            v.push(next);
        }
        v
    };
    let (hit_pow, miss_pow) = (powers(&hit), powers(&miss));
    // Probability of one specific set under a query of `target`, where the
    // set contains `i`/`j` as given and `m` of the other n - 2 blocks.
    let weight = |target_in: bool, other_in: bool, m: u64| -> P {
        if !target_in {
            return P::zero();
        }
        let hits = (m + other_in as u64) as usize;
        hit_pow[hits].clone() * miss_pow[n as usize - 1 - hits].clone()
    };
    let mut delta = P::zero();
    for m in 0..=n - 2 {
        let count = binomial::<P>(n - 2, m);
        for (has_i, has_j) in [(true, true), (true, false), (false, true), (false, false)] {
            let pi = weight(has_i, has_j, m);
            let pj = weight(has_j, has_i, m);
            let gap = pi - scale.clone() * pj;
            if gap > P::zero() {
                delta += count.clone() * gap;
            }
        }
    }
    // The two directions are mirror images, so one sum suffices.
    Ok(delta)
}

pub fn strawman_report(n: u64, eps_grid: &[f64]) -> Result<DpReport> {
    let delta_at = eps_grid
        .iter()
        .map(|&epsilon| {
            Ok(DeltaPoint {
                epsilon,
                delta: strawman_delta::<crate::Exact>(n, epsilon)?.to_f64(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(DpReport {
        epsilon_hat: f64::INFINITY,
        delta_at,
        exact: true,
        epsilon_bound: None,
    })
}

/// Outcome of the per-block membership check over all `(a, b, c)`.
#[derive(Clone, Debug, Default, Serialize)]
pub struct MembershipReport {
    pub triples: u64,
    pub failures: Vec<(u64, u64, u64)>,
}

impl MembershipReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// For all `a, b, c` in `[n]`, checks
/// `Pr[c ∈ T(a)] <= e^eps Pr[c ∈ T(b)] + delta` and the same for `c ∉ T`.
/// `membership(a, c)` is `Pr[c ∈ T(a)]`.
pub fn membership_check<P: Probability>(
    n: u64,
    exp_eps: &P,
    delta: &P,
    membership: impl Fn(u64, u64) -> P,
) -> MembershipReport {
    let mut rep = MembershipReport::default();
    for a in 1..=n {
        for b in 1..=n {
            for c in 1..=n {
                rep.triples += 1;
                let (ma, mb) = (membership(a, c), membership(b, c));
                let inside = ma.clone() <= exp_eps.clone() * mb.clone() + delta.clone();
                let outside =
                    ma.complement() <= exp_eps.clone() * mb.complement() + delta.clone();
                if !(inside && outside) {
                    rep.failures.push((a, b, c));
                }
            }
        }
    }
    rep
}

/// The membership check for a DP-IR deployment at its own `epsilon`
/// bound with `delta = 0`.
pub fn ir_membership_check<P: Probability>(params: &DpIrParams) -> MembershipReport {
    let exp_eps = if params.is_full_download() {
        P::one()
    } else {
        let alpha = P::from_f64(params.alpha()).expect("alpha is finite");
        P::one()
            + alpha.complement() * P::from_u64(params.n()) / (alpha * P::from_u64(params.k()))
    };
    membership_check(params.n(), &exp_eps, &P::zero(), |a, c| {
        dpir::membership_prob(params, a, c)
    })
}

/// Independent sampling chunks; fixed so results do not depend on the
/// thread count.
pub const MC_CHUNKS: u64 = 64;

/// Frequencies of `sample` over `trials` draws, reproducible from `seed`.
pub fn empirical_distribution<T, F>(trials: u64, seed: u64, sample: F) -> TraceDistribution<T, f64>
where
    T: Ord + Clone + Send,
    F: Fn(&mut StreamRng) -> T + Sync,
{
    let counts = (0..MC_CHUNKS)
        .into_par_iter()
        .map(|c| {
            let share = trials / MC_CHUNKS + u64::from(c < trials % MC_CHUNKS);
            let mut rng = rng::stream(seed, c);
            let mut local: BTreeMap<T, u64> = BTreeMap::new();
            for _ in 0..share {
                *local.entry(sample(&mut rng)).or_insert(0) += 1;
            }
            local
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(BTreeMap::new(), |mut acc, local| {
            for (t, c) in local {
                *acc.entry(t).or_insert(0) += c;
            }
            acc
        });
    TraceDistribution::estimated(counts, trials)
}

/// A sampler that sets up a fresh DP-RAM (transparent cipher, in-memory
/// array) and runs `queries` as reads, returning the transcript.
pub fn ram_sampler(
    params: RamParams,
    queries: Vec<u64>,
) -> impl Fn(&mut StreamRng) -> RamTranscript + Sync {
    move |rng: &mut StreamRng| {
        let n = params.n();
        let bs = params.block_size();
        let store = MemoryStore::new(n, ciphertext_len(bs));
        let blocks = (0..n).map(|_| Block::zeroed(bs)).collect();
        let streams = RamStreams::seeded(rng.next_u64());
        let mut ram = DpRam::setup(blocks, params, store, TransparentCipher, streams)
            .expect("sampler parameters are consistent");
        queries
            .iter()
            .map(|&q| ram.read(q).expect("in-range query").1)
            .collect()
    }
}

/// How far an estimate strays from the exact distribution, in binomial
/// standard errors.
#[derive(Clone, Debug, Serialize)]
pub struct Agreement {
    pub cells: usize,
    pub max_z: f64,
    pub worst: Option<String>,
    pub mean_abs_error: f64,
}

impl Agreement {
    pub fn within(&self, sigmas: f64) -> bool {
        self.max_z <= sigmas
    }
}

pub fn compare_to_exact<T: Ord + Clone + Debug, P: Probability>(
    estimate: &TraceDistribution<T, f64>,
    exact: &TraceDistribution<T, P>,
) -> Result<Agreement> {
    let trials = estimate
        .trials()
        .ok_or_else(|| param("estimate must come from sampling"))? as f64;
    let keys: BTreeSet<&T> = estimate.iter().map(|(t, _)| t).chain(exact.iter().map(|(t, _)| t)).collect();
    let mut agreement = Agreement {
        cells: keys.len(),
        max_z: 0.0,
        worst: None,
        mean_abs_error: 0.0,
    };
    for t in keys {
        let p = exact.prob(t).to_f64();
        let f = estimate.prob(t);
        let err = (f - p).abs();
        agreement.mean_abs_error += err;
        let se = (p * (1.0 - p) / trials).sqrt();
        let z = if err == 0.0 {
            0.0
        } else if se == 0.0 {
            f64::INFINITY
        } else {
            err / se
        };
        if z > agreement.max_z {
            agreement.max_z = z;
            agreement.worst = Some(format!("{t:?}: estimate {f}, exact {p}"));
        }
    }
    agreement.mean_abs_error /= agreement.cells.max(1) as f64;
    Ok(agreement)
}

#[cfg(test)]
mod tests {
    use num_traits::{One, Zero};

    use super::*;
    use crate::Exact;

    fn rp(n: u64, num: u64, den: u64) -> RamParams {
        RamParams::with_probability(n, num, den, 1).unwrap()
    }

    fn r(x: u64, y: u64) -> Exact {
        Exact::from_ratio(x, y)
    }

    // Brute force over every initial stash vector of all n blocks and every
    // branch, with no state merging.
    fn branch_tree(params: &RamParams, queries: &[u64]) -> BTreeMap<RamTranscript, Exact> {
        fn walk(
            n: u64,
            p: &Exact,
            stash: &mut Vec<bool>,
            rest: &[u64],
            t: &mut RamTranscript,
            w: Exact,
            out: &mut BTreeMap<RamTranscript, Exact>,
        ) {
            let Some((&q, tail)) = rest.split_first() else {
                *out.entry(t.clone()).or_insert_with(Exact::zero) += w;
                return;
            };
            let was = stash[q as usize - 1];
            let ds: Vec<(u64, Exact)> = if was {
                (1..=n).map(|d| (d, w.clone() / Exact::from_u64(n))).collect()
            } else {
                vec![(q, w.clone())]
            };
            for (d, wd) in ds {
                for o in 1..=n {
                    stash[q as usize - 1] = true;
                    t.push(RamTrace { d, o });
                    let wo = wd.clone() * p.clone() / Exact::from_u64(n);
                    walk(n, p, stash, tail, t, wo, out);
                    t.pop();
                }
                stash[q as usize - 1] = false;
                t.push(RamTrace { d, o: q });
                walk(n, p, stash, tail, t, wd * p.complement(), out);
                t.pop();
                stash[q as usize - 1] = was;
            }
        }
        let n = params.n();
        let p: Exact = params.p();
        let mut out = BTreeMap::new();
        for mask in 0u32..1 << n {
            let mut stash: Vec<bool> = (0..n).map(|b| mask >> b & 1 == 1).collect();
            let w = stash.iter().fold(Exact::one(), |acc, &s| {
                acc * if s { p.clone() } else { p.complement() }
            });
            walk(n, &p, &mut stash, queries, &mut Vec::new(), w, &mut out);
        }
        out.retain(|_, w| !w.is_zero());
        out
    }

    #[test]
    fn enumeration_matches_branch_tree() {
        for (n, num, den) in [(3, 1, 2), (3, 1, 3), (2, 1, 2), (4, 1, 2)] {
            let params = rp(n, num, den);
            for q in [vec![1], vec![1, 2], vec![2, 2], vec![1, 3.min(n)]] {
                let dist = enumerate_ram::<Exact>(&params, &q, &InitialStash::Bernoulli).unwrap();
                let brute = branch_tree(&params, &q);
                assert_eq!(dist.iter().count(), brute.len());
                for (t, p) in &brute {
                    assert_eq!(&dist.prob(t), p, "n={n} q={q:?} t={t:?}");
                }
                assert_eq!(dist.total_mass(), Exact::one());
            }
        }
    }

    #[test]
    fn single_query_never_stashed() {
        // n = 4, p = 1/2, block 1 starts outside the stash.
        let params = rp(4, 1, 2);
        let law = InitialStash::Fixed(BTreeSet::new());
        let dist = enumerate_ram::<Exact>(&params, &[1], &law).unwrap();
        assert_eq!(dist.prob(&vec![RamTrace { d: 1, o: 1 }]), r(5, 8));
        for o in 2..=4 {
            assert_eq!(dist.prob(&vec![RamTrace { d: 1, o }]), r(1, 8));
        }
        assert_eq!(dist.support_len(), 4);
    }

    #[test]
    fn overwrite_marginals_match_closed_form() {
        let params = rp(3, 1, 2);
        let q = [1, 2, 1];
        let dist = enumerate_ram::<Exact>(&params, &q, &InitialStash::Bernoulli).unwrap();
        for j in 0..q.len() {
            let m = dist.marginal(|t| t[j].o);
            for o in 1..=3 {
                assert_eq!(m[&o], overwrite_marginal::<Exact>(&params, q[j], o));
            }
        }
    }

    #[test]
    fn enumeration_size_guard() {
        assert!(matches!(
            enumerate_ram::<f64>(&rp(7, 1, 2), &[1], &InitialStash::Bernoulli),
            Err(Error::Size(_))
        ));
        assert!(matches!(
            enumerate_ram::<f64>(&rp(6, 1, 2), &[1; 5], &InitialStash::Bernoulli),
            Err(Error::Size(_))
        ));
        assert!(enumerate_ram::<f64>(&rp(3, 1, 2), &[4], &InitialStash::Bernoulli).is_err());
    }

    #[test]
    fn adjacency_and_positions() {
        assert!(AdjacentPair::new(vec![1, 2], vec![1, 2]).is_err());
        assert!(AdjacentPair::new(vec![1, 2], vec![2, 1]).is_err());
        assert!(AdjacentPair::new(vec![1], vec![1, 2]).is_err());
        let pair = AdjacentPair::new(vec![1, 2, 1, 2], vec![1, 3, 1, 2]).unwrap();
        assert_eq!(pair.k(), 1);
        assert_eq!(pair.critical_positions(), BTreeSet::from([1, 3]));
        assert_eq!(prev_same(&[1, 2, 1], 2), Some(0));
        assert_eq!(next_same(&[1, 2, 1], 1), None);
    }

    #[test]
    fn lemmas_hold_on_reference_pair() {
        let params = rp(3, 1, 2);
        let pair = AdjacentPair::new(vec![1, 2, 1], vec![1, 3, 1]).unwrap();
        let audit = audit_ram::<Exact>(&params, &pair, &[0.0, 1.0]).unwrap();
        assert!(audit.lemmas.passed(), "{:?}", audit.lemmas.violations);
        assert!(audit.report.epsilon_hat <= ram_epsilon_bound(3, 0.5));
        assert!((audit.report.epsilon_hat - REFERENCE_RAM_EPSILON).abs() < 1e-12);
        assert!((REFERENCE_RAM_EPSILON - 16f64.ln()).abs() < 1e-15);
        let a = TraceDistribution::exact(branch_tree(&params, &[1, 2, 1]));
        let b = TraceDistribution::exact(branch_tree(&params, &[1, 3, 1]));
        assert_eq!(max_ratio(&a, &b), Some(r(16, 1)));
    }

    #[test]
    fn factor_table_rejects_estimates() {
        let params = rp(3, 1, 2);
        let pair = AdjacentPair::new(vec![1], vec![2]).unwrap();
        let est = empirical_distribution(1000, 1, ram_sampler(params, vec![1]));
        assert!(factor_table(&est, &est, &pair).is_err());
    }

    #[test]
    fn identical_distributions_report_zero() {
        let params = rp(3, 1, 3);
        let d = enumerate_ram::<Exact>(&params, &[1, 2], &InitialStash::Bernoulli).unwrap();
        let rep = dp_report(&d, &d, &[0.0]);
        assert_eq!(rep.epsilon_hat, 0.0);
        assert_eq!(rep.delta(0.0), Some(0.0));
        assert_eq!(max_ratio(&d, &d), Some(Exact::one()));
    }

    #[test]
    fn two_point_delta_by_hand() {
        let a = TraceDistribution::exact(BTreeMap::from([(0u8, r(3, 4)), (1, r(1, 4))]));
        let b = TraceDistribution::exact(BTreeMap::from([(0u8, r(1, 4)), (1, r(3, 4))]));
        // e^0 = 1: 3/4 - 1/4.
        assert_eq!(delta_at(&a, &b, 0.0), r(1, 2));
        let e = 2f64.ln();
        let two = <Exact as Probability>::from_f64(e.exp()).unwrap();
        let by_hand = r(3, 4) - two * r(1, 4);
        let expect = if by_hand > Exact::zero() { by_hand } else { Exact::zero() };
        assert_eq!(delta_at(&a, &b, e), expect);
        assert_eq!(delta_at(&a, &b, f64::INFINITY), Exact::zero());
        assert_eq!(max_ratio(&a, &b), Some(r(3, 1)));
        assert!((epsilon_hat(&a, &b) - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn delta_is_non_increasing() {
        let params = rp(3, 1, 2);
        let a = enumerate_ram::<Exact>(&params, &[1, 2], &InitialStash::Bernoulli).unwrap();
        let b = enumerate_ram::<Exact>(&params, &[1, 3], &InitialStash::Bernoulli).unwrap();
        let grid: Vec<f64> = (0..20).map(|i| i as f64 * 0.25).collect();
        let rep = dp_report(&a, &b, &grid);
        for w in rep.delta_at.windows(2) {
            assert!(w[1].delta <= w[0].delta);
        }
        assert_eq!(rep.delta_at.last().unwrap().delta, 0.0);
    }

    #[test]
    fn strawman_class_sum_matches_enumeration() {
        for n in [2u64, 3, 5, 8] {
            let a = strawman_distribution::<Exact>(n, 1).unwrap();
            let b = strawman_distribution::<Exact>(n, 2).unwrap();
            assert_eq!(a.total_mass(), Exact::one());
            for eps in [0.0, 0.5, 1.0, 5.0] {
                assert_eq!(delta_at(&a, &b, eps), strawman_delta::<Exact>(n, eps).unwrap(), "n={n}");
            }
        }
    }

    #[test]
    fn strawman_delta_floor() {
        for n in [10u64, 100] {
            let floor = r(n - 1, n);
            for eps in [1.0, 5.0, (n as f64).ln(), 2.0 * (n as f64).ln()] {
                assert!(strawman_delta::<Exact>(n, eps).unwrap() >= floor);
            }
        }
    }

    #[test]
    fn strawman_query_contains_target() {
        let mut rng = rng::stream(1, 0);
        let mut excluded = 0;
        let trials = 20_000;
        for _ in 0..trials {
            let s = strawman_query(10, 4, &mut rng);
            assert!(s.contains(&4));
            excluded += !s.contains(&7) as u32;
        }
        let f = excluded as f64 / trials as f64;
        let sd = (0.9f64 * 0.1 / trials as f64).sqrt();
        assert!((f - 0.9).abs() < 4.0 * sd);
    }

    #[test]
    fn membership_checks() {
        let params = DpIrParams::new(6, 0.5, 3).unwrap();
        let rep = ir_membership_check::<Exact>(&params);
        assert_eq!(rep.triples, 216);
        assert!(rep.passed());
        let straw = membership_check::<Exact>(6, &r(1000, 1), &Exact::zero(), |a, c| {
            strawman_membership(6, a, c)
        });
        assert!(!straw.passed());
        let same = membership_check::<Exact>(6, &Exact::one(), &Exact::zero(), |_, c| {
            strawman_membership(6, 1, c)
        });
        assert!(same.passed());
    }

    #[test]
    fn empirical_is_deterministic_and_converges() {
        let params = rp(3, 1, 2);
        let sampler = ram_sampler(params, vec![1, 2]);
        let a = empirical_distribution(20_000, 5, &sampler);
        assert_eq!(a, empirical_distribution(20_000, 5, &sampler));
        let exact = enumerate_ram::<Exact>(&params, &[1, 2], &InitialStash::Bernoulli).unwrap();
        let agree = compare_to_exact(&a, &exact).unwrap();
        assert!(agree.within(5.0), "{agree:?}");
    }
}
