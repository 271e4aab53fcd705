//! Stateless differentially private information retrieval.
//!
//! A query for block `i` downloads a set `T` of exactly `K` distinct blocks.
//! With probability `1 - alpha`, `i` is placed in `T` first and the answer is
//! returned; with probability `alpha` the whole set is uniform and the query
//! answers "miss". The rest of `T` is filled uniformly from the blocks not yet
//! chosen. For `q ≠ q'` and any set `T`, the worst ratio of
//! `Pr[IR(q) = T] / Pr[IR(q') = T]` is `(1 - alpha)·n / (alpha·K) + 1`.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::blockstore::{Block, BlockStore, Cipher};
use crate::error::{param, Result};
use crate::scalar::{binomial, Probability};

/// Parameters of one DP-IR deployment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpIrParams {
    n: u64,
    alpha: f64,
    k: u64,
    /// When `K == n` every query downloads everything; if set, such queries
    /// always answer instead of failing with probability `alpha`.
    answer_full_download: bool,
}

impl DpIrParams {
    /// Explicit download-set size.
    pub fn new(n: u64, alpha: f64, k: u64) -> Result<Self> {
        if n == 0 {
            return Err(param("n must be at least 1"));
        }
        check_alpha(alpha)?;
        if k == 0 || k > n {
            return Err(param(format!("K={k} outside [1, {n}]")));
        }
        Ok(DpIrParams {
            n,
            alpha,
            k,
            answer_full_download: false,
        })
    }

    /// Smallest `K` whose privacy loss stays within `epsilon`; see [`compute_k`].
    pub fn from_budget(n: u64, alpha: f64, epsilon: f64) -> Result<Self> {
        Self::new(n, alpha, compute_k(n, alpha, epsilon)?)
    }

    /// `K` from the variant formula without `alpha` in the denominator; see
    /// [`compute_k_unscaled`].
    pub fn from_budget_unscaled(n: u64, alpha: f64, epsilon: f64) -> Result<Self> {
        Self::new(n, alpha, compute_k_unscaled(n, alpha, epsilon)?)
    }

    pub fn with_answer_full_download(mut self, answer: bool) -> Self {
        self.answer_full_download = answer;
        self
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn is_full_download(&self) -> bool {
        self.k == self.n
    }

    /// Probability that a query misses. Zero only in answering full-download
    /// mode.
    pub fn miss_probability(&self) -> f64 {
        if self.is_full_download() && self.answer_full_download {
            0.0
        } else {
            self.alpha
        }
    }

    /// `ln(1 + (1 - alpha)·n / (alpha·K))`, the per-transcript bound for
    /// whatever `K` is in force.
    pub fn epsilon_bound(&self) -> f64 {
        ((1.0 - self.alpha) * self.n as f64 / (self.alpha * self.k as f64)).ln_1p()
    }

    /// Privacy budget actually achieved. With `K == n` every query sees the
    /// same transcript (all of `[n]`), so the loss is zero.
    pub fn achieved_epsilon(&self) -> f64 {
        if self.is_full_download() {
            0.0
        } else {
            self.epsilon_bound()
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(param(format!("alpha={alpha} outside (0, 1)")));
    }
    Ok(())
}

fn check_budget(epsilon: f64) -> Result<()> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(param(format!(
            "epsilon={epsilon}: a positive budget is required for partial downloads"
        )));
    }
    Ok(())
}

/// `ceil(x)`, but values within 1e-9 (relative) above an integer round down
/// to it, so `ln`/`exp` round-off cannot bump `K` by one.
fn tolerant_ceil(x: f64) -> f64 {
    let fl = x.floor();
    if x - fl <= 1e-9 * x.abs().max(1.0) {
        fl
    } else {
        fl + 1.0
    }
}

fn clamp_k(raw: f64, n: u64) -> u64 {
    if raw.is_nan() || raw >= n as f64 {
        n
    } else {
        (tolerant_ceil(raw) as u64).clamp(1, n)
    }
}

/// `K = clamp(ceil((1 - alpha)·n / (alpha·(e^epsilon - 1))), 1, n)`.
///
/// This is the size at which the worst-case transcript ratio equals
/// `e^epsilon`.
pub fn compute_k(n: u64, alpha: f64, epsilon: f64) -> Result<u64> {
    check_alpha(alpha)?;
    check_budget(epsilon)?;
    if n == 0 {
        return Err(param("n must be at least 1"));
    }
    Ok(clamp_k(
        (1.0 - alpha) * n as f64 / (alpha * epsilon.exp_m1()),
        n,
    ))
}

/// `K = clamp(ceil((1 - alpha)·n / (e^epsilon - 1)), 1, n)`.
///
/// Smaller than [`compute_k`] by a factor `alpha`; its achieved budget (see
/// [`DpIrParams::achieved_epsilon`]) exceeds `epsilon`.
pub fn compute_k_unscaled(n: u64, alpha: f64, epsilon: f64) -> Result<u64> {
    check_alpha(alpha)?;
    check_budget(epsilon)?;
    if n == 0 {
        return Err(param("n must be at least 1"));
    }
    Ok(clamp_k((1.0 - alpha) * n as f64 / epsilon.exp_m1(), n))
}

/// The adversary's view of one query: the downloaded index set, sorted.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IrTranscript(Vec<u64>);

impl IrTranscript {
    /// Validates a candidate transcript against `params`.
    pub fn new(mut indices: Vec<u64>, params: &DpIrParams) -> Result<Self> {
        indices.sort_unstable();
        if indices.len() as u64 != params.k {
            return Err(param(format!(
                "transcript has {} indices, K={}",
                indices.len(),
                params.k
            )));
        }
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(param("transcript has duplicate indices"));
        }
        if indices.iter().any(|&i| i == 0 || i > params.n) {
            return Err(param("transcript index outside [n]"));
        }
        Ok(IrTranscript(indices))
    }

    pub fn indices(&self) -> &[u64] {
        &self.0
    }

    pub fn contains(&self, i: u64) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Draws the download set for a query of `i` without touching storage.
/// Returns the transcript and whether the query hits.
pub fn sample_transcript<R: Rng + ?Sized>(
    params: &DpIrParams,
    i: u64,
    rng: &mut R,
) -> (IrTranscript, bool) {
    let n = params.n;
    let k = params.k as usize;
    let hit = if params.is_full_download() && params.answer_full_download {
        true
    } else {
        rng.gen::<f64>() >= params.alpha
    };

    let indices = if params.is_full_download() {
        (1..=n).collect()
    } else if 2 * k as u64 <= n {
        let mut chosen = BTreeSet::new();
        if hit {
            chosen.insert(i);
        }
        while chosen.len() < k {
            chosen.insert(rng.gen_range(1..=n));
        }
        chosen.into_iter().collect()
    } else {
        let mut pool: Vec<u64> = (1..=n).filter(|&j| !(hit && j == i)).collect();
        let need = if hit { k - 1 } else { k };
        let (picked, _) = pool.partial_shuffle(rng, need);
        let mut v = picked.to_vec();
        if hit {
            v.push(i);
        }
        v.sort_unstable();
        v
    };
    (IrTranscript(indices), hit)
}

/// Runs a query for block `i` against `store`: downloads every member of the
/// transcript in ascending order and decrypts the target on a hit.
/// `None` signals the error branch.
pub fn ir_query<S, C, R>(
    params: &DpIrParams,
    i: u64,
    store: &mut S,
    cipher: &C,
    rng: &mut R,
) -> Result<(IrTranscript, Option<Block>)>
where
    S: BlockStore + ?Sized,
    C: Cipher + ?Sized,
    R: Rng + ?Sized,
{
    if i == 0 || i > params.n {
        return Err(param(format!("index {i} outside [1, {}]", params.n)));
    }
    let (t, hit) = sample_transcript(params, i, rng);
    let mut answer = None;
    for &j in t.indices() {
        let ct = store.download(j)?;
        if hit && j == i {
            answer = Some(cipher.decrypt(&ct)?);
        }
    }
    Ok((t, answer))
}

/// Exact probability that a query for `queried` emits transcript `t`:
/// `(1 - alpha)/C(n-1, K-1) + alpha/C(n, K)` if `queried ∈ t`, else
/// `alpha/C(n, K)`.
pub fn transcript_prob<P: Probability>(
    params: &DpIrParams,
    queried: u64,
    t: &IrTranscript,
) -> Result<P> {
    let t = IrTranscript::new(t.0.clone(), params)?;
    if queried == 0 || queried > params.n {
        return Err(param("queried index outside [n]"));
    }
    if params.is_full_download() {
        return Ok(P::one());
    }
    let alpha = P::from_f64(params.alpha).expect("alpha is finite");
    let uniform = alpha.clone() / binomial::<P>(params.n, params.k);
    if t.contains(queried) {
        Ok(alpha.complement() / binomial::<P>(params.n - 1, params.k - 1) + uniform)
    } else {
        Ok(uniform)
    }
}

/// `Pr[c ∈ T]` for a query of `queried`.
pub fn membership_prob<P: Probability>(params: &DpIrParams, queried: u64, c: u64) -> P {
    if params.is_full_download() {
        return P::one();
    }
    let alpha = P::from_f64(params.alpha).expect("alpha is finite");
    let uniform = alpha.clone() * P::from_ratio(params.k, params.n);
    let targeted = if c == queried {
        P::one()
    } else if params.n == 1 {
        P::zero()
    } else {
        P::from_ratio(params.k - 1, params.n - 1)
    };
    alpha.complement() * targeted + uniform
}

/// All `K`-subsets of `[n]` in lexicographic order.
pub fn all_transcripts(params: &DpIrParams) -> impl Iterator<Item = IrTranscript> {
    Combinations::new(params.n, params.k).map(IrTranscript)
}

/// Lexicographic `k`-combinations of `1..=n`.
pub(crate) struct Combinations {
    n: u64,
    current: Option<Vec<u64>>,
}

impl Combinations {
    pub(crate) fn new(n: u64, k: u64) -> Self {
        let current = (k <= n).then(|| (1..=k).collect());
        Combinations { n, current }
    }
}

impl Iterator for Combinations {
    type Item = Vec<u64>;

    fn next(&mut self) -> Option<Vec<u64>> {
        let out = self.current.clone()?;
        let k = out.len();
        let mut next = out.clone();
        let mut pos = k;
        loop {
            if pos == 0 {
                self.current = None;
                break;
            }
            pos -= 1;
            if next[pos] < self.n - (k - 1 - pos) as u64 {
                next[pos] += 1;
                for j in pos + 1..k {
                    next[j] = next[j - 1] + 1;
                }
                self.current = Some(next);
                break;
            }
        }
        Some(out)
    }
}

/// Sum of [`transcript_prob`] over every transcript; exactly one for a
/// correct implementation.
pub fn total_mass<P: Probability>(params: &DpIrParams, queried: u64) -> Result<P> {
    let mut acc = P::zero();
    for t in all_transcripts(params) {
        acc += transcript_prob::<P>(params, queried, &t)?;
    }
    Ok(acc)
}
