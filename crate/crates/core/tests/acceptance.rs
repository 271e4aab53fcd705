//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use dpaccess::audit::{
    audit_ram, compare_to_exact, empirical_distribution, enumerate_ir, enumerate_ram, max_ratio,
    ram_epsilon_bound, ram_sampler, strawman_delta, AdjacentPair, InitialStash,
    REFERENCE_RAM_EPSILON,
};
use dpaccess::bench::{blocks_by_levels, growth_curve, BenchConfig, KeyLaw, Scheme, Workload};
use dpaccess::blockstore::{
    ciphertext_len, AeadCipher, Block, BlockStore, Cipher, CipherKey, Ciphertext, CountingStore,
    MemoryStore, RemoteStore, TransparentCipher,
};
use dpaccess::dpir::{ir_query, transcript_prob, DpIrParams, IrTranscript};
use dpaccess::dpkvs::{DpKvs, KvsParams, KvsStreams};
use dpaccess::dpram::{DpRam, RamParams, RamStreams};
use dpaccess::mapping::{
    beta, beta_factor, beta_factor_recurrence, beta_recurrence, layout_for, simulate, MappingFn,
    DEFAULT_PHI_EXPONENT, DEFAULT_SLOTS,
};
use dpaccess::rng::stream;
use dpaccess::{Exact, Probability};
use num_traits::One;
use rand::{Rng, RngCore};
use rayon::prelude::*;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn z_score(successes: u64, trials: u64, p: f64) -> f64 {
    let t = trials as f64;
    (successes as f64 / t - p).abs() / (p * (1.0 - p) / t).sqrt()
}

// ---------------------------------------------------------------- 1

/// Probability of every download set for a query of `i`, obtained by
/// walking the two branches of the scheme over explicitly listed subsets.
fn ir_branch_oracle(n: u64, k: u64, alpha: &Exact, i: u64) -> BTreeMap<Vec<u64>, Exact> {
    fn subsets(n: u64, k: u64, from: u64, cur: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if cur.len() as u64 == k {
            out.push(cur.clone());
            return;
        }
        for x in from..=n {
            cur.push(x);
            subsets(n, k, x + 1, cur, out);
            cur.pop();
        }
    }
    let mut all = Vec::new();
    subsets(n, k, 1, &mut Vec::new(), &mut all);
    let with_i = all.iter().filter(|s| s.contains(&i)).count() as u64;
    let hit = Exact::one() - alpha.clone();
    let mut out = BTreeMap::new();
    for s in &all {
        // Miss branch: uniform over all K-sets.
        let mut p = alpha.clone() / Exact::from_u64(all.len() as u64);
        // Hit branch: i plus a uniform (K-1)-set of the others.
        if s.contains(&i) {
            p += hit.clone() / Exact::from_u64(with_i);
        }
        out.insert(s.clone(), p);
    }
    out
}

fn dpir_exactness() -> Outcome {
    let (n, k) = (6, 3);
    let params = DpIrParams::new(n, 0.5, k).map_err(|e| e.to_string())?;
    let alpha = Exact::from_ratio(1, 2);
    let mut dists = Vec::new();
    for i in 1..=n {
        let oracle = ir_branch_oracle(n, k, &alpha, i);
        ensure(oracle.len() == 20, || format!("oracle lists {} sets", oracle.len()))?;
        let dist = enumerate_ir::<Exact>(&params, i).map_err(|e| e.to_string())?;
        ensure(dist.support_len() == 20, || format!("enumerator lists {}", dist.support_len()))?;
        for (set, p) in &oracle {
            let t = IrTranscript::new(set.clone(), &params).map_err(|e| e.to_string())?;
            let closed = transcript_prob::<Exact>(&params, i, &t).map_err(|e| e.to_string())?;
            ensure(&closed == p && &dist.prob(&t) == p, || {
                format!("query {i}, set {set:?}: oracle {p}, closed form {closed}")
            })?;
        }
        ensure(dist.total_mass().is_one(), || format!("mass for {i} is {}", dist.total_mass()))?;
        dists.push(dist);
    }
    let mut worst = Exact::one();
    for a in &dists {
        for b in &dists {
            let r = max_ratio(a, b).ok_or("a transcript has one-sided support")?;
            if r > worst {
                worst = r;
            }
        }
    }
    let expected = Exact::from_u64(3);
    ensure(worst == expected, || format!("max ratio {worst}, expected 3"))?;
    Ok(format!("20 transcripts x 6 queries exact; max ratio = {worst} = (1-a)n/(aK)+1"))
}

// ---------------------------------------------------------------- 2

fn dpir_monte_carlo() -> Outcome {
    let (n, k, alpha, trials) = (1000u64, 10u64, 0.5, 1_000_000u64);
    let params = DpIrParams::new(n, alpha, k).map_err(|e| e.to_string())?;
    let bs = 16;
    let mut rng = stream(2, 0);
    let cipher = AeadCipher::new(&CipherKey::generate_with(&mut rng));
    let blocks: Vec<Block> = (0..n).map(|i| Block(i.to_be_bytes().repeat(2))).collect();
    let mut store = MemoryStore::new(n, ciphertext_len(bs));
    for (i, b) in (1..=n).zip(&blocks) {
        store.upload(i, &cipher.encrypt(b, &mut rng)).map_err(|e| e.to_string())?;
    }
    let (mut member, mut errors) = (0u64, 0u64);
    for _ in 0..trials {
        let i = rng.gen_range(1..=n);
        let (t, answer) = ir_query(&params, i, &mut store, &cipher, &mut rng).map_err(|e| e.to_string())?;
        member += t.contains(i) as u64;
        match answer {
            Some(b) if b != blocks[i as usize - 1] => return Err(format!("wrong block for {i}")),
            Some(_) => {}
            None => errors += 1,
        }
    }
    let p_member = (1.0 - alpha) + alpha * k as f64 / n as f64;
    let (z_m, z_e) = (z_score(member, trials, p_member), z_score(errors, trials, alpha));
    ensure(z_m <= 4.0 && z_e <= 4.0, || {
        format!("membership z = {z_m:.2}, error-rate z = {z_e:.2}")
    })?;
    Ok(format!(
        "Pr[i in T] = {:.5} (target {p_member}, z = {z_m:.2}); error rate = {:.5} (z = {z_e:.2})",
        member as f64 / trials as f64,
        errors as f64 / trials as f64
    ))
}

// ---------------------------------------------------------------- 3

fn dpram_oracle_equivalence() -> Outcome {
    let params = RamParams::with_probability(3, 1, 2, 8).map_err(|e| e.to_string())?;
    let q = vec![1, 2, 1];
    let exact = enumerate_ram::<Exact>(&params, &q, &InitialStash::Bernoulli).map_err(|e| e.to_string())?;
    let est = empirical_distribution(1_000_000, 3, ram_sampler(params, q));
    let agreement = compare_to_exact(&est, &exact).map_err(|e| e.to_string())?;
    ensure(agreement.within(4.0), || {
        format!("max z = {:.2} at {:?}", agreement.max_z, agreement.worst)
    })?;
    Ok(format!(
        "{} transcripts, max |z| = {:.2}, mean abs error = {:.2e}",
        agreement.cells, agreement.max_z, agreement.mean_abs_error
    ))
}

// ---------------------------------------------------------------- 4

fn lemma_pairs() -> Vec<(u64, (u64, u64), AdjacentPair)> {
    let mut rng = stream(4, 0);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for n in 2..=4u64 {
        for ratio in [(1, 3), (1, 2)] {
            for len in 1..=4usize {
                for _ in 0..3 {
                    let q: Vec<u64> = (0..len).map(|_| rng.gen_range(1..=n)).collect();
                    let k = rng.gen_range(0..len);
                    let mut q2 = q.clone();
                    while q2[k] == q[k] {
                        q2[k] = rng.gen_range(1..=n);
                    }
                    if seen.insert((n, ratio, q.clone(), q2.clone())) && out.len() < 200 {
                        out.push((n, ratio, AdjacentPair::new(q, q2).unwrap()));
                    }
                }
            }
        }
    }
    out
}

fn lemma_suite() -> Outcome {
    let pairs = lemma_pairs();
    ensure(pairs.len() >= 50, || format!("only {} pairs", pairs.len()))?;
    let results: Vec<Result<(usize, f64, f64), String>> = pairs
        .par_iter()
        .map(|(n, (num, den), pair)| {
            let params = RamParams::with_probability(*n, *num, *den, 1).map_err(|e| e.to_string())?;
            let audit = audit_ram::<Exact>(&params, pair, &[]).map_err(|e| e.to_string())?;
            let l = &audit.lemmas;
            if l.passed() {
                Ok((l.transcripts, l.max_download_ratio, l.max_overwrite_ratio))
            } else {
                Err(format!(
                    "n={n}, p={num}/{den}, {:?} vs {:?}: {} violations, first {:?}",
                    pair.q(),
                    pair.q2(),
                    l.violation_count,
                    l.violations.first()
                ))
            }
        })
        .collect();
    let mut transcripts = 0;
    let (mut dl, mut ow) = (0f64, 0f64);
    for r in results {
        let (t, d, o) = r?;
        transcripts += t;
        dl = dl.max(d);
        ow = ow.max(o);
    }
    Ok(format!(
        "{} pairs, {transcripts} transcripts, zero violations; max download ratio {dl}, max overwrite ratio {ow}",
        pairs.len()
    ))
}

// ---------------------------------------------------------------- 5

fn dpram_privacy_number() -> Outcome {
    let params = RamParams::with_probability(3, 1, 2, 1).map_err(|e| e.to_string())?;
    let pair = AdjacentPair::new(vec![1, 2, 1], vec![1, 3, 1]).map_err(|e| e.to_string())?;
    let audit = audit_ram::<Exact>(&params, &pair, &[]).map_err(|e| e.to_string())?;
    let eps = audit.report.epsilon_hat;
    let bound = ram_epsilon_bound(3, 0.5);
    ensure((bound - 3.0 * 108f64.ln()).abs() < 1e-12, || format!("bound {bound}"))?;
    ensure(eps <= bound, || format!("epsilon_hat {eps} exceeds {bound}"))?;
    ensure((eps - REFERENCE_RAM_EPSILON).abs() < 1e-12, || {
        format!("epsilon_hat {eps} differs from the reference {REFERENCE_RAM_EPSILON}")
    })?;
    Ok(format!("epsilon_hat = {eps:.6} <= 3 ln 108 = {bound:.6}; matches reference"))
}

// ---------------------------------------------------------------- 6

fn strawman_control() -> Outcome {
    let mut lines = Vec::new();
    for n in [10u64, 100] {
        let floor = Exact::from_ratio(n - 1, n);
        let ln_n = (n as f64).ln();
        for eps in [1.0, 5.0, ln_n, 2.0 * ln_n] {
            let delta = strawman_delta::<Exact>(n, eps).map_err(|e| e.to_string())?;
            ensure(delta >= floor, || {
                format!("n={n}, eps={eps}: delta {} below {}", delta.to_f64(), floor.to_f64())
            })?;
            lines.push(format!("{:.4}", delta.to_f64()));
        }
    }
    Ok(format!("delta >= (n-1)/n at all 8 points (deltas {})", lines.join(", ")))
}

// ---------------------------------------------------------------- 7

fn stash_bound() -> Outcome {
    let (n, c, queries, trials) = (1u64 << 16, 256u64, 100_000u64, 20u64);
    let bs = 8;
    let maxima: Vec<Result<usize, String>> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let params = RamParams::new(n, c, bs).map_err(|e| e.to_string())?;
            let store = MemoryStore::new(n, ciphertext_len(bs));
            let blocks = vec![Block::zeroed(bs); n as usize];
            let mut ram = DpRam::setup(blocks, params, store, TransparentCipher, RamStreams::seeded(700 + trial))
                .map_err(|e| e.to_string())?;
            let mut rng = stream(7, trial);
            let mut worst = ram.stash_size();
            for _ in 0..queries {
                let i = rng.gen_range(1..=n);
                if rng.gen_bool(0.5) {
                    ram.read(i).map_err(|e| e.to_string())?;
                } else {
                    ram.write(i, Block(rng.gen::<u64>().to_le_bytes().to_vec())).map_err(|e| e.to_string())?;
                }
                worst = worst.max(ram.stash_size());
            }
            Ok(worst)
        })
        .collect();
    let maxima = maxima.into_iter().collect::<Result<Vec<_>, _>>()?;
    let overall = *maxima.iter().max().unwrap();
    ensure(overall as u64 <= 4 * c, || format!("stash reached {overall}"))?;
    Ok(format!("max stash over {trials} trials = {overall} <= {}", 4 * c))
}

// ---------------------------------------------------------------- 8

fn forest_load() -> Outcome {
    let n = 1u64 << 16;
    let layout = layout_for(n, DEFAULT_SLOTS, DEFAULT_PHI_EXPONENT).map_err(|e| e.to_string())?;
    ensure(layout.phi() == 64 && layout.slots() == 4, || format!("layout {layout:?}"))?;
    let rows = simulate(&layout, 50, 8);
    let failures: u64 = rows.iter().map(|r| r.failures).sum();
    let worst = rows.iter().map(|r| r.super_root_load).max().unwrap_or(0);
    ensure(failures == 0, || format!("{failures} insertions found the forest full"))?;
    ensure(worst <= layout.phi(), || format!("super root reached {worst}"))?;

    for i in 0..=10 {
        let closed = beta_factor::<Exact>(i);
        let rec = beta_factor_recurrence::<Exact>(i);
        ensure(closed == rec, || format!("level {i}: closed form and recurrence differ"))?;
    }
    let mut worst_rel = 0f64;
    for i in 0..=8 {
        let (a, b) = (beta(i, n), beta_recurrence(i, n));
        worst_rel = worst_rel.max((a - b).abs() / a);
    }
    ensure(worst_rel <= 1e-12, || format!("f64 relative error {worst_rel:e}"))?;
    Ok(format!(
        "50 trials: 0 full, max super-root load {worst} <= 64; beta identity exact for i in 0..=10 (f64 rel err {worst_rel:.1e})"
    ))
}

// ---------------------------------------------------------------- 9

fn kvs_correctness() -> Outcome {
    let n = 1u64 << 16;
    let value_size = 16;
    let params = KvsParams::new(n, value_size).map_err(|e| e.to_string())?;
    let layout = *params.layout();
    let per_get = 2 * 3 * layout.slots() as u64 * u64::from(layout.levels());
    ensure(per_get == 120, || format!("2*3*s = {per_get}"))?;
    let mut rng = stream(9, 0);
    let store = CountingStore::new(MemoryStore::new(params.cells(), params.cell_len()));
    let cipher = AeadCipher::new(&CipherKey::generate_with(&mut rng));
    let mapping = MappingFn::generate(&mut rng);
    let mut kvs = DpKvs::setup(params, store, cipher, mapping, KvsStreams::seeded(90)).map_err(|e| e.to_string())?;

    let mut reference: HashMap<Vec<u8>, Block> = HashMap::new();
    let (mut gets, mut absent, mut mismatches) = (0u64, 0u64, 0u64);
    let mut get_costs = BTreeSet::new();
    for op in 0..100_000u64 {
        let roll = rng.gen_range(0..10);
        let before = kvs.store().touches();
        if roll < 2 {
            // Absent key: never put.
            let key = format!("absent-{op}").into_bytes();
            mismatches += kvs.get(&key).map_err(|e| e.to_string())?.is_some() as u64;
            absent += 1;
            gets += 1;
            get_costs.insert(kvs.store().touches() - before);
        } else if roll < 6 {
            let key = format!("key-{}", rng.gen_range(0..30_000)).into_bytes();
            let got = kvs.get(&key).map_err(|e| e.to_string())?;
            mismatches += (got.as_ref() != reference.get(&key)) as u64;
            gets += 1;
            get_costs.insert(kvs.store().touches() - before);
        } else {
            let key = format!("key-{}", rng.gen_range(0..30_000)).into_bytes();
            let mut v = vec![0u8; value_size];
            rng.fill_bytes(&mut v);
            kvs.put(&key, Block(v.clone())).map_err(|e| e.to_string())?;
            reference.insert(key, Block(v));
        }
    }
    ensure(mismatches == 0, || format!("{mismatches} mismatches"))?;
    ensure(get_costs.len() == 1 && get_costs.contains(&per_get), || {
        format!("blocks per get took values {get_costs:?}, expected {per_get}")
    })?;
    Ok(format!(
        "{gets} gets ({absent} absent) and {} puts, 0 mismatches, {} keys live; every get touched {per_get} blocks",
        100_000 - gets,
        reference.len()
    ))
}

// ---------------------------------------------------------------- 10

fn overhead_curves() -> Outcome {
    let mut ram = BenchConfig::new(Scheme::DpRam, 0, 2_000, 10);
    ram.block_size = 16;
    ram.encrypt = false;
    let grid: Vec<u64> = (10..=20).map(|e| 1u64 << e).collect();
    let ram_curve = growth_curve(&ram, &grid).map_err(|e| e.to_string())?;
    ensure(ram_curve.slope_per_doubling.abs() < 0.01, || {
        format!("dpram slope {} per doubling", ram_curve.slope_per_doubling)
    })?;

    let mut kvs = BenchConfig::new(Scheme::DpKvs, 0, 300, 11);
    kvs.block_size = 8;
    kvs.encrypt = false;
    kvs.workload = Workload { read_fraction: 1.0, keys: KeyLaw::Uniform };
    let grid: Vec<u64> = (10..=18).map(|e| 1u64 << e).collect();
    let kvs_curve = growth_curve(&kvs, &grid).map_err(|e| e.to_string())?;
    let by_levels = blocks_by_levels(&kvs_curve);
    let mut steps: Vec<(u32, f64)> = Vec::new();
    for (levels, values) in &by_levels {
        ensure(values.len() == 1, || format!("levels {levels}: blocks/op varies {values:?}"))?;
        steps.push((*levels, values[0]));
    }
    steps.sort_by_key(|s| s.0);
    ensure(steps.len() >= 2, || format!("grid covers only {steps:?}"))?;
    ensure(steps.windows(2).all(|w| w[1].1 > w[0].1), || format!("no step up: {steps:?}"))?;
    let pts: Vec<String> = kvs_curve
        .points
        .iter()
        .map(|p| format!("2^{}:{}", p.log2_n, p.blocks_per_op))
        .collect();
    Ok(format!(
        "dpram slope {:.1e}/doubling; dpkvs blocks/op by levels {steps:?} ({})",
        ram_curve.slope_per_doubling,
        pts.join(" ")
    ))
}

// ---------------------------------------------------------------- 11

fn protocol_conformance() -> Outcome {
    let (cells, cell_len) = (16u64, 8usize);
    let addr = common::spawn_server(cells, cell_len);
    let mut remote = RemoteStore::connect(addr, cells, cell_len).map_err(|e| e.to_string())?;
    for a in 1..=cells {
        let ct = Ciphertext(vec![a as u8; cell_len]);
        remote.upload(a, &ct).map_err(|e| e.to_string())?;
        ensure(remote.download(a).map_err(|e| e.to_string())? == ct, || format!("cell {a}"))?;
    }
    let mut memory = MemoryStore::new(cells, cell_len);
    let mut fresh = RemoteStore::connect(common::spawn_server(cells, cell_len), cells, cell_len)
        .map_err(|e| e.to_string())?;
    common::differential(&mut memory, &mut fresh, 20_000, 11)?;
    common::server_replies_match_golden()?;
    common::replay_golden_session()?;
    Ok(format!(
        "read-your-write and 20000-step differential identical; {} golden exchanges bit-exact both ways",
        common::golden_exchanges().len()
    ))
}

// ----------------------------------------------------------------

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let criteria = [
        Criterion { id: 1, name: "DP-IR exactness", limit: secs(1), run: dpir_exactness },
        Criterion { id: 2, name: "DP-IR Monte Carlo", limit: secs(30), run: dpir_monte_carlo },
        Criterion { id: 3, name: "DP-RAM oracle equivalence", limit: secs(60), run: dpram_oracle_equivalence },
        Criterion { id: 4, name: "DP-RAM lemma suite", limit: secs(120), run: lemma_suite },
        Criterion { id: 5, name: "DP-RAM privacy number", limit: secs(60), run: dpram_privacy_number },
        Criterion { id: 6, name: "strawman negative control", limit: secs(1), run: strawman_control },
        Criterion { id: 7, name: "stash bound", limit: secs(300), run: stash_bound },
        Criterion { id: 8, name: "two-choice forest load", limit: secs(300), run: forest_load },
        Criterion { id: 9, name: "DP-KVS correctness", limit: secs(600), run: kvs_correctness },
        Criterion { id: 10, name: "overhead curves", limit: secs(600), run: overhead_curves },
        Criterion { id: 11, name: "protocol conformance", limit: secs(60), run: protocol_conformance },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.run)();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > c.limit => Err(format!("{detail}; took {took:.1?}, limit {:?}", c.limit)),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {:>2} {}: {detail} [{took:.2?}]", c.id, c.name),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:>2} {}: {why} [{took:.2?}]", c.id, c.name);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
