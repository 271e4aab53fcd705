//! Server-side overhead measurement.
//!
//! Every count comes from a [`CountingStore`] wrapped around the backend,
//! never from the schemes themselves; the scheme's own expectation is
//! recorded alongside so the two can be compared.

use std::collections::HashMap;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::blockstore::{
    ciphertext_len, AeadCipher, Block, BlockStore, Cipher, CipherKey, CountingStore, MemoryStore,
    TransparentCipher,
};
use crate::dpir::{ir_query, DpIrParams};
use crate::dpkvs::{DpKvs, KvsParams, KvsStreams};
use crate::dpram::{DpRam, RamParams, RamStreams};
use crate::error::{param, Result};
use crate::mapping::MappingFn;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    DpIr,
    DpRam,
    DpKvs,
}

impl std::str::FromStr for Scheme {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dpir" => Ok(Scheme::DpIr),
            "dpram" => Ok(Scheme::DpRam),
            "dpkvs" => Ok(Scheme::DpKvs),
            _ => Err(param(format!("unknown scheme {s:?}"))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::DpIr => "dpir",
            Scheme::DpRam => "dpram",
            Scheme::DpKvs => "dpkvs",
        })
    }
}

/// How operation targets are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum KeyLaw {
    Uniform,
    Zipf { exponent: f64 },
    /// Every operation targets the same key.
    RepeatOne,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    /// Fraction of operations that are reads (gets).
    pub read_fraction: f64,
    pub keys: KeyLaw,
}

impl Default for Workload {
    fn default() -> Self {
        Workload {
            read_fraction: 0.5,
            keys: KeyLaw::Uniform,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub scheme: Scheme,
    pub n: u64,
    pub ops: u64,
    pub seed: u64,
    pub workload: Workload,
    pub block_size: usize,
    /// Download-set size for DP-IR.
    pub ir_k: u64,
    pub ir_alpha: f64,
    /// Use authenticated encryption rather than the transparent cipher.
    pub encrypt: bool,
}

impl BenchConfig {
    pub fn new(scheme: Scheme, n: u64, ops: u64, seed: u64) -> Self {
        BenchConfig {
            scheme,
            n,
            ops,
            seed,
            workload: Workload::default(),
            block_size: 64,
            ir_k: 8,
            ir_alpha: 0.5,
            encrypt: true,
        }
    }

    fn kvs_params(&self) -> Result<KvsParams> {
        KvsParams::new(self.n, self.block_size)
    }

    /// `(cells, cell_len)` the backend must provide.
    pub fn geometry(&self) -> Result<(u64, usize)> {
        Ok(match self.scheme {
            Scheme::DpIr | Scheme::DpRam => (self.n, ciphertext_len(self.block_size)),
            Scheme::DpKvs => {
                let p = self.kvs_params()?;
                (p.cells(), p.cell_len())
            }
        })
    }
}

/// Summary of one operation kind.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct OpSummary {
    pub count: u64,
    pub blocks_mean: f64,
    pub blocks_min: u64,
    pub blocks_max: u64,
}

impl OpSummary {
    fn add(&mut self, blocks: u64) {
        if self.count == 0 {
            self.blocks_min = blocks;
            self.blocks_max = blocks;
        }
        self.blocks_min = self.blocks_min.min(blocks);
        self.blocks_max = self.blocks_max.max(blocks);
        self.blocks_mean += (blocks as f64 - self.blocks_mean) / (self.count + 1) as f64;
        self.count += 1;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchResult {
    pub scheme: Scheme,
    pub n: u64,
    pub ops: u64,
    pub workload: Workload,
    pub blocks_per_op_mean: f64,
    pub blocks_per_op_max: u64,
    pub blocks_per_op_min: u64,
    /// Request/response exchanges with the server per operation.
    pub round_trips_per_op: f64,
    pub reads: OpSummary,
    pub writes: OpSummary,
    pub stash_max: usize,
    pub super_root_max: usize,
    /// Touches the scheme's own accounting predicts for the run.
    pub expected_touches: u64,
    pub counted_touches: u64,
    pub setup_touches: u64,
    pub wall_time_secs: f64,
    /// Set when a backend error cut the run short.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

impl BenchResult {
    pub const CSV_HEADER: &'static str = "scheme,n,ops,blocks_per_op_mean,blocks_per_op_max,round_trips_per_op,stash_max,super_root_max,wall_time_secs";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{:.4},{},{:.4},{},{},{:.3}",
            self.scheme,
            self.n,
            self.ops,
            self.blocks_per_op_mean,
            self.blocks_per_op_max,
            self.round_trips_per_op,
            self.stash_max,
            self.super_root_max,
            self.wall_time_secs
        )
    }
}

struct KeyDraw {
    n: u64,
    law: KeyLaw,
    zipf: Option<Zipf<f64>>,
    fixed: u64,
}

impl KeyDraw {
    fn new<R: Rng>(n: u64, law: KeyLaw, rng: &mut R) -> Result<Self> {
        let zipf = match law {
            KeyLaw::Zipf { exponent } => Some(
                Zipf::new(n, exponent).map_err(|e| param(format!("zipf law: {e}")))?,
            ),
            _ => None,
        };
        Ok(KeyDraw {
            n,
            law,
            zipf,
            fixed: rng.gen_range(1..=n),
        })
    }

    /// A key in `1..=n`.
    fn draw<R: Rng>(&self, rng: &mut R) -> u64 {
        match self.law {
            KeyLaw::Uniform => rng.gen_range(1..=self.n),
            KeyLaw::Zipf { .. } => (self.zipf.as_ref().unwrap().sample(rng) as u64).clamp(1, self.n),
            KeyLaw::RepeatOne => self.fixed,
        }
    }
}

/// Runs the benchmark against an in-memory backend.
pub fn run_bench(config: &BenchConfig) -> Result<BenchResult> {
    let (cells, cell_len) = config.geometry()?;
    run_bench_on(config, MemoryStore::new(cells, cell_len))
}

/// Runs the benchmark against `store`, which must match
/// [`BenchConfig::geometry`].
pub fn run_bench_on<S: BlockStore>(config: &BenchConfig, store: S) -> Result<BenchResult> {
    let key = CipherKey::generate_with(&mut rng::stream(config.seed, 10));
    let cipher: Box<dyn Cipher> = if config.encrypt {
        Box::new(AeadCipher::new(&key))
    } else {
        Box::new(TransparentCipher)
    };
    let mut store = CountingStore::new(store);
    let start = Instant::now();
    let mut ops_rng = rng::stream(config.seed, 11);
    let keys = KeyDraw::new(config.n, config.workload.keys, &mut ops_rng)?;
    let mut result = BenchResult {
        scheme: config.scheme,
        n: config.n,
        ops: 0,
        workload: config.workload,
        blocks_per_op_mean: 0.0,
        blocks_per_op_max: 0,
        blocks_per_op_min: 0,
        round_trips_per_op: 0.0,
        reads: OpSummary::default(),
        writes: OpSummary::default(),
        stash_max: 0,
        super_root_max: 0,
        expected_touches: 0,
        counted_touches: 0,
        setup_touches: 0,
        wall_time_secs: 0.0,
        aborted: None,
    };

    let outcome = match config.scheme {
        Scheme::DpIr => bench_ir(config, &mut store, &cipher, &keys, &mut ops_rng, &mut result),
        Scheme::DpRam => bench_ram(config, &mut store, &cipher, &keys, &mut ops_rng, &mut result),
        Scheme::DpKvs => bench_kvs(config, &mut store, &cipher, &keys, &mut ops_rng, &mut result),
    };
    if let Err(e) = outcome {
        result.aborted = Some(e.to_string());
    }

    let mut all = OpSummary::default();
    for s in [result.reads, result.writes] {
        if s.count > 0 {
            all.blocks_mean = (all.blocks_mean * all.count as f64 + s.blocks_mean * s.count as f64)
                / (all.count + s.count) as f64;
            all.blocks_min = if all.count == 0 { s.blocks_min } else { all.blocks_min.min(s.blocks_min) };
            all.blocks_max = all.blocks_max.max(s.blocks_max);
            all.count += s.count;
        }
    }
    result.ops = all.count;
    result.blocks_per_op_mean = all.blocks_mean;
    result.blocks_per_op_min = all.blocks_min;
    result.blocks_per_op_max = all.blocks_max;
    result.counted_touches = store.touches() - result.setup_touches;
    // Every download and upload is one request/response exchange.
    result.round_trips_per_op = all.blocks_mean;
    result.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(result)
}

fn is_read<R: Rng>(config: &BenchConfig, rng: &mut R) -> bool {
    rng.gen::<f64>() < config.workload.read_fraction
}

fn bench_ir<S: BlockStore, R: Rng>(
    config: &BenchConfig,
    store: &mut CountingStore<S>,
    cipher: &dyn Cipher,
    keys: &KeyDraw,
    rng: &mut R,
    result: &mut BenchResult,
) -> Result<()> {
    let params = DpIrParams::new(config.n, config.ir_alpha, config.ir_k)?;
    let mut enc = rng::stream(config.seed, 12);
    for i in 1..=config.n {
        store.upload(i, &cipher.encrypt(&Block::zeroed(config.block_size), &mut enc))?;
    }
    result.setup_touches = store.touches();
    for _ in 0..config.ops {
        let before = store.touches();
        ir_query(&params, keys.draw(rng), store, cipher, rng)?;
        result.reads.add(store.touches() - before);
        result.expected_touches += params.k();
    }
    Ok(())
}

fn bench_ram<S: BlockStore, R: Rng>(
    config: &BenchConfig,
    store: &mut CountingStore<S>,
    cipher: &dyn Cipher,
    keys: &KeyDraw,
    rng: &mut R,
    result: &mut BenchResult,
) -> Result<()> {
    let params = RamParams::new(config.n, RamParams::default_threshold(config.n), config.block_size)?;
    let blocks = (0..config.n).map(|_| Block::zeroed(config.block_size)).collect();
    let mut ram = DpRam::setup(blocks, params, &mut *store, cipher, RamStreams::seeded(config.seed))?;
    let setup = ram.store().touches();
    let mut payload = vec![0u8; config.block_size];
    for _ in 0..config.ops {
        let before = ram.store().touches();
        let i = keys.draw(rng);
        if is_read(config, rng) {
            ram.read(i)?;
            result.reads.add(ram.store().touches() - before);
        } else {
            rng.fill_bytes(&mut payload);
            ram.write(i, Block(payload.clone()))?;
            result.writes.add(ram.store().touches() - before);
        }
        result.expected_touches += 3;
        result.stash_max = result.stash_max.max(ram.stash_size());
    }
    result.setup_touches = setup;
    Ok(())
}

fn bench_kvs<S: BlockStore, R: Rng>(
    config: &BenchConfig,
    store: &mut CountingStore<S>,
    cipher: &dyn Cipher,
    keys: &KeyDraw,
    rng: &mut R,
    result: &mut BenchResult,
) -> Result<()> {
    let params = config.kvs_params()?;
    let mapping = MappingFn::generate(&mut rng::stream(config.seed, 13));
    let mut kvs = DpKvs::setup(params, &mut *store, cipher, mapping, KvsStreams::seeded(config.seed))?;
    let setup = kvs.store().touches();
    let mut payload = vec![0u8; config.block_size];
    for _ in 0..config.ops {
        let before = kvs.store().touches();
        let key = keys.draw(rng).to_be_bytes();
        if is_read(config, rng) {
            kvs.get(&key)?;
            result.reads.add(kvs.store().touches() - before);
            result.expected_touches += params.blocks_per_get();
        } else {
            rng.fill_bytes(&mut payload);
            kvs.put(&key, Block(payload.clone()))?;
            result.writes.add(kvs.store().touches() - before);
            result.expected_touches += params.blocks_per_put();
        }
        let stats = kvs.stats();
        result.stash_max = result.stash_max.max(stats.stashed_buckets);
        result.super_root_max = result.super_root_max.max(stats.super_root_load);
    }
    result.setup_touches = setup;
    Ok(())
}

/// One point of a growth curve.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthPoint {
    pub n: u64,
    pub log2_n: f64,
    pub blocks_per_op: f64,
    /// Forest levels, for the key-value store.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<u32>,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthCurve {
    pub scheme: Scheme,
    pub points: Vec<GrowthPoint>,
    /// Least-squares slope of blocks/op against `log2 n`, i.e. per doubling.
    pub slope_per_doubling: f64,
    pub intercept: f64,
}

/// Least-squares line through `(x, y)`; returns `(slope, intercept)`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    (slope, my - slope * mx)
}

/// Blocks per operation across `n_grid`, fitted against `log2 n`.
pub fn growth_curve(base: &BenchConfig, n_grid: &[u64]) -> Result<GrowthCurve> {
    let mut raw = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let mut cfg = base.clone();
        cfg.n = n;
        let res = run_bench(&cfg)?;
        if let Some(e) = res.aborted {
            return Err(param(format!("run at n={n} aborted: {e}")));
        }
        let levels = match base.scheme {
            Scheme::DpKvs => Some(cfg.kvs_params()?.layout().levels()),
            _ => None,
        };
        raw.push((n, res.blocks_per_op_mean, levels));
    }
    let xs: Vec<f64> = raw.iter().map(|r| (r.0 as f64).log2()).collect();
    let ys: Vec<f64> = raw.iter().map(|r| r.1).collect();
    let (slope, intercept) = fit_line(&xs, &ys);
    let points = raw
        .into_iter()
        .zip(&xs)
        .map(|((n, y, levels), &x)| GrowthPoint {
            n,
            log2_n: x,
            blocks_per_op: y,
            levels,
            residual: y - (slope * x + intercept),
        })
        .collect();
    Ok(GrowthCurve {
        scheme: base.scheme,
        points,
        slope_per_doubling: slope,
        intercept,
    })
}

/// Groups growth points by forest level count, returning the distinct
/// blocks/op values seen for each.
pub fn blocks_by_levels(curve: &GrowthCurve) -> HashMap<u32, Vec<f64>> {
    let mut out: HashMap<u32, Vec<f64>> = HashMap::new();
    for p in &curve.points {
        if let Some(l) = p.levels {
            let v = out.entry(l).or_default();
            if !v.contains(&p.blocks_per_op) {
                v.push(p.blocks_per_op);
            }
        }
    }
    out
}
