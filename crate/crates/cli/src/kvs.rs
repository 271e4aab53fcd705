use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use dpaccess::audit::ram_epsilon_bound;
use dpaccess::blockstore::{AeadCipher, Block, BlockStore, FileStore, RemoteStore};
use dpaccess::dpkvs::{DpKvs, KvsClientState, KvsCounters, KvsParams, KvsStreams};
use dpaccess::mapping::MappingFn;
use dpaccess::rng;
use serde::{Deserialize, Serialize};

use crate::files::{self, session_seed, KeyFile};

/// Exit status of `dpkvs get` when the key is absent.
const ABSENT: u8 = 2;

#[derive(Subcommand)]
pub enum KvsCommand {
    /// Create an empty store.
    Init {
        /// Key capacity.
        #[arg(long)]
        n: u64,
        /// Bytes per value.
        #[arg(long, default_value_t = 64)]
        value_size: usize,
        /// Make gets issue the same bucket queries as puts.
        #[arg(long)]
        uniform_shape: bool,
        #[command(flatten)]
        target: Target,
        /// Fixed randomness, for reproducible runs only.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print a value as hex (or to --out); exits with status 2 if absent.
    Get {
        #[command(flatten)]
        key: KeyArg,
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Store a value, zero-padded to the value size.
    Put {
        #[command(flatten)]
        key: KeyArg,
        /// Value as hex.
        #[arg(long, required_unless_present = "value_file")]
        value: Option<String>,
        /// Value read from a file; `-` is stdin.
        #[arg(long, conflicts_with = "value")]
        value_file: Option<PathBuf>,
        #[command(flatten)]
        target: Target,
    },
    /// Client memory and per-operation cost as JSON.
    Stats {
        #[command(flatten)]
        target: Target,
    },
    /// Server geometry (`serve --cells/--block-size`) for a deployment.
    Geometry {
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 64)]
        value_size: usize,
    },
}

#[derive(Args)]
pub struct KeyArg {
    /// The key, as UTF-8 text.
    #[arg(long)]
    key: String,
    /// Interpret --key as hex bytes.
    #[arg(long)]
    key_hex: bool,
}

impl KeyArg {
    fn bytes(&self) -> Result<Vec<u8>> {
        if self.key_hex {
            hex::decode(&self.key).context("--key is not valid hex")
        } else {
            Ok(self.key.as_bytes().to_vec())
        }
    }
}

/// Where the cells live and where the client state is kept.
#[derive(Args)]
pub struct Target {
    /// Local deployment directory (cells.bin and state.json).
    #[arg(long, conflicts_with = "server")]
    store: Option<PathBuf>,
    /// Remote block server.
    #[arg(long)]
    server: Option<String>,
    #[arg(long)]
    key_file: Option<PathBuf>,
    /// State file; defaults to DIR/state.json with --store, else
    /// dpkvs-state.json.
    #[arg(long)]
    state: Option<PathBuf>,
}

impl Target {
    fn state_path(&self) -> PathBuf {
        match (&self.state, &self.store) {
            (Some(p), _) => p.clone(),
            (None, Some(dir)) => dir.join("state.json"),
            (None, None) => PathBuf::from("dpkvs-state.json"),
        }
    }

    fn key(&self) -> Result<&Path> {
        self.key_file.as_deref().context("--key-file is required")
    }
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Backend {
    Dir(PathBuf),
    Server(String),
}

#[derive(Serialize, Deserialize)]
struct KvsSession {
    backend: Backend,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Invocations so far; advances seeded streams.
    #[serde(default)]
    sessions: u64,
    state: KvsClientState,
}

type Client = DpKvs<Box<dyn BlockStore>, AeadCipher>;

fn streams(seed: Option<u64>, counter: u64) -> KvsStreams {
    match seed {
        Some(s) => KvsStreams::seeded(session_seed(s, counter)),
        None => KvsStreams::from_entropy(),
    }
}

fn connect(backend: &Backend, params: &KvsParams, create: bool) -> Result<Box<dyn BlockStore>> {
    Ok(match backend {
        Backend::Dir(dir) => {
            let path = dir.join("cells.bin");
            if create {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                Box::new(FileStore::create(&path, params.cells(), params.cell_len())?)
            } else {
                Box::new(FileStore::open(&path, params.cell_len())?)
            }
        }
        Backend::Server(addr) => Box::new(
            RemoteStore::connect(addr, params.cells(), params.cell_len())
                .with_context(|| format!("connecting to {addr}"))?,
        ),
    })
}

fn backend_of(target: &Target) -> Option<Backend> {
    match (&target.store, &target.server) {
        (Some(d), _) => Some(Backend::Dir(d.clone())),
        (None, Some(s)) => Some(Backend::Server(s.clone())),
        (None, None) => None,
    }
}

fn open(target: &Target) -> Result<(KvsSession, Client)> {
    let saved: KvsSession = files::read_json(&target.state_path())?;
    let backend = backend_of(target).unwrap_or_else(|| saved.backend.clone());
    let params = *saved.state.params();
    let store = connect(&backend, &params, false)?;
    let cipher = AeadCipher::new(&KeyFile::load(target.key()?)?.cipher_key);
    let kvs = DpKvs::resume(
        saved.state.clone(),
        store,
        cipher,
        streams(saved.seed, saved.sessions + 1),
    )?;
    Ok((saved, kvs))
}

fn save(target: &Target, mut saved: KvsSession, kvs: Client) -> Result<()> {
    saved.state = kvs.into_parts().0;
    saved.sessions += 1;
    files::write_json(&target.state_path(), &saved)
}

pub fn run(cmd: KvsCommand) -> Result<ExitCode> {
    match cmd {
        KvsCommand::Init { n, value_size, uniform_shape, target, seed } => {
            let Some(backend) = backend_of(&target) else {
                bail!("give --store DIR or --server HOST:PORT");
            };
            let params = KvsParams::new(n, value_size)?.with_uniform_shape(uniform_shape);
            let cipher = AeadCipher::new(&KeyFile::load_or_create(target.key()?)?.cipher_key);
            let mapping = match seed {
                Some(s) => MappingFn::generate(&mut rng::stream(s, 100)),
                None => MappingFn::generate(&mut rng::from_entropy()),
            };
            let store = connect(&backend, &params, true)?;
            let kvs = DpKvs::setup(params, store, cipher, mapping, streams(seed, 0))?;
            eprintln!(
                "initialized {} buckets, {} cells of {} bytes",
                params.buckets(),
                params.cells(),
                params.cell_len()
            );
            let session = KvsSession {
                backend,
                seed,
                sessions: 0,
                state: kvs.into_parts().0,
            };
            files::write_json(&target.state_path(), &session)?;
        }
        KvsCommand::Get { key, target, out } => {
            let (saved, mut kvs) = open(&target)?;
            let value = kvs.get(&key.bytes()?)?;
            save(&target, saved, kvs)?;
            let Some(block) = value else {
                eprintln!("absent");
                return Ok(ExitCode::from(ABSENT));
            };
            match out {
                Some(p) => std::fs::write(&p, block.as_bytes()).with_context(|| format!("writing {}", p.display()))?,
                None => println!("{}", hex::encode(block.as_bytes())),
            }
        }
        KvsCommand::Put { key, value, value_file, target } => {
            let (saved, mut kvs) = open(&target)?;
            let bytes = files::value_bytes(value.as_deref(), value_file.as_deref(), kvs.params().value_size())?;
            kvs.put(&key.bytes()?, Block(bytes))?;
            save(&target, saved, kvs)?;
        }
        KvsCommand::Stats { target } => stats(&target)?,
        KvsCommand::Geometry { n, value_size } => {
            let params = KvsParams::new(n, value_size)?;
            let g = Geometry {
                cells: params.cells(),
                block_size: params.slot_len(),
                cell_len: params.cell_len(),
                levels: params.layout().levels(),
                buckets: params.buckets(),
            };
            println!("{}", serde_json::to_string_pretty(&g)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct Geometry {
    cells: u64,
    /// Plaintext bytes per cell; pass to `serve --block-size`.
    block_size: usize,
    cell_len: usize,
    levels: u32,
    buckets: u64,
}

#[derive(Serialize)]
struct KvsReport {
    buckets: u64,
    levels: u32,
    slots_per_node: usize,
    super_root_capacity: usize,
    stash_probability: f64,
    stashed_buckets: usize,
    fresh_nodes: usize,
    super_root_load: usize,
    counters: KvsCounters,
    blocks_per_get: u64,
    blocks_per_put: u64,
    /// Bucket-level DP-RAM queries per operation: the factor applied to the
    /// per-query privacy loss.
    epsilon_multiplier_get: u64,
    epsilon_multiplier_put: u64,
    bucket_query_epsilon_bound: f64,
}

fn stats(target: &Target) -> Result<()> {
    let saved: KvsSession = files::read_json(&target.state_path())?;
    let params = *saved.state.params();
    let s = saved.state.stats();
    let (num, den) = params.stash_ratio();
    let p = num as f64 / den as f64;
    let layout = params.layout();
    let report = KvsReport {
        buckets: params.buckets(),
        levels: layout.levels(),
        slots_per_node: layout.slots(),
        super_root_capacity: layout.phi(),
        stash_probability: p,
        stashed_buckets: s.stashed_buckets,
        fresh_nodes: s.fresh_nodes,
        super_root_load: s.super_root_load,
        counters: s.counters,
        blocks_per_get: params.blocks_per_get(),
        blocks_per_put: params.blocks_per_put(),
        epsilon_multiplier_get: params.queries_per_get(),
        epsilon_multiplier_put: params.queries_per_put(),
        bucket_query_epsilon_bound: ram_epsilon_bound(params.buckets(), p),
    };
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    Ok(())
}
