use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use dpaccess::audit::ram_epsilon_bound;
use dpaccess::blockstore::{
    ciphertext_len, AeadCipher, Block, Cipher, RemoteStore, TransparentCipher, DEFAULT_BLOCK_SIZE,
};
use dpaccess::dpram::{AuditRecord, ClientState, DpRam, RamParams, RamStreams};
use log::info;
use serde::{Deserialize, Serialize};

use crate::files::{self, session_seed, KeyFile};

#[derive(Subcommand)]
pub enum RamCommand {
    /// Upload the initial array and create the client state.
    Init(InitArgs),
    /// Read one block (hex on stdout unless --out is given).
    Read {
        #[arg(long)]
        index: u64,
        #[command(flatten)]
        session: SessionArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Overwrite one block.
    Write {
        #[arg(long)]
        index: u64,
        /// New contents, zero-padded to the block size; `-` is stdin.
        #[arg(long, required_unless_present = "value")]
        data_file: Option<PathBuf>,
        /// New contents as hex.
        #[arg(long, conflicts_with = "data_file")]
        value: Option<String>,
        #[command(flatten)]
        session: SessionArgs,
    },
    /// Client state summary as JSON; with --audit, the trace log as CSV.
    Stats {
        #[arg(long, default_value = "dpram-state.json")]
        state: PathBuf,
        #[arg(long)]
        audit: bool,
    },
}

#[derive(Args)]
pub struct InitArgs {
    #[arg(long)]
    n: u64,
    /// Stash threshold; each block is stashed with probability C/n.
    #[arg(long = "C", visible_alias = "c")]
    c: Option<u64>,
    #[arg(long)]
    server: String,
    /// Created with a fresh key if missing. Not used with --plaintext-readonly.
    #[arg(long, required_unless_present = "plaintext_readonly")]
    key_file: Option<PathBuf>,
    #[arg(long, default_value = "dpram-state.json")]
    state: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    block_size: usize,
    /// Initial contents split into n blocks, zero-padded; `-` is stdin.
    #[arg(long)]
    data_file: Option<PathBuf>,
    /// Record the (d, o) trace of every query in the state file.
    #[arg(long)]
    audit: bool,
    /// Store blocks unencrypted and refuse writes.
    #[arg(long)]
    plaintext_readonly: bool,
    /// Fixed randomness, for reproducible runs only.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
pub struct SessionArgs {
    #[arg(long, default_value = "dpram-state.json")]
    state: PathBuf,
    #[arg(long)]
    key_file: Option<PathBuf>,
    /// Override the server recorded at init.
    #[arg(long)]
    server: Option<String>,
}

/// Everything a later invocation needs besides the key.
#[derive(Serialize, Deserialize)]
struct RamSession {
    server: String,
    plaintext_readonly: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    state: ClientState,
}

type Client = DpRam<RemoteStore, Box<dyn Cipher>>;

fn streams(seed: Option<u64>, counter: u64) -> RamStreams {
    match seed {
        Some(s) => RamStreams::seeded(session_seed(s, counter)),
        None => RamStreams::from_entropy(),
    }
}

fn cipher_for(plaintext: bool, key_file: Option<&Path>) -> Result<Box<dyn Cipher>> {
    if plaintext {
        return Ok(Box::new(TransparentCipher));
    }
    let Some(path) = key_file else {
        bail!("--key-file is required for encrypted deployments");
    };
    Ok(Box::new(AeadCipher::new(&KeyFile::load_or_create(path)?.cipher_key)))
}

fn init(args: InitArgs) -> Result<()> {
    let c = args.c.unwrap_or_else(|| RamParams::default_threshold(args.n));
    let params = RamParams::new(args.n, c, args.block_size)?;
    let cipher = cipher_for(args.plaintext_readonly, args.key_file.as_deref())?;
    let data = match &args.data_file {
        Some(p) => files::read_input(p)?,
        None => Vec::new(),
    };
    let bs = args.block_size;
    if data.len() as u64 > args.n * bs as u64 {
        bail!("{} bytes do not fit in {} blocks of {bs}", data.len(), args.n);
    }
    let blocks = (0..args.n as usize)
        .map(|i| {
            let start = (i * bs).min(data.len());
            let mut b = data[start..(start + bs).min(data.len())].to_vec();
            b.resize(bs, 0);
            Block(b)
        })
        .collect();
    let store = RemoteStore::connect(&args.server, args.n, ciphertext_len(bs))
        .with_context(|| format!("connecting to {}", args.server))?;
    let mut ram = DpRam::setup(blocks, params, store, cipher, streams(args.seed, 0))?;
    ram.set_readonly(args.plaintext_readonly);
    ram.set_audit(args.audit);
    eprintln!(
        "initialized {} blocks on {}; {} stashed",
        args.n,
        args.server,
        ram.stash_size()
    );
    let (state, _) = ram.into_parts();
    files::write_json(
        &args.state,
        &RamSession {
            server: args.server,
            plaintext_readonly: args.plaintext_readonly,
            seed: args.seed,
            state,
        },
    )
}

fn open(session: &SessionArgs) -> Result<(RamSession, Client)> {
    let saved: RamSession = files::read_json(&session.state)?;
    let server = session.server.clone().unwrap_or_else(|| saved.server.clone());
    let params = *saved.state.params();
    let store = RemoteStore::connect(&server, params.n(), ciphertext_len(params.block_size()))
        .with_context(|| format!("connecting to {server}"))?;
    let cipher = cipher_for(saved.plaintext_readonly, session.key_file.as_deref())?;
    let ram = DpRam::resume(
        saved.state.clone(),
        store,
        cipher,
        streams(saved.seed, saved.state.queries() + 1),
    )?;
    Ok((saved, ram))
}

fn save(path: &Path, mut saved: RamSession, ram: Client) -> Result<()> {
    saved.state = ram.into_parts().0;
    files::write_json(path, &saved)
}

pub fn run(cmd: RamCommand) -> Result<()> {
    match cmd {
        RamCommand::Init(args) => init(args),
        RamCommand::Read { index, session, out } => {
            let (saved, mut ram) = open(&session)?;
            let (block, trace) = ram.read(index)?;
            info!("trace d={} o={}", trace.d, trace.o);
            save(&session.state, saved, ram)?;
            match out {
                Some(p) => std::fs::write(&p, block.as_bytes()).with_context(|| format!("writing {}", p.display()))?,
                None => println!("{}", hex::encode(block.as_bytes())),
            }
            Ok(())
        }
        RamCommand::Write { index, data_file, value, session } => {
            let (saved, mut ram) = open(&session)?;
            let bytes = files::value_bytes(value.as_deref(), data_file.as_deref(), ram.params().block_size())?;
            let (_, trace) = ram.write(index, Block(bytes))?;
            info!("trace d={} o={}", trace.d, trace.o);
            save(&session.state, saved, ram)
        }
        RamCommand::Stats { state, audit } => stats(&state, audit),
    }
}

#[derive(Serialize)]
struct RamStats {
    n: u64,
    stash_threshold: u64,
    p: f64,
    block_size: usize,
    stash_size: usize,
    expected_stash: f64,
    queries: u64,
    readonly: bool,
    audit_enabled: bool,
    epsilon_bound: f64,
}

fn stats(path: &Path, audit: bool) -> Result<()> {
    let saved: RamSession = files::read_json(path)?;
    let s = &saved.state;
    let params = s.params();
    let mut out = std::io::stdout().lock();
    if audit {
        let Some(log) = s.audit_log() else {
            bail!("this deployment was initialized without --audit");
        };
        writeln!(out, "{}", AuditRecord::CSV_HEADER)?;
        for rec in log {
            writeln!(out, "{}", rec.csv_line())?;
        }
        return Ok(());
    }
    let (num, den) = params.stash_ratio();
    let p = params.p::<f64>();
    let report = RamStats {
        n: params.n(),
        stash_threshold: num * params.n() / den,
        p,
        block_size: params.block_size(),
        stash_size: s.stash_size(),
        expected_stash: params.expected_stash(),
        queries: s.queries(),
        readonly: saved.plaintext_readonly,
        audit_enabled: s.audit_log().is_some(),
        epsilon_bound: ram_epsilon_bound(params.n(), p),
    };
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    Ok(())
}
