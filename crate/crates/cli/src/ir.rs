use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use dpaccess::blockstore::{AeadCipher, Block, BlockStore, Cipher, RemoteStore, ciphertext_len, DEFAULT_BLOCK_SIZE};
use dpaccess::dpir::{ir_query, DpIrParams};
use dpaccess::rng;

use crate::files::{self, KeyFile};

#[derive(Subcommand)]
pub enum IrCommand {
    /// Encrypt a data file into n blocks on the server.
    Init {
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
        block_size: usize,
        #[arg(long)]
        server: String,
        /// Created with a fresh key if missing.
        #[arg(long)]
        key_file: PathBuf,
        /// Contents split into consecutive blocks, zero-padded; `-` is stdin.
        /// Without it every block is zero.
        #[arg(long)]
        data_file: Option<PathBuf>,
    },
    /// Retrieve one block, or a batch of indices.
    Get(GetArgs),
}

#[derive(Args)]
pub struct GetArgs {
    /// Block to retrieve (1-based).
    #[arg(long, required_unless_present = "batch", conflicts_with = "batch")]
    index: Option<u64>,
    /// File with one index per line (`-` is stdin); prints `index,hit|miss,K`
    /// per line.
    #[arg(long)]
    batch: Option<PathBuf>,
    #[arg(long)]
    n: u64,
    /// Probability of answering with a miss.
    #[arg(long)]
    alpha: f64,
    /// Privacy budget; determines K unless --k is given.
    #[arg(long, required_unless_present = "k")]
    epsilon: Option<f64>,
    /// Explicit download-set size.
    #[arg(long, conflicts_with = "epsilon")]
    k: Option<u64>,
    /// Derive K without alpha in the denominator.
    #[arg(long)]
    unscaled_k: bool,
    /// With K = n, always answer instead of missing with probability alpha.
    #[arg(long)]
    answer_full_download: bool,
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    block_size: usize,
    #[arg(long)]
    server: String,
    #[arg(long)]
    key_file: PathBuf,
    /// Write the retrieved block here on a hit (single-index mode).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fixed randomness, for reproducible runs only.
    #[arg(long)]
    seed: Option<u64>,
}

pub fn run(cmd: IrCommand) -> Result<()> {
    match cmd {
        IrCommand::Init { n, block_size, server, key_file, data_file } => {
            let key = KeyFile::load_or_create(&key_file)?;
            let cipher = AeadCipher::new(&key.cipher_key);
            let data = match data_file {
                Some(p) => files::read_input(&p)?,
                None => Vec::new(),
            };
            if data.len() as u64 > n * block_size as u64 {
                bail!("{} bytes do not fit in {n} blocks of {block_size}", data.len());
            }
            let mut store = RemoteStore::connect(&server, n, ciphertext_len(block_size))
                .with_context(|| format!("connecting to {server}"))?;
            let mut rng = rng::from_entropy();
            for i in 1..=n {
                let start = ((i - 1) as usize * block_size).min(data.len());
                let end = (start + block_size).min(data.len());
                let mut bytes = data[start..end].to_vec();
                bytes.resize(block_size, 0);
                store.upload(i, &cipher.encrypt(&Block(bytes), &mut rng))?;
            }
            eprintln!("uploaded {n} blocks to {server}");
            Ok(())
        }
        IrCommand::Get(args) => get(args),
    }
}

fn get(args: GetArgs) -> Result<()> {
    let params = match (args.k, args.epsilon) {
        (Some(k), _) => DpIrParams::new(args.n, args.alpha, k)?,
        (None, Some(e)) if args.unscaled_k => DpIrParams::from_budget_unscaled(args.n, args.alpha, e)?,
        (None, Some(e)) => DpIrParams::from_budget(args.n, args.alpha, e)?,
        (None, None) => bail!("give --epsilon or --k"),
    }
    .with_answer_full_download(args.answer_full_download);
    let key = KeyFile::load(&args.key_file)?;
    let cipher = AeadCipher::new(&key.cipher_key);
    let mut store = RemoteStore::connect(&args.server, args.n, ciphertext_len(args.block_size))
        .with_context(|| format!("connecting to {}", args.server))?;
    let mut rng = match args.seed {
        Some(s) => rng::stream(s, 0),
        None => rng::from_entropy(),
    };

    let indices: Vec<u64> = match (&args.batch, args.index) {
        (Some(path), _) => {
            let reader: Box<dyn BufRead> = if path.as_os_str() == "-" {
                Box::new(BufReader::new(std::io::stdin()))
            } else {
                Box::new(BufReader::new(std::fs::File::open(path)?))
            };
            let mut v = Vec::new();
            for line in reader.lines() {
                let line = line?;
                let line = line.trim();
                if !line.is_empty() {
                    v.push(line.parse().with_context(|| format!("bad index {line:?}"))?);
                }
            }
            v
        }
        (None, Some(i)) => vec![i],
        (None, None) => bail!("give --index or --batch"),
    };

    let mut out = std::io::stdout().lock();
    for &i in &indices {
        let (_, answer) = ir_query(&params, i, &mut store, &cipher, &mut rng)?;
        let verdict = if answer.is_some() { "hit" } else { "miss" };
        writeln!(out, "{i},{verdict},{}", params.k())?;
        if let (Some(path), Some(block), None) = (&args.out, &answer, &args.batch) {
            std::fs::write(path, block.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    out.flush()?;
    Ok(())
}
