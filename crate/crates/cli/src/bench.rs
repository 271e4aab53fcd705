use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use dpaccess::bench::{run_bench, run_bench_on, BenchConfig, BenchResult, KeyLaw, Scheme};
use dpaccess::blockstore::{ciphertext_len, RemoteStore};

#[derive(Clone, Copy, ValueEnum)]
pub enum Keys {
    Uniform,
    Zipf,
    Repeat,
}

#[derive(Args)]
pub struct BenchArgs {
    /// dpir, dpram or dpkvs.
    #[arg(long)]
    scheme: Scheme,
    #[arg(long)]
    n: u64,
    #[arg(long, default_value_t = 1000)]
    ops: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run against a block server (fresh, with matching geometry); in-memory
    /// otherwise. `--print-geometry` gives the `serve` flags.
    #[arg(long)]
    server: Option<String>,
    #[arg(long, default_value_t = 64)]
    block_size: usize,
    #[arg(long, default_value_t = 0.5)]
    read_fraction: f64,
    #[arg(long, value_enum, default_value_t = Keys::Uniform)]
    keys: Keys,
    #[arg(long, default_value_t = 1.1)]
    zipf_exponent: f64,
    /// DP-IR download-set size.
    #[arg(long, default_value_t = 8)]
    k: u64,
    /// DP-IR miss probability.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Store blocks in the clear.
    #[arg(long)]
    no_encrypt: bool,
    /// Print `cells block_size` for `serve` and exit.
    #[arg(long)]
    print_geometry: bool,
    /// Write the full JSON summary here (default: stderr).
    #[arg(long)]
    json: Option<PathBuf>,
}

pub fn run(args: BenchArgs) -> Result<()> {
    let mut config = BenchConfig::new(args.scheme, args.n, args.ops, args.seed);
    config.block_size = args.block_size;
    config.workload.read_fraction = args.read_fraction;
    config.workload.keys = match args.keys {
        Keys::Uniform => KeyLaw::Uniform,
        Keys::Zipf => KeyLaw::Zipf { exponent: args.zipf_exponent },
        Keys::Repeat => KeyLaw::RepeatOne,
    };
    config.ir_k = args.k;
    config.ir_alpha = args.alpha;
    config.encrypt = !args.no_encrypt;
    if args.print_geometry {
        let (cells, cell_len) = config.geometry()?;
        println!("{cells} {}", cell_len - ciphertext_len(0));
        return Ok(());
    }

    let result = match &args.server {
        Some(addr) => {
            let (cells, cell_len) = config.geometry()?;
            let store = RemoteStore::connect(addr, cells, cell_len)
                .with_context(|| format!("connecting to {addr}"))?;
            run_bench_on(&config, store)?
        }
        None => run_bench(&config)?,
    };
    report(&result, &args)
}

fn report(result: &BenchResult, args: &BenchArgs) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", BenchResult::CSV_HEADER)?;
    writeln!(out, "{}", result.csv_line())?;
    let json = serde_json::to_string_pretty(result)?;
    match &args.json {
        Some(p) => std::fs::write(p, json + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => eprintln!("{json}"),
    }
    if let Some(why) = &result.aborted {
        anyhow::bail!("run aborted after {} operations: {why}", result.ops);
    }
    Ok(())
}
