//! `dpaccess`: block server, scheme clients, forest simulator, auditor and
//! benchmarks.

mod audit;
mod bench;
mod files;
mod ir;
mod kvs;
mod ram;

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dpaccess::blockstore::{ciphertext_len, BlockServer, BlockStore, FileStore, MemoryStore};
use dpaccess::mapping::{layout_for, simulate, SimRow};
use log::info;

#[derive(Parser)]
#[command(name = "dpaccess", version, about = "Differentially private access to outsourced storage")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a block server.
    Serve(ServeArgs),
    /// Stateless differentially private retrieval.
    #[command(subcommand)]
    Dpir(ir::IrCommand),
    /// Errorless read/write access with a client stash.
    #[command(subcommand)]
    Dpram(ram::RamCommand),
    /// Key-value store over the two-choice forest.
    #[command(subcommand)]
    Dpkvs(kvs::KvsCommand),
    /// Forest hashing tools.
    #[command(subcommand)]
    Maptool(MaptoolCommand),
    /// Exact and sampled privacy audits.
    #[command(subcommand)]
    Audit(audit::AuditCommand),
    /// Server-side overhead measurement.
    Bench(bench::BenchArgs),
}

#[derive(Args)]
struct ServeArgs {
    /// Number of cells.
    #[arg(long)]
    cells: u64,
    /// Plaintext block size; cells hold its ciphertext.
    #[arg(long)]
    block_size: usize,
    #[arg(long, default_value = "127.0.0.1:7070")]
    listen: String,
    /// Keep cells in this file instead of memory. Reopened if it exists.
    #[arg(long)]
    backing: Option<PathBuf>,
}

#[derive(Subcommand)]
enum MaptoolCommand {
    /// Fill the forest with n random keys per trial and report loads as CSV.
    Simulate {
        #[arg(long)]
        n: u64,
        /// Slots per node.
        #[arg(long, default_value_t = dpaccess::mapping::DEFAULT_SLOTS)]
        t: usize,
        /// Super-root capacity exponent: ceil(log2(n)^phi_exp).
        #[arg(long, default_value_t = dpaccess::mapping::DEFAULT_PHI_EXPONENT)]
        phi_exp: f64,
        #[arg(long, default_value_t = 10)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn serve(args: ServeArgs) -> Result<()> {
    let cell_len = ciphertext_len(args.block_size);
    let store: Box<dyn BlockStore + Send> = match &args.backing {
        Some(path) if path.exists() => {
            let s = FileStore::open(path, cell_len)
                .with_context(|| format!("opening backing file {}", path.display()))?;
            anyhow::ensure!(
                s.cells() == args.cells,
                "backing file holds {} cells, --cells says {}",
                s.cells(),
                args.cells
            );
            Box::new(s)
        }
        Some(path) => Box::new(FileStore::create(path, args.cells, cell_len)?),
        None => Box::new(MemoryStore::new(args.cells, cell_len)),
    };
    let server = BlockServer::bind(&args.listen, store)?;
    let addr = server.local_addr()?;
    info!("serving {} cells of {cell_len} bytes", args.cells);
    // Scripts wait for this line to learn the bound port.
    println!("listening on {addr}");
    io::stdout().flush()?;
    server.run()?;
    Ok(())
}

fn maptool(cmd: MaptoolCommand) -> Result<()> {
    let MaptoolCommand::Simulate { n, t, phi_exp, trials, seed, out } = cmd;
    let layout = layout_for(n, t, phi_exp)?;
    let rows = simulate(&layout, trials, seed);
    let mut w = files::output(out.as_deref())?;
    writeln!(w, "{}", SimRow::csv_header(layout.levels()))?;
    for row in &rows {
        writeln!(w, "{}", row.csv_line())?;
    }
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Serve(args) => serve(args)?,
        Command::Dpir(cmd) => ir::run(cmd)?,
        Command::Dpram(cmd) => ram::run(cmd)?,
        Command::Dpkvs(cmd) => return kvs::run(cmd),
        Command::Maptool(cmd) => maptool(cmd)?,
        Command::Audit(cmd) => return audit::run(cmd),
        Command::Bench(args) => bench::run(args)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        // A closed stdout (e.g. piped into `head`) is not a failure.
        Err(e) if e.downcast_ref::<io::Error>().is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
