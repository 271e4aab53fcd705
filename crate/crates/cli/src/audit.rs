use std::io::Write;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use dpaccess::audit::{
    audit_ram, dp_report, empirical_distribution, enumerate_ir, ir_membership_check,
    ram_epsilon_bound, ram_sampler, strawman_report, AdjacentPair, DpReport, MembershipReport,
};
use dpaccess::dpir::DpIrParams;
use dpaccess::dpram::RamParams;
use dpaccess::Exact;
use serde::Serialize;

#[derive(Subcommand)]
pub enum AuditCommand {
    /// Transcript distributions of two adjacent DP-RAM query sequences.
    Ram(RamAuditArgs),
    /// Exact DP-IR transcript distributions for two queried blocks.
    Ir(IrAuditArgs),
    /// Failure probability of the independent-inclusion strawman.
    Strawman {
        #[arg(long)]
        n: u64,
        /// Comma-separated epsilons; defaults to 1, 5, ln n and 2 ln n.
        #[arg(long, value_delimiter = ',')]
        eps: Vec<f64>,
    },
}

#[derive(Args)]
pub struct RamAuditArgs {
    #[arg(long)]
    n: u64,
    /// Stash probability as NUM/DEN.
    #[arg(long)]
    p: String,
    /// First sequence, comma-separated 1-based indices.
    #[arg(long, value_delimiter = ',', required = true)]
    q: Vec<u64>,
    /// Second sequence; must differ from --q in exactly one position.
    #[arg(long, value_delimiter = ',', required = true)]
    q2: Vec<u64>,
    /// Estimate from this many sampled runs instead of enumerating.
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated epsilons at which to report delta.
    #[arg(long, value_delimiter = ',')]
    eps: Vec<f64>,
}

#[derive(Args)]
pub struct IrAuditArgs {
    #[arg(long)]
    n: u64,
    #[arg(long)]
    alpha: f64,
    #[arg(long, required_unless_present = "epsilon")]
    k: Option<u64>,
    #[arg(long, conflicts_with = "k")]
    epsilon: Option<f64>,
    /// Queried block of the first distribution.
    #[arg(long, default_value_t = 1)]
    q: u64,
    /// Queried block of the second distribution.
    #[arg(long, default_value_t = 2)]
    q2: u64,
    #[arg(long, value_delimiter = ',')]
    eps: Vec<f64>,
}

fn parse_ratio(s: &str) -> Result<(u64, u64)> {
    let (num, den) = s
        .split_once('/')
        .with_context(|| format!("expected NUM/DEN, got {s:?}"))?;
    Ok((num.trim().parse()?, den.trim().parse()?))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

#[derive(Serialize)]
struct SampledRamAudit {
    n: u64,
    p: f64,
    pair: AdjacentPair,
    trials: u64,
    support_q: usize,
    support_q2: usize,
    report: DpReport,
}

fn ram(args: RamAuditArgs) -> Result<ExitCode> {
    let (num, den) = parse_ratio(&args.p)?;
    let params = RamParams::with_probability(args.n, num, den, 16)?;
    let pair = AdjacentPair::new(args.q, args.q2)?;
    let Some(trials) = args.trials else {
        let audit = audit_ram::<Exact>(&params, &pair, &args.eps)?;
        print_json(&audit)?;
        return Ok(if audit.lemmas.passed() {
            ExitCode::SUCCESS
        } else {
            ExitCode::FAILURE
        });
    };
    if trials == 0 {
        bail!("--trials must be positive");
    }
    let a = empirical_distribution(trials, args.seed, ram_sampler(params, pair.q().to_vec()));
    let b = empirical_distribution(
        trials,
        args.seed.wrapping_add(1),
        ram_sampler(params, pair.q2().to_vec()),
    );
    let mut report = dp_report(&a, &b, &args.eps);
    let p = params.p::<f64>();
    report.epsilon_bound = Some(ram_epsilon_bound(args.n, p));
    print_json(&SampledRamAudit {
        n: args.n,
        p,
        support_q: a.support_len(),
        support_q2: b.support_len(),
        pair,
        trials,
        report,
    })?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct IrAudit {
    n: u64,
    k: u64,
    alpha: f64,
    epsilon_bound: f64,
    report: DpReport,
    membership: MembershipReport,
}

fn ir(args: IrAuditArgs) -> Result<ExitCode> {
    let params = match (args.k, args.epsilon) {
        (Some(k), _) => DpIrParams::new(args.n, args.alpha, k)?,
        (None, Some(e)) => DpIrParams::from_budget(args.n, args.alpha, e)?,
        (None, None) => bail!("give --k or --epsilon"),
    };
    let a = enumerate_ir::<Exact>(&params, args.q)?;
    let b = enumerate_ir::<Exact>(&params, args.q2)?;
    let mut report = dp_report(&a, &b, &args.eps);
    let bound = params.epsilon_bound();
    report.epsilon_bound = Some(bound);
    let membership = ir_membership_check::<Exact>(&params);
    let ok = membership.passed() && report.epsilon_hat <= bound + 1e-12;
    print_json(&IrAudit {
        n: params.n(),
        k: params.k(),
        alpha: params.alpha(),
        epsilon_bound: bound,
        report,
        membership,
    })?;
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

pub fn run(cmd: AuditCommand) -> Result<ExitCode> {
    match cmd {
        AuditCommand::Ram(args) => ram(args),
        AuditCommand::Ir(args) => ir(args),
        AuditCommand::Strawman { n, eps } => {
            let grid = if eps.is_empty() {
                let ln_n = (n as f64).ln();
                vec![1.0, 5.0, ln_n, 2.0 * ln_n]
            } else {
                eps
            };
            print_json(&strawman_report(n, &grid)?)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
