//! `sdmaps`: exact planar map counts, series, and the routes that cross-check them.

mod commands;
mod report;

use std::io;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use report::Format;

#[derive(Parser)]
#[command(
    name = "sdmaps",
    version,
    about = "Planar map counts from loop equations, with independent cross-checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[arg(long, global = true, value_enum, default_value = "json")]
    format: Format,
    /// Worker threads for the parallel parts; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Add the wall time to the report. Makes output machine dependent.
    #[arg(long, global = true)]
    timing: bool,
}

#[derive(Args, Clone)]
pub struct ModelArgs {
    /// Potential such as `t1*(x1^4) + t2*(x1*x2)`, or `0` for the Gaussian model.
    /// Couplings are stored as written; the weight is exp(-N tr V) with
    /// `V = x^2/2 + sum t_i (q_i + q_i^*)`, so series run in powers of `-t_i`.
    #[arg(long)]
    pub potential: String,
    /// Alphabet size; inferred from the largest color mentioned when absent.
    #[arg(long)]
    pub alphabet: Option<usize>,
    /// Parameter binding `NAME=VALUE` with an exact rational value; repeatable.
    #[arg(long = "set", value_name = "NAME=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Exact labeled, plain and rooted map counts for one root and multi-index.
    Count {
        #[command(flatten)]
        model: ModelArgs,
        /// Root word, `1` for none.
        #[arg(long, default_value = "1")]
        root: String,
        /// Star multiplicities, comma separated, one per term.
        #[arg(long = "k", value_name = "K1,K2,...")]
        k: String,
        /// Recount by brute-force gluing and compare.
        #[arg(long)]
        oracle: bool,
    },
    /// Truncated generating series with tail bounds, free energy and entropy.
    Series {
        #[command(flatten)]
        model: ModelArgs,
        /// Root words; repeatable.
        #[arg(long = "root", default_value = "x1^2")]
        roots: Vec<String>,
        #[arg(long, default_value_t = 4)]
        order: u32,
        /// Use the tightened growth constants instead of the default ones.
        #[arg(long)]
        tight: bool,
        #[arg(long)]
        free_energy: bool,
        #[arg(long)]
        entropy: bool,
    },
    /// Brute-force gluing counts for an explicit star list.
    Oracle {
        /// Comma-separated star words.
        #[arg(long)]
        stars: String,
        /// Root star, counted as the first star.
        #[arg(long)]
        root: Option<String>,
        #[arg(long)]
        alphabet: Option<usize>,
        /// Skip branches that cannot end connected and planar.
        #[arg(long)]
        prune: bool,
    },
    /// Connected gluings of a star list by genus.
    Genus {
        #[arg(long)]
        stars: String,
        #[arg(long)]
        alphabet: Option<usize>,
    },
    /// Metropolis sampling of the finite-N matrix model.
    Mc(McArgs),
    /// Support, density and moments of the one-matrix equilibrium measure.
    Onematrix {
        #[command(flatten)]
        model: ModelArgs,
        /// Highest moment to report.
        #[arg(long, default_value_t = 4)]
        moments: usize,
    },
    /// Two-matrix Ising model series, dressed counts and the algebraic curve.
    Ising(IsingArgs),
    /// Runs the recursion against the oracle and the structural invariants.
    Verify {
        #[command(flatten)]
        model: ModelArgs,
        /// Largest root degree checked against the oracle.
        #[arg(long, default_value_t = 4)]
        max_degree: usize,
        /// Largest |k| checked against the oracle.
        #[arg(long, default_value_t = 2)]
        order: u32,
        /// Random word pairs for the traciality check.
        #[arg(long, default_value_t = 50)]
        pairs: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args)]
pub struct McArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// `key = value` run configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Words whose normalized traces are estimated; repeatable.
    #[arg(long = "word", default_value = "x1^2")]
    pub words: Vec<String>,
    /// Schwinger-Dyson residual `P:i` for word `P` and color `i`; repeatable.
    #[arg(long = "residual", value_name = "P:I")]
    pub residuals: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Spectral cut-off `L`, or `none`.
    #[arg(long)]
    pub cutoff: Option<String>,
    /// Declare the potential convex so no cut-off is required.
    #[arg(long)]
    pub assert_convex: bool,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub sweeps: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
}

#[derive(Args)]
pub struct IsingArgs {
    /// Couplings of `A^2, A^4, ...`, comma separated.
    #[arg(long, default_value = "0,1")]
    pub ta: String,
    /// Couplings of `B^2, B^4, ...`, comma separated.
    #[arg(long, default_value = "0,1")]
    pub tb: String,
    /// Coupling of the `-c AB` term.
    #[arg(long, default_value = "1")]
    pub c: String,
    /// Root word in `x1 = A`, `x2 = B`.
    #[arg(long, default_value = "x1^2")]
    pub root: String,
    #[arg(long, default_value_t = 3)]
    pub order: u32,
    /// Compare with the dressed expansion built from brute-force counts.
    #[arg(long)]
    pub dressed: bool,
    /// Also solve the algebraic curve at this value of `u`.
    #[arg(long)]
    pub bms: Option<String>,
    /// Residual of the change of variables at `z,c`.
    #[arg(long, value_name = "Z,C")]
    pub change_of_variables: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let start = Instant::now();
    let result = match cli.command {
        Command::Count { model, root, k, oracle } => commands::count(&model, &root, &k, oracle),
        Command::Series {
            model,
            roots,
            order,
            tight,
            free_energy,
            entropy,
        } => commands::series(&model, &roots, order, tight, free_energy, entropy),
        Command::Oracle {
            stars,
            root,
            alphabet,
            prune,
        } => commands::oracle(&stars, root.as_deref(), alphabet, prune),
        Command::Genus { stars, alphabet } => commands::genus(&stars, alphabet),
        Command::Mc(args) => commands::mc(&args),
        Command::Onematrix { model, moments } => commands::onematrix(&model, moments),
        Command::Ising(args) => commands::ising(&args),
        Command::Verify {
            model,
            max_degree,
            order,
            pairs,
            seed,
        } => commands::verify(&model, max_degree, order, pairs, seed),
    };
    let mut report = match result {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    report.command = std::env::args().skip(1).collect();
    if cli.timing {
        report.wall_time_ms = Some(start.elapsed().as_millis() as u64);
    }
    if let Err(e) = report.write(cli.format, &mut io::stdout().lock(), &mut io::stderr().lock()) {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    if report.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
