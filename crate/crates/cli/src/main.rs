use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use h2vec::bench::{bench_matvec, to_csv, BenchConfig};
use h2vec::demo::{corner_area_means, Backward, DemoConfig, DemoSetup};
use h2vec::selftest::{run_selftest, Fault, SelftestConfig};

#[derive(Parser)]
#[command(name = "h2vec", version, about = "Hierarchical vectors and H2-matrix products")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the randomized oracle suites of every module.
    Selftest(SelftestArgs),
    /// Flop and time measurements.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Reproduce the numerical experiments.
    #[command(subcommand)]
    Demo(DemoCommand),
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trials per suite.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Deliberately corrupt one coupling matrix per product trial.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Matrix-vector products on random H2-matrices of increasing size.
    Matvec(MatvecArgs),
}

#[derive(Args)]
struct MatvecArgs {
    #[arg(long, value_delimiter = ',', default_value = "64,128,256,512,1024,2048,4096")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 4)]
    ka: usize,
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    leaf_size: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum DemoCommand {
    /// Inverse iteration for the Poisson equation on the L-shaped domain.
    Poisson(PoissonArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BackwardArg {
    Induced,
    Standard,
}

#[derive(Args)]
struct PoissonArgs {
    #[arg(long, default_value_t = 64)]
    grid: usize,
    #[arg(long, default_value_t = 3)]
    degree: usize,
    #[arg(long, default_value_t = 2.0)]
    eta: f64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 20)]
    steps: usize,
    #[arg(long, default_value_t = 32)]
    leaf_size: usize,
    #[arg(long, value_enum, default_value_t = BackwardArg::Induced)]
    backward: BackwardArg,
    /// Additional tolerances; writes `PATH-sweep.csv` with the final cluster counts.
    #[arg(long, value_delimiter = ',')]
    sweep: Vec<f64>,
    #[arg(long)]
    out_prefix: PathBuf,
}

fn check_threads() -> Result<()> {
    match std::env::var("H2VEC_THREADS") {
        Ok(v) if v.trim() != "1" => bail!("H2VEC_THREADS={v}: only single-threaded runs are supported"),
        _ => Ok(()),
    }
}

fn selftest(args: &SelftestArgs) -> Result<bool> {
    let cfg = SelftestConfig {
        seed: args.seed,
        trials: args.trials,
        fault: if args.inject_fault {
            Fault::CorruptCoupling
        } else {
            Fault::None
        },
        ..SelftestConfig::default()
    };
    println!("selftest seed {} trials {} max n {}", cfg.seed, cfg.trials, cfg.max_n);
    let reports = run_selftest(&cfg);
    for r in &reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    println!("{} of {} suites passed", reports.len() - failed, reports.len());
    Ok(failed == 0)
}

fn bench(args: &MatvecArgs) -> Result<bool> {
    let cfg = BenchConfig {
        k: args.k,
        ka: args.ka,
        eta: args.eta,
        seed: args.seed,
        leaf_size: args.leaf_size,
        dim: args.dim,
    };
    let records = bench_matvec(&args.sizes, &cfg)?;
    for r in &records {
        println!(
            "n {:>6}  #T_x {:>6}  #T_y {:>6}  C_sp {:>3}  flops {:>12}  {:.3e} s",
            r.n,
            r.clusters,
            r.result_clusters,
            r.sparsity,
            r.flops(),
            r.seconds
        );
    }
    let body = format!("# generated {}\n{}", unix_time(), to_csv(&records));
    std::fs::write(&args.out, body).with_context(|| format!("writing {}", args.out.display()))?;
    println!("wrote {}", args.out.display());
    Ok(true)
}

fn poisson(args: &PoissonArgs) -> Result<bool> {
    let config = DemoConfig {
        grid: args.grid,
        degree: args.degree,
        eta: args.eta,
        eps: args.eps,
        steps: args.steps,
        leaf_size: args.leaf_size,
        backward: match args.backward {
            BackwardArg::Induced => Backward::Induced,
            BackwardArg::Standard => Backward::Standard,
        },
    };
    let setup = DemoSetup::new(config)?;
    println!(
        "n {}  clusters {}  C_sp {}  max induced rank {}  compression error {:.3e}  setup {:.1} s",
        setup.problem.dim(),
        setup.tree.len(),
        setup.matrix.block_tree().sparsity_constant(),
        setup.plan.max_induced_rank(),
        setup.compression_error,
        setup.setup_seconds
    );
    let run = setup.run(args.eps, args.steps)?;
    for r in &run.steps {
        println!(
            "step {:>3}  #T_x {:>5}  lambda {:.12e}  dense {:.12e}  bound {:.3e}  deviation {:.3e} <= {:.3e}",
            r.step,
            r.clusters,
            1.0 / r.rayleigh,
            1.0 / r.rayleigh_dense,
            r.bound,
            r.deviation,
            r.accumulated_bound
        );
    }
    let (near, far) = corner_area_means(&setup.tiles(&run.x), 0.125);
    println!("mean leaf area near the corner {near:.3e}, elsewhere {far:.3e}");
    for path in setup.write_outputs(&run, &args.out_prefix)? {
        println!("wrote {}", path.display());
    }
    if !args.sweep.is_empty() {
        let mut csv = format!(
            "# generated {}\neps,clusters,leaves,bound,accumulated_bound\n",
            unix_time()
        );
        for &eps in &args.sweep {
            let r = setup.run(eps, args.steps)?;
            let last = r.final_record();
            println!("eps {eps:.1e}  #T_x {}", last.clusters);
            csv.push_str(&format!(
                "{:.16e},{},{},{:.16e},{:.16e}\n",
                eps, last.clusters, last.leaves, last.bound, last.accumulated_bound
            ));
        }
        let mut path = args.out_prefix.as_os_str().to_owned();
        path.push("-sweep.csv");
        let path = PathBuf::from(path);
        std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    let ok = run.bounds_hold();
    if !ok {
        eprintln!("error bounds violated");
    }
    Ok(ok)
}

fn unix_time() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = check_threads().and_then(|()| match &cli.command {
        Command::Selftest(a) => selftest(a),
        Command::Bench(BenchCommand::Matvec(a)) => bench(a),
        Command::Demo(DemoCommand::Poisson(a)) => poisson(a),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
