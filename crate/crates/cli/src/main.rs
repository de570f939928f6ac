//! Command-line front end for the identification experiments.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fracident::experiments::{
    run_bench, run_convergence, run_gradcheck, run_identify, run_interp_study, Checks,
    ExperimentConfig,
};

#[derive(Parser, Debug)]
#[command(
    name = "fracident",
    version,
    about = "Fractional order and horizon identification for nonlocal diffusion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Recover (s, δ) from observed data with BFGS.
    Identify(Common),
    /// Energy and L2 errors under mesh refinement.
    Convergence(Common),
    /// Interpolation error against the per-interval order and node counts against η.
    InterpStudy(Common),
    /// Precompute and correction assembly timings.
    Bench(Common),
    /// Adjoint gradient against finite differences.
    Gradcheck(Common),
}

/// Options shared by all subcommands; they override values from `--config`.
#[derive(Args, Debug, Default)]
struct Common {
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Test problem: I (fractional Laplacian) or II (truncated kernel).
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    n_elem: Option<usize>,
    #[arg(long)]
    s_min: Option<f64>,
    #[arg(long)]
    s_max: Option<f64>,
    /// Interpolation tolerance, or "auto".
    #[arg(long)]
    eta: Option<String>,
    /// Interval shape parameter, or "auto".
    #[arg(long)]
    xi: Option<String>,
    #[arg(long)]
    s0: Option<f64>,
    #[arg(long)]
    delta0: Option<f64>,
    #[arg(long)]
    s_star: Option<f64>,
    #[arg(long)]
    delta_star: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Standard deviation of the additive data noise.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// direct, cg or dense.
    #[arg(long)]
    solver: Option<String>,
    #[arg(long)]
    solver_tol: Option<f64>,
    #[arg(long)]
    grad_tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Comma-separated mesh levels l, h = 2^-l.
    #[arg(long)]
    levels: Option<String>,
    /// Comma-separated interpolation orders.
    #[arg(long)]
    m_list: Option<String>,
    /// Comma-separated tolerances for the node-count sweep.
    #[arg(long)]
    eta_list: Option<String>,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> fracident::Result<ExperimentConfig> {
        let mut pairs: BTreeMap<String, String> = match &self.config {
            Some(p) => ExperimentConfig::parse_pairs(&std::fs::read_to_string(p)?)?,
            None => BTreeMap::new(),
        };
        let mut set = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                pairs.insert(k.to_string(), v);
            }
        };
        let s = |v: Option<f64>| v.map(|x| x.to_string());
        set("problem", self.problem.clone());
        set("n_elem", self.n_elem.map(|x| x.to_string()));
        set("s_min", s(self.s_min));
        set("s_max", s(self.s_max));
        set("eta", self.eta.clone());
        set("xi", self.xi.clone());
        set("s0", s(self.s0));
        set("delta0", s(self.delta0));
        set("s_star", s(self.s_star));
        set("delta_star", s(self.delta_star));
        set("alpha", s(self.alpha));
        set("beta", s(self.beta));
        set("sigma", s(self.sigma));
        set("seed", self.seed.map(|x| x.to_string()));
        set("solver", self.solver.clone());
        set("solver_tol", s(self.solver_tol));
        set("grad_tol", s(self.grad_tol));
        set("max_iter", self.max_iter.map(|x| x.to_string()));
        set("levels", self.levels.clone());
        set("m_list", self.m_list.clone());
        set("eta_list", self.eta_list.clone());
        set("out", self.out.as_ref().map(|p| p.display().to_string()));
        ExperimentConfig::from_pairs(&pairs)
    }
}

fn report(checks: &Checks) -> ExitCode {
    for (name, ok) in &checks.0 {
        println!("{} {name}", if *ok { "PASS" } else { "FAIL" });
    }
    if checks.all_pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn run(cli: Cli) -> fracident::Result<ExitCode> {
    Ok(match cli.command {
        Command::Identify(c) => {
            let out = run_identify(&c.config()?)?;
            out.write_summary(std::io::stdout().lock())?;
            println!(
                "# {} ({} nodes, eta={}, xi={})",
                out.run.message, out.nodes, out.eta, out.xi
            );
            report(&out.checks)
        }
        Command::Convergence(c) => {
            let out = run_convergence(&c.config()?)?;
            println!("h,N,error_Hs,error_Hs_exact,error_L2,rate_Hs,rate_L2");
            for r in &out.rows {
                println!(
                    "{},{},{},{},{},{},{}",
                    r.h, r.n, r.error_hs, r.error_hs_exact, r.error_l2, r.rate_hs, r.rate_l2
                );
            }
            println!(
                "# fitted rates: energy {}, L2 {}",
                out.fitted_rate_hs, out.fitted_rate_l2
            );
            report(&out.checks)
        }
        Command::InterpStudy(c) => {
            let out = run_interp_study(&c.config()?)?;
            println!("M,nodes,solution_error,deriv_error");
            for r in &out.rows {
                println!("{},{},{},{}", r.m, r.nodes, r.solution_error, r.deriv_error);
            }
            println!("eta,nodes");
            for r in &out.node_counts {
                println!("{},{}", r.eta, r.nodes);
            }
            println!("# node count vs |log eta|: R^2 = {}", out.node_count_r2);
            report(&out.checks)
        }
        Command::Bench(c) => {
            let out = run_bench(&c.config()?)?;
            println!("phase,N,seconds");
            for r in &out.rows {
                println!("{},{},{}", r.phase, r.n, r.seconds);
            }
            report(&out.checks)
        }
        Command::Gradcheck(c) => {
            let out = run_gradcheck(&c.config()?)?;
            println!("s,delta,rel_error");
            for r in &out.rows {
                println!("{},{},{}", r.q.s, r.q.delta, r.rel_error);
            }
            report(&out.checks)
        }
    })
}

fn main() -> ExitCode {
    if let Some(n) = std::env::var("FRACIDENT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("warning: could not size thread pool: {e}");
        }
    }
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
