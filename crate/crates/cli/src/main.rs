use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use w2s_core::em::{fit_source_mle, fit_target_mle, EmConfig};
use w2s_core::harness::{run_experiment, try_run_strategy, ExperimentConfig, RunSettings, Strategy, BUILTIN_CANONICAL};
use w2s_core::hmm::{cycle_witness, independence_certificate, HmmFile};
use w2s_core::mixture::{sample_source, sample_target};
use w2s_core::numeric::linspace;
use w2s_core::numeric::quadrature::QuadratureConfig;
use w2s_core::numeric::seeding::derive;
use w2s_core::strategies::{calibrate_wli_constant, refinement_posterior, wli_bound, RefinementMode};
use w2s_core::{canonical_benchmark, Error, LatentConceptSystem, Result, SourceDataset, TargetDataset};

#[derive(Parser, Debug)]
#[command(name = "w2s", version, about = "Latent concept transfer experiments")]
struct Cli {
    /// Input configuration (system, sweep, EM or HMM file depending on the command).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample source and target datasets from a system.
    Simulate(SimulateArgs),
    /// Fit a mixture to a dataset by maximum likelihood.
    Fit(FitArgs),
    /// Run one strategy end to end and score it.
    W2s(W2sArgs),
    /// Run a sweep from a config file.
    Sweep,
    /// HMM mixture diagnostics.
    Hmm {
        #[command(subcommand)]
        command: HmmCommand,
    },
    /// Refinement diagnostics.
    Refine {
        #[command(subcommand)]
        command: RefineCommand,
    },
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Source records.
    #[arg(long)]
    n: usize,
    /// Target records; defaults to `n`.
    #[arg(long)]
    n_q: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Domain {
    Source,
    Target,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Dataset CSV written by `simulate`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    k: usize,
    /// Inferred from the CSV header when absent.
    #[arg(long, value_enum)]
    domain: Option<Domain>,
}

#[derive(Args, Debug)]
struct W2sArgs {
    #[arg(long)]
    strategy: String,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    n_q: Option<usize>,
    /// Fitted components; the system's K by default.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 4000)]
    mc_points: usize,
}

#[derive(Subcommand, Debug)]
enum HmmCommand {
    /// Anchor-word, cycle-witness and independence checks.
    Check {
        /// Query length for the independence certificate (overrides the file).
        #[arg(long)]
        max_seq_len: Option<usize>,
    },
}

#[derive(Subcommand, Debug)]
enum RefineCommand {
    /// Print q̂(k|x), q(k|x) and the WLI bound along a grid.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
struct InspectArgs {
    /// Concept whose weak labels are fed to the model.
    #[arg(long, default_value_t = 0)]
    k_star: usize,
    #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
    lo: f64,
    #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
    hi: f64,
    #[arg(long, default_value_t = 13)]
    points: usize,
    /// Coordinate varied along the grid.
    #[arg(long, default_value_t = 0)]
    axis: usize,
    /// Fixed values of the other coordinates (comma separated); zeros by default.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    base: Option<Vec<f64>>,
    /// In-context demonstrations; single-label refinement when absent.
    #[arg(long)]
    icl: Option<usize>,
    /// WLI constant; calibrated on the grid when absent.
    #[arg(long)]
    c: Option<f64>,
}

fn load_system(path: Option<&Path>) -> Result<LatentConceptSystem> {
    match path {
        None => Ok(canonical_benchmark()),
        Some(p) if p.as_os_str() == BUILTIN_CANONICAL => Ok(canonical_benchmark()),
        Some(p) => LatentConceptSystem::load(p),
    }
}

fn need<'a>(p: Option<&'a PathBuf>, what: &str) -> Result<&'a PathBuf> {
    p.ok_or_else(|| Error::Config(format!("--config is required: {what}")))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(f, value).map_err(|e| Error::Io(e.into()))
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<()> {
    let system = load_system(cli.config.as_deref())?;
    let seed = cli.seed.unwrap_or(0);
    let source = sample_source(&system, a.n, derive(seed, 1))?;
    let target = sample_target(&system, a.n_q.unwrap_or(a.n), derive(seed, 2))?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out)?;
    source.write_csv(BufWriter::new(File::create(out.join("source.csv"))?))?;
    target.write_csv(BufWriter::new(File::create(out.join("target.csv"))?))?;
    fs::write(out.join("system.toml"), system.to_toml_string())?;
    for w in system.warnings() {
        eprintln!("warning: {w}");
    }
    println!("wrote {} source and {} target records to {}", source.len(), target.len(), out.display());
    Ok(())
}

fn fit(cli: &Cli, a: &FitArgs) -> Result<()> {
    let mut em = match &cli.config {
        Some(p) => toml::from_str::<EmConfig>(&fs::read_to_string(p)?).map_err(|e| Error::Config(e.to_string()))?,
        None => EmConfig::default(),
    };
    if let Some(s) = cli.seed {
        em.seed = s;
    }
    let domain = match a.domain {
        Some(d) => d,
        None => {
            let text = fs::read_to_string(&a.data)?;
            let header = text.lines().next().unwrap_or("");
            if header.split(',').any(|h| h == "y") {
                Domain::Source
            } else {
                Domain::Target
            }
        }
    };
    let reader = || -> Result<BufReader<File>> { Ok(BufReader::new(File::open(&a.data)?)) };
    let fit = match domain {
        Domain::Source => fit_source_mle(&SourceDataset::read_csv(reader()?)?, a.k, &em)?,
        Domain::Target => fit_target_mle(&TargetDataset::read_csv(reader()?)?, a.k, &em, None)?,
    };
    println!("loglik {:.6}  iterations {}  converged {}", fit.loglik, fit.n_iters, fit.converged);
    println!("pi {:?}", fit.pi);
    if let Some(s) = &fit.strong {
        println!("strong {s:?}");
    }
    if let Some(w) = &fit.weak {
        println!("weak {w:?}");
    }
    println!("sigma {:.6}", fit.sigma);
    if let Some(out) = &cli.out {
        fs::create_dir_all(out)?;
        write_json(&out.join("fit.json"), &fit)?;
    }
    Ok(())
}

fn w2s(cli: &Cli, a: &W2sArgs) -> Result<()> {
    let system = load_system(cli.config.as_deref())?;
    let strategy: Strategy = a.strategy.parse()?;
    let settings = RunSettings {
        k: a.k.unwrap_or(system.k()),
        lambda: a.lambda,
        em: EmConfig::default(),
        mc_points: a.mc_points,
        metrics: vec![w2s_core::harness::Metric::L2q, w2s_core::harness::Metric::ParamError],
    };
    if settings.mc_points < 100 {
        return Err(Error::Config("mc_points must be at least 100".into()));
    }
    let seed = cli.seed.unwrap_or(0);
    let row = try_run_strategy(&system, strategy, (a.n, a.n_q.unwrap_or(a.n)), seed, &settings)?;
    let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
    println!("strategy {}  n_p {}  n_q {}  seed {}", row.strategy, row.n_p, row.n_q, row.seed);
    println!(
        "l2q_error {} (se {})  param_error {}  assignment_correct {}",
        show(row.l2q_error),
        show(row.l2q_se),
        show(row.param_error),
        row.assignment_correct.map_or("-".to_string(), |b| b.to_string())
    );
    if let Some(out) = &cli.out {
        fs::create_dir_all(out)?;
        write_json(&out.join("w2s.json"), &row)?;
    }
    Ok(())
}

fn sweep(cli: &Cli) -> Result<()> {
    let mut cfg = ExperimentConfig::load(need(cli.config.as_ref(), "sweep config")?)?;
    if let Some(s) = cli.seed {
        cfg.base_seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if cli.jobs.is_some() {
        cfg.jobs = cli.jobs;
    }
    let report = run_experiment(&cfg)?;
    let failed = report.rows.iter().filter(|r| r.reason.is_some()).count();
    println!("{} rows ({failed} failed) written to {}", report.rows.len(), cfg.out_dir.display());
    for s in &report.slopes {
        if let Some(v) = s.slope {
            let se = s.slope_se.map_or(String::new(), |e| format!(" ± {e:.3}"));
            println!("{:<11} {:<12} slope {v:.3}{se}", s.strategy.name(), s.metric);
        }
    }
    Ok(())
}

fn hmm_check(cli: &Cli, max_seq_len: Option<usize>) -> Result<()> {
    let file = HmmFile::load(need(cli.config.as_ref(), "HMM file")?)?;
    let mixes = file.mixtures()?;
    let mut text = String::new();
    for (name, mix) in &mixes {
        let x = w2s_core::hmm::anchor_word_check(mix.emission_x());
        let y = w2s_core::hmm::anchor_word_check(mix.emission_y());
        text.push_str(&format!("{name}: K={} |H|={} |O|={}\n", mix.k(), mix.n_states(), mix.n_tokens()));
        text.push_str(&format!("  query emission anchors: {x}\n  label emission anchors: {y}\n"));
        for i in 0..mix.k() {
            for j in 0..mix.k() {
                if i == j {
                    continue;
                }
                let (a, b) = (&mix.components()[i], &mix.components()[j]);
                match cycle_witness(a, b, mix.n_states())? {
                    Some(c) => text.push_str(&format!("  cycle witness {i} vs {j}: {c}\n")),
                    None => text.push_str(&format!("  cycle witness {i} vs {j}: none\n")),
                }
            }
        }
    }
    let len = max_seq_len.or(file.max_seq_len).unwrap_or(4);
    let all: Vec<_> = mixes.iter().map(|m| m.1.clone()).collect();
    let cert = independence_certificate(&all, len)?;
    text.push_str(&cert.to_text());
    print!("{text}");
    if let Some(out) = &cli.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("hmm_check.txt"), &text)?;
        fs::write(out.join("singular_values.csv"), cert.singular_values_csv())?;
    }
    Ok(())
}

fn refine_inspect(cli: &Cli, a: &InspectArgs) -> Result<()> {
    let system = load_system(cli.config.as_deref())?;
    let d = system.x_dim();
    if a.axis >= d {
        return Err(Error::Config(format!("axis {} out of range for dimension {d}", a.axis)));
    }
    if a.k_star >= system.k() {
        return Err(Error::Config(format!("k* = {} out of range", a.k_star)));
    }
    if a.points < 2 || !(a.lo < a.hi) {
        return Err(Error::Config("grid needs lo < hi and at least two points".into()));
    }
    let base = a.base.clone().unwrap_or_else(|| vec![0.0; d]);
    if base.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: base.len() });
    }
    let quad = QuadratureConfig { seed: cli.seed.unwrap_or(0), ..QuadratureConfig::default() };
    let mode = match a.icl {
        Some(m) => RefinementMode::Icl { m },
        None => RefinementMode::SingleLabel,
    };
    let mut xs = Vec::with_capacity(a.points * d);
    for t in linspace(a.lo, a.hi, a.points) {
        let mut x = base.clone();
        x[a.axis] = t;
        xs.extend(x);
    }
    let others: Vec<usize> = (0..system.k()).filter(|&k| k != a.k_star).collect();
    let cs: Vec<f64> = match a.c {
        Some(c) => vec![c; others.len()],
        None => {
            others.iter().map(|&k| calibrate_wli_constant(&system, &xs, k, a.k_star, &quad)).collect::<Result<_>>()?
        }
    };
    for (k, c) in others.iter().zip(&cs) {
        println!("c[{k}] = {c:.6}");
    }
    let mut csv = String::from("x");
    for k in 0..system.k() {
        csv.push_str(&format!(",q_hat_{k},q_{k}"));
    }
    for k in &others {
        csv.push_str(&format!(",p_{k},qhat_given_kstar_{k},wli_bound_{k}"));
    }
    csv.push('\n');
    println!("{}", csv.trim_end().replace(',', "\t"));
    for x in xs.chunks_exact(d) {
        let post = refinement_posterior(&system, x, mode, &quad)?;
        let mut line = format!("{}", x[a.axis]);
        for k in 0..system.k() {
            line.push_str(&format!(",{:.6},{:.6}", post.q_hat[k], post.target_gate[k]));
        }
        for (k, c) in others.iter().zip(&cs) {
            let w = wli_bound(&system, x, *k, a.k_star, if c.is_finite() { *c } else { 1.0 }, &quad)?;
            let bound = if c.is_finite() { w.bound } else { 0.0 };
            line.push_str(&format!(",{:.6},{:.6e},{:.6e}", w.source_gate, w.q_hat, bound));
        }
        println!("{}", line.replace(',', "\t"));
        csv.push_str(&line);
        csv.push('\n');
    }
    if let Some(out) = &cli.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("refine_inspect.csv"), csv)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if cli.jobs == Some(0) {
        return Err(Error::Config("--jobs must be positive".into()));
    }
    if let (Some(j), false) = (cli.jobs, matches!(cli.command, Command::Sweep)) {
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global().map_err(|e| Error::Config(e.to_string()))?;
    }
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::Fit(a) => fit(cli, a),
        Command::W2s(a) => w2s(cli, a),
        Command::Sweep => sweep(cli),
        Command::Hmm { command: HmmCommand::Check { max_seq_len } } => hmm_check(cli, *max_seq_len),
        Command::Refine { command: RefineCommand::Inspect(a) } => refine_inspect(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
