use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vfmax_core::badness::{badness_table, shrink_iterate};
use vfmax_core::experiments::{run_sweep, ExperimentConfig, SweepKind};
use vfmax_core::family::{enumerate_family, FamilyParams, WindowRule};
use vfmax_core::instances::{cascade_field, make_kakeya_instance_with_depth, random_field, random_function};
use vfmax_core::maximal::{linearize, maximal_apply};
use vfmax_core::stopping::{check_decomposition, run_generations, DEFAULT_MAX_GENERATIONS};
use vfmax_core::verify::{standard_corpus, verify, LAMBDA0};
use vfmax_core::{CellSet, DyadicRational, Error, GridFunction, GridSpec, OneVarField};

#[derive(Parser)]
#[command(name = "vfmax", version, about = "Exact directional maximal operators along one-variable vector fields")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Grid exponent: the grid has 2^m x 2^m cells.
    #[arg(long, global = true)]
    m: Option<String>,
    /// Width exponent: w = 2^-mw.
    #[arg(long, global = true)]
    mw: Option<String>,
    /// Density, or a comma-separated list for sweeps.
    #[arg(long, global = true)]
    delta: Option<String>,
    /// Badness threshold for the shrinking lemma (default 2)
    #[arg(long, global = true)]
    lambda0: Option<String>,
    /// Offset step: `w` or `w2`.
    #[arg(long, global = true)]
    offstep: Option<String>,
    /// Seed for random fields and test functions
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Output file, or the reproducer directory for `verify`
    #[arg(long, global = true)]
    out: Option<String>,
    /// Plain-text `key = value` file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FieldArg {
    Identity,
    Constant,
    Random,
    Cascade,
}

#[derive(Args)]
struct Instance {
    /// Field used when no field file is given.
    #[arg(long, value_enum, default_value = "random")]
    field: FieldArg,
    /// Field in MAXGRID format.
    #[arg(long)]
    field_file: Option<PathBuf>,
    /// Input function in MAXGRID format; a seeded random function otherwise.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate the dense family and print its statistics.
    Enumerate(Instance),
    /// Apply the maximal operator to a grid function.
    Maximal(Instance),
    /// Run the stopping-time decomposition and emit it as JSON.
    Decompose(Instance),
    /// Badness table and shrinking trace.
    Badness(Instance),
    /// Parameter sweep.
    Sweep {
        #[arg(value_parser = ["delta", "logN", "lp"])]
        kind: String,
    },
    /// Emit a Kakeya instance.
    Kakeya {
        /// Keich depth; defaults to log2(1/delta).
        #[arg(long)]
        depth: Option<u32>,
    },
    /// Run the invariant and oracle suite on the shipped corpus.
    Verify,
}

enum Failure {
    Usage(String),
    Invariant(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(Error::Parse(_) | Error::InvalidArgument(_) | Error::DyadicDeltaRequired) => Failure::Usage(format!("{e:#}")),
            _ => Failure::Runtime(e),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn config(common: &Common) -> Outcome<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    let flags = [
        ("m", &common.m),
        ("mw", &common.mw),
        ("delta", &common.delta),
        ("lambda0", &common.lambda0),
        ("offstep", &common.offstep),
        ("seed", &common.seed),
        ("out", &common.out),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

fn single_delta(cfg: &ExperimentConfig) -> Outcome<DyadicRational> {
    match cfg.deltas.as_slice() {
        [d] => Ok(*d),
        _ if cfg.deltas == ExperimentConfig::default().deltas => Ok(DyadicRational::new(1, 1)),
        _ => Err(Failure::Usage("this command takes a single --delta".into())),
    }
}

fn spec_of(cfg: &ExperimentConfig) -> Outcome<GridSpec> {
    let m = cfg.m.unwrap_or(5);
    let mw = cfg.mw.unwrap_or(m.saturating_sub(2));
    Ok(GridSpec::new(m, mw, cfg.offstep)?)
}

fn load_field(cfg: &ExperimentConfig, inst: &Instance) -> Outcome<OneVarField> {
    if let Some(path) = &inst.field_file {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(OneVarField::from_maxgrid(&text)?);
    }
    let spec = spec_of(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(match inst.field {
        FieldArg::Identity => OneVarField::identity(spec),
        FieldArg::Constant => OneVarField::constant(spec, DyadicRational::new(1, 2))?,
        FieldArg::Random => random_field(spec, &mut rng),
        FieldArg::Cascade => cascade_field(spec, spec.m() - 1),
    })
}

fn load_input(cfg: &ExperimentConfig, inst: &Instance, spec: GridSpec) -> Outcome<GridFunction> {
    match &inst.input {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let f = GridFunction::from_maxgrid(&text)?;
            if f.spec() != spec {
                return Err(Failure::Usage("input grid does not match the field".into()));
            }
            Ok(f)
        }
        None => Ok(random_function(spec, &mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1)))),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Outcome<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => write_stdout(text)?,
    }
    Ok(())
}

/// Writes to stdout; a closed pipe ends output quietly.
fn write_stdout(text: &str) -> Outcome<()> {
    let mut stdout = std::io::stdout().lock();
    match stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::Runtime(e.into())),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> Outcome<()> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.into()))?;
    }
    let cfg = config(&cli.common)?;
    let out = cfg.out.as_deref();
    match cli.command {
        Command::Enumerate(inst) => {
            let v = load_field(&cfg, &inst)?;
            let fam = enumerate_family(&FamilyParams::new(v.spec(), single_delta(&cfg)?)?, &v)?;
            let mut stats = format!("members = {}\n", fam.len());
            for k in 0..=v.spec().mw() {
                let n = fam.members().iter().filter(|r| r.k == k).count();
                stats.push_str(&format!("k{k} = {n}\n"));
            }
            match out {
                Some(_) => {
                    eprint!("{stats}");
                    emit(out, &fam.export())
                }
                None => emit(None, &stats),
            }
        }
        Command::Maximal(inst) => {
            let v = load_field(&cfg, &inst)?;
            let f = load_input(&cfg, &inst, v.spec())?;
            let fam = enumerate_family(&FamilyParams::new(v.spec(), single_delta(&cfg)?)?, &v)?;
            emit(out, &maximal_apply(&f, &fam)?.to_maxgrid())
        }
        Command::Decompose(inst) => {
            let v = load_field(&cfg, &inst)?;
            let f = load_input(&cfg, &inst, v.spec())?;
            let fam = enumerate_family(&FamilyParams::new(v.spec(), single_delta(&cfg)?)?, &v)?;
            let rho = linearize(&f, &fam)?;
            let d = run_generations(&fam, &v, &rho, DEFAULT_MAX_GENERATIONS, WindowRule::Cell)?;
            let json = serde_json::to_string_pretty(&d.to_json()).map_err(|e| Failure::Runtime(e.into()))?;
            emit(out, &(json + "\n"))?;
            let violations = check_decomposition(&fam, &rho, &d);
            for v in &violations {
                eprintln!("violation {}: {}", v.check, v.detail);
            }
            if violations.is_empty() {
                Ok(())
            } else {
                Err(Failure::Invariant(format!("{} violations", violations.len())))
            }
        }
        Command::Badness(inst) => {
            let v = load_field(&cfg, &inst)?;
            let f = load_input(&cfg, &inst, v.spec())?;
            let fam = enumerate_family(&FamilyParams::new(v.spec(), single_delta(&cfg)?)?, &v)?;
            let rho = linearize(&f, &fam)?;
            let e = CellSet::full(v.spec()).difference(&rho.uncovered());
            let lambda0 = cfg.lambda0.unwrap_or(DyadicRational::from_int(LAMBDA0));
            let table = badness_table(&e, &rho, &fam)?;
            let trace = shrink_iterate(&e, &rho, &fam, lambda0, 32)?;
            let mut text = String::from("k,base,slope,offset,nu,b\n");
            for ((r, nu), b) in fam.members().iter().zip(&table.nu).zip(&table.b) {
                text.push_str(&format!("{},{},{},{},{},{}\n", r.k, r.base, r.slope, r.offset, nu, b));
            }
            text.push('\n');
            text.push_str(&trace.csv());
            text.push('\n');
            text.push_str(&trace.bands_csv());
            emit(out, &text)?;
            let halving = trace.steps.iter().all(|s| s.halving_holds()) && trace.halving_chain_holds();
            let failures: usize = trace.steps.iter().map(|s| s.failures.len()).sum();
            if halving && failures == 0 {
                Ok(())
            } else {
                Err(Failure::Invariant(format!("halving {halving}, dichotomy failures {failures}")))
            }
        }
        Command::Sweep { kind } => {
            let kind: SweepKind = kind.parse()?;
            let report = run_sweep(kind, &cfg)?;
            eprint!("{}", report.summary());
            emit(out, &report.csv())
        }
        Command::Kakeya { depth } => {
            let delta = single_delta(&cfg)?;
            let n = vfmax_core::instances::delta_depth(delta)?;
            let m = cfg.m.unwrap_or(n + 3);
            let inst = make_kakeya_instance_with_depth(m, delta, depth.unwrap_or(n))?;
            let meta = serde_json::to_string(&inst.meta).map_err(|e| Failure::Runtime(e.into()))?;
            let text = format!("# {meta}\n# field\n{}# function\n{}", inst.field.to_maxgrid(), inst.f.to_maxgrid());
            emit(out, &text)
        }
        Command::Verify => {
            let lambda0 = cfg.lambda0.unwrap_or(DyadicRational::from_int(LAMBDA0));
            let corpus = standard_corpus();
            let report = verify(&corpus, cfg.m, lambda0)?;
            write_stdout(&report.text())?;
            let failing = report.failing_instances();
            if failing.is_empty() {
                return Ok(());
            }
            let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("repro"));
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            for id in &failing {
                let inst = corpus.iter().find(|c| c.id == *id).expect("instance from corpus");
                let path = dir.join(format!("{id}.txt"));
                fs::write(&path, inst.reproducer()).with_context(|| format!("writing {}", path.display()))?;
                eprintln!("reproducer: {}", path.display());
            }
            Err(Failure::Invariant(format!("{} instances fail", failing.len())))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `vfmax --help` for usage");
            ExitCode::from(2)
        }
        Err(Failure::Invariant(msg)) => {
            eprintln!("invariant failure: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
