use std::error::Error;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use looped_mlp::asm::{assemble_and_resolve, corpus, disassemble, LoadedProgram};
use looped_mlp::difftest::{
    evaluate, network_for, run_plan, CaseInput, ProgramCheck, Suite, TestPlan, DEFAULT_SEED,
};
use looped_mlp::emulator::{core_for, Backend, Emulator};
use looped_mlp::ir::{export_weights, layer_report, lower_gates_with_report, LayerReport};
use looped_mlp::machine::{
    budgeted_constructions, build_subleq_core, MachineConfig, DEFAULT_MAX_ITERS,
};
use looped_mlp::trace::{first_divergence, write_jsonl, TraceRecord};

const EXIT_DIAGNOSTIC: u8 = 1;
const EXIT_MISMATCH: u8 = 2;

/// Emulate SUBLEQ programs with a looped ReLU network.
#[derive(Parser)]
#[command(name = "looped-mlp", version)]
struct Cli {
    #[command(flatten)]
    machine: MachineArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct MachineArgs {
    /// Address width in bits.
    #[arg(long, global = true, default_value_t = 6)]
    w: usize,
    /// Word width in bits.
    #[arg(long, global = true, default_value_t = 8)]
    d: usize,
    /// Data slots.
    #[arg(long, global = true, default_value_t = 32)]
    k: usize,
    /// Instruction slots.
    #[arg(long, global = true, default_value_t = 16)]
    m: usize,
    #[arg(long, global = true, default_value_t = DEFAULT_MAX_ITERS)]
    max_iters: u64,
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

impl MachineArgs {
    fn config(&self) -> Result<MachineConfig, Box<dyn Error>> {
        Ok(MachineConfig::new(self.w, self.d, self.k, self.m)?)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Mlp,
    MlpLowered,
    Oracle,
    /// The network and the oracle side by side.
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Export the SUBLEQ core weights as JSON.
    Build {
        /// Lower gates to plain ReLU layers first.
        #[arg(long)]
        lowered: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Assemble a program and print its memory image (or a listing).
    Asm {
        file: PathBuf,
        #[arg(long)]
        listing: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run a program and print the final status and data.
    Run {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = BackendArg::Mlp)]
        backend: BackendArg,
        /// Write the per-iteration trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run programs (default: the built-in corpus) on a network backend and
    /// the oracle; report the first trace divergence.
    Diff {
        files: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = NetworkArg::Mlp)]
        backend: NetworkArg,
    },
    /// Run the differential test suites; writes a JSON-lines report.
    Verify {
        #[arg(long = "suite", value_enum)]
        suites: Vec<SuiteArg>,
        /// Random single-step cases.
        #[arg(long)]
        samples: Option<usize>,
        /// Small sample counts and d = 4 only.
        #[arg(long)]
        quick: bool,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Counted layers per stage against the budget.
    Layers {
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NetworkArg {
    Mlp,
    MlpLowered,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Lemmas,
    Step,
    Corpus,
    Lowering,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Lemmas => Suite::Lemmas,
            SuiteArg::Step => Suite::Step,
            SuiteArg::Corpus => Suite::Corpus,
            SuiteArg::Lowering => Suite::Lowering,
        }
    }
}

fn main() -> ExitCode {
    // Usage errors are diagnostics (1); clap's own default would be 2.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_DIAGNOSTIC } else { 0 });
        }
    };
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_DIAGNOSTIC)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8, Box<dyn Error>> {
    let args = cli.machine;
    match &cli.command {
        Command::Build { lowered, output } => build(&args, *lowered, output.as_deref()),
        Command::Asm {
            file,
            listing,
            output,
        } => asm(&args, file, *listing, output.as_deref()),
        Command::Run {
            file,
            backend,
            trace,
        } => run(&args, file, *backend, trace.as_deref()),
        Command::Diff { files, backend } => diff(&args, files, *backend == NetworkArg::MlpLowered),
        Command::Verify {
            suites,
            samples,
            quick,
            report,
        } => verify(&args, suites, *samples, *quick, report.as_deref()),
        Command::Layers { json } => layers(&args, *json),
    }
}

fn emit(output: Option<&Path>, bytes: &[u8]) -> Result<(), Box<dyn Error>> {
    match output {
        Some(path) => fs::write(path, bytes)?,
        None => io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn load(args: &MachineArgs, file: &Path) -> Result<LoadedProgram, Box<dyn Error>> {
    let cfg = args.config()?;
    let text = fs::read_to_string(file).map_err(|e| format!("{}: {e}", file.display()))?;
    assemble_and_resolve(&text, &cfg).map_err(|e| format!("{}: {e}", file.display()).into())
}

fn build(args: &MachineArgs, lowered: bool, output: Option<&Path>) -> Result<u8, Box<dyn Error>> {
    let backend = if lowered {
        Backend::MlpLowered
    } else {
        Backend::Mlp
    };
    let core = core_for(&args.config()?, backend)?.expect("network backend");
    emit(output, &export_weights(&core))?;
    Ok(0)
}

fn asm(
    args: &MachineArgs,
    file: &Path,
    listing: bool,
    output: Option<&Path>,
) -> Result<u8, Box<dyn Error>> {
    let p = load(args, file)?;
    let text = if listing {
        disassemble(&p)
    } else {
        let symbols: serde_json::Map<String, Value> = p
            .symbols
            .iter()
            .map(|(n, s)| (n.clone(), json!(s)))
            .collect();
        let labels: serde_json::Map<String, Value> = p
            .labels
            .iter()
            .map(|(n, s)| (n.clone(), json!(s)))
            .collect();
        let v = json!({ "image": p.image()?, "symbols": symbols, "labels": labels });
        format!("{}\n", serde_json::to_string_pretty(&v)?)
    };
    emit(output, text.as_bytes())?;
    Ok(0)
}

struct Outcome {
    summary: Value,
    trace: Vec<TraceRecord>,
}

fn run_backend(
    args: &MachineArgs,
    p: &LoadedProgram,
    backend: Backend,
) -> Result<Outcome, Box<dyn Error>> {
    let mut emu = Emulator::new(&p.image()?, backend)?;
    let (status, trace) = emu.run(args.max_iters)?;
    let data: serde_json::Map<String, Value> = p
        .symbols
        .iter()
        .map(|(name, slot)| Ok((name.clone(), json!(emu.word(*slot)?))))
        .collect::<Result<_, Box<dyn Error>>>()?;
    let summary = json!({
        "backend": backend,
        "status": status,
        "iterations": trace.len(),
        "pc": emu.pc()?,
        "data": data,
    });
    Ok(Outcome { summary, trace })
}

fn write_trace(path: &Path, trace: &[TraceRecord]) -> Result<(), Box<dyn Error>> {
    write_jsonl(io::BufWriter::new(fs::File::create(path)?), trace)?;
    Ok(())
}

fn run(
    args: &MachineArgs,
    file: &Path,
    backend: BackendArg,
    trace: Option<&Path>,
) -> Result<u8, Box<dyn Error>> {
    let p = load(args, file)?;
    let single = match backend {
        BackendArg::Mlp => Some(Backend::Mlp),
        BackendArg::MlpLowered => Some(Backend::MlpLowered),
        BackendArg::Oracle => Some(Backend::Oracle),
        BackendArg::Both => None,
    };
    if let Some(b) = single {
        let out = run_backend(args, &p, b)?;
        if let Some(path) = trace {
            write_trace(path, &out.trace)?;
        }
        println!("{}", out.summary);
        return Ok(0);
    }
    let net = run_backend(args, &p, Backend::Mlp)?;
    let oracle = run_backend(args, &p, Backend::Oracle)?;
    if let Some(path) = trace {
        write_trace(path, &net.trace)?;
    }
    let divergence = first_divergence(&oracle.trace, &net.trace);
    let agree = divergence.is_none() && net.summary["data"] == oracle.summary["data"];
    println!("{}", net.summary);
    println!("{}", oracle.summary);
    println!(
        "{}",
        json!({ "agree": agree, "first_divergence": divergence })
    );
    Ok(if agree { 0 } else { EXIT_MISMATCH })
}

fn verify(
    args: &MachineArgs,
    suites: &[SuiteArg],
    samples: Option<usize>,
    quick: bool,
    report: Option<&Path>,
) -> Result<u8, Box<dyn Error>> {
    let mut plan = if quick {
        TestPlan::quick()
    } else {
        TestPlan::default()
    };
    if !suites.is_empty() {
        plan.suites = suites.iter().map(|&s| s.into()).collect();
    }
    if let Some(n) = samples {
        plan.samples = n;
    }
    plan.seed = args.seed;
    plan.corpus_config = args.config()?;
    plan.max_iters = args.max_iters;
    let result = run_plan(&plan)?;
    emit(report, result.to_jsonl().as_bytes())?;
    for c in &result.checks {
        eprintln!(
            "{:<4} {:<9} {:<20} {:>6} cases {:>4} failures",
            if c.passed() { "PASS" } else { "FAIL" },
            c.suite,
            c.check,
            c.cases,
            c.failures
        );
    }
    Ok(if result.passed() { 0 } else { EXIT_MISMATCH })
}

fn diff(args: &MachineArgs, files: &[PathBuf], lowered: bool) -> Result<u8, Box<dyn Error>> {
    let config = args.config()?;
    let programs: Vec<(String, String)> = if files.is_empty() {
        corpus()
            .into_iter()
            .map(|e| (e.name.to_string(), e.source.to_string()))
            .collect()
    } else {
        files
            .iter()
            .map(|f| {
                Ok((
                    f.display().to_string(),
                    fs::read_to_string(f).map_err(|e| format!("{}: {e}", f.display()))?,
                ))
            })
            .collect::<Result<_, Box<dyn Error>>>()?
    };
    let mut ok = true;
    let mut network = None;
    for (name, source) in programs {
        let input = CaseInput::Program {
            program: name.clone(),
            source,
            config,
            lowered,
            max_iters: args.max_iters,
            check: ProgramCheck::Trace,
        };
        if network.is_none() {
            network = Some(network_for(&input)?);
        }
        let mismatch = evaluate(&input, network.as_ref().expect("built above"))?;
        ok &= mismatch.is_none();
        let line = json!({
            "program": name,
            "backend": if lowered { Backend::MlpLowered } else { Backend::Mlp },
            "agree": mismatch.is_none(),
            "first_divergence": mismatch.as_ref().and_then(|m| m.first_divergence),
            "mismatch": mismatch,
        });
        println!("{line}");
    }
    Ok(if ok { 0 } else { EXIT_MISMATCH })
}

fn layers(args: &MachineArgs, as_json: bool) -> Result<u8, Box<dyn Error>> {
    let cfg = args.config()?;
    let constructions: Vec<LayerReport> = budgeted_constructions(&cfg)
        .iter()
        .map(layer_report)
        .collect();
    let core = constructions.last().expect("core is listed last");
    let (_, lowering) = lower_gates_with_report(&build_subleq_core(&cfg))?;
    let entry = |r: &LayerReport| json!({ "name": r.name, "counted": r.counted, "budget": r.declared, "delta": r.delta() });
    if as_json {
        let v = json!({
            "constructions": constructions.iter().map(entry).collect::<Vec<_>>(),
            "core_stages": core.children.iter().map(entry).collect::<Vec<_>>(),
            "lowered_core": lowering.layers_after,
            "gates_lowered": lowering.gates_lowered,
        });
        println!("{v}");
        return Ok(0);
    }
    let row = |r: &LayerReport| {
        let budget = r.declared.map_or("-".to_string(), |b| b.to_string());
        let delta = r.delta().map_or("-".to_string(), |d| format!("{d:+}"));
        println!("{:<16} {:>7} {:>6} {:>6}", r.name, r.counted, budget, delta);
    };
    println!(
        "{:<16} {:>7} {:>6} {:>6}",
        "construction", "counted", "budget", "delta"
    );
    constructions.iter().for_each(row);
    println!();
    println!(
        "{:<16} {:>7} {:>6} {:>6}",
        "core stage", "counted", "budget", "delta"
    );
    core.children.iter().for_each(row);
    println!();
    println!(
        "lowered core: {} counted layers ({} gates lowered)",
        lowering.layers_after, lowering.gates_lowered
    );
    Ok(0)
}
