//! Differential testing of every construction against its reference
//! semantics: lemma circuits against host-side bit arithmetic, the full
//! step against the oracle, whole programs trace by trace, and all of it
//! again with gates lowered to plain ReLU layers.
//!
//! Cases are generated from `(seed, check name, case index)` alone, so a run
//! is reproducible regardless of thread count, and every discrepancy carries
//! its complete input for [`replay`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::asm::{assemble_and_resolve, corpus, AsmError};
use crate::circuits::{
    build_add_word, build_cond_branch, build_full_adder, build_leq_zero_flag, build_read_one_bit,
    build_read_word, build_sub_word, build_write_one_bit, build_write_word, CircuitError,
    CircuitParams, StateLayout,
};
use crate::emulator::{core_for, Backend, Emulator, EmulatorError};
use crate::encoding::{address_capacity, word_range, EncodingError};
use crate::ir::{execute, lower_gates, Cell, IrError, TensorProgram};
use crate::machine::{
    step_at, HaltStatus, Instruction, MachineConfig, MachineError, MachineState, MemoryImage,
};
use crate::oracle::{oracle_step, wrap, OracleFault, OracleState};
use crate::trace::first_divergence;

pub const DEFAULT_SEED: u64 = 0x5eed_2024;

/// Discrepancies kept per check; the failure count is always exact.
pub const MAX_RECORDED: usize = 64;

/// Iterations checked for bit-identity after the settle step.
pub const FIXED_POINT_ITERS: usize = 10;

pub const CIRCUITS: [&str; 9] = [
    "read_one_bit",
    "read_word",
    "write_one_bit",
    "write_word",
    "full_adder",
    "add_word",
    "sub_word",
    "leq_zero_flag",
    "cond_branch",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiffError {
    #[error(transparent)]
    Machine(#[from] MachineError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error(transparent)]
    Oracle(#[from] OracleFault),
    #[error(transparent)]
    Emulator(#[from] EmulatorError),
    #[error("{0}")]
    Asm(#[from] AsmError),
    #[error("unknown circuit `{0}`")]
    UnknownCircuit(String),
    #[error("unknown suite `{0}` (expected lemmas, step, corpus or lowering)")]
    UnknownSuite(String),
    #[error("circuit `{circuit}`: input state is outside its precondition: {reason}")]
    Precondition { circuit: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Lemmas,
    Step,
    Corpus,
    /// Lemmas, step and corpus again with every gate lowered.
    Lowering,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Lemmas, Suite::Step, Suite::Corpus, Suite::Lowering];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Lemmas => "lemmas",
            Suite::Step => "step",
            Suite::Corpus => "corpus",
            Suite::Lowering => "lowering",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = DiffError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| DiffError::UnknownSuite(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPlan {
    pub suites: Vec<Suite>,
    pub seed: u64,
    /// Random surrounding states per address in the read/write checks.
    pub memories_per_address: usize,
    /// Random memories per operand triple in the exhaustive step grid.
    pub memories_per_triple: usize,
    /// Random single-step cases at `random_config`.
    pub samples: usize,
    /// Word widths whose add, subtract and flag circuits run exhaustively.
    pub exhaustive_widths: Vec<usize>,
    pub grid: MachineConfig,
    pub random_config: MachineConfig,
    pub corpus_config: MachineConfig,
    pub max_iters: u64,
}

impl Default for TestPlan {
    fn default() -> Self {
        TestPlan {
            suites: Suite::ALL.to_vec(),
            seed: DEFAULT_SEED,
            memories_per_address: 64,
            memories_per_triple: 32,
            samples: 10_000,
            exhaustive_widths: vec![4, 8],
            grid: MachineConfig {
                w: 3,
                d: 4,
                k: 4,
                m: 2,
            },
            random_config: MachineConfig {
                w: 4,
                d: 8,
                k: 8,
                m: 4,
            },
            corpus_config: MachineConfig::default(),
            max_iters: 10_000,
        }
    }
}

impl TestPlan {
    /// A small plan for smoke runs.
    pub fn quick() -> Self {
        TestPlan {
            memories_per_address: 4,
            memories_per_triple: 2,
            samples: 200,
            exhaustive_widths: vec![4],
            ..TestPlan::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProgramCheck {
    /// Network and oracle traces, final status and data agree.
    Trace,
    /// After halting and one settle step, the state is bit-identical for
    /// [`FIXED_POINT_ITERS`] further iterations.
    FixedPoint,
}

/// Everything needed to rerun one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CaseInput {
    Circuit {
        circuit: String,
        params: CircuitParams,
        lowered: bool,
        state: Vec<Cell>,
    },
    Step {
        image: MemoryImage,
        lowered: bool,
    },
    Program {
        program: String,
        source: String,
        config: MachineConfig,
        lowered: bool,
        max_iters: u64,
        check: ProgramCheck,
    },
}

impl CaseInput {
    pub fn lowered(&self) -> bool {
        match self {
            CaseInput::Circuit { lowered, .. }
            | CaseInput::Step { lowered, .. }
            | CaseInput::Program { lowered, .. } => *lowered,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub expected: Value,
    pub actual: Value,
    /// First differing cell (circuits) or trace index (programs).
    pub first_divergence: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub suite: Suite,
    pub check: String,
    pub case: usize,
    pub input: CaseInput,
    #[serde(flatten)]
    pub mismatch: Mismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub suite: Suite,
    pub check: String,
    pub cases: usize,
    pub failures: usize,
    pub discrepancies: Vec<Discrepancy>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub checks: Vec<CheckReport>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckReport::passed)
    }

    pub fn total_cases(&self) -> usize {
        self.checks.iter().map(|c| c.cases).sum()
    }

    pub fn total_failures(&self) -> usize {
        self.checks.iter().map(|c| c.failures).sum()
    }

    pub fn check(&self, suite: Suite, name: &str) -> Option<&CheckReport> {
        self.checks
            .iter()
            .find(|c| c.suite == suite && c.check == name)
    }

    /// One summary line per check, then its recorded discrepancies.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let line = json!({
                "type": "check",
                "suite": c.suite,
                "check": c.check,
                "cases": c.cases,
                "failures": c.failures,
                "passed": c.passed(),
            });
            out.push_str(&line.to_string());
            out.push('\n');
            for d in &c.discrepancies {
                let mut v = serde_json::to_value(d).expect("discrepancies serialize");
                v["type"] = json!("discrepancy");
                out.push_str(&v.to_string());
                out.push('\n');
            }
        }
        out
    }
}

pub fn build_circuit(name: &str, params: &CircuitParams) -> Result<TensorProgram, DiffError> {
    Ok(match name {
        "read_one_bit" => build_read_one_bit(params),
        "read_word" => build_read_word(params),
        "write_one_bit" => build_write_one_bit(params),
        "write_word" => build_write_word(params),
        "full_adder" => build_full_adder(params),
        "add_word" => build_add_word(params),
        "sub_word" => build_sub_word(params),
        "leq_zero_flag" => build_leq_zero_flag(params),
        "cond_branch" => build_cond_branch(params),
        _ => return Err(DiffError::UnknownCircuit(name.to_string())),
    })
}

fn bit(set: bool) -> Cell {
    if set {
        1
    } else {
        -1
    }
}

/// The state a circuit must produce from `state`, computed on host integers.
pub fn circuit_reference(
    name: &str,
    layout: &StateLayout,
    state: &[Cell],
) -> Result<Vec<Cell>, DiffError> {
    let l = layout;
    let precondition = |reason: String| DiffError::Precondition {
        circuit: name.to_string(),
        reason,
    };
    let data_slot = |start: usize| -> Result<usize, DiffError> {
        let slot = l.address(state, start, 0)?;
        if slot >= l.data_slots {
            return Err(precondition(format!("address {slot} is not a data slot")));
        }
        Ok(slot)
    };
    let mut out = state.to_vec();
    let d1 = l.row_cells(StateLayout::R_D1);
    let c0 = l.cell(StateLayout::R_C, 0);
    match name {
        "read_one_bit" => {
            let row = l.data_row(data_slot(l.r_a1())?);
            out[d1.start] = state[l.cell(row, 0)];
        }
        "read_word" => {
            let row = l.data_row(data_slot(l.r_a1())?);
            out[d1].copy_from_slice(&state[l.row_cells(row)]);
        }
        "write_one_bit" => {
            let row = l.data_row(data_slot(l.r_a2())?);
            out[l.cell(row, 0)] = state[d1.start];
        }
        "write_word" => {
            let row = l.data_row(data_slot(l.r_a2())?);
            out[l.row_cells(row)].copy_from_slice(&state[d1]);
        }
        "full_adder" => {
            let a = (state[d1.start] == 1) as u8;
            let b = (state[l.cell(StateLayout::R_D2, 0)] == 1) as u8;
            let c = (state[c0] == 1) as u8;
            let total = a + b + c;
            out[d1.start] = bit(total & 1 == 1);
            out[c0] = bit(total >= 2);
        }
        "add_word" | "sub_word" => {
            let d = l.d;
            let mask = (1u128 << d) - 1;
            let x = l.word(state, StateLayout::R_D1)?;
            let y = l.word(state, StateLayout::R_D2)?;
            let ux = x as u128 & mask;
            let uy = y as u128 & mask;
            let (total, value) = if name == "add_word" {
                (ux + uy, wrap(x + y, d))
            } else {
                (ux + (!uy & mask) + 1, wrap(x - y, d))
            };
            l.set_word(&mut out, StateLayout::R_D1, value)?;
            out[c0] = bit(total >> d & 1 == 1);
        }
        "leq_zero_flag" => {
            out[c0] = bit(l.word(state, StateLayout::R_D1)? <= 0);
        }
        "cond_branch" => {
            let from = if state[c0] == 1 { l.r_a3() } else { l.r_a2() };
            for i in 0..l.w {
                let src = l.row_cells(from + i);
                let dst = l.row_cells(l.r_pc() + i).start;
                out.copy_within(src, dst);
            }
        }
        _ => return Err(DiffError::UnknownCircuit(name.to_string())),
    }
    Ok(out)
}

/// The network a case runs: the named circuit or the SUBLEQ core, lowered
/// when the case asks for it.
pub fn network_for(input: &CaseInput) -> Result<Arc<TensorProgram>, DiffError> {
    let (p, lowered) = match input {
        CaseInput::Circuit {
            circuit,
            params,
            lowered,
            ..
        } => (build_circuit(circuit, params)?, *lowered),
        CaseInput::Step { image, lowered } => {
            let backend = if *lowered {
                Backend::MlpLowered
            } else {
                Backend::Mlp
            };
            return Ok(core_for(&image.config, backend)?.expect("network backend"));
        }
        CaseInput::Program {
            config, lowered, ..
        } => {
            let backend = if *lowered {
                Backend::MlpLowered
            } else {
                Backend::Mlp
            };
            return Ok(core_for(config, backend)?.expect("network backend"));
        }
    };
    Ok(Arc::new(if lowered { lower_gates(&p)? } else { p }))
}

/// Runs one case on `network` (from [`network_for`]).
pub fn evaluate(
    input: &CaseInput,
    network: &Arc<TensorProgram>,
) -> Result<Option<Mismatch>, DiffError> {
    match input {
        CaseInput::Circuit {
            circuit,
            params,
            state,
            ..
        } => evaluate_circuit(circuit, params, state, network),
        CaseInput::Step { image, .. } => evaluate_step(image, network),
        CaseInput::Program {
            program,
            source,
            config,
            lowered,
            max_iters,
            check,
        } => {
            let backend = if *lowered {
                Backend::MlpLowered
            } else {
                Backend::Mlp
            };
            match check {
                ProgramCheck::Trace => {
                    evaluate_trace(program, source, config, backend, *max_iters, network)
                }
                ProgramCheck::FixedPoint => {
                    evaluate_fixed_point(source, config, backend, *max_iters, network)
                }
            }
        }
    }
}

/// Rebuilds the network and reruns a recorded case.
pub fn replay(input: &CaseInput) -> Result<Option<Mismatch>, DiffError> {
    evaluate(input, &network_for(input)?)
}

fn evaluate_circuit(
    circuit: &str,
    params: &CircuitParams,
    state: &[Cell],
    network: &TensorProgram,
) -> Result<Option<Mismatch>, DiffError> {
    let expected = circuit_reference(circuit, &params.layout(), state)?;
    Ok(match execute(network, state) {
        Ok(actual) if actual == expected => None,
        Ok(actual) => Some(Mismatch {
            first_divergence: expected.iter().zip(&actual).position(|(a, b)| a != b),
            expected: json!(expected),
            actual: json!(actual),
        }),
        Err(e) => Some(Mismatch {
            expected: json!(expected),
            actual: json!({ "error": e.to_string() }),
            first_divergence: None,
        }),
    })
}

fn evaluate_step(
    image: &MemoryImage,
    network: &TensorProgram,
) -> Result<Option<Mismatch>, DiffError> {
    let (next, record) = oracle_step(&OracleState::from_image(image)?, image, 1)?;
    let expected = json!({ "data": next.mem, "pc": next.pc, "flag": record.flag });
    let before = MachineState::from_image(image)?;
    let actual = match step_at(&before, network, 1) {
        Err(e) => json!({ "error": e.to_string() }),
        Ok(after) if after.code_cells() != before.code_cells() => {
            json!({ "error": "instruction region modified" })
        }
        Ok(after) => match (after.data(), after.pc(), after.flag()) {
            (Ok(data), Ok(pc), Ok(flag)) => json!({ "data": data, "pc": pc, "flag": flag }),
            (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => json!({ "error": e.to_string() }),
        },
    };
    Ok((expected != actual).then_some(Mismatch {
        expected,
        actual,
        first_divergence: None,
    }))
}

fn run_summary(status: HaltStatus, iterations: usize, data: &[i64]) -> Value {
    json!({ "status": status, "iterations": iterations, "data": data })
}

fn evaluate_trace(
    program: &str,
    source: &str,
    config: &MachineConfig,
    backend: Backend,
    max_iters: u64,
    network: &Arc<TensorProgram>,
) -> Result<Option<Mismatch>, DiffError> {
    let loaded = assemble_and_resolve(source, config)?;
    let image = loaded.image()?;
    let mut oracle = Emulator::new(&image, Backend::Oracle)?;
    let (status, otrace) = oracle.run(max_iters)?;
    let expected = run_summary(status, otrace.len(), &oracle.data()?);

    // The frozen sidecars were computed at the default configuration.
    if *config == MachineConfig::default() {
        if let Some(entry) = corpus().into_iter().find(|e| e.name == program) {
            let x = &entry.expected;
            let data: BTreeMap<String, i64> = x
                .data
                .keys()
                .map(|name| {
                    (
                        name.clone(),
                        loaded
                            .slot_of(name)
                            .map_or(i64::MIN, |s| oracle.data().unwrap()[s]),
                    )
                })
                .collect();
            let observed = json!({
                "halted": matches!(status, HaltStatus::Halted { .. }),
                "iterations": otrace.len(),
                "branches_taken": otrace.iter().filter(|r| r.branch_taken()).count(),
                "data": data,
            });
            let frozen = serde_json::to_value(x).expect("expectations serialize");
            if frozen != observed {
                return Ok(Some(Mismatch {
                    expected: frozen,
                    actual: observed,
                    first_divergence: None,
                }));
            }
        }
    }

    let mut net = Emulator::with_core(&image, backend, Some(network.clone()))?;
    let (actual, divergence) = match net.run(max_iters) {
        Ok((status, trace)) => (
            run_summary(status, trace.len(), &net.data()?),
            first_divergence(&otrace, &trace),
        ),
        Err(e) => (
            json!({ "error": e.to_string(), "iteration": net.iteration() + 1 }),
            None,
        ),
    };
    Ok(
        (expected != actual || divergence.is_some()).then_some(Mismatch {
            expected,
            actual,
            first_divergence: divergence,
        }),
    )
}

fn evaluate_fixed_point(
    source: &str,
    config: &MachineConfig,
    backend: Backend,
    max_iters: u64,
    network: &Arc<TensorProgram>,
) -> Result<Option<Mismatch>, DiffError> {
    let image = assemble_and_resolve(source, config)?.image()?;
    let mut net = Emulator::with_core(&image, backend, Some(network.clone()))?;
    let expected = json!({ "halted": true, "identical_iterations": FIXED_POINT_ITERS });
    let fail = |actual: Value, at: Option<usize>| {
        Ok(Some(Mismatch {
            expected: expected.clone(),
            actual,
            first_divergence: at,
        }))
    };
    match net.run(max_iters) {
        Ok((HaltStatus::Halted { .. }, _)) => {}
        Ok((status, _)) => return fail(json!({ "halted": false, "status": status }), None),
        Err(e) => return fail(json!({ "error": e.to_string() }), None),
    }
    if let Err(e) = net.step() {
        return fail(json!({ "error": e.to_string(), "during": "settle" }), None);
    }
    let settled = net.machine_state().expect("network backend").cells.clone();
    for i in 0..FIXED_POINT_ITERS {
        match net.step() {
            Ok(r) if r.halted && net.machine_state().expect("network backend").cells == settled => {
            }
            Ok(r) => {
                return fail(
                    json!({ "halted": r.halted, "identical_iterations": i }),
                    Some(i),
                )
            }
            Err(e) => {
                return fail(
                    json!({ "error": e.to_string(), "identical_iterations": i }),
                    Some(i),
                )
            }
        }
    }
    Ok(None)
}

fn case_rng(seed: u64, check: &str, index: usize) -> ChaCha8Rng {
    let mut h = seed ^ 0xcbf2_9ce4_8422_2325;
    for b in check.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    rng.set_stream(index as u64);
    rng
}

/// Random bits everywhere, with well-formed replicated addresses in the
/// address registers and instruction rows.
pub fn random_state<R: Rng>(layout: &StateLayout, rng: &mut R) -> Vec<Cell> {
    let l = layout;
    let cap = address_capacity(l.w);
    let mut s: Vec<Cell> = (0..l.len()).map(|_| bit(rng.gen())).collect();
    for start in [l.r_a1(), l.r_a2(), l.r_a3(), l.r_pc()] {
        l.set_address(&mut s, start, rng.gen_range(0..cap))
            .expect("in capacity");
    }
    for slot in l.code_range() {
        let t = (
            rng.gen_range(0..cap),
            rng.gen_range(0..cap),
            rng.gen_range(0..cap),
        );
        l.set_instruction(&mut s, slot, t).expect("in capacity");
    }
    s
}

type Generator = Box<dyn Fn(&mut ChaCha8Rng, usize) -> CaseInput + Sync>;

struct Check {
    suite: Suite,
    name: String,
    cases: usize,
    generate: Generator,
}

fn circuit_check(
    suite: Suite,
    name: String,
    circuit: &'static str,
    params: CircuitParams,
    lowered: bool,
    cases: usize,
    fill: impl Fn(&StateLayout, &mut Vec<Cell>, &mut ChaCha8Rng, usize) + Sync + 'static,
) -> Check {
    Check {
        suite,
        name,
        cases,
        generate: Box::new(move |rng, i| {
            let layout = params.layout();
            let mut state = random_state(&layout, rng);
            fill(&layout, &mut state, rng, i);
            CaseInput::Circuit {
                circuit: circuit.to_string(),
                params,
                lowered,
                state,
            }
        }),
    }
}

fn lemma_checks(plan: &TestPlan, suite: Suite, lowered: bool) -> Result<Vec<Check>, DiffError> {
    let mut checks = Vec::new();
    let memory = CircuitParams::new(3, 4, 8, 0)?;
    let per = plan.memories_per_address;
    for circuit in ["read_one_bit", "read_word"] {
        checks.push(circuit_check(
            suite,
            circuit.into(),
            circuit,
            memory,
            lowered,
            8 * per,
            move |l, s, _, i| l.set_address(s, l.r_a1(), i / per).expect("in capacity"),
        ));
    }
    // Every memory content of four 3-bit slots, read through every address.
    let small = CircuitParams::new(2, 3, 4, 0)?;
    checks.push(circuit_check(
        suite,
        "read_word_all_memories".into(),
        "read_word",
        small,
        lowered,
        4 << 12,
        |l, s, _, i| {
            let (slot, memory) = (i % 4, i / 4);
            for row in 0..4 {
                for col in 0..3 {
                    s[l.cell(l.data_row(row), col)] = bit(memory >> (3 * row + col) & 1 == 1);
                }
            }
            l.set_address(s, l.r_a1(), slot).expect("in capacity");
        },
    ));
    for circuit in ["write_one_bit", "write_word"] {
        checks.push(circuit_check(
            suite,
            circuit.into(),
            circuit,
            memory,
            lowered,
            8 * per,
            move |l, s, _, i| l.set_address(s, l.r_a2(), i / per).expect("in capacity"),
        ));
    }
    checks.push(circuit_check(
        suite,
        "full_adder".into(),
        "full_adder",
        CircuitParams::new(1, 4, 1, 0)?,
        lowered,
        8,
        |l, s, _, i| {
            s[l.cell(StateLayout::R_D1, 0)] = bit(i & 1 == 1);
            s[l.cell(StateLayout::R_D2, 0)] = bit(i & 2 == 2);
            s[l.cell(StateLayout::R_C, 0)] = bit(i & 4 == 4);
        },
    ));
    for &d in &plan.exhaustive_widths {
        let params = CircuitParams::new(1, d, 1, 0)?;
        let (min, _) = word_range(d);
        let pairs = 1usize << (2 * d);
        for circuit in ["add_word", "sub_word"] {
            checks.push(circuit_check(
                suite,
                format!("{circuit}_d{d}"),
                circuit,
                params,
                lowered,
                pairs,
                move |l, s, _, i| {
                    l.set_word(s, StateLayout::R_D1, min + (i >> d) as i64)
                        .expect("in range");
                    l.set_word(s, StateLayout::R_D2, min + (i & ((1 << d) - 1)) as i64)
                        .expect("in range");
                },
            ));
        }
        checks.push(circuit_check(
            suite,
            format!("leq_zero_flag_d{d}"),
            "leq_zero_flag",
            params,
            lowered,
            1 << d,
            move |l, s, _, i| {
                l.set_word(s, StateLayout::R_D1, min + i as i64)
                    .expect("in range")
            },
        ));
    }
    checks.push(circuit_check(
        suite,
        "cond_branch".into(),
        "cond_branch",
        CircuitParams::new(4, 4, 1, 0)?,
        lowered,
        2 * 16 * 16,
        |l, s, _, i| {
            s[l.cell(StateLayout::R_C, 0)] = bit(i & 1 == 1);
            l.set_address(s, l.r_a2(), (i >> 1) & 15)
                .expect("in capacity");
            l.set_address(s, l.r_a3(), i >> 5).expect("in capacity");
        },
    ));
    Ok(checks)
}

fn random_word<R: Rng>(rng: &mut R, d: usize) -> i64 {
    let (min, max) = word_range(d);
    rng.gen_range(min..=max)
}

fn step_checks(plan: &TestPlan, suite: Suite, lowered: bool) -> Result<Vec<Check>, DiffError> {
    let grid = plan.grid;
    grid.validate()?;
    let per = plan.memories_per_triple;
    let exhaustive = Check {
        suite,
        name: "grid_exhaustive".into(),
        cases: grid.k * grid.k * grid.m * per,
        generate: Box::new(move |rng, i| {
            let t = i / per;
            let ins = Instruction::new(
                t / (grid.k * grid.m),
                t / grid.m % grid.k,
                grid.k + t % grid.m,
            );
            let mut image = MemoryImage::build(&grid, &[], &[]).expect("grid image");
            // Every slot is random here, including the EOF scratch slot.
            image.data = (0..grid.k).map(|_| random_word(rng, grid.d)).collect();
            image.code[0] = ins;
            image.pc = grid.code_slot(0);
            CaseInput::Step { image, lowered }
        }),
    };

    let cfg = plan.random_config;
    cfg.validate()?;
    let random = Check {
        suite,
        name: format!("random_d{}", cfg.d),
        cases: plan.samples,
        generate: Box::new(move |rng, i| {
            let (min, max) = word_range(cfg.d);
            let code: Vec<Instruction> = (0..cfg.m - 1)
                .map(|_| {
                    Instruction::new(
                        rng.gen_range(0..cfg.k),
                        rng.gen_range(0..cfg.k),
                        cfg.code_slot(rng.gen_range(0..cfg.m)),
                    )
                })
                .collect();
            let mut data: Vec<i64> = (0..cfg.k).map(|_| random_word(rng, cfg.d)).collect();
            let pc_index = rng.gen_range(0..cfg.m - 1);
            let mut ins = code[pc_index];
            // Five of every six cases force the result onto an edge value.
            if let Some(&target) = [min, -1, 0, 1, max].get(i % 6) {
                if ins.a == ins.b {
                    ins.b = (ins.a + 1 + rng.gen_range(0..cfg.k - 1)) % cfg.k;
                }
                data[ins.b] = wrap(target + data[ins.a], cfg.d);
            }
            let mut code = code;
            code[pc_index] = ins;
            let mut image = MemoryImage::build(&cfg, &code, &[]).expect("random image");
            image.data = data;
            image.pc = cfg.code_slot(pc_index);
            CaseInput::Step { image, lowered }
        }),
    };
    Ok(vec![exhaustive, random])
}

fn corpus_checks(plan: &TestPlan, suite: Suite, lowered: bool) -> Vec<Check> {
    let (config, max_iters) = (plan.corpus_config, plan.max_iters);
    let entries = corpus();
    [
        ("trace", ProgramCheck::Trace),
        ("eof_fixed_point", ProgramCheck::FixedPoint),
    ]
    .into_iter()
    .map(|(name, check)| {
        let entries = entries.clone();
        Check {
            suite,
            name: name.into(),
            cases: entries.len(),
            generate: Box::new(move |_, i| CaseInput::Program {
                program: entries[i].name.to_string(),
                source: entries[i].source.to_string(),
                config,
                lowered,
                max_iters,
                check,
            }),
        }
    })
    .collect()
}

fn checks_for(plan: &TestPlan, suite: Suite) -> Result<Vec<Check>, DiffError> {
    Ok(match suite {
        Suite::Lemmas => lemma_checks(plan, suite, false)?,
        Suite::Step => step_checks(plan, suite, false)?,
        Suite::Corpus => corpus_checks(plan, suite, false),
        Suite::Lowering => {
            let mut all = lemma_checks(plan, suite, true)?;
            all.extend(step_checks(plan, suite, true)?);
            all.extend(corpus_checks(plan, suite, true));
            all
        }
    })
}

fn run_check(plan: &TestPlan, check: &Check) -> Result<CheckReport, DiffError> {
    let mut report = CheckReport {
        suite: check.suite,
        check: check.name.clone(),
        cases: check.cases,
        failures: 0,
        discrepancies: Vec::new(),
    };
    if check.cases == 0 {
        return Ok(report);
    }
    let input = |i: usize| (check.generate)(&mut case_rng(plan.seed, &check.name, i), i);
    let network = network_for(&input(0))?;
    let failures: Vec<Discrepancy> = (0..check.cases)
        .into_par_iter()
        .map(|i| {
            let input = input(i);
            evaluate(&input, &network).map(|m| {
                m.map(|mismatch| Discrepancy {
                    suite: check.suite,
                    check: check.name.clone(),
                    case: i,
                    input,
                    mismatch,
                })
            })
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    report.failures = failures.len();
    report.discrepancies = failures.into_iter().take(MAX_RECORDED).collect();
    Ok(report)
}

/// Runs every check of the plan's suites, in order.
pub fn run_plan(plan: &TestPlan) -> Result<Report, DiffError> {
    let mut report = Report::default();
    for &suite in &plan.suites {
        for check in checks_for(plan, suite)? {
            report.checks.push(run_check(plan, &check)?);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_examples() {
        let params = CircuitParams::new(1, 4, 1, 0).unwrap();
        let l = params.layout();
        let mut s = l.blank_state();
        l.set_word(&mut s, StateLayout::R_D1, -8).unwrap();
        l.set_word(&mut s, StateLayout::R_D2, 1).unwrap();
        let out = circuit_reference("sub_word", &l, &s).unwrap();
        assert_eq!(l.word(&out, StateLayout::R_D1).unwrap(), 7);
        let out = circuit_reference("add_word", &l, &s).unwrap();
        assert_eq!(l.word(&out, StateLayout::R_D1).unwrap(), -7);
        assert_eq!(out[l.cell(StateLayout::R_C, 0)], -1);
        let out = circuit_reference("leq_zero_flag", &l, &s).unwrap();
        assert_eq!(out[l.cell(StateLayout::R_C, 0)], 1);
    }

    #[test]
    fn cases_are_reproducible() {
        let plan = TestPlan::quick();
        let checks = step_checks(&plan, Suite::Step, false).unwrap();
        for c in &checks {
            let a = (c.generate)(&mut case_rng(plan.seed, &c.name, 7), 7);
            let b = (c.generate)(&mut case_rng(plan.seed, &c.name, 7), 7);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn edge_cases_hit_their_targets() {
        let plan = TestPlan::quick();
        let checks = step_checks(&plan, Suite::Step, false).unwrap();
        let random = &checks[1];
        let (min, max) = word_range(8);
        for (i, target) in [min, -1, 0, 1, max].into_iter().enumerate() {
            let CaseInput::Step { image, .. } =
                (random.generate)(&mut case_rng(1, &random.name, i), i)
            else {
                panic!("step case");
            };
            let (next, _) =
                oracle_step(&OracleState::from_image(&image).unwrap(), &image, 1).unwrap();
            let ins = image.instruction(image.pc).unwrap();
            assert_eq!(next.mem[ins.b], target);
        }
    }

    #[test]
    fn quick_plan_passes_and_replays() {
        let plan = TestPlan {
            suites: vec![Suite::Lemmas, Suite::Step],
            ..TestPlan::quick()
        };
        let report = run_plan(&plan).unwrap();
        assert!(report.passed(), "{}", report.to_jsonl());
        assert!(report.check(Suite::Lemmas, "sub_word_d4").unwrap().cases == 256);
        assert_eq!(report.to_jsonl().lines().count(), report.checks.len());
    }

    #[test]
    fn a_broken_network_is_reported_with_a_replayable_input() {
        let params = CircuitParams::new(1, 4, 1, 0).unwrap();
        let l = params.layout();
        let mut state = l.blank_state();
        l.set_word(&mut state, StateLayout::R_D1, 3).unwrap();
        l.set_word(&mut state, StateLayout::R_D2, 2).unwrap();
        let input = CaseInput::Circuit {
            circuit: "sub_word".into(),
            params,
            lowered: false,
            state,
        };
        // Evaluate with the adder in place of the subtractor.
        let wrong = Arc::new(build_add_word(&params));
        let m = evaluate(&input, &wrong).unwrap().expect("mismatch");
        assert!(m.first_divergence.is_some());
        let text = serde_json::to_string(&input).unwrap();
        let back: CaseInput = serde_json::from_str(&text).unwrap();
        assert_eq!(replay(&back).unwrap(), None);
    }
}
