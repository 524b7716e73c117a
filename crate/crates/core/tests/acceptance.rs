//! Acceptance criteria 1-8, one PASS/FAIL line each. Built without the libtest
//! harness so the lines always print; exits nonzero if any criterion fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use looped_mlp::asm::corpus;
use looped_mlp::difftest::{run_plan, CheckReport, Report, Suite, TestPlan};
use looped_mlp::ir::layer_report;
use looped_mlp::machine::{budgeted_constructions, MachineConfig};

/// Runtime ceilings per criterion.
const LAYERS_LIMIT: Duration = Duration::from_secs(1);
const LEMMAS_LIMIT: Duration = Duration::from_secs(120);
const STEP_LIMIT: Duration = Duration::from_secs(300);
const CORPUS_LIMIT: Duration = Duration::from_secs(60);

/// Budgets in table order: read, write, one-bit addition, subtraction,
/// conditional branching, the core.
const BUDGETS: [u32; 6] = [2, 2, 6, 7, 4, 23];

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        ok,
        detail: detail.into(),
    }
}

fn check<'a>(report: &'a Report, suite: Suite, name: &str) -> &'a CheckReport {
    report
        .check(suite, name)
        .unwrap_or_else(|| panic!("report has no {suite}/{name}"))
}

fn all_pass(report: &Report, suite: Suite, names: &[(&str, usize)]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for &(name, cases) in names {
        let c = check(report, suite, name);
        ok &= c.passed() && c.cases == cases;
        parts.push(format!("{name} {}/{}", c.cases - c.failures, c.cases));
    }
    (ok, parts.join(", "))
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let value = f();
    (value, start.elapsed())
}

fn plan(suite: Suite) -> TestPlan {
    TestPlan {
        suites: vec![suite],
        ..TestPlan::default()
    }
}

fn criterion_1() -> Verdict {
    let (reports, elapsed) = timed(|| {
        budgeted_constructions(&MachineConfig::default())
            .iter()
            .map(layer_report)
            .collect::<Vec<_>>()
    });
    let mut ok = elapsed < LAYERS_LIMIT;
    let mut parts = Vec::new();
    for (r, &budget) in reports.iter().zip(&BUDGETS) {
        ok &= r.declared == Some(budget) && r.counted <= budget;
        parts.push(format!(
            "{} {}/{} ({:+})",
            r.name,
            r.counted,
            budget,
            r.counted as i64 - budget as i64
        ));
    }
    verdict(ok, format!("{} in {elapsed:.2?}", parts.join(", ")))
}

const LEMMA_CHECKS: [(&str, usize); 12] = [
    ("read_one_bit", 512),
    ("read_word", 512),
    ("read_word_all_memories", 16_384),
    ("write_one_bit", 512),
    ("write_word", 512),
    ("full_adder", 8),
    ("add_word_d4", 256),
    ("sub_word_d4", 256),
    ("leq_zero_flag_d4", 16),
    ("add_word_d8", 65_536),
    ("sub_word_d8", 65_536),
    ("cond_branch", 512),
];

const STEP_CHECKS: [(&str, usize); 2] =
    [("grid_exhaustive", 4 * 4 * 2 * 32), ("random_d8", 10_000)];

fn criterion_2(report: &Report, elapsed: Duration) -> Verdict {
    let (ok, detail) = all_pass(report, Suite::Lemmas, &LEMMA_CHECKS);
    verdict(
        ok && elapsed < LEMMAS_LIMIT,
        format!("{detail} in {elapsed:.2?}"),
    )
}

fn criterion_3(report: &Report, elapsed: Duration) -> Verdict {
    let (ok, detail) = all_pass(report, Suite::Step, &STEP_CHECKS);
    verdict(
        ok && elapsed < STEP_LIMIT,
        format!("{detail} in {elapsed:.2?}"),
    )
}

fn criterion_4(report: &Report, elapsed: Duration) -> Verdict {
    let programs = corpus();
    let has_multiply = programs
        .iter()
        .any(|e| e.name == "multiply" && e.expected.data.get("result") == Some(&42));
    let (ok, detail) = all_pass(report, Suite::Corpus, &[("trace", programs.len())]);
    verdict(
        ok && has_multiply && programs.len() >= 5 && elapsed < CORPUS_LIMIT,
        format!(
            "{} programs, {detail}, multiply = 42 in {elapsed:.2?}",
            programs.len()
        ),
    )
}

fn criterion_5(report: &Report) -> Verdict {
    let (ok, detail) = all_pass(
        report,
        Suite::Corpus,
        &[("eof_fixed_point", corpus().len())],
    );
    verdict(
        ok,
        format!("{detail}, settle step + 10 bit-identical iterations"),
    )
}

/// Every lowered check must exist with the same case count and verdict.
fn criterion_6(plain: &[&Report], lowered: &Report) -> Verdict {
    let mut ok = true;
    let mut compared = 0;
    for c in plain.iter().flat_map(|r| &r.checks) {
        match lowered.check(Suite::Lowering, &c.check) {
            Some(l) => {
                ok &= l.cases == c.cases && l.passed() == c.passed() && l.passed();
                compared += 1;
            }
            None => ok = false,
        }
    }
    ok &= compared == lowered.checks.len();
    verdict(
        ok,
        format!(
            "{compared} checks, {} cases, identical verdicts",
            lowered.total_cases()
        ),
    )
}

/// Network outputs are checked for exact equality against +-1 references,
/// and every network step rejects a non-+-1 cell, so a violation would
/// surface as a failure.
fn criterion_7(reports: &[&Report]) -> Verdict {
    let violations: usize = reports
        .iter()
        .flat_map(|r| &r.checks)
        .flat_map(|c| &c.discrepancies)
        .filter(|d| d.mismatch.actual.to_string().contains("+-1"))
        .count();
    let failures: usize = reports.iter().map(|r| r.total_failures()).sum();
    let cases: usize = reports.iter().map(|r| r.total_cases()).sum();
    verdict(
        violations == 0 && failures == 0,
        format!("{violations} violations over {cases} checked cases"),
    )
}

fn cli(args: &[&str]) -> (bool, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_looped-mlp"))
        .args(args)
        .output()
        .expect("spawn looped-mlp");
    (out.status.success(), out.stdout)
}

fn criterion_8() -> Verdict {
    let dir = tempfile::tempdir().expect("temp dir");
    let path = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let program = path("multiply.sq");
    let source = corpus()
        .into_iter()
        .find(|e| e.name == "multiply")
        .expect("multiply")
        .source;
    std::fs::write(&program, source).expect("write program");

    let mut ok = true;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let report = path(&format!("report_{run}.jsonl"));
        let trace = path(&format!("trace_{run}.jsonl"));
        let (v_ok, _) = cli(&["verify", "--quick", "--seed", "7", "--report", &report]);
        let (r_ok, stdout) = cli(&["run", &program, "--backend", "both", "--trace", &trace]);
        ok &= v_ok && r_ok;
        outputs.push((
            std::fs::read(&report).unwrap_or_default(),
            std::fs::read(&trace).unwrap_or_default(),
            stdout,
        ));
    }
    let same = outputs[0] == outputs[1] && !outputs[0].0.is_empty() && !outputs[0].1.is_empty();
    let lib_same = {
        let p = TestPlan::quick();
        run_plan(&p).map(|r| r.to_jsonl()).ok() == run_plan(&p).map(|r| r.to_jsonl()).ok()
    };
    verdict(
        ok && same && lib_same,
        format!(
            "verify report {} bytes, run trace {} bytes, byte-identical across runs",
            outputs[0].0.len(),
            outputs[0].1.len()
        ),
    )
}

fn main() -> ExitCode {
    let mut verdicts: Vec<(&str, Verdict)> = Vec::new();
    verdicts.push(("layer-count fidelity", criterion_1()));

    let (lemmas, t_lemmas) = timed(|| run_plan(&plan(Suite::Lemmas)).expect("lemma suite"));
    verdicts.push(("lemma equivalence", criterion_2(&lemmas, t_lemmas)));
    let (step, t_step) = timed(|| run_plan(&plan(Suite::Step)).expect("step suite"));
    verdicts.push(("single-step equivalence", criterion_3(&step, t_step)));
    let (programs, t_programs) = timed(|| run_plan(&plan(Suite::Corpus)).expect("corpus suite"));
    verdicts.push(("whole-program traces", criterion_4(&programs, t_programs)));
    verdicts.push(("halting fixed point", criterion_5(&programs)));
    let lowered = run_plan(&plan(Suite::Lowering)).expect("lowering suite");
    verdicts.push((
        "lowering soundness",
        criterion_6(&[&lemmas, &step, &programs], &lowered),
    ));
    verdicts.push((
        "discreteness",
        criterion_7(&[&lemmas, &step, &programs, &lowered]),
    ));
    verdicts.push(("determinism", criterion_8()));

    let mut all = true;
    for (i, (name, v)) in verdicts.iter().enumerate() {
        all &= v.ok;
        println!(
            "criterion {} {:<24} {}  {}",
            i + 1,
            name,
            if v.ok { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    for r in [&lemmas, &step, &programs, &lowered] {
        if !r.passed() {
            eprint!("{}", r.to_jsonl());
        }
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
