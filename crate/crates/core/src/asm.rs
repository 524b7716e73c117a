//! Assembler, loader and disassembler for SUBLEQ source text.
//!
//! ```text
//! program     = { line } ;
//! line        = [ directive | instruction ] [ ";" comment ] newline ;
//! directive   = ".data" name integer | ".text" ;
//! instruction = [ label ":" ] "SUBLEQ" operand operand target ;
//! operand     = name | "@" slot ;
//! target      = label | "?" | "HALT" | "@" slot ;
//! ```
//!
//! `.data` lines must precede `.text`. Data words get slots 1, 2, ... in
//! declaration order (slot 0 is the EOF scratch word); instructions follow
//! from the first code slot. `?` is the next instruction, `HALT` the EOF
//! slot appended after the last instruction. Keywords are case-sensitive.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::word_range;
use crate::machine::{
    Instruction, MachineConfig, MachineError, MachineState, MemoryImage, EOF_SCRATCH_SLOT,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {kind}")]
pub struct AsmError {
    pub line: usize,
    pub column: usize,
    pub kind: AsmErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("unknown data word `{0}`")]
    UnknownData(String),
    #[error("duplicate name `{0}`")]
    Duplicate(String),
    #[error("program needs {required} {what}, configuration provides {available}")]
    Capacity {
        what: &'static str,
        required: usize,
        available: usize,
    },
    #[error("value {value} does not fit in {d} bits")]
    Range { value: i64, d: usize },
    #[error("slot @{slot} is not a valid {expected} slot")]
    Slot { slot: usize, expected: &'static str },
    #[error("code slot {slot} holds a corrupt instruction: {reason}")]
    Corrupt { slot: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Located<T> {
    pub value: T,
    pub line: usize,
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operand {
    Name(String),
    Slot(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Label(String),
    Next,
    Halt,
    Slot(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataDecl {
    pub name: String,
    pub value: i64,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceInstruction {
    pub label: Option<String>,
    pub a: Located<Operand>,
    pub b: Located<Operand>,
    pub c: Located<Target>,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SourceProgram {
    pub data: Vec<DataDecl>,
    pub instructions: Vec<SourceInstruction>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadedProgram {
    pub config: MachineConfig,
    pub instructions: Vec<Instruction>,
    /// `(slot, initial value)` in declaration order.
    pub data: Vec<(usize, i64)>,
    /// Data names and their slots, in declaration order.
    pub symbols: Vec<(String, usize)>,
    /// Instruction labels and their slots, in program order.
    pub labels: Vec<(String, usize)>,
}

impl LoadedProgram {
    pub fn eof_slot(&self) -> usize {
        self.config.code_slot(self.instructions.len())
    }

    pub fn image(&self) -> Result<MemoryImage, MachineError> {
        MemoryImage::build(&self.config, &self.instructions, &self.data)
    }

    pub fn slot_of(&self, name: &str) -> Option<usize> {
        self.symbols
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, s)| s)
    }
}

fn err(line: usize, column: usize, kind: AsmErrorKind) -> AsmError {
    AsmError { line, column, kind }
}

fn syntax(line: usize, column: usize, msg: impl Into<String>) -> AsmError {
    err(line, column, AsmErrorKind::Syntax(msg.into()))
}

/// Whitespace-separated tokens with 1-based character columns.
fn tokens(text: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (col, (i, ch)) in text.char_indices().enumerate() {
        match (ch.is_whitespace(), start) {
            (false, None) => start = Some((col, i)),
            (true, Some((c0, i0))) => {
                out.push((c0 + 1, &text[i0..i]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some((c0, i0)) = start {
        out.push((c0 + 1, &text[i0..]));
    }
    out
}

fn is_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && s != "HALT"
        && s != "SUBLEQ"
}

fn parse_slot(tok: &str, line: usize, col: usize) -> Result<Option<usize>, AsmError> {
    match tok.strip_prefix('@') {
        None => Ok(None),
        Some(n) => n
            .parse()
            .map(Some)
            .map_err(|_| syntax(line, col, format!("bad slot literal `{tok}`"))),
    }
}

fn parse_operand(tok: &str, line: usize, column: usize) -> Result<Located<Operand>, AsmError> {
    let value = match parse_slot(tok, line, column)? {
        Some(s) => Operand::Slot(s),
        None if is_name(tok) => Operand::Name(tok.to_string()),
        None => {
            return Err(syntax(
                line,
                column,
                format!("expected a data name, found `{tok}`"),
            ))
        }
    };
    Ok(Located {
        value,
        line,
        column,
    })
}

fn parse_target(tok: &str, line: usize, column: usize) -> Result<Located<Target>, AsmError> {
    let value = match tok {
        "?" => Target::Next,
        "HALT" => Target::Halt,
        _ => match parse_slot(tok, line, column)? {
            Some(s) => Target::Slot(s),
            None if is_name(tok) => Target::Label(tok.to_string()),
            None => {
                return Err(syntax(
                    line,
                    column,
                    format!("expected a label, `?` or `HALT`, found `{tok}`"),
                ))
            }
        },
    };
    Ok(Located {
        value,
        line,
        column,
    })
}

/// Parses and name-checks `text`.
pub fn assemble(text: &str) -> Result<SourceProgram, AsmError> {
    let mut prog = SourceProgram::default();
    let mut in_text = false;
    let mut pending_label: Option<(String, usize, usize)> = None;
    let mut names: HashMap<String, (usize, usize)> = HashMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let code = raw.split(';').next().unwrap_or("");
        let mut toks = tokens(code);
        if toks.is_empty() {
            continue;
        }
        let (col0, first) = toks[0];
        match first {
            ".data" => {
                if in_text {
                    return Err(syntax(line, col0, "`.data` after `.text`"));
                }
                if toks.len() != 3 {
                    return Err(syntax(line, col0, "expected `.data <name> <int>`"));
                }
                let (ncol, name) = toks[1];
                if !is_name(name) {
                    return Err(syntax(line, ncol, format!("invalid name `{name}`")));
                }
                let (vcol, v) = toks[2];
                let value = v
                    .parse()
                    .map_err(|_| syntax(line, vcol, format!("expected an integer, found `{v}`")))?;
                if names.insert(name.to_string(), (line, ncol)).is_some() {
                    return Err(err(line, ncol, AsmErrorKind::Duplicate(name.to_string())));
                }
                prog.data.push(DataDecl {
                    name: name.to_string(),
                    value,
                    line,
                });
            }
            ".text" => {
                if toks.len() != 1 || in_text {
                    return Err(syntax(
                        line,
                        col0,
                        "`.text` must appear once, alone on its line",
                    ));
                }
                in_text = true;
            }
            _ => {
                if !in_text {
                    return Err(syntax(line, col0, "instruction before `.text`"));
                }
                if let Some(label) = first.strip_suffix(':') {
                    if !is_name(label) {
                        return Err(syntax(line, col0, format!("invalid label `{label}`")));
                    }
                    if pending_label.is_some() {
                        return Err(syntax(line, col0, "two labels on one instruction"));
                    }
                    if names.insert(label.to_string(), (line, col0)).is_some() {
                        return Err(err(line, col0, AsmErrorKind::Duplicate(label.to_string())));
                    }
                    pending_label = Some((label.to_string(), line, col0));
                    toks.remove(0);
                    if toks.is_empty() {
                        continue;
                    }
                }
                let (mcol, mnemonic) = toks[0];
                if mnemonic != "SUBLEQ" {
                    return Err(syntax(line, mcol, format!("unknown mnemonic `{mnemonic}`")));
                }
                if toks.len() != 4 {
                    return Err(syntax(line, mcol, "SUBLEQ takes three operands"));
                }
                prog.instructions.push(SourceInstruction {
                    label: pending_label.take().map(|(l, _, _)| l),
                    a: parse_operand(toks[1].1, line, toks[1].0)?,
                    b: parse_operand(toks[2].1, line, toks[2].0)?,
                    c: parse_target(toks[3].1, line, toks[3].0)?,
                    line,
                });
            }
        }
    }
    if let Some((label, line, col)) = pending_label {
        return Err(syntax(
            line,
            col,
            format!("label `{label}` is not followed by an instruction"),
        ));
    }

    let data: HashMap<&str, ()> = prog.data.iter().map(|d| (d.name.as_str(), ())).collect();
    let labels: HashMap<&str, ()> = prog
        .instructions
        .iter()
        .filter_map(|i| i.label.as_deref().map(|l| (l, ())))
        .collect();
    for ins in &prog.instructions {
        for op in [&ins.a, &ins.b] {
            if let Operand::Name(n) = &op.value {
                if !data.contains_key(n.as_str()) {
                    return Err(err(
                        op.line,
                        op.column,
                        AsmErrorKind::UnknownData(n.clone()),
                    ));
                }
            }
        }
        if let Target::Label(l) = &ins.c.value {
            if !labels.contains_key(l.as_str()) {
                return Err(err(
                    ins.c.line,
                    ins.c.column,
                    AsmErrorKind::UnknownLabel(l.clone()),
                ));
            }
        }
    }
    Ok(prog)
}

/// Assigns slots: data from slot 1 in declaration order, instructions from
/// slot `k`, EOF right after the last instruction.
pub fn resolve(src: &SourceProgram, cfg: &MachineConfig) -> Result<LoadedProgram, AsmError> {
    cfg.validate().map_err(|e| syntax(0, 0, e.to_string()))?;
    let first_line = |v: Option<usize>| v.unwrap_or(1);
    if src.data.len() + 1 > cfg.k {
        return Err(err(
            first_line(src.data.get(cfg.k.saturating_sub(1)).map(|d| d.line)),
            1,
            AsmErrorKind::Capacity {
                what: "data slots (including the reserved slot 0)",
                required: src.data.len() + 1,
                available: cfg.k,
            },
        ));
    }
    if src.instructions.len() + 1 > cfg.m {
        return Err(err(
            first_line(
                src.instructions
                    .get(cfg.m.saturating_sub(1))
                    .map(|i| i.line),
            ),
            1,
            AsmErrorKind::Capacity {
                what: "instruction slots (including EOF)",
                required: src.instructions.len() + 1,
                available: cfg.m,
            },
        ));
    }
    let (lo, hi) = word_range(cfg.d);
    let mut symbols = Vec::new();
    let mut data = Vec::new();
    for (i, decl) in src.data.iter().enumerate() {
        if decl.value < lo || decl.value > hi {
            return Err(err(
                decl.line,
                1,
                AsmErrorKind::Range {
                    value: decl.value,
                    d: cfg.d,
                },
            ));
        }
        symbols.push((decl.name.clone(), i + 1));
        data.push((i + 1, decl.value));
    }
    let labels: Vec<(String, usize)> = src
        .instructions
        .iter()
        .enumerate()
        .filter_map(|(i, ins)| ins.label.clone().map(|l| (l, cfg.code_slot(i))))
        .collect();
    let eof = cfg.code_slot(src.instructions.len());
    let data_slot = |op: &Located<Operand>| -> Result<usize, AsmError> {
        match &op.value {
            Operand::Name(n) => Ok(symbols
                .iter()
                .find(|(s, _)| s == n)
                .expect("checked by assemble")
                .1),
            Operand::Slot(s) if cfg.is_data_slot(*s) => Ok(*s),
            Operand::Slot(s) => Err(err(
                op.line,
                op.column,
                AsmErrorKind::Slot {
                    slot: *s,
                    expected: "data",
                },
            )),
        }
    };
    let mut instructions = Vec::new();
    for (i, ins) in src.instructions.iter().enumerate() {
        let c = match &ins.c.value {
            Target::Next => cfg.code_slot(i + 1),
            Target::Halt => eof,
            Target::Label(l) => {
                labels
                    .iter()
                    .find(|(n, _)| n == l)
                    .expect("checked by assemble")
                    .1
            }
            Target::Slot(s) if cfg.is_code_slot(*s) => *s,
            Target::Slot(s) => {
                return Err(err(
                    ins.c.line,
                    ins.c.column,
                    AsmErrorKind::Slot {
                        slot: *s,
                        expected: "code",
                    },
                ))
            }
        };
        instructions.push(Instruction::new(data_slot(&ins.a)?, data_slot(&ins.b)?, c));
    }
    Ok(LoadedProgram {
        config: *cfg,
        instructions,
        data,
        symbols,
        labels,
    })
}

pub fn assemble_and_resolve(text: &str, cfg: &MachineConfig) -> Result<LoadedProgram, AsmError> {
    resolve(&assemble(text)?, cfg)
}

fn render(
    out: &mut String,
    data: &[(String, usize, i64)],
    code: &[(usize, Instruction)],
    eof: usize,
    label_names: &BTreeMap<usize, String>,
) {
    let name_of = |slot: usize| {
        data.iter()
            .find(|(_, s, _)| *s == slot)
            .map_or_else(|| format!("@{slot}"), |(n, _, _)| n.clone())
    };
    for (name, slot, value) in data {
        writeln!(out, ".data {name} {value} ; slot {slot}").unwrap();
    }
    writeln!(out, ".text").unwrap();
    for &(slot, ins) in code {
        let label = label_names
            .get(&slot)
            .map_or(String::new(), |l| format!("{l}: "));
        let target = if ins.c == eof {
            "HALT".to_string()
        } else {
            label_names
                .get(&ins.c)
                .cloned()
                .unwrap_or_else(|| format!("@{}", ins.c))
        };
        writeln!(
            out,
            "{label}SUBLEQ {} {} {target} ; slot {slot}",
            name_of(ins.a),
            name_of(ins.b)
        )
        .unwrap();
    }
    writeln!(
        out,
        "; slot {eof}: SUBLEQ @{0} @{0} @{eof} ; HALT (EOF)",
        EOF_SCRATCH_SLOT
    )
    .unwrap();
}

/// Source text that assembles back to the same slot assignment.
pub fn disassemble(p: &LoadedProgram) -> String {
    let data: Vec<(String, usize, i64)> = p
        .symbols
        .iter()
        .zip(&p.data)
        .map(|((n, s), &(_, v))| (n.clone(), *s, v))
        .collect();
    let code: Vec<(usize, Instruction)> = p
        .instructions
        .iter()
        .enumerate()
        .map(|(i, &ins)| (p.config.code_slot(i), ins))
        .collect();
    let eof = p.eof_slot();
    let mut labels: BTreeMap<usize, String> =
        p.labels.iter().map(|(l, s)| (*s, l.clone())).collect();
    for &(_, ins) in &code {
        if ins.c != eof {
            labels.entry(ins.c).or_insert_with(|| format!("L{}", ins.c));
        }
    }
    let mut out = String::new();
    render(&mut out, &data, &code, eof, &labels);
    out
}

/// Disassembles the data and code regions of a machine state. Data slots
/// `1..k` are emitted as `m<slot>`; code runs up to the EOF slot.
pub fn disassemble_state(state: &MachineState) -> Result<String, AsmError> {
    let cfg = state.config;
    let corrupt = |slot: usize, e: MachineError| {
        err(
            0,
            0,
            AsmErrorKind::Corrupt {
                slot,
                reason: e.to_string(),
            },
        )
    };
    let mut data = Vec::new();
    for slot in 1..cfg.k {
        let v = state.word(slot).map_err(|e| corrupt(slot, e))?;
        data.push((format!("m{slot}"), slot, v));
    }
    let eof = state.eof_slot;
    let mut code = Vec::new();
    for slot in cfg.k..eof {
        let ins = state.instruction(slot).map_err(|e| corrupt(slot, e))?;
        for (what, ok) in [
            ("a", cfg.is_data_slot(ins.a)),
            ("b", cfg.is_data_slot(ins.b)),
            ("c", cfg.is_code_slot(ins.c)),
        ] {
            if !ok {
                return Err(err(
                    0,
                    0,
                    AsmErrorKind::Corrupt {
                        slot,
                        reason: format!("operand {what} out of range"),
                    },
                ));
            }
        }
        code.push((slot, ins));
    }
    let labels: BTreeMap<usize, String> = code
        .iter()
        .filter(|(_, ins)| ins.c != eof)
        .map(|(_, ins)| (ins.c, format!("L{}", ins.c)))
        .collect();
    let mut out = String::new();
    render(&mut out, &data, &code, eof, &labels);
    Ok(out)
}

/// Oracle-derived outcome of a corpus program under the default configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expected {
    pub halted: bool,
    pub iterations: u64,
    pub branches_taken: usize,
    pub data: BTreeMap<String, i64>,
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub name: &'static str,
    pub source: &'static str,
    pub expected: Expected,
}

macro_rules! corpus_entry {
    ($name:literal) => {
        CorpusEntry {
            name: $name,
            source: include_str!(concat!("../corpus/", $name, ".sq")),
            expected: serde_json::from_str(include_str!(concat!(
                "../corpus/",
                $name,
                ".expected.json"
            )))
            .expect(concat!("corpus sidecar ", $name)),
        }
    };
}

pub fn corpus() -> Vec<CorpusEntry> {
    vec![
        corpus_entry!("clear"),
        corpus_entry!("copy"),
        corpus_entry!("increment"),
        corpus_entry!("multiply"),
        corpus_entry!("countdown"),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> MachineConfig {
        MachineConfig::new(4, 8, 8, 8).unwrap()
    }

    #[test]
    fn minimal_program() {
        let src = assemble(".data x 5\n.text\nL: SUBLEQ x x HALT\n").unwrap();
        assert_eq!(src.data.len(), 1);
        assert_eq!(src.instructions.len(), 1);
        let p = resolve(&src, &cfg()).unwrap();
        assert_eq!(p.instructions, vec![Instruction::new(1, 1, 9)]);
    }

    #[test]
    fn unknown_label_is_located() {
        let e = assemble(".data x 1\n.text\n  SUBLEQ x x FOO\n").unwrap_err();
        assert_eq!(e.kind, AsmErrorKind::UnknownLabel("FOO".into()));
        assert_eq!((e.line, e.column), (3, 14));
        assert!(e.to_string().contains("FOO"));
    }

    #[test]
    fn duplicates_and_syntax() {
        assert!(matches!(
            assemble(".data x 1\n.data x 2\n").unwrap_err().kind,
            AsmErrorKind::Duplicate(_)
        ));
        assert!(matches!(
            assemble(".text\nSUBLEQ x\n").unwrap_err().kind,
            AsmErrorKind::Syntax(_)
        ));
    }

    #[test]
    fn fallthrough_and_slot_assignment() {
        let text = ".data p 1\n.data q 2\n.text\nSUBLEQ p q ?\nSUBLEQ q p ?\nSUBLEQ p p HALT\n";
        let p = assemble_and_resolve(text, &cfg()).unwrap();
        assert_eq!(p.data, vec![(1, 1), (2, 2)]);
        assert_eq!(
            p.instructions,
            vec![
                Instruction::new(1, 2, 9),
                Instruction::new(2, 1, 10),
                Instruction::new(1, 1, 11)
            ]
        );
        assert_eq!(p.eof_slot(), 11);
        assert_eq!(assemble_and_resolve(text, &cfg()).unwrap(), p);
    }

    #[test]
    fn capacity_errors() {
        let text = ".data a 1\n.data b 1\n.text\nSUBLEQ a b HALT\n";
        let small = MachineConfig::new(3, 4, 2, 2).unwrap();
        assert!(matches!(
            assemble_and_resolve(text, &small).unwrap_err().kind,
            AsmErrorKind::Capacity {
                required: 3,
                available: 2,
                ..
            }
        ));
        assert!(matches!(
            assemble_and_resolve(
                ".data a 100\n.text\n",
                &MachineConfig::new(3, 4, 4, 2).unwrap()
            )
            .unwrap_err()
            .kind,
            AsmErrorKind::Range { .. }
        ));
    }

    #[test]
    fn corpus_round_trips() {
        let cfg = MachineConfig::default();
        for entry in corpus() {
            let p = assemble_and_resolve(entry.source, &cfg).unwrap();
            let text = disassemble(&p);
            let q = assemble_and_resolve(&text, &cfg).unwrap();
            assert_eq!(p.instructions, q.instructions, "{}", entry.name);
            assert_eq!(p.data, q.data, "{}", entry.name);
            assert!(text.contains("HALT (EOF)"));

            let state = MachineState::from_image(&p.image().unwrap()).unwrap();
            let r = assemble_and_resolve(&disassemble_state(&state).unwrap(), &cfg).unwrap();
            assert_eq!(r.instructions, p.instructions, "{}", entry.name);
        }
    }
}
