//! The SUBLEQ core: one forward pass of the looped network executes one
//! instruction `mem[b] <- mem[b] - mem[a]; if mem[b] <= 0 goto c else next`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuits::{
    branch_stage, build_cond_branch, build_full_adder, build_read_word, build_sub_word,
    build_write_word, fetch_stage, increment_pc_stage, read_word_stage, word_adder_stage,
    write_word_stage, CircuitError, CircuitParams, StateLayout,
};
use crate::encoding::{word_range, EncodingError};
use crate::ir::{execute, Cell, IrError, ProgramBuilder, TensorProgram};
use crate::trace::TraceRecord;

pub const DEFAULT_MAX_ITERS: u64 = 1_000_000;

/// Data slot written by the EOF instruction (`a = b = 0`).
pub const EOF_SCRATCH_SLOT: usize = 0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MachineError {
    #[error(transparent)]
    Config(#[from] CircuitError),
    #[error("machine needs at least {required} {what}, configuration has {available}")]
    Capacity {
        what: &'static str,
        required: usize,
        available: usize,
    },
    #[error("data slot {EOF_SCRATCH_SLOT} is reserved for the EOF instruction")]
    ReservedSlot,
    #[error("instruction at slot {slot}: operand {operand} = {value} is out of range")]
    Operand {
        slot: usize,
        operand: char,
        value: usize,
    },
    #[error("slot {slot} is not a {expected} slot")]
    Slot { slot: usize, expected: &'static str },
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error("state cell {cell} = {value} is not a +-1 bit after iteration {iteration}")]
    Discreteness {
        iteration: u64,
        cell: usize,
        value: Cell,
    },
    #[error("max_iters must be at least 1")]
    ZeroBudget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MachineConfig {
    pub w: usize,
    pub d: usize,
    /// Data slots, including the reserved EOF scratch slot 0.
    pub k: usize,
    /// Instruction slots, including EOF.
    pub m: usize,
}

impl Default for MachineConfig {
    fn default() -> Self {
        MachineConfig {
            w: 6,
            d: 8,
            k: 32,
            m: 16,
        }
    }
}

impl MachineConfig {
    pub fn new(w: usize, d: usize, k: usize, m: usize) -> Result<Self, MachineError> {
        let cfg = MachineConfig { w, d, k, m };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), MachineError> {
        if self.k < 1 {
            return Err(MachineError::Capacity {
                what: "data slots",
                required: 1,
                available: self.k,
            });
        }
        if self.m < 1 {
            return Err(MachineError::Capacity {
                what: "instruction slots",
                required: 1,
                available: self.m,
            });
        }
        CircuitParams::new(self.w, self.d, self.k, self.m)?;
        Ok(())
    }

    pub fn params(&self) -> CircuitParams {
        CircuitParams {
            w: self.w,
            d: self.d,
            data_slots: self.k,
            code_slots: self.m,
        }
    }

    pub fn layout(&self) -> StateLayout {
        self.params().layout()
    }

    pub fn code_slot(&self, index: usize) -> usize {
        self.k + index
    }

    pub fn is_data_slot(&self, slot: usize) -> bool {
        slot < self.k
    }

    pub fn is_code_slot(&self, slot: usize) -> bool {
        (self.k..self.k + self.m).contains(&slot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub a: usize,
    pub b: usize,
    pub c: usize,
}

impl Instruction {
    pub fn new(a: usize, b: usize, c: usize) -> Self {
        Instruction { a, b, c }
    }

    pub fn eof(slot: usize) -> Self {
        Instruction::new(EOF_SCRATCH_SLOT, EOF_SCRATCH_SLOT, slot)
    }

    pub fn triple(&self) -> [usize; 3] {
        [self.a, self.b, self.c]
    }
}

/// Everything both backends need to start: all `k` data words, all `m`
/// code slots, the initial PC and which slot is EOF.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryImage {
    pub config: MachineConfig,
    pub data: Vec<i64>,
    pub code: Vec<Instruction>,
    pub pc: usize,
    pub eof_slot: usize,
}

impl MemoryImage {
    /// Lays out `program` from the first code slot, appends EOF, pads the
    /// remaining code slots with copies of EOF, and places `data` as
    /// `(slot, value)` pairs over an all-zero memory.
    pub fn build(
        cfg: &MachineConfig,
        program: &[Instruction],
        data: &[(usize, i64)],
    ) -> Result<Self, MachineError> {
        cfg.validate()?;
        if program.len() + 1 > cfg.m {
            return Err(MachineError::Capacity {
                what: "instruction slots",
                required: program.len() + 1,
                available: cfg.m,
            });
        }
        let mut mem = vec![0; cfg.k];
        for &(slot, value) in data {
            if slot == EOF_SCRATCH_SLOT {
                return Err(MachineError::ReservedSlot);
            }
            if slot >= cfg.k {
                return Err(MachineError::Capacity {
                    what: "data slots",
                    required: slot + 1,
                    available: cfg.k,
                });
            }
            mem[slot] = value;
        }
        let eof_slot = cfg.code_slot(program.len());
        let mut code = program.to_vec();
        code.resize(cfg.m, Instruction::eof(eof_slot));
        let image = MemoryImage {
            config: *cfg,
            data: mem,
            code,
            pc: cfg.code_slot(0),
            eof_slot,
        };
        image.validate()?;
        Ok(image)
    }

    pub fn validate(&self) -> Result<(), MachineError> {
        let cfg = &self.config;
        cfg.validate()?;
        let (lo, hi) = word_range(cfg.d);
        if self.data.len() != cfg.k || self.code.len() != cfg.m {
            return Err(MachineError::Capacity {
                what: "image entries",
                required: self.data.len() + self.code.len(),
                available: cfg.k + cfg.m,
            });
        }
        if let Some(&v) = self.data.iter().find(|&&v| v < lo || v > hi) {
            return Err(EncodingError::Range {
                value: v,
                width: cfg.d,
                min: lo,
                max: hi,
            }
            .into());
        }
        for (i, ins) in self.code.iter().enumerate() {
            let slot = cfg.code_slot(i);
            for (operand, value, ok) in [
                ('a', ins.a, cfg.is_data_slot(ins.a)),
                ('b', ins.b, cfg.is_data_slot(ins.b)),
                ('c', ins.c, cfg.is_code_slot(ins.c)),
            ] {
                if !ok {
                    return Err(MachineError::Operand {
                        slot,
                        operand,
                        value,
                    });
                }
            }
        }
        for (slot, expected) in [(self.pc, "code"), (self.eof_slot, "code")] {
            if !cfg.is_code_slot(slot) {
                return Err(MachineError::Slot { slot, expected });
            }
        }
        Ok(())
    }

    pub fn instruction(&self, slot: usize) -> Option<Instruction> {
        slot.checked_sub(self.config.k)
            .and_then(|i| self.code.get(i))
            .copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum HaltStatus {
    Running,
    Halted { iteration: u64 },
    IterationLimit,
}

/// The `rows x d` state matrix (row-major) plus which code slot is EOF.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineState {
    pub config: MachineConfig,
    pub eof_slot: usize,
    pub cells: Vec<Cell>,
}

impl MachineState {
    /// Scratchpad all -1 (zero words, address 0), PC at the image's entry.
    pub fn from_image(image: &MemoryImage) -> Result<Self, MachineError> {
        image.validate()?;
        let cfg = image.config;
        let layout = cfg.layout();
        let mut cells = layout.blank_state();
        for (slot, &v) in image.data.iter().enumerate() {
            layout.set_word(&mut cells, layout.data_row(slot), v)?;
        }
        for (i, ins) in image.code.iter().enumerate() {
            layout.set_instruction(&mut cells, cfg.code_slot(i), (ins.a, ins.b, ins.c))?;
        }
        layout.set_address(&mut cells, layout.r_pc(), image.pc)?;
        Ok(MachineState {
            config: cfg,
            eof_slot: image.eof_slot,
            cells,
        })
    }

    pub fn layout(&self) -> StateLayout {
        self.config.layout()
    }

    pub fn pc(&self) -> Result<usize, MachineError> {
        let l = self.layout();
        Ok(l.address(&self.cells, l.r_pc(), 0)?)
    }

    pub fn word(&self, slot: usize) -> Result<i64, MachineError> {
        if !self.config.is_data_slot(slot) {
            return Err(MachineError::Slot {
                slot,
                expected: "data",
            });
        }
        let l = self.layout();
        Ok(l.word(&self.cells, l.data_row(slot))?)
    }

    pub fn data(&self) -> Result<Vec<i64>, MachineError> {
        (0..self.config.k).map(|s| self.word(s)).collect()
    }

    pub fn instruction(&self, slot: usize) -> Result<Instruction, MachineError> {
        if !self.config.is_code_slot(slot) {
            return Err(MachineError::Slot {
                slot,
                expected: "code",
            });
        }
        let (a, b, c) = self.layout().instruction(&self.cells, slot)?;
        Ok(Instruction { a, b, c })
    }

    pub fn code(&self) -> Result<Vec<Instruction>, MachineError> {
        (0..self.config.m)
            .map(|i| self.instruction(self.config.code_slot(i)))
            .collect()
    }

    /// +1 when the result register `r_d1` is `<= 0`, else -1.
    pub fn flag(&self) -> Result<i64, MachineError> {
        let v = self.layout().word(&self.cells, StateLayout::R_D1)?;
        Ok(if v <= 0 { 1 } else { -1 })
    }

    pub fn is_halted(&self) -> Result<bool, MachineError> {
        Ok(self.pc()? == self.eof_slot)
    }

    pub fn code_cells(&self) -> &[Cell] {
        let l = self.layout();
        &self.cells[l.cell(l.data_row(0) + self.config.k, 0)..]
    }

    fn check_discrete(&self, iteration: u64) -> Result<(), MachineError> {
        match self
            .cells
            .iter()
            .enumerate()
            .find(|(_, &v)| v != 1 && v != -1)
        {
            Some((cell, &value)) => Err(MachineError::Discreteness {
                iteration,
                cell,
                value,
            }),
            None => Ok(()),
        }
    }
}

/// Stage budgets: fetch 2, load 2, subtract 7, write back 2, PC increment 6,
/// flag and branch 4.
pub fn build_subleq_core(cfg: &MachineConfig) -> TensorProgram {
    let l = cfg.layout();
    let stages = [
        fetch_stage(&l),
        read_word_stage(
            &l,
            "load",
            &[(l.r_a2(), StateLayout::R_D1), (l.r_a1(), StateLayout::R_D2)],
            2,
        ),
        word_adder_stage(&l, "subtract", true, 7),
        write_word_stage(&l, "write_back", l.r_a2(), StateLayout::R_D1, 2),
        increment_pc_stage(&l),
        branch_stage(&l),
    ];
    let mut b = ProgramBuilder::new("subleq_core", l.len()).discrete_input();
    let mut x = b.input();
    for stage in stages {
        x = b.subprogram(x, stage);
    }
    b.finish(x).with_declared_layers(23)
}

/// The constructions with a stated layer budget, in table order: read,
/// write, one-bit addition, subtraction, conditional branching, the core.
pub fn budgeted_constructions(cfg: &MachineConfig) -> Vec<TensorProgram> {
    let p = cfg.params();
    vec![
        build_read_word(&p),
        build_write_word(&p),
        build_full_adder(&p),
        build_sub_word(&p),
        build_cond_branch(&p),
        build_subleq_core(cfg),
    ]
}

pub fn init_state(
    cfg: &MachineConfig,
    program: &[Instruction],
    data: &[(usize, i64)],
) -> Result<MachineState, MachineError> {
    MachineState::from_image(&MemoryImage::build(cfg, program, data)?)
}

/// One forward pass; `iteration` only labels a discreteness failure.
pub fn step_at(
    state: &MachineState,
    core: &TensorProgram,
    iteration: u64,
) -> Result<MachineState, MachineError> {
    let cells = execute(core, &state.cells)?;
    let next = MachineState {
        cells,
        ..state.clone()
    };
    next.check_discrete(iteration)?;
    Ok(next)
}

pub fn step(state: &MachineState, core: &TensorProgram) -> Result<MachineState, MachineError> {
    step_at(state, core, 1)
}

/// Trace record for the transition `before -> after`, decoded from the states.
pub fn observe(
    before: &MachineState,
    after: &MachineState,
    iteration: u64,
) -> Result<TraceRecord, MachineError> {
    let pc = before.pc()?;
    let ins = before.instruction(pc)?;
    Ok(TraceRecord {
        iteration,
        pc_slot: pc,
        instruction: ins.triple(),
        written_slot: ins.b,
        written_value: after.word(ins.b)?,
        flag: after.flag()?,
        halted: after.is_halted()?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    pub state: MachineState,
    pub status: HaltStatus,
    pub trace: Vec<TraceRecord>,
}

pub fn run(
    state: &MachineState,
    core: &TensorProgram,
    max_iters: u64,
) -> Result<RunOutcome, MachineError> {
    if max_iters == 0 {
        return Err(MachineError::ZeroBudget);
    }
    let mut current = state.clone();
    let mut trace = Vec::new();
    for t in 1..=max_iters {
        let next = step_at(&current, core, t)?;
        let record = observe(&current, &next, t)?;
        let halted = record.halted;
        trace.push(record);
        current = next;
        if halted {
            return Ok(RunOutcome {
                state: current,
                status: HaltStatus::Halted { iteration: t },
                trace,
            });
        }
    }
    Ok(RunOutcome {
        state: current,
        status: HaltStatus::IterationLimit,
        trace,
    })
}

pub fn extract_word(state: &MachineState, slot: usize) -> Result<i64, MachineError> {
    state.word(slot)
}

pub fn extract_pc(state: &MachineState) -> Result<usize, MachineError> {
    state.pc()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::counted_layers;

    fn small() -> MachineConfig {
        MachineConfig::new(3, 4, 4, 3).unwrap()
    }

    #[test]
    fn config_rejects_overflowing_slot_table() {
        assert!(MachineConfig::new(3, 4, 5, 4).is_err());
        assert!(MachineConfig::new(3, 4, 4, 0).is_err());
        assert!(MachineConfig::new(3, 1, 4, 2).is_err());
        MachineConfig::default().validate().unwrap();
    }

    #[test]
    fn core_budget() {
        let core = build_subleq_core(&small());
        assert_eq!(core.declared_layers, Some(23));
        assert!(counted_layers(&core) <= 23);
    }

    #[test]
    fn single_step_examples() {
        let cfg = small();
        let core = build_subleq_core(&cfg);
        // SUBLEQ 1 2 6 at slot 4; mem[1] = 3, mem[2] = 5.
        let prog = [Instruction::new(1, 2, 6)];
        let s = init_state(&cfg, &prog, &[(1, 3), (2, 5)]).unwrap();
        let t = step(&s, &core).unwrap();
        assert_eq!(t.word(2).unwrap(), 2);
        assert_eq!(t.pc().unwrap(), 5);
        assert_eq!(t.flag().unwrap(), -1);

        let s = init_state(&cfg, &prog, &[(1, 5), (2, 3)]).unwrap();
        let t = step(&s, &core).unwrap();
        assert_eq!(t.word(2).unwrap(), -2);
        assert_eq!(t.pc().unwrap(), 6);
        assert_eq!(t.flag().unwrap(), 1);
        assert_eq!(t.code_cells(), s.code_cells());
    }

    #[test]
    fn empty_program_halts_at_first_iteration() {
        let cfg = small();
        let core = build_subleq_core(&cfg);
        let s = init_state(&cfg, &[], &[]).unwrap();
        let out = run(&s, &core, 1).unwrap();
        assert_eq!(out.status, HaltStatus::Halted { iteration: 1 });
        assert!(matches!(run(&s, &core, 0), Err(MachineError::ZeroBudget)));
    }

    #[test]
    fn eof_state_is_a_fixed_point_after_settling() {
        let cfg = small();
        let core = build_subleq_core(&cfg);
        let s = init_state(&cfg, &[Instruction::new(1, 1, 5)], &[(1, 3)]).unwrap();
        let out = run(&s, &core, 10).unwrap();
        assert_eq!(out.status, HaltStatus::Halted { iteration: 1 });
        let settled = step(&out.state, &core).unwrap();
        let mut again = settled.clone();
        for _ in 0..10 {
            again = step(&again, &core).unwrap();
            assert_eq!(again, settled);
        }
    }

    #[test]
    fn loader_rules() {
        let cfg = small();
        assert_eq!(
            init_state(&cfg, &[], &[(0, 1)]),
            Err(MachineError::ReservedSlot)
        );
        let too_long = vec![Instruction::new(0, 0, 4); 3];
        assert!(matches!(
            init_state(&cfg, &too_long, &[]),
            Err(MachineError::Capacity {
                required: 4,
                available: 3,
                ..
            })
        ));
        let s = init_state(
            &cfg,
            &[Instruction::new(1, 2, 4), Instruction::new(3, 3, 6)],
            &[],
        )
        .unwrap();
        assert_eq!(s.instruction(4).unwrap(), Instruction::new(1, 2, 4));
        assert_eq!(s.instruction(5).unwrap(), Instruction::new(3, 3, 6));
        assert_eq!(s.instruction(6).unwrap(), Instruction::eof(6));
        assert!(matches!(
            init_state(&cfg, &[Instruction::new(4, 1, 4)], &[]),
            Err(MachineError::Operand { operand: 'a', .. })
        ));
    }
}
