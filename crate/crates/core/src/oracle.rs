//! Reference SUBLEQ interpreter over host integers.

use thiserror::Error;

use crate::machine::{HaltStatus, MachineError, MemoryImage};
use crate::trace::TraceRecord;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleFault {
    #[error("pc {pc} is not an instruction slot")]
    Pc { pc: usize },
    #[error("instruction at slot {pc}: operand {operand} = {value} is out of range")]
    Operand {
        pc: usize,
        operand: char,
        value: usize,
    },
    #[error("fall-through from the last instruction slot {pc}")]
    FallThrough { pc: usize },
    #[error("max_iters must be at least 1")]
    ZeroBudget,
    #[error(transparent)]
    Image(#[from] MachineError),
}

/// The `d`-bit two's-complement representative of `x`.
pub fn wrap(x: i64, d: usize) -> i64 {
    let modulus = 1i128 << d;
    let half = modulus / 2;
    ((x as i128 + half).rem_euclid(modulus) - half) as i64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleState {
    pub mem: Vec<i64>,
    pub pc: usize,
    pub halted: bool,
}

impl OracleState {
    pub fn from_image(image: &MemoryImage) -> Result<Self, OracleFault> {
        image.validate()?;
        Ok(OracleState {
            mem: image.data.clone(),
            pc: image.pc,
            halted: false,
        })
    }
}

pub fn oracle_step(
    s: &OracleState,
    image: &MemoryImage,
    iteration: u64,
) -> Result<(OracleState, TraceRecord), OracleFault> {
    let cfg = &image.config;
    let pc = s.pc;
    let ins = image.instruction(pc).ok_or(OracleFault::Pc { pc })?;
    for (operand, value, ok) in [
        ('a', ins.a, cfg.is_data_slot(ins.a)),
        ('b', ins.b, cfg.is_data_slot(ins.b)),
        ('c', ins.c, cfg.is_code_slot(ins.c)),
    ] {
        if !ok {
            return Err(OracleFault::Operand { pc, operand, value });
        }
    }
    let mut mem = s.mem.clone();
    let v = wrap(mem[ins.b] - mem[ins.a], cfg.d);
    mem[ins.b] = v;
    let next = if v <= 0 {
        ins.c
    } else if cfg.is_code_slot(pc + 1) {
        pc + 1
    } else {
        return Err(OracleFault::FallThrough { pc });
    };
    let halted = next == image.eof_slot;
    let record = TraceRecord {
        iteration,
        pc_slot: pc,
        instruction: ins.triple(),
        written_slot: ins.b,
        written_value: v,
        flag: if v <= 0 { 1 } else { -1 },
        halted,
    };
    Ok((
        OracleState {
            mem,
            pc: next,
            halted,
        },
        record,
    ))
}

pub fn oracle_run(
    s: &OracleState,
    image: &MemoryImage,
    max_iters: u64,
) -> Result<(OracleState, HaltStatus, Vec<TraceRecord>), OracleFault> {
    if max_iters == 0 {
        return Err(OracleFault::ZeroBudget);
    }
    let mut state = s.clone();
    let mut trace = Vec::new();
    for t in 1..=max_iters {
        let (next, record) = oracle_step(&state, image, t)?;
        trace.push(record);
        state = next;
        if state.halted {
            return Ok((state, HaltStatus::Halted { iteration: t }, trace));
        }
    }
    Ok((state, HaltStatus::IterationLimit, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{Instruction, MachineConfig};

    fn image(program: &[Instruction], data: &[(usize, i64)]) -> MemoryImage {
        MemoryImage::build(&MachineConfig::new(3, 4, 4, 3).unwrap(), program, data).unwrap()
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap(0, 4), 0);
        assert_eq!(wrap(8, 4), -8);
        assert_eq!(wrap(-9, 4), 7);
        for x in -100..100 {
            assert_eq!(wrap(wrap(x, 4), 4), wrap(x, 4));
            assert_eq!(wrap(x + 16, 4), wrap(x, 4));
        }
        assert_eq!(wrap(i64::MAX, 63), -1);
    }

    #[test]
    fn step_examples() {
        let img = image(&[Instruction::new(1, 2, 6)], &[(1, 3), (2, 5)]);
        let (s, r) = oracle_step(&OracleState::from_image(&img).unwrap(), &img, 1).unwrap();
        assert_eq!((s.mem[2], s.pc, r.flag), (2, 5, -1));

        let img = image(&[Instruction::new(1, 1, 6)], &[(1, 3)]);
        let (s, r) = oracle_step(&OracleState::from_image(&img).unwrap(), &img, 1).unwrap();
        assert_eq!((s.mem[1], s.pc, r.flag), (0, 6, 1));

        let img = image(&[Instruction::new(1, 2, 6)], &[(1, -8), (2, 7)]);
        let (s, r) = oracle_step(&OracleState::from_image(&img).unwrap(), &img, 1).unwrap();
        assert_eq!((s.mem[2], s.pc, r.flag), (-1, 6, 1));
    }

    #[test]
    fn run_examples() {
        let img = image(&[], &[]);
        let (_, status, trace) =
            oracle_run(&OracleState::from_image(&img).unwrap(), &img, 5).unwrap();
        assert_eq!(status, HaltStatus::Halted { iteration: 1 });
        assert_eq!(trace.len(), 1);

        // SUBLEQ z z L with L the instruction itself.
        let img = image(&[Instruction::new(1, 1, 4)], &[]);
        let (_, status, trace) =
            oracle_run(&OracleState::from_image(&img).unwrap(), &img, 50).unwrap();
        assert_eq!(status, HaltStatus::IterationLimit);
        assert_eq!(trace.len(), 50);
    }
}
