//! One stepping interface over the three backends: the constructed network,
//! the same network with gates lowered to plain ReLU layers, and the oracle.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{lower_gates, IrError, TensorProgram};
use crate::machine::{
    build_subleq_core, observe, step_at, HaltStatus, MachineConfig, MachineError, MachineState,
    MemoryImage,
};
use crate::oracle::{oracle_step, OracleFault, OracleState};
use crate::trace::TraceRecord;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmulatorError {
    #[error(transparent)]
    Machine(#[from] MachineError),
    #[error(transparent)]
    Oracle(#[from] OracleFault),
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error("unknown backend `{0}` (expected mlp, mlp-lowered or oracle)")]
    UnknownBackend(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Mlp,
    MlpLowered,
    Oracle,
}

impl Backend {
    pub const ALL: [Backend; 3] = [Backend::Mlp, Backend::MlpLowered, Backend::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Backend::Mlp => "mlp",
            Backend::MlpLowered => "mlp-lowered",
            Backend::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backend {
    type Err = EmulatorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Backend::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| EmulatorError::UnknownBackend(s.to_string()))
    }
}

/// The network a backend runs, or `None` for the oracle.
pub fn core_for(
    cfg: &MachineConfig,
    backend: Backend,
) -> Result<Option<Arc<TensorProgram>>, EmulatorError> {
    cfg.validate()?;
    Ok(match backend {
        Backend::Mlp => Some(Arc::new(build_subleq_core(cfg))),
        Backend::MlpLowered => Some(Arc::new(lower_gates(&build_subleq_core(cfg))?)),
        Backend::Oracle => None,
    })
}

#[derive(Debug, Clone)]
enum Engine {
    Network {
        core: Arc<TensorProgram>,
        state: MachineState,
    },
    Oracle {
        image: MemoryImage,
        state: OracleState,
    },
}

#[derive(Debug, Clone)]
pub struct Emulator {
    backend: Backend,
    iteration: u64,
    status: HaltStatus,
    engine: Engine,
}

impl Emulator {
    pub fn new(image: &MemoryImage, backend: Backend) -> Result<Self, EmulatorError> {
        let core = core_for(&image.config, backend)?;
        Emulator::with_core(image, backend, core)
    }

    /// Reuses a network built by [`core_for`] for the same configuration.
    pub fn with_core(
        image: &MemoryImage,
        backend: Backend,
        core: Option<Arc<TensorProgram>>,
    ) -> Result<Self, EmulatorError> {
        let engine = match (backend, core) {
            (Backend::Oracle, _) => Engine::Oracle {
                image: image.clone(),
                state: OracleState::from_image(image)?,
            },
            (_, Some(core)) => Engine::Network {
                core,
                state: MachineState::from_image(image)?,
            },
            (_, None) => match core_for(&image.config, backend)? {
                Some(core) => Engine::Network {
                    core,
                    state: MachineState::from_image(image)?,
                },
                None => unreachable!("network backends always have a core"),
            },
        };
        Ok(Emulator {
            backend,
            iteration: 0,
            status: HaltStatus::Running,
            engine,
        })
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn status(&self) -> HaltStatus {
        self.status
    }

    pub fn machine_state(&self) -> Option<&MachineState> {
        match &self.engine {
            Engine::Network { state, .. } => Some(state),
            Engine::Oracle { .. } => None,
        }
    }

    pub fn step(&mut self) -> Result<TraceRecord, EmulatorError> {
        let t = self.iteration + 1;
        let record = match &mut self.engine {
            Engine::Network { core, state } => {
                let next = step_at(state, core, t)?;
                let record = observe(state, &next, t)?;
                *state = next;
                record
            }
            Engine::Oracle { image, state } => {
                let (next, record) = oracle_step(state, image, t)?;
                *state = next;
                record
            }
        };
        self.iteration = t;
        if record.halted && self.status == HaltStatus::Running {
            self.status = HaltStatus::Halted { iteration: t };
        }
        Ok(record)
    }

    /// Steps until halted or `max_iters` more iterations have run.
    pub fn run(&mut self, max_iters: u64) -> Result<(HaltStatus, Vec<TraceRecord>), EmulatorError> {
        if max_iters == 0 {
            return Err(MachineError::ZeroBudget.into());
        }
        let mut trace = Vec::new();
        for _ in 0..max_iters {
            let r = self.step()?;
            trace.push(r);
            if r.halted {
                return Ok((self.status, trace));
            }
        }
        Ok((HaltStatus::IterationLimit, trace))
    }

    pub fn pc(&self) -> Result<usize, EmulatorError> {
        match &self.engine {
            Engine::Network { state, .. } => Ok(state.pc()?),
            Engine::Oracle { state, .. } => Ok(state.pc),
        }
    }

    pub fn word(&self, slot: usize) -> Result<i64, EmulatorError> {
        match &self.engine {
            Engine::Network { state, .. } => Ok(state.word(slot)?),
            Engine::Oracle { state, .. } => state.mem.get(slot).copied().ok_or_else(|| {
                MachineError::Slot {
                    slot,
                    expected: "data",
                }
                .into()
            }),
        }
    }

    pub fn data(&self) -> Result<Vec<i64>, EmulatorError> {
        match &self.engine {
            Engine::Network { state, .. } => Ok(state.data()?),
            Engine::Oracle { state, .. } => Ok(state.mem.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{assemble_and_resolve, corpus};

    #[test]
    fn backends_agree_on_multiply() {
        let cfg = MachineConfig::new(4, 8, 8, 8).unwrap();
        let entry = corpus().into_iter().find(|e| e.name == "multiply").unwrap();
        let p = assemble_and_resolve(entry.source, &cfg).unwrap();
        let image = p.image().unwrap();
        let result = p.slot_of("result").unwrap();
        let mut traces = Vec::new();
        for backend in Backend::ALL {
            let mut emu = Emulator::new(&image, backend).unwrap();
            let (status, trace) = emu.run(1000).unwrap();
            assert_eq!(status, HaltStatus::Halted { iteration: 22 });
            assert_eq!(emu.word(result).unwrap(), 42);
            traces.push(trace);
        }
        assert_eq!(traces[0], traces[1]);
        assert_eq!(traces[0], traces[2]);
    }

    #[test]
    fn backend_names_round_trip() {
        for b in Backend::ALL {
            assert_eq!(b.name().parse::<Backend>().unwrap(), b);
        }
        assert!("both".parse::<Backend>().is_err());
    }
}
