use proptest::prelude::*;

use looped_mlp::asm::{assemble_and_resolve, corpus, disassemble};
use looped_mlp::emulator::{Backend, Emulator};
use looped_mlp::machine::{HaltStatus, Instruction, MachineConfig, MemoryImage};

#[test]
fn corpus_matches_frozen_expectations_on_every_backend() {
    let cfg = MachineConfig::default();
    for entry in corpus() {
        let p = assemble_and_resolve(entry.source, &cfg).unwrap();
        let image = p.image().unwrap();
        for backend in Backend::ALL {
            let mut emu = Emulator::new(&image, backend).unwrap();
            let (status, trace) = emu.run(10_000).unwrap();
            let x = &entry.expected;
            assert_eq!(
                matches!(status, HaltStatus::Halted { .. }),
                x.halted,
                "{} on {backend}",
                entry.name
            );
            assert_eq!(
                trace.len() as u64,
                x.iterations,
                "{} on {backend}",
                entry.name
            );
            assert_eq!(
                trace.iter().filter(|r| r.branch_taken()).count(),
                x.branches_taken
            );
            for (name, &value) in &x.data {
                assert_eq!(
                    emu.word(p.slot_of(name).unwrap()).unwrap(),
                    value,
                    "{}.{name}",
                    entry.name
                );
            }
        }
    }
}

#[test]
fn listings_reassemble_to_the_same_image() {
    let cfg = MachineConfig::default();
    for entry in corpus() {
        let p = assemble_and_resolve(entry.source, &cfg).unwrap();
        let again = assemble_and_resolve(&disassemble(&p), &cfg).unwrap();
        assert_eq!(p.image().unwrap(), again.image().unwrap(), "{}", entry.name);
        assert_eq!(disassemble(&again), disassemble(&p));
    }
}

#[test]
fn corpus_runs_at_a_smaller_configuration() {
    let cfg = MachineConfig::new(5, 8, 16, 16).unwrap();
    for entry in corpus() {
        let image = assemble_and_resolve(entry.source, &cfg)
            .unwrap()
            .image()
            .unwrap();
        let mut net = Emulator::new(&image, Backend::Mlp).unwrap();
        let mut oracle = Emulator::new(&image, Backend::Oracle).unwrap();
        assert_eq!(
            net.run(1000).unwrap(),
            oracle.run(1000).unwrap(),
            "{}",
            entry.name
        );
    }
}

const SMALL: MachineConfig = MachineConfig {
    w: 4,
    d: 4,
    k: 6,
    m: 8,
};

fn program_strategy() -> impl Strategy<Value = (Vec<(usize, usize, usize)>, Vec<i64>)> {
    (1usize..SMALL.m).prop_flat_map(|len| {
        (
            prop::collection::vec((0..SMALL.k, 0..SMALL.k, 0..=len), len),
            prop::collection::vec(-8i64..=7, SMALL.k),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_programs_trace_like_the_oracle((code, data) in program_strategy()) {
        let program: Vec<Instruction> = code
            .iter()
            .map(|&(a, b, c)| Instruction::new(a, b, SMALL.code_slot(c)))
            .collect();
        let mut image = MemoryImage::build(&SMALL, &program, &[]).unwrap();
        image.data = data;
        let mut oracle = Emulator::new(&image, Backend::Oracle).unwrap();
        let expected = oracle.run(40).unwrap();
        for backend in [Backend::Mlp, Backend::MlpLowered] {
            let mut net = Emulator::new(&image, backend).unwrap();
            prop_assert_eq!(&net.run(40).unwrap(), &expected);
            prop_assert_eq!(net.data().unwrap(), oracle.data().unwrap());
        }
    }
}
