pub mod asm;
pub mod circuits;
pub mod difftest;
pub mod emulator;
pub mod encoding;
pub mod ir;
pub mod machine;
pub mod oracle;
pub mod trace;
