//! Per-iteration execution records shared by every backend, written as JSON
//! lines with a fixed field order.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// 1-based.
    pub iteration: u64,
    /// Slot of the instruction executed in this iteration.
    pub pc_slot: usize,
    /// `[a, b, c]`.
    pub instruction: [usize; 3],
    pub written_slot: usize,
    pub written_value: i64,
    /// +1 when the written value is `<= 0` (branch taken), else -1.
    pub flag: i64,
    /// The PC now points at the EOF slot.
    pub halted: bool,
}

impl TraceRecord {
    pub fn branch_taken(&self) -> bool {
        self.flag == 1
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace records always serialize")
    }
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[TraceRecord]) -> io::Result<()> {
    for r in records {
        writeln!(out, "{}", r.to_json())?;
    }
    Ok(())
}

pub fn to_jsonl(records: &[TraceRecord]) -> String {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, records).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

/// Index of the first record where the traces differ (a missing record counts).
pub fn first_divergence(left: &[TraceRecord], right: &[TraceRecord]) -> Option<usize> {
    left.iter()
        .zip(right)
        .position(|(a, b)| a != b)
        .or_else(|| (left.len() != right.len()).then(|| left.len().min(right.len())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(iteration: u64) -> TraceRecord {
        TraceRecord {
            iteration,
            pc_slot: 8,
            instruction: [1, 2, 9],
            written_slot: 2,
            written_value: -1,
            flag: 1,
            halted: false,
        }
    }

    #[test]
    fn field_order_is_stable() {
        assert_eq!(
            rec(1).to_json(),
            r#"{"iteration":1,"pc_slot":8,"instruction":[1,2,9],"written_slot":2,"written_value":-1,"flag":1,"halted":false}"#
        );
        assert_eq!(to_jsonl(&[rec(1), rec(2)]).lines().count(), 2);
    }

    #[test]
    fn divergence() {
        let a = vec![rec(1), rec(2)];
        let mut b = a.clone();
        assert_eq!(first_divergence(&a, &b), None);
        b[1].written_value = 3;
        assert_eq!(first_divergence(&a, &b), Some(1));
        assert_eq!(first_divergence(&a, &a[..1]), Some(1));
    }
}
