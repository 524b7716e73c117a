//! Codecs between host integers and the ±1 bit representation used by the
//! network state: bits, two's-complement words, address codes, instructions.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodingError {
    #[error("value {value} does not fit in {width} bits; valid range is [{min}, {max}]")]
    Range {
        value: i64,
        width: usize,
        min: i64,
        max: i64,
    },
    #[error("slot {slot} does not fit in a {width}-bit address (capacity {capacity})")]
    Capacity {
        slot: usize,
        width: usize,
        capacity: usize,
    },
    #[error("width mismatch: {left} vs {right}")]
    Dimension { left: usize, right: usize },
    #[error("invalid bit value {0}; bits must be -1 or +1")]
    InvalidBit(i64),
    #[error("invalid width {0}")]
    Width(usize),
}

/// A single ±1 bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bit(i8);

impl Bit {
    pub const ONE: Bit = Bit(1);
    pub const ZERO: Bit = Bit(-1);

    pub fn new(value: i64) -> Result<Self, EncodingError> {
        match value {
            1 => Ok(Bit::ONE),
            -1 => Ok(Bit::ZERO),
            other => Err(EncodingError::InvalidBit(other)),
        }
    }

    pub fn from_bool(set: bool) -> Self {
        if set {
            Bit::ONE
        } else {
            Bit::ZERO
        }
    }

    pub fn value(self) -> i64 {
        self.0 as i64
    }

    pub fn is_set(self) -> bool {
        self.0 == 1
    }
}

fn check_word_width(d: usize) -> Result<(), EncodingError> {
    if (2..=63).contains(&d) {
        Ok(())
    } else {
        Err(EncodingError::Width(d))
    }
}

/// Smallest and largest integer representable in a `d`-bit two's-complement word.
pub fn word_range(d: usize) -> (i64, i64) {
    let half = 1i64 << (d - 1);
    (-half, half - 1)
}

/// A `d`-bit two's-complement word. `bits[0]` is the least significant bit,
/// `bits[d - 1]` the sign bit (+1 means negative).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Word {
    bits: Vec<Bit>,
}

impl Word {
    pub fn from_bits(bits: Vec<Bit>) -> Result<Self, EncodingError> {
        check_word_width(bits.len())?;
        Ok(Word { bits })
    }

    /// Builds a word from raw ±1 cells, LSB first.
    pub fn from_cells(cells: &[i64]) -> Result<Self, EncodingError> {
        let bits = cells
            .iter()
            .map(|&c| Bit::new(c))
            .collect::<Result<_, _>>()?;
        Word::from_bits(bits)
    }

    pub fn bits(&self) -> &[Bit] {
        &self.bits
    }

    pub fn width(&self) -> usize {
        self.bits.len()
    }

    pub fn cells(&self) -> Vec<i64> {
        self.bits.iter().map(|b| b.value()).collect()
    }
}

pub fn encode_word(x: i64, d: usize) -> Result<Word, EncodingError> {
    check_word_width(d)?;
    let (min, max) = word_range(d);
    if x < min || x > max {
        return Err(EncodingError::Range {
            value: x,
            width: d,
            min,
            max,
        });
    }
    let raw = (x as u64) & ((1u64 << d) - 1);
    let bits = (0..d).map(|i| Bit::from_bool(raw >> i & 1 == 1)).collect();
    Ok(Word { bits })
}

pub fn decode_word(word: &Word) -> i64 {
    let d = word.width();
    let magnitude: i64 = word.bits[..d - 1]
        .iter()
        .enumerate()
        .filter(|(_, b)| b.is_set())
        .map(|(i, _)| 1i64 << i)
        .sum();
    if word.bits[d - 1].is_set() {
        magnitude - (1i64 << (d - 1))
    } else {
        magnitude
    }
}

/// A `w`-bit address: the LSB-first unsigned binary form of a slot index.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AddressCode {
    bits: Vec<Bit>,
}

impl AddressCode {
    pub fn from_bits(bits: Vec<Bit>) -> Self {
        AddressCode { bits }
    }

    pub fn from_cells(cells: &[i64]) -> Result<Self, EncodingError> {
        let bits = cells
            .iter()
            .map(|&c| Bit::new(c))
            .collect::<Result<_, _>>()?;
        Ok(AddressCode { bits })
    }

    pub fn bits(&self) -> &[Bit] {
        &self.bits
    }

    pub fn width(&self) -> usize {
        self.bits.len()
    }

    pub fn cells(&self) -> Vec<i64> {
        self.bits.iter().map(|b| b.value()).collect()
    }
}

impl fmt::Display for AddressCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.bits {
            f.write_str(if b.is_set() { "+" } else { "-" })?;
        }
        Ok(())
    }
}

pub fn address_capacity(w: usize) -> usize {
    1usize << w
}

pub fn encode_address(slot: usize, w: usize) -> Result<AddressCode, EncodingError> {
    if w == 0 || w >= usize::BITS as usize {
        return Err(EncodingError::Width(w));
    }
    if slot >= address_capacity(w) {
        return Err(EncodingError::Capacity {
            slot,
            width: w,
            capacity: address_capacity(w),
        });
    }
    let bits = (0..w).map(|i| Bit::from_bool(slot >> i & 1 == 1)).collect();
    Ok(AddressCode { bits })
}

pub fn decode_address(code: &AddressCode) -> usize {
    code.bits
        .iter()
        .enumerate()
        .filter(|(_, b)| b.is_set())
        .map(|(i, _)| 1usize << i)
        .sum()
}

/// Inner product of two address codes. Equals the width iff the codes are equal.
pub fn match_score(q: &AddressCode, a: &AddressCode) -> Result<i64, EncodingError> {
    if q.width() != a.width() {
        return Err(EncodingError::Dimension {
            left: q.width(),
            right: a.width(),
        });
    }
    Ok(q.bits
        .iter()
        .zip(&a.bits)
        .map(|(x, y)| x.value() * y.value())
        .sum())
}

/// The three operand addresses of one SUBLEQ instruction, concatenated `[a, b, c]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InstructionCode {
    pub a: AddressCode,
    pub b: AddressCode,
    pub c: AddressCode,
}

impl InstructionCode {
    pub fn cells(&self) -> Vec<i64> {
        let mut out = self.a.cells();
        out.extend(self.b.cells());
        out.extend(self.c.cells());
        out
    }

    pub fn from_cells(cells: &[i64], w: usize) -> Result<Self, EncodingError> {
        if cells.len() != 3 * w {
            return Err(EncodingError::Dimension {
                left: cells.len(),
                right: 3 * w,
            });
        }
        Ok(InstructionCode {
            a: AddressCode::from_cells(&cells[..w])?,
            b: AddressCode::from_cells(&cells[w..2 * w])?,
            c: AddressCode::from_cells(&cells[2 * w..])?,
        })
    }

    pub fn slots(&self) -> (usize, usize, usize) {
        (
            decode_address(&self.a),
            decode_address(&self.b),
            decode_address(&self.c),
        )
    }
}

pub fn encode_instruction(
    a: usize,
    b: usize,
    c: usize,
    w: usize,
) -> Result<InstructionCode, EncodingError> {
    Ok(InstructionCode {
        a: encode_address(a, w)?,
        b: encode_address(b, w)?,
        c: encode_address(c, w)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cells(word: &Word) -> Vec<i64> {
        word.cells()
    }

    #[test]
    fn encode_word_examples() {
        assert_eq!(cells(&encode_word(5, 4).unwrap()), vec![1, -1, 1, -1]);
        assert_eq!(cells(&encode_word(0, 4).unwrap()), vec![-1, -1, -1, -1]);
        assert_eq!(cells(&encode_word(-8, 4).unwrap()), vec![-1, -1, -1, 1]);
    }

    #[test]
    fn encode_word_rejects_out_of_range() {
        let err = encode_word(8, 4).unwrap_err();
        assert_eq!(
            err,
            EncodingError::Range {
                value: 8,
                width: 4,
                min: -8,
                max: 7
            }
        );
        assert!(err.to_string().contains("[-8, 7]"));
        assert!(encode_word(-9, 4).is_err());
    }

    #[test]
    fn decode_word_examples() {
        assert_eq!(decode_word(&Word::from_cells(&[1, -1, 1, -1]).unwrap()), 5);
        assert_eq!(
            decode_word(&Word::from_cells(&[-1, -1, -1, -1]).unwrap()),
            0
        );
        assert_eq!(decode_word(&Word::from_cells(&[1, 1, 1, 1]).unwrap()), -1);
    }

    #[test]
    fn word_rejects_non_bits() {
        assert_eq!(
            Word::from_cells(&[1, 0, 1]).unwrap_err(),
            EncodingError::InvalidBit(0)
        );
        assert!(Word::from_cells(&[1]).is_err());
    }

    #[test]
    fn address_examples() {
        assert_eq!(encode_address(0, 3).unwrap().cells(), vec![-1, -1, -1]);
        assert_eq!(encode_address(5, 3).unwrap().cells(), vec![1, -1, 1]);
        assert_eq!(encode_address(7, 3).unwrap().cells(), vec![1, 1, 1]);
        for (cells, slot) in [([-1, -1, -1], 0), ([1, -1, 1], 5), ([1, 1, 1], 7)] {
            assert_eq!(
                decode_address(&AddressCode::from_cells(&cells).unwrap()),
                slot
            );
        }
        assert!(matches!(
            encode_address(8, 3),
            Err(EncodingError::Capacity { slot: 8, .. })
        ));
    }

    #[test]
    fn match_score_examples() {
        let code = |c: [i64; 3]| AddressCode::from_cells(&c).unwrap();
        assert_eq!(
            match_score(&code([1, -1, 1]), &code([1, -1, 1])).unwrap(),
            3
        );
        assert_eq!(match_score(&code([1, -1, 1]), &code([1, 1, 1])).unwrap(), 1);
        assert_eq!(
            match_score(&code([-1, -1, -1]), &code([1, 1, 1])).unwrap(),
            -3
        );
        let short = AddressCode::from_cells(&[1, 1]).unwrap();
        assert!(matches!(
            match_score(&short, &code([1, 1, 1])),
            Err(EncodingError::Dimension { .. })
        ));
    }

    #[test]
    fn instruction_examples() {
        assert_eq!(encode_instruction(0, 0, 0, 2).unwrap().cells(), vec![-1; 6]);
        assert_eq!(
            encode_instruction(1, 2, 3, 2).unwrap().cells(),
            vec![1, -1, -1, 1, 1, 1]
        );
        assert_eq!(encode_instruction(3, 3, 3, 2).unwrap().cells(), vec![1; 6]);
        assert!(encode_instruction(0, 4, 0, 2).is_err());
        let code = encode_instruction(1, 2, 3, 2).unwrap();
        assert_eq!(InstructionCode::from_cells(&code.cells(), 2).unwrap(), code);
        assert_eq!(code.slots(), (1, 2, 3));
    }

    #[test]
    fn matching_gap_is_exhaustive_up_to_width_ten() {
        for w in 1..=10usize {
            let codes: Vec<_> = (0..1usize << w)
                .map(|i| encode_address(i, w).unwrap())
                .collect();
            // Scores against a fixed query are enough per width; the gap is
            // symmetric under relabeling, so check every query for small w.
            let queries = if w <= 6 { codes.len() } else { 4 };
            for (i, q) in codes.iter().take(queries).enumerate() {
                for (j, a) in codes.iter().enumerate() {
                    let s = match_score(q, a).unwrap();
                    assert_eq!((s - w as i64).rem_euclid(2), 0);
                    if i == j {
                        assert_eq!(s, w as i64);
                    } else {
                        assert!(s <= w as i64 - 2, "w={w} i={i} j={j} s={s}");
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn word_round_trip(d in 2usize..=16, raw in any::<i64>()) {
            let (min, max) = word_range(d);
            let x = min + raw.rem_euclid(max - min + 1);
            let word = encode_word(x, d).unwrap();
            prop_assert_eq!(word.width(), d);
            prop_assert_eq!(decode_word(&word), x);
            prop_assert_eq!(word.bits()[d - 1].is_set(), x < 0);
        }

        #[test]
        fn address_round_trip(w in 1usize..=16, raw in any::<usize>()) {
            let slot = raw % (1usize << w);
            let code = encode_address(slot, w).unwrap();
            prop_assert_eq!(decode_address(&code), slot);
            prop_assert_eq!(match_score(&code, &code).unwrap(), w as i64);
        }
    }
}
