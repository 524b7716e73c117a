//! Weight constructions for the machine primitives: read, write, full adder,
//! word add/subtract, the `<= 0` flag and conditional branching.
//!
//! Every circuit maps a whole machine state (see [`StateLayout`]) to a whole
//! machine state and touches only its documented output cells. Word-level
//! circuits are loops whose body works on column 0 and then rotates the
//! columns it touched, so after `d` iterations every column has been visited
//! once and all rows are back in place.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{
    address_capacity, decode_address, decode_word, encode_address, encode_word, AddressCode,
    EncodingError, Word,
};
use crate::ir::{AffineMap, Cell, ProgramBuilder, SparseMatrix, TensorProgram, ValueId};

pub const MAX_ADDRESS_WIDTH: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CircuitError {
    #[error("{slots} slots do not fit in {w}-bit addresses (capacity {capacity})")]
    Capacity {
        slots: usize,
        w: usize,
        capacity: usize,
    },
    #[error("word width {0} is outside 2..=63")]
    WordWidth(usize),
    #[error("address width {0} is outside 1..={MAX_ADDRESS_WIDTH}")]
    AddressWidth(usize),
}

/// Sizes shared by every construction: address width `w`, word width `d`,
/// and the unified slot table (data slots first, then instruction slots).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CircuitParams {
    pub w: usize,
    pub d: usize,
    pub data_slots: usize,
    pub code_slots: usize,
}

impl CircuitParams {
    pub fn new(
        w: usize,
        d: usize,
        data_slots: usize,
        code_slots: usize,
    ) -> Result<Self, CircuitError> {
        if !(1..=MAX_ADDRESS_WIDTH).contains(&w) {
            return Err(CircuitError::AddressWidth(w));
        }
        if !(2..=63).contains(&d) {
            return Err(CircuitError::WordWidth(d));
        }
        let slots = data_slots + code_slots;
        let capacity = address_capacity(w);
        if slots > capacity {
            return Err(CircuitError::Capacity { slots, w, capacity });
        }
        Ok(CircuitParams {
            w,
            d,
            data_slots,
            code_slots,
        })
    }

    pub fn slot_count(&self) -> usize {
        self.data_slots + self.code_slots
    }

    pub fn slot_table(&self) -> Vec<AddressCode> {
        (0..self.slot_count())
            .map(|s| encode_address(s, self.w).expect("validated capacity"))
            .collect()
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout {
            w: self.w,
            d: self.d,
            data_slots: self.data_slots,
            code_slots: self.code_slots,
        }
    }
}

/// Row layout of the `rows x d` state matrix, flattened row-major.
///
/// ```text
/// row 0                      r_c    carry
/// row 1                      r_d1   data register (one word)
/// row 2                      r_d2   data register (one word)
/// rows 3 ..   3+w            r_a1   address registers, each bit row
/// rows 3+w .. 3+2w           r_a2   replicated across all d columns
/// rows 3+2w.. 3+3w           r_a3
/// rows 3+3w.. 3+4w           r_pc   program counter
/// next data_slots rows       one word per data slot
/// next 3w rows per code slot instruction [a; b; c], replicated across columns
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StateLayout {
    pub w: usize,
    pub d: usize,
    pub data_slots: usize,
    pub code_slots: usize,
}

impl StateLayout {
    pub const R_C: usize = 0;
    pub const R_D1: usize = 1;
    pub const R_D2: usize = 2;

    pub fn r_a1(&self) -> usize {
        3
    }

    pub fn r_a2(&self) -> usize {
        3 + self.w
    }

    pub fn r_a3(&self) -> usize {
        3 + 2 * self.w
    }

    pub fn r_pc(&self) -> usize {
        3 + 3 * self.w
    }

    pub fn scratchpad_rows(&self) -> usize {
        3 + 4 * self.w
    }

    pub fn data_row(&self, slot: usize) -> usize {
        debug_assert!(slot < self.data_slots);
        self.scratchpad_rows() + slot
    }

    /// First of the `3w` rows holding the instruction in unified slot `slot`.
    pub fn code_row(&self, slot: usize) -> usize {
        debug_assert!(self.code_range().contains(&slot));
        self.scratchpad_rows() + self.data_slots + 3 * self.w * (slot - self.data_slots)
    }

    pub fn data_range(&self) -> Range<usize> {
        0..self.data_slots
    }

    pub fn code_range(&self) -> Range<usize> {
        self.data_slots..self.data_slots + self.code_slots
    }

    pub fn rows(&self) -> usize {
        self.scratchpad_rows() + self.data_slots + 3 * self.w * self.code_slots
    }

    /// Total number of cells.
    pub fn len(&self) -> usize {
        self.rows() * self.d
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell(&self, row: usize, col: usize) -> usize {
        row * self.d + col
    }

    pub fn row_cells(&self, row: usize) -> Range<usize> {
        row * self.d..(row + 1) * self.d
    }

    /// All-(-1) state: zero words, address 0 everywhere.
    pub fn blank_state(&self) -> Vec<Cell> {
        vec![-1; self.len()]
    }

    pub fn set_word(
        &self,
        state: &mut [Cell],
        row: usize,
        value: i64,
    ) -> Result<(), EncodingError> {
        let cells = encode_word(value, self.d)?.cells();
        state[self.row_cells(row)].copy_from_slice(&cells);
        Ok(())
    }

    pub fn word(&self, state: &[Cell], row: usize) -> Result<i64, EncodingError> {
        Ok(decode_word(&Word::from_cells(&state[self.row_cells(row)])?))
    }

    /// Writes `slot`'s code into the `w` rows starting at `start`, in every column.
    pub fn set_address(
        &self,
        state: &mut [Cell],
        start: usize,
        slot: usize,
    ) -> Result<(), EncodingError> {
        let code = encode_address(slot, self.w)?;
        for (i, &bit) in code.cells().iter().enumerate() {
            state[self.row_cells(start + i)].fill(bit);
        }
        Ok(())
    }

    /// Decodes the address held in column `col` of the `w` rows starting at `start`.
    pub fn address(
        &self,
        state: &[Cell],
        start: usize,
        col: usize,
    ) -> Result<usize, EncodingError> {
        let cells: Vec<Cell> = (0..self.w)
            .map(|i| state[self.cell(start + i, col)])
            .collect();
        Ok(decode_address(&AddressCode::from_cells(&cells)?))
    }

    pub fn set_instruction(
        &self,
        state: &mut [Cell],
        slot: usize,
        (a, b, c): (usize, usize, usize),
    ) -> Result<(), EncodingError> {
        let row = self.code_row(slot);
        self.set_address(state, row, a)?;
        self.set_address(state, row + self.w, b)?;
        self.set_address(state, row + 2 * self.w, c)
    }

    /// The `(a, b, c)` triple stored in code slot `slot`, read from column 0.
    pub fn instruction(
        &self,
        state: &[Cell],
        slot: usize,
    ) -> Result<(usize, usize, usize), EncodingError> {
        let row = self.code_row(slot);
        Ok((
            self.address(state, row, 0)?,
            self.address(state, row + self.w, 0)?,
            self.address(state, row + 2 * self.w, 0)?,
        ))
    }
}

fn erase(b: &mut ProgramBuilder, x: ValueId, n: usize, cells: &[usize]) -> ValueId {
    let mut keep = vec![true; n];
    for &c in cells {
        keep[c] = false;
    }
    let m = SparseMatrix::from_triplets(n, n, (0..n).filter(|&i| keep[i]).map(|i| (i, i, 1)));
    b.affine(x, AffineMap::linear(m))
}

/// Affine map from `v` into a full state vector with the given entries and bias.
fn place(
    b: &mut ProgramBuilder,
    v: ValueId,
    n: usize,
    entries: Vec<(usize, usize, Cell)>,
    bias: &[(usize, Cell)],
) -> ValueId {
    let cols = b.len_of(v);
    let mut full = vec![0; n];
    for &(i, c) in bias {
        full[i] += c;
    }
    b.affine(
        v,
        AffineMap::new(SparseMatrix::from_triplets(n, cols, entries), full),
    )
}

/// Identity on the state except `copies` (`dst <- src`) and `consts` (`dst <- value`).
fn rewire(
    b: &mut ProgramBuilder,
    x: ValueId,
    n: usize,
    copies: &[(usize, usize)],
    consts: &[(usize, Cell)],
) -> ValueId {
    let mut source: Vec<Option<usize>> = (0..n).map(Some).collect();
    let mut bias = vec![0; n];
    for &(dst, src) in copies {
        source[dst] = Some(src);
    }
    for &(dst, v) in consts {
        source[dst] = None;
        bias[dst] = v;
    }
    let t = source
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|s| (i, s, 1)));
    b.affine(
        x,
        AffineMap::new(SparseMatrix::from_triplets(n, n, t), bias),
    )
}

fn broadcast(
    b: &mut ProgramBuilder,
    x: ValueId,
    indices: impl IntoIterator<Item = usize>,
) -> ValueId {
    let idx: Vec<usize> = indices.into_iter().collect();
    b.select(x, &idx)
}

/// Shifts every listed row one column left (column 0 wraps to column d-1).
fn rotate_columns(
    b: &mut ProgramBuilder,
    x: ValueId,
    layout: &StateLayout,
    rows: &[usize],
) -> ValueId {
    let d = layout.d;
    let mut src: Vec<usize> = (0..layout.len()).collect();
    for &r in rows {
        for j in 0..d {
            src[layout.cell(r, j)] = layout.cell(r, (j + 1) % d);
        }
    }
    b.select(x, &src)
}

/// Shifts the `count` rows starting at `start` up by one (the first wraps to the last).
fn rotate_rows(
    b: &mut ProgramBuilder,
    x: ValueId,
    layout: &StateLayout,
    start: usize,
    count: usize,
) -> ValueId {
    let mut src: Vec<usize> = (0..layout.len()).collect();
    for i in 0..count {
        for j in 0..layout.d {
            src[layout.cell(start + i, j)] = layout.cell(start + (i + 1) % count, j);
        }
    }
    b.select(x, &src)
}

/// Matcher rows `ReLU(code(s) . q - (w - 1))` for each slot, with `q` the
/// address register starting at `addr_row`, column 0.
fn push_matcher_rows(
    layout: &StateLayout,
    addr_row: usize,
    slots: Range<usize>,
    triplets: &mut Vec<(usize, usize, Cell)>,
    bias: &mut Vec<Cell>,
) {
    let w = layout.w;
    for s in slots {
        let row = bias.len();
        let code = encode_address(s, w).expect("slot within capacity").cells();
        for (i, &bit) in code.iter().enumerate() {
            triplets.push((row, layout.cell(addr_row + i, 0), bit));
        }
        bias.push(-(w as Cell - 1));
    }
}

/// One read port: each `(dest, sources)` pair copies `sources[k]` into
/// `dest`, where `k` indexes `slots` and is chosen by the address register.
struct ReadPort {
    addr_row: usize,
    slots: Range<usize>,
    bits: Vec<(usize, Vec<usize>)>,
}

fn read_ports(
    b: &mut ProgramBuilder,
    x: ValueId,
    layout: &StateLayout,
    ports: &[ReadPort],
) -> ValueId {
    let n = layout.len();
    let dests: Vec<usize> = ports
        .iter()
        .flat_map(|p| p.bits.iter().map(|&(d, _)| d))
        .collect();
    let cleared = erase(b, x, n, &dests);

    let mut t = Vec::new();
    let mut bias = Vec::new();
    let mut offsets = Vec::new();
    for p in ports {
        offsets.push(bias.len());
        push_matcher_rows(layout, p.addr_row, p.slots.clone(), &mut t, &mut bias);
    }
    let rows = bias.len();
    let e = b.affine_relu(
        x,
        AffineMap::new(SparseMatrix::from_triplets(rows, n, t), bias),
    );

    let mut gate_src = Vec::new();
    let mut value_src = Vec::new();
    let mut readout = Vec::new();
    for (p, &off) in ports.iter().zip(&offsets) {
        for (dest, sources) in &p.bits {
            for (k, &src) in sources.iter().enumerate() {
                readout.push((*dest, gate_src.len(), 1));
                gate_src.push(off + k);
                value_src.push(src);
            }
        }
    }
    let g = broadcast(b, e, gate_src);
    let v = broadcast(b, x, value_src);
    let picked = b.gate(g, v);
    let r = place(b, picked, n, readout, &[]);
    b.add(&[cleared, r])
}

/// `targets[k] <- source` for the slot `k` selected by the address register;
/// every other target keeps its value.
struct WritePort {
    addr_row: usize,
    slots: Range<usize>,
    bits: Vec<(usize, Vec<usize>)>,
}

fn write_port(
    b: &mut ProgramBuilder,
    x: ValueId,
    layout: &StateLayout,
    port: &WritePort,
) -> ValueId {
    let n = layout.len();
    let mut t = Vec::new();
    let mut bias = Vec::new();
    push_matcher_rows(layout, port.addr_row, port.slots.clone(), &mut t, &mut bias);
    let s = bias.len();
    let e = b.affine_relu(
        x,
        AffineMap::new(SparseMatrix::from_triplets(s, n, t), bias),
    );
    let not_e = b.affine(
        e,
        AffineMap::new(
            SparseMatrix::from_triplets(s, s, (0..s).map(|i| (i, i, -1))),
            vec![1; s],
        ),
    );

    let (mut gk, mut vk, mut gd, mut vd, mut readout, mut targets) = (
        Vec::new(),
        Vec::new(),
        Vec::new(),
        Vec::new(),
        Vec::new(),
        Vec::new(),
    );
    for (source, slots) in &port.bits {
        for (k, &tgt) in slots.iter().enumerate() {
            readout.push((tgt, gk.len(), 1));
            targets.push(tgt);
            gk.push(k);
            vk.push(tgt);
            gd.push(k);
            vd.push(*source);
        }
    }
    let gk = broadcast(b, not_e, gk);
    let vk = broadcast(b, x, vk);
    let keep = b.gate(gk, vk);
    let gd = broadcast(b, e, gd);
    let vd = broadcast(b, x, vd);
    let deposit = b.gate(gd, vd);
    let merged = b.add(&[keep, deposit]);
    let r = place(b, merged, n, readout, &[]);
    let cleared = erase(b, x, n, &targets);
    b.add(&[cleared, r])
}

/// One full-adder lane: `sum <- a xor b xor carry`, `carry <- maj(a, b, carry)`.
/// `b` is `(cell, negate)`; `None` adds a constant 0 bit.
struct Lane {
    a: usize,
    b: Option<(usize, bool)>,
    carry: usize,
    sum: usize,
}

/// Three layers on `{0, 1}` signals:
///
/// ```text
/// L1: A = ReLU(a), B = ReLU(+-b), C = ReLU(c)
/// L2: A, B, C, c1 = ReLU(A + C - 1)
/// L3: x = ReLU(A + C - 2 c1), B, c1, c2 = ReLU(A + C - 2 c1 + B - 1)
/// sum = 2x + 2B - 4 c2 - 1, carry = 2 c1 + 2 c2 - 1
/// ```
///
/// `c1` and `c2` are never both 1, so their sum is the carry.
fn full_adder_lanes(b: &mut ProgramBuilder, x: ValueId, n: usize, lanes: &[Lane]) -> ValueId {
    let l = lanes.len();
    let mut t1 = Vec::new();
    for (i, lane) in lanes.iter().enumerate() {
        t1.push((3 * i, lane.a, 1));
        if let Some((cell, negate)) = lane.b {
            t1.push((3 * i + 1, cell, if negate { -1 } else { 1 }));
        }
        t1.push((3 * i + 2, lane.carry, 1));
    }
    let h1 = b.affine_relu(
        x,
        AffineMap::linear(SparseMatrix::from_triplets(3 * l, n, t1)),
    );

    let mut t2 = Vec::new();
    let mut b2 = vec![0; 4 * l];
    for i in 0..l {
        let (a, bb, c) = (3 * i, 3 * i + 1, 3 * i + 2);
        t2.extend([(4 * i, a, 1), (4 * i + 1, bb, 1), (4 * i + 2, c, 1)]);
        t2.extend([(4 * i + 3, a, 1), (4 * i + 3, c, 1)]);
        b2[4 * i + 3] = -1;
    }
    let h2 = b.affine_relu(
        h1,
        AffineMap::new(SparseMatrix::from_triplets(4 * l, 3 * l, t2), b2),
    );

    let mut t3 = Vec::new();
    let mut b3 = vec![0; 4 * l];
    for i in 0..l {
        let (a, bb, c, c1) = (4 * i, 4 * i + 1, 4 * i + 2, 4 * i + 3);
        t3.extend([(4 * i, a, 1), (4 * i, c, 1), (4 * i, c1, -2)]);
        t3.extend([(4 * i + 1, bb, 1), (4 * i + 2, c1, 1)]);
        t3.extend([
            (4 * i + 3, a, 1),
            (4 * i + 3, c, 1),
            (4 * i + 3, c1, -2),
            (4 * i + 3, bb, 1),
        ]);
        b3[4 * i + 3] = -1;
    }
    let h3 = b.affine_relu(
        h2,
        AffineMap::new(SparseMatrix::from_triplets(4 * l, 4 * l, t3), b3),
    );

    let mut out = Vec::new();
    let mut bias = Vec::new();
    let mut touched = Vec::new();
    for (i, lane) in lanes.iter().enumerate() {
        let (xv, bb, c1, c2) = (4 * i, 4 * i + 1, 4 * i + 2, 4 * i + 3);
        out.extend([(lane.sum, xv, 2), (lane.sum, bb, 2), (lane.sum, c2, -4)]);
        out.extend([(lane.carry, c1, 2), (lane.carry, c2, 2)]);
        bias.extend([(lane.sum, -1), (lane.carry, -1)]);
        touched.extend([lane.sum, lane.carry]);
    }
    let r = place(b, h3, n, out, &bias);
    let cleared = erase(b, x, n, &touched);
    b.add(&[cleared, r])
}

fn data_read_port(layout: &StateLayout, addr_row: usize, dest_row: usize) -> ReadPort {
    ReadPort {
        addr_row,
        slots: layout.data_range(),
        bits: vec![(
            layout.cell(dest_row, 0),
            layout
                .data_range()
                .map(|s| layout.cell(layout.data_row(s), 0))
                .collect(),
        )],
    }
}

fn data_write_port(layout: &StateLayout, addr_row: usize, source_row: usize) -> WritePort {
    WritePort {
        addr_row,
        slots: layout.data_range(),
        bits: vec![(
            layout.cell(source_row, 0),
            layout
                .data_range()
                .map(|s| layout.cell(layout.data_row(s), 0))
                .collect(),
        )],
    }
}

fn data_rows(layout: &StateLayout) -> impl Iterator<Item = usize> + '_ {
    layout.data_range().map(|s| layout.data_row(s))
}

/// Looped word read: each `(addr_row, dest_row)` pair loads the data word
/// addressed by that register into that register row.
pub(crate) fn read_word_stage(
    layout: &StateLayout,
    name: &str,
    pairs: &[(usize, usize)],
    declared: u32,
) -> TensorProgram {
    let mut b = ProgramBuilder::new(name, layout.len()).discrete_input();
    let x = b.input();
    let ports: Vec<ReadPort> = pairs
        .iter()
        .map(|&(a, r)| data_read_port(layout, a, r))
        .collect();
    let y = read_ports(&mut b, x, layout, &ports);
    let mut rows: Vec<usize> = pairs.iter().map(|&(_, r)| r).collect();
    rows.extend(data_rows(layout));
    let y = rotate_columns(&mut b, y, layout, &rows);
    b.finish(y)
        .with_loop(layout.d as u32)
        .with_declared_layers(declared)
}

pub(crate) fn write_word_stage(
    layout: &StateLayout,
    name: &str,
    addr_row: usize,
    source_row: usize,
    declared: u32,
) -> TensorProgram {
    let mut b = ProgramBuilder::new(name, layout.len()).discrete_input();
    let x = b.input();
    let y = write_port(
        &mut b,
        x,
        layout,
        &data_write_port(layout, addr_row, source_row),
    );
    let mut rows = vec![source_row];
    rows.extend(data_rows(layout));
    let y = rotate_columns(&mut b, y, layout, &rows);
    b.finish(y)
        .with_loop(layout.d as u32)
        .with_declared_layers(declared)
}

/// Looped instruction fetch: `[r_a1; r_a2; r_a3] <- code[r_pc]`, one column
/// per iteration.
pub(crate) fn fetch_stage(layout: &StateLayout) -> TensorProgram {
    let w = layout.w;
    let mut b = ProgramBuilder::new("fetch", layout.len()).discrete_input();
    let x = b.input();
    let port = ReadPort {
        addr_row: layout.r_pc(),
        slots: layout.code_range(),
        bits: (0..3 * w)
            .map(|k| {
                (
                    layout.cell(layout.r_a1() + k, 0),
                    layout
                        .code_range()
                        .map(|s| layout.cell(layout.code_row(s) + k, 0))
                        .collect(),
                )
            })
            .collect(),
    };
    let y = read_ports(&mut b, x, layout, &[port]);
    let rows: Vec<usize> = (layout.r_a1()..layout.r_a1() + 3 * w).collect();
    let y = rotate_columns(&mut b, y, layout, &rows);
    b.finish(y)
        .with_loop(layout.d as u32)
        .with_declared_layers(2)
}

/// `r_d1 <- r_d1 + r_d2` (or `r_d1 - r_d2` when `negate`), wrapping mod `2^d`:
/// a carry-in setup layer followed by `d` iterations of one full adder on column 0.
pub(crate) fn word_adder_stage(
    layout: &StateLayout,
    name: &str,
    negate: bool,
    declared: u32,
) -> TensorProgram {
    let n = layout.len();
    let carry = layout.cell(StateLayout::R_C, 0);

    let mut body = ProgramBuilder::new(format!("{name}.bit"), n).discrete_input();
    let x = body.input();
    let lane = Lane {
        a: layout.cell(StateLayout::R_D1, 0),
        b: Some((layout.cell(StateLayout::R_D2, 0), negate)),
        carry,
        sum: layout.cell(StateLayout::R_D1, 0),
    };
    let y = full_adder_lanes(&mut body, x, n, &[lane]);
    let y = rotate_columns(
        &mut body,
        y,
        layout,
        &[StateLayout::R_D1, StateLayout::R_D2],
    );
    let body = body.finish(y).with_loop(layout.d as u32);

    let mut b = ProgramBuilder::new(name, n).discrete_input();
    let x = b.input();
    // Two's complement negation is "invert, then add 1": the 1 is the carry-in.
    let s = rewire(&mut b, x, n, &[], &[(carry, if negate { 1 } else { -1 })]);
    let y = b.subprogram(s, body);
    b.finish(y).with_declared_layers(declared)
}

/// `r_a2 <- r_pc + 1 (mod 2^w)`: copy the PC with carry-in 1 on every
/// column, then `w` iterations of a half adder on the low bit row, one lane
/// per column, rotating the register rows.
pub(crate) fn increment_pc_stage(layout: &StateLayout) -> TensorProgram {
    let n = layout.len();
    let (w, d) = (layout.w, layout.d);
    let (pc, a2) = (layout.r_pc(), layout.r_a2());

    let mut body = ProgramBuilder::new("increment_pc.bit", n).discrete_input();
    let x = body.input();
    let lanes: Vec<Lane> = (0..d)
        .map(|j| Lane {
            a: layout.cell(a2, j),
            b: None,
            carry: layout.cell(StateLayout::R_C, j),
            sum: layout.cell(a2, j),
        })
        .collect();
    let y = full_adder_lanes(&mut body, x, n, &lanes);
    let y = rotate_rows(&mut body, y, layout, a2, w);
    let body = body.finish(y).with_loop(w as u32);

    let mut b = ProgramBuilder::new("increment_pc", n).discrete_input();
    let x = b.input();
    let copies: Vec<(usize, usize)> = (0..w)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| (layout.cell(a2 + i, j), layout.cell(pc + i, j)))
        .collect();
    let consts: Vec<(usize, Cell)> = (0..d)
        .map(|j| (layout.cell(StateLayout::R_C, j), 1))
        .collect();
    let s = rewire(&mut b, x, n, &copies, &consts);
    let y = b.subprogram(s, body);
    b.finish(y).with_declared_layers(6)
}

/// Rows `[s, z]` of the `<= 0` detector over the word in row `row`:
/// `s = ReLU(msb)` (negative), `z = ReLU(-sum(bits) - (d - 1))` (zero).
/// At most one is 1; `s + z = 1` iff the word is `<= 0`.
fn sign_or_zero(b: &mut ProgramBuilder, x: ValueId, layout: &StateLayout, row: usize) -> ValueId {
    let d = layout.d;
    let mut t = vec![(0, layout.cell(row, d - 1), 1)];
    t.extend((0..d).map(|j| (1, layout.cell(row, j), -1)));
    b.affine_relu(
        x,
        AffineMap::new(
            SparseMatrix::from_triplets(2, layout.len(), t),
            vec![0, -(d as Cell - 1)],
        ),
    )
}

fn pc_cells(layout: &StateLayout, start: usize) -> Vec<usize> {
    (0..layout.w)
        .flat_map(|i| layout.row_cells(start + i))
        .collect()
}

/// Flag and branch fused: `r_pc <- r_a2 + (s + z) * (r_a3 - r_a2)` where
/// `s + z` is the `<= 0` indicator of `r_d1`. Each indicator gates the
/// difference separately, so every gate is provably `{0, 1}`.
pub(crate) fn branch_stage(layout: &StateLayout) -> TensorProgram {
    let n = layout.len();
    let pc = pc_cells(layout, layout.r_pc());
    let a2 = pc_cells(layout, layout.r_a2());
    let a3 = pc_cells(layout, layout.r_a3());
    let m = pc.len();

    let mut b = ProgramBuilder::new("branch", n).discrete_input();
    let x = b.input();
    let h = sign_or_zero(&mut b, x, layout, StateLayout::R_D1);
    let diff = b.affine(
        x,
        AffineMap::linear(SparseMatrix::from_triplets(
            m,
            n,
            (0..m).flat_map(|i| [(i, a3[i], 1), (i, a2[i], -1)]),
        )),
    );
    let copies: Vec<(usize, usize)> = pc.iter().copied().zip(a2.iter().copied()).collect();
    let base = rewire(&mut b, x, n, &copies, &[]);
    let gs = broadcast(&mut b, h, std::iter::repeat_n(0, m));
    let gz = broadcast(&mut b, h, std::iter::repeat_n(1, m));
    let ts = b.gate(gs, diff);
    let tz = b.gate(gz, diff);
    let jump = b.add(&[ts, tz]);
    let r = place(
        &mut b,
        jump,
        n,
        (0..m).map(|i| (pc[i], i, 1)).collect(),
        &[],
    );
    let y = b.add(&[base, r]);
    b.finish(y).with_declared_layers(4)
}

/// `r_d1[0] <- mem[r_a1][0]`.
pub fn build_read_one_bit(params: &CircuitParams) -> TensorProgram {
    let layout = params.layout();
    let mut b = ProgramBuilder::new("read_one_bit", layout.len()).discrete_input();
    let x = b.input();
    let y = read_ports(
        &mut b,
        x,
        &layout,
        &[data_read_port(&layout, layout.r_a1(), StateLayout::R_D1)],
    );
    b.finish(y).with_declared_layers(2)
}

/// `r_d1 <- mem[r_a1]`, looped over the `d` columns.
pub fn build_read_word(params: &CircuitParams) -> TensorProgram {
    let layout = params.layout();
    read_word_stage(
        &layout,
        "read_word",
        &[(layout.r_a1(), StateLayout::R_D1)],
        2,
    )
}

/// `mem[r_a2][0] <- r_d1[0]`.
pub fn build_write_one_bit(params: &CircuitParams) -> TensorProgram {
    let layout = params.layout();
    let mut b = ProgramBuilder::new("write_one_bit", layout.len()).discrete_input();
    let x = b.input();
    let y = write_port(
        &mut b,
        x,
        &layout,
        &data_write_port(&layout, layout.r_a2(), StateLayout::R_D1),
    );
    b.finish(y).with_declared_layers(2)
}

/// `mem[r_a2] <- r_d1`, looped over the `d` columns.
pub fn build_write_word(params: &CircuitParams) -> TensorProgram {
    let layout = params.layout();
    write_word_stage(&layout, "write_word", layout.r_a2(), StateLayout::R_D1, 2)
}

/// Column 0: `r_d1 <- r_d1 xor r_d2 xor r_c`, `r_c <- carry-out`.
pub fn build_full_adder(params: &CircuitParams) -> TensorProgram {
    let layout = params.layout();
    let n = layout.len();
    let mut b = ProgramBuilder::new("full_adder", n).discrete_input();
    let x = b.input();
    let lane = Lane {
        a: layout.cell(StateLayout::R_D1, 0),
        b: Some((layout.cell(StateLayout::R_D2, 0), false)),
        carry: layout.cell(StateLayout::R_C, 0),
        sum: layout.cell(StateLayout::R_D1, 0),
    };
    let y = full_adder_lanes(&mut b, x, n, &[lane]);
    b.finish(y).with_declared_layers(6)
}

/// `r_d1 <- wrap(r_d1 + r_d2)`; `r_c` is scratch.
pub fn build_add_word(params: &CircuitParams) -> TensorProgram {
    word_adder_stage(&params.layout(), "add_word", false, 6)
}

/// `r_d1 <- wrap(r_d1 - r_d2)`; `r_c` is scratch.
pub fn build_sub_word(params: &CircuitParams) -> TensorProgram {
    word_adder_stage(&params.layout(), "sub_word", true, 7)
}

/// `r_c[0] <- +1` if `r_d1 <= 0`, else `-1`.
pub fn build_leq_zero_flag(params: &CircuitParams) -> TensorProgram {
    let layout = params.layout();
    let n = layout.len();
    let flag = layout.cell(StateLayout::R_C, 0);
    let mut b = ProgramBuilder::new("leq_zero_flag", n).discrete_input();
    let x = b.input();
    let h = sign_or_zero(&mut b, x, &layout, StateLayout::R_D1);
    let r = place(
        &mut b,
        h,
        n,
        vec![(flag, 0, 2), (flag, 1, 2)],
        &[(flag, -1)],
    );
    let cleared = erase(&mut b, x, n, &[flag]);
    let y = b.add(&[cleared, r]);
    b.finish(y).with_declared_layers(2)
}

/// With the flag in `r_c[0]`: `r_pc <- r_a3` (jump target) if the flag is
/// +1, else `r_pc <- r_a2` (next instruction), as
/// `ReLU(flag) * x1 + ReLU(-flag) * x2`.
pub fn build_cond_branch(params: &CircuitParams) -> TensorProgram {
    let layout = params.layout();
    let n = layout.len();
    let flag = layout.cell(StateLayout::R_C, 0);
    let pc = pc_cells(&layout, layout.r_pc());
    let m = pc.len();
    let select = |b: &mut ProgramBuilder, x: ValueId, from: &[usize]| {
        let t = from.iter().enumerate().map(|(i, &c)| (i, c, 1));
        b.affine(x, AffineMap::linear(SparseMatrix::from_triplets(m, n, t)))
    };

    let mut b = ProgramBuilder::new("cond_branch", n).discrete_input();
    let x = b.input();
    let x1 = select(&mut b, x, &pc_cells(&layout, layout.r_a3()));
    let x2 = select(&mut b, x, &pc_cells(&layout, layout.r_a2()));
    let g = b.affine_relu(
        x,
        AffineMap::linear(SparseMatrix::from_triplets(
            2,
            n,
            [(0, flag, 1), (1, flag, -1)],
        )),
    );
    let g1 = broadcast(&mut b, g, std::iter::repeat_n(0, m));
    let g2 = broadcast(&mut b, g, std::iter::repeat_n(1, m));
    let t1 = b.gate(g1, x1);
    let t2 = b.gate(g2, x2);
    let chosen = b.add(&[t1, t2]);
    let r = place(
        &mut b,
        chosen,
        n,
        (0..m).map(|i| (pc[i], i, 1)).collect(),
        &[],
    );
    let cleared = erase(&mut b, x, n, &pc);
    let y = b.add(&[cleared, r]);
    b.finish(y).with_declared_layers(4)
}
