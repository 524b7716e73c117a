//! Rewrites every `Gate` into plain affine+ReLU form.
//!
//! For a gate `g` in {0, 1} and a value `x` with `|x| <= B`:
//!
//! ```text
//! g * x = ReLU(x + B(g - 1)) - ReLU(-x + B(g - 1))
//! ```
//!
//! which is one `AffineRelu` of doubled width over `[x; g]` followed by a
//! linear combine that the layer accounting absorbs.

use super::bounds::{value_intervals, Interval};
use super::layers::counted_layers;
use super::{
    AffineMap, Cell, IrError, ProgramBuilder, RouteSource, SparseMatrix, StepKind, TensorProgram,
    ValueId,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoweringReport {
    pub gates_lowered: usize,
    pub layers_before: u32,
    pub layers_after: u32,
}

impl LoweringReport {
    /// Each lowered gate becomes one new counted layer.
    pub fn layers_added(&self) -> i64 {
        self.layers_after as i64 - self.layers_before as i64
    }
}

pub fn lower_gates(p: &TensorProgram) -> Result<TensorProgram, IrError> {
    lower_gates_with_report(p).map(|(q, _)| q)
}

pub fn lower_gates_with_report(
    p: &TensorProgram,
) -> Result<(TensorProgram, LoweringReport), IrError> {
    let bound = p.input_bound.ok_or_else(|| IrError::Lowering {
        path: p.name.clone(),
        reason: "program declares no input bound".into(),
    })?;
    let mut gates = 0;
    let lowered = lower(
        p,
        vec![Interval::symmetric(bound); p.input_len],
        &p.name,
        &mut gates,
    )?;
    let report = LoweringReport {
        gates_lowered: gates,
        layers_before: counted_layers(p),
        layers_after: counted_layers(&lowered),
    };
    Ok((lowered, report))
}

fn lower(
    p: &TensorProgram,
    input: Vec<Interval>,
    path: &str,
    gates: &mut usize,
) -> Result<TensorProgram, IrError> {
    let start = match p.input_bound {
        Some(b) => vec![Interval::symmetric(b); p.input_len],
        None if p.iterations() > 1 => {
            return Err(IrError::Lowering {
                path: path.to_string(),
                reason: "looped program declares no input bound".into(),
            })
        }
        None => input,
    };
    let intervals = value_intervals(p, start);
    let mut b = ProgramBuilder::new(p.name.clone(), p.input_len).input_bound(p.input_bound);
    // old value id -> new value id
    let mut map = vec![ValueId::INPUT];
    for (i, step) in p.steps.iter().enumerate() {
        let inputs: Vec<ValueId> = step.inputs.iter().map(|v| map[v.0]).collect();
        let new = match &step.kind {
            StepKind::Gate => {
                let here = format!("{path}/step[{i}]");
                let g = &intervals[step.inputs[0].0];
                if let Some(bad) = g.iter().find(|iv| !iv.within(0, 1)) {
                    return Err(IrError::Lowering {
                        path: here,
                        reason: format!(
                            "gate branch ranges over [{}, {}], not {{0, 1}}",
                            bad.lo, bad.hi
                        ),
                    });
                }
                let big_b = intervals[step.inputs[1].0]
                    .iter()
                    .map(|iv| iv.magnitude())
                    .max()
                    .unwrap_or(0)
                    .max(1);
                *gates += 1;
                emit_lowered_gate(&mut b, inputs[0], inputs[1], step.out_len, big_b)
            }
            StepKind::Subprogram(body) => {
                let here = format!("{path}/{}", body.name);
                let lowered = lower(body, intervals[step.inputs[0].0].clone(), &here, gates)?;
                b.subprogram(inputs[0], lowered)
            }
            other => b.push(other.clone(), inputs, step.out_len),
        };
        map.push(new);
    }
    let mut q = b.finish(map[p.output.0]);
    q.loop_spec = p.loop_spec;
    q.declared_layers = p.declared_layers;
    Ok(q)
}

fn emit_lowered_gate(
    b: &mut ProgramBuilder,
    g: ValueId,
    x: ValueId,
    n: usize,
    big_b: Cell,
) -> ValueId {
    let cat = b.route(
        &[x, g],
        (0..n)
            .map(|i| RouteSource::Cell {
                operand: 0,
                index: i,
            })
            .chain((0..n).map(|i| RouteSource::Cell {
                operand: 1,
                index: i,
            }))
            .collect(),
    );
    let mut t = Vec::with_capacity(4 * n);
    for i in 0..n {
        t.push((i, i, 1));
        t.push((i, n + i, big_b));
        t.push((n + i, i, -1));
        t.push((n + i, n + i, big_b));
    }
    let halves = b.affine_relu(
        cat,
        AffineMap::new(
            SparseMatrix::from_triplets(2 * n, 2 * n, t),
            vec![-big_b; 2 * n],
        ),
    );
    let combine =
        SparseMatrix::from_triplets(n, 2 * n, (0..n).flat_map(|i| [(i, i, 1), (i, n + i, -1)]));
    b.affine(halves, AffineMap::linear(combine))
}
