//! Tensor-program IR: a DAG of integer affine, ReLU, gate (Hadamard) and
//! routing steps, optionally looped, executed with exact integer arithmetic.

mod bounds;
mod export;
mod layers;
mod lower;
mod matrix;

pub use bounds::{bound_activations, ActivationBound, Interval, StepBound};
pub use export::{export_weights, import_weights, FORMAT_VERSION};
pub use layers::{counted_layers, layer_report, LayerReport};
pub use lower::{lower_gates, lower_gates_with_report, LoweringReport};
pub use matrix::SparseMatrix;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Every activation in the network is an exact integer.
pub type Cell = i64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IrError {
    #[error("{context}: expected length {expected}, found {found}")]
    Shape {
        context: String,
        expected: usize,
        found: usize,
    },
    #[error("step {step} references value {value} which is not yet defined")]
    InvalidReference { step: usize, value: usize },
    #[error("{0}")]
    Validation(String),
    #[error("program `{program}` requires inputs bounded by {bound}, got {found}")]
    BoundViolation {
        program: String,
        bound: Cell,
        found: Cell,
    },
    #[error("cannot lower gate at {path}: {reason}")]
    Lowering { path: String, reason: String },
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
}

/// Handle to a vector inside a program: `0` is the program input, `i + 1`
/// the output of step `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueId(pub usize);

impl ValueId {
    pub const INPUT: ValueId = ValueId(0);

    pub fn of_step(index: usize) -> Self {
        ValueId(index + 1)
    }

    pub fn step(self) -> Option<usize> {
        self.0.checked_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffineMap {
    pub weights: SparseMatrix,
    pub bias: Vec<Cell>,
}

impl AffineMap {
    pub fn new(weights: SparseMatrix, bias: Vec<Cell>) -> Self {
        AffineMap { weights, bias }
    }

    pub fn linear(weights: SparseMatrix) -> Self {
        let bias = vec![0; weights.rows()];
        AffineMap { weights, bias }
    }

    fn apply(&self, x: &[Cell]) -> Vec<Cell> {
        let mut y = self.weights.mul_vec(x);
        for (v, b) in y.iter_mut().zip(&self.bias) {
            *v += b;
        }
        y
    }
}

/// Where a routed output coordinate comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteSource {
    Zero,
    Cell { operand: usize, index: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepKind {
    /// `ReLU(W x + b)`: one network layer.
    AffineRelu(AffineMap),
    /// `W x + b` without activation.
    Affine(AffineMap),
    Relu,
    /// Coordinatewise product of `inputs[0]` (the gate) and `inputs[1]`.
    Gate,
    /// Coordinatewise sum of all inputs.
    Add,
    /// Selection, permutation, broadcast, or concatenation of input cells.
    Route(Vec<RouteSource>),
    Const(Vec<Cell>),
    /// A nested (possibly looped) program applied to `inputs[0]`.
    Subprogram(Box<TensorProgram>),
}

impl StepKind {
    pub fn name(&self) -> &'static str {
        match self {
            StepKind::AffineRelu(_) => "affine_relu",
            StepKind::Affine(_) => "affine",
            StepKind::Relu => "relu",
            StepKind::Gate => "gate",
            StepKind::Add => "add",
            StepKind::Route(_) => "route",
            StepKind::Const(_) => "const",
            StepKind::Subprogram(_) => "subprogram",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub kind: StepKind,
    pub inputs: Vec<ValueId>,
    pub out_len: usize,
}

/// Repeat the whole program body a fixed number of times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopSpec {
    pub iterations: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorProgram {
    pub name: String,
    pub input_len: usize,
    /// Inputs (at every loop iteration) must satisfy `|x_i| <= bound`.
    /// Enforced by `execute`, relied on by `bound_activations`.
    pub input_bound: Option<Cell>,
    pub steps: Vec<Step>,
    pub output: ValueId,
    pub loop_spec: Option<LoopSpec>,
    /// Layer budget this construction is meant to meet, if any.
    pub declared_layers: Option<u32>,
}

impl TensorProgram {
    pub fn output_len(&self) -> usize {
        self.value_len(self.output)
    }

    pub fn value_len(&self, v: ValueId) -> usize {
        match v.step() {
            None => self.input_len,
            Some(i) => self.steps[i].out_len,
        }
    }

    pub fn iterations(&self) -> u32 {
        self.loop_spec.map_or(1, |l| l.iterations)
    }

    pub fn with_loop(mut self, iterations: u32) -> Self {
        self.loop_spec = Some(LoopSpec { iterations });
        self
    }

    pub fn with_declared_layers(mut self, layers: u32) -> Self {
        self.declared_layers = Some(layers);
        self
    }

    /// Re-checks every shape invariant, recursively.
    pub fn validate(&self) -> Result<(), IrError> {
        let ctx = |i: usize, what: &str| format!("{} step {i} ({what})", self.name);
        let mut lens = vec![self.input_len];
        for (i, step) in self.steps.iter().enumerate() {
            for v in &step.inputs {
                if v.0 >= lens.len() {
                    return Err(IrError::InvalidReference {
                        step: i,
                        value: v.0,
                    });
                }
            }
            let in_len = |k: usize| lens[step.inputs[k].0];
            let arity = |n: usize| -> Result<(), IrError> {
                if step.inputs.len() == n {
                    Ok(())
                } else {
                    Err(IrError::Shape {
                        context: ctx(i, "operand count"),
                        expected: n,
                        found: step.inputs.len(),
                    })
                }
            };
            let expect = |what: &str, expected: usize, found: usize| {
                if expected == found {
                    Ok(())
                } else {
                    Err(IrError::Shape {
                        context: ctx(i, what),
                        expected,
                        found,
                    })
                }
            };
            match &step.kind {
                StepKind::AffineRelu(map) | StepKind::Affine(map) => {
                    arity(1)?;
                    expect("weight columns", map.weights.cols(), in_len(0))?;
                    expect("bias length", map.weights.rows(), map.bias.len())?;
                    expect("output length", map.weights.rows(), step.out_len)?;
                }
                StepKind::Relu => {
                    arity(1)?;
                    expect("output length", in_len(0), step.out_len)?;
                }
                StepKind::Gate => {
                    arity(2)?;
                    expect("gate length", in_len(0), in_len(1))?;
                    expect("output length", in_len(0), step.out_len)?;
                }
                StepKind::Add => {
                    if step.inputs.is_empty() {
                        return Err(IrError::Validation(ctx(i, "add without operands")));
                    }
                    for k in 0..step.inputs.len() {
                        expect("operand length", step.out_len, in_len(k))?;
                    }
                }
                StepKind::Route(sources) => {
                    expect("route length", sources.len(), step.out_len)?;
                    for src in sources {
                        if let RouteSource::Cell { operand, index } = *src {
                            if operand >= step.inputs.len() || index >= in_len(operand) {
                                return Err(IrError::Validation(format!(
                                    "{}: route source ({operand}, {index}) out of range",
                                    ctx(i, "route")
                                )));
                            }
                        }
                    }
                }
                StepKind::Const(values) => {
                    arity(0)?;
                    expect("constant length", values.len(), step.out_len)?;
                }
                StepKind::Subprogram(body) => {
                    arity(1)?;
                    body.validate()?;
                    expect("subprogram input", body.input_len, in_len(0))?;
                    expect("subprogram output", body.output_len(), step.out_len)?;
                }
            }
            lens.push(step.out_len);
        }
        if self.output.0 >= lens.len() {
            return Err(IrError::InvalidReference {
                step: self.steps.len(),
                value: self.output.0,
            });
        }
        if self.loop_spec.is_some() && lens[self.output.0] != self.input_len {
            return Err(IrError::Shape {
                context: format!("{}: looped program output", self.name),
                expected: self.input_len,
                found: lens[self.output.0],
            });
        }
        Ok(())
    }
}

/// Runs `p` on `x`, applying the loop (if any) and checking declared input bounds.
pub fn execute(p: &TensorProgram, x: &[Cell]) -> Result<Vec<Cell>, IrError> {
    if x.len() != p.input_len {
        return Err(IrError::Shape {
            context: format!("{} input", p.name),
            expected: p.input_len,
            found: x.len(),
        });
    }
    let mut state = x.to_vec();
    for _ in 0..p.iterations() {
        state = run_once(p, state)?;
    }
    Ok(state)
}

fn check_bound(p: &TensorProgram, x: &[Cell]) -> Result<(), IrError> {
    if let Some(bound) = p.input_bound {
        if let Some(&bad) = x.iter().find(|v| v.abs() > bound) {
            return Err(IrError::BoundViolation {
                program: p.name.clone(),
                bound,
                found: bad,
            });
        }
    }
    Ok(())
}

fn run_once(p: &TensorProgram, input: Vec<Cell>) -> Result<Vec<Cell>, IrError> {
    check_bound(p, &input)?;
    let mut values: Vec<Vec<Cell>> = Vec::with_capacity(p.steps.len() + 1);
    values.push(input);
    for step in &p.steps {
        let arg = |k: usize| &values[step.inputs[k].0];
        let out = match &step.kind {
            StepKind::AffineRelu(map) => {
                let mut y = map.apply(arg(0));
                y.iter_mut().for_each(|v| *v = (*v).max(0));
                y
            }
            StepKind::Affine(map) => map.apply(arg(0)),
            StepKind::Relu => arg(0).iter().map(|&v| v.max(0)).collect(),
            StepKind::Gate => arg(0).iter().zip(arg(1)).map(|(g, x)| g * x).collect(),
            StepKind::Add => {
                let mut acc = arg(0).clone();
                for k in 1..step.inputs.len() {
                    for (a, b) in acc.iter_mut().zip(arg(k)) {
                        *a += b;
                    }
                }
                acc
            }
            StepKind::Route(sources) => sources
                .iter()
                .map(|s| match *s {
                    RouteSource::Zero => 0,
                    RouteSource::Cell { operand, index } => arg(operand)[index],
                })
                .collect(),
            StepKind::Const(v) => v.clone(),
            StepKind::Subprogram(body) => execute(body, arg(0))?,
        };
        values.push(out);
    }
    Ok(values.swap_remove(p.output.0))
}

/// Incremental constructor that tracks value lengths as steps are added.
/// Shape mistakes here are construction bugs and panic immediately.
#[derive(Debug)]
pub struct ProgramBuilder {
    name: String,
    input_len: usize,
    input_bound: Option<Cell>,
    steps: Vec<Step>,
}

impl ProgramBuilder {
    pub fn new(name: impl Into<String>, input_len: usize) -> Self {
        ProgramBuilder {
            name: name.into(),
            input_len,
            input_bound: None,
            steps: Vec::new(),
        }
    }

    /// Declares that inputs are ±1 states (bounded by 1).
    pub fn discrete_input(mut self) -> Self {
        self.input_bound = Some(1);
        self
    }

    pub fn input_bound(mut self, bound: Option<Cell>) -> Self {
        self.input_bound = bound;
        self
    }

    pub fn input(&self) -> ValueId {
        ValueId::INPUT
    }

    pub fn len_of(&self, v: ValueId) -> usize {
        match v.step() {
            None => self.input_len,
            Some(i) => self.steps[i].out_len,
        }
    }

    pub fn push(&mut self, kind: StepKind, inputs: Vec<ValueId>, out_len: usize) -> ValueId {
        self.steps.push(Step {
            kind,
            inputs,
            out_len,
        });
        ValueId::of_step(self.steps.len() - 1)
    }

    pub fn affine_relu(&mut self, x: ValueId, map: AffineMap) -> ValueId {
        assert_eq!(
            map.weights.cols(),
            self.len_of(x),
            "{}: affine_relu cols",
            self.name
        );
        let n = map.weights.rows();
        self.push(StepKind::AffineRelu(map), vec![x], n)
    }

    pub fn affine(&mut self, x: ValueId, map: AffineMap) -> ValueId {
        assert_eq!(
            map.weights.cols(),
            self.len_of(x),
            "{}: affine cols",
            self.name
        );
        let n = map.weights.rows();
        self.push(StepKind::Affine(map), vec![x], n)
    }

    pub fn relu(&mut self, x: ValueId) -> ValueId {
        let n = self.len_of(x);
        self.push(StepKind::Relu, vec![x], n)
    }

    pub fn gate(&mut self, gate: ValueId, x: ValueId) -> ValueId {
        let n = self.len_of(x);
        assert_eq!(self.len_of(gate), n, "{}: gate operand lengths", self.name);
        self.push(StepKind::Gate, vec![gate, x], n)
    }

    pub fn add(&mut self, operands: &[ValueId]) -> ValueId {
        let n = self.len_of(operands[0]);
        assert!(
            operands.iter().all(|&v| self.len_of(v) == n),
            "{}: add lengths",
            self.name
        );
        self.push(StepKind::Add, operands.to_vec(), n)
    }

    pub fn route(&mut self, operands: &[ValueId], sources: Vec<RouteSource>) -> ValueId {
        let n = sources.len();
        self.push(StepKind::Route(sources), operands.to_vec(), n)
    }

    /// Route picking `indices` of a single operand.
    pub fn select(&mut self, x: ValueId, indices: &[usize]) -> ValueId {
        let sources = indices
            .iter()
            .map(|&index| RouteSource::Cell { operand: 0, index })
            .collect();
        self.route(&[x], sources)
    }

    pub fn constant(&mut self, values: Vec<Cell>) -> ValueId {
        let n = values.len();
        self.push(StepKind::Const(values), vec![], n)
    }

    pub fn subprogram(&mut self, x: ValueId, body: TensorProgram) -> ValueId {
        assert_eq!(
            body.input_len,
            self.len_of(x),
            "{}: subprogram input",
            self.name
        );
        let n = body.output_len();
        self.push(StepKind::Subprogram(Box::new(body)), vec![x], n)
    }

    pub fn finish(self, output: ValueId) -> TensorProgram {
        let program = TensorProgram {
            name: self.name,
            input_len: self.input_len,
            input_bound: self.input_bound,
            steps: self.steps,
            output,
            loop_spec: None,
            declared_layers: None,
        };
        if let Err(e) = program.validate() {
            panic!("malformed program {}: {e}", program.name);
        }
        program
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::encode_address;

    #[test]
    fn affine_relu_identity() {
        let mut b = ProgramBuilder::new("id", 2);
        let x = b.input();
        let y = b.affine_relu(x, AffineMap::linear(SparseMatrix::identity(2)));
        let p = b.finish(y);
        assert_eq!(execute(&p, &[-2, 3]).unwrap(), vec![0, 3]);
    }

    #[test]
    fn gate_is_hadamard() {
        let mut b = ProgramBuilder::new("gate", 6);
        let x = b.input();
        let g = b.select(x, &[0, 1, 2]);
        let v = b.select(x, &[3, 4, 5]);
        let y = b.gate(g, v);
        let p = b.finish(y);
        assert_eq!(execute(&p, &[1, 0, 1, -1, 5, 2]).unwrap(), vec![-1, 0, 2]);
    }

    #[test]
    fn matcher_yields_indicator() {
        let w = 3;
        let codes: Vec<Vec<Cell>> = (0..8)
            .map(|i| encode_address(i, w).unwrap().cells())
            .collect();
        let dense: Vec<Cell> = codes.iter().flatten().copied().collect();
        let matcher = AffineMap::new(
            SparseMatrix::from_dense(8, w, &dense),
            vec![-(w as Cell - 1); 8],
        );
        let mut b = ProgramBuilder::new("matcher", w);
        let x = b.input();
        let e = b.affine_relu(x, matcher);
        let p = b.finish(e);
        for (i, code) in codes.iter().enumerate() {
            let e = execute(&p, code).unwrap();
            let expected: Vec<Cell> = (0..8).map(|j| (i == j) as Cell).collect();
            assert_eq!(e, expected);
        }
    }

    #[test]
    fn execute_rejects_wrong_shape() {
        let b = ProgramBuilder::new("id", 2);
        let x = b.input();
        let p = b.finish(x);
        assert!(matches!(execute(&p, &[1]), Err(IrError::Shape { .. })));
    }

    #[test]
    fn loop_repeats_body() {
        let mut b = ProgramBuilder::new("inc", 1);
        let x = b.input();
        let y = b.affine(x, AffineMap::new(SparseMatrix::identity(1), vec![1]));
        let p = b.finish(y).with_loop(5);
        assert_eq!(execute(&p, &[2]).unwrap(), vec![7]);
    }

    #[test]
    fn declared_bound_is_enforced() {
        let mut b = ProgramBuilder::new("bounded", 1).discrete_input();
        let x = b.input();
        let y = b.affine(x, AffineMap::new(SparseMatrix::identity(1), vec![1]));
        let p = b.finish(y).with_loop(2);
        assert!(matches!(
            execute(&p, &[1]),
            Err(IrError::BoundViolation { found: 2, .. })
        ));
        assert_eq!(execute(&p, &[-1]).unwrap(), vec![1]);
    }

    #[test]
    fn relu_is_idempotent() {
        let mut b = ProgramBuilder::new("relu2", 4);
        let x = b.input();
        let r1 = b.relu(x);
        let r2 = b.relu(r1);
        let out = b.route(
            &[r1, r2],
            (0..4)
                .map(|i| RouteSource::Cell {
                    operand: 0,
                    index: i,
                })
                .chain((0..4).map(|i| RouteSource::Cell {
                    operand: 1,
                    index: i,
                }))
                .collect(),
        );
        let p = b.finish(out);
        let y = execute(&p, &[-3, 0, 2, -1]).unwrap();
        assert_eq!(&y[..4], &y[4..]);
    }

    #[test]
    fn validate_catches_bad_reference() {
        let p = TensorProgram {
            name: "bad".into(),
            input_len: 1,
            input_bound: None,
            steps: vec![Step {
                kind: StepKind::Relu,
                inputs: vec![ValueId(3)],
                out_len: 1,
            }],
            output: ValueId(1),
            loop_spec: None,
            declared_layers: None,
        };
        assert!(matches!(
            p.validate(),
            Err(IrError::InvalidReference { step: 0, value: 3 })
        ));
    }
}
