//! Canonical JSON serialization of programs.
//!
//! The document is compact JSON (no insignificant whitespace) terminated by a
//! single LF, with object keys in a fixed order, so identical programs always
//! export to identical bytes. Matrices with at most [`DENSE_LIMIT`] entries
//! are written densely in row-major order; larger ones as row-major
//! `[row, col, value]` nonzero triplets.

use serde::{Deserialize, Serialize};

use super::layers::counted_layers;
use super::{
    AffineMap, Cell, IrError, LoopSpec, RouteSource, SparseMatrix, Step, StepKind, TensorProgram,
    ValueId,
};

pub const FORMAT_VERSION: &str = "looped-mlp-weights/1";
pub const DENSE_LIMIT: usize = 4096;

#[derive(Serialize, Deserialize)]
struct Document {
    format: String,
    declared_layers: Option<u32>,
    counted_layers: u32,
    program: WireProgram,
}

#[derive(Serialize, Deserialize)]
struct WireProgram {
    name: String,
    input_len: usize,
    output_len: usize,
    input_bound: Option<Cell>,
    loop_spec: Option<LoopSpec>,
    declared_layers: Option<u32>,
    counted_layers: u32,
    output: usize,
    steps: Vec<WireStep>,
}

#[derive(Serialize, Deserialize)]
struct WireStep {
    index: usize,
    kind: String,
    inputs: Vec<usize>,
    out_len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<WireMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias: Option<Vec<Cell>>,
    /// `[operand, index]`, or `null` for a zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sources: Option<Vec<Option<(usize, usize)>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<Cell>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    program: Option<Box<WireProgram>>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum WireMatrix {
    Dense {
        shape: (usize, usize),
        entries: Vec<Cell>,
    },
    Sparse {
        shape: (usize, usize),
        nonzeros: Vec<(usize, usize, Cell)>,
    },
}

impl From<&SparseMatrix> for WireMatrix {
    fn from(m: &SparseMatrix) -> Self {
        let shape = (m.rows(), m.cols());
        if m.rows() * m.cols() <= DENSE_LIMIT {
            WireMatrix::Dense {
                shape,
                entries: m.to_dense(),
            }
        } else {
            WireMatrix::Sparse {
                shape,
                nonzeros: m.triplets().collect(),
            }
        }
    }
}

impl WireMatrix {
    fn into_matrix(self, ctx: &str) -> Result<SparseMatrix, IrError> {
        match self {
            WireMatrix::Dense {
                shape: (r, c),
                entries,
            } => {
                if entries.len() != r * c {
                    return Err(IrError::Validation(format!(
                        "{ctx}: {} entries for a {r}x{c} matrix",
                        entries.len()
                    )));
                }
                Ok(SparseMatrix::from_dense(r, c, &entries))
            }
            WireMatrix::Sparse {
                shape: (r, c),
                nonzeros,
            } => {
                if let Some(&(i, j, _)) = nonzeros.iter().find(|&&(i, j, _)| i >= r || j >= c) {
                    return Err(IrError::Validation(format!(
                        "{ctx}: entry ({i}, {j}) outside a {r}x{c} matrix"
                    )));
                }
                Ok(SparseMatrix::from_triplets(r, c, nonzeros))
            }
        }
    }
}

fn to_wire(p: &TensorProgram) -> WireProgram {
    let steps = p
        .steps
        .iter()
        .enumerate()
        .map(|(index, step)| {
            let mut w = WireStep {
                index,
                kind: step.kind.name().to_string(),
                inputs: step.inputs.iter().map(|v| v.0).collect(),
                out_len: step.out_len,
                weights: None,
                bias: None,
                sources: None,
                values: None,
                program: None,
            };
            match &step.kind {
                StepKind::AffineRelu(map) | StepKind::Affine(map) => {
                    w.weights = Some((&map.weights).into());
                    w.bias = Some(map.bias.clone());
                }
                StepKind::Route(sources) => {
                    w.sources = Some(
                        sources
                            .iter()
                            .map(|s| match *s {
                                RouteSource::Zero => None,
                                RouteSource::Cell { operand, index } => Some((operand, index)),
                            })
                            .collect(),
                    );
                }
                StepKind::Const(values) => w.values = Some(values.clone()),
                StepKind::Subprogram(body) => w.program = Some(Box::new(to_wire(body))),
                StepKind::Relu | StepKind::Gate | StepKind::Add => {}
            }
            w
        })
        .collect();
    WireProgram {
        name: p.name.clone(),
        input_len: p.input_len,
        output_len: p.output_len(),
        input_bound: p.input_bound,
        loop_spec: p.loop_spec,
        declared_layers: p.declared_layers,
        counted_layers: counted_layers(p),
        output: p.output.0,
        steps,
    }
}

fn from_wire(w: WireProgram) -> Result<TensorProgram, IrError> {
    let mut steps = Vec::with_capacity(w.steps.len());
    for (i, s) in w.steps.into_iter().enumerate() {
        let ctx = format!("{} step {i}", w.name);
        if s.index != i {
            return Err(IrError::Validation(format!(
                "{ctx}: record carries index {}",
                s.index
            )));
        }
        let missing = |field: &str| {
            IrError::Validation(format!("{ctx}: `{}` step without `{field}`", s.kind))
        };
        let kind = match s.kind.as_str() {
            "affine_relu" | "affine" => {
                let weights = s
                    .weights
                    .ok_or_else(|| missing("weights"))?
                    .into_matrix(&ctx)?;
                let bias = s.bias.ok_or_else(|| missing("bias"))?;
                let map = AffineMap::new(weights, bias);
                if s.kind == "affine" {
                    StepKind::Affine(map)
                } else {
                    StepKind::AffineRelu(map)
                }
            }
            "relu" => StepKind::Relu,
            "gate" => StepKind::Gate,
            "add" => StepKind::Add,
            "route" => StepKind::Route(
                s.sources
                    .ok_or_else(|| missing("sources"))?
                    .into_iter()
                    .map(|src| match src {
                        None => RouteSource::Zero,
                        Some((operand, index)) => RouteSource::Cell { operand, index },
                    })
                    .collect(),
            ),
            "const" => StepKind::Const(s.values.ok_or_else(|| missing("values"))?),
            "subprogram" => StepKind::Subprogram(Box::new(from_wire(
                *s.program.ok_or_else(|| missing("program"))?,
            )?)),
            other => {
                return Err(IrError::Validation(format!(
                    "{ctx}: unknown step kind `{other}`"
                )))
            }
        };
        steps.push(Step {
            kind,
            inputs: s.inputs.into_iter().map(ValueId).collect(),
            out_len: s.out_len,
        });
    }
    let program = TensorProgram {
        name: w.name,
        input_len: w.input_len,
        input_bound: w.input_bound,
        steps,
        output: ValueId(w.output),
        loop_spec: w.loop_spec,
        declared_layers: w.declared_layers,
    };
    program.validate()?;
    if program.output_len() != w.output_len {
        return Err(IrError::Shape {
            context: format!("{}: declared output length", program.name),
            expected: program.output_len(),
            found: w.output_len,
        });
    }
    Ok(program)
}

pub fn export_weights(p: &TensorProgram) -> Vec<u8> {
    let doc = Document {
        format: FORMAT_VERSION.to_string(),
        declared_layers: p.declared_layers,
        counted_layers: counted_layers(p),
        program: to_wire(p),
    };
    let mut bytes = serde_json::to_vec(&doc).expect("program serialization is infallible");
    bytes.push(b'\n');
    bytes
}

pub fn import_weights(bytes: &[u8]) -> Result<TensorProgram, IrError> {
    let doc: Document = serde_json::from_slice(bytes).map_err(|e| IrError::Parse {
        offset: byte_offset(bytes, e.line(), e.column()),
        message: e.to_string(),
    })?;
    if doc.format != FORMAT_VERSION {
        return Err(IrError::Validation(format!(
            "unsupported format `{}` (expected `{FORMAT_VERSION}`)",
            doc.format
        )));
    }
    from_wire(doc.program)
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start = bytes
        .iter()
        .enumerate()
        .filter(|&(_, &b)| b == b'\n')
        .nth(line.saturating_sub(2))
        .map_or(0, |(i, _)| i + 1);
    let start = if line == 1 { 0 } else { line_start };
    (start + column.saturating_sub(1)).min(bytes.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::ProgramBuilder;

    fn identity_program() -> TensorProgram {
        let mut b = ProgramBuilder::new("identity", 3);
        let x = b.input();
        let y = b.affine_relu(x, AffineMap::linear(SparseMatrix::identity(3)));
        b.finish(y)
    }

    #[test]
    fn dense_identity_layout() {
        let text = String::from_utf8(export_weights(&identity_program())).unwrap();
        assert!(
            text.contains(r#""weights":{"shape":[3,3],"entries":[1,0,0,0,1,0,0,0,1]}"#),
            "{text}"
        );
        assert!(text.ends_with("}\n"));
        assert_eq!(text.matches('\n').count(), 1);
    }

    #[test]
    fn round_trip_and_determinism() {
        let p = identity_program();
        let a = export_weights(&p);
        let b = export_weights(&p);
        assert_eq!(a, b);
        assert_eq!(import_weights(&a).unwrap(), p);
    }

    #[test]
    fn truncated_document_is_a_parse_error() {
        let bytes = export_weights(&identity_program());
        let cut = &bytes[..bytes.len() / 2];
        match import_weights(cut) {
            Err(IrError::Parse { offset, .. }) => assert!(offset <= cut.len()),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_shapes_fail_validation() {
        let doc = format!(
            r#"{{"format":"{FORMAT_VERSION}","declared_layers":null,"counted_layers":1,"program":{{"name":"bad","input_len":3,"output_len":3,"input_bound":null,"loop_spec":null,"declared_layers":null,"counted_layers":1,"output":1,"steps":[{{"index":0,"kind":"affine_relu","inputs":[0],"out_len":3,"weights":{{"shape":[2,3],"entries":[1,0,0,0,1,0]}},"bias":[0,0]}}]}}}}"#
        );
        assert!(matches!(
            import_weights(doc.as_bytes()),
            Err(IrError::Shape { .. })
        ));
    }
}
