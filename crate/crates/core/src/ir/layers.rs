//! Layer accounting.
//!
//! Only affine+ReLU passes are layers. The rules:
//!
//! * `AffineRelu` costs 1.
//! * `Affine` costs 0 when it reads (directly, or through gates, routes and
//!   adds) the output of a ReLU layer, since it is a linear readout that folds
//!   into that layer; it also costs 0 when every consumer is an `AffineRelu`,
//!   since it folds into the next layer's weights. Otherwise it costs 1.
//! * `Relu` costs 0 when it directly follows an `Affine` that was counted
//!   (the pair is one layer), else 1.
//! * `Gate`, `Add`, `Route` and `Const` cost 0.
//! * A subprogram costs its body's count; loop iterations do not multiply it.

use super::{StepKind, TensorProgram, ValueId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerReport {
    pub name: String,
    pub counted: u32,
    pub declared: Option<u32>,
    pub iterations: u32,
    pub children: Vec<LayerReport>,
}

impl LayerReport {
    /// `counted - declared` when a budget is declared.
    pub fn delta(&self) -> Option<i64> {
        self.declared.map(|d| self.counted as i64 - d as i64)
    }

    pub fn find(&self, name: &str) -> Option<&LayerReport> {
        if self.name == name {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(name))
    }
}

pub fn counted_layers(p: &TensorProgram) -> u32 {
    layer_report(p).counted
}

pub fn layer_report(p: &TensorProgram) -> LayerReport {
    let costs = step_costs(p);
    let mut children = Vec::new();
    for step in &p.steps {
        if let StepKind::Subprogram(body) = &step.kind {
            children.push(layer_report(body));
        }
    }
    let mut child = children.iter();
    let counted = p
        .steps
        .iter()
        .zip(&costs)
        .map(|(step, &c)| match step.kind {
            StepKind::Subprogram(_) => child.next().map_or(0, |r| r.counted),
            _ => c,
        })
        .sum();
    LayerReport {
        name: p.name.clone(),
        counted,
        declared: p.declared_layers,
        iterations: p.iterations(),
        children,
    }
}

fn step_costs(p: &TensorProgram) -> Vec<u32> {
    let n = p.steps.len();
    // feeds[v]: value v is (a gated/routed/summed form of) a ReLU layer output.
    let mut feeds = vec![false; n + 1];
    for (i, step) in p.steps.iter().enumerate() {
        feeds[i + 1] = match step.kind {
            StepKind::AffineRelu(_) | StepKind::Relu => true,
            StepKind::Gate | StepKind::Route(_) | StepKind::Add => {
                step.inputs.iter().any(|v| feeds[v.0])
            }
            _ => false,
        };
    }
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    for (i, step) in p.steps.iter().enumerate() {
        for v in &step.inputs {
            consumers[v.0].push(i);
        }
    }
    let is_output = |v: ValueId| v == p.output;

    let mut costs = vec![0u32; n];
    for (i, step) in p.steps.iter().enumerate() {
        costs[i] = match &step.kind {
            StepKind::AffineRelu(_) => 1,
            StepKind::Affine(_) => {
                let out = ValueId::of_step(i);
                let folds_forward = !consumers[out.0].is_empty()
                    && !is_output(out)
                    && consumers[out.0]
                        .iter()
                        .all(|&c| matches!(p.steps[c].kind, StepKind::AffineRelu(_)));
                if feeds[step.inputs[0].0] || folds_forward {
                    0
                } else {
                    1
                }
            }
            StepKind::Relu => match step.inputs[0].step() {
                Some(j) if matches!(p.steps[j].kind, StepKind::Affine(_)) && costs[j] == 1 => 0,
                _ => 1,
            },
            _ => 0,
        };
    }
    costs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{AffineMap, ProgramBuilder, SparseMatrix};

    fn id(n: usize) -> AffineMap {
        AffineMap::linear(SparseMatrix::identity(n))
    }

    #[test]
    fn standalone_affine_counts_and_readout_is_absorbed() {
        let mut b = ProgramBuilder::new("p", 2);
        let x = b.input();
        let a = b.affine(x, id(2)); // standalone: 1
        let h = b.affine_relu(x, id(2)); // 1
        let g = b.gate(h, x);
        let r = b.affine(g, id(2)); // readout of a layer: 0
        let y = b.add(&[a, r]);
        assert_eq!(counted_layers(&b.finish(y)), 2);
    }

    #[test]
    fn affine_folds_into_following_layer() {
        let mut b = ProgramBuilder::new("p", 2);
        let x = b.input();
        let a = b.affine(x, id(2));
        let h = b.affine_relu(a, id(2));
        assert_eq!(counted_layers(&b.finish(h)), 1);
    }

    #[test]
    fn relu_fuses_with_affine() {
        let mut b = ProgramBuilder::new("p", 2);
        let x = b.input();
        let a = b.affine(x, id(2));
        let r = b.relu(a);
        assert_eq!(counted_layers(&b.finish(r)), 1);

        let mut b = ProgramBuilder::new("q", 2);
        let x = b.input();
        let r = b.relu(x);
        assert_eq!(counted_layers(&b.finish(r)), 1);
    }

    #[test]
    fn loops_count_once_and_nest() {
        let mut inner = ProgramBuilder::new("inner", 2);
        let x = inner.input();
        let h = inner.affine_relu(x, id(2));
        let body = inner.finish(h).with_loop(7).with_declared_layers(2);

        let mut outer = ProgramBuilder::new("outer", 2);
        let x = outer.input();
        let s = outer.subprogram(x, body);
        let t = outer.affine_relu(s, id(2));
        let report = layer_report(&outer.finish(t));
        assert_eq!(report.counted, 2);
        let inner = report.find("inner").unwrap();
        assert_eq!(inner.counted, 1);
        assert_eq!(inner.iterations, 7);
        assert_eq!(inner.delta(), Some(-1));
    }
}
