//! Interval propagation over programs. Used to pick the gate-lowering
//! constant; the resulting bounds are sound but not tight.
//!
//! A nested program that declares an input bound is analysed from that bound
//! rather than from the propagated intervals: `execute` rejects any input that
//! violates it, so the declaration holds on every run that gets that far.

use super::{Cell, RouteSource, StepKind, TensorProgram};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interval {
    pub lo: Cell,
    pub hi: Cell,
}

impl Interval {
    pub fn new(lo: Cell, hi: Cell) -> Self {
        Interval { lo, hi }
    }

    pub fn symmetric(bound: Cell) -> Self {
        Interval::new(-bound, bound)
    }

    pub fn point(v: Cell) -> Self {
        Interval::new(v, v)
    }

    pub fn magnitude(self) -> Cell {
        self.lo.saturating_abs().max(self.hi.saturating_abs())
    }

    pub fn within(self, lo: Cell, hi: Cell) -> bool {
        self.lo >= lo && self.hi <= hi
    }

    fn relu(self) -> Self {
        Interval::new(self.lo.max(0), self.hi.max(0))
    }

    fn add(self, other: Self) -> Self {
        Interval::new(
            self.lo.saturating_add(other.lo),
            self.hi.saturating_add(other.hi),
        )
    }

    fn mul(self, other: Self) -> Self {
        let p = [
            self.lo.saturating_mul(other.lo),
            self.lo.saturating_mul(other.hi),
            self.hi.saturating_mul(other.lo),
            self.hi.saturating_mul(other.hi),
        ];
        Interval::new(*p.iter().min().unwrap(), *p.iter().max().unwrap())
    }

    fn scale(self, w: Cell) -> Self {
        if w >= 0 {
            Interval::new(self.lo.saturating_mul(w), self.hi.saturating_mul(w))
        } else {
            Interval::new(self.hi.saturating_mul(w), self.lo.saturating_mul(w))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepBound {
    pub kind: &'static str,
    /// Largest pre-activation magnitude, for `AffineRelu` steps.
    pub pre: Option<Cell>,
    pub post: Cell,
    pub nested: Option<ActivationBound>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationBound {
    pub program: String,
    pub input: Cell,
    pub steps: Vec<StepBound>,
    /// Largest magnitude anywhere, pre-activations and nested programs included.
    pub max: Cell,
}

impl ActivationBound {
    pub fn output(&self) -> Cell {
        self.steps.last().map_or(self.input, |s| s.post)
    }
}

pub fn bound_activations(p: &TensorProgram, input_bound: Cell) -> ActivationBound {
    let input = vec![Interval::symmetric(input_bound); p.input_len];
    analyse(p, input).1
}

/// Per-value intervals of a single pass over `p`'s steps.
pub(crate) fn value_intervals(p: &TensorProgram, input: Vec<Interval>) -> Vec<Vec<Interval>> {
    pass(p, input).0
}

fn analyse(p: &TensorProgram, input: Vec<Interval>) -> (Vec<Interval>, ActivationBound) {
    let input_mag = input.iter().map(|i| i.magnitude()).max().unwrap_or(0);
    let start = match p.input_bound {
        Some(b) => vec![Interval::symmetric(b); p.input_len],
        None => input,
    };
    let (values, mut steps) = pass(p, start);
    let mut out = values[p.output.0].clone();
    if p.input_bound.is_none() && p.iterations() > 1 {
        for _ in 1..p.iterations() {
            let (values, more) = pass(p, out.clone());
            let next = values[p.output.0].clone();
            steps = more;
            if next == out {
                break;
            }
            out = next;
        }
    }
    let max = steps
        .iter()
        .map(|s| {
            s.post
                .max(s.pre.unwrap_or(0))
                .max(s.nested.as_ref().map_or(0, |n| n.max))
        })
        .max()
        .unwrap_or(0)
        .max(input_mag);
    let bound = ActivationBound {
        program: p.name.clone(),
        input: p.input_bound.unwrap_or(input_mag),
        steps,
        max,
    };
    (out, bound)
}

fn pass(p: &TensorProgram, input: Vec<Interval>) -> (Vec<Vec<Interval>>, Vec<StepBound>) {
    let mut values = vec![input];
    let mut records = Vec::with_capacity(p.steps.len());
    for step in &p.steps {
        let arg = |k: usize| &values[step.inputs[k].0];
        let mut pre = None;
        let mut nested = None;
        let out: Vec<Interval> = match &step.kind {
            StepKind::AffineRelu(map) | StepKind::Affine(map) => {
                let x = arg(0);
                let lin: Vec<Interval> = (0..map.weights.rows())
                    .map(|r| {
                        map.weights
                            .row(r)
                            .fold(Interval::point(map.bias[r]), |acc, (c, w)| {
                                acc.add(x[c].scale(w))
                            })
                    })
                    .collect();
                if matches!(step.kind, StepKind::AffineRelu(_)) {
                    pre = Some(lin.iter().map(|i| i.magnitude()).max().unwrap_or(0));
                    lin.into_iter().map(Interval::relu).collect()
                } else {
                    lin
                }
            }
            StepKind::Relu => arg(0).iter().map(|i| i.relu()).collect(),
            StepKind::Gate => arg(0).iter().zip(arg(1)).map(|(g, x)| g.mul(*x)).collect(),
            StepKind::Add => {
                let mut acc = arg(0).clone();
                for k in 1..step.inputs.len() {
                    for (a, b) in acc.iter_mut().zip(arg(k)) {
                        *a = a.add(*b);
                    }
                }
                acc
            }
            StepKind::Route(sources) => sources
                .iter()
                .map(|s| match *s {
                    RouteSource::Zero => Interval::point(0),
                    RouteSource::Cell { operand, index } => arg(operand)[index],
                })
                .collect(),
            StepKind::Const(v) => v.iter().map(|&c| Interval::point(c)).collect(),
            StepKind::Subprogram(body) => {
                let (out, bound) = analyse(body, arg(0).clone());
                nested = Some(bound);
                out
            }
        };
        records.push(StepBound {
            kind: step.kind.name(),
            pre,
            post: out.iter().map(|i| i.magnitude()).max().unwrap_or(0),
            nested,
        });
        values.push(out);
    }
    (values, records)
}
