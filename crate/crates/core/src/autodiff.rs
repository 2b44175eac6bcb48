//! Scalar expression graphs with reverse-mode differentiation.
//!
//! Every value is a node in an append-only [`Graph`]; operands always precede
//! the node that uses them, so node order is a topological order.
//!
//! [`Graph::backward`] emits the gradient as *new nodes* of the same graph.
//! Those nodes can be differentiated again, which is how losses containing
//! input gradients of a network (`∇_x V`) are differentiated with respect to
//! the network parameters. [`Graph::gradient_values`] is the plain numeric
//! reverse sweep for when no further differentiation is needed.
//!
//! ```
//! use packcool::autodiff::Graph;
//!
//! let mut g = Graph::new();
//! let x = g.input(2.0);
//! let x2 = g.square(x);
//! let f = g.mul(x2, x); // x³
//! let df = g.backward(f, &[x]).unwrap()[0];
//! assert_eq!(g.value(df), 12.0);
//! let d2f = g.backward(df, &[x]).unwrap()[0];
//! assert_eq!(g.value(d2f), 12.0);
//! ```

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeRef(u32);

impl NodeRef {
    pub fn id(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    Exp,
    Tanh,
    Square,
    /// `max(0, x)`, with derivative 0 at `x = 0`.
    ReluMax0,
    Neg,
}

impl OpKind {
    pub fn arity(self) -> usize {
        match self {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Const,
    Input,
    Apply(OpKind),
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    a: u32,
    b: u32,
    value: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn eval(kind: OpKind, a: f64, b: f64) -> f64 {
    match kind {
        OpKind::Add => a + b,
        OpKind::Sub => a - b,
        OpKind::Mul => a * b,
        OpKind::Div => a / b,
        OpKind::Exp => a.exp(),
        OpKind::Tanh => a.tanh(),
        OpKind::Square => a * a,
        OpKind::ReluMax0 => a.max(0.0),
        OpKind::Neg => -a,
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            nodes: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, node: NodeRef) -> bool {
        node.id() < self.nodes.len()
    }

    pub fn value(&self, node: NodeRef) -> f64 {
        self.nodes[node.id()].value
    }

    pub fn values(&self, nodes: &[NodeRef]) -> Vec<f64> {
        nodes.iter().map(|&n| self.value(n)).collect()
    }

    pub fn is_input(&self, node: NodeRef) -> bool {
        self.nodes[node.id()].op == Op::Input
    }

    fn push(&mut self, op: Op, a: u32, b: u32, value: f64) -> NodeRef {
        let id = u32::try_from(self.nodes.len()).expect("graph exceeds u32 node ids");
        self.nodes.push(Node { op, a, b, value });
        NodeRef(id)
    }

    /// A constant: differentiating anything with respect to it gives 0.
    pub fn lift(&mut self, value: f64) -> NodeRef {
        self.push(Op::Const, 0, 0, value)
    }

    /// A differentiable leaf.
    pub fn input(&mut self, value: f64) -> NodeRef {
        self.push(Op::Input, 0, 0, value)
    }

    pub fn inputs(&mut self, values: &[f64]) -> Vec<NodeRef> {
        values.iter().map(|&v| self.input(v)).collect()
    }

    /// Appends `kind(operands)`.
    pub fn apply(&mut self, kind: OpKind, operands: &[NodeRef]) -> Result<NodeRef> {
        if operands.len() != kind.arity() {
            return Err(Error::invalid(format!(
                "{kind:?} takes {} operands, got {}",
                kind.arity(),
                operands.len()
            )));
        }
        if let Some(bad) = operands.iter().find(|n| !self.contains(**n)) {
            return Err(Error::invalid(format!("node {} is not in this graph", bad.id())));
        }
        let a = operands[0];
        let b = operands.get(1).copied().unwrap_or(a);
        if kind == OpKind::Div && self.value(b) == 0.0 {
            return Err(Error::invalid("division by a zero-valued node"));
        }
        Ok(self.apply_unchecked(kind, a, b))
    }

    fn apply_unchecked(&mut self, kind: OpKind, a: NodeRef, b: NodeRef) -> NodeRef {
        let value = eval(kind, self.value(a), self.value(b));
        self.push(Op::Apply(kind), a.0, b.0, value)
    }

    pub fn add(&mut self, a: NodeRef, b: NodeRef) -> NodeRef {
        self.apply_unchecked(OpKind::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeRef, b: NodeRef) -> NodeRef {
        self.apply_unchecked(OpKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeRef, b: NodeRef) -> NodeRef {
        self.apply_unchecked(OpKind::Mul, a, b)
    }

    pub fn div(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        self.apply(OpKind::Div, &[a, b])
    }

    pub fn exp(&mut self, a: NodeRef) -> NodeRef {
        self.apply_unchecked(OpKind::Exp, a, a)
    }

    pub fn tanh(&mut self, a: NodeRef) -> NodeRef {
        self.apply_unchecked(OpKind::Tanh, a, a)
    }

    pub fn square(&mut self, a: NodeRef) -> NodeRef {
        self.apply_unchecked(OpKind::Square, a, a)
    }

    pub fn relu(&mut self, a: NodeRef) -> NodeRef {
        self.apply_unchecked(OpKind::ReluMax0, a, a)
    }

    pub fn neg(&mut self, a: NodeRef) -> NodeRef {
        self.apply_unchecked(OpKind::Neg, a, a)
    }

    /// `c · a` for a constant `c`.
    pub fn scale(&mut self, a: NodeRef, c: f64) -> NodeRef {
        let c = self.lift(c);
        self.mul(c, a)
    }

    /// Left-to-right sum; an empty slice sums to a constant 0.
    pub fn sum(&mut self, terms: &[NodeRef]) -> NodeRef {
        let Some((&first, rest)) = terms.split_first() else {
            return self.lift(0.0);
        };
        rest.iter().fold(first, |acc, &t| self.add(acc, t))
    }

    /// `Σ a_i b_i` over node pairs.
    pub fn dot(&mut self, a: &[NodeRef], b: &[NodeRef]) -> NodeRef {
        debug_assert_eq!(a.len(), b.len());
        let terms: Vec<NodeRef> = a.iter().zip(b).map(|(&x, &y)| self.mul(x, y)).collect();
        self.sum(&terms)
    }

    /// `Σ a_i c_i` with constant coefficients.
    pub fn dot_const(&mut self, a: &[NodeRef], c: &[f64]) -> NodeRef {
        debug_assert_eq!(a.len(), c.len());
        let terms: Vec<NodeRef> = a.iter().zip(c).map(|(&x, &k)| self.scale(x, k)).collect();
        self.sum(&terms)
    }

    /// `min(a, b) = a − max(0, a − b)`
    pub fn min(&mut self, a: NodeRef, b: NodeRef) -> NodeRef {
        let d = self.sub(a, b);
        let r = self.relu(d);
        self.sub(a, r)
    }

    /// `clip(a, lo, hi) = lo + max(0, a − lo) − max(0, a − hi)` for `lo ≤ hi`.
    pub fn clip(&mut self, a: NodeRef, lo: f64, hi: f64) -> NodeRef {
        let lo_n = self.lift(lo);
        let hi_n = self.lift(hi);
        let above_lo = self.sub(a, lo_n);
        let above_lo = self.relu(above_lo);
        let above_hi = self.sub(a, hi_n);
        let above_hi = self.relu(above_hi);
        let t = self.add(lo_n, above_lo);
        self.sub(t, above_hi)
    }

    fn check_refs(&self, output: NodeRef, wrt: &[NodeRef]) -> Result<()> {
        if !self.contains(output) {
            return Err(Error::invalid(format!("output node {} is not in this graph", output.id())));
        }
        if let Some(bad) = wrt.iter().find(|n| !self.contains(**n)) {
            return Err(Error::invalid(format!("wrt node {} is not in this graph", bad.id())));
        }
        Ok(())
    }

    /// Numeric adjoints `∂output/∂node` for every node up to `output`.
    pub fn adjoints(&self, output: NodeRef) -> Result<Vec<f64>> {
        self.check_refs(output, &[])?;
        let mut adj = vec![0.0; output.id() + 1];
        adj[output.id()] = 1.0;
        for i in (0..=output.id()).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            let node = self.nodes[i];
            let Op::Apply(kind) = node.op else { continue };
            let (a, b) = (node.a as usize, node.b as usize);
            let va = self.nodes[a].value;
            let vb = self.nodes[b].value;
            match kind {
                OpKind::Add => {
                    adj[a] += g;
                    adj[b] += g;
                }
                OpKind::Sub => {
                    adj[a] += g;
                    adj[b] -= g;
                }
                OpKind::Mul => {
                    adj[a] += g * vb;
                    adj[b] += g * va;
                }
                OpKind::Div => {
                    adj[a] += g / vb;
                    adj[b] -= g * node.value / vb;
                }
                OpKind::Exp => adj[a] += g * node.value,
                OpKind::Tanh => adj[a] += g * (1.0 - node.value * node.value),
                OpKind::Square => adj[a] += 2.0 * g * va,
                OpKind::ReluMax0 => {
                    if va > 0.0 {
                        adj[a] += g;
                    }
                }
                OpKind::Neg => adj[a] -= g,
            }
        }
        Ok(adj)
    }

    /// Numeric gradient of `output` with respect to `wrt`.
    pub fn gradient_values(&self, output: NodeRef, wrt: &[NodeRef]) -> Result<Vec<f64>> {
        self.check_refs(output, wrt)?;
        let adj = self.adjoints(output)?;
        Ok(wrt
            .iter()
            .map(|n| match self.nodes[n.id()].op {
                Op::Const => 0.0,
                _ => adj.get(n.id()).copied().unwrap_or(0.0),
            })
            .collect())
    }

    /// Gradient of `output` with respect to `wrt`, as differentiable nodes.
    ///
    /// Only nodes that depend on some `wrt` node receive adjoints, so the
    /// emitted subgraph stays proportional to the part of the graph between
    /// `wrt` and `output`.
    pub fn backward(&mut self, output: NodeRef, wrt: &[NodeRef]) -> Result<Vec<NodeRef>> {
        self.check_refs(output, wrt)?;
        let n = output.id() + 1;
        let mut needed = vec![false; n];
        for w in wrt {
            if w.id() < n && self.nodes[w.id()].op != Op::Const {
                needed[w.id()] = true;
            }
        }
        for i in 0..n {
            if let Op::Apply(_) = self.nodes[i].op {
                let node = self.nodes[i];
                needed[i] |= needed[node.a as usize] || needed[node.b as usize];
            }
        }

        let one = self.lift(1.0);
        let mut adj: Vec<Option<NodeRef>> = vec![None; n];
        if needed[output.id()] {
            adj[output.id()] = Some(one);
        }
        for i in (0..n).rev() {
            let Some(g) = adj[i] else { continue };
            let node = self.nodes[i];
            let Op::Apply(kind) = node.op else { continue };
            let (a, b) = (NodeRef(node.a), NodeRef(node.b));
            let z = NodeRef(i as u32);
            let (da, db): (Option<NodeRef>, Option<NodeRef>) = match kind {
                OpKind::Add => (Some(g), Some(g)),
                OpKind::Sub => (Some(g), needed[b.id()].then(|| self.neg(g))),
                OpKind::Mul => (
                    needed[a.id()].then(|| self.times(g, b, one)),
                    needed[b.id()].then(|| self.times(g, a, one)),
                ),
                OpKind::Div => {
                    let da = needed[a.id()].then(|| self.apply_unchecked(OpKind::Div, g, b));
                    let db = needed[b.id()].then(|| {
                        let q = self.apply_unchecked(OpKind::Div, z, b);
                        let t = self.times(g, q, one);
                        self.neg(t)
                    });
                    (da, db)
                }
                OpKind::Exp => (Some(self.times(g, z, one)), None),
                OpKind::Tanh => {
                    let z2 = self.square(z);
                    let s = self.sub(one, z2);
                    (Some(self.times(g, s, one)), None)
                }
                OpKind::Square => {
                    let two_a = self.add(a, a);
                    (Some(self.times(g, two_a, one)), None)
                }
                OpKind::ReluMax0 => ((self.nodes[a.id()].value > 0.0).then_some(g), None),
                OpKind::Neg => (Some(self.neg(g)), None),
            };
            let unary = kind.arity() == 1;
            if let Some(c) = da.filter(|_| needed[a.id()]) {
                self.accumulate(&mut adj, a, c);
            }
            if !unary {
                if let Some(c) = db.filter(|_| needed[b.id()]) {
                    self.accumulate(&mut adj, b, c);
                }
            }
        }
        Ok(wrt
            .iter()
            .map(|w| match adj.get(w.id()).copied().flatten() {
                Some(g) => g,
                None => self.lift(0.0),
            })
            .collect())
    }

    /// `g · x`, skipping the multiplication when `g` is the unit seed.
    fn times(&mut self, g: NodeRef, x: NodeRef, one: NodeRef) -> NodeRef {
        if g == one {
            x
        } else {
            self.mul(g, x)
        }
    }

    fn accumulate(&mut self, adj: &mut [Option<NodeRef>], target: NodeRef, c: NodeRef) {
        let slot = &mut adj[target.id()];
        *slot = Some(match *slot {
            None => c,
            Some(prev) => self.add(prev, c),
        });
    }
}

/// Largest deviation between reverse-mode Jacobian rows and central finite
/// differences, relative to the largest derivative magnitude.
///
/// `f` builds its outputs from the input nodes it is given; a scalar function
/// returns a single output. Each output row is differentiated with
/// [`Graph::backward`], so passing a function whose outputs are themselves
/// gradients checks second derivatives.
pub fn finite_diff_check<F>(f: F, x: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeRef]) -> Result<Vec<NodeRef>>,
{
    if !(h > 0.0) {
        return Err(Error::invalid("finite difference step must be positive"));
    }
    let mut g = Graph::new();
    let xs = g.inputs(x);
    let outs = f(&mut g, &xs)?;
    let mut analytic = Vec::with_capacity(outs.len());
    for &o in &outs {
        let row = g.backward(o, &xs)?;
        analytic.push(g.values(&row));
    }

    let eval_at = |point: &[f64]| -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let xs = g.inputs(point);
        let outs = f(&mut g, &xs)?;
        Ok(g.values(&outs))
    };
    let mut max_diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    let mut point = x.to_vec();
    for j in 0..x.len() {
        point[j] = x[j] + h;
        let plus = eval_at(&point)?;
        point[j] = x[j] - h;
        let minus = eval_at(&point)?;
        point[j] = x[j];
        for (i, row) in analytic.iter().enumerate() {
            let fd = (plus[i] - minus[i]) / (2.0 * h);
            max_diff = max_diff.max((row[j] - fd).abs());
            scale = scale.max(row[j].abs()).max(fd.abs());
        }
    }
    Ok(if scale == 0.0 { max_diff } else { max_diff / scale })
}
