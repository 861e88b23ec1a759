use std::sync::Arc;

use super::params::{Gradient, ParameterLayout, ParameterVector, SliceId};
use crate::{LspError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant(Vec<f64>),
    Param(SliceId),
    /// Concatenation of the listed rows of a parameter table.
    EmbedRows {
        table: SliceId,
        rows: Vec<usize>,
    },
    /// `weight * input + bias`, weight stored `out x in` row-major.
    Affine {
        input: Var,
        weight: SliceId,
        bias: SliceId,
    },
    Tanh(Var),
    Exp(Var),
    Scale(Var, f64),
    AddConst(Var, f64),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Log-softmax over the unmasked entries; masked entries are `-inf`.
    LogSoftmax {
        input: Var,
        masked: Vec<usize>,
    },
    Gather {
        input: Var,
        index: usize,
    },
    /// Elementwise sum of equal-length operands.
    Sum(Vec<Var>),
    /// Sum of all entries, as a scalar.
    ReduceSum(Var),
    /// Stop-gradient. Forward passes the operand through (or the frozen
    /// value, once frozen); backward contributes nothing.
    Detach {
        input: Var,
        frozen: Option<Vec<f64>>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant(_) => "constant",
            Op::Param(_) => "param",
            Op::EmbedRows { .. } => "embed_rows",
            Op::Affine { .. } => "affine",
            Op::Tanh(_) => "tanh",
            Op::Exp(_) => "exp",
            Op::Scale(..) => "scale",
            Op::AddConst(..) => "add_const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::LogSoftmax { .. } => "log_softmax",
            Op::Gather { .. } => "gather",
            Op::Sum(_) => "sum",
            Op::ReduceSum(_) => "reduce_sum",
            Op::Detach { .. } => "detach",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    len: usize,
    /// Whether any parameter reaches this node through differentiable edges.
    live: bool,
}

/// A recorded computation over a parameter layout, evaluated by
/// [`Tape::forward`] and differentiated by [`Tape::backward`].
///
/// Nodes are appended in topological order by construction: an operand must
/// already exist when its consumer is recorded. The output is the last node
/// and must be a scalar.
#[derive(Debug, Clone)]
pub struct Tape {
    layout: Arc<ParameterLayout>,
    nodes: Vec<Node>,
    values: Vec<Vec<f64>>,
    /// Parameters of the last forward pass, read back by `backward`.
    params: Option<Arc<Vec<f64>>>,
    evaluated: bool,
}

impl Tape {
    pub fn new(layout: Arc<ParameterLayout>) -> Self {
        Tape {
            layout,
            nodes: Vec::new(),
            values: Vec::new(),
            params: None,
            evaluated: false,
        }
    }

    pub fn layout(&self) -> &Arc<ParameterLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn output(&self) -> Option<Var> {
        self.nodes.len().checked_sub(1).map(Var)
    }

    fn push(&mut self, op: Op, len: usize, live: bool) -> Var {
        self.evaluated = false;
        self.nodes.push(Node { op, len, live });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn var_len(&self, v: Var) -> usize {
        self.node(v).len
    }

    pub fn constant(&mut self, values: Vec<f64>) -> Var {
        let len = values.len();
        self.push(Op::Constant(values), len, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(vec![value])
    }

    pub fn param(&mut self, slice: SliceId) -> Var {
        let len = self.layout.spec(slice).len();
        self.push(Op::Param(slice), len, true)
    }

    pub fn embed_rows(&mut self, table: SliceId, rows: Vec<usize>) -> Var {
        let spec = self.layout.spec(table);
        assert!(
            rows.iter().all(|&r| r < spec.rows),
            "embedding row out of range for {}",
            spec.name
        );
        let len = rows.len() * spec.cols;
        self.push(Op::EmbedRows { table, rows }, len, true)
    }

    pub fn affine(&mut self, input: Var, weight: SliceId, bias: SliceId) -> Var {
        let (w, b) = (self.layout.spec(weight), self.layout.spec(bias));
        assert_eq!(w.cols, self.var_len(input), "affine input width");
        assert_eq!(b.len(), w.rows, "affine bias length");
        let len = w.rows;
        self.push(Op::Affine { input, weight, bias }, len, true)
    }

    fn unary(&mut self, x: Var, op: Op) -> Var {
        let (len, live) = (self.node(x).len, self.node(x).live);
        self.push(op, len, live)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op) -> Var {
        assert_eq!(self.var_len(a), self.var_len(b), "operand lengths differ");
        let live = self.node(a).live || self.node(b).live;
        let len = self.var_len(a);
        self.push(op, len, live)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c))
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddConst(x, c))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b))
    }

    pub fn log_softmax(&mut self, input: Var, masked: &[usize]) -> Var {
        let len = self.var_len(input);
        let mut masked = masked.to_vec();
        masked.sort_unstable();
        masked.dedup();
        assert!(masked.iter().all(|&m| m < len), "mask index out of range");
        assert!(masked.len() < len, "log_softmax with every entry masked");
        self.unary(input, Op::LogSoftmax { input, masked })
    }

    pub fn gather(&mut self, input: Var, index: usize) -> Var {
        assert!(index < self.var_len(input), "gather index out of range");
        let live = self.node(input).live;
        self.push(Op::Gather { input, index }, 1, live)
    }

    pub fn sum(&mut self, terms: &[Var]) -> Var {
        assert!(!terms.is_empty(), "sum of no terms");
        let len = self.var_len(terms[0]);
        assert!(terms.iter().all(|&t| self.var_len(t) == len), "sum lengths");
        let live = terms.iter().any(|&t| self.node(t).live);
        self.push(Op::Sum(terms.to_vec()), len, live)
    }

    pub fn reduce_sum(&mut self, x: Var) -> Var {
        let live = self.node(x).live;
        self.push(Op::ReduceSum(x), 1, live)
    }

    pub fn detach(&mut self, x: Var) -> Var {
        let len = self.var_len(x);
        self.push(
            Op::Detach {
                input: x,
                frozen: None,
            },
            len,
            false,
        )
    }

    /// Value of `v` from the most recent forward pass.
    pub fn value(&self, v: Var) -> Result<&[f64]> {
        if !self.evaluated {
            return Err(LspError::Usage("tape value read before forward".into()));
        }
        Ok(&self.values[v.0])
    }

    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        Ok(self.value(v)?[0])
    }

    /// Pins every stop-gradient node to its current value, so later forward
    /// passes at other parameters treat it as a constant. This is what makes
    /// finite differences of a stop-gradient loss meaningful.
    pub fn freeze_detached(&mut self) -> Result<()> {
        if !self.evaluated {
            return Err(LspError::Usage("freeze_detached before forward".into()));
        }
        for (i, node) in self.nodes.iter_mut().enumerate() {
            if let Op::Detach { frozen, .. } = &mut node.op {
                *frozen = Some(self.values[i].clone());
            }
        }
        Ok(())
    }

    /// Evaluates every node at `params` and returns the scalar output.
    pub fn forward(&mut self, params: &ParameterVector) -> Result<f64> {
        if **params.layout() != *self.layout {
            return Err(LspError::Usage("tape and parameter layouts differ".into()));
        }
        let out = self
            .output()
            .ok_or_else(|| LspError::Usage("forward on an empty tape".into()))?;
        if self.var_len(out) != 1 {
            return Err(LspError::Usage("tape output is not a scalar".into()));
        }
        self.evaluated = false;
        self.values.clear();
        self.values.reserve(self.nodes.len());
        let shared = params.shared_values();
        let p = shared.as_slice();
        for (i, node) in self.nodes.iter().enumerate() {
            let vals = &self.values;
            let value = match &node.op {
                Op::Constant(c) => c.clone(),
                Op::Param(id) => p[self.layout.spec(*id).range()].to_vec(),
                Op::EmbedRows { table, rows } => {
                    let spec = self.layout.spec(*table);
                    let mut out = Vec::with_capacity(node.len);
                    for &r in rows {
                        let start = spec.offset + r * spec.cols;
                        out.extend_from_slice(&p[start..start + spec.cols]);
                    }
                    out
                }
                Op::Affine {
                    input,
                    weight,
                    bias,
                } => {
                    let x = &vals[input.0];
                    let w = &p[self.layout.spec(*weight).range()];
                    let b = &p[self.layout.spec(*bias).range()];
                    let cols = x.len();
                    (0..node.len)
                        .map(|r| b[r] + dot(&w[r * cols..(r + 1) * cols], x))
                        .collect()
                }
                Op::Tanh(x) => vals[x.0].iter().map(|v| v.tanh()).collect(),
                Op::Exp(x) => vals[x.0].iter().map(|v| v.exp()).collect(),
                Op::Scale(x, c) => vals[x.0].iter().map(|v| v * c).collect(),
                Op::AddConst(x, c) => vals[x.0].iter().map(|v| v + c).collect(),
                Op::Add(a, b) => zip_with(&vals[a.0], &vals[b.0], |x, y| x + y),
                Op::Sub(a, b) => zip_with(&vals[a.0], &vals[b.0], |x, y| x - y),
                Op::Mul(a, b) => zip_with(&vals[a.0], &vals[b.0], |x, y| x * y),
                Op::LogSoftmax { input, masked } => log_softmax(&vals[input.0], masked),
                Op::Gather { input, index } => vec![vals[input.0][*index]],
                Op::Sum(terms) => {
                    let mut out = vals[terms[0].0].clone();
                    for t in &terms[1..] {
                        for (o, v) in out.iter_mut().zip(&vals[t.0]) {
                            *o += v;
                        }
                    }
                    out
                }
                Op::ReduceSum(x) => vec![vals[x.0].iter().sum()],
                Op::Detach { input, frozen } => match frozen {
                    Some(f) => f.clone(),
                    None => vals[input.0].clone(),
                },
            };
            let finite = match &node.op {
                Op::LogSoftmax { masked, .. } => value
                    .iter()
                    .enumerate()
                    .all(|(j, v)| v.is_finite() || masked.binary_search(&j).is_ok()),
                _ => value.iter().all(|v| v.is_finite()),
            };
            if !finite {
                return Err(LspError::NonFinite {
                    node: i,
                    op: node.op.name(),
                });
            }
            self.values.push(value);
        }
        self.params = Some(shared.clone());
        self.evaluated = true;
        Ok(self.values[out.0][0])
    }

    /// Gradient of the output with respect to every parameter.
    pub fn backward(&self) -> Result<Gradient> {
        let mut grad = Gradient::zeros(self.layout.clone());
        self.backward_into(&mut grad)?;
        Ok(grad)
    }

    /// Adds the gradient of the output into `grad`.
    pub fn backward_into(&self, grad: &mut Gradient) -> Result<()> {
        if !self.evaluated {
            return Err(LspError::Usage("backward before forward".into()));
        }
        if **grad.layout() != *self.layout {
            return Err(LspError::Usage("gradient layout differs from tape".into()));
        }
        let p = self.params.as_deref().expect("evaluated tape keeps its params");
        let n = self.nodes.len();
        let mut adj: Vec<Vec<f64>> = vec![Vec::new(); n];
        adj[n - 1] = vec![1.0];
        let g = grad.values_mut();
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.live || adj[i].is_empty() {
                continue;
            }
            let up = std::mem::take(&mut adj[i]);
            let y = &self.values[i];
            match &node.op {
                Op::Constant(_) | Op::Detach { .. } => {}
                Op::Param(id) => {
                    for (gv, u) in g[self.layout.spec(*id).range()].iter_mut().zip(&up) {
                        *gv += u;
                    }
                }
                Op::EmbedRows { table, rows } => {
                    let spec = self.layout.spec(*table);
                    for (k, &r) in rows.iter().enumerate() {
                        let start = spec.offset + r * spec.cols;
                        let src = &up[k * spec.cols..(k + 1) * spec.cols];
                        for (gv, u) in g[start..start + spec.cols].iter_mut().zip(src) {
                            *gv += u;
                        }
                    }
                }
                Op::Affine {
                    input,
                    weight,
                    bias,
                } => {
                    let x = &self.values[input.0];
                    let cols = x.len();
                    let (wspec, bspec) = (self.layout.spec(*weight), self.layout.spec(*bias));
                    let propagate = self.nodes[input.0].live;
                    let mut dx = if propagate { vec![0.0; cols] } else { Vec::new() };
                    for (r, &u) in up.iter().enumerate() {
                        if u == 0.0 {
                            continue;
                        }
                        g[bspec.offset + r] += u;
                        let row = wspec.offset + r * cols;
                        axpy(&mut g[row..row + cols], u, x);
                        if propagate {
                            axpy(&mut dx, u, &p[row..row + cols]);
                        }
                    }
                    if propagate {
                        accumulate(&mut adj[input.0], &dx);
                    }
                }
                Op::Tanh(x) => {
                    let d: Vec<f64> = up.iter().zip(y).map(|(u, t)| u * (1.0 - t * t)).collect();
                    accumulate(&mut adj[x.0], &d);
                }
                Op::Exp(x) => {
                    let d: Vec<f64> = up.iter().zip(y).map(|(u, e)| u * e).collect();
                    accumulate(&mut adj[x.0], &d);
                }
                Op::Scale(x, c) => {
                    let d: Vec<f64> = up.iter().map(|u| u * c).collect();
                    accumulate(&mut adj[x.0], &d);
                }
                Op::AddConst(x, _) => accumulate(&mut adj[x.0], &up),
                Op::Add(a, b) => {
                    accumulate(&mut adj[a.0], &up);
                    accumulate(&mut adj[b.0], &up);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj[a.0], &up);
                    let neg: Vec<f64> = up.iter().map(|u| -u).collect();
                    accumulate(&mut adj[b.0], &neg);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.values[a.0], &self.values[b.0]);
                    let da: Vec<f64> = up.iter().zip(vb).map(|(u, v)| u * v).collect();
                    let db: Vec<f64> = up.iter().zip(va).map(|(u, v)| u * v).collect();
                    accumulate(&mut adj[a.0], &da);
                    accumulate(&mut adj[b.0], &db);
                }
                Op::LogSoftmax { input, masked } => {
                    let is_masked = |j: usize| masked.binary_search(&j).is_ok();
                    let total: f64 = up
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| !is_masked(*j))
                        .map(|(_, u)| u)
                        .sum();
                    let d: Vec<f64> = (0..up.len())
                        .map(|j| {
                            if is_masked(j) {
                                0.0
                            } else {
                                up[j] - y[j].exp() * total
                            }
                        })
                        .collect();
                    accumulate(&mut adj[input.0], &d);
                }
                Op::Gather { input, index } => {
                    let len = self.nodes[input.0].len;
                    let a = &mut adj[input.0];
                    if a.is_empty() {
                        *a = vec![0.0; len];
                    }
                    a[*index] += up[0];
                }
                Op::Sum(terms) => {
                    for t in terms {
                        accumulate(&mut adj[t.0], &up);
                    }
                }
                Op::ReduceSum(x) => {
                    let d = vec![up[0]; self.nodes[x.0].len];
                    accumulate(&mut adj[x.0], &d);
                }
            }
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn accumulate(slot: &mut Vec<f64>, d: &[f64]) {
    if slot.is_empty() {
        slot.extend_from_slice(d);
    } else {
        for (s, v) in slot.iter_mut().zip(d) {
            *s += v;
        }
    }
}

fn zip_with(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn log_softmax(x: &[f64], masked: &[usize]) -> Vec<f64> {
    let is_masked = |j: usize| masked.binary_search(&j).is_ok();
    let max = x
        .iter()
        .enumerate()
        .filter(|(j, _)| !is_masked(*j))
        .fold(f64::NEG_INFINITY, |m, (_, v)| m.max(*v));
    let sum: f64 = x
        .iter()
        .enumerate()
        .filter(|(j, _)| !is_masked(*j))
        .map(|(_, v)| (v - max).exp())
        .sum();
    let lse = max + sum.ln();
    x.iter()
        .enumerate()
        .map(|(j, v)| if is_masked(j) { f64::NEG_INFINITY } else { v - lse })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use crate::rng::stream_at;

    fn layout(blocks: &[(&str, usize, usize)]) -> Arc<ParameterLayout> {
        Arc::new(ParameterLayout::new(blocks))
    }

    #[test]
    fn square_and_its_derivative() {
        let l = layout(&[("x", 1, 1)]);
        let mut tape = Tape::new(l.clone());
        let x = tape.param(SliceId(0));
        tape.mul(x, x);
        let p = ParameterVector::new(l, vec![3.0]).unwrap();
        assert_eq!(tape.forward(&p).unwrap(), 9.0);
        assert_eq!(tape.backward().unwrap().values(), &[6.0]);
    }

    #[test]
    fn log_softmax_gather_at_uniform_logits() {
        let l = layout(&[("logits", 1, 4)]);
        let mut tape = Tape::new(l.clone());
        let z = tape.param(SliceId(0));
        let ls = tape.log_softmax(z, &[]);
        let picked = tape.gather(ls, 2);
        let p = ParameterVector::zeros(l);
        tape.forward(&p).unwrap();
        let v = tape.scalar_value(picked).unwrap();
        assert!((v + 4f64.ln()).abs() < 1e-15);
        assert!((v - -1.386294).abs() < 1e-6);
        // Negative log-likelihood: its logit gradient is softmax - one_hot.
        tape.scale(picked, -1.0);
        tape.forward(&p).unwrap();
        let g = tape.backward().unwrap();
        let want = [0.25, 0.25, -0.75, 0.25];
        for (a, b) in g.values().iter().zip(want) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn masked_entries_get_no_mass() {
        let l = layout(&[("logits", 1, 4)]);
        let mut tape = Tape::new(l.clone());
        let z = tape.param(SliceId(0));
        let ls = tape.log_softmax(z, &[1]);
        tape.gather(ls, 0);
        let p = ParameterVector::zeros(l);
        assert!((tape.forward(&p).unwrap() + 3f64.ln()).abs() < 1e-15);
        assert_eq!(tape.value(ls).unwrap()[1], f64::NEG_INFINITY);
        let g = tape.backward().unwrap();
        assert_eq!(g.values()[1], 0.0);
        assert!((g.values().iter().sum::<f64>()).abs() < 1e-15);
    }

    #[test]
    fn backward_before_forward() {
        let l = layout(&[("x", 1, 1)]);
        let mut tape = Tape::new(l);
        let x = tape.param(SliceId(0));
        tape.mul(x, x);
        assert!(matches!(tape.backward(), Err(LspError::Usage(_))));
    }

    #[test]
    fn non_finite_names_the_node() {
        let l = layout(&[("x", 1, 1)]);
        let mut tape = Tape::new(l.clone());
        let x = tape.param(SliceId(0));
        let y = tape.scale(x, 2.0);
        tape.exp(y);
        let p = ParameterVector::new(l, vec![1000.0]).unwrap();
        match tape.forward(&p) {
            Err(LspError::NonFinite { node, op }) => {
                assert_eq!((node, op), (2, "exp"));
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn detached_copy_has_zero_gradient() {
        let l = layout(&[("x", 1, 3)]);
        let mut tape = Tape::new(l.clone());
        let x = tape.param(SliceId(0));
        let d = tape.detach(x);
        let sq = tape.mul(d, d);
        tape.reduce_sum(sq);
        let p = ParameterVector::new(l, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(tape.forward(&p).unwrap(), 14.0);
        assert!(tape.backward().unwrap().values().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn ratio_with_detached_denominator() {
        // exp(x - detach(x)) has value 1 and derivative 1.
        let l = layout(&[("x", 1, 1)]);
        let mut tape = Tape::new(l.clone());
        let x = tape.param(SliceId(0));
        let d = tape.detach(x);
        let diff = tape.sub(x, d);
        tape.exp(diff);
        let p = ParameterVector::new(l, vec![-2.7]).unwrap();
        assert_eq!(tape.forward(&p).unwrap(), 1.0);
        assert_eq!(tape.backward().unwrap().values(), &[1.0]);
    }

    #[test]
    fn frozen_detach_is_a_constant() {
        let l = layout(&[("x", 1, 1)]);
        let mut tape = Tape::new(l.clone());
        let x = tape.param(SliceId(0));
        let d = tape.detach(x);
        tape.sub(x, d);
        let p = ParameterVector::new(l.clone(), vec![1.0]).unwrap();
        tape.forward(&p).unwrap();
        tape.freeze_detached().unwrap();
        let q = ParameterVector::new(l, vec![1.5]).unwrap();
        assert_eq!(tape.forward(&q).unwrap(), 0.5);
    }

    #[test]
    fn shared_operand_accumulates() {
        let l = layout(&[("x", 1, 2)]);
        let mut tape = Tape::new(l.clone());
        let x = tape.param(SliceId(0));
        let t = tape.tanh(x);
        let s = tape.sum(&[x, t, x]);
        tape.reduce_sum(s);
        let p = ParameterVector::new(l, vec![0.3, -0.4]).unwrap();
        tape.forward(&p).unwrap();
        let g = tape.backward().unwrap();
        for (gi, xi) in g.values().iter().zip([0.3f64, -0.4]) {
            let want = 2.0 + 1.0 - xi.tanh().powi(2);
            assert!((gi - want).abs() < 1e-15);
        }
    }

    type Builder = fn(&mut Tape) -> Var;

    // Each primitive is wrapped as `sum(w * op(params))` with fixed random
    // weights `w` so that every output coordinate matters.
    fn primitive_cases() -> Vec<(&'static str, Vec<(&'static str, usize, usize)>, Builder)> {
        vec![
            ("param", vec![("a", 1, 5)], |t| t.param(SliceId(0))),
            ("tanh", vec![("a", 1, 5)], |t| {
                let a = t.param(SliceId(0));
                t.tanh(a)
            }),
            ("exp", vec![("a", 1, 5)], |t| {
                let a = t.param(SliceId(0));
                t.exp(a)
            }),
            ("scale", vec![("a", 1, 5)], |t| {
                let a = t.param(SliceId(0));
                t.scale(a, -1.7)
            }),
            ("add_const", vec![("a", 1, 5)], |t| {
                let a = t.param(SliceId(0));
                let e = t.exp(a);
                t.add_const(e, 0.3)
            }),
            ("add", vec![("a", 1, 5), ("b", 1, 5)], |t| {
                let (a, b) = (t.param(SliceId(0)), t.param(SliceId(1)));
                let e = t.exp(b);
                t.add(a, e)
            }),
            ("sub", vec![("a", 1, 5), ("b", 1, 5)], |t| {
                let (a, b) = (t.param(SliceId(0)), t.param(SliceId(1)));
                let e = t.tanh(a);
                t.sub(e, b)
            }),
            ("mul", vec![("a", 1, 5), ("b", 1, 5)], |t| {
                let (a, b) = (t.param(SliceId(0)), t.param(SliceId(1)));
                t.mul(a, b)
            }),
            ("log_softmax", vec![("a", 1, 5)], |t| {
                let a = t.param(SliceId(0));
                let ls = t.log_softmax(a, &[3]);
                let g = [t.gather(ls, 0), t.gather(ls, 1), t.gather(ls, 4)];
                t.sum(&g)
            }),
            ("gather", vec![("a", 1, 5)], |t| {
                let a = t.param(SliceId(0));
                let e = t.exp(a);
                t.gather(e, 2)
            }),
            ("sum", vec![("a", 1, 5), ("b", 1, 5)], |t| {
                let (a, b) = (t.param(SliceId(0)), t.param(SliceId(1)));
                let m = t.mul(a, b);
                t.sum(&[a, m, b])
            }),
            ("reduce_sum", vec![("a", 1, 5)], |t| {
                let a = t.param(SliceId(0));
                let e = t.tanh(a);
                t.reduce_sum(e)
            }),
            ("embed_rows", vec![("table", 4, 3)], |t| {
                let e = t.embed_rows(SliceId(0), vec![2, 0, 2]);
                t.tanh(e)
            }),
            ("affine", vec![("x", 1, 3), ("w", 4, 3), ("b", 1, 4)], |t| {
                let x = t.param(SliceId(0));
                let tx = t.tanh(x);
                t.affine(tx, SliceId(1), SliceId(2))
            }),
        ]
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        for (case, (name, blocks, build)) in primitive_cases().into_iter().enumerate() {
            let l = layout(&blocks);
            for instance in 0..100u64 {
                let mut rng = stream_at(11, name, instance);
                let mut tape = Tape::new(l.clone());
                let out = build(&mut tape);
                let weights: Vec<f64> = (0..tape.var_len(out))
                    .map(|_| rng.uniform_in(0.5, 1.5))
                    .collect();
                let w = tape.constant(weights);
                let prod = tape.mul(out, w);
                tape.reduce_sum(prod);
                let values: Vec<f64> = (0..l.len()).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
                let params = ParameterVector::new(l.clone(), values).unwrap();
                tape.forward(&params).unwrap();
                let analytic = tape.backward().unwrap();
                let all: Vec<usize> = (0..l.len())
                    .filter(|&i| analytic.values()[i].abs() > 1e-3)
                    .collect();
                let err = finite_diff_check(
                    |p| tape.clone().forward(p),
                    &analytic,
                    &params,
                    1e-5,
                    &all,
                )
                .unwrap();
                assert!(err < 1e-6, "case {case} {name} instance {instance}: {err:e}");
            }
        }
    }

    #[test]
    fn gradients_are_bit_reproducible() {
        let l = layout(&[("x", 1, 3), ("w", 4, 3), ("b", 1, 4)]);
        let mut rng = stream_at(3, "repro", 0);
        let values: Vec<f64> = (0..l.len()).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let params = ParameterVector::new(l.clone(), values).unwrap();
        let run = || {
            let mut tape = Tape::new(l.clone());
            let x = tape.param(SliceId(0));
            let h = tape.affine(x, SliceId(1), SliceId(2));
            let ls = tape.log_softmax(h, &[]);
            tape.gather(ls, 1);
            tape.forward(&params).unwrap();
            tape.backward().unwrap()
        };
        let (a, b) = (run(), run());
        assert!(a
            .values()
            .iter()
            .zip(b.values())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
