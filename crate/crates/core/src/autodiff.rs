//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node to a [`Tape`]; node values live in one flat
//! arena and a [`Var`] is a view `(node, start, len)` into it, so slicing a
//! parameter vector costs nothing. Nodes are recorded in evaluation order, which
//! makes the tape a topological order by construction. [`Tape::backward`] walks
//! it once in reverse.
//!
//! Binary elementwise operations broadcast a length-1 operand against a vector.
//! Shape errors inside the tape are programming errors and panic; callers
//! validate user-facing sizes before building graphs.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("backward root must be a scalar, got length {0}")]
    NonScalarRoot(usize),
}

/// A view into the value of a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    node: u32,
    start: u32,
    len: u32,
}

impl Var {
    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Sub-view `[start, start + len)` of this variable.
    pub fn slice(&self, start: usize, len: usize) -> Var {
        assert!(start + len <= self.len as usize, "slice out of range");
        Var {
            node: self.node,
            start: self.start + start as u32,
            len: len as u32,
        }
    }

    /// Single element view.
    pub fn at(&self, i: usize) -> Var {
        self.slice(i, 1)
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Input,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// Row-major `rows x cols` matrix times a `cols` vector.
    MatVec(Var, Var),
    Tanh(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sum(Var),
    Concat { first: u32, count: u32 },
    Gather { src: Var, first: u32 },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MatVec(..) => "matvec",
            Op::Tanh(_) => "tanh",
            Op::Softplus(_) => "softplus",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Square(_) => "square",
            Op::Sum(_) => "sum",
            Op::Concat { .. } => "concat",
            Op::Gather { .. } => "gather",
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    off: usize,
    len: usize,
}

/// Overflow-safe softplus, `max(x, 0) + ln(1 + e^{-|x|})`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic sigmoid, the derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    vals: Vec<f64>,
    vars: Vec<Var>,
    indices: Vec<usize>,
    first_bad: Option<(usize, &'static str)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize, values: usize) -> Self {
        Self {
            nodes: Vec::with_capacity(nodes),
            vals: Vec::with_capacity(values),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Drop all nodes but keep the allocations for reuse.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.vals.clear();
        self.vars.clear();
        self.indices.clear();
        self.first_bad = None;
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// First node that produced a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.first_bad
    }

    pub fn check_finite(&self) -> Result<(), AdError> {
        match self.first_bad {
            Some((node, op)) => Err(AdError::NonFinite { node, op }),
            None => Ok(()),
        }
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let off = self.nodes[v.node as usize].off + v.start as usize;
        &self.vals[off..off + v.len as usize]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(v.len, 1);
        self.value(v)[0]
    }

    fn push(&mut self, op: Op, values: impl IntoIterator<Item = f64>) -> Var {
        let off = self.vals.len();
        self.vals.extend(values);
        let len = self.vals.len() - off;
        let idx = self.nodes.len();
        if self.first_bad.is_none() && self.vals[off..].iter().any(|x| !x.is_finite()) {
            self.first_bad = Some((idx, op.name()));
        }
        self.nodes.push(Node { op, off, len });
        Var {
            node: idx as u32,
            start: 0,
            len: len as u32,
        }
    }

    /// Differentiable input.
    pub fn leaf(&mut self, values: &[f64]) -> Var {
        self.push(Op::Input, values.iter().copied())
    }

    /// Input treated as a constant. Constants still receive adjoints, which
    /// callers simply ignore.
    pub fn constant(&mut self, values: &[f64]) -> Var {
        self.leaf(values)
    }

    pub fn scalar_const(&mut self, value: f64) -> Var {
        self.leaf(&[value])
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (la, lb) = (a.len(), b.len());
        let n = if la == lb {
            la
        } else if la == 1 {
            lb
        } else if lb == 1 {
            la
        } else {
            panic!("{}: incompatible lengths {la} and {lb}", op.name());
        };
        let oa = self.nodes[a.node as usize].off + a.start as usize;
        let ob = self.nodes[b.node as usize].off + b.start as usize;
        let sa = usize::from(la != 1);
        let sb = usize::from(lb != 1);
        let off = self.vals.len();
        self.vals.reserve(n);
        for i in 0..n {
            let v = f(self.vals[oa + i * sa], self.vals[ob + i * sb]);
            self.vals.push(v);
        }
        self.finish(op, off)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let oa = self.nodes[a.node as usize].off + a.start as usize;
        let off = self.vals.len();
        self.vals.reserve(a.len());
        for i in 0..a.len() {
            let v = f(self.vals[oa + i]);
            self.vals.push(v);
        }
        self.finish(op, off)
    }

    fn finish(&mut self, op: Op, off: usize) -> Var {
        let len = self.vals.len() - off;
        let idx = self.nodes.len();
        if self.first_bad.is_none() && self.vals[off..].iter().any(|x| !x.is_finite()) {
            self.first_bad = Some((idx, op.name()));
        }
        self.nodes.push(Node { op, off, len });
        Var {
            node: idx as u32,
            start: 0,
            len: len as u32,
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).iter().sum();
        self.push(Op::Sum(a), [s])
    }

    /// `a · b`, built from `mul` and `sum`.
    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let p = self.mul(a, b);
        self.sum(p)
    }

    /// `m` is a row-major matrix with `m.len() / x.len()` rows.
    pub fn matvec(&mut self, m: Var, x: Var) -> Var {
        let cols = x.len();
        assert!(
            cols > 0 && m.len() % cols == 0,
            "matvec: matrix length {} not a multiple of {cols}",
            m.len()
        );
        let rows = m.len() / cols;
        let om = self.nodes[m.node as usize].off + m.start as usize;
        let ox = self.nodes[x.node as usize].off + x.start as usize;
        let off = self.vals.len();
        self.vals.reserve(rows);
        for r in 0..rows {
            let mut acc = 0.0;
            for c in 0..cols {
                acc += self.vals[om + r * cols + c] * self.vals[ox + c];
            }
            self.vals.push(acc);
        }
        self.finish(Op::MatVec(m, x), off)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let first = self.vars.len() as u32;
        self.vars.extend_from_slice(parts);
        let off = self.vals.len();
        for p in parts {
            let o = self.nodes[p.node as usize].off + p.start as usize;
            for i in 0..p.len() {
                let v = self.vals[o + i];
                self.vals.push(v);
            }
        }
        self.finish(
            Op::Concat {
                first,
                count: parts.len() as u32,
            },
            off,
        )
    }

    /// `out[i] = src[index[i]]`.
    pub fn gather(&mut self, src: Var, index: &[usize]) -> Var {
        let first = self.indices.len() as u32;
        self.indices.extend_from_slice(index);
        // length of the gather is recorded by the node itself
        let o = self.nodes[src.node as usize].off + src.start as usize;
        let off = self.vals.len();
        for &i in index {
            assert!(i < src.len(), "gather index {i} out of range {}", src.len());
            let v = self.vals[o + i];
            self.vals.push(v);
        }
        self.finish(Op::Gather { src, first }, off)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<'_>, AdError> {
        if root.len != 1 {
            return Err(AdError::NonScalarRoot(root.len()));
        }
        self.check_finite()?;
        let mut adj = vec![0.0; self.vals.len()];
        adj[self.nodes[root.node as usize].off + root.start as usize] = 1.0;
        let last = root.node as usize;
        for idx in (0..=last).rev() {
            let node = self.nodes[idx];
            let out = node.off..node.off + node.len;
            if adj[out.clone()].iter().all(|&g| g == 0.0) {
                continue;
            }
            self.propagate(&node, &mut adj);
        }
        Ok(Gradients { tape: self, adj })
    }

    fn loc(&self, v: Var) -> usize {
        self.nodes[v.node as usize].off + v.start as usize
    }

    fn propagate(&self, node: &Node, adj: &mut [f64]) {
        let o = node.off;
        let n = node.len;
        match node.op {
            Op::Input => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let (oa, ob) = (self.loc(a), self.loc(b));
                let (sa, sb) = (usize::from(a.len != 1), usize::from(b.len != 1));
                for i in 0..n {
                    let g = adj[o + i];
                    adj[oa + i * sa] += g;
                    adj[ob + i * sb] += sign * g;
                }
            }
            Op::Mul(a, b) => {
                let (oa, ob) = (self.loc(a), self.loc(b));
                let (sa, sb) = (usize::from(a.len != 1), usize::from(b.len != 1));
                for i in 0..n {
                    let g = adj[o + i];
                    let (va, vb) = (self.vals[oa + i * sa], self.vals[ob + i * sb]);
                    adj[oa + i * sa] += g * vb;
                    adj[ob + i * sb] += g * va;
                }
            }
            Op::Scale(a, c) => {
                let oa = self.loc(a);
                for i in 0..n {
                    adj[oa + i] += c * adj[o + i];
                }
            }
            Op::MatVec(m, x) => {
                let (om, ox) = (self.loc(m), self.loc(x));
                let cols = x.len();
                for r in 0..n {
                    let g = adj[o + r];
                    if g == 0.0 {
                        continue;
                    }
                    for c in 0..cols {
                        adj[om + r * cols + c] += g * self.vals[ox + c];
                        adj[ox + c] += g * self.vals[om + r * cols + c];
                    }
                }
            }
            Op::Tanh(a) => {
                let oa = self.loc(a);
                for i in 0..n {
                    let y = self.vals[o + i];
                    adj[oa + i] += adj[o + i] * (1.0 - y * y);
                }
            }
            Op::Softplus(a) => {
                let oa = self.loc(a);
                for i in 0..n {
                    adj[oa + i] += adj[o + i] * sigmoid(self.vals[oa + i]);
                }
            }
            Op::Exp(a) => {
                let oa = self.loc(a);
                for i in 0..n {
                    adj[oa + i] += adj[o + i] * self.vals[o + i];
                }
            }
            Op::Log(a) => {
                let oa = self.loc(a);
                for i in 0..n {
                    adj[oa + i] += adj[o + i] / self.vals[oa + i];
                }
            }
            Op::Square(a) => {
                let oa = self.loc(a);
                for i in 0..n {
                    adj[oa + i] += adj[o + i] * 2.0 * self.vals[oa + i];
                }
            }
            Op::Sum(a) => {
                let oa = self.loc(a);
                let g = adj[o];
                for i in 0..a.len() {
                    adj[oa + i] += g;
                }
            }
            Op::Concat { first, count } => {
                let mut pos = o;
                for p in &self.vars[first as usize..(first + count) as usize] {
                    let op = self.loc(*p);
                    for i in 0..p.len() {
                        adj[op + i] += adj[pos + i];
                    }
                    pos += p.len();
                }
            }
            Op::Gather { src, first } => {
                let os = self.loc(src);
                for i in 0..n {
                    let j = self.indices[first as usize + i];
                    adj[os + j] += adj[o + i];
                }
            }
        }
    }
}

/// Adjoints of every node after a backward sweep.
pub struct Gradients<'a> {
    tape: &'a Tape,
    adj: Vec<f64>,
}

impl Gradients<'_> {
    pub fn wrt(&self, v: Var) -> &[f64] {
        let o = self.tape.loc(v);
        &self.adj[o..o + v.len()]
    }
}

/// Value and gradient of a scalar function built on a fresh tape.
pub fn value_and_grad<F>(x: &[f64], f: F) -> Result<(f64, Vec<f64>), AdError>
where
    F: FnOnce(&mut Tape, Var) -> Var,
{
    let mut tape = Tape::new();
    let input = tape.leaf(x);
    let out = f(&mut tape, input);
    let g = tape.backward(out)?;
    Ok((tape.scalar(out), g.wrt(input).to_vec()))
}

/// Gradient of a scalar function at `x`.
pub fn grad<F>(x: &[f64], f: F) -> Result<Vec<f64>, AdError>
where
    F: FnOnce(&mut Tape, Var) -> Var,
{
    value_and_grad(x, f).map(|(_, g)| g)
}
