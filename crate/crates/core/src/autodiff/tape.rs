use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

static NEXT_GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    NEXT_GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Handle to a node on a [`Tape`]. Valid only for the generation that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    idx: usize,
    generation: u64,
}

impl Var {
    pub fn index(&self) -> usize {
        self.idx
    }
}

/// A multi-input kernel with a hand-written adjoint, recorded as a single node.
///
/// `backward` receives the adjoint of the output and must *accumulate* into
/// `input_adjoints`, which are zero-initialised and sized like the inputs.
pub trait FusedOp: Send + Sync {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&[f64]]) -> Vec<f64>;
    fn backward(
        &self,
        inputs: &[&[f64]],
        output: &[f64],
        out_adj: &[f64],
        input_adjoints: &mut [Vec<f64>],
    );
}

#[derive(Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    /// `scale * x + shift`
    Affine(usize, f64),
    Exp(usize),
    Ln(usize),
    Tanh(usize),
    Sqrt(usize),
    Powf(usize, f64),
    Softplus(usize),
    Max(usize, usize),
    Clamp(usize, f64, f64),
    Sum(usize),
    /// Batched `W x + b` with weights and bias read from a flat parameter node.
    Dense {
        x: usize,
        p: usize,
        w_off: usize,
        b_off: usize,
        n_in: usize,
        n_out: usize,
    },
    Gather(usize, Arc<Vec<usize>>),
    Concat(Vec<usize>),
    /// Column stacking of equal-length fields (or length-1 broadcasts) into row-major `n x k`.
    Stack(Vec<usize>, usize),
    Fused(Vec<usize>, Arc<dyn FusedOp>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Affine(..) => "affine",
            Op::Exp(_) => "exp",
            Op::Ln(_) => "ln",
            Op::Tanh(_) => "tanh",
            Op::Sqrt(_) => "sqrt",
            Op::Powf(..) => "power",
            Op::Softplus(_) => "softplus",
            Op::Max(..) => "max",
            Op::Clamp(..) => "clamp",
            Op::Sum(_) => "reduce-sum",
            Op::Dense { .. } => "matvec",
            Op::Gather(..) => "gather",
            Op::Concat(_) => "concat",
            Op::Stack(..) => "stack",
            Op::Fused(_, f) => f.name(),
        }
    }
}

struct Node {
    op: Op,
    value: Vec<f64>,
}

/// Reverse-mode tape over dense `f64` vectors. Scalars are length-1 vectors.
///
/// Binary elementwise primitives accept equal lengths or a length-1 operand,
/// which is broadcast. Nothing else broadcasts.
pub struct Tape {
    generation: u64,
    nodes: Vec<Node>,
    params: Vec<usize>,
    grad_enabled: bool,
    corrupt_fused_adjoint: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            generation: next_generation(),
            nodes: Vec::new(),
            params: Vec::new(),
            grad_enabled: true,
            corrupt_fused_adjoint: false,
        }
    }

    /// A tape used only for forward evaluation. Solvers may skip recording
    /// intermediate iterates on such a tape.
    pub fn without_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node and starts a new generation; old handles become invalid.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.params.clear();
        self.generation = next_generation();
    }

    /// Negative-control hook: fused kernels built while this is set emit a wrong adjoint.
    #[doc(hidden)]
    pub fn set_corrupt_fused_adjoint(&mut self, on: bool) {
        self.corrupt_fused_adjoint = on;
    }

    #[doc(hidden)]
    pub fn corrupt_fused_adjoint(&self) -> bool {
        self.corrupt_fused_adjoint
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.generation != self.generation || v.idx >= self.nodes.len() {
            return Err(Error::TapeMismatch {
                expected: self.generation,
                found: v.generation,
            });
        }
        Ok(v.idx)
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> Result<Var> {
        let idx = self.nodes.len();
        if value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                op: op.name(),
                node: idx,
            });
        }
        self.nodes.push(Node { op, value });
        Ok(Var {
            idx,
            generation: self.generation,
        })
    }

    pub fn value(&self, v: Var) -> &[f64] {
        assert_eq!(
            v.generation, self.generation,
            "variable from another tape generation"
        );
        &self.nodes[v.idx].value
    }

    pub fn try_value(&self, v: Var) -> Result<&[f64]> {
        let i = self.check(v)?;
        Ok(&self.nodes[i].value)
    }

    /// Primal of a length-1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.len(), 1);
        val[0]
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Result<Var> {
        self.push(Op::Leaf, value)
    }

    pub fn scalar_constant(&mut self, x: f64) -> Result<Var> {
        self.push(Op::Leaf, vec![x])
    }

    /// Registers a trainable leaf. Gradients from [`Tape::backward`] are laid
    /// out in registration order.
    pub fn param(&mut self, value: Vec<f64>) -> Result<Var> {
        let v = self.push(Op::Leaf, value)?;
        self.params.push(v.idx);
        Ok(v)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|&i| self.nodes[i].value.len()).sum()
    }

    // ---- elementwise ----

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: fn(usize, usize) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let value = match (va.len(), vb.len()) {
            (n, m) if n == m => va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect(),
            (1, _) => vb.iter().map(|&y| f(va[0], y)).collect(),
            (_, 1) => va.iter().map(|&x| f(x, vb[0])).collect(),
            (n, m) => {
                return Err(Error::contract(format!(
                    "operand lengths {n} and {m} do not broadcast"
                )))
            }
        };
        self.push(op(ia, ib), value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let ib = self.check(b)?;
        if self.nodes[ib].value.iter().any(|&y| y == 0.0) {
            return Err(Error::RecordedDomain {
                op: "div",
                node: self.nodes.len(),
            });
        }
        self.binary(a, b, Op::Div, |x, y| x / y)
    }

    /// Elementwise maximum. Ties send the adjoint to the first operand.
    pub fn max(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Max, f64::max)
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let i = self.check(x)?;
        let value = self.nodes[i]
            .value
            .iter()
            .map(|&v| scale * v + shift)
            .collect();
        self.push(Op::Affine(i, scale), value)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.affine(x, s, 0.0)
    }

    fn unary(&mut self, x: Var, op: fn(usize) -> Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let i = self.check(x)?;
        let value = self.nodes[i].value.iter().map(|&v| f(v)).collect();
        self.push(op(i), value)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Exp, f64::exp)
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        let i = self.check(x)?;
        if self.nodes[i].value.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::RecordedDomain {
                op: "ln",
                node: self.nodes.len(),
            });
        }
        self.unary(x, Op::Ln, f64::ln)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Tanh, f64::tanh)
    }

    /// Square root. The adjoint at exactly zero is taken as zero.
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        let i = self.check(x)?;
        if self.nodes[i].value.iter().any(|&v| v < 0.0) {
            return Err(Error::RecordedDomain {
                op: "sqrt",
                node: self.nodes.len(),
            });
        }
        self.unary(x, Op::Sqrt, f64::sqrt)
    }

    pub fn powf(&mut self, x: Var, p: f64) -> Result<Var> {
        let i = self.check(x)?;
        if p.fract() != 0.0 && self.nodes[i].value.iter().any(|&v| v < 0.0) {
            return Err(Error::RecordedDomain {
                op: "power",
                node: self.nodes.len(),
            });
        }
        let value = self.nodes[i].value.iter().map(|&v| v.powf(p)).collect();
        self.push(Op::Powf(i, p), value)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Softplus, softplus)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let i = self.check(x)?;
        let value = self.nodes[i]
            .value
            .iter()
            .map(|&v| v.clamp(lo, hi))
            .collect();
        self.push(Op::Clamp(i, lo, hi), value)
    }

    // ---- reductions and reshaping ----

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let i = self.check(x)?;
        let s = self.nodes[i].value.iter().sum();
        self.push(Op::Sum(i), vec![s])
    }

    /// Batched affine layer: `x` is row-major `rows x n_in`; weights (row-major
    /// `n_out x n_in`) and bias (`n_out`) are read from `p` at the given offsets.
    pub fn dense(
        &mut self,
        x: Var,
        p: Var,
        w_off: usize,
        b_off: usize,
        n_in: usize,
        n_out: usize,
    ) -> Result<Var> {
        let (ix, ip) = (self.check(x)?, self.check(p)?);
        let xv = &self.nodes[ix].value;
        let pv = &self.nodes[ip].value;
        if n_in == 0 || xv.len() % n_in != 0 {
            return Err(Error::contract(format!(
                "input of length {} is not a multiple of width {n_in}",
                xv.len()
            )));
        }
        if w_off + n_in * n_out > pv.len() || b_off + n_out > pv.len() {
            return Err(Error::contract(
                "dense layer reads past the parameter block",
            ));
        }
        let rows = xv.len() / n_in;
        let w = &pv[w_off..w_off + n_in * n_out];
        let b = &pv[b_off..b_off + n_out];
        let mut out = vec![0.0; rows * n_out];
        for r in 0..rows {
            let xr = &xv[r * n_in..(r + 1) * n_in];
            for o in 0..n_out {
                let wo = &w[o * n_in..(o + 1) * n_in];
                let mut acc = b[o];
                for k in 0..n_in {
                    acc += wo[k] * xr[k];
                }
                out[r * n_out + o] = acc;
            }
        }
        self.push(
            Op::Dense {
                x: ix,
                p: ip,
                w_off,
                b_off,
                n_in,
                n_out,
            },
            out,
        )
    }

    pub fn gather(&mut self, x: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let i = self.check(x)?;
        let xv = &self.nodes[i].value;
        if let Some(&bad) = idx.iter().find(|&&k| k >= xv.len()) {
            return Err(Error::contract(format!(
                "gather index {bad} out of range {}",
                xv.len()
            )));
        }
        let value = idx.iter().map(|&k| xv[k]).collect();
        self.push(Op::Gather(i, idx), value)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let ids = parts
            .iter()
            .map(|&v| self.check(v))
            .collect::<Result<Vec<_>>>()?;
        let mut value = Vec::new();
        for &i in &ids {
            value.extend_from_slice(&self.nodes[i].value);
        }
        self.push(Op::Concat(ids), value)
    }

    /// Builds a row-major `n x k` matrix whose columns are `cols`. Length-1
    /// columns are broadcast down the rows.
    pub fn stack_columns(&mut self, cols: &[Var]) -> Result<Var> {
        let ids = cols
            .iter()
            .map(|&v| self.check(v))
            .collect::<Result<Vec<_>>>()?;
        let n = ids
            .iter()
            .map(|&i| self.nodes[i].value.len())
            .max()
            .unwrap_or(0);
        if ids.iter().any(|&i| {
            let l = self.nodes[i].value.len();
            l != n && l != 1
        }) {
            return Err(Error::contract("stacked columns must share a length"));
        }
        let k = ids.len();
        let mut value = vec![0.0; n * k];
        for (c, &i) in ids.iter().enumerate() {
            let col = &self.nodes[i].value;
            for r in 0..n {
                value[r * k + c] = if col.len() == 1 { col[0] } else { col[r] };
            }
        }
        self.push(Op::Stack(ids, n), value)
    }

    pub fn fused(&mut self, inputs: &[Var], op: Arc<dyn FusedOp>) -> Result<Var> {
        let ids = inputs
            .iter()
            .map(|&v| self.check(v))
            .collect::<Result<Vec<_>>>()?;
        let value = {
            let refs: Vec<&[f64]> = ids
                .iter()
                .map(|&i| self.nodes[i].value.as_slice())
                .collect();
            op.forward(&refs)
        };
        self.push(Op::Fused(ids, op), value)
    }

    // ---- reverse pass ----

    /// Gradient of a scalar node with respect to every registered parameter,
    /// concatenated in registration order.
    pub fn backward(&self, output: Var) -> Result<Vec<f64>> {
        let adj = self.adjoints(output, &self.params)?;
        Ok(adj.into_iter().flatten().collect())
    }

    /// Gradient of a scalar node with respect to arbitrary nodes.
    pub fn gradient_wrt(&self, output: Var, wrt: &[Var]) -> Result<Vec<Vec<f64>>> {
        let ids = wrt
            .iter()
            .map(|&v| self.check(v))
            .collect::<Result<Vec<_>>>()?;
        self.adjoints(output, &ids)
    }

    fn adjoints(&self, output: Var, keep: &[usize]) -> Result<Vec<Vec<f64>>> {
        let out = self.check(output)?;
        if self.nodes[out].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar output, node {out} has length {}",
                self.nodes[out].value.len()
            )));
        }
        let mut keep_mask = vec![false; out + 1];
        for &k in keep {
            if k <= out {
                keep_mask[k] = true;
            }
        }
        let mut adj: Vec<Vec<f64>> = vec![Vec::new(); out + 1];
        adj[out] = vec![1.0];

        for i in (0..=out).rev() {
            if adj[i].is_empty() {
                continue;
            }
            let g = if keep_mask[i] {
                adj[i].clone()
            } else {
                std::mem::take(&mut adj[i])
            };
            self.propagate(i, &g, &mut adj);
        }

        Ok(keep
            .iter()
            .map(|&k| {
                if k <= out && !adj[k].is_empty() {
                    adj[k].clone()
                } else {
                    vec![0.0; self.nodes[k].value.len()]
                }
            })
            .collect())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Vec<f64>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(adj, self.len_of(*a), *a, g, |_, gk| gk);
                accumulate(adj, self.len_of(*b), *b, g, |_, gk| gk);
            }
            Op::Sub(a, b) => {
                accumulate(adj, self.len_of(*a), *a, g, |_, gk| gk);
                accumulate(adj, self.len_of(*b), *b, g, |_, gk| -gk);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                accumulate(adj, va.len(), *a, g, |k, gk| gk * at(vb, k));
                accumulate(adj, vb.len(), *b, g, |k, gk| gk * at(va, k));
            }
            Op::Div(a, b) => {
                let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                accumulate(adj, va.len(), *a, g, |k, gk| gk / at(vb, k));
                accumulate(adj, vb.len(), *b, g, |k, gk| {
                    -gk * at(va, k) / (at(vb, k) * at(vb, k))
                });
            }
            Op::Affine(x, s) => accumulate(adj, self.len_of(*x), *x, g, |_, gk| gk * s),
            Op::Exp(x) => accumulate(adj, self.len_of(*x), *x, g, |k, gk| gk * y[k]),
            Op::Ln(x) => {
                let vx = &self.nodes[*x].value;
                accumulate(adj, vx.len(), *x, g, |k, gk| gk / vx[k]);
            }
            Op::Tanh(x) => accumulate(adj, self.len_of(*x), *x, g, |k, gk| {
                gk * (1.0 - y[k] * y[k])
            }),
            Op::Sqrt(x) => accumulate(adj, self.len_of(*x), *x, g, |k, gk| {
                if y[k] == 0.0 {
                    0.0
                } else {
                    gk * 0.5 / y[k]
                }
            }),
            Op::Powf(x, p) => {
                let vx = &self.nodes[*x].value;
                accumulate(adj, vx.len(), *x, g, |k, gk| gk * p * vx[k].powf(p - 1.0));
            }
            Op::Softplus(x) => {
                let vx = &self.nodes[*x].value;
                accumulate(adj, vx.len(), *x, g, |k, gk| gk * sigmoid(vx[k]));
            }
            Op::Max(a, b) => {
                let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                accumulate(adj, va.len(), *a, g, |k, gk| {
                    if at(va, k) >= at(vb, k) {
                        gk
                    } else {
                        0.0
                    }
                });
                accumulate(adj, vb.len(), *b, g, |k, gk| {
                    if at(va, k) >= at(vb, k) {
                        0.0
                    } else {
                        gk
                    }
                });
            }
            Op::Clamp(x, lo, hi) => {
                let vx = &self.nodes[*x].value;
                accumulate(adj, vx.len(), *x, g, |k, gk| {
                    if vx[k] >= *lo && vx[k] <= *hi {
                        gk
                    } else {
                        0.0
                    }
                });
            }
            Op::Sum(x) => accumulate(adj, self.len_of(*x), *x, g, |_, _| g[0]),
            Op::Dense {
                x,
                p,
                w_off,
                b_off,
                n_in,
                n_out,
            } => {
                let (n_in, n_out) = (*n_in, *n_out);
                let xv = &self.nodes[*x].value;
                let pv = &self.nodes[*p].value;
                let rows = xv.len() / n_in;
                let w = &pv[*w_off..*w_off + n_in * n_out];
                {
                    let ax = ensure(adj, *x, xv.len());
                    for r in 0..rows {
                        for o in 0..n_out {
                            let go = g[r * n_out + o];
                            if go == 0.0 {
                                continue;
                            }
                            let wo = &w[o * n_in..(o + 1) * n_in];
                            let axr = &mut ax[r * n_in..(r + 1) * n_in];
                            for k in 0..n_in {
                                axr[k] += go * wo[k];
                            }
                        }
                    }
                }
                let ap = ensure(adj, *p, pv.len());
                for r in 0..rows {
                    let xr = &xv[r * n_in..(r + 1) * n_in];
                    for o in 0..n_out {
                        let go = g[r * n_out + o];
                        let aw = &mut ap[*w_off + o * n_in..*w_off + (o + 1) * n_in];
                        for k in 0..n_in {
                            aw[k] += go * xr[k];
                        }
                        ap[*b_off + o] += go;
                    }
                }
            }
            Op::Gather(x, idx) => {
                let ax = ensure(adj, *x, self.len_of(*x));
                for (k, &src) in idx.iter().enumerate() {
                    ax[src] += g[k];
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.len_of(p);
                    let ap = ensure(adj, p, n);
                    for k in 0..n {
                        ap[k] += g[off + k];
                    }
                    off += n;
                }
            }
            Op::Stack(cols, n) => {
                let kcols = cols.len();
                for (c, &col) in cols.iter().enumerate() {
                    let len = self.len_of(col);
                    let ac = ensure(adj, col, len);
                    for r in 0..*n {
                        let t = if len == 1 { 0 } else { r };
                        ac[t] += g[r * kcols + c];
                    }
                }
            }
            Op::Fused(inputs, op) => {
                let refs: Vec<&[f64]> = inputs
                    .iter()
                    .map(|&k| self.nodes[k].value.as_slice())
                    .collect();
                let mut local: Vec<Vec<f64>> = refs.iter().map(|r| vec![0.0; r.len()]).collect();
                op.backward(&refs, y, g, &mut local);
                for (&k, l) in inputs.iter().zip(local) {
                    let ak = ensure(adj, k, l.len());
                    for (a, v) in ak.iter_mut().zip(l) {
                        *a += v;
                    }
                }
            }
        }
    }

    fn len_of(&self, i: usize) -> usize {
        self.nodes[i].value.len()
    }
}

#[inline]
fn at(v: &[f64], k: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[k]
    }
}

fn ensure(adj: &mut [Vec<f64>], i: usize, n: usize) -> &mut Vec<f64> {
    if adj[i].is_empty() {
        adj[i] = vec![0.0; n];
    }
    &mut adj[i]
}

/// Adds `f(k, g[k])` into the adjoint of node `i` (length `n`). A length-1
/// target receives the sum over the broadcast.
fn accumulate(adj: &mut [Vec<f64>], n: usize, i: usize, g: &[f64], f: impl Fn(usize, f64) -> f64) {
    let a = ensure(adj, i, n);
    if n == g.len() {
        for k in 0..n {
            a[k] += f(k, g[k]);
        }
    } else if n == 1 {
        let mut s = 0.0;
        for (k, &gk) in g.iter().enumerate() {
            s += f(k, gk);
        }
        a[0] += s;
    } else {
        // output length 1 broadcast into an n-vector (only reduce-sum does this)
        for k in 0..n {
            a[k] += f(k, g[0]);
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
