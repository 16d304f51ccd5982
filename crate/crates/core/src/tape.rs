//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Tape`] owns every value produced during one forward pass. Operations
//! whose inputs require gradients append a record; [`Tape::backward`] walks
//! those records once, newest first, and hands back a [`Gradients`] table.
//! The tape is single-use: build a fresh one for every forward pass.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value stored on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
}

#[derive(Debug, Clone)]
enum Op {
    MatMul { rows: usize, k: usize, n: usize },
    LeftMatMul { m: usize, k: usize, n: usize, batch: usize },
    BatchMatMul { batch: usize, m: usize, k: usize, n: usize },
    Add,
    Sub,
    Mul,
    AddBias,
    Affine { scale: Vec<f64> },
    MulScalar(f64),
    AddScalar,
    Concat { outer: usize, inner: usize, lens: Vec<usize> },
    Slice { outer: usize, inner: usize, axis_len: usize, start: usize, len: usize },
    Reshape,
    Sigmoid,
    Tanh,
    Relu,
    Abs,
    Softmax { outer: usize, axis_len: usize, inner: usize },
    Sum,
    Mean,
    SymNorm { n: usize },
}

#[derive(Debug)]
struct Record {
    op: Op,
    inputs: Vec<Var>,
    output: Var,
}

/// Per-value gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if `var` was reachable.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

/// Computation tape for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    records: Vec<Record>,
    consumed: bool,
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Below this many multiply-adds a plain loop beats packing.
const SMALL_GEMM: usize = 4096;

/// `c (+)= a · b` for row-major `a: m×k`, `b: k×n` with optional transposes.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    // Row/column strides of the logical (untransposed) operands.
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    if m * k * n <= SMALL_GEMM {
        let (rsa, csa, rsb, csb) = (rsa as usize, csa as usize, rsb as usize, csb as usize);
        for i in 0..m {
            let row = &mut c[i * n..(i + 1) * n];
            if !accumulate {
                row.fill(0.0);
            }
            for p in 0..k {
                let av = a[i * rsa + p * csa];
                if av != 0.0 {
                    for (j, out) in row.iter_mut().enumerate() {
                        *out += av * b[p * rsb + j * csb];
                    }
                }
            }
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths cover m×k, k×n and m×n elements under the given strides.
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded operations.
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.data.clone()).expect("node shape consistent")
    }

    pub fn scalar_value(&self, v: Var) -> Option<f64> {
        let n = &self.nodes[v.0];
        (n.data.len() == 1).then(|| n.data[0])
    }

    /// Places a tensor on the tape; it participates in differentiation when
    /// `tensor.requires_grad()` is set.
    pub fn leaf(&mut self, tensor: &Tensor) -> Result<Var> {
        self.input(tensor.shape().to_vec(), tensor.data().to_vec(), tensor.requires_grad())
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        self.input(shape.to_vec(), data, false)
    }

    pub fn param(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        self.input(shape.to_vec(), data, true)
    }

    fn input(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Result<Var> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape("leaf", &shape, &[data.len()]));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("leaf"));
        }
        self.check_open()?;
        self.nodes.push(Node {
            shape,
            data,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn check_open(&self) -> Result<()> {
        if self.consumed {
            return Err(Error::Autodiff(
                "tape already consumed by backward; start a new forward pass".into(),
            ));
        }
        Ok(())
    }

    fn push(
        &mut self,
        name: &'static str,
        op: Op,
        inputs: Vec<Var>,
        shape: Vec<usize>,
        data: Vec<f64>,
    ) -> Result<Var> {
        self.check_open()?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|&v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            shape,
            data,
            requires_grad,
        });
        let output = Var(self.nodes.len() - 1);
        if requires_grad {
            self.records.push(Record { op, inputs, output });
        }
        Ok(output)
    }

    // ---- linear algebra -------------------------------------------------

    /// `a[..., k] · b[k, n] -> [..., n]`; leading axes of `a` are flattened into rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let k = sb[0];
        let n = sb[1];
        let rows = sa[..sa.len() - 1].iter().product();
        let mut out = vec![0.0; rows * n];
        gemm(rows, k, n, self.value(a), false, self.value(b), false, &mut out, false);
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        self.push("matmul", Op::MatMul { rows, k, n }, vec![a, b], shape, out)
    }

    /// `p[m, k] · x[..., k, n] -> [..., m, n]`, the same `p` applied to every leading index.
    pub fn left_matmul(&mut self, p: Var, x: Var) -> Result<Var> {
        let (sp, sx) = (self.shape(p).to_vec(), self.shape(x).to_vec());
        if sp.len() != 2 || sx.len() < 2 || sx[sx.len() - 2] != sp[1] {
            return Err(Error::shape("left_matmul", &sp, &sx));
        }
        let (m, k) = (sp[0], sp[1]);
        let n = sx[sx.len() - 1];
        let batch: usize = sx[..sx.len() - 2].iter().product();
        let mut out = vec![0.0; batch * m * n];
        {
            let (pv, xv) = (self.value(p), self.value(x));
            for b in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    pv,
                    false,
                    &xv[b * k * n..(b + 1) * k * n],
                    false,
                    &mut out[b * m * n..(b + 1) * m * n],
                    false,
                );
            }
        }
        let mut shape = sx[..sx.len() - 2].to_vec();
        shape.extend([m, n]);
        self.push("left_matmul", Op::LeftMatMul { m, k, n, batch }, vec![p, x], shape, out)
    }

    /// Batched `a[..., m, k] · b[..., k, n]` with identical leading axes.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ok = sa.len() >= 2
            && sa.len() == sb.len()
            && sa[..sa.len() - 2] == sb[..sb.len() - 2]
            && sa[sa.len() - 1] == sb[sb.len() - 2];
        if !ok {
            return Err(Error::shape("bmm", &sa, &sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let n = sb[sb.len() - 1];
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let mut out = vec![0.0; batch * m * n];
        {
            let (av, bv) = (self.value(a), self.value(b));
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &av[i * m * k..(i + 1) * m * k],
                    false,
                    &bv[i * k * n..(i + 1) * k * n],
                    false,
                    &mut out[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
        }
        let mut shape = sa[..sa.len() - 2].to_vec();
        shape.extend([m, n]);
        self.push("bmm", Op::BatchMatMul { batch, m, k, n }, vec![a, b], shape, out)
    }

    /// Symmetric degree normalisation with self-loops:
    /// `P[j][k] = (A[j][k] + I[j][k]) / sqrt(d_j d_k)` with `d_j = Σ_k A[j][k] + 1`.
    ///
    /// Rejects any nonpositive degree.
    pub fn sym_norm_adjacency(&mut self, a: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 2 || sa[0] != sa[1] {
            return Err(Error::shape("sym_norm_adjacency", &sa, &sa));
        }
        let n = sa[0];
        let av = self.value(a);
        let deg: Vec<f64> = (0..n)
            .map(|j| av[j * n..(j + 1) * n].iter().sum::<f64>() + 1.0)
            .collect();
        if let Some(j) = deg.iter().position(|&d| d <= 0.0) {
            return Err(Error::Numerical(format!(
                "nonpositive degree {} at node {j} (mask drift)",
                deg[j]
            )));
        }
        let mut out = vec![0.0; n * n];
        for j in 0..n {
            for k in 0..n {
                let self_loop = if j == k { 1.0 } else { 0.0 };
                out[j * n + k] = (av[j * n + k] + self_loop) / (deg[j] * deg[k]).sqrt();
            }
        }
        self.push("sym_norm_adjacency", Op::SymNorm { n }, vec![a], sa, out)
    }

    // ---- elementwise ----------------------------------------------------

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip(&mut self, name: &'static str, op: Op, a: Var, b: Var, f: fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let data = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(name, op, vec![a, b], shape, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", Op::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", Op::Sub, a, b, |x, y| x - y)
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", Op::Mul, a, b, |x, y| x * y)
    }

    /// Adds `bias[n]` to every row of `x[..., n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(bias).to_vec());
        let n = sb.iter().product::<usize>();
        if sx.is_empty() || sb.len() > 1 || sx[sx.len() - 1] != n {
            return Err(Error::shape("add_bias", &sx, &sb));
        }
        let bv = self.value(bias).to_vec();
        let data = self
            .value(x)
            .chunks(n)
            .flat_map(|row| row.iter().zip(&bv).map(|(a, b)| a + b))
            .collect();
        self.push("add_bias", Op::AddBias, vec![x, bias], sx, data)
    }

    /// `x * scale + shift` with constant per-column `scale`/`shift` over the last axis.
    pub fn affine(&mut self, x: Var, scale: &[f64], shift: &[f64]) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let n = scale.len();
        if sx.is_empty() || sx[sx.len() - 1] != n || shift.len() != n {
            return Err(Error::shape("affine", &sx, &[scale.len(), shift.len()]));
        }
        let data = self
            .value(x)
            .chunks(n)
            .flat_map(|row| {
                row.iter()
                    .zip(scale.iter().zip(shift))
                    .map(|(v, (s, t))| v * s + t)
            })
            .collect();
        self.push(
            "affine",
            Op::Affine {
                scale: scale.to_vec(),
            },
            vec![x],
            sx,
            data,
        )
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let data = self.value(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push("mul_scalar", Op::MulScalar(c), vec![x], shape, data)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let data = self.value(x).iter().map(|v| v + c).collect();
        let shape = self.shape(x).to_vec();
        self.push("add_scalar", Op::AddScalar, vec![x], shape, data)
    }

    /// `c - x`.
    pub fn rsub_scalar(&mut self, c: f64, x: Var) -> Result<Var> {
        let neg = self.mul_scalar(x, -1.0)?;
        self.add_scalar(neg, c)
    }

    fn unary(&mut self, name: &'static str, op: Op, x: Var, f: fn(f64) -> f64) -> Result<Var> {
        let data = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(name, op, vec![x], shape, data)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", Op::Sigmoid, x, sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", Op::Tanh, x, f64::tanh)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", Op::Relu, x, |v| v.max(0.0))
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary("abs", Op::Abs, x, f64::abs)
    }

    /// Softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() {
            return Err(Error::shape("softmax", &sx, &[axis]));
        }
        let (outer, axis_len, inner) = split_axis(&sx, axis);
        let xv = self.value(x);
        let mut out = vec![0.0; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * axis_len + a) * inner + i;
                let max = (0..axis_len).map(|a| xv[idx(a)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for a in 0..axis_len {
                    let e = (xv[idx(a)] - max).exp();
                    out[idx(a)] = e;
                    total += e;
                }
                for a in 0..axis_len {
                    out[idx(a)] /= total;
                }
            }
        }
        self.push(
            "softmax",
            Op::Softmax {
                outer,
                axis_len,
                inner,
            },
            vec![x],
            sx,
            out,
        )
    }

    // ---- reductions -----------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().sum();
        self.push("sum", Op::Sum, vec![x], vec![], vec![s])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.is_empty() {
            return Err(Error::shape("mean", self.shape(x), &[]));
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        self.push("mean", Op::Mean, vec![x], vec![], vec![m])
    }

    // ---- structural -----------------------------------------------------

    /// Concatenates along an existing axis.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .map(|&v| self.shape(v).to_vec())
            .ok_or_else(|| Error::Data("concat of zero tensors".into()))?;
        if axis >= first.len() {
            return Err(Error::shape("concat", &first, &[axis]));
        }
        let mut lens = Vec::with_capacity(xs.len());
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &first, s));
            }
            lens.push(s[axis]);
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut shape = first.clone();
        shape[axis] = lens.iter().sum();
        self.concat_raw("concat", xs, outer, inner, lens, shape)
    }

    /// Stacks equally shaped tensors along a new axis inserted at `axis`.
    pub fn stack(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .map(|&v| self.shape(v).to_vec())
            .ok_or_else(|| Error::Data("stack of zero tensors".into()))?;
        if axis > first.len() {
            return Err(Error::shape("stack", &first, &[axis]));
        }
        for &v in xs {
            if self.shape(v) != first.as_slice() {
                return Err(Error::shape("stack", &first, self.shape(v)));
            }
        }
        let outer = first[..axis].iter().product();
        let inner = first[axis..].iter().product();
        let mut shape = first.clone();
        shape.insert(axis, xs.len());
        self.concat_raw("stack", xs, outer, inner, vec![1; xs.len()], shape)
    }

    fn concat_raw(
        &mut self,
        name: &'static str,
        xs: &[Var],
        outer: usize,
        inner: usize,
        lens: Vec<usize>,
        shape: Vec<usize>,
    ) -> Result<Var> {
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&v, &len) in xs.iter().zip(&lens) {
                let chunk = len * inner;
                out.extend_from_slice(&self.value(v)[o * chunk..(o + 1) * chunk]);
            }
        }
        self.push(name, Op::Concat { outer, inner, lens }, xs.to_vec(), shape, out)
    }

    /// `x[.., start..start+len, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() || start + len > sx[axis] {
            return Err(Error::shape("slice", &sx, &[axis, start, len]));
        }
        let (outer, axis_len, inner) = split_axis(&sx, axis);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * axis_len + start) * inner;
            out.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut shape = sx;
        shape[axis] = len;
        self.push(
            "slice",
            Op::Slice {
                outer,
                inner,
                axis_len,
                start,
                len,
            },
            vec![x],
            shape,
            out,
        )
    }

    /// Removes `axis` by taking index `i` along it.
    pub fn index_axis(&mut self, x: Var, axis: usize, i: usize) -> Result<Var> {
        let sliced = self.slice(x, axis, i, 1)?;
        let mut shape = self.shape(sliced).to_vec();
        shape.remove(axis);
        self.reshape(sliced, &shape)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let sx = self.shape(x);
        if sx.iter().product::<usize>() != shape.iter().product::<usize>() {
            return Err(Error::shape("reshape", sx, shape));
        }
        let data = self.value(x).to_vec();
        self.push("reshape", Op::Reshape, vec![x], shape.to_vec(), data)
    }

    // ---- backward -------------------------------------------------------

    /// Propagates gradients from the scalar `loss` back through every record.
    ///
    /// The tape is consumed: further operations or a second call fail.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Autodiff(
                "backward called twice without a new forward pass".into(),
            ));
        }
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::Autodiff(format!(
                "loss must be scalar, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        let records = std::mem::take(&mut self.records);
        for rec in records.iter().rev() {
            let Some(gout) = grads[rec.output.0].take() else {
                continue;
            };
            let local = self.local_grads(rec, &gout);
            grads[rec.output.0] = Some(gout);
            for (&input, g) in rec.inputs.iter().zip(local) {
                let Some(g) = g else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        self.consumed = true;
        Ok(Gradients { grads })
    }

    /// Vector-Jacobian products of one record; `None` for inputs that need none.
    fn local_grads(&self, rec: &Record, gout: &[f64]) -> Vec<Option<Vec<f64>>> {
        let needs = |i: usize| self.nodes[rec.inputs[i].0].requires_grad;
        let val = |i: usize| self.value(rec.inputs[i]);
        let out = self.value(rec.output);
        match &rec.op {
            Op::MatMul { rows, k, n } => {
                let (rows, k, n) = (*rows, *k, *n);
                let ga = needs(0).then(|| {
                    let mut g = vec![0.0; rows * k];
                    gemm(rows, n, k, gout, false, val(1), true, &mut g, false);
                    g
                });
                let gb = needs(1).then(|| {
                    let mut g = vec![0.0; k * n];
                    gemm(k, rows, n, val(0), true, gout, false, &mut g, false);
                    g
                });
                vec![ga, gb]
            }
            Op::LeftMatMul { m, k, n, batch } => {
                let (m, k, n, batch) = (*m, *k, *n, *batch);
                let gp = needs(0).then(|| {
                    let mut g = vec![0.0; m * k];
                    let xv = val(1);
                    for b in 0..batch {
                        gemm(
                            m,
                            n,
                            k,
                            &gout[b * m * n..(b + 1) * m * n],
                            false,
                            &xv[b * k * n..(b + 1) * k * n],
                            true,
                            &mut g,
                            true,
                        );
                    }
                    g
                });
                let gx = needs(1).then(|| {
                    let mut g = vec![0.0; batch * k * n];
                    let pv = val(0);
                    for b in 0..batch {
                        gemm(
                            k,
                            m,
                            n,
                            pv,
                            true,
                            &gout[b * m * n..(b + 1) * m * n],
                            false,
                            &mut g[b * k * n..(b + 1) * k * n],
                            false,
                        );
                    }
                    g
                });
                vec![gp, gx]
            }
            Op::BatchMatMul { batch, m, k, n } => {
                let (batch, m, k, n) = (*batch, *m, *k, *n);
                let (av, bv) = (val(0), val(1));
                let ga = needs(0).then(|| {
                    let mut g = vec![0.0; batch * m * k];
                    for i in 0..batch {
                        gemm(
                            m,
                            n,
                            k,
                            &gout[i * m * n..(i + 1) * m * n],
                            false,
                            &bv[i * k * n..(i + 1) * k * n],
                            true,
                            &mut g[i * m * k..(i + 1) * m * k],
                            false,
                        );
                    }
                    g
                });
                let gb = needs(1).then(|| {
                    let mut g = vec![0.0; batch * k * n];
                    for i in 0..batch {
                        gemm(
                            k,
                            m,
                            n,
                            &av[i * m * k..(i + 1) * m * k],
                            true,
                            &gout[i * m * n..(i + 1) * m * n],
                            false,
                            &mut g[i * k * n..(i + 1) * k * n],
                            false,
                        );
                    }
                    g
                });
                vec![ga, gb]
            }
            Op::Add => vec![
                needs(0).then(|| gout.to_vec()),
                needs(1).then(|| gout.to_vec()),
            ],
            Op::Sub => vec![
                needs(0).then(|| gout.to_vec()),
                needs(1).then(|| gout.iter().map(|g| -g).collect()),
            ],
            Op::Mul => {
                let (av, bv) = (val(0), val(1));
                vec![
                    needs(0).then(|| gout.iter().zip(bv).map(|(g, b)| g * b).collect()),
                    needs(1).then(|| gout.iter().zip(av).map(|(g, a)| g * a).collect()),
                ]
            }
            Op::AddBias => {
                let n = val(1).len();
                let gb = needs(1).then(|| {
                    let mut g = vec![0.0; n];
                    for row in gout.chunks(n) {
                        g.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    g
                });
                vec![needs(0).then(|| gout.to_vec()), gb]
            }
            Op::Affine { scale } => {
                let n = scale.len();
                vec![Some(
                    gout.chunks(n)
                        .flat_map(|row| row.iter().zip(scale).map(|(g, s)| g * s))
                        .collect(),
                )]
            }
            Op::MulScalar(c) => vec![Some(gout.iter().map(|g| g * c).collect())],
            Op::AddScalar | Op::Reshape => vec![Some(gout.to_vec())],
            Op::Sigmoid => vec![Some(
                gout.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)).collect(),
            )],
            Op::Tanh => vec![Some(
                gout.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)).collect(),
            )],
            Op::Relu => vec![Some(
                gout.iter()
                    .zip(val(0))
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect(),
            )],
            // Subgradient 0 at x == 0.
            Op::Abs => vec![Some(
                gout.iter()
                    .zip(val(0))
                    .map(|(g, &x)| {
                        if x > 0.0 {
                            *g
                        } else if x < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    })
                    .collect(),
            )],
            Op::Softmax {
                outer,
                axis_len,
                inner,
            } => {
                let (outer, axis_len, inner) = (*outer, *axis_len, *inner);
                let mut g = vec![0.0; out.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |a: usize| (o * axis_len + a) * inner + i;
                        let dot: f64 = (0..axis_len).map(|a| gout[idx(a)] * out[idx(a)]).sum();
                        for a in 0..axis_len {
                            g[idx(a)] = out[idx(a)] * (gout[idx(a)] - dot);
                        }
                    }
                }
                vec![Some(g)]
            }
            Op::Sum => {
                let n = val(0).len();
                vec![Some(vec![gout[0]; n])]
            }
            Op::Mean => {
                let n = val(0).len();
                vec![Some(vec![gout[0] / n as f64; n])]
            }
            Op::Concat { outer, inner, lens } => {
                let total: usize = lens.iter().sum();
                let mut offset = 0;
                let mut res = Vec::with_capacity(lens.len());
                for (i, &len) in lens.iter().enumerate() {
                    if !needs(i) {
                        res.push(None);
                        offset += len;
                        continue;
                    }
                    let chunk = len * inner;
                    let mut g = Vec::with_capacity(outer * chunk);
                    for o in 0..*outer {
                        let base = (o * total + offset) * inner;
                        g.extend_from_slice(&gout[base..base + chunk]);
                    }
                    res.push(Some(g));
                    offset += len;
                }
                res
            }
            Op::Slice {
                outer,
                inner,
                axis_len,
                start,
                len,
            } => {
                let mut g = vec![0.0; outer * axis_len * inner];
                let chunk = len * inner;
                for o in 0..*outer {
                    let base = (o * axis_len + start) * inner;
                    g[base..base + chunk].copy_from_slice(&gout[o * chunk..(o + 1) * chunk]);
                }
                vec![Some(g)]
            }
            Op::SymNorm { n } => vec![Some(sym_norm_backward(*n, val(0), gout))],
        }
    }
}

fn sym_norm_backward(n: usize, a: &[f64], gout: &[f64]) -> Vec<f64> {
    let deg: Vec<f64> = (0..n)
        .map(|j| a[j * n..(j + 1) * n].iter().sum::<f64>() + 1.0)
        .collect();
    let s: Vec<f64> = deg.iter().map(|d| d.powf(-0.5)).collect();
    let entry = |j: usize, k: usize| a[j * n + k] + if j == k { 1.0 } else { 0.0 };
    // dL/ds_j collects every appearance of s_j as a row or column factor.
    let mut ds = vec![0.0; n];
    for j in 0..n {
        for k in 0..n {
            let g = gout[j * n + k] * entry(j, k);
            ds[j] += g * s[k];
            ds[k] += g * s[j];
        }
    }
    let dd: Vec<f64> = (0..n).map(|j| ds[j] * -0.5 * s[j] / deg[j]).collect();
    let mut g = vec![0.0; n * n];
    for j in 0..n {
        for k in 0..n {
            g[j * n + k] = gout[j * n + k] * s[j] * s[k] + dd[j];
        }
    }
    g
}
