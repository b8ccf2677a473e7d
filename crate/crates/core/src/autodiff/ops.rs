use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::graph::{Input, Node, NodeRef};
use super::{Array, Graph, Tensor};

/// Gather/scatter index meaning "no source": reads as zero, receives nothing.
pub const PAD: usize = usize::MAX;

#[derive(Clone)]
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    /// `scale * x + shift`
    Affine { scale: f64 },
    Relu { mask: Arc<Array> },
    Sigmoid,
    Softplus,
    /// Elementwise max of two tensors; `mask` is 1 where the first operand won.
    Maximum { mask: Arc<Array> },
    MatMul,
    Transpose,
    Reshape,
    SumAll,
    Expand,
    Gather { index: Arc<[usize]> },
    ScatterAdd { index: Arc<[usize]> },
    Concat,
}

impl Op {
    /// Vector-Jacobian product for each input. Built from tensor operations so
    /// that it records onto the graph whenever its operands are attached.
    pub(crate) fn vjp(&self, inputs: &[Tensor], output: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add => vec![
                Some(reduce_to(g, inputs[0].shape())),
                Some(reduce_to(g, inputs[1].shape())),
            ],
            Op::Sub => vec![
                Some(reduce_to(g, inputs[0].shape())),
                Some(reduce_to(&g.scale(-1.0), inputs[1].shape())),
            ],
            Op::Mul => vec![
                Some(reduce_to(&g.mul(&inputs[1]), inputs[0].shape())),
                Some(reduce_to(&g.mul(&inputs[0]), inputs[1].shape())),
            ],
            Op::Affine { scale } => vec![Some(g.scale(*scale))],
            Op::Relu { mask } => vec![Some(g.mul(&Tensor::constant_shared(mask.clone())))],
            Op::Sigmoid => {
                // σ' = σ(1 − σ), expressed on the recorded output
                let slope = output.mul(&output.affine(-1.0, 1.0));
                vec![Some(g.mul(&slope))]
            }
            Op::Softplus => vec![Some(g.mul(&inputs[0].sigmoid()))],
            Op::Maximum { mask } => {
                let first = Tensor::constant_shared(mask.clone());
                let second = Tensor::constant(mask.map(|m| 1.0 - m));
                vec![Some(g.mul(&first)), Some(g.mul(&second))]
            }
            Op::MatMul => vec![
                Some(g.matmul(&inputs[1].transpose())),
                Some(inputs[0].transpose().matmul(g)),
            ],
            Op::Transpose => vec![Some(g.transpose())],
            Op::Reshape => vec![Some(g.reshape(inputs[0].shape()))],
            Op::SumAll => vec![Some(g.expand(inputs[0].shape()))],
            Op::Expand => vec![Some(g.sum_all().reshape(inputs[0].shape()))],
            Op::Gather { index } => vec![Some(g.scatter_add(index.clone(), inputs[0].shape()))],
            Op::ScatterAdd { index } => vec![Some(g.gather(index.clone(), inputs[0].shape()))],
            Op::Concat => {
                let (a, b) = (inputs[0].shape(), inputs[1].shape());
                let (ia, ib) = concat_indices(a, b);
                vec![Some(g.gather(ia, a)), Some(g.gather(ib, b))]
            }
        }
    }
}

fn reduce_to(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        g.clone()
    } else {
        g.sum_all().reshape(shape)
    }
}

fn record(op: Op, operands: &[&Tensor], output: Array) -> Tensor {
    let mut graph: Option<&Graph> = None;
    for t in operands {
        if let Some(n) = &t.node {
            match graph {
                None => graph = Some(&n.graph),
                Some(g) => assert!(g.same(&n.graph), "operands belong to different graphs"),
            }
        }
    }
    let output = Arc::new(output);
    let Some(graph) = graph else {
        return Tensor::constant_shared(output);
    };
    let inputs = operands
        .iter()
        .map(|t| Input {
            id: t.node.as_ref().map(|n| n.id),
            value: t.value.clone(),
        })
        .collect();
    let id = graph.push(Node {
        op,
        inputs,
        output: output.clone(),
    });
    Tensor {
        value: output,
        node: Some(NodeRef {
            graph: graph.clone(),
            id,
        }),
    }
}

fn note_routing(operands: &[&Tensor], bits: impl IntoIterator<Item = u64>) {
    if let Some(n) = operands.iter().find_map(|t| t.node.as_ref()) {
        n.graph.mix_routing(bits);
    }
}

fn pack_mask(mask: &Array) -> Vec<u64> {
    mask.data()
        .chunks(64)
        .map(|c| {
            c.iter()
                .enumerate()
                .fold(0u64, |w, (i, &m)| if m > 0.0 { w | (1 << i) } else { w })
        })
        .collect()
}

/// Output shape for a binary elementwise op with scalar-only broadcasting.
fn broadcast_shape(a: &Array, b: &Array) -> Vec<usize> {
    if a.shape() == b.shape() || b.is_scalar() {
        a.shape().to_vec()
    } else if a.is_scalar() {
        b.shape().to_vec()
    } else {
        panic!("shape mismatch: {:?} vs {:?}", a.shape(), b.shape());
    }
}

fn zip_broadcast(a: &Array, b: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
    let shape = broadcast_shape(a, b);
    let data = if a.len() == b.len() {
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
    } else if b.is_scalar() {
        let y = b.item();
        a.data().iter().map(|&x| f(x, y)).collect()
    } else {
        let x = a.item();
        b.data().iter().map(|&y| f(x, y)).collect()
    };
    Array::new(&shape, data)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-libm::fabs(x)))
}

fn concat_indices(a: &[usize], b: &[usize]) -> (Arc<[usize]>, Arc<[usize]>) {
    let p = *a.last().unwrap_or(&1);
    let q = *b.last().unwrap_or(&1);
    let rows = a[..a.len().saturating_sub(1)].iter().product::<usize>();
    let width = p + q;
    let ia: Vec<usize> = (0..rows)
        .flat_map(|r| (0..p).map(move |c| r * width + c))
        .collect();
    let ib: Vec<usize> = (0..rows)
        .flat_map(|r| (0..q).map(move |c| r * width + p + c))
        .collect();
    (ia.into(), ib.into())
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Tensor {
        let out = zip_broadcast(&self.value, &other.value, |x, y| x + y);
        record(Op::Add, &[self, other], out)
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        let out = zip_broadcast(&self.value, &other.value, |x, y| x - y);
        record(Op::Sub, &[self, other], out)
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        let out = zip_broadcast(&self.value, &other.value, |x, y| x * y);
        record(Op::Mul, &[self, other], out)
    }

    /// `scale * self + shift`.
    pub fn affine(&self, scale: f64, shift: f64) -> Tensor {
        let out = self.value.map(|x| scale * x + shift);
        record(Op::Affine { scale }, &[self], out)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.affine(factor, 0.0)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn relu(&self) -> Tensor {
        let mask = self.value.map(|x| if x > 0.0 { 1.0 } else { 0.0 });
        note_routing(&[self], pack_mask(&mask));
        let out = self.value.map(|x| x.max(0.0));
        record(Op::Relu { mask: Arc::new(mask) }, &[self], out)
    }

    pub fn sigmoid(&self) -> Tensor {
        let out = self.value.map(sigmoid);
        record(Op::Sigmoid, &[self], out)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Tensor {
        let out = self.value.map(softplus);
        record(Op::Softplus, &[self], out)
    }

    /// Elementwise max of two equally shaped tensors; ties go to `self`.
    pub fn maximum(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape(), other.shape(), "maximum needs equal shapes");
        let mask = zip_broadcast(&self.value, &other.value, |x, y| if x >= y { 1.0 } else { 0.0 });
        note_routing(&[self, other], pack_mask(&mask));
        let out = zip_broadcast(&self.value, &other.value, f64::max);
        record(Op::Maximum { mask: Arc::new(mask) }, &[self, other], out)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let (a, b) = (&self.value, &other.value);
        assert!(
            a.rank() == 2 && b.rank() == 2 && a.shape()[1] == b.shape()[0],
            "matmul shape mismatch: {:?} x {:?}",
            a.shape(),
            b.shape()
        );
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let (ad, bd) = (a.data(), b.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = ad[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &y) in row.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        record(Op::MatMul, &[self, other], Array::new(&[m, n], out))
    }

    pub fn transpose(&self) -> Tensor {
        let a = &self.value;
        assert_eq!(a.rank(), 2, "transpose needs a matrix, got {:?}", a.shape());
        let (m, n) = (a.shape()[0], a.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = a.data()[i * n + j];
            }
        }
        record(Op::Transpose, &[self], Array::new(&[n, m], out))
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        let out = (*self.value).clone().with_shape(shape);
        record(Op::Reshape, &[self], out)
    }

    /// Sum of all entries, shape `[]`.
    pub fn sum_all(&self) -> Tensor {
        let s = self.value.data().iter().sum();
        record(Op::SumAll, &[self], Array::scalar(s))
    }

    /// Broadcasts a scalar to `shape`.
    pub fn expand(&self, shape: &[usize]) -> Tensor {
        let out = Array::full(shape, self.value.item());
        record(Op::Expand, &[self], out)
    }

    /// `out[k] = self[index[k]]` over the flat data, or zero where `index[k] == PAD`.
    pub fn gather(&self, index: Arc<[usize]>, shape: &[usize]) -> Tensor {
        let src = self.value.data();
        let data = index
            .iter()
            .map(|&i| if i == PAD { 0.0 } else { src[i] })
            .collect();
        let out = Array::new(shape, data);
        record(Op::Gather { index }, &[self], out)
    }

    /// `out[index[k]] += self[k]` into a zero tensor of `shape`; `PAD` entries are dropped.
    pub fn scatter_add(&self, index: Arc<[usize]>, shape: &[usize]) -> Tensor {
        assert_eq!(index.len(), self.value.len(), "scatter index length mismatch");
        let mut out = Array::zeros(shape);
        {
            let dst = out.data_mut();
            for (&i, &v) in index.iter().zip(self.value.data()) {
                if i != PAD {
                    dst[i] += v;
                }
            }
        }
        record(Op::ScatterAdd { index }, &[self], out)
    }

    /// Concatenation along the last axis; leading extents must agree.
    pub fn concat(&self, other: &Tensor) -> Tensor {
        let (a, b) = (self.shape(), other.shape());
        assert!(
            a.len() == b.len() && !a.is_empty() && a[..a.len() - 1] == b[..b.len() - 1],
            "concat shape mismatch: {:?} vs {:?}",
            a,
            b
        );
        let (p, q) = (a[a.len() - 1], b[b.len() - 1]);
        let rows = self.value.len() / p.max(1);
        let mut data = Vec::with_capacity(self.value.len() + other.value.len());
        for r in 0..rows {
            data.extend_from_slice(&self.value.data()[r * p..(r + 1) * p]);
            data.extend_from_slice(&other.value.data()[r * q..(r + 1) * q]);
        }
        let mut shape = a.to_vec();
        *shape.last_mut().unwrap() = p + q;
        record(Op::Concat, &[self, other], Array::new(&shape, data))
    }

    /// Max over `axis`, which is removed from the shape. The gradient goes
    /// entirely to the first maximal element of each pooled group.
    pub fn maxpool_axis(&self, axis: usize) -> Tensor {
        let shape = self.shape();
        assert!(axis < shape.len(), "axis {} out of range for {:?}", axis, shape);
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        assert!(len > 0, "cannot max-pool an empty axis");
        let data = self.data();
        let mut index = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut best = base;
                for l in 1..len {
                    let at = base + l * inner;
                    if data[at] > data[best] {
                        best = at;
                    }
                }
                index.push(best);
            }
        }
        note_routing(&[self], index.iter().map(|&i| i as u64));
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        self.gather(index.into(), &out_shape)
    }

    /// Sums a matrix over its last axis: `[n, d] -> [n]`.
    pub fn sum_last_axis(&self) -> Tensor {
        assert_eq!(self.value.rank(), 2, "sum_last_axis needs a matrix");
        let (n, d) = (self.shape()[0], self.shape()[1]);
        let ones = Tensor::constant(Array::ones(&[d, 1]));
        self.matmul(&ones).reshape(&[n])
    }

    /// Sum of the elementwise product.
    pub fn dot(&self, other: &Tensor) -> Tensor {
        self.mul(other).sum_all()
    }

    /// Same-length 1-D convolution over rows of `self: [n, d_in]` with
    /// `kernel: [w, d_in, d_out]` and `bias: [d_out]`. Rows outside the
    /// sequence are zero; output row `i` sees input rows `i - w/2 ..= i + w/2`.
    ///
    /// Panics on an even window.
    pub fn conv1d_same(&self, kernel: &Tensor, bias: &Tensor) -> Tensor {
        let (x, k) = (self.shape(), kernel.shape());
        assert_eq!(x.len(), 2, "conv input must be [n, d]");
        assert_eq!(k.len(), 3, "conv kernel must be [w, d_in, d_out]");
        let (n, d_in) = (x[0], x[1]);
        let (w, kd_in, d_out) = (k[0], k[1], k[2]);
        assert!(w % 2 == 1, "convolution window must be odd, got {}", w);
        assert!(n >= 1, "convolution input must have at least one row");
        assert_eq!(d_in, kd_in, "kernel input width mismatch");
        assert_eq!(bias.shape(), [d_out], "bias must be [d_out]");

        let half = w / 2;
        let mut unfold = Vec::with_capacity(n * w * d_in);
        for i in 0..n {
            for t in 0..w {
                let row = (i + t).checked_sub(half).filter(|&r| r < n);
                for a in 0..d_in {
                    unfold.push(row.map_or(PAD, |r| r * d_in + a));
                }
            }
        }
        let windows = self.gather(unfold.into(), &[n, w * d_in]);
        let taps = kernel.reshape(&[w * d_in, d_out]);
        let bias_rows: Vec<usize> = (0..n).flat_map(|_| 0..d_out).collect();
        windows
            .matmul(&taps)
            .add(&bias.gather(bias_rows.into(), &[n, d_out]))
    }
}
