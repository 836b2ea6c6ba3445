use super::kernels::{self, Window};
use super::{cast, conv_output_len, deconv_output_len, Result, Scalar, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Square(Var),
    Sum(Var),
    Reshape(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    ChannelBias { input: Var, bias: Var },
    Dense { input: Var, weight: Var, bias: Var },
    Conv2d { input: Var, kernel: Var, window: Window, out_channels: usize },
    Deconv2d { input: Var, kernel: Var, window: Window, in_channels: usize },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
}

/// Define-by-run record of tensor operations.
///
/// Nodes are appended in execution order, so the node list is already a
/// topological order and backward simply walks it in reverse.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Gradients are tracked iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn tracks(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    fn derived(&mut self, shape: Vec<usize>, data: Vec<T>, inputs: &[Var], op: Op) -> Var {
        let mut t = Tensor::new(shape, data).expect("op produced consistent shape");
        t.requires_grad = inputs.iter().any(|&v| self.tracks(v));
        self.push(t, op)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len() {
            return Err(TensorError::Rank {
                op,
                expected: sa.len(),
                found: sb.len(),
            });
        }
        for (axis, (&x, &y)) in sa.iter().zip(sb).enumerate() {
            if x != y {
                return Err(TensorError::Dimension {
                    op,
                    axis: AXES.get(axis).copied().unwrap_or("trailing"),
                    expected: x,
                    found: y,
                });
            }
        }
        Ok(())
    }

    fn zip_map(&mut self, op_name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(op_name, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.derived(shape, data, &[a, b], op))
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(T) -> T) -> Var {
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.derived(shape, data, &[a], op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let f: T = cast(factor);
        self.map(a, Op::Scale(a, factor), |x| x * f)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let c: T = cast(c);
        self.map(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), |x| x.exp())
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, Op::Square(a), |x| x * x)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let s: T = cast(slope);
        self.map(a, Op::LeakyRelu(a, slope), |x| if x > T::zero() { x } else { x * s })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    /// Sum of all elements as a shape-`[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().fold(T::zero(), |acc, &x| acc + x);
        self.derived(vec![1], vec![total], &[a], Op::Sum(a))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        let data = self.value(a).data().to_vec();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                found: data.len(),
            });
        }
        Ok(self.derived(shape, data, &[a], Op::Reshape(a)))
    }

    /// Adds `bias[c]` to every element of channel `c` of an `[N, C, ...]` input.
    pub fn channel_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.len() < 2 {
            return Err(TensorError::Rank {
                op: "channel_bias",
                expected: 4,
                found: shape.len(),
            });
        }
        let channels = shape[1];
        if self.value(bias).len() != channels {
            return Err(TensorError::Dimension {
                op: "channel_bias",
                axis: "channels",
                expected: channels,
                found: self.value(bias).len(),
            });
        }
        let inner: usize = shape[2..].iter().product();
        let b = self.value(bias).data();
        let data = self
            .value(input)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + b[(i / inner) % channels])
            .collect();
        Ok(self.derived(shape, data, &[input, bias], Op::ChannelBias { input, bias }))
    }

    /// `input[N,D] · weight[D,M] + bias[M]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(input).to_vec(), self.shape(weight).to_vec());
        if xs.len() != 2 {
            return Err(TensorError::Rank { op: "dense", expected: 2, found: xs.len() });
        }
        if ws.len() != 2 {
            return Err(TensorError::Rank { op: "dense", expected: 2, found: ws.len() });
        }
        if xs[1] != ws[0] {
            return Err(TensorError::Dimension {
                op: "dense",
                axis: "inner",
                expected: ws[0],
                found: xs[1],
            });
        }
        let (n, d, m) = (xs[0], xs[1], ws[1]);
        if self.value(bias).len() != m {
            return Err(TensorError::Dimension {
                op: "dense",
                axis: "bias",
                expected: m,
                found: self.value(bias).len(),
            });
        }
        let b = self.value(bias).data();
        let mut out: Vec<T> = (0..n).flat_map(|_| b.iter().copied()).collect();
        kernels::gemm_nn(self.value(input).data(), self.value(weight).data(), &mut out, n, d, m);
        Ok(self.derived(vec![n, m], out, &[input, weight, bias], Op::Dense { input, weight, bias }))
    }

    /// Cross-correlation of `input[N,Cin,H,W]` with `kernel[Cout,Cin,kh,kw]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        const OP: &str = "conv2d";
        if stride == 0 {
            return Err(TensorError::Stride(OP));
        }
        let xs = rank4(OP, self.shape(input))?;
        let ks = rank4(OP, self.shape(kernel))?;
        if xs[1] != ks[1] {
            return Err(TensorError::Dimension {
                op: OP,
                axis: "in_channels",
                expected: ks[1],
                found: xs[1],
            });
        }
        let too_large = || TensorError::KernelTooLarge {
            op: OP,
            kernel: ks[2],
            kernel_w: ks[3],
            padded: xs[2] + 2 * padding,
            padded_w: xs[3] + 2 * padding,
        };
        let out_h = conv_output_len(xs[2], ks[2], stride, padding).ok_or_else(too_large)?;
        let out_w = conv_output_len(xs[3], ks[3], stride, padding).ok_or_else(too_large)?;
        let window = Window {
            channels: xs[1],
            height: xs[2],
            width: xs[3],
            kernel_h: ks[2],
            kernel_w: ks[3],
            stride,
            padding,
            out_h,
            out_w,
        };
        let out = kernels::conv2d_forward(self.value(input).data(), self.value(kernel).data(), xs[0], ks[0], &window);
        Ok(self.derived(
            vec![xs[0], ks[0], out_h, out_w],
            out,
            &[input, kernel],
            Op::Conv2d { input, kernel, window, out_channels: ks[0] },
        ))
    }

    /// Transposed convolution of `input[N,Cin,H,W]` with `kernel[Cin,Cout,kh,kw]`;
    /// the adjoint of [`Tape::conv2d`] under the same kernel.
    pub fn deconv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        const OP: &str = "deconv2d";
        if stride == 0 {
            return Err(TensorError::Stride(OP));
        }
        let xs = rank4(OP, self.shape(input))?;
        let ks = rank4(OP, self.shape(kernel))?;
        if xs[1] != ks[0] {
            return Err(TensorError::Dimension {
                op: OP,
                axis: "in_channels",
                expected: ks[0],
                found: xs[1],
            });
        }
        let too_large = || TensorError::KernelTooLarge {
            op: OP,
            kernel: ks[2],
            kernel_w: ks[3],
            padded: xs[2],
            padded_w: xs[3],
        };
        let out_h = deconv_output_len(xs[2], ks[2], stride, padding).ok_or_else(too_large)?;
        let out_w = deconv_output_len(xs[3], ks[3], stride, padding).ok_or_else(too_large)?;
        let window = Window {
            channels: ks[1],
            height: out_h,
            width: out_w,
            kernel_h: ks[2],
            kernel_w: ks[3],
            stride,
            padding,
            out_h: xs[2],
            out_w: xs[3],
        };
        let out = kernels::deconv2d_forward(self.value(input).data(), self.value(kernel).data(), xs[0], xs[1], &window);
        Ok(self.derived(
            vec![xs[0], ks[1], out_h, out_w],
            out,
            &[input, kernel],
            Op::Deconv2d { input, kernel, window, in_channels: xs[1] },
        ))
    }

    /// Reverse pass from a scalar `loss`, storing a gradient on every tracked node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].value.requires_grad() {
                continue;
            }
            let contributions = self.local_grads(idx, &g);
            self.nodes[idx].value.set_grad(g);
            for (input, delta) in contributions {
                if !self.tracks(input) {
                    continue;
                }
                match grads[input.0].as_mut() {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += *d),
                    None => grads[input.0] = Some(delta),
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, idx: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let val = |v: Var| self.value(v).data();
        match node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(a, g.to_vec()), (b, g.to_vec())],
            Op::Sub(a, b) => vec![(a, g.to_vec()), (b, g.iter().map(|&x| -x).collect())],
            Op::Mul(a, b) => {
                let (va, vb) = (val(a), val(b));
                vec![
                    (a, g.iter().zip(vb).map(|(&g, &y)| g * y).collect()),
                    (b, g.iter().zip(va).map(|(&g, &x)| g * x).collect()),
                ]
            }
            Op::Scale(a, f) => {
                let f: T = cast(f);
                vec![(a, g.iter().map(|&x| x * f).collect())]
            }
            Op::AddScalar(a) | Op::Reshape(a) => vec![(a, g.to_vec())],
            Op::Exp(a) => vec![(a, g.iter().zip(out).map(|(&g, &y)| g * y).collect())],
            Op::Square(a) => {
                let two = cast::<T>(2.0);
                vec![(a, g.iter().zip(val(a)).map(|(&g, &x)| g * two * x).collect())]
            }
            Op::Sum(a) => vec![(a, vec![g[0]; self.value(a).len()])],
            Op::Relu(a) => vec![(
                a,
                g.iter()
                    .zip(val(a))
                    .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                    .collect(),
            )],
            Op::LeakyRelu(a, slope) => {
                let s: T = cast(slope);
                vec![(
                    a,
                    g.iter()
                        .zip(val(a))
                        .map(|(&g, &x)| if x > T::zero() { g } else { g * s })
                        .collect(),
                )]
            }
            Op::Sigmoid(a) => vec![(
                a,
                g.iter().zip(out).map(|(&g, &y)| g * y * (T::one() - y)).collect(),
            )],
            Op::ChannelBias { input, bias } => {
                let shape = self.shape(input);
                let channels = shape[1];
                let inner: usize = shape[2..].iter().product();
                let mut db = vec![T::zero(); channels];
                for (i, &gv) in g.iter().enumerate() {
                    db[(i / inner) % channels] += gv;
                }
                vec![(input, g.to_vec()), (bias, db)]
            }
            Op::Dense { input, weight, bias } => {
                let xs = self.shape(input);
                let (n, d) = (xs[0], xs[1]);
                let m = self.shape(weight)[1];
                let mut res = Vec::with_capacity(3);
                if self.tracks(input) {
                    let mut dx = vec![T::zero(); n * d];
                    kernels::gemm_nt(g, val(weight), &mut dx, n, m, d);
                    res.push((input, dx));
                }
                if self.tracks(weight) {
                    let mut dw = vec![T::zero(); d * m];
                    kernels::gemm_tn(val(input), g, &mut dw, d, n, m);
                    res.push((weight, dw));
                }
                if self.tracks(bias) {
                    let mut db = vec![T::zero(); m];
                    for row in g.chunks(m) {
                        db.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                    }
                    res.push((bias, db));
                }
                res
            }
            Op::Conv2d { input, kernel, window, out_channels } => {
                let batch = self.shape(input)[0];
                let (dx, dk) = kernels::conv2d_backward(
                    val(input),
                    val(kernel),
                    g,
                    batch,
                    out_channels,
                    &window,
                    self.tracks(input),
                    self.tracks(kernel),
                );
                dx.map(|d| (input, d)).into_iter().chain(dk.map(|d| (kernel, d))).collect()
            }
            Op::Deconv2d { input, kernel, window, in_channels } => {
                let batch = self.shape(input)[0];
                let (dx, dk) = kernels::deconv2d_backward(
                    val(input),
                    val(kernel),
                    g,
                    batch,
                    in_channels,
                    &window,
                    self.tracks(input),
                    self.tracks(kernel),
                );
                dx.map(|d| (input, d)).into_iter().chain(dk.map(|d| (kernel, d))).collect()
            }
        }
    }
}

const AXES: [&str; 4] = ["batch", "channels", "height", "width"];

fn rank4(op: &'static str, shape: &[usize]) -> Result<[usize; 4]> {
    shape.try_into().map_err(|_| TensorError::Rank {
        op,
        expected: 4,
        found: shape.len(),
    })
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
