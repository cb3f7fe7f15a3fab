//! Reverse-mode differentiation over the small operation set the reasoner needs:
//! weighted sums of block vectors, bind / unbind, cosine, softmax and a few
//! scalar helpers. Every node stores its forward value; adjoints are hand
//! derived per operation and checked against central differences.

mod check;

pub use check::{finite_diff_check, GradCheck};

use crate::error::{Error, Result};
use crate::vsa::{conv_blocks, corr_blocks, dot, Dims};

/// Learnable values and their accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub values: Vec<f64>,
    pub gradient: Vec<f64>,
}

impl ParamBlock {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        let gradient = vec![0.0; values.len()];
        Self { name: name.into(), values, gradient }
    }

    pub fn zero_grad(&mut self) {
        self.gradient.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param { slot: usize },
    Slice { src: Var, start: usize },
    Stack(Vec<Var>),
    Bind { a: Var, b: Var, block_len: usize },
    Unbind { a: Var, b: Var, block_len: usize },
    WeightedSum { vectors: Vec<Var>, weights: Var },
    Cosine { a: Var, b: Var, na: f64, nb: f64 },
    Softmax { input: Var, temperature: f64 },
    Sum(Vec<Var>),
    Affine { input: Var, scale: f64 },
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// A linear record of operations; nodes are appended in evaluation order,
/// so reverse index order is a reverse topological order.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// Scalar value of a length-one node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(Error::Contract(format!("node {} is not on this tape", v.0)));
        }
        Ok(())
    }

    fn same_len(&self, a: Var, b: Var, what: &str) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        let (la, lb) = (self.nodes[a.0].value.len(), self.nodes[b.0].value.len());
        if la != lb {
            return Err(Error::Shape(format!("{what}: operand lengths {la} and {lb} differ")));
        }
        Ok(())
    }

    pub fn constant(&mut self, values: Vec<f64>) -> Var {
        self.push(values, Op::Constant)
    }

    /// Registers `block` as the parameter living at position `slot` of the
    /// slice later passed to [`Tape::backward`].
    pub fn param(&mut self, slot: usize, block: &ParamBlock) -> Var {
        self.push(block.values.clone(), Op::Param { slot })
    }

    pub fn slice(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        self.check(src)?;
        let n = self.nodes[src.0].value.len();
        if start + len > n {
            return Err(Error::Shape(format!("slice {start}..{} of a node of length {n}", start + len)));
        }
        let value = self.nodes[src.0].value[start..start + len].to_vec();
        Ok(self.push(value, Op::Slice { src, start }))
    }

    /// Collects scalar nodes into one vector node.
    pub fn stack(&mut self, scalars: &[Var]) -> Result<Var> {
        let mut value = Vec::with_capacity(scalars.len());
        for &s in scalars {
            self.check(s)?;
            if self.nodes[s.0].value.len() != 1 {
                return Err(Error::Shape("stack expects scalar nodes".into()));
            }
            value.push(self.nodes[s.0].value[0]);
        }
        Ok(self.push(value, Op::Stack(scalars.to_vec())))
    }

    fn check_dims(&self, a: Var, dims: Dims, what: &str) -> Result<()> {
        if self.nodes[a.0].value.len() != dims.dim {
            return Err(Error::Shape(format!(
                "{what}: node of length {} does not match D={}",
                self.nodes[a.0].value.len(),
                dims.dim
            )));
        }
        Ok(())
    }

    pub fn bind(&mut self, a: Var, b: Var, dims: Dims) -> Result<Var> {
        self.same_len(a, b, "bind")?;
        self.check_dims(a, dims, "bind")?;
        let l = dims.block_len();
        let value = conv_blocks(&self.nodes[a.0].value, &self.nodes[b.0].value, l);
        Ok(self.push(value, Op::Bind { a, b, block_len: l }))
    }

    pub fn unbind(&mut self, a: Var, b: Var, dims: Dims) -> Result<Var> {
        self.same_len(a, b, "unbind")?;
        self.check_dims(a, dims, "unbind")?;
        let l = dims.block_len();
        let value = corr_blocks(&self.nodes[a.0].value, &self.nodes[b.0].value, l);
        Ok(self.push(value, Op::Unbind { a, b, block_len: l }))
    }

    /// `sum_i weights[i] * vectors[i]`, with the weights themselves a tape node.
    pub fn weighted_sum(&mut self, vectors: &[Var], weights: Var) -> Result<Var> {
        self.check(weights)?;
        let first = *vectors.first().ok_or_else(|| Error::Shape("weighted sum of no vectors".into()))?;
        if self.nodes[weights.0].value.len() != vectors.len() {
            return Err(Error::Shape(format!(
                "{} vectors but {} weights",
                vectors.len(),
                self.nodes[weights.0].value.len()
            )));
        }
        let mut value = vec![0.0; self.nodes[first.0].value.len()];
        for (i, &v) in vectors.iter().enumerate() {
            self.same_len(first, v, "weighted sum")?;
            let w = self.nodes[weights.0].value[i];
            for (o, x) in value.iter_mut().zip(&self.nodes[v.0].value) {
                *o += w * x;
            }
        }
        Ok(self.push(value, Op::WeightedSum { vectors: vectors.to_vec(), weights }))
    }

    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "cosine")?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (na, nb) = (dot(va, va).sqrt(), dot(vb, vb).sqrt());
        if na == 0.0 || nb == 0.0 {
            return Err(Error::Degenerate("cosine with an all-zero vector".into()));
        }
        let c = dot(va, vb) / (na * nb);
        Ok(self.push(vec![c], Op::Cosine { a, b, na, nb }))
    }

    pub fn softmax(&mut self, input: Var, temperature: f64) -> Result<Var> {
        self.check(input)?;
        if !(temperature > 0.0) {
            return Err(Error::Config(format!("softmax temperature {temperature} must be positive")));
        }
        let value = softmax(&self.nodes[input.0].value, temperature);
        Ok(self.push(value, Op::Softmax { input, temperature }))
    }

    /// Elementwise sum of equally sized nodes.
    pub fn sum(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs.first().ok_or_else(|| Error::Shape("sum of no nodes".into()))?;
        let mut value = vec![0.0; self.nodes[first.0].value.len()];
        for &v in inputs {
            self.same_len(first, v, "sum")?;
            for (o, x) in value.iter_mut().zip(&self.nodes[v.0].value) {
                *o += x;
            }
        }
        Ok(self.push(value, Op::Sum(inputs.to_vec())))
    }

    /// `scale * input + offset`, elementwise.
    pub fn affine(&mut self, input: Var, scale: f64, offset: f64) -> Result<Var> {
        self.check(input)?;
        let value = self.nodes[input.0].value.iter().map(|x| scale * x + offset).collect();
        Ok(self.push(value, Op::Affine { input, scale }))
    }

    /// Accumulates `d loss / d values` into every parameter registered on the tape.
    ///
    /// Gradients are added to whatever the blocks already hold; call
    /// [`ParamBlock::zero_grad`] between steps.
    pub fn backward(&self, loss: Var, params: &mut [ParamBlock]) -> Result<()> {
        if self.nodes.is_empty() {
            return Ok(());
        }
        self.check(loss)?;
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, node has {} entries",
                self.nodes[loss.0].value.len()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        fn acc(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            adj[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param { slot } => {
                    let p = params.get_mut(*slot).ok_or_else(|| {
                        Error::Contract(format!("parameter slot {slot} missing from backward call"))
                    })?;
                    if p.gradient.len() != g.len() {
                        return Err(Error::Shape(format!("parameter `{}` changed shape", p.name)));
                    }
                    for (pg, x) in p.gradient.iter_mut().zip(&g) {
                        *pg += x;
                    }
                }
                Op::Slice { src, start } => {
                    let n = self.nodes[src.0].value.len();
                    let a = acc(&mut adj, *src, n);
                    for (k, x) in g.iter().enumerate() {
                        a[start + k] += x;
                    }
                }
                Op::Stack(items) => {
                    for (k, s) in items.iter().enumerate() {
                        acc(&mut adj, *s, 1)[0] += g[k];
                    }
                }
                Op::Bind { a, b, block_len } => {
                    let da = corr_blocks(&g, &self.nodes[b.0].value, *block_len);
                    let db = corr_blocks(&g, &self.nodes[a.0].value, *block_len);
                    add_into(acc(&mut adj, *a, g.len()), &da);
                    add_into(acc(&mut adj, *b, g.len()), &db);
                }
                Op::Unbind { a, b, block_len } => {
                    let da = conv_blocks(&g, &self.nodes[b.0].value, *block_len);
                    let db = corr_blocks(&self.nodes[a.0].value, &g, *block_len);
                    add_into(acc(&mut adj, *a, g.len()), &da);
                    add_into(acc(&mut adj, *b, g.len()), &db);
                }
                Op::WeightedSum { vectors, weights } => {
                    let w = self.nodes[weights.0].value.clone();
                    let mut dw = vec![0.0; w.len()];
                    for (k, v) in vectors.iter().enumerate() {
                        dw[k] = dot(&g, &self.nodes[v.0].value);
                        let a = acc(&mut adj, *v, g.len());
                        for (x, y) in a.iter_mut().zip(&g) {
                            *x += w[k] * y;
                        }
                    }
                    add_into(acc(&mut adj, *weights, w.len()), &dw);
                }
                Op::Cosine { a, b, na, nb } => {
                    let c = node.value[0];
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let da: Vec<f64> =
                        va.iter().zip(vb).map(|(x, y)| g[0] * (y / (na * nb) - c * x / (na * na))).collect();
                    let db: Vec<f64> =
                        va.iter().zip(vb).map(|(x, y)| g[0] * (x / (na * nb) - c * y / (nb * nb))).collect();
                    add_into(acc(&mut adj, *a, da.len()), &da);
                    add_into(acc(&mut adj, *b, db.len()), &db);
                }
                Op::Softmax { input, temperature } => {
                    let p = &node.value;
                    let gp = dot(&g, p);
                    let dx: Vec<f64> = p.iter().zip(&g).map(|(pi, gi)| pi * (gi - gp) / temperature).collect();
                    add_into(acc(&mut adj, *input, dx.len()), &dx);
                }
                Op::Sum(items) => {
                    for v in items {
                        add_into(acc(&mut adj, *v, g.len()), &g);
                    }
                }
                Op::Affine { input, scale } => {
                    let a = acc(&mut adj, *input, g.len());
                    for (x, y) in a.iter_mut().zip(&g) {
                        *x += scale * y;
                    }
                }
            }
        }
        Ok(())
    }
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

/// Numerically stable softmax of `x / temperature`.
pub fn softmax(x: &[f64], temperature: f64) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| ((v - m) / temperature).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
