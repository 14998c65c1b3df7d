//! Reverse-mode gradient evaluation over a recorded sequence of matrix
//! operations.
//!
//! Every operation appends a node holding its forward value; `gradients`
//! walks the nodes backwards and accumulates adjoints for nodes that depend
//! on a registered parameter. Nodes that only depend on constants never get
//! an adjoint, so e.g. `X * W` with constant `X` skips the `dX` product.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numeric::{Matrix, SparseMatrix};

/// Handle to a value recorded on a [`GradientTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    Propagate(Arc<SparseMatrix>, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sum(Var),
    SqFrobenius(Var),
    /// `||Z^T Z - I||_F^2`; keeps whichever Gram product was cheaper.
    Decorrelation {
        input: Var,
        gram: Matrix,
        outer: bool,
    },
    /// Column centring and unit-norm scaling; keeps the centred norms
    /// (zero marks a degenerate column).
    Standardize(Var, Vec<f64>),
    MeanSqError(Var, Matrix),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Single-use recording of one forward evaluation.
#[derive(Default)]
pub struct GradientTape {
    nodes: Vec<Node>,
    params: Vec<Var>,
}

impl GradientTape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Registers a trainable parameter. Gradients are returned in
    /// registration order.
    pub fn parameter(&mut self, value: Matrix) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.params.push(v);
        v
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1x1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    pub fn parameters(&self) -> &[Var] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    /// Left-multiplies node features by a fixed sparse propagation matrix.
    pub fn propagate(&mut self, prop: Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let value = prop.matmul_dense(self.value(x))?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::Propagate(prop, x), ng))
    }

    /// `x + 1 * bias` with a `1 x cols` bias row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let value = self.value(x).add_row_broadcast(self.value(bias))?;
        let ng = self.needs(x) || self.needs(bias);
        Ok(self.push(value, Op::AddBias(x, bias), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, s), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        let ng = self.needs(a);
        self.push(value, Op::Relu(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        let ng = self.needs(a);
        self.push(value, Op::Sum(a), ng)
    }

    pub fn sq_frobenius(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).frobenius_sq());
        let ng = self.needs(a);
        self.push(value, Op::SqFrobenius(a), ng)
    }

    /// `||Z^T Z - I||_F^2`.
    pub fn decorrelation(&mut self, z: Var) -> Result<Var> {
        let zv = self.value(z);
        let (n, d) = zv.shape();
        // With fewer rows than columns the N x N Gram matrix is cheaper:
        // ||Z^T Z - I||^2 = ||Z Z^T||^2 - 2 ||Z||^2 + D.
        let outer = n < d;
        let (gram, penalty) = if outer {
            let g = zv.matmul_t(zv)?;
            let p = g.frobenius_sq() - 2.0 * zv.frobenius_sq() + d as f64;
            (g, p)
        } else {
            let mut g = zv.t_matmul(zv)?;
            for i in 0..d {
                g[(i, i)] -= 1.0;
            }
            let p = g.frobenius_sq();
            (g, p)
        };
        let ng = self.needs(z);
        Ok(self.push(
            Matrix::filled(1, 1, penalty.max(0.0)),
            Op::Decorrelation { input: z, gram, outer },
            ng,
        ))
    }

    /// Centres each column and scales it to unit Euclidean norm, so the
    /// diagonal of `Z^T Z` is one. Constant columns become zero.
    pub fn standardize(&mut self, h: Var) -> Var {
        let (z, norms) = standardize_columns(self.value(h));
        let ng = self.needs(h);
        self.push(z, Op::Standardize(h, norms), ng)
    }

    /// Mean over all entries of `(pred - target)^2`.
    pub fn mean_sq_error(&mut self, pred: Var, target: Matrix) -> Result<Var> {
        let pv = self.value(pred);
        pv.expect_same_shape(&target, "mean_sq_error")?;
        let count = pv.len().max(1) as f64;
        let value = pv.sub(&target)?.frobenius_sq() / count;
        let ng = self.needs(pred);
        Ok(self.push(Matrix::filled(1, 1, value), Op::MeanSqError(pred, target), ng))
    }

    /// Reverse-mode accumulation of `d output / d param` for every
    /// registered parameter, in registration order.
    pub fn gradients(&self, output: Var) -> Result<Vec<Matrix>> {
        let out = self.value(output);
        if out.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "gradient output must be a 1x1 scalar, got {}x{}",
                out.rows(),
                out.cols()
            )));
        }
        if !out[(0, 0)].is_finite() {
            return Err(Error::NonFinite("gradient output".into()));
        }
        let mut adj: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[output.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut adj)?;
            // Keep leaf adjoints for the parameter read-out below.
            if matches!(node.op, Op::Leaf) {
                adj[idx] = Some(g);
            }
        }

        Ok(self
            .params
            .iter()
            .map(|p| {
                adj[p.0]
                    .take()
                    .unwrap_or_else(|| Matrix::zeros(self.value(*p).rows(), self.value(*p).cols()))
            })
            .collect())
    }

    fn backprop_node(&self, idx: usize, g: &Matrix, adj: &mut [Option<Matrix>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    let da = g.matmul_t(self.value(*b))?;
                    accumulate(adj, *a, da)?;
                }
                if self.needs(*b) {
                    let db = self.value(*a).t_matmul(g)?;
                    accumulate(adj, *b, db)?;
                }
            }
            Op::Propagate(prop, x) => {
                if self.needs(*x) {
                    accumulate(adj, *x, prop.t_matmul_dense(g)?)?;
                }
            }
            Op::AddBias(x, bias) => {
                if self.needs(*x) {
                    accumulate(adj, *x, g.clone())?;
                }
                if self.needs(*bias) {
                    accumulate(adj, *bias, g.column_sums())?;
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    accumulate(adj, *a, g.clone())?;
                }
                if self.needs(*b) {
                    accumulate(adj, *b, g.clone())?;
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    accumulate(adj, *a, g.clone())?;
                }
                if self.needs(*b) {
                    accumulate(adj, *b, g.scale(-1.0))?;
                }
            }
            Op::Scale(a, s) => {
                if self.needs(*a) {
                    accumulate(adj, *a, g.scale(*s))?;
                }
            }
            Op::Relu(a) => {
                if self.needs(*a) {
                    // Subgradient 0 at exactly zero.
                    let mut da = g.clone();
                    for (d, &y) in da.as_mut_slice().iter_mut().zip(node.value.as_slice()) {
                        if y <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(adj, *a, da)?;
                }
            }
            Op::Sum(a) => {
                if self.needs(*a) {
                    let (r, c) = self.value(*a).shape();
                    accumulate(adj, *a, Matrix::filled(r, c, g[(0, 0)]))?;
                }
            }
            Op::SqFrobenius(a) => {
                if self.needs(*a) {
                    accumulate(adj, *a, self.value(*a).scale(2.0 * g[(0, 0)]))?;
                }
            }
            Op::Decorrelation { input, gram, outer } => {
                if self.needs(*input) {
                    // d/dZ ||Z^T Z - I||^2 = 4 (Z Z^T Z - Z)
                    let z = self.value(*input);
                    let mut dz = if *outer {
                        let mut t = gram.matmul(z)?;
                        t.add_scaled_assign(z, -1.0)?;
                        t
                    } else {
                        z.matmul(gram)?
                    };
                    dz = dz.scale(4.0 * g[(0, 0)]);
                    accumulate(adj, *input, dz)?;
                }
            }
            Op::Standardize(h, norms) => {
                if self.needs(*h) {
                    accumulate(adj, *h, standardize_backward(&node.value, norms, g))?;
                }
            }
            Op::MeanSqError(pred, target) => {
                if self.needs(*pred) {
                    let p = self.value(*pred);
                    let s = 2.0 * g[(0, 0)] / p.len().max(1) as f64;
                    accumulate(adj, *pred, p.sub(target)?.scale(s))?;
                }
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Matrix>], v: Var, g: Matrix) -> Result<()> {
    match &mut adj[v.0] {
        Some(existing) => existing.add_scaled_assign(&g, 1.0),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Columns whose centred norm is at or below this are treated as constant.
const DEGENERATE_NORM: f64 = 1e-12;

/// Returns the standardized matrix and the centred column norms, with `0.0`
/// for degenerate columns.
pub(crate) fn standardize_columns(h: &Matrix) -> (Matrix, Vec<f64>) {
    let (n, d) = h.shape();
    let means = h.column_sums().scale(1.0 / n.max(1) as f64);
    let mut z = Matrix::zeros(n, d);
    for i in 0..n {
        for ((dst, &v), &mu) in z.row_mut(i).iter_mut().zip(h.row(i)).zip(means.as_slice()) {
            *dst = v - mu;
        }
    }
    let mut norms = vec![0.0; d];
    for i in 0..n {
        for (acc, &v) in norms.iter_mut().zip(z.row(i)) {
            *acc += v * v;
        }
    }
    for nrm in norms.iter_mut() {
        *nrm = nrm.sqrt();
        if *nrm <= DEGENERATE_NORM {
            *nrm = 0.0;
        }
    }
    let inv: Vec<f64> = norms.iter().map(|&s| if s > 0.0 { 1.0 / s } else { 0.0 }).collect();
    for i in 0..n {
        for (v, &s) in z.row_mut(i).iter_mut().zip(&inv) {
            *v *= s;
        }
    }
    (z, norms)
}

fn standardize_backward(z: &Matrix, norms: &[f64], g: &Matrix) -> Matrix {
    let (n, d) = z.shape();
    // Per column: dc = (g - z (z . g)) / ||c||, then remove the mean.
    let mut proj = vec![0.0; d];
    for i in 0..n {
        for ((acc, &zv), &gv) in proj.iter_mut().zip(z.row(i)).zip(g.row(i)) {
            *acc += zv * gv;
        }
    }
    let mut dh = Matrix::zeros(n, d);
    for i in 0..n {
        let (zr, gr) = (z.row(i), g.row(i));
        for (j, dst) in dh.row_mut(i).iter_mut().enumerate() {
            if norms[j] > 0.0 {
                *dst = (gr[j] - zr[j] * proj[j]) / norms[j];
            }
        }
    }
    let means = dh.column_sums().scale(1.0 / n.max(1) as f64);
    for i in 0..n {
        for (v, &mu) in dh.row_mut(i).iter_mut().zip(means.as_slice()) {
            *v -= mu;
        }
    }
    dh
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::finite_difference_gradient;

    #[test]
    fn square_of_scalar() {
        let mut t = GradientTape::new();
        let x = t.parameter(Matrix::filled(1, 1, 3.0));
        let y = t.sq_frobenius(x);
        let g = t.gradients(y).unwrap();
        assert_eq!(g[0][(0, 0)], 6.0);
    }

    #[test]
    fn constant_output_gives_zero_gradients() {
        let mut t = GradientTape::new();
        let _w = t.parameter(Matrix::filled(2, 3, 1.5));
        let c = t.constant(Matrix::filled(1, 1, 4.0));
        let g = t.gradients(c).unwrap();
        assert_eq!(g[0], Matrix::zeros(2, 3));
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut t = GradientTape::new();
        let w = t.parameter(Matrix::zeros(2, 2));
        assert!(matches!(t.gradients(w), Err(Error::Contract(_))));
    }

    #[test]
    fn sum_relu_matvec_matches_finite_differences() {
        let v = Matrix::from_rows(&[[0.3], [-1.2], [0.7]]).unwrap();
        let w0 = Matrix::from_rows(&[[0.5, 0.1, -0.4], [-0.3, 0.8, 0.2], [1.1, -0.6, 0.9], [0.2, 0.2, 0.2]]).unwrap();
        let f = |w: &Matrix| w.matmul(&v).unwrap().map(|x| x.max(0.0)).sum();
        // Keep away from the ReLU kink.
        assert!(w0.matmul(&v).unwrap().as_slice().iter().all(|x| x.abs() > 1e-3));

        let mut t = GradientTape::new();
        let w = t.parameter(w0.clone());
        let vc = t.constant(v.clone());
        let a = t.matmul(w, vc).unwrap();
        let r = t.relu(a);
        let s = t.sum(r);
        let g = t.gradients(s).unwrap();
        let fd = finite_difference_gradient(f, &w0, 1e-5).unwrap();
        for (a, b) in g[0].as_slice().iter().zip(fd.as_slice()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn decorrelation_routes_agree() {
        // Tall (Z^T Z route) and wide (Z Z^T route) inputs both match the
        // direct definition.
        for &(n, d) in &[(9, 4), (4, 9)] {
            let z = Matrix::from_fn(n, d, |i, j| ((i * 7 + j * 3) as f64).sin());
            let mut direct = z.t_matmul(&z).unwrap();
            for i in 0..d {
                direct[(i, i)] -= 1.0;
            }
            let mut t = GradientTape::new();
            let zv = t.constant(z);
            let p = t.decorrelation(zv).unwrap();
            assert!((t.scalar(p) - direct.frobenius_sq()).abs() < 1e-10);
        }
    }

    #[test]
    fn standardize_marks_constant_columns() {
        let h = Matrix::from_rows(&[[1.0, 5.0], [-1.0, 5.0]]).unwrap();
        let (z, norms) = standardize_columns(&h);
        assert!((z[(0, 0)] - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(norms[1], 0.0);
        assert_eq!(z.column(1), vec![0.0, 0.0]);
    }
}
