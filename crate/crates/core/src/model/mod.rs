//! Two-layer graph-convolution encoder, the MLP baseline and the linear
//! reconstruction head.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};

use rand::Rng;

use crate::error::{Error, Result};
use crate::graphs::PropagationMatrix;
use crate::numeric::{GradientTape, Matrix, Var};

/// Number of clean log-filterbank coefficients the head reconstructs.
pub const RECON_OUTPUT_DIM: usize = 22;

/// Weights of a two-layer encoder: `F -> H -> H`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

impl EncoderParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        EncoderParams {
            w1: Matrix::glorot_uniform(input_dim, hidden, rng),
            b1: Matrix::zeros(1, hidden),
            w2: Matrix::glorot_uniform(hidden, hidden, rng),
            b2: Matrix::zeros(1, hidden),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (f, h) = self.w1.shape();
        if self.b1.shape() != (1, h) || self.w2.shape() != (h, h) || self.b2.shape() != (1, h) {
            return Err(Error::shape(
                "EncoderParams",
                format!(
                    "w1 {:?}, b1 {:?}, w2 {:?}, b2 {:?} for F={f}, H={h}",
                    self.w1.shape(),
                    self.b1.shape(),
                    self.w2.shape(),
                    self.b2.shape()
                ),
            ));
        }
        Ok(())
    }

    pub fn into_vec(self) -> Vec<Matrix> {
        vec![self.w1, self.b1, self.w2, self.b2]
    }

    pub fn to_vec(&self) -> Vec<Matrix> {
        self.clone().into_vec()
    }

    pub fn from_vec(mut v: Vec<Matrix>) -> Result<Self> {
        if v.len() != 4 {
            return Err(Error::Contract(format!("encoder needs 4 tensors, got {}", v.len())));
        }
        let b2 = v.pop().unwrap();
        let w2 = v.pop().unwrap();
        let b1 = v.pop().unwrap();
        let w1 = v.pop().unwrap();
        let p = EncoderParams { w1, b1, w2, b2 };
        p.validate()?;
        Ok(p)
    }
}

/// Per-neuron firing counters of an encoder's first hidden layer.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ActivationStats {
    fire_counts: Vec<u64>,
    total: u64,
}

impl ActivationStats {
    pub fn new(neurons: usize) -> Self {
        ActivationStats {
            fire_counts: vec![0; neurons],
            total: 0,
        }
    }

    pub fn from_counts(fire_counts: Vec<u64>, total: u64) -> Result<Self> {
        if let Some(c) = fire_counts.iter().find(|&&c| c > total) {
            return Err(Error::Contract(format!("fire count {c} exceeds {total} forwards")));
        }
        Ok(ActivationStats { fire_counts, total })
    }

    pub fn fire_counts(&self) -> &[u64] {
        &self.fire_counts
    }

    /// Number of node forwards recorded.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn neurons(&self) -> usize {
        self.fire_counts.len()
    }

    /// Counts strictly positive entries of a first-layer output (`N x H`).
    pub fn record(&mut self, hidden: &Matrix) -> Result<()> {
        if hidden.cols() != self.fire_counts.len() {
            return Err(Error::shape(
                "ActivationStats::record",
                format!("{} activations for {} neurons", hidden.cols(), self.fire_counts.len()),
            ));
        }
        for i in 0..hidden.rows() {
            for (c, &v) in self.fire_counts.iter_mut().zip(hidden.row(i)) {
                if v > 0.0 {
                    *c += 1;
                }
            }
        }
        self.total += hidden.rows() as u64;
        Ok(())
    }
}

/// Single dense layer mapping embeddings to clean log-filterbank frames.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconParams {
    pub w: Matrix,
    pub b: Matrix,
}

impl ReconParams {
    pub fn init<R: Rng + ?Sized>(input_dim: usize, rng: &mut R) -> Self {
        ReconParams {
            w: Matrix::glorot_uniform(input_dim, RECON_OUTPUT_DIM, rng),
            b: Matrix::zeros(1, RECON_OUTPUT_DIM),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.rows()
    }
}

fn encoder_forward(
    prop: Option<&PropagationMatrix>,
    features: &Matrix,
    params: &EncoderParams,
    stats: Option<&mut ActivationStats>,
) -> Result<Matrix> {
    params.validate()?;
    if features.cols() != params.input_dim() {
        return Err(Error::shape(
            "encoder forward",
            format!(
                "{} feature columns for input width {}",
                features.cols(),
                params.input_dim()
            ),
        ));
    }
    let propagate = |x: &Matrix| -> Result<Matrix> {
        match prop {
            Some(p) => {
                if p.size() != x.rows() {
                    return Err(Error::shape(
                        "encoder forward",
                        format!("{}-node propagation for {} rows", p.size(), x.rows()),
                    ));
                }
                p.matrix().matmul_dense(x)
            }
            None => Ok(x.clone()),
        }
    };
    let h1 = propagate(features)?
        .matmul(&params.w1)?
        .add_row_broadcast(&params.b1)?
        .map(|v| v.max(0.0));
    if let Some(s) = stats {
        s.record(&h1)?;
    }
    let h2 = propagate(&h1)?
        .matmul(&params.w2)?
        .add_row_broadcast(&params.b2)?
        .map(|v| v.max(0.0));
    Ok(h2)
}

/// `ReLU(P ReLU(P X W1 + b1) W2 + b2)`, recording first-layer firing.
pub fn gcn_forward(
    prop: &PropagationMatrix,
    features: &Matrix,
    params: &EncoderParams,
    stats: &mut ActivationStats,
) -> Result<Matrix> {
    encoder_forward(Some(prop), features, params, Some(stats))
}

/// The same two layers without propagation.
pub fn mlp_forward(features: &Matrix, params: &EncoderParams, stats: &mut ActivationStats) -> Result<Matrix> {
    encoder_forward(None, features, params, Some(stats))
}

/// Encoder output without touching any statistics. `prop = None` is the MLP.
pub fn encode(prop: Option<&PropagationMatrix>, features: &Matrix, params: &EncoderParams) -> Result<Matrix> {
    encoder_forward(prop, features, params, None)
}

/// `Z W + b`, no activation.
pub fn recon_forward(embeddings: &Matrix, params: &ReconParams) -> Result<Matrix> {
    if embeddings.cols() != params.input_dim() {
        return Err(Error::shape(
            "recon_forward",
            format!(
                "{} embedding columns for head width {}",
                embeddings.cols(),
                params.input_dim()
            ),
        ));
    }
    embeddings.matmul(&params.w)?.add_row_broadcast(&params.b)
}

/// Encoder parameters registered on a tape.
#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl EncoderVars {
    pub fn register(tape: &mut GradientTape, params: &EncoderParams) -> Self {
        EncoderVars {
            w1: tape.parameter(params.w1.clone()),
            b1: tape.parameter(params.b1.clone()),
            w2: tape.parameter(params.w2.clone()),
            b2: tape.parameter(params.b2.clone()),
        }
    }
}

/// Records an encoder forward on `tape`; returns `(first hidden layer, output)`.
pub fn encode_on_tape(
    tape: &mut GradientTape,
    vars: &EncoderVars,
    prop: Option<&PropagationMatrix>,
    features: Matrix,
) -> Result<(Var, Var)> {
    let x = tape.constant(features);
    let x = match prop {
        Some(p) => tape.propagate(p.shared(), x)?,
        None => x,
    };
    let a1 = tape.matmul(x, vars.w1)?;
    let a1 = tape.add_bias(a1, vars.b1)?;
    let h1 = tape.relu(a1);
    let p1 = match prop {
        Some(p) => tape.propagate(p.shared(), h1)?,
        None => h1,
    };
    let a2 = tape.matmul(p1, vars.w2)?;
    let a2 = tape.add_bias(a2, vars.b2)?;
    Ok((h1, tape.relu(a2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{normalize_propagation, Graph, SelfWeightMode};
    use crate::rng;

    fn identity_padded(rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    #[test]
    fn single_node_identity_passes_features_through() {
        let params = EncoderParams {
            w1: identity_padded(3, 5),
            b1: Matrix::zeros(1, 5),
            w2: identity_padded(5, 5),
            b2: Matrix::zeros(1, 5),
        };
        let x = Matrix::row_vector(&[0.5, 2.0, 0.0]);
        let mut stats = ActivationStats::new(5);
        let out = gcn_forward(&PropagationMatrix::identity(1), &x, &params, &mut stats).unwrap();
        assert_eq!(out.row(0), &[0.5, 2.0, 0.0, 0.0, 0.0]);
        assert_eq!(stats.fire_counts(), &[1, 1, 0, 0, 0]);
        assert_eq!(stats.total(), 1);
    }

    #[test]
    fn zero_features_give_zero_output_and_no_fires() {
        let params = EncoderParams::init(4, 8, &mut rng::stream(0, 0));
        let mut stats = ActivationStats::new(8);
        let g = Graph::prior_frame(Matrix::zeros(6, 4), &[(0, 6)], 2, SelfWeightMode::Sequential).unwrap();
        let p = normalize_propagation(&g).unwrap();
        let out = gcn_forward(&p, &g.features, &params, &mut stats).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
        assert!(stats.fire_counts().iter().all(|&c| c == 0));
        assert_eq!(stats.total(), 6);
    }

    #[test]
    fn full_size_forward_shapes() {
        let mut r = rng::stream(1, 0);
        let params = EncoderParams::init(22, 512, &mut r);
        let x = Matrix::glorot_uniform(100, 22, &mut r);
        let g = Graph::prior_frame(x, &[(0, 48), (48, 52)], 3, SelfWeightMode::Sequential).unwrap();
        let p = normalize_propagation(&g).unwrap();
        let mut stats = ActivationStats::new(512);
        let out = gcn_forward(&p, &g.features, &params, &mut stats).unwrap();
        assert_eq!(out.shape(), (100, 512));
        assert_eq!(stats.total(), 100);
    }

    #[test]
    fn mlp_equals_gcn_with_identity_propagation() {
        let mut r = rng::stream(2, 0);
        let params = EncoderParams::init(22, 512, &mut r);
        let x = Matrix::glorot_uniform(10, 22, &mut r);
        let mut s1 = ActivationStats::new(512);
        let mut s2 = ActivationStats::new(512);
        let a = mlp_forward(&x, &params, &mut s1).unwrap();
        let b = gcn_forward(&PropagationMatrix::identity(10), &x, &params, &mut s2).unwrap();
        assert_eq!(a, b);
        assert_eq!(s1, s2);
        assert!(a.is_finite());
        assert_eq!(a.shape(), (10, 512));
    }

    #[test]
    fn positive_weights_fire_every_neuron() {
        let params = EncoderParams {
            w1: Matrix::filled(3, 4, 0.2),
            b1: Matrix::filled(1, 4, 0.1),
            w2: Matrix::filled(4, 4, 0.3),
            b2: Matrix::filled(1, 4, 0.1),
        };
        let x = Matrix::from_fn(5, 3, |i, j| (i + j) as f64);
        let mut stats = ActivationStats::new(4);
        mlp_forward(&x, &params, &mut stats).unwrap();
        assert!(stats.fire_counts().iter().all(|&c| c == stats.total()));
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let params = EncoderParams::init(4, 8, &mut rng::stream(0, 0));
        let mut stats = ActivationStats::new(8);
        assert!(mlp_forward(&Matrix::zeros(2, 5), &params, &mut stats).is_err());
    }

    #[test]
    fn recon_head_is_affine() {
        let params = ReconParams {
            w: Matrix::identity(22),
            b: Matrix::zeros(1, 22),
        };
        let z = Matrix::from_fn(4, 22, |i, j| (i * j) as f64 - 3.0);
        assert_eq!(recon_forward(&z, &params).unwrap(), z);

        let bias = Matrix::from_fn(1, 22, |_, j| j as f64);
        let constant = ReconParams {
            w: Matrix::zeros(7, 22),
            b: bias.clone(),
        };
        let out = recon_forward(&Matrix::zeros(3, 7), &constant).unwrap();
        for i in 0..3 {
            assert_eq!(out.row(i), bias.row(0));
        }
        assert!(recon_forward(&Matrix::zeros(3, 6), &constant).is_err());
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let mut r = rng::stream(4, 0);
        let params = EncoderParams::init(5, 7, &mut r);
        let x = Matrix::glorot_uniform(9, 5, &mut r);
        let g = Graph::prior_frame(x.clone(), &[(0, 4), (4, 5)], 2, SelfWeightMode::SequentialStar).unwrap();
        let p = normalize_propagation(&g).unwrap();
        let mut tape = GradientTape::new();
        let vars = EncoderVars::register(&mut tape, &params);
        let (_, out) = encode_on_tape(&mut tape, &vars, Some(&p), x.clone()).unwrap();
        let plain = encode(Some(&p), &x, &params).unwrap();
        assert!(tape.value(out).max_abs_diff(&plain).unwrap() < 1e-14);
    }
}
