//! Canonical-correlation objective on standardized embeddings and its
//! audio-visual combination.

use crate::error::{Error, Result};
use crate::numeric::{standardize_columns, GradientTape, Matrix, Var};

/// Scalar hyperparameters of the single-view and multimodal objectives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the decorrelation term.
    pub lambda: f64,
    /// Audio-audio pair weight.
    pub alpha: f64,
    /// Visual-visual pair weight.
    pub beta: f64,
    /// Weight of each of the four cross-modal pairs.
    pub gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.0001,
            alpha: 0.5,
            beta: 0.25,
            gamma: 0.0625,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Param(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Column-standardized embeddings: zero column means, unit column norms.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingView {
    z: Matrix,
    degenerate: Vec<usize>,
}

impl EmbeddingView {
    pub fn z(&self) -> &Matrix {
        &self.z
    }

    /// Columns that had zero variance and were set to zero.
    pub fn degenerate_columns(&self) -> &[usize] {
        &self.degenerate
    }
}

/// Subtracts column means and divides by `std * sqrt(N)`, so each column has
/// unit Euclidean norm and `diag(Z^T Z) = 1`.
pub fn standardize_embeddings(h: &Matrix) -> Result<EmbeddingView> {
    if h.rows() < 2 {
        return Err(Error::Param(format!(
            "standardization needs at least 2 rows, got {}",
            h.rows()
        )));
    }
    let (z, norms) = standardize_columns(h);
    let degenerate = norms
        .iter()
        .enumerate()
        .filter(|(_, &n)| n == 0.0)
        .map(|(j, _)| j)
        .collect();
    Ok(EmbeddingView { z, degenerate })
}

/// `||Z^T Z - I||_F^2`.
pub fn decorrelation_penalty(z: &Matrix) -> f64 {
    let mut g = z.t_matmul(z).expect("Z^T Z is always conformable");
    for i in 0..g.rows() {
        g[(i, i)] -= 1.0;
    }
    g.frobenius_sq()
}

/// `||Z_A - Z_B||^2 + lambda (||Z_A^T Z_A - I||^2 + ||Z_B^T Z_B - I||^2)`.
pub fn cca_loss(za: &EmbeddingView, zb: &EmbeddingView, lambda: f64) -> Result<f64> {
    let invariance = za.z.sub(&zb.z)?.frobenius_sq();
    Ok(invariance + lambda * (decorrelation_penalty(&za.z) + decorrelation_penalty(&zb.z)))
}

/// `alpha L(Z1,Z2) + beta L(Z3,Z4) + gamma [L(Z1,Z3) + L(Z1,Z4) + L(Z2,Z3) + L(Z2,Z4)]`
/// where Z1, Z2 are the audio views and Z3, Z4 the visual views.
pub fn multimodal_loss(
    z1: &EmbeddingView,
    z2: &EmbeddingView,
    z3: &EmbeddingView,
    z4: &EmbeddingView,
    config: &LossConfig,
) -> Result<f64> {
    config.validate()?;
    let l = |a, b| cca_loss(a, b, config.lambda);
    let cross = l(z1, z3)? + l(z1, z4)? + l(z2, z3)? + l(z2, z4)?;
    Ok(config.alpha * l(z1, z2)? + config.beta * l(z3, z4)? + config.gamma * cross)
}

/// Records `cca_loss` on already-standardized tape values.
pub fn cca_loss_on_tape(tape: &mut GradientTape, za: Var, zb: Var, lambda: f64) -> Result<Var> {
    let da = tape.decorrelation(za)?;
    let db = tape.decorrelation(zb)?;
    pair_loss_on_tape(tape, (za, da), (zb, db), lambda)
}

/// `cca_loss` from views paired with their precomputed decorrelation terms.
fn pair_loss_on_tape(tape: &mut GradientTape, a: (Var, Var), b: (Var, Var), lambda: f64) -> Result<Var> {
    let diff = tape.sub(a.0, b.0)?;
    let invariance = tape.sq_frobenius(diff);
    let dec = tape.add(a.1, b.1)?;
    let dec = tape.scale(dec, lambda);
    tape.add(invariance, dec)
}

/// Tape handles of every term of the multimodal objective.
#[derive(Clone, Copy, Debug)]
pub struct MultimodalTerms {
    pub total: Var,
    pub audio: Var,
    pub visual: Var,
    /// `L(Z1,Z3), L(Z1,Z4), L(Z2,Z3), L(Z2,Z4)`
    pub cross: [Var; 4],
}

/// Records `multimodal_loss` on standardized views `[Z1, Z2, Z3, Z4]`.
pub fn multimodal_loss_on_tape(
    tape: &mut GradientTape,
    views: [Var; 4],
    config: &LossConfig,
) -> Result<MultimodalTerms> {
    config.validate()?;
    let [z1, z2, z3, z4] = views;
    for (a, b) in [(z1, z2), (z3, z4), (z1, z3)] {
        if tape.value(a).shape() != tape.value(b).shape() {
            return Err(Error::shape(
                "multimodal_loss",
                format!("{:?} vs {:?}", tape.value(a).shape(), tape.value(b).shape()),
            ));
        }
    }
    // Each view's decorrelation term is shared by the three pairs it joins.
    let mut v = [(z1, z1); 4];
    for (slot, z) in v.iter_mut().zip([z1, z2, z3, z4]) {
        *slot = (z, tape.decorrelation(z)?);
    }
    let lambda = config.lambda;
    let audio = pair_loss_on_tape(tape, v[0], v[1], lambda)?;
    let visual = pair_loss_on_tape(tape, v[2], v[3], lambda)?;
    let cross = [
        pair_loss_on_tape(tape, v[0], v[2], lambda)?,
        pair_loss_on_tape(tape, v[0], v[3], lambda)?,
        pair_loss_on_tape(tape, v[1], v[2], lambda)?,
        pair_loss_on_tape(tape, v[1], v[3], lambda)?,
    ];
    let mut cross_sum = cross[0];
    for &c in &cross[1..] {
        cross_sum = tape.add(cross_sum, c)?;
    }
    let a = tape.scale(audio, config.alpha);
    let b = tape.scale(visual, config.beta);
    let c = tape.scale(cross_sum, config.gamma);
    let ab = tape.add(a, b)?;
    let total = tape.add(ab, c)?;
    Ok(MultimodalTerms {
        total,
        audio,
        visual,
        cross,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(rows: &[[f64; 2]]) -> EmbeddingView {
        EmbeddingView {
            z: Matrix::from_rows(rows).unwrap(),
            degenerate: vec![],
        }
    }

    /// Uncorrelated, centred, unit-norm columns.
    fn orthonormal_view() -> EmbeddingView {
        view(&[[0.5, 0.5], [0.5, -0.5], [-0.5, 0.5], [-0.5, -0.5]])
    }

    #[test]
    fn two_point_column_standardizes_to_unit_norm() {
        let v = standardize_embeddings(&Matrix::from_rows(&[[1.0], [-1.0]]).unwrap()).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert!((v.z()[(0, 0)] - s).abs() < 1e-15);
        assert!((v.z()[(1, 0)] + s).abs() < 1e-15);
        assert!(v.degenerate_columns().is_empty());
    }

    #[test]
    fn constant_column_is_flagged() {
        let v = standardize_embeddings(&Matrix::from_rows(&[[5.0], [5.0], [5.0]]).unwrap()).unwrap();
        assert_eq!(v.z().column(0), vec![0.0; 3]);
        assert_eq!(v.degenerate_columns(), &[0]);
    }

    #[test]
    fn standardization_is_idempotent() {
        let h = Matrix::from_fn(7, 3, |i, j| ((i * 3 + j) as f64).cos() + j as f64);
        let once = standardize_embeddings(&h).unwrap();
        let twice = standardize_embeddings(once.z()).unwrap();
        assert!(once.z().max_abs_diff(twice.z()).unwrap() < 1e-12);
    }

    #[test]
    fn single_row_is_rejected() {
        assert!(standardize_embeddings(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn identical_orthonormal_views_have_zero_loss() {
        let z = orthonormal_view();
        assert_eq!(cca_loss(&z, &z, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn perfectly_correlated_columns() {
        let a = 1.0 / 2f64.sqrt();
        let z = view(&[[a, a], [-a, -a]]);
        // Each Z^T Z is all ones, so each penalty is 2.
        let l = cca_loss(&z, &z, 0.0001).unwrap();
        assert!((l - 0.0004).abs() < 1e-15);
    }

    #[test]
    fn opposite_views() {
        let z = orthonormal_view();
        let neg = EmbeddingView {
            z: z.z.scale(-1.0),
            degenerate: vec![],
        };
        assert!((cca_loss(&z, &neg, 0.5).unwrap() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = orthonormal_view();
        let b = view(&[[1.0, 0.0], [0.0, 1.0]]);
        assert!(cca_loss(&a, &b, 0.1).is_err());
    }

    #[test]
    fn multimodal_without_cross_terms() {
        let h =
            |s: f64| standardize_embeddings(&Matrix::from_fn(6, 2, |i, j| (i as f64 * s + j as f64).sin())).unwrap();
        let (z1, z2, z3, z4) = (h(1.0), h(1.3), h(0.7), h(2.1));
        let cfg = LossConfig {
            gamma: 0.0,
            ..LossConfig::default()
        };
        let expected =
            cfg.alpha * cca_loss(&z1, &z2, cfg.lambda).unwrap() + cfg.beta * cca_loss(&z3, &z4, cfg.lambda).unwrap();
        assert_eq!(multimodal_loss(&z1, &z2, &z3, &z4, &cfg).unwrap(), expected);
    }

    #[test]
    fn multimodal_of_equal_orthonormal_views_is_zero() {
        let z = orthonormal_view();
        assert_eq!(multimodal_loss(&z, &z, &z, &z, &LossConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn negative_weight_is_rejected() {
        let z = orthonormal_view();
        let cfg = LossConfig {
            beta: -1.0,
            ..LossConfig::default()
        };
        assert!(multimodal_loss(&z, &z, &z, &z, &cfg).is_err());
    }

    #[test]
    fn tape_loss_matches_plain_loss() {
        let h = |s: f64| {
            standardize_embeddings(&Matrix::from_fn(5, 3, |i, j| (i as f64 * s + j as f64 * 0.7).sin())).unwrap()
        };
        let views = [h(1.0), h(1.7), h(0.4), h(2.9)];
        let cfg = LossConfig::default();
        let plain = multimodal_loss(&views[0], &views[1], &views[2], &views[3], &cfg).unwrap();
        let mut tape = GradientTape::new();
        let vars = views.clone().map(|v| tape.constant(v.z));
        let terms = multimodal_loss_on_tape(&mut tape, vars, &cfg).unwrap();
        assert!((tape.scalar(terms.total) - plain).abs() < 1e-12);
    }
}
