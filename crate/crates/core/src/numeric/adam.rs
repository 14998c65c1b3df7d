use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Moment estimates for a fixed list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    first_moment: Vec<Matrix>,
    second_moment: Vec<Matrix>,
    step_count: u64,
}

impl AdamState {
    pub fn new(params: &[Matrix]) -> Self {
        let zeros: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        AdamState {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[Matrix] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Matrix] {
        &self.second_moment
    }
}

/// One Adam update in place. `weight_decay` adds `weight_decay * param` to
/// each gradient before the moment update (classical L2, not decoupled).
pub fn adam_step(
    params: &mut [Matrix],
    grads: &[Matrix],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if !(lr > 0.0) || !(weight_decay >= 0.0) {
        return Err(Error::Param(format!(
            "adam_step needs lr > 0 and weight_decay >= 0, got {lr} and {weight_decay}"
        )));
    }
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::Contract(format!(
            "adam_step got {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first_moment) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("param {:?}, grad {:?}, moment {:?}", p.shape(), g.shape(), m.shape()),
            ));
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let bias1 = 1.0 - BETA1.powi(t);
    let bias2 = 1.0 - BETA2.powi(t);

    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        let ps = p.as_mut_slice();
        let ms = m.as_mut_slice();
        let vs = v.as_mut_slice();
        for (i, &gi) in g.as_slice().iter().enumerate() {
            let grad = gi + weight_decay * ps[i];
            ms[i] = BETA1 * ms[i] + (1.0 - BETA1) * grad;
            vs[i] = BETA2 * vs[i] + (1.0 - BETA2) * grad * grad;
            let m_hat = ms[i] / bias1;
            let v_hat = vs[i] / bias2;
            ps[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Matrix {
        Matrix::filled(1, 1, v)
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = vec![scalar(0.0)];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[scalar(0.0)], &mut s, 0.3, 0.0).unwrap();
        assert_eq!(p[0][(0, 0)], 0.0);
        assert_eq!(s.first_moment()[0][(0, 0)], 0.0);
        assert_eq!(s.second_moment()[0][(0, 0)], 0.0);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // t=1: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let mut p = vec![scalar(0.0)];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[scalar(2.0)], &mut s, 0.001, 0.0).unwrap();
        let expected = -0.001 * 2.0 / (2.0 + EPSILON);
        assert!((p[0][(0, 0)] - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_step_is_bounded_by_lr() {
        let lr = 0.001;
        let mut p = vec![scalar(0.0)];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[scalar(2.0)], &mut s, lr, 0.0).unwrap();
        let x1 = p[0][(0, 0)];
        adam_step(&mut p, &[scalar(2.0)], &mut s, lr, 0.0).unwrap();
        let x2 = p[0][(0, 0)];
        assert!((x2 - x1).abs() <= lr * (1.0 + 1e-6));
    }

    #[test]
    fn weight_decay_adds_l2_gradient() {
        // With decay the effective gradient at x=1 is 0 + 0.5 * 1.
        let mut a = vec![scalar(1.0)];
        let mut sa = AdamState::new(&a);
        adam_step(&mut a, &[scalar(0.0)], &mut sa, 0.01, 0.5).unwrap();
        let mut b = vec![scalar(1.0)];
        let mut sb = AdamState::new(&b);
        adam_step(&mut b, &[scalar(0.5)], &mut sb, 0.01, 0.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = vec![Matrix::zeros(2, 2)];
        let mut s = AdamState::new(&p);
        let err = adam_step(&mut p, &[Matrix::zeros(2, 3)], &mut s, 0.1, 0.0);
        assert!(matches!(err, Err(Error::Shape { .. })));
    }
}
