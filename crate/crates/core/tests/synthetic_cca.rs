use nalgebra::{DMatrix, SymmetricEigen};

use ccagnn::data::{synthesize_av_dataset, SynthConfig};
use ccagnn::numeric::Matrix;
use ccagnn::rng;

fn centred(m: &Matrix) -> DMatrix<f64> {
    let (n, d) = m.shape();
    let mut x = DMatrix::from_fn(n, d, |i, j| m[(i, j)]);
    for j in 0..d {
        let mean = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-mean);
    }
    x
}

fn inv_sqrt(c: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(c);
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Largest canonical correlation: top singular value of
/// `Cxx^-1/2 Cxy Cyy^-1/2`.
fn first_canonical_correlation(x: &Matrix, y: &Matrix) -> f64 {
    let (x, y) = (centred(x), centred(y));
    let cxx = x.transpose() * &x;
    let cyy = y.transpose() * &y;
    let cxy = x.transpose() * &y;
    let t = inv_sqrt(cxx) * cxy * inv_sqrt(cyy);
    t.singular_values().max()
}

#[test]
fn clean_audio_and_visual_share_a_strong_canonical_direction() {
    let cfg = SynthConfig {
        n_sequences: 40,
        temporal_coefficient: 0.9,
        audio_noise: 0.01,
        visual_noise: 0.01,
        ..SynthConfig::default()
    };
    let ds = synthesize_av_dataset(&cfg, &mut rng::stream(0, 6)).unwrap();
    let rho = first_canonical_correlation(&ds.clean_audio, &ds.visual);
    assert!(rho > 0.9, "first canonical correlation {rho}");
    assert!(rho <= 1.0 + 1e-9);
}

#[test]
fn interference_weakens_the_noisy_audio_correlation() {
    let cfg = SynthConfig {
        n_sequences: 40,
        ..SynthConfig::default()
    };
    let ds = synthesize_av_dataset(&cfg, &mut rng::stream(1, 6)).unwrap();
    let clean = first_canonical_correlation(&ds.clean_audio, &ds.visual);
    let noisy = first_canonical_correlation(&ds.noisy_audio, &ds.visual);
    assert!(noisy < clean, "noisy {noisy} vs clean {clean}");
}
