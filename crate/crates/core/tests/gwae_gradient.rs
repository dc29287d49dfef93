use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spurious_core::gwae::{loss_and_grad, GwaeConfig, GwaeDims, GwaeParams, Reconstruction};
use spurious_core::Matrix;

fn batch() -> (Matrix, Vec<u8>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let z = Matrix::from_fn(8, 6, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    let y = vec![0, 1, 0, 1, 1, 0, 1, 0];
    let c = vec![0, 0, 1, 1, 1, 0, 0, 1];
    (z, y, c)
}

fn max_relative_error(config: &GwaeConfig) -> f64 {
    let (z, y, c) = batch();
    let params = GwaeParams::init(config.dims, 4);
    let (_, grad) = loss_and_grad(&params, config, &z, &y, &c, true).unwrap();
    let grad = grad.unwrap();
    let step = 1e-4;
    let mut worst: f64 = 0.0;
    for block in 0..8 {
        for idx in 0..params.blocks()[block].len() {
            let eval = |delta: f64| {
                let mut p = params.clone();
                p.blocks_mut()[block][idx] += delta;
                loss_and_grad(&p, config, &z, &y, &c, false).unwrap().0.total
            };
            let numeric = (eval(step) - eval(-step)) / (2.0 * step);
            let analytic = grad.blocks()[block][idx];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn tiny_model_gradient() {
    let config = GwaeConfig::new(GwaeDims::new(2, 2, 2).unwrap());
    let err = max_relative_error(&config);
    assert!(err < 1e-3, "max relative error {err}");
}

#[test]
fn squared_reconstruction_gradient() {
    let mut config = GwaeConfig::new(GwaeDims::new(2, 2, 2).unwrap());
    config.reconstruction = Reconstruction::SquaredNorm;
    let err = max_relative_error(&config);
    assert!(err < 1e-3, "max relative error {err}");
}
