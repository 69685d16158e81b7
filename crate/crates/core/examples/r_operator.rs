//! The R-operator: `J v` from one modified forward pass, checked against
//! finite differences of the logits, for every layer kind.

use nghf::model::{forward, r_forward, ModelSpec};
use nghf::param::norm;
use nghf::{FrameMatrix, Precision};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> nghf::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut gauss =
        |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
    for layers in [
        "fc:sigmoid:8;fc:identity:5",
        "tdnn:relu:8:-2,0,2;fc:identity:5",
        "rnn:tanh:8:6;fc:identity:5",
        "lstm:6:6;fc:identity:5",
    ] {
        let model = ModelSpec::parse_layers(4, layers)?;
        let params = model.init_params(1, Precision::F64);
        let x = FrameMatrix::from_vec(12, 4, gauss(48))?;
        let v = gauss(params.len());

        let tape = forward(&model, &params, &x)?;
        let jv = r_forward(&model, &params, &tape, &v)?;

        let eps = 1e-5;
        let plus = forward(&model, &params.plus_scaled(eps, &v)?, &x)?.logits();
        let minus = forward(&model, &params.plus_scaled(-eps, &v)?, &x)?.logits();
        let fd: Vec<f64> = plus
            .as_slice()
            .iter()
            .zip(minus.as_slice())
            .map(|(a, b)| (a - b) / (2.0 * eps))
            .collect();
        let diff: Vec<f64> = jv.as_slice().iter().zip(&fd).map(|(a, b)| a - b).collect();
        println!(
            "{layers:<36} {:>5} params  rel. err {:.2e}",
            params.len(),
            norm(&diff) / norm(&fd)
        );
    }
    Ok(())
}
