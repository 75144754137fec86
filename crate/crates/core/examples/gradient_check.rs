//! Central finite-difference check of a small conv -> relu -> maxpool ->
//! average-pool chain in f64.
//!
//! cargo run --release --example gradient_check

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempagg::tensor::{Tape, Tensor, Var};

const STEP: f64 = 1e-5;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn loss(tape: &mut Tape<f64>, x: Var, w: Var, b: Var, proj: &[f64]) -> tempagg::Result<Var> {
    let y = tape.conv2d(x, w, b, 1, 1)?;
    let y = tape.relu(y)?;
    let y = tape.maxpool2d(y, 2, 2)?;
    let y = tape.global_avg_pool(y)?;
    tape.weighted_sum(y, proj)
}

fn main() -> tempagg::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[2, 3, 6, 6], &mut rng);
    let w = random(&[4, 3, 3, 3], &mut rng);
    let b = random(&[4], &mut rng);
    let proj: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let eval = |w: &Tensor<f64>| -> tempagg::Result<f64> {
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
        let l = loss(&mut tape, xv, wv, bv, &proj)?;
        Ok(tape.value(l).data()[0])
    };

    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.constant(x.clone()), tape.variable(w.clone()), tape.constant(b.clone()));
    let l = loss(&mut tape, xv, wv, bv, &proj)?;
    let analytic = tape.backward(l)?.get(wv).expect("weight gradient").to_vec();

    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let (mut plus, mut minus) = (w.clone(), w.clone());
        plus.data_mut()[i] += STEP;
        minus.data_mut()[i] -= STEP;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * STEP);
        let scale = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / scale);
    }
    println!("loss {:.6}", tape.value(l).data()[0]);
    println!("max relative error over {} weights: {worst:.2e}", w.len());
    Ok(())
}
