//! Reverse-mode gradients, one Adam step and finite-difference checks on
//! random composite graphs.

use imma::autodiff::{adam_update, finite_diff_check, AdamState, ParamStore, RandomGraph, Tape, Tensor};

fn main() -> imma::Result<()> {
    // loss = mean((W·x − y)²)
    let mut params = ParamStore::new();
    params.insert("w", Tensor::new(vec![2, 2], vec![0.5, -0.3, 0.8, 0.1])?);

    let mut tape = Tape::<f32>::new();
    let bound = tape.bind(&params, |_| true);
    let x = tape.constant(Tensor::new(vec![2, 1], vec![1.0, 2.0])?);
    let y = tape.constant(Tensor::new(vec![2, 1], vec![0.0, 1.0])?);
    let wx = tape.matmul(bound.get("w")?, x)?;
    let r = tape.sub(wx, y)?;
    let sq = tape.square(r)?;
    let loss = tape.mean(sq)?;
    let grads = tape.backward(loss)?.named(&bound, &tape);
    println!("loss {:.4}, dL/dW {:?}", tape.value(loss).item(), grads["w"].data());

    let mut adam = AdamState::default();
    adam_update(&mut params, &grads, &mut adam, 1e-2, false)?;
    println!("after one Adam step W = {:?}", params.get("w")?.data());

    let mut worst = 0.0f64;
    for seed in 0..100 {
        let (graph, p) = RandomGraph::new(seed);
        worst = worst.max(finite_diff_check(&graph, &p, 1e-3)?);
    }
    println!("worst relative gradient error over 100 random graphs: {worst:.2e}");
    Ok(())
}
