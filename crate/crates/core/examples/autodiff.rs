//! Reverse-mode differentiation on a small two-layer network, checked
//! against central finite differences.
//!
//!     cargo run --example autodiff

use cmdn::diffcore::{gradient_check, Graph, Params, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut params = Params::new();
    let w1 = params.add(
        "w1",
        Tensor::matrix(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect())?,
    );
    let w2 = params.add("w2", Tensor::matrix(4, 1, vec![0.5, -0.3, 0.8, 0.1])?);

    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(2, 3, vec![1.0, -0.5, 2.0, 0.3, 0.7, -1.2])?);
    let a = g.param(&params, w1);
    let b = g.param(&params, w2);
    let h = g.matmul(x, a)?;
    let h = g.softplus(h)?;
    let y = g.matmul(h, b)?;
    let y = g.square(y)?;
    let loss = g.sum(y)?;
    println!("loss = {:.6}", g.value(loss).item().unwrap());

    let grads = g.backward(loss)?;
    for (id, name, _) in params.iter() {
        println!(
            "d loss / d {name} = {:?}",
            grads.get(id).map(|t| t.data().to_vec())
        );
    }

    let report = gradient_check(&mut g, loss, 1e-5)?;
    println!(
        "finite differences: max relative error {:.2e} over {} coordinates",
        report.max_rel_error, report.checked
    );
    Ok(())
}
