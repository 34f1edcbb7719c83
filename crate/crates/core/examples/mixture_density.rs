//! Bivariate Gaussian mixtures: building one from raw network outputs,
//! evaluating densities, picking the mode and sampling.
//!
//!     cargo run --example mixture_density

use cmdn::mixture::{convert_params, mixture_log_density, mode_approx, sample, Gmm2D};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Two components, each (weight logit, mu1, mu2, sigma1, sigma2, rho)
    // before the softmax / softplus / softsign maps.
    let theta = [
        0.4, 31.6, 130.6, -1.0, -1.2, 0.3, //
        -0.2, 35.7, 139.7, -0.5, -0.4, 0.6,
    ];
    let gmm = convert_params(&theta)?;
    println!("{}", serde_json::to_string_pretty(&gmm)?);

    for y in [[31.6, 130.6], [35.7, 139.7], [33.6, 135.1]] {
        println!("log p({y:?}) = {:.4}", mixture_log_density(y, &gmm));
    }

    let (mode, density) = mode_approx(&gmm);
    println!("mode approximation {mode:?} with density {density:.4}");

    let draws = sample(&gmm, 10_000, 7);
    let near_first = draws
        .iter()
        .filter(|p| (p[0] - 31.6).abs() < 2.0 && (p[1] - 130.6).abs() < 2.0)
        .count();
    println!(
        "{:.3} of draws near the first mean (weight {:.3})",
        near_first as f64 / draws.len() as f64,
        gmm.weights()[0]
    );

    let blend = Gmm2D::combine(&[
        (0.5, &gmm),
        (0.5, &Gmm2D::single([34.0, 135.0], [0.2, 0.2], 0.0)?),
    ])?;
    println!("combined mixture has {} components", blend.k());
    Ok(())
}
