use cmdn::diffcore::{Graph, Tensor};
use cmdn::mixture::{
    convert_params, mixture_log_density, mode_approx, nll_graph, nll_loss, sample, Gmm2D,
};
use proptest::prelude::*;

fn moments(g: &Gmm2D) -> ([f64; 2], [[f64; 2]; 2]) {
    let mut mean = [0.0; 2];
    for (w, m) in g.weights().iter().zip(g.means()) {
        mean[0] += w * m[0];
        mean[1] += w * m[1];
    }
    let mut cov = [[0.0; 2]; 2];
    for k in 0..g.k() {
        let c = g.covariance(k);
        let m = g.means()[k];
        for a in 0..2 {
            for b in 0..2 {
                cov[a][b] += g.weights()[k] * (c[a][b] + (m[a] - mean[a]) * (m[b] - mean[b]));
            }
        }
    }
    (mean, cov)
}

#[test]
fn sample_moments_match_mixture() {
    let g = Gmm2D::new(
        vec![0.3, 0.7],
        vec![[31.0, 130.0], [36.0, 139.0]],
        vec![[0.5, 0.8], [1.0, 0.4]],
        vec![0.5, -0.3],
    )
    .unwrap();
    let draws = sample(&g, 200_000, 11);
    let n = draws.len() as f64;
    let (mean, cov) = moments(&g);
    let emp_mean = [0, 1].map(|a| draws.iter().map(|d| d[a]).sum::<f64>() / n);
    for a in 0..2 {
        assert!((emp_mean[a] - mean[a]).abs() < 0.02);
        for b in 0..2 {
            let c = draws
                .iter()
                .map(|d| (d[a] - emp_mean[a]) * (d[b] - emp_mean[b]))
                .sum::<f64>()
                / n;
            assert!(
                (c - cov[a][b]).abs() < 0.02 * cov[a][a].max(cov[b][b]),
                "cov[{a}][{b}]"
            );
        }
    }
}

#[test]
fn graph_nll_equals_scalar_nll() {
    let thetas: Vec<Vec<f64>> = (0..4)
        .map(|i| {
            (0..18)
                .map(|j| ((i * 18 + j) as f64 * 0.61).sin() * 2.0)
                .collect()
        })
        .collect();
    let targets = [[0.1, -0.2], [1.0, 0.5], [-0.7, 0.3], [0.0, 0.0]];
    let mixtures: Vec<Gmm2D> = thetas.iter().map(|t| convert_params(t).unwrap()).collect();
    let want = nll_loss(targets.iter().copied().zip(&mixtures)).unwrap();
    let mut g = Graph::new();
    let theta = g.constant(Tensor::matrix(4, 18, thetas.concat()).unwrap());
    let loss = nll_graph(&mut g, theta, &targets).unwrap();
    let got = g.value(loss).item().unwrap();
    assert!(
        (got - want).abs() < 1e-12 * want.abs().max(1.0),
        "{got} vs {want}"
    );
}

proptest! {
    #[test]
    fn conversion_is_always_valid(theta in prop::collection::vec(-50.0f64..50.0, 6..=48)) {
        let k = theta.len() / 6;
        let g = convert_params(&theta[..6 * k]).unwrap();
        let total: f64 = g.weights().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(g.deviations().iter().flatten().all(|s| *s > 0.0));
        prop_assert!(g.correlations().iter().all(|r| r.abs() < 1.0));
        let (mode, density) = mode_approx(&g);
        prop_assert!(density.is_finite() && density > 0.0);
        prop_assert!((mixture_log_density(mode, &g) - density.ln()).abs() < 1e-9);
    }

    #[test]
    fn mode_is_the_best_component_mean(theta in prop::collection::vec(-3.0f64..3.0, 30)) {
        let g = convert_params(&theta).unwrap();
        let (_, best) = mode_approx(&g);
        for m in g.means() {
            prop_assert!(g.density(*m) <= best);
        }
    }
}
