use dimclust::model::{
    aic, binomial_cdf_oracle, component_density, log_likelihood, mixture_density, ComponentParams, MixtureParams,
    ModelStructure, NnDistanceSet,
};
use proptest::prelude::*;

/// Composite Simpson of `f(eᵗ) eᵗ` over `t ∈ [a, b]`.
fn simpson_log(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let g = |t: f64| {
        let r = f64::exp(t);
        f(r) * r
    };
    let mut sum = g(a) + g(b);
    for j in 1..panels {
        sum += if j % 2 == 1 { 4.0 } else { 2.0 } * g(a + j as f64 * h);
    }
    sum * h / 3.0
}

#[test]
fn density_integrates_to_one_on_grid() {
    for n in 1..=3 {
        for d in [0.5, 1.0, 2.0] {
            for lambda in [0.5, 1.0, 2.0] {
                let p = ComponentParams::new(d, lambda).unwrap();
                let total = simpson_log(|r| component_density(r, n, p).unwrap(), -80.0, 15.0, 40_000);
                assert!((total - 1.0).abs() < 1e-6, "n={n} d={d} λ={lambda}: {total}");
            }
        }
    }
}

#[test]
fn antiderivative_matches_finite_sample_cdf() {
    let k = 1_000_000;
    for n in 1..=3 {
        for (d, lambda) in [(1.0, 1.0), (0.5, 2.0), (2.0, 0.5)] {
            let p = ComponentParams::new(d, lambda).unwrap();
            let rho = lambda / (k - n) as f64;
            for r in [0.05, 0.2, 0.5, 1.0, 2.0, 4.0] {
                let cdf = simpson_log(|x| component_density(x, n, p).unwrap(), -80.0, f64::ln(r), 20_000);
                let oracle = binomial_cdf_oracle(r, n, k, rho, d).unwrap();
                assert!((cdf - oracle).abs() < 1e-3, "n={n} d={d} λ={lambda} r={r}: {cdf} vs {oracle}");
            }
        }
    }
}

#[test]
fn density_is_derivative_of_finite_sample_cdf() {
    let (k, n, d, h) = (1_000_000, 2, 1.0, 1e-5);
    for lambda in [0.5, 1.0, 3.0] {
        let rho = lambda / (k - n) as f64;
        let p = ComponentParams::new(d, lambda).unwrap();
        for r in [0.1, 0.5, 1.0, 2.0] {
            let fd = (binomial_cdf_oracle(r + h, n, k, rho, d).unwrap()
                - binomial_cdf_oracle(r - h, n, k, rho, d).unwrap())
                / (2.0 * h);
            let exact = component_density(r, n, p).unwrap();
            assert!(((fd - exact) / exact).abs() < 1e-3, "λ={lambda} r={r}: {fd} vs {exact}");
        }
    }
}

#[test]
fn aic_penalty_steps() {
    let s = |v: &[usize]| ModelStructure::new(v.to_vec()).unwrap();
    assert_eq!(aic(-100.0, &s(&[3, 1])) - aic(-100.0, &s(&[2, 1])), 4.0);
    assert_eq!(aic(-100.0, &s(&[2, 1, 1])) - aic(-100.0, &s(&[2, 1])), 6.0);
}

fn params(structure: &[usize], dims: Vec<f64>, rates: Vec<f64>, weights: Vec<f64>) -> MixtureParams {
    MixtureParams::new(ModelStructure::new(structure.to_vec()).unwrap(), dims, rates, weights).unwrap()
}

proptest! {
    #[test]
    fn mixture_density_is_monotone_in_each_weight(
        r in 0.01f64..5.0,
        d in prop::collection::vec(0.3f64..3.0, 2),
        rates in prop::collection::vec(0.2f64..4.0, 3),
        steps in 3usize..8,
    ) {
        // Component 0's weight sweeps (0, 1); the others share the rest 1:2.
        let values: Vec<f64> = (1..steps)
            .map(|j| {
                let t = j as f64 / steps as f64;
                let rest = 1.0 - t;
                let p = params(&[2, 1], d.clone(), rates.clone(), vec![t, rest / 3.0, 2.0 * rest / 3.0]);
                mixture_density(r, 1, &p).unwrap()
            })
            .collect();
        let up = values.windows(2).all(|w| w[1] >= w[0] - 1e-12 * w[0].abs());
        let down = values.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs());
        prop_assert!(up || down, "{values:?}");
    }

    #[test]
    fn log_likelihood_ignores_order_within_a_cluster(
        r in prop::collection::vec(0.01f64..10.0, 1..40),
        d in prop::collection::vec(0.3f64..3.0, 2),
        rates in prop::collection::vec(0.2f64..4.0, 3),
        w in prop::collection::vec(0.05f64..1.0, 3),
    ) {
        let s: f64 = w.iter().sum();
        let w: Vec<f64> = w.iter().map(|x| x / s).collect();
        let data = NnDistanceSet::new(2, r).unwrap();
        let a = params(&[2, 1], d.clone(), rates.clone(), w.clone());
        let b = params(&[2, 1], d, vec![rates[1], rates[0], rates[2]], vec![w[1], w[0], w[2]]);
        let (la, lb) = (log_likelihood(&data, &a).unwrap(), log_likelihood(&data, &b).unwrap());
        prop_assert!((la - lb).abs() <= 1e-12 * la.abs().max(1.0), "{la} vs {lb}");
    }
}
