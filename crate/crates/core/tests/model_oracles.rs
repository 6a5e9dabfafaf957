use approx::assert_relative_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Exp1, StandardNormal};
use salmoe::gating::gating_probs;
use salmoe::rng::SalRng;
use salmoe::sim::{generate, table1_spec, ExpertFamily};
use salmoe::{
    sal_log_density, Dataset, GatingParams, MoeModel, ResponsibilityMatrix, SalMoeModel, SalParams,
};

fn random_model(rng: &mut SalRng, k: usize, p: usize, q: usize) -> SalMoeModel {
    let experts = (0..k)
        .map(|_| {
            let beta = (0..=p).map(|_| rng.gen_range(-2.0..2.0)).collect();
            SalParams::new(rng.gen_range(-1.5..1.5), rng.gen_range(0.05..2.0), beta).unwrap()
        })
        .collect();
    let gating = GatingParams::new(
        DMatrix::from_fn(q + 1, k - 1, |_, _| rng.gen_range(-3.0..3.0)),
        k,
    )
    .unwrap();
    MoeModel::new(experts, gating).unwrap()
}

fn random_data(rng: &mut SalRng, n: usize, p: usize, q: usize) -> Dataset {
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let t: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..q).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let y = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
    Dataset::from_rows(y, &x, &t).unwrap()
}

/// The SAL density written literally with `K_{1/2}(u) = √(π/2u)·e^{−u}`.
fn sal_density_literal(y: f64, mu: f64, alpha: f64, sigma: f64) -> f64 {
    let r = y - mu;
    let a = 2.0 + alpha * alpha / sigma;
    let u = (a * r * r / sigma).sqrt();
    let bessel = (std::f64::consts::PI / (2.0 * u)).sqrt() * (-u).exp();
    2.0 * (alpha * r / sigma).exp() / (2.0 * std::f64::consts::PI * sigma).sqrt()
        * ((r * r / sigma) / a).powf(0.25)
        * bessel
}

fn mixture_literal(m: &SalMoeModel, y: f64, x: &[f64], t: &[f64]) -> f64 {
    let p = gating_probs(m.gating(), t).unwrap();
    m.experts()
        .iter()
        .zip(&p)
        .map(|(e, pk)| {
            let mu: f64 = x.iter().zip(&e.beta).map(|(a, b)| a * b).sum();
            pk * sal_density_literal(y, mu, e.alpha, e.sigma)
        })
        .sum()
}

#[test]
fn mixture_density_reductions() {
    let one = MoeModel::new(
        vec![SalParams::new(0.4, 0.7, vec![1.0, -2.0]).unwrap()],
        GatingParams::zeros(1, 1),
    )
    .unwrap();
    let v = one
        .mixture_log_density(0.3, &[1.0, 0.5], &[1.0, 0.2])
        .unwrap();
    assert_relative_eq!(
        v,
        sal_log_density(0.3, 0.0, 0.4, 0.7).unwrap(),
        epsilon = 1e-14
    );

    let experts = vec![
        SalParams::new(0.5, 0.3, vec![0.0, 1.0]).unwrap(),
        SalParams::new(-1.0, 2.0, vec![1.0, 0.0]).unwrap(),
    ];
    let forced = MoeModel::new(
        experts,
        GatingParams::from_columns(&[vec![800.0, 0.0]], 1).unwrap(),
    )
    .unwrap();
    let v = forced
        .mixture_log_density(0.2, &[1.0, 0.4], &[1.0, 0.4])
        .unwrap();
    assert_relative_eq!(
        v,
        sal_log_density(0.2, 0.4, 0.5, 0.3).unwrap(),
        epsilon = 1e-10
    );
}

#[test]
fn mixture_density_matches_literal_formula() {
    let mut rng = SalRng::seed_from_u64(11);
    for _ in 0..20 {
        let m = random_model(&mut rng, 3, 2, 2);
        let x = [1.0, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let t = [1.0, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let y = rng.gen_range(-3.0..3.0);
        let lib = m.mixture_log_density(y, &x, &t).unwrap();
        assert_relative_eq!(
            lib,
            mixture_literal(&m, y, &x, &t).ln(),
            epsilon = 1e-12,
            max_relative = 1e-12
        );
    }
}

#[test]
fn log_likelihood_sums_rows_and_doubles_on_duplication() {
    let mut rng = SalRng::seed_from_u64(12);
    let m = random_model(&mut rng, 2, 1, 1);
    let d = random_data(&mut rng, 50, 1, 1);
    let ll = m.log_likelihood(&d).unwrap();
    let direct: f64 = (0..d.n())
        .map(|i| mixture_literal(&m, d.y()[i], &d.x_row(i), &d.t_row(i)).ln())
        .sum();
    assert_relative_eq!(ll, direct, max_relative = 1e-10);
    assert_relative_eq!(
        m.log_likelihood(&d.repeated(2)).unwrap(),
        2.0 * ll,
        max_relative = 1e-14
    );
    let single = d.subset(&[7]);
    assert_relative_eq!(
        m.log_likelihood(&single).unwrap(),
        m.mixture_log_density(d.y()[7], &d.x_row(7), &d.t_row(7))
            .unwrap(),
        epsilon = 1e-14
    );
}

#[test]
fn responsibilities_match_bayes_ratio() {
    let mut rng = SalRng::seed_from_u64(13);
    let m = random_model(&mut rng, 2, 1, 1);
    let d = random_data(&mut rng, 30, 1, 1);
    let g = m.responsibilities(&d).unwrap();
    for i in 0..d.n() {
        let p = gating_probs(m.gating(), &d.t_row(i)).unwrap();
        let f: Vec<f64> = m
            .experts()
            .iter()
            .zip(&p)
            .map(|(e, pk)| {
                pk * sal_density_literal(
                    d.y()[i],
                    d.x_row(i)[0] * e.beta[0] + d.x_row(i)[1] * e.beta[1],
                    e.alpha,
                    e.sigma,
                )
            })
            .collect();
        assert_relative_eq!(g.matrix()[(i, 0)], f[0] / (f[0] + f[1]), epsilon = 1e-12);
    }
    let one = MoeModel::new(vec![m.experts()[0].clone()], GatingParams::zeros(1, 1)).unwrap();
    assert!(one
        .responsibilities(&d)
        .unwrap()
        .matrix()
        .iter()
        .all(|&v| v == 1.0));
    let twins = MoeModel::new(vec![m.experts()[0].clone(); 3], GatingParams::zeros(1, 3)).unwrap();
    let g = twins.responsibilities(&d).unwrap();
    assert!(g.matrix().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    // Exact ties go to the smallest index.
    assert!(twins.map_cluster(&d).unwrap().iter().all(|&z| z == 1));
    let soft = ResponsibilityMatrix::new(DMatrix::from_row_slice(
        2,
        3,
        &[0.2, 0.7, 0.1, 0.5, 0.0, 0.5],
    ))
    .unwrap();
    assert_eq!(soft.map_labels(), vec![1, 0]);
}

#[test]
fn prediction_examples() {
    let one = MoeModel::new(
        vec![SalParams::new(1.0, 0.1, vec![0.0, 0.0]).unwrap()],
        GatingParams::zeros(1, 1),
    )
    .unwrap();
    let p = one.predict(&[1.0, 0.3], &[1.0, 0.3]).unwrap();
    assert_relative_eq!(p.mean, 1.0, epsilon = 1e-15);
    assert_relative_eq!(p.variance, 1.1, epsilon = 1e-14);
    assert_relative_eq!(p.upper - p.mean, 2.0 * 1.1f64.sqrt(), epsilon = 1e-14);
    assert_relative_eq!(p.mean - p.lower, 2.0 * 1.1f64.sqrt(), epsilon = 1e-14);

    let e = SalParams::new(1.0, 0.1, vec![0.0, 0.0]).unwrap();
    let twins = MoeModel::new(
        vec![e.clone(), e],
        GatingParams::from_columns(&[vec![0.3, -2.0]], 1).unwrap(),
    )
    .unwrap();
    let p2 = twins.predict(&[1.0, 0.3], &[1.0, 0.3]).unwrap();
    assert_relative_eq!(p2.mean, p.mean, epsilon = 1e-14);
    assert_relative_eq!(p2.variance, p.variance, epsilon = 1e-14);

    let pm = MoeModel::new(
        vec![
            SalParams::new(0.0, 0.1, vec![-1.0]).unwrap(),
            SalParams::new(0.0, 0.1, vec![1.0]).unwrap(),
        ],
        GatingParams::zeros(0, 2),
    )
    .unwrap();
    let p3 = pm.predict(&[1.0], &[1.0]).unwrap();
    assert!(p3.mean.abs() < 1e-15);
    assert_relative_eq!(p3.variance, 1.1, epsilon = 1e-14);
}

/// Draws from the generative model with an independent sampler and compares
/// moments with `predict` within three standard errors.
#[test]
fn prediction_agrees_with_monte_carlo() {
    let mut rng = SalRng::seed_from_u64(14);
    let draws = 100_000;
    for _ in 0..20 {
        let m = random_model(&mut rng, 3, 1, 1);
        let x = [1.0, rng.gen_range(-1.0..1.0)];
        let pred = m.predict(&x, &x).unwrap();
        let p = gating_probs(m.gating(), &x).unwrap();
        let ys: Vec<f64> = (0..draws)
            .map(|_| {
                let u: f64 = rng.gen();
                let mut k = 0;
                let mut acc = p[0];
                while u > acc && k + 1 < p.len() {
                    k += 1;
                    acc += p[k];
                }
                let e = &m.experts()[k];
                let v: f64 = Exp1.sample(&mut rng);
                let z: f64 = StandardNormal.sample(&mut rng);
                x[0] * e.beta[0] + x[1] * e.beta[1] + e.alpha * v + (e.sigma * v).sqrt() * z
            })
            .collect();
        let n = draws as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let m4 = ys.iter().map(|y| (y - mean).powi(4)).sum::<f64>() / n;
        assert!(
            (mean - pred.mean).abs() < 3.0 * (pred.variance / n).sqrt(),
            "mean {mean} vs {}",
            pred.mean
        );
        let var_se = ((m4 - var * var) / n).sqrt();
        assert!(
            (var - pred.variance).abs() < 3.0 * var_se,
            "variance {var} vs {}",
            pred.variance
        );
    }
}

#[test]
fn density_is_continuous_across_expert_hyperplanes() {
    let mut rng = SalRng::seed_from_u64(15);
    for _ in 0..20 {
        let m = random_model(&mut rng, 3, 1, 1);
        let x = [1.0, rng.gen_range(-1.0..1.0)];
        for e in m.experts() {
            let mu = x[0] * e.beta[0] + x[1] * e.beta[1];
            let l = m.mixture_log_density(mu - 1e-8, &x, &x).unwrap();
            let r = m.mixture_log_density(mu + 1e-8, &x, &x).unwrap();
            assert!((l - r).abs() < 1e-6);
        }
    }
}

#[test]
fn canonicalization_examples() {
    let a = SalParams::new(0.5, 0.2, vec![-1.0, 1.0]).unwrap();
    let b = SalParams::new(0.8, 0.1, vec![2.0, -1.0]).unwrap();
    let ordered = MoeModel::new(
        vec![a.clone(), b.clone()],
        GatingParams::from_columns(&[vec![0.3, 4.0]], 1).unwrap(),
    )
    .unwrap();
    let (same, perm) = ordered.canonicalize();
    assert_eq!(perm, vec![0, 1]);
    assert_eq!(same, ordered);

    let swapped = ordered.permuted(&[1, 0]).unwrap();
    assert_ne!(swapped, ordered);
    let (back, _) = swapped.canonicalize();
    let mut rng = SalRng::seed_from_u64(16);
    for _ in 0..100 {
        let x = [1.0, rng.gen_range(-1.0..1.0)];
        let y = rng.gen_range(-3.0..3.0);
        let v0 = ordered.mixture_log_density(y, &x, &x).unwrap();
        assert_relative_eq!(
            swapped.mixture_log_density(y, &x, &x).unwrap(),
            v0,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            back.mixture_log_density(y, &x, &x).unwrap(),
            v0,
            epsilon = 1e-12
        );
    }

    let m = random_model(&mut rng, 3, 1, 2);
    let (c, perm) = m.canonicalize();
    for _ in 0..20 {
        let t = [1.0, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let before = gating_probs(m.gating(), &t).unwrap();
        let after = gating_probs(c.gating(), &t).unwrap();
        for j in 0..3 {
            assert_relative_eq!(after[j], before[perm[j]], epsilon = 1e-12);
        }
    }
    let keys: Vec<f64> = c.experts().iter().map(|e| e.beta[0]).collect();
    assert!(keys.windows(2).all(|w| w[0] <= w[1]));
}

/// At the true parameters the expected MAP accuracy is the mean of the
/// largest posterior weight; observed agreement must match it.
#[test]
fn truth_responsibilities_recover_generative_labels() {
    let spec = table1_spec(ExpertFamily::Sal, None).with_n(2000);
    let d = generate(&spec, &mut salmoe::rng::substream(21, 0)).unwrap();
    let truth = spec.truth_sal().unwrap();
    let z = truth.map_cluster(&d).unwrap();
    let agree = z
        .iter()
        .zip(d.labels().unwrap())
        .filter(|(a, b)| a == b)
        .count() as f64
        / d.n() as f64;
    let g = truth.responsibilities(&d).unwrap();
    let bayes = g.matrix().row_iter().map(|r| r.max()).sum::<f64>() / d.n() as f64;
    let se = (bayes * (1.0 - bayes) / d.n() as f64).sqrt();
    assert!(
        (agree - bayes).abs() < 4.0 * se,
        "agreement {agree}, Bayes accuracy {bayes}"
    );
    assert!(agree > 0.9);
}

#[test]
fn json_round_trip_preserves_the_model() {
    let mut rng = SalRng::seed_from_u64(17);
    let m = random_model(&mut rng, 3, 2, 1);
    let s = serde_json::to_string(&m).unwrap();
    let back: SalMoeModel = serde_json::from_str(&s).unwrap();
    assert_eq!(back, m);
    let v: serde_json::Value = serde_json::from_str(&s).unwrap();
    for key in ["K", "p", "q", "experts", "gating"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn responsibility_rows_sum_to_one(seed in any::<u64>(), k in 1usize..5) {
        let mut rng = SalRng::seed_from_u64(seed);
        let m = if k == 1 {
            MoeModel::new(vec![SalParams::new(0.3, 0.2, vec![0.0, 1.0]).unwrap()], GatingParams::zeros(1, 1)).unwrap()
        } else {
            random_model(&mut rng, k, 1, 1)
        };
        let d = random_data(&mut rng, 20, 1, 1);
        let g = m.responsibilities(&d).unwrap();
        for row in g.matrix().row_iter() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        let p = m.predict(&d.x_row(0), &d.t_row(0)).unwrap();
        prop_assert!(p.variance >= 0.0);
    }

    #[test]
    fn canonicalization_is_idempotent_and_density_invariant(seed in any::<u64>(), k in 2usize..5) {
        let mut rng = SalRng::seed_from_u64(seed);
        let m = random_model(&mut rng, k, 1, 1);
        let d = random_data(&mut rng, 25, 1, 1);
        let (c, _) = m.canonicalize();
        let (cc, perm) = c.canonicalize();
        prop_assert_eq!(&cc, &c);
        prop_assert_eq!(perm, (0..k).collect::<Vec<_>>());
        let a = m.log_likelihood(&d).unwrap();
        let b = c.log_likelihood(&d).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
    }
}
