//! Independent numerical oracles for the test suites.
//!
//! Nothing here shares code with the estimator: quadrature is a plain adaptive
//! Gauss-Kronrod rule and optimization is derivative-free Nelder-Mead, so a
//! bug in the library cannot leak into the values the tests compare against.

/// Gauss-Kronrod 7-15 nodes on [-1, 1] (non-negative half, symmetric).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let s = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive Gauss-Kronrod integration of `f` over `[a, b]`.
///
/// Bisects until each panel's Kronrod/Gauss discrepancy is below its share of
/// `tol` or `max_depth` is reached.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (val, err) = gk15(f, a, b);
        if err <= tol || depth == 0 {
            return val;
        }
        let mid = 0.5 * (a + b);
        recurse(f, a, mid, 0.5 * tol, depth - 1) + recurse(f, mid, b, 0.5 * tol, depth - 1)
    }
    recurse(&f, a, b, tol, 50)
}

/// Integrates over a sequence of breakpoints, adaptive on each sub-interval.
pub fn integrate_pieces<F: Fn(f64) -> f64>(f: F, points: &[f64], tol: f64) -> f64 {
    points
        .windows(2)
        .map(|w| integrate(&f, w[0], w[1], tol / points.len() as f64))
        .sum()
}

/// Integrates `f` over `(0, inf)` via the substitution `w = exp(s)`.
pub fn integrate_positive<F: Fn(f64) -> f64>(f: F, tol: f64) -> f64 {
    let g = |s: f64| {
        let w = s.exp();
        f(w) * w
    };
    integrate_pieces(g, &[-60.0, -20.0, -5.0, 0.0, 5.0, 20.0, 60.0], tol)
}

/// Result of a Nelder-Mead minimization.
#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

/// Derivative-free Nelder-Mead minimization with restarts around the best
/// vertex (restarts shake the simplex out of premature collapse).
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: F,
    start: &[f64],
    step: f64,
    tol: f64,
    max_evals: usize,
) -> Minimum {
    let dim = start.len();
    let mut best = start.to_vec();
    let mut best_val = f(&best);
    let mut evals = 1usize;
    for _restart in 0..8 {
        let mut simplex: Vec<Vec<f64>> = vec![best.clone()];
        for i in 0..dim {
            let mut v = best.clone();
            v[i] += if v[i].abs() > 1e-3 {
                step * v[i].abs().max(0.1)
            } else {
                step
            };
            simplex.push(v);
        }
        let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
        evals += dim + 1;
        while evals < max_evals {
            let mut order: Vec<usize> = (0..=dim).collect();
            order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();
            let spread = (values[dim] - values[0]).abs();
            if spread <= tol * (1.0 + values[0].abs()) {
                break;
            }
            let centroid: Vec<f64> = (0..dim)
                .map(|j| simplex[..dim].iter().map(|v| v[j]).sum::<f64>() / dim as f64)
                .collect();
            let along = |coef: f64| -> Vec<f64> {
                (0..dim)
                    .map(|j| centroid[j] + coef * (simplex[dim][j] - centroid[j]))
                    .collect()
            };
            let reflected = along(-1.0);
            let fr = f(&reflected);
            evals += 1;
            if fr < values[0] {
                let expanded = along(-2.0);
                let fe = f(&expanded);
                evals += 1;
                if fe < fr {
                    simplex[dim] = expanded;
                    values[dim] = fe;
                } else {
                    simplex[dim] = reflected;
                    values[dim] = fr;
                }
            } else if fr < values[dim - 1] {
                simplex[dim] = reflected;
                values[dim] = fr;
            } else {
                let (contracted, fc) = if fr < values[dim] {
                    let c = along(-0.5);
                    let v = f(&c);
                    (c, v)
                } else {
                    let c = along(0.5);
                    let v = f(&c);
                    (c, v)
                };
                evals += 1;
                if fc < values[dim].min(fr) {
                    simplex[dim] = contracted;
                    values[dim] = fc;
                } else {
                    for i in 1..=dim {
                        for j in 0..dim {
                            simplex[i][j] = simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]);
                        }
                        values[i] = f(&simplex[i]);
                    }
                    evals += dim;
                }
            }
        }
        let (imin, vmin) = values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, v)| (i, *v))
            .unwrap();
        let improved = vmin < best_val - tol * (1.0 + best_val.abs());
        if vmin < best_val {
            best_val = vmin;
            best = simplex[imin].clone();
        }
        if !improved || evals >= max_evals {
            break;
        }
    }
    Minimum {
        x: best,
        value: best_val,
        evaluations: evals,
    }
}

/// Two-sided Kolmogorov-Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = cdf(x);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value `c(level) / sqrt(n)` with
/// `c = sqrt(-ln(level / 2) / 2)`.
pub fn ks_critical_value(n: usize, level: f64) -> f64 {
    (-(level / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}
