use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use fot_core::basis::{hermite_upto, BasisSet, EmpiricalBasisJson};
use fot_core::coupling::{sinkhorn, Marginals, SinkhornMode, SinkhornOptions};
use fot_core::evaluate::{matching_loss, matching_loss_from_distances};
use fot_core::funcdata::{
    generate_sinusoid_mixture, generate_sinusoid_mixture_with_draws, load_dataset, save_dataset, uniform_grid,
    DataFormat, Domain, FunctionalDataset, FunctionalSample, ParamDist, PointsRule, SinusoidComponent,
};
use fot_core::gp_baseline::{gaussian_ot_map, gaussian_w2, GaussianMeasure};
use fot_core::operator::{hs_norm_sq, CoefficientRule, OperatorCoeffs};
use fot_core::solver::{fit, SolverConfig};

fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn random_cost(n1: usize, n2: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let u = Uniform::new(0.0, 1.0).unwrap();
    DMatrix::from_fn(n1, n2, |_, _| u.sample(rng))
}

fn spd(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = normal_matrix(d, d, rng);
    &a * a.transpose() + DMatrix::identity(d, d) * 0.1
}

fn gaussian(d: usize, rng: &mut ChaCha8Rng) -> GaussianMeasure {
    let mean = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
    GaussianMeasure::new(mean, spd(d, rng)).unwrap()
}

fn random_curve(points: &[f64], rng: &mut ChaCha8Rng) -> FunctionalSample {
    FunctionalSample::new(points.to_vec(), points.iter().map(|_| StandardNormal.sample(rng)).collect()).unwrap()
}

fn brute_force(cost: &DMatrix<f64>) -> f64 {
    let n = cost.nrows();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        best = best.min(p.iter().enumerate().map(|(l, &k)| cost[(l, k)]).sum::<f64>() / n as f64);
    });
    best
}

fn permute(perm: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == perm.len() {
        visit(perm);
        return;
    }
    for i in start..perm.len() {
        perm.swap(start, i);
        permute(perm, start + 1, visit);
        perm.swap(start, i);
    }
}

fn small_pair(seed: u64, n: usize) -> (FunctionalDataset, FunctionalDataset) {
    let prior = vec![SinusoidComponent {
        amplitude: ParamDist::Uniform { low: 0.5, high: 1.5 },
        frequency: ParamDist::Uniform { low: 2.0, high: 6.0 },
        phase: ParamDist::Uniform { low: 0.0, high: 3.0 },
        offset: ParamDist::Uniform { low: -1.0, high: 1.0 },
    }];
    let points = PointsRule::RandomRange { min: 20, max: 30 };
    let s = generate_sinusoid_mixture(n, &prior, &points, seed, Domain::Source).unwrap();
    let t = generate_sinusoid_mixture(n, &prior, &points, seed + 1000, Domain::Target).unwrap();
    (s, t)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pushforward_is_linear(seed in any::<u64>(), k1 in 1usize..8, k2 in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let op = OperatorCoeffs::new(normal_matrix(k2, k1, &mut rng), BasisSet::brownian(k1).unwrap(), BasisSet::brownian(k2).unwrap()).unwrap();
        let x = uniform_grid(0.0, 1.0, 25);
        let (f, g) = (random_curve(&x, &mut rng), random_curve(&x, &mut rng));
        let sum = FunctionalSample::new(x.clone(), f.y.iter().zip(&g.y).map(|(a, b)| a + b).collect()).unwrap();
        let points = uniform_grid(0.0, 1.0, 17);
        let pf = op.pushforward_values(&f, &points).unwrap();
        let pg = op.pushforward_values(&g, &points).unwrap();
        let ps = op.pushforward_values(&sum, &points).unwrap();
        for i in 0..points.len() {
            prop_assert!((ps[i] - pf[i] - pg[i]).abs() < 1e-12 * (1.0 + ps[i].abs()));
        }
    }

    #[test]
    fn hs_norm_is_coefficient_sum(seed in any::<u64>(), k1 in 1usize..10, k2 in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lambda = normal_matrix(k2, k1, &mut rng);
        let mut direct = 0.0;
        for j in 0..k2 {
            for i in 0..k1 {
                direct += lambda[(j, i)] * lambda[(j, i)];
            }
        }
        prop_assert!((hs_norm_sq(&lambda) - direct).abs() < 1e-12 * (1.0 + direct));
    }

    #[test]
    fn cost_is_invariant_to_joint_basis_permutation(seed in any::<u64>(), shift in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = uniform_grid(0.0, 1.0, 30);
        let k = 5;
        let raw = normal_matrix(grid.len(), k, &mut rng);
        let q = raw.qr().q();
        let vectors: Vec<Vec<f64>> = (0..k).map(|j| q.column(j).iter().copied().collect()).collect();
        let eigenvalues: Vec<f64> = (0..k).map(|j| 1.0 / (j + 1) as f64).collect();
        let perm: Vec<usize> = (0..k).map(|j| (j + shift) % k).collect();
        let basis = |order: &[usize]| BasisSet::from_empirical_json(&EmpiricalBasisJson {
            grid: grid.clone(),
            eigenvalues: order.iter().map(|&j| eigenvalues[j]).collect(),
            eigenvectors: order.iter().map(|&j| vectors[j].clone()).collect(),
        }).unwrap();
        let identity: Vec<usize> = (0..k).collect();
        let lambda = normal_matrix(k, k, &mut rng);
        let permuted = DMatrix::from_fn(k, k, |j, i| lambda[(perm[j], perm[i])]);
        let op = OperatorCoeffs::new(lambda, basis(&identity), basis(&identity)).unwrap();
        let op_p = OperatorCoeffs::new(permuted, basis(&perm), basis(&perm)).unwrap();
        let curves: Vec<FunctionalSample> = (0..4).map(|_| random_curve(&grid, &mut rng)).collect();
        let s = FunctionalDataset::new(Domain::Source, curves[..2].to_vec()).unwrap();
        let t = FunctionalDataset::new(Domain::Target, curves[2..].to_vec()).unwrap();
        let (c, cp) = (op.cost_matrix(&s, &t).unwrap(), op_p.cost_matrix(&s, &t).unwrap());
        prop_assert!((c - cp).amax() < 1e-10);
    }

    #[test]
    fn datasets_round_trip(seed in any::<u64>(), n in 1usize..6) {
        let prior = vec![SinusoidComponent::fixed(1.0, 3.0, 0.2, 0.0)];
        let data = generate_sinusoid_mixture(n, &prior, &PointsRule::RandomRange { min: 2, max: 12 }, seed, Domain::Target).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for format in [DataFormat::Json, DataFormat::Csv] {
            let path = dir.path().join(match format { DataFormat::Json => "d.json", DataFormat::Csv => "d.csv" });
            save_dataset(&data, &path, format).unwrap();
            let back = load_dataset(&path, format, Domain::Target).unwrap();
            prop_assert_eq!(back.len(), data.len());
            for (a, b) in back.samples.iter().zip(&data.samples) {
                for (u, v) in a.x.iter().chain(&a.y).zip(b.x.iter().chain(&b.y)) {
                    prop_assert!((u - v).abs() <= 1e-12 * (1.0 + v.abs()));
                }
            }
        }
    }

    #[test]
    fn sinkhorn_objective_is_nonincreasing(seed in any::<u64>(), n1 in 2usize..15, n2 in 2usize..15, gamma in 0.01f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cost = random_cost(n1, n2, &mut rng);
        let opts = SinkhornOptions { record_every: 10, newton_polish: false, tolerance: 1e-12, max_iters: 2000, ..Default::default() };
        for mode in [SinkhornMode::Log, SinkhornMode::Naive] {
            let plan = sinkhorn(&cost, gamma, &Marginals::uniform(n1, n2), &SinkhornOptions { mode, ..opts.clone() }).unwrap();
            for w in plan.objective_trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9, "{:?}: {} then {}", mode, w[0], w[1]);
            }
        }
    }

    #[test]
    fn log_and_naive_sinkhorn_agree(seed in any::<u64>(), n in 2usize..20, gamma in 0.05f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cost = random_cost(n, n + 1, &mut rng);
        let m = Marginals::uniform(n, n + 1);
        let opts = SinkhornOptions { tolerance: 1e-13, ..Default::default() };
        let a = sinkhorn(&cost, gamma, &m, &opts).unwrap();
        let b = sinkhorn(&cost, gamma, &m, &SinkhornOptions { mode: SinkhornMode::Naive, ..opts }).unwrap();
        prop_assert!((a.plan - b.plan).amax() < 1e-8);
    }

    #[test]
    fn near_exact_loss_matches_brute_force(seed in any::<u64>(), n in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_cost(n, n, &mut rng);
        let best = brute_force(&d);
        let loss = matching_loss_from_distances(d, None).unwrap().loss;
        prop_assert!((loss - best).abs() <= 0.01 * best + 1e-12, "{loss} vs {best}");
    }

    #[test]
    fn matching_loss_ignores_sample_order(seed in any::<u64>(), n in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform_grid(0.0, 1.0, 12);
        let a = FunctionalDataset::new(Domain::Target, (0..n).map(|_| random_curve(&x, &mut rng)).collect()).unwrap();
        let b = FunctionalDataset::new(Domain::Target, (0..n).map(|_| random_curve(&x, &mut rng)).collect()).unwrap();
        let order: Vec<usize> = (0..n).rev().collect();
        let base = matching_loss(&a, &b, None).unwrap().loss;
        let swapped = matching_loss(&a.subset(&order), &b, None).unwrap().loss;
        let both = matching_loss(&a.subset(&order), &b.subset(&order), None).unwrap().loss;
        prop_assert!((base - swapped).abs() < 1e-9 * (1.0 + base));
        prop_assert!((base - both).abs() < 1e-9 * (1.0 + base), "{base} vs {both} (swapped {swapped})");
    }

    #[test]
    fn w2_is_symmetric_and_metric(seed in any::<u64>(), d in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c) = (gaussian(d, &mut rng), gaussian(d, &mut rng), gaussian(d, &mut rng));
        let ab = gaussian_w2(&a, &b).unwrap();
        prop_assert!((ab - gaussian_w2(&b, &a).unwrap()).abs() < 1e-8 * (1.0 + ab));
        let bc = gaussian_w2(&b, &c).unwrap();
        let ac = gaussian_w2(&a, &c).unwrap();
        prop_assert!(ac.sqrt() <= ab.sqrt() + bc.sqrt() + 1e-8);
    }

    #[test]
    fn ot_map_is_symmetric_positive_definite(seed in any::<u64>(), d in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = gaussian_ot_map(&gaussian(d, &mut rng), &gaussian(d, &mut rng)).unwrap();
        prop_assert!((&t - t.transpose()).amax() < 1e-10 * (1.0 + t.amax()));
        prop_assert!(t.symmetric_eigenvalues().min() > 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn fit_ignores_sample_order(seed in 0u64..1000) {
        let (s, t) = small_pair(seed, 8);
        let basis = BasisSet::brownian(4).unwrap();
        let config = SolverConfig { k_source: 4, k_target: 4, max_outer: 30, coefficient_rule: CoefficientRule::Trapezoid, ..Default::default() };
        let base = fit(&s, &t, &basis, &basis, &config).unwrap();
        let order: Vec<usize> = vec![3, 0, 7, 5, 1, 6, 2, 4];
        let shuffled = fit(&s.subset(&order), &t.subset(&order[..].iter().rev().copied().collect::<Vec<_>>()), &basis, &basis, &config).unwrap();
        let (a, b) = (base.final_objective(), shuffled.final_objective());
        prop_assert!((a - b).abs() < 1e-6 * (1.0 + a.abs()), "{a} vs {b}");
        prop_assert!(base.trace.iter().all(|r| r.objective.is_finite()));
    }
}

#[test]
fn brownian_functions_are_discretely_orthonormal() {
    let n = 2000;
    let grid: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    let v = BasisSet::brownian(10).unwrap().evaluate(&grid, 10).unwrap();
    let gram = v.transpose() * &v / n as f64;
    for i in 0..10 {
        for j in 0..10 {
            let delta = if i == j { 1.0 } else { 0.0 };
            assert!((gram[(i, j)] - delta).abs() < 1e-3, "({i},{j}) {}", gram[(i, j)]);
        }
    }
}

#[test]
fn hermite_matches_recurrence() {
    for step in 0..=60 {
        let x = -3.0 + step as f64 * 0.1;
        let h = hermite_upto(15, x);
        let (mut prev, mut cur) = (1.0, 2.0 * x);
        assert_eq!(h[0], 1.0);
        assert!((h[1] - cur).abs() <= 1e-10 * cur.abs().max(1.0));
        for k in 1..15 {
            let next = 2.0 * x * cur - 2.0 * k as f64 * prev;
            assert!((h[k + 1] - next).abs() <= 1e-10 * next.abs().max(1.0), "k={} x={x}", k + 1);
            prev = cur;
            cur = next;
        }
    }
}

/// Parameter draws bucketed by component follow that component's uniform
/// prior: chi-square over ten equal bins.
#[test]
fn generator_draws_follow_component_priors() {
    let components = vec![
        SinusoidComponent {
            amplitude: ParamDist::Uniform { low: 0.0, high: 1.0 },
            frequency: ParamDist::Uniform { low: 2.0, high: 4.0 },
            phase: ParamDist::Fixed { value: 0.0 },
            offset: ParamDist::Uniform { low: -1.0, high: 1.0 },
        },
        SinusoidComponent {
            amplitude: ParamDist::Uniform { low: 5.0, high: 6.0 },
            frequency: ParamDist::Uniform { low: 10.0, high: 20.0 },
            phase: ParamDist::Fixed { value: 0.0 },
            offset: ParamDist::Uniform { low: 3.0, high: 4.0 },
        },
    ];
    let (_, draws) =
        generate_sinusoid_mixture_with_draws(4000, &components, &PointsRule::Grid { count: 2 }, 11, Domain::Source).unwrap();
    let bounds = [[(0.0, 1.0), (2.0, 4.0), (-1.0, 1.0)], [(5.0, 6.0), (10.0, 20.0), (3.0, 4.0)]];
    // 99.9% quantile of chi-square with 9 degrees of freedom
    let critical = 27.877;
    for (c, ranges) in bounds.iter().enumerate() {
        let mine: Vec<_> = draws.iter().filter(|d| d.component == c).collect();
        assert!(mine.len() > 1500);
        for (p, &(lo, hi)) in ranges.iter().enumerate() {
            let mut bins = [0usize; 10];
            for d in &mine {
                let v = [d.amplitude, d.frequency, d.offset][p];
                assert!((lo..=hi).contains(&v));
                bins[(((v - lo) / (hi - lo) * 10.0) as usize).min(9)] += 1;
            }
            let expected = mine.len() as f64 / 10.0;
            let chi2: f64 = bins.iter().map(|&b| (b as f64 - expected).powi(2) / expected).sum();
            assert!(chi2 < critical, "component {c} parameter {p}: chi2 {chi2}");
        }
    }
}
