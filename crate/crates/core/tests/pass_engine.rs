//! Non-null law, power and sample size.

use rand::Rng;
use sparsepower::linalg::{spd_solve_vec, Matrix};
use sparsepower::pass::{
    algorithm1_power, algorithm2_samplesize, asymptotic_power, build_nonnull, power_from_spec, prepare_model,
    sample_nonnull, search_samplesize, seed_streams, ModelSpec, PowerMode, PowerRequest, SampleSizeRequest,
};
use sparsepower::probdist::{chisq_sample, noncentral_chisq1_sample, MvnSampler, RngStream};
use sparsepower::process::{CovarianceKernel, MeanDiff, SamplingDesign};
use sparsepower::testkit::hotelling_test;

fn random_spd(rng: &mut RngStream, k: usize) -> Matrix {
    let b = Matrix::from_fn(k, k, |_, _| rng.gen_range(-1.0..1.0));
    let mut a = b.matmul(&b.transpose());
    a.add_scaled(&Matrix::identity(k), 0.3);
    a
}

fn ks_two_sample(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn equal_variance_reduces_to_noncentral_f() {
    let mut rng = RngStream::new(1);
    for k in 1..=3 {
        for n2 in [20usize, 100] {
            let lam = random_spd(&mut rng, k);
            let delta: Vec<f64> = (0..k).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let spec = build_nonnull(&delta, &lam, &lam, 1.0, n2).unwrap();
            let n = 2 * n2;
            assert!((spec.nu - (n as f64 - 2.0)).abs() <= 1e-9 * n as f64, "ν = {}", spec.nu);
            let q: f64 = delta.iter().zip(spd_solve_vec(&lam, &delta).unwrap()).map(|(a, b)| a * b).sum();
            let ncp = n2 as f64 * n2 as f64 / n as f64 * q;
            assert!((spec.ncp.iter().sum::<f64>() - ncp).abs() <= 1e-9 * ncp.max(1.0));

            let m = 100_000;
            let ours = sample_nonnull(&rng.substream(k as u64 * 1000 + n2 as u64), &spec, m).unwrap();
            let mut r2 = rng.substream(99 + k as u64 * 1000 + n2 as u64);
            let scale = 1.0 / (1.0 - 1.0 / n2 as f64);
            let den_df = (n - k - 1) as f64;
            let closed: Vec<f64> = (0..m)
                .map(|_| {
                    let mut num = noncentral_chisq1_sample(&mut r2, ncp).unwrap();
                    if k > 1 {
                        num += chisq_sample(&mut r2, (k - 1) as f64).unwrap();
                    }
                    scale * num / (chisq_sample(&mut r2, den_df).unwrap() / (n as f64 - 2.0))
                })
                .collect();
            let d = ks_two_sample(ours, closed);
            assert!(d <= 0.015, "K={k} n2={n2}: KS {d}");
        }
    }
}

#[test]
fn omega_spectrum_is_bounded() {
    let mut rng = RngStream::new(2);
    for k in 1..=4 {
        let l1 = random_spd(&mut rng, k);
        let l2 = random_spd(&mut rng, k);
        for kappa in [0.5, 1.0, 2.5] {
            let s = build_nonnull(&vec![0.1; k], &l1, &l2, kappa, 30).unwrap();
            let e = sparsepower::linalg::sym_eigen(&s.omega).unwrap();
            assert!(e.values.iter().all(|&v| v >= -1e-8 && v <= 1.0 + 1e-8));
            assert!(s.d.iter().all(|&d| d > 0.0));
            assert!(s.nu > k as f64 - 1.0);
            assert_eq!(s.n1_int(), (kappa * 30.0f64).ceil() as usize);
        }
    }
}

#[test]
fn numerator_mean_identity() {
    // E[Σ d⁻¹ χ²₁(ncp)] = Σ d⁻¹(1 + ncp); the variate divides by an
    // independent χ²_{df}/ν with mean ν/(df − 2)
    let l1 = Matrix::from_rows(&[vec![1.0]]).unwrap();
    let l2 = Matrix::from_rows(&[vec![2.0]]).unwrap();
    let spec = build_nonnull(&[0.2], &l1, &l2, 1.0, 100).unwrap();
    let draws = sample_nonnull(&RngStream::new(3), &spec, 400_000).unwrap();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let df = spec.nu;
    let expect = (1.0 + spec.ncp[0]) / spec.d[0] * df / (df - 2.0);
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / draws.len() as f64;
    assert!((mean - expect).abs() <= 3.0 * (var / draws.len() as f64).sqrt(), "{mean} vs {expect}");
}

fn case3_model() -> ModelSpec {
    let mut m = ModelSpec::new(
        MeanDiff::cubic(1.0),
        CovarianceKernel::NonStationaryRank2,
        SamplingDesign::uniform_range(8, 12),
        0.001,
    );
    m.pve = 0.9;
    m
}

fn case2_model(eta: f64) -> ModelSpec {
    let mut m = ModelSpec::new(
        MeanDiff::cubic(eta),
        CovarianceKernel::Car1 { variance: 1.0, base: 0.5 },
        SamplingDesign::uniform_fixed(8),
        0.001,
    );
    m.pve = 0.9;
    m
}

#[test]
fn theorem_matches_direct_score_simulation() {
    let (prep, power_rng) = seed_streams(4);
    let model = prepare_model(&prep, &case3_model()).unwrap();
    let n2 = 100;
    let theory = model.power(&power_rng, 1.0, n2, 0.05, 100_000, PowerMode::Exact).unwrap();

    let zero = vec![0.0; model.k()];
    let g1 = MvnSampler::new(zero, &model.lambda1).unwrap();
    let g2 = MvnSampler::new(model.delta.clone(), &model.lambda2).unwrap();
    let root = RngStream::new(5);
    let reps = 10_000;
    let rejections = (0..reps)
        .filter(|&r| {
            let mut rng = root.substream(r);
            let a: Vec<Vec<f64>> = (0..n2).map(|_| g1.sample(&mut rng)).collect();
            let b: Vec<Vec<f64>> = (0..n2).map(|_| g2.sample(&mut rng)).collect();
            hotelling_test(&a, &b, 0.05).unwrap().reject
        })
        .count();
    let direct = rejections as f64 / reps as f64;
    assert!((theory.power - direct).abs() <= 0.03, "theory {} vs direct {direct}", theory.power);
}

#[test]
fn null_power_is_alpha() {
    let req = PowerRequest {
        model: case2_model(0.0),
        n2: 50,
        kappa: 1.0,
        alpha: 0.05,
        draws: 100_000,
        seed: 6,
        mode: PowerMode::Exact,
    };
    let r = algorithm1_power(&req).unwrap();
    assert!((r.power - 0.05).abs() <= 0.01, "{r:?}");
    assert!(r.power - 3.0 * r.se >= -0.01 && r.power + 3.0 * r.se <= 1.01);
    assert!((r.se - (r.power * (1.0 - r.power) / r.draws as f64).sqrt()).abs() < 1e-15);
}

#[test]
fn power_is_even_in_eta() {
    let (prep, power_rng) = seed_streams(7);
    let plus = prepare_model(&prep, &case2_model(0.7)).unwrap();
    let minus = prepare_model(&prep, &case2_model(-0.7)).unwrap();
    for n2 in [30, 80] {
        let a = plus.power(&power_rng, 1.0, n2, 0.05, 20_000, PowerMode::Exact).unwrap();
        let b = minus.power(&power_rng, 1.0, n2, 0.05, 20_000, PowerMode::Exact).unwrap();
        assert_eq!(a.power, b.power);
    }
}

#[test]
fn power_is_monotone_in_n2_and_eta() {
    let (prep, power_rng) = seed_streams(8);
    let model = prepare_model(&prep, &case2_model(0.5)).unwrap();
    let mut last = 0.0;
    for n2 in (20..=400).step_by(20) {
        let p = model.power(&power_rng, 1.0, n2, 0.05, 20_000, PowerMode::Exact).unwrap().power;
        assert!(p >= last, "n2 = {n2}: {p} < {last}");
        last = p;
    }
    let mut last = None::<sparsepower::pass::PowerResult>;
    for eta in [0.25, 0.5, 1.0] {
        let m = prepare_model(&prep, &case2_model(eta)).unwrap();
        let r = m.power(&power_rng, 1.0, 50, 0.05, 50_000, PowerMode::Exact).unwrap();
        if let Some(prev) = &last {
            if prev.power < 0.95 {
                assert!(r.power - prev.power > 3.0 * (r.se + prev.se), "{} vs {}", r.power, prev.power);
            }
        }
        last = Some(r);
    }
}

#[test]
fn asymptotic_mode_basics() {
    let l1 = Matrix::from_rows(&[vec![1.0, 0.2], vec![0.2, 0.5]]).unwrap();
    let l2 = Matrix::from_rows(&[vec![1.5, 0.0], vec![0.0, 0.7]]).unwrap();
    let rng = RngStream::new(9);
    let null = asymptotic_power(&rng, &[0.0, 0.0], &l1, &l2, 1.0, 0.05, 200_000).unwrap();
    assert!((null.power - 0.05).abs() <= 3.0 * null.se + 1e-3);
    let big = asymptotic_power(&rng, &[20.0, 20.0], &l1, &l2, 2.0, 0.05, 10_000).unwrap();
    assert_eq!(big.power, 1.0);
}

#[test]
fn exact_power_approaches_the_asymptotic_limit() {
    // fixed small η at n = 10⁴; exact should not fall below the limit
    let mut spec = case3_model();
    spec.meandiff = MeanDiff::cubic(0.2);
    let (prep, power_rng) = seed_streams(10);
    let model = prepare_model(&prep, &spec).unwrap();
    let exact = model.power(&power_rng, 1.0, 5000, 0.05, 100_000, PowerMode::Exact).unwrap();
    let asym = model.power(&power_rng, 1.0, 5000, 0.05, 100_000, PowerMode::Asymptotic).unwrap();
    assert!(exact.power >= asym.power - 0.02, "{} vs {}", exact.power, asym.power);
    assert!((exact.power - asym.power).abs() < 0.03);
    // consistency along doubling
    let mut n2 = 50;
    let mut last = 0.0;
    while n2 <= 102_400 {
        let p = model.power(&power_rng, 1.0, n2, 0.05, 20_000, PowerMode::Exact).unwrap().power;
        assert!(p >= last);
        last = p;
        n2 *= 2;
    }
    assert!(last > 0.99, "{last}");
}

#[test]
fn samplesize_brackets_the_target() {
    let req = SampleSizeRequest {
        model: case2_model(1.0),
        target: 0.8,
        kappa: 1.0,
        alpha: 0.05,
        draws: 20_000,
        seed: 11,
        mode: PowerMode::Exact,
        n2_max: 10_000,
    };
    let r = algorithm2_samplesize(&req).unwrap();
    assert!(r.power > 0.8);
    assert!(r.power_below.unwrap() <= 0.8);
    assert_eq!(r.total, r.n1 + r.n2);
    assert!(r.curve.windows(2).all(|w| w[0].0 < w[1].0));

    let mut bad = req.clone();
    bad.target = 0.04;
    assert!(algorithm2_samplesize(&bad).unwrap_err().is_input_error());
}

#[test]
fn samplesize_floor_and_unreachable() {
    let (prep, power_rng) = seed_streams(12);
    let huge = prepare_model(&prep, &case2_model(50.0)).unwrap();
    let r = search_samplesize(&huge, &power_rng, 0.9, 1.0, 0.05, 5000, PowerMode::Exact, 1000).unwrap();
    assert_eq!(r.n2, 3);
    assert!(r.power_below.is_none());

    let tiny = prepare_model(&prep, &case2_model(0.01)).unwrap();
    let err = search_samplesize(&tiny, &power_rng, 0.9, 1.0, 0.05, 5000, PowerMode::Exact, 40).unwrap_err();
    assert!(matches!(err, sparsepower::Error::Unreachable { .. }), "{err:?}");
}

#[test]
fn unequal_allocation_rounds_up() {
    let (prep, power_rng) = seed_streams(13);
    let model = prepare_model(&prep, &case2_model(1.0)).unwrap();
    let r = model.power(&power_rng, 1.5, 31, 0.05, 5000, PowerMode::Exact).unwrap();
    assert_eq!((r.n1, r.n2), (47, 31));
    let spec = model.spec(1.5, 31).unwrap();
    let direct = power_from_spec(&power_rng, &spec, 0.05, 5000).unwrap();
    assert_eq!(direct.power, r.power);
}

#[test]
fn requests_round_trip_through_json() {
    let req = PowerRequest {
        model: case3_model(),
        n2: 200,
        kappa: 1.0,
        alpha: 0.05,
        draws: 1000,
        seed: 1,
        mode: PowerMode::Asymptotic,
    };
    let text = serde_json::to_string(&req).unwrap();
    let back: PowerRequest = serde_json::from_str(&text).unwrap();
    assert_eq!(req, back);
    let with_extra = text.replacen('{', "{\"bogus\":1,", 1);
    assert!(serde_json::from_str::<PowerRequest>(&with_extra).is_err());
}
