use super::*;
use alloc::vec;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn entropy_constants() {
    let h1 = gaussian_entropy(&Covariance::isotropic(1, 1.0).unwrap()).unwrap();
    assert!((h1 - 1.4189).abs() < 1e-4);
    let h4 = gaussian_entropy(&Covariance::isotropic(1, 4.0).unwrap()).unwrap();
    assert!((h4 - 2.1121).abs() < 1e-4);
    assert!((h4 - 0.5 * ((2.0 * core::f64::consts::PI * core::f64::consts::E).ln() + 4f64.ln())).abs() < 1e-12);
}

#[test]
fn block_diagonal_entropy_is_additive() {
    let cov = Covariance::new(3, vec![2.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 3.0]).unwrap();
    let a = gaussian_entropy(&Covariance::new(2, vec![2.0, 0.5, 0.5, 1.0]).unwrap()).unwrap();
    let b = gaussian_entropy(&Covariance::isotropic(1, 3.0).unwrap()).unwrap();
    assert!((gaussian_entropy(&cov).unwrap() - (a + b)).abs() < 1e-12);
}

#[test]
fn rejects_bad_covariances() {
    assert!(matches!(Covariance::new(2, vec![1.0, 0.5, 0.4, 1.0]), Err(Error::NotPositiveDefinite(_))));
    assert!(matches!(Covariance::new(2, vec![1.0, 2.0, 2.0, 1.0]), Err(Error::NotPositiveDefinite(_))));
    assert!(Covariance::new(2, vec![1.0; 3]).is_err());
}

fn pair(var: f64, rho: f64) -> GaussianBlockModel {
    let c = rho * var;
    GaussianBlockModel::new(Covariance::new(2, vec![var, c, c, var]).unwrap(), vec![0.0; 2], vec![0], vec![1]).unwrap()
}

#[test]
fn correlated_pair_example() {
    let m = pair(4.0, 0.8);
    let mi = m.mutual_information(&[0], &[1]).unwrap();
    assert!((mi - 0.5108).abs() < 1e-4);
    assert!((mi + 0.5 * (1.0f64 - 0.64).ln()).abs() < 1e-12);
    assert!((m.entropy(&[0]).unwrap() - 2.1121).abs() < 1e-4);
    assert!((gaussian_irr(&m, &[0], &[1]).unwrap() - 0.2418).abs() < 1e-4);
}

#[test]
fn independent_blocks_have_zero_irr() {
    let m = GaussianBlockModel::equicorrelated(3, 4, 2.0, 0.5, 0.3, 0.0).unwrap();
    let g = gaussian_irr(&m, &m.foreground, &m.background).unwrap();
    assert!(g.abs() <= 1e-9, "{g}");
}

#[test]
fn exact_copy_is_singular() {
    // y = 2x
    let m = GaussianBlockModel::new(Covariance::new(2, vec![1.0, 2.0, 2.0, 4.0 + 1e-15]).unwrap_or_else(|_| {
        Covariance::new(2, vec![1.0, 2.0, 2.0, 4.0 * (1.0 + 1e-14)]).unwrap()
    }), vec![0.0; 2], vec![0], vec![1]);
    match m {
        Ok(m) => assert_eq!(gaussian_irr(&m, &[0], &[1]), Err(Error::SingularConditional)),
        Err(e) => assert!(matches!(e, Error::NotPositiveDefinite(_))),
    }
}

#[test]
fn irr_argument_errors() {
    let m = pair(4.0, 0.5);
    assert!(gaussian_irr(&m, &[], &[1]).is_err());
    assert!(gaussian_irr(&m, &[0], &[0]).is_err());
    assert!(gaussian_irr(&pair(0.01, 0.5), &[0], &[1]).is_err());
}

/// Monte-Carlo entropies from the log-density of each draw, written out
/// for scalar Gaussians independently of the matrix code.
fn monte_carlo_irr(var_x: f64, var_y: f64, cov: f64, draws: usize, seed: u64) -> f64 {
    let mut rng = crate::rng::seeded(seed, 0);
    let two_pi = 2.0 * core::f64::consts::PI;
    let (sx, sy) = (var_x.sqrt(), var_y.sqrt());
    let rho = cov / (sx * sy);
    let cond_var = var_x * (1.0 - rho * rho);
    let (mut hx, mut hxy) = (0.0, 0.0);
    for _ in 0..draws {
        let (a, b): (f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
        let y = sy * a;
        let x = sx * (rho * a + (1.0 - rho * rho).sqrt() * b);
        hx -= -0.5 * (two_pi * var_x).ln() - x * x / (2.0 * var_x);
        let mu = cov / var_y * y;
        hxy -= -0.5 * (two_pi * cond_var).ln() - (x - mu).powi(2) / (2.0 * cond_var);
    }
    1.0 - (hxy / draws as f64) / (hx / draws as f64)
}

#[test]
fn irr_matches_monte_carlo_on_random_pairs() {
    let mut rng = crate::rng::seeded(11, 1);
    for k in 0..10 {
        let vx: f64 = rng.random_range(1.0..4.0);
        let vy: f64 = rng.random_range(1.0..4.0);
        let rho: f64 = rng.random_range(0.3..0.9) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let c = rho * (vx * vy).sqrt();
        let m = GaussianBlockModel::new(Covariance::new(2, vec![vx, c, c, vy]).unwrap(), vec![0.0; 2], vec![0], vec![1]).unwrap();
        let exact = gaussian_irr(&m, &[0], &[1]).unwrap();
        let mc = monte_carlo_irr(vx, vy, c, 100_000, k);
        assert!((mc - exact).abs() <= 0.05 * exact, "model {k}: {mc} vs {exact}");
    }
}

#[test]
fn statements_hold_on_the_constructed_model() {
    let m = GaussianBlockModel::equicorrelated(4, 4, 1.0, 0.5, 0.5, 0.0).unwrap();
    let r = verify_statements(&m, &StatementTolerances::default()).unwrap();
    assert_eq!(r.count(Statement::WithinObject), 14);
    assert_eq!(r.count(Statement::AcrossBoundary), 64);
    assert!(r.all_passed());
    assert!(r.checks.iter().filter(|c| c.statement == Statement::WithinObject).all(|c| c.mutual_information > 0.0));
    assert!(r.checks.iter().filter(|c| c.statement == Statement::AcrossBoundary).all(|c| c.mutual_information.abs() <= 1e-9));
}

#[test]
fn single_pixel_object_skips_within_checks() {
    let m = GaussianBlockModel::equicorrelated(1, 3, 1.0, 0.0, 0.4, 0.0).unwrap();
    let r = verify_statements(&m, &StatementTolerances::default()).unwrap();
    assert_eq!(r.count(Statement::WithinObject), 0);
    assert_eq!(r.skipped.len(), 1);
    assert!(r.all_passed());
}

#[test]
fn cross_correlation_is_flagged() {
    let m = GaussianBlockModel::equicorrelated(3, 3, 1.0, 0.5, 0.5, 0.2).unwrap();
    let r = verify_statements(&m, &StatementTolerances::default()).unwrap();
    assert!(r.checks.iter().any(|c| c.statement == Statement::AcrossBoundary && !c.passed));
}

fn lattice_trial(seed: u64) -> (LatticeFlowSamples, BruteForce) {
    let object = LatticeFlowSamples::random_object(9, 3, seed);
    let s = LatticeFlowSamples::generate(3, 3, object, 2000, 10.0, 0.05, seed).unwrap();
    let b = brute_force_object(&s, 1e-6).unwrap();
    (s, b)
}

#[test]
fn brute_force_finds_the_object() {
    let mut hits = 0;
    for seed in 0..20 {
        let (s, b) = lattice_trial(seed);
        let truth = s.object_bits();
        assert_eq!(b.table.len(), 512);
        assert!((b.loss(0) - 1.0).abs() <= 1e-6 && (b.loss(511) - 1.0).abs() <= 1e-6);
        hits += b.recovers(truth) as usize;
        // singletons of the object score strictly worse than the object
        for i in 0..9 {
            if truth >> i & 1 == 1 {
                assert!(b.loss(1 << i) > b.loss(truth));
            }
        }
    }
    assert!(hits >= 19, "{hits}/20");
}

#[test]
fn complement_ties_exactly() {
    let (_, b) = lattice_trial(3);
    for r in &b.table {
        let c = &b.table[b.complement(r.mask) as usize];
        assert_eq!(r.total, c.total);
        assert_eq!((r.term_in, r.term_out), (c.term_out, c.term_in));
    }
}

#[test]
fn lattice_validation() {
    assert!(LatticeFlowSamples::new(5, 4, vec![0.0; 40 * 400], vec![false; 20]).is_err());
    assert!(LatticeFlowSamples::new(2, 2, vec![0.0; 8 * 39], vec![false; 4]).is_err());
    assert!(LatticeFlowSamples::new(2, 2, vec![0.0; 8 * 40], vec![false; 4]).is_ok());
    let s = LatticeFlowSamples::new(2, 2, vec![0.0; 8 * 40], vec![false; 4]).unwrap();
    assert!(matches!(brute_force_object(&s, 1e-6), Err(Error::NotPositiveDefinite(_))));
}

fn spd(d: usize) -> impl Strategy<Value = Covariance> {
    proptest::collection::vec(-1.0f64..1.0, d * d).prop_map(move |a| {
        let mut c = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                c[i * d + j] = (0..d).map(|k| a[i * d + k] * a[j * d + k]).sum::<f64>() * 4.0 + if i == j { 2.0 } else { 0.0 };
            }
        }
        Covariance::new(d, c).unwrap()
    })
}

proptest! {
    #[test]
    fn mutual_information_is_symmetric(cov in spd(5), split in 1usize..5) {
        let m = GaussianBlockModel::new(cov, vec![0.0; 5], (0..split).collect(), (split..5).collect()).unwrap();
        let (x, y) = (&m.foreground, &m.background);
        let a = gaussian_irr(&m, x, y).unwrap() * m.entropy(x).unwrap();
        let b = gaussian_irr(&m, y, x).unwrap() * m.entropy(y).unwrap();
        prop_assert!((a - b).abs() <= 1e-9);
    }

    #[test]
    fn conditioning_on_more_never_loses_information(cov in spd(6)) {
        let m = GaussianBlockModel::new(cov, vec![0.0; 6], vec![0, 1], (2..6).collect()).unwrap();
        let mut prev = 0.0;
        for k in 1..=4 {
            let y: Vec<usize> = (2..2 + k).collect();
            let mi = m.mutual_information(&[0, 1], &y).unwrap();
            prop_assert!(mi >= prev - 1e-9);
            prev = mi;
        }
    }

    #[test]
    fn irr_lies_in_unit_interval(cov in spd(4)) {
        let m = GaussianBlockModel::new(cov, vec![0.0; 4], vec![0, 1], vec![2, 3]).unwrap();
        let g = gaussian_irr(&m, &[0, 1], &[2, 3]).unwrap();
        if m.conditional_entropy(&[0, 1], &[2, 3]).unwrap() >= 0.0 {
            prop_assert!((0.0..=1.0).contains(&g));
        }
        prop_assert!(g >= 0.0);
    }

    #[test]
    fn object_is_never_beaten(seed in 0u64..1000) {
        let object = LatticeFlowSamples::random_object(4, 2, seed);
        let s = LatticeFlowSamples::generate(2, 2, object, 400, 10.0, 0.05, seed).unwrap();
        let b = brute_force_object(&s, 1e-6).unwrap();
        let truth = b.loss(s.object_bits());
        prop_assert!(b.table.iter().all(|r| r.total >= truth));
    }
}
