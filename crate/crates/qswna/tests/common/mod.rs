#![allow(dead_code)]

use qswna::{ModelParams, MotilitySpec, ProductionSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A valid positive parameter set; the uniform mode is not guaranteed stable.
pub fn random_params(r: &mut ChaCha8Rng) -> ModelParams {
    let d_star = r.random_range(0.5..2.0);
    ModelParams {
        d_c: r.random_range(0.5..2.0),
        beta: r.random_range(0.5..2.0),
        alpha0: r.random_range(0.2..1.0),
        lambda: r.random_range(0.5..2.0),
        epsilon: r.random_range(1e-3..1e-2),
        l: r.random_range(3.0..10.0),
        rho_star: r.random_range(0.2..1.0),
        motility: MotilitySpec {
            d_star,
            d_inf: r.random_range(0.1..0.9) * d_star,
            d_prime_star: r.random_range(-3.0..-0.1),
            u_star_ref: None,
        },
        production: ProductionSpec { a: r.random_range(0.2..1.0), v: r.random_range(0.0..5.0), k: r.random_range(0.2..2.0) },
    }
}

/// Random draw with g'(c*) below the uniform-mode threshold.
pub fn random_stable_params(r: &mut ChaCha8Rng) -> ModelParams {
    loop {
        let p = random_params(r);
        let st = p.steady().unwrap();
        if p.uniform_mode_stable(&st) {
            return p;
        }
    }
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Worst entrywise mismatch between the recursions and the coefficient-matching oracle
/// for q, W, W~ and s over `draws` random parameter sets, compared on j <= 4, l <= 10.
/// Relative error, or absolute where the oracle entry is zero.
pub fn series_oracle_mismatch(draws: usize, seed: u64) -> f64 {
    use qswna::dispersion::critical_dprime;
    use qswna::series::*;
    let (j_max, l_max) = (4, 18);
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let p = random_params(&mut r);
        let st = p.steady().unwrap();
        let k = p.k1();
        let d0 = critical_dprime(&p, &st, k).unwrap();
        let ctx = SeriesContext::new(&p, &st, k, d0, 64);
        let c22 = r.random_range(-1.0..1.0);
        let q = q_table(&ctx, j_max, l_max).unwrap();
        let tables = [
            (SeriesKind::Q, q.clone()),
            (SeriesKind::W, w_table(&ctx, j_max, l_max, 1).unwrap()),
            (SeriesKind::Wtilde, w_table(&ctx, j_max, l_max, 2).unwrap()),
            (SeriesKind::S, s_table(&ctx, &q, c22, j_max, l_max).unwrap()),
        ];
        for (kind, t) in tables {
            let o = oracle_series(&AmplitudeOdeSpec::for_kind(kind, c22), &ctx, j_max, l_max).unwrap();
            for j in 0..=4 {
                for l in 0..=10 {
                    let (a, b) = (t.get(j, l).unwrap(), o.get(j, l).unwrap());
                    let e = if a == 0.0 || b == 0.0 { a.abs().max(b.abs()) * 1e4 } else { (a - b).abs() / b.abs() };
                    worst = worst.max(e);
                }
            }
        }
    }
    worst
}
