//! HSIC and Sinkhorn against independently coded oracles.

use dvga_core::diffcore::{Graph, Tensor};
use dvga_core::objectives::hsic::{hsic_from_grams_permuted, rbf_gram};
use dvga_core::objectives::{hsic_unbiased, hsic_value, indep_loss, sinkhorn_value, Bandwidth, SinkhornConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

fn rbf(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// The unbiased estimator as a U-statistic: the average, over ordered
/// 4-tuples of distinct indices, of `k_ij l_ij + k_ij l_qr - 2 k_ij l_iq`.
fn hsic_quadruple_loop(u: &Tensor, v: &Tensor, su: f64, sv: f64) -> f64 {
    let n = u.rows();
    let k = |i: usize, j: usize| rbf(u.row_slice(i), u.row_slice(j), su);
    let l = |i: usize, j: usize| rbf(v.row_slice(i), v.row_slice(j), sv);
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        for j in 0..n {
            for q in 0..n {
                for r in 0..n {
                    let idx = [i, j, q, r];
                    if (0..4).any(|a| (a + 1..4).any(|b| idx[a] == idx[b])) {
                        continue;
                    }
                    total += k(i, j) * (l(i, j) + l(q, r) - 2.0 * l(i, q));
                    count += 1;
                }
            }
        }
    }
    total / count as f64
}

fn tape_hsic(u: &Tensor, v: &Tensor, bw: Bandwidth) -> f64 {
    let mut g = Graph::new();
    let (a, b) = (g.constant(u.clone()), g.constant(v.clone()));
    let h = hsic_unbiased(&mut g, a, b, bw).unwrap();
    g.value(h).item()
}

#[test]
fn hsic_matches_quadruple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let n = rng.random_range(6..=10);
        let (du, dv) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let u = normal(&mut rng, n, du);
        let v = normal(&mut rng, n, dv);
        let (su, sv) = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
        let oracle = hsic_quadruple_loop(&u, &v, su, sv);
        // The fixed bandwidth is shared, so compare with one σ per call.
        let same = hsic_quadruple_loop(&u, &v, su, su);
        assert!((tape_hsic(&u, &v, Bandwidth::Fixed(su)) - same).abs() < 1e-10);
        let grams = hsic_from_grams_permuted(&rbf_gram(&u, su), &rbf_gram(&v, sv), None).unwrap();
        assert!((grams - oracle).abs() < 1e-10, "{grams} vs {oracle}");
    }
}

#[test]
fn median_bandwidth_matches_quadruple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let u = normal(&mut rng, 6, 2);
    let v = normal(&mut rng, 6, 2);
    let med = |x: &Tensor| {
        let mut d = Vec::new();
        for i in 0..x.rows() {
            for j in i + 1..x.rows() {
                let d2: f64 = x.row_slice(i).iter().zip(x.row_slice(j)).map(|(a, b)| (a - b).powi(2)).sum();
                d.push(d2.sqrt());
            }
        }
        d.sort_by(f64::total_cmp);
        // 15 pairs for six points.
        d[d.len() / 2]
    };
    let oracle = hsic_quadruple_loop(&u, &v, med(&u), med(&v));
    assert!((hsic_value(&u, &v, Bandwidth::Median).unwrap() - oracle).abs() < 1e-10);
    assert!((tape_hsic(&u, &v, Bandwidth::Median) - oracle).abs() < 1e-10);
}

/// HSIC of `(u, v)` and the given quantile of its null distribution from
/// `perms` random permutations of `v`.
fn with_null(u: &Tensor, v: &Tensor, perms: usize, q: f64, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let sigma_u = Bandwidth::Median.resolve(u);
    let sigma_v = Bandwidth::Median.resolve(v);
    let (k, l) = (rbf_gram(u, sigma_u), rbf_gram(v, sigma_v));
    let observed = hsic_from_grams_permuted(&k, &l, None).unwrap();
    let mut perm: Vec<usize> = (0..u.rows()).collect();
    let mut null: Vec<f64> = (0..perms)
        .map(|_| {
            perm.shuffle(rng);
            hsic_from_grams_permuted(&k, &l, Some(&perm)).unwrap()
        })
        .collect();
    null.sort_by(f64::total_cmp);
    (observed, null[((perms as f64 * q).ceil() as usize).min(perms) - 1])
}

#[test]
fn independent_samples_fall_inside_the_permutation_null() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 512;
    let mut inside = 0;
    for _ in 0..10 {
        let u = normal(&mut rng, n, 2);
        let v = normal(&mut rng, n, 2);
        let (h, q95) = with_null(&u, &v, 200, 0.95, &mut rng);
        assert!(h.abs() < 4.0 / n as f64, "{h}");
        inside += usize::from(h.abs() < q95);
    }
    assert!(inside >= 8, "{inside}/10");
}

#[test]
fn identical_samples_exceed_the_permutation_null() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let u = normal(&mut rng, 64, 2);
    let (h, q99) = with_null(&u, &u, 200, 0.99, &mut rng);
    assert!(h > q99, "{h} <= {q99}");
}

#[test]
fn pairwise_independence_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let n = 256;
    let zs: Vec<Tensor> = (0..4).map(|_| normal(&mut rng, n, 2)).collect();
    // Each independent pair is inside its own permutation null.
    let mut total = 0.0;
    for i in 0..4 {
        for j in i + 1..4 {
            let (h, q99) = with_null(&zs[i], &zs[j], 200, 0.99, &mut rng);
            assert!(h < q99, "pair ({i},{j}): {h} vs {q99}");
            total += hsic_value(&zs[i], &zs[j], Bandwidth::Median).unwrap();
        }
    }
    let mut g = Graph::new();
    let vars: Vec<_> = zs.iter().map(|z| g.constant(z.clone())).collect();
    let loss = indep_loss(&mut g, &vars, Bandwidth::Median).unwrap();
    assert!((g.value(loss).item() - total).abs() < 1e-12);

    // Tying z_c to z_y makes that pair dominate.
    let tied = [zs[0].clone(), zs[1].clone(), zs[1].clone(), zs[3].clone()];
    let cy = hsic_value(&tied[1], &tied[2], Bandwidth::Median).unwrap();
    let mut rest = 0.0;
    for (i, j) in [(0, 1), (0, 2), (0, 3), (1, 3), (2, 3)] {
        rest += hsic_value(&tied[i], &tied[j], Bandwidth::Median).unwrap().abs();
    }
    let mut g = Graph::new();
    let vars: Vec<_> = tied.iter().map(|z| g.constant(z.clone())).collect();
    let loss = indep_loss(&mut g, &vars, Bandwidth::Median).unwrap();
    assert!(g.value(loss).item() > 0.0);
    assert!(cy > 10.0 * rest, "{cy} vs {rest}");
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Exact transport cost between equal-size uniform clouds: for uniform
/// marginals of equal size an optimal plan is a permutation.
fn brute_force_ot(a: &Tensor, b: &Tensor) -> f64 {
    let n = a.rows();
    let dist = |i: usize, j: usize| {
        a.row_slice(i).iter().zip(b.row_slice(j)).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    };
    permutations(n)
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| dist(i, j)).sum::<f64>() / n as f64)
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn sinkhorn_is_close_to_exact_transport() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..50 {
        let n = rng.random_range(2..=8);
        let d = rng.random_range(1..=4);
        let a = normal(&mut rng, n, d);
        let b = normal(&mut rng, n, d);
        let max_c = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| a.row_slice(i).iter().zip(b.row_slice(j)).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let exact = brute_force_ot(&a, &b);
        let approx = sinkhorn_value(&a, &b, &SinkhornConfig::fixed(0.01 * max_c, 500)).unwrap();
        assert!((approx - exact).abs() <= 0.05 * exact, "n={n} d={d}: {approx} vs {exact}");
    }
}
