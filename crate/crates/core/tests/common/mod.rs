//! Reference computations shared by the integration tests and the acceptance
//! suite. Reference values never come from the library's enumeration or
//! estimation code; the library appears here only as the code under test.

#![allow(dead_code)]

use std::f64::consts::PI;

/// Six-neighbour pairs (s, t), s < t, of a full nx × ny × nz grid with x
/// varying fastest.
pub fn grid_edges(nx: usize, ny: usize, nz: usize) -> Vec<(usize, usize)> {
    let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
    let mut edges = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let s = idx(x, y, z);
                if x + 1 < nx {
                    edges.push((s, idx(x + 1, y, z)));
                }
                if y + 1 < ny {
                    edges.push((s, idx(x, y + 1, z)));
                }
                if z + 1 < nz {
                    edges.push((s, idx(x, y, z + 1)));
                }
            }
        }
    }
    edges
}

/// Exact law of θ with weight exp(β Σ_edges θ_sθ_t + Σ_s field_s θ_s).
pub struct BruteForce {
    pub probs: Vec<f64>,
    pub marginals: Vec<f64>,
    pub mean_h: [f64; 2],
    pub cov_h: [[f64; 2]; 2],
}

pub fn config_h(edges: &[(usize, usize)], n: usize, c: usize) -> [f64; 2] {
    let bit = |s: usize| (c >> s) & 1;
    let pairs = edges.iter().filter(|&&(s, t)| bit(s) == 1 && bit(t) == 1).count();
    let sites = (0..n).filter(|&s| bit(s) == 1).count();
    [pairs as f64, sites as f64]
}

pub fn brute_force(edges: &[(usize, usize)], n: usize, beta: f64, field: &[f64]) -> BruteForce {
    let total = 1usize << n;
    let log_w: Vec<f64> = (0..total)
        .map(|c| {
            let h = config_h(edges, n, c);
            beta * h[0] + (0..n).filter(|&s| (c >> s) & 1 == 1).map(|s| field[s]).sum::<f64>()
        })
        .collect();
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    let probs: Vec<f64> = w.iter().map(|v| v / z).collect();
    let mut marginals = vec![0.0; n];
    let mut m1 = [0.0; 2];
    let mut m2 = [[0.0; 2]; 2];
    for (c, &p) in probs.iter().enumerate() {
        for (s, m) in marginals.iter_mut().enumerate() {
            if (c >> s) & 1 == 1 {
                *m += p;
            }
        }
        let h = config_h(edges, n, c);
        for i in 0..2 {
            m1[i] += p * h[i];
            for j in 0..2 {
                m2[i][j] += p * h[i] * h[j];
            }
        }
    }
    let mut cov = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            cov[i][j] = m2[i][j] - m1[i] * m1[j];
        }
    }
    BruteForce {
        probs,
        marginals,
        mean_h: m1,
        cov_h: cov,
    }
}

/// Mean and batch-means standard error of a correlated series.
pub fn batch_means(series: &[f64], batches: usize) -> (f64, f64) {
    let n = series.len();
    let size = n / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| series[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let mean = series.iter().sum::<f64>() / n as f64;
    let bm = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - bm).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (mean, (var / batches as f64).sqrt())
}

pub fn gauss_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

/// EM for x ~ (1 - π)N(0, 1) + πN(μ, σ²) with independent states. Returns
/// (π, μ, σ², P(θ_s = 0 | x_s)).
pub fn independent_em(x: &[f64], mut pi: f64, mut mu: f64, mut var: f64, iters: usize) -> (f64, f64, f64, Vec<f64>) {
    let mut r = vec![0.0; x.len()];
    for _ in 0..iters {
        for (ri, &xi) in r.iter_mut().zip(x) {
            let a = pi * gauss_pdf(xi, mu, var);
            let b = (1.0 - pi) * gauss_pdf(xi, 0.0, 1.0);
            *ri = a / (a + b);
        }
        let sr: f64 = r.iter().sum();
        pi = sr / x.len() as f64;
        mu = r.iter().zip(x).map(|(r, x)| r * x).sum::<f64>() / sr;
        var = r.iter().zip(x).map(|(r, x)| r * (x - mu).powi(2)).sum::<f64>() / sr;
    }
    let post_null = x
        .iter()
        .map(|&xi| {
            let a = pi * gauss_pdf(xi, mu, var);
            let b = (1.0 - pi) * gauss_pdf(xi, 0.0, 1.0);
            b / (a + b)
        })
        .collect();
    (pi, mu, var, post_null)
}

/// Compare Gibbs chains on a 2×2×3 lattice with brute-force enumeration:
/// voxel marginals, E[H] and Var[H] of the prior and of a posterior-type
/// field, each within `k` batch-means standard errors. Returns one message
/// per failed comparison.
pub fn gibbs_vs_enumeration(sweeps: usize, seed: u64, k: f64) -> Vec<String> {
    use hmrf_core::emission::MixtureParams;
    use hmrf_core::ising::{posterior_site_field, GibbsChain, IsingParams, SweepOrder};
    use hmrf_core::lattice::{Dims, Lattice3D, StatField};

    let (nx, ny, nz) = (2, 2, 3);
    let n = nx * ny * nz;
    let lattice = Lattice3D::full(Dims::new(nx, ny, nz)).unwrap();
    let edges = grid_edges(nx, ny, nz);
    let phi = IsingParams::new(0.6, -1.2).unwrap();
    let x: Vec<f64> = (0..n).map(|s| -1.5 + 0.35 * s as f64).collect();
    let mixture = MixtureParams::single(1.5, 1.3).unwrap();
    let site = posterior_site_field(&phi, &mixture, &StatField::new(x).unwrap()).unwrap();

    let mut failures = Vec::new();
    let cases = [
        ("prior", vec![phi.h; n]),
        ("posterior", site.values().to_vec()),
    ];
    for (case, (name, field)) in cases.iter().enumerate() {
        let exact = brute_force(&edges, n, phi.beta, field);
        let chain_seed = seed.wrapping_add(case as u64);
        let mut chain = if *name == "prior" {
            GibbsChain::prior(&lattice, &phi, chain_seed, SweepOrder::Raster)
        } else {
            let f = hmrf_core::ising::FieldPerSite::new(field.clone()).unwrap();
            GibbsChain::with_site_field(&lattice, phi.beta, &f, chain_seed, SweepOrder::Raster).unwrap()
        };
        let mut sites: Vec<Vec<f64>> = vec![Vec::with_capacity(sweeps); n];
        let mut h: [Vec<f64>; 2] = [Vec::with_capacity(sweeps), Vec::with_capacity(sweeps)];
        chain.run(1000, sweeps, |state| {
            for (s, v) in state.iter().enumerate() {
                sites[s].push(*v as f64);
            }
            let c = state.iter().enumerate().fold(0usize, |c, (s, &v)| c | ((v as usize) << s));
            let hs = config_h(&edges, n, c);
            h[0].push(hs[0]);
            h[1].push(hs[1]);
        });
        let mut check = |what: String, series: &[f64], truth: f64| {
            let (mean, se) = batch_means(series, 100);
            if (mean - truth).abs() > k * se.max(1e-12) {
                failures.push(format!("{name} {what}: chain {mean:.5} ± {se:.5}, exact {truth:.5}"));
            }
        };
        for s in 0..n {
            check(format!("P(theta_{s} = 1)"), &sites[s], exact.marginals[s]);
        }
        for i in 0..2 {
            check(format!("E[H_{i}]"), &h[i], exact.mean_h[i]);
        }
        for (i, j) in [(0, 0), (0, 1), (1, 1)] {
            let prod: Vec<f64> = h[i]
                .iter()
                .zip(&h[j])
                .map(|(a, b)| (a - exact.mean_h[i]) * (b - exact.mean_h[j]))
                .collect();
            check(format!("Cov[H_{i}, H_{j}]"), &prod, exact.cov_h[i][j]);
        }
    }
    failures
}

/// Log-odds identities checked against the exact joint law on a 2×2×3
/// lattice: the pairwise conditional log odds ratio is β for neighbours and
/// 0 otherwise, and log odds(n) + log odds(m - n) = mβ + 2h. Returns the
/// largest absolute deviation.
pub fn log_odds_deviation(beta: f64, h: f64) -> f64 {
    use hmrf_core::ising::{enumerate_exact, IsingParams};
    use hmrf_core::lattice::{Dims, Lattice3D};

    let (nx, ny, nz) = (2, 2, 3);
    let n = nx * ny * nz;
    let lattice = Lattice3D::full(Dims::new(nx, ny, nz)).unwrap();
    let edges = grid_edges(nx, ny, nz);
    let d = enumerate_exact(&lattice, &IsingParams::new(beta, h).unwrap(), None).unwrap();
    let p = |c: usize| d.probs[c];
    let mut worst: f64 = 0.0;
    // pairwise odds ratios for every pair of voxels, rest fixed to a pattern
    for rest in [0usize, 0b1010_0101_1010, 0b1111_1111_1111, 0b0110_1001_0011] {
        for s in 0..n {
            for t in s + 1..n {
                let base = rest & !(1 << s) & !(1 << t);
                let (c00, c10, c01, c11) = (base, base | 1 << s, base | 1 << t, base | 1 << s | 1 << t);
                let lor = (p(c11) / p(c10) * p(c00) / p(c01)).ln();
                let expect = if edges.contains(&(s, t)) { beta } else { 0.0 };
                worst = worst.max((lor - expect).abs());
            }
        }
    }
    // odds at neighbour sum n and m - n, from conditionals of the joint law
    let neighbours = |s: usize| -> Vec<usize> {
        edges
            .iter()
            .filter_map(|&(a, b)| if a == s { Some(b) } else if b == s { Some(a) } else { None })
            .collect()
    };
    for s in 0..n {
        let nb = neighbours(s);
        let m = nb.len();
        let odds = |k: usize| {
            let mut c = 0usize;
            for &t in &nb[..k] {
                c |= 1 << t;
            }
            (p(c | 1 << s) / p(c)).ln()
        };
        for k in 0..=m {
            worst = worst.max((odds(k) + odds(m - k) - (m as f64 * beta + 2.0 * h)).abs());
        }
    }
    worst
}

pub fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// A model in plain numbers: (β, h) and the non-null mixture.
#[derive(Clone, Debug)]
pub struct PlainModel {
    pub beta: f64,
    pub h: f64,
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl PlainModel {
    pub fn from_params(p: &hmrf_core::gem::ModelParams) -> Self {
        PlainModel {
            beta: p.ising.beta,
            h: p.ising.h,
            weights: p.mixture.weights().to_vec(),
            means: p.mixture.means().to_vec(),
            variances: p.mixture.variances().to_vec(),
        }
    }

    fn f1(&self, x: f64) -> f64 {
        (0..self.weights.len())
            .map(|l| self.weights[l] * gauss_pdf(x, self.means[l], self.variances[l]))
            .sum()
    }
}

fn log_z(edges: &[(usize, usize)], n: usize, beta: f64, field: &[f64]) -> f64 {
    let lw: Vec<f64> = (0..1usize << n)
        .map(|c| {
            beta * config_h(edges, n, c)[0]
                + (0..n).filter(|&s| (c >> s) & 1 == 1).map(|s| field[s]).sum::<f64>()
        })
        .collect();
    let max = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + lw.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// Q(candidate | current) by brute force, with the inverse-gamma(a = 1,
/// b = 2) variance penalty when the mixture has two or more components.
pub fn oracle_q(edges: &[(usize, usize)], x: &[f64], candidate: &PlainModel, current: &PlainModel) -> f64 {
    let n = x.len();
    let field: Vec<f64> = x
        .iter()
        .map(|&xs| current.h + current.f1(xs).ln() - gauss_pdf(xs, 0.0, 1.0).ln())
        .collect();
    let post = brute_force(edges, n, current.beta, &field);
    let mut q1 = 0.0;
    for (s, &xs) in x.iter().enumerate() {
        let g1 = post.marginals[s];
        q1 += (1.0 - g1) * gauss_pdf(xs, 0.0, 1.0).ln();
        let f1 = current.f1(xs);
        for l in 0..current.weights.len() {
            let w = g1 * current.weights[l] * gauss_pdf(xs, current.means[l], current.variances[l]) / f1;
            if w > 0.0 {
                q1 += w
                    * (candidate.weights[l].ln()
                        + gauss_pdf(xs, candidate.means[l], candidate.variances[l]).ln());
            }
        }
    }
    if candidate.weights.len() >= 2 {
        q1 += candidate.variances.iter().map(|v| -2.0 * v.ln() - 1.0 / v).sum::<f64>();
    }
    let q2 = candidate.beta * post.mean_h[0] + candidate.h * post.mean_h[1]
        - log_z(edges, n, candidate.beta, &vec![candidate.h; n]);
    q1 + q2
}

/// Run `runs` enumeration-backed GEM fits on a 2×2×3 lattice from random
/// valid starting points and return the smallest one-iteration Q gain seen,
/// with Q from [`oracle_q`], plus the number of starts that were redrawn
/// because the fit degenerated (a component variance collapsing to zero).
pub fn exact_gem_min_gain(runs: usize, seed: u64, max_iters: usize) -> (f64, usize) {
    use hmrf_core::emission::MixtureParams;
    use hmrf_core::gem::{run_gem_exact, GemConfig, ModelParams};
    use hmrf_core::ising::{GibbsConfig, IsingParams};
    use hmrf_core::lattice::{Dims, Lattice3D, StatField};
    use rand::{Rng, SeedableRng};

    let lattice = Lattice3D::full(Dims::new(2, 2, 3)).unwrap();
    let edges = grid_edges(2, 2, 3);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let x = vec![0.4, -0.9, 2.1, 3.3, 0.2, 1.7, -1.6, 2.8, 4.0, -0.3, 1.2, 2.5];
    let stats = StatField::new(x.clone()).unwrap();
    let mut worst = f64::INFINITY;
    let mut redrawn = 0;
    let mut run = 0;
    while run < runs {
        let l = 1 + run % 2;
        let mut weights: Vec<f64> = (0..l).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let mixture = MixtureParams::new(
            weights,
            (0..l).map(|_| rng.random_range(-1.0..4.0)).collect(),
            (0..l).map(|_| rng.random_range(0.3..3.0)).collect(),
        )
        .unwrap();
        let ising = IsingParams::new(rng.random_range(-0.5..1.5), rng.random_range(-3.0..1.0)).unwrap();
        let config = GemConfig::new(ModelParams { ising, mixture }, GibbsConfig::new(2, 0, 0), max_iters);
        let Ok(fit) = run_gem_exact(&lattice, &stats, &config) else {
            redrawn += 1;
            assert!(redrawn < 10 * runs, "most random starts degenerate");
            continue;
        };
        run += 1;
        let mut prev = PlainModel::from_params(&config.initial);
        for it in &fit.trace.iterations {
            let next = PlainModel::from_params(&it.params);
            let gain = oracle_q(&edges, &x, &next, &prev) - oracle_q(&edges, &x, &prev, &prev);
            worst = worst.min(gain);
            prev = next;
        }
    }
    (worst, redrawn)
}

/// Largest |LIS - lfdr| with β = 0 on small lattices, where LIS comes from
/// the library's enumeration and lfdr from the closed form.
pub fn beta_zero_oracle_gap() -> f64 {
    use hmrf_core::emission::MixtureParams;
    use hmrf_core::fdr::local_fdr;
    use hmrf_core::ising::{enumerate_exact, posterior_site_field, IsingParams};
    use hmrf_core::lattice::{Dims, Lattice3D, StatField};

    let mut worst: f64 = 0.0;
    for (dims, h, mixture) in [
        (Dims::new(2, 2, 3), -1.5, PlainModel { beta: 0.0, h: 0.0, weights: vec![1.0], means: vec![2.0], variances: vec![1.0] }),
        (
            Dims::new(3, 2, 2),
            -0.4,
            PlainModel { beta: 0.0, h: 0.0, weights: vec![0.4, 0.6], means: vec![-2.0, 2.5], variances: vec![0.8, 1.5] },
        ),
    ] {
        let lattice = Lattice3D::full(dims).unwrap();
        let n = lattice.len();
        let x: Vec<f64> = (0..n).map(|s| -3.0 + 6.0 * s as f64 / (n - 1) as f64).collect();
        let stats = StatField::new(x.clone()).unwrap();
        let phi = IsingParams::new(0.0, h).unwrap();
        let m = MixtureParams::new(mixture.weights.clone(), mixture.means.clone(), mixture.variances.clone()).unwrap();
        let site = posterior_site_field(&phi, &m, &stats).unwrap();
        let d = enumerate_exact(&lattice, &phi, Some(&site)).unwrap();
        let pi = logistic(h);
        let lib_lfdr = local_fdr(&stats, 1.0 - pi, &m).unwrap();
        for (s, &xs) in x.iter().enumerate() {
            let f0 = (1.0 - pi) * gauss_pdf(xs, 0.0, 1.0);
            let lfdr = f0 / (f0 + pi * mixture.f1(xs));
            let lis = 1.0 - d.marginals[s];
            worst = worst.max((lis - lfdr).abs()).max((lib_lfdr[s] - lfdr).abs());
        }
    }
    worst
}

/// Mean |LIS - EM posterior null| on β = 0 data over a 10³ lattice, with
/// LIS from Monte Carlo GEM and the reference from independent EM, both
/// started from the same point.
pub fn beta_zero_em_gap(seed: u64) -> f64 {
    use hmrf_core::emission::MixtureParams;
    use hmrf_core::gem::{run_gem, GemConfig, ModelParams};
    use hmrf_core::ising::{GibbsConfig, IsingParams};
    use hmrf_core::lattice::{Dims, Lattice3D, StatField};
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    let lattice = Lattice3D::full(Dims::cube(10)).unwrap();
    let n = lattice.len();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (pi, mu, var) = (logistic(-1.5), 2.5, 1.0);
    let x: Vec<f64> = (0..n)
        .map(|_| {
            let (m, v) = if rng.random::<f64>() < pi { (mu, var) } else { (0.0, 1.0) };
            Normal::new(m, f64::sqrt(v)).unwrap().sample(&mut rng)
        })
        .collect();
    let init = ModelParams {
        ising: IsingParams::new(0.0, 0.0).unwrap(),
        mixture: MixtureParams::single(mu + 1.0, 2.0).unwrap(),
    };
    let mut config = GemConfig::new(init, GibbsConfig::new(500, 100, seed ^ 0x5eed), 100);
    config.final_gibbs = Some(GibbsConfig::new(4000, 200, seed ^ 0xf1a1));
    let fit = run_gem(&lattice, &StatField::new(x.clone()).unwrap(), &config).unwrap();
    let (_, _, _, post_null) = independent_em(&x, 0.5, mu + 1.0, 2.0, 2000);
    fit.summary.lis.iter().zip(&post_null).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64
}

/// Step-up reference rules written from their definitions. Returns the
/// rejected indices.
pub fn oracle_bh(p: &[f64], alpha: f64) -> Vec<usize> {
    let n = p.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap().then(a.cmp(&b)));
    let k = (1..=n).filter(|&i| p[order[i - 1]] <= i as f64 * alpha / n as f64).max().unwrap_or(0);
    let mut r = order[..k].to_vec();
    r.sort();
    r
}

pub fn oracle_lis(v: &[f64], alpha: f64) -> Vec<usize> {
    let n = v.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap().then(a.cmp(&b)));
    let k = (1..=n)
        .filter(|&i| order[..i].iter().map(|&s| v[s]).sum::<f64>() / i as f64 <= alpha)
        .max()
        .unwrap_or(0);
    let mut r = order[..k].to_vec();
    r.sort();
    r
}

/// Hand examples for the step-up rules, then `instances` random problems
/// (with heavy ties) checked against the reference rules and for subset
/// monotonicity in α. Returns a description of the first failure.
pub fn procedure_suite(instances: usize, seed: u64) -> Result<(), String> {
    use hmrf_core::fdr::{bh, clfdr, lis_stepup, plis, slis};
    use rand::{Rng, SeedableRng};

    let lis = lis_stepup(&[0.02, 0.06, 0.15, 0.4], 0.1);
    if lis.k != 3 || lis.rejected != [true, true, true, false] {
        return Err(format!("LIS hand example gave k = {}", lis.k));
    }
    let b = bh(&[0.001, 0.02, 0.04, 0.9], 0.1);
    if b.k != 3 || b.rejected != [true, true, true, false] {
        return Err(format!("BH hand example gave k = {}", b.k));
    }
    let set = |r: &[bool]| r.iter().enumerate().filter(|p| *p.1).map(|p| p.0).collect::<Vec<_>>();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for case in 0..instances {
        let n = rng.random_range(1..40);
        let levels = rng.random_range(2..12);
        let v: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < 0.5 { rng.random_range(0..levels) as f64 / levels as f64 } else { rng.random::<f64>() })
            .collect();
        let (a1, a2) = {
            let (x, y) = (rng.random_range(0.001..0.5), rng.random_range(0.001..0.5));
            (f64::min(x, y), f64::max(x, y))
        };
        for alpha in [a1, a2] {
            if set(&bh(&v, alpha).rejected) != oracle_bh(&v, alpha) {
                return Err(format!("BH differs from its definition on case {case}: {v:?} at {alpha}"));
            }
            if set(&lis_stepup(&v, alpha).rejected) != oracle_lis(&v, alpha) {
                return Err(format!("LIS step-up differs from its definition on case {case}: {v:?} at {alpha}"));
            }
        }
        let cut = rng.random_range(0..=n);
        let groups = [&v[..cut], &v[cut..]];
        type Rule<'a> = Box<dyn Fn(f64) -> Vec<bool> + 'a>;
        let rules: [(&str, Rule); 5] = [
            ("BH", Box::new(|a| bh(&v, a).rejected)),
            ("LIS", Box::new(|a| lis_stepup(&v, a).rejected)),
            ("PLIS", Box::new(|a| plis(&groups, a).rejected)),
            ("SLIS", Box::new(|a| slis(&groups, a).rejected)),
            ("CLfdr", Box::new(|a| clfdr(&groups, a).rejected)),
        ];
        for (name, rule) in &rules {
            let (lo, hi) = (rule(a1), rule(a2));
            if lo.iter().zip(&hi).any(|(&l, &h)| l && !h) {
                return Err(format!("{name} not monotone in alpha on case {case}"));
            }
        }
    }
    Ok(())
}

/// Three 4×12×6 ROIs side by side on a 12×12×6 grid. Each ROI's states
/// come from its own Ising prior (β = 0.8, h = -2.5); signal is +4 in the
/// first ROI, -4 in the second and of either sign in the third. Returns
/// (z, labels).
pub fn synthetic_rois(seed: u64) -> (hmrf_core::gridio::Grid, hmrf_core::gridio::Grid) {
    use hmrf_core::gridio::{Grid, GridData};
    use hmrf_core::ising::{summarize_chain, GibbsChain, IsingParams, SweepOrder};
    use hmrf_core::lattice::{Dims, Lattice3D};
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};

    let dims = Dims::new(12, 12, 6);
    let roi = Lattice3D::full(Dims::new(4, 12, 6)).unwrap();
    let phi = IsingParams::new(0.8, -2.5).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut z = vec![0.0; dims.len()];
    let mut labels = vec![0i32; dims.len()];
    for r in 0..3 {
        let mut chain = GibbsChain::prior(&roi, &phi, seed * 3 + r as u64, SweepOrder::Raster);
        let states = summarize_chain(&mut chain, 1000, 1, false).final_state;
        for (s, &state) in states.iter().enumerate() {
            let (x, y, zz) = roi.coords(s);
            let k = dims.linear(x + 4 * r, y, zz);
            let sign = match r {
                0 => 1.0,
                1 => -1.0,
                _ => if rng.random::<bool>() { 1.0 } else { -1.0 },
            };
            let e: f64 = StandardNormal.sample(&mut rng);
            z[k] = 4.0 * sign * state as f64 + e;
            labels[k] = r as i32 + 1;
        }
    }
    (
        Grid::new(dims, GridData::F64(z)).unwrap(),
        Grid::new(dims, GridData::I32(labels)).unwrap(),
    )
}

/// Share of BH rejections that PLIS also rejects (1 when BH rejects none).
pub fn bh_coverage(a: &hmrf_core::pipeline::Analysis) -> f64 {
    let bh = a.bh.rejected.iter().filter(|&&r| r).count();
    let both = a.bh.rejected.iter().zip(&a.plis.rejected).filter(|(&b, &p)| b && p).count();
    if bh == 0 {
        1.0
    } else {
        both as f64 / bh as f64
    }
}
