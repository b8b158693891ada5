//! Codebook construction (Lloyd k-means), diagonal Gaussian mixtures fitted
//! by EM, ancestral sampling and Monte-Carlo KL divergence between mixtures.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub const KMEANS_MAX_ITER: usize = 100;
pub const KMEANS_TOL: f64 = 1e-6;
pub const GMM_VAR_FLOOR: f64 = 1e-6;

/// The quantization reproduction points: `k` centers of equal dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub centers: Vec<Vec<f64>>,
}

impl Codebook {
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers.first().map_or(0, |c| c.len())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the Euclidean-nearest center; ties go to the lowest index.
pub fn assign_nearest(v: &[f64], cb: &Codebook) -> Result<usize> {
    if v.len() != cb.dim() {
        return Err(Error::DimensionMismatch {
            expected: cb.dim(),
            got: v.len(),
        });
    }
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in cb.centers.iter().enumerate() {
        let d = sq_dist(v, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    Ok(best)
}

/// Lloyd k-means. Initial centers are `k` distinct points sampled without
/// replacement (duplicates allowed only when the input has fewer distinct
/// points). Empty clusters are re-seeded to the point farthest from its
/// assigned center. Stops when the largest center movement drops below `tol`.
pub fn kmeans<R: Rng>(
    points: &[Vec<f64>],
    k: usize,
    max_iter: usize,
    tol: f64,
    rng: &mut R,
) -> Result<Codebook> {
    kmeans_trace(points, k, max_iter, tol, rng).map(|(cb, _)| cb)
}

/// As `kmeans`, also returning the inertia measured after each assignment.
pub fn kmeans_trace<R: Rng>(
    points: &[Vec<f64>],
    k: usize,
    max_iter: usize,
    tol: f64,
    rng: &mut R,
) -> Result<(Codebook, Vec<f64>)> {
    if points.is_empty() {
        return Err(Error::InvalidInput("k-means needs at least one point".into()));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k-means needs k >= 1".into()));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::InvalidInput("points differ in dimension".into()));
    }

    let mut centers = init_centers(points, k, rng);
    let mut assign = vec![0usize; points.len()];
    let mut inertia_trace = Vec::new();
    let cb_view = |centers: &[Vec<f64>]| Codebook {
        centers: centers.to_vec(),
    };

    for _ in 0..max_iter {
        // assignment
        let cb = cb_view(&centers);
        let mut inertia = 0.0;
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            let j = assign_nearest(p, &cb)?;
            assign[i] = j;
            counts[j] += 1;
            inertia += sq_dist(p, &centers[j]);
        }

        // re-seed empty clusters onto the currently worst-fit points
        let mut reseeded = false;
        let mut taken: Vec<usize> = Vec::new();
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let far = points
                .iter()
                .enumerate()
                .filter(|(i, _)| !taken.contains(i))
                .max_by(|(ia, pa), (ib, pb)| {
                    let da = sq_dist(pa, &centers[assign[*ia]]);
                    let db = sq_dist(pb, &centers[assign[*ib]]);
                    da.partial_cmp(&db).unwrap()
                })
                .map(|(i, _)| i);
            if let Some(i) = far {
                centers[j] = points[i].clone();
                taken.push(i);
                reseeded = true;
            }
        }
        if reseeded {
            let cb = cb_view(&centers);
            inertia = 0.0;
            counts = vec![0usize; k];
            for (i, p) in points.iter().enumerate() {
                let j = assign_nearest(p, &cb)?;
                assign[i] = j;
                counts[j] += 1;
                inertia += sq_dist(p, &centers[j]);
            }
        }
        inertia_trace.push(inertia);

        // update
        let mut next = vec![vec![0.0; dim]; k];
        for (p, &j) in points.iter().zip(&assign) {
            for (acc, &x) in next[j].iter_mut().zip(p) {
                *acc += x;
            }
        }
        let mut movement: f64 = 0.0;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            for acc in &mut next[j] {
                *acc /= counts[j] as f64;
            }
            movement = movement.max(sq_dist(&next[j], &centers[j]).sqrt());
            centers[j] = std::mem::take(&mut next[j]);
        }
        if movement < tol {
            break;
        }
    }
    Ok((cb_view(&centers), inertia_trace))
}

fn init_centers<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut seen = std::collections::HashSet::new();
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for p in points {
        let key: Vec<u64> = p.iter().map(|x| x.to_bits()).collect();
        if seen.insert(key) {
            distinct.push(p);
        }
    }
    let mut order: Vec<usize> = (0..distinct.len()).collect();
    order.shuffle(rng);
    let mut centers: Vec<Vec<f64>> = order
        .iter()
        .take(k)
        .map(|&i| distinct[i].clone())
        .collect();
    // fewer distinct points than clusters: cycle through what exists
    let mut cursor = 0;
    while centers.len() < k {
        centers.push(distinct[order[cursor % order.len()]].clone());
        cursor += 1;
    }
    centers
}

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GmmModel {
    pub components: Vec<GmmComponent>,
}

impl GmmModel {
    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.mean.len())
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }
}

const LN_2PI: f64 = 1.8378770664093453;

fn component_logpdf(c: &GmmComponent, v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, (mu, var)) in v.iter().zip(c.mean.iter().zip(&c.var)) {
        let d = x - mu;
        acc += -0.5 * (LN_2PI + var.ln() + d * d / var);
    }
    acc
}

/// Log density of the mixture, stabilized with a max shift.
pub fn gmm_logpdf(model: &GmmModel, v: &[f64]) -> f64 {
    let terms: Vec<f64> = model
        .components
        .iter()
        .map(|c| {
            if c.weight > 0.0 {
                c.weight.ln() + component_logpdf(c, v)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    log_sum_exp(&terms)
}

pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let mx = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    mx + terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln()
}

/// EM fit with k-means initialization and floored diagonal variances.
pub fn gmm_fit<R: Rng>(
    vectors: &[Vec<f64>],
    k_gmm: usize,
    max_iter: usize,
    tol: f64,
    rng: &mut R,
) -> Result<GmmModel> {
    gmm_fit_trace(vectors, k_gmm, max_iter, tol, rng).map(|(m, _)| m)
}

/// As `gmm_fit`, also returning the mean log-likelihood after each E-step.
pub fn gmm_fit_trace<R: Rng>(
    vectors: &[Vec<f64>],
    k_gmm: usize,
    max_iter: usize,
    tol: f64,
    rng: &mut R,
) -> Result<(GmmModel, Vec<f64>)> {
    if k_gmm == 0 {
        return Err(Error::InvalidConfig("GMM needs k_gmm >= 1".into()));
    }
    if vectors.len() < k_gmm {
        return Err(Error::InvalidInput(format!(
            "GMM with {k_gmm} components needs at least that many samples, got {}",
            vectors.len()
        )));
    }
    let n = vectors.len();
    let dim = vectors[0].len();

    let (init_cb, _) = kmeans_trace(vectors, k_gmm, KMEANS_MAX_ITER, KMEANS_TOL, rng)?;
    let mut components = Vec::with_capacity(k_gmm);
    for center in &init_cb.centers {
        components.push(GmmComponent {
            weight: 1.0 / k_gmm as f64,
            mean: center.clone(),
            var: vec![1.0; dim],
        });
    }
    // seed weights/variances from the hard k-means partition
    let cb = Codebook {
        centers: init_cb.centers.clone(),
    };
    let mut counts = vec![0usize; k_gmm];
    let mut sq_acc = vec![vec![0.0; dim]; k_gmm];
    for v in vectors {
        let j = assign_nearest(v, &cb)?;
        counts[j] += 1;
        for (acc, (x, mu)) in sq_acc[j].iter_mut().zip(v.iter().zip(&cb.centers[j])) {
            *acc += (x - mu) * (x - mu);
        }
    }
    for (j, comp) in components.iter_mut().enumerate() {
        comp.weight = counts[j] as f64 / n as f64;
        for (var, acc) in comp.var.iter_mut().zip(&sq_acc[j]) {
            *var = if counts[j] > 0 {
                (acc / counts[j] as f64).max(GMM_VAR_FLOOR)
            } else {
                GMM_VAR_FLOOR
            };
        }
    }

    let mut model = GmmModel { components };
    let mut ll_trace = Vec::new();
    let mut prev_ll = f64::NEG_INFINITY;
    let mut resp = vec![vec![0.0; k_gmm]; n];

    for _ in 0..max_iter {
        // E-step in log domain
        let mut ll = 0.0;
        for (i, v) in vectors.iter().enumerate() {
            let terms: Vec<f64> = model
                .components
                .iter()
                .map(|c| {
                    if c.weight > 0.0 {
                        c.weight.ln() + component_logpdf(c, v)
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            let lse = log_sum_exp(&terms);
            ll += lse;
            for (r, t) in resp[i].iter_mut().zip(&terms) {
                *r = (t - lse).exp();
            }
        }
        ll /= n as f64;
        ll_trace.push(ll);
        if ll - prev_ll < tol && prev_ll != f64::NEG_INFINITY {
            break;
        }
        prev_ll = ll;

        // M-step
        for j in 0..k_gmm {
            let nk: f64 = resp.iter().map(|r| r[j]).sum();
            if nk <= 1e-300 {
                model.components[j].weight = 0.0;
                continue;
            }
            let comp = &mut model.components[j];
            comp.weight = nk / n as f64;
            for mu in &mut comp.mean {
                *mu = 0.0;
            }
            for (v, r) in vectors.iter().zip(&resp) {
                for (mu, x) in comp.mean.iter_mut().zip(v) {
                    *mu += r[j] * x;
                }
            }
            for mu in &mut comp.mean {
                *mu /= nk;
            }
            for var in &mut comp.var {
                *var = 0.0;
            }
            for (v, r) in vectors.iter().zip(&resp) {
                for (var, (x, mu)) in comp.var.iter_mut().zip(v.iter().zip(&comp.mean)) {
                    *var += r[j] * (x - mu) * (x - mu);
                }
            }
            for var in &mut comp.var {
                *var = (*var / nk).max(GMM_VAR_FLOOR);
            }
        }
        // renormalize in case components died
        let wsum: f64 = model.components.iter().map(|c| c.weight).sum();
        for c in &mut model.components {
            c.weight /= wsum;
        }
    }
    Ok((model, ll_trace))
}

/// Ancestral sampling: component by weight, then diagonal Gaussian.
pub fn gmm_sample<R: Rng>(model: &GmmModel, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut u: f64 = rng.gen();
        let mut chosen = model.components.len() - 1;
        for (j, c) in model.components.iter().enumerate() {
            if u < c.weight {
                chosen = j;
                break;
            }
            u -= c.weight;
        }
        let c = &model.components[chosen];
        let v: Vec<f64> = c
            .mean
            .iter()
            .zip(&c.var)
            .map(|(mu, var)| {
                let z: f64 = rng.sample(StandardNormal);
                mu + var.sqrt() * z
            })
            .collect();
        out.push(v);
    }
    out
}

/// Monte-Carlo estimate of `KL(p || q)`: the average of
/// `log p(u) - log q(u)` over draws `u ~ p`. The raw signed estimate is
/// returned; it can dip below zero by sampling noise.
pub fn mc_kl<R: Rng>(p: &GmmModel, q: &GmmModel, n_samples: usize, rng: &mut R) -> f64 {
    let draws = gmm_sample(p, n_samples, rng);
    let mut acc = 0.0;
    for u in &draws {
        acc += gmm_logpdf(p, u) - gmm_logpdf(q, u);
    }
    acc / n_samples as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from_seed;

    fn pts(raw: &[&[f64]]) -> Vec<Vec<f64>> {
        raw.iter().map(|r| r.to_vec()).collect()
    }

    // Exhaustive-partition oracle: best k=2 clustering by trying every
    // bipartition of the points.
    fn brute_force_two_means(points: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
        let n = points.len();
        let dim = points[0].len();
        let mut best: Option<(Vec<Vec<f64>>, f64)> = None;
        for mask in 1..(1u32 << n) - 1 {
            let mut centers = vec![vec![0.0; dim]; 2];
            let mut counts = [0usize; 2];
            for (i, p) in points.iter().enumerate() {
                let side = ((mask >> i) & 1) as usize;
                counts[side] += 1;
                for (acc, x) in centers[side].iter_mut().zip(p) {
                    *acc += x;
                }
            }
            if counts[0] == 0 || counts[1] == 0 {
                continue;
            }
            for side in 0..2 {
                for acc in &mut centers[side] {
                    *acc /= counts[side] as f64;
                }
            }
            let inertia: f64 = points
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let side = ((mask >> i) & 1) as usize;
                    sq_dist(p, &centers[side])
                })
                .sum();
            if best.as_ref().map_or(true, |(_, bi)| inertia < *bi) {
                best = Some((centers, inertia));
            }
        }
        best.unwrap()
    }

    #[test]
    fn kmeans_two_points_two_clusters() {
        let points = pts(&[&[0.0, 0.0], &[1.0, 1.0]]);
        let cb = kmeans(&points, 2, 50, 1e-9, &mut rng_from_seed(0)).unwrap();
        let mut got = cb.centers.clone();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, points);
        let inertia: f64 = points
            .iter()
            .map(|p| sq_dist(p, &cb.centers[assign_nearest(p, &cb).unwrap()]))
            .sum();
        assert_eq!(inertia, 0.0);
    }

    #[test]
    fn kmeans_k1_is_mean() {
        let points = pts(&[&[0.0, 2.0], &[1.0, 4.0], &[5.0, 0.0], &[2.0, 2.0]]);
        let cb = kmeans(&points, 1, 50, 1e-12, &mut rng_from_seed(1)).unwrap();
        assert_eq!(cb.k(), 1);
        for (d, want) in cb.centers[0].iter().zip(&[2.0, 2.0]) {
            assert!((d - want).abs() < 1e-12);
        }
    }

    #[test]
    fn kmeans_matches_exhaustive_partition_on_blobs() {
        // two well-separated 2-D blobs of four points each
        let points = pts(&[
            &[0.0, 0.1],
            &[0.1, 0.0],
            &[-0.1, 0.0],
            &[0.0, -0.1],
            &[10.0, 10.1],
            &[10.1, 10.0],
            &[9.9, 10.0],
            &[10.0, 9.9],
        ]);
        let (mut oracle, oracle_inertia) = brute_force_two_means(&points);
        oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for seed in 0..5 {
            let (cb, trace) = kmeans_trace(&points, 2, 100, 1e-12, &mut rng_from_seed(seed)).unwrap();
            let mut got = cb.centers.clone();
            got.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (g, o) in got.iter().zip(&oracle) {
                for (a, b) in g.iter().zip(o) {
                    assert!((a - b).abs() < 1e-9, "center {a} vs oracle {b}");
                }
            }
            assert!((trace.last().unwrap() - oracle_inertia).abs() < 1e-9);
        }
    }

    #[test]
    fn kmeans_inertia_never_increases() {
        let mut rng = rng_from_seed(7);
        for trial in 0..20 {
            let points: Vec<Vec<f64>> = (0..40)
                .map(|_| (0..3).map(|_| rng.gen::<f64>()).collect())
                .collect();
            let (_, trace) =
                kmeans_trace(&points, 4, 100, 0.0, &mut rng_from_seed(trial)).unwrap();
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "inertia rose: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn kmeans_duplicate_points_allowed() {
        let points = pts(&[&[0.5, 0.5], &[0.5, 0.5], &[0.5, 0.5]]);
        let cb = kmeans(&points, 2, 10, 1e-9, &mut rng_from_seed(3)).unwrap();
        assert_eq!(cb.k(), 2);
        for c in &cb.centers {
            assert_eq!(c, &vec![0.5, 0.5]);
        }
        assert!(kmeans(&[], 2, 10, 1e-9, &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn assign_nearest_tie_goes_low() {
        let cb = Codebook {
            centers: pts(&[&[0.0], &[1.0]]),
        };
        assert_eq!(assign_nearest(&[0.5], &cb).unwrap(), 0);
        assert_eq!(assign_nearest(&[1.0], &cb).unwrap(), 1);
        assert!(assign_nearest(&[0.0, 0.0], &cb).is_err());
    }

    #[test]
    fn assign_nearest_matches_linear_scan() {
        let mut rng = rng_from_seed(11);
        let centers: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..4).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let cb = Codebook {
            centers: centers.clone(),
        };
        for _ in 0..100 {
            let v: Vec<f64> = (0..4).map(|_| rng.gen::<f64>()).collect();
            let mut want = 0;
            let mut want_d = f64::INFINITY;
            for (i, c) in centers.iter().enumerate() {
                let d: f64 = c.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < want_d {
                    want_d = d;
                    want = i;
                }
            }
            assert_eq!(assign_nearest(&v, &cb).unwrap(), want);
        }
    }

    // Moment-matching oracle: a single component must fit the sample mean and
    // the maximum-likelihood (population) variance.
    #[test]
    fn gmm_single_component_moments() {
        let mut rng = rng_from_seed(21);
        let vectors: Vec<Vec<f64>> = (0..500)
            .map(|_| vec![rng.gen::<f64>() * 3.0, rng.gen::<f64>() - 2.0])
            .collect();
        let n = vectors.len() as f64;
        let mut mean = [0.0; 2];
        for v in &vectors {
            mean[0] += v[0];
            mean[1] += v[1];
        }
        mean[0] /= n;
        mean[1] /= n;
        let mut var = [0.0; 2];
        for v in &vectors {
            var[0] += (v[0] - mean[0]) * (v[0] - mean[0]);
            var[1] += (v[1] - mean[1]) * (v[1] - mean[1]);
        }
        var[0] /= n;
        var[1] /= n;

        let model = gmm_fit(&vectors, 1, 50, 1e-12, &mut rng_from_seed(0)).unwrap();
        let c = &model.components[0];
        assert!((c.weight - 1.0).abs() < 1e-12);
        for d in 0..2 {
            assert!((c.mean[d] - mean[d]).abs() < 1e-9, "mean[{d}]");
            assert!((c.var[d] - var[d]).abs() < 1e-9, "var[{d}]");
        }
    }

    // Blob-construction oracle: two tight blobs 20 sigma apart must be
    // recovered to within 0.05 of their true means.
    #[test]
    fn gmm_two_separated_blobs() {
        let mut rng = rng_from_seed(33);
        let mut vectors = Vec::new();
        for _ in 0..400 {
            let z: f64 = rng.sample(StandardNormal);
            vectors.push(vec![z * 0.05]);
        }
        for _ in 0..400 {
            let z: f64 = rng.sample(StandardNormal);
            vectors.push(vec![1.0 + z * 0.05]);
        }
        let model = gmm_fit(&vectors, 2, 100, 1e-12, &mut rng_from_seed(1)).unwrap();
        let mut means: Vec<f64> = model.components.iter().map(|c| c.mean[0]).collect();
        means.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((means[0] - 0.0).abs() < 0.05, "blob 0 mean {}", means[0]);
        assert!((means[1] - 1.0).abs() < 0.05, "blob 1 mean {}", means[1]);
        for c in &model.components {
            assert!((c.weight - 0.5).abs() < 0.05);
        }
    }

    #[test]
    fn gmm_loglik_monotone_and_weights_on_simplex() {
        for seed in 0..10 {
            let mut rng = rng_from_seed(seed);
            let vectors: Vec<Vec<f64>> = (0..120)
                .map(|_| (0..3).map(|_| rng.gen::<f64>() * 2.0).collect())
                .collect();
            let (model, trace) =
                gmm_fit_trace(&vectors, 3, 60, 0.0, &mut rng_from_seed(seed + 100)).unwrap();
            for w in trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "log-lik fell: {} -> {}", w[0], w[1]);
            }
            let wsum: f64 = model.components.iter().map(|c| c.weight).sum();
            assert!((wsum - 1.0).abs() < 1e-9);
            assert!(model.components.iter().all(|c| c.weight >= 0.0));
            assert!(model
                .components
                .iter()
                .all(|c| c.var.iter().all(|&v| v >= GMM_VAR_FLOOR)));
        }
    }

    #[test]
    fn gmm_degenerate_input_collapses_without_error() {
        let vectors = vec![vec![0.25, 0.75]; 50];
        let model = gmm_fit(&vectors, 2, 50, 1e-9, &mut rng_from_seed(5)).unwrap();
        let lp = gmm_logpdf(&model, &[0.25, 0.75]);
        assert!(lp.is_finite());
        assert!(model.components.iter().all(|c| c.var.iter().all(|&v| v >= GMM_VAR_FLOOR)));
    }

    #[test]
    fn logpdf_standard_normal_at_zero() {
        let model = GmmModel {
            components: vec![GmmComponent {
                weight: 1.0,
                mean: vec![0.0],
                var: vec![1.0],
            }],
        };
        let want = -0.5 * LN_2PI;
        assert!((gmm_logpdf(&model, &[0.0]) - want).abs() < 1e-12);
        assert!((want + 0.9189385332046727).abs() < 1e-12);
    }

    #[test]
    fn logpdf_duplicate_components_equal_single() {
        let single = GmmModel {
            components: vec![GmmComponent {
                weight: 1.0,
                mean: vec![0.3, -0.2],
                var: vec![0.5, 2.0],
            }],
        };
        let dup = GmmModel {
            components: vec![
                GmmComponent {
                    weight: 0.5,
                    mean: vec![0.3, -0.2],
                    var: vec![0.5, 2.0],
                },
                GmmComponent {
                    weight: 0.5,
                    mean: vec![0.3, -0.2],
                    var: vec![0.5, 2.0],
                },
            ],
        };
        let mut rng = rng_from_seed(9);
        for _ in 0..100 {
            let v = [rng.gen::<f64>() * 4.0 - 2.0, rng.gen::<f64>() * 4.0 - 2.0];
            let a = gmm_logpdf(&single, &v);
            let b = gmm_logpdf(&dup, &v);
            assert!((a - b).abs() < 1e-12);
        }
    }

    // Naive-sum oracle: direct summation of weighted component densities.
    #[test]
    fn logpdf_matches_naive_sum() {
        let model = GmmModel {
            components: vec![
                GmmComponent {
                    weight: 0.3,
                    mean: vec![0.0, 1.0],
                    var: vec![1.0, 0.25],
                },
                GmmComponent {
                    weight: 0.7,
                    mean: vec![2.0, -1.0],
                    var: vec![0.5, 4.0],
                },
            ],
        };
        let mut rng = rng_from_seed(13);
        for _ in 0..200 {
            let v = [rng.gen::<f64>() * 6.0 - 3.0, rng.gen::<f64>() * 6.0 - 3.0];
            let naive: f64 = model
                .components
                .iter()
                .map(|c| {
                    let mut dens = c.weight;
                    for (x, (mu, var)) in v.iter().zip(c.mean.iter().zip(&c.var)) {
                        dens *= (-0.5 * (x - mu) * (x - mu) / var).exp()
                            / (2.0 * std::f64::consts::PI * var).sqrt();
                    }
                    dens
                })
                .sum();
            let got = gmm_logpdf(&model, &v);
            assert!((got - naive.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_moments_match_model() {
        let model = GmmModel {
            components: vec![GmmComponent {
                weight: 1.0,
                mean: vec![0.5, -1.5],
                var: vec![0.09, 1.0],
            }],
        };
        let draws = gmm_sample(&model, 100_000, &mut rng_from_seed(17));
        for d in 0..2 {
            let mean: f64 = draws.iter().map(|v| v[d]).sum::<f64>() / draws.len() as f64;
            let var: f64 = draws
                .iter()
                .map(|v| (v[d] - mean) * (v[d] - mean))
                .sum::<f64>()
                / draws.len() as f64;
            let se = (model.components[0].var[d] / draws.len() as f64).sqrt();
            assert!((mean - model.components[0].mean[d]).abs() < 4.0 * se);
            assert!((var - model.components[0].var[d]).abs() < 0.02 * model.components[0].var[d].max(1.0));
        }
    }

    #[test]
    fn sample_zero_weight_component_never_drawn() {
        let model = GmmModel {
            components: vec![
                GmmComponent {
                    weight: 1.0,
                    mean: vec![0.0],
                    var: vec![1e-6],
                },
                GmmComponent {
                    weight: 0.0,
                    mean: vec![100.0],
                    var: vec![1e-6],
                },
            ],
        };
        let draws = gmm_sample(&model, 5_000, &mut rng_from_seed(19));
        assert!(draws.iter().all(|v| v[0] < 50.0));
        let a = gmm_sample(&model, 32, &mut rng_from_seed(4));
        let b = gmm_sample(&model, 32, &mut rng_from_seed(4));
        assert_eq!(a, b);
    }

    fn diag_gaussian(mean: Vec<f64>, var: Vec<f64>) -> GmmModel {
        GmmModel {
            components: vec![GmmComponent {
                weight: 1.0,
                mean,
                var,
            }],
        }
    }

    fn closed_form_kl(p: &GmmModel, q: &GmmModel) -> f64 {
        let (cp, cq) = (&p.components[0], &q.components[0]);
        cp.mean
            .iter()
            .zip(cp.var.iter())
            .zip(cq.mean.iter().zip(cq.var.iter()))
            .map(|((m1, v1), (m2, v2))| {
                0.5 * ((v2 / v1).ln() + (v1 + (m1 - m2) * (m1 - m2)) / v2 - 1.0)
            })
            .sum()
    }

    #[test]
    fn mc_kl_self_is_near_zero() {
        let p = diag_gaussian(vec![0.4, -0.3, 1.0], vec![0.5, 1.5, 0.2]);
        let est = mc_kl(&p, &p, 100_000, &mut rng_from_seed(23));
        // KL(p||p) = 0 and every sample term is exactly 0
        assert!(est.abs() < 1e-12, "self-KL {est}");
    }

    #[test]
    fn mc_kl_unit_shift_is_half() {
        let p = diag_gaussian(vec![0.0], vec![1.0]);
        let q = diag_gaussian(vec![1.0], vec![1.0]);
        let est = mc_kl(&p, &q, 100_000, &mut rng_from_seed(29));
        assert!((est - 0.5).abs() < 0.02, "estimate {est}");
    }

    // Closed-form oracle over random 4-D diagonal Gaussians.
    #[test]
    fn mc_kl_matches_closed_form_in_4d() {
        let mut rng = rng_from_seed(31);
        for trial in 0..10 {
            let mean_p: Vec<f64> = (0..4).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let mean_q: Vec<f64> = (0..4).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let var_p: Vec<f64> = (0..4).map(|_| 0.2 + rng.gen::<f64>()).collect();
            let var_q: Vec<f64> = (0..4).map(|_| 0.2 + rng.gen::<f64>()).collect();
            let p = diag_gaussian(mean_p, var_p);
            let q = diag_gaussian(mean_q, var_q);
            let want = closed_form_kl(&p, &q);
            let est = mc_kl(&p, &q, 100_000, &mut rng_from_seed(1000 + trial));
            let tol = (0.05 * want).max(0.01);
            assert!((est - want).abs() <= tol, "trial {trial}: {est} vs {want}");
        }
    }

    // Estimator spread shrinks roughly like 1/sqrt(n): quadrupling the sample
    // count should clearly cut the spread over repeated seeds.
    #[test]
    fn mc_kl_variance_shrinks_with_n() {
        let p = diag_gaussian(vec![0.0], vec![1.0]);
        let q = diag_gaussian(vec![0.7], vec![1.3]);
        let spread = |n: usize| {
            let ests: Vec<f64> = (0..20)
                .map(|s| mc_kl(&p, &q, n, &mut rng_from_seed(500 + s)))
                .collect();
            let mean = ests.iter().sum::<f64>() / ests.len() as f64;
            ests.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / ests.len() as f64
        };
        let wide = spread(500);
        let tight = spread(2000);
        assert!(
            tight < wide * 0.6,
            "variance did not shrink: {wide} -> {tight}"
        );
    }
}
