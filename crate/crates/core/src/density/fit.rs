use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gmm::{log_sum_exp, Component, GmmModel};
use super::Reduction;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    /// Mixture components per block.
    pub components: usize,
    /// Stop once the average log-likelihood gains less than this.
    pub tol: f64,
    pub max_iter: usize,
    /// Ridge added to each covariance, relative to its mean variance.
    pub ridge: f64,
    pub reduction: Reduction,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            components: 5,
            tol: 1e-4,
            max_iter: 200,
            ridge: 1e-4,
            reduction: Reduction::SpatialMeanPool,
        }
    }
}

/// Average log-likelihood before each M-step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmTrace {
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
}

fn check_samples(samples: &[Vec<f64>]) -> Result<usize> {
    let d = samples.first().map(Vec::len).ok_or_else(|| Error::arg("no samples"))?;
    if d == 0 {
        return Err(Error::arg("samples must have positive dimension"));
    }
    for (n, s) in samples.iter().enumerate() {
        if s.len() != d {
            return Err(Error::shape(format!("sample {n} has length {}, expected {d}", s.len())));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("sample {n} has a non-finite entry")));
        }
    }
    Ok(d)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Weighted mean and ridge-regularized covariance; `weights` may be all ones.
fn weighted_moments(samples: &[Vec<f64>], weights: &[f64], ridge: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let d = samples[0].len();
    let total: f64 = weights.iter().sum();
    let mut mean = vec![0.0; d];
    for (s, &w) in samples.iter().zip(weights) {
        if w != 0.0 {
            mean.iter_mut().zip(s).for_each(|(m, v)| *m += w * v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);
    let mut cov = vec![0.0; d * d];
    let mut diff = vec![0.0; d];
    for (s, &w) in samples.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        diff.iter_mut().zip(s.iter().zip(&mean)).for_each(|(o, (v, m))| *o = v - m);
        for i in 0..d {
            let wi = w * diff[i];
            let row = &mut cov[i * d..(i + 1) * d];
            // Upper triangle only; mirrored below.
            for j in i..d {
                row[j] += wi * diff[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / total;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    let eps = ridge * (trace / d as f64).max(1e-12);
    (0..d).for_each(|i| cov[i * d + i] += eps);
    (total, mean, cov)
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(k, c)| (k, sq_dist(x, c)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// k-means++ seeding followed by Lloyd iterations (at most 100, or until the
/// assignment stops changing). Returns one component per cluster.
pub fn kmeans_init<R: Rng + ?Sized>(samples: &[Vec<f64>], m: usize, ridge: f64, rng: &mut R) -> Result<Vec<Component>> {
    check_samples(samples)?;
    if m == 0 || samples.len() < m {
        return Err(Error::arg(format!(
            "{} samples cannot seed {m} mixture components",
            samples.len()
        )));
    }
    let n = samples.len();
    let mut centroids = vec![samples[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = samples.iter().map(|s| sq_dist(s, &centroids[0])).collect();
    while centroids.len() < m {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen_range(0.0..total);
            d2.iter()
                .position(|&w| {
                    r -= w;
                    r < 0.0
                })
                .unwrap_or(n - 1)
        } else {
            rng.gen_range(0..n)
        };
        centroids.push(samples[pick].clone());
        for (d, s) in d2.iter_mut().zip(samples) {
            *d = d.min(sq_dist(s, &centroids[centroids.len() - 1]));
        }
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..100 {
        let next: Vec<usize> = samples.par_iter().map(|s| nearest(s, &centroids).0).collect();
        let changed = next != assign;
        assign = next;
        let mut counts = vec![0usize; m];
        let mut sums = vec![vec![0.0; samples[0].len()]; m];
        for (s, &k) in samples.iter().zip(&assign) {
            counts[k] += 1;
            sums[k].iter_mut().zip(s).for_each(|(a, v)| *a += v);
        }
        for k in 0..m {
            if counts[k] == 0 {
                // Reseed from the point farthest from its own centroid.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(&samples[a], &centroids[assign[a]]).total_cmp(&sq_dist(&samples[b], &centroids[assign[b]]))
                    })
                    .expect("samples are non-empty");
                centroids[k] = samples[far].clone();
                counts[assign[far]] -= 1;
                assign[far] = k;
                counts[k] = 1;
            } else {
                centroids[k] = sums[k].iter().map(|v| v / counts[k] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }

    let mut comps = Vec::with_capacity(m);
    for k in 0..m {
        let members: Vec<f64> = assign.iter().map(|&a| if a == k { 1.0 } else { 0.0 }).collect();
        let count: f64 = members.iter().sum();
        // A singleton has no spread of its own; borrow the global one.
        let weights = if count < 2.0 { vec![1.0; n] } else { members };
        let (_, mut mean, covariance) = weighted_moments(samples, &weights, ridge);
        if count < 2.0 {
            mean = centroids[k].clone();
        }
        comps.push(Component {
            weight: count / n as f64,
            mean,
            covariance,
        });
    }
    Ok(comps)
}

/// Expectation-maximization from `init` until the average log-likelihood
/// gains less than `tol` or `max_iter` E-steps have run.
pub fn em_fit(
    samples: &[Vec<f64>],
    init: Vec<Component>,
    cfg: &GmmConfig,
    bag_index: usize,
) -> Result<(GmmModel, EmTrace)> {
    let d = check_samples(samples)?;
    if !(cfg.tol > 0.0) {
        return Err(Error::arg("EM tolerance must be positive"));
    }
    let mut model = GmmModel::new(bag_index, cfg.reduction, init)?;
    if model.dim() != d {
        return Err(Error::shape(format!("initial mixture has dimension {}, samples {d}", model.dim())));
    }
    let m = model.components().len();
    let n = samples.len() as f64;
    let mut trace = EmTrace::default();
    for _ in 0..cfg.max_iter {
        let rows: Vec<(f64, Vec<f64>)> = samples
            .par_iter()
            .map(|x| {
                let mut parts = Vec::with_capacity(m);
                model.component_log_densities(x, &mut parts);
                let lse = log_sum_exp(&parts);
                (lse, parts.into_iter().map(|p| (p - lse).exp()).collect())
            })
            .collect();
        let avg = rows.iter().map(|r| r.0).sum::<f64>() / n;
        if !avg.is_finite() {
            return Err(Error::Numerical("EM log-likelihood is not finite".into()));
        }
        let gain = trace.log_likelihood.last().map(|prev| avg - prev);
        trace.log_likelihood.push(avg);
        if gain.is_some_and(|g| g < cfg.tol) {
            trace.converged = true;
            break;
        }
        let comps = (0..m)
            .into_par_iter()
            .map(|k| {
                let resp: Vec<f64> = rows.iter().map(|r| r.1[k]).collect();
                let (mass, mean, covariance) = weighted_moments(samples, &resp, cfg.ridge);
                if !(mass > 0.0) {
                    return Err(Error::Numerical(format!("component {k} lost all responsibility")));
                }
                Ok(Component {
                    weight: mass / n,
                    mean,
                    covariance,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let total: f64 = comps.iter().map(|c| c.weight).sum();
        let comps = comps
            .into_iter()
            .map(|c| Component {
                weight: c.weight / total,
                ..c
            })
            .collect();
        model = GmmModel::new(bag_index, cfg.reduction, comps)?;
    }
    Ok((model, trace))
}

/// k-means initialization followed by EM.
pub fn fit_mixture<R: Rng + ?Sized>(
    samples: &[Vec<f64>],
    cfg: &GmmConfig,
    bag_index: usize,
    rng: &mut R,
) -> Result<(GmmModel, EmTrace)> {
    let init = kmeans_init(samples, cfg.components, cfg.ridge, rng)?;
    em_fit(samples, init, cfg, bag_index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn cloud(center: &[f64], spread: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                center
                    .iter()
                    .map(|c| {
                        let z: f64 = StandardNormal.sample(rng);
                        c + spread * z
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn single_cluster_is_the_sample_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let xs = cloud(&[1.0, -2.0, 0.5], 1.0, 50, &mut rng);
        let init = kmeans_init(&xs, 1, 1e-4, &mut rng).unwrap();
        assert_eq!(init[0].weight, 1.0);
        for j in 0..3 {
            let mean = xs.iter().map(|x| x[j]).sum::<f64>() / 50.0;
            assert!((init[0].mean[j] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn separated_clouds_are_found() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut xs = cloud(&[0.0, 0.0], 0.3, 200, &mut rng);
        xs.extend(cloud(&[10.0, 5.0], 0.3, 200, &mut rng));
        let init = kmeans_init(&xs, 2, 1e-4, &mut rng).unwrap();
        let mut means: Vec<&Vec<f64>> = init.iter().map(|c| &c.mean).collect();
        means.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert!(sq_dist(means[0], &[0.0, 0.0]).sqrt() < 0.1);
        assert!(sq_dist(means[1], &[10.0, 5.0]).sqrt() < 0.1);
    }

    #[test]
    fn seeding_is_deterministic_and_validated() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs = cloud(&[0.0; 4], 1.0, 40, &mut rng);
        let a = kmeans_init(&xs, 3, 1e-4, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = kmeans_init(&xs, 3, 1e-4, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(kmeans_init(&xs[..2], 3, 1e-4, &mut rng), Err(Error::Argument(_))));
    }

    #[test]
    fn em_log_likelihood_never_decreases() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut xs = cloud(&[0.0, 0.0, 0.0], 1.0, 150, &mut rng);
            xs.extend(cloud(&[3.0, 1.0, -2.0], 0.7, 100, &mut rng));
            let (g, trace) = fit_mixture(&xs, &GmmConfig::default(), 0, &mut rng).unwrap();
            for w in trace.log_likelihood.windows(2) {
                assert!(w[1] >= w[0] - 1e-8, "{:?}", trace.log_likelihood);
            }
            let total: f64 = g.components().iter().map(|c| c.weight).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_point_single_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs = cloud(&[2.0, 2.0], 1.0, 100, &mut rng);
        let cfg = GmmConfig {
            components: 1,
            max_iter: 1,
            ..Default::default()
        };
        let init = kmeans_init(&xs, 1, cfg.ridge, &mut rng).unwrap();
        let (g, _) = em_fit(&xs, init.clone(), &cfg, 0).unwrap();
        let c = &g.components()[0];
        for (a, b) in c.mean.iter().zip(&init[0].mean).chain(c.covariance.iter().zip(&init[0].covariance)) {
            assert!((a - b).abs() < cfg.tol);
        }
    }

    #[test]
    fn identical_samples_stay_finite() {
        let xs = vec![vec![1.0, 1.0]; 10];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = GmmConfig {
            components: 2,
            ..Default::default()
        };
        let (g, _) = fit_mixture(&xs, &cfg, 0, &mut rng).unwrap();
        assert!(g.log_likelihood(&[1.0, 1.0]).unwrap().is_finite());
    }
}
