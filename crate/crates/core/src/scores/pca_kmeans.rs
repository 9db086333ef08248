//! Nearest-centroid novelty score in a PCA embedding.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::persist::Container;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaKmeansConfig {
    /// Number of principal components; `None` keeps the fewest explaining
    /// at least `variance_target` of the variance.
    pub components: Option<usize>,
    pub variance_target: f64,
    pub k: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for PcaKmeansConfig {
    fn default() -> Self {
        Self {
            components: None,
            variance_target: 0.95,
            k: 64,
            max_iter: 300,
            tol: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaKmeansModel {
    pub mean: Vec<f64>,
    /// Orthonormal principal directions, one per row.
    pub components: Vec<Vec<f64>>,
    /// Centroids in the embedded space.
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squared distances at convergence.
    pub inertia: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues of the covariance, descending, for every direction.
    pub explained_variance: Vec<f64>,
}

/// Principal directions from the eigendecomposition of the sample covariance.
pub fn pca(features: &[Vec<f64>]) -> Result<Pca> {
    let n = features.len();
    if n < 2 {
        return Err(Error::invalid("PCA needs at least two samples"));
    }
    let d = features[0].len();
    let mut mean = vec![0.0; d];
    for f in features {
        Error::check_dim(d, f.len())?;
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v / n as f64;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for f in features {
        for i in 0..d {
            let ci = f[i] - mean[i];
            for j in i..d {
                cov[(i, j)] += ci * (f[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / (n - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let components = order
        .iter()
        .map(|&k| {
            let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            // Fix the sign so the largest-magnitude entry is positive.
            let pivot = v
                .iter()
                .cloned()
                .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if pivot < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    let explained_variance = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    Ok(Pca {
        mean,
        components,
        explained_variance,
    })
}

/// Fewest leading components whose variance share reaches `target`.
pub fn components_for_variance(explained: &[f64], target: f64) -> usize {
    let total: f64 = explained.iter().sum();
    if total <= 0.0 {
        return 1;
    }
    let mut acc = 0.0;
    for (i, v) in explained.iter().enumerate() {
        acc += v;
        if acc / total >= target - 1e-12 {
            return i + 1;
        }
    }
    explained.len()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Seeded k-means++ initialisation followed by Lloyd iterations.
/// Returns the centroids and final inertia.
pub fn kmeans(points: &[Vec<f64>], k: usize, max_iter: usize, tol: f64, seed: u64) -> Result<(Vec<Vec<f64>>, f64)> {
    let n = points.len();
    if k == 0 {
        return Err(Error::invalid("k-means needs k >= 1"));
    }
    if n < k {
        return Err(Error::invalid(format!(
            "k-means with K = {k} needs at least {k} samples, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in nearest.iter().enumerate() {
                if *w > 0.0 && u < *w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            while nearest[chosen] == 0.0 {
                chosen -= 1;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].clone();
        for (w, p) in nearest.iter_mut().zip(points) {
            *w = w.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }

    let mut prev = f64::INFINITY;
    let mut inertia = f64::INFINITY;
    for _ in 0..max_iter {
        let mut sums = vec![vec![0.0; points[0].len()]; k];
        let mut counts = vec![0usize; k];
        inertia = 0.0;
        for p in points {
            let (best, dist) = nearest_centroid(&centroids, p);
            inertia += dist;
            counts[best] += 1;
            for (s, v) in sums[best].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        if inertia == 0.0 || (prev - inertia).abs() <= tol * prev {
            break;
        }
        prev = inertia;
    }
    // Inertia with respect to the returned centroids.
    let final_inertia: f64 = points.iter().map(|p| nearest_centroid(&centroids, p).1).sum();
    Ok((centroids, final_inertia.min(inertia)))
}

fn nearest_centroid(centroids: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

pub fn pca_kmeans_fit(features: &[Vec<f64>], cfg: &PcaKmeansConfig) -> Result<PcaKmeansModel> {
    if features.len() < cfg.k {
        return Err(Error::invalid(format!(
            "PCA-kmeans with K = {} needs at least {} samples, got {}",
            cfg.k,
            cfg.k,
            features.len()
        )));
    }
    let p = pca(features)?;
    let m = match cfg.components {
        Some(m) if m == 0 || m > p.components.len() => {
            return Err(Error::invalid(format!("cannot keep {m} principal components")))
        }
        Some(m) => m,
        None => components_for_variance(&p.explained_variance, cfg.variance_target),
    };
    let mut model = PcaKmeansModel {
        mean: p.mean,
        components: p.components[..m].to_vec(),
        centroids: Vec::new(),
        inertia: 0.0,
    };
    let embedded: Vec<Vec<f64>> = features.iter().map(|f| model.embed(f)).collect::<Result<_>>()?;
    let (centroids, inertia) = kmeans(&embedded, cfg.k, cfg.max_iter, cfg.tol, cfg.seed)?;
    model.centroids = centroids;
    model.inertia = inertia;
    Ok(model)
}

impl PcaKmeansModel {
    pub fn embed(&self, o: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim(self.mean.len(), o.len())?;
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(o).zip(&self.mean).map(|((w, x), m)| w * (x - m)).sum())
            .collect())
    }

    /// Maps an embedded point back to feature space.
    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, zi) in self.components.iter().zip(z) {
            for (o, w) in out.iter_mut().zip(c) {
                *o += zi * w;
            }
        }
        out
    }

    /// Euclidean distance from the embedding to the nearest centroid.
    pub fn score(&self, o: &[f64]) -> Result<f64> {
        let z = self.embed(o)?;
        Ok(nearest_centroid(&self.centroids, &z).1.sqrt())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let d = self.mean.len();
        let m = self.components.len();
        let mut c = Container::new();
        c.push(
            b"META",
            serde_json::to_vec(
                &serde_json::json!({"d": d, "m": m, "k": self.centroids.len(), "inertia": self.inertia}),
            )?,
        );
        c.push_f64s(b"MEAN", &self.mean);
        c.push_f64s(b"PCAM", &self.components.concat());
        c.push_f64s(b"CENT", &self.centroids.concat());
        c.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c = Container::load(path)?;
        #[derive(Deserialize)]
        struct Meta {
            d: usize,
            m: usize,
            k: usize,
            inertia: f64,
        }
        let meta: Meta = serde_json::from_slice(c.get(b"META")?)?;
        let mean = c.get_f64s(b"MEAN")?;
        let comps = c.get_f64s(b"PCAM")?;
        let cents = c.get_f64s(b"CENT")?;
        if mean.len() != meta.d || comps.len() != meta.m * meta.d || cents.len() != meta.k * meta.m || meta.m == 0 {
            return Err(Error::ModelFormat("PCA-kmeans sections disagree with metadata".into()));
        }
        Ok(Self {
            mean,
            components: comps.chunks(meta.d).map(|c| c.to_vec()).collect(),
            centroids: cents.chunks(meta.m).map(|c| c.to_vec()).collect(),
            inertia: meta.inertia,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn cfg(k: usize, m: Option<usize>) -> PcaKmeansConfig {
        PcaKmeansConfig {
            components: m,
            k,
            ..PcaKmeansConfig::default()
        }
    }

    #[test]
    fn one_cluster_per_point_has_zero_inertia() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64 * 0.1]).collect();
        let m = pca_kmeans_fit(&pts, &cfg(6, Some(2))).unwrap();
        assert_eq!(m.inertia, 0.0);
    }

    #[test]
    fn full_rank_embedding_preserves_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let nd = Normal::new(0.0, 1.0).unwrap();
        let pts: Vec<Vec<f64>> = (0..30).map(|_| (0..3).map(|_| nd.sample(&mut rng)).collect()).collect();
        let m = pca_kmeans_fit(&pts, &cfg(2, Some(3))).unwrap();
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                let a = sq_dist(&pts[i], &pts[j]).sqrt();
                let b = sq_dist(&m.embed(&pts[i]).unwrap(), &m.embed(&pts[j]).unwrap()).sqrt();
                assert!((a - b).abs() < 1e-10);
            }
        }
        for (a, row) in m.components.iter().enumerate() {
            for (b, other) in m.components.iter().enumerate() {
                let dot: f64 = row.iter().zip(other).map(|(x, y)| x * y).sum();
                assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn two_blobs_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let nd = Normal::new(0.0, 0.3).unwrap();
        let mut pts = Vec::new();
        for c in [[0.0, 0.0], [6.0, 3.0]] {
            for _ in 0..200 {
                pts.push(vec![c[0] + nd.sample(&mut rng), c[1] + nd.sample(&mut rng)]);
            }
        }
        let m = pca_kmeans_fit(&pts, &cfg(2, Some(2))).unwrap();
        let means = [&pts[..200], &pts[200..]].map(|blob| {
            let n = blob.len() as f64;
            vec![
                blob.iter().map(|p| p[0]).sum::<f64>() / n,
                blob.iter().map(|p| p[1]).sum::<f64>() / n,
            ]
        });
        for mu in &means {
            let best = m
                .centroids
                .iter()
                .map(|c| sq_dist(&m.reconstruct(c), mu).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.2, "{best}");
        }
    }

    #[test]
    fn score_examples() {
        let m = PcaKmeansModel {
            mean: vec![0.0, 0.0],
            components: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            centroids: vec![vec![0.0, 0.0], vec![10.0, 0.0]],
            inertia: 0.0,
        };
        assert_eq!(m.score(&[1.0, 0.0]).unwrap(), 1.0);
        let c = m.reconstruct(&m.centroids[1]);
        assert_eq!(m.score(&c).unwrap(), 0.0);
        assert!(m.score(&[1.0]).is_err());
    }

    #[test]
    fn far_ood_exceeds_training_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let nd = Normal::new(0.0, 1.0).unwrap();
        let pts: Vec<Vec<f64>> = (0..300)
            .map(|_| (0..4).map(|_| nd.sample(&mut rng)).collect())
            .collect();
        let m = pca_kmeans_fit(&pts, &cfg(8, None)).unwrap();
        let max = pts.iter().map(|p| m.score(p).unwrap()).fold(0.0, f64::max);
        assert!(m.score(&[30.0, -30.0, 30.0, 30.0]).unwrap() > max);
    }

    #[test]
    fn variance_rule_and_errors() {
        assert_eq!(components_for_variance(&[9.0, 0.5, 0.5], 0.95), 2);
        assert_eq!(components_for_variance(&[9.5, 0.3, 0.2], 0.95), 1);
        let pts = vec![vec![0.0, 1.0]; 3];
        assert!(pca_kmeans_fit(&pts, &cfg(4, None)).is_err());
    }

    #[test]
    fn deterministic_and_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let nd = Normal::new(0.0, 1.0).unwrap();
        let pts: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..5).map(|_| nd.sample(&mut rng)).collect())
            .collect();
        let a = pca_kmeans_fit(&pts, &cfg(10, None)).unwrap();
        assert_eq!(a, pca_kmeans_fit(&pts, &cfg(10, None)).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pk.bin");
        a.save(&p).unwrap();
        assert_eq!(PcaKmeansModel::load(&p).unwrap(), a);
    }
}
