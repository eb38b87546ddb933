use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::providers::EmbeddingVector;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMethod {
    Tsne,
    Isomap,
}

impl ProjectionMethod {
    pub fn name(self) -> &'static str {
        match self {
            ProjectionMethod::Tsne => "tsne",
            ProjectionMethod::Isomap => "isomap",
        }
    }
}

impl fmt::Display for ProjectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProjectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tsne" | "t-sne" => Ok(ProjectionMethod::Tsne),
            "isomap" => Ok(ProjectionMethod::Isomap),
            other => Err(Error::invalid(format!("unknown projection method {other:?}"))),
        }
    }
}

/// Two-dimensional coordinates, one per embedded response, with its source label.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionResult<T> {
    pub method: ProjectionMethod,
    pub coords: Vec<[T; 2]>,
    pub labels: Vec<String>,
}

/// Projects embeddings to the plane.
///
/// Isomap uses `min(10, n - 1)` neighbours; t-SNE uses perplexity `min(30, n / 4)`, floored
/// at 1. Both are deterministic for a given seed (Isomap does not use it).
pub fn project_embeddings<T: Scalar>(
    embeddings: &[EmbeddingVector<T>],
    labels: &[String],
    method: ProjectionMethod,
    seed: u64,
) -> Result<ProjectionResult<T>> {
    let n = embeddings.len();
    if n < 3 {
        return Err(Error::invalid(format!("projection needs at least 3 points, got {n}")));
    }
    if labels.len() != n {
        return Err(Error::invalid(format!("{n} embeddings but {} labels", labels.len())));
    }
    let dim = embeddings[0].dimension();
    if embeddings.iter().any(|e| e.dimension() != dim) {
        return Err(Error::invalid("embeddings differ in dimension"));
    }
    let data: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|e| e.components().iter().map(|c| c.as_f64()).collect())
        .collect();
    let dist = pairwise_distances(&data);
    let coords = match method {
        ProjectionMethod::Isomap => isomap(&dist, 10.min(n - 1)),
        ProjectionMethod::Tsne => tsne(&dist, (n as f64 / 4.0).clamp(1.0, 30.0), seed),
    };
    if coords.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::invalid("projection produced non-finite coordinates"));
    }
    Ok(ProjectionResult {
        method,
        coords: coords.into_iter().map(|[x, y]| [T::of(x), T::of(y)]).collect(),
        labels: labels.to_vec(),
    })
}

fn pairwise_distances(data: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = data[i].iter().zip(&data[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i][j] = s.sqrt();
            d[j][i] = d[i][j];
        }
    }
    d
}

/// Geodesic distances over the symmetric k-nearest-neighbour graph, then classical MDS.
/// Pairs in different components get twice the largest finite geodesic distance.
fn isomap(dist: &[Vec<f64>], k: usize) -> Vec<[f64; 2]> {
    let n = dist.len();
    let mut g = vec![vec![f64::INFINITY; n]; n];
    for i in 0..n {
        g[i][i] = 0.0;
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| dist[i][a].total_cmp(&dist[i][b]).then(a.cmp(&b)));
        for &j in order.iter().take(k) {
            g[i][j] = dist[i][j];
            g[j][i] = dist[i][j];
        }
    }
    for m in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = g[i][m] + g[m][j];
                if via < g[i][j] {
                    g[i][j] = via;
                }
            }
        }
    }
    let max_finite = g.iter().flatten().copied().filter(|x| x.is_finite()).fold(0.0, f64::max);
    for row in &mut g {
        for x in row.iter_mut() {
            if !x.is_finite() {
                *x = 2.0 * max_finite;
            }
        }
    }
    classical_mds(&g)
}

fn classical_mds(d: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let n = d.len();
    let sq = DMatrix::from_fn(n, n, |i, j| d[i][j] * d[i][j]);
    let row_means: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let total = row_means.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + total));
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut coords = vec![[0.0; 2]; n];
    for (axis, &c) in order.iter().take(2).enumerate() {
        let lambda = eig.eigenvalues[c].max(0.0);
        let v = eig.eigenvectors.column(c);
        // Fix the sign so the entry of largest magnitude is positive.
        let mut pivot = 0;
        for i in 0..n {
            if v[i].abs() > v[pivot].abs() + 1e-12 {
                pivot = i;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            coords[i][axis] = sign * v[i] * lambda.sqrt();
        }
    }
    coords
}

const TSNE_ITERATIONS: usize = 1000;
const EXAGGERATION_ITERATIONS: usize = 250;

/// Exact t-SNE with early exaggeration, momentum and per-coordinate gains.
fn tsne(dist: &[Vec<f64>], perplexity: f64, seed: u64) -> Vec<[f64; 2]> {
    let n = dist.len();
    let p = joint_probabilities(dist, perplexity);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let mut vel = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let eta = (n as f64 / 12.0).max(50.0);
    let mut num = vec![vec![0.0; n]; n];
    for it in 0..TSNE_ITERATIONS {
        let exaggeration = if it < EXAGGERATION_ITERATIONS { 12.0 } else { 1.0 };
        let momentum = if it < EXAGGERATION_ITERATIONS { 0.5 } else { 0.8 };
        let mut z = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                num[i][j] = 1.0 / (1.0 + dx * dx + dy * dy);
                z += num[i][j];
            }
        }
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = (exaggeration * p[i][j] - num[i][j] / z) * num[i][j];
                g[0] += 4.0 * w * (y[i][0] - y[j][0]);
                g[1] += 4.0 * w * (y[i][1] - y[j][1]);
            }
            for a in 0..2 {
                gains[i][a] = if (g[a] > 0.0) != (vel[i][a] > 0.0) {
                    gains[i][a] + 0.2
                } else {
                    (gains[i][a] * 0.8).max(0.01)
                };
                vel[i][a] = momentum * vel[i][a] - eta * gains[i][a] * g[a];
            }
        }
        for i in 0..n {
            y[i][0] += vel[i][0];
            y[i][1] += vel[i][1];
        }
        let cx = y.iter().map(|p| p[0]).sum::<f64>() / n as f64;
        let cy = y.iter().map(|p| p[1]).sum::<f64>() / n as f64;
        for p in &mut y {
            p[0] -= cx;
            p[1] -= cy;
        }
    }
    y
}

/// Symmetrized conditional probabilities whose rows match the target perplexity.
fn joint_probabilities(dist: &[Vec<f64>], perplexity: f64) -> Vec<Vec<f64>> {
    let n = dist.len();
    let target = perplexity.ln();
    let mut cond = vec![vec![0.0; n]; n];
    for i in 0..n {
        let d2: Vec<f64> = (0..n).map(|j| dist[i][j] * dist[i][j]).collect();
        let (mut lo, mut hi, mut beta) = (0.0, f64::INFINITY, 1.0);
        for _ in 0..100 {
            let min_d = (0..n).filter(|&j| j != i).map(|j| d2[j]).fold(f64::INFINITY, f64::min);
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in 0..n {
                if j == i {
                    cond[i][j] = 0.0;
                    continue;
                }
                let e = (-(d2[j] - min_d) * beta).exp();
                cond[i][j] = e;
                sum += e;
                weighted += e * (d2[j] - min_d);
            }
            for x in cond[i].iter_mut() {
                *x /= sum;
            }
            let entropy = sum.ln() + beta * weighted / sum;
            let diff = entropy - target;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
    }
    let mut p = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            p[i][j] = ((cond[i][j] + cond[j][i]) / (2.0 * n as f64)).max(1e-12);
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(rows: &[&[f64]]) -> Vec<EmbeddingVector<f64>> {
        rows.iter().map(|r| EmbeddingVector::new(r.to_vec()).unwrap()).collect()
    }

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("l{i}")).collect()
    }

    fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }

    #[test]
    fn identical_points_coincide() {
        let e = emb(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]);
        let r = project_embeddings(&e, &labels(4), ProjectionMethod::Isomap, 0).unwrap();
        for c in &r.coords {
            assert!(dist2(*c, r.coords[0]) < 1e-9);
        }
    }

    #[test]
    fn equidistant_points_form_equilateral_triangle() {
        let e = emb(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let r = project_embeddings(&e, &labels(3), ProjectionMethod::Isomap, 0).unwrap();
        let d01 = dist2(r.coords[0], r.coords[1]);
        let d02 = dist2(r.coords[0], r.coords[2]);
        let d12 = dist2(r.coords[1], r.coords[2]);
        assert!((d01 / d02 - 1.0).abs() < 1e-6 && (d01 / d12 - 1.0).abs() < 1e-6);
        assert!((d01 - 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn isomap_recovers_a_line() {
        let e = emb(&[&[0.0, 0.0], &[1.0, 0.0], &[2.0, 0.0], &[3.0, 0.0], &[4.0, 0.0]]);
        let r = project_embeddings(&e, &labels(5), ProjectionMethod::Isomap, 0).unwrap();
        assert!((dist2(r.coords[0], r.coords[4]) - 4.0).abs() < 1e-9);
    }

    #[test]
    fn deterministic_and_labels_untouched() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![(i as f64).sin(), (i as f64 * 0.3).cos(), i as f64 % 3.0]).collect();
        let e: Vec<EmbeddingVector<f64>> = rows.into_iter().map(|r| EmbeddingVector::new(r).unwrap()).collect();
        for m in [ProjectionMethod::Tsne, ProjectionMethod::Isomap] {
            let a = project_embeddings(&e, &labels(12), m, 7).unwrap();
            let b = project_embeddings(&e, &labels(12), m, 7).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.labels, labels(12));
            assert_eq!(a.coords.len(), 12);
        }
    }

    #[test]
    fn tsne_separates_clusters() {
        let mut rows = Vec::new();
        for i in 0..6 {
            rows.push(vec![0.0 + 0.01 * i as f64, 0.0]);
            rows.push(vec![10.0 + 0.01 * i as f64, 10.0]);
        }
        let e: Vec<EmbeddingVector<f64>> = rows.into_iter().map(|r| EmbeddingVector::new(r).unwrap()).collect();
        let r = project_embeddings(&e, &labels(12), ProjectionMethod::Tsne, 1).unwrap();
        let within = dist2(r.coords[0], r.coords[2]);
        let across = dist2(r.coords[0], r.coords[1]);
        assert!(across > 2.0 * within, "within {within}, across {across}");
    }

    #[test]
    fn too_few_points() {
        let e = emb(&[&[1.0], &[2.0]]);
        assert!(matches!(project_embeddings(&e, &labels(2), ProjectionMethod::Tsne, 0), Err(Error::InvalidArgument(_))));
    }
}
