//! 2-D projections of latent vectors for visual inspection: an exact PCA
//! (Jacobi eigendecomposition) and a small exact t-SNE.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{CmnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMethod {
    Pca,
    Tsne,
}

/// A labeled vector to project.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedPoint {
    pub pair_id: String,
    /// Free-form role label (e.g. which side of the dialogue the vector
    /// represents); carried through for plotting.
    pub kind: String,
    pub vector: Vec<f64>,
}

/// One projected point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionPoint {
    pub pair_id: String,
    pub kind: String,
    pub x: f64,
    pub y: f64,
}

/// Projects labeled vectors to two dimensions.
///
/// Requires at least three points of equal dimension ≥ 2. PCA output has a
/// deterministic orientation: each component's largest-magnitude entry is
/// made positive. The t-SNE layout is deterministic for a given `seed`.
pub fn project_embeddings(
    points: &[EmbeddedPoint],
    method: ProjectionMethod,
    seed: u64,
) -> Result<Vec<ProjectionPoint>> {
    if points.len() < 3 {
        return Err(CmnError::TooFewObservations {
            needed: 3,
            found: points.len(),
        });
    }
    let dim = points[0].vector.len();
    for p in points {
        if p.vector.len() != dim {
            return Err(CmnError::DimensionMismatch {
                left: p.vector.len(),
                right: dim,
            });
        }
        if p.vector.iter().any(|v| !v.is_finite()) {
            return Err(CmnError::NonFinite(format!("vector for {}", p.pair_id)));
        }
    }
    if dim < 2 {
        return Err(CmnError::InvalidConfig(
            "projection needs vectors of dimension at least 2".into(),
        ));
    }

    let mut data = Array2::zeros((points.len(), dim));
    for (i, p) in points.iter().enumerate() {
        for (j, &v) in p.vector.iter().enumerate() {
            data[(i, j)] = v;
        }
    }
    let coords = match method {
        ProjectionMethod::Pca => pca_project(&data),
        ProjectionMethod::Tsne => tsne_project(&data, seed),
    };
    Ok(points
        .iter()
        .zip(coords)
        .map(|(p, (x, y))| ProjectionPoint {
            pair_id: p.pair_id.clone(),
            kind: p.kind.clone(),
            x,
            y,
        })
        .collect())
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns (eigenvalues, eigenvector columns).
fn jacobi_eigen(mut a: Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut vectors = Array2::eye(n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = vectors[(k, p)];
                    let vkq = vectors[(k, q)];
                    vectors[(k, p)] = c * vkp - s * vkq;
                    vectors[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigenvalues = (0..n).map(|i| a[(i, i)]).collect();
    (eigenvalues, vectors)
}

fn pca_project(data: &Array2<f64>) -> Vec<(f64, f64)> {
    let n = data.nrows();
    let d = data.ncols();
    let mean = data.mean_axis(Axis(0)).expect("non-empty data");
    let centered = data - &mean;
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    let (eigenvalues, vectors) = jacobi_eigen(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| {
        eigenvalues[j]
            .partial_cmp(&eigenvalues[i])
            .expect("finite eigenvalues")
            .then(i.cmp(&j))
    });
    let components: Vec<Array1<f64>> = order[..2]
        .iter()
        .map(|&c| {
            let mut col = vectors.column(c).to_owned();
            let mut strongest = 0;
            for k in 1..d {
                if col[k].abs() > col[strongest].abs() {
                    strongest = k;
                }
            }
            if col[strongest] < 0.0 {
                col.mapv_inplace(|x| -x);
            }
            col
        })
        .collect();

    (0..n)
        .map(|i| {
            let row = centered.row(i);
            (row.dot(&components[0]), row.dot(&components[1]))
        })
        .collect()
}

/// Conditional neighbor distribution for one point at a given precision, and
/// its Shannon entropy in nats.
fn neighbor_distribution(d2_row: &[f64], i: usize, beta: f64) -> (Vec<f64>, f64) {
    let n = d2_row.len();
    let mut p = vec![0.0; n];
    let mut sum = 0.0;
    for j in 0..n {
        if j != i {
            let v = (-beta * d2_row[j]).exp();
            p[j] = v;
            sum += v;
        }
    }
    let mut entropy = 0.0;
    if sum > 0.0 {
        for value in p.iter_mut() {
            *value /= sum;
            if *value > 1e-300 {
                entropy -= *value * value.ln();
            }
        }
    }
    (p, entropy)
}

fn tsne_project(data: &Array2<f64>, seed: u64) -> Vec<(f64, f64)> {
    let n = data.nrows();
    let mut d2 = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = &data.row(i) - &data.row(j);
            let dist = diff.iter().map(|v| v * v).sum();
            d2[i][j] = dist;
            d2[j][i] = dist;
        }
    }

    let perplexity = ((n as f64 - 1.0) / 3.0).clamp(2.0, 30.0);
    let target_entropy = perplexity.ln();
    let mut p_conditional = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        let mut beta = 1.0;
        let mut beta_min = f64::NEG_INFINITY;
        let mut beta_max = f64::INFINITY;
        let mut row = vec![0.0; n];
        for _ in 0..64 {
            let (p, entropy) = neighbor_distribution(&d2[i], i, beta);
            row = p;
            let gap = entropy - target_entropy;
            if gap.abs() < 1e-7 {
                break;
            }
            if gap > 0.0 {
                beta_min = beta;
                beta = if beta_max.is_infinite() {
                    beta * 2.0
                } else {
                    (beta + beta_max) / 2.0
                };
            } else {
                beta_max = beta;
                beta = if beta_min.is_infinite() {
                    beta / 2.0
                } else {
                    (beta + beta_min) / 2.0
                };
            }
        }
        p_conditional[i] = row;
    }

    // symmetrized affinities
    let mut p_joint = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p_joint[i][j] =
                    ((p_conditional[i][j] + p_conditional[j][i]) / (2.0 * n as f64)).max(1e-12);
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            [
                1e-4 * rng.sample::<f64, _>(StandardNormal),
                1e-4 * rng.sample::<f64, _>(StandardNormal),
            ]
        })
        .collect();
    let mut velocity = vec![[0.0f64; 2]; n];

    const ITERATIONS: usize = 600;
    const LEARNING_RATE: f64 = 50.0;
    const EXAGGERATION: f64 = 12.0;
    for iter in 0..ITERATIONS {
        let momentum = if iter < 300 { 0.5 } else { 0.8 };
        let p_scale = if iter < 120 { EXAGGERATION } else { 1.0 };

        let mut weights = vec![vec![0.0f64; n]; n];
        let mut weight_sum = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let w = 1.0 / (1.0 + dx * dx + dy * dy);
                weights[i][j] = w;
                weights[j][i] = w;
                weight_sum += 2.0 * w;
            }
        }

        for i in 0..n {
            let mut grad = [0.0f64; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = (weights[i][j] / weight_sum).max(1e-12);
                let coef = 4.0 * (p_scale * p_joint[i][j] - q) * weights[i][j];
                grad[0] += coef * (y[i][0] - y[j][0]);
                grad[1] += coef * (y[i][1] - y[j][1]);
            }
            velocity[i][0] = momentum * velocity[i][0] - LEARNING_RATE * grad[0];
            velocity[i][1] = momentum * velocity[i][1] - LEARNING_RATE * grad[1];
        }
        for i in 0..n {
            y[i][0] += velocity[i][0];
            y[i][1] += velocity[i][1];
        }
        // keep the layout centered
        let cx = y.iter().map(|p| p[0]).sum::<f64>() / n as f64;
        let cy = y.iter().map(|p| p[1]).sum::<f64>() / n as f64;
        for point in y.iter_mut() {
            point[0] -= cx;
            point[1] -= cy;
        }
    }

    y.into_iter().map(|p| (p[0], p[1])).collect()
}
