use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::EmbeddingSet;
use crate::error::{Error, Result};
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansParams {
    pub k: usize,
    pub batch_size: usize,
    pub max_iters: usize,
    /// Stop when the mean center movement of an iteration falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            k: 20_000,
            batch_size: 4096,
            max_iters: 100,
            tol: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel {
    pub k: usize,
    pub dim: usize,
    /// `k × dim`, row-major.
    pub centers: Vec<f64>,
    pub ids: Vec<String>,
    /// Center index per id, aligned with `ids`.
    pub assignments: Vec<u32>,
    pub inertia: f64,
}

impl KMeansModel {
    pub fn center(&self, c: usize) -> &[f64] {
        &self.centers[c * self.dim..(c + 1) * self.dim]
    }
}

const ASSIGN_BLOCK: usize = 256;

/// Nearest center (lowest index on ties) and squared distance per row.
pub(crate) fn assign(data: &[f64], dim: usize, centers: &[f64]) -> Vec<(u32, f64)> {
    let k = centers.len() / dim;
    let center_sq: Vec<f64> = centers.chunks_exact(dim).map(|c| c.iter().map(|v| v * v).sum()).collect();
    data.par_chunks(ASSIGN_BLOCK * dim)
        .flat_map_iter(|block| {
            let m = block.len() / dim;
            let mut dots = vec![0.0f64; m * k];
            // SAFETY: block is m×dim row-major, centers is k×dim row-major read
            // as its transpose (dim×k with column stride dim), dots is m×k.
            unsafe {
                matrixmultiply::dgemm(
                    m,
                    dim,
                    k,
                    1.0,
                    block.as_ptr(),
                    dim as isize,
                    1,
                    centers.as_ptr(),
                    1,
                    dim as isize,
                    0.0,
                    dots.as_mut_ptr(),
                    k as isize,
                    1,
                );
            }
            (0..m)
                .map(|r| {
                    let x = &block[r * dim..(r + 1) * dim];
                    let x_sq: f64 = x.iter().map(|v| v * v).sum();
                    let row = &dots[r * k..(r + 1) * k];
                    let mut best = (0u32, f64::INFINITY);
                    for (c, (&dot, &csq)) in row.iter().zip(&center_sq).enumerate() {
                        let d = (x_sq + csq - 2.0 * dot).max(0.0);
                        if d < best.1 {
                            best = (c as u32, d);
                        }
                    }
                    best
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding restricted to the rows listed in `pool`.
fn kmeanspp(data: &[f64], dim: usize, pool: &[usize], k: usize, rng: &mut crate::seed::Rng) -> Vec<f64> {
    let mut centers = Vec::with_capacity(k * dim);
    let mut chosen = vec![false; pool.len()];
    let first = rng.gen_range(0..pool.len());
    chosen[first] = true;
    centers.extend_from_slice(&data[pool[first] * dim..(pool[first] + 1) * dim]);
    let mut d2: Vec<f64> = pool
        .iter()
        .map(|&p| sq_dist(&data[p * dim..(p + 1) * dim], &centers[..dim]))
        .collect();
    for _ in 1..k {
        let total: f64 = d2.iter().zip(&chosen).filter(|(_, &c)| !c).map(|(d, _)| d).sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, (&d, &c)) in d2.iter().zip(&chosen).enumerate() {
                if c || d == 0.0 {
                    continue;
                }
                pick = Some(i);
                if target < d {
                    break;
                }
                target -= d;
            }
            pick.expect("positive total weight")
        } else {
            // Remaining points coincide with chosen centers.
            let free: Vec<usize> = (0..pool.len()).filter(|&i| !chosen[i]).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen[pick] = true;
        let row = &data[pool[pick] * dim..(pool[pick] + 1) * dim];
        centers.extend_from_slice(row);
        for (i, &p) in pool.iter().enumerate() {
            let d = sq_dist(&data[p * dim..(p + 1) * dim], row);
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centers
}

/// Mini-batch k-means on unit-norm embeddings.
///
/// Initialization is k-means++ on a seeded subsample of `min(10·k, n)`
/// points. Each iteration draws a batch, assigns it, and moves every
/// assigned center towards its points with a per-center `1/count` rate. A
/// final pass assigns every point; centers left empty are moved onto the
/// point farthest from its own center. Results depend only on the seed.
pub fn minibatch_kmeans(set: &EmbeddingSet, params: &KMeansParams) -> Result<KMeansModel> {
    let (n, dim, k) = (set.len(), set.dim(), params.k);
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if n < k {
        return Err(Error::TooFewPoints { count: n, k });
    }
    if params.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let data: Vec<f64> = set.as_matrix().iter().map(|&v| f64::from(v)).collect();
    for (i, row) in data.chunks_exact(dim).enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Norm(format!("embedding `{}` has norm {norm}", set.ids()[i])));
        }
    }

    let mut rng = rng_for(params.seed, &["minibatch_kmeans"]);
    let mut pool = sample(&mut rng, n, (10 * k).min(n)).into_vec();
    pool.sort_unstable();
    let mut centers = kmeanspp(&data, dim, &pool, k, &mut rng);

    let mut counts = vec![0u64; k];
    let batch_n = params.batch_size.min(n);
    let mut batch = Vec::with_capacity(batch_n * dim);
    for _ in 0..params.max_iters {
        let mut idx = sample(&mut rng, n, batch_n).into_vec();
        idx.sort_unstable();
        batch.clear();
        for &i in &idx {
            batch.extend_from_slice(&data[i * dim..(i + 1) * dim]);
        }
        let nearest = assign(&batch, dim, &centers);
        let before = centers.clone();
        for (row, &(c, _)) in batch.chunks_exact(dim).zip(&nearest) {
            let c = c as usize;
            counts[c] += 1;
            let eta = 1.0 / counts[c] as f64;
            for (cv, &x) in centers[c * dim..(c + 1) * dim].iter_mut().zip(row) {
                *cv += eta * (x - *cv);
            }
        }
        let movement: f64 = before
            .chunks_exact(dim)
            .zip(centers.chunks_exact(dim))
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .sum::<f64>()
            / k as f64;
        if movement < params.tol {
            break;
        }
    }

    let mut nearest = assign(&data, dim, &centers);
    for _ in 0..k {
        let mut sizes = vec![0usize; k];
        for &(c, _) in &nearest {
            sizes[c as usize] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            break;
        };
        // Farthest point among clusters that can spare one; lowest index on ties.
        let mut far = None::<(usize, f64)>;
        for (i, &(c, d)) in nearest.iter().enumerate() {
            if sizes[c as usize] > 1 && far.is_none_or(|(_, best)| d > best) {
                far = Some((i, d));
            }
        }
        let (p, _) = far.expect("n >= k leaves a cluster with two members");
        centers[empty * dim..(empty + 1) * dim].copy_from_slice(&data[p * dim..(p + 1) * dim]);
        nearest = assign(&data, dim, &centers);
    }

    let inertia = nearest.iter().map(|&(_, d)| d).sum();
    Ok(KMeansModel {
        k,
        dim,
        centers,
        ids: set.ids().to_vec(),
        assignments: nearest.into_iter().map(|(c, _)| c).collect(),
        inertia,
    })
}
