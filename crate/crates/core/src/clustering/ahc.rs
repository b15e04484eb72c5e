use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    Single,
    Complete,
    #[default]
    Average,
}

/// Condensed upper-triangular distance matrix.
struct Condensed {
    n: usize,
    d: Vec<f64>,
}

impl Condensed {
    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * (2 * self.n - i - 1) / 2 + (j - i - 1)
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.d[self.idx(i, j)]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.d[k] = v;
    }
}

fn cosine_distances(points: &[f64], dim: usize) -> Result<Condensed> {
    let n = points.len() / dim;
    let mut unit = Vec::with_capacity(points.len());
    for (i, row) in points.chunks_exact(dim).enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::Norm(format!("center {i} has zero norm")));
        }
        unit.extend(row.iter().map(|v| v / norm));
    }
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        let a = &unit[i * dim..(i + 1) * dim];
        for j in i + 1..n {
            let b = &unit[j * dim..(j + 1) * dim];
            d.push(1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>());
        }
    }
    Ok(Condensed { n, d })
}

/// Agglomerative clustering of `points` (`k × dim`) under cosine distance
/// until `n_clusters` remain. Each point counts once regardless of how many
/// utterances it stands for. The closest pair merges first; ties go to the
/// lexicographically smallest index pair, and the merged cluster keeps the
/// lower index. Labels are numbered by first appearance.
pub fn ahc(points: &[f64], dim: usize, n_clusters: usize, linkage: Linkage) -> Result<Vec<u32>> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(Error::Shape(format!("{} values do not form rows of {dim}", points.len())));
    }
    let k = points.len() / dim;
    if n_clusters == 0 || n_clusters > k {
        return Err(Error::Config(format!("cannot form {n_clusters} clusters from {k} points")));
    }
    let mut dist = cosine_distances(points, dim)?;
    let mut active = vec![true; k];
    let mut size = vec![1usize; k];
    let mut parent: Vec<usize> = (0..k).collect();

    // Per-row minimum over active j > i, lowest j on ties.
    let row_min = |dist: &Condensed, active: &[bool], i: usize| -> (f64, usize) {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in i + 1..k {
            if active[j] {
                let d = dist.get(i, j);
                if d < best.0 {
                    best = (d, j);
                }
            }
        }
        best
    };
    let mut cache: Vec<(f64, usize)> = (0..k).map(|i| row_min(&dist, &active, i)).collect();

    for _ in 0..k - n_clusters {
        let mut pick = (f64::INFINITY, usize::MAX, usize::MAX);
        for i in 0..k {
            if active[i] && cache[i].1 != usize::MAX && cache[i].0 < pick.0 {
                pick = (cache[i].0, i, cache[i].1);
            }
        }
        let (_, a, b) = pick;
        active[b] = false;
        parent[b] = a;
        for m in 0..k {
            if !active[m] || m == a {
                continue;
            }
            let (da, db) = (dist.get(a, m), dist.get(b, m));
            let merged = match linkage {
                Linkage::Single => da.min(db),
                Linkage::Complete => da.max(db),
                Linkage::Average => (size[a] as f64 * da + size[b] as f64 * db) / (size[a] + size[b]) as f64,
            };
            dist.set(a, m, merged);
        }
        size[a] += size[b];
        cache[a] = row_min(&dist, &active, a);
        for m in 0..k {
            if !active[m] || m == a {
                continue;
            }
            if m < a {
                let (cd, cj) = cache[m];
                if cj == a || cj == b {
                    cache[m] = row_min(&dist, &active, m);
                } else {
                    let d = dist.get(m, a);
                    if d < cd || (d == cd && a < cj) {
                        cache[m] = (d, a);
                    }
                }
            } else if m < b && cache[m].1 == b {
                cache[m] = row_min(&dist, &active, m);
            }
        }
    }

    let root = |mut i: usize| {
        while parent[i] != i {
            i = parent[i];
        }
        i
    };
    let mut label_of_root = vec![u32::MAX; k];
    let mut next = 0u32;
    Ok((0..k)
        .map(|i| {
            let r = root(i);
            if label_of_root[r] == u32::MAX {
                label_of_root[r] = next;
                next += 1;
            }
            label_of_root[r]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng;
    use rand::Rng;

    /// Brute force: recompute every inter-cluster linkage from the original
    /// pairwise distances at each step.
    fn brute_force(points: &[f64], dim: usize, n_clusters: usize, linkage: Linkage) -> Vec<u32> {
        let k = points.len() / dim;
        let cos = |i: usize, j: usize| {
            let (a, b) = (&points[i * dim..(i + 1) * dim], &points[j * dim..(j + 1) * dim]);
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            1.0 - dot / (na * nb)
        };
        let mut clusters: Vec<Vec<usize>> = (0..k).map(|i| vec![i]).collect();
        while clusters.len() > n_clusters {
            let mut best = (f64::INFINITY, 0, 0);
            for x in 0..clusters.len() {
                for y in x + 1..clusters.len() {
                    let pairs = clusters[x].iter().flat_map(|&i| clusters[y].iter().map(move |&j| (i, j)));
                    let ds: Vec<f64> = pairs.map(|(i, j)| cos(i, j)).collect();
                    let d = match linkage {
                        Linkage::Single => ds.iter().cloned().fold(f64::INFINITY, f64::min),
                        Linkage::Complete => ds.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                        Linkage::Average => ds.iter().sum::<f64>() / ds.len() as f64,
                    };
                    if d < best.0 - 1e-12 {
                        best = (d, x, y);
                    }
                }
            }
            let moved = clusters.remove(best.2);
            clusters[best.1].extend(moved);
        }
        let mut labels = vec![0; k];
        clusters.sort_by_key(|c| *c.iter().min().unwrap());
        for (l, c) in clusters.iter().enumerate() {
            for &i in c {
                labels[i] = l as u32;
            }
        }
        labels
    }

    fn cones(seed: u64) -> (Vec<f64>, Vec<u32>) {
        let mut r = rng(seed);
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for _ in 0..30 {
            let cone = r.gen_range(0..3usize);
            let mut v = vec![0.0; 3];
            v[cone] = 1.0;
            for x in v.iter_mut() {
                *x += r.gen_range(-0.1..0.1);
            }
            pts.extend(v);
            truth.push(cone as u32);
        }
        (pts, truth)
    }

    fn same_partition(a: &[u32], b: &[u32]) -> bool {
        (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
    }

    #[test]
    fn cones_match_membership_and_oracle() {
        for seed in 0..5 {
            let (pts, truth) = cones(seed);
            let labels = ahc(&pts, 3, 3, Linkage::Average).unwrap();
            assert!(same_partition(&labels, &truth));
            for link in [Linkage::Single, Linkage::Complete, Linkage::Average] {
                for n in [1, 2, 5, 12, 29] {
                    assert_eq!(ahc(&pts, 3, n, link).unwrap(), brute_force(&pts, 3, n, link), "{link:?} n={n}");
                }
            }
        }
    }

    #[test]
    fn degenerate_counts() {
        let (pts, _) = cones(9);
        assert_eq!(ahc(&pts, 3, 30, Linkage::Average).unwrap(), (0..30).collect::<Vec<u32>>());
        assert!(ahc(&pts, 3, 1, Linkage::Average).unwrap().iter().all(|&l| l == 0));
        assert!(matches!(ahc(&pts, 3, 31, Linkage::Average), Err(Error::Config(_))));
    }

    #[test]
    fn exact_ties_take_smallest_pair() {
        // Four points on two axes; (0,1) and (2,3) are equally close.
        let pts = [1.0, 0.0, 1.0, 0.1, 0.0, 1.0, 0.1, 1.0];
        assert_eq!(ahc(&pts, 2, 3, Linkage::Average).unwrap(), vec![0, 0, 1, 2]);
    }
}
