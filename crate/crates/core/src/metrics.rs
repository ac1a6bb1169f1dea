//! Distribution metrics over embedding sets: FID, KID, diversity, k-NN
//! precision/recall, within-class spread and a PCA projection for plots.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Synthetic,
}

/// `N × D` embeddings with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub vectors: Array2<f64>,
    pub labels: Vec<usize>,
    pub source: Source,
}

impl EmbeddingSet {
    pub fn new(vectors: Array2<f64>, labels: Vec<usize>, source: Source) -> Result<Self> {
        if vectors.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} embeddings with {} labels",
                vectors.nrows(),
                labels.len()
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding entries".into()));
        }
        Ok(Self {
            vectors,
            labels,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn union(&self, other: &EmbeddingSet) -> Result<EmbeddingSet> {
        let vectors = ndarray::concatenate(Axis(0), &[self.vectors.view(), other.vectors.view()])
            .map_err(|e| Error::Shape(e.to_string()))?;
        let labels = self.labels.iter().chain(&other.labels).copied().collect();
        EmbeddingSet::new(vectors, labels, self.source)
    }
}

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn mean_and_cov(x: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = x.nrows();
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let centered = x - &mean;
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    (mean, cov)
}

fn check_pair(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!(
            "embedding widths differ: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    if a.nrows() < 2 || b.nrows() < 2 {
        return Err(Error::InvalidArgument(
            "moment-based metrics need at least two embeddings per set".into(),
        ));
    }
    Ok(())
}

/// `tr((S_a Σ_b S_a)^{1/2})` with `S_a = Σ_a^{1/2}`.
fn trace_sqrt_product(sa: &DMatrix<f64>, cov_b: &DMatrix<f64>) -> Result<f64> {
    let m = sa * cov_b * sa;
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let bad: Vec<f64> = eig
        .eigenvalues
        .iter()
        .copied()
        .filter(|v| !v.is_finite())
        .collect();
    if !bad.is_empty() {
        return Err(Error::NonFinite(format!(
            "covariance product eigenvalues {bad:?}"
        )));
    }
    Ok(eig.eigenvalues.iter().map(|&v| v.max(0.0).sqrt()).sum())
}

fn psd_sqrt(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(cov.clone());
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussian fits (sample covariances). When either
/// set has fewer points than dimensions, `1e-6 · I` is added to both
/// covariances. Both argument orders of the cross term are averaged, so the
/// result is exactly symmetric.
pub fn fid(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    check_pair(a, b)?;
    let d = a.ncols();
    let (ma, mut ca) = mean_and_cov(a);
    let (mb, mut cb) = mean_and_cov(b);
    if a.nrows() < d || b.nrows() < d {
        for i in 0..d {
            ca[[i, i]] += 1e-6;
            cb[[i, i]] += 1e-6;
        }
    }
    let mean_term: f64 = (&ma - &mb).mapv(|v| v * v).sum();
    let ca = to_dmatrix(&ca);
    let cb = to_dmatrix(&cb);
    let cross_ab = trace_sqrt_product(&psd_sqrt(&ca), &cb)?;
    let cross_ba = trace_sqrt_product(&psd_sqrt(&cb), &ca)?;
    let value = mean_term + ca.trace() + cb.trace() - (cross_ab + cross_ba);
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("FID evaluated to {value}")));
    }
    Ok(value.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kid {
    pub value: f64,
    /// Two-sample jackknife standard error; `NaN` below three points a set.
    pub se: f64,
}

fn poly_kernel(x: ArrayView1<f64>, y: ArrayView1<f64>, d: f64) -> f64 {
    (x.dot(&y) / d + 1.0).powi(3)
}

/// Off-diagonal row sums of the within-set kernel matrix.
fn within_row_sums(x: &Array2<f64>, d: f64) -> Vec<f64> {
    let n = x.nrows();
    let mut rows = vec![0.0; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let k = poly_kernel(x.row(i), x.row(j), d);
            rows[i] += k;
            rows[j] += k;
        }
    }
    rows
}

/// Unbiased MMD² with the cubic polynomial kernel `(x·y / D + 1)³`.
pub fn kid(a: &Array2<f64>, b: &Array2<f64>) -> Result<Kid> {
    check_pair(a, b)?;
    let d = a.ncols() as f64;
    let (m, n) = (a.nrows(), b.nrows());
    let ra = within_row_sums(a, d);
    let rb = within_row_sums(b, d);
    // Cross kernel row sums (over b for each a) and column sums.
    let mut ca = vec![0.0; m];
    let mut cb = vec![0.0; n];
    for i in 0..m {
        for j in 0..n {
            let k = poly_kernel(a.row(i), b.row(j), d);
            ca[i] += k;
            cb[j] += k;
        }
    }
    let saa: f64 = ra.iter().sum();
    let sbb: f64 = rb.iter().sum();
    // Summing the cross term both ways keeps kid(a, b) == kid(b, a).
    let sab = 0.5 * (ca.iter().sum::<f64>() + cb.iter().sum::<f64>());
    let (mf, nf) = (m as f64, n as f64);
    let value = saa / (mf * (mf - 1.0)) + sbb / (nf * (nf - 1.0)) - 2.0 * sab / (mf * nf);

    let se = if m >= 3 && n >= 3 {
        let wb = sbb / (nf * (nf - 1.0));
        let wa = saa / (mf * (mf - 1.0));
        let loo_a: Vec<f64> = (0..m)
            .map(|i| {
                (saa - 2.0 * ra[i]) / ((mf - 1.0) * (mf - 2.0)) + wb
                    - 2.0 * (sab - ca[i]) / ((mf - 1.0) * nf)
            })
            .collect();
        let loo_b: Vec<f64> = (0..n)
            .map(|j| {
                wa + (sbb - 2.0 * rb[j]) / ((nf - 1.0) * (nf - 2.0))
                    - 2.0 * (sab - cb[j]) / (mf * (nf - 1.0))
            })
            .collect();
        let spread = |v: &[f64]| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() * (v.len() as f64 - 1.0) / v.len() as f64
        };
        (spread(&loo_a) + spread(&loo_b)).sqrt()
    } else {
        f64::NAN
    };
    Ok(Kid { value, se })
}

/// Mean distance over `num_pairs` random pairs of distinct rows.
pub fn diversity<R: Rng + ?Sized>(x: &Array2<f64>, num_pairs: usize, rng: &mut R) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "diversity needs at least 2 embeddings, got {n}"
        )));
    }
    if num_pairs == 0 {
        return Err(Error::InvalidArgument("num_pairs must be positive".into()));
    }
    let mut total = 0.0;
    for _ in 0..num_pairs {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        total += euclid(x.row(i), x.row(j));
    }
    Ok(total / num_pairs as f64)
}

fn euclid(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Distance from each row to its k-th nearest other row.
fn knn_radii(x: &Array2<f64>, k: usize) -> Vec<f64> {
    let n = x.nrows();
    (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| euclid(x.row(i), x.row(j)))
                .collect();
            d.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
            d[k - 1]
        })
        .collect()
}

/// Fraction of `queries` inside at least one `support` k-NN ball.
fn coverage(support: &Array2<f64>, radii: &[f64], queries: &Array2<f64>) -> f64 {
    let inside = queries
        .outer_iter()
        .filter(|q| {
            support
                .outer_iter()
                .zip(radii)
                .any(|(s, &r)| euclid(*q, s) <= r)
        })
        .count();
    inside as f64 / queries.nrows() as f64
}

/// k-NN manifold precision and recall.
pub fn precision_recall(real: &Array2<f64>, fake: &Array2<f64>, k: usize) -> Result<(f64, f64)> {
    if real.ncols() != fake.ncols() {
        return Err(Error::Shape("embedding widths differ".into()));
    }
    if k == 0 || real.nrows() <= k || fake.nrows() <= k {
        return Err(Error::InvalidArgument(format!(
            "precision/recall with k = {k} needs more than k points per set"
        )));
    }
    let precision = coverage(real, &knn_radii(real, k), fake);
    let recall = coverage(fake, &knn_radii(fake, k), real);
    Ok((precision, recall))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WithinClass {
    pub value: f64,
    pub per_class: BTreeMap<usize, f64>,
    /// Classes skipped for having a single member.
    pub excluded: Vec<usize>,
}

/// Trace of each class's population covariance, averaged over classes.
pub fn within_class_covariance(x: &Array2<f64>, labels: &[usize]) -> Result<WithinClass> {
    if x.nrows() != labels.len() {
        return Err(Error::Shape("one label per embedding".into()));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let mut per_class = BTreeMap::new();
    let mut excluded = Vec::new();
    for (&class, members) in &groups {
        if members.len() < 2 {
            log::warn!("class {class} has a single embedding; left out of the covariance average");
            excluded.push(class);
            continue;
        }
        let rows = x.select(Axis(0), members);
        let mean = rows.mean_axis(Axis(0)).expect("non-empty");
        let trace = (&rows - &mean).mapv(|v| v * v).sum() / members.len() as f64;
        per_class.insert(class, trace);
    }
    if per_class.is_empty() {
        return Err(Error::InvalidArgument(
            "no class has two or more embeddings".into(),
        ));
    }
    let value = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(WithinClass {
        value,
        per_class,
        excluded,
    })
}

/// Principal axes fitted to a point set.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// `k × D`, strongest axis first.
    pub components: Array2<f64>,
    pub explained_variance: Vec<f64>,
}

impl Pca {
    /// Signs are fixed so each axis's largest-magnitude entry is positive.
    pub fn fit(x: &Array2<f64>, k: usize) -> Result<Self> {
        if x.nrows() < 2 {
            return Err(Error::InvalidArgument("PCA needs at least two points".into()));
        }
        if k == 0 || k > x.ncols() {
            return Err(Error::InvalidArgument(format!(
                "cannot keep {k} axes of {} dimensions",
                x.ncols()
            )));
        }
        let (mean, cov) = mean_and_cov(x);
        let eig = SymmetricEigen::new(to_dmatrix(&cov));
        let mut order: Vec<usize> = (0..x.ncols()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut components = Array2::zeros((k, x.ncols()));
        let mut explained = Vec::with_capacity(k);
        for (row, &idx) in order.iter().take(k).enumerate() {
            let v = eig.eigenvectors.column(idx);
            let pivot = v
                .iter()
                .copied()
                .max_by(|a, b| a.abs().total_cmp(&b.abs()))
                .unwrap_or(1.0);
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            for c in 0..x.ncols() {
                components[[row, c]] = sign * v[c];
            }
            explained.push(eig.eigenvalues[idx].max(0.0));
        }
        Ok(Self {
            mean,
            components,
            explained_variance: explained,
        })
    }

    pub fn project(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean).dot(&self.components.t())
    }
}

/// Class centroids of a projected point set.
pub fn centroids(points: &Array2<f64>, labels: &[usize]) -> BTreeMap<usize, Array1<f64>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    groups
        .into_iter()
        .map(|(l, idx)| {
            let rows = points.select(Axis(0), &idx);
            (l, rows.mean_axis(Axis(0)).expect("non-empty"))
        })
        .collect()
}

/// JSON written by the `evaluate-metrics` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fid: f64,
    pub kid: f64,
    pub kid_se: f64,
    pub diversity: f64,
    pub precision: f64,
    pub recall: f64,
    pub within_class_cov_real: f64,
    pub within_class_cov_union: f64,
}

/// Every metric of `fake` against `real`.
pub fn metrics_report<R: Rng + ?Sized>(
    real: &EmbeddingSet,
    fake: &EmbeddingSet,
    num_pairs: usize,
    k: usize,
    rng: &mut R,
) -> Result<MetricsReport> {
    let kid = kid(&real.vectors, &fake.vectors)?;
    let (precision, recall) = precision_recall(&real.vectors, &fake.vectors, k)?;
    let union = real.union(fake)?;
    Ok(MetricsReport {
        fid: fid(&real.vectors, &fake.vectors)?,
        kid: kid.value,
        kid_se: kid.se,
        diversity: diversity(&fake.vectors, num_pairs, rng)?,
        precision,
        recall,
        within_class_cov_real: within_class_covariance(&real.vectors, &real.labels)?.value,
        within_class_cov_union: within_class_covariance(&union.vectors, &union.labels)?.value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    #[test]
    fn hand_covariance_example() {
        let x = array![[0.0], [2.0]];
        let w = within_class_covariance(&x, &[0, 0]).unwrap();
        assert_eq!(w.value, 1.0);
    }

    #[test]
    fn singleton_class_is_excluded() {
        let x = array![[0.0], [2.0], [5.0]];
        let w = within_class_covariance(&x, &[0, 0, 1]).unwrap();
        assert_eq!(w.excluded, vec![1]);
        assert_eq!(w.value, 1.0);
    }

    #[test]
    fn diversity_of_two_points_is_their_distance() {
        let x = array![[0.0, 0.0], [3.0, 4.0]];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert_eq!(diversity(&x, 50, &mut rng).unwrap(), 5.0);
        assert!(diversity(&array![[1.0]], 5, &mut rng).is_err());
    }
}
