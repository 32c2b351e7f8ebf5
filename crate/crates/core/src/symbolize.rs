//! Differentiable symbolization: windows -> embeddings -> soft cluster
//! assignment -> region aggregation -> fuzzy interpretation vector.
//!
//! The same module carries the hard (Lloyd) k-means used for initialization
//! and for the non-differentiable baseline, plus the clustering objective.

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::{softmax_into, softmax_vjp, Matrix};
use crate::nn::{DenseNet, NetGrads, NetTrace, RngState};

/// One stride-1 subsequence of a parent sequence.
#[derive(Debug, Clone)]
pub struct Window {
    pub values: Vec<f64>,
    pub start: usize,
}

/// The K cluster representations in embedding space.
#[derive(Debug, Clone)]
pub struct ClusterBank {
    pub centers: Vec<Vec<f64>>,
}

impl ClusterBank {
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers.first().map(|c| c.len()).unwrap_or(0)
    }
}

/// Hyperparameters of the symbolization step.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolizerConfig {
    /// Window length l.
    pub window_len: usize,
    /// Number of regions R the sequence is split into.
    pub regions: usize,
    /// Number of clusters K.
    pub clusters: usize,
    /// Embedding dimension p.
    pub embed_dim: usize,
    /// Assignment sharpness; larger means closer to a hard minimum.
    pub alpha: f64,
}

impl Default for SymbolizerConfig {
    fn default() -> Self {
        SymbolizerConfig {
            window_len: 5,
            regions: 10,
            clusters: 5,
            embed_dim: 8,
            alpha: 1000.0,
        }
    }
}

impl SymbolizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.regions == 0 || self.clusters == 0 || self.embed_dim == 0 {
            return Err(Error::invalid_argument(
                "symbolizer config: l, R, K, p must all be at least 1",
            ));
        }
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(Error::invalid_argument(
                "symbolizer config: alpha must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

/// Fuzzy truth degrees of all pattern/region atoms, flattened region-major:
/// entry j*K + i is pattern i in region j, so each region block of K entries
/// is a simplex.
#[derive(Debug, Clone)]
pub struct FuzzyInterpretationVector {
    pub values: Vec<f64>,
    pub clusters: usize,
    pub regions: usize,
}

impl FuzzyInterpretationVector {
    #[inline]
    pub fn index(clusters: usize, pattern: usize, region: usize) -> usize {
        region * clusters + pattern
    }

    /// Inverse of `index`: (pattern, region) of a flat position.
    #[inline]
    pub fn atom(clusters: usize, flat: usize) -> (usize, usize) {
        (flat % clusters, flat / clusters)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Soft cluster-membership tensor of shape K x l_p x R; unoccupied window
/// slots stay all-zero.
#[derive(Debug, Clone)]
pub struct ClusterIndexTensor {
    pub clusters: usize,
    pub slots: usize,
    pub regions: usize,
    values: Vec<f64>,
}

impl ClusterIndexTensor {
    pub fn zeros(clusters: usize, slots: usize, regions: usize) -> Self {
        ClusterIndexTensor {
            clusters,
            slots,
            regions,
            values: vec![0.0; clusters * slots * regions],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize, j: usize) -> f64 {
        self.values[(i * self.slots + k) * self.regions + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, k: usize, j: usize, v: f64) {
        self.values[(i * self.slots + k) * self.regions + j] = v;
    }

    /// Places per-window assignment vectors into their region slots, in window
    /// order within each region.
    pub fn from_assignments(
        assigns: &[Vec<f64>],
        region_of: &[usize],
        clusters: usize,
        slots: usize,
        regions: usize,
    ) -> Result<Self> {
        if assigns.len() != region_of.len() {
            return Err(Error::invalid_argument(
                "cluster index tensor: assignment/region length mismatch",
            ));
        }
        let mut tensor = Self::zeros(clusters, slots, regions);
        let mut next_slot = vec![0usize; regions];
        for (a, &j) in assigns.iter().zip(region_of) {
            let k = next_slot[j];
            if k >= slots {
                return Err(Error::invalid_argument(
                    "cluster index tensor: region holds more windows than slots",
                ));
            }
            for (i, &v) in a.iter().enumerate() {
                tensor.set(i, k, j, v);
            }
            next_slot[j] += 1;
        }
        Ok(tensor)
    }
}

/// Per-region cluster distribution; every column sums to 1.
#[derive(Debug, Clone)]
pub struct RegionClusterMatrix(pub Matrix);

/// All stride-1 windows of length l, in increasing start order.
pub fn slide_windows(x: &[f64], l: usize) -> Result<Vec<Window>> {
    if l == 0 || l > x.len() {
        return Err(Error::invalid_argument(format!(
            "slide_windows: window length {} outside 1..={}",
            l,
            x.len()
        )));
    }
    Ok((0..=x.len() - l)
        .map(|start| Window {
            values: x[start..start + l].to_vec(),
            start,
        })
        .collect())
}

/// Region length when a sequence of length `t` is cut into `r` regions.
#[inline]
pub fn region_len(t: usize, r: usize) -> usize {
    t.div_ceil(r)
}

/// Region of a window, decided by the location of its first point.
#[inline]
pub fn assign_region(start_index: usize, t: usize, r: usize) -> usize {
    start_index / region_len(t, r)
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Softmin weights over squared distances to every center, computed in
/// log-space with max-shift so alpha*distance cannot overflow.
pub fn soft_assign(z: &[f64], bank: &ClusterBank, alpha: f64) -> Result<Vec<f64>> {
    if bank.centers.is_empty() {
        return Err(Error::invalid_argument("soft_assign: empty cluster bank"));
    }
    if bank.dim() != z.len() {
        return Err(Error::invalid_argument(format!(
            "soft_assign: embedding dim {} vs center dim {}",
            z.len(),
            bank.dim()
        )));
    }
    let logits: Vec<f64> = bank
        .centers
        .iter()
        .map(|c| -alpha * squared_distance(z, c))
        .collect();
    let mut out = vec![0.0; logits.len()];
    softmax_into(&logits, &mut out);
    Ok(out)
}

/// Sums the tensor over window slots and softmaxes each region column.
pub fn region_cluster_matrix(c_x: &ClusterIndexTensor) -> RegionClusterMatrix {
    let mut sums = Matrix::zeros(c_x.clusters, c_x.regions);
    for i in 0..c_x.clusters {
        for k in 0..c_x.slots {
            for j in 0..c_x.regions {
                let v = c_x.get(i, k, j);
                if v != 0.0 {
                    *sums.row_mut(i).get_mut(j).unwrap() += v;
                }
            }
        }
    }
    column_softmax(&sums)
}

fn column_softmax(sums: &Matrix) -> RegionClusterMatrix {
    let mut out = Matrix::zeros(sums.rows, sums.cols);
    let mut col = vec![0.0; sums.rows];
    let mut soft = vec![0.0; sums.rows];
    for j in 0..sums.cols {
        for i in 0..sums.rows {
            col[i] = sums.get(i, j);
        }
        softmax_into(&col, &mut soft);
        for i in 0..sums.rows {
            out.set(i, j, soft[i]);
        }
    }
    RegionClusterMatrix(out)
}

fn flatten_region_major(m: &Matrix) -> Vec<f64> {
    let mut v = vec![0.0; m.rows * m.cols];
    for j in 0..m.cols {
        for i in 0..m.rows {
            v[j * m.rows + i] = m.get(i, j);
        }
    }
    v
}

/// Everything the forward symbolization computed, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct SymbolizeTrace {
    pub seq_len: usize,
    pub windows: Vec<Window>,
    pub enc_traces: Vec<NetTrace>,
    pub embeddings: Vec<Vec<f64>>,
    pub sq_dists: Vec<Vec<f64>>,
    pub assigns: Vec<Vec<f64>>,
    pub region_of: Vec<usize>,
    pub col_sums: Matrix,
    pub region_matrix: RegionClusterMatrix,
    pub vector: FuzzyInterpretationVector,
}

/// Full differentiable symbolization of one sequence, keeping the trace.
pub fn symbolize_trace(
    x: &[f64],
    encoder: &DenseNet,
    bank: &ClusterBank,
    cfg: &SymbolizerConfig,
) -> Result<SymbolizeTrace> {
    cfg.validate()?;
    if encoder.input_size() != cfg.window_len {
        return Err(Error::invalid_argument(format!(
            "symbolize: encoder expects input {} but window length is {}",
            encoder.input_size(),
            cfg.window_len
        )));
    }
    if bank.k() != cfg.clusters {
        return Err(Error::invalid_argument(
            "symbolize: bank size differs from configured cluster count",
        ));
    }
    let windows = slide_windows(x, cfg.window_len)?;
    let mut enc_traces = Vec::with_capacity(windows.len());
    let mut embeddings = Vec::with_capacity(windows.len());
    let mut sq_dists = Vec::with_capacity(windows.len());
    let mut assigns = Vec::with_capacity(windows.len());
    let mut region_of = Vec::with_capacity(windows.len());
    let mut col_sums = Matrix::zeros(cfg.clusters, cfg.regions);
    for w in &windows {
        let trace = encoder.forward(&w.values)?;
        let z = trace.output().to_vec();
        let dists: Vec<f64> = bank.centers.iter().map(|c| squared_distance(&z, c)).collect();
        let gamma = soft_assign(&z, bank, cfg.alpha)?;
        let region = assign_region(w.start, x.len(), cfg.regions);
        for (i, g) in gamma.iter().enumerate() {
            let cur = col_sums.get(i, region);
            col_sums.set(i, region, cur + g);
        }
        enc_traces.push(trace);
        embeddings.push(z);
        sq_dists.push(dists);
        assigns.push(gamma);
        region_of.push(region);
    }
    let region_matrix = column_softmax(&col_sums);
    let values = flatten_region_major(&region_matrix.0);
    Ok(SymbolizeTrace {
        seq_len: x.len(),
        windows,
        enc_traces,
        embeddings,
        sq_dists,
        assigns,
        region_of,
        col_sums,
        region_matrix,
        vector: FuzzyInterpretationVector {
            values,
            clusters: cfg.clusters,
            regions: cfg.regions,
        },
    })
}

/// Fuzzy interpretation vector of one sequence.
pub fn symbolize(
    x: &[f64],
    encoder: &DenseNet,
    bank: &ClusterBank,
    cfg: &SymbolizerConfig,
) -> Result<FuzzyInterpretationVector> {
    Ok(symbolize_trace(x, encoder, bank, cfg)?.vector)
}

/// Gradients flowing back from the interpretation vector (and optionally the
/// clustering loss and extra per-window embedding cotangents) into the encoder
/// parameters and the cluster bank.
///
/// `upstream` is d(loss)/d(vector); `cluster_weight` folds in the term
/// `cluster_weight * sum_w sum_k d_{w,k} g_{w,k}`; `extra_dz`, when present,
/// adds per-window gradients arriving at the embeddings from elsewhere (the
/// reconstruction path).
pub fn symbolize_vjp(
    trace: &SymbolizeTrace,
    encoder: &DenseNet,
    bank: &ClusterBank,
    alpha: f64,
    upstream: &[f64],
    cluster_weight: f64,
    extra_dz: Option<&[Vec<f64>]>,
) -> Result<(NetGrads, Vec<Vec<f64>>)> {
    let k = trace.vector.clusters;
    let r = trace.vector.regions;
    if upstream.len() != k * r {
        return Err(Error::invalid_argument(format!(
            "symbolize_vjp: upstream length {} vs vector length {}",
            upstream.len(),
            k * r
        )));
    }
    // back through the region-major flatten and per-column softmax
    let mut d_col_sums = Matrix::zeros(k, r);
    let mut s_col = vec![0.0; k];
    let mut u_col = vec![0.0; k];
    for j in 0..r {
        for i in 0..k {
            s_col[i] = trace.region_matrix.0.get(i, j);
            u_col[i] = upstream[j * k + i];
        }
        let d = softmax_vjp(&s_col, &u_col);
        for i in 0..k {
            d_col_sums.set(i, j, d[i]);
        }
    }

    let mut enc_grads = NetGrads::zeros_like(encoder);
    let mut bank_grads = vec![vec![0.0; bank.dim()]; bank.k()];
    for (w, gamma) in trace.assigns.iter().enumerate() {
        let region = trace.region_of[w];
        let dists = &trace.sq_dists[w];
        let z = &trace.embeddings[w];
        // total gradient arriving at the assignment vector: region aggregation
        // path plus the direct weighting inside the clustering term
        let u: Vec<f64> = (0..k)
            .map(|i| d_col_sums.get(i, region) + cluster_weight * dists[i])
            .collect();
        let dot: f64 = u.iter().zip(gamma).map(|(a, b)| a * b).sum();
        // d(loss)/d(dist_k): direct clustering term plus softmin reweighting
        let dd: Vec<f64> = (0..k)
            .map(|i| cluster_weight * gamma[i] - alpha * gamma[i] * (u[i] - dot))
            .collect();
        let mut dz = vec![0.0; z.len()];
        for (i, center) in bank.centers.iter().enumerate() {
            let g = dd[i];
            if g == 0.0 {
                continue;
            }
            for (j, (zj, cj)) in z.iter().zip(center).enumerate() {
                let diff = zj - cj;
                dz[j] += g * 2.0 * diff;
                bank_grads[i][j] -= g * 2.0 * diff;
            }
        }
        if let Some(extra) = extra_dz {
            for (a, b) in dz.iter_mut().zip(&extra[w]) {
                *a += b;
            }
        }
        let (g, _) = encoder.backward(&trace.enc_traces[w], &dz)?;
        enc_grads.accumulate(&g);
    }
    Ok((enc_grads, bank_grads))
}

/// Clustering penalty of a finished trace: sum over windows of
/// sum_k d_{w,k} g_{w,k}.
pub fn cluster_loss(trace: &SymbolizeTrace) -> f64 {
    trace
        .sq_dists
        .iter()
        .zip(&trace.assigns)
        .map(|(d, g)| d.iter().zip(g).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

/// Hard per-column argmax; exactly one 1 per column, ties to the lowest index.
pub fn discretize(cp: &RegionClusterMatrix) -> Matrix {
    let m = &cp.0;
    let mut out = Matrix::zeros(m.rows, m.cols);
    for j in 0..m.cols {
        let mut best = 0;
        let mut best_val = m.get(0, j);
        for i in 1..m.rows {
            let v = m.get(i, j);
            if v > best_val {
                best = i;
                best_val = v;
            }
        }
        out.set(best, j, 1.0);
    }
    out
}

/// Region-major 0/1 flattening of a discretized region matrix.
pub fn discretize_flat(cp: &RegionClusterMatrix) -> Vec<f64> {
    flatten_region_major(&discretize(cp))
}

/// Standard Lloyd k-means with k-means++ seeding. Iterates until assignments
/// stabilize or `max_iter`; an emptied cluster is re-seeded at the point
/// farthest from its current center.
pub fn lloyd_kmeans(
    points: &[Vec<f64>],
    k: usize,
    rng: &mut RngState,
    max_iter: usize,
) -> Result<ClusterBank> {
    if k == 0 {
        return Err(Error::invalid_argument("lloyd_kmeans: k must be positive"));
    }
    if points.len() < k {
        return Err(Error::invalid_argument(format!(
            "lloyd_kmeans: {} points but k = {}",
            points.len(),
            k
        )));
    }
    let dim = points[0].len();
    let mut centers = seed_plus_plus(points, k, rng);
    let mut assignment = vec![usize::MAX; points.len()];
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        for (pi, p) in points.iter().enumerate() {
            let c = nearest_center(p, &centers);
            if assignment[pi] != c {
                assignment[pi] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // relocate to the point farthest from its assigned center
                let far = points
                    .iter()
                    .enumerate()
                    .max_by(|(i, p), (j, q)| {
                        let da = squared_distance(p, &centers[assignment[*i]]);
                        let db = squared_distance(q, &centers[assignment[*j]]);
                        da.partial_cmp(&db).unwrap()
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                centers[c] = points[far].clone();
            } else {
                for (cv, s) in centers[c].iter_mut().zip(&sums[c]) {
                    *cv = s / counts[c] as f64;
                }
            }
        }
    }
    Ok(ClusterBank { centers })
}

fn nearest_center(p: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = squared_distance(p, &centers[0]);
    for (i, c) in centers.iter().enumerate().skip(1) {
        let d = squared_distance(p, c);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut RngState) -> Vec<Vec<f64>> {
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..points.len())].clone());
    let mut dists: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = dists.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, d) in dists.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[next].clone());
        for (d, p) in dists.iter_mut().zip(points) {
            let nd = squared_distance(p, centers.last().unwrap());
            if nd < *d {
                *d = nd;
            }
        }
    }
    centers
}

/// Total inertia of a hard assignment; used to pick the best of restarts.
pub fn kmeans_inertia(points: &[Vec<f64>], bank: &ClusterBank) -> f64 {
    points
        .iter()
        .map(|p| squared_distance(p, &bank.centers[nearest_center(p, &bank.centers)]))
        .sum()
}

/// Hard nearest-center index of one embedding.
pub fn hard_assign(z: &[f64], bank: &ClusterBank) -> usize {
    nearest_center(z, &bank.centers)
}

/// Clustering objective over a set of windows: reconstruction plus the
/// softmin-weighted embedding-to-center penalty.
pub fn dkm_objective(
    windows: &[Window],
    encoder: &DenseNet,
    decoder: &DenseNet,
    bank: &ClusterBank,
    alpha: f64,
    lambda1: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for w in windows {
        let enc = encoder.forward(&w.values)?;
        let z = enc.output();
        let dec = decoder.forward(z)?;
        total += squared_distance(&w.values, dec.output());
        let gamma = soft_assign(z, bank, alpha)?;
        for (c, g) in bank.centers.iter().zip(&gamma) {
            total += lambda1 * squared_distance(z, c) * g;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{rng_from_seed, Activation};
    use proptest::prelude::*;

    #[test]
    fn slide_window_counts_and_starts() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let w = slide_windows(&x, 5).unwrap();
        assert_eq!(w.len(), 6);
        for (i, win) in w.iter().enumerate() {
            assert_eq!(win.start, i);
        }
    }

    #[test]
    fn slide_window_full_length() {
        let x = vec![1.0, 2.0, 3.0];
        let w = slide_windows(&x, 3).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].values, x);
    }

    #[test]
    fn slide_window_rejects_oversize() {
        assert!(slide_windows(&[1.0, 2.0], 3).is_err());
    }

    #[test]
    fn slide_window_matches_index_arithmetic() {
        let mut rng = rng_from_seed(3);
        let x: Vec<f64> = (0..37).map(|_| rng.random::<f64>()).collect();
        for l in [1, 4, 9] {
            for (i, w) in slide_windows(&x, l).unwrap().iter().enumerate() {
                assert_eq!(w.values, &x[i..i + l]);
            }
        }
    }

    #[test]
    fn soft_assign_equidistant() {
        let bank = ClusterBank {
            centers: vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
        };
        let g = soft_assign(&[0.0, 0.5], &bank, 17.0).unwrap();
        assert!((g[0] - 0.5).abs() < 1e-12);
        assert!((g[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn soft_assign_alpha_zero_uniform() {
        let bank = ClusterBank {
            centers: vec![vec![0.0], vec![5.0], vec![9.0]],
        };
        let g = soft_assign(&[1.0], &bank, 0.0).unwrap();
        for v in g {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_assign_sharp_alpha_closed_form() {
        // distances 0.10 and 0.11 at alpha 1000: nearest weight is
        // 1/(1+exp(-1000*0.01))
        let z = vec![0.0];
        let bank = ClusterBank {
            centers: vec![vec![0.10_f64.sqrt()], vec![0.11_f64.sqrt()]],
        };
        let g = soft_assign(&z, &bank, 1000.0).unwrap();
        let expected = 1.0 / (1.0 + (-10.0_f64).exp());
        assert!((g[0] - expected).abs() < 1e-12);
        assert!(g[0] > 1.0 - 1e-4);
    }

    #[test]
    fn soft_assign_rejects_empty_bank() {
        let bank = ClusterBank { centers: vec![] };
        assert!(soft_assign(&[0.0], &bank, 1.0).is_err());
    }

    #[test]
    fn regions_partition_examples() {
        // T=10, R=2: starts 0..4 are region 0, start 5 is region 1
        for s in 0..5 {
            assert_eq!(assign_region(s, 10, 2), 0);
        }
        assert_eq!(assign_region(5, 10, 2), 1);
        for s in 0..8 {
            assert_eq!(assign_region(s, 11, 1), 0);
        }
    }

    #[test]
    fn regions_match_interval_oracle() {
        let mut rng = rng_from_seed(11);
        for _ in 0..200 {
            let t = rng.random_range(2..60usize);
            let r = rng.random_range(1..=t);
            let lr = t.div_ceil(r);
            // brute force: region j covers [j*lr, (j+1)*lr)
            for start in 0..t {
                let expect = (0..r)
                    .find(|j| start >= j * lr && start < (j + 1) * lr)
                    .unwrap();
                assert_eq!(assign_region(start, t, r), expect);
                assert!(assign_region(start, t, r) < r);
            }
        }
    }

    #[test]
    fn region_matrix_single_one_hot_window() {
        let mut t = ClusterIndexTensor::zeros(2, 3, 1);
        t.set(0, 0, 0, 1.0);
        let cp = region_cluster_matrix(&t);
        let e = std::f64::consts::E;
        assert!((cp.0.get(0, 0) - e / (e + 1.0)).abs() < 1e-12);
        assert!((cp.0.get(1, 0) - 1.0 / (e + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn region_matrix_equal_sums_uniform() {
        let mut t = ClusterIndexTensor::zeros(3, 2, 2);
        for i in 0..3 {
            for k in 0..2 {
                for j in 0..2 {
                    t.set(i, k, j, 0.4);
                }
            }
        }
        let cp = region_cluster_matrix(&t);
        for j in 0..2 {
            for i in 0..3 {
                assert!((cp.0.get(i, j) - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn region_matrix_empty_region_is_uniform() {
        let t = ClusterIndexTensor::zeros(4, 2, 3);
        let cp = region_cluster_matrix(&t);
        for j in 0..3 {
            for i in 0..4 {
                assert!((cp.0.get(i, j) - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn region_matrix_matches_two_loop_oracle() {
        let mut rng = rng_from_seed(5);
        let (k, lp, r) = (3, 4, 2);
        let mut t = ClusterIndexTensor::zeros(k, lp, r);
        for i in 0..k {
            for s in 0..lp {
                for j in 0..r {
                    t.set(i, s, j, rng.random::<f64>());
                }
            }
        }
        let cp = region_cluster_matrix(&t);
        // independent two-loop sum then softmax
        for j in 0..r {
            let mut sums = vec![0.0; k];
            for (i, sum) in sums.iter_mut().enumerate() {
                for s in 0..lp {
                    *sum += t.get(i, s, j);
                }
            }
            let denom: f64 = sums.iter().map(|v| v.exp()).sum();
            for i in 0..k {
                assert!((cp.0.get(i, j) - sums[i].exp() / denom).abs() < 1e-12);
            }
        }
    }

    fn small_setup() -> (Vec<f64>, DenseNet, ClusterBank, SymbolizerConfig) {
        let mut rng = rng_from_seed(21);
        let cfg = SymbolizerConfig {
            window_len: 3,
            regions: 2,
            clusters: 2,
            embed_dim: 4,
            alpha: 2.0,
        };
        let encoder = DenseNet::new_glorot(
            &[3, 6, 4],
            &[Activation::Relu, Activation::Linear],
            &mut rng,
        )
        .unwrap();
        let bank = ClusterBank {
            centers: (0..2)
                .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
        };
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        (x, encoder, bank, cfg)
    }

    #[test]
    fn symbolize_shape_and_block_sums() {
        let (x, encoder, bank, cfg) = small_setup();
        let v = symbolize(&x, &encoder, &bank, &cfg).unwrap();
        assert_eq!(v.len(), cfg.clusters * cfg.regions);
        for j in 0..cfg.regions {
            let block: f64 = (0..cfg.clusters)
                .map(|i| v.values[FuzzyInterpretationVector::index(cfg.clusters, i, j)])
                .sum();
            assert!((block - 1.0).abs() < 1e-12);
        }
        assert!(v.values.iter().all(|&e| e > 0.0 && e < 1.0));
    }

    #[test]
    fn symbolize_matches_componentwise_composition() {
        let (x, encoder, bank, cfg) = small_setup();
        let v = symbolize(&x, &encoder, &bank, &cfg).unwrap();
        // explicit four-step composition through the cluster index tensor
        let windows = slide_windows(&x, cfg.window_len).unwrap();
        let assigns: Vec<Vec<f64>> = windows
            .iter()
            .map(|w| {
                let z = encoder.forward(&w.values).unwrap().output().to_vec();
                soft_assign(&z, &bank, cfg.alpha).unwrap()
            })
            .collect();
        let regions: Vec<usize> = windows
            .iter()
            .map(|w| assign_region(w.start, x.len(), cfg.regions))
            .collect();
        let tensor = ClusterIndexTensor::from_assignments(
            &assigns,
            &regions,
            cfg.clusters,
            region_len(x.len(), cfg.regions),
            cfg.regions,
        )
        .unwrap();
        let cp = region_cluster_matrix(&tensor);
        let flat = flatten_region_major(&cp.0);
        for (a, b) in v.values.iter().zip(&flat) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn discretize_examples() {
        let cp = RegionClusterMatrix(Matrix::from_rows(&[vec![0.7, 0.5], vec![0.3, 0.5]]).unwrap());
        let d = discretize(&cp);
        assert_eq!(d.get(0, 0), 1.0);
        assert_eq!(d.get(1, 0), 0.0);
        // tie goes to the lowest index
        assert_eq!(d.get(0, 1), 1.0);
        assert_eq!(d.get(1, 1), 0.0);
    }

    #[test]
    fn discretize_matches_argmax_oracle() {
        let mut rng = rng_from_seed(9);
        for _ in 0..50 {
            let k = rng.random_range(2..5usize);
            let r = rng.random_range(1..6usize);
            let rows: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..r).map(|_| rng.random::<f64>()).collect())
                .collect();
            let cp = RegionClusterMatrix(Matrix::from_rows(&rows).unwrap());
            let d = discretize(&cp);
            for j in 0..r {
                let mut best = 0;
                for i in 1..k {
                    if rows[i][j] > rows[best][j] {
                        best = i;
                    }
                }
                let ones: Vec<usize> = (0..k).filter(|&i| d.get(i, j) == 1.0).collect();
                assert_eq!(ones, vec![best]);
            }
        }
    }

    #[test]
    fn kmeans_single_cluster_is_mean() {
        let points = vec![vec![1.0, 0.0], vec![3.0, 2.0], vec![2.0, 4.0]];
        let mut rng = rng_from_seed(1);
        let bank = lloyd_kmeans(&points, 1, &mut rng, 100).unwrap();
        assert!((bank.centers[0][0] - 2.0).abs() < 1e-12);
        assert!((bank.centers[0][1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn kmeans_identical_points() {
        let points = vec![vec![0.5, 0.5]; 6];
        let mut rng = rng_from_seed(2);
        let bank = lloyd_kmeans(&points, 2, &mut rng, 100).unwrap();
        for c in &bank.centers {
            assert_eq!(c, &vec![0.5, 0.5]);
        }
    }

    #[test]
    fn kmeans_separated_blobs() {
        use rand_distr::{Distribution, Normal};
        let mut rng = rng_from_seed(8);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let mut points = Vec::new();
        for _ in 0..100 {
            points.push(vec![noise.sample(&mut rng), noise.sample(&mut rng)]);
        }
        for _ in 0..100 {
            points.push(vec![5.0 + noise.sample(&mut rng), 5.0 + noise.sample(&mut rng)]);
        }
        let mean = |pts: &[Vec<f64>]| {
            let n = pts.len() as f64;
            vec![
                pts.iter().map(|p| p[0]).sum::<f64>() / n,
                pts.iter().map(|p| p[1]).sum::<f64>() / n,
            ]
        };
        let m0 = mean(&points[..100]);
        let m1 = mean(&points[100..]);
        let bank = lloyd_kmeans(&points, 2, &mut rng, 100).unwrap();
        let mut found0 = false;
        let mut found1 = false;
        for c in &bank.centers {
            if squared_distance(c, &m0).sqrt() < 0.1 {
                found0 = true;
            }
            if squared_distance(c, &m1).sqrt() < 0.1 {
                found1 = true;
            }
        }
        assert!(found0 && found1);
    }

    #[test]
    fn kmeans_rejects_too_few_points() {
        let mut rng = rng_from_seed(1);
        assert!(lloyd_kmeans(&[vec![0.0]], 2, &mut rng, 10).is_err());
    }

    #[test]
    fn dkm_objective_zero_for_perfect_fit() {
        // identity encoder/decoder with every window sitting on a center
        let id = |n: usize| {
            let mut w = Matrix::zeros(n, n);
            for i in 0..n {
                w.set(i, i, 1.0);
            }
            DenseNet {
                layers: vec![crate::nn::DenseLayer {
                    weights: w,
                    bias: vec![0.0; n],
                    activation: Activation::Linear,
                }],
            }
        };
        let windows = vec![
            Window {
                values: vec![1.0, 0.0],
                start: 0,
            },
            Window {
                values: vec![0.0, 1.0],
                start: 1,
            },
        ];
        let bank = ClusterBank {
            centers: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        let v = dkm_objective(&windows, &id(2), &id(2), &bank, 1000.0, 1.0).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn dkm_objective_lambda_zero_is_reconstruction() {
        let (x, encoder, bank, cfg) = small_setup();
        let mut rng = rng_from_seed(33);
        let decoder = DenseNet::new_glorot(
            &[4, 6, 3],
            &[Activation::Relu, Activation::Linear],
            &mut rng,
        )
        .unwrap();
        let windows = slide_windows(&x, cfg.window_len).unwrap();
        let v = dkm_objective(&windows, &encoder, &decoder, &bank, cfg.alpha, 0.0).unwrap();
        let recon: f64 = windows
            .iter()
            .map(|w| {
                let z = encoder.forward(&w.values).unwrap().output().to_vec();
                let s = decoder.forward(&z).unwrap().output().to_vec();
                squared_distance(&w.values, &s)
            })
            .sum();
        assert!((v - recon).abs() < 1e-10);
    }

    #[test]
    fn dkm_objective_matches_term_oracle() {
        let (x, encoder, bank, cfg) = small_setup();
        let mut rng = rng_from_seed(34);
        let decoder = DenseNet::new_glorot(
            &[4, 6, 3],
            &[Activation::Relu, Activation::Linear],
            &mut rng,
        )
        .unwrap();
        let windows = slide_windows(&x, cfg.window_len).unwrap();
        let got = dkm_objective(&windows, &encoder, &decoder, &bank, cfg.alpha, 0.7).unwrap();
        // term-by-term summation written out longhand
        let mut want = 0.0;
        for w in &windows {
            let z = encoder.forward(&w.values).unwrap().output().to_vec();
            let s = decoder.forward(&z).unwrap().output().to_vec();
            for (a, b) in w.values.iter().zip(&s) {
                want += (a - b) * (a - b);
            }
            let logits: Vec<f64> = bank
                .centers
                .iter()
                .map(|c| -cfg.alpha * squared_distance(&z, c))
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            for (c, l) in bank.centers.iter().zip(&logits) {
                want += 0.7 * squared_distance(&z, c) * (l - m).exp() / denom;
            }
        }
        assert!((got - want).abs() < 1e-10);
    }

    #[test]
    fn soft_assign_extreme_alpha_matches_hard() {
        let mut rng = rng_from_seed(99);
        let bank = ClusterBank {
            centers: (0..4)
                .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
        };
        for _ in 0..200 {
            let z: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = soft_assign(&z, &bank, 1e6).unwrap();
            let hard = hard_assign(&z, &bank);
            let am = g
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(am, hard);
        }
    }

    proptest! {
        #[test]
        fn soft_assign_is_simplex(zs in proptest::collection::vec(-5.0..5.0f64, 3),
                                  alpha in 0.0..50.0f64) {
            let bank = ClusterBank {
                centers: vec![vec![0.0, 0.0, 0.0], vec![1.0, 1.0, -1.0], vec![-2.0, 0.5, 0.3]],
            };
            let g = soft_assign(&zs, &bank, alpha).unwrap();
            let sum: f64 = g.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(g.iter().all(|v| *v >= 0.0));
        }

        #[test]
        fn fuzzy_vector_blocks_sum_to_one(seed in 0u64..500) {
            let mut rng = rng_from_seed(seed);
            let cfg = SymbolizerConfig {
                window_len: 2,
                regions: 3,
                clusters: 3,
                embed_dim: 2,
                alpha: 10.0,
            };
            let encoder = DenseNet::new_glorot(
                &[2, 4, 2],
                &[Activation::Relu, Activation::Linear],
                &mut rng,
            ).unwrap();
            let bank = ClusterBank {
                centers: (0..3).map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
            };
            let x: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v = symbolize(&x, &encoder, &bank, &cfg).unwrap();
            for j in 0..cfg.regions {
                let block: f64 = (0..cfg.clusters)
                    .map(|i| v.values[FuzzyInterpretationVector::index(cfg.clusters, i, j)])
                    .sum();
                prop_assert!((block - 1.0).abs() < 1e-12);
            }
        }
    }
}
