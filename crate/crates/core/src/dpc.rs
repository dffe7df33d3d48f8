//! Density-peaks clustering with kNN densities.
//!
//! One routine serves two roles: temporal clustering over the pooled frames of
//! a video (each item is a `P × d` map) and spatial clustering over the patch
//! rows of a single frame (each item is a `1 × d` row). Distances between
//! items are squared Frobenius norms divided by the item's row count.
//!
//! Ties are broken by ascending index everywhere (kNN order, center ranking,
//! nearest-center assignment), so every output is a deterministic function of
//! the input order.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::numerics::{squared_distance, Tensor};
use crate::storage::NeighborCount;

/// Items to cluster: `[n_items × rows × d]`, plus the neighbour count `C`.
#[derive(Clone, Debug)]
pub struct ClusterInput {
    items: Tensor,
    neighbors: usize,
}

impl ClusterInput {
    /// `C` must satisfy `1 <= C <= n_items - 1`; a single item is accepted
    /// with `C = 0`.
    pub fn new(items: Tensor, neighbors: usize) -> Result<Self> {
        if items.rank() != 3 {
            return Err(Error::Dimension(format!(
                "cluster items must be [n × rows × d], got {:?}",
                items.dims()
            )));
        }
        let n = items.dims()[0];
        if n > 1 && neighbors == 0 {
            return Err(Error::Config("neighbour count C must be at least 1".into()));
        }
        if neighbors >= n && !(n == 1 && neighbors == 0) {
            return Err(Error::Config(format!(
                "neighbour count C={neighbors} needs more than {n} items"
            )));
        }
        Ok(ClusterInput { items, neighbors })
    }

    /// Resolve `C` against the item count before constructing.
    pub fn with_policy(items: Tensor, policy: NeighborCount) -> Result<Self> {
        let n = items.dims().first().copied().unwrap_or(0);
        let c = if n == 1 { 0 } else { policy.resolve(n) };
        ClusterInput::new(items, c)
    }

    /// Treat each row of a `[n × d]` matrix as a single-row item.
    pub fn from_rows(rows: &Tensor, policy: NeighborCount) -> Result<Self> {
        rows.expect_rank(2)?;
        let (n, d) = (rows.dims()[0], rows.dims()[1]);
        ClusterInput::with_policy(rows.reshape(&[n, 1, d])?, policy)
    }

    pub fn items(&self) -> &Tensor {
        &self.items
    }

    pub fn n_items(&self) -> usize {
        self.items.dims()[0]
    }

    pub fn item_rows(&self) -> usize {
        self.items.dims()[1]
    }

    pub fn neighbors(&self) -> usize {
        self.neighbors
    }

    pub fn item(&self, i: usize) -> &[f64] {
        self.items.outer(i)
    }
}

/// Symmetric matrix of mean-squared distances between items.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

/// Pairwise distances plus each item's `C` nearest neighbours (self excluded).
#[derive(Clone, Debug)]
pub struct Knn {
    pub distances: DistanceMatrix,
    pub neighbors: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityProfile {
    pub rho: Vec<f64>,
    pub delta: Vec<f64>,
    pub importance: Vec<f64>,
}

/// `L` prototypes and how the items were distributed among them.
#[derive(Clone, Debug)]
pub struct EventPrototypeSet {
    /// `[L × rows × d]`, ordered like `center_indices`.
    pub prototypes: Tensor,
    /// Item index of each cluster center, by descending importance.
    pub center_indices: Vec<usize>,
    /// For every item, the position (into `center_indices`) of its cluster.
    pub assignment: Vec<usize>,
    /// Importance `ρ·δ` at each center.
    pub scores_raw: Vec<f64>,
    pub profile: DensityProfile,
}

impl EventPrototypeSet {
    pub fn len(&self) -> usize {
        self.center_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.center_indices.is_empty()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.len()];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }
}

pub fn pairwise_distances(input: &ClusterInput) -> DistanceMatrix {
    let n = input.n_items();
    let scale = 1.0 / input.item_rows() as f64;
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = squared_distance(input.item(i), input.item(j)) * scale;
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    DistanceMatrix { n, data }
}

fn ascending(a: (f64, usize), b: (f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

pub fn knn_distances(input: &ClusterInput) -> Result<Knn> {
    let n = input.n_items();
    let c = input.neighbors();
    if c >= n && n > 1 {
        return Err(Error::Config(format!("C={c} needs more than {n} items")));
    }
    let distances = pairwise_distances(input);
    let neighbors = (0..n)
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (distances.get(i, j), j))
                .collect();
            others.sort_by(|a, b| ascending(*a, *b));
            others.into_iter().take(c).map(|(_, j)| j).collect()
        })
        .collect();
    Ok(Knn {
        distances,
        neighbors,
    })
}

/// `ρ_t = exp(-(1/C) Σ_{t'∈kNN(t)} dist(t, t'))`. An item with no neighbours
/// has density 1.
pub fn local_density(knn: &Knn) -> Vec<f64> {
    knn.neighbors
        .iter()
        .enumerate()
        .map(|(i, nbrs)| {
            if nbrs.is_empty() {
                return 1.0;
            }
            let mean = nbrs.iter().map(|&j| knn.distances.get(i, j)).sum::<f64>() / nbrs.len() as f64;
            (-mean).exp()
        })
        .collect()
}

/// Distance to the nearest strictly denser item, or the largest distance to
/// any item for density maxima (0 for a lone item).
pub fn distance_indicator(distances: &DistanceMatrix, rho: &[f64]) -> Vec<f64> {
    let n = distances.len();
    (0..n)
        .map(|i| {
            let mut nearest_denser = f64::INFINITY;
            let mut farthest = 0.0f64;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let d = distances.get(i, j);
                farthest = farthest.max(d);
                if rho[j] > rho[i] {
                    nearest_denser = nearest_denser.min(d);
                }
            }
            if nearest_denser.is_finite() {
                nearest_denser
            } else {
                farthest
            }
        })
        .collect()
}

pub fn density_profile(input: &ClusterInput) -> Result<(Knn, DensityProfile)> {
    let knn = knn_distances(input)?;
    let rho = local_density(&knn);
    let delta = distance_indicator(&knn.distances, &rho);
    let importance = rho.iter().zip(&delta).map(|(r, d)| r * d).collect();
    Ok((
        knn,
        DensityProfile {
            rho,
            delta,
            importance,
        },
    ))
}

/// Indices of the `L` most important items, clamped to the item count.
pub fn select_centers(profile: &DensityProfile, l: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..profile.importance.len()).collect();
    order.sort_by(|&a, &b| {
        profile.importance[b]
            .total_cmp(&profile.importance[a])
            .then(a.cmp(&b))
    });
    order.truncate(l.min(profile.importance.len()));
    order
}

/// Assign every item to its nearest center and average each cluster with
/// weights `exp(ρ·δ)`.
pub fn aggregate_prototypes(
    input: &ClusterInput,
    distances: &DistanceMatrix,
    profile: &DensityProfile,
    centers: &[usize],
) -> Result<EventPrototypeSet> {
    if centers.is_empty() {
        return Err(Error::Config("at least one center is required".into()));
    }
    let n = input.n_items();
    let mut assignment = vec![0usize; n];
    for (i, slot) in assignment.iter_mut().enumerate() {
        if let Some(pos) = centers.iter().position(|&c| c == i) {
            *slot = pos;
            continue;
        }
        let mut best = 0;
        for (pos, &c) in centers.iter().enumerate().skip(1) {
            let (d, bd) = (distances.get(i, c), distances.get(i, centers[best]));
            if d < bd || (d == bd && c < centers[best]) {
                best = pos;
            }
        }
        *slot = best;
    }

    let stride = input.item_rows() * input.items().dims()[2];
    let mut sums = vec![0.0; centers.len() * stride];
    let mut weights = vec![0.0; centers.len()];
    for (i, &a) in assignment.iter().enumerate() {
        let w = profile.importance[i].exp();
        weights[a] += w;
        for (acc, &v) in sums[a * stride..(a + 1) * stride].iter_mut().zip(input.item(i)) {
            *acc += w * v;
        }
    }
    for (a, w) in weights.iter().enumerate() {
        for v in &mut sums[a * stride..(a + 1) * stride] {
            *v /= w;
        }
    }
    let mut dims = input.items().dims().to_vec();
    dims[0] = centers.len();
    Ok(EventPrototypeSet {
        prototypes: Tensor::from_parts(dims, sums, input.items().dtype()),
        center_indices: centers.to_vec(),
        assignment,
        scores_raw: centers.iter().map(|&c| profile.importance[c]).collect(),
        profile: profile.clone(),
    })
}

/// Full pass: densities, top-`L` centers, weighted prototypes.
pub fn cluster(input: &ClusterInput, l: usize) -> Result<EventPrototypeSet> {
    if l == 0 {
        return Err(Error::Config("L must be at least 1".into()));
    }
    let (knn, profile) = density_profile(input)?;
    let centers = select_centers(&profile, l);
    aggregate_prototypes(input, &knn.distances, &profile, &centers)
}

/// Stacked spatial clustering of one frame's `[N × d]` patch rows. Layer
/// `j + 1` clusters the prototypes of layer `j`; the result concatenates every
/// layer's output, `Σ layer_sizes` rows in total.
pub fn spatial_multigrained(
    frame: &Tensor,
    layer_sizes: &[usize],
    policy: NeighborCount,
) -> Result<Tensor> {
    frame.expect_rank(2)?;
    if layer_sizes.is_empty() {
        return Err(Error::Config("at least one spatial layer is required".into()));
    }
    if layer_sizes.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Config(format!(
            "layer sizes must be non-increasing, got {layer_sizes:?}"
        )));
    }
    let d = frame.dims()[1];
    let mut current = frame.clone();
    let mut outputs = Vec::with_capacity(layer_sizes.len());
    for (j, &size) in layer_sizes.iter().enumerate() {
        let available = current.dims()[0];
        if size == 0 || size > available {
            return Err(Error::Config(format!(
                "spatial layer {j} asks for {size} prototypes from {available} items"
            )));
        }
        let input = ClusterInput::from_rows(&current, policy)?;
        let set = cluster(&input, size)?;
        current = set.prototypes.reshape(&[size, d])?;
        outputs.push(current.clone());
    }
    let refs: Vec<&Tensor> = outputs.iter().collect();
    Tensor::concat_rows(&refs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::DType;

    fn scalars(values: &[f64]) -> Tensor {
        Tensor::new(vec![values.len(), 1, 1], values.to_vec(), DType::F64).unwrap()
    }

    #[test]
    fn distances_and_neighbours() {
        let input = ClusterInput::new(scalars(&[0.0, 1.0, 2.0]), 1).unwrap();
        let knn = knn_distances(&input).unwrap();
        assert_eq!(knn.distances.get(0, 2), 4.0);
        assert_eq!(knn.distances.get(0, 1), 1.0);
        // Item 1 is equidistant from 0 and 2: lower index wins.
        assert_eq!(knn.neighbors, vec![vec![1], vec![0], vec![1]]);

        let input = ClusterInput::new(scalars(&[5.0, 5.0]), 1).unwrap();
        let knn = knn_distances(&input).unwrap();
        assert_eq!(knn.distances.get(0, 1), 0.0);
        assert_eq!(knn.neighbors, vec![vec![1], vec![0]]);
    }

    #[test]
    fn distance_divides_by_row_count() {
        let items = Tensor::new(vec![2, 2, 1], vec![0.0, 0.0, 1.0, 3.0], DType::F64).unwrap();
        let input = ClusterInput::new(items, 1).unwrap();
        assert_eq!(pairwise_distances(&input).get(0, 1), 5.0);
    }

    #[test]
    fn neighbour_count_bounds() {
        assert!(matches!(
            ClusterInput::new(scalars(&[0.0, 1.0]), 2),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ClusterInput::new(scalars(&[0.0, 1.0]), 0),
            Err(Error::Config(_))
        ));
        assert!(ClusterInput::new(scalars(&[0.0]), 0).is_ok());
    }

    #[test]
    fn three_scalar_example() {
        let input = ClusterInput::new(scalars(&[0.0, 1.0, 2.0]), 2).unwrap();
        let (_, p) = density_profile(&input).unwrap();
        let want_rho = [(-2.5f64).exp(), (-1.0f64).exp(), (-2.5f64).exp()];
        for (r, w) in p.rho.iter().zip(want_rho) {
            assert!((r - w).abs() < 1e-15);
        }
        assert_eq!(p.delta, vec![1.0, 1.0, 1.0]);
        assert_eq!(select_centers(&p, 1), vec![1]);

        let set = cluster(&input, 1).unwrap();
        assert_eq!(set.center_indices, vec![1]);
        assert_eq!(set.assignment, vec![0, 0, 0]);
        assert!((set.prototypes.data()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identical_items() {
        let input = ClusterInput::new(scalars(&[3.0, 3.0, 3.0, 3.0]), 2).unwrap();
        let (_, p) = density_profile(&input).unwrap();
        assert!(p.rho.iter().all(|&r| r == 1.0));
        assert!(p.delta.iter().all(|&d| d == 0.0));
        assert_eq!(select_centers(&p, 2), vec![0, 1]);
        let set = cluster(&input, 2).unwrap();
        assert!(set.prototypes.data().iter().all(|&v| v == 3.0));
        // Centers keep themselves; others go to the lowest-index center.
        assert_eq!(set.assignment, vec![0, 1, 0, 0]);
    }

    #[test]
    fn single_item_and_clamping() {
        let input = ClusterInput::with_policy(scalars(&[7.0]), NeighborCount::Auto).unwrap();
        let (_, p) = density_profile(&input).unwrap();
        assert_eq!(p.rho, vec![1.0]);
        assert_eq!(p.delta, vec![0.0]);

        let input = ClusterInput::new(scalars(&[0.0, 1.0, 2.0]), 2).unwrap();
        let set = cluster(&input, 5).unwrap();
        assert_eq!(set.len(), 3);
        let mut centers = set.center_indices.clone();
        centers.sort();
        assert_eq!(centers, vec![0, 1, 2]);
    }

    #[test]
    fn scaling_lowers_density() {
        let base = [0.0, 0.3, 1.1, 1.5];
        let a = ClusterInput::new(scalars(&base), 3).unwrap();
        let scaled: Vec<f64> = base.iter().map(|v| v * 2.0).collect();
        let b = ClusterInput::new(scalars(&scaled), 3).unwrap();
        let (_, pa) = density_profile(&a).unwrap();
        let (_, pb) = density_profile(&b).unwrap();
        for (x, y) in pa.rho.iter().zip(&pb.rho) {
            assert!(y < x);
        }
        let order = |r: &[f64]| {
            let mut idx: Vec<usize> = (0..r.len()).collect();
            idx.sort_by(|&i, &j| r[i].total_cmp(&r[j]));
            idx
        };
        assert_eq!(order(&pa.rho), order(&pb.rho));
    }

    #[test]
    fn multigrained_shapes() {
        let frame = Tensor::filled(&[256, 4], 0.5, DType::F64);
        let g = spatial_multigrained(&frame, &[16, 6], NeighborCount::Auto).unwrap();
        assert_eq!(g.dims(), &[22, 4]);
        assert!(g.data().iter().all(|&v| v == 0.5));

        assert!(matches!(
            spatial_multigrained(&frame, &[300], NeighborCount::Auto),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            spatial_multigrained(&frame, &[4, 8], NeighborCount::Auto),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn every_item_its_own_center() {
        let rows: Vec<[f64; 2]> = (0..6).map(|i| [i as f64, (i * i) as f64 * 0.1]).collect();
        let frame = Tensor::from_rows(&rows, DType::F64).unwrap();
        let g = spatial_multigrained(&frame, &[6], NeighborCount::Auto).unwrap();
        let mut got: Vec<Vec<f64>> = (0..6).map(|i| g.row(i).to_vec()).collect();
        got.sort_by(|a, b| a[0].total_cmp(&b[0]));
        for (g, w) in got.iter().zip(&rows) {
            assert!(g.iter().zip(w).all(|(a, b)| (a - b).abs() < 1e-12), "{g:?} vs {w:?}");
        }
    }
}
