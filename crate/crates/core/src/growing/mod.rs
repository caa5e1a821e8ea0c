//! Progressive growing: jointly learn a discretization of embeddings into
//! `K` clusters and a `K`-headed circuit for `p(x | Z = i)`.
//!
//! Each iteration (1) trains the circuit on the current labels and prunes
//! it, (2) relabels every sample with its most likely head, (3) picks the
//! worst-fitting clusters under a capacity budget and (4) splits them in
//! embedding space while growing the circuit so every new cluster gets a
//! head derived from its parent's.

mod clusters;
mod grow;
mod kmeans;

use rand::Rng;

use crate::circuit::Circuit;
use crate::em::{prune, train_em, EmConfig, LabeledBatch};
use crate::error::{PcError, Result};
use crate::structure::learn_hclt;

pub use clusters::{
    per_cluster_ll, reassign_clusters, reassign_with_ll, select_clusters, ClusterMap, EmbeddedDataset,
};
pub use grow::{grow_multihead, Grown, CROSS_EDGE_MASS};
pub use kmeans::{kmeans, nearest, seeded_kmeans, seeded_kmeans_restarts, KMeansResult};

#[derive(Clone, Debug, PartialEq)]
pub struct GrowConfig {
    /// Target number of clusters `K`.
    pub target_clusters: usize,
    /// Budget on the members of the clusters grown per iteration.
    pub capacity_fraction: f64,
    /// Growth threshold as a fraction of the flow entering the grown roots.
    pub epsilon_fraction: f64,
    pub em: EmConfig,
    /// Prune after every Step 1; otherwise prune once after the last one.
    pub prune_every_iteration: bool,
    pub keep_fraction: f64,
    /// Relative perturbation of copied parameters.
    pub jitter: f64,
    pub kmeans_max_iters: usize,
    /// Extra randomly initialized k-means runs when splitting clusters.
    pub kmeans_restarts: usize,
    /// Hidden size of the HCLTs the schedule starts from.
    pub hidden_size: usize,
    /// Grow through [`grow_schedule`] rather than from a single cluster.
    pub use_schedule: bool,
    /// Outer clusters of [`grow_schedule`].
    pub outer_clusters: usize,
    /// Inner clusters grown within each outer cluster.
    pub inner_clusters: usize,
}

impl Default for GrowConfig {
    fn default() -> Self {
        GrowConfig {
            target_clusters: 8,
            capacity_fraction: 0.4,
            epsilon_fraction: 0.01,
            em: EmConfig::default(),
            prune_every_iteration: true,
            keep_fraction: 0.9,
            jitter: 0.05,
            kmeans_max_iters: 100,
            kmeans_restarts: 4,
            hidden_size: 16,
            use_schedule: false,
            outer_clusters: 100,
            inner_clusters: 4,
        }
    }
}

impl GrowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_clusters == 0 {
            return Err(PcError::arg("target cluster count must be at least 1"));
        }
        if !(self.capacity_fraction > 0.0 && self.capacity_fraction < 1.0) {
            return Err(PcError::arg("capacity fraction must lie in (0, 1)"));
        }
        if !(self.epsilon_fraction >= 0.0) {
            return Err(PcError::arg("epsilon fraction must be non-negative"));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(PcError::arg("keep fraction must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(PcError::arg("jitter must lie in [0, 1)"));
        }
        if self.hidden_size == 0 || self.outer_clusters == 0 || self.inner_clusters == 0 {
            return Err(PcError::arg("hidden size and cluster counts must be positive"));
        }
        self.em.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GrowStatus {
    Complete,
    /// Growth stopped before reaching the target cluster count.
    Stopped { reason: String },
}

impl GrowStatus {
    pub fn is_complete(&self) -> bool {
        matches!(self, GrowStatus::Complete)
    }
}

/// Summary of one pass through the loop, taken after relabeling.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub clusters: usize,
    pub units: usize,
    pub sum_edges: usize,
    /// Mean conditional LL under the relabeled assignment.
    pub mean_ll: f64,
    /// Clusters chosen for growth; empty on the final pass.
    pub grown: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct GrowOutcome {
    pub map: ClusterMap,
    pub circuit: Circuit,
    pub status: GrowStatus,
    pub history: Vec<IterationRecord>,
}

fn distinct_points(points: &[&Vec<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|x| x.to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// Clusters eligible for growth in ascending LL order, truncated by the
/// capacity rule and the remaining head budget. Clusters that cannot be
/// split (fewer than two distinct embeddings) are skipped.
fn choose_clusters(
    data: &EmbeddedDataset,
    map: &ClusterMap,
    lls: &[f64],
    config: &GrowConfig,
) -> Vec<usize> {
    let k = map.k();
    let mut sizes = map.sizes();
    for (i, s) in sizes.iter_mut().enumerate() {
        let pts: Vec<&Vec<f64>> = map.members(i).iter().map(|&m| &data.embeddings[m]).collect();
        if distinct_points(&pts) < 2 {
            *s = 0;
        }
    }
    let ll = per_cluster_ll(lls, &map.labels, k);
    let total = data.len() as f64;
    let cap = config.capacity_fraction * total;
    let mut order: Vec<usize> = (0..k).filter(|&i| sizes[i] > 0).collect();
    order.sort_by(|&a, &b| ll[a].total_cmp(&ll[b]).then(a.cmp(&b)));
    let mut chosen = Vec::new();
    let mut count = 0usize;
    for i in order {
        if chosen.len() >= config.target_clusters - k {
            break;
        }
        if chosen.is_empty() || ((count + sizes[i]) as f64) < cap {
            count += sizes[i];
            chosen.push(i);
        } else {
            break;
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Pairs each extra k-means cluster with a grown head, greedily by the
/// number of members that came from the head's parent cluster.
fn match_extra_clusters(overlap: &[Vec<usize>]) -> Vec<usize> {
    let n = overlap.len();
    let mut assigned = vec![usize::MAX; n];
    let mut used = vec![false; n];
    for _ in 0..n {
        let mut best: Option<(usize, usize, usize)> = None;
        for (j, row) in overlap.iter().enumerate() {
            if assigned[j] != usize::MAX {
                continue;
            }
            for (m, &o) in row.iter().enumerate() {
                if !used[m] && best.is_none_or(|(bo, _, _)| o > bo) {
                    best = Some((o, j, m));
                }
            }
        }
        let (_, j, m) = best.expect("square overlap matrix");
        assigned[j] = m;
        used[m] = true;
    }
    assigned
}

/// Runs the four-step loop from a single-headed circuit until the circuit
/// has `config.target_clusters` heads or no cluster can be split further.
pub fn progressive_grow<R: Rng + ?Sized>(
    data: &EmbeddedDataset,
    initial: &Circuit,
    config: &GrowConfig,
    rng: &mut R,
) -> Result<GrowOutcome> {
    config.validate()?;
    if initial.num_heads() != 1 {
        return Err(PcError::arg("progressive growing starts from a single-headed circuit"));
    }
    if data.is_empty() {
        return Err(PcError::arg("cannot grow on an empty dataset"));
    }
    let target = config.target_clusters;
    let mut map = ClusterMap::single(data);
    let mut circuit = initial.clone();
    let mut history = Vec::new();
    let mut status = GrowStatus::Complete;
    loop {
        // Step 1
        let batch = LabeledBatch::new(&data.samples, &map.labels)?;
        circuit = train_em(&circuit, &batch, &config.em, rng)?.0;
        if config.keep_fraction < 1.0 && (config.prune_every_iteration || map.k() >= target) {
            circuit = prune(&circuit, &batch, config.keep_fraction)?;
        }
        // Step 2
        let (next, lls) = reassign_with_ll(&circuit, data, &map)?;
        map = next;
        let mean_ll = lls.iter().sum::<f64>() / lls.len() as f64;
        let mut record = IterationRecord {
            clusters: map.k(),
            units: circuit.len(),
            sum_edges: circuit.num_sum_edges(),
            mean_ll,
            grown: Vec::new(),
        };
        log::info!("{} clusters, {} units, mean ll {mean_ll:.4}", map.k(), circuit.len());
        if map.k() >= target {
            history.push(record);
            break;
        }
        // Step 3
        let selected = choose_clusters(data, &map, &lls, config);
        if selected.is_empty() {
            history.push(record);
            status = GrowStatus::Stopped {
                reason: format!(
                    "stopped at {} of {target} clusters: no cluster has two distinct embeddings",
                    map.k()
                ),
            };
            log::warn!("progressive growing {status:?}");
            if config.keep_fraction < 1.0 && !config.prune_every_iteration {
                let batch = LabeledBatch::new(&data.samples, &map.labels)?;
                circuit = prune(&circuit, &batch, config.keep_fraction)?;
            }
            break;
        }
        // Step 4
        let k = map.k();
        let members: Vec<usize> = (0..data.len())
            .filter(|&i| selected.binary_search(&map.labels[i]).is_ok())
            .collect();
        let xs: Vec<Vec<u32>> = members.iter().map(|&i| data.samples[i].clone()).collect();
        let old: Vec<usize> = members.iter().map(|&i| map.labels[i]).collect();
        let epsilon = (config.epsilon_fraction * members.len() as f64).max(f64::MIN_POSITIVE);
        let grown = grow_multihead(&circuit, &LabeledBatch::new(&xs, &old)?, epsilon, config.jitter, rng)?;
        if grown.grown_heads != selected {
            return Err(PcError::arg(format!(
                "growth threshold {epsilon} left some selected roots ungrown"
            )));
        }
        let points: Vec<Vec<f64>> = members.iter().map(|&i| data.embeddings[i].clone()).collect();
        let seeds: Vec<Vec<f64>> = selected.iter().map(|&i| map.centroids[i].clone()).collect();
        let m = selected.len();
        let km = seeded_kmeans_restarts(
            &points,
            2 * m,
            &seeds,
            config.kmeans_max_iters,
            config.kmeans_restarts,
            rng,
        )?;

        let mut overlap = vec![vec![0usize; m]; m];
        for (&l, &o) in km.labels.iter().zip(&old) {
            if l >= m {
                overlap[l - m][selected.binary_search(&o).unwrap()] += 1;
            }
        }
        let extra_to_head = match_extra_clusters(&overlap);
        let mut head_of = selected.clone();
        head_of.extend(extra_to_head.iter().map(|&g| k + g));

        map.centroids.resize(k + m, Vec::new());
        for (j, c) in km.centroids.into_iter().enumerate() {
            map.centroids[head_of[j]] = c;
        }
        for (&i, &l) in members.iter().zip(&km.labels) {
            map.labels[i] = head_of[l];
        }
        map.recompute_centroids(&data.embeddings);
        circuit = grown.circuit;
        record.grown = selected;
        history.push(record);
        debug_assert_eq!(map.k(), circuit.num_heads());
    }
    Ok(GrowOutcome {
        map,
        circuit,
        status,
        history,
    })
}

/// Baseline without growing: k-means on the embeddings into
/// `target_clusters` groups once, then EM on a `K`-headed HCLT with those
/// labels (pruned once at the end when `keep_fraction < 1`).
pub fn one_shot<R: Rng + ?Sized>(
    data: &EmbeddedDataset,
    domains: &[usize],
    config: &GrowConfig,
    rng: &mut R,
) -> Result<GrowOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(PcError::arg("cannot cluster an empty dataset"));
    }
    let km = kmeans(&data.embeddings, config.target_clusters, config.kmeans_max_iters, rng)?;
    let map = ClusterMap {
        centroids: km.centroids,
        labels: km.labels,
    };
    let initial = learn_hclt(&data.samples, domains, config.hidden_size, map.k(), rng)?;
    let batch = LabeledBatch::new(&data.samples, &map.labels)?;
    let mut circuit = train_em(&initial, &batch, &config.em, rng)?.0;
    if config.keep_fraction < 1.0 {
        circuit = prune(&circuit, &batch, config.keep_fraction)?;
    }
    let lls = circuit.log_likelihoods(&data.samples, &map.labels)?;
    let history = vec![IterationRecord {
        clusters: map.k(),
        units: circuit.len(),
        sum_edges: circuit.num_sum_edges(),
        mean_ll: lls.iter().sum::<f64>() / lls.len() as f64,
        grown: Vec::new(),
    }];
    Ok(GrowOutcome {
        map,
        circuit,
        status: GrowStatus::Complete,
        history,
    })
}

/// `log p(x | Z = i)` of every sample with `i` the nearest centroid of its
/// embedding; how a discretization is scored on held-out data.
pub fn conditional_log_likelihoods(circuit: &Circuit, map: &ClusterMap, data: &EmbeddedDataset) -> Result<Vec<f64>> {
    if circuit.num_heads() != map.k() {
        return Err(PcError::arg(format!(
            "{} heads for {} clusters",
            circuit.num_heads(),
            map.k()
        )));
    }
    let heads: Vec<usize> = data.embeddings.iter().map(|h| map.assign(h)).collect();
    circuit.log_likelihoods(&data.samples, &heads)
}

/// Pre-clusters embeddings into `outer_clusters` groups with k-means, grows
/// each group to `inner_clusters` clusters from its own single-headed
/// HCLT, and places the results side by side.
pub fn grow_schedule<R: Rng + ?Sized>(
    data: &EmbeddedDataset,
    domains: &[usize],
    config: &GrowConfig,
    rng: &mut R,
) -> Result<GrowOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(PcError::arg("cannot grow on an empty dataset"));
    }
    let pts: Vec<&Vec<f64>> = data.embeddings.iter().collect();
    let outer_k = config.outer_clusters.min(distinct_points(&pts));
    let outer = kmeans(&data.embeddings, outer_k, config.kmeans_max_iters, rng)?;
    let inner_config = GrowConfig {
        target_clusters: config.inner_clusters,
        ..config.clone()
    };
    let mut circuits = Vec::with_capacity(outer_k);
    let mut map = ClusterMap {
        centroids: Vec::new(),
        labels: vec![0; data.len()],
    };
    let mut status = GrowStatus::Complete;
    let mut history = Vec::new();
    for o in 0..outer_k {
        let idx: Vec<usize> = (0..data.len()).filter(|&i| outer.labels[i] == o).collect();
        let sub = data.subset(&idx);
        let init = learn_hclt(&sub.samples, domains, config.hidden_size, 1, rng)?;
        let out = progressive_grow(&sub, &init, &inner_config, rng)?;
        let offset = map.centroids.len();
        for (&i, &l) in idx.iter().zip(&out.map.labels) {
            map.labels[i] = offset + l;
        }
        map.centroids.extend(out.map.centroids);
        if let GrowStatus::Stopped { reason } = out.status {
            status = GrowStatus::Stopped {
                reason: format!("outer cluster {o}: {reason}"),
            };
        }
        history.extend(out.history);
        circuits.push(out.circuit);
    }
    Ok(GrowOutcome {
        map,
        circuit: Circuit::disjoint_union(&circuits)?,
        status,
        history,
    })
}
