use std::fmt::Write as _;

use crate::circuit::Circuit;
use crate::error::{PcError, Result};

use super::kmeans::nearest;

/// Discrete samples paired with continuous embeddings of a fixed dimension.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddedDataset {
    pub samples: Vec<Vec<u32>>,
    pub embeddings: Vec<Vec<f64>>,
}

impl EmbeddedDataset {
    pub fn new(samples: Vec<Vec<u32>>, embeddings: Vec<Vec<f64>>) -> Result<Self> {
        if samples.len() != embeddings.len() {
            return Err(PcError::arg(format!(
                "{} samples but {} embeddings",
                samples.len(),
                embeddings.len()
            )));
        }
        let dim = embeddings.first().map_or(0, |h| h.len());
        if embeddings.iter().any(|h| h.len() != dim) {
            return Err(PcError::arg("embeddings have differing dimensions"));
        }
        let vars = samples.first().map_or(0, |x| x.len());
        if samples.iter().any(|x| x.len() != vars) {
            return Err(PcError::arg("samples have differing lengths"));
        }
        Ok(EmbeddedDataset { samples, embeddings })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.first().map_or(0, |h| h.len())
    }

    pub fn subset(&self, indices: &[usize]) -> EmbeddedDataset {
        EmbeddedDataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            embeddings: indices.iter().map(|&i| self.embeddings[i].clone()).collect(),
        }
    }
}

/// The discretization `lambda_k`: centroids in embedding space plus the
/// cluster index of every training sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterMap {
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl ClusterMap {
    /// Every sample in cluster 0, centroid at the mean embedding.
    pub fn single(data: &EmbeddedDataset) -> Self {
        let mut map = ClusterMap {
            centroids: vec![vec![0.0; data.dim()]],
            labels: vec![0; data.len()],
        };
        map.recompute_centroids(&data.embeddings);
        map
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, |c| c.len())
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k()];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }

    /// Cluster of an unseen embedding: the nearest centroid.
    pub fn assign(&self, h: &[f64]) -> usize {
        nearest(&self.centroids, h)
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == cluster).collect()
    }

    /// Sets each non-empty cluster's centroid to the mean of its members;
    /// empty clusters keep their previous centroid.
    pub fn recompute_centroids(&mut self, embeddings: &[Vec<f64>]) {
        let dim = self.dim();
        let mut sums = vec![vec![0.0; dim]; self.k()];
        let mut counts = vec![0usize; self.k()];
        for (h, &l) in embeddings.iter().zip(&self.labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(h) {
                *s += x;
            }
        }
        for ((c, s), &n) in self.centroids.iter_mut().zip(sums).zip(&counts) {
            if n > 0 {
                *c = s.into_iter().map(|x| x / n as f64).collect();
            }
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.centroids.is_empty() {
            return Err(PcError::arg("cluster map has no clusters"));
        }
        let dim = self.dim();
        if self.centroids.iter().any(|c| c.len() != dim) {
            return Err(PcError::arg("centroids have differing dimensions"));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.k()) {
            return Err(PcError::arg(format!("label {l} out of range for {} clusters", self.k())));
        }
        Ok(())
    }

    /// `CM v1 <k> <dim>`, one centroid per line, then `<index> <label>`.
    pub fn to_text(&self) -> String {
        let mut s = format!("CM v1 {} {}\n", self.k(), self.dim());
        for c in &self.centroids {
            let row: Vec<String> = c.iter().map(|x| format!("{x:.16e}")).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        for (i, l) in self.labels.iter().enumerate() {
            let _ = writeln!(s, "{i} {l}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut maps = ClusterMap::parse_many(text)?;
        match maps.len() {
            1 => Ok(maps.pop().unwrap()),
            n => Err(PcError::parse(0, format!("expected one cluster map, found {n}"))),
        }
    }

    /// Parses consecutive cluster maps; each block's labels run until the
    /// next `CM` header or the end of input.
    pub fn parse_many(text: &str) -> Result<Vec<ClusterMap>> {
        let mut lines = Vec::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let t = line.trim();
            if !t.is_empty() {
                lines.push((offset, t));
            }
            offset += line.len();
        }
        let mut maps = Vec::new();
        let mut i = 0;
        while i < lines.len() {
            let (off, header) = lines[i];
            let f: Vec<&str> = header.split_whitespace().collect();
            if f.len() != 4 || f[0] != "CM" || f[1] != "v1" {
                return Err(PcError::parse(off, "expected header `CM v1 <k> <dim>`"));
            }
            let k: usize = f[2].parse().map_err(|_| PcError::parse(off, "bad cluster count"))?;
            let dim: usize = f[3].parse().map_err(|_| PcError::parse(off, "bad dimension"))?;
            if k == 0 {
                return Err(PcError::parse(off, "cluster count must be positive"));
            }
            i += 1;
            let mut centroids = Vec::with_capacity(k);
            for _ in 0..k {
                let Some(&(off, line)) = lines.get(i) else {
                    return Err(PcError::parse(text.len(), "missing centroid lines"));
                };
                let row: std::result::Result<Vec<f64>, _> =
                    line.split_whitespace().map(str::parse::<f64>).collect();
                let row = row.map_err(|_| PcError::parse(off, "bad centroid value"))?;
                if row.len() != dim {
                    return Err(PcError::parse(off, format!("centroid has {} values, expected {dim}", row.len())));
                }
                centroids.push(row);
                i += 1;
            }
            let mut labels = Vec::new();
            while let Some(&(off, line)) = lines.get(i) {
                if line.starts_with("CM") {
                    break;
                }
                let mut it = line.split_whitespace();
                let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
                    return Err(PcError::parse(off, "expected `<index> <label>`"));
                };
                let idx: usize = a.parse().map_err(|_| PcError::parse(off, "bad sample index"))?;
                let label: usize = b.parse().map_err(|_| PcError::parse(off, "bad label"))?;
                if idx != labels.len() {
                    return Err(PcError::parse(off, format!("expected sample index {}", labels.len())));
                }
                if label >= k {
                    return Err(PcError::parse(off, format!("label {label} out of range for {k} clusters")));
                }
                labels.push(label);
                i += 1;
            }
            maps.push(ClusterMap { centroids, labels });
        }
        if maps.is_empty() {
            return Err(PcError::parse(0, "empty cluster map file"));
        }
        Ok(maps)
    }
}

fn check_heads(circuit: &Circuit, map: &ClusterMap) -> Result<()> {
    if circuit.num_heads() != map.k() {
        return Err(PcError::arg(format!(
            "circuit has {} heads but the cluster map has {} clusters",
            circuit.num_heads(),
            map.k()
        )));
    }
    Ok(())
}

fn argmax_keep(lls: &[f64], current: usize) -> usize {
    let best = lls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lls[current] == best {
        return current;
    }
    lls.iter().position(|&ll| ll == best).unwrap_or(current)
}

/// Relabels each sample with the head that gives it the highest
/// likelihood; ties stay with the current label, then go to the lowest
/// index. Returns the new map and each sample's LL under its new label.
pub fn reassign_with_ll(
    circuit: &Circuit,
    data: &EmbeddedDataset,
    map: &ClusterMap,
) -> Result<(ClusterMap, Vec<f64>)> {
    check_heads(circuit, map)?;
    map.check()?;
    if map.labels.len() != data.len() {
        return Err(PcError::arg("cluster map and dataset differ in length"));
    }
    let all = circuit.log_likelihoods_all_heads(&data.samples)?;
    let mut out = map.clone();
    let mut lls = Vec::with_capacity(data.len());
    for (i, row) in all.iter().enumerate() {
        let z = argmax_keep(row, map.labels[i]);
        out.labels[i] = z;
        lls.push(row[z]);
    }
    out.recompute_centroids(&data.embeddings);
    Ok((out, lls))
}

pub fn reassign_clusters(circuit: &Circuit, data: &EmbeddedDataset, map: &ClusterMap) -> Result<ClusterMap> {
    reassign_with_ll(circuit, data, map).map(|(m, _)| m)
}

/// Mean LL of each cluster's members; `NaN` for empty clusters.
pub fn per_cluster_ll(lls: &[f64], labels: &[usize], k: usize) -> Vec<f64> {
    let mut sum = vec![0.0; k];
    let mut n = vec![0usize; k];
    for (&ll, &l) in lls.iter().zip(labels) {
        sum[l] += ll;
        n[l] += 1;
    }
    sum.iter().zip(&n).map(|(s, &c)| s / c as f64).collect()
}

/// Clusters to grow: ascending by mean LL (lower index on ties), added while
/// the selected member count stays below `capacity_fraction` of the total.
/// At least one cluster is always selected; empty clusters never are.
pub fn select_clusters(per_cluster_ll: &[f64], sizes: &[usize], capacity_fraction: f64) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let cap = capacity_fraction * total as f64;
    let mut order: Vec<usize> = (0..per_cluster_ll.len())
        .filter(|&i| sizes.get(i).is_some_and(|&s| s > 0) || total == 0)
        .collect();
    order.sort_by(|&a, &b| per_cluster_ll[a].total_cmp(&per_cluster_ll[b]).then(a.cmp(&b)));
    let mut chosen = Vec::new();
    let mut count = 0usize;
    for i in order {
        if chosen.is_empty() || ((count + sizes[i]) as f64) < cap {
            count += sizes[i];
            chosen.push(i);
        } else {
            break;
        }
    }
    if chosen.is_empty() && !per_cluster_ll.is_empty() {
        chosen.push(0);
    }
    chosen.sort_unstable();
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::CircuitBuilder;

    #[test]
    fn greedy_selection_examples() {
        assert_eq!(select_clusters(&[-3.0], &[10], 0.4), vec![0]);
        assert_eq!(select_clusters(&[-10.0, -2.0, -5.0], &[30, 30, 40], 0.4), vec![0]);
        assert_eq!(select_clusters(&[-1.0, -1.0, -1.0], &[10, 10, 10], 0.4), vec![0]);
        // cumulative 10 + 15 = 25 < 40, then +30 would reach 55
        assert_eq!(select_clusters(&[-9.0, -8.0, -1.0, -7.0], &[10, 15, 45, 30], 0.4), vec![0, 1]);
    }

    #[test]
    fn point_mass_heads_pull_their_samples() {
        let mut b = CircuitBuilder::new(vec![3]);
        let a = b.input(0, vec![1.0, 0.0, 0.0]);
        let bb = b.input(0, vec![0.0, 1.0, 0.0]);
        let pa = b.product(vec![a]);
        let pb = b.product(vec![bb]);
        let ha = b.sum(vec![pa], vec![1.0]);
        let hb = b.sum(vec![pb], vec![1.0]);
        let c = b.finish(vec![ha, hb]).unwrap();
        let data = EmbeddedDataset::new(
            vec![vec![0], vec![1], vec![1], vec![0], vec![2]],
            vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0], vec![4.0]],
        )
        .unwrap();
        let map = ClusterMap {
            centroids: vec![vec![0.0], vec![0.0]],
            labels: vec![0, 0, 0, 1, 1],
        };
        let out = reassign_clusters(&c, &data, &map).unwrap();
        // x=2 is impossible under both heads: it stays put
        assert_eq!(out.labels, vec![0, 1, 1, 0, 1]);
        assert_eq!(out.centroids, vec![vec![1.5], vec![7.0 / 3.0]]);
    }

    #[test]
    fn single_cluster_is_unchanged() {
        let mut b = CircuitBuilder::new(vec![2]);
        let a = b.input(0, vec![0.5, 0.5]);
        let p = b.product(vec![a]);
        let s = b.sum(vec![p], vec![1.0]);
        let c = b.finish(vec![s]).unwrap();
        let data = EmbeddedDataset::new(vec![vec![0], vec![1]], vec![vec![1.0], vec![3.0]]).unwrap();
        let map = ClusterMap::single(&data);
        assert_eq!(reassign_clusters(&c, &data, &map).unwrap(), map);
        assert_eq!(map.centroids, vec![vec![2.0]]);
    }

    #[test]
    fn ties_prefer_current_then_lowest() {
        assert_eq!(argmax_keep(&[-1.0, -1.0, -1.0], 2), 2);
        assert_eq!(argmax_keep(&[-1.0, -2.0, -1.0], 1), 0);
        assert_eq!(argmax_keep(&[-3.0, -1.0, -1.0], 0), 1);
    }

    #[test]
    fn text_round_trip() {
        let map = ClusterMap {
            centroids: vec![vec![0.1, -2.5], vec![1e-300, 3.0]],
            labels: vec![1, 0, 1],
        };
        let text = map.to_text();
        assert!(text.starts_with("CM v1 2 2\n"));
        assert_eq!(ClusterMap::from_text(&text).unwrap(), map);
        let both = format!("{text}{text}");
        assert_eq!(ClusterMap::parse_many(&both).unwrap().len(), 2);
        let bad = text.replace("2 1\n", "2 7\n");
        assert!(matches!(ClusterMap::from_text(&bad), Err(PcError::Parse { .. })));
    }
}
