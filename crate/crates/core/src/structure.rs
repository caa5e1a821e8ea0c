//! Hidden Chow-Liu tree (HCLT) structures.
//!
//! A Chow-Liu tree is the maximum spanning tree of the pairwise mutual
//! information graph. The HCLT attaches a latent variable with
//! `hidden_size` states to every tree node: for node `v` and hidden state
//! `j` there is a leaf `L[v][j]` on `X_v` and a product
//! `P[v][j] = L[v][j] * prod_{c in children(v)} S[c][j]`; every non-root
//! node `v` contributes `hidden_size` sums `S[v][i] = sum_j w[i][j] P[v][j]`,
//! and every head is a sum over the root's products.
//!
//! With `V` variables, hidden size `h` and `k` heads that gives
//! `V*h` leaves, `V*h` products, `(V-1)*h + k` sums,
//! `(V-1)*h*h + k*h` sum edges and `(2V-1)*h` product edges.

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::circuit::{Circuit, CircuitBuilder, UnitId};
use crate::error::{PcError, Result};
use crate::logspace::normalize;

/// Laplace smoothing for mutual-information estimates.
pub const DEFAULT_MI_PSEUDOCOUNT: f64 = 1.0;

/// Relative jitter applied to initial leaf tables.
pub const LEAF_JITTER: f64 = 0.05;

/// Symmetric matrix of pairwise mutual information, in nats.
#[derive(Clone, Debug, PartialEq)]
pub struct MiTable {
    n: usize,
    values: Vec<f64>,
}

impl MiTable {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = f(i, j).max(0.0);
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        MiTable { n, values }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

fn check_data(data: &[Vec<u32>], domains: &[usize]) -> Result<()> {
    for (s, x) in data.iter().enumerate() {
        if x.len() != domains.len() {
            return Err(PcError::arg(format!(
                "sample {s} has {} values, expected {}",
                x.len(),
                domains.len()
            )));
        }
        for (var, (&v, &d)) in x.iter().zip(domains).enumerate() {
            if v as usize >= d {
                return Err(PcError::Domain {
                    var,
                    value: v,
                    domain: d,
                });
            }
        }
    }
    Ok(())
}

/// Mutual information between every pair of columns from
/// Laplace-smoothed joint frequencies. Constant columns get zero MI.
pub fn pairwise_mutual_information(
    data: &[Vec<u32>],
    domains: &[usize],
    smoothing: f64,
) -> Result<MiTable> {
    if data.len() < 2 {
        return Err(PcError::arg("mutual information needs at least two samples"));
    }
    if !(smoothing > 0.0) {
        return Err(PcError::arg("smoothing pseudocount must be positive"));
    }
    check_data(data, domains)?;
    let v = domains.len();
    let constant: Vec<bool> = (0..v)
        .map(|j| data.iter().all(|x| x[j] == data[0][j]))
        .collect();
    let pairs: Vec<(usize, usize)> = (0..v)
        .flat_map(|i| ((i + 1)..v).map(move |j| (i, j)))
        .collect();
    let mi: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            if constant[i] || constant[j] {
                return 0.0;
            }
            pair_mi(data, i, j, domains[i], domains[j], smoothing)
        })
        .collect();
    let mut table = MiTable {
        n: v,
        values: vec![0.0; v * v],
    };
    for (&(i, j), &m) in pairs.iter().zip(&mi) {
        table.values[i * v + j] = m;
        table.values[j * v + i] = m;
    }
    Ok(table)
}

fn pair_mi(data: &[Vec<u32>], i: usize, j: usize, di: usize, dj: usize, alpha: f64) -> f64 {
    let mut joint = vec![alpha; di * dj];
    for x in data {
        joint[x[i] as usize * dj + x[j] as usize] += 1.0;
    }
    let total = data.len() as f64 + alpha * (di * dj) as f64;
    for p in joint.iter_mut() {
        *p /= total;
    }
    let mut pa = vec![0.0; di];
    let mut pb = vec![0.0; dj];
    for a in 0..di {
        for b in 0..dj {
            pa[a] += joint[a * dj + b];
            pb[b] += joint[a * dj + b];
        }
    }
    let mut mi = 0.0;
    for a in 0..di {
        for b in 0..dj {
            let p = joint[a * dj + b];
            mi += p * (p.ln() - pa[a].ln() - pb[b].ln());
        }
    }
    mi.max(0.0)
}

/// Rooted spanning tree over variables.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeStructure {
    pub root: usize,
    pub parent: Vec<Option<usize>>,
    /// Breadth-first order from the root; parents precede children.
    pub order: Vec<usize>,
}

impl TreeStructure {
    pub fn num_vars(&self) -> usize {
        self.parent.len()
    }

    /// Children of `v` in ascending index order.
    pub fn children(&self, v: usize) -> Vec<usize> {
        (0..self.parent.len())
            .filter(|&c| self.parent[c] == Some(v))
            .collect()
    }

    /// Undirected edges `(min, max)`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .parent
            .iter()
            .enumerate()
            .filter_map(|(c, p)| p.map(|p| (p.min(c), p.max(c))))
            .collect();
        e.sort_unstable();
        e
    }

    /// Total MI weight of the tree's edges.
    pub fn weight(&self, mi: &MiTable) -> f64 {
        self.edges().iter().map(|&(i, j)| mi.get(i, j)).sum()
    }

    /// Roots an undirected spanning tree given as an edge list.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], root: usize) -> Result<Self> {
        if root >= n {
            return Err(PcError::arg(format!("root {root} out of range for {n} variables")));
        }
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
        }
        let mut parent = vec![None; n];
        let mut seen = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut queue = std::collections::VecDeque::from([root]);
        seen[root] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    parent[w] = Some(v);
                    queue.push_back(w);
                }
            }
        }
        if order.len() != n || edges.len() + 1 != n {
            return Err(PcError::arg("edges do not form a spanning tree"));
        }
        Ok(TreeStructure {
            root,
            parent,
            order,
        })
    }
}

fn find(uf: &mut [usize], mut x: usize) -> usize {
    while uf[x] != x {
        uf[x] = uf[uf[x]];
        x = uf[x];
    }
    x
}

/// Maximum-weight spanning tree under MI, rooted at `root`. Equal weights
/// are resolved in favour of the lexicographically smaller edge `(i, j)`.
pub fn chow_liu_tree(mi: &MiTable, root: usize) -> Result<TreeStructure> {
    let n = mi.len();
    let mut edges: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    edges.sort_by(|&(a, b), &(c, d)| {
        mi.get(c, d)
            .total_cmp(&mi.get(a, b))
            .then((a, b).cmp(&(c, d)))
    });
    let mut uf: Vec<usize> = (0..n).collect();
    let mut chosen = Vec::with_capacity(n.saturating_sub(1));
    for (i, j) in edges {
        let (ri, rj) = (find(&mut uf, i), find(&mut uf, j));
        if ri != rj {
            uf[ri] = rj;
            chosen.push((i, j));
            if chosen.len() + 1 == n {
                break;
            }
        }
    }
    TreeStructure::from_edges(n, &chosen, root)
}

/// Sample from a symmetric Dirichlet with concentration 1.
pub fn random_simplex<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let mut w: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        if normalize(&mut w) {
            return w;
        }
    }
}

/// Multiplies each entry by `1 + U(-amount, amount)` and renormalizes.
pub fn jitter<R: Rng + ?Sized>(rng: &mut R, probs: &[f64], amount: f64) -> Vec<f64> {
    let mut out: Vec<f64> = probs
        .iter()
        .map(|&p| p * (1.0 + rng.random_range(-amount..=amount)))
        .collect();
    if !normalize(&mut out) {
        return probs.to_vec();
    }
    out
}

/// Per-variable category frequencies with `pseudocount` added to each cell.
pub fn empirical_marginals(
    data: &[Vec<u32>],
    domains: &[usize],
    pseudocount: f64,
) -> Result<Vec<Vec<f64>>> {
    check_data(data, domains)?;
    let mut m: Vec<Vec<f64>> = domains.iter().map(|&d| vec![pseudocount; d]).collect();
    for x in data {
        for (var, &v) in x.iter().enumerate() {
            m[var][v as usize] += 1.0;
        }
    }
    for (var, row) in m.iter_mut().enumerate() {
        if !normalize(row) {
            *row = vec![1.0 / domains[var] as f64; domains[var]];
        }
    }
    Ok(m)
}

/// Compiles an HCLT circuit from a tree. Sum weights are drawn from a
/// symmetric Dirichlet(1); leaf tables start at `leaf_init` jittered by
/// ±5% and renormalized.
pub fn build_hclt<R: Rng + ?Sized>(
    tree: &TreeStructure,
    hidden_size: usize,
    num_heads: usize,
    domains: &[usize],
    leaf_init: &[Vec<f64>],
    rng: &mut R,
) -> Result<Circuit> {
    if hidden_size == 0 || num_heads == 0 {
        return Err(PcError::arg("hidden size and head count must be at least 1"));
    }
    let n = tree.num_vars();
    if domains.len() != n || leaf_init.len() != n {
        return Err(PcError::arg("tree, domains and leaf tables disagree on variable count"));
    }
    let mut b = CircuitBuilder::new(domains.to_vec());
    // sums[v][i]: the hidden_size sums contributed by non-root node v
    let mut sums: Vec<Vec<UnitId>> = vec![Vec::new(); n];
    let mut root_products = Vec::new();
    for &v in tree.order.iter().rev() {
        let children = tree.children(v);
        let products: Vec<UnitId> = (0..hidden_size)
            .map(|j| {
                let leaf = b.input(v, jitter(rng, &leaf_init[v], LEAF_JITTER));
                let mut ch = vec![leaf];
                ch.extend(children.iter().map(|&c| sums[c][j]));
                b.product(ch)
            })
            .collect();
        if tree.parent[v].is_some() {
            sums[v] = (0..hidden_size)
                .map(|_| {
                    let w = random_simplex(rng, hidden_size);
                    b.sum(products.clone(), w)
                })
                .collect();
        } else {
            root_products = products;
        }
    }
    let heads: Vec<UnitId> = (0..num_heads)
        .map(|_| {
            let w = random_simplex(rng, hidden_size);
            b.sum(root_products.clone(), w)
        })
        .collect();
    b.finish(heads)
}

/// MI estimation, Chow-Liu tree rooted at variable 0, and HCLT compilation
/// with leaves initialized from smoothed empirical marginals.
pub fn learn_hclt<R: Rng + ?Sized>(
    data: &[Vec<u32>],
    domains: &[usize],
    hidden_size: usize,
    num_heads: usize,
    rng: &mut R,
) -> Result<Circuit> {
    let tree = if domains.len() == 1 {
        TreeStructure::from_edges(1, &[], 0)?
    } else {
        let mi = pairwise_mutual_information(data, domains, DEFAULT_MI_PSEUDOCOUNT)?;
        chow_liu_tree(&mi, 0)?
    };
    let marginals = empirical_marginals(data, domains, DEFAULT_MI_PSEUDOCOUNT)?;
    build_hclt(&tree, hidden_size, num_heads, domains, &marginals, rng)
}
