//! Generators for random circuits and synthetic datasets with known
//! generating distributions.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::circuit::{Circuit, CircuitBuilder, UnitId, UnitKind};
use crate::error::Result;
use crate::logspace::log_sum_exp;
use crate::lvd::{ImageDataset, PatchLayout};
use crate::structure::random_simplex;

fn region_nodes<R: Rng + ?Sized>(
    b: &mut CircuitBuilder,
    rng: &mut R,
    vars: &[usize],
    domain: usize,
) -> Vec<UnitId> {
    if vars.len() == 1 {
        let n = rng.random_range(1..=3);
        return (0..n)
            .map(|_| b.input(vars[0], random_simplex(rng, domain)))
            .collect();
    }
    let products = region_products(b, rng, vars, domain);
    let n = rng.random_range(1..=2);
    (0..n).map(|_| random_sum(b, rng, &products)).collect()
}

fn region_products<R: Rng + ?Sized>(
    b: &mut CircuitBuilder,
    rng: &mut R,
    vars: &[usize],
    domain: usize,
) -> Vec<UnitId> {
    if vars.len() == 1 {
        let leaves = region_nodes(b, rng, vars, domain);
        return leaves.into_iter().map(|l| b.product(vec![l])).collect();
    }
    let mut v = vars.to_vec();
    v.shuffle(rng);
    let cut = rng.random_range(1..v.len());
    let (mut left, mut right) = (v[..cut].to_vec(), v[cut..].to_vec());
    left.sort_unstable();
    right.sort_unstable();
    let l = region_nodes(b, rng, &left, domain);
    let r = region_nodes(b, rng, &right, domain);
    let n = rng.random_range(1..=3);
    (0..n)
        .map(|_| {
            let lc = *l.choose(rng).unwrap();
            let rc = *r.choose(rng).unwrap();
            b.product(vec![lc, rc])
        })
        .collect()
}

fn random_sum<R: Rng + ?Sized>(b: &mut CircuitBuilder, rng: &mut R, products: &[UnitId]) -> UnitId {
    let mut children: Vec<UnitId> = products
        .iter()
        .copied()
        .filter(|_| rng.random_bool(0.7))
        .collect();
    if children.is_empty() {
        children.push(*products.choose(rng).unwrap());
    }
    let w = random_simplex(rng, children.len());
    b.sum(children, w)
}

/// Random smooth, decomposable, alternating circuit with one head over
/// `num_vars` variables sharing a domain of size `domain`.
pub fn random_circuit<R: Rng + ?Sized>(rng: &mut R, num_vars: usize, domain: usize) -> Circuit {
    random_circuit_with_heads(rng, num_vars, domain, 1)
}

pub fn random_circuit_with_heads<R: Rng + ?Sized>(
    rng: &mut R,
    num_vars: usize,
    domain: usize,
    heads: usize,
) -> Circuit {
    let mut b = CircuitBuilder::new(vec![domain; num_vars]);
    let vars: Vec<usize> = (0..num_vars).collect();
    let products = region_products(&mut b, rng, &vars, domain);
    let roots = (0..heads).map(|_| random_sum(&mut b, rng, &products)).collect();
    b.finish(roots).expect("generated circuit is well formed")
}

/// Copy of `circuit` with every sum weight vector and leaf table redrawn
/// from a symmetric Dirichlet(1).
pub fn randomize_parameters<R: Rng + ?Sized>(circuit: &Circuit, rng: &mut R) -> Circuit {
    let mut out = circuit.clone();
    for (id, unit) in circuit.units().iter().enumerate() {
        let n = match &unit.kind {
            UnitKind::Product => continue,
            UnitKind::Sum { weights } => weights.len(),
            UnitKind::Input { probs, .. } => probs.len(),
        };
        out.set_params(id, random_simplex(rng, n))
            .expect("simplex draw is normalized");
    }
    out
}

fn draw<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Mixture of fully factorized categorical distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductMixture {
    pub weights: Vec<f64>,
    /// `tables[component][var]` is a distribution over that variable's domain.
    pub tables: Vec<Vec<Vec<f64>>>,
}

impl ProductMixture {
    /// Components whose per-variable tables concentrate `peak` mass on a
    /// random mode and spread the rest uniformly.
    pub fn random_peaked<R: Rng + ?Sized>(
        rng: &mut R,
        components: usize,
        num_vars: usize,
        domain: usize,
        peak: f64,
    ) -> Self {
        let tables = (0..components)
            .map(|_| {
                (0..num_vars)
                    .map(|_| {
                        let mode = rng.random_range(0..domain);
                        let rest = if domain > 1 {
                            (1.0 - peak) / (domain - 1) as f64
                        } else {
                            0.0
                        };
                        (0..domain)
                            .map(|v| if v == mode { if domain > 1 { peak } else { 1.0 } } else { rest })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        ProductMixture {
            weights: vec![1.0 / components as f64; components],
            tables,
        }
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn num_vars(&self) -> usize {
        self.tables.first().map_or(0, |t| t.len())
    }

    pub fn sample_component<R: Rng + ?Sized>(&self, rng: &mut R, component: usize) -> Vec<u32> {
        self.tables[component]
            .iter()
            .map(|t| draw(rng, t) as u32)
            .collect()
    }

    /// Draws `(component, x)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, Vec<u32>) {
        let c = draw(rng, &self.weights);
        (c, self.sample_component(rng, c))
    }

    pub fn component_log_prob(&self, component: usize, x: &[u32]) -> f64 {
        self.tables[component]
            .iter()
            .zip(x)
            .map(|(t, &v)| t[v as usize].ln())
            .sum()
    }

    /// Exact `log p(x)` under the mixture.
    pub fn log_prob(&self, x: &[u32]) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .enumerate()
            .map(|(c, w)| w.ln() + self.component_log_prob(c, x))
            .collect();
        log_sum_exp(&terms)
    }
}

/// Standard normal vector of length `dim`.
pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Synthetic image benchmark with a known per-patch generator: every
/// patch is drawn from one shared mixture component chosen by a latent
/// grid with Markov dependence between neighbours, and the teacher
/// embedding of a patch is its component's code plus Gaussian noise.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchBenchmark {
    pub layout: PatchLayout,
    pub mixture: ProductMixture,
    /// Embedding mean of each component.
    pub codebook: Vec<Vec<f64>>,
    /// Probability that a cell copies its left (or upper) neighbour.
    pub stickiness: f64,
    pub noise: f64,
}

/// A sampled benchmark split.
#[derive(Clone, Debug)]
pub struct PatchSample {
    pub data: ImageDataset,
    /// `components[n][pos]`: true component of every patch.
    pub components: Vec<Vec<usize>>,
}

impl PatchBenchmark {
    /// 8x8 single-channel images in 2x2 patches, `components` mixture
    /// components over `domain` values with per-component sharpness
    /// between 0.65 and 0.95, codes of dimension `dim`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, components: usize, domain: usize, dim: usize) -> Result<Self> {
        let layout = PatchLayout::new(8, 8, 1, 2, 2)?;
        let vars = layout.patch_size();
        let tables = (0..components)
            .map(|_| {
                let peak = 0.65 + 0.3 * rng.random::<f64>();
                (0..vars)
                    .map(|_| {
                        let mode = rng.random_range(0..domain);
                        let rest = (1.0 - peak) / (domain - 1).max(1) as f64;
                        (0..domain).map(|v| if v == mode { peak } else { rest }).collect()
                    })
                    .collect()
            })
            .collect();
        let mixture = ProductMixture {
            weights: vec![1.0 / components as f64; components],
            tables,
        };
        let codebook = (0..components).map(|_| gaussian_vector(rng, dim, 1.0)).collect();
        Ok(PatchBenchmark {
            layout,
            mixture,
            codebook,
            stickiness: 0.5,
            noise: 0.25,
        })
    }

    pub fn dim(&self) -> usize {
        self.codebook.first().map_or(0, |c| c.len())
    }

    pub fn domains(&self) -> Vec<usize> {
        self.mixture.tables[0].iter().map(|t| t.len()).collect()
    }

    fn latent_grid<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let (gh, gw) = self.layout.grid();
        let mut z = Vec::with_capacity(gh * gw);
        for r in 0..gh {
            for c in 0..gw {
                let neighbour = if c > 0 {
                    Some(z[r * gw + c - 1])
                } else if r > 0 {
                    Some(z[(r - 1) * gw + c])
                } else {
                    None
                };
                let v = match neighbour {
                    Some(v) if rng.random_bool(self.stickiness) => v,
                    _ => draw(rng, &self.mixture.weights),
                };
                z.push(v);
            }
        }
        z
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<PatchSample> {
        let mut images = Vec::with_capacity(n);
        let mut embeddings = Vec::with_capacity(n);
        let mut components = Vec::with_capacity(n);
        for _ in 0..n {
            let z = self.latent_grid(rng);
            let patches: Vec<Vec<u32>> = z.iter().map(|&c| self.mixture.sample_component(rng, c)).collect();
            images.push(self.layout.reassemble(&patches)?);
            embeddings.push(
                z.iter()
                    .map(|&c| {
                        let e = gaussian_vector(rng, self.dim(), self.noise);
                        self.codebook[c].iter().zip(e).map(|(m, e)| m + e).collect()
                    })
                    .collect(),
            );
            components.push(z);
        }
        let data = ImageDataset::new(self.layout.num_vars(), self.dim(), self.layout.grid(), images, embeddings)?;
        Ok(PatchSample { data, components })
    }
}
