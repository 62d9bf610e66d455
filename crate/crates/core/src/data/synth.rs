use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::embeddings::EmbeddingStore;
use super::manifest::Sample;
use crate::error::{Error, Result};
use crate::labels::{Ideology, Relevance};
use crate::matrix::Matrix;
use crate::schema::{facet_key, ideology_key, SchemaSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Texts per (facet, ideology class).
    pub n_per_class: usize,
    pub dim: usize,
    pub sigma: f64,
    pub seed: u64,
    /// Token rows per relevance matrix.
    pub tokens: usize,
    /// Texts are assigned round-robin to this many topics.
    pub topics: usize,
}

impl SynthConfig {
    pub fn new(n_per_class: usize, dim: usize, sigma: f64, seed: u64) -> Self {
        Self {
            n_per_class,
            dim,
            sigma,
            seed,
            tokens: 4,
            topics: 4,
        }
    }
}

/// Generated samples and embeddings, plus the centers they were drawn from.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub samples: Vec<Sample>,
    pub store: EmbeddingStore,
    /// Per facet (schema order), the Left, Center and Right class centers.
    pub ideology_centers: Vec<[Vec<f64>; 3]>,
    /// Per facet, the center of its related token rows.
    pub related_centers: Vec<Vec<f64>>,
    /// Center of filler token rows.
    pub filler_center: Vec<f64>,
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Stored values are f32; rounding here keeps the in-memory data equal to
/// what a file round trip would give.
fn to_f32_grid(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = *x as f32 as f64);
}

fn gaussian<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Unit vector orthogonal to `basis` while the basis does not span the
/// space, otherwise just a random unit vector.
fn fresh_direction<R: Rng>(dim: usize, basis: &mut Vec<Vec<f64>>, rng: &mut R) -> Vec<f64> {
    let mut v = gaussian(dim, rng);
    if basis.len() < dim {
        for b in basis.iter() {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        normalize(&mut v);
        basis.push(v.clone());
    } else {
        normalize(&mut v);
    }
    v
}

fn noisy<R: Rng>(center: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    if sigma == 0.0 {
        return center.to_vec();
    }
    let mut v: Vec<f64> = center
        .iter()
        .map(|c| c + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    normalize(&mut v);
    to_f32_grid(&mut v);
    v
}

/// Texts that each relate to exactly one facet, with unit-norm class
/// centers that double as the concept embeddings.
pub fn synth_generate(schema: &SchemaSpec, cfg: &SynthConfig) -> Result<SynthData> {
    let d = cfg.dim;
    if d < 4 || !d.is_multiple_of(2) {
        return Err(Error::Config(format!("synthetic dim must be even and at least 4, got {d}")));
    }
    if !cfg.sigma.is_finite() || cfg.sigma < 0.0 {
        return Err(Error::Config(format!("sigma must be non-negative, got {}", cfg.sigma)));
    }
    if cfg.tokens < 2 || cfg.topics == 0 {
        return Err(Error::Config("need at least 2 token rows and 1 topic".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let codes = schema.facet_codes();

    let mut basis = Vec::new();
    let mut filler_center = fresh_direction(d, &mut basis, &mut rng);
    to_f32_grid(&mut filler_center);
    let mut related_centers = Vec::with_capacity(codes.len());
    for _ in &codes {
        let mut r = fresh_direction(d, &mut basis, &mut rng);
        to_f32_grid(&mut r);
        related_centers.push(r);
    }
    let mut ideology_centers = Vec::with_capacity(codes.len());
    for _ in &codes {
        let mut local = Vec::new();
        let mut c = [0, 1, 2].map(|_| fresh_direction(d, &mut local, &mut rng));
        c.iter_mut().for_each(|v| to_f32_grid(v));
        ideology_centers.push(c);
    }

    let mut store = EmbeddingStore::new(d);
    for (f, code) in codes.iter().enumerate() {
        store.insert_vector(facet_key(code), related_centers[f].clone())?;
        for ideo in Ideology::ALL {
            store.insert_vector(ideology_key(code, ideo), ideology_centers[f][ideo.class()].clone())?;
        }
    }

    let mut samples = Vec::new();
    for (f, code) in codes.iter().enumerate() {
        for ideo in Ideology::ALL {
            for j in 0..cfg.n_per_class {
                let id = format!("syn-{code}-{}-{j:04}", ideo.short());
                let relevance: BTreeMap<String, Relevance> = codes
                    .iter()
                    .map(|c| {
                        let r = if c == code {
                            Relevance::Related
                        } else {
                            Relevance::Unrelated
                        };
                        (c.clone(), r)
                    })
                    .collect();
                let ideology = BTreeMap::from([(code.clone(), ideo)]);

                store.insert_vector(
                    format!("{id}@{code}"),
                    noisy(&ideology_centers[f][ideo.class()], cfg.sigma, &mut rng),
                )?;
                let n_related = rng.gen_range(1..=cfg.tokens / 2);
                let mut rows: Vec<Vec<f64>> = (0..cfg.tokens)
                    .map(|i| {
                        let center = if i < n_related {
                            &related_centers[f]
                        } else {
                            &filler_center
                        };
                        noisy(center, cfg.sigma, &mut rng)
                    })
                    .collect();
                rows.shuffle(&mut rng);
                store.insert(id.clone(), Matrix::from_rows(&rows)?)?;

                samples.push(Sample {
                    id,
                    text: None,
                    topic: format!("topic{}", j % cfg.topics),
                    relevance,
                    ideology,
                });
            }
        }
    }
    Ok(SynthData {
        samples,
        store,
        ideology_centers,
        related_centers,
        filler_center,
    })
}
