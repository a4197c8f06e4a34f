//! Gaussian-blob images for desk-scale runs.
//!
//! Every category is a soft round blob of one colour on a mid-gray
//! background. In the `paired` layout categories come in pairs whose colours
//! sit close together (`pair_offset` apart) around a shared pair colour, so a
//! trained classifier confuses pair members far more than anything else.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use sha2::{Digest, Sha256};

use super::{Dataset, DatasetHandle};
use crate::config::{SyntheticLayout, SyntheticSpec};
use crate::seed::SeedSource;
use crate::tensor::ImageShape;

const BACKGROUND: f64 = 0.5;
const CANDIDATES: usize = 256;
/// Colours stay this far from 0 and 1 so pair offsets do not clip.
const MARGIN: f64 = 0.1;

pub fn handle(spec: &SyntheticSpec) -> DatasetHandle {
    DatasetHandle {
        name: "synthetic".into(),
        image_shape: ImageShape::new(spec.channels, spec.side, spec.side),
        num_categories: spec.num_categories,
        train_size: spec.num_categories * spec.train_per_category,
        test_size: spec.num_categories * spec.test_per_category,
        category_names: category_names(spec.num_categories),
    }
}

fn category_names(k: usize) -> Vec<String> {
    (0..k)
        .map(|i| {
            let letter = (b'A' + (i % 26) as u8) as char;
            if i < 26 {
                letter.to_string()
            } else {
                format!("{letter}{}", i / 26)
            }
        })
        .collect()
}

/// Stand-in with the shape and category count of a published dataset.
pub fn surrogate_spec(h: &DatasetHandle) -> SyntheticSpec {
    SyntheticSpec {
        num_categories: h.num_categories,
        channels: h.image_shape.channels,
        side: h.image_shape.height,
        train_per_category: 100,
        test_per_category: 20,
        noise: 0.1,
        layout: SyntheticLayout::Independent,
        pair_offset: 0.0,
    }
}

/// Greedy farthest-point selection of `k` colours from random candidates.
fn spread_colours(k: usize, channels: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let cands: Vec<Vec<f64>> = (0..CANDIDATES.max(k))
        .map(|_| (0..channels).map(|_| rng.gen_range(MARGIN..1.0 - MARGIN)).collect())
        .collect();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let bg = vec![BACKGROUND; channels];
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    // Start with the candidate farthest from the background.
    let first = (0..cands.len())
        .max_by(|&a, &b| dist(&cands[a], &bg).total_cmp(&dist(&cands[b], &bg)))
        .unwrap();
    chosen.push(first);
    let mut nearest: Vec<f64> = cands.iter().map(|c| dist(c, &cands[first])).collect();
    while chosen.len() < k {
        let next = (0..cands.len())
            .filter(|i| !chosen.contains(i))
            .max_by(|&a, &b| nearest[a].total_cmp(&nearest[b]))
            .unwrap();
        chosen.push(next);
        for (i, c) in cands.iter().enumerate() {
            nearest[i] = nearest[i].min(dist(c, &cands[next]));
        }
    }
    chosen.into_iter().map(|i| cands[i].clone()).collect()
}

/// Category colours for `spec`, one vector of `channels` values each.
pub fn category_colours(spec: &SyntheticSpec, seeds: SeedSource) -> Vec<Vec<f64>> {
    let mut rng = seeds.rng("synthetic-colours");
    match spec.layout {
        SyntheticLayout::Independent => spread_colours(spec.num_categories, spec.channels, &mut rng),
        SyntheticLayout::Paired => {
            let centres = spread_colours(spec.num_categories / 2, spec.channels, &mut rng);
            let mut out = Vec::with_capacity(spec.num_categories);
            for c in centres {
                let mut dir: Vec<f64> = (0..spec.channels).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                dir.iter_mut().for_each(|v| *v /= norm);
                let half = spec.pair_offset / 2.0;
                for sign in [1.0, -1.0] {
                    out.push(
                        c.iter()
                            .zip(&dir)
                            .map(|(x, d)| (x + sign * half * d).clamp(0.0, 1.0))
                            .collect(),
                    );
                }
            }
            out
        }
    }
}

fn render(
    spec: &SyntheticSpec,
    colours: &[Vec<f64>],
    per_category: usize,
    label: &str,
    seeds: SeedSource,
    name: &str,
) -> Dataset {
    let shape = ImageShape::new(spec.channels, spec.side, spec.side);
    let side = spec.side as f64;
    let sigma = side / 4.0;
    let noise = Normal::new(0.0, spec.noise).expect("noise validated >= 0");
    let mut rng = seeds.rng(label);
    let k = spec.num_categories;
    let mut images = Vec::with_capacity(k * per_category * shape.len());
    let mut labels = Vec::with_capacity(k * per_category);
    // Categories interleaved so any prefix is roughly balanced.
    for _ in 0..per_category {
        for (cat, colour) in colours.iter().enumerate() {
            let cy = (side - 1.0) / 2.0 + rng.gen_range(-side / 8.0..=side / 8.0);
            let cx = (side - 1.0) / 2.0 + rng.gen_range(-side / 8.0..=side / 8.0);
            for &col in colour {
                for y in 0..spec.side {
                    for x in 0..spec.side {
                        let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                        let g = (-d2 / (2.0 * sigma * sigma)).exp();
                        let v = BACKGROUND * (1.0 - g) + col * g + noise.sample(&mut rng);
                        images.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                    }
                }
            }
            labels.push(cat);
        }
    }
    Dataset::new(name, shape, category_names(k), images, labels).expect("generator produces consistent data")
}

/// Train and test sets plus content hashes of the generated bytes.
pub fn generate(spec: &SyntheticSpec, seeds: SeedSource) -> (Dataset, Dataset, BTreeMap<String, String>) {
    let colours = category_colours(spec, seeds);
    let train = render(
        spec,
        &colours,
        spec.train_per_category,
        "synthetic-train",
        seeds,
        "synthetic",
    );
    let test = render(
        spec,
        &colours,
        spec.test_per_category,
        "synthetic-test",
        seeds,
        "synthetic",
    );
    let mut sums = BTreeMap::new();
    for (k, d) in [("synthetic-train", &train), ("synthetic-test", &test)] {
        let mut h = Sha256::new();
        for i in 0..d.len() {
            h.update(d.raw(i));
            h.update((d.label(i) as u64).to_le_bytes());
        }
        sums.insert(k.to_string(), hex::encode(h.finalize()));
    }
    (train, test, sums)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(layout: SyntheticLayout) -> SyntheticSpec {
        SyntheticSpec {
            num_categories: 4,
            channels: 3,
            side: 8,
            train_per_category: 16,
            test_per_category: 4,
            noise: 0.05,
            layout,
            pair_offset: 0.1,
        }
    }

    #[test]
    fn sixty_four_labelled_images_deterministic() {
        let s = spec(SyntheticLayout::Independent);
        let (a, _, sa) = generate(&s, SeedSource::new(42));
        let (b, _, sb) = generate(&s, SeedSource::new(42));
        assert_eq!(a.len(), 64);
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert_eq!(
            a.count_per_category().values().copied().collect::<Vec<_>>(),
            vec![16; 4]
        );
        let (c, _, _) = generate(&s, SeedSource::new(43));
        assert_ne!(a, c);
    }

    #[test]
    fn paired_colours_are_close_within_pairs() {
        let s = spec(SyntheticLayout::Paired);
        let c = category_colours(&s, SeedSource::new(1));
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!((d(&c[0], &c[1]) - 0.1).abs() < 1e-9);
        assert!((d(&c[2], &c[3]) - 0.1).abs() < 1e-9);
        assert!(d(&c[0], &c[2]) > 0.2);
    }

    #[test]
    fn names_are_letters() {
        assert_eq!(category_names(3), vec!["A", "B", "C"]);
        assert_eq!(category_names(28)[27], "B1");
    }
}
