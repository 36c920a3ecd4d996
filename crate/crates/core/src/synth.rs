//! Seeded synthetic corpora with a known low-rank triple distribution.
//!
//! A latent tensor `L[s,p,o] = sum_k u_s[k] v_p[k] w_o[k]` of rank `g`
//! decides which triple types occur (its largest cells) and how often.
//! A fraction of those types is held out of training and only shows up in
//! test ground truth. Detectors emit `softmax(onehot(true)/tau + N(0,1))`
//! and pair features are a fixed random code of the true predicate plus
//! Gaussian noise.

use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::conditional::{examples_to_text, ConditionalExample};
use crate::error::{Error, Result};
use crate::evaluation::{GroundTruthTriple, ImageRecord};
use crate::fusion::{BoundingBox, PairScores, RegionCandidate};
use crate::math::softmax;
use crate::records::images_to_text;
use crate::vocab::{Triple, TripleCounts, Vocabulary};

const CANVAS_W: f64 = 800.0;
const CANVAS_H: f64 = 600.0;
const MIN_SIDE: f64 = 40.0;
const MAX_SIDE: f64 = 300.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_entities: usize,
    pub num_relations: usize,
    pub images: usize,
    pub candidates_per_image: usize,
    pub gt_per_image: usize,
    /// Detector noise temperature; 0 gives exact one-hot scores.
    pub temperature: f64,
    pub feature_dim: usize,
    pub latent_rank: usize,
    pub holdout_fraction: f64,
    pub seed: u64,
    /// Number of occurring triple types.
    pub triple_types: usize,
    /// Training observations drawn on top of one per training type.
    pub train_samples: usize,
    pub feature_noise: f64,
    /// Candidate box shift as a fraction of the box side.
    pub box_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_entities: 20,
            num_relations: 8,
            images: 100,
            candidates_per_image: 8,
            gt_per_image: 3,
            temperature: 0.5,
            feature_dim: 16,
            latent_rank: 3,
            holdout_fraction: 0.0,
            seed: 0,
            triple_types: 120,
            train_samples: 3000,
            feature_noise: 0.5,
            box_jitter: 0.05,
        }
    }
}

impl SynthConfig {
    fn holdout_count(&self) -> usize {
        (self.holdout_fraction * self.triple_types as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        for (name, v) in [
            ("entity count", self.num_entities),
            ("relation count", self.num_relations),
            ("images", self.images),
            ("ground-truth triples per image", self.gt_per_image),
            ("feature dimension", self.feature_dim),
            ("latent rank", self.latent_rank),
            ("triple types", self.triple_types),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            ));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad(format!(
                "holdout fraction must be in [0, 1), got {}",
                self.holdout_fraction
            ));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return bad(format!(
                "feature noise must be finite and >= 0, got {}",
                self.feature_noise
            ));
        }
        if !(0.0..=0.25).contains(&self.box_jitter) {
            return bad(format!(
                "box jitter must be in [0, 0.25], got {}",
                self.box_jitter
            ));
        }
        let cells = self.num_entities * self.num_relations * self.num_entities;
        if self.triple_types > cells {
            return bad(format!(
                "{} triple types requested but only {cells} cells exist",
                self.triple_types
            ));
        }
        if self.candidates_per_image < 2 * self.gt_per_image {
            return bad(format!(
                "{} candidates per image cannot cover {} ground-truth pairs",
                self.candidates_per_image, self.gt_per_image
            ));
        }
        let held = self.holdout_count();
        if held >= self.triple_types {
            return bad("holdout leaves no training triple types".into());
        }
        if held > self.images * self.gt_per_image {
            return bad(format!(
                "{held} held-out types do not fit into {} ground-truth slots",
                self.images * self.gt_per_image
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub vocab: Vocabulary,
    pub train_counts: TripleCounts,
    pub train_examples: Vec<ConditionalExample>,
    pub test_images: Vec<ImageRecord>,
    /// Triple types that occur only in test ground truth, sorted.
    pub held_out: Vec<Triple>,
}

impl SynthCorpus {
    /// Writes `vocab.txt`, `train_triples.txt`, `train_examples.txt` and
    /// `images.jsonl` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("vocab.txt", self.vocab.to_text()),
            ("train_triples.txt", self.train_counts.to_text(&self.vocab)?),
            (
                "train_examples.txt",
                examples_to_text(&self.train_examples, &self.vocab)?,
            ),
            (
                "images.jsonl",
                images_to_text(&self.test_images, &self.vocab)?,
            ),
        ];
        for (name, text) in files {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussians(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| gaussian(rng)).collect()
}

fn detector(rng: &mut ChaCha8Rng, truth: usize, n: usize, tau: f64) -> Vec<f64> {
    let noise = gaussians(rng, n);
    if tau == 0.0 {
        let mut v = vec![0.0; n];
        v[truth] = 1.0;
        return v;
    }
    let logits: Vec<f64> = noise
        .iter()
        .enumerate()
        .map(|(i, z)| if i == truth { 1.0 / tau + z } else { *z })
        .collect();
    softmax(&logits)
}

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let w = rng.random_range(MIN_SIDE..MAX_SIDE);
    let h = rng.random_range(MIN_SIDE..MAX_SIDE);
    let x = rng.random_range(0.0..CANVAS_W - w);
    let y = rng.random_range(0.0..CANVAS_H - h);
    BoundingBox::new(x, y, x + w, y + h).expect("positive sides")
}

fn jittered(rng: &mut ChaCha8Rng, b: &BoundingBox, jitter: f64) -> BoundingBox {
    let (w, h) = (b.x_max - b.x_min, b.y_max - b.y_min);
    let (dx, dy) = if jitter > 0.0 {
        (
            rng.random_range(-jitter..=jitter) * w,
            rng.random_range(-jitter..=jitter) * h,
        )
    } else {
        (0.0, 0.0)
    };
    BoundingBox::new(b.x_min + dx, b.y_min + dy, b.x_max + dx, b.y_max + dy)
        .expect("shift keeps sides")
}

fn feature(rng: &mut ChaCha8Rng, code: &[f64], noise: f64) -> Vec<f64> {
    code.iter().map(|c| c + noise * gaussian(rng)).collect()
}

fn vocabulary(cfg: &SynthConfig) -> Result<Vocabulary> {
    let ew = (cfg.num_entities - 1).to_string().len();
    let rw = (cfg.num_relations - 1).to_string().len();
    Vocabulary::from_names(
        (0..cfg.num_entities).map(|i| format!("entity_{i:0ew$}")),
        (0..cfg.num_relations).map(|i| format!("rel_{i:0rw$}")),
    )
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let (ne, nr, g) = (cfg.num_entities, cfg.num_relations, cfg.latent_rank);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vocab = vocabulary(cfg)?;

    let u: Vec<Vec<f64>> = (0..ne).map(|_| gaussians(&mut rng, g)).collect();
    let v: Vec<Vec<f64>> = (0..nr).map(|_| gaussians(&mut rng, g)).collect();
    let w: Vec<Vec<f64>> = (0..ne).map(|_| gaussians(&mut rng, g)).collect();
    let scale = 1.0 / (g as f64).sqrt();
    let mut cells = Vec::with_capacity(ne * nr * ne);
    for s in 0..ne {
        for p in 0..nr {
            for o in 0..ne {
                let l: f64 = (0..g).map(|k| u[s][k] * v[p][k] * w[o][k]).sum();
                cells.push((Triple::new(s, p, o), l * scale));
            }
        }
    }
    // largest latent cells occur; ties resolved by triple order
    cells.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    cells.truncate(cfg.triple_types);
    let top = cells[0].1;
    let types: Vec<(Triple, f64)> = cells
        .into_iter()
        .map(|(t, l)| (t, (l - top).exp()))
        .collect();

    let mut order: Vec<usize> = (0..types.len()).collect();
    order.shuffle(&mut rng);
    let n_held = cfg.holdout_count();
    let mut held_idx: Vec<usize> = order[..n_held].to_vec();
    held_idx.sort_unstable();
    let mut train_idx: Vec<usize> = order[n_held..].to_vec();
    train_idx.sort_unstable();

    let codes: Vec<Vec<f64>> = (0..nr)
        .map(|_| gaussians(&mut rng, cfg.feature_dim))
        .collect();

    let mut train_counts = TripleCounts::new(ne, nr);
    let mut train_examples = Vec::new();
    let train_weights = WeightedIndex::new(train_idx.iter().map(|&i| types[i].1))
        .map_err(|e| Error::InvalidConfig(format!("latent weights: {e}")))?;
    let draws = train_idx
        .iter()
        .copied()
        .chain((0..cfg.train_samples).map(|_| train_idx[train_weights.sample(&mut rng)]))
        .collect::<Vec<_>>();
    for i in draws {
        let t = types[i].0;
        train_counts.add(t, 1)?;
        train_examples.push(ConditionalExample {
            subject: t.s,
            object: t.o,
            feature: feature(&mut rng, &codes[t.p], cfg.feature_noise),
            predicate: t.p,
        });
    }

    let all_weights = WeightedIndex::new(types.iter().map(|t| t.1))
        .map_err(|e| Error::InvalidConfig(format!("latent weights: {e}")))?;
    let slots = cfg.images * cfg.gt_per_image;
    let mut gt_types: Vec<usize> = held_idx.clone();
    while gt_types.len() < slots {
        gt_types.push(all_weights.sample(&mut rng));
    }
    gt_types.shuffle(&mut rng);

    let digits = (cfg.images - 1).to_string().len().max(4);
    let mut test_images = Vec::with_capacity(cfg.images);
    for (img, chunk) in gt_types.chunks(cfg.gt_per_image).enumerate() {
        // (entity, gt box) per candidate, plus the ground-truth pair links
        let mut regions: Vec<(usize, BoundingBox)> = Vec::with_capacity(cfg.candidates_per_image);
        let mut links = Vec::with_capacity(chunk.len());
        let mut ground_truth = Vec::with_capacity(chunk.len());
        for &i in chunk {
            let t = types[i].0;
            let (sb, ob) = (random_box(&mut rng), random_box(&mut rng));
            links.push((regions.len(), regions.len() + 1, t.p));
            regions.push((t.s, sb));
            regions.push((t.o, ob));
            ground_truth.push((t, sb, ob));
        }
        while regions.len() < cfg.candidates_per_image {
            let e = rng.random_range(0..ne);
            regions.push((e, random_box(&mut rng)));
        }
        let mut perm: Vec<usize> = (0..regions.len()).collect();
        perm.shuffle(&mut rng);
        let mut slot = vec![0; regions.len()];
        for (pos, &orig) in perm.iter().enumerate() {
            slot[orig] = pos;
        }
        let candidates: Vec<RegionCandidate> = perm
            .iter()
            .map(|&orig| {
                let (e, b) = regions[orig];
                RegionCandidate {
                    bbox: jittered(&mut rng, &b, cfg.box_jitter),
                    entity_scores: detector(&mut rng, e, ne, cfg.temperature),
                }
            })
            .collect();

        let mut truth_of_pair = std::collections::HashMap::new();
        for &(a, b, p) in &links {
            truth_of_pair.entry((slot[a], slot[b])).or_insert(p);
        }
        let mut pairs = Vec::new();
        let mut gt_signal = std::collections::HashMap::new();
        for i in 0..candidates.len() {
            for j in 0..candidates.len() {
                if i == j {
                    continue;
                }
                let p = match truth_of_pair.get(&(i, j)) {
                    Some(&p) => p,
                    None => rng.random_range(0..nr),
                };
                let scores = detector(&mut rng, p, nr, cfg.temperature);
                let feat = feature(&mut rng, &codes[p], cfg.feature_noise);
                if truth_of_pair.contains_key(&(i, j)) {
                    gt_signal.insert((i, j), (scores.clone(), feat.clone()));
                }
                pairs.push(PairScores {
                    subject: i,
                    object: j,
                    predicate_scores: scores,
                    feature: Some(feat),
                });
            }
        }
        let ground_truth = ground_truth
            .into_iter()
            .zip(&links)
            .map(|((t, sb, ob), &(a, b, _))| {
                let (scores, feat) = gt_signal[&(slot[a], slot[b])].clone();
                GroundTruthTriple {
                    triple: t,
                    subject_box: sb,
                    object_box: ob,
                    predicate_scores: Some(scores),
                    feature: Some(feat),
                }
            })
            .collect();
        test_images.push(ImageRecord {
            image_id: format!("img_{img:0digits$}"),
            candidates,
            pairs,
            ground_truth,
        });
    }

    let held_out = held_idx
        .iter()
        .map(|&i| types[i].0)
        .collect::<std::collections::BTreeSet<_>>();
    Ok(SynthCorpus {
        vocab,
        train_counts,
        train_examples,
        test_images,
        held_out: held_out.into_iter().collect(),
    })
}
