//! Conditional multiway predicate model.
//!
//! `p(p | s, o, h) = softmax(W2 tanh(W1 [a_s; a_o; M h] + b1) + b2)` where
//! `a_s`, `a_o` are learned entity embeddings and `h` is a precomputed
//! feature vector of the union region. Trained with softmax cross-entropy.

use std::fs;
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_id, Error, Result};
use crate::math::{argmax, check_distribution, softmax};
use crate::params::{dot, Optimizer, OptimizerKind, ParamGroup, Parameterized};
use crate::prior::{EpochStats, TrainingLog};
use crate::vocab::{Triple, Vocabulary};

const ENT: usize = 0;
const PROJ: usize = 1;
const W1: usize = 2;
const B1: usize = 3;
const W2: usize = 4;
const B2: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConditionalShape {
    pub num_entities: usize,
    pub num_relations: usize,
    pub rank: usize,
    pub hidden: usize,
    pub feature_dim: usize,
}

impl ConditionalShape {
    pub fn group_layout(&self) -> Vec<(&'static str, Vec<usize>)> {
        let (e, r, d, z, f) = (
            self.num_entities,
            self.num_relations,
            self.rank,
            self.hidden,
            self.feature_dim,
        );
        vec![
            ("entity", vec![e, d]),
            ("projection", vec![d, f]),
            ("w1", vec![z, 3 * d]),
            ("b1", vec![z]),
            ("w2", vec![r, z]),
            ("b2", vec![r]),
        ]
    }

    fn validate(&self) -> Result<()> {
        if self.rank == 0 || self.hidden == 0 || self.feature_dim == 0 {
            return Err(Error::InvalidConfig(
                "rank, hidden width and feature dimension must be positive".into(),
            ));
        }
        if self.num_relations == 0 {
            return Err(Error::InvalidConfig(
                "conditional model needs at least one relation".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalModel {
    shape: ConditionalShape,
    groups: Vec<ParamGroup>,
}

impl Parameterized for ConditionalModel {
    fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    fn groups_mut(&mut self) -> &mut [ParamGroup] {
        &mut self.groups
    }
}

struct Forward {
    input: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

impl ConditionalModel {
    pub fn new(shape: ConditionalShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let groups = shape
            .group_layout()
            .into_iter()
            .map(|(name, dims)| {
                let bound = match name {
                    "entity" => 1.0 / (shape.rank as f64).sqrt(),
                    "projection" => 1.0 / (shape.feature_dim as f64).sqrt(),
                    "w1" => 1.0 / (3.0 * shape.rank as f64).sqrt(),
                    "w2" => 1.0 / (shape.hidden as f64).sqrt(),
                    _ => 0.0,
                };
                ParamGroup::uniform(name, dims, bound, &mut rng)
            })
            .collect();
        Ok(ConditionalModel { shape, groups })
    }

    pub fn from_values(shape: ConditionalShape, values: Vec<Vec<f64>>) -> Result<Self> {
        shape.validate()?;
        let layout = shape.group_layout();
        if values.len() != layout.len() {
            return Err(Error::DimensionMismatch {
                what: "parameter group count".into(),
                expected: layout.len(),
                actual: values.len(),
            });
        }
        let groups = layout
            .into_iter()
            .zip(values)
            .map(|((name, dims), v)| {
                let expected: usize = dims.iter().product();
                if v.len() != expected {
                    return Err(Error::DimensionMismatch {
                        what: format!("parameter group `{name}`"),
                        expected,
                        actual: v.len(),
                    });
                }
                Ok(ParamGroup {
                    name,
                    shape: dims,
                    values: v,
                })
            })
            .collect::<Result<_>>()?;
        Ok(ConditionalModel { shape, groups })
    }

    pub fn shape(&self) -> ConditionalShape {
        self.shape
    }

    pub fn num_entities(&self) -> usize {
        self.shape.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.shape.num_relations
    }

    pub fn feature_dim(&self) -> usize {
        self.shape.feature_dim
    }

    pub fn group_mut(&mut self, name: &str) -> Option<&mut ParamGroup> {
        self.groups.iter_mut().find(|g| g.name == name)
    }

    fn check_inputs(&self, s: usize, o: usize, feature: &[f64]) -> Result<()> {
        check_id("entity", s, self.shape.num_entities)?;
        check_id("entity", o, self.shape.num_entities)?;
        if feature.len() != self.shape.feature_dim {
            return Err(Error::DimensionMismatch {
                what: "region feature".into(),
                expected: self.shape.feature_dim,
                actual: feature.len(),
            });
        }
        Ok(())
    }

    fn forward(&self, s: usize, o: usize, feature: &[f64]) -> Forward {
        let g = &self.groups;
        let d = self.shape.rank;
        let mut input = Vec::with_capacity(3 * d);
        input.extend_from_slice(g[ENT].row(s));
        input.extend_from_slice(g[ENT].row(o));
        input.extend((0..d).map(|k| dot(g[PROJ].row(k), feature)));
        let hidden: Vec<f64> = (0..self.shape.hidden)
            .map(|j| (dot(g[W1].row(j), &input) + g[B1].values[j]).tanh())
            .collect();
        let logits: Vec<f64> = (0..self.shape.num_relations)
            .map(|r| dot(g[W2].row(r), &hidden) + g[B2].values[r])
            .collect();
        Forward {
            input,
            hidden,
            probs: softmax(&logits),
        }
    }

    /// Distribution over predicates for subject `s`, object `o` and the
    /// union-region feature.
    pub fn predicate_distribution(&self, s: usize, o: usize, feature: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(s, o, feature)?;
        Ok(self.forward(s, o, feature).probs)
    }

    /// Adds `scale * d(-log p(target))/d(params)` into `grads`; returns the
    /// example's cross-entropy.
    fn accumulate_example(
        &self,
        ex: &ConditionalExample,
        scale: f64,
        grads: &mut [Vec<f64>],
    ) -> f64 {
        let g = &self.groups;
        let (d, z, nr, f) = (
            self.shape.rank,
            self.shape.hidden,
            self.shape.num_relations,
            self.shape.feature_dim,
        );
        let fw = self.forward(ex.subject, ex.object, &ex.feature);
        let loss = -fw.probs[ex.predicate].ln();

        let d_logits: Vec<f64> = (0..nr)
            .map(|r| scale * (fw.probs[r] - if r == ex.predicate { 1.0 } else { 0.0 }))
            .collect();
        let mut d_hidden = vec![0.0; z];
        for r in 0..nr {
            let row = g[W2].row(r);
            for j in 0..z {
                grads[W2][r * z + j] += d_logits[r] * fw.hidden[j];
                d_hidden[j] += row[j] * d_logits[r];
            }
            grads[B2][r] += d_logits[r];
        }
        let d_pre: Vec<f64> = (0..z)
            .map(|j| d_hidden[j] * (1.0 - fw.hidden[j] * fw.hidden[j]))
            .collect();
        let mut d_input = vec![0.0; 3 * d];
        for j in 0..z {
            let row = g[W1].row(j);
            for i in 0..3 * d {
                grads[W1][j * 3 * d + i] += d_pre[j] * fw.input[i];
                d_input[i] += row[i] * d_pre[j];
            }
            grads[B1][j] += d_pre[j];
        }
        for k in 0..d {
            grads[ENT][ex.subject * d + k] += d_input[k];
            grads[ENT][ex.object * d + k] += d_input[d + k];
            for (m, x) in grads[PROJ][k * f..(k + 1) * f].iter_mut().zip(&ex.feature) {
                *m += d_input[2 * d + k] * x;
            }
        }
        loss
    }

    /// Mean cross-entropy over `examples` and its dense gradient.
    pub fn loss_and_gradient(
        &self,
        examples: &[ConditionalExample],
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut grads = self.zero_gradients();
        if examples.is_empty() {
            return Ok((0.0, grads));
        }
        let scale = 1.0 / examples.len() as f64;
        let mut loss = 0.0;
        for ex in examples {
            self.check_example(ex)?;
            loss += self.accumulate_example(ex, scale, &mut grads);
        }
        Ok((loss * scale, grads))
    }

    /// Mean cross-entropy over `examples`.
    pub fn mean_loss(&self, examples: &[ConditionalExample]) -> Result<f64> {
        let mut total = 0.0;
        for ex in examples {
            self.check_example(ex)?;
            total -= self.forward(ex.subject, ex.object, &ex.feature).probs[ex.predicate].ln();
        }
        Ok(total / examples.len().max(1) as f64)
    }

    fn check_example(&self, ex: &ConditionalExample) -> Result<()> {
        self.check_inputs(ex.subject, ex.object, &ex.feature)?;
        check_id("relation", ex.predicate, self.shape.num_relations)
    }
}

/// `p(s|i_s) * p(o|i_o) * p(p|i_p, s, o)`.
pub fn triple_confidence(p_subject: f64, p_object: f64, p_predicate: f64) -> f64 {
    p_subject * p_object * p_predicate
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairPrediction {
    pub triple: Triple,
    pub confidence: f64,
}

/// Picks subject and object as detector argmaxes, then the most probable
/// predicate under the model. Ties go to the lowest id.
pub fn predict_pair(
    model: &ConditionalModel,
    subject_scores: &[f64],
    object_scores: &[f64],
    feature: &[f64],
) -> Result<PairPrediction> {
    let ne = model.num_entities();
    check_distribution("subject scores", subject_scores, ne, 1e-6)?;
    check_distribution("object scores", object_scores, ne, 1e-6)?;
    let s = argmax(subject_scores);
    let o = argmax(object_scores);
    let probs = model.predicate_distribution(s, o, feature)?;
    let p = argmax(&probs);
    Ok(PairPrediction {
        triple: Triple::new(s, p, o),
        confidence: triple_confidence(subject_scores[s], object_scores[o], probs[p]),
    })
}

/// One supervised example: subject, object, union-region feature, predicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalExample {
    pub subject: usize,
    pub object: usize,
    pub feature: Vec<f64>,
    pub predicate: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalTrainConfig {
    pub rank: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ConditionalTrainConfig {
    fn default() -> Self {
        ConditionalTrainConfig {
            rank: 10,
            hidden: 20,
            epochs: 50,
            learning_rate: 0.01,
            optimizer: OptimizerKind::Adam,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Minibatch training of a fresh seeded model on `examples`. The logged loss
/// of an epoch is the mean of its minibatch losses weighted by batch size.
pub fn train_conditional(
    examples: &[ConditionalExample],
    vocab: &Vocabulary,
    cfg: &ConditionalTrainConfig,
) -> Result<(ConditionalModel, TrainingLog)> {
    let first = examples.first().ok_or_else(|| {
        Error::InvalidData("conditional training needs at least one example".into())
    })?;
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    let shape = ConditionalShape {
        num_entities: vocab.num_entities(),
        num_relations: vocab.num_relations(),
        rank: cfg.rank,
        hidden: cfg.hidden,
        feature_dim: first.feature.len(),
    };
    let mut model = ConditionalModel::new(shape, cfg.seed)?;
    for ex in examples {
        model.check_example(ex)?;
    }
    let mut log = TrainingLog::default();
    if cfg.epochs == 0 {
        return Ok((model, log));
    }
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, &model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc0d1_7101);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    info!(
        "training conditional model: {} examples, feature dim {}, {} epochs",
        examples.len(),
        shape.feature_dim,
        cfg.epochs
    );

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut grads = model.zero_gradients();
            let scale = 1.0 / chunk.len() as f64;
            let mut batch_loss = 0.0;
            for &i in chunk {
                batch_loss += model.accumulate_example(&examples[i], scale, &mut grads);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss: batch_loss,
                });
            }
            epoch_loss += batch_loss;
            optimizer.step(&mut model, &grads);
        }
        if !model.all_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: f64::NAN,
            });
        }
        let loss = epoch_loss / examples.len() as f64;
        debug!("epoch {epoch}: cross-entropy {loss:.6}");
        log.epochs.push(EpochStats {
            epoch,
            loss,
            clamps: 0,
        });
    }
    Ok((model, log))
}

/// Parses `subject object predicate f1,f2,...,fn` lines.
pub fn parse_examples(
    text: &str,
    path: &Path,
    vocab: &Vocabulary,
) -> Result<Vec<ConditionalExample>> {
    let mut out = Vec::new();
    let mut dim = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 4 {
            return Err(Error::parse(
                path,
                line_no,
                format!(
                    "expected `subject object predicate features`, found {} tokens",
                    tokens.len()
                ),
            ));
        }
        let unknown = |kind: &'static str, name: &str| Error::UnknownName {
            path: path.to_owned(),
            line: line_no,
            kind,
            name: name.to_owned(),
        };
        let subject = vocab
            .entity_id(tokens[0])
            .ok_or_else(|| unknown("entity", tokens[0]))?;
        let object = vocab
            .entity_id(tokens[1])
            .ok_or_else(|| unknown("entity", tokens[1]))?;
        let predicate = vocab
            .relation_id(tokens[2])
            .ok_or_else(|| unknown("relation", tokens[2]))?;
        let feature = tokens[3]
            .split(',')
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| {
                        Error::parse(path, line_no, format!("invalid feature value `{v}`"))
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        match dim {
            None => dim = Some(feature.len()),
            Some(n) if n != feature.len() => {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!(
                        "feature length {} differs from earlier length {n}",
                        feature.len()
                    ),
                ))
            }
            _ => {}
        }
        out.push(ConditionalExample {
            subject,
            object,
            feature,
            predicate,
        });
    }
    Ok(out)
}

pub fn load_examples(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
) -> Result<Vec<ConditionalExample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_examples(&text, path, vocab)
}

pub fn examples_to_text(examples: &[ConditionalExample], vocab: &Vocabulary) -> Result<String> {
    let mut out = String::new();
    for ex in examples {
        let feature: Vec<String> = ex.feature.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!(
            "{} {} {} {}\n",
            vocab.entity_name(ex.subject)?,
            vocab.entity_name(ex.object)?,
            vocab.relation_name(ex.predicate)?,
            feature.join(",")
        ));
    }
    Ok(out)
}
