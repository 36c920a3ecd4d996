//! Poisson-regression fit of a [`SemanticModel`] to triple counts, giving the
//! semantic prior `p~(s,p,o) = exp(score(s,p,o))`.

use std::fmt::Write as _;

use log::{debug, info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Optimizer, OptimizerKind, Parameterized};
use crate::semantic::{ModelShape, SemanticModel, Variant, DEFAULT_CELL_CAP};
use crate::vocab::{Triple, TripleCounts, Vocabulary};

/// Scores above this are clamped inside `exp`.
pub const THETA_CLAMP: f64 = 30.0;

/// `exp(theta) - y * theta`: the negative Poisson log-likelihood without the
/// `log y!` constant. `theta` is clamped to [`THETA_CLAMP`] inside `exp`.
pub fn poisson_loss(theta: f64, y: f64) -> f64 {
    theta.min(THETA_CLAMP).exp() - y * theta
}

/// Derivative of [`poisson_loss`] in `theta`. Past the clamp the exponential
/// term is held at `exp(THETA_CLAMP)` so the gradient keeps pointing down.
pub fn poisson_gradient(theta: f64, y: f64) -> f64 {
    theta.min(THETA_CLAMP).exp() - y
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Enumeration {
    /// Every `|E|^2 |R|` cell each epoch, unobserved cells with `y = 0`.
    Full,
    /// All observed cells plus `negatives` random zero cells per positive,
    /// importance-weighted so the loss estimates the full-enumeration mean.
    Sampled { negatives: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorTrainConfig {
    pub variant: Variant,
    pub rank: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub enumeration: Enumeration,
    pub seed: u64,
    pub cell_cap: usize,
}

impl Default for PriorTrainConfig {
    fn default() -> Self {
        PriorTrainConfig {
            variant: Variant::ComplEx,
            rank: 10,
            hidden: 20,
            epochs: 500,
            learning_rate: 0.01,
            optimizer: OptimizerKind::Adam,
            enumeration: Enumeration::Full,
            seed: 0,
            cell_cap: DEFAULT_CELL_CAP,
        }
    }
}

impl PriorTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let Enumeration::Sampled { negatives: 0 } = self.enumeration {
            return Err(Error::InvalidConfig(
                "sampled enumeration needs at least one negative per positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    /// Cells whose score hit the exp clamp this epoch.
    pub clamps: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochStats>,
}

impl TrainingLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    /// `epoch,loss,clamps` CSV with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,clamps\n");
        for e in &self.epochs {
            writeln!(out, "{},{:.12e},{}", e.epoch, e.loss, e.clamps).expect("write to String");
        }
        out
    }
}

/// A training cell: target count `y`, loss weight `weight`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedCell {
    pub triple: Triple,
    pub y: f64,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub loss: f64,
    pub gradients: Vec<Vec<f64>>,
    pub clamps: usize,
}

/// `sum_i w_i * poisson_loss(theta_i, y_i) / normalizer` and its dense
/// gradient, accumulated sequentially in batch order.
pub fn batch_loss_gradient(
    model: &SemanticModel,
    batch: &[WeightedCell],
    normalizer: f64,
) -> BatchLoss {
    let mut gradients = model.zero_gradients();
    let mut loss = 0.0;
    let mut clamps = 0;
    for cell in batch {
        let theta = model.score_unchecked(cell.triple);
        if theta > THETA_CLAMP {
            clamps += 1;
        }
        loss += cell.weight * poisson_loss(theta, cell.y);
        let upstream = cell.weight * poisson_gradient(theta, cell.y) / normalizer;
        model
            .gradients_unchecked(cell.triple, upstream)
            .accumulate_into(&mut gradients, 1.0);
    }
    BatchLoss {
        loss: loss / normalizer,
        gradients,
        clamps,
    }
}

fn all_cells(counts: &TripleCounts) -> Vec<WeightedCell> {
    let (ne, nr) = (counts.num_entities(), counts.num_relations());
    let mut cells = Vec::with_capacity(ne * nr * ne);
    for s in 0..ne {
        for p in 0..nr {
            for o in 0..ne {
                let t = Triple::new(s, p, o);
                cells.push(WeightedCell {
                    triple: t,
                    y: counts.get(t) as f64,
                    weight: 1.0,
                });
            }
        }
    }
    cells
}

fn sample_batch(
    counts: &TripleCounts,
    negatives: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<WeightedCell> {
    let (ne, nr) = (counts.num_entities(), counts.num_relations());
    let total_cells = ne * nr * ne;
    let positives = counts.len();
    let mut batch: Vec<WeightedCell> = counts
        .iter()
        .map(|(t, c)| WeightedCell {
            triple: t,
            y: c as f64,
            weight: 1.0,
        })
        .collect();
    let zero_cells = total_cells - positives;
    if positives == 0 || zero_cells == 0 {
        return batch;
    }
    let draws = negatives * positives;
    let weight = zero_cells as f64 / draws as f64;
    let mut drawn = 0;
    while drawn < draws {
        let t = Triple::new(
            rng.random_range(0..ne),
            rng.random_range(0..nr),
            rng.random_range(0..ne),
        );
        if counts.contains(t) {
            continue;
        }
        batch.push(WeightedCell {
            triple: t,
            y: 0.0,
            weight,
        });
        drawn += 1;
    }
    batch
}

/// Fits a fresh seeded model to `counts` by minimizing the mean Poisson loss.
pub fn train_prior(
    counts: &TripleCounts,
    vocab: &Vocabulary,
    cfg: &PriorTrainConfig,
) -> Result<(SemanticModel, TrainingLog)> {
    cfg.validate()?;
    let (ne, nr) = (vocab.num_entities(), vocab.num_relations());
    if ne == 0 || nr == 0 {
        return Err(Error::InvalidData(
            "prior training needs a nonempty vocabulary".into(),
        ));
    }
    if counts.num_entities() != ne || counts.num_relations() != nr {
        return Err(Error::InvalidData(format!(
            "counts sized {}x{} do not match vocabulary {}x{}",
            counts.num_entities(),
            counts.num_relations(),
            ne,
            nr
        )));
    }
    let shape = ModelShape {
        variant: cfg.variant,
        num_entities: ne,
        num_relations: nr,
        rank: cfg.rank,
        hidden: cfg.hidden,
    };
    let cells = shape.cells();
    if cfg.enumeration == Enumeration::Full && cells > cfg.cell_cap {
        return Err(Error::CapExceeded {
            cells,
            cap: cfg.cell_cap,
        });
    }
    let mut model = SemanticModel::new(shape, cfg.seed)?;
    let mut log = TrainingLog::default();
    if cfg.epochs == 0 {
        return Ok((model, log));
    }

    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, &model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f5a_3b1e);
    let full = match cfg.enumeration {
        Enumeration::Full => Some(all_cells(counts)),
        Enumeration::Sampled { .. } => None,
    };
    let normalizer = cells as f64;
    info!(
        "training {} prior: rank {}, {} cells, {} observed, {} epochs",
        cfg.variant,
        cfg.rank,
        cells,
        counts.len(),
        cfg.epochs
    );

    for epoch in 1..=cfg.epochs {
        let sampled;
        let batch = match (&full, cfg.enumeration) {
            (Some(cells), _) => cells.as_slice(),
            (None, Enumeration::Sampled { negatives }) => {
                sampled = sample_batch(counts, negatives, &mut rng);
                sampled.as_slice()
            }
            (None, Enumeration::Full) => unreachable!(),
        };
        let step = batch_loss_gradient(&model, batch, normalizer);
        if !step.loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: step.loss,
            });
        }
        if step.clamps > 0 {
            warn!(
                "epoch {epoch}: {} scores clamped at {THETA_CLAMP}",
                step.clamps
            );
        }
        optimizer.step(&mut model, &step.gradients);
        if !model.all_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: f64::NAN,
            });
        }
        debug!("epoch {epoch}: loss {:.6e}", step.loss);
        log.epochs.push(EpochStats {
            epoch,
            loss: step.loss,
            clamps: step.clamps,
        });
    }
    Ok((model, log))
}

/// Mean Poisson loss of `model` over every cell of the count tensor.
pub fn full_enumeration_loss(model: &SemanticModel, counts: &TripleCounts) -> f64 {
    let cells = all_cells(counts);
    let n = cells.len() as f64;
    cells
        .iter()
        .map(|c| poisson_loss(model.score_unchecked(c.triple), c.y))
        .sum::<f64>()
        / n
}

/// Dense strictly positive prior over all cells, stored as logs.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorTensor {
    num_entities: usize,
    num_relations: usize,
    log_values: Vec<f64>,
}

impl PriorTensor {
    /// `exp(score)` of a trained model; the stored logs are the raw scores.
    pub fn from_model(model: &SemanticModel, cap: usize) -> Result<Self> {
        let scores = model.score_all_triples(cap)?;
        Ok(PriorTensor {
            num_entities: scores.num_entities,
            num_relations: scores.num_relations,
            log_values: scores.values,
        })
    }

    /// Raw smoothed frequencies `count + alpha`: the count-lookup prior.
    pub fn from_counts(counts: &TripleCounts, alpha: f64) -> Result<Self> {
        if alpha.is_nan() || alpha <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "smoothing constant must be positive, got {alpha}"
            )));
        }
        let (ne, nr) = (counts.num_entities(), counts.num_relations());
        let mut log_values = Vec::with_capacity(ne * nr * ne);
        for s in 0..ne {
            for p in 0..nr {
                for o in 0..ne {
                    log_values.push((counts.get(Triple::new(s, p, o)) as f64 + alpha).ln());
                }
            }
        }
        Ok(PriorTensor {
            num_entities: ne,
            num_relations: nr,
            log_values,
        })
    }

    /// Every cell equal to one.
    pub fn uniform(num_entities: usize, num_relations: usize) -> Self {
        PriorTensor {
            num_entities,
            num_relations,
            log_values: vec![0.0; num_entities * num_relations * num_entities],
        }
    }

    pub fn from_values(num_entities: usize, num_relations: usize, values: &[f64]) -> Result<Self> {
        let expected = num_entities * num_relations * num_entities;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "prior tensor".into(),
                expected,
                actual: values.len(),
            });
        }
        if let Some(bad) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidData(format!(
                "prior entries must be positive, found {bad}"
            )));
        }
        Ok(PriorTensor {
            num_entities,
            num_relations,
            log_values: values.iter().map(|v| v.ln()).collect(),
        })
    }

    /// The same prior multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "scale factor must be positive, got {factor}"
            )));
        }
        let shift = factor.ln();
        Ok(PriorTensor {
            num_entities: self.num_entities,
            num_relations: self.num_relations,
            log_values: self.log_values.iter().map(|v| v + shift).collect(),
        })
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    fn index(&self, s: usize, p: usize, o: usize) -> usize {
        (s * self.num_relations + p) * self.num_entities + o
    }

    pub fn log_value(&self, s: usize, p: usize, o: usize) -> f64 {
        self.log_values[self.index(s, p, o)]
    }

    pub fn value(&self, s: usize, p: usize, o: usize) -> f64 {
        self.log_value(s, p, o).exp()
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log_values
    }

    /// Elementwise `exp` of the stored logs, `[s][p][o]` row-major.
    pub fn values(&self) -> Vec<f64> {
        self.log_values.iter().map(|v| v.exp()).collect()
    }

    /// The `k` highest cells, ties broken lexicographically.
    pub fn top_k(&self, k: usize) -> Vec<(Triple, f64)> {
        let mut order: Vec<usize> = (0..self.log_values.len()).collect();
        order.sort_by(|&a, &b| {
            self.log_values[b]
                .total_cmp(&self.log_values[a])
                .then(a.cmp(&b))
        });
        order
            .into_iter()
            .take(k)
            .map(|i| {
                let o = i % self.num_entities;
                let sp = i / self.num_entities;
                let t = Triple::new(sp / self.num_relations, sp % self.num_relations, o);
                (t, self.log_values[i].exp())
            })
            .collect()
    }
}

/// `exp(score)` for every cell of `model`.
pub fn prior_tensor(model: &SemanticModel, cap: usize) -> Result<Vec<f64>> {
    Ok(PriorTensor::from_model(model, cap)?.values())
}
