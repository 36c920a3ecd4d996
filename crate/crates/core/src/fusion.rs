//! Bayes-rule fusion of a semantic prior with per-region detector scores,
//! plus the per-image prediction pipelines built on top of it.
//!
//! For a candidate pair the fused log-score of `(s, p, o)` is
//!
//! ```text
//! log p~(s,p,o) + log p(s|i_s) - log p~(s)
//!               + log p(p|i_p) - log p~(p)
//!               + log p(o|i_o) - log p~(o)
//! ```
//!
//! and the pair's prediction is its argmax. Scores are unnormalized
//! log-posteriors; only their order is used downstream.

use serde::{Deserialize, Serialize};

use crate::conditional::{predict_pair, triple_confidence, ConditionalModel};
use crate::error::{check_id, Error, Result};
use crate::math::{argmax, check_distribution, floored_ln};
use crate::prior::PriorTensor;
use crate::vocab::{Axis, Triple, TripleCounts};

const SCORE_TOLERANCE: f64 = 1e-6;

/// Axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::InvalidData(format!(
                "invalid box [{x_min}, {y_min}, {x_max}, {y_max}]: need x_max > x_min and y_max > y_min"
            )))
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_max > self.x_min
            && self.y_max > self.y_min
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Intersection over union; 0 for disjoint boxes.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection_area(other);
        if inter == 0.0 {
            return 0.0;
        }
        inter / (self.area() + other.area() - inter)
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

pub fn box_union(a: &BoundingBox, b: &BoundingBox) -> BoundingBox {
    a.union(b)
}

pub fn box_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    a.iou(b)
}

/// A detected region with the detector's class distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionCandidate {
    pub bbox: BoundingBox,
    pub entity_scores: Vec<f64>,
}

/// An ordered candidate pair with the predicate detector's distribution on
/// the union region and, optionally, that region's feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScores {
    pub subject: usize,
    pub object: usize,
    pub predicate_scores: Vec<f64>,
    pub feature: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedTriple {
    pub triple: Triple,
    pub subject_box: BoundingBox,
    pub object_box: BoundingBox,
    pub confidence: f64,
}

/// Smoothed marginal masses `p~(s)`, `p~(p)`, `p~(o)`; all strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub subject: Vec<f64>,
    pub predicate: Vec<f64>,
    pub object: Vec<f64>,
}

/// Where the fusion denominator comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MarginalSource {
    /// Training-count totals plus the smoothing constant.
    Counts,
    /// Sums of the prior tensor plus the smoothing constant.
    Prior,
}

impl Marginals {
    pub fn from_counts(counts: &TripleCounts, alpha: f64) -> Result<Self> {
        let (ne, nr) = (counts.num_entities(), counts.num_relations());
        let axis = |axis, n| {
            (0..n)
                .map(|i| counts.marginal(axis, i, alpha))
                .collect::<Result<Vec<_>>>()
        };
        Ok(Marginals {
            subject: axis(Axis::Subject, ne)?,
            predicate: axis(Axis::Predicate, nr)?,
            object: axis(Axis::Object, ne)?,
        })
    }

    pub fn from_prior(prior: &PriorTensor, alpha: f64) -> Result<Self> {
        if alpha.is_nan() || alpha <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "smoothing constant must be positive, got {alpha}"
            )));
        }
        let (ne, nr) = (prior.num_entities(), prior.num_relations());
        let mut m = Marginals {
            subject: vec![alpha; ne],
            predicate: vec![alpha; nr],
            object: vec![alpha; ne],
        };
        for s in 0..ne {
            for p in 0..nr {
                for o in 0..ne {
                    let v = prior.value(s, p, o);
                    m.subject[s] += v;
                    m.predicate[p] += v;
                    m.object[o] += v;
                }
            }
        }
        Ok(m)
    }

    pub fn uniform(num_entities: usize, num_relations: usize) -> Self {
        Marginals {
            subject: vec![1.0; num_entities],
            predicate: vec![1.0; num_relations],
            object: vec![1.0; num_entities],
        }
    }

    fn check(&self, num_entities: usize, num_relations: usize) -> Result<()> {
        for (what, v, n) in [
            ("subject marginals", &self.subject, num_entities),
            ("predicate marginals", &self.predicate, num_relations),
            ("object marginals", &self.object, num_entities),
        ] {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    what: what.into(),
                    expected: n,
                    actual: v.len(),
                });
            }
            if v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                return Err(Error::InvalidData(format!(
                    "{what} must be strictly positive"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedTriple {
    pub triple: Triple,
    /// Unnormalized log-posterior.
    pub score: f64,
}

/// Per-id log likelihood ratio `ln max(p, floor) - ln marginal`.
fn log_ratios(scores: &[f64], marginals: &[f64]) -> Vec<f64> {
    scores
        .iter()
        .zip(marginals)
        .map(|(&p, &m)| floored_ln(p) - m.ln())
        .collect()
}

fn fused_argmax(prior: &PriorTensor, subj: &[f64], pred: &[f64], obj: &[f64]) -> FusedTriple {
    let mut best = FusedTriple {
        triple: Triple::new(0, 0, 0),
        score: f64::NEG_INFINITY,
    };
    for (s, us) in subj.iter().enumerate() {
        for (p, up) in pred.iter().enumerate() {
            for (o, uo) in obj.iter().enumerate() {
                let score = prior.log_value(s, p, o) + us + up + uo;
                if score > best.score {
                    best = FusedTriple {
                        triple: Triple::new(s, p, o),
                        score,
                    };
                }
            }
        }
    }
    best
}

/// Prior plus smoothed marginals, ready to fuse detector outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesFusion {
    prior: PriorTensor,
    marginals: Marginals,
}

impl BayesFusion {
    pub fn new(prior: PriorTensor, marginals: Marginals) -> Result<Self> {
        marginals.check(prior.num_entities(), prior.num_relations())?;
        Ok(BayesFusion { prior, marginals })
    }

    pub fn prior(&self) -> &PriorTensor {
        &self.prior
    }

    pub fn marginals(&self) -> &Marginals {
        &self.marginals
    }

    fn check_scores(&self, subj: &[f64], pred: &[f64], obj: &[f64]) -> Result<()> {
        let (ne, nr) = (self.prior.num_entities(), self.prior.num_relations());
        check_distribution("subject scores", subj, ne, SCORE_TOLERANCE)?;
        check_distribution("predicate scores", pred, nr, SCORE_TOLERANCE)?;
        check_distribution("object scores", obj, ne, SCORE_TOLERANCE)
    }

    /// Fused log-score of one cell.
    pub fn cell_score(&self, t: Triple, subj: &[f64], pred: &[f64], obj: &[f64]) -> f64 {
        let m = &self.marginals;
        self.prior.log_value(t.s, t.p, t.o)
            + (floored_ln(subj[t.s]) - m.subject[t.s].ln())
            + (floored_ln(pred[t.p]) - m.predicate[t.p].ln())
            + (floored_ln(obj[t.o]) - m.object[t.o].ln())
    }
}

/// Highest fused log-posterior over all `(s, p, o)`; ties go to the
/// lexicographically smallest triple. Detector probabilities are floored at
/// [`crate::math::PROB_FLOOR`] before the log.
pub fn fuse_pair(
    fusion: &BayesFusion,
    subj: &[f64],
    pred: &[f64],
    obj: &[f64],
) -> Result<FusedTriple> {
    fusion.check_scores(subj, pred, obj)?;
    let m = &fusion.marginals;
    Ok(fused_argmax(
        &fusion.prior,
        &log_ratios(subj, &m.subject),
        &log_ratios(pred, &m.predicate),
        &log_ratios(obj, &m.object),
    ))
}

fn check_pair(pair: &PairScores, n_candidates: usize) -> Result<()> {
    check_id("candidate", pair.subject, n_candidates)?;
    check_id("candidate", pair.object, n_candidates)?;
    if pair.subject == pair.object {
        return Err(Error::InvalidData(format!(
            "pair uses candidate {} as both subject and object",
            pair.subject
        )));
    }
    Ok(())
}

/// Stable sort by descending confidence.
pub fn sort_by_confidence(preds: &mut [PredictedTriple]) {
    preds.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
}

/// One fused prediction per pair, sorted by descending log-posterior.
pub fn predict_image_bayes(
    fusion: &BayesFusion,
    candidates: &[RegionCandidate],
    pairs: &[PairScores],
) -> Result<Vec<PredictedTriple>> {
    let ne = fusion.prior.num_entities();
    let m = &fusion.marginals;
    let mut subject_terms = Vec::with_capacity(candidates.len());
    let mut object_terms = Vec::with_capacity(candidates.len());
    for c in candidates {
        check_distribution("entity scores", &c.entity_scores, ne, SCORE_TOLERANCE)?;
        subject_terms.push(log_ratios(&c.entity_scores, &m.subject));
        object_terms.push(log_ratios(&c.entity_scores, &m.object));
    }
    let mut out = Vec::with_capacity(pairs.len());
    for pair in pairs {
        check_pair(pair, candidates.len())?;
        check_distribution(
            "predicate scores",
            &pair.predicate_scores,
            fusion.prior.num_relations(),
            SCORE_TOLERANCE,
        )?;
        let fused = fused_argmax(
            &fusion.prior,
            &subject_terms[pair.subject],
            &log_ratios(&pair.predicate_scores, &m.predicate),
            &object_terms[pair.object],
        );
        out.push(PredictedTriple {
            triple: fused.triple,
            subject_box: candidates[pair.subject].bbox,
            object_box: candidates[pair.object].bbox,
            confidence: fused.score,
        });
    }
    sort_by_confidence(&mut out);
    Ok(out)
}

/// One prediction per pair from the conditional model, sorted by
/// descending triple confidence.
pub fn predict_image_conditional(
    model: &ConditionalModel,
    candidates: &[RegionCandidate],
    pairs: &[PairScores],
) -> Result<Vec<PredictedTriple>> {
    let mut out = Vec::with_capacity(pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        check_pair(pair, candidates.len())?;
        let feature = pair
            .feature
            .as_deref()
            .ok_or_else(|| Error::InvalidData(format!("pair {i} has no region feature")))?;
        let (subj, obj) = (&candidates[pair.subject], &candidates[pair.object]);
        let pred = predict_pair(model, &subj.entity_scores, &obj.entity_scores, feature)?;
        out.push(PredictedTriple {
            triple: pred.triple,
            subject_box: subj.bbox,
            object_box: obj.bbox,
            confidence: pred.confidence,
        });
    }
    sort_by_confidence(&mut out);
    Ok(out)
}

/// Detector-only baseline: independent argmaxes, confidence is the product
/// of the three detector probabilities.
pub fn predict_image_visual(
    num_entities: usize,
    num_relations: usize,
    candidates: &[RegionCandidate],
    pairs: &[PairScores],
) -> Result<Vec<PredictedTriple>> {
    let mut out = Vec::with_capacity(pairs.len());
    for pair in pairs {
        check_pair(pair, candidates.len())?;
        let (subj, obj) = (&candidates[pair.subject], &candidates[pair.object]);
        check_distribution(
            "entity scores",
            &subj.entity_scores,
            num_entities,
            SCORE_TOLERANCE,
        )?;
        check_distribution(
            "entity scores",
            &obj.entity_scores,
            num_entities,
            SCORE_TOLERANCE,
        )?;
        check_distribution(
            "predicate scores",
            &pair.predicate_scores,
            num_relations,
            SCORE_TOLERANCE,
        )?;
        let s = argmax(&subj.entity_scores);
        let p = argmax(&pair.predicate_scores);
        let o = argmax(&obj.entity_scores);
        out.push(PredictedTriple {
            triple: Triple::new(s, p, o),
            subject_box: subj.bbox,
            object_box: obj.bbox,
            confidence: triple_confidence(
                subj.entity_scores[s],
                obj.entity_scores[o],
                pair.predicate_scores[p],
            ),
        });
    }
    sort_by_confidence(&mut out);
    Ok(out)
}

/// A model that turns an image's candidate pairs into ranked triples.
pub trait RelationPredictor: Sync {
    fn num_entities(&self) -> usize;
    fn num_relations(&self) -> usize;

    fn predict_image(
        &self,
        candidates: &[RegionCandidate],
        pairs: &[PairScores],
    ) -> Result<Vec<PredictedTriple>>;

    /// Confidence of `(s, p, o)` for every predicate `p` when subject and
    /// object are known, given the union region's detector scores and/or
    /// feature.
    fn predicate_confidences(
        &self,
        s: usize,
        o: usize,
        predicate_scores: Option<&[f64]>,
        feature: Option<&[f64]>,
    ) -> Result<Vec<f64>>;
}

fn one_hot(id: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[id] = 1.0;
    v
}

fn require_scores(scores: Option<&[f64]>, n: usize) -> Result<&[f64]> {
    let scores = scores
        .ok_or_else(|| Error::InvalidData("ground truth pair has no predicate scores".into()))?;
    check_distribution("predicate scores", scores, n, SCORE_TOLERANCE)?;
    Ok(scores)
}

impl RelationPredictor for BayesFusion {
    fn num_entities(&self) -> usize {
        self.prior.num_entities()
    }

    fn num_relations(&self) -> usize {
        self.prior.num_relations()
    }

    fn predict_image(
        &self,
        candidates: &[RegionCandidate],
        pairs: &[PairScores],
    ) -> Result<Vec<PredictedTriple>> {
        predict_image_bayes(self, candidates, pairs)
    }

    fn predicate_confidences(
        &self,
        s: usize,
        o: usize,
        predicate_scores: Option<&[f64]>,
        _feature: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        let (ne, nr) = (self.num_entities(), self.num_relations());
        check_id("entity", s, ne)?;
        check_id("entity", o, ne)?;
        let pred = require_scores(predicate_scores, nr)?;
        let (subj, obj) = (one_hot(s, ne), one_hot(o, ne));
        Ok((0..nr)
            .map(|p| self.cell_score(Triple::new(s, p, o), &subj, pred, &obj))
            .collect())
    }
}

impl RelationPredictor for ConditionalModel {
    fn num_entities(&self) -> usize {
        ConditionalModel::num_entities(self)
    }

    fn num_relations(&self) -> usize {
        ConditionalModel::num_relations(self)
    }

    fn predict_image(
        &self,
        candidates: &[RegionCandidate],
        pairs: &[PairScores],
    ) -> Result<Vec<PredictedTriple>> {
        predict_image_conditional(self, candidates, pairs)
    }

    fn predicate_confidences(
        &self,
        s: usize,
        o: usize,
        _predicate_scores: Option<&[f64]>,
        feature: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        let feature = feature
            .ok_or_else(|| Error::InvalidData("ground truth pair has no region feature".into()))?;
        let probs = self.predicate_distribution(s, o, feature)?;
        Ok(probs
            .into_iter()
            .map(|p| triple_confidence(1.0, 1.0, p))
            .collect())
    }
}

/// The detector-only baseline as a [`RelationPredictor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VisualOnly {
    pub num_entities: usize,
    pub num_relations: usize,
}

impl RelationPredictor for VisualOnly {
    fn num_entities(&self) -> usize {
        self.num_entities
    }

    fn num_relations(&self) -> usize {
        self.num_relations
    }

    fn predict_image(
        &self,
        candidates: &[RegionCandidate],
        pairs: &[PairScores],
    ) -> Result<Vec<PredictedTriple>> {
        predict_image_visual(self.num_entities, self.num_relations, candidates, pairs)
    }

    fn predicate_confidences(
        &self,
        s: usize,
        o: usize,
        predicate_scores: Option<&[f64]>,
        _feature: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        check_id("entity", s, self.num_entities)?;
        check_id("entity", o, self.num_entities)?;
        Ok(require_scores(predicate_scores, self.num_relations)?.to_vec())
    }
}
