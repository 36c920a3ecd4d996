//! Recall@K under the four detection settings.
//!
//! | task         | a prediction matches a ground-truth triple when ...        |
//! |--------------|-------------------------------------------------------------|
//! | phrase       | labels agree, IoU(pred union box, gt union box) >= 0.5      |
//! | relationship | labels agree, subject IoU >= 0.5 and object IoU >= 0.5      |
//! | predicate    | as relationship, but subject/object boxes and labels given  |
//! | triple       | labels agree                                                |
//!
//! Per image the top-K predictions (by descending confidence) are matched
//! greedily in rank order, each ground-truth triple consumed at most once.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{
    sort_by_confidence, BoundingBox, PairScores, PredictedTriple, RegionCandidate,
    RelationPredictor,
};
use crate::vocab::{Triple, TripleCounts};

/// Minimum IoU for a box to count as overlapping its ground truth.
pub const IOU_THRESHOLD: f64 = 0.5;

#[derive(
    Debug,
    Clone,
    Copy,
    PartialEq,
    Eq,
    Hash,
    PartialOrd,
    Ord,
    Serialize,
    Deserialize,
    clap::ValueEnum,
)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Phrase,
    Relationship,
    Predicate,
    Triple,
}

impl Task {
    pub const ALL: [Task; 4] = [
        Task::Phrase,
        Task::Relationship,
        Task::Predicate,
        Task::Triple,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Phrase => "phrase",
            Task::Relationship => "relationship",
            Task::Predicate => "predicate",
            Task::Triple => "triple",
        }
    }

    fn label(self) -> &'static str {
        match self {
            Task::Phrase => "Phrase Det.",
            Task::Relationship => "Rel. Det.",
            Task::Predicate => "Predicate Det.",
            Task::Triple => "Triple Det.",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown task `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthTriple {
    pub triple: Triple,
    pub subject_box: BoundingBox,
    pub object_box: BoundingBox,
    /// Predicate detector scores on the ground-truth union region.
    pub predicate_scores: Option<Vec<f64>>,
    /// Feature vector of the ground-truth union region.
    pub feature: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub candidates: Vec<RegionCandidate>,
    pub pairs: Vec<PairScores>,
    pub ground_truth: Vec<GroundTruthTriple>,
}

pub fn match_triple(pred: &PredictedTriple, gt: &GroundTruthTriple, task: Task) -> bool {
    if pred.triple != gt.triple {
        return false;
    }
    match task {
        Task::Triple => true,
        Task::Phrase => {
            let pred_union = pred.subject_box.union(&pred.object_box);
            let gt_union = gt.subject_box.union(&gt.object_box);
            pred_union.iou(&gt_union) >= IOU_THRESHOLD
        }
        Task::Relationship | Task::Predicate => {
            pred.subject_box.iou(&gt.subject_box) >= IOU_THRESHOLD
                && pred.object_box.iou(&gt.object_box) >= IOU_THRESHOLD
        }
    }
}

/// Matches the first `k` predictions of one image; returns the number of
/// ground-truth triples matched.
pub fn match_image(
    preds: &[PredictedTriple],
    gts: &[GroundTruthTriple],
    task: Task,
    k: usize,
) -> usize {
    let mut used = vec![false; gts.len()];
    let mut matched = 0;
    for pred in preds.iter().take(k) {
        if let Some(j) = (0..gts.len()).find(|&j| !used[j] && match_triple(pred, &gts[j], task)) {
            used[j] = true;
            matched += 1;
        }
    }
    matched
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    /// Total matches over total ground truth across the dataset.
    #[default]
    Micro,
    /// Mean of per-image recalls over images with ground truth.
    Macro,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallEntry {
    pub task: Task,
    pub k: usize,
    pub recall: f64,
    pub matched: usize,
    pub total: usize,
    pub zero_shot: bool,
    /// No ground truth to recall; `recall` is reported as 1.0.
    pub degenerate: bool,
}

/// Recall@K over a dataset of per-image predictions (each sorted by
/// descending confidence) and ground truth.
pub fn recall_at_k(
    predictions: &[Vec<PredictedTriple>],
    ground_truth: &[Vec<GroundTruthTriple>],
    task: Task,
    k: usize,
) -> Result<RecallEntry> {
    recall_with(predictions, ground_truth, task, k, Averaging::Micro)
}

fn recall_with(
    predictions: &[Vec<PredictedTriple>],
    ground_truth: &[Vec<GroundTruthTriple>],
    task: Task,
    k: usize,
    averaging: Averaging,
) -> Result<RecallEntry> {
    if predictions.len() != ground_truth.len() {
        return Err(Error::DimensionMismatch {
            what: "images with predictions".into(),
            expected: ground_truth.len(),
            actual: predictions.len(),
        });
    }
    let mut matched = 0;
    let mut total = 0;
    let mut per_image = Vec::new();
    for (preds, gts) in predictions.iter().zip(ground_truth) {
        let m = match_image(preds, gts, task, k);
        matched += m;
        total += gts.len();
        if !gts.is_empty() {
            per_image.push(m as f64 / gts.len() as f64);
        }
    }
    let degenerate = total == 0;
    let recall = if degenerate {
        1.0
    } else {
        match averaging {
            Averaging::Micro => matched as f64 / total as f64,
            Averaging::Macro => per_image.iter().sum::<f64>() / per_image.len() as f64,
        }
    };
    Ok(RecallEntry {
        task,
        k,
        recall,
        matched,
        total,
        zero_shot: false,
        degenerate,
    })
}

/// Predicate-detection candidates of one image: for every ground-truth
/// triple, `(s_gt, p, o_gt)` on the ground-truth boxes for every predicate
/// `p`, scored by the predictor and sorted by descending confidence.
pub fn predicate_detection_predictions(
    image: &ImageRecord,
    predictor: &dyn RelationPredictor,
) -> Result<Vec<PredictedTriple>> {
    let mut out = Vec::with_capacity(image.ground_truth.len() * predictor.num_relations());
    for gt in &image.ground_truth {
        let t = gt.triple;
        let conf = predictor
            .predicate_confidences(
                t.s,
                t.o,
                gt.predicate_scores.as_deref(),
                gt.feature.as_deref(),
            )
            .map_err(|e| Error::InvalidData(format!("image {}: {e}", image.image_id)))?;
        for (p, c) in conf.into_iter().enumerate() {
            out.push(PredictedTriple {
                triple: Triple::new(t.s, p, t.o),
                subject_box: gt.subject_box,
                object_box: gt.object_box,
                confidence: c,
            });
        }
    }
    sort_by_confidence(&mut out);
    Ok(out)
}

/// Everything a model predicts for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePredictions {
    pub image_id: String,
    /// One prediction per candidate pair, ranked.
    pub triples: Vec<PredictedTriple>,
    /// Predicate-detection candidates built from the ground-truth pairs.
    pub predicate_triples: Vec<PredictedTriple>,
}

fn predict_one(
    image: &ImageRecord,
    predictor: &dyn RelationPredictor,
    with_predicate: bool,
) -> Result<ImagePredictions> {
    let triples = predictor
        .predict_image(&image.candidates, &image.pairs)
        .map_err(|e| Error::InvalidData(format!("image {}: {e}", image.image_id)))?;
    let predicate_triples = if with_predicate {
        predicate_detection_predictions(image, predictor)?
    } else {
        Vec::new()
    };
    Ok(ImagePredictions {
        image_id: image.image_id.clone(),
        triples,
        predicate_triples,
    })
}

/// Runs `predictor` over every image. With `threads > 1` images are spread
/// over a worker pool; output order always follows input order.
pub fn predict_dataset(
    images: &[ImageRecord],
    predictor: &dyn RelationPredictor,
    with_predicate: bool,
    threads: usize,
) -> Result<Vec<ImagePredictions>> {
    if threads <= 1 {
        return images
            .iter()
            .map(|img| predict_one(img, predictor, with_predicate))
            .collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {threads} worker threads: {e}")))?;
    pool.install(|| {
        images
            .par_iter()
            .map(|img| predict_one(img, predictor, with_predicate))
            .collect()
    })
}

#[derive(Debug, Clone)]
pub struct EvalOptions<'a> {
    pub tasks: Vec<Task>,
    pub ks: Vec<usize>,
    pub averaging: Averaging,
    /// Restrict ground truth to triples absent from these training counts.
    pub zero_shot: Option<&'a TripleCounts>,
}

impl Default for EvalOptions<'_> {
    fn default() -> Self {
        EvalOptions {
            tasks: Task::ALL.to_vec(),
            ks: vec![50, 100],
            averaging: Averaging::Micro,
            zero_shot: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub entries: Vec<RecallEntry>,
    pub zero_shot: bool,
}

impl EvalReport {
    pub fn get(&self, task: Task, k: usize) -> Option<&RecallEntry> {
        self.entries.iter().find(|e| e.task == task && e.k == k)
    }

    /// `task,K,recall,matched,total,zero_shot` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,K,recall,matched,total,zero_shot\n");
        for e in &self.entries {
            writeln!(
                out,
                "{},{},{:.6},{},{},{}",
                e.task, e.k, e.recall, e.matched, e.total, e.zero_shot
            )
            .expect("write to String");
        }
        out
    }

    /// Aligned table, one row per task, recall in percent, largest K first.
    pub fn to_table(&self) -> String {
        let mut tasks: Vec<Task> = Vec::new();
        let mut ks: Vec<usize> = Vec::new();
        for e in &self.entries {
            if !tasks.contains(&e.task) {
                tasks.push(e.task);
            }
            if !ks.contains(&e.k) {
                ks.push(e.k);
            }
        }
        ks.sort_unstable_by(|a, b| b.cmp(a));
        let mut out = String::new();
        if self.zero_shot {
            out.push_str("zero-shot ground truth only\n");
        }
        write!(out, "{:<16}", "Task").expect("write to String");
        for k in &ks {
            write!(out, "{:>10}", format!("R@{k}")).expect("write to String");
        }
        out.push('\n');
        let mut any_degenerate = false;
        for task in tasks {
            write!(out, "{:<16}", task.label()).expect("write to String");
            for &k in &ks {
                let cell = match self.get(task, k) {
                    Some(e) => {
                        any_degenerate |= e.degenerate;
                        format!(
                            "{:.2}{}",
                            100.0 * e.recall,
                            if e.degenerate { "*" } else { "" }
                        )
                    }
                    None => "-".to_owned(),
                };
                write!(out, "{cell:>10}").expect("write to String");
            }
            out.push('\n');
        }
        if any_degenerate {
            out.push_str("* no ground truth; recall reported as 100\n");
        }
        out
    }
}

/// Scores stored predictions against the images' ground truth.
pub fn evaluate_predictions(
    images: &[ImageRecord],
    predictions: &[ImagePredictions],
    opts: &EvalOptions<'_>,
) -> Result<EvalReport> {
    if images.len() != predictions.len() {
        return Err(Error::InvalidData(format!(
            "{} images but predictions for {}",
            images.len(),
            predictions.len()
        )));
    }
    for (img, pred) in images.iter().zip(predictions) {
        if img.image_id != pred.image_id {
            return Err(Error::InvalidData(format!(
                "prediction for image `{}` where `{}` was expected",
                pred.image_id, img.image_id
            )));
        }
    }
    let ground_truth: Vec<Vec<GroundTruthTriple>> = images
        .iter()
        .map(|img| match opts.zero_shot {
            None => Ok(img.ground_truth.clone()),
            Some(train) => {
                let triples: Vec<Triple> = img.ground_truth.iter().map(|g| g.triple).collect();
                let mask = train.zero_shot_mask(&triples)?;
                Ok(img
                    .ground_truth
                    .iter()
                    .zip(mask)
                    .filter(|(_, unseen)| *unseen)
                    .map(|(g, _)| g.clone())
                    .collect())
            }
        })
        .collect::<Result<_>>()?;
    let pair_preds: Vec<Vec<PredictedTriple>> =
        predictions.iter().map(|p| p.triples.clone()).collect();
    let predicate_preds: Vec<Vec<PredictedTriple>> = predictions
        .iter()
        .map(|p| p.predicate_triples.clone())
        .collect();

    let mut entries = Vec::new();
    for &task in &opts.tasks {
        let preds = if task == Task::Predicate {
            &predicate_preds
        } else {
            &pair_preds
        };
        for &k in &opts.ks {
            let mut entry = recall_with(preds, &ground_truth, task, k, opts.averaging)?;
            entry.zero_shot = opts.zero_shot.is_some();
            entries.push(entry);
        }
    }
    Ok(EvalReport {
        entries,
        zero_shot: opts.zero_shot.is_some(),
    })
}

fn check_vocabulary(images: &[ImageRecord], predictor: &dyn RelationPredictor) -> Result<()> {
    let (ne, nr) = (predictor.num_entities(), predictor.num_relations());
    for img in images {
        let bad_candidate = img.candidates.iter().find(|c| c.entity_scores.len() != ne);
        let bad_pair = img.pairs.iter().find(|p| p.predicate_scores.len() != nr);
        let bad_gt = img
            .ground_truth
            .iter()
            .find(|g| g.triple.s >= ne || g.triple.o >= ne || g.triple.p >= nr);
        if bad_candidate.is_some() || bad_pair.is_some() || bad_gt.is_some() {
            return Err(Error::InvalidData(format!(
                "image {} does not match the model vocabulary ({ne} entities, {nr} relations)",
                img.image_id
            )));
        }
    }
    Ok(())
}

/// Predicate-detection Recall@K for each `k`.
pub fn predicate_detection(
    images: &[ImageRecord],
    predictor: &dyn RelationPredictor,
    ks: &[usize],
) -> Result<Vec<RecallEntry>> {
    check_vocabulary(images, predictor)?;
    let preds: Vec<Vec<PredictedTriple>> = images
        .iter()
        .map(|img| predicate_detection_predictions(img, predictor))
        .collect::<Result<_>>()?;
    let gts: Vec<Vec<GroundTruthTriple>> = images.iter().map(|i| i.ground_truth.clone()).collect();
    ks.iter()
        .map(|&k| recall_at_k(&preds, &gts, Task::Predicate, k))
        .collect()
}

/// Runs `predictor` end to end and scores it.
pub fn evaluate(
    images: &[ImageRecord],
    predictor: &dyn RelationPredictor,
    opts: &EvalOptions<'_>,
    threads: usize,
) -> Result<EvalReport> {
    check_vocabulary(images, predictor)?;
    let with_predicate = opts.tasks.contains(&Task::Predicate);
    let predictions = predict_dataset(images, predictor, with_predicate, threads)?;
    evaluate_predictions(images, &predictions, opts)
}
