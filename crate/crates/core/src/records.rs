//! Line-delimited JSON formats for image records and stored predictions.
//! See `docs/image-format.md` for the schema with a worked example.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{GroundTruthTriple, ImagePredictions, ImageRecord};
use crate::fusion::{BoundingBox, PairScores, PredictedTriple, RegionCandidate};
use crate::vocab::{Triple, Vocabulary};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CandidateJson {
    #[serde(rename = "box")]
    bbox: BoundingBox,
    scores: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairJson {
    subject: usize,
    object: usize,
    scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroundTruthJson {
    subject: String,
    predicate: String,
    object: String,
    subject_box: BoundingBox,
    object_box: BoundingBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    predicate_scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageJson {
    image_id: String,
    candidates: Vec<CandidateJson>,
    pairs: Vec<PairJson>,
    ground_truth: Vec<GroundTruthJson>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionJson {
    subject: String,
    predicate: String,
    object: String,
    subject_box: BoundingBox,
    object_box: BoundingBox,
    confidence: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImagePredictionsJson {
    image_id: String,
    triples: Vec<PredictionJson>,
    #[serde(default)]
    predicate_triples: Vec<PredictionJson>,
}

fn resolve(vocab: &Vocabulary, s: &str, p: &str, o: &str) -> std::result::Result<Triple, String> {
    let entity = |n: &str| {
        vocab
            .entity_id(n)
            .ok_or_else(|| format!("unknown entity name `{n}`"))
    };
    let relation = vocab
        .relation_id(p)
        .ok_or_else(|| format!("unknown relation name `{p}`"))?;
    Ok(Triple::new(entity(s)?, relation, entity(o)?))
}

fn names(vocab: &Vocabulary, t: Triple) -> Result<(String, String, String)> {
    Ok((
        vocab.entity_name(t.s)?.to_owned(),
        vocab.relation_name(t.p)?.to_owned(),
        vocab.entity_name(t.o)?.to_owned(),
    ))
}

fn for_each_record<T, F>(text: &str, path: &Path, mut f: F) -> Result<Vec<T>>
where
    F: FnMut(&str) -> std::result::Result<T, String>,
{
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        out.push(f(line).map_err(|msg| Error::parse(path, idx + 1, msg))?);
    }
    Ok(out)
}

pub fn parse_images(text: &str, path: &Path, vocab: &Vocabulary) -> Result<Vec<ImageRecord>> {
    for_each_record(text, path, |line| {
        let img: ImageJson = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let ground_truth = img
            .ground_truth
            .into_iter()
            .map(|g| {
                Ok(GroundTruthTriple {
                    triple: resolve(vocab, &g.subject, &g.predicate, &g.object)?,
                    subject_box: g.subject_box,
                    object_box: g.object_box,
                    predicate_scores: g.predicate_scores,
                    feature: g.feature,
                })
            })
            .collect::<std::result::Result<_, String>>()?;
        Ok(ImageRecord {
            image_id: img.image_id,
            candidates: img
                .candidates
                .into_iter()
                .map(|c| RegionCandidate {
                    bbox: c.bbox,
                    entity_scores: c.scores,
                })
                .collect(),
            pairs: img
                .pairs
                .into_iter()
                .map(|p| PairScores {
                    subject: p.subject,
                    object: p.object,
                    predicate_scores: p.scores,
                    feature: p.feature,
                })
                .collect(),
            ground_truth,
        })
    })
}

pub fn load_images(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Vec<ImageRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_images(&text, path, vocab)
}

pub fn images_to_text(images: &[ImageRecord], vocab: &Vocabulary) -> Result<String> {
    let mut out = String::new();
    for img in images {
        let ground_truth = img
            .ground_truth
            .iter()
            .map(|g| {
                let (subject, predicate, object) = names(vocab, g.triple)?;
                Ok(GroundTruthJson {
                    subject,
                    predicate,
                    object,
                    subject_box: g.subject_box,
                    object_box: g.object_box,
                    predicate_scores: g.predicate_scores.clone(),
                    feature: g.feature.clone(),
                })
            })
            .collect::<Result<_>>()?;
        let json = ImageJson {
            image_id: img.image_id.clone(),
            candidates: img
                .candidates
                .iter()
                .map(|c| CandidateJson {
                    bbox: c.bbox,
                    scores: c.entity_scores.clone(),
                })
                .collect(),
            pairs: img
                .pairs
                .iter()
                .map(|p| PairJson {
                    subject: p.subject,
                    object: p.object,
                    scores: p.predicate_scores.clone(),
                    feature: p.feature.clone(),
                })
                .collect(),
            ground_truth,
        };
        out.push_str(&serde_json::to_string(&json).expect("image record serializes"));
        out.push('\n');
    }
    Ok(out)
}

pub fn save_images(
    path: impl AsRef<Path>,
    images: &[ImageRecord],
    vocab: &Vocabulary,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, images_to_text(images, vocab)?).map_err(|e| Error::io(path, e))
}

fn prediction_json(vocab: &Vocabulary, p: &PredictedTriple) -> Result<PredictionJson> {
    let (subject, predicate, object) = names(vocab, p.triple)?;
    Ok(PredictionJson {
        subject,
        predicate,
        object,
        subject_box: p.subject_box,
        object_box: p.object_box,
        confidence: p.confidence,
    })
}

fn prediction_from_json(
    vocab: &Vocabulary,
    p: PredictionJson,
) -> std::result::Result<PredictedTriple, String> {
    if !p.confidence.is_finite() {
        return Err("non-finite confidence".into());
    }
    Ok(PredictedTriple {
        triple: resolve(vocab, &p.subject, &p.predicate, &p.object)?,
        subject_box: p.subject_box,
        object_box: p.object_box,
        confidence: p.confidence,
    })
}

pub fn predictions_to_text(predictions: &[ImagePredictions], vocab: &Vocabulary) -> Result<String> {
    let mut out = String::new();
    for img in predictions {
        let json = ImagePredictionsJson {
            image_id: img.image_id.clone(),
            triples: img
                .triples
                .iter()
                .map(|p| prediction_json(vocab, p))
                .collect::<Result<_>>()?,
            predicate_triples: img
                .predicate_triples
                .iter()
                .map(|p| prediction_json(vocab, p))
                .collect::<Result<_>>()?,
        };
        out.push_str(&serde_json::to_string(&json).expect("predictions serialize"));
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_predictions(
    text: &str,
    path: &Path,
    vocab: &Vocabulary,
) -> Result<Vec<ImagePredictions>> {
    for_each_record(text, path, |line| {
        let img: ImagePredictionsJson = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let convert = |list: Vec<PredictionJson>| {
            list.into_iter()
                .map(|p| prediction_from_json(vocab, p))
                .collect::<std::result::Result<Vec<_>, String>>()
        };
        Ok(ImagePredictions {
            image_id: img.image_id,
            triples: convert(img.triples)?,
            predicate_triples: convert(img.predicate_triples)?,
        })
    })
}

pub fn load_predictions(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
) -> Result<Vec<ImagePredictions>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text, path, vocab)
}
