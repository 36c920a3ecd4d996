// Shared by the integration tests and the acceptance runner; not every
// binary uses every helper.
#![allow(dead_code, clippy::needless_range_loop)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relfuse::checkpoint::Checkpoint;
use relfuse::conditional::ConditionalExample;
use relfuse::evaluation::{GroundTruthTriple, ImageRecord, Task};
use relfuse::fusion::{BoundingBox, Marginals};
use relfuse::params::Parameterized;
use relfuse::prior::{PriorTensor, PriorTrainConfig, WeightedCell};
use relfuse::records::load_images;
use relfuse::semantic::{ModelShape, SemanticModel, Variant, DEFAULT_CELL_CAP};
use relfuse::synth::SynthConfig;
use relfuse::vocab::{load_triples, VocabMode};
use relfuse::{ConditionalModel, Triple, TripleCounts, Vocabulary};

pub const FD_STEP: f64 = 1e-5;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
}

/// Configuration of the bundled 20-image corpus.
pub fn fixture_config() -> SynthConfig {
    SynthConfig {
        num_entities: 12,
        num_relations: 6,
        images: 20,
        candidates_per_image: 8,
        gt_per_image: 3,
        temperature: 0.5,
        feature_dim: 8,
        latent_rank: 3,
        holdout_fraction: 0.2,
        seed: 20,
        triple_types: 50,
        train_samples: 800,
        feature_noise: 0.5,
        box_jitter: 0.05,
    }
}

pub const GOLDEN_KS: [usize; 2] = [50, 100];
// small cut-offs where predicate detection is not saturated
pub const SMALL_KS: [usize; 3] = [1, 5, 10];

pub struct Fixture {
    pub vocab: Vocabulary,
    pub train: TripleCounts,
    pub images: Vec<ImageRecord>,
    pub prior: PriorTensor,
    pub marginals: Marginals,
    pub conditional: ConditionalModel,
}

pub fn load_fixture() -> Fixture {
    let dir = fixture_dir();
    let vocab = Vocabulary::load(dir.join("vocab.txt")).unwrap();
    let (_, train) =
        load_triples(dir.join("train_triples.txt"), VocabMode::Strict(&vocab)).unwrap();
    let images = load_images(dir.join("images.jsonl"), &vocab).unwrap();
    let path = dir.join("prior.ckpt");
    let model = Checkpoint::load(&path)
        .unwrap()
        .into_semantic(&path)
        .unwrap();
    let prior = PriorTensor::from_model(&model, DEFAULT_CELL_CAP).unwrap();
    let marginals = Marginals::from_prior(&prior, 1.0).unwrap();
    let path = dir.join("conditional.ckpt");
    let conditional = Checkpoint::load(&path)
        .unwrap()
        .into_conditional(&path)
        .unwrap();
    Fixture {
        vocab,
        train,
        images,
        prior,
        marginals,
        conditional,
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Central differences of `f` against `analytic`, one relative error per
/// parameter group: `||a - n|| / max(||a||, ||n||)`, or the absolute
/// difference when both gradients are (numerically) zero.
pub fn gradient_errors<P, F>(model: &P, analytic: &[Vec<f64>], f: F) -> Vec<(String, f64)>
where
    P: Parameterized + Clone,
    F: Fn(&P) -> f64,
{
    let mut probe = model.clone();
    let mut out = Vec::new();
    for (gi, grad) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; grad.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = probe.groups()[gi].values[j];
            probe.groups_mut()[gi].values[j] = orig + FD_STEP;
            let up = f(&probe);
            probe.groups_mut()[gi].values[j] = orig - FD_STEP;
            let down = f(&probe);
            probe.groups_mut()[gi].values[j] = orig;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        let diff: Vec<f64> = grad.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let scale = norm(grad).max(norm(&numeric));
        let err = if scale < 1e-8 {
            norm(&diff)
        } else {
            norm(&diff) / scale
        };
        out.push((model.groups()[gi].name.to_string(), err));
    }
    out
}

pub fn max_error(errors: &[(String, f64)]) -> f64 {
    errors.iter().map(|e| e.1).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Brute-force reference evaluator. Written independently of the library's
// matching and fusion code: its own box arithmetic, probability-space fusion
// by exhaustive enumeration, and quadratic greedy matching.

#[derive(Debug, Clone)]
pub struct RefPrediction {
    pub s: usize,
    pub p: usize,
    pub o: usize,
    pub sb: [f64; 4],
    pub ob: [f64; 4],
    pub score: f64,
}

fn corners(b: &BoundingBox) -> [f64; 4] {
    [b.x_min, b.y_min, b.x_max, b.y_max]
}

fn ref_area(b: [f64; 4]) -> f64 {
    (b[2] - b[0]) * (b[3] - b[1])
}

pub fn ref_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = w * h;
    inter / (ref_area(a) + ref_area(b) - inter)
}

pub fn ref_union(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [
        a[0].min(b[0]),
        a[1].min(b[1]),
        a[2].max(b[2]),
        a[3].max(b[3]),
    ]
}

fn ref_match(pred: &RefPrediction, gt: &GroundTruthTriple, task: Task) -> bool {
    let t = gt.triple;
    if (pred.s, pred.p, pred.o) != (t.s, t.p, t.o) {
        return false;
    }
    let (gs, go) = (corners(&gt.subject_box), corners(&gt.object_box));
    match task {
        Task::Triple => true,
        Task::Phrase => ref_iou(ref_union(pred.sb, pred.ob), ref_union(gs, go)) >= 0.5,
        Task::Relationship | Task::Predicate => {
            ref_iou(pred.sb, gs) >= 0.5 && ref_iou(pred.ob, go) >= 0.5
        }
    }
}

/// Stable descending order by score.
fn ranked(mut preds: Vec<RefPrediction>) -> Vec<RefPrediction> {
    preds.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("finite scores"));
    preds
}

fn floored(p: f64) -> f64 {
    p.max(1e-12)
}

fn first_max(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Exhaustive probability-space fusion of one pair.
pub fn ref_fuse(
    prior: &PriorTensor,
    m: &Marginals,
    subj: &[f64],
    pred: &[f64],
    obj: &[f64],
) -> (usize, usize, usize, f64) {
    let mut best = (0, 0, 0, -1.0);
    for s in 0..subj.len() {
        for p in 0..pred.len() {
            for o in 0..obj.len() {
                let v = prior.value(s, p, o) * floored(subj[s]) / m.subject[s] * floored(pred[p])
                    / m.predicate[p]
                    * floored(obj[o])
                    / m.object[o];
                if v > best.3 {
                    best = (s, p, o, v);
                }
            }
        }
    }
    best
}

/// How the reference scores each pair.
pub enum RefModel<'a> {
    Bayes(&'a PriorTensor, &'a Marginals),
    Conditional(&'a ConditionalModel),
    Visual,
}

pub fn ref_predict_image(model: &RefModel<'_>, img: &ImageRecord) -> Vec<RefPrediction> {
    let mut out = Vec::new();
    for pair in &img.pairs {
        let (cs, co) = (&img.candidates[pair.subject], &img.candidates[pair.object]);
        let (subj, obj, pred) = (&cs.entity_scores, &co.entity_scores, &pair.predicate_scores);
        let (s, p, o, score) = match model {
            RefModel::Bayes(prior, m) => ref_fuse(prior, m, subj, pred, obj),
            RefModel::Visual => {
                let (s, p, o) = (first_max(subj), first_max(pred), first_max(obj));
                (s, p, o, subj[s] * pred[p] * obj[o])
            }
            RefModel::Conditional(c) => {
                let (s, o) = (first_max(subj), first_max(obj));
                let probs = c
                    .predicate_distribution(s, o, pair.feature.as_ref().expect("feature"))
                    .expect("valid pair");
                let p = first_max(&probs);
                (s, p, o, subj[s] * obj[o] * probs[p])
            }
        };
        out.push(RefPrediction {
            s,
            p,
            o,
            sb: corners(&cs.bbox),
            ob: corners(&co.bbox),
            score,
        });
    }
    ranked(out)
}

pub fn ref_predicate_candidates(model: &RefModel<'_>, img: &ImageRecord) -> Vec<RefPrediction> {
    let mut out = Vec::new();
    for gt in &img.ground_truth {
        let t = gt.triple;
        let nr = match model {
            RefModel::Bayes(prior, _) => prior.num_relations(),
            RefModel::Conditional(c) => c.num_relations(),
            RefModel::Visual => gt.predicate_scores.as_ref().expect("scores").len(),
        };
        for p in 0..nr {
            let score = match model {
                RefModel::Bayes(prior, m) => {
                    let pred = gt.predicate_scores.as_ref().expect("scores");
                    prior.value(t.s, p, t.o) / m.subject[t.s] * floored(pred[p])
                        / m.predicate[p]
                        / m.object[t.o]
                }
                RefModel::Conditional(c) => c
                    .predicate_distribution(t.s, t.o, gt.feature.as_ref().expect("feature"))
                    .expect("valid")[p],
                RefModel::Visual => gt.predicate_scores.as_ref().expect("scores")[p],
            };
            out.push(RefPrediction {
                s: t.s,
                p,
                o: t.o,
                sb: corners(&gt.subject_box),
                ob: corners(&gt.object_box),
                score,
            });
        }
    }
    ranked(out)
}

fn ref_matches(preds: &[RefPrediction], gts: &[GroundTruthTriple], task: Task, k: usize) -> usize {
    let mut taken = vec![false; gts.len()];
    let mut n = 0;
    for pred in preds.iter().take(k) {
        for (j, gt) in gts.iter().enumerate() {
            if !taken[j] && ref_match(pred, gt, task) {
                taken[j] = true;
                n += 1;
                break;
            }
        }
    }
    n
}

/// Micro-averaged four-task report as CSV, tasks in phrase, relationship,
/// predicate, triple order and each at every `k`.
pub fn reference_report(
    images: &[ImageRecord],
    model: &RefModel<'_>,
    ks: &[usize],
    zero_shot: Option<&TripleCounts>,
) -> String {
    let gts: Vec<Vec<GroundTruthTriple>> = images
        .iter()
        .map(|img| {
            img.ground_truth
                .iter()
                .filter(|g| zero_shot.is_none_or(|train| train.get(g.triple) == 0))
                .cloned()
                .collect()
        })
        .collect();
    let pair_preds: Vec<Vec<RefPrediction>> = images
        .iter()
        .map(|img| ref_predict_image(model, img))
        .collect();
    let pred_preds: Vec<Vec<RefPrediction>> = images
        .iter()
        .map(|img| ref_predicate_candidates(model, img))
        .collect();
    let mut csv = String::from("task,K,recall,matched,total,zero_shot\n");
    for (task, name) in [
        (Task::Phrase, "phrase"),
        (Task::Relationship, "relationship"),
        (Task::Predicate, "predicate"),
        (Task::Triple, "triple"),
    ] {
        let preds = if task == Task::Predicate {
            &pred_preds
        } else {
            &pair_preds
        };
        for &k in ks {
            let matched: usize = preds
                .iter()
                .zip(&gts)
                .map(|(p, g)| ref_matches(p, g, task, k))
                .sum();
            let total: usize = gts.iter().map(Vec::len).sum();
            let recall = if total == 0 {
                1.0
            } else {
                matched as f64 / total as f64
            };
            writeln!(
                csv,
                "{name},{k},{recall:.6},{matched},{total},{}",
                zero_shot.is_some()
            )
            .unwrap();
        }
    }
    csv
}

/// Random conditional examples for gradient and training checks.
pub fn random_examples(
    rng: &mut impl rand::Rng,
    n: usize,
    ne: usize,
    nr: usize,
    f: usize,
) -> Vec<ConditionalExample> {
    (0..n)
        .map(|_| ConditionalExample {
            subject: rng.random_range(0..ne),
            object: rng.random_range(0..ne),
            feature: (0..f).map(|_| rng.random_range(-1.0..1.0)).collect(),
            predicate: rng.random_range(0..nr),
        })
        .collect()
}

/// A 4x3x4 count tensor with a dozen observed cells.
pub fn recovery_counts() -> (Vocabulary, TripleCounts) {
    let vocab = Vocabulary::from_names(["a", "b", "c", "d"], ["r0", "r1", "r2"]).unwrap();
    let mut counts = TripleCounts::new(4, 3);
    let cells = [
        (0, 0, 1, 12),
        (1, 0, 0, 3),
        (0, 1, 2, 25),
        (2, 1, 3, 7),
        (3, 2, 0, 40),
        (1, 2, 1, 5),
        (2, 0, 2, 2),
        (3, 0, 3, 9),
        (0, 2, 3, 16),
        (1, 1, 3, 4),
        (2, 2, 0, 30),
        (3, 1, 1, 6),
    ];
    for (s, p, o, y) in cells {
        counts.add(Triple::new(s, p, o), y).unwrap();
    }
    (vocab, counts)
}

/// Worst relative error of `exp(score)` on observed cells and largest
/// `exp(score)` on unobserved ones.
pub fn recovery_errors(model: &SemanticModel, counts: &TripleCounts) -> (f64, f64) {
    let (ne, nr) = (counts.num_entities(), counts.num_relations());
    let (mut observed, mut unobserved) = (0.0f64, 0.0f64);
    for s in 0..ne {
        for p in 0..nr {
            for o in 0..ne {
                let y = counts.get(Triple::new(s, p, o)) as f64;
                let lambda = model.score(s, p, o).unwrap().exp();
                if y > 0.0 {
                    observed = observed.max((lambda - y).abs() / y);
                } else {
                    unobserved = unobserved.max(lambda);
                }
            }
        }
    }
    (observed, unobserved)
}

pub fn recovery_config() -> PriorTrainConfig {
    PriorTrainConfig {
        variant: Variant::Rescal,
        rank: 4,
        epochs: 3000,
        learning_rate: 0.05,
        seed: 3,
        ..Default::default()
    }
}

pub fn relfuse_cmd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relfuse"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn relfuse")
}

/// Runs every subcommand once in `dir` with `--deterministic` and fixed
/// seeds; returns each produced file and captured stdout by name.
pub fn cli_pipeline(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let steps: [(&str, &[&str]); 7] = [
        (
            "synth",
            &[
                "synth",
                "--out",
                "data",
                "--images",
                "12",
                "--entities",
                "10",
                "--relations",
                "5",
                "--triple-types",
                "40",
                "--train-samples",
                "400",
                "--seed",
                "17",
            ],
        ),
        (
            "train-prior",
            &[
                "train-prior",
                "--vocab",
                "data/vocab.txt",
                "--triples",
                "data/train_triples.txt",
                "--out",
                "prior.ckpt",
                "--log",
                "prior.log",
                "--variant",
                "multiway",
                "--rank",
                "4",
                "--hidden",
                "5",
                "--epochs",
                "50",
                "--enumeration",
                "sampled",
                "--seed",
                "3",
            ],
        ),
        (
            "train-cond",
            &[
                "train-cond",
                "--vocab",
                "data/vocab.txt",
                "--examples",
                "data/train_examples.txt",
                "--out",
                "cond.ckpt",
                "--log",
                "cond.log",
                "--rank",
                "3",
                "--hidden",
                "6",
                "--epochs",
                "3",
                "--seed",
                "4",
            ],
        ),
        (
            "predict",
            &[
                "predict",
                "--vocab",
                "data/vocab.txt",
                "--images",
                "data/images.jsonl",
                "--train-triples",
                "data/train_triples.txt",
                "--checkpoint",
                "prior.ckpt",
                "--out",
                "preds.jsonl",
            ],
        ),
        (
            "evaluate",
            &[
                "evaluate",
                "--vocab",
                "data/vocab.txt",
                "--images",
                "data/images.jsonl",
                "--train-triples",
                "data/train_triples.txt",
                "--pipeline",
                "conditional",
                "--checkpoint",
                "cond.ckpt",
                "--out",
                "eval.csv",
            ],
        ),
        (
            "evaluate-stored",
            &[
                "evaluate",
                "--vocab",
                "data/vocab.txt",
                "--images",
                "data/images.jsonl",
                "--train-triples",
                "data/train_triples.txt",
                "--predictions",
                "preds.jsonl",
                "--zero-shot",
            ],
        ),
        (
            "inspect",
            &[
                "inspect",
                "--checkpoint",
                "prior.ckpt",
                "--vocab",
                "data/vocab.txt",
            ],
        ),
    ];
    let mut out = Vec::new();
    for (name, args) in steps {
        let mut args = args.to_vec();
        args.extend(["--deterministic", "--threads", "4"]);
        let run = relfuse_cmd(dir, &args);
        if !run.status.success() {
            return Err(format!(
                "{name} failed: {}",
                String::from_utf8_lossy(&run.stderr)
            ));
        }
        out.push((format!("{name}:stdout"), run.stdout));
    }
    for file in [
        "data/vocab.txt",
        "data/train_triples.txt",
        "data/train_examples.txt",
        "data/images.jsonl",
        "prior.ckpt",
        "prior.log",
        "cond.ckpt",
        "cond.log",
        "preds.jsonl",
        "eval.csv",
    ] {
        let bytes = std::fs::read(dir.join(file)).map_err(|e| format!("{file}: {e}"))?;
        out.push((file.to_string(), bytes));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Seeded draws for the gradient and fusion checks.

fn grad_shape(variant: Variant) -> ModelShape {
    ModelShape {
        variant,
        num_entities: 4,
        num_relations: 3,
        rank: 3,
        hidden: 4,
    }
}

/// Seeded model, with every other draw's parameters stretched so tanh and
/// products leave their near-linear range.
pub fn drawn_model(variant: Variant, seed: u64) -> SemanticModel {
    let mut model = SemanticModel::new(grad_shape(variant), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stretch = if seed.is_multiple_of(2) { 1.0 } else { 2.5 };
    for g in model.groups_mut() {
        for v in &mut g.values {
            *v = stretch * (*v + rng.random_range(-0.3..0.3));
        }
    }
    model
}

/// A random minibatch of twelve weighted cells on the 4x3x4 gradient shape,
/// about half of them observed.
pub fn drawn_batch(rng: &mut ChaCha8Rng) -> Vec<WeightedCell> {
    (0..12)
        .map(|_| WeightedCell {
            triple: Triple::new(
                rng.random_range(0..4),
                rng.random_range(0..3),
                rng.random_range(0..4),
            ),
            y: if rng.random_bool(0.5) {
                rng.random_range(1..20) as f64
            } else {
                0.0
            },
            weight: rng.random_range(0.5..3.0),
        })
        .collect()
}

pub const NE: usize = 4;
pub const NR: usize = 3;
pub const FUSION_INSTANCES: u64 = 200;

/// A random distribution; with some probability one entry is exactly zero
/// so the floor gets exercised.
fn distribution(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    if rng.random_bool(0.3) {
        v[rng.random_range(0..n)] = 0.0;
    }
    let total: f64 = v.iter().sum();
    v.iter().map(|x| x / total).collect()
}

pub struct FusionInstance {
    pub prior: PriorTensor,
    pub marginals: Marginals,
    pub subj: Vec<f64>,
    pub pred: Vec<f64>,
    pub obj: Vec<f64>,
}

pub fn fusion_instance(seed: u64) -> FusionInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // log-uniform prior over six orders of magnitude
    let values: Vec<f64> = (0..NE * NR * NE)
        .map(|_| 10f64.powf(rng.random_range(-3.0..3.0)))
        .collect();
    let prior = PriorTensor::from_values(NE, NR, &values).unwrap();
    let marginals = if seed.is_multiple_of(2) {
        Marginals::from_prior(&prior, 1.0).unwrap()
    } else {
        Marginals {
            subject: (0..NE).map(|_| rng.random_range(0.1..10.0)).collect(),
            predicate: (0..NR).map(|_| rng.random_range(0.1..10.0)).collect(),
            object: (0..NE).map(|_| rng.random_range(0.1..10.0)).collect(),
        }
    };
    FusionInstance {
        prior,
        marginals,
        subj: distribution(&mut rng, NE),
        pred: distribution(&mut rng, NR),
        obj: distribution(&mut rng, NE),
    }
}
