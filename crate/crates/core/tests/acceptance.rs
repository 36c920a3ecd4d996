//! Acceptance runner: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Run with `cargo test --test acceptance`.

mod common;

use std::panic;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use relfuse::conditional::{train_conditional, ConditionalTrainConfig};
use relfuse::evaluation::{evaluate, EvalOptions, EvalReport, Task};
use relfuse::fusion::{fuse_pair, BayesFusion, Marginals, RelationPredictor, VisualOnly};
use relfuse::prior::{batch_loss_gradient, train_prior, PriorTensor, PriorTrainConfig};
use relfuse::semantic::DEFAULT_CELL_CAP;
use relfuse::synth::{generate, SynthConfig, SynthCorpus};
use relfuse::{
    ConditionalModel, ConditionalShape, ImageRecord, ModelShape, Parameterized, SemanticModel,
    TripleCounts, Variant,
};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// --- 1 -----------------------------------------------------------------------

const GRAD_TOL: f64 = 1e-5;
const GRAD_DRAWS: u64 = 20;

fn gradients() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for variant in Variant::ALL {
        for seed in 0..GRAD_DRAWS {
            let model = drawn_model(variant, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let (s, p, o) = (
                rng.random_range(0..4),
                rng.random_range(0..3),
                rng.random_range(0..4),
            );
            let analytic = model
                .score_gradients(s, p, o, 1.0)
                .unwrap()
                .to_dense(&model);
            let err = max_error(&gradient_errors(&model, &analytic, |m| {
                m.score(s, p, o).unwrap()
            }));
            ensure(err < GRAD_TOL, || {
                format!("{variant} score, seed {seed}: {err:.2e}")
            })?;
            worst = worst.max(err);

            let batch = drawn_batch(&mut rng);
            let analytic = batch_loss_gradient(&model, &batch, 48.0).gradients;
            let err = max_error(&gradient_errors(&model, &analytic, |m| {
                batch_loss_gradient(m, &batch, 48.0).loss
            }));
            ensure(err < GRAD_TOL, || {
                format!("{variant} loss, seed {seed}: {err:.2e}")
            })?;
            worst = worst.max(err);
            checks += 2;
        }
    }
    let shape = ConditionalShape {
        num_entities: 5,
        num_relations: 4,
        rank: 3,
        hidden: 6,
        feature_dim: 7,
    };
    for seed in 0..GRAD_DRAWS {
        let mut model = ConditionalModel::new(shape, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        for g in model.groups_mut() {
            for v in &mut g.values {
                *v += rng.random_range(-0.5..0.5);
            }
        }
        let examples = random_examples(&mut rng, 6, 5, 4, 7);
        let (_, analytic) = model.loss_and_gradient(&examples).unwrap();
        let err = max_error(&gradient_errors(&model, &analytic, |m| {
            m.loss_and_gradient(&examples).unwrap().0
        }));
        ensure(err < GRAD_TOL, || {
            format!("conditional, seed {seed}: {err:.2e}")
        })?;
        worst = worst.max(err);
        checks += 1;
    }
    Ok(format!("{checks} checks, worst relative error {worst:.2e}"))
}

// --- 2 -----------------------------------------------------------------------

fn shape(variant: Variant, ne: usize, nr: usize, d: usize) -> ModelShape {
    ModelShape {
        variant,
        num_entities: ne,
        num_relations: nr,
        rank: d,
        hidden: 0,
    }
}

fn all_cells(ne: usize, nr: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (0..ne).flat_map(move |s| (0..nr).flat_map(move |p| (0..ne).map(move |o| (s, p, o))))
}

fn identities() -> Outcome {
    let (ne, nr, d) = (5, 3, 4);
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let dm = SemanticModel::new(shape(Variant::DistMult, ne, nr, d), seed).unwrap();
        for (s, p, o) in all_cells(ne, nr) {
            let (a, b) = (dm.score(s, p, o).unwrap(), dm.score(o, p, s).unwrap());
            ensure(a.to_bits() == b.to_bits(), || {
                format!("distmult asymmetric at ({s},{p},{o})")
            })?;
        }
        let ent = dm.group("entity").unwrap().values.clone();
        let rel = dm.group("relation").unwrap().values.clone();
        let cx = SemanticModel::from_values(
            shape(Variant::ComplEx, ne, nr, d),
            vec![
                ent.clone(),
                vec![0.0; ent.len()],
                rel.clone(),
                vec![0.0; rel.len()],
            ],
        )
        .unwrap();
        let mut mats = vec![0.0; nr * d * d];
        for p in 0..nr {
            for k in 0..d {
                mats[p * d * d + k * d + k] = rel[p * d + k];
            }
        }
        let rs =
            SemanticModel::from_values(shape(Variant::Rescal, ne, nr, d), vec![ent, mats]).unwrap();
        for (s, p, o) in all_cells(ne, nr) {
            let base = dm.score(s, p, o).unwrap();
            for (name, m) in [("complex", &cx), ("rescal", &rs)] {
                let diff = (m.score(s, p, o).unwrap() - base).abs();
                ensure(diff <= 1e-12, || {
                    format!("{name} differs from distmult by {diff:.2e}")
                })?;
                worst = worst.max(diff);
            }
        }
    }
    let cx = SemanticModel::new(shape(Variant::ComplEx, 4, 2, 3), 1).unwrap();
    let witness = all_cells(4, 2)
        .find(|&(s, p, o)| (cx.score(s, p, o).unwrap() - cx.score(o, p, s).unwrap()).abs() > 1e-3);
    let (s, p, o) = witness.ok_or("no complex asymmetry witness")?;
    Ok(format!(
        "symmetry exact, reductions within {worst:.1e}, complex witness ({s},{p},{o}): {:.4} vs {:.4}",
        cx.score(s, p, o).unwrap(),
        cx.score(o, p, s).unwrap()
    ))
}

// --- 3 -----------------------------------------------------------------------

fn recovery() -> Outcome {
    let (vocab, counts) = recovery_counts();
    let (model, _) = train_prior(&counts, &vocab, &recovery_config()).map_err(|e| e.to_string())?;
    let (observed, unobserved) = recovery_errors(&model, &counts);
    let detail =
        format!("observed max relative error {observed:.4}, unobserved max rate {unobserved:.2e}");
    ensure(observed <= 0.10 && unobserved < 1.0, || detail.clone())?;
    Ok(detail)
}

// --- 4 and 5 -----------------------------------------------------------------

fn fusion_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..FUSION_INSTANCES {
        let x = fusion_instance(seed);
        let fusion = BayesFusion::new(x.prior.clone(), x.marginals.clone()).unwrap();
        let got = fuse_pair(&fusion, &x.subj, &x.pred, &x.obj).unwrap();
        let (s, p, o, value) = ref_fuse(&x.prior, &x.marginals, &x.subj, &x.pred, &x.obj);
        ensure(
            (got.triple.s, got.triple.p, got.triple.o) == (s, p, o),
            || {
                format!(
                    "instance {seed}: argmax {:?} vs oracle ({s},{p},{o})",
                    got.triple
                )
            },
        )?;
        let diff = (got.score - value.ln()).abs();
        ensure(diff <= 1e-9, || {
            format!("instance {seed}: score off by {diff:.2e}")
        })?;
        worst = worst.max(diff);
    }
    Ok(format!(
        "{FUSION_INSTANCES} instances, worst score difference {worst:.1e}"
    ))
}

fn invariance() -> Outcome {
    for seed in 0..FUSION_INSTANCES {
        let x = fusion_instance(seed);
        let base = fuse_pair(
            &BayesFusion::new(x.prior.clone(), x.marginals.clone()).unwrap(),
            &x.subj,
            &x.pred,
            &x.obj,
        )
        .unwrap();
        for c in [1e-3, 1.0, 1e3] {
            let fusion = BayesFusion::new(x.prior.scaled(c).unwrap(), x.marginals.clone()).unwrap();
            let got = fuse_pair(&fusion, &x.subj, &x.pred, &x.obj).unwrap();
            ensure(got.triple == base.triple, || {
                format!("instance {seed}, scale {c}: argmax moved")
            })?;
        }
    }
    Ok(format!("{FUSION_INSTANCES} instances x 3 scales"))
}

// --- 6 -----------------------------------------------------------------------

fn eval_report(
    images: &[ImageRecord],
    p: &dyn RelationPredictor,
    ks: &[usize],
    zs: Option<&TripleCounts>,
) -> EvalReport {
    let opts = EvalOptions {
        ks: ks.to_vec(),
        zero_shot: zs,
        ..Default::default()
    };
    evaluate(images, p, &opts, 1).unwrap()
}

fn evaluation_oracle() -> Outcome {
    let f = load_fixture();
    let golden = |name: &str| std::fs::read_to_string(fixture_dir().join(name)).unwrap();
    let bayes = BayesFusion::new(f.prior.clone(), f.marginals.clone()).unwrap();
    let visual = VisualOnly {
        num_entities: f.vocab.num_entities(),
        num_relations: f.vocab.num_relations(),
    };
    let cases: [(&str, &dyn RelationPredictor, bool); 4] = [
        ("golden_bayes.csv", &bayes, false),
        ("golden_bayes_zero_shot.csv", &bayes, true),
        ("golden_conditional.csv", &f.conditional, false),
        ("golden_visual.csv", &visual, false),
    ];
    for (name, predictor, zs) in cases {
        let csv = eval_report(&f.images, predictor, &GOLDEN_KS, zs.then_some(&f.train)).to_csv();
        ensure(csv == golden(name), || {
            format!("{name} differs from the library report")
        })?;
    }
    let reference = reference_report(
        &f.images,
        &RefModel::Bayes(&f.prior, &f.marginals),
        &GOLDEN_KS,
        None,
    );
    ensure(reference == golden("golden_bayes.csv"), || {
        "reference evaluator drifted from golden".into()
    })?;

    let ks = [1, 5, 10, 50, 100];
    let mut corpora = 0;
    for seed in 0..5 {
        let corpus = generate(&SynthConfig {
            num_entities: 10,
            num_relations: 5,
            images: 15,
            candidates_per_image: 10,
            triple_types: 40,
            train_samples: 500,
            box_jitter: 0.2,
            seed,
            ..Default::default()
        })
        .unwrap();
        let prior = PriorTensor::from_counts(&corpus.train_counts, 0.5).unwrap();
        let bayes =
            BayesFusion::new(prior.clone(), Marginals::from_prior(&prior, 1.0).unwrap()).unwrap();
        let visual = VisualOnly {
            num_entities: 10,
            num_relations: 5,
        };
        for predictor in [&bayes as &dyn RelationPredictor, &visual] {
            let report = eval_report(&corpus.test_images, predictor, &ks, None);
            for task in Task::ALL {
                for w in ks.windows(2) {
                    let (lo, hi) = (
                        report.get(task, w[0]).unwrap().recall,
                        report.get(task, w[1]).unwrap().recall,
                    );
                    ensure(hi >= lo, || {
                        format!("seed {seed} {task:?}: R@{} {hi} < R@{} {lo}", w[1], w[0])
                    })?;
                }
            }
            for &k in &ks {
                let t = report.get(Task::Triple, k).unwrap().recall;
                let r = report.get(Task::Relationship, k).unwrap().recall;
                ensure(t >= r, || {
                    format!("seed {seed}: triple {t} < relationship {r} at {k}")
                })?;
            }
            corpora += 1;
        }
    }
    Ok(format!(
        "4 golden reports byte-identical; ordering holds on {corpora} generated reports"
    ))
}

// --- 7 and 8 -----------------------------------------------------------------

const SEEDS: [u64; 3] = [0, 1, 2];
/// Detector temperature putting the visual-only Triple R@50 inside [0.3, 0.6].
const BENEFIT_TAU: f64 = 0.4;
const MIN_GAIN: f64 = 0.05;

fn triple_r50(images: &[ImageRecord], p: &dyn RelationPredictor, zs: Option<&TripleCounts>) -> f64 {
    let opts = EvalOptions {
        tasks: vec![Task::Triple],
        ks: vec![50],
        zero_shot: zs,
        ..Default::default()
    };
    evaluate(images, p, &opts, 4)
        .unwrap()
        .get(Task::Triple, 50)
        .unwrap()
        .recall
}

fn bayes_from(prior: PriorTensor) -> BayesFusion {
    let marginals = Marginals::from_prior(&prior, 1.0).unwrap();
    BayesFusion::new(prior, marginals).unwrap()
}

fn trained_prior(corpus: &SynthCorpus, cfg: &PriorTrainConfig) -> Result<PriorTensor, String> {
    let (model, _) =
        train_prior(&corpus.train_counts, &corpus.vocab, cfg).map_err(|e| e.to_string())?;
    PriorTensor::from_model(&model, DEFAULT_CELL_CAP).map_err(|e| e.to_string())
}

fn benefit_priors(seed: u64) -> [PriorTrainConfig; 3] {
    let base = PriorTrainConfig {
        rank: 10,
        epochs: 1000,
        learning_rate: 0.02,
        seed,
        ..Default::default()
    };
    [
        PriorTrainConfig {
            variant: Variant::Rescal,
            ..base.clone()
        },
        PriorTrainConfig {
            variant: Variant::ComplEx,
            ..base.clone()
        },
        PriorTrainConfig {
            variant: Variant::MultiwayNn,
            hidden: 20,
            learning_rate: 0.01,
            ..base
        },
    ]
}

fn fusion_benefit() -> Outcome {
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for seed in SEEDS {
        let corpus = generate(&SynthConfig {
            num_entities: 20,
            num_relations: 8,
            temperature: BENEFIT_TAU,
            seed,
            ..Default::default()
        })
        .unwrap();
        let visual = triple_r50(
            &corpus.test_images,
            &VisualOnly {
                num_entities: 20,
                num_relations: 8,
            },
            None,
        );
        if !(0.3..=0.6).contains(&visual) {
            failures.push(format!(
                "seed {seed}: visual R@50 {visual:.3} outside [0.3, 0.6]"
            ));
        }
        let mut line = format!("seed {seed}: visual {visual:.3}");
        for cfg in benefit_priors(seed) {
            let r = triple_r50(
                &corpus.test_images,
                &bayes_from(trained_prior(&corpus, &cfg)?),
                None,
            );
            line += &format!(", {} {r:.3}", cfg.variant);
            if r - visual < MIN_GAIN {
                failures.push(format!(
                    "seed {seed}: {} gains {:.3}",
                    cfg.variant,
                    r - visual
                ));
            }
        }
        lines.push(line);
    }
    let detail = lines.join("; ");
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{} | {detail}", failures.join("; ")))
    }
}

fn zero_shot() -> Outcome {
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for seed in SEEDS {
        let corpus = generate(&SynthConfig {
            num_entities: 20,
            num_relations: 8,
            temperature: BENEFIT_TAU,
            latent_rank: 3,
            holdout_fraction: 0.25,
            seed,
            ..Default::default()
        })
        .unwrap();
        let cfg = PriorTrainConfig {
            variant: Variant::Rescal,
            rank: 3,
            epochs: 1000,
            learning_rate: 0.05,
            seed,
            ..Default::default()
        };
        let train = Some(&corpus.train_counts);
        let factorized = triple_r50(
            &corpus.test_images,
            &bayes_from(trained_prior(&corpus, &cfg)?),
            train,
        );
        let lookup = bayes_from(PriorTensor::from_counts(&corpus.train_counts, 1.0).unwrap());
        let counts = triple_r50(&corpus.test_images, &lookup, train);
        lines.push(format!(
            "seed {seed}: rescal {factorized:.3} vs counts {counts:.3}"
        ));
        if factorized <= counts {
            failures.push(format!("seed {seed}"));
        }
    }
    let detail = lines.join("; ");
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("not better on {} | {detail}", failures.join(", ")))
    }
}

// --- 9 -----------------------------------------------------------------------

fn perfect_detectors() -> Outcome {
    let corpus = generate(&SynthConfig {
        num_entities: 20,
        num_relations: 8,
        images: 40,
        temperature: 0.0,
        feature_noise: 0.0,
        seed: 9,
        ..Default::default()
    })
    .unwrap();
    let cfg = PriorTrainConfig {
        variant: Variant::Rescal,
        rank: 10,
        epochs: 300,
        learning_rate: 0.02,
        ..Default::default()
    };
    let bayes = bayes_from(trained_prior(&corpus, &cfg)?);
    let cond_cfg = ConditionalTrainConfig {
        rank: 4,
        hidden: 16,
        epochs: 30,
        ..Default::default()
    };
    let (cond, _) = train_conditional(&corpus.train_examples, &corpus.vocab, &cond_cfg)
        .map_err(|e| e.to_string())?;
    // every ordered pair of 8 candidates is 56 predictions per image, so K = 100
    // admits them all
    let opts = EvalOptions {
        tasks: vec![Task::Triple],
        ks: vec![100],
        ..Default::default()
    };
    let mut parts = Vec::new();
    for (name, p) in [
        ("bayes", &bayes as &dyn RelationPredictor),
        ("conditional", &cond),
    ] {
        let entry = evaluate(&corpus.test_images, p, &opts, 1)
            .unwrap()
            .get(Task::Triple, 100)
            .unwrap()
            .clone();
        ensure(entry.recall == 1.0, || {
            format!(
                "{name}: recall {} ({}/{})",
                entry.recall, entry.matched, entry.total
            )
        })?;
        parts.push(format!("{name} {}/{}", entry.matched, entry.total));
    }
    Ok(format!("triple recall 1.0: {}", parts.join(", ")))
}

// --- 10 ----------------------------------------------------------------------

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = cli_pipeline(a.path())?;
    let second = cli_pipeline(b.path())?;
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        ensure(x == y, || format!("{name} differs between runs"))?;
    }
    Ok(format!(
        "{} outputs byte-identical across two runs",
        first.len()
    ))
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let secs = |s| Some(Duration::from_secs(s));
    let criteria = [
        Criterion {
            id: 1,
            name: "gradient correctness",
            budget: secs(30),
            run: gradients,
        },
        Criterion {
            id: 2,
            name: "model identities",
            budget: secs(5),
            run: identities,
        },
        Criterion {
            id: 3,
            name: "poisson recovery",
            budget: secs(60),
            run: recovery,
        },
        Criterion {
            id: 4,
            name: "fusion oracle",
            budget: secs(30),
            run: fusion_oracle,
        },
        Criterion {
            id: 5,
            name: "argmax invariance",
            budget: None,
            run: invariance,
        },
        Criterion {
            id: 6,
            name: "evaluation oracle",
            budget: None,
            run: evaluation_oracle,
        },
        Criterion {
            id: 7,
            name: "fusion benefit",
            budget: secs(300),
            run: fusion_benefit,
        },
        Criterion {
            id: 8,
            name: "zero-shot prior",
            budget: secs(300),
            run: zero_shot,
        },
        Criterion {
            id: 9,
            name: "perfect detectors",
            budget: None,
            run: perfect_detectors,
        },
        Criterion {
            id: 10,
            name: "cli determinism",
            budget: None,
            run: determinism,
        },
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(c.run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let outcome = match (outcome, c.budget) {
            (Ok(_), Some(b)) if took > b => Err(format!("took {took:.1?}, budget {b:?}")),
            (o, _) => o,
        };
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "{tag} AC{:<2} {:<22} {:>7.2}s  {detail}",
            c.id,
            c.name,
            took.as_secs_f64()
        );
    }
    if failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
