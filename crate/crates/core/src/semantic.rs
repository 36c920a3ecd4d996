//! Link-prediction score functions over `(subject, predicate, object)`.
//!
//! | variant     | score                                         |
//! |-------------|-----------------------------------------------|
//! | DistMult    | `sum_k a_s[k] r_p[k] a_o[k]`                  |
//! | ComplEx     | `Re(sum_k a_s[k] r_p[k] conj(a_o[k]))`        |
//! | MultiwayNN  | `beta . tanh(W [a_s; r_p; a_o] + b1) + b2`    |
//! | RESCAL      | `a_s^T R_p a_o`                               |
//!
//! Complex embeddings are stored as separate real and imaginary groups.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_id, Error, Result};
use crate::params::{dot, Gradient, ParamGroup, Parameterized};
use crate::vocab::Triple;

/// Largest dense `|E| x |R| x |E|` tensor materialized by default.
pub const DEFAULT_CELL_CAP: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[value(name = "distmult")]
    #[serde(rename = "distmult")]
    DistMult,
    #[value(name = "complex")]
    #[serde(rename = "complex")]
    ComplEx,
    #[value(name = "multiway")]
    #[serde(rename = "multiway")]
    MultiwayNn,
    #[value(name = "rescal")]
    #[serde(rename = "rescal")]
    Rescal,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::DistMult,
        Variant::ComplEx,
        Variant::MultiwayNn,
        Variant::Rescal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::DistMult => "distmult",
            Variant::ComplEx => "complex",
            Variant::MultiwayNn => "multiway",
            Variant::Rescal => "rescal",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model variant `{s}`")))
    }
}

// Group indices per variant.
const ENT: usize = 0;
const REL: usize = 1;
const ENT_RE: usize = 0;
const ENT_IM: usize = 1;
const REL_RE: usize = 2;
const REL_IM: usize = 3;
const MLP_W: usize = 2;
const MLP_BETA: usize = 3;
const MLP_B1: usize = 4;
const MLP_B2: usize = 5;

/// Size hyperparameters of a [`SemanticModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub variant: Variant,
    pub num_entities: usize,
    pub num_relations: usize,
    pub rank: usize,
    /// Hidden width; only meaningful for MultiwayNN.
    pub hidden: usize,
}

impl ModelShape {
    fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidConfig("rank must be at least 1".into()));
        }
        if self.variant == Variant::MultiwayNn && self.hidden == 0 {
            return Err(Error::InvalidConfig(
                "hidden width must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Hidden width is only kept for MultiwayNN.
    pub fn normalized(mut self) -> Self {
        if self.variant != Variant::MultiwayNn {
            self.hidden = 0;
        }
        self
    }

    /// Expected `(name, shape)` of each parameter group.
    pub fn group_layout(&self) -> Vec<(&'static str, Vec<usize>)> {
        let (e, r, d, z) = (
            self.num_entities,
            self.num_relations,
            self.rank,
            self.hidden,
        );
        match self.variant {
            Variant::DistMult => vec![("entity", vec![e, d]), ("relation", vec![r, d])],
            Variant::ComplEx => vec![
                ("entity_re", vec![e, d]),
                ("entity_im", vec![e, d]),
                ("relation_re", vec![r, d]),
                ("relation_im", vec![r, d]),
            ],
            Variant::MultiwayNn => vec![
                ("entity", vec![e, d]),
                ("relation", vec![r, d]),
                ("w", vec![z, 3 * d]),
                ("beta", vec![z]),
                ("b1", vec![z]),
                ("b2", vec![1]),
            ],
            Variant::Rescal => vec![("entity", vec![e, d]), ("relation", vec![r, d, d])],
        }
    }

    pub fn cells(&self) -> usize {
        self.num_entities * self.num_relations * self.num_entities
    }
}

/// One of the four factorization models, holding its embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticModel {
    shape: ModelShape,
    groups: Vec<ParamGroup>,
}

impl Parameterized for SemanticModel {
    fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    fn groups_mut(&mut self) -> &mut [ParamGroup] {
        &mut self.groups
    }
}

impl SemanticModel {
    /// Seeded initialization: entries uniform in `[-1/sqrt(d), 1/sqrt(d)]`;
    /// the MultiwayNN hidden layer uses `1/sqrt(3d)`, its output vector
    /// `1/sqrt(z)`, biases start at zero.
    pub fn new(shape: ModelShape, seed: u64) -> Result<Self> {
        let shape = shape.normalized();
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = shape.rank as f64;
        let groups = shape
            .group_layout()
            .into_iter()
            .map(|(name, dims)| {
                let bound = match name {
                    "w" => 1.0 / (3.0 * d).sqrt(),
                    "beta" => 1.0 / (shape.hidden as f64).sqrt(),
                    "b1" | "b2" => 0.0,
                    _ => 1.0 / d.sqrt(),
                };
                ParamGroup::uniform(name, dims, bound, &mut rng)
            })
            .collect();
        Ok(SemanticModel { shape, groups })
    }

    pub fn zeros(shape: ModelShape) -> Result<Self> {
        let shape = shape.normalized();
        shape.validate()?;
        let groups = shape
            .group_layout()
            .into_iter()
            .map(|(name, dims)| ParamGroup::zeros(name, dims))
            .collect();
        Ok(SemanticModel { shape, groups })
    }

    /// Assembles a model from raw group values, checking every shape.
    pub fn from_values(shape: ModelShape, values: Vec<Vec<f64>>) -> Result<Self> {
        let mut model = Self::zeros(shape)?;
        if values.len() != model.groups.len() {
            return Err(Error::DimensionMismatch {
                what: "parameter group count".into(),
                expected: model.groups.len(),
                actual: values.len(),
            });
        }
        for (group, v) in model.groups.iter_mut().zip(values) {
            if v.len() != group.len() {
                return Err(Error::DimensionMismatch {
                    what: format!("parameter group `{}`", group.name),
                    expected: group.len(),
                    actual: v.len(),
                });
            }
            group.values = v;
        }
        Ok(model)
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn variant(&self) -> Variant {
        self.shape.variant
    }

    pub fn num_entities(&self) -> usize {
        self.shape.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.shape.num_relations
    }

    pub fn rank(&self) -> usize {
        self.shape.rank
    }

    pub fn hidden(&self) -> usize {
        self.shape.hidden
    }

    pub fn group(&self, name: &str) -> Option<&ParamGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn group_mut(&mut self, name: &str) -> Option<&mut ParamGroup> {
        self.groups.iter_mut().find(|g| g.name == name)
    }

    /// Fails unless the model was built for the given vocabulary sizes.
    pub fn check_vocab(&self, num_entities: usize, num_relations: usize) -> Result<()> {
        if self.shape.num_entities != num_entities {
            return Err(Error::DimensionMismatch {
                what: "model entity count".into(),
                expected: num_entities,
                actual: self.shape.num_entities,
            });
        }
        if self.shape.num_relations != num_relations {
            return Err(Error::DimensionMismatch {
                what: "model relation count".into(),
                expected: num_relations,
                actual: self.shape.num_relations,
            });
        }
        Ok(())
    }

    fn check_triple(&self, t: Triple) -> Result<()> {
        check_id("entity", t.s, self.shape.num_entities)?;
        check_id("relation", t.p, self.shape.num_relations)?;
        check_id("entity", t.o, self.shape.num_entities)
    }

    pub fn score(&self, s: usize, p: usize, o: usize) -> Result<f64> {
        let t = Triple::new(s, p, o);
        self.check_triple(t)?;
        Ok(self.score_unchecked(t))
    }

    pub(crate) fn score_unchecked(&self, t: Triple) -> f64 {
        let g = &self.groups;
        match self.shape.variant {
            Variant::DistMult => {
                let (a_s, r, a_o) = (g[ENT].row(t.s), g[REL].row(t.p), g[ENT].row(t.o));
                let mut acc = 0.0;
                for k in 0..self.shape.rank {
                    // entity product first so swapping s and o is bit-identical
                    acc += r[k] * (a_s[k] * a_o[k]);
                }
                acc
            }
            Variant::ComplEx => {
                let (x, y) = (g[ENT_RE].row(t.s), g[ENT_IM].row(t.s));
                let (u, v) = (g[REL_RE].row(t.p), g[REL_IM].row(t.p));
                let (w, z) = (g[ENT_RE].row(t.o), g[ENT_IM].row(t.o));
                let mut acc = 0.0;
                for k in 0..self.shape.rank {
                    let re = x[k] * u[k] - y[k] * v[k];
                    let im = x[k] * v[k] + y[k] * u[k];
                    acc += re * w[k] + im * z[k];
                }
                acc
            }
            Variant::MultiwayNn => {
                let input = self.mlp_input(t);
                let hidden = self.mlp_hidden(&input);
                dot(&g[MLP_BETA].values, &hidden) + g[MLP_B2].values[0]
            }
            Variant::Rescal => {
                let (a_s, a_o) = (g[ENT].row(t.s), g[ENT].row(t.o));
                let rel = g[REL].row(t.p);
                let d = self.shape.rank;
                let mut acc = 0.0;
                for i in 0..d {
                    acc += a_s[i] * dot(&rel[i * d..(i + 1) * d], a_o);
                }
                acc
            }
        }
    }

    fn mlp_input(&self, t: Triple) -> Vec<f64> {
        let g = &self.groups;
        let mut input = Vec::with_capacity(3 * self.shape.rank);
        input.extend_from_slice(g[ENT].row(t.s));
        input.extend_from_slice(g[REL].row(t.p));
        input.extend_from_slice(g[ENT].row(t.o));
        input
    }

    fn mlp_hidden(&self, input: &[f64]) -> Vec<f64> {
        let g = &self.groups;
        (0..self.shape.hidden)
            .map(|j| (dot(g[MLP_W].row(j), input) + g[MLP_B1].values[j]).tanh())
            .collect()
    }

    /// `upstream * d(score)/d(params)` for the parameters `(s, p, o)` touches.
    pub fn score_gradients(&self, s: usize, p: usize, o: usize, upstream: f64) -> Result<Gradient> {
        let t = Triple::new(s, p, o);
        self.check_triple(t)?;
        Ok(self.gradients_unchecked(t, upstream))
    }

    pub(crate) fn gradients_unchecked(&self, t: Triple, upstream: f64) -> Gradient {
        let g = &self.groups;
        let d = self.shape.rank;
        let mut grad = Gradient::default();
        match self.shape.variant {
            Variant::DistMult => {
                let (a_s, r, a_o) = (g[ENT].row(t.s), g[REL].row(t.p), g[ENT].row(t.o));
                grad.push(
                    ENT,
                    t.s * d,
                    (0..d).map(|k| upstream * r[k] * a_o[k]).collect(),
                );
                grad.push(
                    REL,
                    t.p * d,
                    (0..d).map(|k| upstream * a_s[k] * a_o[k]).collect(),
                );
                grad.push(
                    ENT,
                    t.o * d,
                    (0..d).map(|k| upstream * a_s[k] * r[k]).collect(),
                );
            }
            Variant::ComplEx => {
                let (x, y) = (g[ENT_RE].row(t.s), g[ENT_IM].row(t.s));
                let (u, v) = (g[REL_RE].row(t.p), g[REL_IM].row(t.p));
                let (w, z) = (g[ENT_RE].row(t.o), g[ENT_IM].row(t.o));
                let c = upstream;
                grad.push(
                    ENT_RE,
                    t.s * d,
                    (0..d).map(|k| c * (u[k] * w[k] + v[k] * z[k])).collect(),
                );
                grad.push(
                    ENT_IM,
                    t.s * d,
                    (0..d).map(|k| c * (u[k] * z[k] - v[k] * w[k])).collect(),
                );
                grad.push(
                    REL_RE,
                    t.p * d,
                    (0..d).map(|k| c * (x[k] * w[k] + y[k] * z[k])).collect(),
                );
                grad.push(
                    REL_IM,
                    t.p * d,
                    (0..d).map(|k| c * (x[k] * z[k] - y[k] * w[k])).collect(),
                );
                grad.push(
                    ENT_RE,
                    t.o * d,
                    (0..d).map(|k| c * (x[k] * u[k] - y[k] * v[k])).collect(),
                );
                grad.push(
                    ENT_IM,
                    t.o * d,
                    (0..d).map(|k| c * (x[k] * v[k] + y[k] * u[k])).collect(),
                );
            }
            Variant::MultiwayNn => {
                let input = self.mlp_input(t);
                let hidden = self.mlp_hidden(&input);
                let beta = &g[MLP_BETA].values;
                let z = self.shape.hidden;
                let delta: Vec<f64> = (0..z)
                    .map(|j| upstream * beta[j] * (1.0 - hidden[j] * hidden[j]))
                    .collect();
                let mut d_input = vec![0.0; 3 * d];
                let mut d_w = vec![0.0; z * 3 * d];
                for j in 0..z {
                    let w_row = g[MLP_W].row(j);
                    for i in 0..3 * d {
                        d_w[j * 3 * d + i] = delta[j] * input[i];
                        d_input[i] += w_row[i] * delta[j];
                    }
                }
                grad.push(ENT, t.s * d, d_input[..d].to_vec());
                grad.push(REL, t.p * d, d_input[d..2 * d].to_vec());
                grad.push(ENT, t.o * d, d_input[2 * d..].to_vec());
                grad.push(MLP_W, 0, d_w);
                grad.push(MLP_BETA, 0, hidden.iter().map(|h| upstream * h).collect());
                grad.push(MLP_B1, 0, delta);
                grad.push(MLP_B2, 0, vec![upstream]);
            }
            Variant::Rescal => {
                let (a_s, a_o) = (g[ENT].row(t.s), g[ENT].row(t.o));
                let rel = g[REL].row(t.p);
                let d_s = (0..d)
                    .map(|i| upstream * dot(&rel[i * d..(i + 1) * d], a_o))
                    .collect();
                let d_o = (0..d)
                    .map(|j| upstream * (0..d).map(|i| a_s[i] * rel[i * d + j]).sum::<f64>())
                    .collect();
                let mut d_rel = Vec::with_capacity(d * d);
                for i in 0..d {
                    for j in 0..d {
                        d_rel.push(upstream * a_s[i] * a_o[j]);
                    }
                }
                grad.push(ENT, t.s * d, d_s);
                grad.push(REL, t.p * d * d, d_rel);
                grad.push(ENT, t.o * d, d_o);
            }
        }
        grad
    }

    /// Scores every cell; fails when `|E|^2 |R|` exceeds `cap`.
    pub fn score_all_triples(&self, cap: usize) -> Result<ScoreTensor> {
        let cells = self.shape.cells();
        if cells > cap {
            return Err(Error::CapExceeded { cells, cap });
        }
        let (ne, nr) = (self.shape.num_entities, self.shape.num_relations);
        let mut values = Vec::with_capacity(cells);
        for s in 0..ne {
            for p in 0..nr {
                for o in 0..ne {
                    values.push(self.score_unchecked(Triple::new(s, p, o)));
                }
            }
        }
        Ok(ScoreTensor {
            num_entities: ne,
            num_relations: nr,
            values,
        })
    }
}

/// Dense `|E| x |R| x |E|` tensor, indexed `[s][p][o]` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTensor {
    pub num_entities: usize,
    pub num_relations: usize,
    pub values: Vec<f64>,
}

impl ScoreTensor {
    pub fn index(&self, s: usize, p: usize, o: usize) -> usize {
        (s * self.num_relations + p) * self.num_entities + o
    }

    pub fn get(&self, s: usize, p: usize, o: usize) -> f64 {
        self.values[self.index(s, p, o)]
    }
}
