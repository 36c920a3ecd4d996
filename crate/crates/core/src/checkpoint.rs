//! Binary checkpoint container for semantic and conditional models.
//!
//! All integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"RLFSCKPT"
//! 8       1     version (1)
//! 9       1     model tag: 1 distmult, 2 complex, 3 multiway, 4 rescal, 5 conditional
//! 10      8     rank d            (u64)
//! 18      8     hidden width z    (u64, 0 when unused)
//! 26      8     entity count      (u64)
//! 34      8     relation count    (u64)
//! 42      8     feature dim f     (u64, 0 for semantic models)
//! 50      4     group count       (u32)
//! then per group, in the model's fixed group order:
//!         1     ndim              (u8)
//!         8*n   dims              (u64 each)
//!         8*N   values            (f64 each, row-major, N = product of dims)
//! ```

use std::fs;
use std::path::Path;

use crate::conditional::{ConditionalModel, ConditionalShape};
use crate::error::{Error, Result};
use crate::params::{ParamGroup, Parameterized};
use crate::semantic::{ModelShape, SemanticModel, Variant};

pub const MAGIC: &[u8; 8] = b"RLFSCKPT";
pub const VERSION: u8 = 1;
const CONDITIONAL_TAG: u8 = 5;

fn variant_tag(v: Variant) -> u8 {
    match v {
        Variant::DistMult => 1,
        Variant::ComplEx => 2,
        Variant::MultiwayNn => 3,
        Variant::Rescal => 4,
    }
}

fn tag_variant(tag: u8) -> Option<Variant> {
    match tag {
        1 => Some(Variant::DistMult),
        2 => Some(Variant::ComplEx),
        3 => Some(Variant::MultiwayNn),
        4 => Some(Variant::Rescal),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Semantic(SemanticModel),
    Conditional(ConditionalModel),
}

struct Header {
    tag: u8,
    rank: usize,
    hidden: usize,
    num_entities: usize,
    num_relations: usize,
    feature_dim: usize,
}

fn encode(header: &Header, groups: &[ParamGroup]) -> Vec<u8> {
    let payload: usize = groups
        .iter()
        .map(|g| 1 + 8 * g.shape.len() + 8 * g.len())
        .sum();
    let mut out = Vec::with_capacity(54 + payload);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(header.tag);
    for v in [
        header.rank,
        header.hidden,
        header.num_entities,
        header.num_relations,
        header.feature_dim,
    ] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&(groups.len() as u32).to_le_bytes());
    for g in groups {
        out.push(g.shape.len() as u8);
        for &d in &g.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &g.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Checkpoint::Semantic(m) => {
                let s = m.shape();
                let header = Header {
                    tag: variant_tag(s.variant),
                    rank: s.rank,
                    hidden: s.hidden,
                    num_entities: s.num_entities,
                    num_relations: s.num_relations,
                    feature_dim: 0,
                };
                encode(&header, m.groups())
            }
            Checkpoint::Conditional(m) => {
                let s = m.shape();
                let header = Header {
                    tag: CONDITIONAL_TAG,
                    rank: s.rank,
                    hidden: s.hidden,
                    num_entities: s.num_entities,
                    num_relations: s.num_relations,
                    feature_dim: s.feature_dim,
                };
                encode(&header, m.groups())
            }
        }
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |message: String| Error::Checkpoint {
            path: path.to_owned(),
            message,
        };
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8).ok_or_else(|| fail("truncated header".into()))?;
        if magic != MAGIC {
            return Err(fail("bad magic; not a checkpoint file".into()));
        }
        let version = r.u8().ok_or_else(|| fail("truncated header".into()))?;
        if version != VERSION {
            return Err(fail(format!("unsupported version {version}")));
        }
        let tag = r.u8().ok_or_else(|| fail("truncated header".into()))?;
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = r.u64().ok_or_else(|| fail("truncated header".into()))? as usize;
        }
        let [rank, hidden, num_entities, num_relations, feature_dim] = dims;
        let n_groups = r.u32().ok_or_else(|| fail("truncated header".into()))? as usize;

        let expected_layout: Vec<(&'static str, Vec<usize>)> = if tag == CONDITIONAL_TAG {
            ConditionalShape {
                num_entities,
                num_relations,
                rank,
                hidden,
                feature_dim,
            }
            .group_layout()
        } else {
            let variant =
                tag_variant(tag).ok_or_else(|| fail(format!("unknown model tag {tag}")))?;
            ModelShape {
                variant,
                num_entities,
                num_relations,
                rank,
                hidden,
            }
            .group_layout()
        };
        if n_groups != expected_layout.len() {
            return Err(fail(format!(
                "expected {} parameter groups, found {n_groups}",
                expected_layout.len()
            )));
        }
        let mut values = Vec::with_capacity(n_groups);
        for (name, shape) in &expected_layout {
            let ndim = r
                .u8()
                .ok_or_else(|| fail(format!("truncated group `{name}`")))?
                as usize;
            let stored: Vec<usize> = (0..ndim)
                .map(|_| r.u64().map(|v| v as usize))
                .collect::<Option<_>>()
                .ok_or_else(|| fail(format!("truncated group `{name}`")))?;
            if &stored != shape {
                return Err(fail(format!(
                    "group `{name}` has shape {stored:?}, expected {shape:?}"
                )));
            }
            let n: usize = shape.iter().product();
            let raw = r
                .take(
                    n.checked_mul(8)
                        .ok_or_else(|| fail("group too large".into()))?,
                )
                .ok_or_else(|| fail(format!("truncated group `{name}`")))?;
            values.push(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect::<Vec<f64>>(),
            );
        }
        if r.pos != bytes.len() {
            return Err(fail(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(fail("non-finite parameter value".into()));
        }

        if tag == CONDITIONAL_TAG {
            let shape = ConditionalShape {
                num_entities,
                num_relations,
                rank,
                hidden,
                feature_dim,
            };
            Ok(Checkpoint::Conditional(
                ConditionalModel::from_values(shape, values).map_err(|e| fail(e.to_string()))?,
            ))
        } else {
            let shape = ModelShape {
                variant: tag_variant(tag).expect("checked above"),
                num_entities,
                num_relations,
                rank,
                hidden,
            };
            Ok(Checkpoint::Semantic(
                SemanticModel::from_values(shape, values).map_err(|e| fail(e.to_string()))?,
            ))
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn into_semantic(self, path: &Path) -> Result<SemanticModel> {
        match self {
            Checkpoint::Semantic(m) => Ok(m),
            Checkpoint::Conditional(_) => Err(Error::Checkpoint {
                path: path.to_owned(),
                message: "expected a semantic prior checkpoint, found a conditional model".into(),
            }),
        }
    }

    pub fn into_conditional(self, path: &Path) -> Result<ConditionalModel> {
        match self {
            Checkpoint::Conditional(m) => Ok(m),
            Checkpoint::Semantic(_) => Err(Error::Checkpoint {
                path: path.to_owned(),
                message: "expected a conditional model checkpoint, found a semantic prior".into(),
            }),
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let slice = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(slice)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8)
            .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}
