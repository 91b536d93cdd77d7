//! Synthetic scenes, template programs, an exact symbolic oracle, and
//! aligned feature synthesis.
//!
//! Scenes are symbolic: named objects with category-typed attributes and
//! boxes in [0,1]^2, padded with distractor boxes that carry a reserved
//! null concept. Spatial relations derive from box geometry (bucketed
//! centers), so they are recoverable from the synthesized features;
//! symbolic relations are sampled. The oracle evaluates programs with set
//! semantics and is the independent source of every ground-truth
//! intermediate output.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::executor::FeatureSet;
use crate::guidance::BBox;
use crate::math;
use crate::program::{Catalog, Program, ProgramStep};
use crate::rng::ChaCha8Rng;
use crate::tensor::{Real, Tensor};

/// Number of position buckets per axis in the concept encoding. Spatial
/// relations compare bucket indices, so the features carry exactly the
/// signal the relations are defined by.
const POS_BUCKETS: usize = 4;

/// Closed vocabulary of names, category-typed attributes, and predicates.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    pub names: Vec<String>,
    pub attributes: Vec<String>,
    /// Category index per attribute, parallel to `attributes`.
    pub attr_category: Vec<usize>,
    pub categories: Vec<String>,
    pub spatial: Vec<String>,
    pub symbolic: Vec<String>,
}

impl Vocabulary {
    /// Desk-scale vocabulary: 20 names, 10 attributes in 3 categories,
    /// 4 spatial + 2 symbolic relations.
    pub fn desk_default() -> Self {
        let names = [
            "cat", "dog", "bird", "car", "laptop", "sofa", "table", "chair", "tree", "book",
            "cup", "ball", "lamp", "phone", "shoe", "hat", "box", "plant", "clock", "bag",
        ];
        let attributes = [
            ("red", 0),
            ("blue", 0),
            ("green", 0),
            ("yellow", 0),
            ("white", 0),
            ("small", 1),
            ("large", 1),
            ("wooden", 2),
            ("metal", 2),
            ("plastic", 2),
        ];
        Vocabulary {
            names: names.iter().map(|s| s.to_string()).collect(),
            attributes: attributes.iter().map(|(s, _)| s.to_string()).collect(),
            attr_category: attributes.iter().map(|(_, c)| *c).collect(),
            categories: ["color", "size", "material"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            spatial: ["left-of", "right-of", "above", "below"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            symbolic: ["holding", "touching"].iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Ordered answer strings: names, attributes, then yes/no.
    pub fn answer_vocab(&self) -> Vec<String> {
        let mut v = self.names.clone();
        v.extend(self.attributes.iter().cloned());
        v.push("yes".to_string());
        v.push("no".to_string());
        v
    }

    pub fn category_index(&self, category: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == category)
    }

    pub fn attribute_category(&self, attr: &str) -> Option<&str> {
        let i = self.attributes.iter().position(|a| a == attr)?;
        Some(&self.categories[self.attr_category[i]])
    }

    pub fn attributes_in_category(&self, category: &str) -> Vec<&str> {
        match self.category_index(category) {
            None => Vec::new(),
            Some(c) => self
                .attributes
                .iter()
                .zip(&self.attr_category)
                .filter(|(_, &ac)| ac == c)
                .map(|(a, _)| a.as_str())
                .collect(),
        }
    }

    /// Dimension of the concept one-hot space: names + null + attributes
    /// + position buckets + predicates + categories + symbolic role bits
    /// (subject/object markers carried by participating boxes).
    pub fn concept_dim(&self) -> usize {
        self.names.len()
            + 1
            + self.attributes.len()
            + 2 * POS_BUCKETS
            + self.spatial.len()
            + self.symbolic.len()
            + self.categories.len()
            + 2 * self.symbolic.len()
    }

    fn name_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn null_concept(&self) -> usize {
        self.names.len()
    }

    fn attr_concept(&self, attr: &str) -> Option<usize> {
        self.attributes
            .iter()
            .position(|a| a == attr)
            .map(|i| self.names.len() + 1 + i)
    }

    fn x_bucket_concept(&self, bucket: usize) -> usize {
        self.names.len() + 1 + self.attributes.len() + bucket
    }

    fn y_bucket_concept(&self, bucket: usize) -> usize {
        self.names.len() + 1 + self.attributes.len() + POS_BUCKETS + bucket
    }

    fn predicate_concept(&self, pred: &str) -> Option<usize> {
        let base = self.names.len() + 1 + self.attributes.len() + 2 * POS_BUCKETS;
        if let Some(i) = self.spatial.iter().position(|p| p == pred) {
            return Some(base + i);
        }
        self.symbolic
            .iter()
            .position(|p| p == pred)
            .map(|i| base + self.spatial.len() + i)
    }

    fn category_concept(&self, category: &str) -> Option<usize> {
        let base = self.names.len()
            + 1
            + self.attributes.len()
            + 2 * POS_BUCKETS
            + self.spatial.len()
            + self.symbolic.len();
        self.category_index(category).map(|i| base + i)
    }

    /// Role bit for a box participating in a symbolic relation: the
    /// subject (is_subject) or object side of `pred`.
    fn symbolic_role_concept(&self, pred: &str, is_subject: bool) -> Option<usize> {
        let base = self.names.len()
            + 1
            + self.attributes.len()
            + 2 * POS_BUCKETS
            + self.spatial.len()
            + self.symbolic.len()
            + self.categories.len();
        self.symbolic
            .iter()
            .position(|p| p == pred)
            .map(|i| base + 2 * i + usize::from(!is_subject))
    }

    /// Concept indices of a text argument. Compound arguments joined with
    /// `|` sum the component one-hots.
    pub fn arg_concepts(&self, arg: &str) -> Result<Vec<usize>, DataError> {
        let mut out = Vec::new();
        for part in arg.split('|') {
            let idx = self
                .name_index(part)
                .map(|i| i)
                .or_else(|| self.attr_concept(part))
                .or_else(|| self.predicate_concept(part))
                .or_else(|| self.category_concept(part))
                .ok_or_else(|| DataError::UnknownConcept {
                    name: part.to_string(),
                })?;
            out.push(idx);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub name: String,
    pub attributes: Vec<String>,
    pub bbox: BBox,
}

/// Symbolic scene: objects occupy boxes 0..n_objects, distractors pad to
/// n_boxes. Relations are (subject, predicate, object) triples over
/// object indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub relations: Vec<(usize, String, usize)>,
    pub distractors: Vec<BBox>,
}

impl Scene {
    pub fn n_boxes(&self) -> usize {
        self.objects.len() + self.distractors.len()
    }

    /// Object boxes followed by distractor boxes.
    pub fn boxes(&self) -> Vec<BBox> {
        self.objects
            .iter()
            .map(|o| o.bbox)
            .chain(self.distractors.iter().copied())
            .collect()
    }

    pub fn object_boxes(&self) -> Vec<BBox> {
        self.objects.iter().map(|o| o.bbox).collect()
    }
}

fn bucket(coord: f64) -> usize {
    ((coord * POS_BUCKETS as f64) as usize).min(POS_BUCKETS - 1)
}

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    let w = 0.06 + rng.gen::<f64>() * 0.16;
    let h = 0.06 + rng.gen::<f64>() * 0.16;
    let cx = 0.08 + rng.gen::<f64>() * 0.84;
    let cy = 0.08 + rng.gen::<f64>() * 0.84;
    BBox::new(
        (cx - w / 2.0).max(0.0),
        (cy - h / 2.0).max(0.0),
        (cx + w / 2.0).min(1.0),
        (cy + h / 2.0).min(1.0),
    )
}

/// Samples a scene with `n_objects` named objects and distractor padding
/// to `n_boxes`. Spatial relations hold exactly when the bucketed centers
/// differ on the relevant axis, so they are consistent with geometry.
pub fn generate_scene(
    rng: &mut ChaCha8Rng,
    vocab: &Vocabulary,
    n_objects: usize,
    n_boxes: usize,
) -> Result<Scene, DataError> {
    if n_objects > n_boxes {
        return Err(DataError::InvalidConfig(format!(
            "n_objects {n_objects} exceeds n_boxes {n_boxes}"
        )));
    }
    if vocab.names.len() < n_objects || vocab.categories.is_empty() {
        return Err(DataError::VocabTooSmall {
            need: n_objects,
            have: vocab.names.len(),
        });
    }
    // Names are unique per scene: set membership and relation targets stay
    // recoverable from feature-space summaries (no aliased identities).
    let mut name_pool: Vec<&String> = vocab.names.iter().collect();
    name_pool.shuffle(rng);
    let mut objects = Vec::with_capacity(n_objects);
    for obj_idx in 0..n_objects {
        let name = name_pool[obj_idx].clone();
        let n_attrs = 1 + rng.gen_range(0..2usize);
        let mut cats: Vec<usize> = (0..vocab.categories.len()).collect();
        cats.shuffle(rng);
        let mut attributes = Vec::with_capacity(n_attrs);
        for &cat in cats.iter().take(n_attrs) {
            let in_cat: Vec<&str> = vocab
                .attributes
                .iter()
                .zip(&vocab.attr_category)
                .filter(|(_, &c)| c == cat)
                .map(|(a, _)| a.as_str())
                .collect();
            attributes.push(in_cat[rng.gen_range(0..in_cat.len())].to_string());
        }
        objects.push(SceneObject {
            name,
            attributes,
            bbox: random_box(rng),
        });
    }

    let mut relations = Vec::new();
    for i in 0..n_objects {
        for j in 0..n_objects {
            if i == j {
                continue;
            }
            let (cxi, cyi) = objects[i].bbox.center();
            let (cxj, cyj) = objects[j].bbox.center();
            let (xbi, xbj) = (bucket(cxi), bucket(cxj));
            let (ybi, ybj) = (bucket(cyi), bucket(cyj));
            if xbi > xbj {
                relations.push((i, "right-of".to_string(), j));
            } else if xbi < xbj {
                relations.push((i, "left-of".to_string(), j));
            }
            if ybi < ybj {
                relations.push((i, "above".to_string(), j));
            } else if ybi > ybj {
                relations.push((i, "below".to_string(), j));
            }
        }
    }
    if n_objects >= 2 {
        // At most one tuple per symbolic predicate: the participating
        // boxes carry role bits in their features, and a single tuple
        // keeps the pairing recoverable from them.
        for pred in &vocab.symbolic {
            if rng.gen::<bool>() {
                let s = rng.gen_range(0..n_objects);
                let mut o = rng.gen_range(0..n_objects);
                if o == s {
                    o = (o + 1) % n_objects;
                }
                relations.push((s, pred.clone(), o));
            }
        }
    }

    let distractors = (0..n_boxes - n_objects).map(|_| random_box(rng)).collect();
    Ok(Scene {
        objects,
        relations,
        distractors,
    })
}

/// Exact per-step outputs of a program on a scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum OracleStep {
    /// Object indices the attention should cover.
    Attention(Vec<usize>),
    Boolean(bool),
    Answer(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleTruth {
    pub steps: Vec<OracleStep>,
    pub answer: String,
}

fn attention_of(steps: &[OracleStep], idx: usize) -> Result<&Vec<usize>, DataError> {
    match &steps[idx] {
        OracleStep::Attention(s) => Ok(s),
        _ => Err(DataError::InvalidConfig(format!(
            "step {idx} is not an attention step"
        ))),
    }
}

fn boolean_of(steps: &[OracleStep], idx: usize) -> Result<bool, DataError> {
    match &steps[idx] {
        OracleStep::Boolean(b) => Ok(*b),
        _ => Err(DataError::InvalidConfig(format!(
            "step {idx} is not a boolean step"
        ))),
    }
}

fn split_arg(arg: &str) -> (&str, Option<&str>) {
    match arg.split_once('|') {
        Some((a, b)) => (a, Some(b)),
        None => (arg, None),
    }
}

/// Symbolic evaluation with set semantics. Deterministic and total on
/// generator output; query steps whose target is not unique are template
/// bugs and reported as hard errors.
pub fn oracle_execute(
    program: &Program,
    scene: &Scene,
    catalog: &Catalog,
) -> Result<OracleTruth, DataError> {
    let mut steps: Vec<OracleStep> = Vec::with_capacity(program.steps.len());
    for (t, step) in program.steps.iter().enumerate() {
        let arg = step.text_arg.as_deref().unwrap_or("");
        let out = match step.op.as_str() {
            "Select" => OracleStep::Attention(
                scene
                    .objects
                    .iter()
                    .enumerate()
                    .filter(|(_, o)| o.name == arg)
                    .map(|(i, _)| i)
                    .collect(),
            ),
            "FilterAttr" => {
                let s = attention_of(&steps, step.deps[0])?;
                OracleStep::Attention(
                    s.iter()
                        .copied()
                        .filter(|&i| scene.objects[i].attributes.iter().any(|a| a == arg))
                        .collect(),
                )
            }
            "FilterName" => {
                let s = attention_of(&steps, step.deps[0])?;
                OracleStep::Attention(
                    s.iter()
                        .copied()
                        .filter(|&i| scene.objects[i].name == arg)
                        .collect(),
                )
            }
            "RelateSub" => {
                let s = attention_of(&steps, step.deps[0])?;
                let mut out: Vec<usize> = scene
                    .relations
                    .iter()
                    .filter(|(_, p, o)| p == arg && s.contains(o))
                    .map(|(subj, _, _)| *subj)
                    .collect();
                out.sort_unstable();
                out.dedup();
                OracleStep::Attention(out)
            }
            "RelateObj" => {
                let s = attention_of(&steps, step.deps[0])?;
                let mut out: Vec<usize> = scene
                    .relations
                    .iter()
                    .filter(|(subj, p, _)| p == arg && s.contains(subj))
                    .map(|(_, _, o)| *o)
                    .collect();
                out.sort_unstable();
                out.dedup();
                OracleStep::Attention(out)
            }
            "Exist" => {
                let s = attention_of(&steps, step.deps[0])?;
                OracleStep::Boolean(!s.is_empty())
            }
            "And" => OracleStep::Boolean(
                boolean_of(&steps, step.deps[0])? && boolean_of(&steps, step.deps[1])?,
            ),
            "Or" => OracleStep::Boolean(
                boolean_of(&steps, step.deps[0])? || boolean_of(&steps, step.deps[1])?,
            ),
            "VerifyAttr" => {
                let s = attention_of(&steps, step.deps[0])?;
                OracleStep::Boolean(
                    s.iter()
                        .any(|&i| scene.objects[i].attributes.iter().any(|a| a == arg)),
                )
            }
            "VerifyRel" => {
                let s = attention_of(&steps, step.deps[0])?;
                let (pred, name) = split_arg(arg);
                let name = name.unwrap_or("");
                OracleStep::Boolean(scene.relations.iter().any(|(subj, p, o)| {
                    p == pred && s.contains(subj) && scene.objects[*o].name == name
                }))
            }
            "QueryName" => {
                let s = attention_of(&steps, step.deps[0])?;
                if s.len() != 1 {
                    return Err(DataError::NonUniqueQuery {
                        step: t,
                        found: s.len(),
                    });
                }
                OracleStep::Answer(scene.objects[s[0]].name.clone())
            }
            "QueryAttr" => {
                let s = attention_of(&steps, step.deps[0])?;
                if s.len() != 1 {
                    return Err(DataError::NonUniqueQuery {
                        step: t,
                        found: s.len(),
                    });
                }
                let obj = &scene.objects[s[0]];
                let matching: Vec<&String> = obj
                    .attributes
                    .iter()
                    .filter(|a| {
                        // attribute belongs to the queried category
                        crate::synthdata::category_matches(a, arg, scene, s[0])
                    })
                    .collect();
                if matching.len() != 1 {
                    return Err(DataError::NonUniqueQuery {
                        step: t,
                        found: matching.len(),
                    });
                }
                OracleStep::Answer(matching[0].clone())
            }
            "ChooseAttr" => {
                let s = attention_of(&steps, step.deps[0])?;
                if s.len() != 1 {
                    return Err(DataError::NonUniqueQuery {
                        step: t,
                        found: s.len(),
                    });
                }
                let obj = &scene.objects[s[0]];
                let held: Vec<&str> = arg
                    .split('|')
                    .filter(|c| obj.attributes.iter().any(|a| a == c))
                    .collect();
                if held.len() != 1 {
                    return Err(DataError::NonUniqueQuery {
                        step: t,
                        found: held.len(),
                    });
                }
                OracleStep::Answer(held[0].to_string())
            }
            "ChooseName" => {
                let s = attention_of(&steps, step.deps[0])?;
                if s.len() != 1 {
                    return Err(DataError::NonUniqueQuery {
                        step: t,
                        found: s.len(),
                    });
                }
                let name = &scene.objects[s[0]].name;
                if !arg.split('|').any(|c| c == name) {
                    return Err(DataError::NonUniqueQuery { step: t, found: 0 });
                }
                OracleStep::Answer(name.clone())
            }
            other => {
                return Err(DataError::InvalidConfig(format!(
                    "oracle has no semantics for `{other}`"
                )))
            }
        };
        steps.push(out);
    }

    let answer = match steps.last() {
        Some(OracleStep::Answer(a)) => a.clone(),
        Some(OracleStep::Boolean(b)) => if *b { "yes" } else { "no" }.to_string(),
        _ => {
            return Err(DataError::InvalidConfig(
                "terminal step must be answer or boolean".to_string(),
            ))
        }
    };
    let _ = catalog; // kinds are implied by the opcode table above
    Ok(OracleTruth { steps, answer })
}

// Category membership needs the vocabulary, which the oracle does not
// carry; the desk vocabulary's category structure is recovered from the
// attribute itself. Attributes are globally unique across categories.
fn category_matches(attr: &str, category: &str, _scene: &Scene, _obj: usize) -> bool {
    Vocabulary::desk_default()
        .attribute_category(attr)
        .map(|c| c == category)
        .unwrap_or(false)
}

/// Feature synthesis configuration. The projection from concept space to
/// feature space is derived deterministically from `seed`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSynthConfig {
    pub d: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Standard normal via Box-Muller.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    math::sqrt64(-2.0 * math::ln64(u1)) * math::cos64(2.0 * core::f64::consts::PI * u2)
}

/// Fixed random linear map from concept space to feature space. When the
/// feature dimension allows, the concept axes are orthonormalized
/// (Gram-Schmidt over random Gaussian columns), so distinct concepts map
/// to exactly orthogonal directions.
pub fn projection_matrix(vocab: &Vocabulary, cfg: &FeatureSynthConfig) -> Tensor {
    let cd = vocab.concept_dim();
    let mut rng = crate::rng::stream(cfg.seed, crate::rng::Purpose::Projection, 0, 0);
    // columns[c] is concept c's direction in feature space
    let mut columns: Vec<Vec<f64>> = (0..cd)
        .map(|_| (0..cfg.d).map(|_| normal(&mut rng)).collect())
        .collect();
    if cfg.d >= cd {
        for c in 0..cd {
            for prev in 0..c {
                let dot: f64 = columns[c]
                    .iter()
                    .zip(&columns[prev])
                    .map(|(a, b)| a * b)
                    .sum();
                for i in 0..cfg.d {
                    columns[c][i] -= dot * columns[prev][i];
                }
            }
            let norm = math::sqrt64(columns[c].iter().map(|v| v * v).sum::<f64>());
            for v in &mut columns[c] {
                *v /= norm;
            }
        }
    } else {
        let scale = 1.0 / math::sqrt64(cd as f64);
        for col in &mut columns {
            for v in col {
                *v *= scale;
            }
        }
    }
    let mut data: Vec<Real> = Vec::with_capacity(cfg.d * cd);
    for i in 0..cfg.d {
        for col in columns.iter() {
            data.push(col[i] as Real);
        }
    }
    Tensor::new(vec![cfg.d, cd], data).expect("projection shape")
}

fn project(projection: &Tensor, concepts: &[usize]) -> Vec<Real> {
    let (d, cd) = (projection.rows(), projection.cols());
    let mut out = vec![0.0; d];
    for &c in concepts {
        debug_assert!(c < cd);
        for (i, o) in out.iter_mut().enumerate() {
            *o += projection.data()[i * cd + c];
        }
    }
    out
}

fn box_concepts(vocab: &Vocabulary, bbox: &BBox, out: &mut Vec<usize>) {
    let (cx, cy) = bbox.center();
    out.push(vocab.x_bucket_concept(bucket(cx)));
    out.push(vocab.y_bucket_concept(bucket(cy)));
}

/// Synthesizes a feature set for a scene: visual column j is the
/// projection of box j's concepts (name, attributes, position buckets;
/// distractors carry the null concept) plus optional Gaussian noise.
/// Text-argument embeddings are noise-free projections.
pub fn encode_features(
    scene: &Scene,
    args: &[String],
    vocab: &Vocabulary,
    cfg: &FeatureSynthConfig,
    projection: &Tensor,
    noise_rng: &mut ChaCha8Rng,
) -> Result<FeatureSet, DataError> {
    let n = scene.n_boxes();
    let d = cfg.d;
    let mut visual = Tensor::zeros(d, n);
    let boxes = scene.boxes();
    for (j, bx) in boxes.iter().enumerate() {
        let mut concepts = Vec::with_capacity(8);
        if j < scene.objects.len() {
            let obj = &scene.objects[j];
            concepts.push(
                vocab
                    .name_index(&obj.name)
                    .ok_or_else(|| DataError::UnknownConcept {
                        name: obj.name.clone(),
                    })?,
            );
            for a in &obj.attributes {
                concepts.push(vocab.attr_concept(a).ok_or_else(|| DataError::UnknownConcept {
                    name: a.clone(),
                })?);
            }
            for (subj, pred, objx) in &scene.relations {
                if let Some(idx) = vocab.symbolic_role_concept(pred, true) {
                    if *subj == j {
                        concepts.push(idx);
                    }
                }
                if let Some(idx) = vocab.symbolic_role_concept(pred, false) {
                    if *objx == j {
                        concepts.push(idx);
                    }
                }
            }
        } else {
            concepts.push(vocab.null_concept());
        }
        box_concepts(vocab, bx, &mut concepts);
        let col = project(projection, &concepts);
        for (i, v) in col.into_iter().enumerate() {
            let noise = if cfg.noise_sigma > 0.0 {
                (normal(noise_rng) * cfg.noise_sigma) as Real
            } else {
                0.0
            };
            visual.set(i, j, v + noise);
        }
    }

    let mut text_args = BTreeMap::new();
    for arg in args {
        let concepts = vocab.arg_concepts(arg)?;
        let col = project(projection, &concepts);
        text_args.insert(arg.clone(), Tensor::column(&col));
    }

    Ok(FeatureSet {
        boxes,
        visual,
        text_args,
        answer_vocab: vocab.answer_vocab(),
    })
}

/// Program templates. Chains of length 2-5 plus And/Or branch shapes,
/// covering every opcode in the standard catalog.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Template {
    SelectName,
    SelectAttr,
    FilterExist,
    RelateSubName,
    RelateObjName,
    VerifyAttribute,
    VerifyRelation,
    AndAttrs,
    OrAttrs,
    RelateFilterExist,
    RelateFilterNameExist,
    ChooseAttribute,
    ChooseRelName,
    RelateQueryAttr,
    RelateObjQueryAttr,
    RelateFilterNameQuery,
    RelateFilterAttrQuery,
}

impl Template {
    pub fn all() -> &'static [Template] {
        use Template::*;
        &[
            SelectName,
            SelectAttr,
            FilterExist,
            RelateSubName,
            RelateObjName,
            VerifyAttribute,
            VerifyRelation,
            AndAttrs,
            OrAttrs,
            RelateFilterExist,
            RelateFilterNameExist,
            ChooseAttribute,
            ChooseRelName,
            RelateQueryAttr,
            RelateObjQueryAttr,
            RelateFilterNameQuery,
            RelateFilterAttrQuery,
        ]
    }

    pub fn name(&self) -> &'static str {
        use Template::*;
        match self {
            SelectName => "select_name",
            SelectAttr => "select_attr",
            FilterExist => "filter_exist",
            RelateSubName => "relate_sub_name",
            RelateObjName => "relate_obj_name",
            VerifyAttribute => "verify_attr",
            VerifyRelation => "verify_rel",
            AndAttrs => "and_attrs",
            OrAttrs => "or_attrs",
            RelateFilterExist => "relate_filter_exist",
            RelateFilterNameExist => "relate_filter_name_exist",
            ChooseAttribute => "choose_attr",
            ChooseRelName => "choose_rel_name",
            RelateQueryAttr => "relate_query_attr",
            RelateObjQueryAttr => "relate_obj_query_attr",
            RelateFilterNameQuery => "relate_filter_name_query",
            RelateFilterAttrQuery => "relate_filter_attr_query",
        }
    }

    /// Sampling weight in the generator pool. Relational chains are the
    /// sample-hungry templates and get a larger share of the budget.
    pub fn weight(&self) -> usize {
        use Template::*;
        match self {
            RelateSubName | RelateObjName | VerifyRelation | RelateFilterExist
            | ChooseRelName | RelateQueryAttr | RelateObjQueryAttr | FilterExist
            | RelateFilterNameQuery | RelateFilterAttrQuery => 2,
            SelectName | SelectAttr | VerifyAttribute | AndAttrs | OrAttrs | ChooseAttribute
            | RelateFilterNameExist => 1,
        }
    }
}

struct SceneIndex<'a> {
    scene: &'a Scene,
    /// Objects whose name is unique in the scene.
    unique_named: Vec<usize>,
    /// (pred, object) -> subjects, for RelateSub; only unique-named objects.
    sub_singletons: Vec<(&'a str, usize, usize)>,
    /// (pred, subject) -> single object, subject unique-named.
    obj_singletons: Vec<(&'a str, usize, usize)>,
}

impl<'a> SceneIndex<'a> {
    fn build(scene: &'a Scene) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for o in &scene.objects {
            *counts.entry(o.name.as_str()).or_insert(0) += 1;
        }
        let unique_named: Vec<usize> = scene
            .objects
            .iter()
            .enumerate()
            .filter(|(_, o)| counts[o.name.as_str()] == 1)
            .map(|(i, _)| i)
            .collect();

        let mut by_pred_obj: BTreeMap<(&str, usize), Vec<usize>> = BTreeMap::new();
        let mut by_pred_subj: BTreeMap<(&str, usize), Vec<usize>> = BTreeMap::new();
        for (s, p, o) in &scene.relations {
            by_pred_obj.entry((p.as_str(), *o)).or_default().push(*s);
            by_pred_subj.entry((p.as_str(), *s)).or_default().push(*o);
        }
        let is_unique = |i: usize| counts[scene.objects[i].name.as_str()] == 1;
        let sub_singletons = by_pred_obj
            .iter()
            .filter(|((_, o), subs)| subs.len() == 1 && is_unique(*o))
            .map(|((p, o), subs)| (*p, *o, subs[0]))
            .collect();
        let obj_singletons = by_pred_subj
            .iter()
            .filter(|((_, s), objs)| objs.len() == 1 && is_unique(*s))
            .map(|((p, s), objs)| (*p, *s, objs[0]))
            .collect();
        SceneIndex {
            scene,
            unique_named,
            sub_singletons,
            obj_singletons,
        }
    }

    fn pick<'b, T>(&self, rng: &mut ChaCha8Rng, items: &'b [T]) -> Option<&'b T> {
        items.choose(rng)
    }
}

/// Prefers candidates satisfying `contrast` (e.g. the filter concept also
/// occurs outside the attended set, so the conjunction is informative);
/// falls back to the full candidate list.
fn prefer<'a, T>(
    rng: &mut ChaCha8Rng,
    candidates: &'a [T],
    contrast: impl Fn(&T) -> bool,
) -> Option<&'a T> {
    let preferred: Vec<&T> = candidates.iter().filter(|c| contrast(c)).collect();
    if !preferred.is_empty() {
        preferred.choose(rng).copied()
    } else {
        candidates.choose(rng)
    }
}

/// Strict variant: only contrastive candidates qualify.
fn require<'a, T>(
    rng: &mut ChaCha8Rng,
    candidates: &'a [T],
    contrast: impl Fn(&T) -> bool,
) -> Option<&'a T> {
    let preferred: Vec<&T> = candidates.iter().filter(|c| contrast(c)).collect();
    preferred.choose(rng).copied()
}

fn step(op: &str, deps: &[usize], arg: Option<&str>) -> ProgramStep {
    ProgramStep {
        op: op.to_string(),
        deps: deps.to_vec(),
        text_arg: arg.map(|s| s.to_string()),
    }
}

/// Attributes the object does not hold.
fn absent_attrs<'a>(vocab: &'a Vocabulary, obj: &SceneObject) -> Vec<&'a str> {
    vocab
        .attributes
        .iter()
        .map(|a| a.as_str())
        .filter(|a| !obj.attributes.iter().any(|x| x == a))
        .collect()
}

fn instantiate_template(
    template: Template,
    ix: &SceneIndex,
    vocab: &Vocabulary,
    rng: &mut ChaCha8Rng,
) -> Option<(Vec<ProgramStep>, String)> {
    let scene = ix.scene;
    match template {
        Template::SelectName => {
            let &o = ix.pick(rng, &ix.unique_named)?;
            let name = &scene.objects[o].name;
            Some((
                vec![step("Select", &[], Some(name)), step("QueryName", &[0], None)],
                format!("What is the {name}?"),
            ))
        }
        Template::SelectAttr => {
            let &o = ix.pick(rng, &ix.unique_named)?;
            let obj = &scene.objects[o];
            let attr = obj.attributes.choose(rng)?;
            let cat = vocab.attribute_category(attr)?;
            Some((
                vec![
                    step("Select", &[], Some(&obj.name)),
                    step("QueryAttr", &[0], Some(cat)),
                ],
                format!("What {cat} is the {}?", obj.name),
            ))
        }
        Template::FilterExist => {
            let o = rng.gen_range(0..scene.objects.len());
            let name = scene.objects[o].name.clone();
            let member = &scene.objects[o];
            let has = |obj: &SceneObject, attr: &str| obj.attributes.iter().any(|x| x == attr);
            let elsewhere = |attr: &str| {
                scene
                    .objects
                    .iter()
                    .enumerate()
                    .any(|(j, x)| j != o && has(x, attr))
            };
            let want_yes = rng.gen::<bool>();
            // contrast required: the attribute also occurs on another
            // object, so attribute detection alone cannot answer
            let attr = if want_yes {
                require(rng, &member.attributes, |a| elsewhere(a))?.clone()
            } else {
                let candidates: Vec<&str> = vocab
                    .attributes
                    .iter()
                    .map(|a| a.as_str())
                    .filter(|a| !has(member, a))
                    .collect();
                require(rng, &candidates, |a| elsewhere(a))?.to_string()
            };
            Some((
                vec![
                    step("Select", &[], Some(&name)),
                    step("FilterAttr", &[0], Some(&attr)),
                    step("Exist", &[1], None),
                ],
                format!("Is there a {attr} {name}?"),
            ))
        }
        Template::RelateSubName => {
            let &(pred, obj, _subj) = ix.pick(rng, &ix.sub_singletons)?;
            let name = &scene.objects[obj].name;
            Some((
                vec![
                    step("Select", &[], Some(name)),
                    step("RelateSub", &[0], Some(pred)),
                    step("QueryName", &[1], None),
                ],
                format!("What is {pred} the {name}?"),
            ))
        }
        Template::RelateObjName => {
            let &(pred, subj, _obj) = ix.pick(rng, &ix.obj_singletons)?;
            let name = &scene.objects[subj].name;
            Some((
                vec![
                    step("Select", &[], Some(name)),
                    step("RelateObj", &[0], Some(pred)),
                    step("QueryName", &[1], None),
                ],
                format!("What is the {name} {pred}?"),
            ))
        }
        Template::VerifyAttribute => {
            let &o = ix.pick(rng, &ix.unique_named)?;
            let obj = &scene.objects[o];
            let want_yes = rng.gen::<bool>();
            let attr = if want_yes {
                obj.attributes.choose(rng)?.clone()
            } else {
                absent_attrs(vocab, obj).choose(rng)?.to_string()
            };
            Some((
                vec![
                    step("Select", &[], Some(&obj.name)),
                    step("VerifyAttr", &[0], Some(&attr)),
                ],
                format!("Is the {} {attr}?", obj.name),
            ))
        }
        Template::VerifyRelation => {
            let &s = ix.pick(rng, &ix.unique_named)?;
            let subj = &scene.objects[s];
            let want_yes = rng.gen::<bool>();
            if want_yes {
                let related: Vec<(&String, usize)> = scene
                    .relations
                    .iter()
                    .filter(|(subj_i, _, _)| *subj_i == s)
                    .map(|(_, p, o)| (p, *o))
                    .collect();
                let &(pred, o) = related.choose(rng)?;
                let target = &scene.objects[o].name;
                Some((
                    vec![
                        step("Select", &[], Some(&subj.name)),
                        step("VerifyRel", &[0], Some(&format!("{pred}|{target}"))),
                    ],
                    format!("Is the {} {pred} a {target}?", subj.name),
                ))
            } else {
                // find a (pred, name) pair with no matching relation,
                // preferring names that exist in the scene
                for attempt in 0..24 {
                    let pred = if rng.gen::<bool>() {
                        vocab.spatial.choose(rng)?
                    } else {
                        vocab.symbolic.choose(rng)?
                    };
                    let target = if attempt < 16 {
                        &scene.objects[rng.gen_range(0..scene.objects.len())].name
                    } else {
                        vocab.names.choose(rng)?
                    };
                    let holds = scene.relations.iter().any(|(subj_i, p, o)| {
                        *subj_i == s && p == pred && &scene.objects[*o].name == target
                    });
                    if !holds && scene.objects[s].name != *target {
                        return Some((
                            vec![
                                step("Select", &[], Some(&subj.name)),
                                step("VerifyRel", &[0], Some(&format!("{pred}|{target}"))),
                            ],
                            format!("Is the {} {pred} a {target}?", subj.name),
                        ));
                    }
                }
                None
            }
        }
        Template::AndAttrs | Template::OrAttrs => {
            if ix.unique_named.len() < 2 {
                return None;
            }
            let mut picks = ix.unique_named.clone();
            picks.shuffle(rng);
            let (a, b) = (picks[0], picks[1]);
            let want_yes = rng.gen::<bool>();
            let is_and = template == Template::AndAttrs;
            // truth assignment per side
            let (ta, tb) = match (is_and, want_yes) {
                (true, true) => (true, true),
                (true, false) => *[(false, true), (true, false), (false, false)]
                    .choose(rng)
                    .expect("non-empty"),
                (false, true) => *[(true, true), (true, false), (false, true)]
                    .choose(rng)
                    .expect("non-empty"),
                (false, false) => (false, false),
            };
            let attr_for = |obj: &SceneObject, truth: bool, rng: &mut ChaCha8Rng| {
                if truth {
                    obj.attributes.choose(rng).cloned()
                } else {
                    absent_attrs(vocab, obj).choose(rng).map(|s| s.to_string())
                }
            };
            let oa = &scene.objects[a];
            let ob = &scene.objects[b];
            let attr_a = attr_for(oa, ta, rng)?;
            let attr_b = attr_for(ob, tb, rng)?;
            let op = if is_and { "And" } else { "Or" };
            let word = if is_and { "and" } else { "or" };
            Some((
                vec![
                    step("Select", &[], Some(&oa.name)),
                    step("VerifyAttr", &[0], Some(&attr_a)),
                    step("Select", &[], Some(&ob.name)),
                    step("VerifyAttr", &[2], Some(&attr_b)),
                    step(op, &[1, 3], None),
                ],
                format!(
                    "Is the {} {attr_a} {word} the {} {attr_b}?",
                    oa.name, ob.name
                ),
            ))
        }
        Template::RelateFilterExist | Template::RelateFilterNameExist => {
            // anchor: unique-named object with any relate-subject set
            let anchors: Vec<(&str, usize, Vec<usize>)> = {
                let mut by_pred_obj: BTreeMap<(&str, usize), Vec<usize>> = BTreeMap::new();
                for (s, p, o) in &scene.relations {
                    by_pred_obj.entry((p.as_str(), *o)).or_default().push(*s);
                }
                by_pred_obj
                    .into_iter()
                    .filter(|((_, o), _)| ix.unique_named.contains(o))
                    .map(|((p, o), subs)| (p, o, subs))
                    .collect()
            };
            let (pred, obj, subs) = anchors.choose(rng)?;
            let name = &scene.objects[*obj].name;
            let want_yes = rng.gen::<bool>();
            let in_set = |attr: &str| {
                subs.iter()
                    .any(|&m| scene.objects[m].attributes.iter().any(|x| x == attr))
            };
            let outside_set = |attr: &str| {
                scene
                    .objects
                    .iter()
                    .enumerate()
                    .any(|(j, x)| !subs.contains(&j) && x.attributes.iter().any(|a| a == attr))
            };
            if template == Template::RelateFilterExist {
                let attr = if want_yes {
                    let members: Vec<String> = subs
                        .iter()
                        .flat_map(|&m| scene.objects[m].attributes.iter().cloned())
                        .collect();
                    require(rng, &members, |a| outside_set(a))?.clone()
                } else {
                    let candidates: Vec<&str> = vocab
                        .attributes
                        .iter()
                        .map(|a| a.as_str())
                        .filter(|a| !in_set(a))
                        .collect();
                    require(rng, &candidates, |a| outside_set(a))?.to_string()
                };
                Some((
                    vec![
                        step("Select", &[], Some(name)),
                        step("RelateSub", &[0], Some(pred)),
                        step("FilterAttr", &[1], Some(&attr)),
                        step("Exist", &[2], None),
                    ],
                    format!("Is there a {attr} thing {pred} the {name}?"),
                ))
            } else {
                let member_names: Vec<&str> =
                    subs.iter().map(|&m| scene.objects[m].name.as_str()).collect();
                let scene_names: Vec<&str> =
                    scene.objects.iter().map(|x| x.name.as_str()).collect();
                let target = if want_yes {
                    member_names.choose(rng)?.to_string()
                } else {
                    // the name must exist in the scene outside the set
                    let candidates: Vec<&str> = vocab
                        .names
                        .iter()
                        .map(|n| n.as_str())
                        .filter(|n| !member_names.contains(n))
                        .collect();
                    require(rng, &candidates, |n| scene_names.contains(n))?.to_string()
                };
                Some((
                    vec![
                        step("Select", &[], Some(name)),
                        step("RelateSub", &[0], Some(pred)),
                        step("FilterName", &[1], Some(&target)),
                        step("Exist", &[2], None),
                    ],
                    format!("Is there a {target} {pred} the {name}?"),
                ))
            }
        }
        Template::ChooseAttribute => {
            let &o = ix.pick(rng, &ix.unique_named)?;
            let obj = &scene.objects[o];
            let attr = obj.attributes.choose(rng)?;
            let cat = vocab.attribute_category(attr)?;
            let others: Vec<&str> = vocab
                .attributes_in_category(cat)
                .into_iter()
                .filter(|a| *a != attr.as_str() && !obj.attributes.iter().any(|x| x == a))
                .collect();
            let other = others.choose(rng)?;
            let arg = if rng.gen::<bool>() {
                format!("{attr}|{other}")
            } else {
                format!("{other}|{attr}")
            };
            Some((
                vec![
                    step("Select", &[], Some(&obj.name)),
                    step("ChooseAttr", &[0], Some(&arg)),
                ],
                format!("Is the {} {attr} or {other}?", obj.name),
            ))
        }
        Template::ChooseRelName => {
            let &(pred, obj, subj) = ix.pick(rng, &ix.sub_singletons)?;
            let name = &scene.objects[obj].name;
            let true_name = &scene.objects[subj].name;
            let other = vocab
                .names
                .iter()
                .filter(|n| n.as_str() != true_name)
                .collect::<Vec<_>>()
                .choose(rng)?
                .to_string();
            let arg = if rng.gen::<bool>() {
                format!("{true_name}|{other}")
            } else {
                format!("{other}|{true_name}")
            };
            Some((
                vec![
                    step("Select", &[], Some(name)),
                    step("RelateSub", &[0], Some(pred)),
                    step("ChooseName", &[1], Some(&arg)),
                ],
                format!("What is {pred} the {name}, a {true_name} or a {other}?"),
            ))
        }
        Template::RelateQueryAttr => {
            let candidates: Vec<&(&str, usize, usize)> = ix
                .sub_singletons
                .iter()
                .filter(|(_, _, subj)| !scene.objects[*subj].attributes.is_empty())
                .collect();
            let &&(pred, obj, subj) = candidates.choose(rng)?;
            let name = &scene.objects[obj].name;
            let attr = scene.objects[subj].attributes.choose(rng)?;
            let cat = vocab.attribute_category(attr)?;
            Some((
                vec![
                    step("Select", &[], Some(name)),
                    step("RelateSub", &[0], Some(pred)),
                    step("QueryAttr", &[1], Some(cat)),
                ],
                format!("What {cat} is the thing {pred} the {name}?"),
            ))
        }
        Template::RelateObjQueryAttr => {
            let candidates: Vec<&(&str, usize, usize)> = ix
                .obj_singletons
                .iter()
                .filter(|(_, _, obj)| !scene.objects[*obj].attributes.is_empty())
                .collect();
            let &&(pred, subj, obj) = candidates.choose(rng)?;
            let name = &scene.objects[subj].name;
            let attr = scene.objects[obj].attributes.choose(rng)?;
            let cat = vocab.attribute_category(attr)?;
            Some((
                vec![
                    step("Select", &[], Some(name)),
                    step("RelateObj", &[0], Some(pred)),
                    step("QueryAttr", &[1], Some(cat)),
                ],
                format!("What {cat} is the thing the {name} is {pred}?"),
            ))
        }
        Template::RelateFilterAttrQuery => {
            // relate set with >= 2 members, exactly one bearing the
            // attribute: the name answer is reachable only through a
            // correct attribute filter
            let anchors: Vec<(&str, usize, Vec<usize>)> = {
                let mut by_pred_obj: BTreeMap<(&str, usize), Vec<usize>> = BTreeMap::new();
                for (s, p, o) in &scene.relations {
                    by_pred_obj.entry((p.as_str(), *o)).or_default().push(*s);
                }
                by_pred_obj
                    .into_iter()
                    .filter(|((_, o), subs)| subs.len() >= 2 && ix.unique_named.contains(o))
                    .map(|((p, o), subs)| (p, o, subs))
                    .collect()
            };
            let mut tries = anchors.clone();
            tries.shuffle(rng);
            for (pred, obj, subs) in tries.into_iter().take(6) {
                let anchor = scene.objects[obj].name.clone();
                let mut attrs: Vec<String> = subs
                    .iter()
                    .flat_map(|&m| scene.objects[m].attributes.iter().cloned())
                    .collect();
                attrs.shuffle(rng);
                for attr in attrs {
                    let holders: Vec<usize> = subs
                        .iter()
                        .copied()
                        .filter(|&m| scene.objects[m].attributes.iter().any(|a| *a == attr))
                        .collect();
                    if holders.len() == 1 {
                        let target = &scene.objects[holders[0]].name;
                        return Some((
                            vec![
                                step("Select", &[], Some(&anchor)),
                                step("RelateSub", &[0], Some(&pred)),
                                step("FilterAttr", &[1], Some(&attr)),
                                step("QueryName", &[2], None),
                            ],
                            format!("What is the {attr} thing {pred} the {anchor}?"),
                        ));
                    }
                }
            }
            None
        }
        Template::RelateFilterNameQuery => {
            // multi-member relate set with a uniquely named member: the
            // answer is only reachable by filtering to the right box
            let anchors: Vec<(&str, usize, Vec<usize>)> = {
                let mut by_pred_obj: BTreeMap<(&str, usize), Vec<usize>> = BTreeMap::new();
                for (s, p, o) in &scene.relations {
                    by_pred_obj.entry((p.as_str(), *o)).or_default().push(*s);
                }
                by_pred_obj
                    .into_iter()
                    .filter(|((_, o), subs)| subs.len() >= 2 && ix.unique_named.contains(o))
                    .map(|((p, o), subs)| (p, o, subs))
                    .collect()
            };
            let (pred, obj, subs) = anchors.choose(rng)?;
            let anchor = &scene.objects[*obj].name;
            let &member = subs.choose(rng)?;
            let target = &scene.objects[member].name;
            let cat = vocab.attribute_category(scene.objects[member].attributes.first()?)?;
            Some((
                vec![
                    step("Select", &[], Some(anchor)),
                    step("RelateSub", &[0], Some(pred)),
                    step("FilterName", &[1], Some(target)),
                    step("QueryAttr", &[2], Some(cat)),
                ],
                format!("What {cat} is the {target} {pred} the {anchor}?"),
            ))
        }
    }
}

/// Instantiates some template on the scene, preferring a random order.
/// Returns the validated program, its oracle truth, and the template used.
pub fn generate_program(
    rng: &mut ChaCha8Rng,
    scene: &Scene,
    vocab: &Vocabulary,
    catalog: &Catalog,
    id: &str,
) -> Result<(Program, OracleTruth, Template), DataError> {
    let ix = SceneIndex::build(scene);
    // Relational templates are the sample-hungry ones; weight them up so
    // the data budget is spent where the modules need it.
    let mut pool: Vec<Template> = Template::all().to_vec();
    for t in Template::all() {
        if t.weight() > 1 {
            for _ in 1..t.weight() {
                pool.push(*t);
            }
        }
    }
    pool.shuffle(rng);
    let mut order: Vec<Template> = Vec::with_capacity(Template::all().len());
    for t in pool {
        if !order.contains(&t) {
            order.push(t);
        }
    }
    for template in order {
        for _ in 0..8 {
            let Some((steps, question)) = instantiate_template(template, &ix, vocab, rng) else {
                break;
            };
            let program = Program {
                id: id.to_string(),
                question: Some(question),
                steps,
            };
            debug_assert!(
                crate::program::validate_program(&program, catalog).is_empty(),
                "templates must emit valid programs"
            );
            match oracle_execute(&program, scene, catalog) {
                Ok(oracle) => return Ok((program, oracle, template)),
                Err(DataError::NonUniqueQuery { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
    }
    Err(DataError::NoSatisfiableTemplate)
}

/// Scene shape knobs for example generation.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ExampleConfig {
    pub n_boxes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
}

impl Default for ExampleConfig {
    fn default() -> Self {
        ExampleConfig {
            n_boxes: 16,
            min_objects: 3,
            max_objects: 7,
        }
    }
}

/// One generated example, before feature synthesis.
pub struct GeneratedExample {
    pub scene: Scene,
    pub program: Program,
    pub oracle: OracleTruth,
    pub template: Template,
}

/// Deterministically generates example `index` of `split`. Splits draw
/// from disjoint seed streams, so train/test scenes are disjoint.
pub fn generate_example(
    seed: u64,
    split: u64,
    index: u64,
    vocab: &Vocabulary,
    catalog: &Catalog,
    cfg: &ExampleConfig,
    id: &str,
) -> Result<GeneratedExample, DataError> {
    if cfg.min_objects > cfg.max_objects || cfg.max_objects > cfg.n_boxes {
        return Err(DataError::InvalidConfig(format!(
            "object range {}..={} incompatible with {} boxes",
            cfg.min_objects, cfg.max_objects, cfg.n_boxes
        )));
    }
    let mut scene_rng = crate::rng::stream(seed, crate::rng::Purpose::Scene, split, index);
    let mut template_rng = crate::rng::stream(seed, crate::rng::Purpose::Template, split, index);
    for _ in 0..64 {
        let n_objects = scene_rng.gen_range(cfg.min_objects..=cfg.max_objects);
        let scene = generate_scene(&mut scene_rng, vocab, n_objects, cfg.n_boxes)?;
        match generate_program(&mut template_rng, &scene, vocab, catalog, id) {
            Ok((program, oracle, template)) => {
                return Ok(GeneratedExample {
                    scene,
                    program,
                    oracle,
                    template,
                })
            }
            Err(DataError::NoSatisfiableTemplate) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(DataError::NoSatisfiableTemplate)
}

/// Text arguments appearing in a program, deduplicated in order.
pub fn program_args(program: &Program) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for step in &program.steps {
        if let Some(arg) = &step.text_arg {
            if !out.contains(arg) {
                out.push(arg.clone());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn vocab() -> Vocabulary {
        Vocabulary::desk_default()
    }

    fn catalog() -> Catalog {
        Catalog::standard()
    }

    #[test]
    fn desk_vocabulary_shape() {
        let v = vocab();
        assert_eq!(v.names.len(), 20);
        assert_eq!(v.attributes.len(), 10);
        assert_eq!(v.categories.len(), 3);
        assert_eq!(v.spatial.len(), 4);
        assert_eq!(v.symbolic.len(), 2);
        assert_eq!(v.answer_vocab().len(), 32);
        assert_eq!(v.concept_dim(), 20 + 1 + 10 + 8 + 6 + 3 + 4);
        assert_eq!(v.attribute_category("red"), Some("color"));
        assert_eq!(v.attributes_in_category("size"), vec!["small", "large"]);
    }

    #[test]
    fn scene_generation_is_deterministic() {
        let v = vocab();
        let a = generate_scene(&mut stream(5, Purpose::Scene, 0, 1), &v, 4, 10).unwrap();
        let b = generate_scene(&mut stream(5, Purpose::Scene, 0, 1), &v, 4, 10).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_boxes(), 10);
        assert_eq!(a.objects.len(), 4);
    }

    #[test]
    fn empty_scene_is_pure_distractors() {
        let v = vocab();
        let s = generate_scene(&mut stream(1, Purpose::Scene, 0, 0), &v, 0, 6).unwrap();
        assert!(s.objects.is_empty());
        assert_eq!(s.distractors.len(), 6);
        assert!(s.relations.is_empty());
    }

    #[test]
    fn too_many_objects_rejected() {
        let v = vocab();
        assert!(generate_scene(&mut stream(1, Purpose::Scene, 0, 0), &v, 9, 4).is_err());
    }

    #[test]
    fn spatial_relations_match_geometry() {
        let v = vocab();
        for i in 0..1000u64 {
            let mut rng = stream(11, Purpose::Scene, 0, i);
            let s = generate_scene(&mut rng, &v, 5, 8).unwrap();
            for (subj, pred, obj) in &s.relations {
                let (sx, sy) = s.objects[*subj].bbox.center();
                let (ox, oy) = s.objects[*obj].bbox.center();
                match pred.as_str() {
                    "right-of" => assert!(sx > ox, "scene {i}: right-of violated"),
                    "left-of" => assert!(sx < ox),
                    "above" => assert!(sy < oy),
                    "below" => assert!(sy > oy),
                    _ => {} // symbolic
                }
            }
        }
    }

    #[test]
    fn oracle_select_and_exist() {
        let v = vocab();
        let c = catalog();
        let mut scene = generate_scene(&mut stream(3, Purpose::Scene, 0, 2), &v, 4, 8).unwrap();
        scene.objects[3].name = "laptop".to_string();
        for i in 0..3 {
            scene.objects[i].name = "cat".to_string();
        }
        let p = crate::program::parse_program(
            r#"{"steps":[{"op":"Select","arg":"laptop"},{"op":"Exist","deps":[0]}]}"#,
            &c,
        )
        .unwrap();
        let o = oracle_execute(&p, &scene, &c).unwrap();
        assert_eq!(o.steps[0], OracleStep::Attention(vec![3]));
        assert_eq!(o.answer, "yes");

        let p_empty = crate::program::parse_program(
            r#"{"steps":[{"op":"Select","arg":"zebra"},{"op":"Exist","deps":[0]}]}"#,
            &c,
        )
        .unwrap();
        let o = oracle_execute(&p_empty, &scene, &c).unwrap();
        assert_eq!(o.steps[0], OracleStep::Attention(vec![]));
        assert_eq!(o.steps[1], OracleStep::Boolean(false));
        assert_eq!(o.answer, "no");
    }

    #[test]
    fn oracle_relate_chain_hand_evaluated() {
        // laptop(0), cat(1) right-of laptop, sofa(2); cat touching sofa.
        let _v = vocab();
        let c = catalog();
        let mk = |name: &str, x: f64| SceneObject {
            name: name.to_string(),
            attributes: vec!["red".to_string()],
            bbox: BBox::new(x, 0.4, x + 0.1, 0.5),
        };
        let scene = Scene {
            objects: vec![mk("laptop", 0.1), mk("cat", 0.6), mk("sofa", 0.8)],
            relations: vec![
                (1, "right-of".to_string(), 0),
                (2, "right-of".to_string(), 0),
                (2, "right-of".to_string(), 1),
                (0, "left-of".to_string(), 1),
                (0, "left-of".to_string(), 2),
                (1, "left-of".to_string(), 2),
                (1, "touching".to_string(), 2),
            ],
            distractors: vec![],
        };
        let p = crate::program::parse_program(
            r#"{"steps":[
                {"op":"Select","arg":"laptop"},
                {"op":"RelateSub","deps":[0],"arg":"right-of"},
                {"op":"FilterName","deps":[1],"arg":"cat"},
                {"op":"RelateObj","deps":[2],"arg":"touching"},
                {"op":"QueryName","deps":[3]}]}"#,
            &c,
        )
        .unwrap();
        let o = oracle_execute(&p, &scene, &c).unwrap();
        assert_eq!(o.steps[1], OracleStep::Attention(vec![1, 2]));
        assert_eq!(o.steps[2], OracleStep::Attention(vec![1]));
        assert_eq!(o.answer, "sofa");
    }

    #[test]
    fn oracle_rejects_non_unique_query() {
        let c = catalog();
        let mk = |name: &str, x: f64| SceneObject {
            name: name.to_string(),
            attributes: vec![],
            bbox: BBox::new(x, 0.1, x + 0.1, 0.2),
        };
        let scene = Scene {
            objects: vec![mk("cat", 0.1), mk("cat", 0.5)],
            relations: vec![],
            distractors: vec![],
        };
        let p = crate::program::parse_program(
            r#"{"steps":[{"op":"Select","arg":"cat"},{"op":"QueryName","deps":[0]}]}"#,
            &c,
        )
        .unwrap();
        assert!(matches!(
            oracle_execute(&p, &scene, &c),
            Err(DataError::NonUniqueQuery { step: 1, found: 2 })
        ));
    }

    #[test]
    fn generated_programs_all_validate() {
        let v = vocab();
        let c = catalog();
        let cfg = ExampleConfig::default();
        let mut seen: BTreeMap<&'static str, usize> = BTreeMap::new();
        for i in 0..10_000u64 {
            let ex = generate_example(42, 0, i, &v, &c, &cfg, &format!("ex-{i}")).unwrap();
            assert!(
                crate::program::validate_program(&ex.program, &c).is_empty(),
                "example {i} must validate"
            );
            assert_eq!(ex.oracle.steps.len(), ex.program.steps.len());
            *seen.entry(ex.template.name()).or_insert(0) += 1;
        }
        assert_eq!(
            seen.len(),
            Template::all().len(),
            "all templates appear: {seen:?}"
        );
    }

    #[test]
    fn generation_is_deterministic() {
        let v = vocab();
        let c = catalog();
        let cfg = ExampleConfig::default();
        let a = generate_example(9, 1, 17, &v, &c, &cfg, "x").unwrap();
        let b = generate_example(9, 1, 17, &v, &c, &cfg, "x").unwrap();
        assert_eq!(a.scene, b.scene);
        assert_eq!(a.program, b.program);
        assert_eq!(a.oracle, b.oracle);
    }

    #[test]
    fn features_are_deterministic_and_concept_faithful() {
        let v = vocab();
        let cfg = FeatureSynthConfig {
            d: 64,
            noise_sigma: 0.0,
            seed: 7,
        };
        let proj = projection_matrix(&v, &cfg);
        let mk = |name: &str, attrs: &[&str], x: f64| SceneObject {
            name: name.to_string(),
            attributes: attrs.iter().map(|s| s.to_string()).collect(),
            bbox: BBox::new(x, 0.4, x + 0.05, 0.45),
        };
        // identical concepts in the same position bucket -> identical columns
        let scene = Scene {
            objects: vec![
                mk("cat", &["red"], 0.40),
                mk("cat", &["red"], 0.41),
                mk("dog", &["red"], 0.40),
            ],
            relations: vec![],
            distractors: vec![BBox::new(0.4, 0.4, 0.45, 0.45)],
        };
        let mut noise = stream(0, Purpose::FeatureNoise, 0, 0);
        let f = encode_features(
            &scene,
            &["cat".to_string(), "red|blue".to_string()],
            &v,
            &cfg,
            &proj,
            &mut noise,
        )
        .unwrap();
        let col = |j: usize| -> Vec<Real> { (0..cfg.d).map(|i| f.visual.get(i, j)).collect() };
        assert_eq!(col(0), col(1), "same concepts, same bucket");
        assert_ne!(col(0), col(2), "different name separates columns");
        assert_ne!(col(0), col(3), "distractor null concept separates");
        assert_eq!(f.text_args.len(), 2);
        assert_eq!(f.answer_vocab.len(), 32);

        let err = encode_features(
            &scene,
            &["zebra".to_string()],
            &v,
            &cfg,
            &proj,
            &mut noise,
        )
        .unwrap_err();
        assert!(matches!(err, DataError::UnknownConcept { .. }));
    }
}
