//! Dataset generation and loading.
//!
//! Layout under the output directory:
//!   meta.json                   generation spec + answer vocabulary
//!   {train,test}/programs.jsonl one program per line
//!   {train,test}/manifest.jsonl id, template, feature path, oracle truth
//!   {train,test}/features/*.nmnf

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use nmn_core::executor::FeatureSet;
use nmn_core::guidance::BBox;
use nmn_core::program::{parse_program, Catalog, Program};
use nmn_core::rng::{stream, Purpose};
use nmn_core::synthdata::{
    encode_features, generate_example, program_args, projection_matrix, ExampleConfig,
    FeatureSynthConfig, OracleTruth, Vocabulary,
};

use crate::formats::{read_nmnf, write_nmnf};

/// Generation spec. Defaults are the desk-scale dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub d: usize,
    pub n_boxes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            n_train: 5000,
            n_test: 1000,
            d: 64,
            n_boxes: 16,
            min_objects: 3,
            max_objects: 7,
            noise_sigma: 0.01,
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.max_objects > self.n_boxes {
            bail!(
                "max_objects {} exceeds n_boxes {}",
                self.max_objects,
                self.n_boxes
            );
        }
        if self.min_objects > self.max_objects {
            bail!("min_objects exceeds max_objects");
        }
        if self.d < 8 {
            bail!("feature dimension too small: {}", self.d);
        }
        if self.noise_sigma < 0.0 {
            bail!("noise_sigma must be non-negative");
        }
        Ok(())
    }

    fn example_config(&self) -> ExampleConfig {
        ExampleConfig {
            n_boxes: self.n_boxes,
            min_objects: self.min_objects,
            max_objects: self.max_objects,
        }
    }

    fn synth_config(&self) -> FeatureSynthConfig {
        FeatureSynthConfig {
            d: self.d,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Meta {
    spec: GenSpec,
    answer_vocab: Vec<String>,
}

/// One manifest line: program id, template name, feature file, answer,
/// ground-truth object boxes, and oracle truth.
#[derive(Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub template: String,
    pub features: String,
    pub answer: String,
    pub gt_boxes: Vec<[f64; 4]>,
    pub oracle: OracleTruth,
}

pub struct GenSummary {
    pub train: usize,
    pub test: usize,
}

/// Generates the dataset on disk. Deterministic for a fixed spec: the
/// same seed produces byte-identical files.
pub fn generate_dataset(spec: &GenSpec, out: &Path) -> Result<GenSummary> {
    spec.validate()?;
    let vocab = Vocabulary::desk_default();
    let catalog = Catalog::standard();
    let projection = projection_matrix(&vocab, &spec.synth_config());
    fs::create_dir_all(out)?;
    let meta = Meta {
        spec: spec.clone(),
        answer_vocab: vocab.answer_vocab(),
    };
    fs::write(
        out.join("meta.json"),
        serde_json::to_string_pretty(&meta)?,
    )?;

    for (split_idx, split, count) in [(0u64, "train", spec.n_train), (1u64, "test", spec.n_test)] {
        let dir = out.join(split);
        let feat_dir = dir.join("features");
        fs::create_dir_all(&feat_dir)?;
        let mut programs = BufWriter::new(File::create(dir.join("programs.jsonl"))?);
        let mut manifest = BufWriter::new(File::create(dir.join("manifest.jsonl"))?);
        for i in 0..count {
            let id = format!("{split}-{i:06}");
            let ex = generate_example(
                spec.seed,
                split_idx,
                i as u64,
                &vocab,
                &catalog,
                &spec.example_config(),
                &id,
            )?;
            let mut noise = stream(spec.seed, Purpose::FeatureNoise, split_idx, i as u64);
            let features = encode_features(
                &ex.scene,
                &program_args(&ex.program),
                &vocab,
                &spec.synth_config(),
                &projection,
                &mut noise,
            )?;
            let feat_rel = format!("features/{id}.nmnf");
            let mut fw = BufWriter::new(File::create(dir.join(&feat_rel))?);
            write_nmnf(&mut fw, &features)?;
            fw.flush()?;

            writeln!(programs, "{}", ex.program.to_json())?;
            let entry = ManifestEntry {
                id,
                template: ex.template.name().to_string(),
                features: feat_rel,
                answer: ex.oracle.answer.clone(),
                gt_boxes: ex
                    .scene
                    .object_boxes()
                    .iter()
                    .map(|b| [b.x1, b.y1, b.x2, b.y2])
                    .collect(),
                oracle: ex.oracle,
            };
            writeln!(manifest, "{}", serde_json::to_string(&entry)?)?;
        }
        programs.flush()?;
        manifest.flush()?;
    }
    Ok(GenSummary {
        train: spec.n_train,
        test: spec.n_test,
    })
}

/// One loaded example.
pub struct Example {
    pub id: String,
    pub template: String,
    pub program: Program,
    pub features: FeatureSet,
    pub oracle: OracleTruth,
    pub gt_boxes: Vec<BBox>,
}

pub struct Dataset {
    pub spec: GenSpec,
    pub answer_vocab: Vec<String>,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn find(&self, id: &str) -> Option<&Example> {
        self.examples.iter().find(|e| e.id == id)
    }
}

/// Loads one split ("train" or "test") fully into memory.
pub fn load_dataset(root: &Path, split: &str) -> Result<Dataset> {
    let meta: Meta = serde_json::from_str(
        &fs::read_to_string(root.join("meta.json"))
            .with_context(|| format!("reading {}/meta.json", root.display()))?,
    )?;
    let catalog = Catalog::standard();
    let dir = root.join(split);
    let programs = BufReader::new(
        File::open(dir.join("programs.jsonl"))
            .with_context(|| format!("opening {split} programs", ))?,
    );
    let manifest = BufReader::new(File::open(dir.join("manifest.jsonl"))?);

    let mut examples = Vec::new();
    for (pline, mline) in programs.lines().zip(manifest.lines()) {
        let (pline, mline) = (pline?, mline?);
        let program = parse_program(&pline, &catalog)
            .map_err(|e| anyhow::anyhow!("program record: {e}"))?;
        let entry: ManifestEntry = serde_json::from_str(&mline)?;
        if entry.id != program.id {
            bail!(
                "manifest/program misalignment: {} vs {}",
                entry.id,
                program.id
            );
        }
        let mut fr = BufReader::new(File::open(dir.join(&entry.features))?);
        let features = read_nmnf(&mut fr, meta.answer_vocab.clone())?;
        examples.push(Example {
            id: entry.id,
            template: entry.template,
            program,
            features,
            oracle: entry.oracle,
            gt_boxes: entry
                .gt_boxes
                .iter()
                .map(|b| BBox::new(b[0], b[1], b[2], b[3]))
                .collect(),
        });
    }
    Ok(Dataset {
        spec: meta.spec,
        answer_vocab: meta.answer_vocab,
        examples,
    })
}

/// Recursively hashes a directory's file names and contents (FNV-1a).
/// Used to assert byte-identical regeneration.
pub fn dir_fingerprint(root: &Path) -> Result<u64> {
    let mut files: Vec<PathBuf> = Vec::new();
    collect_files(root, &mut files)?;
    files.sort();
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut mix = |bytes: &[u8]| {
        for &b in bytes {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x1000_0000_01b3);
        }
    };
    for f in files {
        mix(f.strip_prefix(root)?.to_string_lossy().as_bytes());
        mix(&fs::read(&f)?);
    }
    Ok(hash)
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nmn_core::program::validate_program;

    fn tiny_spec(seed: u64) -> GenSpec {
        GenSpec {
            n_train: 30,
            n_test: 10,
            d: 32,
            n_boxes: 8,
            min_objects: 3,
            max_objects: 5,
            noise_sigma: 0.01,
            seed,
        }
    }

    #[test]
    fn generate_load_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let spec = tiny_spec(4);
        let summary = generate_dataset(&spec, tmp.path()).unwrap();
        assert_eq!(summary.train, 30);
        assert_eq!(summary.test, 10);

        let train = load_dataset(tmp.path(), "train").unwrap();
        assert_eq!(train.examples.len(), 30);
        let catalog = Catalog::standard();
        for ex in &train.examples {
            assert!(validate_program(&ex.program, &catalog).is_empty());
            assert_eq!(ex.oracle.steps.len(), ex.program.steps.len());
            assert_eq!(ex.features.visual.rows(), 32);
            assert_eq!(ex.features.visual.cols(), 8);
            // every text arg has an embedding
            for step in &ex.program.steps {
                if let Some(arg) = &step.text_arg {
                    assert!(ex.features.text_args.contains_key(arg), "missing {arg}");
                }
            }
        }
    }

    #[test]
    fn same_seed_is_byte_identical_different_seed_is_not() {
        let spec = tiny_spec(7);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_dataset(&spec, a.path()).unwrap();
        generate_dataset(&spec, b.path()).unwrap();
        assert_eq!(
            dir_fingerprint(a.path()).unwrap(),
            dir_fingerprint(b.path()).unwrap()
        );

        let c = tempfile::tempdir().unwrap();
        generate_dataset(&tiny_spec(8), c.path()).unwrap();
        assert_ne!(
            dir_fingerprint(a.path()).unwrap(),
            dir_fingerprint(c.path()).unwrap()
        );
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let mut spec = tiny_spec(0);
        spec.max_objects = 20; // > n_boxes
        assert!(generate_dataset(&spec, tempfile::tempdir().unwrap().path()).is_err());
    }
}
