//! On-disk file formats: landmark files, serialized shape models, and
//! template manifests.
//!
//! All formats are versioned JSON. Floating-point values round-trip
//! bit-exactly (the serializer emits the shortest decimal that parses back
//! to the same IEEE-754 double).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ShapeModel;
use crate::overlay::{ClassLabel, MaskTemplate, View};
use crate::shape::Shape;
use crate::synth::SynthCase;

pub const LANDMARK_SCHEMA_VERSION: u32 = 1;
pub const MODEL_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Landmark file conventions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Convention {
    /// 68 points, 1-based indexing documented per the standard layout.
    #[serde(rename = "ibug68-1based")]
    Ibug68,
    /// The 17-point mask subset (jaw 2..16, nose bridge 30, nose bottom 34).
    #[serde(rename = "mask17")]
    Mask17,
}

impl Convention {
    pub fn point_count(&self) -> usize {
        match self {
            Convention::Ibug68 => 68,
            Convention::Mask17 => 17,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LandmarkEntry {
    pub image_path: String,
    pub points: Vec<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_label: Option<ClassLabel>,
}

/// A corpus of landmark annotations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LandmarkFile {
    pub schema_version: u32,
    pub convention: Convention,
    pub entries: Vec<LandmarkEntry>,
}

impl LandmarkFile {
    pub fn new(convention: Convention, entries: Vec<LandmarkEntry>) -> Self {
        LandmarkFile {
            schema_version: LANDMARK_SCHEMA_VERSION,
            convention,
            entries,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: LandmarkFile = read_json(path)?;
        if file.schema_version != LANDMARK_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                path: path.display().to_string(),
                found: file.schema_version,
                expected: LANDMARK_SCHEMA_VERSION,
            });
        }
        let expected = file.convention.point_count();
        for (i, entry) in file.entries.iter().enumerate() {
            if entry.points.len() != expected {
                return Err(Error::FileValidation {
                    path: path.display().to_string(),
                    reason: format!(
                        "entry {i} ({}): expected {expected} points, got {}",
                        entry.image_path,
                        entry.points.len()
                    ),
                });
            }
            if entry
                .points
                .iter()
                .any(|p| !p[0].is_finite() || !p[1].is_finite())
            {
                return Err(Error::FileValidation {
                    path: path.display().to_string(),
                    reason: format!("entry {i} ({}): non-finite coordinate", entry.image_path),
                });
            }
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Converts each entry into a [`Shape`], optionally reducing a 68-point
    /// file to the 17-point mask subset.
    pub fn shapes(&self, subset_mask17: bool) -> Result<Vec<Shape>> {
        self.entries
            .iter()
            .map(|e| {
                let s = Shape::new(e.points.iter().map(|&p| p.into()).collect())?;
                if subset_mask17 && self.convention == Convention::Ibug68 {
                    Ok(Shape::new(
                        crate::overlay::MASK17_FACE_INDICES
                            .iter()
                            .map(|&i| s[i - 1])
                            .collect(),
                    )?)
                } else {
                    Ok(s)
                }
            })
            .collect()
    }
}

/// Provenance block of a serialized model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the canonical byte encoding of the input corpus.
    pub corpus_hash: String,
    pub variance_fraction: f64,
}

/// Serialized shape model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub n_points: usize,
    /// Length `2 * n_points`.
    pub mean: Vec<f64>,
    /// Row-major, `2 * n_points` rows by `t` columns.
    pub modes: Vec<f64>,
    /// Length `t`, non-increasing, strictly positive.
    pub eigenvalues: Vec<f64>,
    pub t: usize,
    pub provenance: Provenance,
}

impl ModelFile {
    pub fn from_model(model: &ShapeModel, provenance: Provenance) -> Self {
        ModelFile {
            schema_version: MODEL_SCHEMA_VERSION,
            n_points: model.n_points(),
            mean: model.mean_flat().to_vec(),
            modes: model.modes_row_major(),
            eigenvalues: model.eigenvalues().to_vec(),
            t: model.mode_count(),
            provenance,
        }
    }

    pub fn into_model(self) -> Result<ShapeModel> {
        if self.t != self.eigenvalues.len() {
            return Err(Error::InvalidParameter(format!(
                "model file declares t = {} but has {} eigenvalues",
                self.t,
                self.eigenvalues.len()
            )));
        }
        ShapeModel::from_parts(self.mean, self.modes, self.eigenvalues, self.n_points)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ModelFile = read_json(path)?;
        if file.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                path: path.display().to_string(),
                found: file.schema_version,
                expected: MODEL_SCHEMA_VERSION,
            });
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Loads a shape model directly from a model file.
pub fn load_model(path: &Path) -> Result<ShapeModel> {
    ModelFile::load(path)?.into_model()
}

/// Canonical corpus hash: SHA-256 over point counts and little-endian
/// coordinate bytes of every shape in order.
pub fn corpus_hash(corpus: &[Shape]) -> String {
    let mut hasher = Sha256::new();
    hasher.update((corpus.len() as u64).to_le_bytes());
    for s in corpus {
        hasher.update((s.len() as u64).to_le_bytes());
        for p in s.iter() {
            hasher.update(p.x.to_le_bytes());
            hasher.update(p.y.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// One template in a manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateEntry {
    pub name: String,
    pub view: View,
    /// Relative to the manifest's directory.
    pub image_path: String,
    pub landmarks_17: Vec<[f64; 2]>,
    /// 1-based vertex index triples into `landmarks_17`.
    pub triangulation: Vec<[usize; 3]>,
}

/// Template manifest file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateManifest {
    pub schema_version: u32,
    pub templates: Vec<TemplateEntry>,
}

impl TemplateManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let manifest: TemplateManifest = read_json(path)?;
        if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                path: path.display().to_string(),
                found: manifest.schema_version,
                expected: MANIFEST_SCHEMA_VERSION,
            });
        }
        for entry in &manifest.templates {
            if entry.landmarks_17.len() != 17 {
                return Err(Error::FileValidation {
                    path: path.display().to_string(),
                    reason: format!(
                        "template `{}`: expected 17 landmarks, got {}",
                        entry.name,
                        entry.landmarks_17.len()
                    ),
                });
            }
            for (i, tri) in entry.triangulation.iter().enumerate() {
                if tri.iter().any(|&v| v < 1 || v > 17) {
                    return Err(Error::FileValidation {
                        path: path.display().to_string(),
                        reason: format!(
                            "template `{}`: triangle {i} index outside [1, 17]",
                            entry.name
                        ),
                    });
                }
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Loads every template's image (relative to the manifest location) and
    /// validates the full template invariants.
    pub fn load_templates(&self, manifest_path: &Path) -> Result<Vec<MaskTemplate>> {
        let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        self.templates
            .iter()
            .map(|entry| {
                let img_path = dir.join(&entry.image_path);
                let image = read_image(&img_path)?;
                let landmarks =
                    Shape::new(entry.landmarks_17.iter().map(|&p| p.into()).collect())?;
                let triangulation: Vec<[usize; 3]> = entry
                    .triangulation
                    .iter()
                    .map(|t| [t[0] - 1, t[1] - 1, t[2] - 1])
                    .collect();
                MaskTemplate::new(
                    entry.name.clone(),
                    entry.view,
                    image,
                    landmarks,
                    triangulation,
                )
            })
            .collect()
    }
}

/// Loads a full template registry from a manifest path.
pub fn load_template_registry(manifest_path: &Path) -> Result<Vec<MaskTemplate>> {
    TemplateManifest::load(manifest_path)?.load_templates(manifest_path)
}

/// Writes a template registry: one PNG per template plus `manifest.json`,
/// all inside `dir`. Returns the manifest path.
pub fn write_template_registry(dir: &Path, templates: &[MaskTemplate]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut entries = Vec::new();
    for t in templates {
        let file_name = format!("{}.png", t.name);
        let img_path = dir.join(&file_name);
        save_image(&t.image, &img_path)?;
        entries.push(TemplateEntry {
            name: t.name.clone(),
            view: t.view,
            image_path: file_name,
            landmarks_17: t.landmarks.iter().map(|&p| p.into()).collect(),
            triangulation: t
                .triangulation
                .iter()
                .map(|t| [t[0] + 1, t[1] + 1, t[2] + 1])
                .collect(),
        });
    }
    let manifest = TemplateManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        templates: entries,
    };
    let manifest_path = dir.join("manifest.json");
    manifest.save(&manifest_path)?;
    Ok(manifest_path)
}

/// Layout of a written synthetic corpus directory.
pub struct CorpusLayout {
    pub landmarks: PathBuf,
    pub truth: PathBuf,
    pub images_dir: PathBuf,
}

/// Writes a case set as a corpus directory: rendered images under
/// `images/`, detector-like landmarks in `landmarks.json`, and ground
/// truth in `truth.json`.
pub fn write_corpus_dir(dir: &Path, cases: &[SynthCase], image_size: u32) -> Result<CorpusLayout> {
    let images_dir = dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| io_err(&images_dir, e))?;

    let mut noisy_entries = Vec::with_capacity(cases.len());
    let mut clean_entries = Vec::with_capacity(cases.len());
    for case in cases {
        let file_name = format!("{}.png", case.name);
        let image = crate::synth::render_case(case, image_size);
        save_image(&image, &images_dir.join(&file_name))?;
        let rel = format!("images/{file_name}");
        noisy_entries.push(LandmarkEntry {
            image_path: rel.clone(),
            points: case.noisy.iter().map(|&p| p.into()).collect(),
            class_label: Some(case.label),
        });
        clean_entries.push(LandmarkEntry {
            image_path: rel,
            points: case.clean.iter().map(|&p| p.into()).collect(),
            class_label: Some(case.label),
        });
    }

    let landmarks = dir.join("landmarks.json");
    LandmarkFile::new(Convention::Ibug68, noisy_entries).save(&landmarks)?;
    let truth = dir.join("truth.json");
    LandmarkFile::new(Convention::Ibug68, clean_entries).save(&truth)?;

    Ok(CorpusLayout {
        landmarks,
        truth,
        images_dir,
    })
}

pub fn read_image(path: &Path) -> Result<image::RgbaImage> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(img.to_rgba8())
}

pub fn save_image(image: &image::RgbaImage, path: &Path) -> Result<()> {
    image.save(path).map_err(|e| Error::Image {
        path: path.display().to_string(),
        source: e,
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        source: e,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        source: e,
    })?;
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;
    use crate::shape::Point;
    use crate::synth::{generate_cases, make_template_registry, SynthConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn landmark_file_round_trip_and_validation() {
        let dir = tmp();
        let path = dir.path().join("landmarks.json");
        let entries = vec![LandmarkEntry {
            image_path: "a.png".into(),
            points: (0..17).map(|i| [i as f64, 2.0 * i as f64]).collect(),
            class_label: Some(ClassLabel::None),
        }];
        let file = LandmarkFile::new(Convention::Mask17, entries);
        file.save(&path).unwrap();
        let loaded = LandmarkFile::load(&path).unwrap();
        assert_eq!(loaded.entries.len(), 1);
        assert_eq!(loaded.entries[0].points, file.entries[0].points);

        // Wrong point count for the declared convention.
        let bad = LandmarkFile::new(
            Convention::Ibug68,
            vec![LandmarkEntry {
                image_path: "b.png".into(),
                points: vec![[0.0, 0.0]; 17],
                class_label: None,
            }],
        );
        bad.save(&path).unwrap();
        let err = LandmarkFile::load(&path).unwrap_err();
        assert!(matches!(err, Error::FileValidation { .. }));
        assert!(err.to_string().contains("entry 0"));
    }

    #[test]
    fn malformed_json_reports_parse_context() {
        let dir = tmp();
        let path = dir.path().join("broken.json");
        std::fs::write(&path, "{ not json").unwrap();
        let err = LandmarkFile::load(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        assert!(err.to_string().contains("broken.json"));
    }

    #[test]
    fn model_file_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let corpus: Vec<Shape> = (0..9)
            .map(|_| {
                Shape::new(
                    (0..7)
                        .map(|_| {
                            Point::new(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0))
                        })
                        .collect(),
                )
                .unwrap()
            })
            .collect();
        let model = build_model(&corpus, 0.97).unwrap().model;

        let dir = tmp();
        let path = dir.path().join("model.json");
        let provenance = Provenance {
            corpus_hash: corpus_hash(&corpus),
            variance_fraction: 0.97,
        };
        ModelFile::from_model(&model, provenance.clone()).save(&path).unwrap();
        let reloaded = ModelFile::load(&path).unwrap();
        assert_eq!(reloaded.provenance, provenance);
        let restored = reloaded.into_model().unwrap();
        // Bit-exact restoration.
        assert_eq!(model.mean_flat(), restored.mean_flat());
        assert_eq!(model.modes_row_major(), restored.modes_row_major());
        assert_eq!(model.eigenvalues(), restored.eigenvalues());

        // Re-saving produces identical bytes.
        let path2 = dir.path().join("model2.json");
        ModelFile::from_model(
            &restored,
            Provenance {
                corpus_hash: corpus_hash(&corpus),
                variance_fraction: 0.97,
            },
        )
        .save(&path2)
        .unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn corpus_hash_is_order_sensitive_and_stable() {
        let a = Shape::from_pairs(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]).unwrap();
        let b = Shape::from_pairs(&[(2.0, 0.0), (1.0, 5.0), (0.0, 1.0)]).unwrap();
        let h1 = corpus_hash(&[a.clone(), b.clone()]);
        let h2 = corpus_hash(&[a.clone(), b.clone()]);
        let h3 = corpus_hash(&[b, a]);
        assert_eq!(h1, h2);
        assert_ne!(h1, h3);
        assert_eq!(h1.len(), 64);
    }

    #[test]
    fn template_registry_round_trip() {
        let dir = tmp();
        let templates = make_template_registry(128);
        let manifest_path = write_template_registry(dir.path(), &templates).unwrap();
        let loaded = load_template_registry(&manifest_path).unwrap();
        assert_eq!(loaded.len(), 3);
        for (orig, back) in templates.iter().zip(&loaded) {
            assert_eq!(orig.name, back.name);
            assert_eq!(orig.view, back.view);
            assert_eq!(orig.image.as_raw(), back.image.as_raw());
            assert_eq!(orig.landmarks, back.landmarks);
            assert_eq!(orig.triangulation, back.triangulation);
        }

        // Manifest bytes are stable across a save/load/save cycle.
        let manifest = TemplateManifest::load(&manifest_path).unwrap();
        let second = dir.path().join("manifest2.json");
        manifest.save(&second).unwrap();
        assert_eq!(
            std::fs::read(&manifest_path).unwrap(),
            std::fs::read(&second).unwrap()
        );
    }

    #[test]
    fn manifest_rejects_bad_indices() {
        let dir = tmp();
        let path = dir.path().join("manifest.json");
        let manifest = TemplateManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            templates: vec![TemplateEntry {
                name: "x".into(),
                view: View::Front,
                image_path: "x.png".into(),
                landmarks_17: vec![[1.0, 1.0]; 17],
                triangulation: vec![[0, 1, 2]],
            }],
        };
        manifest.save(&path).unwrap();
        assert!(matches!(
            TemplateManifest::load(&path),
            Err(Error::FileValidation { .. })
        ));
    }

    #[test]
    fn schema_version_mismatch_is_reported() {
        let dir = tmp();
        let path = dir.path().join("landmarks.json");
        std::fs::write(
            &path,
            r#"{"schema_version": 99, "convention": "mask17", "entries": []}"#,
        )
        .unwrap();
        assert!(matches!(
            LandmarkFile::load(&path),
            Err(Error::SchemaVersion { found: 99, .. })
        ));
    }

    #[test]
    fn corpus_dir_contains_images_and_both_landmark_files() {
        let dir = tmp();
        let cfg = SynthConfig {
            count: 3,
            noise_sigma: 1.5,
            seed: 8,
            image_size: 96,
            ..SynthConfig::default()
        };
        let cases = generate_cases(&cfg).unwrap();
        let layout = write_corpus_dir(dir.path(), &cases, cfg.image_size).unwrap();
        let noisy = LandmarkFile::load(&layout.landmarks).unwrap();
        let clean = LandmarkFile::load(&layout.truth).unwrap();
        assert_eq!(noisy.entries.len(), 3);
        assert_eq!(clean.entries.len(), 3);
        assert_ne!(noisy.entries[0].points, clean.entries[0].points);
        for e in &noisy.entries {
            assert!(dir.path().join(&e.image_path).exists());
        }
    }
}
