//! On-disk formats.
//!
//! Region descriptors live in one binary file per image:
//!
//! ```text
//! b"PQAP" | version u32 | d u32 | count u32 | count·d f32 | count·4 f32
//! ```
//!
//! All integers and floats are little-endian. Descriptors are stored region
//! by region, followed by one `(x, y, w, h)` rectangle per region. A JSON
//! manifest lists the images with paths relative to the manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    ensure_valid, preprocess_descriptors, ImageRecord, RegionDescriptors, RegionRect, Split,
    TrainingCorpus,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: [u8; 4] = *b"PQAP";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
const HEADER_BYTES: u64 = 16;

/// Bytes taken by a descriptor file with `count` regions of dimension `dim`.
pub fn descriptor_file_len(dim: usize, count: usize) -> u64 {
    HEADER_BYTES + 4 * (count as u64) * (dim as u64 + 4)
}

pub fn write_descriptor_file<T: Scalar>(
    path: &Path,
    descriptors: &RegionDescriptors<T>,
    rects: &[RegionRect],
) -> Result<()> {
    if rects.len() != descriptors.count() {
        return Err(Error::DimensionMismatch {
            expected: descriptors.count(),
            actual: rects.len(),
        });
    }
    let len = descriptor_file_len(descriptors.dim(), descriptors.count());
    let mut buf = Vec::with_capacity(len as usize);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(descriptors.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(descriptors.count() as u32).to_le_bytes());
    for &v in descriptors.as_slice() {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    for r in rects {
        for v in [r.x, r.y, r.w, r.h] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b.try_into().expect("4 bytes"))
}

fn le_f32(b: &[u8]) -> f32 {
    f32::from_le_bytes(b.try_into().expect("4 bytes"))
}

/// Reads one descriptor file. `expect_dim`, when given, must match the header.
pub fn read_descriptor_file<T: Scalar>(
    path: &Path,
    expect_dim: Option<usize>,
) -> Result<(RegionDescriptors<T>, Vec<RegionRect>)> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingFile(path.to_owned())
            } else {
                Error::io(path, e)
            }
        })?;
    let actual = bytes.len() as u64;
    if actual < HEADER_BYTES {
        return Err(Error::Truncated {
            path: path.to_owned(),
            expected: HEADER_BYTES,
            actual,
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_owned(),
            found: magic,
        });
    }
    let version = le_u32(&bytes[4..8]);
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            path: path.to_owned(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let dim = le_u32(&bytes[8..12]) as usize;
    let count = le_u32(&bytes[12..16]) as usize;
    if dim == 0 {
        return Err(Error::Header {
            path: path.to_owned(),
            detail: "descriptor dimension is 0".into(),
        });
    }
    if let Some(d) = expect_dim {
        if d != dim {
            return Err(Error::Header {
                path: path.to_owned(),
                detail: format!("descriptor dimension {dim}, manifest says {d}"),
            });
        }
    }
    let expected = descriptor_file_len(dim, count);
    if actual < expected {
        return Err(Error::Truncated {
            path: path.to_owned(),
            expected,
            actual,
        });
    }
    if actual > expected {
        return Err(Error::Header {
            path: path.to_owned(),
            detail: format!("{} trailing bytes after {expected}", actual - expected),
        });
    }
    let body = &bytes[HEADER_BYTES as usize..];
    let (desc, rect_bytes) = body.split_at(4 * dim * count);
    let data: Vec<T> = desc
        .chunks_exact(4)
        .map(|c| T::lit(f64::from(le_f32(c))))
        .collect();
    let rects = rect_bytes
        .chunks_exact(16)
        .map(|c| {
            RegionRect::new(
                le_f32(&c[..4]),
                le_f32(&c[4..8]),
                le_f32(&c[8..12]),
                le_f32(&c[12..]),
            )
        })
        .collect();
    Ok((RegionDescriptors::new(dim, data)?, rects))
}

/// Transforms applied to every descriptor when a corpus is loaded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub signed_sqrt: bool,
    pub l2_normalize: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestImage {
    pub image_id: String,
    /// Category name; absent for clutter images.
    #[serde(default)]
    pub label: Option<String>,
    pub split: Split,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub d: usize,
    pub regions_per_image: usize,
    pub categories: Vec<String>,
    #[serde(default)]
    pub preprocessing: Preprocessing,
    pub images: Vec<ManifestImage>,
}

pub fn write_json<S: Serialize + ?Sized>(path: &Path, value: &S) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Json {
        path: path.to_owned(),
        source: e,
    })?;
    w.write_all(b"\n")
        .and_then(|()| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_json<D: DeserializeOwned>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_owned())
        } else {
            Error::io(path, e)
        }
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_owned(),
        source: e,
    })
}

/// Writes `manifest.json` and one descriptor file per image under `dir`.
/// Returns the manifest path.
pub fn write_corpus<T: Scalar>(
    dir: &Path,
    corpus: &TrainingCorpus<T>,
    preprocessing: Preprocessing,
) -> Result<PathBuf> {
    let regions_dir = dir.join("regions");
    fs::create_dir_all(&regions_dir).map_err(|e| Error::io(&regions_dir, e))?;
    let mut images = Vec::with_capacity(corpus.images.len());
    for (i, im) in corpus.images.iter().enumerate() {
        let rel = PathBuf::from("regions").join(format!("{i:06}.pqap"));
        write_descriptor_file(&dir.join(&rel), &im.descriptors, &im.rects)?;
        let label = match im.label {
            Some(l) => Some(corpus.categories.get(l).cloned().ok_or_else(|| {
                Error::InvalidCorpus(format!("{}: label {l} out of range", im.image_id))
            })?),
            None => None,
        };
        images.push(ManifestImage {
            image_id: im.image_id.clone(),
            label,
            split: im.split,
            path: rel,
        });
    }
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        d: corpus.dim,
        regions_per_image: corpus.regions_per_image,
        categories: corpus.categories.clone(),
        preprocessing,
        images,
    };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Loads and validates a corpus, applying the manifest's preprocessing.
pub fn read_corpus<T: Scalar>(manifest_path: &Path) -> Result<TrainingCorpus<T>> {
    let manifest: Manifest = read_json(manifest_path)?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(Error::Version {
            path: manifest_path.to_owned(),
            found: manifest.schema_version,
            expected: MANIFEST_SCHEMA_VERSION,
        });
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut images = Vec::with_capacity(manifest.images.len());
    for entry in &manifest.images {
        let label = match &entry.label {
            Some(name) => Some(
                manifest
                    .categories
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| {
                        Error::InvalidCorpus(format!(
                            "{}: unknown category {name:?}",
                            entry.image_id
                        ))
                    })?,
            ),
            None => None,
        };
        let (mut descriptors, rects) =
            read_descriptor_file::<T>(&base.join(&entry.path), Some(manifest.d))?;
        let pre = manifest.preprocessing;
        if pre.signed_sqrt || pre.l2_normalize {
            preprocess_descriptors(&mut descriptors, pre.signed_sqrt, pre.l2_normalize);
        }
        images.push(ImageRecord {
            image_id: entry.image_id.clone(),
            label,
            split: entry.split,
            descriptors,
            rects,
        });
    }
    let corpus = TrainingCorpus {
        images,
        dim: manifest.d,
        regions_per_image: manifest.regions_per_image,
        categories: manifest.categories,
    };
    ensure_valid(&corpus)?;
    Ok(corpus)
}
