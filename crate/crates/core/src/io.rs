//! Binary tensor and label files, dataset manifests and JSON documents.
//!
//! Tensor and label files share one envelope:
//!
//! ```text
//! "EDC3"  u8 version = 1  u8 kind (1 tensor, 2 labels)
//! u32 H  u32 W  [u32 M, tensors only]
//! payload: f32 (tensor, y/x/class order) or u16 (labels), little-endian
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{BeliefTensor, LabelMap};
use crate::error::{Error, Result};
use crate::fusion::{ClassModelSet, LabeledImage};

pub const MAGIC: &[u8; 4] = b"EDC3";
pub const FORMAT_VERSION: u8 = 1;
pub const KIND_TENSOR: u8 = 1;
pub const KIND_LABELS: u8 = 2;

fn header(kind: u8, dims: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(6 + 4 * dims.len());
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.push(kind);
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::data(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    Ok(out)
}

pub fn encode_belief_tensor(t: &BeliefTensor) -> Result<Vec<u8>> {
    let mut out = header(KIND_TENSOR, &[t.height(), t.width(), t.classes()])?;
    out.reserve(4 * t.as_slice().len());
    for v in t.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn encode_label_map(m: &LabelMap) -> Result<Vec<u8>> {
    let mut out = header(KIND_LABELS, &[m.height(), m.width()])?;
    out.reserve(2 * m.len());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(
                self.pos,
                format!(
                    "truncated {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn envelope(&mut self, kind: u8) -> Result<()> {
        if self.take(4, "magic")? != MAGIC {
            return Err(self.fail(0, "bad magic, expected EDC3"));
        }
        let v = self.take(1, "version")?[0];
        if v != FORMAT_VERSION {
            return Err(self.fail(4, format!("unsupported version {v}")));
        }
        let k = self.take(1, "kind")?[0];
        if k != kind {
            return Err(self.fail(5, format!("file kind is {k}, expected {kind}")));
        }
        Ok(())
    }

    fn payload(&mut self, count: Option<usize>, width: usize) -> Result<&'a [u8]> {
        let n = count
            .and_then(|c| c.checked_mul(width))
            .ok_or_else(|| self.fail(self.pos, "payload size overflows"))?;
        let s = self.take(n, "payload")?;
        if self.pos != self.bytes.len() {
            return Err(self.fail(
                self.pos,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(s)
    }
}

pub fn decode_belief_tensor(path: &Path, bytes: &[u8]) -> Result<BeliefTensor> {
    let mut r = Reader { path, bytes, pos: 0 };
    r.envelope(KIND_TENSOR)?;
    let h = r.u32("height")?;
    let w = r.u32("width")?;
    let m = r.u32("class count")?;
    if m == 0 {
        return Err(r.fail(14, "class count is zero"));
    }
    let payload = r.payload(h.checked_mul(w).and_then(|p| p.checked_mul(m)), 4)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    BeliefTensor::new(h, w, m, data)
}

pub fn decode_label_map(path: &Path, bytes: &[u8]) -> Result<LabelMap> {
    let mut r = Reader { path, bytes, pos: 0 };
    r.envelope(KIND_LABELS)?;
    let h = r.u32("height")?;
    let w = r.u32("width")?;
    let payload = r.payload(h.checked_mul(w), 2)?;
    let labels = payload
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes(c.try_into().expect("2 bytes")))
        .collect();
    LabelMap::new(h, w, labels)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_belief_tensor(path: impl AsRef<Path>) -> Result<BeliefTensor> {
    let path = path.as_ref();
    decode_belief_tensor(path, &read_bytes(path)?)
}

pub fn write_belief_tensor(tensor: &BeliefTensor, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_belief_tensor(tensor)?)
}

pub fn read_label_map(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    decode_label_map(path, &read_bytes(path)?)
}

pub fn write_label_map(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_label_map(map)?)
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable value");
    out.push(b'\n');
    out
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &to_json_bytes(value))
}

pub fn write_text(text: &str, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), text.as_bytes())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<ClassModelSet> {
    let path = path.as_ref();
    let set: ClassModelSet = read_json(path)?;
    set.validate().map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    Ok(set)
}

pub fn write_model(set: &ClassModelSet, path: impl AsRef<Path>) -> Result<()> {
    write_json(set, path)
}

/// One image in a split: a tensor path per classifier and an optional
/// label path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub tensors: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
}

/// Dataset description. Relative paths resolve against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub classifiers: Vec<String>,
    pub classes: usize,
    #[serde(default)]
    pub ignore: Vec<u16>,
    pub splits: BTreeMap<String, Vec<ManifestEntry>>,
    #[serde(skip)]
    pub base: PathBuf,
}

/// Tensors and labels of one split, loaded.
#[derive(Debug, Clone)]
pub struct LoadedImage {
    pub tensors: Vec<BeliefTensor>,
    pub labels: Option<LabelMap>,
    /// Stem used for output file names.
    pub name: String,
}

impl DatasetManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut m: DatasetManifest = read_json(path)?;
        m.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.check().map_err(|e| match e {
            Error::Usage(msg) => Error::Usage(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        Ok(m)
    }

    fn check(&self) -> Result<()> {
        if self.classifiers.is_empty() {
            return Err(Error::usage("manifest lists no classifiers"));
        }
        if self.classes == 0 {
            return Err(Error::usage("manifest declares zero classes"));
        }
        for (name, entries) in &self.splits {
            for (k, e) in entries.iter().enumerate() {
                if e.tensors.len() != self.classifiers.len() {
                    return Err(Error::usage(format!(
                        "split {name} image {k} lists {} tensors for {} classifiers",
                        e.tensors.len(),
                        self.classifiers.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn split(&self, name: &str) -> Result<&[ManifestEntry]> {
        match self.splits.get(name) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(Error::usage(format!("manifest split `{name}` is missing or empty"))),
        }
    }

    /// Load one split, checking shapes against the declared class count.
    pub fn load_split(&self, name: &str) -> Result<Vec<LoadedImage>> {
        self.split(name)?
            .iter()
            .enumerate()
            .map(|(k, e)| {
                let tensors = e
                    .tensors
                    .iter()
                    .map(|p| {
                        let path = self.resolve(p);
                        let t = read_belief_tensor(&path)?;
                        if t.classes() != self.classes {
                            return Err(Error::data(format!(
                                "{}: {} classes, manifest declares {}",
                                path.display(),
                                t.classes(),
                                self.classes
                            )));
                        }
                        Ok(t)
                    })
                    .collect::<Result<Vec<_>>>()?;
                crate::data::check_aligned(&tensors).map_err(|e| {
                    Error::data(format!("split {name} image {k}: {e}"))
                })?;
                let labels = match &e.labels {
                    Some(p) => {
                        let path = self.resolve(p);
                        let l = read_label_map(&path)?;
                        if l.height() != tensors[0].height() || l.width() != tensors[0].width() {
                            return Err(Error::data(format!(
                                "{}: labels are {}x{}, tensors are {}x{}",
                                path.display(),
                                l.height(),
                                l.width(),
                                tensors[0].height(),
                                tensors[0].width()
                            )));
                        }
                        Some(l)
                    }
                    None => None,
                };
                let name = e
                    .labels
                    .as_ref()
                    .or(e.tensors.first())
                    .and_then(|p| p.file_stem())
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| format!("image{k:04}"));
                Ok(LoadedImage {
                    tensors,
                    labels,
                    name,
                })
            })
            .collect()
    }

    /// Load a split as training data; every image needs labels. Pixels
    /// whose label is in the manifest's ignore list are masked out.
    pub fn load_training(&self, name: &str) -> Result<Vec<LabeledImage>> {
        self.load_split(name)?
            .into_iter()
            .enumerate()
            .map(|(k, img)| {
                let mut labels = img.labels.ok_or_else(|| {
                    Error::usage(format!("split {name} image {k} has no labels"))
                })?;
                for l in labels.as_mut_slice() {
                    if self.ignore.contains(l) {
                        *l = crate::data::IGNORE_LABEL;
                    }
                }
                Ok(LabeledImage {
                    tensors: img.tensors,
                    labels,
                })
            })
            .collect()
    }
}
