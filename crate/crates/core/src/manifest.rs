//! Dataset manifests: one tab-separated record per image.
//!
//! Each line is `path<TAB>label<TAB>source<TAB>seed`, where `label` is `0`
//! (real) or `1` (synthetic) and `seed` may be empty. Relative paths are
//! resolved against the manifest's directory.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::{load_image, ImageBuffer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Real = 0,
    Synthetic = 1,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Real),
            1 => Some(Label::Synthetic),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: Label,
    pub source: String,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(&e.path) {
                return Err(Error::invalid(format!(
                    "duplicate manifest path {}",
                    e.path.display()
                )));
            }
        }
        Ok(Self {
            entries,
            base_dir: base_dir.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.entries.iter().filter(|e| e.label == label).count()
    }

    /// Fails unless both labels are present.
    pub fn require_both_labels(&self) -> Result<()> {
        if self.count(Label::Real) == 0 || self.count(Label::Synthetic) == 0 {
            return Err(Error::Degenerate(
                "manifest needs at least one real and one synthetic entry".into(),
            ));
        }
        Ok(())
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    pub fn load_entry(&self, entry: &ManifestEntry) -> Result<ImageBuffer> {
        load_image(self.resolve(entry))
    }

    pub fn sources(&self) -> Vec<String> {
        let mut tags: Vec<String> = self.entries.iter().map(|e| e.source.clone()).collect();
        tags.sort();
        tags.dedup();
        tags
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let seed = e.seed.map(|s| s.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                e.path.display(),
                e.label.as_u8(),
                e.source,
                seed
            );
        }
        out
    }

    pub fn parse_tsv(text: &str, base_dir: impl Into<PathBuf>, origin: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |why: &str| Error::format(origin, format!("line {}: {why}", lineno + 1));
            if fields.len() != 4 {
                return Err(bad("expected 4 tab-separated fields"));
            }
            let label = fields[1]
                .parse::<u8>()
                .ok()
                .and_then(Label::from_u8)
                .ok_or_else(|| bad("label must be 0 or 1"))?;
            let seed = if fields[3].is_empty() {
                None
            } else {
                Some(fields[3].parse::<u64>().map_err(|_| bad("seed is not an integer"))?)
            };
            entries.push(ManifestEntry {
                path: PathBuf::from(fields[0]),
                label,
                source: fields[2].to_string(),
                seed,
            });
        }
        Self::new(entries, base_dir)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse_tsv(&text, base, &path.display().to_string())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(path: &str, label: Label, seed: Option<u64>) -> ManifestEntry {
        ManifestEntry {
            path: path.into(),
            label,
            source: if label == Label::Real { "real".into() } else { "gen-a".into() },
            seed,
        }
    }

    #[test]
    fn tsv_roundtrip() {
        let m = DatasetManifest::new(
            vec![entry("a.ppm", Label::Real, Some(3)), entry("b.ppm", Label::Synthetic, None)],
            "/data",
        )
        .unwrap();
        let text = m.to_tsv();
        assert_eq!(text, "a.ppm\t0\treal\t3\nb.ppm\t1\tgen-a\t\n");
        assert_eq!(DatasetManifest::parse_tsv(&text, "/data", "m").unwrap(), m);
        assert_eq!(m.resolve(&m.entries[0]), PathBuf::from("/data/a.ppm"));
        assert!(m.require_both_labels().is_ok());
    }

    #[test]
    fn rejects_duplicates_and_bad_labels() {
        assert!(DatasetManifest::new(
            vec![entry("a.ppm", Label::Real, None), entry("a.ppm", Label::Synthetic, None)],
            "."
        )
        .is_err());
        assert!(DatasetManifest::parse_tsv("a.ppm\t2\treal\t\n", ".", "m").is_err());
        assert!(DatasetManifest::parse_tsv("a.ppm\t0\treal\n", ".", "m").is_err());
        let one = DatasetManifest::new(vec![entry("a.ppm", Label::Real, None)], ".").unwrap();
        assert!(matches!(one.require_both_labels(), Err(Error::Degenerate(_))));
    }
}
