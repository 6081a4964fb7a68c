//! Directory layout: `<root>/<domain>/<split>/<id>.pgm` with paired
//! `<id>.labels.pgm`, plus `<root>/<domain>/artifacts.csv`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{load_image, load_labels, save_image, save_labels, ArtifactFlags, DataError, DomainPool, Sample};

pub const TRAIN_SPLIT: &str = "train";
pub const TEST_SPLIT: &str = "test";

const LABEL_SUFFIX: &str = ".labels.pgm";
const ARTIFACTS_FILE: &str = "artifacts.csv";

#[derive(Debug, Serialize, Deserialize)]
struct ArtifactRow {
    image_id: String,
    split: String,
    stripe: bool,
    black_tile: bool,
    contrast: bool,
}

fn read_artifacts(dir: &Path) -> Result<BTreeMap<(String, String), ArtifactFlags>, DataError> {
    let path = dir.join(ARTIFACTS_FILE);
    let mut out = BTreeMap::new();
    if !path.exists() {
        return Ok(out);
    }
    let mut r = csv::Reader::from_path(path)?;
    for row in r.deserialize::<ArtifactRow>() {
        let row = row?;
        out.insert(
            (row.split, row.image_id),
            ArtifactFlags {
                stripe: row.stripe,
                black_tile: row.black_tile,
                contrast: row.contrast,
            },
        );
    }
    Ok(out)
}

/// Write a split of a domain. Artifact flags are merged into the domain's
/// `artifacts.csv`, replacing rows of the same split.
pub fn write_domain(root: impl AsRef<Path>, pool: &DomainPool, split: &str) -> Result<(), DataError> {
    let domain_dir = root.as_ref().join(pool.name());
    let dir = domain_dir.join(split);
    fs::create_dir_all(&dir)?;
    for s in pool.samples() {
        save_image(&s.image, dir.join(format!("{}.pgm", s.id)))?;
        if let Some(l) = &s.labels {
            save_labels(l, dir.join(format!("{}{LABEL_SUFFIX}", s.id)))?;
        }
    }
    let mut flags = read_artifacts(&domain_dir)?;
    flags.retain(|(sp, _), _| sp != split);
    for s in pool.samples() {
        flags.insert((split.to_string(), s.id.clone()), s.artifacts);
    }
    let mut w = csv::Writer::from_path(domain_dir.join(ARTIFACTS_FILE))?;
    for ((split, image_id), f) in flags {
        w.serialize(ArtifactRow {
            image_id,
            split,
            stripe: f.stripe,
            black_tile: f.black_tile,
            contrast: f.contrast,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Read a split; samples are ordered by id. Samples with label files form L,
/// the rest U.
pub fn read_domain(root: impl AsRef<Path>, domain: &str, split: &str) -> Result<DomainPool, DataError> {
    let domain_dir = root.as_ref().join(domain);
    let dir = domain_dir.join(split);
    let flags = read_artifacts(&domain_dir)?;
    let mut ids: Vec<String> = Vec::new();
    for entry in fs::read_dir(&dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if name.ends_with(LABEL_SUFFIX) {
            continue;
        }
        if let Some(id) = name.strip_suffix(".pgm") {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    let mut samples = Vec::with_capacity(ids.len());
    let mut labeled = Vec::new();
    for (i, id) in ids.into_iter().enumerate() {
        let image = load_image(dir.join(format!("{id}.pgm")))?;
        let label_path = dir.join(format!("{id}{LABEL_SUFFIX}"));
        let labels = if label_path.exists() {
            labeled.push(i);
            Some(load_labels(label_path)?)
        } else {
            None
        };
        let mut s = Sample::new(id.clone(), image, labels)?;
        if let Some(f) = flags.get(&(split.to_string(), id)) {
            s.artifacts = *f;
        }
        samples.push(s);
    }
    let mut pool = DomainPool::unlabeled(domain, samples);
    pool.annotate(&labeled)?;
    Ok(pool)
}

/// Domain directories under `root`, sorted.
pub fn read_domain_names(root: impl AsRef<Path>) -> Result<Vec<String>, DataError> {
    let mut names = Vec::new();
    for entry in fs::read_dir(root)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{GrayImage, LabelMap};

    #[test]
    fn domain_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut samples = Vec::new();
        for i in 0..3u8 {
            let img = GrayImage::filled(4, 2, i * 10).unwrap();
            let lab = if i == 1 {
                None
            } else {
                Some(LabelMap::new(4, 2, vec![i as u32; 8]).unwrap())
            };
            let mut s = Sample::new(format!("img{i}"), img, lab).unwrap();
            s.artifacts.stripe = i == 2;
            samples.push(s);
        }
        let mut pool = DomainPool::unlabeled("dom", samples);
        pool.annotate(&[0, 2]).unwrap();
        write_domain(dir.path(), &pool, TRAIN_SPLIT).unwrap();
        let back = read_domain(dir.path(), "dom", TRAIN_SPLIT).unwrap();
        assert_eq!(back, pool);
        assert_eq!(read_domain_names(dir.path()).unwrap(), vec!["dom".to_string()]);
    }
}
