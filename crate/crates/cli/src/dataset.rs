//! On-disk dataset layout and its manifest.
//!
//! A dataset directory contains:
//!
//! ```text
//! dataset.txt    manifest: [dataset] metadata + one section per split
//! poses.csv      header `id,room,condition,x,y`, UTF-8, LF
//! features.csv   optional: `id,f0..f{F-1}` rows for feature-only records
//! images/        optional: one binary PGM (P5) per record, named <id>.pgm
//! ```
//!
//! In `dataset.txt`, metadata sections (`[dataset]`, `[generate]`, ...) hold
//! `key = value` pairs; every section holding only bare lines is a split
//! whose entries are record ids. A record must come with an image file or a
//! features row (or both); ids are unique; split ids must resolve.
//! Files are written canonically, so saving a just-loaded dataset reproduces
//! it byte for byte.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use tripletloc_core::{ImageRecord, Pose};

use crate::config::{load_sections, render_sections, Item, Sections};
use crate::error::{CliError, Result};
use crate::pgm::{read_pgm, write_pgm};

pub const MANIFEST_FILE: &str = "dataset.txt";
pub const POSES_FILE: &str = "poses.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const IMAGE_DIR: &str = "images";
const POSES_HEADER: [&str; 5] = ["id", "room", "condition", "x", "y"];

/// Everything `dataset.txt` records about a dataset directory.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub poses: String,
    pub images: Option<String>,
    pub features: Option<String>,
    /// Condition labels in dataset order; the first is the reference unless
    /// `reference` overrides it.
    pub conditions: Vec<String>,
    pub reference: Option<String>,
    /// Split name -> record ids, in file order.
    pub splits: Vec<(String, Vec<String>)>,
    /// Additional metadata sections, round-tripped verbatim (e.g. the
    /// generation parameters written by `gen-synth`).
    pub extra: Sections,
}

impl DatasetManifest {
    pub fn split(&self, name: &str) -> Option<&[String]> {
        self.splits
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, ids)| ids.as_slice())
    }

    /// The condition training draws from: explicit `reference`, else the
    /// first condition label.
    pub fn reference_condition(&self) -> Option<&str> {
        self.reference
            .as_deref()
            .or_else(|| self.conditions.first().map(|c| c.as_str()))
    }
}

/// Condition labels in order of first appearance.
pub fn condition_labels(records: &[ImageRecord]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in records {
        if !out.iter().any(|c| c == &r.condition) {
            out.push(r.condition.clone());
        }
    }
    out
}

/// Write the full dataset under `root` and return the manifest describing
/// it. Which of `features.csv` / `images/` exist follows from what the
/// records carry.
pub fn save_dataset(
    root: &Path,
    records: &[ImageRecord],
    splits: &[(String, Vec<String>)],
    reference: Option<&str>,
    extra: &Sections,
) -> Result<DatasetManifest> {
    fs::create_dir_all(root).map_err(|e| CliError::io_at(root, e))?;
    let any_pixels = records.iter().any(|r| r.pixels.is_some());
    let any_features = records.iter().any(|r| r.features.is_some());

    let poses_path = root.join(POSES_FILE);
    let mut w = csv::Writer::from_path(&poses_path)
        .map_err(|e| CliError::io(format!("{}: {e}", poses_path.display())))?;
    let csv_err = |e: csv::Error| CliError::io(format!("{}: {e}", poses_path.display()));
    w.write_record(POSES_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.id.as_str(),
            r.room.as_str(),
            r.condition.as_str(),
            &r.pose.x.to_string(),
            &r.pose.y.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io_at(&poses_path, e))?;

    if any_features {
        let feat_path = root.join(FEATURES_FILE);
        let mut w = csv::Writer::from_path(&feat_path)
            .map_err(|e| CliError::io(format!("{}: {e}", feat_path.display())))?;
        let csv_err = |e: csv::Error| CliError::io(format!("{}: {e}", feat_path.display()));
        let dim = records
            .iter()
            .find_map(|r| r.features.as_ref())
            .map(|f| f.len())
            .unwrap_or(0);
        let mut header = vec!["id".to_string()];
        header.extend((0..dim).map(|k| format!("f{k}")));
        w.write_record(&header).map_err(csv_err)?;
        for r in records {
            if let Some(f) = &r.features {
                if f.len() != dim {
                    return Err(CliError::invalid(format!(
                        "record {}: feature length {} disagrees with {dim}",
                        r.id,
                        f.len()
                    )));
                }
                let mut row = vec![r.id.clone()];
                row.extend(f.iter().map(|v| v.to_string()));
                w.write_record(&row).map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| CliError::io_at(&feat_path, e))?;
    }

    if any_pixels {
        let img_dir = root.join(IMAGE_DIR);
        fs::create_dir_all(&img_dir).map_err(|e| CliError::io_at(&img_dir, e))?;
        for r in records {
            if let Some(px) = &r.pixels {
                write_pgm(&img_dir.join(format!("{}.pgm", r.id)), px)?;
            }
        }
    }

    let manifest = DatasetManifest {
        root: root.to_path_buf(),
        poses: POSES_FILE.to_string(),
        images: any_pixels.then(|| IMAGE_DIR.to_string()),
        features: any_features.then(|| FEATURES_FILE.to_string()),
        conditions: condition_labels(records),
        reference: reference.map(|s| s.to_string()),
        splits: splits.to_vec(),
        extra: extra.clone(),
    };
    fs::write(root.join(MANIFEST_FILE), render_manifest(&manifest))
        .map_err(|e| CliError::io_at(&root.join(MANIFEST_FILE), e))?;
    Ok(manifest)
}

fn render_manifest(m: &DatasetManifest) -> String {
    let mut sections = Sections::default();
    let mut head = vec![Item::Pair("poses".into(), m.poses.clone())];
    if let Some(images) = &m.images {
        head.push(Item::Pair("images".into(), images.clone()));
    }
    if let Some(features) = &m.features {
        head.push(Item::Pair("features".into(), features.clone()));
    }
    if !m.conditions.is_empty() {
        head.push(Item::Pair("conditions".into(), m.conditions.join(",")));
    }
    if let Some(reference) = &m.reference {
        head.push(Item::Pair("reference".into(), reference.clone()));
    }
    sections.sections.push(("dataset".into(), head));
    sections.sections.extend(m.extra.sections.iter().cloned());
    for (name, ids) in &m.splits {
        sections
            .sections
            .push((name.clone(), ids.iter().map(|id| Item::Bare(id.clone())).collect()));
    }
    render_sections(&sections)
}

/// Load a dataset from its directory (or a direct path to `dataset.txt`).
pub fn load_dataset(path: &Path) -> Result<(Vec<ImageRecord>, DatasetManifest)> {
    let (root, manifest_path) = if path.is_dir() {
        (path.to_path_buf(), path.join(MANIFEST_FILE))
    } else {
        (
            path.parent().unwrap_or(Path::new(".")).to_path_buf(),
            path.to_path_buf(),
        )
    };
    let parsed = load_sections(&manifest_path, true)?;

    let get = |key: &str| parsed.get("dataset", key).map(|s| s.to_string());
    let poses = get("poses").unwrap_or_else(|| POSES_FILE.to_string());
    let images = get("images");
    let features = get("features");
    let declared_conditions: Option<Vec<String>> = get("conditions")
        .map(|s| s.split(',').map(|c| c.trim().to_string()).collect());
    let reference = get("reference");

    // Metadata sections hold pairs; anything with only bare entries (or
    // nothing at all) is a split.
    let mut splits: Vec<(String, Vec<String>)> = Vec::new();
    let mut extra = Sections::default();
    for (name, items) in &parsed.sections {
        if name == "dataset" {
            continue;
        }
        if items.iter().any(|i| matches!(i, Item::Pair(..))) {
            extra.sections.push((name.clone(), items.clone()));
        } else {
            let ids = items
                .iter()
                .map(|i| match i {
                    Item::Bare(v) => v.clone(),
                    Item::Pair(..) => unreachable!(),
                })
                .collect();
            splits.push((name.clone(), ids));
        }
    }

    let features_by_id: HashMap<String, Vec<f64>> = match &features {
        Some(name) => read_features(&root.join(name))?,
        None => HashMap::new(),
    };

    let poses_path = root.join(&poses);
    let records = read_poses(&poses_path, &root, images.as_deref(), &features_by_id)?;

    let mut ids: HashSet<&str> = HashSet::with_capacity(records.len());
    for r in &records {
        if !ids.insert(&r.id) {
            return Err(CliError::invalid(format!(
                "{}: duplicate id {}",
                poses_path.display(),
                r.id
            )));
        }
    }
    for (name, split_ids) in &splits {
        for id in split_ids {
            if !ids.contains(id.as_str()) {
                return Err(CliError::invalid(format!(
                    "{}: split {name} references unknown id {id}",
                    manifest_path.display()
                )));
            }
        }
    }

    let conditions = match declared_conditions {
        Some(declared) => {
            for r in &records {
                if !declared.contains(&r.condition) {
                    return Err(CliError::invalid(format!(
                        "{}: record {} has condition {:?} not listed in the manifest",
                        poses_path.display(),
                        r.id,
                        r.condition
                    )));
                }
            }
            declared
        }
        None => condition_labels(&records),
    };

    let manifest = DatasetManifest {
        root,
        poses,
        images,
        features,
        conditions,
        reference,
        splits,
        extra,
    };
    Ok((records, manifest))
}

fn read_poses(
    path: &Path,
    root: &Path,
    image_dir: Option<&str>,
    features_by_id: &HashMap<String, Vec<f64>>,
) -> Result<Vec<ImageRecord>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io_at(path, e))?;
    let bad = |line: usize, what: String| {
        CliError::invalid(format!("{}: line {line}: {what}", path.display()))
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(text.as_bytes());
    let mut rows = rdr.records();
    let header = match rows.next() {
        Some(h) => h.map_err(|e| bad(1, format!("{e}")))?,
        None => return Err(bad(1, "missing header".into())),
    };
    if header.iter().collect::<Vec<_>>() != POSES_HEADER {
        return Err(bad(1, format!("expected header {}", POSES_HEADER.join(","))));
    }

    let mut records = Vec::new();
    for (idx, row) in rows.enumerate() {
        let line = idx + 2;
        let row = row.map_err(|e| bad(line, format!("{e}")))?;
        if row.len() != 5 {
            return Err(bad(line, format!("expected 5 fields, found {}", row.len())));
        }
        let field = |i: usize| row.get(i).unwrap_or("").to_string();
        let (id, room, condition) = (field(0), field(1), field(2));
        if id.is_empty() || room.is_empty() || condition.is_empty() {
            return Err(bad(line, "id, room, and condition must be non-empty".into()));
        }
        let coord = |i: usize, name: &str| -> Result<f64> {
            let raw = row.get(i).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(line, format!("bad {name} value {raw:?}")))
        };
        let pose = Pose::new(coord(3, "x")?, coord(4, "y")?);

        let pixels = match image_dir {
            Some(dir) => {
                let img_path = root.join(dir).join(format!("{id}.pgm"));
                if img_path.is_file() {
                    Some(read_pgm(&img_path)?)
                } else {
                    None
                }
            }
            None => None,
        };
        let features = features_by_id.get(&id).cloned();
        if pixels.is_none() && features.is_none() {
            return Err(bad(
                line,
                format!("record {id}: no image file and no features row"),
            ));
        }
        records.push(ImageRecord { id, room, condition, pose, pixels, features });
    }
    Ok(records)
}

fn read_features(path: &Path) -> Result<HashMap<String, Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io_at(path, e))?;
    let bad = |line: usize, what: String| {
        CliError::invalid(format!("{}: line {line}: {what}", path.display()))
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = rdr.records();
    let header = match rows.next() {
        Some(h) => h.map_err(|e| bad(1, format!("{e}")))?,
        None => return Err(bad(1, "missing header".into())),
    };
    if header.get(0) != Some("id") || header.len() < 2 {
        return Err(bad(1, "expected header id,f0,...".into()));
    }
    let dim = header.len() - 1;

    let mut out = HashMap::new();
    for (idx, row) in rows.enumerate() {
        let line = idx + 2;
        let row = row.map_err(|e| bad(line, format!("{e}")))?;
        if row.len() != dim + 1 {
            return Err(bad(
                line,
                format!("expected {} fields, found {}", dim + 1, row.len()),
            ));
        }
        let id = row.get(0).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(bad(line, "empty id".into()));
        }
        let mut values = Vec::with_capacity(dim);
        for i in 0..dim {
            let raw = row.get(i + 1).unwrap_or("");
            let v = raw
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(line, format!("bad feature value {raw:?}")))?;
            values.push(v);
        }
        if out.insert(id.clone(), values).is_some() {
            return Err(bad(line, format!("duplicate id {id}")));
        }
    }
    Ok(out)
}

/// Clone the records of one named split, in split order.
pub fn split_records(
    records: &[ImageRecord],
    manifest: &DatasetManifest,
    name: &str,
) -> Result<Vec<ImageRecord>> {
    let ids = manifest.split(name).ok_or_else(|| {
        let known: Vec<&str> = manifest.splits.iter().map(|(n, _)| n.as_str()).collect();
        CliError::invalid(format!(
            "unknown split {name:?}; dataset has: {}",
            if known.is_empty() { "none".to_string() } else { known.join(", ") }
        ))
    })?;
    let by_id: HashMap<&str, &ImageRecord> =
        records.iter().map(|r| (r.id.as_str(), r)).collect();
    // Loading already verified that split ids resolve.
    Ok(ids.iter().map(|id| by_id[id.as_str()].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tripletloc_core::{generate_synthetic, split_dataset, SplitConfig, SynthSpec};

    fn synth_records(render: bool) -> Vec<ImageRecord> {
        let spec = SynthSpec {
            rooms: 3,
            images_per_room: 6,
            render: render.then_some((8, 16)),
            ..SynthSpec::default()
        };
        generate_synthetic(&spec).unwrap()
    }

    fn splits_of(records: &[ImageRecord]) -> Vec<(String, Vec<String>)> {
        let splits = split_dataset(records, &SplitConfig::default()).unwrap();
        let ids = |v: &[ImageRecord]| v.iter().map(|r| r.id.clone()).collect();
        let mut out = vec![("train".to_string(), ids(&splits.train))];
        for (cond, rows) in &splits.tests {
            out.push((format!("test:{cond}"), ids(rows)));
        }
        out
    }

    #[test]
    fn feature_dataset_round_trips_exactly() {
        let records = synth_records(false);
        let splits = splits_of(&records);
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("d");
        save_dataset(&root, &records, &splits, Some("day"), &Sections::default()).unwrap();

        let (loaded, manifest) = load_dataset(&root).unwrap();
        assert_eq!(loaded, records);
        assert_eq!(manifest.conditions, vec!["day", "night"]);
        assert_eq!(manifest.reference_condition(), Some("day"));
        assert_eq!(manifest.splits, splits);

        // Saving what was just loaded reproduces every file byte for byte.
        let root2 = dir.path().join("d2");
        save_dataset(&root2, &loaded, &manifest.splits, Some("day"), &manifest.extra).unwrap();
        for name in [MANIFEST_FILE, POSES_FILE, FEATURES_FILE] {
            assert_eq!(
                fs::read(root.join(name)).unwrap(),
                fs::read(root2.join(name)).unwrap(),
                "{name} differs"
            );
        }
    }

    #[test]
    fn raster_dataset_round_trips() {
        let records = synth_records(true);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &records, &[], None, &Sections::default()).unwrap();
        let (loaded, manifest) = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded, records);
        assert_eq!(manifest.images.as_deref(), Some(IMAGE_DIR));
        assert_eq!(manifest.features, None);
    }

    #[test]
    fn empty_poses_file_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "[dataset]\nposes = poses.csv\n").unwrap();
        fs::write(dir.path().join(POSES_FILE), "").unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("missing header"), "{err}");
    }

    #[test]
    fn wrong_header_and_bad_rows_name_their_line() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "[dataset]\n").unwrap();
        fs::write(dir.path().join(POSES_FILE), "id,x,y\n").unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");

        fs::write(
            dir.path().join(POSES_FILE),
            "id,room,condition,x,y\na,r,day,0.0,oops\n",
        )
        .unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(err.to_string().contains("oops"), "{err}");
    }

    #[test]
    fn record_without_image_or_features_is_missing() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join(MANIFEST_FILE),
            "[dataset]\nimages = images\n",
        )
        .unwrap();
        fs::create_dir(dir.path().join(IMAGE_DIR)).unwrap();
        fs::write(
            dir.path().join(POSES_FILE),
            "id,room,condition,x,y\nghost,r,day,0.0,1.0\n",
        )
        .unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("ghost"), "{err}");
    }

    #[test]
    fn split_with_unknown_id_is_rejected() {
        let records = synth_records(false);
        let dir = tempfile::tempdir().unwrap();
        let splits = vec![("train".to_string(), vec!["nope".to_string()])];
        save_dataset(dir.path(), &records, &splits, None, &Sections::default()).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("unknown id nope"), "{err}");
    }

    #[test]
    fn four_split_office_shaped_dataset_loads_with_exact_counts() {
        // A 556-train / 2595 + 2707 + 2114-test layout across three
        // conditions, the shape of a real indoor localization benchmark.
        let mut records = Vec::new();
        let mut mk = |prefix: &str, condition: &str, count: usize| -> Vec<String> {
            (0..count)
                .map(|i| {
                    let id = format!("{prefix}{i:04}");
                    records.push(ImageRecord {
                        id: id.clone(),
                        room: format!("room{:02}", i % 9),
                        condition: condition.to_string(),
                        pose: Pose::new(i as f64 * 0.1, 0.0),
                        pixels: None,
                        features: Some(vec![i as f64]),
                    });
                    id
                })
                .collect()
        };
        let train_ids = mk("tr", "cloudy", 556);
        let cloudy_ids = mk("tc", "cloudy", 2595);
        let night_ids = mk("tn", "night", 2707);
        let sunny_ids = mk("ts", "sunny", 2114);
        let splits = vec![
            ("train".to_string(), train_ids),
            ("test:cloudy".to_string(), cloudy_ids),
            ("test:night".to_string(), night_ids),
            ("test:sunny".to_string(), sunny_ids),
        ];
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &records, &splits, Some("cloudy"), &Sections::default())
            .unwrap();
        let (loaded, manifest) = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.len(), 556 + 2595 + 2707 + 2114);
        for (name, want) in
            [("train", 556), ("test:cloudy", 2595), ("test:night", 2707), ("test:sunny", 2114)]
        {
            assert_eq!(split_records(&loaded, &manifest, name).unwrap().len(), want);
        }
        assert_eq!(manifest.conditions, vec!["cloudy", "night", "sunny"]);
    }

    #[test]
    fn unknown_split_lists_available_names() {
        let records = synth_records(false);
        let dir = tempfile::tempdir().unwrap();
        let splits = splits_of(&records);
        let manifest =
            save_dataset(dir.path(), &records, &splits, None, &Sections::default()).unwrap();
        let err = split_records(&records, &manifest, "bogus").unwrap_err();
        assert!(err.to_string().contains("train"), "{err}");
    }
}
